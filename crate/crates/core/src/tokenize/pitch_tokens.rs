use crate::signal::PitchContour;

/// Integer-Hz pitch vocabulary plus one unvoiced token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PitchVocab {
    pub f_min: u32,
    pub f_max: u32,
}

impl Default for PitchVocab {
    fn default() -> Self {
        Self { f_min: 50, f_max: 1100 }
    }
}

impl PitchVocab {
    pub fn unvoiced(&self) -> u32 {
        self.f_max + 1
    }

    pub fn size(&self) -> usize {
        (self.f_max - self.f_min + 2) as usize
    }

    /// Dense index of a token in `0..size()`.
    pub fn index(&self, token: u32) -> usize {
        (token - self.f_min) as usize
    }

    pub fn token(&self, index: usize) -> u32 {
        self.f_min + index as u32
    }

    pub fn contains(&self, token: u32) -> bool {
        (self.f_min..=self.unvoiced()).contains(&token)
    }

    /// Frequency of a token, 0 for unvoiced.
    pub fn hz(&self, token: u32) -> f32 {
        if token == self.unvoiced() {
            0.0
        } else {
            token as f32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PitchTokens {
    pub tokens: Vec<u32>,
    pub vocab: PitchVocab,
}

impl PitchTokens {
    pub fn to_contour(&self, hop: usize) -> PitchContour {
        PitchContour::new(self.tokens.iter().map(|&t| self.vocab.hz(t)).collect(), hop)
    }
}

/// Rounds voiced frames to integer Hz (half away from zero) and clamps them
/// into the vocabulary; unvoiced frames get the unvoiced token.
pub fn pitch_to_tokens(contour: &PitchContour, vocab: PitchVocab) -> PitchTokens {
    assert!(vocab.f_min < vocab.f_max, "empty pitch vocabulary");
    let tokens = contour
        .f0
        .iter()
        .map(|&f| {
            if f > 0.0 && f.is_finite() {
                (f.round() as i64).clamp(vocab.f_min as i64, vocab.f_max as i64) as u32
            } else {
                vocab.unvoiced()
            }
        })
        .collect();
    PitchTokens { tokens, vocab }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_clamping_and_unvoiced() {
        let v = PitchVocab::default();
        let c = PitchContour::new(vec![261.63, 0.0, 1500.0, 20.0, 100.5], 320);
        let t = pitch_to_tokens(&c, v);
        assert_eq!(t.tokens, vec![262, v.unvoiced(), 1100, 50, 101]);
        assert_eq!(v.size(), 1052);
    }

    proptest! {
        #[test]
        fn tokens_stay_in_vocab(f0 in proptest::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..3000.0], 0..200)) {
            let v = PitchVocab::default();
            let t = pitch_to_tokens(&PitchContour::new(f0, 320), v);
            prop_assert!(t.tokens.iter().all(|&x| v.contains(x) && v.index(x) < v.size()));
        }
    }
}
