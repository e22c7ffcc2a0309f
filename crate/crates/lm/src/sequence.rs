//! Separator-delimited, patch-aligned token layout.
//!
//! Every condition token is repeated `P` times so that it fills a patch, each
//! separator fills a patch of its own, and an acoustic patch holds the first
//! `P` codes of one frame:
//!
//! ```text
//! [sem_start] s.. [sem_end] [pitch_start] p.. [pitch_end]
//! [ref_start] r.. [ref_end] [acoustic_start] a.. [acoustic_end]
//! ```

use std::ops::Range;

use ndarray::{Array2, ArrayView2};

use crate::vocab::{Special, Vocab};
use crate::LmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    Separator = 0,
    Semantic = 1,
    Pitch = 2,
    Reference = 3,
    Acoustic = 4,
}

impl PatchKind {
    pub const COUNT: usize = 5;
}

/// Patch ranges of each content region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    pub semantic: Range<usize>,
    pub pitch: Range<usize>,
    pub reference: Range<usize>,
    pub acoustic: Range<usize>,
    /// Patch index of the closing separator, when present.
    pub acoustic_end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatSequence {
    pub ids: Vec<u32>,
    pub p: usize,
    pub regions: RegionMap,
}

impl FlatSequence {
    pub fn num_patches(&self) -> usize {
        self.ids.len() / self.p
    }

    pub fn patch(&self, t: usize) -> &[u32] {
        &self.ids[t * self.p..(t + 1) * self.p]
    }

    /// Region kind and index within the region of patch `t`.
    pub fn patch_info(&self, t: usize) -> (PatchKind, usize) {
        let r = &self.regions;
        for (range, kind) in [
            (&r.semantic, PatchKind::Semantic),
            (&r.pitch, PatchKind::Pitch),
            (&r.reference, PatchKind::Reference),
            (&r.acoustic, PatchKind::Acoustic),
        ] {
            if range.contains(&t) {
                return (kind, t - range.start);
            }
        }
        (PatchKind::Separator, 0)
    }

    /// Patches whose tokens are scored: acoustic frames and the closing separator.
    pub fn loss_patches(&self) -> Vec<usize> {
        self.regions.acoustic.clone().chain(self.regions.acoustic_end).collect()
    }

    /// Whether the sequence is a generation prompt ending at `[acoustic_start]`.
    pub fn is_prompt(&self) -> bool {
        self.regions.acoustic.is_empty() && self.regions.acoustic_end.is_none() && self.regions.acoustic.start == self.num_patches()
    }

    /// Drops the acoustic content, leaving the generation prompt.
    pub fn prompt(&self) -> FlatSequence {
        let start = self.regions.acoustic.start;
        FlatSequence {
            ids: self.ids[..start * self.p].to_vec(),
            p: self.p,
            regions: RegionMap { acoustic: start..start, acoustic_end: None, ..self.regions.clone() },
        }
    }
}

/// Lays out the streams. `acoustic` is `frames x N_q` (first `p` columns
/// used); `None` builds an inference prompt.
pub fn build_sequence(
    vocab: &Vocab,
    p: usize,
    semantic: &[u32],
    pitch: &[u32],
    reference: &[u32],
    acoustic: Option<ArrayView2<u32>>,
) -> Result<FlatSequence, LmError> {
    let mut ids = Vec::new();
    let mut patches = 0usize;
    let sep = |ids: &mut Vec<u32>, patches: &mut usize, s: Special| {
        ids.extend(std::iter::repeat(vocab.special(s)).take(p));
        *patches += 1;
    };
    let stream = |ids: &mut Vec<u32>,
                      patches: &mut usize,
                      name: &'static str,
                      tokens: &[u32],
                      map: &dyn Fn(u32) -> Option<u32>|
     -> Result<Range<usize>, LmError> {
        let start = *patches;
        for &t in tokens {
            let id = map(t).ok_or(LmError::VocabOverflow { stream: name, value: t })?;
            ids.extend(std::iter::repeat(id).take(p));
            *patches += 1;
        }
        Ok(start..*patches)
    };
    sep(&mut ids, &mut patches, Special::SemanticStart);
    let sem = stream(&mut ids, &mut patches, "semantic", semantic, &|t| vocab.semantic(t))?;
    sep(&mut ids, &mut patches, Special::SemanticEnd);
    sep(&mut ids, &mut patches, Special::PitchStart);
    let pit = stream(&mut ids, &mut patches, "pitch", pitch, &|t| vocab.pitch(t))?;
    sep(&mut ids, &mut patches, Special::PitchEnd);
    sep(&mut ids, &mut patches, Special::RefStart);
    let refr = stream(&mut ids, &mut patches, "reference", reference, &|t| vocab.acoustic(t))?;
    sep(&mut ids, &mut patches, Special::RefEnd);
    sep(&mut ids, &mut patches, Special::AcousticStart);
    let start = patches;
    let mut acoustic_end = None;
    if let Some(a) = acoustic {
        if a.ncols() < p {
            return Err(LmError::InvalidInput(format!("need {p} codebooks per frame, got {}", a.ncols())));
        }
        for row in a.outer_iter() {
            for &c in row.iter().take(p) {
                ids.push(vocab.acoustic(c).ok_or(LmError::VocabOverflow { stream: "acoustic", value: c })?);
            }
            patches += 1;
        }
        acoustic_end = Some(patches);
        sep(&mut ids, &mut patches, Special::AcousticEnd);
    }
    let acoustic_range = start..acoustic_end.unwrap_or(patches);
    Ok(FlatSequence {
        ids,
        p,
        regions: RegionMap { semantic: sem, pitch: pit, reference: refr, acoustic: acoustic_range, acoustic_end },
    })
}

/// Streams recovered from a flat sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedStreams {
    pub semantic: Vec<u32>,
    pub pitch: Vec<u32>,
    pub reference: Vec<u32>,
    pub acoustic: Array2<u32>,
}

/// Inverse of [`build_sequence`], reading only the ids.
pub fn parse_sequence(vocab: &Vocab, seq: &FlatSequence) -> Result<ParsedStreams, LmError> {
    let p = seq.p;
    if seq.ids.len() % p != 0 {
        return Err(LmError::NotPatchAligned { len: seq.ids.len(), p });
    }
    let bad = |msg: String| LmError::InvalidInput(msg);
    let mut patches = seq.ids.chunks_exact(p);
    let expect_sep = |patches: &mut std::slice::ChunksExact<u32>, s: Special| -> Result<(), LmError> {
        match patches.next() {
            Some(pt) if pt.iter().all(|&i| i == vocab.special(s)) => Ok(()),
            other => Err(bad(format!("expected {s:?}, found {other:?}"))),
        }
    };
    let repeated = |patches: &mut std::slice::ChunksExact<u32>, end: Special| -> Result<Vec<u32>, LmError> {
        let mut out = Vec::new();
        for pt in patches.by_ref() {
            if pt.iter().all(|&i| i == vocab.special(end)) {
                return Ok(out);
            }
            if pt.iter().any(|&i| i != pt[0]) {
                return Err(bad(format!("condition patch {pt:?} is not a repeated token")));
            }
            out.push(pt[0]);
        }
        Err(bad(format!("missing {end:?}")))
    };
    expect_sep(&mut patches, Special::SemanticStart)?;
    let semantic = repeated(&mut patches, Special::SemanticEnd)?;
    expect_sep(&mut patches, Special::PitchStart)?;
    let pitch_ids = repeated(&mut patches, Special::PitchEnd)?;
    expect_sep(&mut patches, Special::RefStart)?;
    let ref_ids = repeated(&mut patches, Special::RefEnd)?;
    expect_sep(&mut patches, Special::AcousticStart)?;
    let mut codes = Vec::new();
    let mut frames = 0;
    for pt in patches {
        if pt.iter().all(|&i| i == vocab.special(Special::AcousticEnd)) {
            break;
        }
        for &i in pt {
            let h = vocab.head_index(i).filter(|&h| h < vocab.k2).ok_or_else(|| bad(format!("non-code id {i}")))?;
            codes.push(h as u32);
        }
        frames += 1;
    }
    let pv = vocab.pitch_vocab();
    let off = vocab.pitch_offset() as u32;
    let ac = vocab.acoustic_offset() as u32;
    Ok(ParsedStreams {
        semantic,
        pitch: pitch_ids.iter().map(|&i| pv.token((i - off) as usize)).collect(),
        reference: ref_ids.iter().map(|&i| i - ac).collect(),
        acoustic: Array2::from_shape_vec((frames, p), codes).expect("frames x p codes"),
    })
}

/// Channel-wise concatenation of the `P` embeddings of each patch
/// (`L x E` to `L/P x P*E`). Row-major storage makes this a reshape.
pub fn patch_downsample(embedded: &crate::Mat, p: usize) -> Result<crate::Mat, LmError> {
    if embedded.rows % p != 0 {
        return Err(LmError::NotPatchAligned { len: embedded.rows, p });
    }
    Ok(embedded.clone().reshape(embedded.rows / p, embedded.cols * p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab { k1: 16, k2: 8, f_min: 50, f_max: 1100 }
    }

    #[test]
    fn worked_example_has_fifteen_patches() {
        let a = Array2::from_shape_vec((2, 8), (0..16).map(|i| i % 8).collect()).unwrap();
        let s = build_sequence(&vocab(), 3, &[1, 2], &[220, 1101], &[5], Some(a.view())).unwrap();
        assert_eq!(s.num_patches(), 15);
        assert_eq!(s.ids.len(), 45);
        assert_eq!(s.loss_patches(), vec![12, 13, 14]);
        assert_eq!(s.patch_info(5), (PatchKind::Pitch, 0));
        assert_eq!(s.patch_info(13), (PatchKind::Acoustic, 1));
    }

    #[test]
    fn prompt_ends_at_acoustic_start() {
        let s = build_sequence(&vocab(), 3, &[1], &[300], &[2], None).unwrap();
        let v = vocab();
        assert_eq!(s.num_patches(), 10);
        assert!(s.ids[s.ids.len() - 3..].iter().all(|&i| i == v.special(Special::AcousticStart)));
        assert!(s.is_prompt());
        assert!(s.loss_patches().is_empty());
    }

    #[test]
    fn overflow_is_reported() {
        assert!(matches!(
            build_sequence(&vocab(), 3, &[16], &[300], &[2], None),
            Err(LmError::VocabOverflow { stream: "semantic", .. })
        ));
        assert!(matches!(
            build_sequence(&vocab(), 3, &[1], &[300], &[8], None),
            Err(LmError::VocabOverflow { stream: "reference", .. })
        ));
    }

    #[test]
    fn downsample_concatenates_in_order() {
        let e = Mat::from_vec(6, 2, (0..12).map(|v| v as f64).collect());
        let d = patch_downsample(&e, 3).unwrap();
        assert_eq!((d.rows, d.cols), (2, 6));
        assert_eq!(d.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(patch_downsample(&Mat::zeros(4, 2), 3), Err(LmError::NotPatchAligned { .. })));
        assert!(patch_downsample(&Mat::zeros(6, 2), 3).unwrap().data.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn layout_and_round_trip(
            s in proptest::collection::vec(0u32..16, 0..20),
            pitch in proptest::collection::vec(prop_oneof![50u32..=1100, Just(1101u32)], 0..20),
            r in proptest::collection::vec(0u32..8, 0..20),
            frames in 0usize..20,
            with_codes in any::<bool>(),
            seed in 0u32..1000,
        ) {
            let v = vocab();
            let a = Array2::from_shape_fn((frames, 8), |(i, j)| (i as u32 * 7 + j as u32 + seed) % 8);
            let seq = build_sequence(&v, 3, &s, &pitch, &r, with_codes.then(|| a.view())).unwrap();
            let expected = s.len() + pitch.len() + r.len() + 7 + if with_codes { frames + 1 } else { 0 };
            prop_assert_eq!(seq.num_patches(), expected);
            prop_assert_eq!(seq.ids.len() % 3, 0);
            let parsed = parse_sequence(&v, &seq).unwrap();
            prop_assert_eq!(&parsed.semantic, &s);
            prop_assert_eq!(&parsed.pitch, &pitch);
            prop_assert_eq!(&parsed.reference, &r);
            if with_codes {
                prop_assert_eq!(parsed.acoustic, a.slice(ndarray::s![.., ..3]).to_owned());
            }
        }
    }
}
