//! Choice of the reference prompt for a training target.

use std::ops::Range;

use rand::Rng;
use sts_core::manifest::CorpusRecord;

use crate::PipelineError;

/// Uniform draw among the segments of the same song whose index lies within
/// `window` of `segment_index`. The target itself is excluded unless it is
/// the only candidate.
pub fn sample_reference<'a>(
    manifest: &'a [CorpusRecord],
    song_id: &str,
    segment_index: usize,
    window: usize,
    rng: &mut impl Rng,
) -> Result<&'a CorpusRecord, PipelineError> {
    let unknown = || PipelineError::UnknownSegment { song: song_id.to_string(), index: segment_index };
    let this = manifest.iter().find(|r| r.song_id == song_id && r.segment_index == segment_index).ok_or_else(unknown)?;
    let candidates: Vec<&CorpusRecord> = manifest
        .iter()
        .filter(|r| r.song_id == song_id && r.segment_index != segment_index && r.segment_index.abs_diff(segment_index) <= window)
        .collect();
    if candidates.is_empty() {
        return Ok(this);
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// Two disjoint windows of one `frames`-long sample, `(reference, target)`:
/// the cut falls in the middle third and a coin picks which side is the
/// reference.
pub fn sample_two_windows(frames: usize, rng: &mut impl Rng) -> Result<(Range<usize>, Range<usize>), PipelineError> {
    if frames < 2 {
        return Err(PipelineError::EmptyInput);
    }
    let lo = (frames / 3).max(1);
    let hi = (2 * frames / 3).max(lo);
    let cut = rng.gen_range(lo..=hi).min(frames - 1);
    let (a, b) = (0..cut, cut..frames);
    Ok(if rng.gen_bool(0.5) { (a, b) } else { (b, a) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn song(n: usize) -> Vec<CorpusRecord> {
        (0..n)
            .map(|i| CorpusRecord {
                id: format!("s_{i}"),
                song_id: "s".into(),
                segment_index: i,
                audio_path: PathBuf::from(format!("{i}.wav")),
                split: Default::default(),
                speech_path: None,
                phonemes: None,
                feature_path: None,
                f0_path: None,
            })
            .collect()
    }

    #[test]
    fn window_is_clipped_at_the_song_start() {
        let m = song(12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [false; 12];
        for _ in 0..2000 {
            let r = sample_reference(&m, "s", 0, 5, &mut rng).unwrap();
            seen[r.segment_index] = true;
        }
        assert_eq!(seen, [false, true, true, true, true, true, false, false, false, false, false, false]);
    }

    #[test]
    fn single_segment_falls_back_to_self_and_unknown_fails() {
        let m = song(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_reference(&m, "s", 0, 5, &mut rng).unwrap().id, "s_0");
        assert!(matches!(sample_reference(&m, "s", 3, 5, &mut rng), Err(PipelineError::UnknownSegment { .. })));
        assert!(matches!(sample_reference(&m, "t", 0, 5, &mut rng), Err(PipelineError::UnknownSegment { .. })));
    }

    #[test]
    fn two_windows_partition_the_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for frames in 2..60 {
            let (r, t) = sample_two_windows(frames, &mut rng).unwrap();
            assert!(!r.is_empty() && !t.is_empty());
            assert_eq!(r.len() + t.len(), frames);
            assert!(r.end <= t.start || t.end <= r.start);
        }
        assert!(sample_two_windows(1, &mut rng).is_err());
    }
}
