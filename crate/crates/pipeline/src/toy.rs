//! Synthetic corpus with known content, pitch and rhythm.
//!
//! A song is a list of segments; a segment is 8 to 12 syllables. Each
//! syllable is a harmonic tone shaped by one of 16 vowel-like spectral
//! envelopes, sung on a pentatonic note with light vibrato and followed by
//! one silent frame. The paired speech rendition uses the same syllables at
//! a flat per-song F0 with uniform short durations.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sts_core::container::save_contour_text;
use sts_core::manifest::{write_jsonl, CorpusRecord, Split};
use sts_core::seed::sub_seed;
use sts_core::signal::{save_wav, PitchContour, Waveform};

use crate::PipelineError;

pub const N_CLASSES: usize = 16;
pub const WORD_BOUNDARY: &str = "|";

const SYMBOLS: [&str; N_CLASSES] = ["a", "e", "i", "o", "u", "y", "aa", "ee", "ii", "oo", "uu", "ae", "oe", "ue", "ai", "au"];

/// First three resonances (Hz) of each class.
const FORMANTS: [[f64; 3]; N_CLASSES] = [
    [800.0, 1200.0, 2500.0],
    [500.0, 1900.0, 2600.0],
    [300.0, 2300.0, 3000.0],
    [500.0, 900.0, 2400.0],
    [320.0, 750.0, 2300.0],
    [300.0, 1800.0, 2200.0],
    [700.0, 1500.0, 2800.0],
    [420.0, 2100.0, 2900.0],
    [260.0, 2700.0, 3400.0],
    [600.0, 1000.0, 2200.0],
    [380.0, 1100.0, 2000.0],
    [650.0, 1700.0, 2500.0],
    [450.0, 1500.0, 2400.0],
    [350.0, 1600.0, 2300.0],
    [750.0, 1900.0, 2700.0],
    [600.0, 800.0, 2600.0],
];

/// Semitone offsets of two pentatonic octaves above the grid root.
const PENTATONIC: [i32; 11] = [0, 2, 4, 7, 9, 12, 14, 16, 19, 21, 24];
const GRID_ROOT_HZ: f64 = 220.0;

pub fn phoneme_inventory() -> Vec<&'static str> {
    let mut v = SYMBOLS.to_vec();
    v.push(WORD_BOUNDARY);
    v
}

pub fn symbol(class: usize) -> &'static str {
    SYMBOLS[class]
}

pub fn class_of(symbol: &str) -> Option<usize> {
    SYMBOLS.iter().position(|&s| s == symbol)
}

/// Spectral envelope of a class at `f` Hz (linear amplitude).
pub fn envelope(class: usize, f: f64) -> f64 {
    let [f1, f2, f3] = FORMANTS[class];
    let peak = |fc: f64, bw: f64, g: f64| g * (-0.5 * ((f - fc) / bw).powi(2)).exp();
    let tilt = 1.0 / (1.0 + f / 1500.0);
    0.04 * tilt + peak(f1, 90.0, 1.0) + peak(f2, 120.0, 0.7) + peak(f3, 160.0, 0.35)
}

/// One synthesized syllable sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendition {
    pub wave: Waveform,
    /// Ground-truth F0 at every frame centre (0 = unvoiced).
    pub f0: PitchContour,
}

/// Notes in Hz and voiced lengths in frames, one per syllable; every
/// syllable is followed by one silent frame and the whole by a lead-in frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub classes: Vec<usize>,
    pub notes_hz: Vec<f64>,
    pub frames: Vec<usize>,
    pub vibrato_cents: f64,
}

const VIBRATO_HZ: f64 = 5.5;
const FADE_SECS: f64 = 0.004;

pub fn render_score(score: &Score, sample_rate: u32, hop: usize) -> Result<Rendition, PipelineError> {
    if score.classes.is_empty() || score.classes.len() != score.notes_hz.len() || score.classes.len() != score.frames.len() {
        return Err(PipelineError::EmptyInput);
    }
    let sr = sample_rate as f64;
    let total_frames = 1 + score.frames.iter().map(|f| f + 1).sum::<usize>();
    let mut samples = vec![0f32; total_frames * hop];
    // (start sample, end sample, syllable)
    let mut spans = Vec::with_capacity(score.classes.len());
    let mut cursor = hop;
    for (s, &f) in score.frames.iter().enumerate() {
        spans.push((cursor, cursor + f * hop, s));
        cursor += (f + 1) * hop;
    }
    let f0_at = |s: usize, n: usize| {
        let t = n as f64 / sr;
        score.notes_hz[s] * 2f64.powf(score.vibrato_cents / 1200.0 * (2.0 * PI * VIBRATO_HZ * t).sin())
    };
    let fade = (FADE_SECS * sr) as usize;
    for &(a, b, s) in &spans {
        let class = score.classes[s];
        let note = score.notes_hz[s];
        let harmonics = ((0.47 * sr) / (note * 1.02)).floor() as usize;
        let gains: Vec<f64> = (1..=harmonics).map(|k| envelope(class, k as f64 * note)).collect();
        let norm = 0.25 / gains.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-9);
        let mut phase = 0.0f64;
        for n in a..b {
            let f = f0_at(s, n);
            phase += 2.0 * PI * f / sr;
            let ramp = ((n - a).min(b - 1 - n) as f64 / fade as f64).min(1.0);
            let ramp = 0.5 - 0.5 * (PI * ramp).cos();
            let mut v = 0.0;
            for (k, g) in gains.iter().enumerate() {
                v += g * ((k + 1) as f64 * phase).sin();
            }
            samples[n] = (norm * ramp * v) as f32;
        }
    }
    let f0 = (0..total_frames)
        .map(|t| {
            let c = t * hop + hop / 2;
            spans.iter().find(|&&(a, b, _)| a <= c && c < b).map_or(0.0, |&(_, _, s)| f0_at(s, c) as f32)
        })
        .collect();
    Ok(Rendition { wave: Waveform::new(samples, sample_rate)?, f0: PitchContour::new(f0, hop) })
}

/// Score of one toy segment and its paired speech.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySegment {
    pub song: usize,
    pub index: usize,
    pub sung: Score,
    pub spoken: Score,
}

impl ToySegment {
    pub fn id(&self) -> String {
        format!("song{:02}_seg{:02}", self.song, self.index)
    }

    /// Syllable symbols with a word boundary after every second syllable.
    pub fn phonemes(&self) -> String {
        let mut out = Vec::new();
        for (i, &c) in self.sung.classes.iter().enumerate() {
            if i > 0 && i % 2 == 0 {
                out.push(WORD_BOUNDARY);
            }
            out.push(SYMBOLS[c]);
        }
        out.join(" ")
    }
}

pub const SUNG_FRAMES: (usize, usize) = (3, 5);
pub const SPOKEN_FRAMES: usize = 2;

/// Draws the scores of a toy corpus.
pub fn toy_scores(songs: usize, segments: usize, seed: u64) -> Vec<ToySegment> {
    let mut out = Vec::with_capacity(songs * segments);
    for song in 0..songs {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("toy-song{song}")));
        let speech_f0 = rng.gen_range(110.0..200.0);
        let mut degree = rng.gen_range(2..8usize);
        for index in 0..segments {
            let n = rng.gen_range(8..=12);
            let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..N_CLASSES)).collect();
            let notes_hz = (0..n)
                .map(|_| {
                    let step = *[-2i32, -1, 0, 1, 2].choose(&mut rng).unwrap();
                    degree = (degree as i32 + step).clamp(0, PENTATONIC.len() as i32 - 1) as usize;
                    GRID_ROOT_HZ * 2f64.powf(PENTATONIC[degree] as f64 / 12.0)
                })
                .collect();
            let frames = (0..n).map(|_| rng.gen_range(SUNG_FRAMES.0..=SUNG_FRAMES.1)).collect();
            let sung = Score { classes: classes.clone(), notes_hz, frames, vibrato_cents: 15.0 };
            let spoken = Score { classes, notes_hz: vec![speech_f0; n], frames: vec![SPOKEN_FRAMES; n], vibrato_cents: 0.0 };
            out.push(ToySegment { song, index, sung, spoken });
        }
    }
    out
}

/// Writes the toy corpus under `out_dir` and returns its manifest records.
/// Paths in the manifest are relative to `out_dir`.
pub fn make_toy_corpus(
    out_dir: &Path,
    songs: usize,
    segments: usize,
    seed: u64,
    sample_rate: u32,
    hop: usize,
) -> Result<Vec<CorpusRecord>, PipelineError> {
    if songs == 0 || segments == 0 {
        return Err(PipelineError::EmptyCorpus);
    }
    for d in ["audio", "speech", "f0"] {
        std::fs::create_dir_all(out_dir.join(d))?;
    }
    let mut records = Vec::new();
    for seg in toy_scores(songs, segments, seed) {
        let id = seg.id();
        let sung = render_score(&seg.sung, sample_rate, hop)?;
        let spoken = render_score(&seg.spoken, sample_rate, hop)?;
        let audio_path = PathBuf::from(format!("audio/{id}.wav"));
        let speech_path = PathBuf::from(format!("speech/{id}.wav"));
        let f0_path = PathBuf::from(format!("f0/{id}.f0"));
        save_wav(out_dir.join(&audio_path), &sung.wave)?;
        save_wav(out_dir.join(&speech_path), &spoken.wave)?;
        save_contour_text(out_dir.join(&f0_path), &sung.f0)?;
        records.push(CorpusRecord {
            id,
            song_id: format!("song{:02}", seg.song),
            segment_index: seg.index,
            audio_path,
            split: Split::Train,
            speech_path: Some(speech_path),
            phonemes: Some(seg.phonemes()),
            feature_path: None,
            f0_path: Some(f0_path),
        });
    }
    write_jsonl(out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_respect_the_layout() {
        let segs = toy_scores(3, 4, 7);
        assert_eq!(segs.len(), 12);
        for s in &segs {
            let n = s.sung.classes.len();
            assert!((8..=12).contains(&n));
            assert_eq!(s.spoken.classes, s.sung.classes);
            assert!(s.sung.frames.iter().all(|f| (3..=5).contains(f)));
            assert!(s.sung.notes_hz.iter().all(|&f| (219.0..=881.0).contains(&f)));
            let ph = s.phonemes();
            assert_eq!(ph.split(' ').filter(|&p| p != WORD_BOUNDARY).count(), n);
        }
        assert_eq!(segs, toy_scores(3, 4, 7));
    }

    #[test]
    fn rendition_timeline_matches_the_score() {
        let seg = &toy_scores(1, 1, 3)[0];
        let r = render_score(&seg.sung, 16_000, 320).unwrap();
        let frames = 1 + seg.sung.frames.iter().map(|f| f + 1).sum::<usize>();
        assert_eq!(r.wave.len(), frames * 320);
        assert_eq!(r.f0.len(), frames);
        let voiced = r.f0.f0.iter().filter(|&&f| f > 0.0).count();
        assert_eq!(voiced, seg.sung.frames.iter().sum::<usize>());
        assert!(r.wave.samples().iter().all(|v| v.abs() < 1.0));
    }
}
