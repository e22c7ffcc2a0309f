use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::corrupt::{corrupt_waveform, CorruptionConfig};
use super::prr::{plan_segments, prr_contour, prr_frames, PrrConfig, SegmentPlan};
use super::PerturbError;
use crate::container::{save_contour, save_features};
use crate::manifest::{resolve, CorpusRecord, VariantRecord};
use crate::seed::{sub_seed, variant_seed};
use crate::signal::{extract_f0, load_wav, save_wav, FeatureExtractor, FeatureSequence};

#[derive(Debug, Clone)]
pub struct PerturbOptions {
    pub n_r: usize,
    pub base_seed: u64,
    pub corruption: CorruptionConfig,
    pub prr: PrrConfig,
    /// When false the stored features keep the corrupted timeline, for
    /// callers that resample discrete tokens themselves.
    pub apply_prr: bool,
    pub write_wav: bool,
    pub sample_rate: u32,
    pub f_floor: f64,
    pub f_ceiling: f64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            n_r: 20,
            base_seed: 0,
            corruption: CorruptionConfig::default(),
            prr: PrrConfig::default(),
            apply_prr: true,
            write_wav: false,
            sample_rate: crate::signal::SAMPLE_RATE,
            f_floor: 50.0,
            f_ceiling: 1100.0,
        }
    }
}

#[derive(Debug, Default)]
pub struct PerturbReport {
    pub variants: Vec<VariantRecord>,
    /// `(record id, error message)` for entries that were skipped.
    pub failures: Vec<(String, String)>,
}

/// The resampling plan of one variant, recomputable from its seed.
pub fn variant_prr_plan(seed: u64, frames: usize, cfg: &PrrConfig) -> Result<SegmentPlan, PerturbError> {
    plan_segments(frames, cfg, &mut ChaCha8Rng::seed_from_u64(sub_seed(seed, "prr")))
}

/// Writes `n_r` corrupted and resampled variants of every record to `out_dir`.
/// Failing records are reported and skipped.
pub fn pre_perturb_corpus(
    records: &[CorpusRecord],
    manifest_path: &Path,
    out_dir: &Path,
    extractor: &dyn FeatureExtractor,
    opts: &PerturbOptions,
) -> PerturbReport {
    let results: Vec<Result<Vec<VariantRecord>, (String, String)>> = records
        .par_iter()
        .map(|rec| perturb_record(rec, manifest_path, out_dir, extractor, opts).map_err(|e| (rec.id.clone(), e.to_string())))
        .collect();
    let mut report = PerturbReport::default();
    for r in results {
        match r {
            Ok(v) => report.variants.extend(v),
            Err(f) => report.failures.push(f),
        }
    }
    report
}

fn perturb_record(
    rec: &CorpusRecord,
    manifest_path: &Path,
    out_dir: &Path,
    extractor: &dyn FeatureExtractor,
    opts: &PerturbOptions,
) -> Result<Vec<VariantRecord>, PerturbError> {
    let audio = load_wav(resolve(manifest_path, &rec.audio_path), opts.sample_rate)?;
    let hop = extractor.hop();
    let mut out = Vec::with_capacity(opts.n_r);
    for v in 0..opts.n_r {
        let seed = variant_seed(opts.base_seed, &rec.id, v);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "corrupt"));
        let (wave, _) = corrupt_waveform(&audio, &opts.corruption, &mut rng)?;
        let feats = extractor.extract(&wave);
        let f0 = extract_f0(&wave, hop, opts.f_floor, opts.f_ceiling)?;
        let (feats, f0) = if opts.apply_prr {
            let plan = variant_prr_plan(seed, feats.num_frames(), &opts.prr)?;
            (FeatureSequence::new(prr_frames(feats.frames.view(), &plan)?, hop), prr_contour(&f0, &plan)?)
        } else {
            (feats, f0)
        };
        let stem = format!("{}_v{v:03}", rec.id);
        let feature_path = out_dir.join(format!("{stem}.feat"));
        let f0_path = out_dir.join(format!("{stem}.f0"));
        let io = |e: crate::container::ContainerError| PerturbError::Signal(crate::signal::SignalError::Io(e.to_string()));
        save_features(&feature_path, &feats).map_err(io)?;
        save_contour(&f0_path, &f0).map_err(io)?;
        let wav_path: Option<PathBuf> = if opts.write_wav {
            let p = out_dir.join(format!("{stem}.wav"));
            save_wav(&p, &wave)?;
            Some(p)
        } else {
            None
        };
        out.push(VariantRecord {
            source_id: rec.id.clone(),
            song_id: rec.song_id.clone(),
            segment_index: rec.segment_index,
            variant: v,
            seed,
            feature_path,
            f0_path,
            wav_path,
        });
    }
    Ok(out)
}
