//! Training examples: corrupted semantic tokens of a variant, clean pitch and
//! acoustic targets of its source, and a reference prompt.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sts_core::container::{load_contour, load_features};
use sts_core::manifest::{resolve, CorpusRecord, VariantRecord};
use sts_core::perturb::{prr_discrete, variant_prr_plan};
use sts_core::signal::{load_wav, F0Extractor, FeatureExtractor, LogMel, PitchContour, Waveform};
use sts_core::tokenize::{
    extract_reference, kmeans_encode, pitch_to_tokens, rvq_encode, AcousticCodes, RvqCodec, SemanticCodebook,
};
use sts_lm::{build_sequence, FlatSequence, Vocab};

use crate::reference::{sample_reference, sample_two_windows};
use crate::{PipelineConfig, PipelineError};

/// Feature front ends derived from one config.
pub struct Frontend {
    pub semantic: LogMel,
    pub acoustic: LogMel,
    pub f0: F0Extractor,
    pub cfg: PipelineConfig,
}

impl Frontend {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            semantic: LogMel::new(cfg.mel()),
            acoustic: LogMel::new(cfg.codec_mel()),
            f0: F0Extractor::new(cfg.f0(), cfg.sample_rate)?,
            cfg: cfg.clone(),
        })
    }

    pub fn load_audio(&self, path: &Path) -> Result<Waveform, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path.display().to_string()));
        }
        Ok(load_wav(path, self.cfg.sample_rate)?)
    }
}

/// Fitted tokenizers.
#[derive(Debug, Clone)]
pub struct Tokenizers {
    pub semantic: SemanticCodebook,
    pub codec: RvqCodec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub semantic: Vec<u32>,
    pub pitch: Vec<u32>,
    pub reference: Vec<u32>,
    /// `frames x N_q` clean target codes.
    pub acoustic: AcousticCodes,
    pub source_id: String,
    pub variant: usize,
    pub reference_id: String,
}

impl TrainingExample {
    pub fn to_sequence(&self, vocab: &Vocab, p: usize) -> Result<FlatSequence, PipelineError> {
        let a = self.acoustic.codes.slice(s![.., ..p]);
        Ok(build_sequence(vocab, p, &self.semantic, &self.pitch, &self.reference, Some(a))?)
    }
}

/// Clean-side streams of one record, on a shared frame timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanStreams {
    pub n_q: usize,
    /// `frames * n_q` codes, row major.
    pub codes: Vec<u32>,
    pub pitch: Vec<u32>,
}

impl CleanStreams {
    pub fn frames(&self) -> usize {
        self.pitch.len()
    }

    pub fn acoustic(&self, range: Range<usize>) -> AcousticCodes {
        let rows = &self.codes[range.start * self.n_q..range.end * self.n_q];
        AcousticCodes { codes: Array2::from_shape_vec((range.len(), self.n_q), rows.to_vec()).expect("shape matches") }
    }

    pub fn reference(&self, range: Range<usize>) -> Vec<u32> {
        range.map(|t| self.codes[t * self.n_q]).collect()
    }
}

/// Clean target F0: the record's stored contour when present, else extracted.
pub fn clean_contour(
    record: &CorpusRecord,
    manifest_path: &Path,
    audio: &Waveform,
    fe: &Frontend,
) -> Result<PitchContour, PipelineError> {
    match &record.f0_path {
        Some(p) => {
            let p = resolve(manifest_path, p);
            if !p.exists() {
                return Err(PipelineError::MissingArtifact(p.display().to_string()));
            }
            Ok(load_contour(p, fe.cfg.hop)?)
        }
        None => Ok(fe.f0.extract(audio)?),
    }
}

/// Acoustic codes and pitch tokens of the clean record, truncated to the
/// shorter of the two timelines.
pub fn clean_streams(
    record: &CorpusRecord,
    manifest_path: &Path,
    fe: &Frontend,
    codec: &RvqCodec,
) -> Result<CleanStreams, PipelineError> {
    let audio = fe.load_audio(&resolve(manifest_path, &record.audio_path))?;
    let feats = fe.acoustic.extract(&audio);
    let codes = rvq_encode(feats.frames.view(), codec)?;
    let f0 = clean_contour(record, manifest_path, &audio, fe)?;
    let pitch = pitch_to_tokens(&f0, fe.cfg.pitch_vocab()).tokens;
    let frames = codes.frames().min(pitch.len());
    let n_q = codes.n_q();
    Ok(CleanStreams {
        n_q,
        codes: codes.codes.slice(s![..frames, ..]).iter().copied().collect(),
        pitch: pitch[..frames].to_vec(),
    })
}

/// Semantic tokens of a pre-perturbed variant. With discrete resampling the
/// stored features keep the corrupted timeline and the tokens are resampled
/// here with the variant's own plan.
pub fn variant_semantic(
    variant: &VariantRecord,
    variants_path: &Path,
    semantic: &SemanticCodebook,
    cfg: &PipelineConfig,
) -> Result<Vec<u32>, PipelineError> {
    let p = resolve(variants_path, &variant.feature_path);
    if !p.exists() {
        return Err(PipelineError::MissingArtifact(p.display().to_string()));
    }
    let feats = load_features(p)?;
    let tokens = kmeans_encode(feats.frames.view(), semantic)?;
    if cfg.prr_continuous {
        return Ok(tokens);
    }
    let plan = variant_prr_plan(variant.seed, tokens.len(), &cfg.prr())?;
    Ok(prr_discrete(&tokens, &plan)?)
}

/// Maps a window of the clean timeline onto the variant's resampled one.
fn map_window(variant: &VariantRecord, source_frames: usize, window: &Range<usize>, len: usize, cfg: &PipelineConfig) -> Result<Range<usize>, PipelineError> {
    let plan = variant_prr_plan(variant.seed, source_frames, &cfg.prr())?;
    let a = (plan.map_position(window.start as f64).round() as usize).min(len);
    let b = (plan.map_position(window.end as f64).round() as usize).clamp(a, len);
    Ok(if a == b { a.saturating_sub(1)..(a + 1).min(len).max(1) } else { a..b })
}

fn cap_reference(tokens: Vec<u32>, max: usize, rng: &mut impl Rng) -> Vec<u32> {
    if max == 0 || tokens.len() <= max {
        return tokens;
    }
    let start = rng.gen_range(0..=tokens.len() - max);
    tokens[start..start + max].to_vec()
}

/// Assembles one example from precomputed streams. `reference_of` resolves
/// a record id to its clean streams.
#[allow(clippy::too_many_arguments)]
fn assemble<'a>(
    record: &CorpusRecord,
    clean: &CleanStreams,
    variant: &VariantRecord,
    semantic: Vec<u32>,
    manifest: &[CorpusRecord],
    reference_of: impl Fn(&CorpusRecord) -> Result<std::borrow::Cow<'a, CleanStreams>, PipelineError>,
    cfg: &PipelineConfig,
    rng: &mut impl Rng,
) -> Result<TrainingExample, PipelineError> {
    let frames = clean.frames();
    if frames == 0 || semantic.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    if cfg.reference_expanded {
        let r = sample_reference(manifest, &record.song_id, record.segment_index, cfg.reference_window, rng)?;
        let rs = reference_of(r)?;
        let reference = cap_reference(rs.reference(0..rs.frames()), cfg.reference_max_frames, rng);
        return Ok(TrainingExample {
            semantic,
            pitch: clean.pitch.clone(),
            reference,
            acoustic: clean.acoustic(0..frames),
            source_id: record.id.clone(),
            variant: variant.variant,
            reference_id: r.id.clone(),
        });
    }
    let (rw, tw) = sample_two_windows(frames, rng)?;
    let sw = map_window(variant, frames, &tw, semantic.len(), cfg)?;
    Ok(TrainingExample {
        semantic: semantic[sw].to_vec(),
        pitch: clean.pitch[tw.clone()].to_vec(),
        reference: cap_reference(clean.reference(rw), cfg.reference_max_frames, rng),
        acoustic: clean.acoustic(tw),
        source_id: record.id.clone(),
        variant: variant.variant,
        reference_id: record.id.clone(),
    })
}

/// Builds one example straight from the artifacts on disk.
#[allow(clippy::too_many_arguments)]
pub fn build_training_example(
    record: &CorpusRecord,
    variant: &VariantRecord,
    manifest: &[CorpusRecord],
    manifest_path: &Path,
    variants_path: &Path,
    fe: &Frontend,
    tok: &Tokenizers,
    rng: &mut impl Rng,
) -> Result<TrainingExample, PipelineError> {
    let clean = clean_streams(record, manifest_path, fe, &tok.codec)?;
    let semantic = variant_semantic(variant, variants_path, &tok.semantic, &fe.cfg)?;
    let reference_of = |r: &CorpusRecord| clean_streams(r, manifest_path, fe, &tok.codec).map(std::borrow::Cow::Owned);
    assemble(record, &clean, variant, semantic, manifest, reference_of, &fe.cfg, rng)
}

/// Every record's clean streams and every variant's semantic tokens, kept
/// together so training can draw fresh references each step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizedCorpus {
    pub records: Vec<CorpusRecord>,
    pub clean: Vec<CleanStreams>,
    /// Per record, its variants and their semantic tokens.
    pub variants: Vec<Vec<(VariantRecord, Vec<u32>)>>,
}

impl TokenizedCorpus {
    /// Tokenizes every record with at least one variant, in parallel.
    pub fn build(
        records: &[CorpusRecord],
        manifest_path: &Path,
        variants: &[VariantRecord],
        variants_path: &Path,
        fe: &Frontend,
        tok: &Tokenizers,
    ) -> Result<Self, PipelineError> {
        let mut by_source: HashMap<&str, Vec<&VariantRecord>> = HashMap::new();
        for v in variants {
            by_source.entry(v.source_id.as_str()).or_default().push(v);
        }
        let kept: Vec<&CorpusRecord> = records.iter().filter(|r| by_source.contains_key(r.id.as_str())).collect();
        if kept.is_empty() {
            return Err(PipelineError::EmptyCorpus);
        }
        let rows: Vec<(CleanStreams, Vec<(VariantRecord, Vec<u32>)>)> = kept
            .par_iter()
            .map(|r| {
                let clean = clean_streams(r, manifest_path, fe, &tok.codec)?;
                let vs = by_source[r.id.as_str()]
                    .iter()
                    .map(|v| Ok(((*v).clone(), variant_semantic(v, variants_path, &tok.semantic, &fe.cfg)?)))
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                Ok((clean, vs))
            })
            .collect::<Result<_, PipelineError>>()?;
        let (clean, variants) = rows.into_iter().unzip();
        Ok(Self { records: kept.into_iter().cloned().collect(), clean, variants })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path.display().to_string()));
        }
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        serde_json::from_reader(f).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Example for variant `v` of record `i` with a freshly drawn reference.
    pub fn example(&self, i: usize, v: usize, cfg: &PipelineConfig, rng: &mut impl Rng) -> Result<TrainingExample, PipelineError> {
        let (variant, semantic) = &self.variants[i][v];
        let reference_of = |r: &CorpusRecord| {
            let j = self.records.iter().position(|x| x.id == r.id).ok_or_else(|| PipelineError::MissingArtifact(r.id.clone()))?;
            Ok(std::borrow::Cow::Borrowed(&self.clean[j]))
        };
        assemble(&self.records[i], &self.clean[i], variant, semantic.clone(), &self.records, reference_of, cfg, rng)
    }

    /// Uniform draw of a record and one of its variants.
    pub fn sample(&self, cfg: &PipelineConfig, rng: &mut impl Rng) -> Result<TrainingExample, PipelineError> {
        let i = rng.gen_range(0..self.len());
        let v = rng.gen_range(0..self.variants[i].len());
        self.example(i, v, cfg, rng)
    }
}

/// Reference tokens of a whole utterance, as used at inference.
pub fn reference_tokens(audio: &Waveform, fe: &Frontend, codec: &RvqCodec) -> Result<Vec<u32>, PipelineError> {
    let feats = fe.acoustic.extract(audio);
    Ok(extract_reference(&rvq_encode(feats.frames.view(), codec)?))
}
