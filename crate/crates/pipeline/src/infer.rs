//! Speech-to-singing and phoneme-to-singing inference.

use std::path::Path;

use sts_core::signal::{FeatureExtractor, PitchContour, Waveform};
use sts_core::tokenize::{kmeans_encode, pitch_to_tokens, AcousticCodes, RvqCodec, SemanticCodebook};
use sts_lm::{build_sequence, generate, MultiScaleModel};

use crate::dataset::{reference_tokens, Frontend, Tokenizers};
use crate::render::Renderer;
use crate::t2s::{PhonemeSequence, Translator};
use crate::{PipelineConfig, PipelineError};

/// Trained acoustic model and tokenizers.
pub struct StsModels {
    pub lm: MultiScaleModel,
    pub tok: Tokenizers,
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::ModelNotLoaded(path.display().to_string()))
    }
}

impl StsModels {
    pub fn load(lm: &Path, semantic: &Path, codec: &Path) -> Result<Self, PipelineError> {
        for p in [lm, semantic, codec] {
            require(p)?;
        }
        let fail = |p: &Path, e: String| PipelineError::ModelNotLoaded(format!("{}: {e}", p.display()));
        let lm_model = MultiScaleModel::load(lm).map_err(|e| fail(lm, e.to_string()))?;
        let semantic_cb = SemanticCodebook::load(semantic).map_err(|e| fail(semantic, e.to_string()))?;
        let codec_cb = RvqCodec::load(codec).map_err(|e| fail(codec, e.to_string()))?;
        let v = lm_model.vocab();
        if v.k1 != semantic_cb.k() || v.k2 != codec_cb.k() || lm_model.cfg.p_patch > codec_cb.n_q() {
            return Err(PipelineError::ModelNotLoaded("model vocabulary does not match the tokenizers".into()));
        }
        Ok(Self { lm: lm_model, tok: Tokenizers { semantic: semantic_cb, codec: codec_cb } })
    }
}

/// Rendered output of one inference call.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub wave: Waveform,
    /// `frames x P` generated codes.
    pub codes: AcousticCodes,
    /// Generation ended before reaching the pitch contour's length.
    pub truncated: bool,
}

/// Generates exactly one frame per pitch frame unless the model stops early.
fn synthesize(
    semantic: &[u32],
    pitch: &PitchContour,
    reference: &[u32],
    models: &StsModels,
    cfg: &PipelineConfig,
    renderer: &Renderer,
    seed: u64,
) -> Result<Synthesis, PipelineError> {
    if pitch.is_empty() {
        return Err(PipelineError::EmptyPitch);
    }
    let pitch_tokens = pitch_to_tokens(pitch, cfg.pitch_vocab()).tokens;
    let reference = if cfg.reference_max_frames > 0 && reference.len() > cfg.reference_max_frames {
        &reference[..cfg.reference_max_frames]
    } else {
        reference
    };
    let lm = &models.lm;
    let prompt = build_sequence(lm.vocab(), lm.cfg.p_patch, semantic, &pitch_tokens, reference, None)?;
    let mut sampling = cfg.sampling(seed);
    sampling.max_patches = pitch_tokens.len();
    sampling.min_patches = pitch_tokens.len();
    let out = generate(lm, &prompt, &sampling)?;
    let truncated = out.codes.frames() < pitch_tokens.len();
    let wave = if out.codes.frames() == 0 {
        Waveform::silence(pitch_tokens.len() * cfg.hop, cfg.sample_rate)
    } else {
        renderer.render(&out.codes, &models.tok.codec)?
    };
    Ok(Synthesis { wave, codes: out.codes, truncated })
}

/// Sings `speech` along `pitch`. The speech is tokenized without corruption
/// and also serves as its own reference prompt.
pub fn sts_infer(
    speech: &Waveform,
    pitch: &PitchContour,
    models: &StsModels,
    fe: &Frontend,
    renderer: &Renderer,
    seed: u64,
) -> Result<Synthesis, PipelineError> {
    if speech.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let semantic = kmeans_encode(fe.semantic.extract(speech).frames.view(), &models.tok.semantic)?;
    let reference = reference_tokens(speech, fe, &models.tok.codec)?;
    synthesize(&semantic, pitch, &reference, models, &fe.cfg, renderer, seed)
}

/// Sings `phonemes` along `pitch` in the voice of `reference_audio`.
pub fn svs_infer(
    phonemes: &PhonemeSequence,
    pitch: &PitchContour,
    reference_audio: &Waveform,
    translator: &Translator,
    models: &StsModels,
    fe: &Frontend,
    renderer: &Renderer,
    seed: u64,
) -> Result<Synthesis, PipelineError> {
    if phonemes.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let semantic = translator.translate(phonemes)?;
    if semantic.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let reference = reference_tokens(reference_audio, fe, &models.tok.codec)?;
    synthesize(&semantic, pitch, &reference, models, &fe.cfg, renderer, seed)
}
