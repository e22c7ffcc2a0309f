//! Flat key-value configuration. Every key is optional; missing keys take
//! the defaults below. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sts_core::perturb::{CorruptionConfig, EqSpec, PrrConfig};
use sts_core::signal::{F0Config, MelConfig};
use sts_core::tokenize::PitchVocab;
use sts_lm::{CausalLmConfig, LmConfig, SamplingConfig, StackConfig, Vocab};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // audio front end
    pub sample_rate: u32,
    pub hop: usize,
    pub n_fft: usize,
    /// Width of the semantic feature frames.
    pub n_mels: usize,
    /// Width of the frames the acoustic codec quantizes and the renderer inverts.
    pub codec_n_mels: usize,
    pub f0_floor: f64,
    pub f0_ceiling: f64,
    pub f0_voicing_threshold: f64,

    // perturbation
    pub n_r: usize,
    pub prr_l_r: usize,
    pub prr_r_min: f64,
    pub prr_r_max: f64,
    /// `false` switches to discrete resampling of the semantic tokens.
    pub prr_continuous: bool,
    pub fs_ratio_max: f64,
    pub pr_shift_max: f64,
    pub pr_range_max: f64,
    pub eq_gain_db_min: f64,
    pub eq_gain_db_max: f64,
    pub eq_freq_min: f64,
    pub eq_freq_max: f64,
    pub eq_q_min: f64,
    pub eq_q_max: f64,
    pub eq_n_peaking: usize,

    // tokenizers
    pub k1: usize,
    pub kmeans_iters: usize,
    pub k2: usize,
    pub n_q: usize,
    pub rvq_iters: usize,
    pub decode_depth: usize,
    pub pitch_f_min: u32,
    pub pitch_f_max: u32,

    // reference prompting
    pub reference_window: usize,
    /// `false` selects the two-window scheme of earlier work.
    pub reference_expanded: bool,
    /// Longest reference prompt in frames; 0 keeps the whole segment.
    pub reference_max_frames: usize,

    // acoustic language model
    pub p_patch: usize,
    pub embed_dim: usize,
    pub global_layers: usize,
    pub global_width: usize,
    pub global_heads: usize,
    pub global_ffn: usize,
    pub local_layers: usize,
    pub local_width: usize,
    pub local_heads: usize,
    pub local_ffn: usize,
    pub max_positions: usize,
    pub region_positions: bool,
    pub region_scale: f64,
    pub lr: f64,
    pub clip: f64,
    /// Share of acoustic frames whose codes the global model sees replaced
    /// by random codes during training. Targets stay clean.
    pub input_noise: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub log_every: usize,

    // sampling
    pub temperature: f64,
    pub top_k: usize,
    pub max_patches: usize,

    // rendering
    pub griffin_lim_iters: usize,
    pub griffin_lim_momentum: f64,

    // text-to-semantic translator
    pub t2s_layers: usize,
    pub t2s_width: usize,
    pub t2s_heads: usize,
    pub t2s_ffn: usize,
    pub t2s_max_len: usize,
    pub t2s_lr: f64,
    pub t2s_steps: usize,

    // toy corpus
    pub toy_songs: usize,
    pub toy_segments: usize,

    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            hop: 320,
            n_fft: 1024,
            n_mels: 80,
            codec_n_mels: 128,
            f0_floor: 50.0,
            f0_ceiling: 1100.0,
            f0_voicing_threshold: 0.45,
            n_r: 20,
            prr_l_r: 20,
            prr_r_min: 0.5,
            prr_r_max: 1.5,
            prr_continuous: true,
            fs_ratio_max: 1.4,
            pr_shift_max: 2.0,
            pr_range_max: 1.5,
            eq_gain_db_min: -12.0,
            eq_gain_db_max: 12.0,
            eq_freq_min: 60.0,
            eq_freq_max: 7000.0,
            eq_q_min: 0.5,
            eq_q_max: 2.0,
            eq_n_peaking: 8,
            k1: 64,
            kmeans_iters: 50,
            k2: 256,
            n_q: 8,
            rvq_iters: 25,
            decode_depth: 3,
            pitch_f_min: 50,
            pitch_f_max: 1100,
            reference_window: 5,
            reference_expanded: true,
            reference_max_frames: 0,
            p_patch: 3,
            embed_dim: 128,
            global_layers: 4,
            global_width: 256,
            global_heads: 4,
            global_ffn: 1024,
            local_layers: 2,
            local_width: 256,
            local_heads: 4,
            local_ffn: 1024,
            max_positions: 2048,
            region_positions: true,
            region_scale: 0.1,
            lr: 3e-4,
            clip: 1.0,
            input_noise: 0.0,
            train_steps: 2000,
            batch_size: 1,
            log_every: 100,
            temperature: 0.0,
            top_k: 0,
            max_patches: 1000,
            griffin_lim_iters: 60,
            griffin_lim_momentum: 0.99,
            t2s_layers: 4,
            t2s_width: 128,
            t2s_heads: 4,
            t2s_ffn: 512,
            t2s_max_len: 512,
            t2s_lr: 1e-3,
            t2s_steps: 1000,
            toy_songs: 20,
            toy_segments: 12,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.hop == 0 || !self.n_fft.is_power_of_two() || self.n_fft < self.hop {
            return bad(format!("n_fft {} must be a power of two no smaller than hop {}", self.n_fft, self.hop));
        }
        if self.n_mels < 8 || self.codec_n_mels < 8 {
            return bad("mel widths must be at least 8".into());
        }
        if !(0.0 < self.f0_floor && self.f0_floor < self.f0_ceiling) {
            return bad("f0 floor must be positive and below the ceiling".into());
        }
        if self.n_r == 0 {
            return bad("n_r must be positive".into());
        }
        if self.decode_depth == 0 || self.decode_depth > self.n_q {
            return bad(format!("decode depth {} outside 1..={}", self.decode_depth, self.n_q));
        }
        if self.p_patch > self.n_q {
            return bad("patch size cannot exceed the codebook count".into());
        }
        if self.pitch_f_min >= self.pitch_f_max {
            return bad("pitch token range is empty".into());
        }
        if !(0.0..1.0).contains(&self.input_noise) {
            return bad(format!("input noise {} outside [0, 1)", self.input_noise));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        self.corruption().validate()?;
        self.prr().validate()?;
        self.lm_config().validate()?;
        Ok(())
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            sample_rate: self.sample_rate,
            n_fft: self.n_fft,
            hop: self.hop,
            n_mels: self.n_mels,
            f_min: 0.0,
            f_max: self.sample_rate as f64 / 2.0,
        }
    }

    pub fn codec_mel(&self) -> MelConfig {
        MelConfig { n_mels: self.codec_n_mels, ..self.mel() }
    }

    pub fn f0(&self) -> F0Config {
        F0Config {
            hop: self.hop,
            f_floor: self.f0_floor,
            f_ceiling: self.f0_ceiling,
            voicing_threshold: self.f0_voicing_threshold,
            ..F0Config::default()
        }
    }

    pub fn corruption(&self) -> CorruptionConfig {
        CorruptionConfig {
            fs_ratio_range: (1.0, self.fs_ratio_max),
            pr_shift_range: (1.0, self.pr_shift_max),
            pr_range_range: (1.0, self.pr_range_max),
            eq: EqSpec {
                gain_db: (self.eq_gain_db_min, self.eq_gain_db_max),
                freq_hz: (self.eq_freq_min, self.eq_freq_max),
                q: (self.eq_q_min, self.eq_q_max),
                n_peaking: self.eq_n_peaking,
            },
        }
    }

    pub fn prr(&self) -> PrrConfig {
        PrrConfig { l_r: self.prr_l_r, r_min: self.prr_r_min, r_max: self.prr_r_max }
    }

    pub fn pitch_vocab(&self) -> PitchVocab {
        PitchVocab { f_min: self.pitch_f_min, f_max: self.pitch_f_max }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab { k1: self.k1, k2: self.k2, f_min: self.pitch_f_min, f_max: self.pitch_f_max }
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            vocab: self.vocab(),
            p_patch: self.p_patch,
            embed_dim: self.embed_dim,
            global: StackConfig {
                layers: self.global_layers,
                width: self.global_width,
                heads: self.global_heads,
                ffn: self.global_ffn,
            },
            local: StackConfig { layers: self.local_layers, width: self.local_width, heads: self.local_heads, ffn: self.local_ffn },
            max_positions: self.max_positions,
            region_positions: self.region_positions,
            region_scale: self.region_scale,
            lr: self.lr,
            clip: self.clip,
            seed: self.seed,
        }
    }

    pub fn sampling(&self, seed: u64) -> SamplingConfig {
        SamplingConfig { temperature: self.temperature, top_k: self.top_k, max_patches: self.max_patches, min_patches: 0, seed }
    }

    pub fn translator_config(&self, vocab_size: usize) -> CausalLmConfig {
        CausalLmConfig {
            vocab_size,
            stack: StackConfig { layers: self.t2s_layers, width: self.t2s_width, heads: self.t2s_heads, ffn: self.t2s_ffn },
            max_len: self.t2s_max_len,
            lr: self.t2s_lr,
            clip: self.clip,
            seed: self.seed,
            symbols: Vec::new(),
        }
    }
}
