use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use sts_core::container::load_contour;
use sts_core::eval::{lsd_report, rca_report};
use sts_core::manifest::{check_unique, read_jsonl, resolve, write_jsonl, CorpusRecord, VariantRecord};
use sts_core::perturb::{pre_perturb_corpus, PerturbOptions};
use sts_core::signal::{load_wav, save_wav, FeatureExtractor};
use sts_core::tokenize::{kmeans_encode, kmeans_fit, rvq_fit, RvqCodec, SemanticCodebook};
use sts_lm::MultiScaleModel;
use sts_pipeline::dataset::{Frontend, TokenizedCorpus, Tokenizers};
use sts_pipeline::t2s::{train_text_to_semantic, PhonemeSequence, Translator};
use sts_pipeline::{infer, toy, train_lm, PipelineConfig, Renderer, StsModels};
use tracing::info;

#[derive(Parser)]
#[command(name = "sts", version, about = "Speech-to-singing conversion toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes corrupted, resampled variants of every record.
    PerturbCorpus {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_r: Option<usize>,
        #[arg(long)]
        write_wav: bool,
    },
    /// Fits the semantic k-means codebook on clean features.
    FitSemantic {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fits the residual acoustic codec on clean features.
    FitCodec {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenizes clean targets and variants into a training set.
    Tokenize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        variants: PathBuf,
        #[arg(long)]
        semantic: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the acoustic language model.
    TrainLm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Trains the phoneme-to-semantic translator on paired speech.
    TrainT2s {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        semantic: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Converts speech to singing along an F0 contour.
    InferSts {
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        f0: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Sings a phoneme string along an F0 contour.
    InferSvs {
        /// Space-separated phonemes.
        #[arg(long)]
        phonemes: String,
        #[arg(long)]
        f0: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        t2s: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        models: ModelPaths,
    },
    /// Compares two WAV files (LSD) or two F0 files (RCA); prints JSON.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        tolerance_cents: f64,
    },
    /// Writes the synthetic song corpus.
    MakeToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        songs: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
    },
}

#[derive(Args)]
struct ModelPaths {
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    semantic: PathBuf,
    #[arg(long)]
    codec: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_manifest(path: &Path) -> Result<Vec<CorpusRecord>> {
    let records: Vec<CorpusRecord> = read_jsonl(path).with_context(|| format!("manifest {}", path.display()))?;
    check_unique(&records)?;
    if records.is_empty() {
        bail!("manifest {} has no records", path.display());
    }
    Ok(records)
}

/// Stacked frames of every record's clean audio.
fn stacked_features(records: &[CorpusRecord], manifest: &Path, fe: &Frontend, extractor: &dyn FeatureExtractor) -> Result<Array2<f32>> {
    let feats = records
        .par_iter()
        .map(|r| Ok(extractor.extract(&fe.load_audio(&resolve(manifest, &r.audio_path))?).frames))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
    Ok(concatenate(Axis(0), &views)?)
}

fn renderer(cfg: &PipelineConfig) -> Renderer {
    Renderer::new(cfg.codec_mel(), cfg.griffin_lim_iters, cfg.griffin_lim_momentum, cfg.decode_depth)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.cmd {
        Cmd::PerturbCorpus { manifest, out, n_r, write_wav } => {
            if let Some(n) = n_r {
                cfg.n_r = n;
                cfg.validate()?;
            }
            let records = read_manifest(&manifest)?;
            std::fs::create_dir_all(&out)?;
            let out = std::fs::canonicalize(&out)?;
            let fe = Frontend::new(&cfg)?;
            let opts = PerturbOptions {
                n_r: cfg.n_r,
                base_seed: cfg.seed,
                corruption: cfg.corruption(),
                prr: cfg.prr(),
                apply_prr: cfg.prr_continuous,
                write_wav,
                sample_rate: cfg.sample_rate,
                f_floor: cfg.f0_floor,
                f_ceiling: cfg.f0_ceiling,
            };
            let report = pre_perturb_corpus(&records, &manifest, &out, &fe.semantic, &opts);
            for (id, err) in &report.failures {
                tracing::warn!(record = %id, error = %err, "skipped");
            }
            let path = out.join("variants.jsonl");
            write_jsonl(&path, &report.variants)?;
            info!(variants = report.variants.len(), failures = report.failures.len(), manifest = %path.display(), "perturb-corpus");
            if report.variants.is_empty() {
                bail!("no variants were produced");
            }
        }
        Cmd::FitSemantic { manifest, out } => {
            let records = read_manifest(&manifest)?;
            let fe = Frontend::new(&cfg)?;
            let x = stacked_features(&records, &manifest, &fe, &fe.semantic)?;
            let cb = kmeans_fit(x.view(), cfg.k1, cfg.kmeans_iters, cfg.seed)?;
            cb.save(&out)?;
            info!(frames = x.nrows(), k = cfg.k1, out = %out.display(), "fit-semantic");
        }
        Cmd::FitCodec { manifest, out } => {
            let records = read_manifest(&manifest)?;
            let fe = Frontend::new(&cfg)?;
            let x = stacked_features(&records, &manifest, &fe, &fe.acoustic)?;
            let mut codec = rvq_fit(x.view(), cfg.n_q, cfg.k2, cfg.rvq_iters, cfg.seed)?;
            codec.decode_depth = cfg.decode_depth;
            codec.save(&out)?;
            info!(frames = x.nrows(), n_q = cfg.n_q, k = cfg.k2, out = %out.display(), "fit-codec");
        }
        Cmd::Tokenize { manifest, variants, semantic, codec, out } => {
            let records = read_manifest(&manifest)?;
            let vs: Vec<VariantRecord> = read_jsonl(&variants)?;
            let fe = Frontend::new(&cfg)?;
            let tok = Tokenizers { semantic: SemanticCodebook::load(&semantic)?, codec: RvqCodec::load(&codec)? };
            let corpus = TokenizedCorpus::build(&records, &manifest, &vs, &variants, &fe, &tok)?;
            corpus.save(&out)?;
            info!(records = corpus.len(), variants = vs.len(), out = %out.display(), "tokenize");
        }
        Cmd::TrainLm { data, out, steps, init } => {
            let corpus = TokenizedCorpus::load(&data)?;
            let model = match init {
                Some(p) => MultiScaleModel::load(&p)?,
                None => MultiScaleModel::new(cfg.lm_config())?,
            };
            info!(parameters = model.num_parameters(), "train-lm");
            let steps = steps.unwrap_or(cfg.train_steps);
            let (model, losses) = train_lm(&corpus, model, &cfg, steps, cfg.seed, |_, _| true)?;
            model.save(&out)?;
            info!(steps = losses.len(), final_loss = losses.last().copied().unwrap_or(f64::NAN), out = %out.display(), "train-lm");
        }
        Cmd::TrainT2s { manifest, semantic, out, steps } => {
            let records = read_manifest(&manifest)?;
            let fe = Frontend::new(&cfg)?;
            let cb = SemanticCodebook::load(&semantic)?;
            if cb.k() != cfg.k1 {
                bail!("codebook has {} units but k1 is {}", cb.k(), cfg.k1);
            }
            let inventory: Vec<String> = toy::phoneme_inventory().into_iter().map(String::from).collect();
            let pairs = records
                .iter()
                .filter_map(|r| Some((r.phonemes.as_ref()?, r.speech_path.as_ref()?)))
                .map(|(ph, sp)| {
                    let speech = fe.load_audio(&resolve(&manifest, sp))?;
                    let units = kmeans_encode(fe.semantic.extract(&speech).frames.view(), &cb)?;
                    Ok((PhonemeSequence::parse(ph, &inventory)?, units))
                })
                .collect::<Result<Vec<_>>>()?;
            let steps = steps.unwrap_or(cfg.t2s_steps);
            let t = train_text_to_semantic(&pairs, &inventory, &cfg, steps, |_, _| true)?;
            t.save(&out)?;
            info!(pairs = pairs.len(), steps, out = %out.display(), "train-t2s");
        }
        Cmd::InferSts { speech, f0, out, models } => {
            let m = StsModels::load(&models.lm, &models.semantic, &models.codec)?;
            let fe = Frontend::new(&cfg)?;
            let speech = fe.load_audio(&speech)?;
            let pitch = load_contour(&f0, cfg.hop)?;
            let s = infer::sts_infer(&speech, &pitch, &m, &fe, &renderer(&cfg), cfg.seed)?;
            save_wav(&out, &s.wave)?;
            info!(frames = s.codes.frames(), truncated = s.truncated, out = %out.display(), "infer-sts");
        }
        Cmd::InferSvs { phonemes, f0, reference, t2s, out, models } => {
            let m = StsModels::load(&models.lm, &models.semantic, &models.codec)?;
            let t = Translator::load(&t2s)?;
            let fe = Frontend::new(&cfg)?;
            let ph = PhonemeSequence::parse(&phonemes, t.inventory())?;
            let reference = fe.load_audio(&reference)?;
            let pitch = load_contour(&f0, cfg.hop)?;
            let s = infer::svs_infer(&ph, &pitch, &reference, &t, &m, &fe, &renderer(&cfg), cfg.seed)?;
            save_wav(&out, &s.wave)?;
            info!(frames = s.codes.frames(), truncated = s.truncated, out = %out.display(), "infer-svs");
        }
        Cmd::Eval { reference, generated, tolerance_cents } => {
            let is_wav = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
            let report = match (is_wav(&reference), is_wav(&generated)) {
                (true, true) => lsd_report(&load_wav(&reference, cfg.sample_rate)?, &load_wav(&generated, cfg.sample_rate)?)?,
                (false, false) => rca_report(&load_contour(&reference, cfg.hop)?, &load_contour(&generated, cfg.hop)?, tolerance_cents)?,
                _ => bail!("compare two WAV files or two F0 files"),
            };
            println!("{}", serde_json::to_string(&report)?);
        }
        Cmd::MakeToyCorpus { out, songs, segments } => {
            let songs = songs.unwrap_or(cfg.toy_songs);
            let segments = segments.unwrap_or(cfg.toy_segments);
            let records = toy::make_toy_corpus(&out, songs, segments, cfg.seed, cfg.sample_rate, cfg.hop)?;
            info!(records = records.len(), manifest = %out.join("manifest.jsonl").display(), "make-toy-corpus");
        }
    }
    Ok(())
}
