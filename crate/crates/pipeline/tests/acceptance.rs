//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Positional arguments pick criteria by
//! number, e.g. `cargo test -p sts-pipeline --test acceptance -- 1 2 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use sts_core::container::load_contour;
use sts_core::eval::{lsd, rca};
use sts_core::manifest::{CorpusRecord, Split, VariantRecord};
use sts_core::perturb::{
    corrupt_waveform, parametric_eq, plan_segments, plan_segments_with_count, pre_perturb_corpus, prr_continuous,
    prr_discrete, sample_corruption, sample_eq, CorruptionConfig, PerturbOptions, PrrConfig,
};
use sts_core::signal::{FeatureExtractor, PitchContour, Waveform};
use sts_core::tokenize::{
    kmeans_encode, kmeans_fit, kmeans_fit_traced, pitch_to_tokens, rvq_decode, rvq_encode, rvq_fit, PitchVocab,
};
use sts_lm::{
    build_sequence, generate, parse_sequence, FlatSequence, LmConfig, MultiScaleModel, SamplingConfig, StackConfig,
    Trainer, Vocab,
};
use sts_pipeline::dataset::{reference_tokens, CleanStreams, Frontend, Tokenizers};
use sts_pipeline::toy::{make_toy_corpus, render_score, symbol, Score};
use sts_pipeline::{
    sample_reference, sts_infer, svs_infer, train_lm, train_text_to_semantic, PhonemeSequence, PipelineConfig, Renderer,
    StsModels, TokenizedCorpus,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// 1

fn segment_plans() -> Outcome {
    let mut r = rng(1);
    let cfg = PrrConfig::default();
    for _ in 0..1000 {
        let t = r.gen_range(1..4000);
        let seed: u64 = r.gen();
        let plan = plan_segments(t, &cfg, &mut rng(seed)).map_err(|e| e.to_string())?;
        ensure!(plan.l_src.iter().sum::<usize>() == t, "T={t} seed={seed}: sources cover {}", plan.source_len());
        if t < cfg.l_r {
            ensure!(plan.n() == 1, "T={t} < l_r gave {} segments", plan.n());
        }
    }
    let fixed = PrrConfig { r_min: 1.0, r_max: 1.0, ..cfg };
    for _ in 0..1000 {
        let t = r.gen_range(1..4000);
        let plan = plan_segments(t, &fixed, &mut rng(r.gen())).map_err(|e| e.to_string())?;
        ensure!(plan.l_tgt.iter().all(|&l| l == fixed.l_r), "T={t}: targets {:?}", plan.l_tgt);
    }
    Ok("2000 plans".into())
}

// 2

fn resampling() -> Outcome {
    let mut r = rng(2);
    let fixed = PrrConfig { l_r: 20, r_min: 1.0, r_max: 1.0 };
    for _ in 0..1000 {
        let k = r.gen_range(1..40);
        let plan = plan_segments_with_count(20 * k, k, &fixed, &mut r).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..20 * k).map(|_| r.gen()).collect();
        ensure!(prr_continuous(&x, &plan).map_err(|e| e.to_string())? == x, "continuous identity broke at k={k}");
        let tokens: Vec<u32> = (0..20 * k).map(|_| r.gen_range(0..64)).collect();
        ensure!(prr_discrete(&tokens, &plan).map_err(|e| e.to_string())? == tokens, "discrete identity broke at k={k}");
    }
    let cfg = PrrConfig::default();
    let mut ratio = 0.0;
    for _ in 0..1000 {
        let t = r.gen_range(200..3000);
        ratio += plan_segments(t, &cfg, &mut r).map_err(|e| e.to_string())?.target_len() as f64 / t as f64;
    }
    let mean = ratio / 1000.0;
    ensure!((0.95..=1.05).contains(&mean), "mean length ratio {mean}");
    for _ in 0..1000 {
        let alphabet = r.gen_range(1..50);
        let tokens: Vec<u32> = (0..r.gen_range(1..400)).map(|_| r.gen_range(0..alphabet)).collect();
        let plan = plan_segments(tokens.len(), &cfg, &mut r).map_err(|e| e.to_string())?;
        let out = prr_discrete(&tokens, &plan).map_err(|e| e.to_string())?;
        ensure!(out.len() == plan.target_len(), "output length {} vs plan {}", out.len(), plan.target_len());
        ensure!(out.iter().all(|t| tokens.contains(t)), "token outside the input alphabet");
    }
    Ok(format!("mean length ratio {mean:.4}"))
}

// 3

fn voice(f0: f64, secs: f64) -> Waveform {
    let n = (secs * 16_000.0) as usize;
    let s = (0..n)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            (1..8).map(|k| (2.0 * std::f64::consts::PI * f0 * k as f64 * t).sin() / k as f64).sum::<f64>() as f32 * 0.15
        })
        .collect();
    Waveform::new(s, 16_000).unwrap()
}

fn corruption_ranges() -> Outcome {
    let mut r = rng(3);
    let cfg = CorruptionConfig::default();
    let up = |x: f64| x.max(1.0 / x);
    for i in 0..1000 {
        let p = sample_corruption(&cfg, &mut r).map_err(|e| e.to_string())?;
        ensure!(up(p.fs_ratio) > 1.0 && up(p.fs_ratio) < 1.4, "draw {i}: formant ratio {}", p.fs_ratio);
        ensure!(up(p.pr_shift) > 1.0 && up(p.pr_shift) < 2.0, "draw {i}: shift ratio {}", p.pr_shift);
        ensure!(up(p.pr_range) > 1.0 && up(p.pr_range) < 1.5, "draw {i}: range ratio {}", p.pr_range);
        ensure!(p.eq.len() == 10, "draw {i}: {} filters", p.eq.len());
    }
    let x = voice(200.0, 1.0);
    let (y, _) = corrupt_waveform(&x, &CorruptionConfig::identity(), &mut r).map_err(|e| e.to_string())?;
    ensure!(y.len() == x.len(), "identity changed the length");
    let worst = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    ensure!(worst <= 1e-3, "identity chain deviates by {worst}");
    Ok(format!("identity deviation {worst:.2e}"))
}

// 4

/// H1 estimate of |H| from Welch-averaged cross spectra.
fn welch_response(x: &[f32], y: &[f32], n_fft: usize) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let window: Vec<f64> =
        (0..n_fft).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos()).collect();
    let bins = n_fft / 2 + 1;
    let mut sxx = vec![0.0; bins];
    let mut sxy = vec![Complex64::new(0.0, 0.0); bins];
    // the first block is skipped so the filter state has settled
    let mut start = n_fft;
    while start + n_fft <= x.len() {
        let mut a: Vec<Complex64> = (0..n_fft).map(|i| Complex64::new(x[start + i] as f64 * window[i], 0.0)).collect();
        let mut b: Vec<Complex64> = (0..n_fft).map(|i| Complex64::new(y[start + i] as f64 * window[i], 0.0)).collect();
        fft.process(&mut a);
        fft.process(&mut b);
        for k in 0..bins {
            sxx[k] += a[k].norm_sqr();
            sxy[k] += a[k].conj() * b[k];
        }
        start += n_fft / 2;
    }
    (0..bins).map(|k| (sxy[k] / sxx[k]).norm()).collect()
}

fn eq_oracle() -> Outcome {
    let mut r = rng(4);
    let filters = sample_eq(&mut r, (-12.0, 12.0), (60.0, 7000.0), (0.5, 2.0), 8);
    ensure!(filters.len() == 10, "{} filters", filters.len());
    let noise: Vec<f32> = (0..16_000 * 20).map(|_| r.gen_range(-0.5..0.5)).collect();
    let x = Waveform::new(noise, 16_000).unwrap();
    let y = parametric_eq(&x, &filters).map_err(|e| e.to_string())?;
    let n_fft = 4096;
    let est = welch_response(x.samples(), y.samples(), n_fft);
    let mut worst: f64 = 0.0;
    for (k, h) in est.iter().enumerate() {
        let f = k as f64 * 16_000.0 / n_fft as f64;
        if (100.0..=6000.0).contains(&f) {
            let analytic: f64 = filters.iter().map(|b| b.magnitude(f, 16_000)).product();
            worst = worst.max((20.0 * (h / analytic).log10()).abs());
        }
    }
    ensure!(worst < 1.0, "max deviation {worst} dB");
    Ok(format!("max deviation {worst:.3} dB"))
}

// 5

fn tokenizers() -> Outcome {
    let mut r = rng(5);
    let x = Array2::from_shape_fn((600, 6), |_| normal(&mut r) as f32);
    let (_, hist) = kmeans_fit_traced(x.view(), 16, 100, 1).map_err(|e| e.to_string())?;
    ensure!(hist.windows(2).all(|w| w[1] <= w[0]), "inertia rose: {hist:?}");

    let sigma = 0.5;
    let n = 500;
    let blobs = Array2::from_shape_fn((2 * n, 4), |(i, _)| ((if i < n { 0.0 } else { 10.0 * sigma }) + sigma * normal(&mut r)) as f32);
    let cb = kmeans_fit(blobs.view(), 2, 50, 2).map_err(|e| e.to_string())?;
    for half in [blobs.slice(s![..n, ..]), blobs.slice(s![n.., ..])] {
        let mean = half.mapv(|v| v as f64).mean_axis(Axis(0)).unwrap();
        let best = cb
            .centroids
            .outer_iter()
            .map(|c| c.iter().zip(&mean).map(|(&a, &b)| (a as f64 - b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        ensure!(best < 0.1 * sigma, "blob mean missed by {best}");
    }

    let centres: Vec<Vec<f32>> = (0..12).map(|_| (0..8).map(|_| r.gen_range(-3.0..3.0)).collect()).collect();
    let frames = |n: usize, r: &mut ChaCha8Rng| {
        Array2::from_shape_fn((n, 8), |(i, j)| centres[i % 12][j] + r.gen_range(-0.5..0.5))
    };
    let train = frames(2000, &mut r);
    let held_out = frames(300, &mut r);
    let codec = rvq_fit(train.view(), 8, 16, 25, 3).map_err(|e| e.to_string())?;
    let codes = rvq_encode(held_out.view(), &codec).map_err(|e| e.to_string())?;
    let mut errs = Vec::new();
    for d in 1..=8 {
        let dec = rvq_decode(&codes, &codec, d).map_err(|e| e.to_string())?;
        errs.push((&held_out - &dec).mapv(|v| (v as f64).powi(2)).mean().unwrap());
    }
    ensure!(errs.windows(2).all(|w| w[1] <= w[0]), "held-out MSE not monotone: {errs:?}");

    let v = PitchVocab::default();
    let c = PitchContour::new(vec![261.63, 0.0, 1500.0, 20.0, 100.5, 99.49, 50.0, 1100.0, -3.0], 320);
    let got = pitch_to_tokens(&c, v).tokens;
    let want = vec![262, v.unvoiced(), 1100, 50, 101, 99, 50, 1100, v.unvoiced()];
    ensure!(got == want, "pitch tokens {got:?}, expected {want:?}");
    Ok(format!("MSE depth 1 {:.4} to depth 8 {:.4}", errs[0], errs[7]))
}

// 6

fn sequence_layout() -> Outcome {
    let v = Vocab { k1: 64, k2: 256, f_min: 50, f_max: 1100 };
    let a = Array2::from_shape_fn((2, 8), |(i, j)| ((i * 8 + j) % 256) as u32);
    let worked = build_sequence(&v, 3, &[1, 2], &[220, 1101], &[5], Some(a.view())).map_err(|e| e.to_string())?;
    ensure!(worked.num_patches() == 15, "worked example has {} patches", worked.num_patches());
    let mut r = rng(6);
    for _ in 0..2000 {
        let s: Vec<u32> = (0..r.gen_range(0..60)).map(|_| r.gen_range(0..64)).collect();
        let p: Vec<u32> = (0..r.gen_range(0..60)).map(|_| if r.gen_bool(0.2) { 1101 } else { r.gen_range(50..=1100) }).collect();
        let rf: Vec<u32> = (0..r.gen_range(0..30)).map(|_| r.gen_range(0..256)).collect();
        let frames = r.gen_range(0..60);
        let codes = Array2::from_shape_fn((frames, 8), |_| r.gen_range(0..256));
        let with_codes = r.gen_bool(0.7);
        let seq = build_sequence(&v, 3, &s, &p, &rf, with_codes.then(|| codes.view())).map_err(|e| e.to_string())?;
        let expected = s.len() + p.len() + rf.len() + 7 + if with_codes { frames + 1 } else { 0 };
        ensure!(seq.num_patches() == expected, "{} patches, formula gives {expected}", seq.num_patches());
        ensure!(seq.ids.len() % 3 == 0, "flat length {}", seq.ids.len());
        let parsed = parse_sequence(&v, &seq).map_err(|e| e.to_string())?;
        ensure!(parsed.semantic == s && parsed.pitch == p && parsed.reference == rf, "stream round trip failed");
        if with_codes {
            ensure!(parsed.acoustic == codes.slice(s![.., ..3]).to_owned(), "acoustic round trip failed");
        }
    }
    Ok("2000 layouts".into())
}

// 7

fn lm_vocab() -> Vocab {
    Vocab { k1: 12, k2: 10, f_min: 100, f_max: 110 }
}

fn small_lm(seed: u64) -> LmConfig {
    LmConfig {
        embed_dim: 8,
        global: StackConfig { layers: 2, width: 16, heads: 2, ffn: 32 },
        local: StackConfig { layers: 2, width: 16, heads: 2, ffn: 32 },
        max_positions: 64,
        seed,
        ..LmConfig::desk(lm_vocab())
    }
}

fn random_sequence(r: &mut ChaCha8Rng, v: &Vocab, frames: usize, lens: (usize, usize, usize)) -> FlatSequence {
    let s: Vec<u32> = (0..lens.0).map(|_| r.gen_range(0..v.k1 as u32)).collect();
    let p: Vec<u32> = (0..lens.1).map(|_| r.gen_range(v.f_min..=v.f_max + 1)).collect();
    let rf: Vec<u32> = (0..lens.2).map(|_| r.gen_range(0..v.k2 as u32)).collect();
    let a = Array2::from_shape_fn((frames, 3), |_| r.gen_range(0..v.k2 as u32));
    build_sequence(v, 3, &s, &p, &rf, Some(a.view())).unwrap()
}

fn other_code(v: &Vocab, id: u32) -> u32 {
    let a0 = v.acoustic(0).unwrap();
    if id == a0 { v.acoustic(1).unwrap() } else { a0 }
}

fn model_correctness() -> Outcome {
    let v = lm_vocab();
    let mut r = rng(7);
    let model = MultiScaleModel::new(small_lm(1)).map_err(|e| e.to_string())?;
    let hc = v.head_size();
    for _ in 0..10 {
        let lens = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..4));
        let seq = random_sequence(&mut r, &v, 5, lens);
        let base = model.logits(&seq).map_err(|e| e.to_string())?;
        // global: changing frame t moves nothing before row 3(t+1)
        let t = r.gen_range(seq.regions.acoustic.start..seq.regions.acoustic.end);
        let mut other = seq.clone();
        for i in t * 3..t * 3 + 3 {
            other.ids[i] = other_code(&v, other.ids[i]);
        }
        let l = model.logits(&other).map_err(|e| e.to_string())?;
        ensure!(base.data[..t * 3 * hc] == l.data[..t * 3 * hc], "global causality broken at patch {t}");
        // within patch: code q only reaches later rows of its own patch
        let q = r.gen_range(0..3);
        let mut other = seq.clone();
        other.ids[t * 3 + q] = other_code(&v, other.ids[t * 3 + q]);
        let l = model.logits(&other).map_err(|e| e.to_string())?;
        ensure!(base.data[..(t * 3 + q + 1) * hc] == l.data[..(t * 3 + q + 1) * hc], "patch causality broken at {t},{q}");
    }

    for frames in [1, 4, 8] {
        let seq = random_sequence(&mut r, &v, frames, (3, 3, 2));
        let pass = model.forward(&seq, false).map_err(|e| e.to_string())?;
        let one_pass = -pass.tape.value(pass.loss).data[0] * pass.count as f64;
        let incremental = model.score_incremental(&seq).map_err(|e| e.to_string())?;
        ensure!((one_pass - incremental).abs() < 1e-5, "log-likelihood {one_pass} vs incremental {incremental}");
    }

    let mut fd_model = MultiScaleModel::new(LmConfig { region_scale: 1.0, ..small_lm(2) }).map_err(|e| e.to_string())?;
    for id in fd_model.store.ids().collect::<Vec<_>>() {
        fd_model.store.value_mut(id).data.iter_mut().for_each(|x| *x += 0.1 * (r.gen::<f64>() - 0.5));
    }
    let seq = random_sequence(&mut r, &v, 3, (2, 3, 2));
    let mut grads = fd_model.store.zero_grads();
    fd_model.accumulate_grad(&seq, &mut grads, 1.0).map_err(|e| e.to_string())?;
    let ids: Vec<_> = fd_model.store.ids().collect();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let id = ids[r.gen_range(0..ids.len())];
        let j = r.gen_range(0..fd_model.store.value(id).len());
        let orig = fd_model.store.value(id).data[j];
        fd_model.store.value_mut(id).data[j] = orig + h;
        let up = fd_model.loss(&seq).map_err(|e| e.to_string())?;
        fd_model.store.value_mut(id).data[j] = orig - h;
        let down = fd_model.loss(&seq).map_err(|e| e.to_string())?;
        fd_model.store.value_mut(id).data[j] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads[id.index()].data[j];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
    }
    ensure!(worst < 1e-3, "gradient check max relative error {worst}");

    let seq = random_sequence(&mut r, &v, 4, (3, 3, 2));
    let mut pass = model.forward(&seq, true).map_err(|e| e.to_string())?;
    let mut g = model.store.zero_grads();
    let (loss, logits) = (pass.loss, pass.logits);
    pass.tape.backward(loss, &mut g);
    let lg = pass.tape.grad(logits).ok_or("no logit gradient")?;
    let scored = seq.loss_patches();
    for t in (0..seq.num_patches()).filter(|t| !scored.contains(t)) {
        let rows = &lg.data[t * 3 * lg.cols..(t + 1) * 3 * lg.cols];
        ensure!(rows.iter().all(|&x| x == 0.0), "unscored patch {t} received gradient");
    }
    let base = model.forward_with_targets(&seq, &seq.ids, false).map_err(|e| e.to_string())?;
    let base = base.tape.value(base.loss).data[0];
    let mut targets = seq.ids.clone();
    for t in seq.regions.semantic.clone().chain(seq.regions.pitch.clone()).chain(seq.regions.reference.clone()) {
        for id in &mut targets[t * 3..t * 3 + 3] {
            *id = v.acoustic(r.gen_range(0..v.k2 as u32)).unwrap();
        }
    }
    let same = model.forward_with_targets(&seq, &targets, false).map_err(|e| e.to_string())?;
    ensure!(same.tape.value(same.loss).data[0].to_bits() == base.to_bits(), "conditioning targets leak into the loss");

    let mut trainer = Trainer::new(MultiScaleModel::new(small_lm(3)).map_err(|e| e.to_string())?);
    trainer.train_step(&[seq.clone()]).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("lm.ckpt");
    trainer.model.save(&path).map_err(|e| e.to_string())?;
    let loaded = MultiScaleModel::load(&path).map_err(|e| e.to_string())?;
    let (a, b) = (trainer.model.logits(&seq).map_err(|e| e.to_string())?, loaded.logits(&seq).map_err(|e| e.to_string())?);
    ensure!(loaded.cfg == trainer.model.cfg, "config changed on reload");
    ensure!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()), "reloaded logits differ");
    Ok(format!("gradient max relative error {worst:.2e}"))
}

// 8

fn overfit_and_decode() -> Outcome {
    let cfg = PipelineConfig::default();
    let v = cfg.vocab();
    let mut r = rng(8);
    let seq = random_sequence(&mut r, &v, 50, (40, 50, 24));
    let mut trainer = Trainer::new(MultiScaleModel::new(cfg.lm_config()).map_err(|e| e.to_string())?);
    let mut loss = f64::INFINITY;
    let mut steps = 0;
    while steps < 2000 && loss >= 0.1 {
        loss = trainer.train_step(&[seq.clone()]).map_err(|e| e.to_string())?;
        steps += 1;
    }
    ensure!(loss < 0.1, "cross-entropy {loss} after {steps} steps");
    let g = generate(&trainer.model, &seq.prompt(), &SamplingConfig { max_patches: 200, ..SamplingConfig::default() })
        .map_err(|e| e.to_string())?;
    let want = parse_sequence(&v, &seq).map_err(|e| e.to_string())?.acoustic;
    ensure!(!g.truncated && g.codes.codes == want, "greedy decode differs from the training codes");
    Ok(format!("CE {loss:.4} after {steps} steps, {} frames reproduced", want.nrows()))
}

// 9

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn end_to_end() -> Outcome {
    let e = |x: &dyn std::fmt::Display| x.to_string();
    let cfg = PipelineConfig::load(&workspace_root().join("configs/toy.toml")).map_err(|x| e(&x))?;
    let dir = tempfile::tempdir().map_err(|x| e(&x))?;
    let corpus_dir = dir.path().join("corpus");
    let records = make_toy_corpus(&corpus_dir, 20, 12, cfg.seed, cfg.sample_rate, cfg.hop).map_err(|x| e(&x))?;
    ensure!(records.len() == 240, "{} records", records.len());
    let manifest = corpus_dir.join("manifest.jsonl");
    let fe = Frontend::new(&cfg).map_err(|x| e(&x))?;
    let audio: Vec<Waveform> =
        records.iter().map(|r| fe.load_audio(&corpus_dir.join(&r.audio_path))).collect::<Result<_, _>>().map_err(|x| e(&x))?;
    let tok = fit_tokenizers(&audio, &fe, &cfg)?;

    let vdir = dir.path().join("variants");
    std::fs::create_dir_all(&vdir).map_err(|x| e(&x))?;
    let opts = PerturbOptions {
        n_r: cfg.n_r,
        base_seed: cfg.seed,
        corruption: cfg.corruption(),
        prr: cfg.prr(),
        apply_prr: cfg.prr_continuous,
        ..PerturbOptions::default()
    };
    let report = pre_perturb_corpus(&records, &manifest, &vdir, &fe.semantic, &opts);
    ensure!(report.failures.is_empty(), "perturbation failures {:?}", report.failures);
    ensure!(report.variants.len() == 240 * 20, "{} variants", report.variants.len());
    let vpath = vdir.join("variants.jsonl");
    let corpus = TokenizedCorpus::build(&records, &manifest, &report.variants, &vpath, &fe, &tok).map_err(|x| e(&x))?;

    let untrained = MultiScaleModel::new(cfg.lm_config()).map_err(|x| e(&x))?;
    let (trained, losses) = train_lm(&corpus, untrained.clone(), &cfg, cfg.train_steps, cfg.seed, |_, _| true).map_err(|x| e(&x))?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let final_loss = tail.iter().sum::<f64>() / tail.len() as f64;

    let renderer = Renderer::new(cfg.codec_mel(), cfg.griffin_lim_iters, cfg.griffin_lim_momentum, cfg.decode_depth);
    let trained = StsModels { lm: trained, tok: tok.clone() };
    let untrained = StsModels { lm: untrained, tok };
    let (mut rca_sum, mut lsd_t, mut lsd_u) = (0.0, 0.0, 0.0);
    let items: Vec<usize> = (0..10).map(|i| i * 24 + i % 12).collect();
    for &i in &items {
        let rec = &records[i];
        let speech = fe.load_audio(&corpus_dir.join(rec.speech_path.as_ref().unwrap())).map_err(|x| e(&x))?;
        let f0 = load_contour(corpus_dir.join(rec.f0_path.as_ref().unwrap()), cfg.hop).map_err(|x| e(&x))?;
        let out = sts_infer(&speech, &f0, &trained, &fe, &renderer, 0).map_err(|x| e(&x))?;
        let base = sts_infer(&speech, &f0, &untrained, &fe, &renderer, 0).map_err(|x| e(&x))?;
        rca_sum += rca(&f0, &fe.f0.extract(&out.wave).map_err(|x| e(&x))?, 50.0).map_err(|x| e(&x))?;
        lsd_t += lsd(&audio[i], &out.wave).map_err(|x| e(&x))?;
        lsd_u += lsd(&audio[i], &base.wave).map_err(|x| e(&x))?;
    }
    let n = items.len() as f64;
    let (mean_rca, lsd_t, lsd_u) = (rca_sum / n, lsd_t / n, lsd_u / n);
    let summary = format!(
        "RCA {mean_rca:.3}, LSD {lsd_t:.3} vs untrained {lsd_u:.3} ({:.1}% lower), final loss {final_loss:.3}",
        100.0 * (1.0 - lsd_t / lsd_u)
    );
    ensure!(mean_rca >= 0.9 && lsd_t <= 0.8 * lsd_u, "{summary}");
    Ok(summary)
}

fn fit_tokenizers(audio: &[Waveform], fe: &Frontend, cfg: &PipelineConfig) -> Result<Tokenizers, String> {
    let sem: Vec<Array2<f32>> = audio.iter().map(|w| fe.semantic.extract(w).frames).collect();
    let ac: Vec<Array2<f32>> = audio.iter().map(|w| fe.acoustic.extract(w).frames).collect();
    let sem = concatenate(Axis(0), &sem.iter().map(|a| a.view()).collect::<Vec<_>>()).map_err(|x| x.to_string())?;
    let ac = concatenate(Axis(0), &ac.iter().map(|a| a.view()).collect::<Vec<_>>()).map_err(|x| x.to_string())?;
    Ok(Tokenizers {
        semantic: kmeans_fit(sem.view(), cfg.k1, cfg.kmeans_iters, cfg.seed).map_err(|x| x.to_string())?,
        codec: rvq_fit(ac.view(), cfg.n_q, cfg.k2, cfg.rvq_iters, cfg.seed).map_err(|x| x.to_string())?,
    })
}

// 10

fn chroma_oracle(r: f32, g: f32, tol: f64) -> bool {
    if g <= 0.0 {
        return false;
    }
    let cents = (1200.0 * (g as f64 / r as f64).log2()).rem_euclid(1200.0);
    cents.min(1200.0 - cents) <= tol
}

fn metrics() -> Outcome {
    let c = |f: Vec<f32>| PitchContour::new(f, 320);
    let reference = c(vec![220.0, 0.0, 311.1, 440.0, 523.3, 0.0, 196.0]);
    let shifted = |cents: f32| c(reference.f0.iter().map(|f| f * 2f32.powf(cents / 1200.0)).collect());
    let e = |x: sts_core::eval::EvalError| x.to_string();
    ensure!(rca(&reference, &reference, 50.0).map_err(e)? == 1.0, "identity RCA");
    ensure!(rca(&reference, &shifted(1200.0), 50.0).map_err(e)? == 1.0, "octave RCA");
    ensure!(rca(&reference, &shifted(100.0), 50.0).map_err(e)? == 0.0, "100-cent RCA");

    let mut r = rng(10);
    for _ in 0..1000 {
        let n = r.gen_range(1..200);
        let draw = |r: &mut ChaCha8Rng| if r.gen_bool(0.2) { 0.0 } else { r.gen_range(50.0f32..1100.0) };
        let a: Vec<f32> = (0..n).map(|_| draw(&mut r)).collect();
        let b: Vec<f32> = (0..n).map(|_| draw(&mut r)).collect();
        let tol = r.gen_range(0.0..600.0);
        let voiced = a.iter().filter(|&&f| f > 0.0).count();
        let got = rca(&c(a.clone()), &c(b.clone()), tol);
        if voiced == 0 {
            ensure!(got.is_err(), "all-unvoiced reference accepted");
            continue;
        }
        let hits = a.iter().zip(&b).filter(|(&x, &y)| x > 0.0 && chroma_oracle(x, y, tol)).count();
        let want = hits as f64 / voiced as f64;
        let got = got.map_err(e)?;
        ensure!((got - want).abs() < 1e-12, "RCA {got} vs oracle {want}");
    }

    let noise = Waveform::new((0..32_000).map(|_| r.gen_range(-0.01f32..0.01)).collect(), 16_000).unwrap();
    let louder = Waveform::new(noise.samples().iter().map(|v| v * 10.0).collect(), 16_000).unwrap();
    ensure!(lsd(&noise, &noise).map_err(e)? == 0.0, "identity LSD");
    let scaled = lsd(&noise, &louder).map_err(e)?;
    ensure!((scaled - 1.0).abs() < 1e-3, "tenfold scaling gave LSD {scaled}");
    Ok(format!("scaling LSD {scaled:.6}"))
}

// 11

fn word(classes: &[usize], notes: &[f64], frames: &[usize]) -> (Score, Score) {
    let sung = Score { classes: classes.to_vec(), notes_hz: notes.to_vec(), frames: frames.to_vec(), vibrato_cents: 15.0 };
    let spoken = Score { classes: classes.to_vec(), notes_hz: vec![150.0; classes.len()], frames: vec![2; classes.len()], vibrato_cents: 0.0 };
    (sung, spoken)
}

fn svs_extension() -> Outcome {
    let e = |x: &dyn std::fmt::Display| x.to_string();
    let cfg = PipelineConfig {
        k1: 16,
        k2: 32,
        n_q: 4,
        kmeans_iters: 30,
        rvq_iters: 20,
        reference_max_frames: 12,
        embed_dim: 32,
        global_layers: 2,
        global_width: 64,
        global_heads: 4,
        global_ffn: 128,
        local_layers: 1,
        local_width: 64,
        local_heads: 4,
        local_ffn: 128,
        max_positions: 256,
        region_scale: 1.0,
        lr: 3e-3,
        t2s_layers: 2,
        t2s_width: 64,
        t2s_ffn: 128,
        t2s_max_len: 64,
        t2s_lr: 3e-3,
        griffin_lim_iters: 8,
        ..PipelineConfig::default()
    };
    let fe = Frontend::new(&cfg).map_err(|x| e(&x))?;
    let mut r = rng(11);
    let inventory: Vec<String> = sts_pipeline::toy::phoneme_inventory().into_iter().map(String::from).collect();
    let mut words = Vec::new();
    while words.len() < 10 {
        let n = r.gen_range(2..=3);
        let classes: Vec<usize> = (0..n).map(|_| r.gen_range(0..16)).collect();
        if words.iter().any(|(c, _): &(Vec<usize>, _)| *c == classes) {
            continue;
        }
        let notes: Vec<f64> = (0..n).map(|_| 220.0 * 2f64.powf([0, 2, 4, 7, 9, 12][r.gen_range(0..6)] as f64 / 12.0)).collect();
        let frames: Vec<usize> = (0..n).map(|_| r.gen_range(3..=5)).collect();
        words.push((classes.clone(), word(&classes, &notes, &frames)));
    }
    let render = |s: &Score| render_score(s, cfg.sample_rate, cfg.hop).map_err(|x| e(&x));
    let renditions = words.iter().map(|(_, (sung, spoken))| Ok((render(sung)?, render(spoken)?))).collect::<Result<Vec<_>, String>>()?;
    let all: Vec<Waveform> = renditions.iter().flat_map(|(a, b)| [a.wave.clone(), b.wave.clone()]).collect();
    let tok = fit_tokenizers(&all, &fe, &cfg)?;

    let reference_audio = renditions[0].0.wave.clone();
    let reference = {
        let mut t = reference_tokens(&reference_audio, &fe, &tok.codec).map_err(|x| e(&x))?;
        t.truncate(cfg.reference_max_frames);
        t
    };
    let mut pairs = Vec::new();
    let mut sequences = Vec::new();
    for ((classes, _), (sung, spoken)) in words.iter().zip(&renditions) {
        let text = classes.iter().map(|&c| symbol(c)).collect::<Vec<_>>().join(" ");
        let phonemes = PhonemeSequence::parse(&text, &inventory).map_err(|x| e(&x))?;
        let semantic = kmeans_encode(fe.semantic.extract(&spoken.wave).frames.view(), &tok.semantic).map_err(|x| e(&x))?;
        let pitch = pitch_to_tokens(&sung.f0, cfg.pitch_vocab()).tokens;
        let codes = rvq_encode(fe.acoustic.extract(&sung.wave).frames.view(), &tok.codec).map_err(|x| e(&x))?;
        let frames = pitch.len().min(codes.frames());
        let acoustic = codes.codes.slice(s![..frames, ..]).to_owned();
        let seq = build_sequence(&cfg.vocab(), 3, &semantic, &pitch[..frames], &reference, Some(acoustic.view())).map_err(|x| e(&x))?;
        sequences.push((seq, PitchContour::new(sung.f0.f0[..frames].to_vec(), cfg.hop), acoustic.slice(s![.., ..3]).to_owned()));
        pairs.push((phonemes, semantic));
    }

    let translator = train_text_to_semantic(&pairs, &inventory, &cfg, 3000, |step, loss| step % 50 != 49 || loss >= 0.005)
        .map_err(|x| e(&x))?;
    for (ph, sem) in &pairs {
        ensure!(&translator.translate(ph).map_err(|x| e(&x))? == sem, "translator missed {:?}", ph.0);
    }

    let mut trainer = Trainer::new(MultiScaleModel::new(cfg.lm_config()).map_err(|x| e(&x))?);
    let batch: Vec<FlatSequence> = sequences.iter().map(|(s, _, _)| s.clone()).collect();
    let mut loss = f64::INFINITY;
    let mut steps = 0;
    while steps < 3000 && loss >= 0.005 {
        loss = trainer.train_step(&batch).map_err(|x| e(&x))?;
        steps += 1;
    }
    let models = StsModels { lm: trainer.model, tok };
    let renderer = Renderer::new(cfg.codec_mel(), cfg.griffin_lim_iters, cfg.griffin_lim_momentum, cfg.decode_depth);
    for ((ph, _), (_, pitch, codes)) in pairs.iter().zip(&sequences) {
        let out = svs_infer(ph, pitch, &reference_audio, &translator, &models, &fe, &renderer, 0).map_err(|x| e(&x))?;
        ensure!(out.codes.codes == *codes, "svs codes differ for {:?} (acoustic loss {loss:.4})", ph.0);
    }
    Ok(format!("10 words; acoustic model CE {loss:.4} after {steps} steps"))
}

// 12

fn single_song(n: usize) -> Vec<CorpusRecord> {
    (0..n)
        .map(|i| CorpusRecord {
            id: format!("s_{i:02}"),
            song_id: "s".into(),
            segment_index: i,
            audio_path: format!("{i}.wav").into(),
            split: Split::Train,
            speech_path: None,
            phonemes: None,
            feature_path: None,
            f0_path: None,
        })
        .collect()
}

fn reference_rule() -> Outcome {
    let m = single_song(12);
    let mut r = rng(12);
    let draws = 10_000;
    let mut counts = [0usize; 12];
    for _ in 0..draws {
        counts[sample_reference(&m, "s", 6, 5, &mut r).map_err(|x| x.to_string())?.segment_index] += 1;
    }
    let (mean, sd) = (draws as f64 / 10.0, (draws as f64 * 0.1 * 0.9).sqrt());
    for (i, &c) in counts.iter().enumerate() {
        if i == 0 || i == 6 {
            ensure!(c == 0, "index {i} drawn {c} times");
        } else {
            ensure!((c as f64 - mean).abs() <= 3.0 * sd, "index {i} drawn {c} times");
        }
    }

    // Two-window ablation on a corpus whose codes encode the frame index.
    let frames = 60;
    let cfg = PipelineConfig { reference_expanded: false, n_q: 4, k2: 64, ..PipelineConfig::default() };
    let clean = CleanStreams { n_q: 4, codes: (0..frames as u32 * 4).map(|i| i / 4).collect(), pitch: (0..frames as u32).map(|i| 200 + i).collect() };
    let variant = VariantRecord {
        source_id: m[0].id.clone(),
        song_id: "s".into(),
        segment_index: 0,
        variant: 0,
        seed: 99,
        feature_path: "unused".into(),
        f0_path: "unused".into(),
        wav_path: None,
    };
    let semantic: Vec<u32> = (0..70).collect();
    let corpus = TokenizedCorpus { records: m[..2].to_vec(), clean: vec![clean.clone(), clean], variants: vec![vec![(variant.clone(), semantic.clone())], vec![(variant, semantic)]] };
    let mut sides = [0usize; 2];
    for _ in 0..500 {
        let ex = corpus.example(0, 0, &cfg, &mut r).map_err(|x| x.to_string())?;
        ensure!(ex.reference_id == ex.source_id, "two-window reference came from {}", ex.reference_id);
        let target: Vec<u32> = ex.acoustic.codes.column(0).to_vec();
        let contiguous = |w: &[u32]| w.windows(2).all(|p| p[1] == p[0] + 1);
        ensure!(contiguous(&target) && contiguous(&ex.reference), "windows are not contiguous");
        let (t0, r0) = (target[0] as usize, ex.reference[0] as usize);
        let (t1, r1) = (t0 + target.len(), r0 + ex.reference.len());
        ensure!(t1 <= r0 || r1 <= t0, "windows overlap");
        ensure!(target.len() + ex.reference.len() == frames, "windows do not partition the segment");
        ensure!(ex.pitch == (200 + t0 as u32..200 + t1 as u32).collect::<Vec<_>>(), "pitch does not follow the target window");
        ensure!(!ex.semantic.is_empty() && contiguous(&ex.semantic), "semantic crop is not a contiguous slice");
        let cut = if t0 == 0 { t1 } else { r1 };
        ensure!((frames / 3..=frames - frames / 3).contains(&cut), "cut {cut} outside the middle third");
        sides[(t0 == 0) as usize] += 1;
    }
    ensure!(sides[0] > 100 && sides[1] > 100, "target side counts {sides:?}");
    let expanded = PipelineConfig { reference_expanded: true, ..cfg };
    let ex = corpus.example(0, 0, &expanded, &mut r).map_err(|x| x.to_string())?;
    ensure!(ex.reference_id == m[1].id && ex.acoustic.frames() == frames, "expanded scheme broke");
    Ok(format!("counts {:?}", &counts[1..]))
}

fn main() {
    let criteria: [(usize, &str, Duration, fn() -> Outcome); 12] = [
        (1, "segment plan conformance", Duration::from_secs(5), segment_plans),
        (2, "resampling identity and statistics", Duration::from_secs(10), resampling),
        (3, "corruption chain ranges", Duration::from_secs(60), corruption_ranges),
        (4, "equaliser response oracle", Duration::from_secs(30), eq_oracle),
        (5, "tokenizers", Duration::from_secs(120), tokenizers),
        (6, "sequence layout", Duration::from_secs(5), sequence_layout),
        (7, "model correctness", Duration::from_secs(120), model_correctness),
        (8, "overfit and decode", Duration::from_secs(600), overfit_and_decode),
        (9, "end-to-end toy conversion", Duration::from_secs(3600), end_to_end),
        (10, "metric oracles", Duration::from_secs(30), metrics),
        (11, "phoneme-to-singing extension", Duration::from_secs(600), svs_extension),
        (12, "reference prompting rule", Duration::from_secs(10), reference_rule),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > limit => Err(format!("{msg}; took {took:.1?}, limit {limit:?}")),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("criterion {n:>2} PASS  {name} ({took:.1?}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({took:.1?}): {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
