use std::path::Path;
use std::process::{Command, Output};

fn sts(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sts")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = sts(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sts(&["make-toy-corpus", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(sts(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(sts(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = sts(&["fit-semantic", "--manifest", "missing.jsonl", "--out", "sem.cb"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "no_such_key = 3\n").unwrap();
    let out = sts(&["--config", "bad.toml", "make-toy-corpus", "--out", "c"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toy_corpus_has_one_record_per_segment() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["make-toy-corpus", "--out", "corpus", "--songs", "20", "--segments", "12"], dir.path());
    let manifest = std::fs::read_to_string(dir.path().join("corpus/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 240);
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("small.toml"),
        "k1 = 8\nk2 = 16\nn_q = 4\nkmeans_iters = 5\nrvq_iters = 5\nembed_dim = 8\n\
         global_layers = 1\nglobal_width = 16\nglobal_heads = 2\nglobal_ffn = 16\n\
         local_layers = 1\nlocal_width = 16\nlocal_heads = 2\nlocal_ffn = 16\nmax_positions = 512\n\
         t2s_layers = 1\nt2s_width = 16\nt2s_heads = 2\nt2s_ffn = 16\ngriffin_lim_iters = 4\ninput_noise = 0.2\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "small.toml"];
        full.extend_from_slice(args);
        ok(&full, d)
    };
    run(&["make-toy-corpus", "--out", "corpus", "--songs", "2", "--segments", "2"]);
    run(&["perturb-corpus", "--manifest", "corpus/manifest.jsonl", "--out", "variants", "--n-r", "2"]);
    run(&["fit-semantic", "--manifest", "corpus/manifest.jsonl", "--out", "sem.cb"]);
    run(&["fit-codec", "--manifest", "corpus/manifest.jsonl", "--out", "codec.cb"]);
    run(&[
        "tokenize", "--manifest", "corpus/manifest.jsonl", "--variants", "variants/variants.jsonl", "--semantic", "sem.cb",
        "--codec", "codec.cb", "--out", "data.json",
    ]);
    run(&["train-lm", "--data", "data.json", "--out", "lm.ckpt", "--steps", "3"]);
    run(&["train-lm", "--data", "data.json", "--out", "lm2.ckpt", "--steps", "2", "--init", "lm.ckpt"]);
    run(&["train-t2s", "--manifest", "corpus/manifest.jsonl", "--semantic", "sem.cb", "--out", "t2s.ckpt", "--steps", "3"]);
    let models = ["--lm", "lm2.ckpt", "--semantic", "sem.cb", "--codec", "codec.cb"];
    let mut args = vec!["infer-sts", "--speech", "corpus/speech/song00_seg00.wav", "--f0", "corpus/f0/song00_seg00.f0", "--out", "sts.wav"];
    args.extend_from_slice(&models);
    run(&args);
    let mut args = vec![
        "infer-svs", "--phonemes", "a e | i", "--f0", "corpus/f0/song00_seg01.f0", "--reference", "corpus/audio/song01_seg00.wav",
        "--t2s", "t2s.ckpt", "--out", "svs.wav",
    ];
    args.extend_from_slice(&models);
    run(&args);

    let out = run(&["eval", "--reference", "corpus/audio/song00_seg00.wav", "--generated", "sts.wav"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["lsd"].as_f64().unwrap() > 0.0);
    let out = run(&["eval", "--reference", "corpus/f0/song00_seg00.f0", "--generated", "corpus/f0/song00_seg00.f0"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rca"].as_f64(), Some(1.0));

    let mut args = vec!["infer-sts", "--speech", "corpus/speech/song00_seg00.wav", "--f0", "corpus/f0/song00_seg00.f0", "--out", "x.wav"];
    args.extend_from_slice(&["--lm", "missing.ckpt", "--semantic", "sem.cb", "--codec", "codec.cb"]);
    assert_eq!(sts(&args, d).status.code(), Some(1));
}
