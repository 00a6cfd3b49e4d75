use std::path::Path;
use std::process::{Command, Output};

use sumgan_core::dataset::load_dataset;
use sumgan_core::models::{load_checkpoint, Variant};

fn sumgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumgan"))
        .args(args)
        .env_remove("SUMGAN_SEED")
        .output()
        .expect("spawn sumgan")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, videos: &str, frames: &str, dim: &str, seed: &str) -> String {
    let out = sumgan(&["synth", "--videos", videos, "--frames", frames, "--dim", dim, "--seed", seed, "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    s(&dir.join("synth.manifest")).to_string()
}

fn train(manifest: &str, variant: &str, out: &Path, epochs: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--variant", variant, "--dataset", manifest, "--epochs", epochs, "--dim", "8", "--hidden", "6", "--set",
        "heads=2", "--seed", "4", "--out", s(out),
    ];
    args.extend_from_slice(extra);
    sumgan(&args)
}

#[test]
fn synth_writes_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "25", "120", "64", "1");
    let ds = load_dataset(Path::new(&manifest)).unwrap();
    assert_eq!(ds.videos.len(), 25);
    for v in &ds.videos {
        assert_eq!(v.features.shape(), &[120, 64]);
    }
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&a, "3", "20", "8", "11");
    synth(&b, "3", "20", "8", "11");
    synth(&c, "3", "20", "8", "12");
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["synth.manifest", "synth.data"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "synth.data"), read(&c, "synth.data"));
}

#[test]
fn train_writes_fold_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "10", "24", "12", "2");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&manifest, "AED", &a, "2", &[]).status.success());
    assert!(train(&manifest, "AED", &b, "2", &["--parallel-folds", "3"]).status.success());
    for k in 0..5 {
        let (model, m) = load_checkpoint(&a.join(format!("fold_{k}.ckpt"))).unwrap();
        assert_eq!((model.variant(), m.epoch), (Variant::Aed, 2));
    }
    for f in ["config.txt", "timing.tsv", "train_log.jsonl", "report.json", "report.tsv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert!(!a.join("roc.tsv").exists());
    for f in ["report.json", "report.tsv", "train_log.jsonl", "fold_0.ckpt", "fold_4.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "AED");
    assert_eq!(report["folds"].as_array().unwrap().len(), 5);
    assert_eq!(report["config"]["epochs"], "2");

    // The written config reproduces the run.
    let c = dir.path().join("c");
    let out = sumgan(&["train", "--config", s(&a.join("config.txt")), "--out", s(&c)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(c.join("report.json")).unwrap());
}

#[test]
fn st_log_has_no_prior_column() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "5", "16", "8", "3");
    let out = dir.path().join("st");
    assert!(train(&manifest, "ST", &out, "1", &[]).status.success());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert!(!log.is_empty() && !log.contains("\"prior\""));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, flag: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sumgan"));
        cmd.args(["synth", "--videos", "2", "--frames", "12", "--dim", "4", "--out", s(&dir.path().join(out))]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        match seed {
            Some(v) => cmd.env("SUMGAN_SEED", v),
            None => cmd.env_remove("SUMGAN_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(out).join("synth.data")).unwrap()
    };
    assert_eq!(run(Some("7"), None, "env"), run(None, Some("7"), "flag"));
    assert_eq!(run(Some("9"), Some("7"), "both"), run(None, Some("7"), "flag2"));
    assert_eq!(run(None, None, "none"), run(None, Some("0"), "zero"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "epochs=2\nwarmup=3\n").unwrap();
    let out = sumgan(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":2:") && err.contains("warmup"), "{err}");

    assert_eq!(sumgan(&["train", "--set", "warmup=3"]).status.code(), Some(2));
    assert_eq!(sumgan(&["train", "--variant", "SUM-GAN-XL"]).status.code(), Some(2));
    assert_eq!(sumgan(&["train", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(sumgan(&["frobnicate"]).status.code(), Some(2));
    let missing = dir.path().join("absent.manifest");
    assert_eq!(sumgan(&["train", "--dataset", s(&missing), "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn summarize_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "5", "30", "8", "6");
    let run = dir.path().join("run");
    assert!(train(&manifest, "SAT", &run, "1", &[]).status.success());
    let ckpt = run.join("fold_0.ckpt");

    let out = sumgan(&["summarize", "--dataset", &manifest, "--checkpoint", s(&ckpt), "--video", "video_003", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let j: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let n = j["n_frames"].as_u64().unwrap() as usize;
    let mask = j["mask"].as_array().unwrap();
    assert_eq!(mask.len(), n);
    assert_eq!(j["frame_scores"].as_array().unwrap().len(), n);
    let picked = mask.iter().filter(|b| b.as_u64() == Some(1)).count();
    assert!(picked as f64 <= 0.15 * n as f64);
    assert_eq!(j["selected_frames"].as_u64().unwrap() as usize, picked);
    assert!(run.join("summary_video_003.json").is_file());

    let out = sumgan(&["summarize", "--dataset", &manifest, "--checkpoint", s(&ckpt), "--video", "video_999", "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown video"));

    let args = ["summarize", "--dataset", &manifest, "--checkpoint", s(&ckpt), "--video", "video_001", "--variant", "AED"];
    assert_eq!(sumgan(&args).status.code(), Some(2));

    let ev = dir.path().join("eval");
    let out = sumgan(&["eval", "--dataset", &manifest, "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["variant"], "SAT");
    assert_eq!(report["folds"][0]["videos"].as_array().unwrap().len(), 5);
    let mean = report["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let out = sumgan(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    for v in Variant::ALL {
        let row = text.lines().find(|l| l.starts_with(&format!("{}\t", v.name()))).unwrap();
        let cols: Vec<&str> = row.split('\t').collect();
        assert!(cols[1].parse::<f64>().unwrap() < 1e-4);
        assert!(!cols[2].is_empty());
        assert_eq!(cols[4], "ok");
    }
    let bad = sumgan(&["gradcheck", "--variant", "SUM-GAN", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}
