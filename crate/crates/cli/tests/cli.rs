mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{bin, tree_bytes};
use nixnet::maskgen::BinaryMask;
use nixnet::Image;
use serde_json::Value;

fn nixnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("NIX_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = nixnet(dir, args);
    assert!(
        out.status.success(),
        "nixnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Real images, an autoencoder and a universal set at 32x32 under `dir`.
fn toy_pipeline(dir: &Path, count: usize) {
    let n = count.to_string();
    ok(
        dir,
        &[
            "gen-synth",
            "--count",
            &n,
            "--size",
            "32",
            "--seed",
            "1",
            "--out",
            "real",
        ],
    );
    ok(
        dir,
        &[
            "train-ae", "--images", "real", "--steps", "3", "--seed", "2", "--out", "ae.bin",
        ],
    );
    ok(
        dir,
        &[
            "gen-ut", "--images", "real", "--ae", "ae.bin", "--seed", "3", "--out", "ut",
        ],
    );
}

#[test]
fn gen_masks_writes_masks_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen-masks",
            "--count",
            "10",
            "--size",
            "64",
            "--seed",
            "1",
            "--out",
            "m",
        ],
    );
    let pngs: Vec<PathBuf> = std::fs::read_dir(dir.path().join("m"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    assert_eq!(pngs.len(), 10);
    for p in &pngs {
        assert_eq!(BinaryMask::load(p).unwrap().dims(), (64, 64));
    }
    let manifest = json(dir.path().join("m/manifest.json"));
    assert_eq!(manifest["count"], 10);
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["masks"].as_array().unwrap().len(), 10);

    ok(
        dir.path(),
        &[
            "gen-masks",
            "--count",
            "10",
            "--size",
            "64",
            "--seed",
            "1",
            "--out",
            "m2",
        ],
    );
    assert_eq!(
        tree_bytes(&dir.path().join("m")),
        tree_bytes(&dir.path().join("m2"))
    );
}

#[test]
fn gen_masks_rejects_small_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = nixnet(
        dir.path(),
        &["gen-masks", "--count", "2", "--size", "16", "--out", "m"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid dimensions"));
}

#[test]
fn exit_codes_distinguish_io_from_validation() {
    let dir = tempfile::tempdir().unwrap();
    let missing = nixnet(dir.path(), &["residual", "nowhere.png", "--out", "r.png"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = nixnet(dir.path(), &["gen-masks", "--count", "x", "--out", "m"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    std::fs::write(
        dir.path().join("bad.json"),
        "{ \"mask\": { \"coverage_range\": [0.6, 0.2] } }",
    )
    .unwrap();
    let bad_cfg = nixnet(
        dir.path(),
        &[
            "--config",
            "bad.json",
            "gen-masks",
            "--count",
            "1",
            "--out",
            "m",
        ],
    );
    assert_eq!(bad_cfg.status.code(), Some(1));
    let unknown = nixnet(
        dir.path(),
        &[
            "--config",
            "missing.json",
            "gen-masks",
            "--count",
            "1",
            "--out",
            "m",
        ],
    );
    assert_eq!(unknown.status.code(), Some(2));
    assert!(nixnet(dir.path(), &["--help"]).status.success());
}

#[test]
fn seed_precedence_flag_config_env() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(bin());
        cmd.args(args)
            .current_dir(dir.path())
            .env_remove("NIX_SEED");
        if let Some(v) = env {
            cmd.env("NIX_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    let seed_of = |out: &str| {
        let r = json(dir.path().join(out).join("report.json"));
        (
            r["seed"]["value"].as_u64().unwrap(),
            r["seed"]["source"].as_str().unwrap().to_string(),
        )
    };
    std::fs::write(dir.path().join("c.json"), "{ \"seed\": 21 }").unwrap();
    let base = ["gen-masks", "--count", "1", "--size", "32"];

    run(&[&base[..], &["--out", "a"]].concat(), Some("9"));
    assert_eq!(seed_of("a"), (9, "env".into()));
    run(
        &[&base[..], &["--out", "b", "--config", "c.json"]].concat(),
        Some("9"),
    );
    assert_eq!(seed_of("b"), (21, "config".into()));
    run(
        &[
            &base[..],
            &["--out", "c", "--config", "c.json", "--seed", "5"],
        ]
        .concat(),
        Some("9"),
    );
    assert_eq!(seed_of("c"), (5, "flag".into()));
    run(&[&base[..], &["--out", "d"]].concat(), None);
    assert_eq!(seed_of("d"), (0, "default".into()));
    // The env seed is a real fallback: same bytes as passing it explicitly.
    run(&[&base[..], &["--out", "e", "--seed", "9"]].concat(), None);
    let masks = |d: &str| std::fs::read(dir.path().join(d).join("000000.png")).unwrap();
    assert_eq!(masks("a"), masks("e"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        "{ \"image_size\": 48, \"mask\": { \"coverage_range\": [0.1, 0.2] } }",
    )
    .unwrap();
    ok(
        dir.path(),
        &[
            "--config",
            "c.json",
            "gen-masks",
            "--count",
            "3",
            "--out",
            "a",
        ],
    );
    let a = json(dir.path().join("a/manifest.json"));
    assert_eq!(a["image_size"], serde_json::json!([48, 48]));
    assert_eq!(
        a["mask_params"]["coverage_range"],
        serde_json::json!([0.1, 0.2])
    );
    for m in a["masks"].as_array().unwrap() {
        let c = m["coverage"].as_f64().unwrap();
        assert!((0.1..=0.2).contains(&c), "{c}");
    }
    ok(
        dir.path(),
        &[
            "--config",
            "c.json",
            "gen-masks",
            "--count",
            "3",
            "--size",
            "40",
            "--max-coverage",
            "0.3",
            "--out",
            "b",
        ],
    );
    let b = json(dir.path().join("b/manifest.json"));
    assert_eq!(b["image_size"], serde_json::json!([40, 40]));
    assert_eq!(
        b["mask_params"]["coverage_range"],
        serde_json::json!([0.1, 0.3])
    );
}

#[test]
fn pipeline_eval_detect_and_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_pipeline(d, 6);
    let manifest = json(d.join("ut/manifest.json"));
    assert_eq!(manifest["count"], 6);
    assert_eq!(manifest["seed"], 3);
    assert!(json(d.join("ae.bin.report.json"))["metrics"]["autoencoder_digest"].is_string());

    let before_ut = tree_bytes(&d.join("ut"));
    let before_real = tree_bytes(&d.join("real"));
    let ae_before = std::fs::read(d.join("ae.bin")).unwrap();

    ok(
        d,
        &[
            "eval",
            "--data",
            "ut",
            "--predictions",
            "ut/masks",
            "--report",
            "ident.json",
        ],
    );
    assert_eq!(json(d.join("ident.json"))["metrics"]["miou"], 1.0);

    ok(
        d,
        &[
            "train-det",
            "--train",
            "ut",
            "--epochs",
            "1",
            "--batch-size",
            "2",
            "--seed",
            "4",
            "--out",
            "det.bin",
        ],
    );
    let rep = json(d.join("det.bin.report.json"));
    assert_eq!(rep["command"], "train-det");
    assert_eq!(rep["seed"]["value"], 4);
    assert_eq!(rep["metrics"]["train_samples"], 5);
    assert_eq!(rep["metrics"]["val_samples"], 1);
    assert!(rep["backend"]["threads"].as_i64().unwrap() >= 1);

    ok(
        d,
        &[
            "eval", "--data", "ut", "--ckpt", "det.bin", "--report", "ev.json",
        ],
    );
    let miou = json(d.join("ev.json"))["metrics"]["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));

    ok(
        d,
        &[
            "detect",
            "ut/images/000002.png",
            "--ckpt",
            "det.bin",
            "--out-dir",
            "det",
        ],
    );
    let mask = BinaryMask::load(d.join("det/000002.mask.png")).unwrap();
    assert_eq!(mask.dims(), (32, 32));
    assert!(d.join("det/000002.prob.png").exists());
    assert!(d.join("det/000002.detect.json").exists());

    // Sizes the detector cannot take directly are padded and cropped back.
    let odd = Image::filled(37, 50, 0.4);
    odd.save_png(d.join("odd.png")).unwrap();
    ok(
        d,
        &["detect", "odd.png", "--ckpt", "det.bin", "--out-dir", "det"],
    );
    assert_eq!(
        BinaryMask::load(d.join("det/odd.mask.png")).unwrap().dims(),
        (37, 50)
    );

    assert_eq!(before_ut, tree_bytes(&d.join("ut")));
    assert_eq!(before_real, tree_bytes(&d.join("real")));
    assert_eq!(ae_before, std::fs::read(d.join("ae.bin")).unwrap());
}

#[test]
fn ablate_reports_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_pipeline(d, 3);
    let out = ok(
        d,
        &[
            "ablate",
            "--train",
            "ut",
            "--test",
            "ut",
            "--epochs",
            "1",
            "--batch-size",
            "2",
            "--out-dir",
            "abl",
        ],
    );
    let report = json(d.join("abl/report.json"));
    let rows = report["metrics"]["table"]["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        [
            "w/o noise stream",
            "w/o image stream",
            "w/o all fusion modules",
            "w/o fusion module 1 and 2",
            "w/o fusion module 3",
            "Full NIX-Net",
        ]
    );
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("w/o fusion module 1 and 2"));
    assert!(d.join("abl/table.txt").exists());
}

#[test]
fn residual_and_describe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    Image::filled(20, 24, 0.5)
        .save_png(d.join("flat.png"))
        .unwrap();
    ok(d, &["residual", "flat.png", "--out", "r.png"]);
    let r = Image::load(d.join("r.png")).unwrap();
    assert_eq!(r.dims(), (20, 24));
    // Zero residual maps to mid-gray.
    assert!(r.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));

    let out = ok(d, &["describe", "--size", "64"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("fused level3: 512x8x8"), "{text}");
}
