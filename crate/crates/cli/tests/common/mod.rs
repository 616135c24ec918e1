//! Helpers shared by the cli integration tests.
#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use nixnet::maskgen::MaskParams;
use nixnet::params::derive_seed;
use nixnet::simulate::{
    simulate_samples, train_autoencoder, AeTrainConfig, AutoencoderConfig, AutoencoderModel,
    UniversalSample,
};
use nixnet::synth::{synthetic_images, SynthConfig};
use nixnet::Image;

pub fn tmp_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
}

/// Print a verdict line past the test harness output capture and append it
/// to `acceptance.log`. Returns `pass`.
pub fn emit(name: &str, pass: bool, detail: &str) -> bool {
    let line = format!(
        "[{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(tmp_root().join("acceptance.log"))
    {
        let _ = f.write_all(line.as_bytes());
    }
    pass
}

/// [`emit`], then fail the test when the criterion does not hold.
pub fn verdict(name: &str, pass: bool, detail: &str) {
    assert!(emit(name, pass, detail), "{name}: {detail}");
}

pub fn toy_images(count: usize, size: usize, seed: u64) -> Vec<Image> {
    synthetic_images(count, size, size, &SynthConfig::default(), seed)
}

pub fn toy_autoencoder(
    images: &[Image],
    base_channels: i64,
    steps: usize,
    seed: u64,
) -> AutoencoderModel {
    let cfg = AeTrainConfig {
        steps,
        seed,
        model: AutoencoderConfig {
            base_channels,
            ..Default::default()
        },
        ..Default::default()
    };
    train_autoencoder(images, &cfg)
        .expect("autoencoder training")
        .0
}

pub fn toy_samples(images: &[Image], g: &AutoencoderModel, mask_seed: u64) -> Vec<UniversalSample> {
    simulate_samples(images, g, &MaskParams::default().with_seed(mask_seed)).expect("simulation")
}

/// A small universal set: `count` synthetic images, an autoencoder trained
/// on them, one mask per image.
pub fn toy_universal_set(
    count: usize,
    size: usize,
    ae_steps: usize,
    seed: u64,
) -> Vec<UniversalSample> {
    let images = toy_images(count, size, derive_seed(seed, "real"));
    let g = toy_autoencoder(&images, 32, ae_steps, derive_seed(seed, "ae"));
    toy_samples(&images, &g, derive_seed(seed, "masks"))
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_nixnet"))
}

/// Every regular file under `dir`, relative path and bytes, sorted.
pub fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
