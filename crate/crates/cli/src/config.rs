use std::path::{Path, PathBuf};

use anyhow::Context;
use nixnet::simulate::AeTrainConfig;
use nixnet::synth::SynthConfig;
use nixnet::train::TrainConfig;
use nixnet::{MaskParams, NixNetConfig};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "NIX_SEED";

/// Parameter sections of a JSON config file. Every field is optional;
/// command-line flags override whatever the file sets.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Side length for generated images and masks.
    pub image_size: Option<usize>,
    pub mask: MaskParams,
    pub synth: SynthConfig,
    pub autoencoder: AeTrainConfig,
    pub train: TrainConfig,
    pub net: NixNetConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(nixnet::Error::from)
            .with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pick the seed (flag, then config file, then `NIX_SEED`, then 0) and
    /// push it into every section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<Seed> {
        let (value, source) = match (flag, self.seed) {
            (Some(s), _) => (s, "flag"),
            (None, Some(s)) => (s, "config"),
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(v) => (
                    v.trim().parse().map_err(|_| {
                        nixnet::Error::ConfigInvalid(format!(
                            "{SEED_ENV}={v:?} is not an unsigned integer"
                        ))
                    })?,
                    "env",
                ),
                Err(_) => (0, "default"),
            },
        };
        self.seed = Some(value);
        self.mask.seed = value;
        self.autoencoder.seed = value;
        self.train.seed = value;
        Ok(Seed { value, source })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Seed {
    pub value: u64,
    pub source: &'static str,
}

/// Fail with an I/O error unless `path` exists.
pub fn require_exists(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(nixnet::Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "input path does not exist"),
        }
        .into())
    }
}

/// `<path>.<suffix>`, keeping the original extension in the name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
