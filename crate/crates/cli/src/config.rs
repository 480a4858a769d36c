use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spikereg::materials::{Experiment, MaterialConstants};
use spikereg::network::Preset;
use spikereg::neuron::{GradientMode, Recurrence};
use spikereg::profiling::DeviceProfiles;
use spikereg::training::{LossKind, ResetGrad};
use spikereg::{Error, Result};

pub const SEED_ENV: &str = "SPIKEREG_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Every setting a run can take. A config file supplies any subset, flags
/// override it, and the resolved values are written back as `config.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Time steps per sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_u: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_o: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<Recurrence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_mode: Option<GradientMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<ResetGrad>,
    /// 0 turns clipping off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_check: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devices: Option<DeviceProfiles>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($f:ident),*) => {
        $(if $top.$f.is_some() { $base.$f = $top.$f.clone(); })*
    };
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay!(self, top; experiment, preset, dt, n_u, n_o, layers, recurrence, train_size, val_size,
            test_size, material, epochs, batch_size, learning_rate, weight_decay, loss, gradient_mode, reset,
            clip_norm, chunk_size, threads, deterministic, seed, grad_check, data, out, snapshot, split, devices);
        self
    }

    /// Flag, then file, then `SPIKEREG_SEED`, then 0.
    pub fn resolve_seed(&mut self) -> Result<u64> {
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                })?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn resolve_threads(&mut self) -> usize {
        let t = if self.deterministic == Some(true) {
            1
        } else {
            self.threads.unwrap_or(1)
        };
        self.threads = Some(t);
        t
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("config.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Parses a flag value with the same spelling the JSON files use.
pub fn parse_kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}
