//! Run configuration: one JSON document with sections `model`, `train`,
//! `augment`, `ruwl`, `data`, `paths` and `sweep`.
//!
//! Every key is optional and defaults to the desk-scale value. Unknown keys
//! are rejected. `key.path=value` overrides are applied to the parsed tree
//! before it is checked, so they are validated like file contents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::data::{gen_synth, load_features, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::RuwlParams;
use crate::model::{EncoderKind, ModelConfig};
use crate::train::{TrainConfig, TrainSetup};

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "RRTN_SEED";

/// Model settings that do not depend on the data geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_kind: EncoderKind,
    pub encoder_dims: Vec<usize>,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub cnn_pool: [usize; 2],
    pub rep_dim: usize,
    pub emb_dim: usize,
    pub head_sigmoid: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            encoder_kind: m.encoder_kind,
            encoder_dims: m.encoder_dims,
            cnn_channels: m.cnn_channels,
            cnn_kernel: m.cnn_kernel,
            cnn_pool: m.cnn_pool,
            rep_dim: m.rep_dim,
            emb_dim: m.emb_dim,
            head_sigmoid: m.head_sigmoid,
        }
    }
}

impl ModelSection {
    pub fn for_data(&self, frames: usize, bins: usize, n_outputs: usize) -> ModelConfig {
        ModelConfig {
            encoder_kind: self.encoder_kind,
            encoder_dims: self.encoder_dims.clone(),
            cnn_channels: self.cnn_channels,
            cnn_kernel: self.cnn_kernel,
            cnn_pool: self.cnn_pool,
            rep_dim: self.rep_dim,
            emb_dim: self.emb_dim,
            head_sigmoid: self.head_sigmoid,
            frames,
            bins,
            n_outputs,
        }
    }
}

/// Either a feature file (`path`) or the synthetic generator settings.
///
/// With a file, `frames` is the length every sample is cropped or padded to
/// and the generator keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub n_samples: usize,
    pub frames: usize,
    pub bins: usize,
    pub targets: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        DataSection {
            path: None,
            n_samples: s.n_samples,
            frames: s.frames,
            bins: s.bins,
            targets: s.targets,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
        }
    }
}

impl DataSection {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_samples: self.n_samples,
            frames: self.frames,
            bins: self.bins,
            targets: self.targets,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match &self.path {
            Some(path) => load_features(path, Some(self.frames)).map_err(|e| match e {
                Error::Io(io) => Error::Load(format!("{}: {io}", path.display())),
                other => other,
            }),
            None => gen_synth(&self.synth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Directory receiving metrics, checkpoints and summaries.
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub ruwl: RuwlParams,
    pub data: DataSection,
    pub paths: PathsSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Parses a JSON document, then applies `key.path=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let inner = e.inner();
            Error::Config(format!(
                "line {}, column {}, key `{}`: {inner}",
                inner.line(),
                inner.column(),
                e.path()
            ))
        })?;
        de.end()
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if overrides.is_empty() {
            return Ok(cfg);
        }

        let mut tree = serde_json::to_value(&cfg)?;
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        serde_path_to_error::deserialize(tree).map_err(|e| Error::Config(format!("key `{}`: {}", e.path(), e.inner())))
    }

    /// Reads `path`, or starts from the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => "{}".to_string(),
        };
        Self::parse(&text, overrides).map_err(|e| match (e, path) {
            (Error::Config(msg), Some(p)) => Error::Config(format!("{}: {msg}", p.display())),
            (e, _) => e,
        })
    }

    /// Replaces `train.seed` with the value of `RRTN_SEED` when it is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.train.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    /// Training setup for data of the given geometry.
    pub fn setup_for(&self, data: &Dataset) -> Result<TrainSetup> {
        let setup = TrainSetup {
            model: self.model.for_data(data.frames(), data.bins(), data.n_targets()),
            train: self.train.clone(),
            augment: self.augment.clone(),
            ruwl: self.ruwl.clone(),
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Checks every section that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.data.path.is_none() {
            self.data.synth().validate()?;
            self.model
                .for_data(self.data.frames, self.data.bins, self.data.targets)
                .validate()?;
        } else if self.data.frames == 0 {
            return Err(Error::Config("data.frames must be positive".into()));
        }
        self.train.validate()?;
        self.ruwl.validate()?;
        if self.sweep.seeds.is_empty() {
            return Err(Error::Config("sweep.seeds must not be empty".into()));
        }
        Ok(())
    }
}

/// Sets `a.b.c` in `tree` to `value`, parsed as JSON when possible and kept
/// as a string otherwise.
pub fn apply_override(tree: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override key `{key}`: `{}` is not a section",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("override key `{key}`: unknown section `{part}`")))?;
    }
    unreachable!("split always yields at least one part")
}
