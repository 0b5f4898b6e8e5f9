//! Run configuration: one TOML file per experiment, one section per stage.

use crate::error::{CliError, Result};
use kktgen::training::{ClassifierTrainConfig, GeneratorTrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const OUT_ENV: &str = "KKTGEN_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub lambda: LambdaSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub sample: SampleSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// 18 points on the unit circle, one classifier.
    Circle,
    /// The circle split into two halves, one classifier each.
    CircleSplit,
    /// 8×8 stripes versus checkerboards.
    Patterns,
    /// No data; the classifier keeps its random initialization.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    #[default]
    Alternating,
    Arc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    #[serde(default)]
    pub split: SplitName,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_per_class() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden: Vec<usize>,
    pub bias: bool,
    /// Required when there is no dataset to infer it from.
    pub input_dim: Option<usize>,
    pub outputs: Option<usize>,
    /// `false` keeps the Kaiming initialization (for structure-only experiments).
    pub train: bool,
    pub lr: f64,
    pub max_epochs: usize,
    pub extra_epochs: usize,
    pub relative_step: f64,
    pub seed: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let t = ClassifierTrainConfig::default();
        Self {
            hidden: vec![16, 16],
            bias: false,
            input_dim: None,
            outputs: None,
            train: true,
            lr: t.lr,
            max_epochs: t.max_epochs,
            extra_epochs: t.extra_epochs,
            relative_step: t.relative_step,
            seed: t.seed,
        }
    }
}

impl ClassifierSection {
    /// Training settings for classifier `t`; each gets its own seed.
    pub fn train_config(&self, t: usize) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            lr: self.lr,
            max_epochs: self.max_epochs,
            extra_epochs: self.extra_epochs,
            relative_step: self.relative_step,
            seed: self.seed + t as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSection {
    /// Number of random inputs the equations are built from.
    pub samples: usize,
    pub max_order: usize,
    pub seed: u64,
    pub verify_alphas: Vec<f64>,
    pub verify_samples: usize,
    pub verify_seed: u64,
    pub tolerance: f64,
}

impl Default for LambdaSection {
    fn default() -> Self {
        Self {
            samples: 16,
            max_order: 2,
            seed: 1,
            verify_alphas: vec![-1.0, -0.5, 0.1, 0.5, 1.0],
            verify_samples: 16,
            verify_seed: 2,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub multiplier_hidden: Vec<usize>,
    /// Virtual training-set size; defaults to each classifier's real one.
    pub n_virtual: Option<f64>,
    pub checkpoint_every: u64,
    /// 0 disables periodic sample dumps.
    pub sample_every: u64,
    pub train: GeneratorTrainConfig,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            noise_dim: 2,
            hidden: vec![32, 32],
            multiplier_hidden: vec![32, 32],
            n_virtual: None,
            checkpoint_every: 1000,
            sample_every: 0,
            train: GeneratorTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            per_class: 200,
            seed: 7,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<()> {
        let bad =
            |field: &str, why: &str| Err(CliError::usage(format!("config field `{field}`: {why}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", "must be a non-empty plain file name");
        }
        if self.data.kind == DataKind::None {
            if self.classifier.train {
                return bad(
                    "classifier.train",
                    "must be false when data.kind = \"none\"",
                );
            }
            if self.classifier.input_dim.is_none() || self.classifier.outputs.is_none() {
                return bad(
                    "classifier.input_dim",
                    "input_dim and outputs are required without data",
                );
            }
        }
        if self.data.kind == DataKind::Patterns && self.data.per_class == 0 {
            return bad("data.per_class", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.data.jitter) {
            return bad("data.jitter", "must lie in [0, 1]");
        }
        if self.lambda.samples == 0 || self.lambda.verify_samples == 0 {
            return bad("lambda.samples", "sample counts must be positive");
        }
        if !(1..=2).contains(&self.lambda.max_order) {
            return bad("lambda.max_order", "must be 1 or 2");
        }
        if self.generator.noise_dim == 0 {
            return bad("generator.noise_dim", "must be positive");
        }
        if self.generator.n_virtual.is_some_and(|n| !(n > 0.0)) {
            return bad("generator.n_virtual", "must be positive");
        }
        if !(self.generator.train.delta > 0.0) {
            return bad("generator.train.delta", "must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization; independent of key order in the file.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `--out`, then `output_dir`, then the environment, then `./runs`.
    pub fn run_dir(&self, out: Option<&Path>) -> PathBuf {
        let root = out
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.name)
    }
}
