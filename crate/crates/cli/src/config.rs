//! TOML configuration files. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use declip_core::datasets::OperatorKind;
use declip_core::losses::{GroupSampler, LossConfig};
use declip_core::trainer::{LossMode, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Optional config: defaults when no path is given.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Subspace,
    Cone,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Output file stem; writes `<name>.csv` and `<name>.meta.toml`.
    pub name: String,
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: Option<u64>,
    /// Write `x_*` columns next to the measurements.
    #[serde(default = "yes")]
    pub include_ground_truth: bool,
    pub subspace: Option<SubspaceSection>,
    pub cone: Option<ConeSection>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSection {
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub clip_fraction: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSection {
    /// Block size applied to the bundled 28x28 digit (1 keeps full size).
    #[serde(default = "two")]
    pub downsample: usize,
    #[serde(default = "two_f")]
    pub amplitude_mean: f64,
    #[serde(default)]
    pub lower: f64,
    #[serde(default = "point_four")]
    pub upper: f64,
    #[serde(default = "haar")]
    pub operator: OperatorKind,
}

fn two() -> usize {
    2
}
fn two_f() -> f64 {
    2.0
}
fn point_four() -> f64 {
    0.4
}
fn haar() -> OperatorKind {
    OperatorKind::HaarOrthogonal
}

/// Hyperparameters shared by `train`, `sweep` and `dynamic-range`.
/// Missing keys fall back to the defaults of the experiment.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub mode: Option<LossMode>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lambda: Option<f64>,
    pub g_min: Option<f64>,
    pub g_max: Option<f64>,
    pub ei_samples_per_item: Option<usize>,
    pub eval_every: Option<usize>,
}

impl TrainingSection {
    pub fn apply(&self, base: TrainConfig) -> Result<TrainConfig> {
        let group = GroupSampler::new(
            self.g_min.unwrap_or(base.loss_config.group.g_min),
            self.g_max.unwrap_or(base.loss_config.group.g_max),
        )?;
        let cfg = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            loss_mode: self.mode.unwrap_or(base.loss_mode),
            loss_config: LossConfig {
                lambda: self.lambda.unwrap_or(base.loss_config.lambda),
                group,
                ei_samples_per_item: self.ei_samples_per_item.unwrap_or(base.loss_config.ei_samples_per_item),
            },
            seed: base.seed,
            eval_every: self.eval_every.unwrap_or(base.eval_every),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// lr 1e-4, 300 epochs, batch 100, g ~ U(0.5, 1.5).
    #[default]
    Synthetic,
    /// lr 5e-4, 300 epochs, batch 50, g ~ U(0.1, 2).
    Cone,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    /// Dataset CSV written by `gen`.
    pub dataset: PathBuf,
    /// Output stem for `<name>.ckpt`, `<name>.report.csv` and `<name>.gp`.
    #[serde(default = "model")]
    pub name: String,
    pub seed: Option<u64>,
    /// Held-out fraction used for the printed test SDR (needs `x_*` columns).
    #[serde(default)]
    pub test_fraction: f64,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
}

fn model() -> String {
    "model".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Number of weight layers.
    #[serde(default = "five")]
    pub depth: usize,
    /// Hidden width; defaults to the signal dimension.
    pub width: Option<usize>,
    #[serde(default)]
    pub skip_blend: bool,
}

fn five() -> usize {
    5
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            depth: 5,
            width: None,
            skip_blend: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFileConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_vs")]
    pub vs: Vec<f64>,
    pub ambient_dim: Option<usize>,
    pub count: Option<usize>,
    pub threshold: Option<f64>,
    pub train_fraction: Option<f64>,
    pub depth: Option<usize>,
    pub skip_blend: Option<bool>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub training: TrainingSection,
}

fn default_ks() -> Vec<usize> {
    vec![1, 3, 5]
}
fn default_vs() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}

impl Default for SweepFileConfig {
    fn default() -> Self {
        toml::from_str("").expect("all keys optional")
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicRangeFileConfig {
    pub downsample: Option<usize>,
    pub count: Option<usize>,
    pub train_fraction: Option<f64>,
    pub amplitude_mean: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub depth: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub training: TrainingSection,
}

/// Keys mirror the `theory` flags; flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryFileConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<Vec<usize>>,
    pub mu: Option<f64>,
    pub fraction: Option<f64>,
    pub pairs: Option<usize>,
    pub operator: Option<OperatorKind>,
    pub norm: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub operators: Option<usize>,
    pub samples: Option<usize>,
    pub count: Option<usize>,
    pub eps: Option<Vec<f64>>,
    pub dim: Option<usize>,
}

/// Keys mirror the `baseline` flags; flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFileConfig {
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub fixtures: Option<usize>,
    pub n: Option<usize>,
    pub active: Option<usize>,
    pub clip_fraction: Option<f64>,
    pub iterations: Option<usize>,
    pub gamma: Option<f64>,
    pub tau0: Option<f64>,
    pub prox_mode: Option<declip_core::baseline_hqs::ProxMode>,
}
