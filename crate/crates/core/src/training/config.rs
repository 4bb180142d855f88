//! Experiment configuration: one TOML file, every field optional with
//! defaults, unknown keys rejected, dotted `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorTag;
use crate::glimpse::GlimpseSensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Names the metrics and checkpoint files; derived from the estimator
    /// and seed when absent.
    pub run_id: Option<String>,
    pub output_dir: PathBuf,
    /// Worker threads for rollouts; 0 means one per available core.
    pub threads: usize,
    pub data: DataConfig,
    pub sensor: SensorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub exploration: ExplorationConfig,
    pub metrics: MetricsConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// Pre-generated dataset containers (`train` and `test` paths).
    Dataset,
    /// MNIST IDX files in `mnist_dir`, placed on the canvas at load time.
    Mnist,
    /// Procedural glyph digits placed on the canvas.
    Glyphs,
    /// Random discrete toy worlds.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub mnist_dir: Option<PathBuf>,
    pub canvas: usize,
    pub scale_range: [f64; 2],
    pub train_count: usize,
    pub test_count: usize,
    pub glyphs_per_class: usize,
    pub toy: ToyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub worlds: usize,
    pub cells: usize,
    pub scales: usize,
    pub classes: usize,
    pub feature_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub scales: Vec<usize>,
    pub retina: usize,
    pub low_res_side: usize,
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub glimpses: usize,
    pub bottom_width: usize,
    pub top_width: usize,
    pub inference_width: usize,
    pub location_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    MovingAverage,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub estimator: EstimatorTag,
    pub samples: usize,
    pub batch_size: usize,
    pub updates: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub baseline: BaselineKind,
    /// Moving-average decay for the `moving-average` baseline.
    pub baseline_decay: f64,
    /// Learning rate of the linear `network` baseline.
    pub baseline_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    /// Proposal temperature at the start of training.
    pub temperature: f64,
    /// Fraction of the update budget over which τ anneals linearly to 1.
    pub anneal_fraction: f64,
    pub coverage_weight: f64,
    pub entropy_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub flush_every: u64,
    pub checkpoint_every: u64,
    /// Resamples for the gradient-variance probe at each flush; 0 disables.
    pub probe_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub rollouts: usize,
    /// Evaluate on at most this many test examples (0 = all).
    pub max_examples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            run_id: None,
            output_dir: PathBuf::from("runs"),
            threads: 0,
            data: DataConfig::default(),
            sensor: SensorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            exploration: ExplorationConfig::default(),
            metrics: MetricsConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Dataset,
            train: None,
            test: None,
            mnist_dir: None,
            canvas: 60,
            scale_range: [1.0, 1.5],
            train_count: 10_000,
            test_count: 2_000,
            glyphs_per_class: 20,
            toy: ToyConfig::default(),
        }
    }
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            worlds: 8,
            cells: 2,
            scales: 2,
            classes: 3,
            feature_spread: 1.0,
        }
    }
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            scales: vec![14, 28, 56],
            retina: 14,
            low_res_side: 12,
            grid: None,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            glimpses: 4,
            bottom_width: 128,
            top_width: 128,
            inference_width: 128,
            location_std: 0.1,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorTag::WsramQCv,
            samples: 5,
            batch_size: 32,
            updates: 50_000,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            baseline: BaselineKind::MovingAverage,
            baseline_decay: 0.99,
            baseline_lr: 1e-3,
        }
    }
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            temperature: 1.5,
            anneal_fraction: 0.1,
            coverage_weight: 0.0,
            entropy_weight: 0.0,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            flush_every: 100,
            checkpoint_every: 5000,
            probe_resamples: 16,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 10,
            max_examples: 0,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("bad override path {path:?}")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override path {path:?} crosses a non-table value")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        let x = &self.exploration;
        let checks: [(bool, &str); 17] = [
            // TOML integers are signed 64-bit
            (i64::try_from(self.seed).is_ok(), "seed must be below 2^63"),
            (self.model.glimpses >= 1, "model.glimpses must be ≥ 1"),
            (t.samples >= 1, "train.samples must be ≥ 1"),
            (t.batch_size >= 1, "train.batch_size must be ≥ 1"),
            (t.lr >= 0.0 && t.lr.is_finite(), "train.lr must be ≥ 0"),
            ((0.0..1.0).contains(&t.beta1), "train.beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&t.beta2), "train.beta2 must lie in [0, 1)"),
            (
                t.eps > 0.0 && t.baseline_lr >= 0.0,
                "train.eps must be > 0 and train.baseline_lr ≥ 0",
            ),
            (
                (0.0..1.0).contains(&t.baseline_decay),
                "train.baseline_decay must lie in [0, 1)",
            ),
            (
                !t.estimator.is_wake_q(),
                "train.estimator must be a θ estimator, not WAKE-Q",
            ),
            (
                x.temperature > 0.0 && x.temperature.is_finite(),
                "exploration.temperature must be > 0",
            ),
            (
                (0.0..=1.0).contains(&x.anneal_fraction),
                "exploration.anneal_fraction must lie in [0, 1]",
            ),
            (
                x.coverage_weight >= 0.0 && x.entropy_weight >= 0.0,
                "exploration weights must be ≥ 0",
            ),
            (self.metrics.flush_every >= 1, "metrics.flush_every must be ≥ 1"),
            (
                self.metrics.checkpoint_every >= 1,
                "metrics.checkpoint_every must be ≥ 1",
            ),
            (self.eval.rollouts >= 1, "eval.rollouts must be ≥ 1"),
            (self.model.location_std > 0.0, "model.location_std must be > 0"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::config(*msg));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) {
                return Err(Error::config("run_id must be a non-empty file-name fragment"));
            }
        }
        if self.data.kind != DataKind::Toy {
            self.glimpse_sensor().validate()?;
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            let tag: String = self
                .train
                .estimator
                .as_str()
                .to_ascii_lowercase()
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
                .collect();
            format!("{tag}-seed{}", self.seed)
        })
    }

    pub fn glimpse_sensor(&self) -> GlimpseSensor {
        GlimpseSensor {
            scales: self.sensor.scales.clone(),
            retina: self.sensor.retina,
            low_res_side: self.sensor.low_res_side,
            grid: self.sensor.grid,
        }
    }

    /// Proposal temperature at `update` (1-based): linear from τ₀ to 1 over
    /// the first `anneal_fraction` of the budget.
    pub fn temperature_at(&self, update: u64) -> f64 {
        let x = &self.exploration;
        let horizon = x.anneal_fraction * self.train.updates as f64;
        if horizon <= 0.0 || update as f64 >= horizon {
            return 1.0;
        }
        x.temperature + (1.0 - x.temperature) * (update as f64 / horizon)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.output_dir.join(format!("metrics-{}.jsonl", self.run_id()))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join(format!("checkpoint-{}.bin", self.run_id()))
    }
}
