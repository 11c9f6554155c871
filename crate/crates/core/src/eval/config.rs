use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::SceneConfig;
use crate::decoder::{TrainConfig, DEFAULT_LAMBDA};
use crate::error::{invalid, Result};
use crate::intention::{BackendConfig, Target, Task};
use crate::neural::EncodingConfig;
use crate::separation::QualityProfile;
use crate::speaker::{DEFAULT_CLUSTERS, DEFAULT_EMBEDDING_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: DEFAULT_CLUSTERS, dim: DEFAULT_EMBEDDING_DIM, seed: 1, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Independently initialised predictors; the one with the lowest final
    /// training loss is kept.
    pub n_restarts: usize,
    /// Ridge decoders for the reconstruction baselines.
    pub ridge_lambda: f64,
    pub ridge_max_lag_frames: usize,
    /// Training scenes used by the ridge decoders (0 = all).
    pub ridge_train_scenes: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            n_restarts: 1,
            ridge_lambda: DEFAULT_LAMBDA,
            ridge_max_lag_frames: 25,
            ridge_train_scenes: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    pub profile: QualityProfile,
    pub order_seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self { profile: QualityProfile::Oracle, order_seed: 5 }
    }
}

/// Where the intention vector handed to the prompt comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// A uniformly random stream's speaker.
    Random,
    /// Centroid of the BiLSTM's predicted cluster.
    Decoded,
    /// The attended speaker's own embedding.
    Oracle,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [AttentionMode::Random, AttentionMode::Decoded, AttentionMode::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Random => "random",
            AttentionMode::Decoded => "decoded",
            AttentionMode::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| invalid(format!("unknown attention mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub systems: Vec<AttentionMode>,
    pub tasks: Vec<Task>,
    pub targets: Vec<Target>,
    /// Test scenes to evaluate (0 = all).
    pub n_trials: usize,
    pub seed: u64,
    /// Normalized lead-ins stripped before scoring.
    pub boilerplate: Vec<String>,
    pub windows_s: Vec<f64>,
    /// Extra held-out scenes for the window sweep.
    pub sweep_trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            systems: AttentionMode::ALL.to_vec(),
            tasks: Task::ALL.to_vec(),
            targets: Target::ALL.to_vec(),
            n_trials: 0,
            seed: 17,
            boilerplate: super::text::default_boilerplate(),
            windows_s: vec![0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0],
            sweep_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub neural: EncodingConfig,
    pub clusters: ClusterConfig,
    pub predictor: PredictorConfig,
    pub separation: SeparationConfig,
    pub backend: BackendConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.clusters.k < 2 {
            return Err(invalid("need at least two clusters"));
        }
        if self.clusters.dim < 8 {
            return Err(invalid("embedding dimension must be at least 8"));
        }
        if self.scene.cluster_corpus_size < self.clusters.k {
            return Err(invalid("cluster corpus smaller than K"));
        }
        if self.scene.n_train == 0 {
            return Err(invalid("need training scenes"));
        }
        if self.predictor.n_restarts == 0 {
            return Err(invalid("need at least one predictor restart"));
        }
        if self.eval.windows_s.iter().any(|w| !(*w > 0.0)) {
            return Err(invalid("sweep windows must be positive"));
        }
        Ok(())
    }
}
