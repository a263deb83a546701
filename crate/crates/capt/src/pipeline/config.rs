//! Run configuration shared by the generate / train / eval / infer commands.

use crate::error::{CaptError, Result};
use crate::losses::{LossWeights, MotionConfig};
use crate::model::ModelConfig;
use crate::synthdata::category;
use crate::voting::VotingConfig;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-3, epochs: 12 }
    }
}

/// Everything a command needs; JSON-loadable with per-field defaults so
/// partial config files work. CLI flags override file values.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub category: String,
    /// Dataset root (contains manifest.json and the split directories).
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
    pub seed: u64,
    /// Number of samples to generate.
    pub count: usize,
    /// Points per sampled cloud.
    pub n_points: usize,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub motion: MotionConfig,
    pub voting: VotingConfig,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            category: "laptop".to_string(),
            dataset_dir: PathBuf::from("data"),
            checkpoint: PathBuf::from("model.capt"),
            report_dir: PathBuf::from("reports"),
            seed: 7,
            count: 100,
            n_points: 512,
            model: ModelConfig {
                d_e: 64,
                n_links: 2,
                n_joints: 1,
                neighbors: 16,
                decoder_hidden: 128,
            },
            loss: LossWeights::default(),
            motion: MotionConfig::default(),
            voting: VotingConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CaptError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CaptError::Config(format!("{}: bad config: {e}", path.display())))
    }

    /// Model configuration with link/joint counts taken from the category
    /// registry (the category is the source of truth for head sizes).
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        let spec = category(&self.category)?;
        let mut m = self.model.clone();
        m.n_links = spec.n_links;
        m.n_joints = spec.n_joints;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_model()?;
        self.voting.validate()?;
        if self.optim.lr <= 0.0 || !self.optim.lr.is_finite() {
            return Err(CaptError::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.optim.lr
            )));
        }
        if self.optim.epochs == 0 {
            return Err(CaptError::Config("epochs must be at least 1".to_string()));
        }
        Ok(())
    }
}
