//! Adversarial training: batch assembly, the two-phase optimization step,
//! checkpointing, and the outer loop.

pub mod checkpoint;
pub mod data;
pub mod optimizer;
pub mod step;
pub mod trainer;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointData};
pub use data::{assemble_batch, load_corpus, BatchItem, Corpus, PreparedUtterance, TrainingBatch};
pub use optimizer::{Adam, AdamConfig};
pub use step::{train_step, ModelBundleConfig, TrainState};
pub use trainer::{train, TrainOutcome};

use crate::error::{Error, Result};
use crate::losses::GanForm;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Feature frames per crop; mel crops are `upsample_factor` times longer.
    pub crop_frames: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Steps with the similarity losses held at zero weight.
    pub warmup_steps: u64,
    pub lambda_sim_after_warmup: f64,
    /// Weight on the real/fake term; zero gives reconstruction-only training.
    pub lambda_rf: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub validate_every: u64,
    pub gan_form: GanForm,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 100_000,
            batch_size: 16,
            crop_frames: 128,
            lr_g: 2e-4,
            lr_d: 1e-4,
            beta1: 0.8,
            beta2: 0.99,
            warmup_steps: 5_000,
            lambda_sim_after_warmup: 1.0,
            lambda_rf: 1.0,
            seed: 0,
            checkpoint_every: 10_000,
            validate_every: 1_000,
            gan_form: GanForm::Expectation,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.crop_frames == 0 {
            return Err(Error::Config("crop_frames must be positive".into()));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        for (name, v) in [
            ("lambda_sim_after_warmup", self.lambda_sim_after_warmup),
            ("lambda_rf", self.lambda_rf),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Similarity-loss weight at a given step: zero through the warmup, then the
/// configured weight from `warmup_steps` onward.
pub fn lambda_sim(cfg: &TrainingConfig, step: u64) -> f64 {
    if step < cfg.warmup_steps {
        0.0
    } else {
        cfg.lambda_sim_after_warmup
    }
}
