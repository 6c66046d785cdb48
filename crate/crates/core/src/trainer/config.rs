use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{DataConfig, Task};
use crate::error::{PinsError, Result};
use crate::models::{ModelConfig, TransformerConfig};
use crate::pruning::{Criterion, SparsityScheduler};
use crate::selfreg::{Direction, ObjectiveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

impl OptimizerKind {
    pub fn default_lr(self) -> f32 {
        match self {
            OptimizerKind::Sgd => 1e-2,
            OptimizerKind::Adamw => 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Defaults to 1e-2 for sgd and 1e-3 for adamw.
    pub lr: Option<f32>,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adamw,
            lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f32) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: Some(lr),
            ..Default::default()
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr.unwrap_or_else(|| self.kind.default_lr())
    }
}

/// Which update enters the PINS score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinsUpdateModel {
    /// The update the configured optimizer actually proposes.
    Optimizer,
    /// Plain gradient descent, `-lr * g`.
    SgdFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Fraction of prunable weights kept at the end (`1 - sparsity`).
    pub final_density: f64,
    pub warmup_steps: usize,
    pub cooldown_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            final_density: 0.2,
            warmup_steps: 300,
            cooldown_steps: 900,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub schedule: ScheduleConfig,
    pub criterion: Criterion,
    pub objective: ObjectiveKind,
    pub divergence: Direction,
    pub ema_beta: f32,
    pub pins_update_model: PinsUpdateModel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            total_steps: 3000,
            eval_interval: 100,
            schedule: ScheduleConfig::default(),
            criterion: Criterion::Pins,
            objective: ObjectiveKind::SelfReg,
            divergence: Direction::Forward,
            ema_beta: 0.85,
            pins_update_model: PinsUpdateModel::Optimizer,
        }
    }
}

impl TrainConfig {
    /// Default transformer-on-parity configuration.
    pub fn parity_transformer() -> Self {
        TrainConfig {
            data: DataConfig {
                task: Task::Parity,
                n: 2000,
                ..DataConfig::default()
            },
            model: ModelConfig::Transformer(TransformerConfig::default()),
            ..TrainConfig::default()
        }
    }

    /// Copy with every optional field filled in.
    pub fn resolved(&self) -> TrainConfig {
        let mut c = self.clone();
        c.optimizer.lr = Some(c.optimizer.lr());
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(PinsError::Config("total_steps must be > 0".into()));
        }
        if self.eval_interval == 0 || self.eval_interval > self.total_steps {
            return Err(PinsError::Config(format!(
                "eval_interval must be in [1, total_steps], got {}",
                self.eval_interval
            )));
        }
        if self.batch_size == 0 {
            return Err(PinsError::Config("batch_size must be >= 1".into()));
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(PinsError::Config(format!("lr must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return Err(PinsError::Config(format!("ema_beta {} not in [0, 1)", self.ema_beta)));
        }
        self.model.validate()?;
        SparsityScheduler::new(
            self.schedule.final_density,
            self.schedule.warmup_steps,
            self.schedule.cooldown_steps,
            self.total_steps,
            0,
        )?;
        Ok(())
    }

    /// Short hex digest of the resolved configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.resolved()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..12].to_string()
    }
}
