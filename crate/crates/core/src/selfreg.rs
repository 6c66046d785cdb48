//! Self-regularization against the latest best checkpoint, plus the ERM and
//! knowledge-distillation objectives it is compared with.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{PinsError, Result};
use crate::models::{container, Input, ModelConfig, ParamRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Erm,
    Kd,
    SelfReg,
}

impl ObjectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Erm => "erm",
            ObjectiveKind::Kd => "kd",
            ObjectiveKind::SelfReg => "self_reg",
        }
    }
}

/// Which way the divergence against the reference model is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `KL(reference || current)`.
    #[default]
    Forward,
    /// `KL(current || reference)`.
    Reverse,
}

/// A decoupled snapshot of the parameters (masks included).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamRegistry,
    pub val_metric: f64,
    pub step: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointSidecar {
    pub step: usize,
    pub val_metric: f64,
    pub sparsity: f64,
}

/// Tracks the latest best-performing parameters of a run.
#[derive(Debug, Clone)]
pub struct CheckpointManager {
    best: Checkpoint,
}

impl CheckpointManager {
    /// Starts from the initial parameters with a metric of negative infinity.
    pub fn new(initial: &ParamRegistry) -> Self {
        let mut params = initial.clone();
        params.clear_grads();
        CheckpointManager {
            best: Checkpoint {
                params,
                val_metric: f64::NEG_INFINITY,
                step: 0,
            },
        }
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.best
    }

    /// Replaces the checkpoint when `val_metric` strictly improves on it.
    pub fn maybe_update(&mut self, current: &ParamRegistry, val_metric: f64, step: usize) -> bool {
        if val_metric > self.best.val_metric {
            let mut params = current.clone();
            params.clear_grads();
            self.best = Checkpoint {
                params,
                val_metric,
                step,
            };
            true
        } else {
            false
        }
    }

    /// Writes `<stem>.pinsmodl` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        container::save_registry(&self.best.params, &dir.join(format!("{stem}.pinsmodl")))?;
        let sidecar = CheckpointSidecar {
            step: self.best.step,
            val_metric: self.best.val_metric,
            sparsity: 1.0 - self.best.params.density(),
        };
        let path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| PinsError::Serde(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| PinsError::io(&path, e))
    }
}

/// Divergence between the current model's logits and a constant reference.
pub fn self_reg_loss(
    tape: &mut Tape,
    current_logits: Var,
    reference_logits: &Tensor,
    direction: Direction,
) -> Result<Var> {
    if tape.shape(current_logits) != reference_logits.shape() {
        return Err(PinsError::shape(
            "self_reg_loss",
            tape.shape(current_logits),
            reference_logits.shape(),
        ));
    }
    let reference = tape.constant(reference_logits);
    match direction {
        Direction::Forward => tape.kl_divergence(reference, current_logits),
        Direction::Reverse => tape.kl_divergence_both(current_logits, reference),
    }
}

/// Learning objective with its reference model, when it has one.
#[derive(Debug, Clone, Copy)]
pub enum ObjectiveMode<'a> {
    Erm,
    Kd { teacher: &'a ParamRegistry },
    SelfReg { checkpoint: &'a ParamRegistry },
}

impl<'a> ObjectiveMode<'a> {
    pub fn new(
        kind: ObjectiveKind,
        teacher: Option<&'a ParamRegistry>,
        manager: &'a CheckpointManager,
    ) -> Result<Self> {
        match kind {
            ObjectiveKind::Erm => Ok(ObjectiveMode::Erm),
            ObjectiveKind::Kd => teacher
                .map(|teacher| ObjectiveMode::Kd { teacher })
                .ok_or_else(|| PinsError::Config("kd objective requires a teacher".into())),
            ObjectiveKind::SelfReg => Ok(ObjectiveMode::SelfReg {
                checkpoint: &manager.checkpoint().params,
            }),
        }
    }

    fn reference(&self) -> Option<&'a ParamRegistry> {
        match *self {
            ObjectiveMode::Erm => None,
            ObjectiveMode::Kd { teacher } => Some(teacher),
            ObjectiveMode::SelfReg { checkpoint } => Some(checkpoint),
        }
    }
}

/// Terms of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub empirical: Var,
    pub regularizer: Option<Var>,
}

/// `L_er` alone, or `L_er + D(reference, current)` with unit weights.
pub fn total_objective(
    tape: &mut Tape,
    mode: ObjectiveMode<'_>,
    arch: &ModelConfig,
    current_logits: Var,
    input: &Input,
    labels: &[usize],
    direction: Direction,
) -> Result<Objective> {
    let empirical = tape.cross_entropy(current_logits, labels)?;
    let Some(reference) = mode.reference() else {
        return Ok(Objective {
            total: empirical,
            empirical,
            regularizer: None,
        });
    };
    let ref_logits = arch.logits(reference, input)?;
    let reg = self_reg_loss(tape, current_logits, &ref_logits, direction)?;
    let total = tape.add(empirical, reg)?;
    Ok(Objective {
        total,
        empirical,
        regularizer: Some(reg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_mlp, MlpConfig};

    #[test]
    fn checkpoint_update_rule() {
        let reg = ParamRegistry::new();
        let mut m = CheckpointManager::new(&reg);
        assert!(m.maybe_update(&reg, 0.7, 100));
        assert!(!m.maybe_update(&reg, 0.7, 150));
        assert!(!m.maybe_update(&reg, 0.6, 200));
        assert!(m.maybe_update(&reg, 0.8, 300));
        assert_eq!(m.checkpoint().step, 300);
        assert_eq!(m.checkpoint().val_metric, 0.8);
    }

    #[test]
    fn first_eval_always_updates() {
        let mut m = CheckpointManager::new(&ParamRegistry::new());
        assert!(m.maybe_update(&ParamRegistry::new(), 0.0, 0));
    }

    #[test]
    fn snapshot_is_decoupled() {
        let mut model = build_mlp(MlpConfig::new(2, vec![3], 2)).unwrap();
        let mut m = CheckpointManager::new(model.registry());
        m.maybe_update(model.registry(), 0.5, 0);
        let before = m.checkpoint().params.clone();
        model.registry_mut().get_mut("layer0.weight").unwrap().tensor.data_mut()[0] = 42.0;
        assert_eq!(m.checkpoint().params, before);
    }

    #[test]
    fn self_reg_loss_examples() {
        let mut tape = Tape::new();
        let cur = tape.param(&Tensor::from_rows(&[vec![0.2, -0.4]]).unwrap());
        let same = Tensor::from_rows(&[vec![0.2, -0.4]]).unwrap();
        let l = self_reg_loss(&mut tape, cur, &same, Direction::Forward).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let uniform = tape.param(&Tensor::zeros(&[1, 2]));
        let saturated = Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let l = self_reg_loss(&mut tape, uniform, &saturated, Direction::Forward).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-9);

        let bad = Tensor::zeros(&[1, 3]);
        assert!(self_reg_loss(&mut tape, uniform, &bad, Direction::Forward).is_err());
    }

    #[test]
    fn kd_without_teacher_is_a_config_error() {
        let m = CheckpointManager::new(&ParamRegistry::new());
        assert!(matches!(
            ObjectiveMode::new(ObjectiveKind::Kd, None, &m),
            Err(PinsError::Config(_))
        ));
    }
}
