use std::collections::VecDeque;

use super::config::{PinsUpdateModel, TrainConfig};
use super::optimizer::Optimizer;
use super::record::{EvalRow, RunRecord};
use crate::autograd::{Tape, Tensor};
use crate::datasets::{batch_iter, Dataset, Features, Split};
use crate::error::{PinsError, Result};
use crate::models::{Input, Model, ModelConfig, ParamRegistry};
use crate::pruning::{
    apply_mask, build_mask, score, ImportanceState, PruningDecision, ScoreMap, SparsityScheduler,
};
use crate::selfreg::{total_objective, Checkpoint, CheckpointManager, ObjectiveKind, ObjectiveMode};

/// Argmax accuracy; ties resolve to the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, c) = logits
        .dims2()
        .ok_or_else(|| PinsError::rejected("accuracy", "logits must be rank 2"))?;
    if n != labels.len() {
        return Err(PinsError::shape("accuracy", &[n], &[labels.len()]));
    }
    if n == 0 {
        return Err(PinsError::Evaluation("no rows to evaluate".into()));
    }
    let correct = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / n as f64)
}

fn eval_chunk(ds: &Dataset) -> usize {
    match ds.features {
        Features::Dense { .. } => 1024,
        Features::Tokens { .. } => 32,
    }
}

pub(crate) fn evaluate_params(
    arch: &ModelConfig,
    reg: &ParamRegistry,
    ds: &Dataset,
    split: Split,
) -> Result<f64> {
    let rows = ds.rows(split);
    if rows.is_empty() {
        return Err(PinsError::Evaluation(format!("{} split is empty", split.as_str())));
    }
    let mut correct = 0.0;
    for chunk in rows.chunks(eval_chunk(ds)) {
        let logits = arch.logits(reg, &ds.input(chunk))?;
        correct += accuracy(&logits, &ds.labels_for(chunk))? * chunk.len() as f64;
    }
    Ok(correct / rows.len() as f64)
}

/// Classification accuracy of `model` on one split of `ds`.
pub fn evaluate(model: &Model, ds: &Dataset, split: Split) -> Result<f64> {
    evaluate_params(model.config(), model.registry(), ds, split)
}

fn check_compatible(arch: &ModelConfig, ds: &Dataset) -> Result<()> {
    match (arch, &ds.features) {
        (ModelConfig::Mlp(m), Features::Dense { dim, .. }) => {
            if m.input_dim != *dim {
                return Err(PinsError::Config(format!(
                    "model input_dim {} does not match dataset dimension {dim}",
                    m.input_dim
                )));
            }
        }
        (ModelConfig::Transformer(t), Features::Tokens { seq_len, data }) => {
            if *seq_len > t.max_seq_len {
                return Err(PinsError::Config(format!(
                    "sequence length {seq_len} exceeds max_seq_len {}",
                    t.max_seq_len
                )));
            }
            if data.iter().any(|&id| id >= t.vocab_size) {
                return Err(PinsError::Config("dataset token outside the model vocabulary".into()));
            }
        }
        _ => {
            return Err(PinsError::Config(
                "model kind does not match the dataset features".into(),
            ))
        }
    }
    if arch.num_classes() < ds.num_classes {
        return Err(PinsError::Config(format!(
            "model has {} classes, dataset has {}",
            arch.num_classes(),
            ds.num_classes
        )));
    }
    Ok(())
}

/// What one call to [`Trainer::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
    pub kept: usize,
    pub decision: Option<PruningDecision>,
}

/// Step-by-step execution of the prune-while-training loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    dataset: Dataset,
    model: Model,
    optimizer: Optimizer,
    scheduler: SparsityScheduler,
    importance: ImportanceState,
    manager: CheckpointManager,
    teacher: Option<ParamRegistry>,
    prune: bool,
    batches: VecDeque<Vec<usize>>,
    epoch: u64,
    t: usize,
    rows: Vec<EvalRow>,
    step_losses: Vec<f64>,
}

impl Trainer {
    /// `prune = false` runs the same loop without scoring or masking.
    pub fn new(
        cfg: &TrainConfig,
        dataset: Dataset,
        teacher: Option<ParamRegistry>,
        prune: bool,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let cfg = cfg.resolved();
        let model = Model::build(cfg.model.with_seed(cfg.seed))?;
        check_compatible(model.config(), &dataset)?;
        if cfg.objective == ObjectiveKind::Kd && teacher.is_none() {
            return Err(PinsError::Config("kd objective requires a teacher".into()));
        }
        let scheduler = SparsityScheduler::new(
            cfg.schedule.final_density,
            cfg.schedule.warmup_steps,
            cfg.schedule.cooldown_steps,
            cfg.total_steps,
            model.registry().prunable_count(),
        )?;
        Ok(Trainer {
            optimizer: Optimizer::new(cfg.optimizer.clone()),
            importance: ImportanceState::new(cfg.ema_beta)?,
            manager: CheckpointManager::new(model.registry()),
            scheduler,
            model,
            dataset,
            teacher,
            prune,
            batches: VecDeque::new(),
            epoch: 0,
            t: 0,
            rows: Vec::new(),
            step_losses: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn scheduler(&self) -> &SparsityScheduler {
        &self.scheduler
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn importance(&self) -> &ImportanceState {
        &self.importance
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        self.manager.checkpoint()
    }

    pub fn checkpoint_manager(&self) -> &CheckpointManager {
        &self.manager
    }

    /// Index of the next step to run.
    pub fn current_step(&self) -> usize {
        self.t
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.cfg.total_steps
    }

    /// Rows of the mini-batch the next step will use.
    pub fn peek_batch(&mut self) -> Result<&[usize]> {
        self.refill()?;
        Ok(&self.batches[0])
    }

    fn refill(&mut self) -> Result<()> {
        if self.batches.is_empty() {
            let seed = self
                .cfg
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(self.epoch);
            self.batches = batch_iter(&self.dataset, Split::Train, self.cfg.batch_size, seed)?.into();
            self.epoch += 1;
        }
        Ok(())
    }

    /// Runs step `t`: validation (on eval steps), forward, objective,
    /// backward, scoring, committed update and masking.
    pub fn step(&mut self) -> Result<StepReport> {
        let t = self.t;
        if self.is_finished() {
            return Err(PinsError::State(format!("run already completed {t} steps")));
        }
        let arch = self.model.config().clone();

        let mut val_metric = None;
        let mut pending = None;
        let sparsity_before = 1.0 - self.model.registry().density();
        if t % self.cfg.eval_interval == 0 {
            let acc = evaluate_params(&arch, self.model.registry(), &self.dataset, Split::Val)?;
            if acc > self.manager.checkpoint().val_metric {
                pending = Some(self.model.registry().clone());
            }
            val_metric = Some(acc);
        }

        self.refill()?;
        let batch = self.batches.pop_front().expect("refilled");
        let input: Input = self.dataset.input(&batch);
        let labels = self.dataset.labels_for(&batch);

        let mut tape = Tape::new();
        let (logits, bound) = arch.forward(self.model.registry(), &mut tape, &input, true)?;
        let mode = ObjectiveMode::new(self.cfg.objective, self.teacher.as_ref(), &self.manager)?;
        let objective = total_objective(
            &mut tape,
            mode,
            &arch,
            logits,
            &input,
            &labels,
            self.cfg.divergence,
        )?;
        let mut loss = tape.scalar(objective.total);
        // the probability floor would otherwise hide non-finite logits
        if tape.value_f64(logits).iter().any(|v| !v.is_finite()) {
            loss = f64::NAN;
        }
        if !loss.is_finite() {
            return Err(PinsError::Divergence {
                step: t,
                loss: loss as f32,
            });
        }
        let grads = tape.backward(objective.total)?;
        drop(tape);

        let reg = self.model.registry_mut();
        reg.store_grads(&bound, &grads)?;
        let proposal = self.optimizer.propose(reg)?;
        if self.prune {
            let update: ScoreMap = match self.cfg.pins_update_model {
                PinsUpdateModel::Optimizer => proposal.deltas.clone(),
                PinsUpdateModel::SgdFormula => {
                    let lr = self.optimizer.lr();
                    reg.prunable()
                        .map(|(n, e)| {
                            let g = e.tensor.grad().unwrap_or_default();
                            (n.clone(), g.iter().map(|&g| -lr * g).collect())
                        })
                        .collect()
                }
            };
            let raw = score(self.cfg.criterion, reg, &update)?;
            self.importance.update(raw)?;
        }
        self.optimizer.commit(reg, proposal)?;

        let mut decision = None;
        if self.prune {
            let r = self.scheduler.remaining_count(t)?;
            let d = build_mask(&self.importance.ema, r, t)?;
            apply_mask(reg, &d)?;
            decision = Some(d);
        }
        let kept = reg.kept_count();

        if let (Some(snapshot), Some(acc)) = (pending, val_metric) {
            self.manager.maybe_update(&snapshot, acc, t);
        }
        if let Some(acc) = val_metric {
            self.rows.push(EvalRow {
                t,
                train_loss: loss,
                val_metric: acc,
                sparsity: sparsity_before,
                checkpoint_step: self.manager.checkpoint().step,
            });
        }
        self.step_losses.push(loss);
        self.t += 1;
        Ok(StepReport {
            t,
            loss,
            val_metric,
            kept,
            decision,
        })
    }

    /// Runs the remaining steps and evaluates the final parameters on the
    /// test split.
    pub fn finish(mut self) -> Result<PruneRun> {
        while !self.is_finished() {
            self.step()?;
        }
        let final_test_metric = evaluate(&self.model, &self.dataset, Split::Test)?;
        let mut model = self.model;
        model.registry_mut().clear_grads();
        let record = RunRecord {
            config_digest: self.cfg.digest(),
            seed: self.cfg.seed,
            criterion: self.cfg.criterion,
            objective: self.cfg.objective,
            pruned: self.prune,
            total_steps: self.cfg.total_steps,
            eval_interval: self.cfg.eval_interval,
            rows: self.rows,
            step_losses: self.step_losses,
            final_test_metric,
            final_density: model.registry().density(),
            final_nonzero: model.registry().nonzero_count(),
            masks_digest: model.registry().mask_digest(),
            best_checkpoint_step: self.manager.checkpoint().step,
            best_val_metric: self.manager.checkpoint().val_metric,
        };
        Ok(PruneRun {
            record,
            model,
            checkpoint: self.manager,
        })
    }
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct PruneRun {
    pub record: RunRecord,
    pub model: Model,
    pub checkpoint: CheckpointManager,
}

fn teacher_for(cfg: &TrainConfig, ds: &Dataset) -> Result<Option<ParamRegistry>> {
    if cfg.objective != ObjectiveKind::Kd {
        return Ok(None);
    }
    let teacher_cfg = TrainConfig {
        objective: ObjectiveKind::Erm,
        ..cfg.clone()
    };
    let run = Trainer::new(&teacher_cfg, ds.clone(), None, false)?.finish()?;
    Ok(Some(run.model.into_registry()))
}

fn run(cfg: &TrainConfig, prune: bool) -> Result<PruneRun> {
    cfg.validate()?;
    let ds = cfg.data.build(cfg.seed)?;
    let teacher = teacher_for(cfg, &ds)?;
    Trainer::new(cfg, ds, teacher, prune)?.finish()
}

/// Iterative pruning while training. With the kd objective a dense ERM
/// teacher is trained first under the same seed.
pub fn train_prune(cfg: &TrainConfig) -> Result<PruneRun> {
    run(cfg, true)
}

/// The same loop with pruning disabled.
pub fn train_dense(cfg: &TrainConfig) -> Result<PruneRun> {
    run(cfg, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::DataConfig;
    use crate::models::MlpConfig;
    use crate::pruning::Criterion;
    use crate::trainer::{OptimizerConfig, ScheduleConfig};

    fn small() -> TrainConfig {
        TrainConfig {
            data: DataConfig {
                n: 200,
                ..DataConfig::default()
            },
            model: ModelConfig::Mlp(MlpConfig::new(2, vec![8], 2)),
            total_steps: 60,
            eval_interval: 10,
            schedule: ScheduleConfig {
                final_density: 0.3,
                warmup_steps: 10,
                cooldown_steps: 20,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn accuracy_examples() {
        let majority = Tensor::from_rows(&vec![vec![1.0, 0.0]; 5]).unwrap();
        assert_eq!(accuracy(&majority, &[0, 0, 0, 1, 1]).unwrap(), 0.6);
        let perfect = Tensor::from_rows(&[vec![2.0, -1.0], vec![-1.0, 3.0]]).unwrap();
        assert_eq!(accuracy(&perfect, &[0, 1]).unwrap(), 1.0);
        assert!(matches!(
            accuracy(&Tensor::zeros(&[0, 2]), &[]),
            Err(PinsError::Evaluation(_)) | Err(PinsError::RejectedInput { .. })
        ));
    }

    #[test]
    fn final_density_and_masked_zeros() {
        let run = train_prune(&small()).unwrap();
        let reg = run.model.registry();
        let d = reg.prunable_count();
        let expected = crate::datasets::round_half_up(0.3 * d as f64);
        assert_eq!(reg.kept_count(), expected);
        for (_, e) in reg.prunable() {
            for (v, &m) in e.tensor.data().iter().zip(&e.mask) {
                if !m {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        assert_eq!(run.record.rows.len(), 6);
        assert!(run.record.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn deterministic() {
        let a = train_prune(&small()).unwrap();
        let b = train_prune(&small()).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn full_density_equals_dense_training() {
        let mut cfg = small();
        cfg.schedule.final_density = 1.0;
        cfg.objective = ObjectiveKind::Erm;
        let pruned = train_prune(&cfg).unwrap();
        let dense = train_dense(&cfg).unwrap();
        assert_eq!(pruned.model, dense.model);
        assert_eq!(pruned.record.rows, dense.record.rows);
        assert_eq!(pruned.record.step_losses, dense.record.step_losses);
    }

    #[test]
    fn checkpoint_is_causal() {
        let mut cfg = small();
        cfg.criterion = Criterion::Magnitude;
        cfg.optimizer = OptimizerConfig::sgd(0.1);
        let mut tr = Trainer::new(&cfg, cfg.data.build(0).unwrap(), None, true).unwrap();
        while !tr.is_finished() {
            let before = tr.current_step();
            tr.step().unwrap();
            assert!(tr.checkpoint().step <= before);
        }
    }

    #[test]
    fn kd_trains_a_teacher() {
        let mut cfg = small();
        cfg.total_steps = 20;
        cfg.schedule.cooldown_steps = 5;
        cfg.objective = ObjectiveKind::Kd;
        let run = train_prune(&cfg).unwrap();
        assert_eq!(run.record.objective, ObjectiveKind::Kd);
    }

    #[test]
    fn mismatched_model_is_a_config_error() {
        let mut cfg = small();
        cfg.model = ModelConfig::Mlp(MlpConfig::new(3, vec![4], 2));
        assert!(matches!(train_prune(&cfg), Err(PinsError::Config(_))));
    }

    #[test]
    fn divergence_guard() {
        let mut cfg = small();
        cfg.optimizer = OptimizerConfig::sgd(1e30);
        cfg.objective = ObjectiveKind::Erm;
        match train_prune(&cfg) {
            Err(PinsError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
