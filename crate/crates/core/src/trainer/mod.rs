//! The prune-while-training loop, its optimizers, run records and sweeps.

mod ablation;
mod config;
mod optimizer;
mod record;
mod run;

pub use ablation::{
    cell_name, mean_stddev, run_ablation, run_sweep, AblationAxes, CellSummary, SweepRun,
    SweepTable,
};
pub use config::{
    OptimizerConfig, OptimizerKind, PinsUpdateModel, ScheduleConfig, TrainConfig,
};
pub use optimizer::{optimizer_step_proposal, Optimizer, OptimizerState, Proposal};
pub use record::{EvalRow, RunRecord, RunSummary};
pub use run::{accuracy, evaluate, train_dense, train_prune, PruneRun, StepReport, Trainer};
