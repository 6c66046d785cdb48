//! Importance criteria, score smoothing, the cubic schedule, global top-r
//! mask construction and the exhaustive optimality oracle.

mod criteria;
mod mask;
mod oracle;
mod schedule;

pub use criteria::{
    score, score_histogram, score_magnitude, score_pins, score_sensitivity, Criterion,
    ImportanceState, ScoreHistogram, ScoreMap,
};
pub use mask::{apply_mask, build_mask, PruningDecision};
pub use oracle::{knapsack_oracle, linearized_delta_loss, OracleSolution, ORACLE_MAX_DIM};
pub use schedule::SparsityScheduler;

use crate::models::ParamRegistry;

/// Prunable parameter names in the order used for tie-breaking.
pub fn tie_break_order(reg: &ParamRegistry) -> Vec<String> {
    let mut names: Vec<String> = reg.prunable().map(|(n, _)| n.clone()).collect();
    names.sort();
    names
}
