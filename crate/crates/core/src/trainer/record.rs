use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PinsError, Result};
use crate::pruning::Criterion;
use crate::selfreg::ObjectiveKind;

/// One validation point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub t: usize,
    /// Training objective on the step-`t` batch.
    pub train_loss: f64,
    pub val_metric: f64,
    /// Sparsity of the parameters that were validated.
    pub sparsity: f64,
    /// Step of the checkpoint in effect after this evaluation.
    pub checkpoint_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub seed: u64,
    pub criterion: Criterion,
    pub objective: ObjectiveKind,
    pub pruned: bool,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub rows: Vec<EvalRow>,
    /// Training objective at every step.
    pub step_losses: Vec<f64>,
    pub final_test_metric: f64,
    pub final_density: f64,
    pub final_nonzero: usize,
    pub masks_digest: String,
    pub best_checkpoint_step: usize,
    pub best_val_metric: f64,
}

/// Everything in a [`RunRecord`] except the per-row series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub seed: u64,
    pub criterion: Criterion,
    pub objective: ObjectiveKind,
    pub pruned: bool,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub final_test_metric: f64,
    pub final_density: f64,
    pub final_nonzero: usize,
    pub masks_digest: String,
    pub best_checkpoint_step: usize,
    pub best_val_metric: f64,
    /// Sum of the per-step training objective.
    pub cumulative_loss: f64,
}

impl RunRecord {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            criterion: self.criterion,
            objective: self.objective,
            pruned: self.pruned,
            total_steps: self.total_steps,
            eval_interval: self.eval_interval,
            final_test_metric: self.final_test_metric,
            final_density: self.final_density,
            final_nonzero: self.final_nonzero,
            masks_digest: self.masks_digest.clone(),
            best_checkpoint_step: self.best_checkpoint_step,
            best_val_metric: self.best_val_metric,
            cumulative_loss: self.cumulative_loss(0, self.step_losses.len()),
        }
    }

    /// Rebuilds a record from its summary and JSONL rows. Per-step losses
    /// are not part of either file and come back empty.
    pub fn from_parts(summary: RunSummary, rows: Vec<EvalRow>) -> RunRecord {
        RunRecord {
            config_digest: summary.config_digest,
            seed: summary.seed,
            criterion: summary.criterion,
            objective: summary.objective,
            pruned: summary.pruned,
            total_steps: summary.total_steps,
            eval_interval: summary.eval_interval,
            rows,
            step_losses: Vec::new(),
            final_test_metric: summary.final_test_metric,
            final_density: summary.final_density,
            final_nonzero: summary.final_nonzero,
            masks_digest: summary.masks_digest,
            best_checkpoint_step: summary.best_checkpoint_step,
            best_val_metric: summary.best_val_metric,
        }
    }

    /// Sum of training losses over steps `[from, to)`.
    pub fn cumulative_loss(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.step_losses.len());
        self.step_losses[from.min(to)..to].iter().sum()
    }

    pub fn jsonl_name(&self) -> String {
        format!("run-{}-{}.jsonl", self.config_digest, self.seed)
    }

    pub fn summary_name(&self) -> String {
        format!("summary-{}-{}.json", self.config_digest, self.seed)
    }

    /// One JSON object per evaluation row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<EvalRow>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| PinsError::Serde(e.to_string())))
            .collect()
    }

    /// Writes the JSONL rows and the summary into `dir`; returns both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| PinsError::io(dir, e))?;
        let jsonl = dir.join(self.jsonl_name());
        let mut f = std::fs::File::create(&jsonl).map_err(|e| PinsError::io(&jsonl, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| PinsError::io(&jsonl, e))?;
        let summary = dir.join(self.summary_name());
        let text = serde_json::to_string_pretty(&self.summary())
            .map_err(|e| PinsError::Serde(e.to_string()))?;
        std::fs::write(&summary, text).map_err(|e| PinsError::io(&summary, e))?;
        Ok((jsonl, summary))
    }
}
