use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::record::RunRecord;
use super::run::train_prune;
use crate::error::{PinsError, Result};
use crate::pruning::Criterion;
use crate::selfreg::ObjectiveKind;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationAxes {
    pub criteria: Vec<Criterion>,
    pub objectives: Vec<ObjectiveKind>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub cell: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// The record, or the error message of a failed run.
    pub outcome: std::result::Result<RunRecord, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    /// Mean final test metric over successful runs.
    pub mean: f64,
    /// Sample standard deviation; 0 with fewer than two runs.
    pub stddev: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<CellSummary>,
}

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == name)
    }

    /// Successful records of one cell, in seed order.
    pub fn records(&self, cell: &str) -> Vec<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.cell == cell)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,mean,stddev,n\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{},{}\n", c.cell, c.mean, c.stddev, c.n));
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_stddev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cell_name(criterion: Criterion, objective: ObjectiveKind) -> String {
    format!("{}+{}", criterion.as_str(), objective.as_str())
}

/// Runs every `(cell, seed)` pair, at most `jobs` at a time. Failed runs are
/// recorded and do not stop the sweep. Cells keep their input order.
pub fn run_sweep(cells: &[(String, TrainConfig)], seeds: &[u64], jobs: usize) -> Result<SweepTable> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(PinsError::Config("sweep axes must be non-empty".into()));
    }
    let tasks: Vec<(String, TrainConfig)> = cells
        .iter()
        .flat_map(|(name, cfg)| {
            seeds.iter().map(move |&seed| {
                (
                    name.clone(),
                    TrainConfig {
                        seed,
                        ..cfg.clone()
                    },
                )
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PinsError::Config(format!("thread pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        tasks
            .into_par_iter()
            .map(|(cell, config)| SweepRun {
                seed: config.seed,
                outcome: train_prune(&config)
                    .map(|r| r.record)
                    .map_err(|e| e.to_string()),
                cell,
                config,
            })
            .collect()
    });
    let cells = cells
        .iter()
        .map(|(name, _)| {
            let metrics: Vec<f64> = runs
                .iter()
                .filter(|r| &r.cell == name)
                .filter_map(|r| r.outcome.as_ref().ok())
                .map(|r| r.final_test_metric)
                .collect();
            let (mean, stddev) = mean_stddev(&metrics);
            CellSummary {
                cell: name.clone(),
                mean,
                stddev,
                n: metrics.len(),
            }
        })
        .collect();
    Ok(SweepTable { runs, cells })
}

/// Cartesian product of criteria, objectives and seeds over `base`.
pub fn run_ablation(base: &TrainConfig, axes: &AblationAxes, jobs: usize) -> Result<SweepTable> {
    if axes.criteria.is_empty() || axes.objectives.is_empty() {
        return Err(PinsError::Config("ablation axes must be non-empty".into()));
    }
    let mut cells = Vec::new();
    for &criterion in &axes.criteria {
        for &objective in &axes.objectives {
            cells.push((
                cell_name(criterion, objective),
                TrainConfig {
                    criterion,
                    objective,
                    ..base.clone()
                },
            ));
        }
    }
    run_sweep(&cells, &axes.seeds, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        let (m, s) = mean_stddev(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_stddev(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn empty_axes_rejected() {
        let axes = AblationAxes {
            criteria: vec![],
            objectives: vec![ObjectiveKind::Erm],
            seeds: vec![0],
        };
        assert!(run_ablation(&TrainConfig::default(), &axes, 1).is_err());
    }
}
