//! Structure of pruned weights: numerical rank, row occupancy, per-layer
//! aggregates, and loss trajectories across criteria. Output is plain JSON
//! and CSV.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{PinsError, Result};
use crate::models::ParamRegistry;
use crate::trainer::RunRecord;

pub const DEFAULT_RANK_TOL: f64 = 1e-4;
pub const OCCUPANCY_BINS: usize = 10;
const JACOBI_SWEEPS: usize = 60;

/// Singular values in descending order, by one-sided Jacobi rotations in
/// `f64`.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    let (rows, cols) = m
        .dims2()
        .filter(|_| m.rank() == 2)
        .ok_or_else(|| PinsError::rejected("singular_values", format!("expected rank 2, got {:?}", m.shape())))?;
    // columns of `a` are orthogonalized; use the orientation with fewer columns
    let (n_rows, n_cols, a_at): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if rows >= cols {
        (rows, cols, Box::new(|r, c| m.data()[r * cols + c] as f64))
    } else {
        (cols, rows, Box::new(|r, c| m.data()[c * cols + r] as f64))
    };
    let mut colv: Vec<Vec<f64>> = (0..n_cols)
        .map(|c| (0..n_rows).map(|r| a_at(r, c)).collect())
        .collect();

    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n_cols {
            for q in p + 1..n_cols {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&colv[p], &colv[q]);
                    let alpha: f64 = a.iter().map(|x| x * x).sum();
                    let beta: f64 = b.iter().map(|x| x * x).sum();
                    let gamma: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = colv.split_at_mut(q);
                let (a, b) = (&mut lo[p], &mut hi[0]);
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let (xa, yb) = (*x, *y);
                    *x = c * xa - s * yb;
                    *y = s * xa + c * yb;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = colv
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Number of singular values above `rel_tol * sigma_max`; 0 for the zero
/// matrix.
pub fn numerical_rank(m: &Tensor, rel_tol: f64) -> Result<usize> {
    let sv = singular_values(m)?;
    let max = sv.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * max).count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowOccupancy {
    /// Non-zero entries per row.
    pub counts: Vec<usize>,
    /// Rows per occupancy-fraction bin `[k/10, (k+1)/10)`; a full row falls
    /// in the last bin.
    pub histogram: Vec<usize>,
}

/// Per-row counts of a 0/1 matrix.
pub fn row_occupancy(mask: &Tensor) -> Result<RowOccupancy> {
    let (rows, cols) = mask
        .dims2()
        .filter(|_| mask.rank() == 2)
        .ok_or_else(|| PinsError::rejected("row_occupancy", "expected rank 2"))?;
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(PinsError::rejected("row_occupancy", format!("non-binary value {v}")));
    }
    let counts: Vec<usize> = (0..rows)
        .map(|r| mask.data()[r * cols..(r + 1) * cols].iter().filter(|&&v| v == 1.0).count())
        .collect();
    Ok(RowOccupancy {
        histogram: occupancy_histogram(&counts, cols),
        counts,
    })
}

fn occupancy_histogram(counts: &[usize], cols: usize) -> Vec<usize> {
    let mut hist = vec![0; OCCUPANCY_BINS];
    for &c in counts {
        let bin = (c * OCCUPANCY_BINS).checked_div(cols).map_or(0, |b| b.min(OCCUPANCY_BINS - 1));
        hist[bin] += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub name: String,
    pub layer_index: usize,
    pub dims: [usize; 2],
    pub nnz: usize,
    pub density: f64,
    pub occupancy: RowOccupancy,
    pub numerical_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer_index: usize,
    pub matrices: usize,
    pub mean_density: f64,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub source: String,
    pub rel_tol: f64,
    pub matrices: Vec<MatrixReport>,
    pub layers: Vec<LayerAggregate>,
    /// Non-zero fraction over all prunable matrices.
    pub overall_density: f64,
    pub mean_rank: f64,
}

/// Analyzes every prunable rank-2 parameter of `reg` (values, not masks).
pub fn sparsity_report(reg: &ParamRegistry, rel_tol: f64, source: &str) -> Result<SparsityReport> {
    let entries: Vec<_> = reg
        .prunable()
        .filter(|(_, e)| e.tensor.rank() == 2)
        .collect();
    let matrices: Vec<MatrixReport> = entries
        .par_iter()
        .map(|(name, e)| {
            let (rows, cols) = e.tensor.dims2().expect("rank 2");
            let nz: Vec<f32> = e.tensor.data().iter().map(|&v| (v != 0.0) as u8 as f32).collect();
            let nnz = nz.iter().filter(|&&v| v == 1.0).count();
            Ok(MatrixReport {
                name: (*name).clone(),
                layer_index: e.layer_index,
                dims: [rows, cols],
                nnz,
                density: nnz as f64 / (rows * cols) as f64,
                occupancy: row_occupancy(&Tensor::new(vec![rows, cols], nz)?)?,
                numerical_rank: numerical_rank(&e.tensor, rel_tol)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut layer_ids: Vec<usize> = matrices.iter().map(|m| m.layer_index).collect();
    layer_ids.sort_unstable();
    layer_ids.dedup();
    let layers = layer_ids
        .into_iter()
        .map(|l| {
            let ms: Vec<&MatrixReport> = matrices.iter().filter(|m| m.layer_index == l).collect();
            let k = ms.len() as f64;
            LayerAggregate {
                layer_index: l,
                matrices: ms.len(),
                mean_density: ms.iter().map(|m| m.density).sum::<f64>() / k,
                mean_rank: ms.iter().map(|m| m.numerical_rank as f64).sum::<f64>() / k,
            }
        })
        .collect();
    let total: usize = matrices.iter().map(|m| m.dims[0] * m.dims[1]).sum();
    let nnz: usize = matrices.iter().map(|m| m.nnz).sum();
    let mean_rank = if matrices.is_empty() {
        0.0
    } else {
        matrices.iter().map(|m| m.numerical_rank as f64).sum::<f64>() / matrices.len() as f64
    };
    Ok(SparsityReport {
        source: source.into(),
        rel_tol,
        overall_density: if total == 0 { 1.0 } else { nnz as f64 / total as f64 },
        mean_rank,
        matrices,
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub label: String,
    pub loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub sparsity: f64,
    pub series: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTable {
    pub labels: Vec<String>,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    /// Loss series of one label.
    pub fn losses(&self, label: &str) -> Option<Vec<f64>> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some(self.rows.iter().map(|r| r.series[k].loss).collect())
    }
}

/// Aligns records on their shared evaluation grid. Each record is labelled
/// by its criterion; repeated criteria get a `#n` suffix.
pub fn trajectory_compare(records: &[RunRecord]) -> Result<TrajectoryTable> {
    let Some(first) = records.first() else {
        return Ok(TrajectoryTable {
            labels: vec![],
            rows: vec![],
        });
    };
    let grid: Vec<usize> = first.rows.iter().map(|r| r.t).collect();
    for r in &records[1..] {
        let other: Vec<usize> = r.rows.iter().map(|row| row.t).collect();
        if r.total_steps != first.total_steps || other != grid {
            return Err(PinsError::Alignment(format!(
                "record {} ({} steps, {} rows) does not share the grid of {} ({} steps, {} rows)",
                r.config_digest,
                r.total_steps,
                other.len(),
                first.config_digest,
                first.total_steps,
                grid.len()
            )));
        }
    }
    let mut labels: Vec<String> = Vec::new();
    for r in records {
        let base = r.criterion.as_str().to_string();
        let n = labels.iter().filter(|l| l.split('#').next() == Some(&base)).count();
        labels.push(if n == 0 { base } else { format!("{base}#{n}") });
    }
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| TrajectoryRow {
            t,
            sparsity: first.rows[i].sparsity,
            series: records
                .iter()
                .zip(&labels)
                .map(|(r, label)| TrajectoryPoint {
                    label: label.clone(),
                    loss: r.rows[i].train_loss,
                    val_metric: r.rows[i].val_metric,
                })
                .collect(),
        })
        .collect();
    Ok(TrajectoryTable { labels, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub reports: Vec<SparsityReport>,
    pub trajectory_labels: Vec<String>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| PinsError::io(path, std::io::Error::other(e)))
}

fn csv_err(path: &Path, e: csv::Error) -> PinsError {
    PinsError::io(path, std::io::Error::other(e))
}

/// Writes `summary.json`, `rank.csv`, `occupancy.csv` and `trajectory.csv`
/// into `dir`. Files are written with headers even when empty.
pub fn emit_report(
    dir: &Path,
    reports: &[SparsityReport],
    trajectory: Option<&TrajectoryTable>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| PinsError::io(dir, e))?;

    let summary = dir.join("summary.json");
    let body = ReportSummary {
        reports: reports.to_vec(),
        trajectory_labels: trajectory.map(|t| t.labels.clone()).unwrap_or_default(),
    };
    let json = serde_json::to_string_pretty(&body).map_err(|e| PinsError::Serde(e.to_string()))?;
    std::fs::write(&summary, json).map_err(|e| PinsError::io(&summary, e))?;

    let rank = dir.join("rank.csv");
    let mut w = csv_writer(&rank)?;
    w.write_record(["layer", "matrix", "rank", "density"]).map_err(|e| csv_err(&rank, e))?;
    for m in reports.iter().flat_map(|r| &r.matrices) {
        w.write_record([
            m.layer_index.to_string(),
            m.name.clone(),
            m.numerical_rank.to_string(),
            m.density.to_string(),
        ])
        .map_err(|e| csv_err(&rank, e))?;
    }
    w.flush().map_err(|e| PinsError::io(&rank, e))?;

    let occ = dir.join("occupancy.csv");
    let mut w = csv_writer(&occ)?;
    w.write_record(["matrix", "bin_lo", "bin_hi", "count"]).map_err(|e| csv_err(&occ, e))?;
    for m in reports.iter().flat_map(|r| &r.matrices) {
        for (k, &count) in m.occupancy.histogram.iter().enumerate() {
            w.write_record([
                m.name.clone(),
                (k as f64 / OCCUPANCY_BINS as f64).to_string(),
                ((k + 1) as f64 / OCCUPANCY_BINS as f64).to_string(),
                count.to_string(),
            ])
            .map_err(|e| csv_err(&occ, e))?;
        }
    }
    w.flush().map_err(|e| PinsError::io(&occ, e))?;

    let traj = dir.join("trajectory.csv");
    let mut w = csv_writer(&traj)?;
    w.write_record(["t", "criterion", "loss", "val_metric", "sparsity"])
        .map_err(|e| csv_err(&traj, e))?;
    for row in trajectory.map(|t| t.rows.as_slice()).unwrap_or_default() {
        for p in &row.series {
            w.write_record([
                row.t.to_string(),
                p.label.clone(),
                p.loss.to_string(),
                p.val_metric.to_string(),
                row.sparsity.to_string(),
            ])
            .map_err(|e| csv_err(&traj, e))?;
        }
    }
    w.flush().map_err(|e| PinsError::io(&traj, e))?;

    Ok(vec![summary, rank, occ, traj])
}
