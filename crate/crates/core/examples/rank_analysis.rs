//! Numerical rank and row occupancy of matrices pruned by each criterion,
//! plus the aligned loss trajectories, written as CSV reports.

use pinsprune::analysis::{emit_report, sparsity_report, trajectory_compare, DEFAULT_RANK_TOL};
use pinsprune::pruning::Criterion;
use pinsprune::trainer::{train_prune, TrainConfig};

fn main() -> pinsprune::Result<()> {
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for criterion in Criterion::ALL {
        let run = train_prune(&TrainConfig {
            criterion,
            ..TrainConfig::default()
        })?;
        let rep = sparsity_report(run.model.registry(), DEFAULT_RANK_TOL, criterion.as_str())?;
        println!("{}: density {:.3}, mean rank {:.2}", criterion.as_str(), rep.overall_density, rep.mean_rank);
        for m in &rep.matrices {
            println!(
                "  {:<16} {:>2}x{:<2} rank {:>2}  occupancy histogram {:?}",
                m.name, m.dims[0], m.dims[1], m.numerical_rank, m.occupancy.histogram
            );
        }
        reports.push(rep);
        records.push(run.record);
    }
    let trajectory = trajectory_compare(&records)?;
    let out = std::env::temp_dir().join("pinsprune-rank-analysis");
    for path in emit_report(&out, &reports, Some(&trajectory))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
