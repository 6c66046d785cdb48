//! Objectives on noisy labels at 50% sparsity: plain ERM, distillation from
//! a dense teacher, and self-regularization toward the best checkpoint.

use pinsprune::selfreg::ObjectiveKind;
use pinsprune::trainer::{run_sweep, train_dense, TrainConfig};

fn main() -> pinsprune::Result<()> {
    let mut base = TrainConfig::default();
    base.data.label_noise = 0.1;
    base.schedule.final_density = 0.5;
    let seeds = [0, 1, 2];

    let cells: Vec<(String, TrainConfig)> = [ObjectiveKind::Erm, ObjectiveKind::Kd, ObjectiveKind::SelfReg]
        .into_iter()
        .map(|objective| {
            let cfg = TrainConfig {
                objective,
                ..base.clone()
            };
            (objective.as_str().to_string(), cfg)
        })
        .collect();
    let table = run_sweep(&cells, &seeds, 4)?;
    for c in &table.cells {
        println!("{:<9} mean test acc {:.4} (sd {:.4}, n {})", c.cell, c.mean, c.stddev, c.n);
    }

    let dense: f64 = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                objective: ObjectiveKind::Erm,
                ..base.clone()
            };
            train_dense(&cfg).map(|r| r.record.final_test_metric)
        })
        .sum::<pinsprune::Result<f64>>()?
        / seeds.len() as f64;
    println!("dense erm mean test acc {dense:.4}");
    Ok(())
}
