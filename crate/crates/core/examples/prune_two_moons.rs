//! Prune a 2-16-16-2 MLP on two moons to 80% sparsity with each criterion.
//!
//! cargo run --release --example prune_two_moons [seed]

use pinsprune::pruning::Criterion;
use pinsprune::trainer::{train_dense, train_prune, TrainConfig};

fn main() -> pinsprune::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let dense = train_dense(&base)?;
    println!("dense        test acc {:.3}", dense.record.final_test_metric);
    for criterion in Criterion::ALL {
        let run = train_prune(&TrainConfig {
            criterion,
            ..base.clone()
        })?;
        let r = &run.record;
        println!(
            "{:<12} test acc {:.3}  density {:.3}  nonzero {}  best val {:.3} at step {}",
            criterion.as_str(),
            r.final_test_metric,
            r.final_density,
            r.final_nonzero,
            r.best_val_metric,
            r.best_checkpoint_step
        );
    }
    Ok(())
}
