//! A tiny transformer encoder on bit-parity sequences, pruned to half its
//! weights by each criterion. PINS is also run with a slower score average,
//! which it needs on this task.
//!
//! cargo run --release --example transformer_parity [steps]

use pinsprune::models::{ModelConfig, TransformerConfig};
use pinsprune::pruning::Criterion;
use pinsprune::selfreg::ObjectiveKind;
use pinsprune::trainer::{train_dense, train_prune, ScheduleConfig, TrainConfig};

fn main() -> pinsprune::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let mut cfg = TrainConfig::parity_transformer();
    cfg.data.seq_len = 4;
    cfg.model = ModelConfig::Transformer(TransformerConfig {
        embed_dim: 16,
        ff_dim: 32,
        max_seq_len: 4,
        ..TransformerConfig::default()
    });
    cfg.optimizer.lr = Some(3e-3);
    cfg.objective = ObjectiveKind::Erm;
    cfg.total_steps = steps;
    cfg.eval_interval = steps / 10;
    cfg.schedule = ScheduleConfig {
        final_density: 0.5,
        warmup_steps: steps * 2 / 5,
        cooldown_steps: steps * 3 / 10,
    };

    let dense = train_dense(&cfg)?;
    println!("{:<18} test acc {:.3}", "dense", dense.record.final_test_metric);

    let mut runs: Vec<(String, TrainConfig)> = Criterion::ALL
        .into_iter()
        .map(|criterion| (criterion.as_str().to_string(), TrainConfig { criterion, ..cfg.clone() }))
        .collect();
    runs.push((
        "pins, ema 0.99".into(),
        TrainConfig {
            criterion: Criterion::Pins,
            ema_beta: 0.99,
            ..cfg.clone()
        },
    ));
    for (label, c) in runs {
        let run = train_prune(&c)?;
        let val: Vec<String> = run.record.rows.iter().map(|r| format!("{:.2}", r.val_metric)).collect();
        println!(
            "{label:<18} test acc {:.3}  kept {}/{}  val {}",
            run.record.final_test_metric,
            run.model.registry().kept_count(),
            run.model.registry().prunable_count(),
            val.join(" ")
        );
    }
    Ok(())
}
