//! Drive the trainer one step at a time and watch the schedule, the loss,
//! mask churn and the self-regularization checkpoint.

use pinsprune::trainer::{TrainConfig, Trainer};

fn main() -> pinsprune::Result<()> {
    let cfg = TrainConfig {
        total_steps: 1000,
        schedule: pinsprune::trainer::ScheduleConfig {
            final_density: 0.25,
            warmup_steps: 100,
            cooldown_steps: 300,
        },
        ..TrainConfig::default()
    };
    let data = cfg.data.build(cfg.seed)?;
    let mut trainer = Trainer::new(&cfg, data, None, true)?;
    let mut previous: Option<Vec<bool>> = None;
    let mut flips = 0;
    println!("{:>5} {:>6} {:>8} {:>7} {:>6} {:>5}", "t", "kept", "loss", "val", "flips", "ckpt");
    while !trainer.is_finished() {
        let step = trainer.step()?;
        let mask: Vec<bool> = step.decision.iter().flat_map(|d| d.masks.values().flatten().copied()).collect();
        if let Some(p) = &previous {
            flips += p.iter().zip(&mask).filter(|(a, b)| a != b).count();
        }
        previous = Some(mask);
        if let Some(val) = step.val_metric {
            println!(
                "{:>5} {:>6} {:>8.4} {:>7.3} {:>6} {:>5}",
                step.t,
                step.kept,
                step.loss,
                val,
                flips,
                trainer.checkpoint().step
            );
            flips = 0;
        }
    }
    let run = trainer.finish()?;
    println!("test accuracy {:.3}", run.record.final_test_metric);
    Ok(())
}
