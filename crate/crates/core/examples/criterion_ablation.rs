//! Criterion x objective grid over several seeds, run in parallel, written
//! as the same CSV the `sweep` subcommand produces.

use pinsprune::pruning::Criterion;
use pinsprune::selfreg::ObjectiveKind;
use pinsprune::trainer::{run_ablation, AblationAxes, TrainConfig};

fn main() -> pinsprune::Result<()> {
    let base = TrainConfig {
        total_steps: 1500,
        ..TrainConfig::default()
    };
    let axes = AblationAxes {
        criteria: Criterion::ALL.to_vec(),
        objectives: vec![ObjectiveKind::Erm, ObjectiveKind::SelfReg],
        seeds: vec![0, 1, 2],
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let table = run_ablation(&base, &axes, jobs)?;
    print!("{}", table.to_csv());
    if table.failures() > 0 {
        eprintln!("{} runs failed", table.failures());
    }
    Ok(())
}
