//! Train and prune, export the prunable matrices as CSR (f32 and int8),
//! reload the bundles and time sparse against dense matvecs.

use pinsprune::sparse_export::{bench, bench_stored, export_bundle, load_bundle, random_sparse_matrix};
use pinsprune::trainer::{train_prune, TrainConfig};

fn main() -> pinsprune::Result<()> {
    let cfg = TrainConfig {
        model: pinsprune::models::ModelConfig::Mlp(pinsprune::models::MlpConfig::new(2, vec![64, 64], 2)),
        schedule: pinsprune::trainer::ScheduleConfig {
            final_density: 0.1,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let run = train_prune(&cfg)?;
    println!("pruned model: test acc {:.3}, density {:.3}", run.record.final_test_metric, run.record.final_density);

    let dir = std::env::temp_dir().join(format!("pinsprune-deploy-{}", std::process::id()));
    for quantize in [false, true] {
        let out = dir.join(if quantize { "i8" } else { "f32" });
        let manifest = export_bundle(run.model.registry(), &out, quantize)?;
        let (_, matrices) = load_bundle(&out)?;
        let report = bench_stored(&matrices, 50, 0)?;
        println!(
            "{}: {} matrices, {} dense bytes -> {} on disk ({:.1}x), max rel error {:.2e}",
            if quantize { "int8" } else { "f32 " },
            manifest.matrices.len(),
            manifest.dense_bytes,
            manifest.sparse_bytes,
            report.ratio,
            report.max_rel_error
        );
    }
    std::fs::remove_dir_all(&dir).ok();

    let big = random_sparse_matrix(1024, 1024, 0.0, 1);
    let b = bench(&big, 0.9, 30)?;
    println!(
        "1024x1024 at 90% sparsity: dense {:.3} ms, csr {:.3} ms, speedup {:.1}x",
        b.dense_ms, b.sparse_ms, b.speedup
    );
    Ok(())
}
