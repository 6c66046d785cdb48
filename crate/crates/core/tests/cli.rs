use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pinsprune::sparse_export::{load_bundle, serialized_size, BundleManifest};
use pinsprune::trainer::{mean_stddev, train_prune, RunRecord, RunSummary, TrainConfig};
use serde_json::Value;

const SMALL: &str = r#"
total_steps = 60
eval_interval = 10
batch_size = 16

[data]
n = 200

[model]
hidden_dims = [8]

[schedule]
final_density = 0.3
warmup_steps = 5
cooldown_steps = 15
"#;

fn bin(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pinsprune"));
    cmd.args(args).env_remove("PINSPRUNE_OUT");
    if let Some(p) = out_env {
        cmd.env("PINSPRUNE_OUT", p);
    }
    cmd.output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&o.stdout));
    })
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn prune(dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = small_config(dir);
    let out = dir.join("runs");
    let mut args = vec!["prune", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = bin(&args, None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = PathBuf::from(stdout_json(&o)["run_dir"].as_str().unwrap());
    (o, run_dir)
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn prune_writes_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, run_dir) = prune(tmp.path(), &["--seed", "3"]);
    let summary = stdout_json(&o);
    let digest = summary["config_digest"].as_str().unwrap();
    assert_eq!(run_dir.file_name().unwrap().to_str().unwrap(), format!("{digest}-3"));
    let names = files(&run_dir);
    for want in [
        "resolved_config.json".to_string(),
        "model.pinsmodl".to_string(),
        "checkpoint.pinsmodl".to_string(),
        "checkpoint.json".to_string(),
        format!("run-{digest}-3.jsonl"),
        format!("summary-{digest}-3.json"),
    ] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    let jsonl = std::fs::read_to_string(run_dir.join(format!("run-{digest}-3.jsonl"))).unwrap();
    assert_eq!(RunRecord::parse_jsonl(&jsonl).unwrap().len(), 6);
    assert!((summary["final_density"].as_f64().unwrap() - 0.3).abs() < 0.02);
}

#[test]
fn overrides_reach_the_resolved_config_and_runs_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, run_dir) = prune(
        tmp.path(),
        &["--set", "schedule.final_density=0.37", "--set", "criterion=sensitivity", "--set", "optimizer.kind=sgd"],
    );
    let text = std::fs::read_to_string(run_dir.join("resolved_config.json")).unwrap();
    let cfg: TrainConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg.schedule.final_density, 0.37);
    assert_eq!(cfg.optimizer.lr, Some(1e-2));
    assert_eq!(cfg.criterion.as_str(), "sensitivity");

    // the resolved file alone reproduces the run byte for byte
    let again = tmp.path().join("again");
    let o2 = bin(&["prune", "--config", run_dir.join("resolved_config.json").to_str().unwrap(), "--out", again.to_str().unwrap()], None);
    assert_eq!(o2.status.code(), Some(0), "{}", String::from_utf8_lossy(&o2.stderr));
    let dir2 = PathBuf::from(stdout_json(&o2)["run_dir"].as_str().unwrap());
    assert_eq!(dir2.file_name(), run_dir.file_name());
    for name in files(&run_dir) {
        assert_eq!(std::fs::read(run_dir.join(&name)).unwrap(), std::fs::read(dir2.join(&name)).unwrap(), "{name} differs");
    }
    let digest = stdout_json(&o)["config_digest"].as_str().unwrap().to_string();
    assert_eq!(digest, cfg.digest());

    // and matches the library run of the same config
    let rec = train_prune(&cfg).unwrap().record;
    let summary: RunSummary = serde_json::from_slice(&std::fs::read(run_dir.join(rec.summary_name())).unwrap()).unwrap();
    assert_eq!(summary, rec.summary());
}

#[test]
fn output_root_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let env_root = tmp.path().join("from-env");
    let o = bin(&["prune", "--config", cfg.to_str().unwrap()], Some(&env_root));
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout_json(&o)["run_dir"].as_str().unwrap().starts_with(env_root.to_str().unwrap()));

    let with_dir = tmp.path().join("with_dir.toml");
    let cfg_root = tmp.path().join("from-config");
    std::fs::write(&with_dir, format!("output_dir = {:?}\n{SMALL}", cfg_root.to_str().unwrap())).unwrap();
    let o = bin(&["prune", "--config", with_dir.to_str().unwrap()], Some(&env_root));
    assert!(stdout_json(&o)["run_dir"].as_str().unwrap().starts_with(cfg_root.to_str().unwrap()));

    let flag_root = tmp.path().join("from-flag");
    let o = bin(&["prune", "--config", with_dir.to_str().unwrap(), "--out", flag_root.to_str().unwrap()], Some(&env_root));
    assert!(stdout_json(&o)["run_dir"].as_str().unwrap().starts_with(flag_root.to_str().unwrap()));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["prune", "--config", "/nonexistent/config.toml"],
        vec!["prune", "--config", cfg.to_str().unwrap(), "--set", "schedule.no_such_key=1"],
        vec!["prune", "--config", cfg.to_str().unwrap(), "--set", "schedule.final_density=1.5"],
        vec!["analyze", "/nonexistent/model.pinsmodl"],
        vec!["export", "/nonexistent/model.pinsmodl"],
        vec!["bench", "--random", "10y10"],
        vec!["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "criterion"],
    ];
    for args in cases {
        let o = bin(&args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn diverging_run_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    let o = bin(
        &["prune", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "optimizer.kind=sgd", "--set", "optimizer.lr=1e30"],
        None,
    );
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverge"));
}

#[test]
fn sweep_writes_every_run_and_a_consistent_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    let o = bin(
        &[
            "sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "4",
            "criterion=magnitude,sensitivity,pins", "seeds=1..5",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep_dir = std::fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let names = files(&sweep_dir);
    assert_eq!(names.iter().filter(|n| n.starts_with("summary-")).count(), 15);
    assert_eq!(names.iter().filter(|n| n.starts_with("run-") && n.ends_with(".jsonl")).count(), 15);
    for want in ["aggregate.csv", "sweep.json", "resolved_config.json"] {
        assert!(names.iter().any(|n| n == want));
    }

    let listing: Vec<Value> = serde_json::from_slice(&std::fs::read(sweep_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(listing.len(), 15);
    let mut rdr = csv::Reader::from_path(sweep_dir.join("aggregate.csv")).unwrap();
    let mut cells = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        let metrics: Vec<f64> = listing
            .iter()
            .filter(|e| e["cell"] == row[0])
            .map(|e| e["final_test_metric"].as_f64().unwrap())
            .collect();
        let (mean, sd) = mean_stddev(&metrics);
        assert_eq!(row[3].parse::<usize>().unwrap(), 5);
        assert!((row[1].parse::<f64>().unwrap() - mean).abs() < 1e-9);
        assert!((row[2].parse::<f64>().unwrap() - sd).abs() < 1e-9);
        cells += 1;
    }
    assert_eq!(cells, 3);

    let o = bin(&["analyze", sweep_dir.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["runs"], 15);
    let traj = std::fs::read_to_string(sweep_dir.join("analysis/trajectory.csv")).unwrap();
    // one row per evaluation step and run
    assert_eq!(traj.lines().count(), 1 + 6 * 15);
}

#[test]
fn analyze_reports_density_of_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run_dir) = prune(tmp.path(), &["--set", "schedule.final_density=1.0"]);
    let o = bin(&["analyze", run_dir.join("model.pinsmodl").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["models"][0]["overall_density"], 1.0);

    let o = bin(&["analyze", run_dir.to_str().unwrap(), "--out", tmp.path().join("rep").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    for f in ["summary.json", "rank.csv", "occupancy.csv", "trajectory.csv"] {
        assert!(tmp.path().join("rep").join(f).exists(), "{f}");
    }
}

#[test]
fn export_is_idempotent_and_bench_sizes_match_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run_dir) = prune(tmp.path(), &[]);
    let model = run_dir.join("model.pinsmodl");
    for quantize in [false, true] {
        let mut args = vec!["export", model.to_str().unwrap()];
        if quantize {
            args.push("--quantize");
        }
        let first = bin(&args, None);
        assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
        let bundle = PathBuf::from(stdout_json(&first)["bundle"].as_str().unwrap());
        let snapshot: Vec<(String, Vec<u8>)> =
            files(&bundle).into_iter().map(|n| (n.clone(), std::fs::read(bundle.join(&n)).unwrap())).collect();
        let second = bin(&args, None);
        assert_eq!(second.stdout, first.stdout);
        for (n, bytes) in &snapshot {
            assert_eq!(&std::fs::read(bundle.join(n)).unwrap(), bytes, "{n} changed");
        }

        let manifest: BundleManifest =
            serde_json::from_slice(&std::fs::read(bundle.join("manifest.json")).unwrap()).unwrap();
        let (_, stored) = load_bundle(&bundle).unwrap();
        let mut on_disk = 0;
        for (entry, m) in manifest.matrices.iter().zip(&stored) {
            let size = std::fs::read_dir(&bundle)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|x| x == "csr"))
                .find(|p| std::fs::read(p).unwrap() == m.to_bytes())
                .map(|p| std::fs::metadata(p).unwrap().len() as usize)
                .unwrap();
            assert_eq!(size, entry.bytes);
            assert_eq!(size, serialized_size(m.dtype(), m.dims().0, m.nnz()));
            on_disk += size;
        }
        assert_eq!(on_disk, manifest.sparse_bytes);

        let o = bin(&["bench", bundle.to_str().unwrap(), "--trials", "10"], None);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let report = stdout_json(&o);
        assert_eq!(report["sparse_bytes"].as_u64().unwrap() as usize, on_disk);
        assert_eq!(report["dense_bytes"].as_u64().unwrap() as usize, manifest.dense_bytes);
        if !quantize {
            assert!(report["max_rel_error"].as_f64().unwrap() <= 1e-5);
        }
    }
}

#[test]
fn bench_random_matrix() {
    let o = bin(&["bench", "--random", "256x128", "--sparsity", "0.8", "--trials", "10", "--seed", "4"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["dense_bytes"], 256 * 128 * 4);
    assert_eq!(r["trials"], 10);
    assert!(r["max_rel_error"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn sweep_with_a_failed_run_exits_1_and_keeps_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("o");
    let o = bin(
        &[
            "sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--set", "optimizer.kind=sgd", "optimizer.lr=0.01,1e30", "seeds=0..1",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let sweep_dir = std::fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let listing: Vec<Value> = serde_json::from_slice(&std::fs::read(sweep_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(listing.iter().filter(|e| e["ok"] == true).count(), 2);
    assert_eq!(listing.iter().filter(|e| e["ok"] == false).count(), 2);
    assert_eq!(files(&sweep_dir).iter().filter(|n| n.starts_with("summary-")).count(), 2);
}
