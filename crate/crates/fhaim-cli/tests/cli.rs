//! Contract tests for the `fhaim` binary and the run pipeline.

use std::process::Command;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use fhaim_cli::pipeline::{run_pipeline, EmitKind, RunRequest, TransportKind};
use fhaim_core::encode::{AttributeDomain, AttributeKind, Dataset, DatasetSchema};
use fhaim_core::he::BackendKind;
use fhaim_core::protocols::NormVariant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fhaim"))
}

/// Writes a small 3-attribute dataset + domain file and returns their paths.
fn toy_files(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let sizes = [2usize, 3, 2];
    let attributes = vec![
        AttributeDomain {
            name: "class".into(),
            kind: AttributeKind::Categorical { labels: vec!["c0".into(), "c1".into()] },
        },
        AttributeDomain {
            name: "f1".into(),
            kind: AttributeKind::Categorical {
                labels: vec!["a".into(), "b".into(), "c".into()],
            },
        },
        AttributeDomain {
            name: "f2".into(),
            kind: AttributeKind::Categorical { labels: vec!["x".into(), "y".into()] },
        },
    ];
    let schema = Arc::new(DatasetSchema::new(attributes.clone()).unwrap());
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let rows: Vec<Vec<u32>> = (0..80)
        .map(|_| sizes.iter().map(|&s| rng.gen_range(0..s as u32)).collect())
        .collect();
    let ds = Dataset::new(schema, rows).unwrap();
    let csv = dir.join("toy.csv");
    ds.write_csv(&csv).unwrap();
    let domain = dir.join("toy-domain.json");
    std::fs::write(
        &domain,
        serde_json::json!({
            "class": ["c0", "c1"],
            "f1": ["a", "b", "c"],
            "f2": ["x", "y"],
        })
        .to_string(),
    )
    .unwrap();
    (csv, domain)
}

fn toy_request(dir: &std::path::Path) -> RunRequest {
    let (csv, domain) = toy_files(dir);
    RunRequest {
        dataset: csv,
        domain,
        epsilon: f64::INFINITY,
        delta: 1e-9,
        norm: NormVariant::L2sq,
        backend: BackendKind::Exact,
        rounds: Some(2),
        seed: 3,
        out_dir: dir.join("out"),
        transport: TransportKind::Inproc,
        emit: EmitKind::All,
    }
}

#[test]
fn smoke_run_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, domain) = toy_files(dir.path());
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--dataset"])
        .arg(&csv)
        .arg("--domain")
        .arg(&domain)
        .args(["--epsilon", "inf", "--norm", "l2sq", "--backend", "exact", "--rounds", "2"])
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "stderr: {}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(report["delta"].as_f64().unwrap() >= 0.0);
    for f in ["synthetic.csv", "metrics.json", "transcript.jsonl", "run_manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn l1poly_is_flagged_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut req = toy_request(dir.path());
    req.norm = NormVariant::L1poly;
    let out = run_pipeline(&req).unwrap();
    assert_eq!(out.report.norm, "l1poly");
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(req.out_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(written["norm"], "l1poly");
}

#[test]
fn missing_domain_file_exits_2_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = toy_files(dir.path());
    let output = bin()
        .args(["run", "--dataset"])
        .arg(&csv)
        .args(["--domain", "/nonexistent/domain.json", "--epsilon", "1.0"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let record: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).trim()).unwrap();
    assert!(record["error"].is_string());
}

#[test]
fn invalid_epsilon_is_rejected() {
    let output = bin().args(["run", "--dataset", "x", "--domain", "y", "--epsilon", "-3"]).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn report_is_deterministic_up_to_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let zero_times = |mut v: serde_json::Value| {
        v["phase_seconds"] = serde_json::json!(null);
        v
    };
    let a = run_pipeline(&toy_request(dir.path())).unwrap();
    let mut req_b = toy_request(dir.path());
    req_b.out_dir = dir.path().join("out2");
    let b = run_pipeline(&req_b).unwrap();
    let ja = zero_times(serde_json::from_str(&a.report.to_json()).unwrap());
    let jb = zero_times(serde_json::from_str(&b.report.to_json()).unwrap());
    assert_eq!(ja, jb);
}

#[test]
fn tcp_transport_matches_inproc_metrics() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_pipeline(&toy_request(dir_a.path())).unwrap();
    let mut req = toy_request(dir_b.path());
    req.transport = TransportKind::Tcp;
    let b = run_pipeline(&req).unwrap();
    assert_eq!(a.report.delta, b.report.delta);
    assert_eq!(a.report.accuracy, b.report.accuracy);
}

#[test]
fn gen_data_writes_the_three_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["gen-data", "--out-dir"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    for name in ["cancer", "compas", "diabetes"] {
        assert!(dir.path().join(format!("{name}.csv")).exists());
        assert!(dir.path().join(format!("{name}-domain.json")).exists());
    }
}

#[test]
fn private_noisy_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut req = toy_request(dir.path());
    req.epsilon = 1.0;
    req.backend = BackendKind::Noisy;
    let out = run_pipeline(&req).unwrap();
    assert_eq!(out.report.backend, "noisy");
    assert!(out.manifest.audit.clean());
}
