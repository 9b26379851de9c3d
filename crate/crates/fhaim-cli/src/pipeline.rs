//! The end-to-end pipeline behind `fhaim run`: load + split, execute the
//! four-entity workflow, audit the transcript, compute utility metrics, and
//! emit artifacts.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use fhaim_core::aim::RunConfig;
use fhaim_core::encode::{load_dataset, Dataset};
use fhaim_core::he::BackendKind;
use fhaim_core::metrics::{train_eval_classifier, workload_error, MetricsReport};
use fhaim_core::protocols::NormVariant;
use fhaim_orch::{
    audit_transcript, run_workflow, AuditExpectation, AuditReport, InProcTransport, TcpTransport,
    Transport,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("encode: {0}")]
    Encode(#[from] fhaim_core::encode::EncodeError),
    #[error("run: {0}")]
    Orch(#[from] fhaim_orch::OrchError),
    #[error("metrics: {0}")]
    Metrics(#[from] fhaim_core::metrics::MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no binary target attribute in the schema")]
    NoBinaryTarget,
    #[error("transcript audit found violations: {0:?}")]
    AuditFailed(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TransportKind {
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EmitKind {
    Synthetic,
    Metrics,
    Transcript,
    All,
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub dataset: PathBuf,
    pub domain: PathBuf,
    pub epsilon: f64,
    pub delta: f64,
    pub norm: NormVariant,
    pub backend: BackendKind,
    pub rounds: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub transport: TransportKind,
    pub emit: EmitKind,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_hash: String,
    pub train_records: usize,
    pub test_records: usize,
    pub rounds_executed: usize,
    pub audit: AuditReport,
    pub emitted: Vec<String>,
}

pub struct PipelineOutput {
    pub report: MetricsReport,
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

/// The prediction target: the attribute named "class" if present, otherwise
/// the first binary attribute.
pub fn target_attribute(ds: &Dataset) -> Option<usize> {
    ds.schema.index_of("class").or_else(|| ds.schema.sizes().iter().position(|&s| s == 2))
}

pub fn run_pipeline(req: &RunRequest) -> Result<PipelineOutput, PipelineError> {
    let full = load_dataset(&req.dataset, &req.domain)?;
    let (train, test) = full.split(0.8, 42);
    let target = target_attribute(&train).ok_or(PipelineError::NoBinaryTarget)?;

    let config = RunConfig {
        eps: req.epsilon,
        delta: req.delta,
        norm: req.norm,
        backend: req.backend,
        rounds_override: req.rounds,
        seed: req.seed,
        ..Default::default()
    };
    let transport: Box<dyn Transport> = match req.transport {
        TransportKind::Inproc => Box::new(InProcTransport::default()),
        TransportKind::Tcp => Box::new(TcpTransport::loopback()?),
    };
    let result = run_workflow(&train, &config, transport)?;
    let audit = audit_transcript(&result.transcript, &AuditExpectation::from_result(&result));
    if !audit.clean() {
        return Err(PipelineError::AuditFailed(audit.violations));
    }

    let delta = workload_error(&train, &result.run.synthetic, &result.run.workload.cliques)?;
    let eval = train_eval_classifier(&result.run.synthetic, &test, target)?;

    let report = MetricsReport {
        delta,
        accuracy: eval.accuracy,
        f1: eval.macro_f1,
        single_class_training: eval.single_class_training,
        norm: format!("{:?}", req.norm).to_lowercase(),
        backend: format!("{:?}", req.backend).to_lowercase(),
        phase_ops: result.run.phase_ops,
        phase_seconds: result.run.phase_seconds,
        rounds_executed: result.run.rounds_executed,
        gauss_consumed: result.run.gauss_consumed,
        gumbel_consumed: result.run.gumbel_consumed,
        config: json!({
            "dataset": req.dataset,
            "domain": req.domain,
            "epsilon": if req.epsilon.is_infinite() { json!("inf") } else { json!(req.epsilon) },
            "delta": req.delta,
            "norm": format!("{:?}", req.norm).to_lowercase(),
            "backend": format!("{:?}", req.backend).to_lowercase(),
            "rounds": req.rounds,
            "seed": req.seed,
        }),
    };

    std::fs::create_dir_all(&req.out_dir)?;
    let mut emitted = Vec::new();
    let want = |k: EmitKind| req.emit == k || req.emit == EmitKind::All;
    if want(EmitKind::Synthetic) {
        let p = req.out_dir.join("synthetic.csv");
        result.run.synthetic.write_csv(&p)?;
        emitted.push("synthetic.csv".to_string());
    }
    if want(EmitKind::Metrics) {
        std::fs::write(req.out_dir.join("metrics.json"), report.to_json())?;
        emitted.push("metrics.json".to_string());
    }
    if want(EmitKind::Transcript) {
        result
            .transcript
            .write_jsonl(std::fs::File::create(req.out_dir.join("transcript.jsonl"))?)?;
        emitted.push("transcript.jsonl".to_string());
    }
    let manifest = RunManifest {
        schema_hash: train.schema.hash(),
        train_records: train.record_count(),
        test_records: test.record_count(),
        rounds_executed: result.run.rounds_executed,
        audit,
        emitted: emitted.clone(),
    };
    std::fs::write(
        req.out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest json"),
    )?;

    Ok(PipelineOutput { report, manifest, out_dir: req.out_dir.clone() })
}
