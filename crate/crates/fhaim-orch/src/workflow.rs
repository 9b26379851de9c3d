//! The four-entity workflow: keygen and capability distribution, the GE
//! protocol manifest, and the encrypted training loop driven through a
//! transcript-recording observer and decrypt gate.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use fhaim_core::aim::{self, RunConfig, RunEvent, RunObserver, RunResult, SEED_TAG_HE};
use fhaim_core::dp::NoiseWindow;
use fhaim_core::encode::Dataset;
use fhaim_core::he::{Ciphertext, DecryptKey, HeEngine, HeParams};
use fhaim_core::protocols::{DecryptGate, GateRecord, NormVariant, ProtocolError};

use crate::transcript::{payload_hash, PayloadKind, Role, Transcript, TranscriptEntry};
use crate::transport::Transport;
use crate::OrchError;

/// Step ⓪ payload: a signed manifest of protocol identifiers and parameters.
/// The GE ships identifiers, not mobile code; CE maps them to its own
/// implementations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolManifest {
    pub protocols: Vec<String>,
    pub norm: NormVariant,
    pub poly_scale: f64,
    pub batch_scores: bool,
    pub signature: String,
}

impl ProtocolManifest {
    pub fn new(config: &RunConfig) -> Self {
        let protocols =
            vec!["pi-comp".to_string(), "pi-select".to_string(), "pi-measure".to_string()];
        let body = serde_json::json!({
            "protocols": protocols,
            "norm": config.norm,
            "poly_scale": config.poly_scale,
            "batch_scores": config.batch_scores,
        });
        let signature = payload_hash(format!("ge-signing-key:{body}").as_bytes());
        ProtocolManifest {
            protocols,
            norm: config.norm,
            poly_scale: config.poly_scale,
            batch_scores: config.batch_scores,
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        let body = serde_json::json!({
            "protocols": self.protocols,
            "norm": self.norm,
            "poly_scale": self.poly_scale,
            "batch_scores": self.batch_scores,
        });
        self.signature == payload_hash(format!("ge-signing-key:{body}").as_bytes())
    }
}

/// Ordered message log shared by the gate and the observer; every recorded
/// entry is also forwarded through the transport.
pub(crate) struct Bus {
    transport: Box<dyn Transport>,
}

impl Bus {
    fn record(&mut self, entry: TranscriptEntry) -> Result<(), OrchError> {
        self.transport.send(&entry)
    }
}

/// CSE state machine: the only place a decrypt capability is held. Requests
/// arrive as step-⑥ messages; responses leave as step-⑦. The gate refuses
/// un-noised requests unless the run is ε = ∞-audited.
pub struct CseGate<'a> {
    engine: &'a HeEngine,
    key: DecryptKey,
    allow_unnoised: bool,
    bus: Rc<RefCell<Bus>>,
    pub records: Vec<GateRecord>,
}

impl DecryptGate for CseGate<'_> {
    fn decrypt(
        &mut self,
        ct: &Ciphertext,
        noised: bool,
        provenance: Option<NoiseWindow>,
        purpose: &str,
    ) -> Result<Vec<f64>, ProtocolError> {
        let mut bus = self.bus.borrow_mut();
        bus.record(TranscriptEntry {
            step: 6,
            sender: Role::Ce,
            receiver: Role::Cse,
            kind: PayloadKind::DecryptRequest,
            payload_hash: payload_hash(ct.to_json().as_bytes()),
            noised,
            provenance,
            detail: purpose.into(),
            count: 1,
        })
        .map_err(|e| ProtocolError::GateRefused(e.to_string()))?;
        if !noised && !self.allow_unnoised {
            return Err(ProtocolError::GateRefused(format!(
                "un-noised decryption requested for {purpose}"
            )));
        }
        let values = self.engine.decrypt(ct, &self.key)?;
        bus.record(TranscriptEntry {
            step: 7,
            sender: Role::Cse,
            receiver: Role::Ce,
            kind: PayloadKind::NoisyStatistics,
            payload_hash: payload_hash(
                serde_json::to_string(&values).expect("stat json").as_bytes(),
            ),
            noised,
            provenance,
            detail: purpose.into(),
            count: values.len(),
        })
        .map_err(|e| ProtocolError::GateRefused(e.to_string()))?;
        self.records.push(GateRecord { purpose: purpose.into(), noised, provenance });
        Ok(values)
    }
}

/// Maps run events to workflow steps ②–⑨.
struct TranscriptObserver {
    bus: Rc<RefCell<Bus>>,
    error: Option<OrchError>,
}

impl TranscriptObserver {
    fn record(&mut self, entry: TranscriptEntry) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.bus.borrow_mut().record(entry) {
            self.error = Some(e);
        }
    }
}

impl RunObserver for TranscriptObserver {
    fn on_event(&mut self, event: RunEvent) {
        let note = |step: u8, detail: String, count: usize| TranscriptEntry {
            step,
            sender: Role::Ce,
            receiver: Role::Ce,
            kind: PayloadKind::ProtocolNote,
            payload_hash: String::new(),
            noised: false,
            provenance: None,
            detail,
            count,
        };
        match event {
            RunEvent::DataEncrypted { record_count, column_ciphertexts } => {
                self.record(TranscriptEntry {
                    step: 2,
                    sender: Role::De,
                    receiver: Role::Ce,
                    kind: PayloadKind::EncryptedData,
                    payload_hash: payload_hash(format!("enc-data:{record_count}").as_bytes()),
                    noised: false,
                    provenance: None,
                    detail: format!("one-hot columns for {record_count} records"),
                    count: column_ciphertexts,
                });
            }
            RunEvent::NoiseUploaded { n_gaussian, n_gumbel } => {
                self.record(TranscriptEntry {
                    step: 2,
                    sender: Role::De,
                    receiver: Role::Ce,
                    kind: PayloadKind::EncryptedNoise,
                    payload_hash: payload_hash(
                        format!("enc-noise:{n_gaussian}:{n_gumbel}").as_bytes(),
                    ),
                    noised: false,
                    provenance: None,
                    detail: "unit gaussian + gumbel noise pool".into(),
                    count: n_gaussian + n_gumbel,
                });
            }
            RunEvent::WorkloadComputed { cliques } => {
                self.record(note(3, "pi-comp over full workload".into(), cliques));
            }
            RunEvent::Selected { round, outcome, candidates } => {
                self.record(note(
                    4,
                    format!("pi-select round {round} chose {}", outcome.chosen.label()),
                    candidates,
                ));
            }
            RunEvent::Measured { phase, clique, omega, window } => {
                let mut e = note(5, format!("pi-measure {:?} {}", phase, clique.label()), omega);
                e.noised = window.is_some();
                e.provenance = window;
                self.record(e);
            }
            RunEvent::ModelRefit { measurements } => {
                self.record(note(8, "clear-domain model refit".into(), measurements));
            }
            RunEvent::SyntheticReady { rows } => {
                self.record(TranscriptEntry {
                    step: 9,
                    sender: Role::Ce,
                    receiver: Role::De,
                    kind: PayloadKind::SyntheticData,
                    payload_hash: payload_hash(format!("synthetic:{rows}").as_bytes()),
                    noised: false,
                    provenance: None,
                    detail: "synthetic dataset delivery".into(),
                    count: rows,
                });
            }
        }
    }
}

pub struct WorkflowResult {
    pub run: RunResult,
    pub transcript: Transcript,
    pub manifest: ProtocolManifest,
    pub gate_records: Vec<GateRecord>,
}

/// Executes the full workflow over the given transport: step ⓪ manifest
/// upload, ① capability distribution, ② data/noise upload, ③–⑤ encrypted
/// protocols, ⑥–⑦ gated decryption, ⑧ fitting, ⑨ synthetic delivery.
pub fn run_workflow(
    dataset: &Dataset,
    config: &RunConfig,
    transport: Box<dyn Transport>,
) -> Result<WorkflowResult, OrchError> {
    let params: HeParams = config.he_params();
    // CSE is the key authority: it mints the context, keeps decrypt, and
    // hands encrypt to DE and evaluate to CE.
    let (engine, keys) =
        HeEngine::keygen_seeded(params, aim::derive_seed(config.seed, SEED_TAG_HE))?;
    let allow_unnoised = config.eps.is_infinite();

    let bus = Rc::new(RefCell::new(Bus { transport }));

    // step ⓪: GE uploads the signed protocol manifest to CE
    let manifest = ProtocolManifest::new(config);
    if !manifest.verify() {
        return Err(OrchError::ManifestRejected);
    }
    bus.borrow_mut().record(TranscriptEntry {
        step: 0,
        sender: Role::Ge,
        receiver: Role::Ce,
        kind: PayloadKind::ProtocolManifest,
        payload_hash: payload_hash(
            serde_json::to_string(&manifest).expect("manifest json").as_bytes(),
        ),
        noised: false,
        provenance: None,
        detail: manifest.protocols.join(","),
        count: manifest.protocols.len(),
    })?;

    // step ①: CSE publishes the encrypt capability to DE
    bus.borrow_mut().record(TranscriptEntry {
        step: 1,
        sender: Role::Cse,
        receiver: Role::De,
        kind: PayloadKind::Capability,
        payload_hash: payload_hash(b"encrypt-capability"),
        noised: false,
        provenance: None,
        detail: "public encryption capability".into(),
        count: 1,
    })?;

    let mut gate = CseGate {
        engine: &engine,
        key: keys.decrypt.clone(),
        allow_unnoised,
        bus: bus.clone(),
        records: Vec::new(),
    };
    let mut observer = TranscriptObserver { bus: bus.clone(), error: None };

    let run = aim::run_with(
        dataset,
        config,
        &engine,
        &keys.encrypt,
        &keys.evaluate,
        &mut gate,
        &mut observer,
    )?;
    if let Some(e) = observer.error.take() {
        return Err(e);
    }

    let gate_records = std::mem::take(&mut gate.records);
    drop(gate);
    drop(observer);
    let bus = match Rc::try_unwrap(bus) {
        Ok(cell) => cell.into_inner(),
        Err(_) => return Err(OrchError::BusStillShared),
    };
    let transcript = bus.transport.finish()?;
    Ok(WorkflowResult { run, transcript, manifest, gate_records })
}
