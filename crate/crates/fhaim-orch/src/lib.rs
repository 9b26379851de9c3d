//! Four-entity FHAIM workflow orchestration: the Data Entity (DE), Compute
//! Entity (CE), Generator Entity (GE) and Crypto Service Entity (CSE) as
//! message-passing roles with structural trust-boundary enforcement, a JSONL
//! message transcript, and a post-hoc transcript auditor.

pub mod audit;
pub mod transcript;
pub mod transport;
pub mod workflow;

pub use audit::{audit_transcript, AuditExpectation, AuditReport};
pub use transcript::{PayloadKind, Role, Transcript, TranscriptEntry};
pub use transport::{InProcTransport, TcpTransport, Transport};
pub use workflow::{run_workflow, ProtocolManifest, WorkflowResult};

#[derive(Debug, thiserror::Error)]
pub enum OrchError {
    #[error("run failed: {0}")]
    Run(#[from] fhaim_core::aim::AimError),
    #[error("he error: {0}")]
    He(#[from] fhaim_core::he::HeError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol manifest failed signature verification")]
    ManifestRejected,
    #[error("transport closed before the transcript was collected")]
    TransportClosed,
    #[error("internal: message bus still shared at workflow end")]
    BusStillShared,
}
