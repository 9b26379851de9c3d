//! Post-hoc transcript audit against the trust model: no plaintext leaves
//! the data owner, every decryption the crypto service performed was noised
//! (or the run was explicitly audited as non-private), the generator never
//! sees data-derived payloads, and the decryption count matches what the run
//! shape implies.

use serde::{Deserialize, Serialize};

use crate::transcript::{PayloadKind, Role, Transcript};
use crate::workflow::WorkflowResult;

/// What the run shape implies the transcript must look like.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditExpectation {
    pub attr_count: usize,
    pub rounds: usize,
    pub candidates_per_round: usize,
    pub batch_scores: bool,
    /// ε = ∞ run: un-noised decryption is explicitly audited and allowed
    pub eps_infinite: bool,
}

impl AuditExpectation {
    pub fn from_result(result: &WorkflowResult) -> Self {
        AuditExpectation {
            attr_count: result.run.accountant.attr_count,
            rounds: result.run.rounds_executed,
            candidates_per_round: result.run.workload.cliques.len(),
            batch_scores: result.manifest.batch_scores,
            eps_infinite: result.run.accountant.eps_total.is_infinite(),
        }
    }

    /// d init measures + one measure per round + per-round select score
    /// decryptions (one per candidate, or a single batched one).
    pub fn expected_decryptions(&self) -> usize {
        let score_decrypts = if self.batch_scores { 1 } else { self.candidates_per_round };
        self.attr_count + self.rounds * (1 + score_decrypts)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub violations: Vec<String>,
    pub decryptions_observed: usize,
    pub decryptions_expected: usize,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn audit_transcript(transcript: &Transcript, expect: &AuditExpectation) -> AuditReport {
    let mut v = Vec::new();

    // workflow shape: one manifest, one data upload, one synthetic delivery
    let manifests = transcript
        .entries
        .iter()
        .filter(|e| e.step == 0 && e.kind == PayloadKind::ProtocolManifest && e.sender == Role::Ge)
        .count();
    if manifests != 1 {
        v.push(format!("expected exactly one step-0 manifest upload, saw {manifests}"));
    }
    let uploads =
        transcript.entries.iter().filter(|e| e.kind == PayloadKind::EncryptedData).count();
    if uploads != 1 {
        v.push(format!("expected exactly one step-2 data upload, saw {uploads}"));
    }
    let deliveries = transcript
        .entries
        .iter()
        .filter(|e| e.kind == PayloadKind::SyntheticData && e.receiver == Role::De)
        .count();
    if deliveries != 1 {
        v.push(format!("expected exactly one step-9 synthetic delivery, saw {deliveries}"));
    }

    // no plaintext record ever leaves DE; DE sends only ciphertexts
    for e in &transcript.entries {
        if e.sender == Role::De
            && !matches!(e.kind, PayloadKind::EncryptedData | PayloadKind::EncryptedNoise)
        {
            v.push(format!("DE sent a non-ciphertext payload ({:?}) at step {}", e.kind, e.step));
        }
        if e.kind == PayloadKind::PlaintextRecords {
            v.push(format!("plaintext records appeared on the wire at step {}", e.step));
        }
    }

    // DE is idle between steps 2 and 9
    for e in &transcript.entries {
        if e.sender == Role::De && (3..=8).contains(&e.step) {
            v.push(format!("DE participated at step {} ({})", e.step, e.detail));
        }
    }

    // every CSE decryption carried the noised flag (or the run is audited
    // non-private), and noised decryptions chain back to a noise window
    let mut decryptions = 0usize;
    for e in transcript.step_entries(6) {
        decryptions += 1;
        if e.kind != PayloadKind::DecryptRequest || e.receiver != Role::Cse {
            v.push(format!("malformed step-6 entry: {:?} to {:?}", e.kind, e.receiver));
            continue;
        }
        if !e.noised && !expect.eps_infinite {
            v.push(format!("un-noised decryption of '{}' in a private run", e.detail));
        }
        if e.noised && e.provenance.is_none() {
            v.push(format!("noised decryption of '{}' lacks noise-window provenance", e.detail));
        }
    }

    // GE receives nothing data-derived after its manifest upload
    for e in &transcript.entries {
        if e.receiver == Role::Ge && e.kind.data_derived() {
            v.push(format!("GE received a data-derived payload ({:?}) at step {}", e.kind, e.step));
        }
    }

    // decryption count accounting
    let expected = expect.expected_decryptions();
    if decryptions != expected {
        v.push(format!("decryption count {decryptions} != expected {expected}"));
    }
    let responses = transcript.step_entries(7).count();
    if responses > decryptions {
        v.push(format!("{responses} step-7 responses exceed {decryptions} requests"));
    }

    AuditReport { violations: v, decryptions_observed: decryptions, decryptions_expected: expected }
}
