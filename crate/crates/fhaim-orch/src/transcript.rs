//! Workflow message transcript: one JSONL line per message, payload hashes
//! rather than bodies.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fhaim_core::dp::NoiseWindow;

use crate::OrchError;

/// The four logical entities of the workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Data Entity: owns the records, holds the encrypt capability.
    De,
    /// Compute Entity: runs the encrypted protocols, holds evaluate.
    Ce,
    /// Generator Entity: supplies the protocol manifest, holds nothing.
    Ge,
    /// Crypto Service Entity: holds decrypt behind the noised-flag gate.
    Cse,
}

/// What a message carries. The transcript never stores payload bodies, only
/// their kind and hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    ProtocolManifest,
    Capability,
    EncryptedData,
    EncryptedNoise,
    ProtocolNote,
    DecryptRequest,
    NoisyStatistics,
    SyntheticData,
    PlaintextRecords,
}

impl PayloadKind {
    /// Kinds whose contents are derived from the private records.
    pub fn data_derived(self) -> bool {
        matches!(
            self,
            PayloadKind::EncryptedData
                | PayloadKind::DecryptRequest
                | PayloadKind::NoisyStatistics
                | PayloadKind::SyntheticData
                | PayloadKind::PlaintextRecords
        )
    }
}

/// One recorded message. `noised` is set only on the measure/select
/// noise-addition paths; `provenance` chains a noised decryption back to its
/// window in the pre-sampled noise pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: u8,
    pub sender: Role,
    pub receiver: Role,
    pub kind: PayloadKind,
    pub payload_hash: String,
    pub noised: bool,
    pub provenance: Option<NoiseWindow>,
    pub detail: String,
    pub count: usize,
}

pub fn payload_hash(body: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(body);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn step_entries(&self, step: u8) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(move |e| e.step == step)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entry json"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self, OrchError> {
        let entries = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Transcript { entries })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), OrchError> {
        w.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(mut r: R) -> Result<Self, OrchError> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::from_jsonl(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(step: u8) -> TranscriptEntry {
        TranscriptEntry {
            step,
            sender: Role::Ce,
            receiver: Role::Cse,
            kind: PayloadKind::DecryptRequest,
            payload_hash: payload_hash(b"body"),
            noised: true,
            provenance: None,
            detail: "measure-a0".into(),
            count: 1,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = Transcript { entries: vec![entry(6), entry(7)] };
        let s = t.to_jsonl();
        assert_eq!(s.lines().count(), 2);
        let back = Transcript::from_jsonl(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn hash_is_stable_and_body_free() {
        let h = payload_hash(b"secret payload");
        assert_eq!(h.len(), 64);
        assert_eq!(h, payload_hash(b"secret payload"));
        let t = Transcript { entries: vec![entry(6)] };
        assert!(!t.to_jsonl().contains("secret"));
    }

    #[test]
    fn data_derived_classification() {
        assert!(PayloadKind::EncryptedData.data_derived());
        assert!(PayloadKind::SyntheticData.data_derived());
        assert!(!PayloadKind::ProtocolManifest.data_derived());
        assert!(!PayloadKind::Capability.data_derived());
        assert!(!PayloadKind::EncryptedNoise.data_derived());
    }
}
