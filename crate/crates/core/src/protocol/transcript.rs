use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::angles::DyadicAngle;
use crate::graphstate::NodeId;
use crate::qsim::QubitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Oscar,
    Bob,
    /// The simulator attached to Bob's interface of the ideal resource.
    Simulator,
    /// The ideal resource itself.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    QubitToBob { node: NodeId, qubit: QubitId },
    AngleToBob { node: NodeId, delta: DyadicAngle },
    OutcomeFromBob { node: NodeId, s_tilde: u8 },
    OutputQubits { nodes: Vec<NodeId>, qubits: Vec<QubitId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u32,
    pub from: Party,
    pub to: Party,
    pub message: Message,
}

impl Envelope {
    pub fn touches(&self, p: Party) -> bool {
        self.from == p || self.to == p
    }
}

/// Everything a run knows that must never reach Bob.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Secrets {
    pub r: BTreeMap<NodeId, u8>,
    pub t: BTreeMap<NodeId, u8>,
    pub pads: BTreeMap<NodeId, DyadicAngle>,
    /// `φ′` / `ψ′` as computed by the owning client.
    pub corrected_angles: BTreeMap<NodeId, DyadicAngle>,
    pub signals_alice: BTreeMap<NodeId, u8>,
    pub signals_oscar: BTreeMap<NodeId, u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub envelopes: Vec<Envelope>,
    pub secrets: Secrets,
    /// Deviations from the honest script, e.g. a qubit Bob never measured.
    pub notes: Vec<String>,
}

/// What crosses Bob's interface, and nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobTranscript {
    pub envelopes: Vec<Envelope>,
}

impl Transcript {
    pub(crate) fn push(&mut self, from: Party, to: Party, message: Message) {
        let seq = self.envelopes.len() as u32;
        self.envelopes.push(Envelope { seq, from, to, message });
    }

    pub fn bob_view(&self) -> BobTranscript {
        BobTranscript {
            envelopes: self.envelopes.iter().filter(|e| e.touches(Party::Bob)).cloned().collect(),
        }
    }

    /// Messages exchanged directly between the two clients.
    pub fn client_to_client(&self) -> usize {
        self.envelopes
            .iter()
            .filter(|e| {
                matches!(
                    (e.from, e.to),
                    (Party::Alice, Party::Oscar) | (Party::Oscar, Party::Alice)
                )
            })
            .count()
    }

    pub fn angle_messages(&self) -> impl Iterator<Item = (NodeId, DyadicAngle)> + '_ {
        self.envelopes.iter().filter_map(|e| match e.message {
            Message::AngleToBob { node, delta } => Some((node, delta)),
            _ => None,
        })
    }

    pub fn qubit_messages(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.envelopes.iter().filter_map(|e| match e.message {
            Message::QubitToBob { node, .. } => Some(node),
            _ => None,
        })
    }
}
