//! The four election messages, cost commitments and message authentication.

use std::collections::BTreeSet;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::cost_model::CostOfAnalysis;
use crate::topology::NodeId;

pub type Nonce = u64;

/// Binding commitment to a `(cost, nonce)` pair.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Commitment(pub [u8; 32]);

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({self})")
    }
}

impl fmt::Display for Commitment {
    /// First eight bytes in hex; enough to tell commitments apart in traces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Hash used to commit to a cost before revealing it.
pub trait CommitmentScheme: Sync {
    fn commit(&self, cost: CostOfAnalysis, nonce: Nonce) -> Commitment;
}

/// SHA-256 over the little-endian bytes of the cost bits followed by the nonce.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sha256Commitments;

impl CommitmentScheme for Sha256Commitments {
    fn commit(&self, cost: CostOfAnalysis, nonce: Nonce) -> Commitment {
        let mut h = Sha256::new();
        h.update(cost.to_bits().to_le_bytes());
        h.update(nonce.to_le_bytes());
        Commitment(h.finalize().into())
    }
}

/// A vote for `candidate`, carrying the cheapest alternative the voter saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    pub voter: NodeId,
    pub candidate: NodeId,
    pub second_cost: CostOfAnalysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Hello,
    BeginElection,
    Vote,
    Acknowledge,
}

impl MessageKind {
    pub const ALL: [MessageKind; 4] = [
        MessageKind::Hello,
        MessageKind::BeginElection,
        MessageKind::Vote,
        MessageKind::Acknowledge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "Hello",
            MessageKind::BeginElection => "BeginElection",
            MessageKind::Vote => "Vote",
            MessageKind::Acknowledge => "Acknowledge",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElectionMessage {
    Hello {
        sender: NodeId,
        commitment: Commitment,
    },
    BeginElection {
        sender: NodeId,
        cost: CostOfAnalysis,
        nonce: Nonce,
    },
    Vote(Vote),
    Acknowledge {
        leader: NodeId,
        payment: f64,
        votes: Vec<Vote>,
    },
}

impl ElectionMessage {
    pub fn sender(&self) -> NodeId {
        match self {
            ElectionMessage::Hello { sender, .. } | ElectionMessage::BeginElection { sender, .. } => *sender,
            ElectionMessage::Vote(v) => v.voter,
            ElectionMessage::Acknowledge { leader, .. } => *leader,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            ElectionMessage::Hello { .. } => MessageKind::Hello,
            ElectionMessage::BeginElection { .. } => MessageKind::BeginElection,
            ElectionMessage::Vote(_) => MessageKind::Vote,
            ElectionMessage::Acknowledge { .. } => MessageKind::Acknowledge,
        }
    }

    /// Short payload description for traces.
    pub fn summary(&self) -> String {
        match self {
            ElectionMessage::Hello { commitment, .. } => format!("commitment={commitment}"),
            ElectionMessage::BeginElection { cost, .. } => format!("cost={cost}"),
            ElectionMessage::Vote(v) => format!("candidate={} second_cost={}", v.candidate, v.second_cost),
            ElectionMessage::Acknowledge { payment, votes, .. } => {
                let voters: Vec<String> = votes.iter().map(|v| v.voter.to_string()).collect();
                format!("payment={payment} voters=[{}]", voters.join(","))
            }
        }
    }
}

/// Opaque authenticity token attached by the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct SignedMessage {
    pub message: ElectionMessage,
    pub signature: Signature,
}

/// Signs outgoing messages and checks incoming ones.
pub trait Authenticator: Sync {
    fn sign(&self, message: &ElectionMessage) -> Signature;
    fn verify(&self, signed: &SignedMessage) -> bool;
}

/// Accepts every message; the default when authentication is not under test.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl Authenticator for AcceptAll {
    fn sign(&self, message: &ElectionMessage) -> Signature {
        Signature(message.sender().0 as u64)
    }

    fn verify(&self, _signed: &SignedMessage) -> bool {
        true
    }
}

/// Treats every message claimed by one of `forged` as a forgery.
#[derive(Debug, Clone, Default)]
pub struct RejectSenders {
    pub forged: BTreeSet<NodeId>,
}

impl Authenticator for RejectSenders {
    fn sign(&self, message: &ElectionMessage) -> Signature {
        Signature(message.sender().0 as u64)
    }

    fn verify(&self, signed: &SignedMessage) -> bool {
        !self.forged.contains(&signed.message.sender())
    }
}
