//! Per-node election state machine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::message::{Authenticator, Commitment, CommitmentScheme, ElectionMessage, MessageKind, Nonce, SignedMessage, Vote};
use super::{choose_vote, tally_with, VoteChoice};
use crate::cost_model::CostOfAnalysis;
use crate::payment::{compute_payment_with, Payment, PaymentRule};
use crate::topology::NodeId;

/// Payment claims are compared to the recomputed value at this tolerance.
const PAYMENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    /// Hello sent, collecting neighbor commitments until T1.
    AwaitHello,
    /// Cost revealed, collecting neighbor reveals until T2.
    AwaitCosts,
    /// Cheapest in its own candidate set; collecting votes until T3.
    SelfCandidate,
    /// Voted for a neighbor; may still collect votes from others until T3.
    Voted,
    Ordinary,
    Leader,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Timer {
    T1,
    T2,
    T3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FsmEvent {
    RoundStart,
    Deliver(SignedMessage),
    Expire(Timer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipients {
    Neighbors,
    One(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Recipients,
    pub message: SignedMessage,
}

/// What a node reveals in `BeginElection`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reveal {
    #[default]
    Honest,
    /// Reveals this cost instead of the committed one.
    Tampered(CostOfAnalysis),
}

/// Out-of-protocol input. The offending event is dropped and the state is
/// left unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolViolation {
    #[error("{kind} from {from} arrived in phase {phase}")]
    OutOfPhase { phase: Phase, kind: MessageKind, from: NodeId },
    #[error("timer {timer:?} fired in phase {phase}")]
    UnexpectedTimer { phase: Phase, timer: Timer },
    #[error("round start in phase {0}")]
    UnexpectedStart(Phase),
    #[error("bad signature on {kind} from {from}")]
    BadSignature { kind: MessageKind, from: NodeId },
    #[error("{kind} from non-neighbor {from}")]
    NotANeighbor { kind: MessageKind, from: NodeId },
    #[error("{kind} from excluded node {from}")]
    ExcludedSender { kind: MessageKind, from: NodeId },
    #[error("duplicate {kind} from {from}")]
    Duplicate { kind: MessageKind, from: NodeId },
    #[error("vote from {from} names {named}")]
    ForeignVote { from: NodeId, named: NodeId },
}

/// Shared, read-only round parameters.
#[derive(Clone, Copy)]
pub struct FsmContext<'a> {
    pub budget: f64,
    pub rule: PaymentRule,
    pub scheme: &'a dyn CommitmentScheme,
    pub auth: &'a dyn Authenticator,
}

#[derive(Debug, Clone)]
pub struct NodeRuntimeState {
    id: NodeId,
    phase: Phase,
    neighbors: BTreeSet<NodeId>,
    cost: CostOfAnalysis,
    nonce: Nonce,
    reveal: Reveal,
    payment_inflation: f64,
    commitments: BTreeMap<NodeId, Commitment>,
    revealed: BTreeMap<NodeId, CostOfAnalysis>,
    reveal_nonces: BTreeMap<NodeId, Nonce>,
    excluded: BTreeSet<NodeId>,
    leadernode: NodeId,
    leader: bool,
    service_table: Vec<NodeId>,
    reputation_table: BTreeMap<NodeId, f64>,
    received_votes: Vec<Vote>,
    my_vote: Option<Vote>,
    payment: Option<Payment>,
    disputed: BTreeSet<NodeId>,
}

impl NodeRuntimeState {
    pub fn new(id: NodeId, neighbors: BTreeSet<NodeId>, cost: CostOfAnalysis, nonce: Nonce) -> Self {
        NodeRuntimeState {
            id,
            phase: Phase::Idle,
            neighbors,
            cost,
            nonce,
            reveal: Reveal::Honest,
            payment_inflation: 0.0,
            commitments: BTreeMap::new(),
            revealed: BTreeMap::new(),
            reveal_nonces: BTreeMap::new(),
            excluded: BTreeSet::new(),
            leadernode: id,
            leader: false,
            service_table: Vec::new(),
            reputation_table: BTreeMap::new(),
            received_votes: Vec::new(),
            my_vote: None,
            payment: None,
            disputed: BTreeSet::new(),
        }
    }

    pub fn with_reveal(mut self, reveal: Reveal) -> Self {
        self.reveal = reveal;
        self
    }

    /// Makes a leader overstate its payment by `extra` in its `Acknowledge`.
    pub fn with_payment_inflation(mut self, extra: f64) -> Self {
        self.payment_inflation = extra;
        self
    }

    pub fn with_reputation_table(mut self, table: BTreeMap<NodeId, f64>) -> Self {
        self.reputation_table = table;
        self
    }

    pub fn id(&self) -> NodeId {
        self.id
    }
    pub fn neighbors(&self) -> &BTreeSet<NodeId> {
        &self.neighbors
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn leader(&self) -> bool {
        self.leader
    }
    pub fn leadernode(&self) -> NodeId {
        self.leadernode
    }
    pub fn service_table(&self) -> &[NodeId] {
        &self.service_table
    }
    pub fn reputation_table(&self) -> &BTreeMap<NodeId, f64> {
        &self.reputation_table
    }
    /// Neighbors this node dropped from the round (silent or failed reveal).
    pub fn excluded(&self) -> &BTreeSet<NodeId> {
        &self.excluded
    }
    pub fn received_votes(&self) -> &[Vote] {
        &self.received_votes
    }
    pub fn my_vote(&self) -> Option<&Vote> {
        self.my_vote.as_ref()
    }
    /// The payment this node computed for itself as leader.
    pub fn payment(&self) -> Option<&Payment> {
        self.payment.as_ref()
    }
    /// Leaders whose `Acknowledge` failed this node's payment check.
    pub fn disputed(&self) -> &BTreeSet<NodeId> {
        &self.disputed
    }
    pub fn revealed(&self) -> &BTreeMap<NodeId, CostOfAnalysis> {
        &self.revealed
    }

    /// The timer this phase is waiting on, if any.
    pub fn armed_timer(&self) -> Option<Timer> {
        match self.phase {
            Phase::AwaitHello => Some(Timer::T1),
            Phase::AwaitCosts => Some(Timer::T2),
            Phase::SelfCandidate | Phase::Voted => Some(Timer::T3),
            _ => None,
        }
    }

    fn active_neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbors.iter().copied().filter(|n| !self.excluded.contains(n))
    }

    fn signed(&self, ctx: &FsmContext<'_>, message: ElectionMessage) -> SignedMessage {
        SignedMessage { signature: ctx.auth.sign(&message), message }
    }

    fn broadcast(&self, ctx: &FsmContext<'_>, message: ElectionMessage) -> Outgoing {
        Outgoing { to: Recipients::Neighbors, message: self.signed(ctx, message) }
    }

    /// Applies one event. On a violation the state is not modified.
    pub fn step(&mut self, event: FsmEvent, ctx: &FsmContext<'_>) -> Result<Vec<Outgoing>, ProtocolViolation> {
        match event {
            FsmEvent::RoundStart => self.on_start(ctx),
            FsmEvent::Expire(timer) => self.on_timer(timer, ctx),
            FsmEvent::Deliver(signed) => self.on_message(signed, ctx).map(|()| Vec::new()),
        }
    }

    fn on_start(&mut self, ctx: &FsmContext<'_>) -> Result<Vec<Outgoing>, ProtocolViolation> {
        if self.phase != Phase::Idle {
            return Err(ProtocolViolation::UnexpectedStart(self.phase));
        }
        let hello = ElectionMessage::Hello {
            sender: self.id,
            commitment: ctx.scheme.commit(self.cost, self.nonce),
        };
        self.phase = Phase::AwaitHello;
        Ok(vec![self.broadcast(ctx, hello)])
    }

    fn on_timer(&mut self, timer: Timer, ctx: &FsmContext<'_>) -> Result<Vec<Outgoing>, ProtocolViolation> {
        if self.armed_timer() != Some(timer) {
            return Err(ProtocolViolation::UnexpectedTimer { phase: self.phase, timer });
        }
        match timer {
            Timer::T1 => {
                let silent: Vec<NodeId> = self
                    .neighbors
                    .iter()
                    .copied()
                    .filter(|n| !self.commitments.contains_key(n))
                    .collect();
                self.excluded.extend(silent);
                if self.active_neighbors().next().is_none() {
                    // Nobody to elect with: run our own IDS.
                    self.phase = Phase::SelfCandidate;
                    return Ok(Vec::new());
                }
                let cost = match self.reveal {
                    Reveal::Honest => self.cost,
                    Reveal::Tampered(c) => c,
                };
                let reveal = ElectionMessage::BeginElection { sender: self.id, cost, nonce: self.nonce };
                self.phase = Phase::AwaitCosts;
                Ok(vec![self.broadcast(ctx, reveal)])
            }
            Timer::T2 => {
                let mut rejected = Vec::new();
                for n in self.active_neighbors() {
                    let ok = match (self.commitments.get(&n), self.revealed.get(&n)) {
                        (Some(commitment), Some(&cost)) => ctx.scheme.commit(cost, self.nonce_of(n)) == *commitment,
                        _ => false,
                    };
                    if !ok {
                        rejected.push(n);
                    }
                }
                self.excluded.extend(rejected);
                let mut candidates: BTreeMap<NodeId, CostOfAnalysis> =
                    self.active_neighbors().map(|n| (n, self.revealed[&n])).collect();
                candidates.insert(self.id, self.cost);
                match choose_vote(self.id, &candidates).expect("own cost is present") {
                    VoteChoice::SelfCandidate { .. } => {
                        self.phase = Phase::SelfCandidate;
                        Ok(Vec::new())
                    }
                    VoteChoice::Vote(vote) => {
                        self.my_vote = Some(vote);
                        self.leadernode = vote.candidate;
                        self.phase = Phase::Voted;
                        let message = self.signed(ctx, ElectionMessage::Vote(vote));
                        Ok(vec![Outgoing { to: Recipients::One(vote.candidate), message }])
                    }
                }
            }
            Timer::T3 => {
                if self.phase == Phase::Voted && self.received_votes.is_empty() {
                    self.phase = Phase::Ordinary;
                    return Ok(Vec::new());
                }
                let (ack, payment) = tally_with(ctx.rule, self.id, self.cost, &self.received_votes, ctx.budget)
                    .expect("only votes naming this node are kept");
                let ack = match ack {
                    ElectionMessage::Acknowledge { leader, payment, votes } => ElectionMessage::Acknowledge {
                        leader,
                        payment: payment + self.payment_inflation,
                        votes,
                    },
                    other => other,
                };
                if self.phase == Phase::SelfCandidate {
                    self.leadernode = self.id;
                }
                self.leader = true;
                self.service_table = self.received_votes.iter().map(|v| v.voter).collect();
                *self.reputation_table.entry(self.id).or_insert(0.0) += payment.total;
                self.payment = Some(payment);
                self.phase = Phase::Leader;
                Ok(vec![self.broadcast(ctx, ack)])
            }
        }
    }

    fn nonce_of(&self, n: NodeId) -> Nonce {
        self.reveal_nonces.get(&n).copied().unwrap_or_default()
    }

    fn on_message(&mut self, signed: SignedMessage, ctx: &FsmContext<'_>) -> Result<(), ProtocolViolation> {
        let kind = signed.message.kind();
        let from = signed.message.sender();
        if !ctx.auth.verify(&signed) {
            return Err(ProtocolViolation::BadSignature { kind, from });
        }
        if !self.neighbors.contains(&from) {
            return Err(ProtocolViolation::NotANeighbor { kind, from });
        }
        if self.excluded.contains(&from) {
            return Err(ProtocolViolation::ExcludedSender { kind, from });
        }
        let out_of_phase = ProtocolViolation::OutOfPhase { phase: self.phase, kind, from };
        match signed.message {
            ElectionMessage::Hello { commitment, .. } => {
                if self.phase != Phase::AwaitHello {
                    return Err(out_of_phase);
                }
                if self.commitments.contains_key(&from) {
                    return Err(ProtocolViolation::Duplicate { kind, from });
                }
                self.commitments.insert(from, commitment);
            }
            ElectionMessage::BeginElection { cost, nonce, .. } => {
                if self.phase != Phase::AwaitCosts {
                    return Err(out_of_phase);
                }
                if self.revealed.contains_key(&from) {
                    return Err(ProtocolViolation::Duplicate { kind, from });
                }
                self.revealed.insert(from, cost);
                self.reveal_nonces.insert(from, nonce);
            }
            ElectionMessage::Vote(vote) => {
                if !matches!(self.phase, Phase::SelfCandidate | Phase::Voted) {
                    return Err(out_of_phase);
                }
                if vote.candidate != self.id {
                    return Err(ProtocolViolation::ForeignVote { from, named: vote.candidate });
                }
                if self.received_votes.iter().any(|v| v.voter == from) {
                    return Err(ProtocolViolation::Duplicate { kind, from });
                }
                self.received_votes.push(vote);
            }
            ElectionMessage::Acknowledge { leader, payment, votes } => {
                if !matches!(
                    self.phase,
                    Phase::SelfCandidate | Phase::Voted | Phase::Ordinary | Phase::Leader
                ) {
                    return Err(out_of_phase);
                }
                self.on_acknowledge(leader, payment, &votes, ctx);
            }
        }
        Ok(())
    }

    fn on_acknowledge(&mut self, leader: NodeId, claimed: f64, votes: &[Vote], ctx: &FsmContext<'_>) {
        let leader_cost = self.revealed.get(&leader).copied().unwrap_or(CostOfAnalysis::from_raw(0.0));
        let recomputed = compute_payment_with(ctx.rule, votes, leader_cost, ctx.budget)
            .ok()
            .filter(|_| votes.iter().all(|v| v.candidate == leader));
        let mine = self.my_vote.filter(|v| v.candidate == leader);
        if let Some(my_vote) = mine {
            let counted = votes.contains(&my_vote);
            let matches = recomputed
                .as_ref()
                .is_some_and(|p| (p.total - claimed).abs() <= PAYMENT_TOLERANCE);
            if !counted || !matches {
                self.disputed.insert(leader);
            }
            if self.phase == Phase::Voted {
                self.phase = Phase::Ordinary;
            }
        }
        if let Some(p) = recomputed {
            *self.reputation_table.entry(leader).or_insert(0.0) += p.total;
        }
    }
}
