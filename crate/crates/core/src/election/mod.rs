//! Commit-reveal leader election.
//!
//! A round runs in four phases separated by logical timers:
//!
//! 1. every node broadcasts `Hello` carrying a commitment to its cost (T1);
//! 2. nodes reveal their cost in `BeginElection` (T2);
//! 3. each node checks the reveals against the commitments and votes for the
//!    cheapest verified member of its closed neighborhood, reporting the
//!    second-cheapest as the price (T3);
//! 4. every node that collected votes, or voted for itself, broadcasts an
//!    `Acknowledge` with its payment and the votes it counted.
//!
//! Candidates are ordered by `(cost, id)`, so ties go to the lowest id.

mod fsm;
mod message;
mod round;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cost_model::{CostOfAnalysis, EnergyState};
use crate::payment::{compute_payment_with, Payment, PaymentError, PaymentRule};
use crate::topology::NodeId;

pub use fsm::{FsmContext, FsmEvent, NodeRuntimeState, Outgoing, Phase, ProtocolViolation, Recipients, Reveal, Timer};
pub use message::{
    AcceptAll, Authenticator, Commitment, CommitmentScheme, ElectionMessage, MessageKind, Nonce,
    RejectSenders, Sha256Commitments, Signature, SignedMessage, Vote,
};
pub use round::{run_election_round, ElectionOutcome, ElectionRound, MessageCounts};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("node is dead")]
    DeadNode,
    #[error("hello from {hello} paired with reveal from {reveal}")]
    SenderMismatch { hello: NodeId, reveal: NodeId },
    #[error("expected a {expected} message, got {got}")]
    WrongKind { expected: MessageKind, got: MessageKind },
    #[error("no candidates to vote for")]
    EmptyCandidates,
    #[error("candidate set lacks the voter's own cost ({0})")]
    MissingOwnCost(NodeId),
    #[error("vote from {voter} names {named}, not {expected}")]
    ForeignVote { voter: NodeId, named: NodeId, expected: NodeId },
}

pub fn make_hello(
    k: NodeId,
    energy: &EnergyState,
    cost: CostOfAnalysis,
    nonce: Nonce,
    scheme: &dyn CommitmentScheme,
) -> Result<ElectionMessage, ElectionError> {
    if !energy.alive() {
        return Err(ElectionError::DeadNode);
    }
    Ok(ElectionMessage::Hello {
        sender: k,
        commitment: scheme.commit(cost, nonce),
    })
}

/// Checks that a `BeginElection` reveal opens the sender's `Hello` commitment.
pub fn verify_commit(
    hello: &ElectionMessage,
    reveal: &ElectionMessage,
    scheme: &dyn CommitmentScheme,
) -> Result<bool, ElectionError> {
    let ElectionMessage::Hello { sender: hs, commitment } = hello else {
        return Err(ElectionError::WrongKind { expected: MessageKind::Hello, got: hello.kind() });
    };
    let ElectionMessage::BeginElection { sender: rs, cost, nonce } = reveal else {
        return Err(ElectionError::WrongKind {
            expected: MessageKind::BeginElection,
            got: reveal.kind(),
        });
    };
    if hs != rs {
        return Err(ElectionError::SenderMismatch { hello: *hs, reveal: *rs });
    }
    Ok(scheme.commit(*cost, *nonce) == *commitment)
}

/// Result of ranking a node's candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteChoice {
    Vote(Vote),
    /// The voter is its own cheapest candidate. `runner_up` is the next
    /// cheapest, or `None` when the voter is alone and runs its own IDS.
    SelfCandidate { runner_up: Option<CostOfAnalysis> },
}

/// Ranks `candidates` (the voter plus its verified neighbors) by
/// `(cost, id)` and votes for the first.
pub fn choose_vote(
    k: NodeId,
    candidates: &BTreeMap<NodeId, CostOfAnalysis>,
) -> Result<VoteChoice, ElectionError> {
    if candidates.is_empty() {
        return Err(ElectionError::EmptyCandidates);
    }
    if !candidates.contains_key(&k) {
        return Err(ElectionError::MissingOwnCost(k));
    }
    let mut ranked: Vec<(CostOfAnalysis, NodeId)> = candidates.iter().map(|(&n, &c)| (c, n)).collect();
    ranked.sort();
    let (_, best) = ranked[0];
    let runner_up = ranked.get(1).map(|&(c, _)| c);
    if best == k {
        return Ok(VoteChoice::SelfCandidate { runner_up });
    }
    Ok(VoteChoice::Vote(Vote {
        voter: k,
        candidate: best,
        second_cost: runner_up.expect("the voter itself is a second candidate"),
    }))
}

/// Builds the leader's `Acknowledge` under the second-price rule.
pub fn tally_and_acknowledge(i: NodeId, votes: &[Vote], budget: f64) -> Result<ElectionMessage, ElectionError> {
    // Own cost is irrelevant to the second-price rule.
    tally_with(PaymentRule::SecondPrice, i, CostOfAnalysis::from_raw(0.0), votes, budget).map(|(m, _)| m)
}

pub(crate) fn tally_with(
    rule: PaymentRule,
    i: NodeId,
    own_cost: CostOfAnalysis,
    votes: &[Vote],
    budget: f64,
) -> Result<(ElectionMessage, Payment), ElectionError> {
    if let Some(v) = votes.iter().find(|v| v.candidate != i) {
        return Err(ElectionError::ForeignVote { voter: v.voter, named: v.candidate, expected: i });
    }
    let payment = match compute_payment_with(rule, votes, own_cost, budget) {
        Ok(p) => p,
        Err(PaymentError::MixedCandidates(..)) => unreachable!("checked above"),
        Err(e) => unreachable!("payment computation cannot fail with {e}"),
    };
    let ack = ElectionMessage::Acknowledge {
        leader: i,
        payment: payment.total,
        votes: votes.to_vec(),
    };
    Ok((ack, payment))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ticks: u32) -> CostOfAnalysis {
        CostOfAnalysis::from_ticks(ticks, 0.1)
    }

    fn costs(pairs: &[(u32, u32)]) -> BTreeMap<NodeId, CostOfAnalysis> {
        pairs.iter().map(|&(n, t)| (NodeId(n), c(t))).collect()
    }

    #[test]
    fn hello_commitments() {
        let alive = EnergyState::new(1.0);
        let s = Sha256Commitments;
        let h1 = make_hello(NodeId(1), &alive, c(3), 7, &s).unwrap();
        let h2 = make_hello(NodeId(1), &alive, c(3), 8, &s).unwrap();
        let h3 = make_hello(NodeId(1), &alive, c(3), 7, &s).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(h1, h3);
        assert_eq!(
            make_hello(NodeId(1), &EnergyState::new(0.0), c(3), 7, &s),
            Err(ElectionError::DeadNode)
        );
    }

    #[test]
    fn verify_commit_cases() {
        let s = Sha256Commitments;
        let alive = EnergyState::new(1.0);
        let hello = make_hello(NodeId(1), &alive, c(3), 42, &s).unwrap();
        let good = ElectionMessage::BeginElection { sender: NodeId(1), cost: c(3), nonce: 42 };
        assert_eq!(verify_commit(&hello, &good, &s), Ok(true));
        let tampered = ElectionMessage::BeginElection { sender: NodeId(1), cost: c(4), nonce: 42 };
        assert_eq!(verify_commit(&hello, &tampered, &s), Ok(false));
        let other = ElectionMessage::BeginElection { sender: NodeId(2), cost: c(3), nonce: 42 };
        assert_eq!(
            verify_commit(&hello, &other, &s),
            Err(ElectionError::SenderMismatch { hello: NodeId(1), reveal: NodeId(2) })
        );
        assert!(matches!(
            verify_commit(&good, &hello, &s),
            Err(ElectionError::WrongKind { .. })
        ));
    }

    #[test]
    fn choose_vote_cases() {
        let v = choose_vote(NodeId(2), &costs(&[(1, 3), (2, 4), (3, 5)])).unwrap();
        assert_eq!(
            v,
            VoteChoice::Vote(Vote { voter: NodeId(2), candidate: NodeId(1), second_cost: c(4) })
        );
        let v = choose_vote(NodeId(2), &costs(&[(1, 2), (2, 2), (3, 2)])).unwrap();
        assert_eq!(
            v,
            VoteChoice::Vote(Vote { voter: NodeId(2), candidate: NodeId(1), second_cost: c(2) })
        );
        let v = choose_vote(NodeId(5), &costs(&[(5, 2)])).unwrap();
        assert_eq!(v, VoteChoice::SelfCandidate { runner_up: None });
        let v = choose_vote(NodeId(1), &costs(&[(1, 2), (2, 3)])).unwrap();
        assert_eq!(v, VoteChoice::SelfCandidate { runner_up: Some(c(3)) });
        assert_eq!(choose_vote(NodeId(1), &BTreeMap::new()), Err(ElectionError::EmptyCandidates));
        assert_eq!(
            choose_vote(NodeId(1), &costs(&[(2, 3)])),
            Err(ElectionError::MissingOwnCost(NodeId(1)))
        );
    }

    #[test]
    fn tally_cases() {
        let ack = tally_and_acknowledge(NodeId(1), &[], 25.0).unwrap();
        assert_eq!(ack, ElectionMessage::Acknowledge { leader: NodeId(1), payment: 0.0, votes: vec![] });
        let vote = Vote { voter: NodeId(2), candidate: NodeId(1), second_cost: c(4) };
        let ElectionMessage::Acknowledge { payment, votes, .. } =
            tally_and_acknowledge(NodeId(1), &[vote], 25.0).unwrap()
        else {
            panic!("expected an acknowledge");
        };
        assert!((payment - 10.0).abs() < 1e-12);
        assert_eq!(votes, vec![vote]);
        let foreign = Vote { candidate: NodeId(3), ..vote };
        assert_eq!(
            tally_and_acknowledge(NodeId(1), &[foreign], 25.0),
            Err(ElectionError::ForeignVote { voter: NodeId(2), named: NodeId(3), expected: NodeId(1) })
        );
    }
}
