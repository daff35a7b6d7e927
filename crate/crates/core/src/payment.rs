//! Vickrey-style payments, reputation bookkeeping and sampling-budget
//! allocation.
//!
//! Each vote is a small second-price auction among the voter's candidate
//! set: the winner is paid, per vote, the cheapest cost in that set other
//! than its own, times the per-vote budget `B`. Payment is made in
//! reputation, which in turn buys voters a share of their leader's sampling
//! budget.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::cost_model::CostOfAnalysis;
use crate::election::Vote;
use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaymentError {
    #[error("votes name more than one candidate ({0} and {1})")]
    MixedCandidates(NodeId, NodeId),
    #[error("a serving leader needs at least one voter")]
    NoVoters,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("delivered {delivered} exceeds promised {promised}")]
    OverDelivery { promised: String, delivered: String },
}

/// How a leader is paid per received vote.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaymentRule {
    /// Second-least cost of the voter's candidate set. The shipped rule.
    #[default]
    SecondPrice,
    /// The leader's own reported cost. Not truthful; kept as a mutation
    /// target for the truthfulness checker.
    FirstPrice,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Payment {
    pub total: f64,
    pub per_voter: BTreeMap<NodeId, f64>,
}

impl Payment {
    fn from_terms(per_voter: BTreeMap<NodeId, f64>) -> Self {
        // Adding 0.0 turns the empty sum's -0.0 into 0.0.
        let total = per_voter.values().sum::<f64>() + 0.0;
        Payment { total, per_voter }
    }
}

fn single_candidate(votes: &[Vote]) -> Result<Option<NodeId>, PaymentError> {
    let Some(first) = votes.first() else {
        return Ok(None);
    };
    match votes.iter().find(|v| v.candidate != first.candidate) {
        Some(other) => Err(PaymentError::MixedCandidates(first.candidate, other.candidate)),
        None => Ok(Some(first.candidate)),
    }
}

/// Second-price payment: `Σ_votes second_cost × budget`.
pub fn compute_payment(votes: &[Vote], budget: f64) -> Result<Payment, PaymentError> {
    single_candidate(votes)?;
    Ok(Payment::from_terms(
        votes
            .iter()
            .map(|v| (v.voter, v.second_cost.value() * budget))
            .collect(),
    ))
}

/// Payment under an arbitrary rule. `own_cost` is the candidate's reported
/// cost, used only by [`PaymentRule::FirstPrice`].
pub fn compute_payment_with(
    rule: PaymentRule,
    votes: &[Vote],
    own_cost: CostOfAnalysis,
    budget: f64,
) -> Result<Payment, PaymentError> {
    match rule {
        PaymentRule::SecondPrice => compute_payment(votes, budget),
        PaymentRule::FirstPrice => {
            single_candidate(votes)?;
            Ok(Payment::from_terms(
                votes.iter().map(|v| (v.voter, own_cost.value() * budget)).collect(),
            ))
        }
    }
}

/// `payment − valuation`, where the valuation of an elected node is its true
/// per-packet cost times the budget it serves for external voters. Self-votes
/// carry neither payment nor valuation.
pub fn utility(
    elected: bool,
    true_cost: CostOfAnalysis,
    payment: &Payment,
    votes_count: usize,
    budget: f64,
) -> f64 {
    if !elected {
        return 0.0;
    }
    payment.total - true_cost.value() * votes_count as f64 * budget
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReputationTable {
    entries: BTreeMap<NodeId, f64>,
    threshold: f64,
}

impl ReputationTable {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, initial: f64, threshold: f64) -> Self {
        ReputationTable {
            entries: nodes.into_iter().map(|n| (n, initial.max(0.0))).collect(),
            threshold,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, f64> {
        &self.entries
    }

    /// Adds `k` with `initial` reputation if it is not already tracked.
    pub fn track(&mut self, k: NodeId, initial: f64) {
        self.entries.entry(k).or_insert(initial.max(0.0));
    }

    pub fn get(&self, k: NodeId) -> Result<f64, PaymentError> {
        self.entries.get(&k).copied().ok_or(PaymentError::UnknownNode(k))
    }

    pub fn credit_payment(&mut self, leader: NodeId, payment: &Payment) -> Result<(), PaymentError> {
        let entry = self
            .entries
            .get_mut(&leader)
            .ok_or(PaymentError::UnknownNode(leader))?;
        *entry += payment.total;
        Ok(())
    }

    /// Linear shortfall penalty floored at zero.
    pub fn apply_punishment(
        &mut self,
        leader: NodeId,
        promised: f64,
        delivered: f64,
        penalty_rate: f64,
    ) -> Result<(), PaymentError> {
        if delivered > promised {
            return Err(PaymentError::OverDelivery {
                promised: promised.to_string(),
                delivered: delivered.to_string(),
            });
        }
        let entry = self
            .entries
            .get_mut(&leader)
            .ok_or(PaymentError::UnknownNode(leader))?;
        *entry = (*entry - penalty_rate * (promised - delivered)).max(0.0);
        Ok(())
    }

    /// Strictly below the threshold means cut off from cluster services.
    pub fn is_excluded(&self, k: NodeId) -> Result<bool, PaymentError> {
        Ok(self.get(k)? < self.threshold)
    }
}

/// Per-voter sampling shares in packets per slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BudgetAllocation {
    pub shares: BTreeMap<NodeId, f64>,
}

impl BudgetAllocation {
    pub fn total(&self) -> f64 {
        self.shares.values().sum()
    }
}

/// Splits `budget × |voters|` among the voters in proportion to reputation.
/// Voters below the exclusion threshold get nothing and their mass goes to
/// the rest; if every eligible reputation is zero the split is even.
/// Unknown voters count as reputation zero.
pub fn allocate_budget(
    _leader: NodeId,
    voters: &[NodeId],
    reputations: &ReputationTable,
    budget: f64,
) -> Result<BudgetAllocation, PaymentError> {
    if voters.is_empty() {
        return Err(PaymentError::NoVoters);
    }
    let total = budget * voters.len() as f64;
    let rep = |v: NodeId| reputations.entries.get(&v).copied().unwrap_or(0.0);
    let eligible: Vec<NodeId> = voters
        .iter()
        .copied()
        .filter(|&v| rep(v) >= reputations.threshold)
        .collect();
    let mass: f64 = eligible.iter().map(|&v| rep(v)).sum();
    let mut shares: BTreeMap<NodeId, f64> = voters.iter().map(|&v| (v, 0.0)).collect();
    for &v in &eligible {
        let share = if mass > 0.0 {
            total * rep(v) / mass
        } else {
            total / eligible.len() as f64
        };
        shares.insert(v, share);
    }
    Ok(BudgetAllocation { shares })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> CostOfAnalysis {
        CostOfAnalysis::from_raw(v)
    }

    fn vote(voter: u32, candidate: u32, second: f64) -> Vote {
        Vote {
            voter: NodeId(voter),
            candidate: NodeId(candidate),
            second_cost: c(second),
        }
    }

    #[test]
    fn payment_examples() {
        let p = compute_payment(&[vote(2, 1, 0.4), vote(3, 1, 0.5)], 25.0).unwrap();
        assert!((p.total - 22.5).abs() < 1e-12);
        assert_eq!(p.per_voter.len(), 2);
        assert_eq!(compute_payment(&[], 25.0).unwrap().total, 0.0);
        assert_eq!(
            compute_payment(&[vote(2, 1, 0.4), vote(3, 4, 0.5)], 25.0),
            Err(PaymentError::MixedCandidates(NodeId(1), NodeId(4)))
        );
    }

    #[test]
    fn first_price_uses_own_cost() {
        let p = compute_payment_with(PaymentRule::FirstPrice, &[vote(2, 1, 0.4)], c(0.2), 25.0).unwrap();
        assert!((p.total - 5.0).abs() < 1e-12);
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(false, c(0.2), &Payment::default(), 0, 25.0), 0.0);
        let p = compute_payment(&[vote(2, 1, 0.4)], 25.0).unwrap();
        assert!((utility(true, c(0.2), &p, 1, 25.0) - 5.0).abs() < 1e-12);
        assert_eq!(utility(true, c(0.2), &Payment::default(), 0, 25.0), 0.0);
    }

    #[test]
    fn budget_examples() {
        let table = ReputationTable::new([1, 2, 3, 4].map(NodeId), 5.0, 0.0);
        let voters = [NodeId(2), NodeId(3), NodeId(4)];
        let alloc = allocate_budget(NodeId(1), &voters, &table, 25.0).unwrap();
        assert_eq!(alloc.total(), 75.0);
        assert!(alloc.shares.values().all(|&s| s == 25.0));

        let mut table = ReputationTable::new([1, 2, 3].map(NodeId), 0.0, 0.0);
        table.entries.insert(NodeId(2), 30.0);
        table.entries.insert(NodeId(3), 10.0);
        let alloc = allocate_budget(NodeId(1), &[NodeId(2), NodeId(3)], &table, 25.0).unwrap();
        assert_eq!(alloc.shares[&NodeId(2)], 37.5);
        assert_eq!(alloc.shares[&NodeId(3)], 12.5);

        assert_eq!(
            allocate_budget(NodeId(1), &[], &table, 25.0),
            Err(PaymentError::NoVoters)
        );
    }

    #[test]
    fn budget_zero_reputation_is_even() {
        let table = ReputationTable::new([1, 2, 3].map(NodeId), 0.0, 0.0);
        let alloc = allocate_budget(NodeId(1), &[NodeId(2), NodeId(3)], &table, 10.0).unwrap();
        assert_eq!(alloc.shares[&NodeId(2)], 10.0);
        assert_eq!(alloc.shares[&NodeId(3)], 10.0);
    }

    #[test]
    fn budget_redistributes_excluded_mass() {
        let mut table = ReputationTable::new([1, 2, 3, 4].map(NodeId), 0.0, 2.0);
        table.entries.insert(NodeId(2), 1.0);
        table.entries.insert(NodeId(3), 3.0);
        table.entries.insert(NodeId(4), 3.0);
        let alloc =
            allocate_budget(NodeId(1), &[NodeId(2), NodeId(3), NodeId(4)], &table, 10.0).unwrap();
        assert_eq!(alloc.shares[&NodeId(2)], 0.0);
        assert_eq!(alloc.shares[&NodeId(3)], 15.0);
        assert_eq!(alloc.shares[&NodeId(4)], 15.0);

        let table = ReputationTable::new([1, 2].map(NodeId), 0.0, 2.0);
        let alloc = allocate_budget(NodeId(1), &[NodeId(2)], &table, 10.0).unwrap();
        assert_eq!(alloc.total(), 0.0);
    }

    #[test]
    fn credit_and_punish() {
        let mut t = ReputationTable::new([NodeId(1)], 5.0, 0.0);
        t.credit_payment(NodeId(1), &Payment { total: 10.0, ..Default::default() }).unwrap();
        assert_eq!(t.get(NodeId(1)).unwrap(), 15.0);
        let before = t.clone();
        t.credit_payment(NodeId(1), &Payment::default()).unwrap();
        assert_eq!(t, before);
        let mut t = ReputationTable::new([NodeId(1)], 0.0, 0.0);
        t.credit_payment(NodeId(1), &Payment { total: 10.0, ..Default::default() }).unwrap();
        t.credit_payment(NodeId(1), &Payment { total: 12.5, ..Default::default() }).unwrap();
        assert_eq!(t.get(NodeId(1)).unwrap(), 22.5);
        assert_eq!(
            t.credit_payment(NodeId(9), &Payment::default()),
            Err(PaymentError::UnknownNode(NodeId(9)))
        );

        let mut t = ReputationTable::new([NodeId(1)], 10.0, 0.0);
        t.apply_punishment(NodeId(1), 5.0, 5.0, 1.0).unwrap();
        assert_eq!(t.get(NodeId(1)).unwrap(), 10.0);
        t.apply_punishment(NodeId(1), 20.0, 0.0, 1.0).unwrap();
        assert_eq!(t.get(NodeId(1)).unwrap(), 0.0);
        let mut t = ReputationTable::new([NodeId(1)], 10.0, 0.0);
        t.apply_punishment(NodeId(1), 6.0, 2.0, 0.5).unwrap();
        assert_eq!(t.get(NodeId(1)).unwrap(), 8.0);
        assert!(t.apply_punishment(NodeId(1), 1.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn exclusion_threshold() {
        let t = ReputationTable::new([NodeId(1)], 0.0, 0.0);
        assert!(!t.is_excluded(NodeId(1)).unwrap());
        let t = ReputationTable::new([NodeId(1)], 1.0, 2.0);
        assert!(t.is_excluded(NodeId(1)).unwrap());
        let mut t = ReputationTable::new([NodeId(1)], 3.0, 2.0);
        assert!(!t.is_excluded(NodeId(1)).unwrap());
        t.apply_punishment(NodeId(1), 4.0, 0.0, 0.5).unwrap();
        assert!(t.is_excluded(NodeId(1)).unwrap());
        assert!(t.is_excluded(NodeId(2)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn budget_conservation(
                reps in proptest::collection::vec(0.0f64..100.0, 1..10),
                threshold in 0.0f64..50.0,
                budget in 1.0f64..50.0,
            ) {
                let nodes: Vec<NodeId> = (1..=reps.len() as u32).map(NodeId).collect();
                let mut table = ReputationTable::new(nodes.iter().copied(), 0.0, threshold);
                for (n, r) in nodes.iter().zip(&reps) {
                    table.entries.insert(*n, *r);
                }
                let alloc = allocate_budget(NodeId(0), &nodes, &table, budget).unwrap();
                prop_assert!(alloc.shares.values().all(|&s| s >= 0.0));
                let any_eligible = reps.iter().any(|&r| r >= threshold);
                let expected = if any_eligible { budget * nodes.len() as f64 } else { 0.0 };
                prop_assert!((alloc.total() - expected).abs() <= 1e-9 * expected.max(1.0));
            }

            #[test]
            fn payment_terms_sum(seconds in proptest::collection::vec(1u32..40, 0..8), budget in 1.0f64..40.0) {
                let votes: Vec<Vote> = seconds.iter().enumerate()
                    .map(|(i, &s)| Vote { voter: NodeId(i as u32 + 10), candidate: NodeId(1), second_cost: CostOfAnalysis::from_ticks(s, 0.125) })
                    .collect();
                let p = compute_payment(&votes, budget).unwrap();
                let sum: f64 = p.per_voter.values().sum();
                prop_assert_eq!(p.total, sum);
                prop_assert!(p.per_voter.values().all(|&t| t >= 0.0));
            }
        }
    }
}
