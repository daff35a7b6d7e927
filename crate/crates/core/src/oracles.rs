//! Brute-force verifiers for the election mechanism.
//!
//! These are deliberately naive: they enumerate instead of reasoning, and
//! they share nothing with the protocol implementation beyond the data types.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::cost_model::CostOfAnalysis;
use crate::election::{ElectionRound, ElectionOutcome};
use crate::payment::{utility, PaymentRule};
use crate::topology::{Graph, NodeId};
use crate::trace::NullSink;

/// Enumeration limit for [`brute_force_min_scf`].
pub const MAX_BRUTE_FORCE_NODES: usize = 10;
pub const MAX_BRUTE_FORCE_SPACE: u128 = 20_000_000;
pub const MAX_TRUTHFULNESS_NODES: usize = 5;
pub const MAX_TRUTHFULNESS_LEVELS: u32 = 6;
/// Cost quantum of the truthfulness grid. A power of two keeps every payment
/// and valuation exact.
pub const TRUTHFULNESS_DELTA_C: f64 = 0.125;
const UTILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("node {0} is affiliated outside its closed neighborhood or not at all")]
    InvalidAffiliation(NodeId),
    #[error("no cost for node {0}")]
    MissingCost(NodeId),
    #[error("{nodes} nodes with {space} affiliations is too large to enumerate")]
    TooLarge { nodes: usize, space: u128 },
    #[error("truthfulness check supports at most {MAX_TRUTHFULNESS_NODES} nodes and {MAX_TRUTHFULNESS_LEVELS} cost levels")]
    OutOfBounds,
}

/// Whether a node that serves itself contributes its own cost to the social
/// cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfService {
    /// Only external voters count. Under this reading everyone serving
    /// themselves is always a zero-cost optimum.
    Excluded,
    /// Every node's service counts, including a leader serving itself.
    Included,
}

/// `Σ_k c_k × votes_k × B`.
pub fn scf_value(
    g: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    affiliation: &BTreeMap<NodeId, NodeId>,
    budget: f64,
    convention: SelfService,
) -> Result<f64, OracleError> {
    let mut total = 0.0;
    for k in g.nodes() {
        let Some(&leader) = affiliation.get(&k) else {
            return Err(OracleError::InvalidAffiliation(k));
        };
        if !g.closed_neighborhood(k).expect("graph node").contains(&leader) {
            return Err(OracleError::InvalidAffiliation(k));
        }
        if leader == k && convention == SelfService::Excluded {
            continue;
        }
        let c = costs.get(&leader).ok_or(OracleError::MissingCost(leader))?;
        total += c.value() * budget;
    }
    if let Some(&extra) = affiliation.keys().find(|k| !g.contains(**k)) {
        return Err(OracleError::InvalidAffiliation(extra));
    }
    Ok(total)
}

/// Exhaustive minimum of the social cost over every affiliation in which each
/// node picks a member of its closed neighborhood. Returns the first
/// minimizer in enumeration order.
pub fn brute_force_min_scf(
    g: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    budget: f64,
    convention: SelfService,
) -> Result<(BTreeMap<NodeId, NodeId>, f64), OracleError> {
    let nodes: Vec<NodeId> = g.nodes().collect();
    let choices: Vec<Vec<NodeId>> = nodes
        .iter()
        .map(|&k| g.closed_neighborhood(k).expect("graph node").into_iter().collect())
        .collect();
    let space: u128 = choices.iter().map(|c| c.len() as u128).product();
    if nodes.len() > MAX_BRUTE_FORCE_NODES || space > MAX_BRUTE_FORCE_SPACE {
        return Err(OracleError::TooLarge { nodes: nodes.len(), space });
    }
    if let Some(&k) = nodes.iter().find(|k| !costs.contains_key(k)) {
        return Err(OracleError::MissingCost(k));
    }

    let mut digits = vec![0usize; nodes.len()];
    let mut best: Option<(BTreeMap<NodeId, NodeId>, f64)> = None;
    loop {
        let aff: BTreeMap<NodeId, NodeId> = nodes
            .iter()
            .zip(&digits)
            .zip(&choices)
            .map(|((&k, &d), c)| (k, c[d]))
            .collect();
        let v = scf_value(g, costs, &aff, budget, convention)?;
        if best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((aff, v));
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == digits.len() {
                return Ok(best.unwrap_or_default());
            }
            digits[i] += 1;
            if digits[i] < choices[i].len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// What the protocol should produce on honest inputs, computed directly:
/// every node picks the `(cost, id)`-minimal member of its closed
/// neighborhood and pays, if external, the second-least cost there times B.
pub fn reference_outcome(
    g: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    budget: f64,
) -> (BTreeMap<NodeId, NodeId>, BTreeMap<NodeId, f64>) {
    let mut affiliation = BTreeMap::new();
    let mut payments: BTreeMap<NodeId, f64> = BTreeMap::new();
    for k in g.nodes() {
        let mut ranked: Vec<(CostOfAnalysis, NodeId)> = g
            .closed_neighborhood(k)
            .expect("graph node")
            .into_iter()
            .map(|n| (costs[&n], n))
            .collect();
        ranked.sort();
        let winner = ranked[0].1;
        affiliation.insert(k, winner);
        if winner != k {
            *payments.entry(winner).or_insert(0.0) += ranked[1].0.value() * budget;
        } else {
            payments.entry(winner).or_insert(0.0);
        }
    }
    (affiliation, payments)
}

/// All connected simple graphs on nodes `1..=n`, labeled.
pub fn connected_graphs(n: usize) -> Vec<Graph> {
    let pairs: Vec<(NodeId, NodeId)> = (1..=n as u32)
        .flat_map(|a| (a + 1..=n as u32).map(move |b| (NodeId(a), NodeId(b))))
        .collect();
    let nodes: Vec<NodeId> = (1..=n as u32).map(NodeId).collect();
    (0u64..1 << pairs.len())
        .filter_map(|mask| {
            let links = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &p)| p);
            let g = Graph::build(nodes.iter().copied(), links).expect("valid pairs");
            g.is_connected().then_some(g)
        })
        .collect()
}

/// All assignments of grid costs `{1..=levels} × delta_c` to `nodes`.
pub fn grid_assignments(nodes: &[NodeId], levels: u32, delta_c: f64) -> Vec<BTreeMap<NodeId, CostOfAnalysis>> {
    let count = (levels as usize).pow(nodes.len() as u32);
    (0..count)
        .map(|mut idx| {
            nodes
                .iter()
                .map(|&k| {
                    let t = (idx % levels as usize) as u32 + 1;
                    idx /= levels as usize;
                    (k, CostOfAnalysis::from_ticks(t, delta_c))
                })
                .collect()
        })
        .collect()
}

/// A profitable unilateral misreport.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationCase {
    pub graph: Graph,
    pub truthful: BTreeMap<NodeId, CostOfAnalysis>,
    pub node: NodeId,
    pub misreport: CostOfAnalysis,
    pub utility_truthful: f64,
    pub utility_deviating: f64,
}

impl DeviationCase {
    fn sort_key(&self) -> (usize, Vec<(NodeId, NodeId)>, Vec<CostOfAnalysis>, NodeId, CostOfAnalysis) {
        (
            self.graph.node_count(),
            self.graph.links().collect(),
            self.truthful.values().copied().collect(),
            self.node,
            self.misreport,
        )
    }
}

impl fmt::Display for DeviationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let links: Vec<String> = self.graph.links().map(|(a, b)| format!("{a}-{b}")).collect();
        let costs: Vec<String> = self.truthful.iter().map(|(k, c)| format!("{k}:{c}")).collect();
        write!(
            f,
            "links=[{}] costs=[{}] node={} misreport={} utility {} -> {}",
            links.join(" "),
            costs.join(" "),
            self.node,
            self.misreport,
            self.utility_truthful,
            self.utility_deviating
        )
    }
}

fn node_utility(
    g: &Graph,
    reported: &BTreeMap<NodeId, CostOfAnalysis>,
    true_cost: CostOfAnalysis,
    k: NodeId,
    budget: f64,
    rule: PaymentRule,
) -> f64 {
    let out: ElectionOutcome = ElectionRound::new(g, reported, budget).with_rule(rule).run(&mut NullSink);
    let elected = out.leaders.contains(&k);
    let payment = out.payments.get(&k).cloned().unwrap_or_default();
    utility(elected, true_cost, &payment, out.service_table(k).len(), budget)
}

/// Every profitable unilateral misreport over all connected labeled graphs
/// with up to `max_n` nodes and costs on a `grid_levels`-point grid, under
/// the shipped payment rule. Empty means truthful reporting is dominant on
/// every instance checked.
pub fn check_truthfulness(max_n: usize, grid_levels: u32, budget: f64) -> Result<Vec<DeviationCase>, OracleError> {
    check_truthfulness_with(PaymentRule::SecondPrice, max_n, grid_levels, budget)
}

pub fn check_truthfulness_with(
    rule: PaymentRule,
    max_n: usize,
    grid_levels: u32,
    budget: f64,
) -> Result<Vec<DeviationCase>, OracleError> {
    if max_n > MAX_TRUTHFULNESS_NODES || grid_levels > MAX_TRUTHFULNESS_LEVELS {
        return Err(OracleError::OutOfBounds);
    }
    let grid: Vec<CostOfAnalysis> = (1..=grid_levels)
        .map(|t| CostOfAnalysis::from_ticks(t, TRUTHFULNESS_DELTA_C))
        .collect();
    // A single node has no one to deviate against.
    let graphs: Vec<Graph> = (2..=max_n).flat_map(connected_graphs).collect();
    let mut found: Vec<DeviationCase> = graphs
        .par_iter()
        .flat_map_iter(|g| {
            let nodes: Vec<NodeId> = g.nodes().collect();
            grid_assignments(&nodes, grid_levels, TRUTHFULNESS_DELTA_C)
                .into_iter()
                .map(move |truthful| (g, nodes.clone(), truthful))
        })
        .flat_map_iter(|(g, nodes, truthful)| {
            let mut cases = Vec::new();
            for &k in &nodes {
                let honest = node_utility(g, &truthful, truthful[&k], k, budget, rule);
                for &lie in grid.iter().filter(|&&c| c != truthful[&k]) {
                    let mut reported = truthful.clone();
                    reported.insert(k, lie);
                    let deviating = node_utility(g, &reported, truthful[&k], k, budget, rule);
                    if deviating > honest + UTILITY_TOLERANCE {
                        cases.push(DeviationCase {
                            graph: g.clone(),
                            truthful: truthful.clone(),
                            node: k,
                            misreport: lie,
                            utility_truthful: honest,
                            utility_deviating: deviating,
                        });
                    }
                }
            }
            cases
        })
        .collect();
    found.sort_by_key(DeviationCase::sort_key);
    Ok(found)
}
