//! 1-hop cluster formation and per-cluster elections.
//!
//! Clusters come from a greedy dominating set: the uncovered node with the
//! most uncovered neighbors (lowest id on ties) seeds a cluster holding itself
//! and those neighbors. Within a cluster every member can reach every other
//! through the seed, so the election runs on an overlay where each cluster is
//! a clique; every member then sees the whole cluster as its candidate set.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cost_model::CostOfAnalysis;
use crate::election::{run_election_round, ElectionOutcome};
use crate::topology::{Graph, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Formation anchor. Not necessarily the elected leader.
    pub head_seed: NodeId,
    pub members: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusteringError {
    #[error("no cost for cluster member {0}")]
    MissingCost(NodeId),
}

pub fn form_clusters(g: &Graph) -> Vec<Cluster> {
    let mut uncovered: BTreeSet<NodeId> = g.nodes().collect();
    let mut clusters = Vec::new();
    while !uncovered.is_empty() {
        let uncovered_degree = |k: NodeId| {
            g.neighbors(k)
                .expect("graph node")
                .iter()
                .filter(|n| uncovered.contains(n))
                .count()
        };
        // max_by_key keeps the last maximum; iterate in reverse for lowest id.
        let seed = uncovered
            .iter()
            .rev()
            .copied()
            .max_by_key(|&k| uncovered_degree(k))
            .expect("nonempty");
        let mut members: BTreeSet<NodeId> = g
            .neighbors(seed)
            .expect("graph node")
            .iter()
            .copied()
            .filter(|n| uncovered.contains(n))
            .collect();
        members.insert(seed);
        for m in &members {
            uncovered.remove(m);
        }
        clusters.push(Cluster { head_seed: seed, members });
    }
    clusters
}

/// Graph in which each cluster is a clique and clusters are disconnected.
pub fn overlay_graph(clusters: &[Cluster]) -> Graph {
    let nodes = clusters.iter().flat_map(|c| c.members.iter().copied());
    let links = clusters.iter().flat_map(|c| {
        let ms: Vec<NodeId> = c.members.iter().copied().collect();
        let mut pairs = Vec::new();
        for (i, &a) in ms.iter().enumerate() {
            for &b in &ms[i + 1..] {
                pairs.push((a, b));
            }
        }
        pairs
    });
    Graph::build(nodes, links).expect("clusters partition their members")
}

pub fn elect_per_cluster(
    clusters: &[Cluster],
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    budget: f64,
) -> Result<ElectionOutcome, ClusteringError> {
    check_costs(clusters, costs)?;
    Ok(run_election_round(&overlay_graph(clusters), costs, budget, &BTreeSet::new()))
}

pub(crate) fn check_costs(
    clusters: &[Cluster],
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
) -> Result<(), ClusteringError> {
    for c in clusters {
        if let Some(&m) = c.members.iter().find(|m| !costs.contains_key(m)) {
            return Err(ClusteringError::MissingCost(m));
        }
    }
    Ok(())
}
