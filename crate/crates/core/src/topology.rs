//! Undirected network graph with dynamic membership.
//!
//! Node ids are small integers and their natural order is the global
//! tie-breaker used by elections and clustering (lowest id wins).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Unique identifier of a node within one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("link references unknown node {0}")]
    UnknownEndpoint(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already present")]
    DuplicateNode(NodeId),
}

/// An undirected graph stored as sorted adjacency sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Graph {
    /// Builds a graph, deduplicating links given in both orientations.
    pub fn build(
        nodes: impl IntoIterator<Item = NodeId>,
        links: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, TopologyError> {
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
            nodes.into_iter().map(|n| (n, BTreeSet::new())).collect();
        for (a, b) in links {
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            for end in [a, b] {
                if !adjacency.contains_key(&end) {
                    return Err(TopologyError::UnknownEndpoint(end));
                }
            }
            adjacency.get_mut(&a).unwrap().insert(b);
            adjacency.get_mut(&b).unwrap().insert(a);
        }
        Ok(Graph { adjacency })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn link_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn contains(&self, k: NodeId) -> bool {
        self.adjacency.contains_key(&k)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    /// Every link once, as `(low, high)`, in ascending order.
    pub fn links(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|ns| ns.contains(&b))
    }

    pub fn neighbors(&self, k: NodeId) -> Result<&BTreeSet<NodeId>, TopologyError> {
        self.adjacency.get(&k).ok_or(TopologyError::UnknownNode(k))
    }

    pub fn degree(&self, k: NodeId) -> Result<usize, TopologyError> {
        self.neighbors(k).map(BTreeSet::len)
    }

    /// Neighbors and neighbors-of-neighbors, excluding `k` itself.
    pub fn two_hop_neighbors(&self, k: NodeId) -> Result<BTreeSet<NodeId>, TopologyError> {
        let first = self.neighbors(k)?;
        let mut out = first.clone();
        for n in first {
            out.extend(self.adjacency[n].iter().copied());
        }
        out.remove(&k);
        Ok(out)
    }

    /// `neighbors(k) ∪ {k}`: the candidate set of `k` in a neighbor election.
    pub fn closed_neighborhood(&self, k: NodeId) -> Result<BTreeSet<NodeId>, TopologyError> {
        let mut out = self.neighbors(k)?.clone();
        out.insert(k);
        Ok(out)
    }

    pub fn add_node(
        &mut self,
        k: NodeId,
        links: impl IntoIterator<Item = NodeId>,
    ) -> Result<(), TopologyError> {
        if self.contains(k) {
            return Err(TopologyError::DuplicateNode(k));
        }
        let links: BTreeSet<NodeId> = links.into_iter().collect();
        for &m in &links {
            if m == k {
                return Err(TopologyError::SelfLoop(k));
            }
            if !self.contains(m) {
                return Err(TopologyError::UnknownEndpoint(m));
            }
        }
        for &m in &links {
            self.adjacency.get_mut(&m).unwrap().insert(k);
        }
        self.adjacency.insert(k, links);
        Ok(())
    }

    /// Removes `k` and all incident links.
    pub fn remove_node(&mut self, k: NodeId) -> Result<(), TopologyError> {
        let ns = self.adjacency.remove(&k).ok_or(TopologyError::UnknownNode(k))?;
        for m in ns {
            self.adjacency.get_mut(&m).unwrap().remove(&k);
        }
        Ok(())
    }

    /// The subgraph induced by `keep`.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> Graph {
        let adjacency = self
            .adjacency
            .iter()
            .filter(|(k, _)| keep.contains(k))
            .map(|(&k, ns)| (k, ns.intersection(keep).copied().collect()))
            .collect();
        Graph { adjacency }
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.nodes().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &m in &self.adjacency[&n] {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen.len() == self.node_count()
    }

    /// Places `n` nodes uniformly in an `area × area` square and links every
    /// pair within `range`. Ids are `0..n`. Connectivity is not guaranteed.
    pub fn random_geometric<R: Rng + ?Sized>(n: u32, area: f64, range: f64, rng: &mut R) -> Graph {
        let pos: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random::<f64>() * area, rng.random::<f64>() * area))
            .collect();
        let mut links = Vec::new();
        for a in 0..n as usize {
            for b in a + 1..n as usize {
                let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
                if (dx * dx + dy * dy).sqrt() <= range {
                    links.push((NodeId(a as u32), NodeId(b as u32)));
                }
            }
        }
        Graph::build((0..n).map(NodeId), links).expect("generated links are valid")
    }
}

/// Convenience for tests and fixtures: `ids(&[1, 2])`.
pub fn ids(raw: &[u32]) -> Vec<NodeId> {
    raw.iter().copied().map(NodeId).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(nodes: &[u32], links: &[(u32, u32)]) -> Graph {
        Graph::build(
            ids(nodes),
            links.iter().map(|&(a, b)| (NodeId(a), NodeId(b))),
        )
        .unwrap()
    }

    fn set(raw: &[u32]) -> BTreeSet<NodeId> {
        ids(raw).into_iter().collect()
    }

    #[test]
    fn build_small_graphs() {
        let two = g(&[1, 2], &[(1, 2)]);
        assert_eq!((two.node_count(), two.link_count()), (2, 1));
        let one = g(&[1], &[]);
        assert_eq!((one.node_count(), one.link_count()), (1, 0));
        let dedup = g(&[1, 2, 3], &[(1, 2), (2, 1), (2, 3)]);
        assert_eq!(dedup.link_count(), 2);
    }

    #[test]
    fn build_rejects_bad_links() {
        let err = Graph::build(ids(&[1]), [(NodeId(1), NodeId(2))]).unwrap_err();
        assert_eq!(err, TopologyError::UnknownEndpoint(NodeId(2)));
        let err = Graph::build(ids(&[1]), [(NodeId(1), NodeId(1))]).unwrap_err();
        assert_eq!(err, TopologyError::SelfLoop(NodeId(1)));
    }

    #[test]
    fn neighbor_queries() {
        let path = g(&[1, 2, 3], &[(1, 2), (2, 3)]);
        assert_eq!(path.neighbors(NodeId(2)).unwrap(), &set(&[1, 3]));
        let iso = g(&[7], &[]);
        assert!(iso.neighbors(NodeId(7)).unwrap().is_empty());
        let star = g(&[1, 2, 3, 4], &[(1, 2), (1, 3), (1, 4)]);
        assert_eq!(star.neighbors(NodeId(1)).unwrap(), &set(&[2, 3, 4]));
        assert_eq!(
            path.neighbors(NodeId(9)).unwrap_err(),
            TopologyError::UnknownNode(NodeId(9))
        );
    }

    #[test]
    fn two_hop() {
        let path = g(&[1, 2, 3, 4], &[(1, 2), (2, 3), (3, 4)]);
        assert_eq!(path.two_hop_neighbors(NodeId(1)).unwrap(), set(&[2, 3]));
        let k3 = g(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]);
        assert_eq!(k3.two_hop_neighbors(NodeId(1)).unwrap(), set(&[2, 3]));
        let iso = g(&[1], &[]);
        assert!(iso.two_hop_neighbors(NodeId(1)).unwrap().is_empty());
    }

    #[test]
    fn add_and_remove() {
        let mut path = g(&[1, 2, 3], &[(1, 2), (2, 3)]);
        path.add_node(NodeId(4), [NodeId(3)]).unwrap();
        assert_eq!(path, g(&[1, 2, 3, 4], &[(1, 2), (2, 3), (3, 4)]));
        path.add_node(NodeId(9), []).unwrap();
        assert!(path.neighbors(NodeId(9)).unwrap().is_empty());
        assert_eq!(
            path.add_node(NodeId(2), []).unwrap_err(),
            TopologyError::DuplicateNode(NodeId(2))
        );

        let mut p = g(&[1, 2, 3], &[(1, 2), (2, 3)]);
        p.remove_node(NodeId(2)).unwrap();
        assert_eq!(p, g(&[1, 3], &[]));
        let mut p = g(&[1, 2, 3], &[(1, 2), (2, 3)]);
        p.remove_node(NodeId(3)).unwrap();
        assert_eq!(p, g(&[1, 2], &[(1, 2)]));

        let mut star = g(&[1, 2, 3, 4], &[(1, 2), (1, 3), (1, 4)]);
        star.remove_node(NodeId(1)).unwrap();
        assert_eq!(star, g(&[2, 3, 4], &[]));
        assert_eq!(
            star.remove_node(NodeId(1)).unwrap_err(),
            TopologyError::UnknownNode(NodeId(1))
        );
    }

    #[test]
    fn random_geometric_is_seeded() {
        use rand::SeedableRng;
        let a = Graph::random_geometric(20, 100.0, 30.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let b = Graph::random_geometric(20, 100.0, 30.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.node_count(), 20);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = Graph> {
            (1u32..9).prop_flat_map(|n| {
                proptest::collection::vec((0..n, 0..n), 0..20).prop_map(move |pairs| {
                    let links = pairs
                        .into_iter()
                        .filter(|(a, b)| a != b)
                        .map(|(a, b)| (NodeId(a), NodeId(b)));
                    Graph::build((0..n).map(NodeId), links).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn neighbor_symmetry(graph in arb_graph()) {
                for k in graph.nodes() {
                    for &m in graph.neighbors(k).unwrap() {
                        prop_assert!(graph.neighbors(m).unwrap().contains(&k));
                        prop_assert_ne!(m, k);
                    }
                }
            }

            #[test]
            fn two_hop_contains_neighbors(graph in arb_graph()) {
                for k in graph.nodes() {
                    let th = graph.two_hop_neighbors(k).unwrap();
                    prop_assert!(graph.neighbors(k).unwrap().is_subset(&th));
                    prop_assert!(!th.contains(&k));
                }
            }

            #[test]
            fn remove_then_add_restores(graph in arb_graph(), pick in 0usize..8) {
                let k = graph.nodes().nth(pick % graph.node_count()).unwrap();
                let adj = graph.neighbors(k).unwrap().clone();
                let mut h = graph.clone();
                h.remove_node(k).unwrap();
                h.add_node(k, adj).unwrap();
                prop_assert_eq!(h, graph);
            }
        }
    }
}
