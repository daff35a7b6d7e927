//! Who monitors whom between elections, and how joins, departures and deaths
//! change that without a new election.

use std::collections::{BTreeMap, BTreeSet};

use crate::cost_model::CostOfAnalysis;
use crate::topology::{Graph, NodeId, TopologyError};

/// How a node's own traffic is inspected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    /// Served by a leader it voted for (or attached to).
    Leader(NodeId),
    /// Runs its own IDS: it won its own election, is isolated, or was
    /// orphaned.
    Own,
}

/// Service relationships in force until the next election.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceState {
    pub monitor: BTreeMap<NodeId, Monitor>,
    /// Voters each leader serves, excluding itself.
    pub service: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// This round's elected leaders.
    pub leaders: BTreeSet<NodeId>,
    /// Costs reported this round.
    pub costs: BTreeMap<NodeId, CostOfAnalysis>,
    /// Participants the election excluded; they are not monitored.
    pub excluded: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobilityChange {
    Add { node: NodeId },
    Remove { node: NodeId },
}

impl ServiceState {
    /// Drops `k` from every relationship. Returns the voters it leaves
    /// orphaned, which fall back to their own IDS.
    pub fn drop_node(&mut self, k: NodeId) -> Vec<NodeId> {
        if let Some(Monitor::Leader(l)) = self.monitor.remove(&k) {
            if let Some(s) = self.service.get_mut(&l) {
                s.remove(&k);
            }
        }
        self.leaders.remove(&k);
        self.excluded.remove(&k);
        let orphans: Vec<NodeId> = self.service.remove(&k).unwrap_or_default().into_iter().collect();
        for &v in &orphans {
            self.monitor.insert(v, Monitor::Own);
        }
        orphans
    }

    /// Attaches a newcomer to the `(cost, id)`-minimal current leader among
    /// `neighbors`, or to its own IDS if none of them leads.
    pub fn attach(&mut self, k: NodeId, neighbors: &BTreeSet<NodeId>) -> Monitor {
        let best = neighbors
            .iter()
            .filter(|n| self.leaders.contains(n))
            .filter_map(|&n| self.costs.get(&n).map(|&c| (c, n)))
            .min();
        let m = match best {
            Some((_, l)) => {
                self.service.entry(l).or_default().insert(k);
                Monitor::Leader(l)
            }
            None => Monitor::Own,
        };
        self.monitor.insert(k, m);
        m
    }

    /// Nodes that inspect traffic this slot: leaders, dual-role voters with
    /// voters of their own, and everyone on its own IDS.
    pub fn servers(&self) -> BTreeSet<NodeId> {
        let mut s: BTreeSet<NodeId> = self
            .service
            .iter()
            .filter(|(_, vs)| !vs.is_empty())
            .map(|(&l, _)| l)
            .collect();
        s.extend(
            self.monitor
                .iter()
                .filter(|(_, m)| **m == Monitor::Own)
                .map(|(&k, _)| k),
        );
        s
    }

    /// Alive, non-excluded nodes that nobody inspects.
    pub fn unmonitored(&self, alive: &BTreeSet<NodeId>) -> Vec<NodeId> {
        alive
            .iter()
            .copied()
            .filter(|k| !self.excluded.contains(k))
            .filter(|k| match self.monitor.get(k) {
                Some(Monitor::Own) => false,
                Some(Monitor::Leader(l)) => {
                    !(alive.contains(l) && self.service.get(l).is_some_and(|s| s.contains(k)))
                }
                None => true,
            })
            .collect()
    }
}

/// Applies one join or departure to the topology and patches service until
/// the next election. A joining node is given `links` to present nodes.
pub fn apply_mobility_event(
    g: &Graph,
    change: MobilityChange,
    links: &[NodeId],
    pending: &mut ServiceState,
) -> Result<Graph, TopologyError> {
    let mut next = g.clone();
    match change {
        MobilityChange::Add { node } => {
            next.add_node(node, links.iter().copied())?;
            let ns = next.neighbors(node)?.clone();
            pending.attach(node, &ns);
        }
        MobilityChange::Remove { node } => {
            next.remove_node(node)?;
            pending.drop_node(node);
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::ids;

    fn path_state() -> (Graph, ServiceState) {
        // Path fixture after an election: a self-serves, b is served by c.
        let g = Graph::build(ids(&[1, 2, 3]), [(NodeId(1), NodeId(2)), (NodeId(2), NodeId(3))]).unwrap();
        let st = ServiceState {
            monitor: BTreeMap::from([
                (NodeId(1), Monitor::Own),
                (NodeId(2), Monitor::Leader(NodeId(3))),
                (NodeId(3), Monitor::Own),
            ]),
            service: BTreeMap::from([(NodeId(3), BTreeSet::from([NodeId(2)]))]),
            leaders: BTreeSet::from([NodeId(1), NodeId(3)]),
            costs: BTreeMap::from([
                (NodeId(1), CostOfAnalysis::from_ticks(2, 0.1)),
                (NodeId(2), CostOfAnalysis::from_ticks(3, 0.1)),
                (NodeId(3), CostOfAnalysis::from_ticks(1, 0.1)),
            ]),
            excluded: BTreeSet::new(),
        };
        (g, st)
    }

    #[test]
    fn join_next_to_leaders_picks_cheapest() {
        let (g, mut st) = path_state();
        let g2 = apply_mobility_event(&g, MobilityChange::Add { node: NodeId(4) }, &ids(&[1, 3]), &mut st).unwrap();
        assert!(g2.has_link(NodeId(4), NodeId(1)));
        assert_eq!(st.monitor[&NodeId(4)], Monitor::Leader(NodeId(3)));
        assert!(st.service[&NodeId(3)].contains(&NodeId(4)));
        let alive: BTreeSet<NodeId> = g2.nodes().collect();
        assert!(st.unmonitored(&alive).is_empty());
    }

    #[test]
    fn join_next_to_ordinary_node_runs_own_ids() {
        let (g, mut st) = path_state();
        apply_mobility_event(&g, MobilityChange::Add { node: NodeId(4) }, &ids(&[2]), &mut st).unwrap();
        assert_eq!(st.monitor[&NodeId(4)], Monitor::Own);
    }

    #[test]
    fn removing_leader_orphans_voters() {
        let (g, mut st) = path_state();
        let g2 = apply_mobility_event(&g, MobilityChange::Remove { node: NodeId(3) }, &[], &mut st).unwrap();
        assert!(!g2.contains(NodeId(3)));
        assert_eq!(st.monitor[&NodeId(2)], Monitor::Own);
        assert!(!st.leaders.contains(&NodeId(3)));
        assert!(st.unmonitored(&g2.nodes().collect()).is_empty());
    }

    #[test]
    fn removing_voter_shrinks_service_table() {
        let (g, mut st) = path_state();
        apply_mobility_event(&g, MobilityChange::Remove { node: NodeId(2) }, &[], &mut st).unwrap();
        assert!(st.service[&NodeId(3)].is_empty());
        assert!(!st.servers().is_empty());
    }

    #[test]
    fn topology_errors_pass_through() {
        let (g, mut st) = path_state();
        assert_eq!(
            apply_mobility_event(&g, MobilityChange::Remove { node: NodeId(9) }, &[], &mut st),
            Err(TopologyError::UnknownNode(NodeId(9)))
        );
        assert_eq!(
            apply_mobility_event(&g, MobilityChange::Add { node: NodeId(1) }, &[], &mut st),
            Err(TopologyError::DuplicateNode(NodeId(1)))
        );
    }

    #[test]
    fn dead_leader_is_uncovered_until_dropped() {
        let (g, mut st) = path_state();
        let mut alive: BTreeSet<NodeId> = g.nodes().collect();
        alive.remove(&NodeId(3));
        assert_eq!(st.unmonitored(&alive), vec![NodeId(2)]);
        st.drop_node(NodeId(3));
        assert!(st.unmonitored(&alive).is_empty());
    }
}
