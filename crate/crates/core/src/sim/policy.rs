//! Leader selection per round: the mechanism and two baselines.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, Policy};
use super::mobility::{Monitor, ServiceState};
use crate::clustering::{form_clusters, overlay_graph};
use crate::cost_model::CostOfAnalysis;
use crate::election::{ElectionRound, MessageCounts, MessageKind};
use crate::payment::Payment;
use crate::topology::{Graph, NodeId};
use crate::trace::{TraceRecord, TraceSink};

pub(crate) struct RoundInputs<'a> {
    pub budget: f64,
    pub cheaters: &'a BTreeSet<NodeId>,
    pub inflation: &'a BTreeMap<NodeId, f64>,
    pub reputations: &'a BTreeMap<NodeId, f64>,
    pub round: u64,
    pub slot: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RoundResult {
    pub state: ServiceState,
    pub payments: BTreeMap<NodeId, Payment>,
    pub disputes: BTreeMap<NodeId, f64>,
    pub messages: MessageCounts,
    pub sent_by: BTreeMap<NodeId, u64>,
    /// Participants without neighbors in the election graph. Their
    /// broadcasts reach no one.
    pub isolated: BTreeSet<NodeId>,
}

/// The graph on which candidate sets are formed: the topology itself, or a
/// clique per cluster.
fn election_graph(g: &Graph, mode: Mode) -> Graph {
    match mode {
        Mode::Cile => g.clone(),
        Mode::Cdle => overlay_graph(&form_clusters(g)),
    }
}

pub(crate) fn elect(
    policy: Policy,
    mode: Mode,
    g: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    inputs: &RoundInputs<'_>,
    sink: &mut dyn TraceSink,
) -> RoundResult {
    let eg = election_graph(g, mode);
    let mut res = match policy {
        Policy::Mechanism => mechanism(&eg, costs, inputs, sink),
        Policy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
            baseline(&eg, costs, inputs, sink, |_, cands| *cands.choose(&mut rng).expect("nonempty"))
        }
        Policy::Connectivity => baseline(&eg, costs, inputs, sink, |_, cands| {
            // Degree in the physical topology; ties to the lowest id.
            *cands
                .iter()
                .rev()
                .max_by_key(|&&n| g.degree(n).expect("graph node"))
                .expect("nonempty")
        }),
    };
    res.isolated = eg.nodes().filter(|&k| eg.degree(k) == Ok(0)).collect();
    res
}

fn mechanism(
    eg: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    inputs: &RoundInputs<'_>,
    sink: &mut dyn TraceSink,
) -> RoundResult {
    let mut round = ElectionRound::new(eg, costs, inputs.budget)
        .with_cheaters(inputs.cheaters.iter().copied().filter(|k| eg.contains(*k)))
        .at(inputs.round, inputs.slot);
    round.nonce_seed = inputs.seed;
    round.reputations = Some(inputs.reputations);
    round.payment_inflation = inputs
        .inflation
        .iter()
        .filter(|(k, _)| eg.contains(**k))
        .map(|(&k, &v)| (k, v))
        .collect();
    let out = round.run(sink);

    let monitor = out
        .affiliation
        .iter()
        .map(|(&k, &l)| (k, if k == l { Monitor::Own } else { Monitor::Leader(l) }))
        .collect();
    let service = out
        .votes
        .iter()
        .map(|(&l, vs)| (l, vs.iter().map(|v| v.voter).collect()))
        .collect();
    RoundResult {
        state: ServiceState {
            monitor,
            service,
            leaders: out.leaders.clone(),
            costs: costs.clone(),
            excluded: out.excluded.clone(),
        },
        payments: out.payments,
        disputes: out.disputes,
        messages: out.messages,
        sent_by: out.sent_by,
        isolated: BTreeSet::new(),
    }
}

/// Unpaid election where each node names a leader from its closed
/// neighborhood with `pick`. Messages are what an equivalent exchange would
/// cost: one Hello each, a Vote per external choice, an Acknowledge per
/// leader.
fn baseline(
    eg: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    inputs: &RoundInputs<'_>,
    sink: &mut dyn TraceSink,
    mut pick: impl FnMut(NodeId, &[NodeId]) -> NodeId,
) -> RoundResult {
    let mut res = RoundResult::default();
    let mut send = |res: &mut RoundResult, k: NodeId, kind: MessageKind, to: String| {
        res.messages.add(kind);
        *res.sent_by.entry(k).or_insert(0) += 1;
        sink.record(TraceRecord {
            slot: inputs.slot,
            round: inputs.round,
            kind: "send",
            node: Some(k),
            details: format!("{kind} to={to}"),
        });
    };
    let nodes: Vec<NodeId> = eg.nodes().collect();
    for &k in &nodes {
        send(&mut res, k, MessageKind::Hello, "*".into());
    }
    let mut choice = BTreeMap::new();
    for &k in &nodes {
        let cands: Vec<NodeId> = eg.closed_neighborhood(k).expect("graph node").into_iter().collect();
        let l = pick(k, &cands);
        choice.insert(k, l);
        if l != k {
            send(&mut res, k, MessageKind::Vote, l.to_string());
        }
    }
    let st = &mut res.state;
    for (&k, &l) in &choice {
        if l == k {
            st.monitor.insert(k, Monitor::Own);
            st.leaders.insert(k);
        } else {
            st.monitor.insert(k, Monitor::Leader(l));
            st.service.entry(l).or_default().insert(k);
            st.leaders.insert(l);
        }
    }
    st.costs = costs.clone();
    let leaders: Vec<NodeId> = st.leaders.iter().copied().collect();
    for l in leaders {
        send(&mut res, l, MessageKind::Acknowledge, "*".into());
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::ids;
    use crate::trace::NullSink;

    fn star() -> Graph {
        Graph::build(ids(&[1, 2, 3, 4]), [(1, 2), (1, 3), (1, 4)].map(|(a, b)| (NodeId(a), NodeId(b)))).unwrap()
    }

    fn flat_costs(g: &Graph) -> BTreeMap<NodeId, CostOfAnalysis> {
        g.nodes().map(|k| (k, CostOfAnalysis::from_ticks(2, 0.125))).collect()
    }

    fn run(policy: Policy, mode: Mode, g: &Graph, seed: u64) -> RoundResult {
        let empty_s = BTreeSet::new();
        let empty_m = BTreeMap::new();
        let reps = BTreeMap::new();
        let inputs = RoundInputs {
            budget: 25.0,
            cheaters: &empty_s,
            inflation: &empty_m,
            reputations: &reps,
            round: 0,
            slot: 0,
            seed,
        };
        elect(policy, mode, g, &flat_costs(g), &inputs, &mut NullSink)
    }

    #[test]
    fn connectivity_elects_the_hub() {
        let g = star();
        let r = run(Policy::Connectivity, Mode::Cile, &g, 0);
        assert_eq!(r.state.leaders, BTreeSet::from([NodeId(1)]));
        assert_eq!(r.state.service[&NodeId(1)], ids(&[2, 3, 4]).into_iter().collect::<BTreeSet<_>>());
        assert_eq!(r.messages, MessageCounts { hello: 4, begin_election: 0, vote: 3, acknowledge: 1 });
        assert!(r.payments.is_empty());
    }

    #[test]
    fn random_is_seeded() {
        let g = star();
        let a = run(Policy::Random, Mode::Cile, &g, 5);
        let b = run(Policy::Random, Mode::Cile, &g, 5);
        assert_eq!(a.state, b.state);
        for (k, m) in &a.state.monitor {
            if let Monitor::Leader(l) = m {
                assert!(g.has_link(*k, *l));
            }
        }
    }

    #[test]
    fn mechanism_on_star_favors_lowest_id_on_ties() {
        let g = star();
        let r = run(Policy::Mechanism, Mode::Cile, &g, 0);
        assert_eq!(r.state.leaders, BTreeSet::from([NodeId(1)]));
        assert!((r.payments[&NodeId(1)].total - 3.0 * 0.25 * 25.0).abs() < 1e-12);
    }

    #[test]
    fn cdle_uses_cluster_candidates() {
        let g = Graph::build(ids(&[1, 2, 3, 4, 5]), [(1, 2), (2, 3), (3, 4), (4, 5)].map(|(a, b)| (NodeId(a), NodeId(b))))
            .unwrap();
        let r = run(Policy::Mechanism, Mode::Cdle, &g, 0);
        // Clusters {1,2,3} and {4,5}; equal costs elect the lowest id of each.
        assert_eq!(r.state.leaders, BTreeSet::from([NodeId(1), NodeId(4)]));
        assert_eq!(r.state.monitor[&NodeId(3)], Monitor::Leader(NodeId(1)));
    }
}
