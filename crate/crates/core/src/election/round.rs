//! Runs one election round over a graph on a single-threaded, deterministic
//! message queue. Timers are logical barriers: each fires once every message
//! sent in the previous phase has been delivered.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fsm::{FsmContext, FsmEvent, NodeRuntimeState, ProtocolViolation, Recipients, Reveal, Timer};
use super::message::{AcceptAll, Authenticator, CommitmentScheme, MessageKind, Sha256Commitments, SignedMessage, Vote};
use crate::cost_model::CostOfAnalysis;
use crate::payment::{Payment, PaymentRule};
use crate::topology::{Graph, NodeId};
use crate::trace::{NullSink, TraceRecord, TraceSink};

/// Messages sent in one round, by kind. Broadcasts count once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub hello: u64,
    pub begin_election: u64,
    pub vote: u64,
    pub acknowledge: u64,
}

impl MessageCounts {
    pub fn add(&mut self, kind: MessageKind) {
        *self.get_mut(kind) += 1;
    }

    pub fn get(&self, kind: MessageKind) -> u64 {
        match kind {
            MessageKind::Hello => self.hello,
            MessageKind::BeginElection => self.begin_election,
            MessageKind::Vote => self.vote,
            MessageKind::Acknowledge => self.acknowledge,
        }
    }

    fn get_mut(&mut self, kind: MessageKind) -> &mut u64 {
        match kind {
            MessageKind::Hello => &mut self.hello,
            MessageKind::BeginElection => &mut self.begin_election,
            MessageKind::Vote => &mut self.vote,
            MessageKind::Acknowledge => &mut self.acknowledge,
        }
    }

    pub fn total(&self) -> u64 {
        self.hello + self.begin_election + self.vote + self.acknowledge
    }

    pub fn merge(&mut self, other: &MessageCounts) {
        for k in MessageKind::ALL {
            *self.get_mut(k) += other.get(k);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElectionOutcome {
    pub leaders: BTreeSet<NodeId>,
    /// Each participating node's leader (itself when it self-serves).
    pub affiliation: BTreeMap<NodeId, NodeId>,
    /// Verified payment per leader.
    pub payments: BTreeMap<NodeId, Payment>,
    /// Cheaters and silent nodes. They have no affiliation this round.
    pub excluded: BTreeSet<NodeId>,
    /// Voters counted by each leader, in arrival order.
    pub votes: BTreeMap<NodeId, Vec<Vote>>,
    /// Leaders whose announced payment a voter could not reproduce, with the
    /// amount they claimed.
    pub disputes: BTreeMap<NodeId, f64>,
    pub messages: MessageCounts,
    /// Per-node messages sent, for energy accounting.
    pub sent_by: BTreeMap<NodeId, u64>,
    pub violations: Vec<(NodeId, ProtocolViolation)>,
}

impl ElectionOutcome {
    /// The voters a leader serves (excluding itself).
    pub fn service_table(&self, leader: NodeId) -> Vec<NodeId> {
        self.votes
            .get(&leader)
            .map(|vs| vs.iter().map(|v| v.voter).collect())
            .unwrap_or_default()
    }

    pub fn payment_total(&self, leader: NodeId) -> f64 {
        self.payments.get(&leader).map_or(0.0, |p| p.total)
    }
}

/// One election round's inputs. Nodes of `graph` without an entry in
/// `costs` are silent: they send nothing and are excluded.
pub struct ElectionRound<'a> {
    pub graph: &'a Graph,
    pub costs: &'a BTreeMap<NodeId, CostOfAnalysis>,
    pub budget: f64,
    /// Nodes whose reveal does not match their commitment.
    pub cheaters: BTreeSet<NodeId>,
    /// Leaders that overstate their payment by the given amount.
    pub payment_inflation: BTreeMap<NodeId, f64>,
    pub rule: PaymentRule,
    pub nonce_seed: u64,
    pub reputations: Option<&'a BTreeMap<NodeId, f64>>,
    pub round: u64,
    pub slot: u64,
    pub scheme: &'a dyn CommitmentScheme,
    pub auth: &'a dyn Authenticator,
}

impl<'a> ElectionRound<'a> {
    pub fn new(graph: &'a Graph, costs: &'a BTreeMap<NodeId, CostOfAnalysis>, budget: f64) -> Self {
        ElectionRound {
            graph,
            costs,
            budget,
            cheaters: BTreeSet::new(),
            payment_inflation: BTreeMap::new(),
            rule: PaymentRule::SecondPrice,
            nonce_seed: 0,
            reputations: None,
            round: 0,
            slot: 0,
            scheme: &Sha256Commitments,
            auth: &AcceptAll,
        }
    }

    pub fn with_cheaters(mut self, cheaters: impl IntoIterator<Item = NodeId>) -> Self {
        self.cheaters = cheaters.into_iter().collect();
        self
    }

    pub fn with_rule(mut self, rule: PaymentRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_auth(mut self, auth: &'a dyn Authenticator) -> Self {
        self.auth = auth;
        self
    }

    pub fn at(mut self, round: u64, slot: u64) -> Self {
        self.round = round;
        self.slot = slot;
        self
    }

    /// Drives every participant's state machine to quiescence.
    pub fn run(&self, sink: &mut dyn TraceSink) -> ElectionOutcome {
        let ctx = FsmContext {
            budget: self.budget,
            rule: self.rule,
            scheme: self.scheme,
            auth: self.auth,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.nonce_seed);
        let mut states: BTreeMap<NodeId, NodeRuntimeState> = BTreeMap::new();
        for k in self.graph.nodes() {
            let Some(&cost) = self.costs.get(&k) else { continue };
            let nonce: u64 = rng.random();
            let neighbors = self.graph.neighbors(k).expect("node from graph").clone();
            let mut st = NodeRuntimeState::new(k, neighbors, cost, nonce);
            if self.cheaters.contains(&k) {
                st = st.with_reveal(Reveal::Tampered(cost.scaled(0.5)));
            }
            if let Some(&extra) = self.payment_inflation.get(&k) {
                st = st.with_payment_inflation(extra);
            }
            if let Some(table) = self.reputations {
                st = st.with_reputation_table(table.clone());
            }
            states.insert(k, st);
        }

        let mut driver = Driver {
            ctx,
            states,
            queue: VecDeque::new(),
            outcome: ElectionOutcome::default(),
            sink,
            round: self.round,
            slot: self.slot,
        };
        driver.fire_all(None);
        for timer in [Timer::T1, Timer::T2, Timer::T3] {
            driver.drain();
            driver.fire_all(Some(timer));
        }
        driver.drain();
        self.collect(driver.states, driver.outcome)
    }

    fn collect(&self, states: BTreeMap<NodeId, NodeRuntimeState>, mut outcome: ElectionOutcome) -> ElectionOutcome {
        let mut excluded: BTreeSet<NodeId> = self
            .graph
            .nodes()
            .filter(|k| !states.contains_key(k))
            .collect();
        excluded.extend(self.cheaters.iter().copied().filter(|k| self.graph.contains(*k)));
        for st in states.values() {
            excluded.extend(st.excluded().iter().copied());
        }
        for (&k, st) in &states {
            if excluded.contains(&k) {
                continue;
            }
            outcome.affiliation.insert(k, st.leadernode());
            if st.leader() {
                outcome.leaders.insert(k);
                outcome.votes.insert(k, st.received_votes().to_vec());
                outcome
                    .payments
                    .insert(k, st.payment().cloned().unwrap_or_default());
            }
            for &l in st.disputed() {
                let claimed = states[&l].payment().map_or(0.0, |p| p.total)
                    + self.payment_inflation.get(&l).copied().unwrap_or(0.0);
                outcome.disputes.insert(l, claimed);
            }
        }
        outcome.excluded = excluded;
        debug_assert!(outcome
            .affiliation
            .values()
            .all(|l| outcome.leaders.contains(l)));
        outcome
    }
}

struct Driver<'a, 's> {
    ctx: FsmContext<'a>,
    states: BTreeMap<NodeId, NodeRuntimeState>,
    queue: VecDeque<(NodeId, SignedMessage)>,
    outcome: ElectionOutcome,
    sink: &'s mut dyn TraceSink,
    round: u64,
    slot: u64,
}

impl Driver<'_, '_> {
    fn trace(&mut self, kind: &'static str, node: NodeId, details: String) {
        self.sink.record(TraceRecord {
            slot: self.slot,
            round: self.round,
            kind,
            node: Some(node),
            details,
        });
    }

    /// Round start (`None`) or a timer, to every node that has it armed.
    fn fire_all(&mut self, timer: Option<Timer>) {
        let ids: Vec<NodeId> = self.states.keys().copied().collect();
        for k in ids {
            let event = match timer {
                None => FsmEvent::RoundStart,
                Some(t) if self.states[&k].armed_timer() == Some(t) => FsmEvent::Expire(t),
                Some(_) => continue,
            };
            self.step(k, event);
        }
    }

    fn drain(&mut self) {
        while let Some((to, msg)) = self.queue.pop_front() {
            if self.states.contains_key(&to) {
                self.step(to, FsmEvent::Deliver(msg));
            }
        }
    }

    fn step(&mut self, k: NodeId, event: FsmEvent) {
        let label = match &event {
            FsmEvent::RoundStart => "start".to_string(),
            FsmEvent::Expire(t) => format!("{t:?}"),
            FsmEvent::Deliver(m) => format!("recv {} from {}", m.message.kind(), m.message.sender()),
        };
        let st = self.states.get_mut(&k).expect("stepping a known node");
        let before = st.phase();
        match st.step(event, &self.ctx) {
            Ok(out) => {
                let after = st.phase();
                if after != before {
                    self.trace("transition", k, format!("{before}->{after} on {label}"));
                }
                for o in out {
                    let kind = o.message.message.kind();
                    self.outcome.messages.add(kind);
                    *self.outcome.sent_by.entry(k).or_insert(0) += 1;
                    let to = match o.to {
                        Recipients::Neighbors => "*".to_string(),
                        Recipients::One(n) => n.to_string(),
                    };
                    self.trace("send", k, format!("{kind} to={to} {}", o.message.message.summary()));
                    match o.to {
                        Recipients::One(n) => self.queue.push_back((n, o.message)),
                        Recipients::Neighbors => {
                            let ns = self.ctx_neighbors(k);
                            for n in ns {
                                self.queue.push_back((n, o.message.clone()));
                            }
                        }
                    }
                }
            }
            Err(v) => {
                self.trace("violation", k, v.to_string());
                self.outcome.violations.push((k, v));
            }
        }
    }

    fn ctx_neighbors(&self, k: NodeId) -> Vec<NodeId> {
        self.states[&k].neighbors().iter().copied().collect()
    }
}

/// Runs a round with default authentication, commitment hashing and the
/// second-price rule.
pub fn run_election_round(
    graph: &Graph,
    costs: &BTreeMap<NodeId, CostOfAnalysis>,
    budget: f64,
    cheaters: &BTreeSet<NodeId>,
) -> ElectionOutcome {
    ElectionRound::new(graph, costs, budget)
        .with_cheaters(cheaters.iter().copied())
        .run(&mut NullSink)
}
