//! The slot loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{MobilityAction, Policy, SimConfig, TopologySpec};
use super::mobility::{apply_mobility_event, MobilityChange, Monitor, ServiceState};
use super::policy::{elect, RoundInputs};
use super::report::{Punishment, RoundSummary, SimReport};
use super::{derive_seed, SimError};
use crate::cost_model::{consume_energy, cost_of_analysis, Activity, EnergyState};
use crate::ids::{detection_round, load_training, train_bayes, BayesModel, SyntheticTraffic, Transaction, VoterDetection};
use crate::payment::{allocate_budget, BudgetAllocation, ReputationTable};
use crate::topology::{Graph, NodeId};
use crate::trace::{NullSink, TraceRecord, TraceSink};

// Seed streams.
const TOPOLOGY: u64 = 1;
const ENERGY: u64 = 2;
const TRAINING: u64 = 3;
const TRAFFIC: u64 = 4;
const DETECT: u64 = 5;
const ELECTION: u64 = 6;

pub fn build_topology(cfg: &SimConfig) -> Graph {
    match &cfg.topology {
        TopologySpec::Explicit { nodes, links } => Graph::build(
            nodes.iter().copied().map(NodeId),
            links.iter().map(|&[a, b]| (NodeId(a), NodeId(b))),
        )
        .expect("validated topology"),
        TopologySpec::RandomGeometric { n, area, range } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TOPOLOGY, 0));
            Graph::random_geometric(*n, *area, *range, &mut rng)
        }
    }
}

fn build_model(cfg: &SimConfig) -> Result<BayesModel, SimError> {
    let (schema, data) = match &cfg.ids.training_file {
        Some(path) => load_training(path)?,
        None => {
            let gen = SyntheticTraffic::default();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TRAINING, 0));
            let data = gen.generate(0.5, cfg.ids.training_size, &mut rng);
            (gen.schema, data)
        }
    };
    Ok(train_bayes(&data, &schema, cfg.ids.alpha)?)
}

/// Starting battery per node: pinned values first, otherwise `initial`
/// plus a seeded uniform offset within the spread.
fn initial_energy(cfg: &SimConfig, nodes: &BTreeSet<NodeId>) -> BTreeMap<NodeId, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ENERGY, 0));
    let spread = cfg.energy.initial_spread;
    nodes
        .iter()
        .map(|&k| {
            let drawn = if spread > 0.0 {
                cfg.energy.initial + rng.random_range(-spread..=spread)
            } else {
                cfg.energy.initial
            };
            (k, cfg.pinned_energy(k).unwrap_or(drawn))
        })
        .collect()
}

fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64
}

struct Sim<'c, 's> {
    cfg: &'c SimConfig,
    policy: Policy,
    sink: &'s mut dyn TraceSink,
    graph: Graph,
    present: BTreeSet<NodeId>,
    energy: BTreeMap<NodeId, EnergyState>,
    reputations: ReputationTable,
    model: BayesModel,
    traffic_gen: SyntheticTraffic,
    service: ServiceState,
    /// Per inspecting node: current detection interval and next due slot.
    intervals: BTreeMap<NodeId, (u64, u64)>,
    cheaters: BTreeSet<NodeId>,
    inflation: BTreeMap<NodeId, f64>,
    under_delivery: BTreeMap<NodeId, f64>,
    report: SimReport,
    round: u64,
}

impl Sim<'_, '_> {
    fn trace(&mut self, slot: u64, kind: &'static str, node: Option<NodeId>, details: String) {
        self.sink.record(TraceRecord { slot, round: self.round, kind, node, details });
    }

    fn alive(&self) -> BTreeSet<NodeId> {
        self.present
            .iter()
            .copied()
            .filter(|k| self.energy[k].alive())
            .collect()
    }

    fn run_election(&mut self, slot: u64, alive: &BTreeSet<NodeId>, activity: &mut BTreeMap<NodeId, Activity>) {
        let cfg = self.cfg;
        self.round = slot / cfg.election.t_elect;
        self.trace(slot, "round", None, format!("alive={}", alive.len()));
        let sub = self.graph.induced(alive);
        let costs: BTreeMap<NodeId, crate::cost_model::CostOfAnalysis> = alive
            .iter()
            .map(|&k| {
                let rep = self.reputations.get(k).expect("tracked node");
                let c = cost_of_analysis(&self.energy[&k], cfg.election.expected_slots, rep, &cfg.election.cost)
                    .expect("alive node with validated parameters");
                (k, c)
            })
            .collect();
        let reps = self.reputations.entries().clone();
        let inputs = RoundInputs {
            budget: cfg.election.budget,
            cheaters: &self.cheaters,
            inflation: &self.inflation,
            reputations: &reps,
            round: self.round,
            slot,
            seed: derive_seed(cfg.seed, ELECTION, self.round),
        };
        let res = elect(self.policy, cfg.mode, &sub, &costs, &inputs, &mut *self.sink);

        for (&l, p) in &res.payments {
            if p.total == 0.0 {
                continue;
            }
            self.reputations.credit_payment(l, p).expect("tracked leader");
            self.trace(slot, "payment", Some(l), format!("amount={}", p.total));
        }
        for (&l, &claimed) in &res.disputes {
            let verified = res.payments.get(&l).map_or(0.0, |p| p.total);
            if claimed > verified {
                self.punish(slot, l, claimed, verified, "dispute");
            }
        }
        for (&k, &n) in &res.sent_by {
            if !res.isolated.contains(&k) {
                activity.entry(k).or_default().messages_sent += n;
            }
        }
        self.report.rounds.push(RoundSummary {
            round: self.round,
            slot,
            participants: alive.len(),
            costs: costs.iter().map(|(&k, c)| (k, c.value())).collect(),
            leaders: res.state.leaders.iter().copied().collect(),
            payments: res.payments.iter().map(|(&k, p)| (k, p.total)).collect(),
            reputations: self.reputations.entries().clone(),
            excluded: res.state.excluded.iter().copied().collect(),
            disputes: res.disputes.keys().copied().collect(),
            messages: res.messages,
        });
        self.service = res.state;
        // Every inspecting node starts the period with a detection.
        for k in self.service.servers() {
            let iv = self.intervals.get(&k).map_or(cfg.ids.initial_interval, |&(i, _)| i);
            self.intervals.insert(k, (iv, slot));
        }
    }

    fn punish(&mut self, slot: u64, leader: NodeId, promised: f64, delivered: f64, reason: &str) {
        self.reputations
            .apply_punishment(leader, promised, delivered, self.cfg.election.penalty_rate)
            .expect("promised covers delivered");
        self.trace(
            slot,
            "punish",
            Some(leader),
            format!("reason={reason} promised={promised} delivered={delivered}"),
        );
        self.report.punishments.push(Punishment { slot, leader, promised, delivered });
    }

    fn apply_mobility(&mut self, slot: u64, next_event: &mut usize) -> Result<(), SimError> {
        let events = &self.cfg.mobility.events;
        while *next_event < events.len() && events[*next_event].slot == slot {
            let ev = events[*next_event].clone();
            *next_event += 1;
            let node = NodeId(ev.node);
            let change = match ev.action {
                MobilityAction::Add => MobilityChange::Add { node },
                MobilityAction::Remove => MobilityChange::Remove { node },
            };
            let links: Vec<NodeId> = ev.links.iter().copied().map(NodeId).collect();
            let orphans: Vec<NodeId> = match ev.action {
                MobilityAction::Remove => self.service.service.get(&node).map(|s| s.iter().copied().collect()).unwrap_or_default(),
                MobilityAction::Add => Vec::new(),
            };
            self.graph = apply_mobility_event(&self.graph, change, &links, &mut self.service)
                .map_err(|source| SimError::Mobility { slot, source })?;
            match ev.action {
                MobilityAction::Add => {
                    self.present.insert(node);
                    let init = self.cfg.pinned_energy(node).unwrap_or(self.cfg.energy.initial);
                    self.energy.entry(node).or_insert_with(|| EnergyState::new(init));
                    self.report.initial_energy.entry(node).or_insert(init);
                    self.reputations.track(node, self.cfg.election.initial_reputation);
                    let how = match self.service.monitor[&node] {
                        Monitor::Leader(l) => format!("attached={l}"),
                        Monitor::Own => "attached=own".to_string(),
                    };
                    if let Monitor::Leader(l) = self.service.monitor[&node] {
                        self.intervals.entry(l).or_insert((self.cfg.ids.initial_interval, slot));
                    } else {
                        self.intervals.insert(node, (self.cfg.ids.initial_interval, slot));
                    }
                    self.trace(slot, "join", Some(node), how);
                }
                MobilityAction::Remove => {
                    self.present.remove(&node);
                    self.trace(slot, "leave", Some(node), String::new());
                    self.orphaned(slot, &orphans);
                }
            }
        }
        Ok(())
    }

    fn orphaned(&mut self, slot: u64, orphans: &[NodeId]) {
        for &v in orphans {
            self.intervals.entry(v).or_insert((self.cfg.ids.initial_interval, slot));
            self.trace(slot, "orphan", Some(v), "own-ids".to_string());
        }
    }

    fn generate_traffic(&self, slot: u64, alive: &BTreeSet<NodeId>) -> BTreeMap<NodeId, Vec<Transaction>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, TRAFFIC, slot));
        alive
            .iter()
            .map(|&k| {
                let t = self.traffic_gen.generate(self.cfg.attack_rate(k), self.cfg.ids.traffic_per_slot, &mut rng);
                (k, t)
            })
            .collect()
    }

    fn detect(
        &mut self,
        slot: u64,
        alive: &BTreeSet<NodeId>,
        traffic: &BTreeMap<NodeId, Vec<Transaction>>,
        activity: &mut BTreeMap<NodeId, Activity>,
    ) {
        let budget = self.cfg.election.budget;
        for l in self.service.servers() {
            if !alive.contains(&l) {
                continue;
            }
            let (iv, due) = *self
                .intervals
                .entry(l)
                .or_insert((self.cfg.ids.initial_interval, slot));
            if slot < due {
                continue;
            }
            let voters: Vec<NodeId> = self
                .service
                .service
                .get(&l)
                .map(|s| s.iter().copied().filter(|v| alive.contains(v)).collect())
                .unwrap_or_default();
            let mut promised = if voters.is_empty() {
                BudgetAllocation::default()
            } else {
                allocate_budget(l, &voters, &self.reputations, budget).expect("nonempty voters")
            };
            let honest: f64 = promised
                .shares
                .iter()
                .map(|(v, s)| (s.floor()).min(traffic[v].len() as f64))
                .sum();
            let mut actual = promised.clone();
            if let Some(&f) = self.under_delivery.get(&l) {
                for s in actual.shares.values_mut() {
                    *s *= f;
                }
            }
            if self.service.monitor.get(&l) == Some(&Monitor::Own) {
                promised.shares.insert(l, budget);
                actual.shares.insert(l, budget);
            }
            let r = detection_round(l, &actual, traffic, &self.model, derive_seed(self.cfg.seed, DETECT, slot << 20 | u64::from(l.0)));
            let delivered: u64 = voters.iter().map(|v| r.per_voter[v].sampled).sum();
            if (delivered as f64) < honest {
                self.punish(slot, l, honest, delivered as f64, "under-delivery");
            }
            activity.entry(l).or_default().packets_sampled += r.packets_sampled;
            let t = r.totals();
            self.report.detection.merge(&t);
            let next = self.cfg.ids.interval.next(iv, r.flagged_fraction());
            self.intervals.insert(l, (next, slot + next));
            self.trace(
                slot,
                "detect",
                Some(l),
                format!("sampled={} flagged={} true_positives={} interval={next}", t.sampled, t.flagged, t.true_positives),
            );
        }
    }

    fn consume(&mut self, slot: u64, alive: &BTreeSet<NodeId>, mut activity: BTreeMap<NodeId, Activity>) {
        let rates = self.cfg.energy.rates();
        for &k in alive {
            let act = activity.entry(k).or_default();
            act.idle_slots += 1;
            let next = consume_energy(&self.energy[&k], act, &rates);
            *self.report.charged.entry(k).or_insert(0.0) += act.charge(&rates);
            self.energy.insert(k, next);
            if !next.alive() {
                if self.report.lifetime.is_none() {
                    self.report.lifetime = Some(slot);
                    self.report.first_death = Some(k);
                }
                self.trace(slot, "death", Some(k), String::new());
                let orphans = self.service.drop_node(k);
                self.orphaned(slot, &orphans);
            }
        }
    }

    fn record_slot(&mut self, slot: u64) {
        let alive = self.alive();
        for k in self.service.unmonitored(&alive) {
            self.trace(slot, "coverage", Some(k), "unmonitored".to_string());
            self.report.coverage_violations.push((slot, k));
        }
        let energies: BTreeMap<NodeId, f64> = self.present.iter().map(|&k| (k, self.energy[&k].remaining())).collect();
        let frac = if self.present.is_empty() {
            0.0
        } else {
            alive.len() as f64 / self.present.len() as f64
        };
        self.report.alive_fraction.push(frac);
        self.report.energy_variance.push(variance(energies.values().copied()));
        self.report.energy.push(energies);
        self.report.slots_run = slot + 1;
    }
}

/// Runs the configured policy.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport, SimError> {
    run_simulation_traced(cfg, cfg.election.policy, &mut NullSink)
}

/// Runs `policy` on `cfg`, writing every event to `sink`.
pub fn run_simulation_traced(cfg: &SimConfig, policy: Policy, sink: &mut dyn TraceSink) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let graph = build_topology(cfg);
    let present: BTreeSet<NodeId> = graph.nodes().collect();
    let energy: BTreeMap<NodeId, EnergyState> = initial_energy(cfg, &present)
        .into_iter()
        .map(|(k, e)| (k, EnergyState::new(e)))
        .collect();
    let model = build_model(cfg)?;
    let traffic_gen = SyntheticTraffic { schema: model.schema().clone() };
    let report = SimReport {
        policy,
        mode: cfg.mode,
        seed: cfg.seed,
        slots_run: 0,
        rounds: Vec::new(),
        energy: Vec::new(),
        alive_fraction: Vec::new(),
        energy_variance: Vec::new(),
        lifetime: None,
        first_death: None,
        initial_energy: energy.iter().map(|(&k, e)| (k, e.remaining())).collect(),
        final_energy: BTreeMap::new(),
        charged: BTreeMap::new(),
        detection: VoterDetection::default(),
        punishments: Vec::new(),
        coverage_violations: Vec::new(),
    };
    let mut sim = Sim {
        cfg,
        policy,
        sink,
        reputations: ReputationTable::new(
            present.iter().copied(),
            cfg.election.initial_reputation,
            cfg.election.reputation_threshold,
        ),
        graph,
        present,
        energy,
        model,
        traffic_gen,
        service: ServiceState::default(),
        intervals: BTreeMap::new(),
        cheaters: cfg.misbehavior.cheaters.iter().copied().map(NodeId).collect(),
        inflation: cfg.misbehavior.payment_inflation.iter().map(|p| (NodeId(p.node), p.amount)).collect(),
        under_delivery: cfg.misbehavior.under_delivery.iter().map(|u| (NodeId(u.node), u.fraction)).collect(),
        report,
        round: 0,
    };

    let mut next_event = 0;
    for slot in 0..cfg.horizon {
        let mut activity: BTreeMap<NodeId, Activity> = BTreeMap::new();
        let alive = sim.alive();
        if alive.is_empty() && next_event >= cfg.mobility.events.len() {
            break;
        }
        if slot % cfg.election.t_elect == 0 {
            sim.run_election(slot, &alive, &mut activity);
        }
        sim.apply_mobility(slot, &mut next_event)?;
        let alive = sim.alive();
        let traffic = sim.generate_traffic(slot, &alive);
        sim.detect(slot, &alive, &traffic, &mut activity);
        sim.consume(slot, &alive, activity);
        sim.record_slot(slot);
    }
    let final_energy = sim.energy.iter().map(|(&k, e)| (k, e.remaining())).collect();
    sim.report.final_energy = final_energy;
    Ok(sim.report)
}

/// One election at slot 0 on the configured topology and initial energy,
/// with the configured cheaters and payment inflation.
pub fn elect_once(cfg: &SimConfig, sink: &mut dyn TraceSink) -> Result<crate::election::ElectionOutcome, SimError> {
    cfg.validate()?;
    let graph = build_topology(cfg);
    let initial = initial_energy(cfg, &graph.nodes().collect());
    let costs: BTreeMap<NodeId, crate::cost_model::CostOfAnalysis> = initial
        .into_iter()
        .map(|(k, e)| {
            let c = cost_of_analysis(
                &EnergyState::new(e),
                cfg.election.expected_slots,
                cfg.election.initial_reputation,
                &cfg.election.cost,
            )
            .expect("validated parameters");
            (k, c)
        })
        .collect();
    let eg = match cfg.mode {
        super::config::Mode::Cile => graph,
        super::config::Mode::Cdle => crate::clustering::overlay_graph(&crate::clustering::form_clusters(&graph)),
    };
    let reps: BTreeMap<NodeId, f64> = eg.nodes().map(|k| (k, cfg.election.initial_reputation)).collect();
    let mut round = crate::election::ElectionRound::new(&eg, &costs, cfg.election.budget)
        .with_cheaters(cfg.misbehavior.cheaters.iter().map(|&k| NodeId(k)).filter(|k| eg.contains(*k)));
    round.nonce_seed = derive_seed(cfg.seed, ELECTION, 0);
    round.reputations = Some(&reps);
    round.payment_inflation = cfg
        .misbehavior
        .payment_inflation
        .iter()
        .map(|p| (NodeId(p.node), p.amount))
        .filter(|(k, _)| eg.contains(*k))
        .collect();
    Ok(round.run(sink))
}
