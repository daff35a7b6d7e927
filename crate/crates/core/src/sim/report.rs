//! Simulation results and their text rendering.

use std::collections::BTreeMap;
use std::io::{self, Write};

use super::config::{Mode, Policy};
use crate::election::MessageCounts;
use crate::ids::VoterDetection;
use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub slot: u64,
    pub participants: usize,
    /// Costs the participants reported.
    pub costs: BTreeMap<NodeId, f64>,
    pub leaders: Vec<NodeId>,
    pub payments: BTreeMap<NodeId, f64>,
    /// Reputation after payments were credited.
    pub reputations: BTreeMap<NodeId, f64>,
    pub excluded: Vec<NodeId>,
    pub disputes: Vec<NodeId>,
    pub messages: MessageCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Punishment {
    pub slot: u64,
    pub leader: NodeId,
    pub promised: f64,
    pub delivered: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: Policy,
    pub mode: Mode,
    pub seed: u64,
    pub slots_run: u64,
    pub rounds: Vec<RoundSummary>,
    /// Energy at the end of each slot, for nodes present in that slot.
    pub energy: Vec<BTreeMap<NodeId, f64>>,
    pub alive_fraction: Vec<f64>,
    pub energy_variance: Vec<f64>,
    /// Slot in which the first node ran out of energy.
    pub lifetime: Option<u64>,
    pub first_death: Option<NodeId>,
    pub initial_energy: BTreeMap<NodeId, f64>,
    pub final_energy: BTreeMap<NodeId, f64>,
    /// Total activity charge per node while alive.
    pub charged: BTreeMap<NodeId, f64>,
    pub detection: VoterDetection,
    pub punishments: Vec<Punishment>,
    pub coverage_violations: Vec<(u64, NodeId)>,
}

impl SimReport {
    pub fn final_variance(&self) -> f64 {
        self.energy_variance.last().copied().unwrap_or(0.0)
    }

    fn all_nodes(&self) -> Vec<NodeId> {
        let mut ns: Vec<NodeId> = self.initial_energy.keys().copied().collect();
        ns.sort();
        ns
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# simulation report")?;
        writeln!(w, "policy\t{}", self.policy)?;
        writeln!(w, "mode\t{}", self.mode)?;
        writeln!(w, "seed\t{}", self.seed)?;
        writeln!(w, "slots\t{}", self.slots_run)?;
        match (self.lifetime, self.first_death) {
            (Some(s), Some(n)) => writeln!(w, "lifetime\t{s}\tfirst_death\t{n}")?,
            _ => writeln!(w, "lifetime\tnone")?,
        }
        writeln!(w, "final_energy_variance\t{}", self.final_variance())?;
        let d = &self.detection;
        writeln!(
            w,
            "detection\tsampled={}\tflagged={}\ttrue_positives={}\tfalse_positives={}",
            d.sampled, d.flagged, d.true_positives, d.false_positives
        )?;
        writeln!(w, "coverage_violations\t{}", self.coverage_violations.len())?;
        writeln!(w, "punishments\t{}", self.punishments.len())?;

        writeln!(w)?;
        writeln!(w, "[nodes]")?;
        writeln!(w, "node\tinitial\tfinal\tcharged")?;
        for n in self.all_nodes() {
            writeln!(
                w,
                "{n}\t{}\t{}\t{}",
                self.initial_energy[&n],
                self.final_energy.get(&n).copied().unwrap_or(0.0),
                self.charged.get(&n).copied().unwrap_or(0.0)
            )?;
        }

        writeln!(w)?;
        writeln!(w, "[rounds]")?;
        writeln!(w, "round\tslot\tparticipants\tleaders\tpayments\texcluded\tdisputes\thello\tbegin\tvote\tack")?;
        for r in &self.rounds {
            let join = |xs: &[NodeId]| {
                if xs.is_empty() {
                    "-".to_string()
                } else {
                    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
                }
            };
            let pays: Vec<String> = r
                .payments
                .iter()
                .filter(|(_, &p)| p != 0.0)
                .map(|(k, p)| format!("{k}:{p}"))
                .collect();
            let m = &r.messages;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.round,
                r.slot,
                r.participants,
                join(&r.leaders),
                if pays.is_empty() { "-".to_string() } else { pays.join(",") },
                join(&r.excluded),
                join(&r.disputes),
                m.hello,
                m.begin_election,
                m.vote,
                m.acknowledge
            )?;
        }

        let nodes = self.all_nodes();
        for (title, prefix, pick) in [
            ("[costs]", "c", (|r: &RoundSummary| &r.costs) as fn(&RoundSummary) -> &BTreeMap<NodeId, f64>),
            ("[reputation]", "r", |r: &RoundSummary| &r.reputations),
        ] {
            writeln!(w)?;
            writeln!(w, "{title}")?;
            write!(w, "round")?;
            for n in &nodes {
                write!(w, "\t{prefix}{n}")?;
            }
            writeln!(w)?;
            for r in &self.rounds {
                write!(w, "{}", r.round)?;
                for n in &nodes {
                    match pick(r).get(n) {
                        Some(v) => write!(w, "\t{v}")?,
                        None => write!(w, "\t-")?,
                    }
                }
                writeln!(w)?;
            }
        }

        writeln!(w)?;
        writeln!(w, "[punishments]")?;
        writeln!(w, "slot\tleader\tpromised\tdelivered")?;
        for p in &self.punishments {
            writeln!(w, "{}\t{}\t{}\t{}", p.slot, p.leader, p.promised, p.delivered)?;
        }

        writeln!(w)?;
        writeln!(w, "[timeline]")?;
        write!(w, "slot\talive_fraction\tenergy_variance")?;
        for n in &nodes {
            write!(w, "\te{n}")?;
        }
        writeln!(w)?;
        for (s, energies) in self.energy.iter().enumerate() {
            write!(w, "{s}\t{}\t{}", self.alive_fraction[s], self.energy_variance[s])?;
            for n in &nodes {
                match energies.get(n) {
                    Some(v) => write!(w, "\t{v}")?,
                    None => write!(w, "\t-")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is ASCII")
    }
}

/// Reports from the same configuration under several policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyComparison {
    pub runs: Vec<SimReport>,
}

impl PolicyComparison {
    pub fn get(&self, p: Policy) -> Option<&SimReport> {
        self.runs.iter().find(|r| r.policy == p)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# policy comparison")?;
        writeln!(w, "policy\tlifetime\tfinal_energy_variance\tmean_alive_fraction\tmessages")?;
        for r in &self.runs {
            let mean_alive = if r.alive_fraction.is_empty() {
                0.0
            } else {
                r.alive_fraction.iter().sum::<f64>() / r.alive_fraction.len() as f64
            };
            let msgs: u64 = r.rounds.iter().map(|x| x.messages.total()).sum();
            let life = r.lifetime.map_or("none".to_string(), |s| s.to_string());
            writeln!(w, "{}\t{life}\t{}\t{mean_alive}\t{msgs}", r.policy, r.final_variance())?;
        }
        writeln!(w)?;
        writeln!(w, "[timeline]")?;
        write!(w, "slot")?;
        for r in &self.runs {
            write!(w, "\talive_{0}\tvariance_{0}", r.policy)?;
        }
        writeln!(w)?;
        let len = self.runs.iter().map(|r| r.alive_fraction.len()).max().unwrap_or(0);
        for s in 0..len {
            write!(w, "{s}")?;
            for r in &self.runs {
                match (r.alive_fraction.get(s), r.energy_variance.get(s)) {
                    (Some(a), Some(v)) => write!(w, "\t{a}\t{v}")?,
                    _ => write!(w, "\t-\t-")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is ASCII")
    }
}
