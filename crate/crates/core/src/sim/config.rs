//! Simulation configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! horizon = 200          # slots
//! mode = "cile"          # or "cdle"
//!
//! [topology]
//! kind = "explicit"      # or "random-geometric" with n, area, range
//! nodes = [1, 2, 3]
//! links = [[1, 2], [2, 3]]
//!
//! [energy]
//! initial = 100.0
//! initial_spread = 0.0   # initial energy drawn from initial ± spread
//! initial_by_node = { "1" = 80.0 }   # exact per-node overrides
//! idle = 0.01
//! message = 0.05
//! sample = 0.001
//!
//! [election]
//! policy = "mechanism"   # or "random", "connectivity"
//! budget = 25.0
//! t_elect = 10
//! expected_slots = 100
//! initial_reputation = 10.0
//! reputation_threshold = 1.0
//! penalty_rate = 0.5
//! [election.cost]
//! e_slot = 1.0
//! delta_c = 0.125
//! c_max = 1024.0
//! r_scale = 100.0
//!
//! [ids]
//! alpha = 1.0
//! training_file = "train.csv"       # optional; synthetic otherwise
//! training_size = 200
//! traffic_per_slot = 50
//! attack_rate = 0.05
//! attack_rates = { "3" = 0.5 }
//! initial_interval = 1
//! interval = { floor = 1, ceiling = 8, threshold = 0.2 }
//!
//! [mobility]
//! events = [{ slot = 50, action = "add", node = 9, links = [1] },
//!           { slot = 80, action = "remove", node = 2 }]
//!
//! [misbehavior]
//! cheaters = [2]
//! under_delivery = [{ node = 3, fraction = 0.5 }]
//! payment_inflation = [{ node = 3, amount = 1.0 }]
//! ```
//!
//! Every section except `[topology]` is optional. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::cost_model::{CostParams, EnergyRates};
use crate::ids::IntervalRule;
use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Network-wide neighbor election.
    #[default]
    Cile,
    /// One leader per 1-hop cluster.
    Cdle,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Cile => "cile",
            Mode::Cdle => "cdle",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    #[default]
    Mechanism,
    Random,
    Connectivity,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Mechanism, Policy::Random, Policy::Connectivity];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Mechanism => "mechanism",
            Policy::Random => "random",
            Policy::Connectivity => "connectivity",
        })
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mechanism" => Ok(Policy::Mechanism),
            "random" => Ok(Policy::Random),
            "connectivity" => Ok(Policy::Connectivity),
            other => Err(format!("unknown policy {other:?} (expected mechanism, random or connectivity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    Explicit {
        nodes: Vec<u32>,
        #[serde(default)]
        links: Vec<[u32; 2]>,
    },
    RandomGeometric { n: u32, area: f64, range: f64 },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub initial: f64,
    pub initial_spread: f64,
    /// Per-node initial energy, keyed by node id. Overrides the spread.
    pub initial_by_node: BTreeMap<String, f64>,
    pub idle: f64,
    pub message: f64,
    pub sample: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            initial: 100.0,
            initial_spread: 0.0,
            initial_by_node: BTreeMap::new(),
            idle: 0.01,
            message: 0.05,
            sample: 0.001,
        }
    }
}

impl EnergyConfig {
    pub fn rates(&self) -> EnergyRates {
        EnergyRates { idle: self.idle, message: self.message, sample: self.sample }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectionConfig {
    pub policy: Policy,
    /// Packets per slot a leader inspects for each vote.
    pub budget: f64,
    /// Slots between elections.
    pub t_elect: u64,
    /// Desired lifetime fed to the cost model.
    pub expected_slots: u32,
    pub initial_reputation: f64,
    pub reputation_threshold: f64,
    pub penalty_rate: f64,
    pub cost: CostParams,
}

impl Default for ElectionConfig {
    fn default() -> Self {
        ElectionConfig {
            policy: Policy::Mechanism,
            budget: 25.0,
            t_elect: 10,
            expected_slots: 100,
            initial_reputation: 10.0,
            reputation_threshold: 1.0,
            penalty_rate: 0.5,
            cost: CostParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdsConfig {
    pub alpha: f64,
    pub training_file: Option<PathBuf>,
    pub training_size: usize,
    pub traffic_per_slot: usize,
    pub attack_rate: f64,
    /// Per-node overrides, keyed by node id.
    pub attack_rates: BTreeMap<String, f64>,
    pub initial_interval: u64,
    pub interval: IntervalRule,
}

impl Default for IdsConfig {
    fn default() -> Self {
        IdsConfig {
            alpha: 1.0,
            training_file: None,
            training_size: 200,
            traffic_per_slot: 50,
            attack_rate: 0.05,
            attack_rates: BTreeMap::new(),
            initial_interval: 1,
            interval: IntervalRule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobilityAction {
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityEvent {
    pub slot: u64,
    pub action: MobilityAction,
    pub node: u32,
    #[serde(default)]
    pub links: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub events: Vec<MobilityEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnderDelivery {
    pub node: u32,
    /// Fraction of each promised share actually inspected.
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inflation {
    pub node: u32,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisbehaviorConfig {
    /// Nodes whose reveal never matches their commitment.
    pub cheaters: Vec<u32>,
    pub under_delivery: Vec<UnderDelivery>,
    pub payment_inflation: Vec<Inflation>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    /// Slots to simulate.
    pub horizon: u64,
    #[serde(default)]
    pub mode: Mode,
    pub topology: TopologySpec,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub election: ElectionConfig,
    #[serde(default)]
    pub ids: IdsConfig,
    #[serde(default)]
    pub mobility: MobilityConfig,
    #[serde(default)]
    pub misbehavior: MisbehaviorConfig,
}

fn nonneg(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a finite number >= 0, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be > 0, got {v}")))
    }
}

fn fraction(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("must be within [0, 1], got {v}")))
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config file. A relative `training_file` is
    /// resolved against the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(tf) = &cfg.ids.training_file {
            if tf.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.ids.training_file = Some(base.join(tf));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.topology {
            TopologySpec::Explicit { nodes, links } => {
                let mut seen = std::collections::BTreeSet::new();
                for &n in nodes {
                    if !seen.insert(n) {
                        return Err(invalid("topology.nodes", format!("duplicate node {n}")));
                    }
                }
                for (i, &[a, b]) in links.iter().enumerate() {
                    if a == b {
                        return Err(invalid(format!("topology.links[{i}]"), format!("self-loop on {a}")));
                    }
                    if let Some(x) = [a, b].into_iter().find(|x| !seen.contains(x)) {
                        return Err(invalid(format!("topology.links[{i}]"), format!("unknown node {x}")));
                    }
                }
            }
            TopologySpec::RandomGeometric { area, range, .. } => {
                positive("topology.area", *area)?;
                nonneg("topology.range", *range)?;
            }
        }
        let e = &self.energy;
        positive("energy.initial", e.initial)?;
        nonneg("energy.initial_spread", e.initial_spread)?;
        if e.initial_spread >= e.initial {
            return Err(invalid("energy.initial_spread", "must be smaller than energy.initial"));
        }
        for (k, &v) in &e.initial_by_node {
            if k.parse::<u32>().is_err() {
                return Err(invalid(format!("energy.initial_by_node.{k}"), "key must be a node id"));
            }
            positive(&format!("energy.initial_by_node.{k}"), v)?;
        }
        nonneg("energy.idle", e.idle)?;
        nonneg("energy.message", e.message)?;
        nonneg("energy.sample", e.sample)?;

        let el = &self.election;
        nonneg("election.budget", el.budget)?;
        if el.t_elect == 0 {
            return Err(invalid("election.t_elect", "must be >= 1"));
        }
        if el.expected_slots == 0 {
            return Err(invalid("election.expected_slots", "must be >= 1"));
        }
        nonneg("election.initial_reputation", el.initial_reputation)?;
        nonneg("election.reputation_threshold", el.reputation_threshold)?;
        nonneg("election.penalty_rate", el.penalty_rate)?;
        el.cost
            .validate()
            .map_err(|err| invalid("election.cost", err.to_string()))?;

        let ids = &self.ids;
        positive("ids.alpha", ids.alpha)?;
        if ids.training_file.is_none() && ids.training_size == 0 {
            return Err(invalid("ids.training_size", "must be >= 1 without a training file"));
        }
        fraction("ids.attack_rate", ids.attack_rate)?;
        for (k, &v) in &ids.attack_rates {
            if k.parse::<u32>().is_err() {
                return Err(invalid(format!("ids.attack_rates.{k}"), "key must be a node id"));
            }
            fraction(&format!("ids.attack_rates.{k}"), v)?;
        }
        let iv = &ids.interval;
        if iv.floor == 0 || iv.floor > iv.ceiling {
            return Err(invalid("ids.interval", "need 1 <= floor <= ceiling"));
        }
        fraction("ids.interval.threshold", iv.threshold)?;
        if !(iv.floor..=iv.ceiling).contains(&ids.initial_interval) {
            return Err(invalid("ids.initial_interval", "must lie within the interval bounds"));
        }

        let mut last = 0;
        for (i, ev) in self.mobility.events.iter().enumerate() {
            if ev.slot < last {
                return Err(invalid(format!("mobility.events[{i}].slot"), "events must be in slot order"));
            }
            last = ev.slot;
            if ev.action == MobilityAction::Remove && !ev.links.is_empty() {
                return Err(invalid(format!("mobility.events[{i}].links"), "remove events take no links"));
            }
        }
        for (i, u) in self.misbehavior.under_delivery.iter().enumerate() {
            fraction(&format!("misbehavior.under_delivery[{i}].fraction"), u.fraction)?;
        }
        for (i, p) in self.misbehavior.payment_inflation.iter().enumerate() {
            positive(&format!("misbehavior.payment_inflation[{i}].amount"), p.amount)?;
        }
        Ok(())
    }

    /// Configured initial energy of `k`, if it is pinned per node.
    pub fn pinned_energy(&self, k: NodeId) -> Option<f64> {
        self.energy.initial_by_node.get(&k.0.to_string()).copied()
    }

    pub fn attack_rate(&self, k: NodeId) -> f64 {
        self.ids
            .attack_rates
            .get(&k.0.to_string())
            .copied()
            .unwrap_or(self.ids.attack_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
horizon = 20
[topology]
kind = "explicit"
nodes = [1, 2, 3]
links = [[1, 2], [2, 3]]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = SimConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.mode, Mode::Cile);
        assert_eq!(cfg.election, ElectionConfig::default());
        assert_eq!(
            cfg.topology,
            TopologySpec::Explicit { nodes: vec![1, 2, 3], links: vec![[1, 2], [2, 3]] }
        );
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
seed = 7
horizon = 200
mode = "cdle"
[topology]
kind = "random-geometric"
n = 20
area = 100.0
range = 30.0
[energy]
initial = 50.0
idle = 0.02
[election]
policy = "connectivity"
t_elect = 5
[election.cost]
e_slot = 1.0
delta_c = 0.25
c_max = 8.0
r_scale = 50.0
[ids]
attack_rates = { "3" = 0.5 }
interval = { floor = 2, ceiling = 16, threshold = 0.3 }
initial_interval = 4
[mobility]
events = [{ slot = 5, action = "add", node = 30, links = [1] }, { slot = 9, action = "remove", node = 2 }]
[misbehavior]
cheaters = [4]
under_delivery = [{ node = 3, fraction = 0.5 }]
"#;
        let cfg = SimConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.mode, Mode::Cdle);
        assert_eq!(cfg.election.policy, Policy::Connectivity);
        assert_eq!(cfg.election.cost.delta_c, 0.25);
        assert_eq!(cfg.attack_rate(NodeId(3)), 0.5);
        assert_eq!(cfg.attack_rate(NodeId(4)), 0.05);
        assert_eq!(cfg.mobility.events[1].action, MobilityAction::Remove);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = format!("{MINIMAL}\n[energy]\nidle_rate = 1.0\n");
        assert!(matches!(SimConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
        let text = format!("bogus = 1\n{MINIMAL}");
        assert!(matches!(SimConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
        let text = "horizon = 1\n[topology]\nkind = \"explicit\"\nnodes = [1]\nextra = 2\n";
        assert!(matches!(SimConfig::from_toml_str(text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn field_level_diagnostics() {
        let field = |text: &str| match SimConfig::from_toml_str(text) {
            Err(ConfigError::Invalid { field, .. }) => field,
            other => panic!("expected an invalid-field error, got {other:?}"),
        };
        assert_eq!(field(&format!("{MINIMAL}[election]\nt_elect = 0\n")), "election.t_elect");
        assert_eq!(field(&format!("{MINIMAL}[energy]\nidle = -1.0\n")), "energy.idle");
        assert_eq!(
            field("horizon = 1\n[topology]\nkind = \"explicit\"\nnodes = [1]\nlinks = [[1, 4]]\n"),
            "topology.links[0]"
        );
        assert_eq!(
            field(&format!("{MINIMAL}[misbehavior]\nunder_delivery = [{{ node = 1, fraction = 2.0 }}]\n")),
            "misbehavior.under_delivery[0].fraction"
        );
        assert_eq!(field(&format!("{MINIMAL}[ids]\nalpha = 0.0\n")), "ids.alpha");
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            SimConfig::from_file(Path::new("/nonexistent/sim.toml")),
            Err(ConfigError::Io { .. })
        ));
    }
}
