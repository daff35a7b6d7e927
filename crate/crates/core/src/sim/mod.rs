//! Discrete-slot simulation of periodic elections, detection and energy use.
//!
//! Every `t_elect` slots all leadership state is discarded and alive nodes
//! elect again from scratch, even if nothing changed. Between elections
//! leaders inspect their voters' traffic, everyone pays idle energy, and
//! scripted joins, departures and misbehavior are applied. All randomness
//! flows from the configured seed, so equal configs give equal runs.

mod config;
mod engine;
mod mobility;
mod policy;
mod report;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ids::IdsError;
use crate::topology::TopologyError;
use crate::trace::NullSink;

pub use config::{
    ConfigError, ElectionConfig, EnergyConfig, IdsConfig, Inflation, MisbehaviorConfig, MobilityAction,
    MobilityConfig, MobilityEvent, Mode, Policy, SimConfig, TopologySpec, UnderDelivery,
};
pub use engine::{build_topology, elect_once, run_simulation, run_simulation_traced};
pub use mobility::{apply_mobility_event, MobilityChange, Monitor, ServiceState};
pub use report::{PolicyComparison, Punishment, RoundSummary, SimReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training data: {0}")]
    Ids(#[from] IdsError),
    #[error("mobility event at slot {slot}: {source}")]
    Mobility { slot: u64, source: TopologyError },
}

/// Independent seed for `(stream, index)` under a run seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `cfg` once per policy with the same seed.
pub fn compare_election_policies(
    cfg: &SimConfig,
    policies: &BTreeSet<Policy>,
) -> Result<PolicyComparison, SimError> {
    let runs = policies
        .iter()
        .map(|&p| run_simulation_traced(cfg, p, &mut NullSink))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolicyComparison { runs })
}
