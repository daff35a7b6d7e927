//! Per-packet cost of analysis and energy bookkeeping.
//!
//! A node's cost combines its private energy level and desired lifetime with
//! its public reputation:
//!
//! ```text
//! raw  = (e_slot * expected_slots / remaining) * (1 + reputation / r_scale)
//! cost = clamp(ceil_to_grid(raw, delta_c), delta_c, c_max)
//! ```
//!
//! Only the quantized cost ever leaves the node. Rounding is upward so
//! quantization never understates a cost.

use std::cmp::Ordering;
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

/// Slack used when snapping a raw cost onto the grid, so that values a few
/// ulps above a grid point are not pushed to the next one.
const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("node is dead and cannot bid")]
    DeadNode,
    #[error("expected_slots must be at least 1")]
    ZeroSlots,
    #[error("invalid cost parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyState {
    remaining: f64,
    alive: bool,
}

impl EnergyState {
    pub fn new(remaining: f64) -> Self {
        let remaining = remaining.max(0.0);
        EnergyState {
            remaining,
            alive: remaining > 0.0,
        }
    }

    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    pub fn alive(&self) -> bool {
        self.alive
    }
}

/// Per-packet cost of analysis; always a positive multiple of the cost quantum.
#[derive(Debug, Clone, Copy)]
pub struct CostOfAnalysis(f64);

impl CostOfAnalysis {
    /// `ticks * delta_c`. This is the only way grid values are produced, so two
    /// costs with equal tick counts compare bit-identical.
    pub fn from_ticks(ticks: u32, delta_c: f64) -> Self {
        CostOfAnalysis(ticks as f64 * delta_c)
    }

    /// Wraps a raw value without grid checks. Used for values taken off the
    /// wire, which may come from a misbehaving node.
    pub fn from_raw(value: f64) -> Self {
        CostOfAnalysis(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_on_grid(self, delta_c: f64) -> bool {
        let ticks = (self.0 / delta_c).round();
        ticks >= 1.0 && (ticks * delta_c - self.0).abs() <= GRID_SNAP * delta_c.max(1.0)
    }

    /// Returns this cost scaled by `lambda`.
    pub fn scaled(self, lambda: f64) -> Self {
        CostOfAnalysis(self.0 * lambda)
    }

    pub fn to_bits(self) -> u64 {
        self.0.to_bits()
    }
}

impl PartialEq for CostOfAnalysis {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CostOfAnalysis {}

impl PartialOrd for CostOfAnalysis {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CostOfAnalysis {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for CostOfAnalysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// Energy spent by one slot of analysis.
    pub e_slot: f64,
    /// Cost quantum.
    pub delta_c: f64,
    /// Cost ceiling.
    pub c_max: f64,
    /// Reputation scale.
    pub r_scale: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            e_slot: 1.0,
            delta_c: 0.125,
            c_max: 1024.0,
            r_scale: 100.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (v, name) in [
            (self.e_slot, "e_slot must be > 0"),
            (self.delta_c, "delta_c must be > 0"),
            (self.c_max, "c_max must be > 0"),
            (self.r_scale, "r_scale must be > 0"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CostError::InvalidParams(name));
            }
        }
        if self.c_max < self.delta_c {
            return Err(CostError::InvalidParams("c_max must be >= delta_c"));
        }
        Ok(())
    }

    /// Largest tick count whose cost stays under `c_max`.
    pub fn max_ticks(&self) -> u32 {
        ((self.c_max / self.delta_c) + GRID_SNAP).floor().max(1.0) as u32
    }

    /// Rounds `raw` up onto the grid and clamps to `[delta_c, c_max]`.
    pub fn quantize(&self, raw: f64) -> CostOfAnalysis {
        let ticks = (raw / self.delta_c - GRID_SNAP).ceil();
        let ticks = if ticks.is_finite() { ticks } else { f64::MAX };
        let ticks = ticks.clamp(1.0, self.max_ticks() as f64) as u32;
        CostOfAnalysis::from_ticks(ticks, self.delta_c)
    }
}

pub fn cost_of_analysis(
    energy: &EnergyState,
    expected_slots: u32,
    reputation: f64,
    params: &CostParams,
) -> Result<CostOfAnalysis, CostError> {
    if !energy.alive() {
        return Err(CostError::DeadNode);
    }
    if expected_slots == 0 {
        return Err(CostError::ZeroSlots);
    }
    let raw = (params.e_slot * expected_slots as f64 / energy.remaining())
        * (1.0 + reputation.max(0.0) / params.r_scale);
    Ok(params.quantize(raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyRates {
    pub idle: f64,
    pub message: f64,
    pub sample: f64,
}

impl Default for EnergyRates {
    fn default() -> Self {
        EnergyRates {
            idle: 0.1,
            message: 0.05,
            sample: 0.01,
        }
    }
}

/// Activity counts charged against a node's battery.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Activity {
    pub idle_slots: u64,
    pub messages_sent: u64,
    pub packets_sampled: u64,
}

impl Activity {
    pub fn charge(&self, rates: &EnergyRates) -> f64 {
        self.idle_slots as f64 * rates.idle
            + self.messages_sent as f64 * rates.message
            + self.packets_sampled as f64 * rates.sample
    }
}

/// Deducts the activity's charge, saturating at zero. A node that reaches
/// zero is dead and stays dead.
pub fn consume_energy(energy: &EnergyState, activity: &Activity, rates: &EnergyRates) -> EnergyState {
    if !energy.alive() {
        return *energy;
    }
    EnergyState::new(energy.remaining() - activity.charge(rates))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CostParams {
        CostParams {
            e_slot: 1.0,
            delta_c: 0.1,
            c_max: 10.0,
            r_scale: 100.0,
        }
    }

    #[test]
    fn cost_examples() {
        let e = EnergyState::new(100.0);
        let c = cost_of_analysis(&e, 10, 0.0, &params()).unwrap();
        assert!((c.value() - 0.1).abs() < 1e-12);
        assert_eq!(c, CostOfAnalysis::from_ticks(1, 0.1));
        let c = cost_of_analysis(&e, 10, 100.0, &params()).unwrap();
        assert!((c.value() - 0.2).abs() < 1e-12);
        assert_eq!(c, CostOfAnalysis::from_ticks(2, 0.1));
        assert_eq!(
            cost_of_analysis(&EnergyState::new(0.0), 10, 0.0, &params()),
            Err(CostError::DeadNode)
        );
    }

    #[test]
    fn cost_rounds_up_and_clamps() {
        // 10 / 34 = 0.294.. -> 0.3
        let c = cost_of_analysis(&EnergyState::new(34.0), 10, 0.0, &params()).unwrap();
        assert_eq!(c, CostOfAnalysis::from_ticks(3, 0.1));
        let c = cost_of_analysis(&EnergyState::new(1e-6), 10, 0.0, &params()).unwrap();
        assert_eq!(c, CostOfAnalysis::from_ticks(100, 0.1));
        let c = cost_of_analysis(&EnergyState::new(1e9), 10, 0.0, &params()).unwrap();
        assert_eq!(c, CostOfAnalysis::from_ticks(1, 0.1));
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        let bad = CostParams { c_max: 0.05, ..params() };
        assert!(bad.validate().is_err());
        let bad = CostParams { r_scale: 0.0, ..params() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn consume_examples() {
        let rates = EnergyRates { idle: 1.0, message: 0.5, sample: 1.0 };
        let e = EnergyState::new(10.0);
        assert_eq!(consume_energy(&e, &Activity::default(), &rates), e);
        let act = Activity { idle_slots: 1, messages_sent: 2, packets_sampled: 3 };
        // 10 - 1*1 - 2*0.5 - 3*1
        assert_eq!(consume_energy(&e, &act, &rates).remaining(), 5.0);
        let act = Activity { packets_sampled: 5, ..Default::default() };
        let dead = consume_energy(&EnergyState::new(1.0), &act, &rates);
        assert_eq!(dead.remaining(), 0.0);
        assert!(!dead.alive());
        let still = consume_energy(&dead, &Activity::default(), &rates);
        assert!(!still.alive());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_and_on_grid(
                e1 in 0.5f64..500.0, de in 0.0f64..500.0,
                t1 in 1u32..50, dt in 0u32..50,
                r1 in 0.0f64..300.0, dr in 0.0f64..300.0,
            ) {
                let p = params();
                let c = |e: f64, t: u32, r: f64| cost_of_analysis(&EnergyState::new(e), t, r, &p).unwrap();
                let base = c(e1, t1, r1);
                prop_assert!(c(e1 + de, t1, r1) <= base);
                prop_assert!(c(e1, t1 + dt, r1) >= base);
                prop_assert!(c(e1, t1, r1 + dr) >= base);
                prop_assert!(base.is_on_grid(p.delta_c));
                prop_assert!(base.value() >= p.delta_c - 1e-12 && base.value() <= p.c_max + 1e-12);
            }

            #[test]
            fn consume_never_increases(
                start in 0.0f64..100.0,
                steps in proptest::collection::vec((0u64..3, 0u64..5, 0u64..20), 0..30),
            ) {
                let rates = EnergyRates { idle: 0.3, message: 0.2, sample: 0.1 };
                let mut e = EnergyState::new(start);
                let mut charged = 0.0;
                for (i, m, s) in steps {
                    let act = Activity { idle_slots: i, messages_sent: m, packets_sampled: s };
                    let next = consume_energy(&e, &act, &rates);
                    prop_assert!(next.remaining() <= e.remaining());
                    if e.alive() { charged += act.charge(&rates); }
                    e = next;
                }
                let expected = (start - charged).max(0.0);
                prop_assert!((e.remaining() - expected).abs() < 1e-9);
            }
        }
    }
}
