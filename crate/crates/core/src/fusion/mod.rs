//! Global stopping rules at the fusion center.
//!
//! Anonymous rules count alarms without knowing who sent them:
//! * M-th alarm: a sensor's 1-bit alarm latches the first time `W > h_l`; stop once
//!   `M` sensors have latched.
//! * M-voting: stop the first time at least `M` sensors are above threshold at the same
//!   instant.
//!
//! Non-anonymous rules use sensor identities: the same two predicates restricted to a
//! selected set `D`, and weighted voting, which stops once the weighted count of
//! simultaneous alarms reaches `M`. Two centralized references are included: a CUSUM on
//! the summed LLRs of every sensor, and a mixture CUSUM over anonymized observations.
//!
//! The mixture CUSUM is an *interpreted* baseline. Each sensor's observation contributes
//! `ln(Σ_l (N_l/N) g_l(x) / Σ_l (N_l/N) f_l(x))` to the global statistic, which is then run
//! through the same reset-before-add recursion as the local CUSUMs.
//!
//! All predicates are evaluated after every sensor has updated at time `t`.

mod engine;

pub use engine::{ScriptedLlrs, TrialSimulator};

use serde::{Deserialize, Serialize};

use crate::cusum::{Regime, StopTime};
use crate::error::{Error, Result};
use crate::models::{Family, Gaussian, Network, SensorId};
use crate::rng::StreamFactory;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleVariant {
    MthAlarm,
    MVoting,
    MthAlarmWithin,
    MVotingWithin,
    WeightedVoting,
    CentralizedCusum,
    MixtureCusum,
}

impl RuleVariant {
    /// Name used in CSV output. The mixture CUSUM is always flagged as interpreted.
    pub fn label(self) -> &'static str {
        match self {
            RuleVariant::MthAlarm => "MthAlarm",
            RuleVariant::MVoting => "MVoting",
            RuleVariant::MthAlarmWithin => "MthAlarmWithin",
            RuleVariant::MVotingWithin => "MVotingWithin",
            RuleVariant::WeightedVoting => "WeightedVoting",
            RuleVariant::CentralizedCusum => "CentralizedCusum",
            RuleVariant::MixtureCusum => "MixtureCusum(interpreted)",
        }
    }

    /// Rules driven by per-sensor thresholds `c_l h` (as opposed to one global threshold).
    pub fn uses_local_thresholds(self) -> bool {
        !matches!(self, RuleVariant::CentralizedCusum | RuleVariant::MixtureCusum)
    }
}

/// A fusion rule with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionRuleSpec<T: Scalar = f64> {
    MthAlarm { m: usize },
    MVoting { m: usize },
    MthAlarmWithin { m: usize, selection: Vec<SensorId> },
    MVotingWithin { m: usize, selection: Vec<SensorId> },
    /// `weights` is indexed by flat sensor index.
    WeightedVoting { m: T, weights: Vec<T> },
    CentralizedCusum,
    MixtureCusum,
}

impl<T: Scalar> FusionRuleSpec<T> {
    pub fn variant(&self) -> RuleVariant {
        match self {
            FusionRuleSpec::MthAlarm { .. } => RuleVariant::MthAlarm,
            FusionRuleSpec::MVoting { .. } => RuleVariant::MVoting,
            FusionRuleSpec::MthAlarmWithin { .. } => RuleVariant::MthAlarmWithin,
            FusionRuleSpec::MVotingWithin { .. } => RuleVariant::MVotingWithin,
            FusionRuleSpec::WeightedVoting { .. } => RuleVariant::WeightedVoting,
            FusionRuleSpec::CentralizedCusum => RuleVariant::CentralizedCusum,
            FusionRuleSpec::MixtureCusum => RuleVariant::MixtureCusum,
        }
    }

    /// `M` as a real number; 1 for the centralized rules.
    pub fn m_value(&self) -> f64 {
        match self {
            FusionRuleSpec::MthAlarm { m }
            | FusionRuleSpec::MVoting { m }
            | FusionRuleSpec::MthAlarmWithin { m, .. }
            | FusionRuleSpec::MVotingWithin { m, .. } => *m as f64,
            FusionRuleSpec::WeightedVoting { m, .. } => m.as_f64(),
            FusionRuleSpec::CentralizedCusum | FusionRuleSpec::MixtureCusum => 1.0,
        }
    }

    /// Selection restricted to the listed 1-based groups.
    pub fn selection_of_groups<D: Family<T>>(net: &Network<T, D>, groups: &[usize]) -> Result<Vec<SensorId>> {
        let mut sel = Vec::new();
        for &l in groups {
            let g = net
                .group(l)
                .ok_or_else(|| Error::InvalidRule(format!("selection names group {l}, which does not exist")))?;
            sel.extend((1..=g.count()).map(|k| SensorId { k, l }));
        }
        Ok(sel)
    }

    /// Weights `α_{k,l} = 1{(k,l) ∈ D}`.
    pub fn indicator_weights<D: Family<T>>(net: &Network<T, D>, selection: &[SensorId]) -> Result<Vec<T>> {
        let mut w = vec![T::zero(); net.total_sensors()];
        for id in selection {
            let i = net
                .flat_index(*id)
                .ok_or_else(|| Error::InvalidRule(format!("sensor {id:?} is not in the network")))?;
            w[i] = T::one();
        }
        Ok(w)
    }

    /// Weights proportional to the group divergence, the largest set to one.
    pub fn kld_weights<D: Family<T>>(net: &Network<T, D>) -> Vec<T> {
        let klds = net.klds();
        let max = klds.iter().copied().fold(T::zero(), T::max);
        (0..net.total_sensors()).map(|i| klds[net.group_of(i)] / max).collect()
    }

    /// Checks every parameter invariant against `net`.
    pub fn validate<D: Family<T>>(&self, net: &Network<T, D>) -> Result<()> {
        let n = net.total_sensors();
        let check_m = |m: usize, limit: usize, what: &str| {
            if m == 0 || m > limit {
                Err(Error::InvalidRule(format!("M = {m} must lie in [1, {limit}] ({what})")))
            } else {
                Ok(())
            }
        };
        match self {
            FusionRuleSpec::MthAlarm { m } | FusionRuleSpec::MVoting { m } => check_m(*m, n, "N sensors"),
            FusionRuleSpec::MthAlarmWithin { m, selection } | FusionRuleSpec::MVotingWithin { m, selection } => {
                if selection.is_empty() {
                    return Err(Error::InvalidRule("selection D must be nonempty".into()));
                }
                let mut seen = std::collections::BTreeSet::new();
                for id in selection {
                    if net.flat_index(*id).is_none() {
                        return Err(Error::InvalidRule(format!("sensor (k={}, l={}) is not in the network", id.k, id.l)));
                    }
                    if !seen.insert(*id) {
                        return Err(Error::InvalidRule(format!("sensor (k={}, l={}) listed twice in D", id.k, id.l)));
                    }
                }
                check_m(*m, selection.len(), "|D| selected sensors")
            }
            FusionRuleSpec::WeightedVoting { m, weights } => {
                if weights.len() != n {
                    return Err(Error::InvalidRule(format!("expected {n} weights, got {}", weights.len())));
                }
                if let Some(w) = weights.iter().find(|w| !(**w >= T::zero() && **w <= T::one())) {
                    return Err(Error::InvalidRule(format!("weight {w} outside [0, 1]")));
                }
                if !(*m > T::zero()) || !m.is_finite() {
                    return Err(Error::InvalidRule(format!("M = {m} must be positive")));
                }
                let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
                if m.as_f64() > total {
                    return Err(Error::InvalidRule(format!(
                        "M = {m} exceeds the total weight {total}; the rule could never fire"
                    )));
                }
                Ok(())
            }
            FusionRuleSpec::CentralizedCusum | FusionRuleSpec::MixtureCusum => Ok(()),
        }
    }

    /// Flat indices of the sensors whose messages the rule can use.
    pub fn participating_sensors<D: Family<T>>(&self, net: &Network<T, D>) -> Vec<usize> {
        match self {
            FusionRuleSpec::MthAlarmWithin { selection, .. } | FusionRuleSpec::MVotingWithin { selection, .. } => {
                let mut v: Vec<usize> = selection.iter().filter_map(|id| net.flat_index(*id)).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            FusionRuleSpec::WeightedVoting { weights, .. } => {
                (0..net.total_sensors()).filter(|&i| weights[i] > T::zero()).collect()
            }
            _ => (0..net.total_sensors()).collect(),
        }
    }
}

/// How per-group threshold coefficients `c_l` are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Scaling<T: Scalar = f64> {
    /// `c_l = D(g_l ‖ f_l)`.
    Kld,
    Explicit(Vec<T>),
}

impl<T: Scalar> Scaling<T> {
    pub fn coefficients<D: Family<T>>(&self, net: &Network<T, D>) -> Result<Vec<T>> {
        let c = match self {
            Scaling::Kld => net.klds(),
            Scaling::Explicit(c) => c.clone(),
        };
        if c.len() != net.group_count() {
            return Err(Error::InvalidThresholds(format!(
                "expected {} scaling coefficients, got {}",
                net.group_count(),
                c.len()
            )));
        }
        if let Some(x) = c.iter().find(|x| !(**x > T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidThresholds(format!("scaling coefficient {x} must be positive")));
        }
        Ok(c)
    }
}

/// Per-group thresholds `h_l = c_l h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector<T: Scalar = f64> {
    h: T,
    c: Vec<T>,
}

impl<T: Scalar> ThresholdVector<T> {
    pub fn new(h: T, c: Vec<T>) -> Result<Self> {
        if !(h >= T::zero()) || !h.is_finite() {
            return Err(Error::InvalidThresholds(format!("h = {h} must be finite and >= 0")));
        }
        if c.is_empty() {
            return Err(Error::InvalidThresholds("scaling vector is empty".into()));
        }
        if let Some(x) = c.iter().find(|x| !(**x > T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidThresholds(format!("scaling coefficient {x} must be positive")));
        }
        Ok(Self { h, c })
    }

    /// `c_l = D(g_l ‖ f_l)`.
    pub fn kld<D: Family<T>>(net: &Network<T, D>, h: T) -> Result<Self> {
        Self::new(h, net.klds())
    }

    pub fn from_scaling<D: Family<T>>(net: &Network<T, D>, scaling: &Scaling<T>, h: T) -> Result<Self> {
        Self::new(h, scaling.coefficients(net)?)
    }

    /// A single scalar threshold, for the centralized rules.
    pub fn scalar<D: Family<T>>(net: &Network<T, D>, h: T) -> Result<Self> {
        Self::new(h, vec![T::one(); net.group_count()])
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn c(&self) -> &[T] {
        &self.c
    }

    /// Threshold of 1-based group `l`.
    pub fn level(&self, l: usize) -> T {
        self.c[l - 1] * self.h
    }

    pub fn with_h(&self, h: T) -> Result<Self> {
        Self::new(h, self.c.clone())
    }
}

/// Stop time of a global rule plus the sensors that satisfied the predicate at the stop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalStopTime {
    pub time: StopTime,
    pub triggering_set: Vec<SensorId>,
}

/// Runs one trial of `rule` on the shared streams `(streams, trial)`.
pub fn run_rule<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    thresholds: &ThresholdVector<T>,
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    let sim = TrialSimulator::new(net, rule, thresholds.c(), &[thresholds.h()])?;
    Ok(sim.run_with_trigger(regime, run_cap, streams, trial))
}

pub fn stop_m_th_alarm<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    thresholds: &ThresholdVector<T>,
    m: usize,
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    run_rule(net, &FusionRuleSpec::MthAlarm { m }, thresholds, regime, run_cap, streams, trial)
}

pub fn stop_m_voting<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    thresholds: &ThresholdVector<T>,
    m: usize,
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    run_rule(net, &FusionRuleSpec::MVoting { m }, thresholds, regime, run_cap, streams, trial)
}

/// M-th alarm or M-voting restricted to the selection `D`. `variant` must be one of the
/// two `*Within` variants.
#[allow(clippy::too_many_arguments)]
pub fn stop_within<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    thresholds: &ThresholdVector<T>,
    m: usize,
    selection: &[SensorId],
    variant: RuleVariant,
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    let selection = selection.to_vec();
    let rule = match variant {
        RuleVariant::MthAlarmWithin => FusionRuleSpec::MthAlarmWithin { m, selection },
        RuleVariant::MVotingWithin => FusionRuleSpec::MVotingWithin { m, selection },
        other => return Err(Error::InvalidRule(format!("{other:?} is not a selection variant"))),
    };
    run_rule(net, &rule, thresholds, regime, run_cap, streams, trial)
}

#[allow(clippy::too_many_arguments)]
pub fn stop_weighted_voting<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    thresholds: &ThresholdVector<T>,
    m: T,
    weights: &[T],
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    let rule = FusionRuleSpec::WeightedVoting { m, weights: weights.to_vec() };
    run_rule(net, &rule, thresholds, regime, run_cap, streams, trial)
}

pub fn stop_centralized_cusum<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    threshold: T,
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    let th = ThresholdVector::scalar(net, threshold)?;
    run_rule(net, &FusionRuleSpec::CentralizedCusum, &th, regime, run_cap, streams, trial)
}

pub fn stop_mixture_cusum<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    threshold: T,
    regime: Regime,
    run_cap: u64,
    streams: &StreamFactory,
    trial: u64,
) -> Result<GlobalStopTime> {
    let th = ThresholdVector::scalar(net, threshold)?;
    run_rule(net, &FusionRuleSpec::MixtureCusum, &th, regime, run_cap, streams, trial)
}

/// Per-observation LLR of the interpreted mixture CUSUM for a Gaussian network.
pub fn mixture_llr<T: Scalar>(net: &Network<T, Gaussian<T>>, x: T) -> T {
    engine::MixtureKernel::new(net).llr(x)
}

#[cfg(test)]
mod tests;
