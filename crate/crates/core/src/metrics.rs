//! Monte Carlo estimation of ARL and EDD, and calibrated tradeoff sweeps.
//!
//! ARL is the mean stop time with every observation pre-change. EDD is the mean stop
//! time with every observation post-change and all statistics started at zero, which is
//! the worst case for CUSUM-driven rules.
//!
//! Trials run in fixed-size chunks on the rayon pool. Trial `i` draws from the streams
//! addressed by `(seed, domain, i, sensor)` and chunk results are merged in chunk order,
//! so every estimate is a pure function of its inputs regardless of thread count.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationOptions};
use crate::cusum::{run_local_sensor, Regime, StopTime};
use crate::error::{Error, Result};
use crate::fusion::{FusionRuleSpec, RuleVariant, Scaling, ThresholdVector, TrialSimulator};
use crate::models::{Family, Network};
use crate::rng::{Domain, StreamFactory};
use crate::scalar::Scalar;
use crate::stats::{Estimate, Moments, MAX_CENSORED_FRACTION, Z95};

const CHUNK: u64 = 128;
const CHUNKS_PER_BLOCK: u64 = 32;

/// Trial count and per-trial step cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub trials: u64,
    pub run_cap: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    moments: Vec<Moments>,
    censored: Vec<u64>,
}

impl Tally {
    fn new(h: usize) -> Self {
        Self { moments: vec![Moments::default(); h], censored: vec![0; h] }
    }

    fn push(&mut self, out: &[StopTime]) {
        for (j, t) in out.iter().enumerate() {
            match t {
                StopTime::At(t) => self.moments[j].push(*t as f64),
                StopTime::Censored => self.censored[j] += 1,
            }
        }
    }

    fn merge(&mut self, other: &Tally) {
        for (a, b) in self.moments.iter_mut().zip(&other.moments) {
            a.merge(b);
        }
        for (a, b) in self.censored.iter_mut().zip(&other.censored) {
            *a += b;
        }
    }

    fn estimates(&self) -> Vec<Estimate> {
        self.moments.iter().zip(&self.censored).map(|(m, &c)| Estimate::from_moments(m, c)).collect()
    }
}

/// Result of a simulation that may stop early once its mean provably exceeds a bound.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Evaluation {
    /// When `exceeded`, a placeholder whose mean is the bound and which holds no trials.
    pub estimates: Vec<Estimate>,
    /// The smallest threshold's mean, censored trials at the cap, exceeds the bound.
    pub exceeded: bool,
}

/// Runs `opts.trials` trials of `sim`. With `abort_above = Some(b)`, gives up as soon as
/// the stop times seen so far already force the mean at the smallest threshold above `b`.
/// Stop times only add, so the outcome does not depend on which trials finished first.
pub(crate) fn evaluate<T: Scalar, D: Family<T>>(
    sim: &TrialSimulator<'_, T, D>,
    regime: Regime,
    opts: RunOptions,
    streams: &StreamFactory,
    abort_above: Option<f64>,
) -> Evaluation {
    let h = sim.thresholds().len();
    let chunks = opts.trials.div_ceil(CHUNK);
    let bound = abort_above.map(|b| b * opts.trials as f64);
    let steps = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let mut total = Tally::new(h);
    let mut start = 0;
    while start < chunks && !stop.load(Ordering::Relaxed) {
        let end = (start + CHUNKS_PER_BLOCK).min(chunks);
        let parts: Vec<Tally> = (start..end)
            .into_par_iter()
            .map(|chunk| {
                let mut tally = Tally::new(h);
                let mut out = vec![StopTime::Censored; h];
                let first = chunk * CHUNK;
                for trial in first..(first + CHUNK).min(opts.trials) {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    sim.run(regime, opts.run_cap, streams, trial, &mut out);
                    tally.push(&out);
                    if let Some(bound) = bound {
                        let t = out[0].time().unwrap_or(opts.run_cap);
                        if (steps.fetch_add(t, Ordering::Relaxed) + t) as f64 > bound {
                            stop.store(true, Ordering::Relaxed);
                        }
                    }
                }
                tally
            })
            .collect();
        for p in &parts {
            total.merge(p);
        }
        start = end;
    }
    if stop.load(Ordering::Relaxed) {
        let b = abort_above.expect("only set with a bound");
        let placeholder = Estimate { mean: b, std_dev: f64::NAN, ci_halfwidth: f64::NAN, completed: 0, censored: 0 };
        return Evaluation { estimates: vec![placeholder; h], exceeded: true };
    }
    Evaluation { estimates: total.estimates(), exceeded: false }
}

/// One estimate per threshold in `hs` (ascending), all from the same trials.
#[allow(clippy::too_many_arguments)]
pub fn simulate<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    c: &[T],
    hs: &[T],
    regime: Regime,
    opts: RunOptions,
    streams: &StreamFactory,
) -> Result<Vec<Estimate>> {
    check_opts(opts)?;
    let sim = TrialSimulator::new(net, rule, c, hs)?;
    Ok(evaluate(&sim, regime, opts, streams, None).estimates)
}

fn check_opts(opts: RunOptions) -> Result<()> {
    if opts.trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    if opts.run_cap == 0 {
        return Err(Error::InvalidArgument("run_cap must be positive".into()));
    }
    Ok(())
}

/// Mean delay with the change at time zero.
pub fn estimate_edd<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    thresholds: &ThresholdVector<T>,
    trials: u64,
    run_cap: u64,
    seed: u64,
) -> Result<Estimate> {
    let streams = StreamFactory::new(seed, Domain::Edd);
    let opts = RunOptions { trials, run_cap };
    Ok(simulate(net, rule, thresholds.c(), &[thresholds.h()], Regime::PostChange, opts, &streams)?[0])
}

/// Mean run length to false alarm by joint simulation of every sensor.
pub fn estimate_arl_direct<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    thresholds: &ThresholdVector<T>,
    trials: u64,
    run_cap: u64,
    seed: u64,
) -> Result<Estimate> {
    let streams = StreamFactory::new(seed, Domain::Arl);
    let opts = RunOptions { trials, run_cap };
    Ok(simulate(net, rule, thresholds.c(), &[thresholds.h()], Regime::PreChange, opts, &streams)?[0])
}

/// Delay after a change at `nu`, over trials that have not raised a false alarm by `nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualDelay {
    pub delay: Estimate,
    /// Trials that stopped at or before `nu`.
    pub false_alarms: u64,
}

pub fn estimate_residual_delay<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    thresholds: &ThresholdVector<T>,
    nu: u64,
    opts: RunOptions,
    seed: u64,
) -> Result<ResidualDelay> {
    check_opts(opts)?;
    let sim = TrialSimulator::new(net, rule, thresholds.c(), &[thresholds.h()])?;
    let streams = StreamFactory::new(seed, Domain::Custom(0x5245_5344 ^ nu));
    let cap = opts.run_cap.saturating_add(nu);
    let times: Vec<StopTime> = (0..opts.trials)
        .into_par_iter()
        .map(|trial| {
            let mut out = [StopTime::Censored];
            sim.run(Regime::ChangeAt(nu), cap, &streams, trial, &mut out);
            out[0]
        })
        .collect();
    let false_alarms = times.iter().filter(|t| matches!(t, StopTime::At(s) if *s <= nu)).count() as u64;
    let delay = Estimate::from_stop_times(times.into_iter().filter_map(|t| match t {
        StopTime::At(s) if s <= nu => None,
        StopTime::At(s) => Some(StopTime::At(s - nu)),
        StopTime::Censored => Some(StopTime::Censored),
    }));
    Ok(ResidualDelay { delay, false_alarms })
}

/// Pre-change stop times of one sensor of group `l` at threshold `threshold`, one per
/// trial. The pool for group `l` uses stream `(trial, l - 1)` of the pool domain.
pub fn local_false_alarm_pool<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    l: usize,
    threshold: T,
    trials: u64,
    run_cap: u64,
    streams: &StreamFactory,
) -> Result<Vec<StopTime>> {
    let group = net.group(l).ok_or_else(|| Error::InvalidArgument(format!("no group {l}")))?;
    Ok((0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = streams.sensor_stream(trial, l - 1);
            run_local_sensor(group, threshold, Regime::PreChange, run_cap, &mut rng).time
        })
        .collect())
}

/// Number of disjoint pool slices whose composed means give the interval.
pub const COMPOSE_BATCHES: u64 = 20;

/// Order-statistic composition estimate of the M-th alarm ARL.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedArl {
    /// `mean` is the average of the batch means and `ci_halfwidth` comes from their
    /// spread; `std_dev` is the spread of individual composed draws.
    pub estimate: Estimate,
    /// Censored fraction of each group's pool, by group.
    pub pool_censored: Vec<f64>,
}

impl ComposedArl {
    pub fn is_valid(&self) -> bool {
        self.estimate.is_valid() && self.pool_censored.iter().all(|&f| f <= MAX_CENSORED_FRACTION)
    }
}

/// Under pre-change laws the local stop times are independent, and the M-th alarm fires
/// at their M-th order statistic. Each group gets one pool of local stop times; the pools
/// are cut into [`COMPOSE_BATCHES`] slices, and within each slice every sensor draws its
/// stop time by resampling its group's slice. The interval reflects the variability of
/// the batch means, so it accounts for the finite pools.
pub fn estimate_arl_oneshot_composed<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    m: usize,
    thresholds: &ThresholdVector<T>,
    trials_per_sensor: u64,
    trials_compose: u64,
    run_cap: u64,
    seed: u64,
) -> Result<ComposedArl> {
    let n = net.total_sensors();
    if m == 0 || m > n {
        return Err(Error::InvalidRule(format!("M = {m} outside 1..={n}")));
    }
    if thresholds.c().len() != net.group_count() {
        return Err(Error::InvalidThresholds("one coefficient per group required".into()));
    }
    if trials_per_sensor < COMPOSE_BATCHES || trials_compose < COMPOSE_BATCHES {
        return Err(Error::InvalidArgument(format!("need at least {COMPOSE_BATCHES} pool and composition trials")));
    }
    if run_cap == 0 {
        return Err(Error::InvalidArgument("run_cap must be positive".into()));
    }
    let pool_streams = StreamFactory::new(seed, Domain::LocalPool);
    let pools = (1..=net.group_count())
        .map(|l| local_false_alarm_pool(net, l, thresholds.level(l), trials_per_sensor, run_cap, &pool_streams))
        .collect::<Result<Vec<_>>>()?;
    let pool_censored =
        pools.iter().map(|p| p.iter().filter(|t| t.is_censored()).count() as f64 / p.len() as f64).collect();

    let slice = trials_per_sensor / COMPOSE_BATCHES;
    let draws = trials_compose / COMPOSE_BATCHES;
    let sensor_group: Vec<usize> = (0..n).map(|i| net.group_of(i)).collect();
    let compose_streams = StreamFactory::new(seed, Domain::Compose);
    let batches: Vec<(Moments, u64)> = (0..COMPOSE_BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut rng = compose_streams.trial_stream(b);
            let lo = (b * slice) as usize;
            let mut sample = vec![StopTime::Censored; n];
            let mut moments = Moments::default();
            let mut censored = 0;
            for _ in 0..draws {
                for (s, &g) in sample.iter_mut().zip(&sensor_group) {
                    *s = pools[g][lo + rng.random_range(0..slice as usize)];
                }
                let (_, kth, _) = sample.select_nth_unstable(m - 1);
                match *kth {
                    StopTime::At(t) => moments.push(t as f64),
                    StopTime::Censored => censored += 1,
                }
            }
            (moments, censored)
        })
        .collect();

    let batch_means: Moments = batches.iter().map(|(m, _)| m.mean).collect();
    let mut all = Moments::default();
    let mut censored = 0;
    for (m, c) in &batches {
        all.merge(m);
        censored += c;
    }
    let estimate = Estimate {
        mean: batch_means.mean,
        std_dev: all.variance().sqrt(),
        ci_halfwidth: Z95 * (batch_means.variance() / COMPOSE_BATCHES as f64).sqrt(),
        completed: all.n,
        censored,
    };
    Ok(ComposedArl { estimate, pool_censored })
}

/// Settings shared by every point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub seed: u64,
    pub trials_arl: u64,
    pub trials_edd: u64,
    pub run_cap: u64,
    pub tolerance: f64,
}

/// One calibrated point of an ARL-versus-EDD curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub rule: String,
    pub variant: RuleVariant,
    pub m: f64,
    pub gamma_target: f64,
    pub h_star: f64,
    pub arl_hat: f64,
    pub arl_ci_halfwidth: f64,
    pub edd_hat: f64,
    pub edd_ci_halfwidth: f64,
    pub trials: u64,
    pub censored_fraction: f64,
    pub converged: bool,
    /// Calibration converged and both estimates are within the censoring budget.
    pub valid: bool,
    pub error: Option<String>,
}

impl TradeoffPoint {
    pub fn arl(&self) -> Estimate {
        Estimate {
            mean: self.arl_hat,
            std_dev: f64::NAN,
            ci_halfwidth: self.arl_ci_halfwidth,
            completed: self.trials,
            censored: 0,
        }
    }

    pub fn edd(&self) -> Estimate {
        Estimate {
            mean: self.edd_hat,
            std_dev: f64::NAN,
            ci_halfwidth: self.edd_ci_halfwidth,
            completed: self.trials,
            censored: 0,
        }
    }
}

/// A rule plus the display name used in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedRule<T: Scalar = f64> {
    pub name: String,
    pub rule: FusionRuleSpec<T>,
}

/// Calibrates every rule at every `γ` and estimates the EDD there.
///
/// A failing point is reported with `valid = false` and the error text; the sweep goes on.
pub fn tradeoff_sweep<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rules: &[NamedRule<T>],
    scaling: &Scaling<T>,
    gamma_grid: &[f64],
    opts: &SweepOptions,
) -> Vec<TradeoffPoint> {
    let mut points = Vec::with_capacity(rules.len() * gamma_grid.len());
    for named in rules {
        for &gamma in gamma_grid {
            let point = sweep_point(net, named, scaling, gamma, opts);
            let point = point.unwrap_or_else(|e| TradeoffPoint {
                rule: named.name.clone(),
                variant: named.rule.variant(),
                m: named.rule.m_value(),
                gamma_target: gamma,
                h_star: f64::NAN,
                arl_hat: f64::NAN,
                arl_ci_halfwidth: f64::NAN,
                edd_hat: f64::NAN,
                edd_ci_halfwidth: f64::NAN,
                trials: opts.trials_arl,
                censored_fraction: f64::NAN,
                converged: false,
                valid: false,
                error: Some(e.to_string()),
            });
            log::info!(
                "{} gamma={:.0}: h*={:.4} arl={:.1} edd={:.3} valid={}",
                point.rule,
                gamma,
                point.h_star,
                point.arl_hat,
                point.edd_hat,
                point.valid
            );
            points.push(point);
        }
    }
    points
}

/// Calibrates one rule at one `γ` and estimates its EDD at the calibrated threshold.
pub fn sweep_point<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    named: &NamedRule<T>,
    scaling: &Scaling<T>,
    gamma: f64,
    opts: &SweepOptions,
) -> Result<TradeoffPoint> {
    let cal_opts = CalibrationOptions {
        tolerance: opts.tolerance,
        trials: opts.trials_arl,
        run_cap: opts.run_cap,
        seed: opts.seed,
        ..CalibrationOptions::default()
    };
    let cal = calibrate(net, &named.rule, scaling, gamma, &cal_opts)?;
    let c = effective_coefficients(net, &named.rule, scaling)?;
    let thresholds = ThresholdVector::new(T::lit(cal.h_star), c)?;
    let edd = estimate_edd(net, &named.rule, &thresholds, opts.trials_edd, opts.run_cap, opts.seed)?;
    let arl = cal.arl;
    let censored_fraction = arl.censored_fraction().max(edd.censored_fraction());
    Ok(TradeoffPoint {
        rule: named.name.clone(),
        variant: named.rule.variant(),
        m: named.rule.m_value(),
        gamma_target: gamma,
        h_star: cal.h_star,
        arl_hat: arl.mean,
        arl_ci_halfwidth: arl.ci_halfwidth,
        edd_hat: edd.mean,
        edd_ci_halfwidth: edd.ci_halfwidth,
        trials: opts.trials_arl,
        censored_fraction,
        converged: cal.converged,
        valid: cal.converged && arl.is_valid() && edd.is_valid(),
        error: (!cal.converged).then(|| {
            if cal.h_star == 0.0 && cal.achieved_log_arl > cal.target_log_gamma {
                "ARL at h = 0 already exceeds gamma".to_string()
            } else {
                "calibration did not reach the tolerance".to_string()
            }
        }),
    })
}

/// Scaling coefficients the rule actually uses: all ones for the centralized rules.
pub fn effective_coefficients<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    scaling: &Scaling<T>,
) -> Result<Vec<T>> {
    if rule.variant().uses_local_thresholds() {
        scaling.coefficients(net)
    } else {
        Ok(vec![T::one(); net.group_count()])
    }
}

#[cfg(test)]
mod tests;
