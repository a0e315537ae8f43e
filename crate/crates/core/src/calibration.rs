//! Threshold calibration: find the scalar `h` at which a rule's ARL equals `γ`.
//!
//! Root finding runs on `ln ARL(h) - ln γ`, which is close to linear in `h`. The first-order
//! threshold seeds the search and its exponent seeds the slope. A pilot phase with a tenth
//! of the trials locates the root roughly; the full phase refines it. Every evaluation of
//! one phase reuses the same random streams, so the estimated ARL is exactly monotone in `h`.

use serde::{Deserialize, Serialize};

use crate::asymptotics::LambdaMap;
use crate::cusum::Regime;
use crate::error::{Error, Result};
use crate::fusion::{FusionRuleSpec, Scaling, TrialSimulator};
use crate::metrics::{effective_coefficients, evaluate, RunOptions};
use crate::models::{Family, Network};
use crate::rng::{Domain, StreamFactory};
use crate::scalar::Scalar;
use crate::stats::{Estimate, MAX_CENSORED_FRACTION};

/// Evaluations whose running mean provably exceeds `γ e^ABORT_LOG` stop early.
const ABORT_LOG: f64 = 1.0;
/// Sensor count up to which the weighted-voting exponent is found by enumeration.
const EXACT_SUBSET_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Accepted `|ln ARL(h*) - ln γ|`.
    pub tolerance: f64,
    pub trials: u64,
    /// Pilot trials; 0 picks a tenth of `trials` (at least 500).
    pub pilot_trials: u64,
    pub run_cap: u64,
    pub seed: u64,
    /// Evaluations allowed in each phase.
    pub max_iterations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { tolerance: 0.05, trials: 20_000, pilot_trials: 0, run_cap: 1_000_000, seed: 0, max_iterations: 12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub h_star: f64,
    pub achieved_log_arl: f64,
    pub target_log_gamma: f64,
    /// Evaluations over both phases.
    pub iterations: usize,
    pub trials_per_eval: u64,
    pub converged: bool,
    /// Full-phase ARL estimate at `h_star`.
    pub arl: Estimate,
}

/// Rate `κ` in `ARL(h) ≈ e^{κ h}` predicted for the rule under coefficients `c`.
///
/// M-th alarm: `c^{(λ(M))}`; voting: `Σ_{m≤M} c^{(λ(m))}`; weighted voting: the cheapest
/// `Σ c` over sensor sets whose weights reach `M`; centralized rules: 1. The within
/// variants use only the selected sensors.
pub fn arl_exponent<T: Scalar, D: Family<T>>(net: &Network<T, D>, rule: &FusionRuleSpec<T>, c: &[T]) -> Result<f64> {
    rule.validate(net)?;
    let c: Vec<f64> = c.iter().map(|x| x.as_f64()).collect();
    if c.len() != net.group_count() {
        return Err(Error::InvalidThresholds(format!(
            "expected {} scaling coefficients, got {}",
            net.group_count(),
            c.len()
        )));
    }
    let mut counts = vec![0usize; net.group_count()];
    for i in rule.participating_sensors(net) {
        counts[net.group_of(i)] += 1;
    }
    Ok(match rule {
        FusionRuleSpec::MthAlarm { m } | FusionRuleSpec::MthAlarmWithin { m, .. } => {
            let lambda = LambdaMap::new(&counts, &c)?;
            lambda.coefficient(lambda.lambda(*m)?)
        }
        FusionRuleSpec::MVoting { m } | FusionRuleSpec::MVotingWithin { m, .. } => {
            LambdaMap::new(&counts, &c)?.partial_sum(*m)?
        }
        FusionRuleSpec::WeightedVoting { m, weights } => {
            let items: Vec<(f64, f64)> = weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > T::zero())
                .map(|(i, w)| (c[net.group_of(i)], w.as_f64()))
                .collect();
            cheapest_cover(&items, m.as_f64())
                .ok_or_else(|| Error::InvalidRule(format!("weights cannot reach M = {m}")))?
        }
        FusionRuleSpec::CentralizedCusum | FusionRuleSpec::MixtureCusum => 1.0,
    })
}

/// Smallest `Σ cost` over subsets with `Σ weight ≥ target`, for `(cost, weight)` items.
/// Exact up to [`EXACT_SUBSET_LIMIT`] items, greedy by cost per weight beyond.
fn cheapest_cover(items: &[(f64, f64)], target: f64) -> Option<f64> {
    if items.iter().map(|i| i.1).sum::<f64>() < target {
        return None;
    }
    if items.len() <= EXACT_SUBSET_LIMIT {
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << items.len()) {
            let (mut cost, mut weight) = (0.0, 0.0);
            for (j, (c, w)) in items.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    cost += c;
                    weight += w;
                }
            }
            if weight >= target && cost < best {
                best = cost;
            }
        }
        Some(best)
    } else {
        let mut sorted = items.to_vec();
        sorted.sort_by(|a, b| (a.0 / a.1).total_cmp(&(b.0 / b.1)));
        let (mut cost, mut weight) = (0.0, 0.0);
        for (c, w) in sorted {
            if weight >= target {
                break;
            }
            cost += c;
            weight += w;
        }
        Some(cost)
    }
}

/// First-order threshold `ln γ / κ` with `κ` from [`arl_exponent`].
pub fn first_order_guess<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    scaling: &Scaling<T>,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let c = effective_coefficients(net, rule, scaling)?;
    Ok(gamma.ln() / arl_exponent(net, rule, &c)?)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma = {gamma} must be finite and > 1")))
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    h: f64,
    /// `ln ARL(h) - ln γ`; a lower bound when `exceeded`.
    f: f64,
    exceeded: bool,
    estimate: Estimate,
}

struct Objective<'a, T: Scalar, D: Family<T>> {
    net: &'a Network<T, D>,
    rule: &'a FusionRuleSpec<T>,
    c: Vec<T>,
    log_gamma: f64,
    tolerance: f64,
    opts: RunOptions,
    streams: StreamFactory,
}

impl<T: Scalar, D: Family<T>> Objective<'_, T, D> {
    fn eval(&self, h: f64) -> Result<Point> {
        let sim = TrialSimulator::new(self.net, self.rule, &self.c, &[T::lit(h)])?;
        let gamma = self.log_gamma.exp();
        let run = evaluate(&sim, Regime::PreChange, self.opts, &self.streams, Some(gamma * ABORT_LOG.exp()));
        let estimate = run.estimates[0];
        if run.exceeded {
            return Ok(Point { h, f: ABORT_LOG, exceeded: true, estimate });
        }
        if estimate.censored_fraction() > MAX_CENSORED_FRACTION {
            let floor = (estimate.mean * estimate.completed as f64 + (estimate.censored * self.opts.run_cap) as f64)
                / estimate.trials() as f64;
            let f = floor.ln() - self.log_gamma;
            if f > self.tolerance {
                return Ok(Point { h, f, exceeded: true, estimate });
            }
            return Err(Error::ExcessiveCensoring {
                censored: estimate.censored,
                trials: estimate.trials(),
                run_cap: self.opts.run_cap,
            });
        }
        Ok(Point { h, f: estimate.mean.ln() - self.log_gamma, exceeded: false, estimate })
    }

    /// Bracketing secant search from `h0`. Returns the best point, the evaluations used and
    /// the last slope estimate.
    fn solve(&self, h0: f64, mut slope: f64, target: f64, max_iter: usize) -> Result<(Point, usize, f64)> {
        let mut lo: Option<Point> = None;
        let mut hi: Option<Point> = None;
        let mut prev: Option<Point> = None;
        let mut best: Option<Point> = None;
        let mut h = h0.max(0.0);
        let mut used = 0;
        while used < max_iter {
            let p = self.eval(h)?;
            used += 1;
            log::debug!("calibrate h={h:.5} f={:+.4} exceeded={}", p.f, p.exceeded);
            // Aborted points only bound `f` from below; among them the smallest `h` is closest.
            let closer = |b: Point| if p.exceeded && b.exceeded { p.h < b.h } else { p.f.abs() < b.f.abs() };
            if best.is_none_or(closer) {
                best = Some(p);
            }
            if p.f.abs() <= target && !p.exceeded {
                break;
            }
            if let Some(q) = prev {
                if !p.exceeded && !q.exceeded && (p.h - q.h).abs() > 1e-12 {
                    let s = (p.f - q.f) / (p.h - q.h);
                    if s > 0.0 && s.is_finite() {
                        slope = s;
                    }
                }
            }
            if p.f < 0.0 {
                lo = Some(lo.map_or(p, |l| if p.h > l.h { p } else { l }));
            } else {
                hi = Some(hi.map_or(p, |u| if p.h < u.h { p } else { u }));
            }
            let next = match (lo, hi) {
                (Some(l), Some(u)) => {
                    let width = u.h - l.h;
                    if width <= 1e-9 * (1.0 + u.h) {
                        break;
                    }
                    let guess = if u.exceeded { l.h - l.f / slope } else { l.h - l.f * width / (u.f - l.f) };
                    guess.clamp(l.h + 0.02 * width, u.h - 0.02 * width)
                }
                (Some(l), None) => {
                    let step = l.h - l.f / slope;
                    if l.h > 0.0 {
                        step.min(2.0 * l.h).max(l.h * 1.01)
                    } else {
                        step
                    }
                }
                (None, Some(u)) => {
                    if u.h <= 0.0 {
                        break;
                    }
                    let step = u.h - u.f / slope;
                    // An aborted point says little about the slope; h = 0 is cheap and either
                    // brackets the root or shows the target is out of reach.
                    if u.exceeded || u.h < 1e-6 {
                        0.0
                    } else {
                        step.max(0.5 * u.h).min(u.h * 0.99)
                    }
                }
                (None, None) => unreachable!("every point lands on one side"),
            };
            prev = Some(p);
            h = next;
        }
        Ok((best.expect("at least one evaluation"), used, slope))
    }
}

/// Finds `h*` with `|ln ARL(h*) - ln γ| ≤ tolerance`, where `ARL` is the direct joint
/// simulation estimate. Failing to converge is not an error; the best point found is
/// returned with `converged = false`. Censoring above 1% near the root is an error.
pub fn calibrate<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    rule: &FusionRuleSpec<T>,
    scaling: &Scaling<T>,
    gamma: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    check_gamma(gamma)?;
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance = {} must be > 0", opts.tolerance)));
    }
    if opts.trials == 0 || opts.run_cap == 0 || opts.max_iterations == 0 {
        return Err(Error::InvalidArgument("trials, run_cap and max_iterations must be positive".into()));
    }
    let c = effective_coefficients(net, rule, scaling)?;
    let kappa = arl_exponent(net, rule, &c)?;
    let log_gamma = gamma.ln();
    let guess = log_gamma / kappa;
    let pilot_trials = if opts.pilot_trials > 0 { opts.pilot_trials } else { (opts.trials / 10).max(500) }.min(opts.trials);

    let objective = |trials: u64, domain: Domain| Objective {
        net,
        rule,
        c: c.clone(),
        log_gamma,
        tolerance: opts.tolerance,
        opts: RunOptions { trials, run_cap: opts.run_cap },
        streams: StreamFactory::new(opts.seed, domain),
    };

    let mut iterations = 0;
    let (mut start, mut slope) = (guess, kappa);
    if pilot_trials < opts.trials {
        let (p, used, s) = objective(pilot_trials, Domain::CalibrationPilot).solve(guess, kappa, opts.tolerance, opts.max_iterations)?;
        iterations += used;
        start = p.h;
        slope = s;
    }
    let (best, used, _) = objective(opts.trials, Domain::Arl).solve(start, slope, 0.5 * opts.tolerance, opts.max_iterations)?;
    iterations += used;
    Ok(CalibrationResult {
        h_star: best.h,
        achieved_log_arl: log_gamma + best.f,
        target_log_gamma: log_gamma,
        iterations,
        trials_per_eval: opts.trials,
        converged: !best.exceeded && best.f.abs() <= opts.tolerance,
        arl: best.estimate,
    })
}
