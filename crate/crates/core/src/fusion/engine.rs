use rand_chacha::ChaCha8Rng;

use super::{FusionRuleSpec, GlobalStopTime};
use crate::cusum::{Regime, StopTime};
use crate::error::{Error, Result};
use crate::models::{Family, LlrKernel, Network};
use crate::rng::StreamFactory;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    OneShot { m: usize },
    Voting { m: usize },
    Weighted { m: f64 },
    Centralized,
    Mixture,
}

/// Per-observation LLR of the group-proportion mixture against the pre-change law(s).
#[derive(Debug, Clone)]
pub(crate) struct MixtureKernel<T: Scalar, D: Family<T>> {
    log_w: Vec<T>,
    kernels: Vec<D::Kernel>,
    pres: Vec<D>,
    posts: Vec<D>,
    common_pre: bool,
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

const MIXTURE_STACK: usize = 16;

impl<T: Scalar, D: Family<T>> MixtureKernel<T, D> {
    pub(crate) fn new(net: &Network<T, D>) -> Self {
        let n = T::lit(net.total_sensors() as f64);
        let groups = net.groups();
        let first_pre = groups[0].pre();
        Self {
            log_w: groups.iter().map(|g| (T::lit(g.count() as f64) / n).ln()).collect(),
            kernels: groups.iter().map(|g| g.kernel().clone()).collect(),
            pres: groups.iter().map(|g| g.pre().clone()).collect(),
            posts: groups.iter().map(|g| g.post().clone()).collect(),
            common_pre: groups.iter().all(|g| g.pre() == first_pre),
        }
    }

    #[inline]
    pub(crate) fn llr(&self, x: T) -> T {
        let l = self.log_w.len();
        let mut stack = [T::zero(); MIXTURE_STACK];
        let mut heap = Vec::new();
        let buf: &mut [T] = if l <= MIXTURE_STACK {
            &mut stack[..l]
        } else {
            heap.resize(l, T::zero());
            &mut heap
        };
        if self.common_pre {
            for (b, (&lw, k)) in buf.iter_mut().zip(self.log_w.iter().zip(&self.kernels)) {
                *b = lw + k.llr(x);
            }
            log_sum_exp(buf)
        } else {
            for (b, (&lw, g)) in buf.iter_mut().zip(self.log_w.iter().zip(&self.posts)) {
                *b = lw + g.log_density(x);
            }
            let num = log_sum_exp(buf);
            for (b, (&lw, f)) in buf.iter_mut().zip(self.log_w.iter().zip(&self.pres)) {
                *b = lw + f.log_density(x);
            }
            num - log_sum_exp(buf)
        }
    }
}

trait Source<T> {
    /// LLR of active sensor `a` at time `t`.
    fn llr(&mut self, a: usize, t: u64) -> T;
    /// Mixture-CUSUM increment of active sensor `a` at time `t`.
    fn mixture(&mut self, a: usize, t: u64) -> T;
}

struct Sampled<'s, T: Scalar, D: Family<T>> {
    sim: &'s TrialSimulator<'s, T, D>,
    regime: Regime,
    rngs: Vec<ChaCha8Rng>,
}

impl<T: Scalar, D: Family<T>> Source<T> for Sampled<'_, T, D> {
    #[inline]
    fn llr(&mut self, a: usize, t: u64) -> T {
        let g = &self.sim.net.groups()[self.sim.groups[a]];
        let x = self.regime.observe(g, t, &mut self.rngs[a]);
        g.llr(x)
    }

    #[inline]
    fn mixture(&mut self, a: usize, t: u64) -> T {
        let g = &self.sim.net.groups()[self.sim.groups[a]];
        let x = self.regime.observe(g, t, &mut self.rngs[a]);
        self.sim.mixture.as_ref().expect("mixture kernel").llr(x)
    }
}

/// Hand-written LLR sequences, one per flat sensor index, used to drive rules along a
/// known trace. Beyond the end of a sequence the sensor contributes `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedLlrs<T: Scalar = f64> {
    pub z: Vec<Vec<T>>,
}

struct Scripted<'s, T: Scalar> {
    script: &'s ScriptedLlrs<T>,
    active: &'s [usize],
}

impl<T: Scalar> Source<T> for Scripted<'_, T> {
    fn llr(&mut self, a: usize, t: u64) -> T {
        self.script.z[self.active[a]].get(t as usize - 1).copied().unwrap_or(T::neg_infinity())
    }

    fn mixture(&mut self, a: usize, t: u64) -> T {
        self.llr(a, t)
    }
}

/// A validated rule bound to a network and an ascending list of scalar thresholds `h`.
///
/// One call to [`TrialSimulator::run`] simulates a single trial and reports the stop time
/// for every `h` at once. Stop times are non-decreasing in `h` for every rule, so the
/// trial runs until the largest `h` stops (or the cap is reached).
#[derive(Debug, Clone)]
pub struct TrialSimulator<'a, T: Scalar, D: Family<T>> {
    net: &'a Network<T, D>,
    kind: Kind,
    /// Flat indices of the sensors the rule listens to.
    active: Vec<usize>,
    /// 0-based group of each active sensor.
    groups: Vec<usize>,
    hs: Vec<T>,
    /// `levels[a * H + j] = c_{l(a)} * h_j`.
    levels: Vec<T>,
    weights: Vec<f64>,
    mixture: Option<MixtureKernel<T, D>>,
}

impl<'a, T: Scalar, D: Family<T>> TrialSimulator<'a, T, D> {
    /// `c` holds one coefficient per group; it is ignored by the centralized rules, which
    /// compare their global statistic to `h` directly.
    pub fn new(net: &'a Network<T, D>, rule: &FusionRuleSpec<T>, c: &[T], hs: &[T]) -> Result<Self> {
        rule.validate(net)?;
        if c.len() != net.group_count() {
            return Err(Error::InvalidThresholds(format!(
                "expected {} scaling coefficients, got {}",
                net.group_count(),
                c.len()
            )));
        }
        if c.iter().any(|x| !(*x > T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidThresholds("scaling coefficients must be positive".into()));
        }
        if hs.is_empty() {
            return Err(Error::InvalidThresholds("no threshold given".into()));
        }
        if hs.iter().any(|h| !(*h >= T::zero()) || !h.is_finite()) {
            return Err(Error::InvalidThresholds("thresholds must be finite and >= 0".into()));
        }
        if hs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidThresholds("thresholds must be sorted ascending".into()));
        }
        let kind = match rule {
            FusionRuleSpec::MthAlarm { m } | FusionRuleSpec::MthAlarmWithin { m, .. } => Kind::OneShot { m: *m },
            FusionRuleSpec::MVoting { m } | FusionRuleSpec::MVotingWithin { m, .. } => Kind::Voting { m: *m },
            FusionRuleSpec::WeightedVoting { m, .. } => Kind::Weighted { m: m.as_f64() },
            FusionRuleSpec::CentralizedCusum => Kind::Centralized,
            FusionRuleSpec::MixtureCusum => Kind::Mixture,
        };
        let active = rule.participating_sensors(net);
        let groups: Vec<usize> = active.iter().map(|&i| net.group_of(i)).collect();
        let h_count = hs.len();
        let mut levels = Vec::with_capacity(active.len() * h_count);
        for &g in &groups {
            levels.extend(hs.iter().map(|&h| c[g] * h));
        }
        let weights = match rule {
            FusionRuleSpec::WeightedVoting { weights, .. } => active.iter().map(|&i| weights[i].as_f64()).collect(),
            _ => Vec::new(),
        };
        let mixture = matches!(kind, Kind::Mixture).then(|| MixtureKernel::new(net));
        Ok(Self { net, kind, active, groups, hs: hs.to_vec(), levels, weights, mixture })
    }

    pub fn thresholds(&self) -> &[T] {
        &self.hs
    }

    pub fn network(&self) -> &Network<T, D> {
        self.net
    }

    /// Flat indices of the sensors the rule listens to.
    pub fn active_sensors(&self) -> &[usize] {
        &self.active
    }

    fn sampled(&self, regime: Regime, streams: &StreamFactory, trial: u64) -> Sampled<'_, T, D> {
        let rngs = self.active.iter().map(|&i| streams.sensor_stream(trial, i)).collect();
        Sampled { sim: self, regime, rngs }
    }

    /// Simulates trial `trial`; `out[j]` receives the stop time for `hs[j]`.
    pub fn run(&self, regime: Regime, run_cap: u64, streams: &StreamFactory, trial: u64, out: &mut [StopTime]) {
        let mut src = self.sampled(regime, streams, trial);
        self.drive(&mut src, run_cap, out, None);
    }

    /// Single-threshold run that also reports the triggering set (uses `hs[0]`).
    pub fn run_with_trigger(&self, regime: Regime, run_cap: u64, streams: &StreamFactory, trial: u64) -> GlobalStopTime {
        let mut src = self.sampled(regime, streams, trial);
        self.finish_single(&mut src, run_cap)
    }

    /// Runs the rule along scripted LLR sequences (uses `hs[0]`).
    pub fn run_scripted(&self, script: &ScriptedLlrs<T>, run_cap: u64) -> Result<GlobalStopTime> {
        if script.z.len() != self.net.total_sensors() {
            return Err(Error::InvalidArgument(format!(
                "script has {} sequences for {} sensors",
                script.z.len(),
                self.net.total_sensors()
            )));
        }
        let mut src = Scripted { script, active: &self.active };
        Ok(self.finish_single(&mut src, run_cap))
    }

    fn finish_single<S: Source<T>>(&self, src: &mut S, run_cap: u64) -> GlobalStopTime {
        let mut out = vec![StopTime::Censored; self.hs.len()];
        let mut trigger = Vec::new();
        self.drive(src, run_cap, &mut out, Some(&mut trigger));
        GlobalStopTime {
            time: out[0],
            triggering_set: trigger.into_iter().map(|i| self.net.sensor_id(i)).collect(),
        }
    }

    #[inline]
    fn level(&self, a: usize, j: usize) -> T {
        self.levels[a * self.hs.len() + j]
    }

    fn drive<S: Source<T>>(&self, src: &mut S, run_cap: u64, out: &mut [StopTime], mut trigger: Option<&mut Vec<usize>>) {
        assert_eq!(out.len(), self.hs.len());
        out.fill(StopTime::Censored);
        let h_count = self.hs.len();
        let top = h_count - 1;
        let n_active = self.active.len();
        let mut w = vec![T::zero(); n_active];
        let mut next = 0usize;
        let mut record = |j: usize, t: u64, set: &mut dyn FnMut() -> Vec<usize>, out: &mut [StopTime]| {
            out[j] = StopTime::At(t);
            if j == 0 {
                if let Some(tr) = trigger.as_deref_mut() {
                    *tr = set();
                }
            }
        };

        match self.kind {
            Kind::OneShot { m } => {
                let mut run_max = vec![T::neg_infinity(); n_active];
                let mut done = vec![false; n_active];
                for t in 1..=run_cap {
                    for a in 0..n_active {
                        if done[a] {
                            continue;
                        }
                        let z = src.llr(a, t);
                        w[a] = w[a].max(T::zero()) + z;
                        if w[a] > run_max[a] {
                            run_max[a] = w[a];
                            // Latched at the largest threshold: nothing it sends can matter any more.
                            done[a] = run_max[a] > self.level(a, top);
                        }
                    }
                    while next < h_count {
                        let latched = (0..n_active).filter(|&a| run_max[a] > self.level(a, next)).count();
                        if latched < m {
                            break;
                        }
                        let j = next;
                        record(
                            j,
                            t,
                            &mut || (0..n_active).filter(|&a| run_max[a] > self.level(a, j)).map(|a| self.active[a]).collect(),
                            out,
                        );
                        next += 1;
                    }
                    if next == h_count {
                        return;
                    }
                }
            }
            Kind::Voting { m } => {
                for t in 1..=run_cap {
                    for (a, wa) in w.iter_mut().enumerate() {
                        let z = src.llr(a, t);
                        *wa = wa.max(T::zero()) + z;
                    }
                    while next < h_count {
                        let alarms = (0..n_active).filter(|&a| w[a] > self.level(a, next)).count();
                        if alarms < m {
                            break;
                        }
                        let j = next;
                        record(
                            j,
                            t,
                            &mut || (0..n_active).filter(|&a| w[a] > self.level(a, j)).map(|a| self.active[a]).collect(),
                            out,
                        );
                        next += 1;
                    }
                    if next == h_count {
                        return;
                    }
                }
            }
            Kind::Weighted { m } => {
                for t in 1..=run_cap {
                    for (a, wa) in w.iter_mut().enumerate() {
                        let z = src.llr(a, t);
                        *wa = wa.max(T::zero()) + z;
                    }
                    while next < h_count {
                        let score: f64 = (0..n_active)
                            .filter(|&a| w[a] > self.level(a, next))
                            .map(|a| self.weights[a])
                            .sum();
                        if score < m {
                            break;
                        }
                        let j = next;
                        record(
                            j,
                            t,
                            &mut || (0..n_active).filter(|&a| w[a] > self.level(a, j)).map(|a| self.active[a]).collect(),
                            out,
                        );
                        next += 1;
                    }
                    if next == h_count {
                        return;
                    }
                }
            }
            Kind::Centralized | Kind::Mixture => {
                let mixture = matches!(self.kind, Kind::Mixture);
                let mut global = T::zero();
                for t in 1..=run_cap {
                    let mut z = T::zero();
                    for a in 0..n_active {
                        z = z + if mixture { src.mixture(a, t) } else { src.llr(a, t) };
                    }
                    global = global.max(T::zero()) + z;
                    while next < h_count && global > self.hs[next] {
                        record(next, t, &mut || self.active.clone(), out);
                        next += 1;
                    }
                    if next == h_count {
                        return;
                    }
                }
            }
        }
    }
}
