//! Local CUSUM statistic and single-sensor stopping times.
//!
//! The recursion is `W_t = max(0, W_{t-1}) + Z_t` with `W_0 = 0`: the reset is applied
//! *before* the new log-likelihood ratio is added, so `W_t` can be negative. This is not
//! the more common `max(0, W_{t-1} + Z_t)`. Crossings are strict (`W_t > h`).

use rand::Rng;

use crate::models::{Family, SensorGroup};
use crate::scalar::Scalar;

/// When the change happens relative to the observation clock.
///
/// Observation `t` (1-based) is drawn from the post-change law iff `t > ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// ν = ∞: every observation from the pre-change law.
    PreChange,
    /// ν = 0: every observation from the post-change law.
    PostChange,
    /// Change after observation ν.
    ChangeAt(u64),
}

impl Regime {
    #[inline]
    pub fn is_post(self, t: u64) -> bool {
        match self {
            Regime::PreChange => false,
            Regime::PostChange => true,
            Regime::ChangeAt(nu) => t > nu,
        }
    }

    /// Draws observation `t` for a sensor of `group`.
    #[inline]
    pub fn observe<T: Scalar, D: Family<T>, R: Rng + ?Sized>(
        self,
        group: &SensorGroup<T, D>,
        t: u64,
        rng: &mut R,
    ) -> T {
        if self.is_post(t) {
            group.post().sample(rng)
        } else {
            group.pre().sample(rng)
        }
    }
}

/// Outcome of a run with a mandatory cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StopTime {
    At(u64),
    /// No stop within the run cap.
    Censored,
}

impl StopTime {
    pub fn time(self) -> Option<u64> {
        match self {
            StopTime::At(t) => Some(t),
            StopTime::Censored => None,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, StopTime::Censored)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CusumState<T: Scalar = f64> {
    pub w: T,
    pub t: u64,
}

impl<T: Scalar> Default for CusumState<T> {
    fn default() -> Self {
        Self { w: T::zero(), t: 0 }
    }
}

impl<T: Scalar> CusumState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn update(self, z: T) -> Self {
        cusum_update(self, z)
    }
}

#[inline]
pub fn cusum_update<T: Scalar>(state: CusumState<T>, z: T) -> CusumState<T> {
    CusumState { w: state.w.max(T::zero()) + z, t: state.t + 1 }
}

/// First strict crossing of one local sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStopTime<T: Scalar = f64> {
    /// 1-based group label of the sensor.
    pub group: usize,
    pub time: StopTime,
    pub threshold: T,
}

/// Runs one sensor of `group` from `W_0 = 0` until `W_t > threshold` or `run_cap` steps.
pub fn run_local_sensor<T: Scalar, D: Family<T>, R: Rng + ?Sized>(
    group: &SensorGroup<T, D>,
    threshold: T,
    regime: Regime,
    run_cap: u64,
    rng: &mut R,
) -> LocalStopTime<T> {
    debug_assert!(run_cap >= 1);
    let mut state = CusumState::new();
    let mut time = StopTime::Censored;
    for t in 1..=run_cap {
        let x = regime.observe(group, t, rng);
        state = state.update(group.llr(x));
        if state.w > threshold {
            time = StopTime::At(t);
            break;
        }
    }
    LocalStopTime { group: group.index(), time, threshold }
}

/// Iterates the recursion over `z`, returning `W_1..W_n`.
pub fn cusum_path<T: Scalar>(z: &[T]) -> Vec<T> {
    z.iter()
        .scan(CusumState::new(), |s, &zt| {
            *s = s.update(zt);
            Some(s.w)
        })
        .collect()
}

/// Prefix-sum form of the statistic, `W_t = S_t - min_{0 ≤ s ≤ t-1} S_s` with `S_0 = 0`,
/// evaluated at every `t`. Agrees with [`cusum_path`] up to summation rounding.
///
/// The minimum runs over `s ≤ t - 1`, not `s ≤ t`: including `S_t` would clamp the
/// statistic at zero, which the reset-before-add recursion does not do.
pub fn cusum_decomposition<T: Scalar>(z: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(z.len());
    let mut prefix = T::zero();
    let mut min_prefix = T::zero();
    for &zt in z {
        let next = prefix + zt;
        out.push(next - min_prefix);
        prefix = next;
        min_prefix = min_prefix.min(prefix);
    }
    out
}

/// Final value of [`cusum_decomposition`]. Panics on an empty sequence.
pub fn cusum_closed_form_check<T: Scalar>(z: &[T]) -> T {
    assert!(!z.is_empty(), "z sequence must be nonempty");
    *cusum_decomposition(z).last().expect("nonempty")
}
