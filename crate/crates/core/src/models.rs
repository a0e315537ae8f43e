//! Observation models: distribution families, log-likelihood ratios and the per-group
//! information quantities used throughout the detector analysis.
//!
//! Direction convention: the divergence attached to a group is `D(post ‖ pre)`, the
//! mean of the log-likelihood ratio `ln(post(x)/pre(x))` when `x` is drawn from the
//! post-change law. That is the drift of the local CUSUM after the change, and it is
//! also the "informativeness" used to scale thresholds and weights.

use std::fmt::Debug;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Evaluates `ln(post(x)/pre(x))` for one fixed `(pre, post)` pair.
pub trait LlrKernel<T: Scalar>: Clone + Debug + PartialEq + Send + Sync {
    fn llr(&self, x: T) -> T;
}

/// Contract a distribution family must satisfy to drive sensors.
///
/// Fusion and metrics code only ever go through this trait, so another family can be
/// plugged in by implementing it.
pub trait Family<T: Scalar>: Clone + Debug + PartialEq + Send + Sync {
    type Kernel: LlrKernel<T>;

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T;

    fn log_density(&self, x: T) -> T;

    /// Precomputed log-likelihood-ratio evaluator for the pair.
    fn llr_kernel(pre: &Self, post: &Self) -> Self::Kernel;

    /// `D(post ‖ pre)`.
    fn kld(pre: &Self, post: &Self) -> T;

    /// Variance of `ln(post(X)/pre(X))` for `X ~ post`.
    fn llr_variance(pre: &Self, post: &Self) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<T: Scalar = f64> {
    mean: T,
    variance: T,
    std_dev: T,
}

impl<T: Scalar> Gaussian<T> {
    pub fn new(mean: T, variance: T) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidDistribution(format!("mean must be finite, got {mean}")));
        }
        if !(variance > T::zero()) || !variance.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "variance must be finite and > 0, got {variance}"
            )));
        }
        Ok(Self { mean, variance, std_dev: variance.sqrt() })
    }

    pub fn standard() -> Self {
        Self { mean: T::zero(), variance: T::one(), std_dev: T::one() }
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn std_dev(&self) -> T {
        self.std_dev
    }
}

/// `ln(post(x)/pre(x))` for Gaussians, kept in the un-expanded quadratic form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLlr<T: Scalar> {
    offset: T,
    pre_mean: T,
    post_mean: T,
    inv_two_pre_var: T,
    inv_two_post_var: T,
}

impl<T: Scalar> LlrKernel<T> for GaussianLlr<T> {
    #[inline]
    fn llr(&self, x: T) -> T {
        let a = x - self.pre_mean;
        let b = x - self.post_mean;
        self.offset + a * a * self.inv_two_pre_var - b * b * self.inv_two_post_var
    }
}

impl<T: Scalar> Family<T> for Gaussian<T> {
    type Kernel = GaussianLlr<T>;

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.mean + self.std_dev * T::standard_normal(rng)
    }

    fn log_density(&self, x: T) -> T {
        let two_pi = T::lit(std::f64::consts::TAU);
        let d = x - self.mean;
        -T::lit(0.5) * (two_pi * self.variance).ln() - d * d / (T::lit(2.0) * self.variance)
    }

    fn llr_kernel(pre: &Self, post: &Self) -> GaussianLlr<T> {
        let half = T::lit(0.5);
        GaussianLlr {
            offset: -half * (post.variance / pre.variance).ln(),
            pre_mean: pre.mean,
            post_mean: post.mean,
            inv_two_pre_var: half / pre.variance,
            inv_two_post_var: half / post.variance,
        }
    }

    fn kld(pre: &Self, post: &Self) -> T {
        let ratio = post.variance / pre.variance;
        let d = post.mean - pre.mean;
        T::lit(0.5) * (ratio + d * d / pre.variance - T::one() - ratio.ln())
    }

    fn llr_variance(pre: &Self, post: &Self) -> T {
        // Z = const + (d s / v_f) y + (v_g / (2 v_f) - 1/2) y^2 with y ~ N(0,1), d = m_g - m_f.
        let d = post.mean - pre.mean;
        let ratio = post.variance / pre.variance;
        let linear = d * d * post.variance / (pre.variance * pre.variance);
        let quad = ratio - T::one();
        linear + T::lit(0.5) * quad * quad
    }
}

/// `ln(g(x)/f(x))` for Gaussian `f = pre`, `g = post`.
pub fn llr<T: Scalar>(x: T, pre: &Gaussian<T>, post: &Gaussian<T>) -> T {
    Gaussian::llr_kernel(pre, post).llr(x)
}

/// `D(post ‖ pre)` for Gaussians.
pub fn kld<T: Scalar>(pre: &Gaussian<T>, post: &Gaussian<T>) -> T {
    Gaussian::kld(pre, post)
}

/// Variance of the LLR under the post-change law.
pub fn llr_variance<T: Scalar>(pre: &Gaussian<T>, post: &Gaussian<T>) -> T {
    Gaussian::llr_variance(pre, post)
}

pub fn sample<T: Scalar, R: Rng + ?Sized>(dist: &Gaussian<T>, rng: &mut R) -> T {
    dist.sample(rng)
}

/// One heterogeneity class of sensors sharing `(pre, post)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGroup<T: Scalar = f64, D: Family<T> = Gaussian<T>> {
    index: usize,
    count: usize,
    pre: D,
    post: D,
    kld: T,
    llr_var: T,
    kernel: D::Kernel,
}

impl<T: Scalar, D: Family<T>> SensorGroup<T, D> {
    /// `index` is the 1-based group label.
    pub fn new(index: usize, count: usize, pre: D, post: D) -> Result<Self> {
        let bad = |reason: String| Error::InvalidGroup { group: index, reason };
        if index == 0 {
            return Err(bad("group indices start at 1".into()));
        }
        if count == 0 {
            return Err(bad("sensor count must be positive".into()));
        }
        let kld = D::kld(&pre, &post);
        if !(kld > T::zero()) || !kld.is_finite() {
            return Err(bad(format!(
                "pre- and post-change laws must have positive finite divergence, got {kld}"
            )));
        }
        let llr_var = D::llr_variance(&pre, &post);
        if !(llr_var > T::zero()) || !llr_var.is_finite() {
            return Err(bad(format!("LLR variance must be finite and > 0, got {llr_var}")));
        }
        let kernel = D::llr_kernel(&pre, &post);
        Ok(Self { index, count, pre, post, kld, llr_var, kernel })
    }
}

impl<T: Scalar, D: Family<T>> SensorGroup<T, D> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn pre(&self) -> &D {
        &self.pre
    }

    pub fn post(&self) -> &D {
        &self.post
    }

    /// Cached `D(post ‖ pre)`.
    pub fn kld(&self) -> T {
        self.kld
    }

    /// Cached LLR variance under the post-change law.
    pub fn llr_variance(&self) -> T {
        self.llr_var
    }

    #[inline]
    pub fn llr(&self, x: T) -> T {
        self.kernel.llr(x)
    }

    pub fn kernel(&self) -> &D::Kernel {
        &self.kernel
    }
}

/// Identity of one sensor: `k`-th sensor (1-based) of group `l` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorId {
    pub k: usize,
    pub l: usize,
}

/// Ordered list of sensor groups. Sensors are also addressed by a flat index that runs
/// through group 1 first, then group 2, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f64, D: Family<T> = Gaussian<T>> {
    groups: Vec<SensorGroup<T, D>>,
    sensor_group: Vec<usize>,
    offsets: Vec<usize>,
}

impl<T: Scalar, D: Family<T>> Network<T, D> {
    pub fn new(groups: Vec<SensorGroup<T, D>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidNetwork("at least one group is required".into()));
        }
        for (pos, g) in groups.iter().enumerate() {
            if g.index != pos + 1 {
                return Err(Error::InvalidNetwork(format!(
                    "group at position {} carries index {}; indices must run 1..L without gaps",
                    pos + 1,
                    g.index
                )));
            }
        }
        let mut sensor_group = Vec::new();
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        offsets.push(0);
        for (pos, g) in groups.iter().enumerate() {
            sensor_group.extend(std::iter::repeat_n(pos, g.count));
            offsets.push(sensor_group.len());
        }
        Ok(Self { groups, sensor_group, offsets })
    }

    pub fn groups(&self) -> &[SensorGroup<T, D>] {
        &self.groups
    }

    /// Group by 1-based label.
    pub fn group(&self, l: usize) -> Option<&SensorGroup<T, D>> {
        l.checked_sub(1).and_then(|i| self.groups.get(i))
    }

    /// Total sensor count N.
    pub fn total_sensors(&self) -> usize {
        self.sensor_group.len()
    }

    /// Group count L.
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// 0-based group position of the sensor with flat index `i`.
    #[inline]
    pub fn group_of(&self, i: usize) -> usize {
        self.sensor_group[i]
    }

    pub fn sensor_id(&self, i: usize) -> SensorId {
        let g = self.sensor_group[i];
        SensorId { k: i - self.offsets[g] + 1, l: g + 1 }
    }

    pub fn flat_index(&self, id: SensorId) -> Option<usize> {
        let g = id.l.checked_sub(1)?;
        let group = self.groups.get(g)?;
        (id.k >= 1 && id.k <= group.count).then(|| self.offsets[g] + id.k - 1)
    }

    /// Flat indices of the sensors in the 1-based group `l`.
    pub fn group_sensors(&self, l: usize) -> std::ops::Range<usize> {
        let g = l - 1;
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn klds(&self) -> Vec<T> {
        self.groups.iter().map(|g| g.kld).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.count).collect()
    }

    /// Sub-network made of the listed 1-based groups, relabelled 1..L'.
    pub fn subnetwork(&self, labels: &[usize]) -> Result<Self> {
        let groups = labels
            .iter()
            .enumerate()
            .map(|(pos, &l)| {
                let g = self
                    .group(l)
                    .ok_or_else(|| Error::InvalidNetwork(format!("no group {l}")))?;
                SensorGroup::new(pos + 1, g.count, g.pre.clone(), g.post.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(groups)
    }
}

impl<T: Scalar> Network<T, Gaussian<T>> {
    /// Builds a Gaussian network from `(count, pre, post)` triples, labelling groups 1..L.
    pub fn gaussian(spec: &[(usize, Gaussian<T>, Gaussian<T>)]) -> Result<Self> {
        let groups = spec
            .iter()
            .enumerate()
            .map(|(pos, (count, pre, post))| SensorGroup::new(pos + 1, *count, *pre, *post))
            .collect::<Result<Vec<_>>>()?;
        Network::new(groups)
    }
}
