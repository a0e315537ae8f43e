//! Sample moments and normal-approximation confidence intervals.

use serde::{Deserialize, Serialize};

use crate::cusum::StopTime;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Largest censored fraction a valid estimate may carry.
pub const MAX_CENSORED_FRACTION: f64 = 0.01;

/// Running mean and sum of squared deviations with a deterministic pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sum(&self) -> f64 {
        self.mean * self.n as f64
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Monte Carlo mean with a 95% interval `1.96 s / √n`.
///
/// Censored trials are excluded from the moments and counted separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_dev: f64,
    pub ci_halfwidth: f64,
    /// Trials that produced a value.
    pub completed: u64,
    pub censored: u64,
}

impl Estimate {
    pub fn from_moments(m: &Moments, censored: u64) -> Self {
        let std_dev = m.variance().sqrt();
        let ci_halfwidth = if m.n == 0 { f64::INFINITY } else { Z95 * std_dev / (m.n as f64).sqrt() };
        let mean = if m.n == 0 { f64::NAN } else { m.mean };
        Self { mean, std_dev, ci_halfwidth, completed: m.n, censored }
    }

    pub fn from_samples<I: IntoIterator<Item = f64>>(xs: I) -> Self {
        Self::from_moments(&xs.into_iter().collect(), 0)
    }

    pub fn from_stop_times<I: IntoIterator<Item = StopTime>>(times: I) -> Self {
        let mut m = Moments::default();
        let mut censored = 0;
        for t in times {
            match t {
                StopTime::At(t) => m.push(t as f64),
                StopTime::Censored => censored += 1,
            }
        }
        Self::from_moments(&m, censored)
    }

    pub fn trials(&self) -> u64 {
        self.completed + self.censored
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.trials() == 0 {
            0.0
        } else {
            self.censored as f64 / self.trials() as f64
        }
    }

    pub fn is_valid(&self) -> bool {
        self.completed > 0 && self.censored_fraction() <= MAX_CENSORED_FRACTION
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.ci_halfwidth / Z95
    }

    /// Delta-method standard error of `ln(mean)`.
    pub fn log_std_error(&self) -> f64 {
        self.std_error() / self.mean
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_halfwidth
    }

    /// `true` when the two 95% intervals do not overlap and `self` lies below `other`.
    pub fn clearly_below(&self, other: &Estimate) -> bool {
        self.upper() < other.lower()
    }

    /// `true` when the 95% intervals share a point.
    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}
