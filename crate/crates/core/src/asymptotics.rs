//! First- and second-order asymptotic predictions and the choice of `M`.
//!
//! All quantities here are computed in `f64`, whatever scalar the network uses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionRuleSpec;
use crate::models::{Family, Network};
use crate::rng::{Domain, StreamFactory};
use crate::scalar::Scalar;
use crate::stats::Moments;

/// Assignment of alarm counts `m ∈ 1..=N` to groups ranked by ascending `c`.
///
/// Ranks are 1-based: rank 1 has the smallest coefficient. Groups with equal
/// coefficients keep their label order. `λ(m)` is the smallest rank whose cumulative
/// sensor count reaches `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMap {
    /// 1-based group label at each rank.
    labels: Vec<usize>,
    counts: Vec<usize>,
    c: Vec<f64>,
    /// `cumulative[r]` = sensors in ranks `1..=r+1`.
    cumulative: Vec<usize>,
}

impl LambdaMap {
    /// `counts[l-1]` and `c[l-1]` describe group `l`; groups with zero count are dropped.
    pub fn new(counts: &[usize], c: &[f64]) -> Result<Self> {
        if counts.len() != c.len() {
            return Err(Error::InvalidArgument(format!("{} counts for {} coefficients", counts.len(), c.len())));
        }
        if let Some(x) = c.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidThresholds(format!("scaling coefficient {x} must be positive")));
        }
        let mut ranked: Vec<usize> = (0..c.len()).filter(|&i| counts[i] > 0).collect();
        if ranked.is_empty() {
            return Err(Error::InvalidNetwork("no sensors".into()));
        }
        ranked.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
        let counts: Vec<usize> = ranked.iter().map(|&i| counts[i]).collect();
        let cumulative = counts
            .iter()
            .scan(0, |acc, &n| {
                *acc += n;
                Some(*acc)
            })
            .collect();
        Ok(Self { labels: ranked.iter().map(|&i| i + 1).collect(), counts, c: ranked.iter().map(|&i| c[i]).collect(), cumulative })
    }

    pub fn from_network<T: Scalar, D: Family<T>>(net: &Network<T, D>, c: &[T]) -> Result<Self> {
        Self::new(&net.counts(), &c.iter().map(|x| x.as_f64()).collect::<Vec<_>>())
    }

    /// KLD scaling.
    pub fn kld<T: Scalar, D: Family<T>>(net: &Network<T, D>) -> Result<Self> {
        Self::from_network(net, &net.klds())
    }

    pub fn total(&self) -> usize {
        *self.cumulative.last().expect("nonempty")
    }

    /// Number of ranked groups.
    pub fn ranks(&self) -> usize {
        self.labels.len()
    }

    /// `λ(m)` as a 1-based rank.
    pub fn lambda(&self, m: usize) -> Result<usize> {
        if m == 0 || m > self.total() {
            return Err(Error::InvalidArgument(format!("m = {m} outside 1..={}", self.total())));
        }
        Ok(self.cumulative.partition_point(|&cum| cum < m) + 1)
    }

    /// Group label at rank `r`.
    pub fn label(&self, r: usize) -> usize {
        self.labels[r - 1]
    }

    /// `c^{(r)}`.
    pub fn coefficient(&self, r: usize) -> f64 {
        self.c[r - 1]
    }

    /// `N^{(r)}`.
    pub fn count(&self, r: usize) -> usize {
        self.counts[r - 1]
    }

    /// Sensors in ranks `1..=r`.
    pub fn cumulative(&self, r: usize) -> usize {
        if r == 0 {
            0
        } else {
            self.cumulative[r - 1]
        }
    }

    /// `c^{(λ(m))}` for `m = 1..=N`.
    pub fn coefficients_by_alarm(&self) -> Vec<f64> {
        (1..=self.total()).map(|m| self.c[self.lambda(m).expect("in range") - 1]).collect()
    }

    /// `Σ_{m ≤ M} c^{(λ(m))}`.
    pub fn partial_sum(&self, m: usize) -> Result<f64> {
        self.lambda(m)?;
        Ok(self.coefficients_by_alarm()[..m].iter().sum())
    }
}

/// The two anonymous rule families the predictions cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleFamily {
    MthAlarm,
    Voting,
}

impl RuleFamily {
    pub fn of<T: Scalar>(rule: &FusionRuleSpec<T>) -> Option<Self> {
        match rule {
            FusionRuleSpec::MthAlarm { .. } | FusionRuleSpec::MthAlarmWithin { .. } => Some(RuleFamily::MthAlarm),
            FusionRuleSpec::MVoting { .. } | FusionRuleSpec::MVotingWithin { .. } => Some(RuleFamily::Voting),
            _ => None,
        }
    }
}

/// Monte Carlo estimate of the expected `M`-th smallest of independent `N(0, σ_l²/I_l²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub m: usize,
    pub xi: f64,
    pub std_error: f64,
    pub samples: u64,
}

/// Per-sensor standard deviations `σ_l / I_l`, in flat sensor order.
pub fn xi_scales<T: Scalar, D: Family<T>>(net: &Network<T, D>) -> Vec<f64> {
    net.groups()
        .iter()
        .flat_map(|g| std::iter::repeat_n(g.llr_variance().as_f64().sqrt() / g.kld().as_f64(), g.count()))
        .collect()
}

const XI_CHUNK: u64 = 4096;

/// `ξ_1..ξ_N` for independent zero-mean Gaussians with standard deviations `scales`.
pub fn xi_table_for_scales(scales: &[f64], samples: u64, seed: u64) -> Vec<XiEstimate> {
    let n = scales.len();
    if n == 0 || samples == 0 {
        return Vec::new();
    }
    let streams = StreamFactory::new(seed, Domain::Xi);
    let chunks = samples.div_ceil(XI_CHUNK);
    let partial: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = streams.trial_stream(chunk);
            let mut acc = vec![Moments::default(); n];
            let mut draw = vec![0.0; n];
            let count = XI_CHUNK.min(samples - chunk * XI_CHUNK);
            for _ in 0..count {
                for (d, s) in draw.iter_mut().zip(scales) {
                    *d = s * f64::standard_normal(&mut rng);
                }
                draw.sort_unstable_by(f64::total_cmp);
                for (a, &d) in acc.iter_mut().zip(&draw) {
                    a.push(d);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); n];
    for chunk in &partial {
        for (t, c) in total.iter_mut().zip(chunk) {
            t.merge(c);
        }
    }
    total
        .iter()
        .enumerate()
        .map(|(i, m)| XiEstimate { m: i + 1, xi: m.mean, std_error: (m.variance() / m.n as f64).sqrt(), samples })
        .collect()
}

/// `ξ_1..ξ_N` for the whole network.
pub fn xi_table<T: Scalar, D: Family<T>>(net: &Network<T, D>, samples: u64, seed: u64) -> Vec<XiEstimate> {
    xi_table_for_scales(&xi_scales(net), samples, seed)
}

pub fn xi_m<T: Scalar, D: Family<T>>(net: &Network<T, D>, m: usize, samples: u64, seed: u64) -> Result<XiEstimate> {
    let n = net.total_sensors();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("M = {m} outside 1..={n}")));
    }
    Ok(xi_table(net, samples, seed)[m - 1])
}

/// First-order delay under KLD scaling: `ln γ / I^{(λ(M))}` for the M-th alarm and
/// `ln γ / Σ_{m≤M} I^{(λ(m))}` for voting.
pub fn predict_edd_first_order<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    family: RuleFamily,
    m: usize,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let lambda = LambdaMap::kld(net)?;
    let denom = match family {
        RuleFamily::MthAlarm => lambda.coefficient(lambda.lambda(m)?),
        RuleFamily::Voting => lambda.partial_sum(m)?,
    };
    Ok(gamma.ln() / denom)
}

/// `first + ξ_M √first`. For the M-th alarm this is the second-order delay; for voting
/// it is an upper bound.
pub fn predict_edd_second_order<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    family: RuleFamily,
    m: usize,
    gamma: f64,
    xi: f64,
) -> Result<f64> {
    let first = predict_edd_first_order(net, family, m, gamma)?;
    Ok(first + xi * first.sqrt())
}

/// Asymptotic bounds on the delay of a rule with general thresholds `h_l = c_l h`
/// calibrated to false-alarm level `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Bounds for general scaling `c`.
///
/// With `r_l = c_l / I_l`, the M-th alarm delay lies in
/// `[r_min ln γ / c^{(λ(M))}, r_max ln γ / c^{(λ(M))}]`, and M-voting in
/// `[r_min (I/c)^{(λ(M))} ln γ / Σ I^{(λ(m))}, r_max ln γ / Σ c^{(λ(m))}]`, ranks
/// taken in ascending `c`.
pub fn edd_bounds_general<T: Scalar, D: Family<T>>(
    net: &Network<T, D>,
    c: &[T],
    family: RuleFamily,
    m: usize,
    gamma: f64,
) -> Result<DelayBounds> {
    check_gamma(gamma)?;
    let lambda = LambdaMap::from_network(net, c)?;
    let klds: Vec<f64> = net.klds().iter().map(|x| x.as_f64()).collect();
    let c: Vec<f64> = c.iter().map(|x| x.as_f64()).collect();
    let ratios: Vec<f64> = c.iter().zip(&klds).map(|(c, i)| c / i).collect();
    let r_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_gamma = gamma.ln();
    let rank = lambda.lambda(m)?;
    let bounds = match family {
        RuleFamily::MthAlarm => {
            let cm = lambda.coefficient(rank);
            DelayBounds { lower: r_min * log_gamma / cm, upper: r_max * log_gamma / cm }
        }
        RuleFamily::Voting => {
            let kld_sum: f64 = (1..=m).map(|j| klds[lambda.label(lambda.lambda(j).expect("in range")) - 1]).sum();
            let label = lambda.label(rank) - 1;
            DelayBounds {
                lower: r_min * (klds[label] / c[label]) * log_gamma / kld_sum,
                upper: r_max * log_gamma / lambda.partial_sum(m)?,
            }
        }
    };
    Ok(bounds)
}

/// Candidate values of `M` and the preferred one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub family: RuleFamily,
    pub candidates: Vec<usize>,
    pub top_pick: usize,
    pub rationale: String,
}

/// For the M-th alarm, each group's first alarm `M = 1 + Σ_{j<l} N^{(j)}` minimizes `ξ_M`
/// within its first-order plateau, and the most informative group's entry point is best.
/// For voting the first-order term favours `M = N`.
pub fn recommend_m<T: Scalar, D: Family<T>>(net: &Network<T, D>, family: RuleFamily) -> Result<Recommendation> {
    let lambda = LambdaMap::kld(net)?;
    let n = lambda.total();
    Ok(match family {
        RuleFamily::MthAlarm => {
            let candidates: Vec<usize> = (1..=lambda.ranks()).map(|r| 1 + lambda.cumulative(r - 1)).collect();
            let top_pick = *candidates.last().expect("nonempty");
            let rationale = if lambda.ranks() == 1 {
                "single group: first alarm".to_string()
            } else {
                format!(
                    "first alarm of each divergence plateau; M = N - N_L + 1 = {top_pick} reaches the most informative group with the smallest xi"
                )
            };
            Recommendation { family, candidates, top_pick, rationale }
        }
        RuleFamily::Voting => Recommendation {
            family,
            candidates: vec![n],
            top_pick: n,
            rationale: format!("first-order delay is smallest when every sensor votes: M = N = {n}"),
        },
    })
}

/// Size of the most informative group. Among equal divergences the highest label wins.
pub fn most_informative_count<T: Scalar, D: Family<T>>(net: &Network<T, D>) -> usize {
    let lambda = LambdaMap::kld(net).expect("valid network");
    lambda.count(lambda.ranks())
}

/// Whether listening only to the most informative group beats every anonymous rule:
/// `N_L < N / 2`, strictly.
pub fn group_selection_advantage<T: Scalar, D: Family<T>>(net: &Network<T, D>) -> bool {
    2 * most_informative_count(net) < net.total_sensors()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma = {gamma} must be finite and > 1")))
    }
}
