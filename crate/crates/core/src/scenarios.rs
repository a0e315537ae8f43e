//! The four simulation settings used throughout the tests and the `reproduce` command,
//! their canned configs and the orderings each one is expected to show.
//!
//! Every setting has standard-normal pre-change laws.

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::fusion::RuleVariant;
use crate::metrics::TradeoffPoint;
use crate::models::{Gaussian, Network};
use crate::report::Verdict;
use crate::scalar::Scalar;

fn build<T: Scalar>(groups: &[(usize, f64, f64)]) -> Network<T> {
    let spec: Vec<_> = groups
        .iter()
        .map(|&(count, mean, var)| {
            (count, Gaussian::standard(), Gaussian::new(T::lit(mean), T::lit(var)).expect("valid canned law"))
        })
        .collect();
    Network::gaussian(&spec).expect("valid canned network")
}

/// Three groups of three sensors, post-change `N(2l/3, l)`.
pub fn fig2_network<T: Scalar>() -> Network<T> {
    build(&(1..=3).map(|l| (3, 2.0 * l as f64 / 3.0, l as f64)).collect::<Vec<_>>())
}

/// Three groups of three sensors, post-change `N(l/3, 1)`.
pub fn fig3_network<T: Scalar>() -> Network<T> {
    build(&(1..=3).map(|l| (3, l as f64 / 3.0, 1.0)).collect::<Vec<_>>())
}

/// Eight sensors with post-change `N(0.35, 1)` and one with `N(2, 4)`.
pub fn fig4_network<T: Scalar>() -> Network<T> {
    build(&[(8, 0.35, 1.0), (1, 2.0, 4.0)])
}

/// Six sensors with post-change `N(0.55, 1)` and four with `N(1, 1)`.
pub fn fig5_network<T: Scalar>() -> Network<T> {
    build(&[(6, 0.55, 1.0), (4, 1.0, 1.0)])
}

/// A single sensor with post-change `N(1, 1)`.
pub fn single_sensor<T: Scalar>() -> Network<T> {
    build(&[(1, 1.0, 1.0)])
}

/// The four canned reproduction scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5];

    pub fn tag(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }

    /// The canned config text, as shipped in `configs/`.
    pub fn config_text(self) -> &'static str {
        match self {
            Figure::Fig2 => include_str!("../../../configs/fig2.json"),
            Figure::Fig3 => include_str!("../../../configs/fig3.json"),
            Figure::Fig4 => include_str!("../../../configs/fig4.json"),
            Figure::Fig5 => include_str!("../../../configs/fig5.json"),
        }
    }

    pub fn config(self) -> ScenarioConfig {
        ScenarioConfig::from_json(self.config_text()).expect("canned config is valid")
    }

    pub fn title(self) -> &'static str {
        match self {
            Figure::Fig2 => "M-th alarm, N(2l/3, l), three groups of three",
            Figure::Fig3 => "M-voting, N(l/3, 1), three groups of three",
            Figure::Fig4 => "Anonymous rules vs. first alarm within group 2",
            Figure::Fig5 => "Weighted vs. binary vs. equal voting",
        }
    }

    pub fn verdict(self, points: &[TradeoffPoint]) -> Verdict {
        match self {
            Figure::Fig2 => fig2_verdict(points),
            Figure::Fig3 => fig3_verdict(points),
            Figure::Fig4 => fig4_verdict(points),
            Figure::Fig5 => fig5_verdict(points),
        }
    }
}

impl std::fmt::Display for Figure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown figure '{s}', expected one of fig2, fig3, fig4, fig5")))
    }
}

fn grid(points: &[TradeoffPoint]) -> Vec<f64> {
    let mut g: Vec<f64> = points.iter().map(|p| p.gamma_target).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

fn at<'a>(
    points: &'a [TradeoffPoint],
    gamma: f64,
    pick: impl Fn(&TradeoffPoint) -> bool,
) -> Option<&'a TradeoffPoint> {
    points.iter().find(|p| p.gamma_target == gamma && pick(p))
}

fn is(variant: RuleVariant, m: f64) -> impl Fn(&TradeoffPoint) -> bool {
    move |p| p.variant == variant && p.m == m
}

/// `a` has the smaller EDD and the gap exceeds the sum of both 95% half-widths.
pub fn clearly_faster(a: &TradeoffPoint, b: &TradeoffPoint) -> bool {
    a.valid && b.valid && b.edd_hat - a.edd_hat > a.edd_ci_halfwidth + b.edd_ci_halfwidth
}

fn describe(p: &TradeoffPoint) -> String {
    if p.valid {
        format!("{} {:.3}±{:.3}", p.rule, p.edd_hat, p.edd_ci_halfwidth)
    } else {
        format!("{} invalid", p.rule)
    }
}

/// Checks that `chain[0] < chain[1] < ...` beyond CIs at `gamma`.
fn chain_check(points: &[TradeoffPoint], gamma: f64, chain: &[&dyn Fn(&TradeoffPoint) -> bool]) -> (bool, String) {
    let found: Option<Vec<&TradeoffPoint>> = chain.iter().map(|f| at(points, gamma, f)).collect();
    let Some(found) = found else {
        return (false, format!("gamma={gamma}: missing rule"));
    };
    let ok = found.windows(2).all(|w| clearly_faster(w[0], w[1]));
    let text = found.iter().map(|p| describe(p)).collect::<Vec<_>>().join(" < ");
    (ok, format!("gamma={gamma}: {text}"))
}

fn fig2_verdict(points: &[TradeoffPoint]) -> Verdict {
    let mut v = Verdict::default();
    let g = grid(points);
    let m = |k: f64| is(RuleVariant::MthAlarm, k);
    let (m1, m4, m7, m9) = (m(1.0), m(4.0), m(7.0), m(9.0));
    for &gamma in g.iter().rev().take(2) {
        let (ok, detail) = chain_check(points, gamma, &[&m7, &m4, &m1]);
        v.push("M=7 < M=4 < M=1", ok, detail);
        let (ok, detail) = chain_check(points, gamma, &[&m7, &m9]);
        v.push("M=7 < M=9", ok, detail);
    }
    v
}

fn fig3_verdict(points: &[TradeoffPoint]) -> Verdict {
    let mut v = Verdict::default();
    let g = grid(points);
    let voting = |p: &TradeoffPoint| p.variant == RuleVariant::MVoting;
    if let Some(&top) = g.last() {
        let candidates: Vec<&TradeoffPoint> = points.iter().filter(|p| p.gamma_target == top && voting(p)).collect();
        let best = candidates.iter().filter(|p| p.valid).min_by(|a, b| a.edd_hat.total_cmp(&b.edd_hat));
        let nine = at(points, top, is(RuleVariant::MVoting, 9.0));
        let ok = matches!((best, nine), (Some(b), Some(n)) if n.valid && b.m == 9.0);
        let detail = match best {
            Some(b) => format!(
                "gamma={top}: lowest is {}; M=9 is {}",
                describe(b),
                nine.map(describe).unwrap_or_else(|| "missing".into())
            ),
            None => format!("gamma={top}: no valid voting point"),
        };
        v.push("M=9 lowest at the largest gamma", ok, detail);
    }
    // The smallest target at which M=9 is attainable: at very small gamma even h = 0 can
    // give an ARL above the target.
    let low = g.iter().copied().find(|&gamma| at(points, gamma, is(RuleVariant::MVoting, 9.0)).is_some_and(|p| p.valid));
    match low {
        Some(gamma) => {
            let nine = at(points, gamma, is(RuleVariant::MVoting, 9.0)).expect("present");
            let winners: Vec<String> = points
                .iter()
                .filter(|p| p.gamma_target == gamma && voting(p) && p.m < 9.0 && clearly_faster(p, nine))
                .map(|p| format!("M={}", p.m))
                .collect();
            let note = if Some(&gamma) == g.first() { String::new() } else { format!(" (M=9 unattainable below {gamma})") };
            v.push(
                "some M<9 beats M=9 at the smallest gamma",
                !winners.is_empty(),
                format!("gamma={gamma}{note}: beaten by [{}]; {}", winners.join(", "), describe(nine)),
            );
        }
        None => v.push("some M<9 beats M=9 at the smallest gamma", false, "M=9 has no valid point"),
    }
    let central = |p: &TradeoffPoint| p.variant == RuleVariant::CentralizedCusum;
    let nine = is(RuleVariant::MVoting, 9.0);
    let mut bad = Vec::new();
    let mut compared = 0;
    for &gamma in &g {
        if let (Some(n), Some(c)) = (at(points, gamma, &nine), at(points, gamma, central)) {
            if n.valid && c.valid {
                compared += 1;
                if n.edd_hat + n.edd_ci_halfwidth < c.edd_hat - c.edd_ci_halfwidth {
                    bad.push(format!("{gamma}"));
                }
            }
        }
    }
    v.push(
        "N-voting EDD >= centralized EDD",
        compared > 0 && bad.is_empty(),
        format!("{compared} grid points compared; violations at [{}]", bad.join(", ")),
    );
    v
}

fn fig4_verdict(points: &[TradeoffPoint]) -> Verdict {
    let mut v = Verdict::default();
    let within = |p: &TradeoffPoint| p.variant == RuleVariant::MthAlarmWithin;
    let (first, last, vote) =
        (is(RuleVariant::MthAlarm, 1.0), is(RuleVariant::MthAlarm, 9.0), is(RuleVariant::MVoting, 9.0));
    let mixture = |p: &TradeoffPoint| p.variant == RuleVariant::MixtureCusum;
    for gamma in grid(points) {
        for (label, other) in [("first alarm", &first as &dyn Fn(&TradeoffPoint) -> bool), ("9th alarm", &last), ("9-voting", &vote)] {
            let (ok, detail) = chain_check(points, gamma, &[&within, other]);
            v.push(format!("within-group-2 first alarm < {label}"), ok, detail);
        }
        if at(points, gamma, mixture).is_some() {
            let (ok, detail) = chain_check(points, gamma, &[&within, &mixture]);
            v.push_advisory("within-group-2 first alarm < mixture CUSUM", ok, detail);
        }
    }
    v
}

fn fig5_verdict(points: &[TradeoffPoint]) -> Verdict {
    let mut v = Verdict::default();
    let weighted = |p: &TradeoffPoint| p.variant == RuleVariant::WeightedVoting;
    let binary = |p: &TradeoffPoint| p.variant == RuleVariant::MVotingWithin;
    let equal = |p: &TradeoffPoint| p.variant == RuleVariant::MVoting;
    for gamma in grid(points) {
        let (ok, detail) = chain_check(points, gamma, &[&weighted, &binary, &equal]);
        v.push("weighted < binary < equal", ok, detail);
    }
    v
}
