//! CSV tables, SVG tradeoff plots and verdict text.

use std::fmt::Write as _;

use crate::asymptotics::{group_selection_advantage, most_informative_count, recommend_m, xi_table, LambdaMap, RuleFamily};
use crate::error::Result;
use crate::metrics::TradeoffPoint;
use crate::models::{Family, Network};
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "rule,variant,M,gamma_target,h_star,arl_hat,arl_ci,edd_hat,edd_ci,trials,censored_frac,valid";

/// One header line plus one row per point, LF line endings. Reals use the shortest
/// representation that round-trips, so equal inputs give equal bytes.
pub fn to_csv(points: &[TradeoffPoint]) -> String {
    let mut out = String::with_capacity(64 * (points.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.rule,
            p.variant.label(),
            p.m,
            p.gamma_target,
            p.h_star,
            p.arl_hat,
            p.arl_ci_halfwidth,
            p.edd_hat,
            p.edd_ci_halfwidth,
            p.trials,
            p.censored_fraction,
            p.valid
        );
    }
    out
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Rounds a data span outward to tidy tick steps.
fn nice_range(lo: f64, hi: f64) -> (f64, f64, f64) {
    let span = (hi - lo).max(1e-9);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|k| k * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

/// EDD against ARL, one polyline per rule in order of first appearance, ARL on a log axis.
/// Only valid points are drawn.
pub fn to_svg(points: &[TradeoffPoint], title: &str) -> String {
    let mut rules: Vec<&str> = Vec::new();
    for p in points {
        if !rules.contains(&p.rule.as_str()) {
            rules.push(&p.rule);
        }
    }
    let drawn: Vec<&TradeoffPoint> =
        points.iter().filter(|p| p.valid && p.arl_hat > 0.0 && p.edd_hat.is_finite()).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    if drawn.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no valid points</text>"#, LEFT + pw / 2.0, TOP + ph / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }

    let lx: Vec<f64> = drawn.iter().map(|p| p.arl_hat.log10()).collect();
    let x_lo = lx.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let x_hi = lx.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().max(x_lo + 1.0);
    let y_min = drawn.iter().map(|p| p.edd_hat - p.edd_ci_halfwidth).fold(f64::INFINITY, f64::min);
    let y_max = drawn.iter().map(|p| p.edd_hat + p.edd_ci_halfwidth).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi, y_step) = nice_range(y_min.max(0.0), y_max);
    let sx = |arl: f64| LEFT + (arl.log10() - x_lo) / (x_hi - x_lo) * pw;
    let sy = |edd: f64| TOP + ph - (edd - y_lo) / (y_hi - y_lo) * ph;

    let mut decade = x_lo;
    while decade <= x_hi + 1e-9 {
        let x = LEFT + (decade - x_lo) / (x_hi - x_lo) * pw;
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#dddddd"/>"##, TOP + ph);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">10<tspan dy="-6" font-size="9">{}</tspan></text>"#,
            TOP + ph + 18.0,
            decade as i64
        );
        decade += 1.0;
    }
    let mut tick = y_lo;
    while tick <= y_hi + 1e-9 * y_step {
        let y = sy(tick);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(tick, y_step));
        tick += y_step;
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">ARL (log scale)</text>"#, LEFT + pw / 2.0, HEIGHT - 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">EDD</text>"#,
        TOP + ph / 2.0
    );

    for (i, rule) in rules.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<&&TradeoffPoint> = drawn.iter().filter(|p| p.rule == *rule).collect();
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.arl_hat), sy(p.edd_hat))).collect();
        if path.len() > 1 {
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.6"/>"#, path.join(" "));
        }
        for p in &pts {
            let (x, y) = (sx(p.arl_hat), sy(p.edd_hat));
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}"/>"#,
                sy(p.edd_hat - p.edd_ci_halfwidth),
                sy(p.edd_hat + p.edd_ci_halfwidth)
            );
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#);
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 22.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(rule));
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    format!("{v:.decimals$}")
}

/// Outcome of one qualitative comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Shown but not counted toward the overall verdict.
    pub advisory: bool,
    pub detail: String,
}

/// A list of checks with a plain-text rendering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verdict {
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, advisory: false, detail: detail.into() });
    }

    pub fn push_advisory(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, advisory: true, detail: detail.into() });
    }

    /// Every non-advisory check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| !c.advisory).all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match (c.passed, c.advisory) {
                (true, false) => "PASS",
                (false, false) => "FAIL",
                (true, true) => "PASS (advisory)",
                (false, true) => "FAIL (advisory)",
            };
            let _ = writeln!(out, "[{tag}] {}: {}", c.name, c.detail);
        }
        let _ = writeln!(out, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Divergences, the alarm-to-group map, `ξ_M` and the recommended rules for a network.
pub fn advice<T: Scalar, D: Family<T>>(net: &Network<T, D>, xi_samples: u64, seed: u64) -> Result<String> {
    let mut out = String::new();
    let klds = net.klds();
    let _ = writeln!(out, "groups:");
    for (l, (g, k)) in net.groups().iter().zip(&klds).enumerate() {
        let _ = writeln!(out, "  group {}: {} sensors, KLD {:.6}", l + 1, g.count(), k.to_f64().unwrap_or(f64::NAN));
    }
    let lambda = LambdaMap::kld(net)?;
    let _ = writeln!(out, "lambda map (ascending KLD):");
    for r in 1..=lambda.ranks() {
        let first = lambda.cumulative(r - 1) + 1;
        let _ = writeln!(
            out,
            "  M in {}..={} -> group {} (KLD {:.6})",
            first,
            lambda.cumulative(r),
            lambda.label(r),
            lambda.coefficient(r)
        );
    }
    let _ = writeln!(out, "xi_M ({xi_samples} samples):");
    for x in xi_table(net, xi_samples, seed) {
        let _ = writeln!(out, "  M={:<3} xi={:+.4} se={:.4}", x.m, x.xi, x.std_error);
    }
    let mth = recommend_m(net, RuleFamily::MthAlarm)?;
    let vote = recommend_m(net, RuleFamily::Voting)?;
    let set = mth.candidates.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",");
    let _ = writeln!(out, "recommendations:");
    if mth.top_pick == 1 && mth.candidates.len() == 1 {
        let _ = writeln!(out, "  M-th alarm: first alarm; M=1");
    } else {
        let _ = writeln!(out, "  M-th alarm candidates {{{set}}}; recommended {}", mth.top_pick);
    }
    let _ = writeln!(out, "    {}", mth.rationale);
    let _ = writeln!(out, "  voting recommended {}", vote.top_pick);
    let _ = writeln!(out, "    {}", vote.rationale);
    let n_l = most_informative_count(net);
    let n = net.total_sensors();
    if group_selection_advantage(net) {
        let _ = writeln!(out, "  group selection advantageous: N_L={n_l} < N/2 (N={n})");
    } else {
        let _ = writeln!(out, "  group selection not advantageous: N_L={n_l} >= N/2 (N={n})");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::RuleVariant;

    fn point(rule: &str, gamma: f64, edd: f64, valid: bool) -> TradeoffPoint {
        TradeoffPoint {
            rule: rule.into(),
            variant: RuleVariant::MthAlarm,
            m: 7.0,
            gamma_target: gamma,
            h_star: 1.5,
            arl_hat: gamma * 1.01,
            arl_ci_halfwidth: gamma * 0.02,
            edd_hat: edd,
            edd_ci_halfwidth: 0.05,
            trials: 1000,
            censored_fraction: 0.0,
            converged: valid,
            valid,
            error: None,
        }
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[point("mth_alarm(M=7)", 100.0, 3.25, true), point("x", 1000.0, f64::NAN, false)]);
        let lines: Vec<&str> = csv.split('\n').collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "mth_alarm(M=7),MthAlarm,7,100,1.5,101,2,3.25,0.05,1000,0,true");
        assert_eq!(lines[2], "x,MthAlarm,7,1000,1.5,1010,20,NaN,0.05,1000,0,false");
        assert_eq!(lines[3], "");
        assert!(!csv.contains('\r'));
        assert_eq!(lines[0].split(',').count(), 12);
    }

    #[test]
    fn svg_has_one_curve_per_rule() {
        let pts = [
            point("a", 100.0, 3.0, true),
            point("a", 1000.0, 4.0, true),
            point("b", 100.0, 5.0, true),
            point("b", 1000.0, 6.0, true),
            point("c", 100.0, 1.0, false),
        ];
        let svg = to_svg(&pts, "t <1>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains(">c</text>"));
        assert!(to_svg(&[], "empty").contains("no valid points"));
    }

    #[test]
    fn advice_for_canned_networks() {
        use crate::scenarios::{fig2_network, fig4_network, single_sensor};
        let a = advice(&fig2_network::<f64>(), 20_000, 1).unwrap();
        assert!(a.contains("M-th alarm candidates {1,4,7}; recommended 7"), "{a}");
        assert!(a.contains("voting recommended 9"));
        assert!(a.contains("M in 7..=9 -> group 3"));
        let a = advice(&fig4_network::<f64>(), 20_000, 1).unwrap();
        assert!(a.contains("group selection advantageous: N_L=1 < N/2"), "{a}");
        let a = advice(&single_sensor::<f64>(), 20_000, 1).unwrap();
        assert!(a.contains("first alarm; M=1"), "{a}");
    }

    #[test]
    fn verdict_ignores_advisory_checks() {
        let mut v = Verdict::default();
        v.push("ordering", true, "ok");
        v.push_advisory("mixture", false, "slower");
        assert!(v.passed());
        assert!(v.render().contains("[FAIL (advisory)] mixture"));
        v.push("other", false, "no");
        assert!(!v.passed());
        assert!(v.render().ends_with("overall: FAIL\n"));
    }
}
