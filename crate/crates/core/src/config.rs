//! Scenario configuration files.
//!
//! Configs are strict JSON: unknown keys are rejected and every error names its line and
//! column. Group-level problems also name the 1-based group.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionRuleSpec, Scaling};
use crate::metrics::{NamedRule, SweepOptions};
use crate::models::{Gaussian, Network};
use crate::scalar::Scalar;

/// JSON Schema describing [`ScenarioConfig`].
pub const SCHEMA: &str = include_str!("../../../configs/schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub count: usize,
    pub pre: LawConfig,
    pub post: LawConfig,
}

impl GroupConfig {
    fn check(&self) -> std::result::Result<(), String> {
        if self.count == 0 {
            return Err("count must be positive".into());
        }
        for (which, law) in [("pre", self.pre), ("post", self.post)] {
            if !law.mean.is_finite() {
                return Err(format!("{which} mean must be finite, got {}", law.mean));
            }
            if !(law.var > 0.0) || !law.var.is_finite() {
                return Err(format!("{which} variance must be finite and > 0, got {}", law.var));
            }
        }
        if self.pre == self.post {
            return Err("pre- and post-change laws are identical".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsConfig {
    /// `"kld"`: proportional to the group divergence, the largest set to one.
    Named(WeightScheme),
    /// One weight per group.
    PerGroup(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Kld,
}

/// Externally tagged, e.g. `{"mth_alarm": {"m": 7}}`, so parse errors keep their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleConfig {
    MthAlarm { m: usize, #[serde(default)] name: Option<String> },
    MVoting { m: usize, #[serde(default)] name: Option<String> },
    /// Restricted to the listed 1-based groups.
    MthAlarmWithin { m: usize, groups: Vec<usize>, #[serde(default)] name: Option<String> },
    MVotingWithin { m: usize, groups: Vec<usize>, #[serde(default)] name: Option<String> },
    WeightedVoting { m: f64, weights: WeightsConfig, #[serde(default)] name: Option<String> },
    CentralizedCusum { #[serde(default)] name: Option<String> },
    MixtureCusum { #[serde(default)] name: Option<String> },
}

fn join(groups: &[usize]) -> String {
    groups.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("+")
}

impl RuleConfig {
    fn given_name(&self) -> Option<&str> {
        match self {
            RuleConfig::MthAlarm { name, .. }
            | RuleConfig::MVoting { name, .. }
            | RuleConfig::MthAlarmWithin { name, .. }
            | RuleConfig::MVotingWithin { name, .. }
            | RuleConfig::WeightedVoting { name, .. }
            | RuleConfig::CentralizedCusum { name }
            | RuleConfig::MixtureCusum { name } => name.as_deref(),
        }
    }

    /// Display name: the configured one, or a generated `family(M=..)` label.
    pub fn name(&self) -> String {
        if let Some(n) = self.given_name() {
            return n.to_string();
        }
        match self {
            RuleConfig::MthAlarm { m, .. } => format!("mth_alarm(M={m})"),
            RuleConfig::MVoting { m, .. } => format!("voting(M={m})"),
            RuleConfig::MthAlarmWithin { m, groups, .. } => format!("mth_alarm(M={m};G={})", join(groups)),
            RuleConfig::MVotingWithin { m, groups, .. } => format!("voting(M={m};G={})", join(groups)),
            RuleConfig::WeightedVoting { m, .. } => format!("weighted_voting(M={m})"),
            RuleConfig::CentralizedCusum { .. } => "centralized_cusum".into(),
            RuleConfig::MixtureCusum { .. } => "mixture_cusum(interpreted)".into(),
        }
    }

    pub fn to_spec<T: Scalar>(&self, net: &Network<T>) -> Result<FusionRuleSpec<T>> {
        let spec = match self {
            RuleConfig::MthAlarm { m, .. } => FusionRuleSpec::MthAlarm { m: *m },
            RuleConfig::MVoting { m, .. } => FusionRuleSpec::MVoting { m: *m },
            RuleConfig::MthAlarmWithin { m, groups, .. } => {
                FusionRuleSpec::MthAlarmWithin { m: *m, selection: FusionRuleSpec::selection_of_groups(net, groups)? }
            }
            RuleConfig::MVotingWithin { m, groups, .. } => {
                FusionRuleSpec::MVotingWithin { m: *m, selection: FusionRuleSpec::selection_of_groups(net, groups)? }
            }
            RuleConfig::WeightedVoting { m, weights, .. } => {
                let weights = match weights {
                    WeightsConfig::Named(WeightScheme::Kld) => FusionRuleSpec::kld_weights(net),
                    WeightsConfig::PerGroup(w) => {
                        if w.len() != net.group_count() {
                            return Err(Error::InvalidRule(format!(
                                "{} weights given for {} groups",
                                w.len(),
                                net.group_count()
                            )));
                        }
                        (0..net.total_sensors()).map(|i| T::lit(w[net.group_of(i)])).collect()
                    }
                };
                FusionRuleSpec::WeightedVoting { m: T::lit(*m), weights }
            }
            RuleConfig::CentralizedCusum { .. } => FusionRuleSpec::CentralizedCusum,
            RuleConfig::MixtureCusum { .. } => FusionRuleSpec::MixtureCusum,
        };
        spec.validate(net)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalingConfig {
    Named(ScalingScheme),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingScheme {
    Kld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    pub arl: u64,
    pub edd: u64,
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub groups: Vec<GroupConfig>,
    pub rules: Vec<RuleConfig>,
    pub scaling: ScalingConfig,
    pub gamma_grid: Vec<f64>,
    pub trials: TrialsConfig,
    pub run_cap: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl ScenarioConfig {
    /// Parses and validates a config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (i, g) in cfg.groups.iter().enumerate() {
            if let Err(reason) = g.check() {
                let at = locate_array_element(text, "groups", i)
                    .map(|(line, col)| format!(" at line {line} column {col}"))
                    .unwrap_or_default();
                return Err(Error::Config(format!("group {}: {reason}{at}", i + 1)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything the parser cannot: ranges, rule parameters and scaling length.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.groups.is_empty() {
            return bad("groups must not be empty".into());
        }
        for (i, g) in self.groups.iter().enumerate() {
            g.check().map_err(|e| Error::Config(format!("group {}: {e}", i + 1)))?;
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !(**g > 1.0) || !g.is_finite()) {
            return bad(format!("gamma_grid: every target must be finite and > 1, got {g}"));
        }
        if self.trials.arl == 0 || self.trials.edd == 0 {
            return bad("trials: arl and edd must be positive".into());
        }
        if self.run_cap == 0 {
            return bad("run_cap must be positive".into());
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return bad(format!("tolerance must be finite and > 0, got {}", self.tolerance));
        }
        let net = self.network::<f64>()?;
        self.scaling::<f64>().coefficients(&net).map_err(|e| Error::Config(format!("scaling: {e}")))?;
        for (i, r) in self.rules.iter().enumerate() {
            r.to_spec(&net).map_err(|e| Error::Config(format!("rules[{i}] ({}): {e}", r.name())))?;
            if r.name().contains([',', '"', '\n', '\r']) {
                return bad(format!("rules[{i}]: name must not contain commas, quotes or line breaks"));
            }
        }
        Ok(())
    }

    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        let spec = self
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let law = |l: LawConfig| Gaussian::new(T::lit(l.mean), T::lit(l.var));
                let wrap = |e: Error| Error::Config(format!("group {}: {e}", i + 1));
                Ok((g.count, law(g.pre).map_err(wrap)?, law(g.post).map_err(wrap)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Network::gaussian(&spec).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scaling<T: Scalar>(&self) -> Scaling<T> {
        match &self.scaling {
            ScalingConfig::Named(ScalingScheme::Kld) => Scaling::Kld,
            ScalingConfig::Explicit(c) => Scaling::Explicit(c.iter().map(|&x| T::lit(x)).collect()),
        }
    }

    pub fn rules<T: Scalar>(&self, net: &Network<T>) -> Result<Vec<NamedRule<T>>> {
        self.rules.iter().map(|r| Ok(NamedRule { name: r.name(), rule: r.to_spec(net)? })).collect()
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            seed: self.seed,
            trials_arl: self.trials.arl,
            trials_edd: self.trials.edd,
            run_cap: self.run_cap,
            tolerance: self.tolerance,
        }
    }
}

/// 1-based line and column where element `index` of the top-level array `key` starts.
/// Only called on text that already parsed, so the scan can assume well-formed JSON.
fn locate_array_element(text: &str, key: &str, index: usize) -> Option<(usize, usize)> {
    let needle = format!("\"{key}\"");
    let bytes = text.as_bytes();
    let (mut depth, mut in_string, mut escaped) = (0usize, false, false);
    let mut i = 0;
    let mut array_start = None;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
        } else if b == b'"' {
            if depth == 1 && text[i..].starts_with(&needle) {
                let colon = i + needle.len() + text[i + needle.len()..].find(':')?;
                let open = colon + text[colon..].find('[')?;
                array_start = Some(open);
                break;
            }
            in_string = true;
        } else if b == b'{' || b == b'[' {
            depth += 1;
        } else if b == b'}' || b == b']' {
            depth = depth.saturating_sub(1);
        }
        i += 1;
    }
    let open = array_start?;
    let (mut depth, mut in_string, mut escaped) = (0usize, false, false);
    let mut seen = 0;
    let mut expecting = true;
    for (j, &b) in bytes.iter().enumerate().skip(open + 1) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        if depth == 0 && expecting && !b.is_ascii_whitespace() {
            if b == b']' {
                return None;
            }
            if seen == index {
                let before = &text[..j];
                let line = before.matches('\n').count() + 1;
                let column = j - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                return Some((line, column));
            }
            seen += 1;
            expecting = false;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' => depth -= 1,
            b']' if depth == 0 => return None,
            b']' => depth -= 1,
            b',' if depth == 0 => expecting = true,
            _ => {}
        }
    }
    None
}
