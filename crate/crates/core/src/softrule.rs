//! Soft interval rules and their crisp counterparts.
//!
//! A soft condition on feature `j` is the smooth interval indicator
//!
//! ```text
//! pi(x; alpha, beta, tau) = 1 / (1 + exp((alpha - x) / tau) + exp((x - beta) / tau))
//! ```
//!
//! and a soft rule combines its conditions with a weighted harmonic mean, so a
//! single condition near zero pulls the whole rule towards zero. As `tau`
//! shrinks the conditions approach hard interval tests.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::{Error, Result};

/// Largest exponent evaluated before clamping; `exp(700)` is still finite.
const EXP_CLAMP: f64 = 700.0;
/// Floor applied to a condition before it is inverted in the harmonic mean.
pub const CONDITION_FLOOR: f64 = 1e-12;
/// Default weight above which a condition counts as active.
pub const DEFAULT_ACTIVITY_THRESHOLD: f64 = 0.1;

/// Learnable parameters of a soft conjunctive rule.
///
/// `feature_scales` stretches the temperature per feature: condition `j` uses
/// `temperature * feature_scales[j]`. An empty vector means a scale of 1 for
/// every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftRuleParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub weights: Vec<f64>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_scales: Vec<f64>,
}

impl SoftRuleParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, weights: Vec<f64>, temperature: f64) -> Result<Self> {
        let params = Self {
            alpha,
            beta,
            weights,
            temperature,
            feature_scales: Vec::new(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Bounds at the observed feature ranges and unit weights: selects everyone.
    pub fn full_range(ranges: &[(f64, f64)], temperature: f64) -> Self {
        Self {
            alpha: ranges.iter().map(|r| r.0).collect(),
            beta: ranges.iter().map(|r| r.1).collect(),
            weights: vec![1.0; ranges.len()],
            temperature,
            feature_scales: Vec::new(),
        }
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.alpha.len();
        if self.beta.len() != p || self.weights.len() != p {
            return Err(Error::Shape(format!(
                "alpha, beta and weights have lengths {}, {}, {}",
                p,
                self.beta.len(),
                self.weights.len()
            )));
        }
        if !self.feature_scales.is_empty() && self.feature_scales.len() != p {
            return Err(Error::Shape("feature_scales length differs from p".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Argument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.feature_scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Argument("feature scales must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_temperature(&self, j: usize) -> f64 {
        match self.feature_scales.get(j) {
            Some(s) => self.temperature * s,
            None => self.temperature,
        }
    }

    /// Indices with `max(a_j, 0) > threshold`, ascending.
    pub fn active(&self, threshold: f64) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| self.weights[j].max(0.0) > threshold)
            .collect()
    }

    /// Soft membership of one subject.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        soft_rule(x, self)
    }

    /// Soft memberships of every row.
    pub fn memberships(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        self.validate()?;
        if features.ncols() != self.p() {
            return Err(Error::Shape(format!(
                "rule over {} features applied to {} columns",
                self.p(),
                features.ncols()
            )));
        }
        Ok(features
            .rows()
            .into_iter()
            .map(|row| rule_value(row.as_slice().expect("standard layout"), self))
            .collect())
    }
}

fn clamped_exp(z: f64) -> (f64, bool) {
    if z > EXP_CLAMP {
        (EXP_CLAMP.exp(), true)
    } else if z < -EXP_CLAMP {
        ((-EXP_CLAMP).exp(), true)
    } else {
        (z.exp(), false)
    }
}

/// `(pi, d pi / d alpha, d pi / d beta)`.
pub(crate) fn condition_parts(x: f64, alpha: f64, beta: f64, tau: f64) -> (f64, f64, f64) {
    let (e1, c1) = clamped_exp((alpha - x) / tau);
    let (e2, c2) = clamped_exp((x - beta) / tau);
    let d = 1.0 + e1 + e2;
    let pi = 1.0 / d;
    let d_alpha = if c1 { 0.0 } else { -(e1 / d) / d / tau };
    let d_beta = if c2 { 0.0 } else { (e2 / d) / d / tau };
    (pi, d_alpha, d_beta)
}

/// Smooth interval indicator of `x` in `[alpha, beta]`, strictly in `(0, 1)`.
pub fn soft_condition(x: f64, alpha: f64, beta: f64, temperature: f64) -> Result<f64> {
    if !(x.is_finite() && alpha.is_finite() && beta.is_finite() && temperature.is_finite()) {
        return Err(Error::Argument("soft condition inputs must be finite".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(condition_parts(x, alpha, beta, temperature).0)
}

/// Weighted harmonic mean of the conditions with effective weights
/// `max(a_j, 0)`; 1 when every effective weight is zero.
pub fn soft_rule(x: &[f64], params: &SoftRuleParams) -> Result<f64> {
    params.validate()?;
    if x.len() != params.p() {
        return Err(Error::Shape(format!(
            "subject has {} features, rule has {}",
            x.len(),
            params.p()
        )));
    }
    Ok(rule_value(x, params))
}

fn rule_value(x: &[f64], params: &SoftRuleParams) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..x.len() {
        let a = params.weights[j];
        if a > 0.0 {
            let tau = params.effective_temperature(j);
            let (pi, _, _) = condition_parts(x[j], params.alpha[j], params.beta[j], tau);
            num += a;
            den += a / pi.max(CONDITION_FLOOR);
        }
    }
    if num > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// Partial derivatives of a soft rule with respect to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleGradient {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Rule value and its gradient for one subject.
pub fn soft_rule_with_gradient(x: &[f64], params: &SoftRuleParams) -> Result<(f64, RuleGradient)> {
    let value = soft_rule(x, params)?;
    let p = params.p();
    let mut flat = vec![0.0; 3 * p];
    accumulate_gradient(x, params, 1.0, &mut flat);
    Ok((
        value,
        RuleGradient {
            alpha: flat[..p].to_vec(),
            beta: flat[p..2 * p].to_vec(),
            weights: flat[2 * p..].to_vec(),
        },
    ))
}

/// Adds `upstream * d sigma / d theta` into `grad`, laid out as
/// `[alpha | beta | weights]`, and returns `sigma`. Inputs are assumed valid.
pub(crate) fn accumulate_gradient(x: &[f64], params: &SoftRuleParams, upstream: f64, grad: &mut [f64]) -> f64 {
    let p = x.len();
    let (mut num, mut den) = (0.0, 0.0);
    // first pass: totals; conditions are recomputed in the second pass to
    // avoid per-call allocation
    for j in 0..p {
        let a = params.weights[j];
        if a > 0.0 {
            let tau = params.effective_temperature(j);
            let (pi, _, _) = condition_parts(x[j], params.alpha[j], params.beta[j], tau);
            num += a;
            den += a / pi.max(CONDITION_FLOOR);
        }
    }
    if !(num > 0.0) {
        return 1.0;
    }
    let sigma = num / den;
    if upstream == 0.0 {
        return sigma;
    }
    for j in 0..p {
        let a = params.weights[j];
        if a <= 0.0 {
            continue;
        }
        let tau = params.effective_temperature(j);
        let (pi, d_alpha, d_beta) = condition_parts(x[j], params.alpha[j], params.beta[j], tau);
        let floored = pi.max(CONDITION_FLOOR);
        if pi >= CONDITION_FLOOR {
            let d_pi = sigma * a / (den * pi * pi);
            grad[j] += upstream * d_pi * d_alpha;
            grad[p + j] += upstream * d_pi * d_beta;
        }
        grad[2 * p + j] += upstream * (1.0 - sigma / floored) / den;
    }
    sigma
}

/// One crisp interval condition `lower <= x_feature <= upper`. A missing
/// bound is unbounded on that side. `empty` marks a condition whose learned
/// bounds crossed; it selects nobody.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub feature: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub empty: bool,
}

impl Condition {
    pub fn contains(&self, x: f64) -> bool {
        !self.empty && self.lower.is_none_or(|l| x >= l) && self.upper.is_none_or(|u| x <= u)
    }
}

/// Conjunction of interval conditions. No conditions selects everyone.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HardRule {
    pub conditions: Vec<Condition>,
}

impl HardRule {
    pub fn is_population(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn features(&self) -> Vec<usize> {
        self.conditions.iter().map(|c| c.feature).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.contains(x[c.feature]))
    }

    /// Human-readable form, e.g. `age ≥ 47.43 ∧ wage ∈ [4.2, 7.36]`.
    pub fn render(&self, names: &[String]) -> String {
        if self.conditions.is_empty() {
            return "population".to_string();
        }
        let mut out = String::new();
        for (i, c) in self.conditions.iter().enumerate() {
            if i > 0 {
                out.push_str(" ∧ ");
            }
            let name = names.get(c.feature).map(String::as_str).unwrap_or("?");
            let _ = match (c.empty, c.lower, c.upper) {
                (true, _, _) => write!(out, "{name} ∈ ∅"),
                (_, Some(l), Some(u)) => write!(out, "{name} ∈ [{}, {}]", fmt_bound(l), fmt_bound(u)),
                (_, Some(l), None) => write!(out, "{name} ≥ {}", fmt_bound(l)),
                (_, None, Some(u)) => write!(out, "{name} ≤ {}", fmt_bound(u)),
                (_, None, None) => write!(out, "{name} unrestricted"),
            };
        }
        out
    }

    pub fn to_named(&self, names: &[String]) -> NamedRule {
        NamedRule {
            conditions: self
                .conditions
                .iter()
                .map(|c| NamedCondition {
                    feature: names.get(c.feature).cloned().unwrap_or_default(),
                    low: c.lower,
                    high: c.upper,
                    empty: c.empty,
                })
                .collect(),
        }
    }
}

fn fmt_bound(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// JSON form of a [`HardRule`], with features referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRule {
    pub conditions: Vec<NamedCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCondition {
    pub feature: String,
    pub low: Option<f64>,
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

impl NamedRule {
    pub fn resolve(&self, names: &[String]) -> Result<HardRule> {
        let mut seen = std::collections::HashSet::new();
        let conditions = self
            .conditions
            .iter()
            .map(|c| {
                let feature = names
                    .iter()
                    .position(|n| *n == c.feature)
                    .ok_or_else(|| Error::MissingColumn(c.feature.clone()))?;
                if !seen.insert(feature) {
                    return Err(Error::Validation(format!(
                        "feature {} appears twice in a rule",
                        c.feature
                    )));
                }
                if let (Some(l), Some(u)) = (c.low, c.high) {
                    if l > u {
                        return Err(Error::Validation(format!(
                            "condition on {} has low > high",
                            c.feature
                        )));
                    }
                }
                Ok(Condition {
                    feature,
                    lower: c.low,
                    upper: c.high,
                    empty: c.empty,
                })
            })
            .collect::<Result<_>>()?;
        Ok(HardRule { conditions })
    }
}

/// Crisp rule from soft parameters: keep conditions whose effective weight
/// exceeds `activity_threshold`, drop bounds at or beyond the observed range
/// and conditions left with no bound at all.
pub fn harden(params: &SoftRuleParams, dataset: &SurvivalDataset, activity_threshold: f64) -> HardRule {
    harden_with_ranges(params, dataset.feature_ranges(), activity_threshold)
}

pub fn harden_with_ranges(params: &SoftRuleParams, ranges: &[(f64, f64)], activity_threshold: f64) -> HardRule {
    let mut conditions = Vec::new();
    for j in params.active(activity_threshold) {
        let (lo, hi) = ranges[j];
        let (a, b) = (params.alpha[j], params.beta[j]);
        if a > b {
            let mid = 0.5 * (a + b);
            conditions.push(Condition {
                feature: j,
                lower: Some(mid),
                upper: Some(mid),
                empty: true,
            });
            continue;
        }
        let lower = (a > lo).then_some(a);
        let upper = (b < hi).then_some(b);
        if lower.is_some() || upper.is_some() {
            conditions.push(Condition {
                feature: j,
                lower,
                upper,
                empty: false,
            });
        }
    }
    HardRule { conditions }
}

/// Crisp membership of every row.
pub fn membership(rule: &HardRule, features: &Array2<f64>) -> Result<Vec<bool>> {
    let p = features.ncols();
    if let Some(c) = rule.conditions.iter().find(|c| c.feature >= p) {
        return Err(Error::Shape(format!(
            "rule references feature {} of {p}",
            c.feature
        )));
    }
    Ok(features
        .rows()
        .into_iter()
        .map(|row| rule.contains(row.as_slice().expect("standard layout")))
        .collect())
}
