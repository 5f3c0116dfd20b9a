//! Marginal survival estimation and comparison: Kaplan–Meier curves with
//! log-log Greenwood bands, the two-sample logrank statistic, trapezoidal
//! integration of absolute curve differences, and restricted mean survival.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two-sided 95% standard normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

/// A right-continuous, non-increasing survival function sampled on an
/// ascending time grid. Before the first grid point the curve equals 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

impl StepCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::with_bands(grid, values, None)
    }

    /// Build a curve with optional `(lower, upper)` confidence bands.
    pub fn with_bands(
        grid: Vec<f64>,
        values: Vec<f64>,
        bands: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Shape(format!(
                "grid has {} points but {} values",
                grid.len(),
                values.len()
            )));
        }
        check_ascending(&grid)?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("survival values must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Argument("survival values must be non-increasing".into()));
        }
        let (lower, upper) = match bands {
            Some((lo, hi)) => {
                if lo.len() != values.len() || hi.len() != values.len() {
                    return Err(Error::Shape("band length differs from values".into()));
                }
                let ok = lo
                    .iter()
                    .zip(&values)
                    .zip(&hi)
                    .all(|((l, v), h)| l <= v && v <= h);
                if !ok {
                    return Err(Error::Argument("bands must enclose the values".into()));
                }
                (Some(lo), Some(hi))
            }
            None => (None, None),
        };
        Ok(Self {
            grid,
            values,
            lower,
            upper,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower(&self) -> Option<&[f64]> {
        self.lower.as_deref()
    }

    pub fn upper(&self) -> Option<&[f64]> {
        self.upper.as_deref()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Value at time `t` under right-continuous step semantics.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Write `x  y  y_c0  y_c1` rows. Without bands both bounds equal `y`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x\ty\ty_c0\ty_c1")?;
        for k in 0..self.grid.len() {
            let y = self.values[k];
            let lo = self.lower.as_ref().map_or(y, |l| l[k]);
            let hi = self.upper.as_ref().map_or(y, |u| u[k]);
            writeln!(w, "{}\t{}\t{}\t{}", self.grid[k], y, lo, hi)?;
        }
        Ok(())
    }
}

fn check_ascending(grid: &[f64]) -> Result<()> {
    if let Some(k) = grid.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::Grid(format!(
            "grid[{}] = {} is not below grid[{}] = {}",
            k,
            grid[k],
            k + 1,
            grid[k + 1]
        )));
    }
    Ok(())
}

/// Selected `(time, event)` pairs sorted by time, events before censorings
/// at equal times.
fn selected_sorted(times: &[f64], events: &[bool], mask: Option<&[bool]>) -> Result<Vec<(f64, bool)>> {
    if times.len() != events.len() {
        return Err(Error::Shape(format!(
            "{} times but {} event indicators",
            times.len(),
            events.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != times.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} subjects",
                m.len(),
                times.len()
            )));
        }
    }
    let mut sel: Vec<(f64, bool)> = times
        .iter()
        .zip(events)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (&t, &e))| (t, e))
        .collect();
    sel.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    Ok(sel)
}

/// Product-limit estimate over the selected subjects, evaluated at their
/// distinct event times, with 95% bands from the log(-log) transform of the
/// Greenwood variance.
pub fn kaplan_meier(times: &[f64], events: &[bool], mask: Option<&[bool]>) -> Result<StepCurve> {
    let sel = selected_sorted(times, events, mask)?;
    if sel.is_empty() {
        return Err(Error::Estimation("no subjects selected".into()));
    }
    if !sel.iter().any(|s| s.1) {
        return Err(Error::DegenerateCurve("selection has no events".into()));
    }

    let mut grid = Vec::new();
    let mut values = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();

    let mut at_risk = sel.len() as f64;
    let mut surv = 1.0_f64;
    let mut greenwood = 0.0_f64;
    let mut k = 0;
    while k < sel.len() {
        let t = sel[k].0;
        let mut deaths = 0.0;
        let mut leaving = 0.0;
        while k < sel.len() && sel[k].0 == t {
            if sel[k].1 {
                deaths += 1.0;
            }
            leaving += 1.0;
            k += 1;
        }
        if deaths > 0.0 {
            surv *= 1.0 - deaths / at_risk;
            if at_risk > deaths {
                greenwood += deaths / (at_risk * (at_risk - deaths));
            }
            let (lo, hi) = loglog_band(surv, greenwood);
            grid.push(t);
            values.push(surv);
            lower.push(lo);
            upper.push(hi);
        }
        at_risk -= leaving;
    }
    StepCurve::with_bands(grid, values, Some((lower, upper)))
}

fn loglog_band(surv: f64, greenwood: f64) -> (f64, f64) {
    if surv <= 0.0 || surv >= 1.0 {
        return (surv, surv);
    }
    let log_s = surv.ln();
    let theta = Z_95 * greenwood.sqrt() / log_s.abs();
    let lo = surv.powf(theta.exp()).min(surv);
    let hi = surv.powf((-theta).exp()).max(surv);
    (lo, hi)
}

/// Two-sample logrank chi-square statistic `(O - E)^2 / V` comparing the
/// subjects in `mask` against the complement, with hypergeometric variance.
/// Returns 0 when the variance vanishes.
pub fn logrank_statistic(mask: &[bool], times: &[f64], events: &[bool]) -> Result<f64> {
    if mask.len() != times.len() || times.len() != events.len() {
        return Err(Error::Shape("mask, times and events differ in length".into()));
    }
    let in_group = mask.iter().filter(|&&m| m).count();
    if in_group == 0 || in_group == mask.len() {
        return Err(Error::UndefinedComparison(
            "group must be a non-empty proper subset".into(),
        ));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut at_risk = times.len() as f64;
    let mut at_risk_group = in_group as f64;
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let (mut d, mut d_grp, mut leave, mut leave_grp) = (0.0, 0.0, 0.0, 0.0);
        while k < order.len() && times[order[k]] == t {
            let i = order[k];
            if events[i] {
                d += 1.0;
                if mask[i] {
                    d_grp += 1.0;
                }
            }
            leave += 1.0;
            if mask[i] {
                leave_grp += 1.0;
            }
            k += 1;
        }
        if d > 0.0 {
            observed += d_grp;
            expected += d * at_risk_group / at_risk;
            if at_risk > 1.0 {
                variance += at_risk_group * (at_risk - at_risk_group) * d * (at_risk - d)
                    / (at_risk * at_risk * (at_risk - 1.0));
            }
        }
        at_risk -= leave;
        at_risk_group -= leave_grp;
    }
    if variance <= 0.0 {
        return Ok(0.0);
    }
    Ok((observed - expected).powi(2) / variance)
}

/// Trapezoidal integral of `|a - b|` over `grid`.
pub fn trapezoid_abs_diff(values_a: &[f64], values_b: &[f64], grid: &[f64]) -> Result<f64> {
    if values_a.len() != grid.len() || values_b.len() != grid.len() {
        return Err(Error::Shape(format!(
            "curves of length {} and {} on a grid of {}",
            values_a.len(),
            values_b.len(),
            grid.len()
        )));
    }
    check_ascending(grid)?;
    Ok(trapezoid_unchecked(values_a, values_b, grid))
}

/// Same as [`trapezoid_abs_diff`] without validation; callers guarantee
/// equal lengths and an ascending grid.
pub(crate) fn trapezoid_unchecked(a: &[f64], b: &[f64], grid: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut prev = match (a.first(), b.first()) {
        (Some(x), Some(y)) => (x - y).abs(),
        _ => return 0.0,
    };
    for u in 1..grid.len() {
        let cur = (a[u] - b[u]).abs();
        total += (grid[u] - grid[u - 1]) * 0.5 * (prev + cur);
        prev = cur;
    }
    total
}

/// Area under the step curve on `[0, horizon]`, taking the curve as 1 before
/// its first grid point.
pub fn restricted_mean(curve: &StepCurve, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
    }
    let mut area = 0.0;
    let mut last_t = 0.0;
    let mut last_v = 1.0;
    for (&t, &v) in curve.grid.iter().zip(&curve.values) {
        if t >= horizon {
            break;
        }
        let t = t.max(0.0);
        area += last_v * (t - last_t);
        last_t = t;
        last_v = v;
    }
    area += last_v * (horizon - last_t);
    Ok(area)
}

/// Absolute difference in restricted mean survival time between two curves.
pub fn mean_shift(a: &StepCurve, b: &StepCurve, horizon: f64) -> Result<f64> {
    Ok((restricted_mean(a, horizon)? - restricted_mean(b, horizon)?).abs())
}
