//! Synthetic survival data with a planted hyper-box subgroup.
//!
//! Covariates are uniform on `[0, 1]`. A box over `k` randomly chosen
//! features, with total volume `ratio_target`, defines the subgroup. Members
//! and non-members draw Weibull event times with different scales, each
//! shifted by a shared linear covariate effect, and a random fraction of
//! subjects is censored uniformly before its event.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::seed::{self, Stream};
use crate::softrule::{Condition, HardRule};
use crate::{Error, Result};

const MAX_FLAG_RETRIES: usize = 1000;
const PSI_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub scale_nsg: f64,
    pub shape_nsg: f64,
    pub scale_sg: f64,
    pub shape_sg: f64,
    pub ratio_target: f64,
    pub ratio_cens: f64,
    /// Require the two per-subject scale ranges to be disjoint. Disable to
    /// generate subgroups whose outcome distribution matches the population.
    pub require_separation: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            p: 10,
            k: 2,
            scale_nsg: 5.0,
            shape_nsg: 1.5,
            scale_sg: 1.0,
            shape_sg: 1.5,
            ratio_target: 0.2,
            ratio_cens: 0.1,
            require_separation: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.k == 0 || self.k > self.p {
            return Err(Error::Config(format!("need 1 <= k <= p, got k={} p={}", self.k, self.p)));
        }
        if !(self.ratio_target > 0.0 && self.ratio_target < 1.0) {
            return Err(Error::Config("ratio_target must lie in (0, 1)".into()));
        }
        if !(self.ratio_cens >= 0.0 && self.ratio_cens < 1.0) {
            return Err(Error::Config("ratio_cens must lie in [0, 1)".into()));
        }
        for (name, v) in [
            ("scale_nsg", self.scale_nsg),
            ("shape_nsg", self.shape_nsg),
            ("scale_sg", self.scale_sg),
            ("shape_sg", self.shape_sg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Ground truth of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// The `k` planted intervals, ordered by feature index.
    pub rule: HardRule,
    pub mask: Vec<bool>,
    /// Planted features in sampling order.
    pub features: Vec<usize>,
    /// Effective Weibull scale of every subject.
    pub subject_scales: Vec<f64>,
    /// Event time of every subject before censoring.
    pub latent_times: Vec<f64>,
    /// Final covariate-effect multiplier.
    pub psi: f64,
}

/// Generate a dataset with one planted subgroup.
pub fn make_survival_data(config: &SynthConfig) -> Result<(SurvivalDataset, PlantedTruth)> {
    config.validate()?;
    let SynthConfig { n, p, k, .. } = *config;
    let mut rng = seed::rng(config.seed, Stream::Synth, 0);

    let chosen: Vec<usize> = sample(&mut rng, p, k).into_vec();
    let eps = config.ratio_target.powf(1.0 / k as f64);
    let lows: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=1.0 - eps)).collect();
    let inside = |j: usize, x: f64| lows[j] <= x && x <= lows[j] + eps;

    let mut x = Array2::from_shape_simple_fn((n, p), || rng.random::<f64>());
    let mut x_sg = Array2::zeros((n, k));
    let mut x_nsg = Array2::zeros((n, k));
    for j in 0..k {
        for i in 0..n {
            x_sg[[i, j]] = lows[j] + eps * rng.random::<f64>();
            let mut v: f64 = rng.random();
            while inside(j, v) {
                v = rng.random();
            }
            x_nsg[[i, j]] = v;
        }
    }

    let mut flags: Vec<bool> = Vec::new();
    for attempt in 0.. {
        flags = (0..n).map(|_| rng.random_bool(config.ratio_target)).collect();
        let members = flags.iter().filter(|&&f| f).count();
        if (members > 0 && members < n) || n == 1 {
            break;
        }
        if attempt == MAX_FLAG_RETRIES {
            return Err(Error::Generation(format!(
                "could not draw a proper subgroup for n = {n}"
            )));
        }
    }
    for (j, &v) in chosen.iter().enumerate() {
        for i in 0..n {
            x[[i, v]] = if flags[i] { x_sg[[i, j]] } else { x_nsg[[i, j]] };
        }
    }

    let influence: Vec<f64> = (0..n)
        .map(|i| chosen.iter().map(|&v| x[[i, v]]).sum::<f64>() - k as f64 / 2.0)
        .collect();
    let mut psi = 1.0;
    let subject_scales = loop {
        let scales: Vec<f64> = (0..n)
            .map(|i| {
                let base = if flags[i] { config.scale_sg } else { config.scale_nsg };
                base + influence[i] * psi
            })
            .collect();
        if scales_acceptable(&scales, &flags, config.require_separation) {
            break scales;
        }
        psi *= 0.9;
        if psi < PSI_FLOOR {
            return Err(Error::Generation(
                "subgroup and population scales cannot be separated".into(),
            ));
        }
    };

    let weibull = |rng: &mut rand_chacha::ChaCha8Rng, shape: f64| -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        (-u.ln()).powf(1.0 / shape)
    };
    let y_sg: Vec<f64> = (0..n).map(|_| weibull(&mut rng, config.shape_sg)).collect();
    let y_nsg: Vec<f64> = (0..n).map(|_| weibull(&mut rng, config.shape_nsg)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| subject_scales[i] * if flags[i] { y_sg[i] } else { y_nsg[i] })
        .collect();
    let mut events: Vec<bool> = (0..n).map(|_| rng.random_bool(1.0 - config.ratio_cens)).collect();
    let mut times: Vec<f64> = (0..n)
        .map(|i| if events[i] { y[i] } else { rng.random::<f64>() * y[i] })
        .collect();
    if !events.iter().any(|&e| e) {
        // a dataset needs one observed event; uncensor the longest follow-up
        let last = (0..n).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0);
        events[last] = true;
        times[last] = y[last];
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&j| chosen[j]);
    let rule = HardRule {
        conditions: order
            .iter()
            .map(|&j| Condition {
                feature: chosen[j],
                lower: Some(lows[j]),
                upper: Some(lows[j] + eps),
                empty: false,
            })
            .collect(),
    };
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let dataset = SurvivalDataset::new(x, times, events, names)?;
    Ok((
        dataset,
        PlantedTruth {
            rule,
            mask: flags,
            features: chosen,
            subject_scales,
            latent_times: y,
            psi,
        },
    ))
}

fn range_of(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn scales_acceptable(scales: &[f64], flags: &[bool], require_separation: bool) -> bool {
    let sg = range_of(scales.iter().zip(flags).filter(|(_, f)| **f).map(|(s, _)| *s));
    let nsg = range_of(scales.iter().zip(flags).filter(|(_, f)| !**f).map(|(s, _)| *s));
    let positive = |r: Option<(f64, f64)>| r.is_none_or(|(lo, _)| lo >= 0.0);
    if !positive(sg) || !positive(nsg) {
        return false;
    }
    if !require_separation {
        return true;
    }
    match (sg, nsg) {
        (Some((a_lo, a_hi)), Some((b_lo, b_hi))) => a_hi < b_lo || b_hi < a_lo,
        _ => true,
    }
}

/// Membership-level F1 of `predicted` against `truth`.
pub fn recovery_f1(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "masks have lengths {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softrule::membership;

    #[test]
    fn f1_examples() {
        let truth: Vec<bool> = (0..100).map(|i| i < 20).collect();
        assert_eq!(recovery_f1(&truth, &truth).unwrap(), 1.0);
        let complement: Vec<bool> = truth.iter().map(|t| !t).collect();
        assert_eq!(recovery_f1(&complement, &truth).unwrap(), 0.0);
        // 10 true positives and 10 false positives
        let predicted: Vec<bool> = (0..100).map(|i| i < 10 || (20..30).contains(&i)).collect();
        let f1 = recovery_f1(&predicted, &truth).unwrap();
        let (precision, recall) = (10.0 / 20.0, 10.0 / 20.0);
        assert!((f1 - 2.0 * precision * recall / (precision + recall)).abs() < 1e-15);
        assert_eq!(recovery_f1(&[false; 100], &truth).unwrap(), 0.0);
        assert!(recovery_f1(&[true], &truth).is_err());
    }

    #[test]
    fn single_feature_box() {
        let cfg = SynthConfig { n: 2000, p: 1, k: 1, seed: 4, ..Default::default() };
        let (data, truth) = make_survival_data(&cfg).unwrap();
        let c = &truth.rule.conditions[0];
        let (lo, hi) = (c.lower.unwrap(), c.upper.unwrap());
        assert!((hi - lo - 0.2).abs() < 1e-12);
        for i in 0..data.n() {
            let v = data.row(i)[0];
            assert_eq!(truth.mask[i], lo <= v && v <= hi, "row {i}");
        }
    }

    #[test]
    fn planted_rule_reproduces_mask() {
        for s in 0..5 {
            let cfg = SynthConfig { n: 3000, p: 6, k: 3, seed: s, ..Default::default() };
            let (data, truth) = make_survival_data(&cfg).unwrap();
            assert_eq!(membership(&truth.rule, data.features()).unwrap(), truth.mask);
            let members = truth.mask.iter().filter(|&&m| m).count() as f64;
            let sd = (3000.0 * 0.2 * 0.8f64).sqrt();
            assert!((members - 600.0).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn no_censoring_keeps_raw_times() {
        let cfg = SynthConfig { n: 500, ratio_cens: 0.0, seed: 2, ..Default::default() };
        let (data, truth) = make_survival_data(&cfg).unwrap();
        assert!(data.events().iter().all(|&e| e));
        assert_eq!(data.times(), &truth.latent_times[..]);
        let cfg = SynthConfig { ratio_cens: 0.5, ..cfg };
        let (data, truth) = make_survival_data(&cfg).unwrap();
        for i in 0..data.n() {
            if data.events()[i] {
                assert_eq!(data.times()[i], truth.latent_times[i]);
            } else {
                assert!(data.times()[i] <= truth.latent_times[i]);
            }
        }
    }

    #[test]
    fn scale_supports_are_separated() {
        for s in 0..5 {
            let (_, truth) = make_survival_data(&SynthConfig { n: 2000, seed: s, ..Default::default() }).unwrap();
            let sg = range_of(truth.subject_scales.iter().zip(&truth.mask).filter(|(_, m)| **m).map(|(v, _)| *v)).unwrap();
            let nsg = range_of(truth.subject_scales.iter().zip(&truth.mask).filter(|(_, m)| !**m).map(|(v, _)| *v)).unwrap();
            assert!(sg.0 >= 0.0 && nsg.0 >= 0.0);
            assert!(sg.1 < nsg.0 || nsg.1 < sg.0);
        }
    }

    #[test]
    fn equal_scales_need_separation_off() {
        let cfg = SynthConfig { n: 500, scale_sg: 5.0, seed: 1, ..Default::default() };
        assert!(matches!(make_survival_data(&cfg), Err(Error::Generation(_))));
        let cfg = SynthConfig { require_separation: false, ..cfg };
        assert!(make_survival_data(&cfg).is_ok());
    }

    #[test]
    fn censoring_fraction() {
        let cfg = SynthConfig { n: 5000, ratio_cens: 0.3, seed: 8, ..Default::default() };
        let (data, _) = make_survival_data(&cfg).unwrap();
        let censored = data.events().iter().filter(|&&e| !e).count() as f64;
        let sd = (5000.0 * 0.3 * 0.7f64).sqrt();
        assert!((censored - 1500.0).abs() < 3.0 * sd);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig { n: 300, seed: 77, ..Default::default() };
        let (a, ta) = make_survival_data(&cfg).unwrap();
        let (b, tb) = make_survival_data(&cfg).unwrap();
        assert_eq!(a.times(), b.times());
        assert_eq!(a.features(), b.features());
        assert_eq!(ta, tb);
    }
}
