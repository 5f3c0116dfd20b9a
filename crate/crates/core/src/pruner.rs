//! Greedy post-hoc simplification of learned rules.
//!
//! Conditions are removed one at a time (by zeroing their weight) as long as
//! the crisp membership of the pruned rule stays within a Jaccard threshold of
//! the original rule's membership.

use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::softrule::{self, SoftRuleParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub threshold: f64,
    pub activity_threshold: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            threshold: 0.95,
            activity_threshold: softrule::DEFAULT_ACTIVITY_THRESHOLD,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "prune threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `|A ∩ B| / |A ∪ B|`, and 1 when both masks are empty.
pub fn jaccard(mask_a: &[bool], mask_b: &[bool]) -> Result<f64> {
    if mask_a.len() != mask_b.len() {
        return Err(Error::Shape(format!(
            "masks have lengths {} and {}",
            mask_a.len(),
            mask_b.len()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in mask_a.iter().zip(mask_b) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub params: SoftRuleParams,
    /// Features whose conditions were removed, in removal order.
    pub removed: Vec<usize>,
    /// Jaccard similarity of the final membership to the original.
    pub jaccard: f64,
}

fn crisp_mask(dataset: &SurvivalDataset, params: &SoftRuleParams, activity: f64) -> Result<Vec<bool>> {
    let rule = softrule::harden(params, dataset, activity);
    softrule::membership(&rule, dataset.features())
}

/// Prune `params`, returning the simplified parameters.
pub fn prune_rule(dataset: &SurvivalDataset, params: &SoftRuleParams, config: &PruneConfig) -> Result<SoftRuleParams> {
    Ok(prune_rule_detailed(dataset, params, config)?.params)
}

pub fn prune_rule_detailed(
    dataset: &SurvivalDataset,
    params: &SoftRuleParams,
    config: &PruneConfig,
) -> Result<PruneOutcome> {
    config.validate()?;
    params.validate()?;
    let reference = crisp_mask(dataset, params, config.activity_threshold)?;
    let mut current = params.clone();
    let mut removed = Vec::new();
    let mut score = 1.0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for j in current.active(config.activity_threshold) {
            let mut candidate = current.clone();
            candidate.weights[j] = 0.0;
            let mask = crisp_mask(dataset, &candidate, config.activity_threshold)?;
            let s = jaccard(&reference, &mask)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        match best {
            Some((j, s)) if s >= config.threshold => {
                current.weights[j] = 0.0;
                removed.push(j);
                score = s;
            }
            _ => break,
        }
    }
    Ok(PruneOutcome {
        params: current,
        removed,
        jaccard: score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(jaccard(&[true, false], &[false, true]).unwrap(), 0.0);
        let j = jaccard(&[true, true, false], &[true, false, true]).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert!(jaccard(&[true], &[true, false]).is_err());
    }

    fn dataset(cols: usize, f: impl Fn(usize, usize) -> f64, n: usize) -> SurvivalDataset {
        let x = Array2::from_shape_fn((n, cols), |(i, j)| f(i, j));
        let names = (0..cols).map(|j| format!("x{j}")).collect();
        SurvivalDataset::new(x, (1..=n).map(|t| t as f64).collect(), vec![true; n], names).unwrap()
    }

    #[test]
    fn duplicated_feature_loses_one_condition() {
        let d = dataset(2, |i, _| i as f64 / 99.0, 100);
        let params = SoftRuleParams::new(vec![0.3, 0.3], vec![0.7, 0.7], vec![1.0, 1.0], 0.01).unwrap();
        let out = prune_rule_detailed(&d, &params, &PruneConfig::default()).unwrap();
        assert_eq!(out.removed, vec![0]);
        assert_eq!(out.jaccard, 1.0);
        assert_eq!(out.params.active(0.1), vec![1]);
    }

    #[test]
    fn binding_conditions_survive_threshold_one() {
        // x0 and x1 independent-ish: each condition excludes someone the other keeps
        let d = dataset(2, |i, j| if j == 0 { (i % 10) as f64 } else { (i / 10) as f64 }, 100);
        let params = SoftRuleParams::new(vec![2.0, 2.0], vec![9.0, 9.0], vec![1.0, 1.0], 0.01).unwrap();
        let cfg = PruneConfig { threshold: 1.0, ..Default::default() };
        assert_eq!(prune_rule(&d, &params, &cfg).unwrap(), params);
        let single = SoftRuleParams::new(vec![2.0, 0.0], vec![9.0, 9.0], vec![1.0, 0.0], 0.01).unwrap();
        assert_eq!(prune_rule(&d, &single, &PruneConfig::default()).unwrap(), single);
    }

    #[test]
    fn stays_above_threshold() {
        let d = dataset(3, |i, j| ((i * (j + 3) * 7919) % 101) as f64, 200);
        let params = SoftRuleParams::new(vec![5.0, 1.0, 0.0], vec![100.0, 99.0, 95.0], vec![1.0, 0.5, 2.0], 0.1).unwrap();
        let cfg = PruneConfig::default();
        let once = prune_rule_detailed(&d, &params, &cfg).unwrap();
        assert!(once.jaccard >= 0.95);
        let before = crisp_mask(&d, &params, 0.1).unwrap();
        let after = crisp_mask(&d, &once.params, 0.1).unwrap();
        assert_eq!(jaccard(&before, &after).unwrap(), once.jaccard);
        assert!(once.params.active(0.1).iter().all(|j| params.active(0.1).contains(j)));
    }

    #[test]
    fn exact_removals_are_idempotent() {
        let d = dataset(3, |i, j| if j < 2 { i as f64 } else { (i % 7) as f64 }, 100);
        let params = SoftRuleParams::new(vec![20.0, 20.0, 1.0], vec![80.0, 80.0, 5.0], vec![1.0, 1.0, 1.0], 0.01).unwrap();
        let once = prune_rule(&d, &params, &PruneConfig::default()).unwrap();
        assert_eq!(once.active(0.1), vec![1, 2]);
        assert_eq!(prune_rule(&d, &once, &PruneConfig::default()).unwrap(), once);
    }
}
