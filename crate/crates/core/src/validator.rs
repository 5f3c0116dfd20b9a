//! Permutation-based significance testing of discovered subgroups.
//!
//! Outcomes are shuffled jointly against the covariates, the whole pipeline is
//! rerun, and the best exceptionality found on each shuffled copy forms a null
//! sample. Observed scores are compared to a normal fit of that sample.

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::SurvivalDataset;
use crate::learner::{self, LearnerConfig};
use crate::rsf::{self, ForestConfig};
use crate::seed::{self, Stream};
use crate::{Error, Result};

/// Summary of the null distribution of exceptionality scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub mu: f64,
    /// Standard deviation of the null scores (divisor `runs`).
    pub eta: f64,
    pub runs: usize,
    /// Raw null scores, one per permutation run.
    #[serde(default)]
    pub scores: Vec<f64>,
}

impl NullModel {
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Argument("null model needs at least one score".into()));
        }
        let runs = scores.len();
        let mu = scores.iter().sum::<f64>() / runs as f64;
        let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / runs as f64;
        Ok(Self {
            mu,
            eta: var.sqrt(),
            runs,
            scores,
        })
    }
}

/// Best hard exceptionality over `m` subgroups on one outcome permutation.
pub fn null_score(
    dataset: &SurvivalDataset,
    forest_config: &ForestConfig,
    learner_config: &LearnerConfig,
    m: usize,
    run: usize,
) -> Result<f64> {
    let base = forest_config.seed;
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    order.shuffle(&mut seed::rng(base, Stream::Permutation, run as u64));
    let times = order.iter().map(|&i| dataset.times()[i]).collect();
    let events = order.iter().map(|&i| dataset.events()[i]).collect();
    let permuted = dataset.with_outcomes(times, events)?;

    let forest_config = ForestConfig {
        seed: seed::derive(base, Stream::NullForest, run as u64),
        ..forest_config.clone()
    };
    let forest = rsf::fit_forest(&permuted, &forest_config)?;
    let matrix = rsf::predict_matrix(&forest, &permuted)?;
    let learner_config = LearnerConfig {
        n_subgroups: m,
        ..learner_config.clone()
    };
    let found = learner::discover_with_matrix(&permuted, &matrix, &learner_config, None)?;
    Ok(found
        .subgroups
        .iter()
        .map(|s| s.exceptionality)
        .fold(0.0, f64::max))
}

/// Build the null distribution from `runs` outcome permutations. Runs execute
/// in parallel; each draws from its own stream derived from
/// `forest_config.seed` and the run index.
pub fn build_dfd(
    dataset: &SurvivalDataset,
    forest_config: &ForestConfig,
    learner_config: &LearnerConfig,
    runs: usize,
    m: usize,
) -> Result<NullModel> {
    if runs == 0 || m == 0 {
        return Err(Error::Argument("runs and m must be positive".into()));
    }
    forest_config.validate()?;
    learner_config.validate()?;
    if runs < 1000 {
        log::info!("building a null from {runs} runs; 1000 or more is recommended");
    }
    let scores = (0..runs)
        .into_par_iter()
        .map(|r| null_score(dataset, forest_config, learner_config, m, r))
        .collect::<Result<Vec<_>>>()?;
    NullModel::from_scores(scores)
}

/// One-sided upper-tail p-value of `score` under a normal fit of the null.
pub fn p_value(score: f64, null: &NullModel) -> Result<f64> {
    if !score.is_finite() {
        return Err(Error::Argument(format!("score must be finite, got {score}")));
    }
    if !(null.eta > 0.0) {
        warn!("null distribution has zero spread; p-value is degenerate");
        return Ok(if score > null.mu { 0.0 } else { 1.0 });
    }
    let normal = Normal::standard();
    Ok(normal.sf((score - null.mu) / null.eta).clamp(0.0, 1.0))
}

/// Tail fraction of the null scores at or above `score`, with the usual +1
/// correction. Intended for cross-checking the normal approximation.
pub fn empirical_p_value(score: f64, null: &NullModel) -> f64 {
    let above = null.scores.iter().filter(|&&s| s >= score).count();
    (above + 1) as f64 / (null.scores.len() + 1) as f64
}

/// Bonferroni-adjusted p-values and significance flags at level `alpha`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<(f64, bool)>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("p-value {p} outside [0, 1]")));
    }
    let k = p_values.len() as f64;
    Ok(p_values
        .iter()
        .map(|p| {
            let adjusted = (p * k).min(1.0);
            (adjusted, adjusted < alpha)
        })
        .collect())
}
