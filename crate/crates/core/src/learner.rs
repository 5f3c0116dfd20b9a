//! Gradient-based learning of exceptional subgroups.
//!
//! Each subject gets an exceptionality score: the integrated absolute
//! difference between its predicted survival curve and a reference curve. A
//! soft rule is then fitted by Adam to maximise
//!
//! ```text
//! s^gamma * phi(sigma, D) + sum_g s^(gamma / g) * phi(sigma, g)
//! ```
//!
//! where `s` is the mean soft membership and `phi(sigma, r)` the
//! membership-weighted mean of the exceptionality scores against reference
//! `r` (the population, or the `g`-th previously found subgroup).
//!
//! Optimisation runs in min-max normalised feature coordinates so that one
//! temperature and learning rate fit every feature; the returned parameters
//! are mapped back to raw units with per-feature temperature scales, so they
//! evaluate identically on the original data.

use log::{debug, warn};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalDataset;
use crate::rsf::{self, ForestConfig, SurvivalMatrix};
use crate::softrule::{self, HardRule, SoftRuleParams, CONDITION_FLOOR};
use crate::survival::{self, StepCurve};
use crate::{Error, Result};

/// Floor on the mean soft membership inside the objective.
pub const SIZE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub initial_temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_subgroups: usize,
    /// Multiplier applied to `gamma` after each discovered subgroup.
    pub gamma_decay: f64,
    pub activity_threshold: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            initial_temperature: 0.2,
            epochs: 1000,
            learning_rate: 0.01,
            n_subgroups: 1,
            gamma_decay: 1.0,
            activity_threshold: softrule::DEFAULT_ACTIVITY_THRESHOLD,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.epochs < 4 {
            return Err(Error::Config(format!("epochs must be at least 4, got {}", self.epochs)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.n_subgroups == 0 {
            return Err(Error::Config("n_subgroups must be positive".into()));
        }
        if !(self.gamma_decay > 0.0 && self.gamma_decay <= 1.0) {
            return Err(Error::Config("gamma_decay must lie in (0, 1]".into()));
        }
        if !(self.activity_threshold >= 0.0) {
            return Err(Error::Config("activity threshold must be non-negative".into()));
        }
        Ok(())
    }

    /// Size-penalty exponent used for the `index`-th subgroup (0-based).
    pub fn gamma_for(&self, index: usize) -> f64 {
        self.gamma * self.gamma_decay.powi(index as i32)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoverConfig {
    pub forest: ForestConfig,
    pub learner: LearnerConfig,
}

/// Per-epoch optimisation state reported to a progress hook.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub subgroup: usize,
    pub epoch: usize,
    pub loss: f64,
    pub size: f64,
    pub temperature: f64,
}

pub type ProgressHook<'a> = &'a (dyn Fn(&Progress) + Sync);

/// Exceptionality of every matrix row against `reference`.
pub fn exceptionality_vector(matrix: &SurvivalMatrix, reference: &StepCurve) -> Result<Vec<f64>> {
    if reference.grid() != matrix.grid() {
        return Err(Error::Shape(
            "reference curve is not on the matrix grid".into(),
        ));
    }
    Ok(exceptionality_against(matrix, reference.values()))
}

fn exceptionality_against(matrix: &SurvivalMatrix, reference: &[f64]) -> Vec<f64> {
    let grid = matrix.grid();
    (0..matrix.n_rows())
        .into_par_iter()
        .map(|i| survival::trapezoid_unchecked(matrix.row(i), reference, grid))
        .collect()
}

/// `s^gamma * phi` with `s` the mean membership and `phi` the
/// membership-weighted mean exceptionality.
pub fn soft_objective(memberships: &[f64], exceptionality: &[f64], gamma: f64) -> Result<f64> {
    full_objective(memberships, exceptionality, &[], gamma)
}

/// Objective including the diversity terms against predecessor
/// exceptionality vectors.
pub fn full_objective(
    memberships: &[f64],
    exceptionality_pop: &[f64],
    predecessors: &[Vec<f64>],
    gamma: f64,
) -> Result<f64> {
    let n = memberships.len();
    if exceptionality_pop.len() != n || predecessors.iter().any(|e| e.len() != n) {
        return Err(Error::Shape("membership and exceptionality lengths differ".into()));
    }
    let total: f64 = memberships.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSubgroup("all memberships are zero".into()));
    }
    Ok(objective_terms(memberships, exceptionality_pop, predecessors, gamma, None))
}

/// Objective value; with `grad` given, also writes `d objective / d sigma_i`.
fn objective_terms(
    sigma: &[f64],
    exc_pop: &[f64],
    predecessors: &[Vec<f64>],
    gamma: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = sigma.len() as f64;
    let raw_size = sigma.iter().sum::<f64>() / n;
    let floored = raw_size < SIZE_FLOOR;
    let s = raw_size.max(SIZE_FLOOR);
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut total = 0.0;
    let refs = std::iter::once((gamma, exc_pop)).chain(
        predecessors
            .iter()
            .enumerate()
            .map(|(g, e)| (gamma / (g + 1) as f64, e.as_slice())),
    );
    for (c, exc) in refs {
        let a = sigma.iter().zip(exc).map(|(s, e)| s * e).sum::<f64>() / n;
        total += s.powf(c - 1.0) * a;
        if let Some(g) = grad.as_deref_mut() {
            let direct = s.powf(c - 1.0) / n;
            let via_size = if floored { 0.0 } else { (c - 1.0) * s.powf(c - 2.0) * a / n };
            for (gi, e) in g.iter_mut().zip(exc) {
                *gi += via_size + direct * e;
            }
        }
    }
    total
}

/// Scratch buffers for loss evaluation, reused across epochs.
#[derive(Default)]
struct Workspace {
    pi: Vec<f64>,
    d_alpha: Vec<f64>,
    d_beta: Vec<f64>,
    sigma: Vec<f64>,
    den: Vec<f64>,
    upstream: Vec<f64>,
}

/// Loss (negated full objective) and its gradient `[alpha | beta | weights]`
/// for soft rule `params` applied to `features`. Returns `(loss, size)`.
fn loss_gradient(
    features: &Array2<f64>,
    params: &SoftRuleParams,
    exc_pop: &[f64],
    predecessors: &[Vec<f64>],
    gamma: f64,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> (f64, f64) {
    let (n, p) = features.dim();
    let x = features.as_slice().expect("standard layout");
    ws.pi.resize(n * p, 1.0);
    ws.d_alpha.resize(n * p, 0.0);
    ws.d_beta.resize(n * p, 0.0);
    ws.sigma.resize(n, 1.0);
    ws.den.resize(n, 0.0);
    ws.upstream.resize(n, 0.0);

    let active: Vec<usize> = (0..p).filter(|&j| params.weights[j] > 0.0).collect();
    let num: f64 = active.iter().map(|&j| params.weights[j]).sum();
    for i in 0..n {
        let mut den = 0.0;
        for &j in &active {
            let k = i * p + j;
            let tau = params.effective_temperature(j);
            let (pi, da, db) = softrule::condition_parts(x[k], params.alpha[j], params.beta[j], tau);
            ws.pi[k] = pi;
            ws.d_alpha[k] = da;
            ws.d_beta[k] = db;
            den += params.weights[j] / pi.max(CONDITION_FLOOR);
        }
        ws.den[i] = den;
        ws.sigma[i] = if num > 0.0 { num / den } else { 1.0 };
    }

    let objective = objective_terms(&ws.sigma, exc_pop, predecessors, gamma, Some(&mut ws.upstream));
    let size = ws.sigma.iter().sum::<f64>() / n as f64;

    grad.iter_mut().for_each(|g| *g = 0.0);
    if num > 0.0 {
        for i in 0..n {
            // d loss / d sigma_i
            let u = -ws.upstream[i];
            if u == 0.0 {
                continue;
            }
            let (sigma, den) = (ws.sigma[i], ws.den[i]);
            for &j in &active {
                let k = i * p + j;
                let pi = ws.pi[k];
                let a = params.weights[j];
                if pi >= CONDITION_FLOOR {
                    let d_pi = u * sigma * a / (den * pi * pi);
                    grad[j] += d_pi * ws.d_alpha[k];
                    grad[p + j] += d_pi * ws.d_beta[k];
                }
                grad[2 * p + j] += u * (1.0 - sigma / pi.max(CONDITION_FLOOR)) / den;
            }
        }
    }
    (-objective, size)
}

/// Loss (negated full objective) and gradient with respect to
/// `[alpha | beta | weights]` of `params` on `features`.
pub fn full_loss_gradient(
    features: &Array2<f64>,
    params: &SoftRuleParams,
    exceptionality_pop: &[f64],
    predecessors: &[Vec<f64>],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let (n, p) = features.dim();
    if params.p() != p || exceptionality_pop.len() != n || predecessors.iter().any(|e| e.len() != n) {
        return Err(Error::Shape("loss inputs have inconsistent dimensions".into()));
    }
    let features = features.as_standard_layout();
    let mut grad = vec![0.0; 3 * p];
    let (loss, _) = loss_gradient(
        &features.to_owned(),
        params,
        exceptionality_pop,
        predecessors,
        gamma,
        &mut Workspace::default(),
        &mut grad,
    );
    Ok((loss, grad))
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], frozen: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..theta.len() {
            if frozen[k] {
                continue;
            }
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Features rescaled to `[0, 1]` per column; constant columns map to 0.
struct Normalized {
    features: Array2<f64>,
    ranges: Vec<(f64, f64)>,
}

impl Normalized {
    fn new(dataset: &SurvivalDataset) -> Self {
        let ranges = dataset.feature_ranges().to_vec();
        let mut features = dataset.features().to_owned();
        for (j, mut col) in features.columns_mut().into_iter().enumerate() {
            let (lo, hi) = ranges[j];
            let width = hi - lo;
            col.mapv_inplace(|v| if width > 0.0 { (v - lo) / width } else { 0.0 });
        }
        Self { features, ranges }
    }

    fn is_constant(&self, j: usize) -> bool {
        !(self.ranges[j].1 > self.ranges[j].0)
    }

    /// Map normalised parameters back to raw feature units.
    fn to_raw(&self, alpha: &[f64], beta: &[f64], weights: &[f64], temperature: f64) -> SoftRuleParams {
        let p = self.ranges.len();
        let mut out = SoftRuleParams {
            alpha: vec![0.0; p],
            beta: vec![0.0; p],
            weights: weights.to_vec(),
            temperature,
            feature_scales: vec![1.0; p],
        };
        for j in 0..p {
            let (lo, hi) = self.ranges[j];
            if self.is_constant(j) {
                out.alpha[j] = lo;
                out.beta[j] = hi;
            } else {
                let width = hi - lo;
                out.alpha[j] = lo + alpha[j] * width;
                out.beta[j] = lo + beta[j] * width;
                out.feature_scales[j] = width;
            }
        }
        out
    }
}

/// Shared state for learning several subgroups on one dataset.
struct LearningContext<'a> {
    dataset: &'a SurvivalDataset,
    matrix: &'a SurvivalMatrix,
    normalized: Normalized,
    population: StepCurve,
    exc_pop: Vec<f64>,
}

impl<'a> LearningContext<'a> {
    fn new(dataset: &'a SurvivalDataset, matrix: &'a SurvivalMatrix) -> Result<Self> {
        if matrix.n_rows() != dataset.n() {
            return Err(Error::Shape(format!(
                "matrix has {} rows for {} subjects",
                matrix.n_rows(),
                dataset.n()
            )));
        }
        let population = rsf::population_curve(matrix)?;
        let exc_pop = exceptionality_against(matrix, population.values());
        Ok(Self {
            dataset,
            matrix,
            normalized: Normalized::new(dataset),
            population,
            exc_pop,
        })
    }

    /// Exceptionality vector against the soft-membership-weighted mean curve
    /// of a predecessor rule.
    fn predecessor_exceptionality(&self, params: &SoftRuleParams) -> Result<Vec<f64>> {
        let sigma = params.memberships(self.dataset.features())?;
        let size = sigma.iter().sum::<f64>() / sigma.len() as f64;
        let curve = if size >= SIZE_FLOOR {
            self.matrix.weighted_mean(&sigma)
        } else {
            None
        };
        let curve = curve.unwrap_or_else(|| {
            debug!("predecessor has negligible soft size; using the population curve");
            self.population.values().to_vec()
        });
        Ok(exceptionality_against(self.matrix, &curve))
    }

    fn learn(
        &self,
        predecessors: &[SoftRuleParams],
        config: &LearnerConfig,
        gamma: f64,
        subgroup: usize,
        progress: Option<ProgressHook<'_>>,
    ) -> Result<SoftRuleParams> {
        let norm = &self.normalized;
        let p = self.dataset.p();
        if (0..p).all(|j| norm.is_constant(j)) {
            warn!("every feature is constant; returning the all-pass rule");
            return Ok(norm.to_raw(&vec![0.0; p], &vec![1.0; p], &vec![0.0; p], config.initial_temperature));
        }
        let pred_exc = predecessors
            .iter()
            .map(|params| self.predecessor_exceptionality(params))
            .collect::<Result<Vec<_>>>()?;

        // theta = [alpha | beta | weights] in normalised units
        let mut theta = vec![0.0; 3 * p];
        let mut frozen = vec![false; 3 * p];
        for j in 0..p {
            theta[p + j] = 1.0;
            if norm.is_constant(j) {
                frozen[j] = true;
                frozen[p + j] = true;
                frozen[2 * p + j] = true;
            } else {
                theta[2 * p + j] = 1.0;
            }
        }
        let mut params = SoftRuleParams {
            alpha: vec![0.0; p],
            beta: vec![0.0; p],
            weights: vec![0.0; p],
            temperature: config.initial_temperature,
            feature_scales: Vec::new(),
        };
        let mut adam = Adam::new(3 * p, config.learning_rate);
        let mut grad = vec![0.0; 3 * p];
        let mut ws = Workspace::default();
        let (half, three_quarters) = (config.epochs / 2, config.epochs * 3 / 4);
        for epoch in 1..=config.epochs {
            params.alpha.copy_from_slice(&theta[..p]);
            params.beta.copy_from_slice(&theta[p..2 * p]);
            params.weights.copy_from_slice(&theta[2 * p..]);
            let (loss, size) = loss_gradient(
                &norm.features,
                &params,
                &self.exc_pop,
                &pred_exc,
                gamma,
                &mut ws,
                &mut grad,
            );
            if let Some(hook) = progress {
                hook(&Progress {
                    subgroup,
                    epoch,
                    loss,
                    size,
                    temperature: params.temperature,
                });
            }
            adam.step(&mut theta, &grad, &frozen);
            if epoch == half || epoch == three_quarters {
                params.temperature /= 2.0;
            }
        }
        Ok(norm.to_raw(&theta[..p], &theta[p..2 * p], &theta[2 * p..], params.temperature))
    }
}

/// Learn one soft rule against the population and the given predecessors.
pub fn learn_subgroup(
    dataset: &SurvivalDataset,
    matrix: &SurvivalMatrix,
    predecessors: &[SoftRuleParams],
    config: &LearnerConfig,
) -> Result<SoftRuleParams> {
    learn_subgroup_with_progress(dataset, matrix, predecessors, config, None)
}

pub fn learn_subgroup_with_progress(
    dataset: &SurvivalDataset,
    matrix: &SurvivalMatrix,
    predecessors: &[SoftRuleParams],
    config: &LearnerConfig,
    progress: Option<ProgressHook<'_>>,
) -> Result<SoftRuleParams> {
    config.validate()?;
    let ctx = LearningContext::new(dataset, matrix)?;
    ctx.learn(predecessors, config, config.gamma, predecessors.len(), progress)
}

/// A learned subgroup with its crisp rule and summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupResult {
    pub soft_params: SoftRuleParams,
    pub rule: HardRule,
    pub mask: Vec<bool>,
    pub size: usize,
    /// Mean population exceptionality over the crisp members (0 if empty).
    pub exceptionality: f64,
    pub km_curve: Option<StepCurve>,
    /// Logrank statistic of members against non-members.
    pub logrank: Option<f64>,
    /// Absolute difference in restricted mean survival time to the whole
    /// sample, at the largest observed time.
    pub mean_shift: Option<f64>,
    pub p_value: Option<f64>,
}

/// Harden `params` and compute crisp-membership statistics.
pub fn evaluate_subgroup(
    dataset: &SurvivalDataset,
    exceptionality_pop: &[f64],
    params: SoftRuleParams,
    activity_threshold: f64,
) -> Result<SubgroupResult> {
    let rule = softrule::harden(&params, dataset, activity_threshold);
    evaluate_rule(dataset, exceptionality_pop, params, rule)
}

pub(crate) fn evaluate_rule(
    dataset: &SurvivalDataset,
    exceptionality_pop: &[f64],
    params: SoftRuleParams,
    rule: HardRule,
) -> Result<SubgroupResult> {
    let n = dataset.n();
    let mask = softrule::membership(&rule, dataset.features())?;
    let size = mask.iter().filter(|&&m| m).count();
    let exceptionality = hard_exceptionality(&mask, exceptionality_pop);
    let km_curve = survival::kaplan_meier(dataset.times(), dataset.events(), Some(&mask)).ok();
    let logrank = if size > 0 && size < n {
        survival::logrank_statistic(&mask, dataset.times(), dataset.events()).ok()
    } else {
        None
    };
    let mean_shift = match &km_curve {
        Some(curve) => {
            let all = survival::kaplan_meier(dataset.times(), dataset.events(), None)?;
            let horizon = dataset.times().iter().cloned().fold(0.0, f64::max);
            if horizon > 0.0 {
                Some(survival::mean_shift(curve, &all, horizon)?)
            } else {
                None
            }
        }
        None => None,
    };
    Ok(SubgroupResult {
        soft_params: params,
        rule,
        mask,
        size,
        exceptionality,
        km_curve,
        logrank,
        mean_shift,
        p_value: None,
    })
}

/// Mean exceptionality over the members of `mask`; 0 for an empty mask.
pub fn hard_exceptionality(mask: &[bool], exceptionality: &[f64]) -> f64 {
    let (sum, count) = mask
        .iter()
        .zip(exceptionality)
        .filter(|(m, _)| **m)
        .fold((0.0, 0usize), |(s, c), (_, e)| (s + e, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Output of [`discover`].
#[derive(Debug, Clone)]
pub struct Discovery {
    pub subgroups: Vec<SubgroupResult>,
    /// Mean predicted survival over all subjects.
    pub population_model: StepCurve,
    /// Kaplan–Meier estimate over all subjects.
    pub population_km: StepCurve,
    /// Exceptionality of each subject against the population curve.
    pub exceptionality: Vec<f64>,
}

/// Fit the population model and learn `n_subgroups` subgroups in sequence.
pub fn discover(dataset: &SurvivalDataset, config: &DiscoverConfig) -> Result<Discovery> {
    config.learner.validate()?;
    let forest = rsf::fit_forest(dataset, &config.forest)?;
    let matrix = rsf::predict_matrix(&forest, dataset)?;
    discover_with_matrix(dataset, &matrix, &config.learner, None)
}

/// Learn subgroups on a precomputed survival matrix.
pub fn discover_with_matrix(
    dataset: &SurvivalDataset,
    matrix: &SurvivalMatrix,
    config: &LearnerConfig,
    progress: Option<ProgressHook<'_>>,
) -> Result<Discovery> {
    config.validate()?;
    let ctx = LearningContext::new(dataset, matrix)?;
    let mut learned: Vec<SoftRuleParams> = Vec::new();
    let mut subgroups = Vec::with_capacity(config.n_subgroups);
    for g in 0..config.n_subgroups {
        let params = ctx.learn(&learned, config, config.gamma_for(g), g, progress)?;
        learned.push(params.clone());
        let result = evaluate_subgroup(dataset, &ctx.exc_pop, params, config.activity_threshold)?;
        if result.size == dataset.n() {
            warn!("subgroup {} selects every subject; a smaller gamma favours smaller groups", g + 1);
        }
        subgroups.push(result);
    }
    Ok(Discovery {
        subgroups,
        population_model: ctx.population,
        population_km: survival::kaplan_meier(dataset.times(), dataset.events(), None)?,
        exceptionality: ctx.exc_pop,
    })
}
