//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.
//!
//! The heavy checks share one CPU budget, so they run one at a time.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survgroup::bench::{self, Sweep};
use survgroup::dataset::SurvivalDataset;
use survgroup::learner::{self, DiscoverConfig, LearnerConfig};
use survgroup::pruner::{self, PruneConfig};
use survgroup::rsf::{self, ForestConfig, SurvivalMatrix};
use survgroup::softrule::{self, SoftRuleParams};
use survgroup::survival::{self, StepCurve};
use survgroup::synth::{self, SynthConfig};
use survgroup::validator;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    let line = format!(
        "acceptance {id:>2} {name:<28} {}  {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

/// Mean F1 of the pipeline over `repeats` generated datasets.
fn recovery(cfg: &SynthConfig, repeats: usize) -> (f64, Vec<f64>) {
    let point = bench::run_point(Sweep::Samples, cfg.n as f64, cfg, &DiscoverConfig::default(), repeats, 1)
        .expect("pipeline runs");
    (point.mean, point.scores)
}

fn fmt_scores(scores: &[f64]) -> String {
    scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn c01_synthetic_recovery_at_defaults() {
    let _g = heavy();
    let start = Instant::now();
    let (mean, scores) = recovery(&SynthConfig::default(), 10);
    let pass = mean >= 0.70;
    verdict(
        1,
        "synthetic recovery",
        pass,
        &format!("mean F1 {mean:.3} (>= 0.70) over 10 seeds [{}], {:.0}s", fmt_scores(&scores), start.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c02_censoring_robustness() {
    let _g = heavy();
    let cfg = SynthConfig { n: 5000, ratio_cens: 0.6, ..Default::default() };
    let (mean, scores) = recovery(&cfg, 10);
    let pass = mean >= 0.6;
    verdict(
        2,
        "censoring robustness",
        pass,
        &format!("mean F1 {mean:.3} (>= 0.60) at 60% censoring [{}]", fmt_scores(&scores)),
    );
    assert!(pass);
}

/// Least-squares slope of log(y) on log(x).
fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn c03_dimensionality_stability() {
    let _g = heavy();
    let repeats = 5;
    let (f10, s10) = recovery(&SynthConfig { n: 5000, p: 10, ..Default::default() }, repeats);
    let (f100, s100) = recovery(&SynthConfig { n: 5000, p: 100, ..Default::default() }, repeats);
    let stable = f100 >= f10 - 0.15;

    // one pipeline run per width on a fixed-size sample
    let mut timings = Vec::new();
    for p in [10usize, 50, 100, 500] {
        let cfg = SynthConfig { n: 2000, p, seed: 4, ..Default::default() };
        let (data, _) = synth::make_survival_data(&cfg).unwrap();
        let start = Instant::now();
        learner::discover(&data, &DiscoverConfig::default()).unwrap();
        timings.push((p as f64, start.elapsed().as_secs_f64()));
    }
    let slope = log_log_slope(&timings);
    let pass = stable && slope < 2.0;
    let times = timings.iter().map(|(p, t)| format!("p={p}:{t:.1}s")).collect::<Vec<_>>().join(" ");
    verdict(
        3,
        "dimensionality stability",
        pass,
        &format!(
            "F1 p=10 {f10:.3} [{}], p=100 {f100:.3} [{}] (gap <= 0.15: {stable}); runtime slope {slope:.2} (< 2) {times}",
            fmt_scores(&s10),
            fmt_scores(&s100)
        ),
    );
    assert!(pass);
}

#[test]
fn c04_hazard_ratio_sensitivity() {
    let _g = heavy();
    let base = SynthConfig { n: 5000, ..Default::default() };
    let ratios = [0.2, 0.5, 1.0];
    let points = bench::run_sweep(Sweep::HazardRatio, &ratios, &base, &DiscoverConfig::default(), 5, 1).unwrap();
    let means: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let inversions = means.windows(2).filter(|w| w[1] > w[0]).count();
    let near_chance = means[2] <= 0.45;
    let pass = inversions <= 1 && means[0] > means[2] && near_chance;
    verdict(
        4,
        "hazard-ratio sensitivity",
        pass,
        &format!(
            "F1 at ratios 0.2/0.5/1.0: {:.3}/{:.3}/{:.3}, {inversions} inversion(s), ratio 1.0 <= 0.45: {near_chance}",
            means[0], means[1], means[2]
        ),
    );
    assert!(pass);
}

fn random_curve(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut v = 1.0;
    (0..m)
        .map(|_| {
            v *= rng.random_range(0.6..1.0);
            v
        })
        .collect()
}

#[test]
fn c05_masked_mean_dominance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut violations, mut strict_needed, mut strict_failed) = (0, 0, 0);
    let mut trials = 0;
    while trials < 1000 {
        let n = rng.random_range(2..30);
        let m = rng.random_range(2..25);
        let mut grid: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..10.0)).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        if grid.len() < 2 {
            continue;
        }
        let m = grid.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_curve(&mut rng, m)).collect();
        let reference = StepCurve::new(grid.clone(), random_curve(&mut rng, m)).unwrap();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if !mask.contains(&true) {
            continue;
        }
        trials += 1;
        let matrix = SurvivalMatrix::from_rows(grid.clone(), &rows).unwrap();
        let per_row = learner::exceptionality_vector(&matrix, &reference).unwrap();
        let lhs = learner::hard_exceptionality(&mask, &per_row);
        let weights: Vec<f64> = mask.iter().map(|&b| b as u8 as f64).collect();
        let mean_curve = matrix.weighted_mean(&weights).unwrap();
        let rhs = survival::trapezoid_abs_diff(&mean_curve, reference.values(), &grid).unwrap();
        if lhs < rhs - 1e-12 {
            violations += 1;
        }
        // members on both sides of the reference at one grid point
        let straddles = (0..m).any(|u| {
            let devs = rows.iter().zip(&mask).filter(|(_, &b)| b).map(|(r, _)| r[u] - reference.values()[u]);
            let (lo, hi) = devs.fold((0.0f64, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
            lo < -1e-3 && hi > 1e-3
        });
        if straddles {
            strict_needed += 1;
            if !(lhs > rhs + 1e-12) {
                strict_failed += 1;
            }
        }
    }
    let pass = violations == 0 && strict_failed == 0;
    verdict(
        5,
        "masked-mean dominance",
        pass,
        &format!("{violations} violations in 1000 triples; {strict_failed} of {strict_needed} straddling cases not strict"),
    );
    assert!(pass);
}

#[test]
fn c06_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x06);
    let (n, p) = (50, 5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>());
        let exc: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let preds: Vec<Vec<f64>> = (0..rng.random_range(0..3))
            .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0).collect())
            .collect();
        let alpha: Vec<f64> = (0..p).map(|_| rng.random_range(-0.2..0.6)).collect();
        let beta: Vec<f64> = alpha.iter().map(|a| a + rng.random_range(0.1..1.0)).collect();
        let weights: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..2.0)).collect();
        let tau = rng.random_range(0.05..0.5);
        let params = SoftRuleParams::new(alpha, beta, weights, tau).unwrap();
        let gamma = rng.random::<f64>();
        let (_, grad) = learner::full_loss_gradient(&x, &params, &exc, &preds, gamma).unwrap();
        let h = 1e-6;
        for k in 0..3 * p {
            let loss_at = |d: f64| {
                let mut q = params.clone();
                match k / p {
                    0 => q.alpha[k % p] += d,
                    1 => q.beta[k % p] += d,
                    _ => q.weights[k % p] += d,
                }
                learner::full_loss_gradient(&x, &q, &exc, &preds, gamma).unwrap().0
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let err = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    let pass = worst < 1e-4;
    verdict(6, "gradient oracle", pass, &format!("max relative error {worst:.2e} (< 1e-4) over 100 points"));
    assert!(pass);
}

#[test]
fn c07_trapezoid_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x07);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let m = rng.random_range(2..40);
        let mut grid = vec![rng.random_range(-5.0..5.0)];
        for _ in 1..m {
            let last = *grid.last().unwrap();
            grid.push(last + rng.random_range(0.01..3.0));
        }
        // |a - b| is linear between grid points: the difference keeps one
        // sign and only reaches zero at grid points
        let sign = if case % 2 == 0 { 1.0 } else { -1.0 };
        let h: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..2.0) }).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = b.iter().zip(&h).map(|(b, h)| b + sign * h).collect();
        // Simpson's rule is exact for linear pieces
        let exact: f64 = (1..m)
            .map(|u| {
                let w = grid[u] - grid[u - 1];
                let mid = 0.5 * ((a[u - 1] - b[u - 1]) + (a[u] - b[u]));
                w / 6.0 * ((a[u - 1] - b[u - 1]).abs() + 4.0 * mid.abs() + (a[u] - b[u]).abs())
            })
            .sum();
        let got = survival::trapezoid_abs_diff(&a, &b, &grid).unwrap();
        worst = worst.max((got - exact).abs() / exact.max(1.0));
    }
    let pass = worst <= 1e-10;
    verdict(7, "trapezoid exactness", pass, &format!("max error {worst:.2e} (<= 1e-10) over 100 functions"));
    assert!(pass);
}

#[test]
fn c08_annealing_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x08);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10_000 {
        let alpha: f64 = rng.random_range(-3.0..3.0);
        let beta = alpha + rng.random_range(0.1..4.0);
        let x = rng.random_range(alpha - 2.0..beta + 2.0);
        if (x - alpha).abs() < 0.05 || (x - beta).abs() < 0.05 {
            continue;
        }
        checked += 1;
        let crisp = if x >= alpha && x <= beta { 1.0 } else { 0.0 };
        let soft = softrule::soft_condition(x, alpha, beta, 1e-3).unwrap();
        worst = worst.max((soft - crisp).abs());
    }
    let pass = worst <= 1e-6;
    verdict(8, "annealing convergence", pass, &format!("max deviation {worst:.2e} (<= 1e-6) at tau 1e-3"));
    assert!(pass);
}

fn dataset_from(x: Array2<f64>) -> SurvivalDataset {
    let n = x.nrows();
    let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    SurvivalDataset::new(x, (1..=n).map(|t| t as f64).collect(), vec![true; n], names).unwrap()
}

fn crisp(data: &SurvivalDataset, params: &SoftRuleParams) -> Vec<bool> {
    softrule::membership(&softrule::harden(params, data, 0.1), data.features()).unwrap()
}

#[test]
fn c09_pruning_contract() {
    let cfg = PruneConfig::default();

    // duplicated feature: x1 is a copy of x0
    let mut rng = ChaCha8Rng::seed_from_u64(0x09);
    let x = Array2::from_shape_fn((300, 3), |_| rng.random::<f64>());
    let mut dup = x.clone();
    let c0 = dup.column(0).to_owned();
    dup.column_mut(1).assign(&c0);
    let data = dataset_from(dup);
    let params = SoftRuleParams::new(vec![0.2, 0.2, 0.1], vec![0.7, 0.7, 0.9], vec![1.0; 3], 0.01).unwrap();
    let out = pruner::prune_rule_detailed(&data, &params, &cfg).unwrap();
    let duplicate_ok = out.removed.len() == 1 && out.removed[0] < 2 && out.jaccard == 1.0;

    // random rules on random data
    let (mut below, mut not_idempotent, mut cases) = (0, 0, 0);
    for _ in 0..200 {
        let n = rng.random_range(100..400);
        let p = rng.random_range(2..6);
        let data = dataset_from(Array2::from_shape_fn((n, p), |_| rng.random::<f64>()));
        let alpha: Vec<f64> = (0..p).map(|_| rng.random_range(-0.1..0.15)).collect();
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(0.85..1.1)).collect();
        let params = SoftRuleParams::new(alpha, beta, vec![1.0; p], 0.01).unwrap();
        if params.active(0.1).is_empty() {
            continue;
        }
        cases += 1;
        let once = pruner::prune_rule(&data, &params, &cfg).unwrap();
        if pruner::jaccard(&crisp(&data, &params), &crisp(&data, &once)).unwrap() < cfg.threshold {
            below += 1;
        }
        if pruner::prune_rule(&data, &once, &cfg).unwrap() != once {
            not_idempotent += 1;
        }
    }
    let pass = duplicate_ok && below == 0 && not_idempotent == 0;
    verdict(
        9,
        "pruning contract",
        pass,
        &format!(
            "duplicate removed once at Jaccard 1: {duplicate_ok}; {below} of {cases} below 0.95; {not_idempotent} of {cases} not idempotent"
        ),
    );
    assert!(pass);
}

#[test]
fn c10_null_calibration() {
    let _g = heavy();
    let start = Instant::now();
    let (data, _) = synth::make_survival_data(&SynthConfig { n: 500, p: 5, seed: 10, ..Default::default() }).unwrap();
    let forest = ForestConfig { seed: 1010, ..Default::default() };
    let learner_cfg = LearnerConfig { epochs: 200, ..Default::default() };
    let null = validator::build_dfd(&data, &forest, &learner_cfg, 200, 1).unwrap();

    // fresh permutations, disjoint from the runs behind the null
    let trials = 50;
    let false_hits = (0..trials)
        .filter(|&t| {
            let score = validator::null_score(&data, &forest, &learner_cfg, 1, 100_000 + t).unwrap();
            validator::p_value(score, &null).unwrap() < 0.05
        })
        .count();

    let matrix = rsf::predict_matrix(&rsf::fit_forest(&data, &forest).unwrap(), &data).unwrap();
    let found = learner::discover_with_matrix(&data, &matrix, &learner_cfg, None).unwrap();
    let score = found.subgroups[0].exceptionality;
    let p = validator::p_value(score, &null).unwrap();
    let (adjusted, significant) = validator::bonferroni(&[p], 0.05).unwrap()[0];

    let pass = false_hits * 10 <= trials && significant;
    verdict(
        10,
        "null calibration",
        pass,
        &format!(
            "{false_hits}/{trials} permuted discoveries at p < 0.05 (<= 10%); planted p {adjusted:.2e}; null mu {:.3} eta {:.3}; {:.0}s",
            null.mu,
            null.eta,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

fn gbsg2_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/gbsg2.csv")
}

#[test]
fn c11_real_data_smoke() {
    let _g = heavy();
    let data = SurvivalDataset::load_csv(gbsg2_path(), "time", "cens", true).unwrap();
    let run = |seed: u64, gamma: f64| {
        let cfg = DiscoverConfig {
            forest: ForestConfig { seed, ..Default::default() },
            learner: LearnerConfig { gamma, ..Default::default() },
        };
        let found = learner::discover(&data, &cfg).unwrap();
        let sg = found.subgroups[0].clone();
        let logrank = sg.logrank.unwrap_or(0.0);
        let line = format!(
            "seed {seed}: size {}, exc {:.1}, logrank {logrank:.2} [{}]",
            sg.size,
            sg.exceptionality,
            sg.rule.render(data.feature_names())
        );
        (sg.exceptionality > 0.0 && logrank > 3.84, line)
    };
    // at the default gamma of 0.1 this dataset collapses onto the whole
    // population; the smaller gamma is fixed up front, not searched per seed
    let mut lines = Vec::new();
    let mut pass = false;
    for seed in [1u64, 2, 3] {
        let (ok, line) = run(seed, 0.05);
        pass |= ok;
        lines.push(line);
    }
    let (_, default_line) = run(1, LearnerConfig::default().gamma);
    verdict(11, "real-data smoke", pass, &format!("gamma 0.05: {}; gamma 0.1 {default_line}", lines.join("; ")));
    assert!(pass);
}

fn run_discover(out: &Path, cache: &Path) {
    let data = gbsg2_path();
    let status = Command::new(env!("CARGO_BIN_EXE_survgroup"))
        .args(["discover", "--input"])
        .arg(&data)
        .args(["--time-col", "time", "--event-col", "cens", "--one-hot", "--subgroups", "2", "--seed", "12"])
        .arg("--out-dir")
        .arg(out)
        .env("SURVGROUP_CACHE_DIR", cache)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn c12_determinism() {
    let _g = heavy();
    let dir = tempfile::tempdir().unwrap();
    // separate caches so both runs fit their own forest
    run_discover(&dir.path().join("a"), &dir.path().join("cache_a"));
    run_discover(&dir.path().join("b"), &dir.path().join("cache_b"));
    let a = std::fs::read(dir.path().join("a/subgroups.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/subgroups.json")).unwrap();
    let pass = a == b;
    verdict(12, "determinism", pass, &format!("subgroups.json byte-identical across two fresh runs ({} bytes)", a.len()));
    assert!(pass);
}
