//! Recovery benchmarks on synthetic data.
//!
//! A sweep varies one generator parameter; at every point the pipeline runs on
//! `repeats` generated datasets and the best membership F1 among the returned
//! subgroups is recorded.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::learner::{self, DiscoverConfig};
use crate::seed::{self, Stream};
use crate::synth::{self, SynthConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Number of features `p`.
    Features,
    /// Fraction of censored subjects.
    Censoring,
    /// Expected fraction of subjects in the subgroup.
    SubgroupFraction,
    /// Number of subjects `n`.
    Samples,
    /// Subgroup scale over population scale.
    HazardRatio,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(Self::Features),
            "censoring" => Ok(Self::Censoring),
            "subgroup-fraction" | "fraction" => Ok(Self::SubgroupFraction),
            "samples" => Ok(Self::Samples),
            "hazard-ratio" => Ok(Self::HazardRatio),
            other => Err(Error::Argument(format!("unknown sweep '{other}'"))),
        }
    }
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Self::Features => "features",
            Self::Censoring => "censoring",
            Self::SubgroupFraction => "subgroup-fraction",
            Self::Samples => "samples",
            Self::HazardRatio => "hazard-ratio",
        }
    }

    /// Generator configuration at sweep value `x`.
    pub fn apply(self, base: &SynthConfig, x: f64) -> Result<SynthConfig> {
        let as_count = |x: f64| -> Result<usize> {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::Argument(format!("{} sweep needs whole numbers, got {x}", self.name())))
            }
        };
        let mut cfg = base.clone();
        match self {
            Self::Features => {
                cfg.p = as_count(x)?;
                cfg.k = cfg.k.min(cfg.p);
            }
            Self::Censoring => cfg.ratio_cens = x,
            Self::SubgroupFraction => cfg.ratio_target = x,
            Self::Samples => cfg.n = as_count(x)?,
            Self::HazardRatio => {
                cfg.scale_sg = x * cfg.scale_nsg;
                cfg.require_separation = false;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub x: f64,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean (0 for a single repeat).
    pub std_error: f64,
    /// Mean wall-clock seconds per repeat.
    pub seconds: f64,
}

impl BenchPoint {
    fn new(x: f64, scores: Vec<f64>, seconds: f64) -> Self {
        let (mean, std_error) = mean_and_se(&scores);
        Self {
            x,
            scores,
            mean,
            std_error,
            seconds,
        }
    }
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Generator and forest seeds for repeat `r` of a benchmark seeded with `seed`.
pub fn repeat_seeds(seed: u64, r: usize) -> (u64, u64) {
    (
        seed::derive(seed, Stream::Synth, r as u64),
        seed::derive(seed, Stream::Forest, r as u64),
    )
}

/// Best F1 among the subgroups discovered on one generated dataset.
pub fn recovery_score(synth_config: &SynthConfig, discover: &DiscoverConfig) -> Result<f64> {
    let (data, truth) = synth::make_survival_data(synth_config)?;
    let found = learner::discover(&data, discover)?;
    found
        .subgroups
        .iter()
        .map(|s| synth::recovery_f1(&s.mask, &truth.mask))
        .try_fold(0.0f64, |best, f1| Ok(best.max(f1?)))
}

/// Score `repeats` datasets at sweep value `x`.
pub fn run_point(
    sweep: Sweep,
    x: f64,
    base: &SynthConfig,
    discover: &DiscoverConfig,
    repeats: usize,
    seed: u64,
) -> Result<BenchPoint> {
    let cfg = sweep.apply(base, x)?;
    let start = Instant::now();
    let mut scores = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let (synth_seed, forest_seed) = repeat_seeds(seed, r);
        let synth_cfg = SynthConfig { seed: synth_seed, ..cfg.clone() };
        let mut disc = discover.clone();
        disc.forest.seed = forest_seed;
        let score = recovery_score(&synth_cfg, &disc)?;
        log::debug!("{} = {x}, repeat {r}: F1 {score:.3}", sweep.name());
        scores.push(score);
    }
    let seconds = start.elapsed().as_secs_f64() / repeats.max(1) as f64;
    Ok(BenchPoint::new(x, scores, seconds))
}

pub fn run_sweep(
    sweep: Sweep,
    points: &[f64],
    base: &SynthConfig,
    discover: &DiscoverConfig,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchPoint>> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be positive".into()));
    }
    points
        .iter()
        .map(|&x| run_point(sweep, x, base, discover, repeats, seed))
        .collect()
}

/// Write `x, y, y_c0, y_c1` rows: mean F1 and mean ± one standard error.
pub fn write_tsv<W: Write>(points: &[BenchPoint], mut w: W) -> Result<()> {
    writeln!(w, "x\ty\ty_c0\ty_c1")?;
    for p in points {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            p.x,
            p.mean,
            p.mean - p.std_error,
            p.mean + p.std_error
        )?;
    }
    Ok(())
}

/// Write `x, seconds` rows with the mean runtime per repeat.
pub fn write_runtime_tsv<W: Write>(points: &[BenchPoint], mut w: W) -> Result<()> {
    writeln!(w, "x\tseconds")?;
    for p in points {
        writeln!(w, "{}\t{}", p.x, p.seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing_and_application() {
        assert_eq!("censoring".parse::<Sweep>().unwrap(), Sweep::Censoring);
        assert!("nope".parse::<Sweep>().is_err());
        let base = SynthConfig::default();
        assert_eq!(Sweep::Features.apply(&base, 50.0).unwrap().p, 50);
        assert!(Sweep::Features.apply(&base, 2.5).is_err());
        let hr = Sweep::HazardRatio.apply(&base, 1.0).unwrap();
        assert_eq!(hr.scale_sg, hr.scale_nsg);
        assert!(!hr.require_separation);
        assert!(Sweep::Censoring.apply(&base, 1.0).is_err());
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_se(&[0.4]), (0.4, 0.0));
    }

    #[test]
    fn tsv_layout() {
        let pts = vec![BenchPoint::new(0.3, vec![0.5, 0.7], 1.0)];
        let mut out = Vec::new();
        write_tsv(&pts, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x\ty\ty_c0\ty_c1"));
        let row: Vec<f64> = lines.next().unwrap().split('\t').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 0.3);
        assert!((row[1] - 0.6).abs() < 1e-12);
        assert!((row[2] - 0.5).abs() < 1e-12 && (row[3] - 0.7).abs() < 1e-12);
    }
}
