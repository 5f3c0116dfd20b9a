//! Run configuration: flat `key = value` files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use survgroup::learner::LearnerConfig;
use survgroup::pruner::PruneConfig;
use survgroup::rsf::ForestConfig;
use survgroup::seed::{self, Stream};

use crate::error::CliError;

/// Keys accepted in a config file. They match the long flag names.
pub const KEYS: &[&str] = &[
    "input",
    "time-col",
    "event-col",
    "one-hot",
    "gamma",
    "tau",
    "epochs",
    "lr",
    "subgroups",
    "trees",
    "max-depth",
    "min-split",
    "min-leaf",
    "max-per-tree",
    "seed",
    "threads",
    "validate",
    "null-runs",
    "fast-null",
    "prune",
    "prune-threshold",
    "out-dir",
];

/// Trees per forest in permutation runs under `--fast-null`.
pub const FAST_NULL_TREES: usize = 25;
pub const DEFAULT_NULL_RUNS: usize = 1000;

/// Raw settings keyed by flag name. Later writes win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::usage(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            if map.insert(key.to_owned(), value.trim().to_owned()).is_some() {
                return Err(CliError::usage(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key), "unknown key {key}");
        self.0.insert(key.to_owned(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Boolean switches can only be turned on from the command line.
    pub fn set_flag(&mut self, key: &str, on: bool) {
        if on {
            self.set(key, true);
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.0
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| CliError::usage(format!("invalid value `{raw}` for `{key}`")))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.0 {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Everything a pipeline run needs, after merging defaults, file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub time_col: Option<String>,
    pub event_col: Option<String>,
    pub one_hot: bool,
    /// Forest settings; `forest.seed` is derived from `seed`.
    pub forest: ForestConfig,
    pub learner: LearnerConfig,
    pub prune: PruneConfig,
    pub apply_prune: bool,
    pub validate: bool,
    pub null_runs: usize,
    pub fast_null: bool,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_settings(&Settings::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let forest_defaults = ForestConfig::default();
        let learner_defaults = LearnerConfig::default();
        let prune_defaults = PruneConfig::default();
        let seed = s.get_or("seed", 0u64)?;
        let max_depth = match s.get::<String>("max-depth")?.as_deref() {
            None | Some("auto") => None,
            Some(raw) => Some(
                raw.parse()
                    .map_err(|_| CliError::usage(format!("invalid value `{raw}` for `max-depth`")))?,
            ),
        };
        let cfg = Self {
            input: s.get("input")?,
            time_col: s.get("time-col")?,
            event_col: s.get("event-col")?,
            one_hot: s.get_or("one-hot", false)?,
            forest: ForestConfig {
                n_trees: s.get_or("trees", forest_defaults.n_trees)?,
                max_depth,
                max_subjects_per_tree: s.get_or("max-per-tree", forest_defaults.max_subjects_per_tree)?,
                min_split: s.get_or("min-split", forest_defaults.min_split)?,
                min_leaf: s.get_or("min-leaf", forest_defaults.min_leaf)?,
                seed: seed::derive(seed, Stream::Forest, 0),
            },
            learner: LearnerConfig {
                gamma: s.get_or("gamma", learner_defaults.gamma)?,
                initial_temperature: s.get_or("tau", learner_defaults.initial_temperature)?,
                epochs: s.get_or("epochs", learner_defaults.epochs)?,
                learning_rate: s.get_or("lr", learner_defaults.learning_rate)?,
                n_subgroups: s.get_or("subgroups", learner_defaults.n_subgroups)?,
                ..learner_defaults
            },
            prune: PruneConfig {
                threshold: s.get_or("prune-threshold", prune_defaults.threshold)?,
                ..prune_defaults
            },
            apply_prune: s.get_or("prune", false)?,
            validate: s.get_or("validate", false)?,
            null_runs: s.get_or("null-runs", DEFAULT_NULL_RUNS)?,
            fast_null: s.get_or("fast-null", false)?,
            seed,
            threads: s.get("threads")?,
            out_dir: s.get_or("out-dir", PathBuf::from("."))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.forest.validate()?;
        self.learner.validate()?;
        self.prune.validate()?;
        if self.null_runs == 0 {
            return Err(CliError::usage("null-runs must be positive"));
        }
        if self.threads == Some(0) {
            return Err(CliError::usage("threads must be positive"));
        }
        Ok(())
    }

    /// Settings that reproduce this configuration when read back.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::default();
        if let Some(p) = &self.input {
            s.set("input", p.display());
        }
        s.set_opt("time-col", self.time_col.as_ref());
        s.set_opt("event-col", self.event_col.as_ref());
        s.set("one-hot", self.one_hot);
        s.set("gamma", self.learner.gamma);
        s.set("tau", self.learner.initial_temperature);
        s.set("epochs", self.learner.epochs);
        s.set("lr", self.learner.learning_rate);
        s.set("subgroups", self.learner.n_subgroups);
        s.set("trees", self.forest.n_trees);
        s.set("max-depth", self.forest.max_depth.map_or("auto".to_owned(), |d| d.to_string()));
        s.set("min-split", self.forest.min_split);
        s.set("min-leaf", self.forest.min_leaf);
        s.set("max-per-tree", self.forest.max_subjects_per_tree);
        s.set("seed", self.seed);
        s.set_opt("threads", self.threads);
        s.set("validate", self.validate);
        s.set("null-runs", self.null_runs);
        s.set("fast-null", self.fast_null);
        s.set("prune", self.apply_prune);
        s.set("prune-threshold", self.prune.threshold);
        s.set("out-dir", self.out_dir.display());
        s
    }

    /// Forest settings used for each permutation run of the null model.
    pub fn null_forest(&self) -> ForestConfig {
        let mut f = self.forest.clone();
        if self.fast_null {
            f.n_trees = f.n_trees.min(FAST_NULL_TREES);
        }
        f
    }

    pub fn require_data(&self) -> Result<(&Path, &str, &str), CliError> {
        let input = self.input.as_deref().ok_or_else(|| CliError::usage("missing --input"))?;
        let time = self.time_col.as_deref().ok_or_else(|| CliError::usage("missing --time-col"))?;
        let event = self.event_col.as_deref().ok_or_else(|| CliError::usage("missing --event-col"))?;
        Ok((input, time, event))
    }
}
