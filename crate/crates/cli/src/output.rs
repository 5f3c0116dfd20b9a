//! Result files written by the commands.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use survgroup::dataset::SurvivalDataset;
use survgroup::learner::{LearnerConfig, SubgroupResult};
use survgroup::rsf::ForestConfig;
use survgroup::softrule::{NamedRule, SoftRuleParams};
use survgroup::validator::NullModel;

use crate::error::{CliError, CliResult};

/// Contents of `subgroups.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupsFile {
    pub data_hash: String,
    pub n: usize,
    pub events: usize,
    pub feature_names: Vec<String>,
    pub input: Option<String>,
    pub time_col: String,
    pub event_col: String,
    pub one_hot: bool,
    pub seed: u64,
    pub forest: ForestConfig,
    pub learner: LearnerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null: Option<NullSummary>,
    pub subgroups: Vec<SubgroupRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub mu: f64,
    pub eta: f64,
    pub runs: usize,
}

impl From<&NullModel> for NullSummary {
    fn from(n: &NullModel) -> Self {
        Self { mu: n.mu, eta: n.eta, runs: n.runs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRecord {
    pub rule: NamedRule,
    pub rule_text: String,
    pub size: usize,
    pub fraction: f64,
    /// Mean exceptionality of the members against the population curve.
    pub exceptionality: f64,
    pub logrank: Option<f64>,
    pub mean_shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruneChange>,
    pub soft_params: SoftRuleParams,
}

impl SubgroupRecord {
    pub fn new(result: &SubgroupResult, names: &[String], n: usize) -> Self {
        Self {
            rule: result.rule.to_named(names),
            rule_text: result.rule.render(names),
            size: result.size,
            fraction: result.size as f64 / n as f64,
            exceptionality: result.exceptionality,
            logrank: result.logrank,
            mean_shift: result.mean_shift,
            p_value: None,
            adjusted_p_value: None,
            significant: None,
            pruning: None,
            soft_params: result.soft_params.clone(),
        }
    }
}

/// What pruning changed about a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneChange {
    pub removed: Vec<String>,
    pub jaccard: f64,
    pub rule_before: String,
    pub size_before: usize,
    pub exceptionality_before: f64,
}

impl SubgroupsFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Check that `data` is the dataset these rules were learned on.
    pub fn check_data(&self, data: &SurvivalDataset) -> CliResult<()> {
        if data.content_hash() != self.data_hash {
            return Err(CliError::usage(
                "the dataset differs from the one the rules were learned on",
            ));
        }
        Ok(())
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.filter(|x| x.is_finite())
        .map_or_else(|| "n/a".to_owned(), |x| format!("{x:.digits$}"))
}

/// Human-readable summary of a discovery run.
pub fn report(file: &SubgroupsFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Survival subgroup discovery");
    let _ = writeln!(out);
    if let Some(input) = &file.input {
        let _ = writeln!(out, "input:       {input}");
    }
    let _ = writeln!(
        out,
        "subjects:    {} ({} events, {} censored)",
        file.n,
        file.events,
        file.n - file.events
    );
    let _ = writeln!(out, "features:    {}", file.feature_names.len());
    let _ = writeln!(
        out,
        "forest:      {} trees, min leaf {}, min split {}",
        file.forest.n_trees, file.forest.min_leaf, file.forest.min_split
    );
    let _ = writeln!(
        out,
        "learner:     gamma {}, tau {}, {} epochs, lr {}",
        file.learner.gamma, file.learner.initial_temperature, file.learner.epochs, file.learner.learning_rate
    );
    let _ = writeln!(out, "seed:        {}", file.seed);
    if let Some(null) = &file.null {
        let _ = writeln!(
            out,
            "null model:  mu {:.4}, eta {:.4} over {} permutations",
            null.mu, null.eta, null.runs
        );
    }
    for (i, sg) in file.subgroups.iter().enumerate() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Subgroup {}: {}", i + 1, sg.rule_text);
        let _ = writeln!(out, "  size            {} ({:.1}%)", sg.size, 100.0 * sg.fraction);
        let _ = writeln!(out, "  exceptionality  {:.4}", sg.exceptionality);
        let _ = writeln!(out, "  logrank         {}", opt(sg.logrank, 3));
        let _ = writeln!(out, "  RMST shift      {}", opt(sg.mean_shift, 4));
        if let Some(p) = sg.p_value {
            let _ = writeln!(
                out,
                "  p-value         {:.3e} (Bonferroni {:.3e}, {})",
                p,
                sg.adjusted_p_value.unwrap_or(p),
                if sg.significant == Some(true) { "significant" } else { "not significant" }
            );
        }
        if let Some(change) = &sg.pruning {
            let _ = writeln!(
                out,
                "  pruned          removed {} (Jaccard {:.4}) from {}",
                change.removed.join(", "),
                change.jaccard,
                change.rule_before
            );
            let _ = writeln!(out, "  Subgroup size: {}→{}", change.size_before, sg.size);
            let _ = writeln!(
                out,
                "  Exceptionality: {:.4}→{:.4}",
                change.exceptionality_before, sg.exceptionality
            );
        }
    }
    out
}
