use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{debug, info, warn};
use serde::Serialize;
use survgroup::bench::{self, Sweep};
use survgroup::dataset::SurvivalDataset;
use survgroup::learner::{self, DiscoverConfig, LearnerConfig, Progress};
use survgroup::pruner::{self, PruneConfig};
use survgroup::rsf::{self, ForestConfig};
use survgroup::softrule::{HardRule, NamedRule};
use survgroup::synth::{self, SynthConfig};
use survgroup::validator::{self, NullModel};

use crate::cache::Cache;
use crate::config::{RunConfig, FAST_NULL_TREES};
use crate::error::{CliError, CliResult};
use crate::output::{self, NullSummary, PruneChange, SubgroupRecord, SubgroupsFile};
use crate::{BenchArgs, DiscoverArgs, PruneArgs, SynthArgs, SynthCmdArgs, ValidateArgs};

pub const SIGNIFICANCE: f64 = 0.05;

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("threads must be positive"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    Ok(())
}

fn create_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, write: impl FnOnce(BufWriter<File>) -> survgroup::Result<()>) -> CliResult<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write(BufWriter::new(f)).map_err(|e| CliError::Runtime(anyhow::Error::from(e).context(path.display().to_string())))
}

fn load_data(input: &Path, time_col: &str, event_col: &str, one_hot: bool) -> CliResult<SurvivalDataset> {
    if !input.exists() {
        return Err(CliError::usage(format!("input file {} does not exist", input.display())));
    }
    let data = SurvivalDataset::load_csv(input, time_col, event_col, one_hot)?;
    info!("loaded {} subjects with {} features from {}", data.n(), data.p(), input.display());
    Ok(data)
}

/// Null model over `runs` permutations, through the cache.
fn null_model(
    cache: &Cache,
    data: &SurvivalDataset,
    forest: &ForestConfig,
    learner: &LearnerConfig,
    runs: usize,
    m: usize,
) -> CliResult<NullModel> {
    let (null, _) = cache.null_model(data, forest, learner, runs, m, || {
        info!("building the null model from {runs} permutations");
        Ok(validator::build_dfd(data, forest, learner, runs, m)?)
    })?;
    Ok(null)
}

fn attach_p_values(records: &mut [SubgroupRecord], null: &NullModel, alpha: f64) -> CliResult<()> {
    let p: Vec<f64> = records
        .iter()
        .map(|r| validator::p_value(r.exceptionality, null))
        .collect::<survgroup::Result<_>>()?;
    let adjusted = validator::bonferroni(&p, alpha)?;
    for (r, (p, (adj, sig))) in records.iter_mut().zip(p.into_iter().zip(adjusted)) {
        r.p_value = Some(p);
        r.adjusted_p_value = Some(adj);
        r.significant = Some(sig);
    }
    Ok(())
}

pub fn discover(args: DiscoverArgs, verbose: u8) -> CliResult<()> {
    let mut settings = args.model.settings()?;
    args.data.apply(&mut settings);
    settings.set_flag("validate", args.validate);
    settings.set_opt("null-runs", args.null_runs);
    settings.set_flag("fast-null", args.fast_null);
    settings.set_flag("prune", args.prune);
    settings.set_opt("prune-threshold", args.prune_threshold);
    settings.set_opt("out-dir", args.out_dir.as_ref().map(|p| p.display()));
    let cfg = RunConfig::from_settings(&settings)?;
    let (input, time_col, event_col) = cfg.require_data()?;
    init_threads(cfg.threads)?;
    create_out_dir(&cfg.out_dir)?;

    let data = load_data(input, time_col, event_col, cfg.one_hot)?;
    let cache = Cache::from_env();
    let (matrix, _) = cache.forest_matrix(&data, &cfg.forest)?;
    let hook = |p: &Progress| {
        if p.epoch % 100 == 0 || p.epoch == 1 {
            debug!(
                "subgroup {} epoch {}: loss {:.5}, soft size {:.4}, tau {}",
                p.subgroup + 1,
                p.epoch,
                p.loss,
                p.size,
                p.temperature
            );
        }
    };
    let progress = (verbose >= 2).then_some(&hook as &(dyn Fn(&Progress) + Sync));
    let found = learner::discover_with_matrix(&data, &matrix, &cfg.learner, progress)?;

    let names = data.feature_names();
    let mut results = found.subgroups;
    let mut records = Vec::with_capacity(results.len());
    for result in results.iter_mut() {
        let mut record = SubgroupRecord::new(result, names, data.n());
        if cfg.apply_prune {
            let outcome = pruner::prune_rule_detailed(&data, &result.soft_params, &cfg.prune)?;
            let removed = shown_removals(&outcome.removed, &result.rule, names);
            if !removed.is_empty() {
                let pruned = learner::evaluate_subgroup(
                    &data,
                    &found.exceptionality,
                    outcome.params,
                    cfg.prune.activity_threshold,
                )?;
                let before = std::mem::replace(result, pruned);
                record = SubgroupRecord::new(result, names, data.n());
                record.pruning = Some(PruneChange {
                    removed,
                    jaccard: outcome.jaccard,
                    rule_before: before.rule.render(names),
                    size_before: before.size,
                    exceptionality_before: before.exceptionality,
                });
            }
        }
        records.push(record);
    }

    let mut null_summary = None;
    if cfg.validate {
        let null = null_model(
            &cache,
            &data,
            &cfg.null_forest(),
            &cfg.learner,
            cfg.null_runs,
            cfg.learner.n_subgroups,
        )?;
        attach_p_values(&mut records, &null, SIGNIFICANCE)?;
        null_summary = Some(NullSummary::from(&null));
    }

    let file = SubgroupsFile {
        data_hash: data.content_hash(),
        n: data.n(),
        events: data.events().iter().filter(|&&e| e).count(),
        feature_names: names.to_vec(),
        input: Some(input.display().to_string()),
        time_col: time_col.to_owned(),
        event_col: event_col.to_owned(),
        one_hot: cfg.one_hot,
        seed: cfg.seed,
        forest: cfg.forest.clone(),
        learner: cfg.learner.clone(),
        null: null_summary,
        subgroups: records,
    };
    let out = &cfg.out_dir;
    file.write(&out.join("subgroups.json"))?;
    write_file(&out.join("km_population.tsv"), |w| found.population_km.write_tsv(w))?;
    for (i, result) in results.iter().enumerate() {
        let path = out.join(format!("km_subgroup_{}.tsv", i + 1));
        match &result.km_curve {
            Some(curve) => write_file(&path, |w| curve.write_tsv(w))?,
            None => {
                warn!("subgroup {} has no events among its members; no curve written", i + 1);
                if path.exists() {
                    std::fs::remove_file(&path)?;
                }
            }
        }
    }
    let report = output::report(&file);
    std::fs::write(out.join("report.txt"), &report)?;
    std::fs::write(out.join("run.conf"), cfg.to_settings().to_string())?;
    print!("{report}");
    Ok(())
}

/// Dataset for a rules file, honouring overrides from the command line.
fn data_for_rules(file: &SubgroupsFile, data: &crate::DataArgs, rules: &Path) -> CliResult<SurvivalDataset> {
    let input = match (&data.input, &file.input) {
        (Some(p), _) => p.clone(),
        (None, Some(recorded)) => {
            let p = PathBuf::from(recorded);
            // relative locations are tried as recorded, then next to the rules file
            if p.is_relative() && !p.exists() {
                rules.parent().map_or(p.clone(), |dir| dir.join(&p))
            } else {
                p
            }
        }
        (None, None) => return Err(CliError::usage("missing --input")),
    };
    let time_col = data.time_col.as_deref().unwrap_or(&file.time_col);
    let event_col = data.event_col.as_deref().unwrap_or(&file.event_col);
    let loaded = load_data(&input, time_col, event_col, data.one_hot || file.one_hot)?;
    file.check_data(&loaded)?;
    Ok(loaded)
}

pub fn prune(args: PruneArgs) -> CliResult<()> {
    init_threads(args.threads)?;
    let config = PruneConfig {
        threshold: args.threshold.unwrap_or(PruneConfig::default().threshold),
        activity_threshold: PruneConfig::default().activity_threshold,
    };
    config.validate()?;
    let mut file = SubgroupsFile::read(&args.rules)?;
    let data = data_for_rules(&file, &args.data, &args.rules)?;
    create_out_dir(&args.out_dir)?;
    let cache = Cache::from_env();
    let (matrix, _) = cache.forest_matrix(&data, &file.forest)?;
    let population = rsf::population_curve(&matrix)?;
    let exc = learner::exceptionality_vector(&matrix, &population)?;
    let names = data.feature_names();

    for (i, record) in file.subgroups.iter_mut().enumerate() {
        let before = learner::evaluate_subgroup(&data, &exc, record.soft_params.clone(), config.activity_threshold)?;
        let outcome = pruner::prune_rule_detailed(&data, &record.soft_params, &config)?;
        let after = learner::evaluate_subgroup(&data, &exc, outcome.params, config.activity_threshold)?;
        println!("Subgroup {}", i + 1);
        println!("  before: {}", before.rule.render(names));
        println!("  after:  {}", after.rule.render(names));
        let removed = shown_removals(&outcome.removed, &before.rule, names);
        if removed.is_empty() {
            println!("  removed: none");
        } else {
            println!("  removed: {} (Jaccard {:.4})", removed.join(", "), outcome.jaccard);
        }
        println!("  Subgroup size: {}→{}", before.size, after.size);
        println!("  Exceptionality: {:.4}→{:.4}", before.exceptionality, after.exceptionality);
        let mut updated = SubgroupRecord::new(&after, names, data.n());
        updated.pruning = Some(PruneChange {
            removed,
            jaccard: outcome.jaccard,
            rule_before: before.rule.render(names),
            size_before: before.size,
            exceptionality_before: before.exceptionality,
        });
        *record = updated;
    }
    // p-values belonged to the unpruned rules
    file.null = None;
    file.write(&args.out_dir.join("pruned.json"))?;
    Ok(())
}

pub fn validate(args: ValidateArgs) -> CliResult<()> {
    init_threads(args.threads)?;
    if args.null_runs == 0 {
        return Err(CliError::usage("null-runs must be positive"));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::usage("alpha must lie in (0, 1)"));
    }
    let mut file = SubgroupsFile::read(&args.rules)?;
    if file.subgroups.is_empty() {
        return Err(CliError::usage("the rules file lists no subgroups"));
    }
    let data = data_for_rules(&file, &args.data, &args.rules)?;
    create_out_dir(&args.out_dir)?;
    let mut forest = file.forest.clone();
    if args.fast_null {
        forest.n_trees = forest.n_trees.min(FAST_NULL_TREES);
    }
    let cache = Cache::from_env();
    let m = file.subgroups.len();
    let null = null_model(&cache, &data, &forest, &file.learner, args.null_runs, m)?;
    attach_p_values(&mut file.subgroups, &null, args.alpha)?;
    file.null = Some(NullSummary::from(&null));
    println!("null model: mu {:.4}, eta {:.4} over {} permutations", null.mu, null.eta, null.runs);
    for (i, sg) in file.subgroups.iter().enumerate() {
        println!(
            "Subgroup {}: exceptionality {:.4}, p {:.3e}, adjusted {:.3e}, {}  [{}]",
            i + 1,
            sg.exceptionality,
            sg.p_value.unwrap_or(f64::NAN),
            sg.adjusted_p_value.unwrap_or(f64::NAN),
            if sg.significant == Some(true) { "significant" } else { "not significant" },
            sg.rule_text
        );
    }
    file.write(&args.out_dir.join("validated.json"))?;
    Ok(())
}

fn synth_config(args: &SynthArgs, seed: u64) -> CliResult<SynthConfig> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n: args.n.unwrap_or(d.n),
        p: args.p.unwrap_or(d.p),
        k: args.k.unwrap_or(d.k),
        scale_nsg: args.scale_nsg.unwrap_or(d.scale_nsg),
        shape_nsg: args.shape_nsg.unwrap_or(d.shape_nsg),
        scale_sg: args.scale_sg.unwrap_or(d.scale_sg),
        shape_sg: args.shape_sg.unwrap_or(d.shape_sg),
        ratio_target: args.ratio_target.unwrap_or(d.ratio_target),
        ratio_cens: args.ratio_cens.unwrap_or(d.ratio_cens),
        require_separation: true,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TruthFile {
    rule: NamedRule,
    rule_text: String,
    /// 0-based row indices of subgroup members.
    members: Vec<usize>,
    psi: f64,
    config: SynthConfig,
}

pub fn synth(args: SynthCmdArgs) -> CliResult<()> {
    let cfg = synth_config(&args.synth, args.seed)?;
    create_out_dir(&args.out_dir)?;
    let (data, truth) = synth::make_survival_data(&cfg)?;
    write_file(&args.out_dir.join("data.csv"), |w| data.write_csv(w, "time", "event"))?;
    let names = data.feature_names();
    let file = TruthFile {
        rule: truth.rule.to_named(names),
        rule_text: truth.rule.render(names),
        members: truth.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect(),
        psi: truth.psi,
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(args.out_dir.join("truth.json"), text)?;
    println!(
        "{} subjects, {} in the planted subgroup: {}",
        data.n(),
        file.members.len(),
        file.rule_text
    );
    Ok(())
}

pub fn bench(args: BenchArgs) -> CliResult<()> {
    let sweep: Sweep = args.sweep.parse()?;
    if args.repeats == 0 {
        return Err(CliError::usage("repeats must be positive"));
    }
    let mut settings = args.model.settings()?;
    settings.set_opt("out-dir", args.out_dir.as_ref().map(|p| p.display()));
    let cfg = RunConfig::from_settings(&settings)?;
    init_threads(cfg.threads)?;
    let base = synth_config(&args.synth, 0)?;
    for &x in &args.points {
        sweep.apply(&base, x)?;
    }
    create_out_dir(&cfg.out_dir)?;
    let discover = DiscoverConfig {
        forest: cfg.forest.clone(),
        learner: cfg.learner.clone(),
    };
    let mut points = Vec::with_capacity(args.points.len());
    println!("x\tF1\tSE\tseconds");
    for &x in &args.points {
        let point = bench::run_point(sweep, x, &base, &discover, args.repeats, cfg.seed)?;
        println!("{}\t{:.4}\t{:.4}\t{:.2}", point.x, point.mean, point.std_error, point.seconds);
        points.push(point);
    }
    let name = sweep.name();
    write_file(&cfg.out_dir.join(format!("bench_{name}.tsv")), |w| bench::write_tsv(&points, w))?;
    write_file(&cfg.out_dir.join(format!("bench_{name}_runtime.tsv")), |w| {
        bench::write_runtime_tsv(&points, w)
    })?;
    Ok(())
}

/// Names of removed conditions that were part of the rendered rule. Active
/// conditions spanning the whole data range are not shown, so dropping them
/// is not reported either.
fn shown_removals(removed: &[usize], before: &HardRule, names: &[String]) -> Vec<String> {
    let visible = before.features();
    removed.iter().filter(|j| visible.contains(j)).map(|&j| names[j].clone()).collect()
}
