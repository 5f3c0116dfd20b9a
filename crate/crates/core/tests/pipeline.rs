use std::path::PathBuf;

use survgroup::dataset::SurvivalDataset;
use survgroup::learner::{self, DiscoverConfig, LearnerConfig};
use survgroup::rsf::ForestConfig;
use survgroup::softrule;
use survgroup::synth::{self, SynthConfig};
use survgroup::validator;

fn gbsg2() -> SurvivalDataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/gbsg2.csv");
    SurvivalDataset::load_csv(path, "time", "cens", true).unwrap()
}

fn small_config(seed: u64) -> DiscoverConfig {
    DiscoverConfig {
        forest: ForestConfig { n_trees: 20, seed, ..Default::default() },
        learner: LearnerConfig { epochs: 200, ..Default::default() },
    }
}

#[test]
fn gbsg2_loads_with_indicator_columns() {
    let d = gbsg2();
    assert_eq!(d.n(), 686);
    let names = d.feature_names();
    for expected in ["horTh=no", "horTh=yes", "age", "menostat=Post", "tgrade=III", "pnodes"] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
    }
    assert_eq!(d.events().iter().filter(|&&e| e).count(), 299);
}

#[test]
fn planted_subgroup_events_come_five_times_earlier() {
    // pooled over seeds the linear covariate shift averages out
    let (mut sg_sum, mut sg_n, mut nsg_sum, mut nsg_n) = (0.0, 0usize, 0.0, 0usize);
    for seed in 0..100 {
        let (_, truth) = synth::make_survival_data(&SynthConfig { seed, ..Default::default() }).unwrap();
        for (y, &m) in truth.latent_times.iter().zip(&truth.mask) {
            if m {
                sg_sum += y;
                sg_n += 1;
            } else {
                nsg_sum += y;
                nsg_n += 1;
            }
        }
    }
    let ratio = (nsg_sum / nsg_n as f64) / (sg_sum / sg_n as f64);
    assert!((ratio / 5.0 - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn small_planted_subgroup_is_recovered() {
    let cfg = SynthConfig { n: 2000, p: 4, seed: 11, ..Default::default() };
    let (data, truth) = synth::make_survival_data(&cfg).unwrap();
    let found = learner::discover(&data, &small_config(3)).unwrap();
    let sg = &found.subgroups[0];
    let f1 = synth::recovery_f1(&sg.mask, &truth.mask).unwrap();
    assert!(f1 > 0.6, "F1 {f1} for {}", sg.rule.render(data.feature_names()));
    assert!(sg.logrank.unwrap() > 3.84);
    let mut features = sg.rule.features();
    features.sort_unstable();
    assert!(truth.features.iter().all(|f| features.contains(f)));
}

#[test]
fn discovered_rules_survive_a_json_round_trip() {
    let d = gbsg2();
    let found = learner::discover(&d, &small_config(5)).unwrap();
    let sg = &found.subgroups[0];
    let json = serde_json::to_string(&sg.rule.to_named(d.feature_names())).unwrap();
    let back: softrule::NamedRule = serde_json::from_str(&json).unwrap();
    let mask = softrule::membership(&back.resolve(d.feature_names()).unwrap(), d.features()).unwrap();
    assert_eq!(mask, sg.mask);
}

#[test]
fn null_means_agree_across_seeds() {
    let cfg = SynthConfig { n: 300, p: 3, seed: 2, ..Default::default() };
    let (data, _) = synth::make_survival_data(&cfg).unwrap();
    let learner = LearnerConfig { epochs: 60, ..Default::default() };
    let runs = 50;
    let nulls: Vec<_> = [1u64, 2]
        .iter()
        .map(|&seed| {
            let forest = ForestConfig { n_trees: 10, seed, ..Default::default() };
            validator::build_dfd(&data, &forest, &learner, runs, 1).unwrap()
        })
        .collect();
    let eta = nulls[0].eta.max(nulls[1].eta);
    let bound = 3.0 * (eta / (runs as f64).sqrt()) * 2.0;
    assert!((nulls[0].mu - nulls[1].mu).abs() < bound, "{nulls:?}");
    assert_ne!(nulls[0].scores, nulls[1].scores);
}
