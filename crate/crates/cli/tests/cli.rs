use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use survgroup::dataset::SurvivalDataset;
use survgroup::softrule::{self, NamedRule, SoftRuleParams};
use tempfile::TempDir;

fn survgroup(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survgroup"))
        .args(args)
        .env("SURVGROUP_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        let out = f.run(&["synth", "--n", "600", "--p", "4", "--k", "2", "--seed", "3", "--out-dir", &f.path("gen")]);
        ok(&out);
        f
    }

    fn path(&self, rel: &str) -> String {
        self.dir.path().join(rel).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        survgroup(&self.dir.path().join("cache"), args)
    }

    fn discover(&self, out_dir: &str, extra: &[&str]) -> Output {
        let data = self.path("gen/data.csv");
        let out = self.path(out_dir);
        let mut args = vec![
            "discover", "--input", &data, "--time-col", "time", "--event-col", "event", "--trees", "10",
            "--epochs", "120", "--seed", "7", "--out-dir", &out,
        ];
        args.extend_from_slice(extra);
        self.run(&args)
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }
}

#[test]
fn synth_writes_data_and_truth() {
    let f = Fixture::new();
    let data = SurvivalDataset::load_csv(f.path("gen/data.csv"), "time", "event", false).unwrap();
    assert_eq!((data.n(), data.p()), (600, 4));
    let truth = f.json("gen/truth.json");
    let rule: NamedRule = serde_json::from_value(truth["rule"].clone()).unwrap();
    let hard = rule.resolve(data.feature_names()).unwrap();
    let mask = softrule::membership(&hard, data.features()).unwrap();
    let members: Vec<usize> = serde_json::from_value(truth["members"].clone()).unwrap();
    let from_mask: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    assert_eq!(members, from_mask);
}

#[test]
fn discover_two_subgroups_writes_rules_and_curves() {
    let f = Fixture::new();
    ok(&f.discover("out", &["--subgroups", "2"]));
    let json = f.json("out/subgroups.json");
    assert_eq!(json["subgroups"].as_array().unwrap().len(), 2);
    for name in ["km_population.tsv", "km_subgroup_1.tsv", "km_subgroup_2.tsv", "report.txt", "run.conf"] {
        assert!(Path::new(&f.path(&format!("out/{name}"))).exists(), "{name} missing");
    }
    let km = std::fs::read_to_string(f.path("out/km_population.tsv")).unwrap();
    assert_eq!(km.lines().next(), Some("x\ty\ty_c0\ty_c1"));
    assert!(json["subgroups"][0].get("p_value").is_none());
}

#[test]
fn written_rules_reevaluate_to_the_same_members() {
    let f = Fixture::new();
    ok(&f.discover("out", &["--subgroups", "2"]));
    let json = f.json("out/subgroups.json");
    let data = SurvivalDataset::load_csv(f.path("gen/data.csv"), "time", "event", false).unwrap();
    for sg in json["subgroups"].as_array().unwrap() {
        let rule: NamedRule = serde_json::from_value(sg["rule"].clone()).unwrap();
        let mask = softrule::membership(&rule.resolve(data.feature_names()).unwrap(), data.features()).unwrap();
        let params: SoftRuleParams = serde_json::from_value(sg["soft_params"].clone()).unwrap();
        let hardened = softrule::harden(&params, &data, softrule::DEFAULT_ACTIVITY_THRESHOLD);
        assert_eq!(mask, softrule::membership(&hardened, data.features()).unwrap());
        assert_eq!(mask.iter().filter(|&&m| m).count() as u64, sg["size"].as_u64().unwrap());
    }
}

#[test]
fn cached_rerun_is_byte_identical() {
    let f = Fixture::new();
    ok(&f.discover("a", &[]));
    let entries = std::fs::read_dir(f.path("cache")).unwrap().count();
    assert_eq!(entries, 1);
    ok(&f.discover("b", &[]));
    let a = std::fs::read(f.path("a/subgroups.json")).unwrap();
    let b = std::fs::read(f.path("b/subgroups.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read_dir(f.path("cache")).unwrap().count(), 1);
}

#[test]
fn missing_time_column_is_a_usage_error() {
    let f = Fixture::new();
    let data = f.path("gen/data.csv");
    let out = f.run(&["discover", "--input", &data, "--event-col", "event"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--time-col"));
    let out = f.run(&["discover", "--input", &data, "--time-col", "nope", "--event-col", "event"]);
    assert_eq!(out.status.code(), Some(1));
    let out = f.run(&["discover", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = f.discover("out", &["--gamma", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_with_two() {
    let f = Fixture::new();
    let blocker = f.path("blocker");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = f.discover("blocker/out", &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_flag_adds_p_values() {
    let f = Fixture::new();
    ok(&f.discover("out", &["--validate", "--null-runs", "4", "--fast-null"]));
    let json = f.json("out/subgroups.json");
    let sg = &json["subgroups"][0];
    let p = sg["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(sg["significant"].is_boolean());
    assert_eq!(json["null"]["runs"].as_u64(), Some(4));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = Fixture::new();
    let conf = f.path("run.conf");
    std::fs::write(&conf, "subgroups = 2\ngamma = 0.2\n").unwrap();
    ok(&f.discover("out", &["--config", &conf, "--gamma", "0.05"]));
    let json = f.json("out/subgroups.json");
    assert_eq!(json["subgroups"].as_array().unwrap().len(), 2);
    assert_eq!(json["learner"]["gamma"].as_f64(), Some(0.05));
    std::fs::write(&conf, "colour = blue\n").unwrap();
    assert_eq!(f.discover("out2", &["--config", &conf]).status.code(), Some(1));
}

#[test]
fn prune_and_validate_commands_read_rules() {
    let f = Fixture::new();
    ok(&f.discover("out", &[]));
    let rules = f.path("out/subgroups.json");
    let out = f.run(&["prune", "--rules", &rules, "--threshold", "0.9", "--out-dir", &f.path("out")]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Subgroup size:") && text.contains('→'), "{text}");
    let pruned = f.json("out/pruned.json");
    assert!(pruned["subgroups"][0]["pruning"]["jaccard"].as_f64().unwrap() >= 0.9);

    let out = f.run(&["validate", "--rules", &rules, "--null-runs", "3", "--fast-null", "--out-dir", &f.path("out")]);
    ok(&out);
    let validated = f.json("out/validated.json");
    assert!(validated["subgroups"][0]["adjusted_p_value"].is_number());

    // rules must match the data they are applied to
    let other = f.path("other");
    ok(&f.run(&["synth", "--n", "300", "--p", "4", "--seed", "9", "--out-dir", &other]));
    let other_data = format!("{other}/data.csv");
    let out = f.run(&["prune", "--rules", &rules, "--input", &other_data, "--out-dir", &other]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_writes_one_row_per_point() {
    let f = Fixture::new();
    let out_dir = f.path("bench");
    let out = f.run(&[
        "bench", "--sweep", "censoring", "--points", "0,0.3", "--repeats", "2", "--n", "400", "--p", "3",
        "--trees", "8", "--epochs", "80", "--out-dir", &out_dir,
    ]);
    ok(&out);
    let tsv = std::fs::read_to_string(format!("{out_dir}/bench_censoring.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "x\ty\ty_c0\ty_c1");
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let v: Vec<f64> = line.split('\t').map(|c| c.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
        assert!((0.0..=1.0).contains(&v[1]));
    }
    assert!(Path::new(&format!("{out_dir}/bench_censoring_runtime.tsv")).exists());
    let bad = f.run(&["bench", "--sweep", "nonsense", "--points", "1"]);
    assert_eq!(bad.status.code(), Some(1));
}
