use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shda_core::analysis::{read_correlation_report, read_summary};

fn shda(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shda"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const TARGET: &str = r#"
[target.data]
kind = "clusters"
num_classes = 3
dim = 6
per_class = 13
"#;

const HYPER: &str = r#"
[ktf]
d_sub = 8
iterations = 30

[nnt]
d_sub = 8
iterations = 20
"#;

fn task_config(trainer: &str, trials: usize) -> String {
    format!(
        r#"
id = "small"
trainer = "{trainer}"
trials = {trials}
seed = 2
baseline = true

[source.data]
kind = "gmm"
num_classes = 3
dim = 8
per_class = 10
delta = 1.0
covariance = "identity"
{TARGET}{HYPER}"#
    )
}

#[test]
fn synth_writes_domain_sidecar_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth",
        "--gmm",
        "C=6",
        "d=30",
        "n=10",
        "delta=0.2",
        "cov=scaled",
        "--seed",
        "7",
        "--out",
        "a",
    ];
    let first = shda(&args, dir.path());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("avg_mean_norm=")));
    assert!(dir.path().join("a/synth.domain.meta.json").is_file());

    let mut again = args;
    again[args.len() - 1] = "b";
    assert_eq!(code(&shda(&again, dir.path())), 0);
    let a = fs::read(dir.path().join("a/synth.domain")).unwrap();
    let b = fs::read(dir.path().join("b/synth.domain")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).starts_with("#domain d=30 C=6 n=60\n"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&shda(&["synth", "--seed", "7"], dir.path())), 2);
    assert_eq!(code(&shda(&["synth", "--gmm", "C=3", "d=4"], dir.path())), 2);
    assert_eq!(
        code(&shda(
            &["synth", "--gmm", "C=3", "d=4", "n=2", "delta=1", "bogus=1"],
            dir.path()
        )),
        2
    );
    assert_eq!(code(&shda(&["frobnicate"], dir.path())), 2);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), task_config("bogus", 1)).unwrap();
    let out = shda(&["run", "bad.toml"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`trainer`"));

    fs::write(
        dir.path().join("dim.toml"),
        task_config("ktf", 1).replace("d_sub = 8", "d_sub = 9"),
    )
    .unwrap();
    let out = shda(&["run", "dim.toml"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("source.data.dim"));
}

#[test]
fn malformed_domain_file_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("broken.domain"),
        "#domain d=2 C=2 n=2\n0,1.0,2.0\n1,oops,3.0\n",
    )
    .unwrap();
    let cfg = task_config("nnt", 1).replace(
        "kind = \"clusters\"\nnum_classes = 3\ndim = 6\nper_class = 13",
        "kind = \"file\"\npath = \"broken.domain\"",
    );
    fs::write(dir.path().join("file.toml"), cfg).unwrap();
    let out = shda(&["run", "file.toml"], dir.path());
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.domain:3"));
}

#[test]
fn diverging_training_exits_with_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = task_config("nnt", 1).replace("[nnt]\n", "[nnt]\nlearning_rate = 1e300\n");
    fs::write(dir.path().join("wild.toml"), cfg).unwrap();
    let out = shda(&["run", "wild.toml"], dir.path());
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn single_trial_reports_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.toml"), task_config("ktf", 1)).unwrap();
    assert_eq!(code(&shda(&["run", "one.toml", "--out", "r"], dir.path())), 0);
    let rows = read_summary(&dir.path().join("r/summary.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.trials == 1 && r.std_accuracy == 0.0));
    assert!(dir.path().join("r/small/records/trial0.csv").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["tasks"][0]["status"], "ok");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.toml"), task_config("nnt", 2)).unwrap();
    for (out, seed) in [("a", "2"), ("b", "2"), ("c", "3")] {
        assert_eq!(
            code(&shda(&["run", "one.toml", "--seed", seed, "--out", out], dir.path())),
            0
        );
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("small/trials.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn injection_suite_writes_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "seed = 4\ntrials = 1\n{TARGET}{HYPER}\n[suite]\nkind = \"noise_injection\"\n\n[suite.source.data]\nkind = \"gmm\"\nnum_classes = 3\ndim = 8\nper_class = 10\ndelta = 1.0\n"
    );
    fs::write(dir.path().join("inj.toml"), cfg).unwrap();
    let out = shda(&["suite", "inj.toml", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_summary(&dir.path().join("r/summary.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[5].task_id, "noise_injection_alpha1");
}

#[test]
fn analyze_reproduces_correlation_and_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "seed = 5\ntrials = 1\n{TARGET}{HYPER}\n[suite]\nkind = \"correlation\"\ntasks = 4\ndelta_points = 4\ncount_range = [10, 20]\n"
    );
    fs::write(dir.path().join("corr.toml"), cfg).unwrap();
    let out = shda(
        &["suite", "corr.toml", "--checkpoints", "1,30", "--out", "r"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (tuples, footer) = read_correlation_report(&dir.path().join("r/correlation.csv")).unwrap();
    assert_eq!(tuples.len(), 3);
    assert!(footer.is_some());

    let out = shda(&["analyze", "r", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let original = fs::read(dir.path().join("r/correlation.csv")).unwrap();
    let recomputed = fs::read(dir.path().join("r/analysis/correlation.csv")).unwrap();
    assert_eq!(original, recomputed);
    assert_eq!(
        fs::read(dir.path().join("r/summary.csv")).unwrap(),
        fs::read(dir.path().join("r/analysis/summary.csv")).unwrap()
    );
    for iter in [1, 30] {
        let name = format!("correlation_000/alignment/trial0_iter{iter}.csv");
        let a = fs::read(dir.path().join("r").join(&name)).unwrap();
        let b = fs::read(dir.path().join("r/analysis").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(String::from_utf8_lossy(&a).lines().count(), 3);
    }
}

#[test]
fn analyze_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = shda(&["analyze", "empty"], dir.path());
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no task outputs"));
    assert_ne!(code(&shda(&["analyze", "missing"], dir.path())), 0);
}

#[test]
fn failed_task_does_not_abort_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "seed = 4\ntrials = 1\n{TARGET}{HYPER}\n[suite]\nkind = \"category_permutation\"\norders = {{ explicit = [[0, 1, 2], [1, 0, 2]] }}\n\n[suite.source.data]\nkind = \"file\"\npath = \"src.domain\"\n"
    );
    fs::write(dir.path().join("perm.toml"), cfg).unwrap();
    let synth = shda(
        &[
            "synth", "--gmm", "C=3", "d=8", "n=10", "delta=1", "--out", ".", "--name", "src",
        ],
        dir.path(),
    );
    assert_eq!(code(&synth), 0);
    let out = shda(&["suite", "perm.toml", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_summary(&dir.path().join("r/summary.csv")).unwrap().len(), 2);

    // Corrupt the source after generation: every task now fails at load
    // time, and each failure is recorded.
    fs::write(dir.path().join("src.domain"), "#domain d=8 C=3 n=1\n0,1\n").unwrap();
    let out = shda(&["suite", "perm.toml", "--out", "bad"], dir.path());
    assert_eq!(code(&out), 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bad/manifest.json")).unwrap()).unwrap();
    let tasks = manifest["tasks"].as_array().unwrap();
    assert_eq!(tasks.len(), 2);
    assert!(tasks.iter().all(|t| t["status"] == "failed"));
    assert!(dir.path().join("bad/category_permutation_order2/error.txt").is_file());
}

#[test]
fn shipped_configs_are_valid() {
    use shda_core::suites::{SuiteConfig, TaskSpec};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let tasks = if text.contains("[suite]") {
            SuiteConfig::from_toml(&text).unwrap().generate().unwrap()
        } else {
            vec![TaskSpec::from_toml(&text).unwrap()]
        };
        for t in &tasks {
            t.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        seen += 1;
    }
    assert!(seen >= 6);
}
