use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_longforest"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated data for `n` subjects in `dir/sim`; returns the config path.
fn simulate(dir: &Path, n: usize) -> PathBuf {
    let sim = dir.join("sim");
    ok(&[
        "simulate",
        "--out-dir",
        s(&sim),
        "--n-subjects",
        &n.to_string(),
    ]);
    sim.join("config.toml")
}

/// Replaces the `[outcome]` section of a simulated config and writes a
/// matching outcome file.
fn with_outcome(config: &Path, name: &str, outcome_csv: &str, outcome_toml: &str) -> PathBuf {
    let dir = config.parent().unwrap();
    fs::write(dir.join(format!("{name}.csv")), outcome_csv).unwrap();
    let text = fs::read_to_string(config).unwrap();
    let head = text.split("[outcome]").next().unwrap();
    let tail = text.split("[forest]").nth(1).unwrap();
    let text = format!("{head}{outcome_toml}\n[forest]{tail}")
        .replace("outcome.csv", &format!("{name}.csv"));
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn survival_config(config: &Path, n: usize) -> PathBuf {
    let mut csv = String::from("id,time,event\n");
    for i in 1..=n {
        csv += &format!("{i},{},{}\n", 1 + (i * 7) % 10, i % 3);
    }
    with_outcome(
        config,
        "surv",
        &csv,
        "[outcome]\ntype = \"survival\"\ntime = \"time\"\nevent = \"event\"\n",
    )
}

fn factor_config(config: &Path, n: usize) -> PathBuf {
    let mut csv = String::from("id,y\n");
    for i in 1..=n {
        csv += &format!("{i},{}\n", if i % 3 == 0 { "yes" } else { "no" });
    }
    with_outcome(
        config,
        "cls",
        &csv,
        "[outcome]\ntype = \"factor\"\ncolumn = \"y\"\nlevels = [\"no\", \"yes\"]\n",
    )
}

fn train(config: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "train",
        "--config",
        s(config),
        "--out-dir",
        s(out),
        "--ntree",
        "4",
        "--mtry",
        "3",
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn simulate_writes_default_sized_data() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate", "--out-dir", s(dir.path())]);
    let fixed = read_csv(&dir.path().join("fixed.csv"));
    assert_eq!(fixed.len(), 201);
    let long = read_csv(&dir.path().join("longitudinal.csv"));
    assert_eq!(long[0].len(), 2 + 6);
    assert!(dir.path().join("config.toml").exists());

    let again = TempDir::new().unwrap();
    ok(&["simulate", "--out-dir", s(again.path())]);
    for f in [
        "fixed.csv",
        "longitudinal.csv",
        "outcome.csv",
        "config.toml",
    ] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap()
        );
    }
    let out = run(&["simulate", "--out-dir", s(dir.path()), "--n-subjects", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_is_reproducible_and_reports_trees() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path(), 30);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let summary = train(&cfg, &a, &["--vsplit"]);
    assert!(summary.contains(" ntree: 4"));
    assert!(summary.contains("Forest executed for continuous outcome"));
    train(&cfg, &b, &["--threads", "2"]);
    assert_eq!(
        fs::read(a.join("model.json")).unwrap(),
        fs::read(b.join("model.json")).unwrap()
    );
    let vs = read_csv(&a.join("vsplit").join("tree_1.csv"));
    assert_eq!(vs[0][0], "type");
    let meta = fs::read_to_string(a.join("meta.json")).unwrap();
    assert!(meta.contains("archive_sha256"));
}

#[test]
fn survival_needs_cause_with_several_causes() {
    let dir = TempDir::new().unwrap();
    let cfg = survival_config(&simulate(dir.path(), 30), 30);
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cause"));
}

#[test]
fn survival_prediction_respects_landmark() {
    let dir = TempDir::new().unwrap();
    let cfg = survival_config(&simulate(dir.path(), 30), 30);
    let m = dir.path().join("m");
    let summary = train(
        &cfg,
        &m,
        &["--cause", "1", "--minsplit", "3", "--nodesize", "2"],
    );
    assert!(summary.contains("survival (competing risk)"));
    assert!(summary.contains("Fine & Gray statistic test"));
    let model = m.join("model.json");
    let p = dir.path().join("p");
    ok(&[
        "predict",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&p),
        "--t0",
        "4",
    ]);
    let rows = read_csv(&p.join("predictions.csv"));
    assert_eq!(rows[0], ["id", "time", "cif"]);
    assert!(rows.len() > 1);
    for r in &rows[1..] {
        assert!(r[1].parse::<f64>().unwrap() > 4.0);
        let v: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let q = dir.path().join("q");
    let stdout = ok(&[
        "predict",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&q),
        "--t0",
        "4",
        "--at-risk",
    ]);
    // times are 1 + (7i mod 10): exactly those > 4 stay
    let kept = (1..=30).filter(|i| 1 + (i * 7) % 10 > 4).count();
    assert!(stdout.contains(&format!("predicted {kept} subject(s)")));
    let leaves = read_csv(&q.join("leaves.csv"));
    assert_eq!(leaves.len(), kept + 1);
    assert_eq!(leaves[0].len(), 1 + 4);
}

#[test]
fn factor_prediction_has_vote_shares() {
    let dir = TempDir::new().unwrap();
    let cfg = factor_config(&simulate(dir.path(), 30), 30);
    let m = dir.path().join("m");
    let summary = train(&cfg, &m, &[]);
    assert!(summary.contains("Missclassification"));
    let p = dir.path().join("p");
    ok(&[
        "predict",
        "--model",
        s(&m.join("model.json")),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&p),
    ]);
    let rows = read_csv(&p.join("predictions.csv"));
    assert_eq!(rows[0], ["id", "pred", "proba"]);
    for r in &rows[1..] {
        assert!(r[1] == "no" || r[1] == "yes");
        let share: f64 = r[2].parse().unwrap();
        assert!((0.5..=1.0).contains(&share));
    }
}

#[test]
fn single_leaf_model_predicts_a_constant() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path(), 20);
    let m = dir.path().join("m");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&m),
        "--nodesize",
        "20",
        "--ntree",
        "1",
    ]);
    let p = dir.path().join("p");
    ok(&[
        "predict",
        "--model",
        s(&m.join("model.json")),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&p),
    ]);
    let rows = read_csv(&p.join("predictions.csv"));
    assert_eq!(rows.len(), 21);
    assert!(rows[1..].iter().all(|r| r[1] == rows[1][1]));
}

#[test]
fn evaluate_and_importance_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path(), 30);
    let m = dir.path().join("m");
    train(&cfg, &m, &[]);
    let model = m.join("model.json");
    let e = dir.path().join("e");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&e),
    ]);
    let summary = read_csv(&e.join("oob_summary.csv"));
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[1][0], "Mean square error");
    assert_eq!(read_csv(&e.join("oob_error.csv")).len(), 31);

    let v = dir.path().join("v");
    ok(&[
        "vimp",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&v),
        "--percentage",
    ]);
    let rows = read_csv(&v.join("vimp.csv"));
    assert_eq!(rows.len(), 11);
    assert_ne!(rows[1][2], "NA");

    let mut text = fs::read_to_string(&cfg).unwrap();
    text += "\n[[group]]\nname = \"a\"\nmembers = [\"marker1\", \"cont_covar1\"]\n";
    text += "\n[[group]]\nname = \"b\"\nmembers = [\"marker2\"]\n";
    fs::write(&cfg, &text).unwrap();
    let g = dir.path().join("g");
    ok(&[
        "gvimp",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&g),
    ]);
    assert_eq!(read_csv(&g.join("gvimp.csv")).len(), 3);

    text += "\n[[group]]\nname = \"c\"\nmembers = [\"marker1\"]\n";
    fs::write(&cfg, &text).unwrap();
    let out = run(&[
        "gvimp",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&g),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("more than one group"));

    let d = dir.path().join("d");
    let stdout = ok(&["depth", "--model", s(&model), "--out-dir", s(&d)]);
    assert!(stdout.starts_with("warning: mtry = 3 < 10"));
    assert!(fs::read_to_string(d.join("meta.json"))
        .unwrap()
        .contains("warning"));
    assert_eq!(
        read_csv(&d.join("depth_feature.csv"))[0],
        ["name", "value", "percentage", "count"]
    );
}

#[test]
fn evaluate_rejects_other_training_data() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path(), 20);
    let m = dir.path().join("m");
    train(&cfg, &m, &["--no-oob"]);
    let outcome = cfg.parent().unwrap().join("outcome.csv");
    let mut lines: Vec<String> = fs::read_to_string(&outcome)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[1] = "1,42".into();
    fs::write(&outcome, lines.join("\n") + "\n").unwrap();
    let out = run(&[
        "evaluate",
        "--model",
        s(&m.join("model.json")),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn predict_rejects_missing_predictors() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path(), 20);
    let m = dir.path().join("m");
    train(&cfg, &m, &["--no-oob"]);
    let fixed = cfg.parent().unwrap().join("fixed.csv");
    let text = fs::read_to_string(&fixed)
        .unwrap()
        .replacen("cont_covar2", "other", 1);
    fs::write(&fixed, text).unwrap();
    let out = run(&[
        "predict",
        "--model",
        s(&m.join("model.json")),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&dir.path().join("p")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_inputs_exit_with_validation_status() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate(dir.path(), 20);
    let text = fs::read_to_string(&cfg).unwrap() + "\n[extra]\nx = 1\n";
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, text).unwrap();
    let out = run(&[
        "train",
        "--config",
        s(&bad),
        "--out-dir",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&dir.path().join("m")),
        "--mtry",
        "11",
    ]);
    assert_eq!(code(&out), 2);
    let junk = dir.path().join("junk.json");
    fs::write(&junk, "{}").unwrap();
    let out = run(&[
        "depth",
        "--model",
        s(&junk),
        "--out-dir",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(code(&out), 2);
}
