use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use entlog::kb::KnowledgeBase;
use entlog::plan::{compile, Plan};
use entlog::rules::{parse_program, validate_program};

const RULES: &str = "#trainable indicates features labels init=zeros\n#softmax predict\n\
                     predict(X,Y) :- hasFeature(X,F), indicates(F,Y).\n";
const FACTS: &str = "hasFeature\tx1\tpars\t0.6\nhasFeature\tx1\tlstm\t0.4\n\
                     hasFeature\tx2\tlstm\t0.7\nhasFeature\tx2\tgru\t0.3\n\
                     indicates\tpars\taccept\t0.2\nindicates\tlstm\treject\t0.3\n";
const EXAMPLES: &str = "predict\tx1\taccept\npredict\tx2\treject\n";

fn entlog(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entlog"));
    cmd.args(args).env("RUST_LOG", "warn");
    match env_out {
        Some(p) => cmd.env("ENTLOG_OUT_DIR", p),
        None => cmd.env_remove("ENTLOG_OUT_DIR"),
    };
    cmd.output().expect("binary runs")
}

fn toy(dir: &Path) -> PathBuf {
    fs::write(dir.join("rules.pl"), RULES).unwrap();
    fs::write(dir.join("facts.tsv"), FACTS).unwrap();
    fs::write(dir.join("train.tsv"), EXAMPLES).unwrap();
    let cfg = format!(
        "seed = 1\n\n[paths]\nrules = {:?}\nfacts = [{:?}]\nexamples = [{:?}]\n\n\
         [domains]\nfeatures = {{ relation = \"hasFeature\", side = \"tail\" }}\nlabels = [\"accept\", \"reject\"]\n\n\
         [train]\nepochs = 40\nlearning_rate = 0.1\n",
        dir.join("rules.pl"),
        dir.join("facts.tsv"),
        dir.join("train.tsv")
    );
    let path = dir.join("run.toml");
    fs::write(&path, cfg).unwrap();
    path
}

fn metric(csv: &Path, key: &str) -> String {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from {}", csv.display()))
}

#[test]
fn train_fits_the_toy_kb() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let out = dir.path().join("run");
    let o = entlog(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metric(&out.join("metrics.csv"), "train_accuracy"), "1.0000");
    for f in ["history.csv", "checkpoint.tsv", "manifest.toml", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("train_accuracy"));

    let o = entlog(&["eval", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success());
    assert_eq!(metric(&out.join("eval_metrics.csv"), "train_accuracy"), "1.0000");
}

#[test]
fn rerun_from_resolved_config_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let a = dir.path().join("a");
    let o = entlog(
        &["train", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--train.epochs=7"],
        None,
    );
    assert!(o.status.success());
    let b = dir.path().join("b");
    let resolved = a.join("config.toml");
    let o = entlog(&["train", "--config", resolved.to_str().unwrap(), "--out", b.to_str().unwrap()], None);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(a.join("checkpoint.tsv")).unwrap(),
        fs::read_to_string(b.join("checkpoint.tsv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(a.join("history.csv")).unwrap(),
        fs::read_to_string(b.join("history.csv")).unwrap()
    );
    assert_eq!(metric(&b.join("metrics.csv"), "epochs_run"), "7");
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let env_out = dir.path().join("from-env");
    let o = entlog(&["train", "--config", cfg.to_str().unwrap(), "--train.epochs=2"], Some(&env_out));
    assert!(o.status.success());
    assert!(env_out.join("metrics.csv").exists());
}

#[test]
fn dump_plan_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path());
    let o = entlog(&["dump-plan", "--config", cfg.to_str().unwrap()], None);
    assert!(o.status.success());
    let dump = String::from_utf8(o.stdout).unwrap();

    let mut kb = KnowledgeBase::new();
    kb.read_facts_tsv(FACTS.as_bytes()).unwrap();
    for n in ["x1", "x2", "accept", "reject"] {
        kb.intern(n).unwrap();
    }
    let program = parse_program(RULES).unwrap();
    let features = ["pars", "lstm", "gru"].iter().map(|f| kb.entity(f).unwrap()).collect();
    let labels = ["accept", "reject"].iter().map(|f| kb.entity(f).unwrap()).collect();
    kb.define_domain("features", features);
    kb.define_domain("labels", labels);
    program.apply_directives(&mut kb, 1).unwrap();
    kb.freeze().unwrap();
    let expected = compile(&validate_program(&program, &kb).unwrap(), "predict", &kb).unwrap();
    assert_eq!(Plan::from_dump(&dump, &kb).unwrap(), expected);
}

#[test]
fn oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oc");
    let o = entlog(&["oracle-check", "--trials", "40", "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metric(&out.join("oracle_check.csv"), "oracle.passed"), "true");
    assert_eq!(metric(&out.join("oracle_check.csv"), "grad.passed"), "true");
}

#[test]
fn tune_log_has_budget_rows_and_monotone_incumbent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("syn.toml");
    fs::write(
        &cfg,
        "seed = 2\n\n[synthetic]\ndocs = 200\n\n[data]\nper_class_train = 10\ntest = 50\nval_fraction = 0.3\n\n\
         [[constraints]]\nkind = \"ER\"\n\n[train]\nepochs = 10\npatience = 0\nlearning_rate = 0.05\n",
    )
    .unwrap();
    let out = dir.path().join("tune");
    let o = entlog(
        &["tune", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--tune.budget=5"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("tune_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iter,predictionHasEntropy,objective,incumbent"));
    let incumbents: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(incumbents.len(), 5);
    assert!(incumbents.windows(2).all(|w| w[1] <= w[0]));
    let best = fs::read_to_string(out.join("best_config.toml")).unwrap();
    assert!(best.contains("kind = \"ER\""));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(entlog(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(entlog(&["train", "--out", out, "--train.epoch=3"], None).status.code(), Some(1));
    assert_eq!(
        entlog(&["train", "--out", out, "--paths.rules=\"/no/such/file\""], None).status.code(),
        Some(1)
    );
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "only-one-field\n").unwrap();
    let arg = format!("--paths.facts=[{:?}]", bad);
    let o = entlog(&["ingest", "--out", out, &arg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert_eq!(entlog(&["--help"], None).status.code(), Some(0));
}
