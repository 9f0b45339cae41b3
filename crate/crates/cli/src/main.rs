//! `entlog` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or runtime
//! error, 3 verification failure.

mod config;
mod report;
mod setup;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use entlog::train::{
    evaluate_accuracy, evaluate_retrieval_f1, head_losses, load_checkpoint, save_checkpoint, train, Validation,
};
use entlog::tune::{tune, TuneSpace};
use entlog::verify::{check_gradients, check_oracle_equivalence, check_ssl_gain, SslGainConfig};

use config::RunConfig;
use report::{create, Metrics, OutDir};
use setup::{prepare, Prepared};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
#[error("verification failed: {0}")]
pub struct VerificationFailed(pub String);

#[derive(Parser, Debug)]
#[command(
    name = "entlog",
    version,
    about = "Train and check differentiable logic programs with entropic constraints",
    after_help = "Any config key can be overridden as --section.key=value, e.g. --train.epochs=50.\n\
                  The output directory defaults to $ENTLOG_OUT_DIR, then ./entlog-out."
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every stochastic component (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the KB from dataset or facts files and write it as facts TSV.
    Ingest,
    /// Compile a predicate and print its plan.
    DumpPlan {
        /// Predicate to compile (default: eval.target).
        #[arg(long)]
        target: Option<String>,
    },
    /// Train and write history, checkpoint and metrics.
    Train,
    /// Load a checkpoint and report accuracy or retrieval P/R/F1.
    Eval {
        /// Checkpoint TSV (default: paths.checkpoint, then <out>/checkpoint.tsv).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tune head weights against validation accuracy.
    Tune,
    /// Run the proof-enumeration and gradient-check suites.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Also run the synthetic semi-supervised gain experiment.
        #[arg(long)]
        ssl: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::DumpPlan { .. } => "dump-plan",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Tune => "tune",
            Command::OracleCheck { .. } => "oracle-check",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<entlog::Error>() {
        Some(entlog::Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let (args, overrides) = config::extract_overrides(argv.clone());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &argv, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli, argv: &[String], overrides: &[(String, String)]) -> anyhow::Result<()> {
    let mut cfg = config::load(cli.config.as_deref(), overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out_dir = cfg.resolve_out_dir(cli.out.as_deref());
    cfg.out_dir = Some(out_dir.clone());
    let name = cli.command.name();
    match cli.command {
        Command::DumpPlan { target } => dump_plan(&cfg, target),
        command => {
            let out = OutDir::new(out_dir)?;
            out.write_manifest(name, argv, &cfg)?;
            match command {
                Command::Ingest => ingest(&cfg, &out),
                Command::Train => run_train(&cfg, &out),
                Command::Eval { checkpoint } => eval(&cfg, &out, checkpoint),
                Command::Tune => run_tune(&cfg, &out),
                Command::OracleCheck { trials, ssl } => oracle_check(&cfg, &out, trials, ssl),
                Command::DumpPlan { .. } => unreachable!(),
            }
        }
    }
}

fn ingest(cfg: &RunConfig, out: &OutDir) -> anyhow::Result<()> {
    let mut metrics = Metrics::default();
    let (mut kb, split) = if cfg.is_dataset() {
        let split = setup::load_split(cfg)?;
        (split.kb.clone(), Some(split))
    } else if !cfg.paths.facts.is_empty() {
        (setup::load_facts(cfg)?, None)
    } else {
        bail!(UsageError("ingest needs paths.facts, a citation dataset or [synthetic]".into()))
    };
    kb.freeze()?;
    let names: Vec<String> = kb.relations().map(|r| r.name().to_string()).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut w = create(&out.file("kb.tsv"))?;
    kb.write_facts_tsv(&refs, &mut w)?;
    metrics.push("entities", kb.num_entities());
    metrics.push("relations", names.len());
    metrics.push("facts", kb.relations().map(|r| r.nnz()).sum::<usize>());
    if let Some(b) = split {
        let mut w = create(&out.file("split.tsv"))?;
        use std::io::Write;
        for (part, docs) in [("train", &b.train), ("val", &b.val), ("test", &b.test), ("unlabeled", &b.unlabeled)] {
            for d in docs.iter() {
                let label = kb.entity_name(b.gold[d]).unwrap_or("?");
                writeln!(w, "{}\t{part}\t{label}", kb.entity_name(*d).unwrap_or("?"))?;
            }
            metrics.push(format!("docs.{part}"), docs.len());
        }
        w.flush()?;
        metrics.push("docs.dropped", b.dropped_docs);
        metrics.push("citations.dropped", b.dropped_citations);
    }
    finish(metrics, out, "ingest_metrics.csv")
}

fn dump_plan(cfg: &RunConfig, target: Option<String>) -> anyhow::Result<()> {
    let p = prepare(cfg)?;
    let target = target.unwrap_or_else(|| cfg.eval.target.clone());
    let plan = entlog::plan::compile(&p.program, &target, &p.kb)?;
    print!("{}", plan.dump());
    Ok(())
}

fn finish(metrics: Metrics, out: &OutDir, csv: &str) -> anyhow::Result<()> {
    metrics.print_table();
    metrics.write_csv(&out.file(csv))
}

fn accuracy_metrics(p: &Prepared, metrics: &mut Metrics) -> anyhow::Result<()> {
    for (split, pairs) in [("train", &p.train), ("val", &p.val), ("test", &p.test)] {
        if !pairs.is_empty() {
            metrics.push(
                format!("{split}_accuracy"),
                format!("{:.4}", evaluate_accuracy(&p.target, &p.kb, pairs)?),
            );
        }
    }
    Ok(())
}

fn run_train(cfg: &RunConfig, out: &OutDir) -> anyhow::Result<()> {
    let mut p = prepare(cfg)?;
    let tc = cfg.train.to_config(cfg.seed);
    let validation = (!p.val.is_empty()).then_some(Validation {
        plan: &p.target,
        examples: &p.val,
    });
    let (_, history) = train(&p.heads, &mut p.kb, &tc, validation)?;
    history.write_csv(create(&out.file("history.csv"))?)?;
    save_checkpoint(&p.kb, create(&out.file("checkpoint.tsv"))?)?;

    let mut metrics = Metrics::default();
    metrics.push("epochs_run", history.epochs.len());
    metrics.push("best_epoch", history.best_epoch);
    accuracy_metrics(&p, &mut metrics)?;
    let losses = head_losses(&p.heads, &p.kb)?;
    for h in &losses {
        metrics.push(format!("loss.{}", h.name), format!("{:.6}", h.loss));
    }
    metrics.push("loss.total", format!("{:.6}", entlog::train::combine(&losses)));
    metrics.push("skipped_examples", history.skipped_examples);
    finish(metrics, out, "metrics.csv")
}

fn eval(cfg: &RunConfig, out: &OutDir, checkpoint: Option<PathBuf>) -> anyhow::Result<()> {
    let path = checkpoint
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or_else(|| out.file("checkpoint.tsv"));
    if !path.exists() {
        bail!(UsageError(format!("checkpoint not found: {}", path.display())));
    }
    let mut p = prepare(cfg)?;
    let reader = std::io::BufReader::new(std::fs::File::open(&path)?);
    let n = load_checkpoint(&mut p.kb, reader).with_context(|| path.display().to_string())?;
    let mut metrics = Metrics::default();
    metrics.push("checkpoint_facts", n);
    match cfg.eval.mode {
        config::EvalMode::Accuracy => accuracy_metrics(&p, &mut metrics)?,
        config::EvalMode::Retrieval => {
            let other = cfg
                .eval
                .other_label
                .as_deref()
                .ok_or_else(|| UsageError("retrieval mode needs eval.other_label".into()))?;
            let other = p.kb.require_entity(other)?;
            let mentions: Vec<_> = p.test.iter().map(|e| e.0).collect();
            let gold: BTreeSet<_> = p.test.iter().copied().filter(|e| e.1 != other).collect();
            let s = evaluate_retrieval_f1(&p.target, &p.kb, &mentions, &gold, other)?;
            metrics.push("precision", format!("{:.4}", s.precision));
            metrics.push("recall", format!("{:.4}", s.recall));
            metrics.push("f1", format!("{:.4}", s.f1));
        }
    }
    finish(metrics, out, "eval_metrics.csv")
}

fn tuned_heads(cfg: &RunConfig, p: &Prepared) -> anyhow::Result<Vec<String>> {
    let heads: Vec<String> = if cfg.tune.heads.is_empty() {
        p.heads
            .iter()
            .map(|h| h.name.clone())
            .filter(|n| *n != cfg.eval.target)
            .collect()
    } else {
        cfg.tune.heads.clone()
    };
    for h in &heads {
        if !p.heads.iter().any(|x| &x.name == h) {
            bail!(UsageError(format!("tune.heads: no head named `{h}`")));
        }
    }
    if heads.is_empty() {
        bail!(UsageError("no head weights to tune".into()));
    }
    Ok(heads)
}

fn run_tune(cfg: &RunConfig, out: &OutDir) -> anyhow::Result<()> {
    let base = prepare(cfg)?;
    if base.val.is_empty() {
        bail!(UsageError(
            "tuning needs validation examples (data.val_fraction or paths.val_examples)".into()
        ));
    }
    let names = tuned_heads(cfg, &base)?;
    let d = names.len();
    let space = TuneSpace::new(
        names.clone(),
        vec![cfg.tune.lower; d],
        vec![cfg.tune.upper; d],
        cfg.tune.budget,
        cfg.seed,
    )?;
    let tc = cfg.train.to_config(cfg.seed);
    let objective = |point: &[f64]| -> entlog::Result<f64> {
        let mut p = base.clone();
        for h in p.heads.iter_mut() {
            if let Some(i) = names.iter().position(|n| *n == h.name) {
                h.weight = point[i];
            }
        }
        let validation = Some(Validation {
            plan: &p.target,
            examples: &p.val,
        });
        train(&p.heads, &mut p.kb, &tc, validation)?;
        Ok(-evaluate_accuracy(&p.target, &p.kb, &p.val)?)
    };
    let result = tune(objective, &space, cfg.tune.strategy.into())?;
    result.write_log(&names, create(&out.file("tune_log.csv"))?)?;

    let mut best = cfg.clone();
    for (name, &w) in names.iter().zip(&result.best_point) {
        if cfg.is_dataset() {
            for c in best.constraints.iter_mut().filter(|c| c.kind.head() == name) {
                c.weight = w;
            }
        } else {
            best.weights.insert(name.clone(), w);
        }
    }
    std::fs::write(out.file("best_config.toml"), best.to_toml()?)?;

    let mut metrics = Metrics::default();
    metrics.push("evaluations", result.history.len());
    metrics.push("failed", result.history.iter().filter(|r| r.failed).count());
    metrics.push("best_val_accuracy", format!("{:.4}", -result.best_value));
    for (name, w) in names.iter().zip(&result.best_point) {
        metrics.push(format!("weight.{name}"), format!("{w:.4}"));
    }
    finish(metrics, out, "tune_metrics.csv")
}

fn oracle_check(cfg: &RunConfig, out: &OutDir, trials: usize, ssl: bool) -> anyhow::Result<()> {
    if trials == 0 {
        bail!(UsageError("--trials must be at least 1".into()));
    }
    let mut metrics = Metrics::default();
    let mut failures = Vec::new();

    let oracle = check_oracle_equivalence(trials, cfg.seed)?;
    metrics.push("oracle.trials", oracle.trials);
    metrics.push("oracle.entries", oracle.entries);
    metrics.push("oracle.max_deviation", format!("{:.3e}", oracle.max_deviation));
    metrics.push("oracle.violations", oracle.violations.len());
    metrics.push("oracle.passed", oracle.passed());
    for v in oracle.violations.iter().take(5) {
        log::error!(
            "trial {} query {} answer {}: compiled {} vs enumerated {}\n{}\n{}",
            v.trial,
            v.query,
            v.answer,
            v.compiled,
            v.enumerated,
            v.program,
            v.facts
        );
    }
    if !oracle.passed() {
        failures.push("oracle equivalence");
    }

    let grads = check_gradients(cfg.seed)?;
    for (name, r) in &grads.results {
        metrics.push(format!("grad.{name}.max_rel_error"), format!("{:.3e}", r.max_rel_error));
    }
    metrics.push("grad.passed", grads.passed());
    if !grads.passed() {
        failures.push("gradient check");
    }

    if ssl {
        let report = check_ssl_gain(&SslGainConfig::default())?;
        report.write_csv(create(&out.file("ssl_gain.csv"))?)?;
        for (k, v) in report.means() {
            metrics.push(format!("ssl.mean_accuracy.{k}"), format!("{v:.4}"));
        }
        metrics.push("ssl.er_wins", report.er_wins());
        metrics.push("ssl.nber_wins", report.nber_wins());
    }
    finish(metrics, out, "oracle_check.csv")?;
    if !failures.is_empty() {
        bail!(VerificationFailed(failures.join(", ")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&UsageError("x".into()).into()), 1);
        assert_eq!(exit_code(&entlog::Error::Config("x".into()).into()), 1);
        assert_eq!(exit_code(&entlog::Error::EmptySupport.into()), 2);
        let wrapped = anyhow::Error::from(entlog::Error::Ingest { line: 3, message: "x".into() }).context("file");
        assert_eq!(exit_code(&wrapped), 2);
        assert_eq!(exit_code(&VerificationFailed("x".into()).into()), 3);
    }
}
