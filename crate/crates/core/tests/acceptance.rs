//! Acceptance gate. Runs every criterion and prints one PASS/FAIL/SKIP line
//! each; exits nonzero if any criterion fails.
//!
//! The optional CiteSeer run reads `ENTLOG_CITESEER_CONTENT` and
//! `ENTLOG_CITESEER_CITES`; it is skipped when either is unset.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{fig1_kb, plan, raw_plan, CLASSIFIER, CORPUS};
use entlog::data::{generate_synthetic, load_citation_dataset, make_split, DatasetBundle, SyntheticConfig};
use entlog::engine::{evaluate, support_mask, tsallis_entropy_pair};
use entlog::experiment::{build_text_experiment, Experiment};
use entlog::rules::{format_program, parse_program};
use entlog::templates::{ConstraintKind, ConstraintSpec, ER_HEAD, NBER_HEAD};
use entlog::train::{head_losses, load_checkpoint, save_checkpoint, total_loss, TrainConfig};
use entlog::tune::{tune, Strategy, TuneSpace};
use entlog::verify::{check_gradients, check_oracle_equivalence, check_ssl_gain, SslGainConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> entlog::Result<Outcome>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn oracle_equivalence() -> entlog::Result<Outcome> {
    let r = check_oracle_equivalence(200, 2024)?;
    let ok = r.passed() && r.trials == 200 && r.max_deviation <= 1e-9;
    Ok(verdict(
        ok,
        format!(
            "{} trials, {} entries, max |d| {:.2e}, {} violations",
            r.trials,
            r.entries,
            r.max_deviation,
            r.violations.len()
        ),
    ))
}

fn gradients() -> entlog::Result<Outcome> {
    let suite = check_gradients(7)?;
    let names: Vec<&str> = suite.results.iter().map(|(n, _)| n.as_str()).collect();
    let required = ["supervised", "ER", "CT", "NBER", "LPER", "COLPER", "NBER_PAIR", "COLPER_SET"];
    let missing: Vec<&&str> = required.iter().filter(|r| !names.contains(r)).collect();
    Ok(verdict(
        suite.passed() && missing.is_empty(),
        format!(
            "{} plans, max rel error {:.2e}, missing {:?}",
            suite.results.len(),
            suite.max_rel_error(),
            missing
        ),
    ))
}

fn entropy_values() -> entlog::Result<Outcome> {
    let mut ok = tsallis_entropy_pair(&[0.0, 1.0, 0.0, 0.0])?.high == 0.0;
    let mut worst: f64 = 0.0;
    for k in 1..=20usize {
        let e = tsallis_entropy_pair(&vec![1.0 / k as f64; k])?;
        worst = worst.max((e.high - (1.0 - 1.0 / k as f64)).abs());
    }
    ok &= worst <= 1e-12;
    let skew = tsallis_entropy_pair(&[0.9, 0.1])?.high;
    ok &= (skew - 0.18).abs() <= 1e-12;
    Ok(verdict(ok, format!("uniform max |d| {worst:.1e}, [0.9,0.1] -> {skew}")))
}

fn worked_example() -> entlog::Result<Outcome> {
    let mut kb = fig1_kb();
    kb.freeze()?;
    let x1 = kb.require_entity("x1")?;
    let accept = kb.require_entity("accept")?;
    let reject = kb.require_entity("reject")?;
    let raw = &evaluate(&raw_plan(CLASSIFIER, "predict", &kb, 3), &kb, &[x1])?[0];
    let soft_plan = plan(&format!("#softmax predict\n{CLASSIFIER}"), "predict", &kb);
    let soft = &evaluate(&soft_plan, &kb, &[x1])?[0];
    let mask = support_mask(&soft_plan, &kb, x1)?;
    let support: Vec<usize> = (0..mask.len()).filter(|&e| mask[e]).collect();
    let outside_zero = soft.iter().enumerate().all(|(e, &v)| mask[e] || v == 0.0);
    let ok = (raw[accept] - 0.12).abs() < 1e-15 && support == vec![accept, reject] && outside_zero;
    Ok(verdict(
        ok,
        format!(
            "accept {:.4}, reject {:.4}, support {{accept, reject}}: {}",
            raw[accept],
            raw[reject],
            support == vec![accept, reject]
        ),
    ))
}

fn small_bundle() -> entlog::Result<DatasetBundle> {
    let data = generate_synthetic(&SyntheticConfig {
        docs: 120,
        seed: 11,
        ..SyntheticConfig::default()
    })?;
    make_split(&data, 5, 40, 0.0, 11)
}

fn specs(er: f64, nber: f64) -> Vec<ConstraintSpec> {
    let mut e = ConstraintSpec::new(ConstraintKind::Er);
    e.weight = er;
    let mut n = ConstraintSpec::new(ConstraintKind::Nber);
    n.weight = nber;
    vec![e, n]
}

fn short_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 8,
        learning_rate: 0.05,
        seed,
        patience: None,
        ..TrainConfig::default()
    }
}

fn loss_combination() -> entlog::Result<Outcome> {
    let bundle = small_bundle()?;
    let mut details = Vec::new();

    let mut base = build_text_experiment(&bundle, &[], 3)?;
    base.fit(&short_train(3), &[])?;
    let mut zeroed = build_text_experiment(&bundle, &specs(0.0, 0.0), 3)?;
    zeroed.fit(&short_train(3), &[])?;
    let inert = base.kb.params()? == zeroed.kb.params()?;
    details.push(format!("zero-weight trajectories identical: {inert}"));

    let exp = build_text_experiment(&bundle, &specs(1.0, 1.0), 3)?;
    let mut affine = true;
    let mut worst: f64 = 0.0;
    for head in ["predict", ER_HEAD, NBER_HEAD] {
        let mut e: Experiment = exp.clone();
        let losses = head_losses(&e.heads, &e.kb)?;
        let idx = losses.iter().position(|h| h.name == head).expect("head present");
        let slope = losses[idx].loss;
        let rest: f64 = losses
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != idx)
            .map(|(_, h)| h.weight * h.loss)
            .sum();
        for w in [0.0, 0.5, 2.0] {
            e.set_weight(head, w)?;
            let t = total_loss(&e.heads, &e.kb)?;
            let d = (t - (rest + w * slope)).abs();
            worst = worst.max(d);
            affine &= d <= 1e-12 * (1.0 + t.abs());
        }
    }
    details.push(format!("affine in each weight (max |d| {worst:.1e}): {affine}"));
    Ok(verdict(inert && affine, details.join(", ")))
}

fn ssl_gain() -> entlog::Result<Outcome> {
    let report = check_ssl_gain(&SslGainConfig::default())?;
    let m = report.means();
    let ok = report.er_wins() >= 8 && report.nber_wins() >= 8;
    Ok(verdict(
        ok,
        format!(
            "ER wins {}/10, NBER wins {}/10; mean acc supervised {:.3}, ER {:.3}, NBER {:.3}, NBER@h0.5 {:.3} (control)",
            report.er_wins(),
            report.nber_wins(),
            m["supervised"],
            m["er"],
            m["nber"],
            m.get("nber_control").copied().unwrap_or(f64::NAN)
        ),
    ))
}

const CITESEER_SEEDS: u64 = 5;
const CITESEER_REFERENCE: f64 = 0.598;
const CITESEER_BUDGET: usize = 10;
/// Unlabeled documents drawn per constraint.
const CITESEER_UNLABELED: usize = 200;

fn citeseer_accuracy(bundle: &DatasetBundle, all: bool, seed: u64) -> entlog::Result<f64> {
    let split = make_split(bundle, 20, 1000, 0.25, seed)?;
    let val = split.labeled(&split.val);
    let test = split.labeled(&split.test);
    let kinds = [ConstraintKind::Er, ConstraintKind::Nber, ConstraintKind::Lper, ConstraintKind::Colper];
    let names: Vec<&str> = if all {
        vec!["log10_lr", "log10_er", "log10_nber", "log10_lper", "log10_colper"]
    } else {
        vec!["log10_lr"]
    };
    let lower = vec![-3.0; names.len()];
    let upper = vec![0.0; names.len()];
    let space = TuneSpace::new(
        names.iter().map(|s| s.to_string()).collect(),
        lower,
        upper,
        CITESEER_BUDGET,
        seed,
    )?;
    let build = |point: &[f64]| -> entlog::Result<Experiment> {
        let constraints: Vec<ConstraintSpec> = if all {
            kinds
                .iter()
                .zip(&point[1..])
                .map(|(&k, &w)| {
                    let mut c = ConstraintSpec::new(k);
                    c.weight = 10f64.powf(w);
                    c.max_unlabeled = Some(CITESEER_UNLABELED);
                    c
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut exp = build_text_experiment(&split, &constraints, seed)?;
        let cfg = TrainConfig {
            learning_rate: 10f64.powf(point[0]),
            seed,
            epochs: 100,
            patience: Some(10),
            ..TrainConfig::default()
        };
        exp.fit(&cfg, &val)?;
        Ok(exp)
    };
    let result = tune(|p| Ok(-build(p)?.accuracy(&val)?), &space, Strategy::Bayesian)?;
    build(&result.best_point)?.accuracy(&test)
}

fn citeseer() -> entlog::Result<Outcome> {
    let (Ok(content), Ok(cites)) = (
        std::env::var("ENTLOG_CITESEER_CONTENT"),
        std::env::var("ENTLOG_CITESEER_CITES"),
    ) else {
        return Ok(Outcome::Skip(
            "set ENTLOG_CITESEER_CONTENT and ENTLOG_CITESEER_CITES to run".into(),
        ));
    };
    let open = |p: &str| -> entlog::Result<std::io::BufReader<std::fs::File>> {
        Ok(std::io::BufReader::new(std::fs::File::open(p)?))
    };
    let bundle = load_citation_dataset(open(&content)?, open(&cites)?)?;
    let (mut sup, mut all) = (0.0, 0.0);
    for seed in 0..CITESEER_SEEDS {
        sup += citeseer_accuracy(&bundle, false, seed)?;
        all += citeseer_accuracy(&bundle, true, seed)?;
    }
    sup /= CITESEER_SEEDS as f64;
    all /= CITESEER_SEEDS as f64;
    let ok = (sup - CITESEER_REFERENCE).abs() <= 0.03 && all >= sup;
    Ok(verdict(
        ok,
        format!("supervised {:.1}% (reference 59.8%), +all {:.1}%", 100.0 * sup, 100.0 * all),
    ))
}

fn bo_sanity() -> entlog::Result<Outcome> {
    let f = |p: &[f64]| Ok((p[0] - 0.3).powi(2));
    let space = |seed| TuneSpace::new(vec!["w".into()], vec![0.0], vec![1.0], 25, seed);
    let mut near = 0;
    for seed in 0..10 {
        let r = tune(f, &space(seed)?, Strategy::Bayesian)?;
        if (r.best_point[0] - 0.3).abs() < 0.05 {
            near += 1;
        }
    }
    let mut bo_wins = 0;
    for seed in 100..120 {
        let bo = tune(f, &space(seed)?, Strategy::Bayesian)?;
        let random = tune(f, &space(seed)?, Strategy::Random)?;
        if bo.best_value <= random.best_value {
            bo_wins += 1;
        }
    }
    Ok(verdict(
        near >= 9 && bo_wins >= 15,
        format!("{near}/10 seeds within 0.05 of 0.3, BO <= random in {bo_wins}/20"),
    ))
}

fn round_trips() -> entlog::Result<Outcome> {
    let mut rules_ok = true;
    for text in CORPUS {
        let p = parse_program(text)?;
        rules_ok &= parse_program(&format_program(&p))? == p;
    }
    let bundle = small_bundle()?;
    let mut trained = build_text_experiment(&bundle, &specs(0.5, 0.5), 5)?;
    trained.fit(&short_train(5), &[])?;
    let mut buf = Vec::new();
    save_checkpoint(&trained.kb, &mut buf)?;
    let mut restored = build_text_experiment(&bundle, &specs(0.5, 0.5), 5)?;
    load_checkpoint(&mut restored.kb, buf.as_slice())?;
    let test = bundle.labeled(&bundle.test);
    let (a, b) = (trained.accuracy(&test)?, restored.accuracy(&test)?);
    let (la, lb) = (head_losses(&trained.heads, &trained.kb)?, head_losses(&restored.heads, &restored.kb)?);
    let same = a.to_bits() == b.to_bits() && la == lb;
    Ok(verdict(
        rules_ok && same,
        format!(
            "{} corpus programs round-trip: {rules_ok}; checkpoint metrics identical: {same} (acc {a:.4})",
            CORPUS.len()
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 gradient correctness", gradients),
        ("3 entropy unit values", entropy_values),
        ("4 worked classifier example", worked_example),
        ("5 loss combination", loss_combination),
        ("6 synthetic SSL gain", ssl_gain),
        ("7 CiteSeer integration (optional)", citeseer),
        ("8 Bayesian optimizer sanity", bo_sanity),
        ("9 round trips", round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] criterion {name} ({secs:.1}s): {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
