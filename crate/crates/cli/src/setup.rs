//! Turns a [`RunConfig`] into a frozen KB, compiled plans and loss heads.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context};
use entlog::data::{generate_synthetic, load_citation_dataset, load_examples_tsv, make_split, DatasetBundle};
use entlog::experiment::build_text_experiment;
use entlog::kb::{EntityId, KnowledgeBase};
use entlog::plan::{compile, Plan};
use entlog::rules::{parse_program, validate_program, ValidatedProgram};
use entlog::train::{LossHead, TrainingExample};

use crate::config::{DomainSpec, RunConfig, Side};
use crate::UsageError;

/// Everything a subcommand needs; cloned freely since training mutates the KB.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kb: KnowledgeBase,
    pub program: ValidatedProgram,
    pub target: Plan,
    pub heads: Vec<LossHead>,
    pub train: Vec<(EntityId, EntityId)>,
    pub val: Vec<(EntityId, EntityId)>,
    pub test: Vec<(EntityId, EntityId)>,
}

fn reader(p: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(p).with_context(|| format!("opening {}", p.display()))?,
    ))
}

pub fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    if cfg.is_dataset() {
        prepare_dataset(cfg)
    } else if cfg.paths.rules.is_some() {
        prepare_rules(cfg)
    } else {
        bail!(UsageError(
            "nothing to run: set paths.rules, paths.content/paths.cites or a [synthetic] section".into()
        ))
    }
}

/// Loads or generates the citation dataset and draws the seeded split.
pub fn load_split(cfg: &RunConfig) -> anyhow::Result<DatasetBundle> {
    let bundle = match (&cfg.paths.content, &cfg.paths.cites, &cfg.synthetic) {
        (Some(content), Some(cites), _) => {
            let b = load_citation_dataset(reader(content)?, reader(cites)?)?;
            log::info!(
                "loaded {} documents ({} dropped), {} unknown citations",
                b.docs.len(),
                b.dropped_docs,
                b.dropped_citations
            );
            b
        }
        (Some(_), None, _) | (None, Some(_), _) => {
            bail!(UsageError("paths.content and paths.cites must be given together".into()))
        }
        (None, None, Some(s)) => generate_synthetic(&s.to_config(cfg.seed))?,
        (None, None, None) => bail!(UsageError("no dataset configured".into())),
    };
    let d = &cfg.data;
    Ok(make_split(&bundle, d.per_class_train, d.test, d.val_fraction, cfg.seed)?)
}

fn prepare_dataset(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let split = load_split(cfg)?;
    let exp = build_text_experiment(&split, &cfg.constraints, cfg.seed)?;
    Ok(Prepared {
        train: split.labeled(&split.train),
        val: split.labeled(&split.val),
        test: split.labeled(&split.test),
        kb: exp.kb,
        program: exp.program,
        target: exp.predict,
        heads: exp.heads,
    })
}

fn resolve_domain(kb: &KnowledgeBase, name: &str, spec: &DomainSpec) -> anyhow::Result<Vec<EntityId>> {
    Ok(match spec {
        DomainSpec::Members(names) => names
            .iter()
            .map(|n| kb.require_entity(n))
            .collect::<entlog::Result<_>>()
            .with_context(|| format!("domain `{name}`"))?,
        DomainSpec::Relation { relation, side } => {
            let rel = kb
                .relation(relation)
                .ok_or_else(|| entlog::Error::UnknownPredicate(relation.clone()))
                .with_context(|| format!("domain `{name}`"))?;
            let mut ids: Vec<EntityId> = rel
                .facts()
                .into_iter()
                .map(|(h, t, _)| if *side == Side::Head { h } else { t })
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    })
}

/// Facts files plus every examples file, unfrozen, for `ingest`.
pub fn load_facts(cfg: &RunConfig) -> anyhow::Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::new();
    for p in &cfg.paths.facts {
        kb.read_facts_tsv(reader(p)?).with_context(|| p.display().to_string())?;
    }
    let p = &cfg.paths;
    for files in [&p.examples, &p.val_examples, &p.test_examples] {
        read_examples(&mut kb, files)?;
    }
    Ok(kb)
}

fn read_examples(kb: &mut KnowledgeBase, paths: &[impl AsRef<Path>]) -> anyhow::Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        out.extend(load_examples_tsv(kb, reader(p)?).with_context(|| p.display().to_string())?);
    }
    Ok(out)
}

fn prepare_rules(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    if !cfg.constraints.is_empty() {
        bail!(UsageError(
            "[[constraints]] apply to datasets; with paths.rules write the constraint rules directly".into()
        ));
    }
    let rules_path = cfg.paths.rules.as_deref().expect("checked by caller");
    let text = std::fs::read_to_string(rules_path).with_context(|| rules_path.display().to_string())?;
    let program = parse_program(&text)?;
    let mut kb = KnowledgeBase::new();
    for p in &cfg.paths.facts {
        kb.read_facts_tsv(reader(p)?).with_context(|| p.display().to_string())?;
    }
    let train_ex = read_examples(&mut kb, &cfg.paths.examples)?;
    let val_ex = read_examples(&mut kb, &cfg.paths.val_examples)?;
    let test_ex = read_examples(&mut kb, &cfg.paths.test_examples)?;
    for (name, spec) in &cfg.domains {
        let members = resolve_domain(&kb, name, spec)?;
        kb.define_domain(name, members);
    }
    program.apply_directives(&mut kb, cfg.seed)?;
    kb.freeze()?;
    let vp = validate_program(&program, &kb)?;
    let target_name = cfg.eval.target.as_str();
    let target = compile(&vp, target_name, &kb)?;

    let mut by_pred: BTreeMap<&str, Vec<TrainingExample>> = BTreeMap::new();
    for ex in &train_ex {
        by_pred.entry(ex.predicate.as_str()).or_default().push(ex.clone());
    }
    for w in cfg.weights.keys() {
        if !by_pred.contains_key(w.as_str()) {
            bail!(UsageError(format!("weights.{w}: no training examples use `{w}`")));
        }
    }
    let mut heads = Vec::new();
    for (pred, examples) in by_pred {
        let plan = if pred == target_name { target.clone() } else { compile(&vp, pred, &kb)? };
        let weight = cfg.weights.get(pred).copied().unwrap_or(1.0);
        heads.push(LossHead::new(pred, plan, &examples, weight)?);
    }
    let for_target = |xs: &[TrainingExample]| -> Vec<(EntityId, EntityId)> {
        xs.iter()
            .filter(|e| e.predicate == target_name)
            .map(|e| (e.query, e.target))
            .collect()
    };
    Ok(Prepared {
        train: for_target(&train_ex),
        val: for_target(&val_ex),
        test: for_target(&test_ex),
        kb,
        program: vp,
        target,
        heads,
    })
}
