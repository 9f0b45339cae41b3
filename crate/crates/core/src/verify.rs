//! Executable checks: compiled evaluation against proof enumeration,
//! analytic against numeric gradients, and paired SSL training runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_synthetic, make_split, SyntheticConfig, HAS_FEATURE, LABELS, NEAR};
use crate::engine::{evaluate, grad_check, GradCheckReport};
use crate::error::{Error, Result};
use crate::experiment::{build_text_experiment, PREDICT};
use crate::kb::{EntityId, KnowledgeBase};
use crate::plan::{compile, compile_with, CompileOptions};
use crate::proofs::{answer_scores, enumerate_proofs};
use crate::rules::{format_program, parse_program, validate_program, Program};
use crate::templates::{
    emit_classifier, emit_cotrain, emit_cotrain_typed, emit_er, emit_network, emit_pair_groups, ConstraintKind,
    ConstraintSpec, GroupKey, MentionGroup, View,
};
use crate::train::{TrainConfig, TrainingExample};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;

/// A random chain program with its KB, target and unroll depth.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub kb: KnowledgeBase,
    pub program: Program,
    pub target: String,
    pub depth: i64,
}

const BASE: [&str; 3] = ["r0", "r1", "r2"];
const DEFINED: [&str; 2] = ["p0", "p1"];

fn chain_rule(head: &str, body: &[&str]) -> String {
    let mut atoms = Vec::new();
    for (i, pred) in body.iter().enumerate() {
        let a = if i == 0 { "X".to_string() } else { format!("V{i}") };
        let b = if i + 1 == body.len() { "Y".to_string() } else { format!("V{}", i + 1) };
        atoms.push(format!("{pred}({a},{b})"));
    }
    format!("{head}(X,Y) :- {}.", atoms.join(", "))
}

/// At most 4 rules with bodies of 1 to 3 atoms over at most 20 entities,
/// unroll depth 1 to 3. The first rule of every defined predicate only uses
/// base relations, so recursive predicates always have a base case.
pub fn random_instance(rng: &mut impl Rng) -> Result<RandomInstance> {
    let mut kb = KnowledgeBase::new();
    let n = rng.random_range(2..=18);
    let ents: Vec<EntityId> = (0..n).map(|i| kb.intern(&format!("e{i}"))).collect::<Result<_>>()?;
    for r in BASE {
        kb.ensure_relation(r)?;
        for &a in &ents {
            for &b in &ents {
                if rng.random::<f64>() < 0.15 {
                    let w = if rng.random::<f64>() < 0.05 { 0.0 } else { rng.random_range(0.05..1.0) };
                    kb.add_fact(r, a, b, w)?;
                }
            }
        }
    }
    kb.freeze()?;
    let n_defined = rng.random_range(1..=2usize);
    let n_rules = rng.random_range(n_defined..=4usize);
    let mut rules = Vec::new();
    for head in DEFINED.iter().take(n_defined) {
        let len = rng.random_range(1..=3);
        let body: Vec<&str> = (0..len).map(|_| BASE[rng.random_range(0..BASE.len())]).collect();
        rules.push(chain_rule(head, &body));
    }
    for _ in n_defined..n_rules {
        let head = DEFINED[rng.random_range(0..n_defined)];
        let len = rng.random_range(1..=3);
        let body: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < 0.35 {
                    DEFINED[rng.random_range(0..n_defined)]
                } else {
                    BASE[rng.random_range(0..BASE.len())]
                }
            })
            .collect();
        rules.push(chain_rule(head, &body));
    }
    let program = parse_program(&rules.join("\n"))?;
    Ok(RandomInstance {
        kb,
        program,
        target: DEFINED[n_defined - 1].to_string(),
        depth: rng.random_range(1..=3),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleViolation {
    pub trial: usize,
    pub program: String,
    pub facts: String,
    pub query: EntityId,
    pub answer: EntityId,
    pub compiled: f64,
    pub enumerated: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub trials: usize,
    pub entries: usize,
    pub max_deviation: f64,
    /// Instances the proof enumerator could not finish within its budget.
    pub over_budget: usize,
    pub violations: Vec<OracleViolation>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn facts_text(kb: &KnowledgeBase) -> String {
    let mut out = Vec::new();
    let names: Vec<&str> = kb.relations().map(|r| r.name()).collect();
    let _ = kb.write_facts_tsv(&names, &mut out);
    String::from_utf8_lossy(&out).into_owned()
}

/// Compares pre-normalization compiled scores with per-answer proof-weight
/// sums on `trials` random instances, for every query entity.
pub fn check_oracle_equivalence(trials: usize, seed: u64) -> Result<OracleReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let inst = random_instance(&mut rng)?;
        let vp = validate_program(&inst.program, &inst.kb)?;
        let plan = compile_with(
            &vp,
            &inst.target,
            &inst.kb,
            CompileOptions {
                default_depth: inst.depth,
                apply_softmax: false,
            },
        )?;
        let queries: Vec<EntityId> = (0..inst.kb.num_entities()).collect();
        let rows = evaluate(&plan, &inst.kb, &queries)?;
        for &q in &queries {
            let proofs = match enumerate_proofs(&vp, &inst.kb, &inst.target, q, inst.depth) {
                Ok(p) => p,
                Err(Error::OracleBudget(_)) => {
                    report.over_budget += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let scores = answer_scores(&proofs);
            for (a, &compiled) in rows[q].iter().enumerate() {
                let enumerated = scores.get(&a).copied().unwrap_or(0.0);
                let dev = (compiled - enumerated).abs();
                report.entries += 1;
                report.max_deviation = report.max_deviation.max(dev);
                if dev > ORACLE_TOLERANCE {
                    report.violations.push(OracleViolation {
                        trial,
                        program: format_program(&inst.program),
                        facts: facts_text(&inst.kb),
                        query: q,
                        answer: a,
                        compiled,
                        enumerated,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Per-plan-type gradient check results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSuite {
    pub results: Vec<(String, GradCheckReport)>,
}

impl GradientSuite {
    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.results
            .iter()
            .all(|(_, r)| r.max_rel_error < GRAD_TOLERANCE && r.cells > 0 && r.max_abs_grad > 0.0)
    }
}

fn randomize_params(kb: &mut KnowledgeBase, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = kb.trainable_names().iter().map(|s| s.to_string()).collect();
    for name in names {
        for v in kb.trainable_values_mut(&name)? {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    Ok(())
}

fn check_examples(
    name: &str,
    program: &Program,
    kb: &mut KnowledgeBase,
    examples: &[TrainingExample],
    seed: u64,
    out: &mut GradientSuite,
) -> Result<()> {
    program.apply_directives(kb, seed)?;
    kb.freeze()?;
    randomize_params(kb, seed)?;
    let vp = validate_program(program, kb)?;
    let mut combined: Option<GradCheckReport> = None;
    for ex in examples.iter().take(3) {
        let plan = compile(&vp, &ex.predicate, kb)?;
        let r = grad_check(&plan, kb, (ex.query, ex.target), GRAD_STEP)?;
        combined = Some(match combined {
            None => r,
            Some(c) => GradCheckReport {
                max_rel_error: c.max_rel_error.max(r.max_rel_error),
                cells: c.cells + r.cells,
                max_abs_grad: c.max_abs_grad.max(r.max_abs_grad),
            },
        });
    }
    let report = combined.ok_or_else(|| Error::Config(format!("{name}: no examples to check")))?;
    out.results.push((name.to_string(), report));
    Ok(())
}

fn small_bundle(seed: u64) -> Result<crate::data::DatasetBundle> {
    generate_synthetic(&SyntheticConfig {
        classes: 3,
        vocab_per_class: 3,
        ambiguity: 0.4,
        docs: 9,
        graph_homophily: 0.7,
        seed,
        doc_length: 4,
        shared_vocab: 3,
        edges_per_doc: 1,
    })
}

/// Finite-difference checks on supervised, ER, CT, typed CT, NBER, LPER
/// (depth 3), COLPER, pair and set plans over small random KBs.
pub fn check_gradients(seed: u64) -> Result<GradientSuite> {
    let mut out = GradientSuite::default();
    let classifier = || emit_classifier(PREDICT, HAS_FEATURE, "indicates", crate::data::FEATURES, LABELS);

    // supervised
    {
        let b = small_bundle(seed)?;
        let mut kb = b.kb.clone();
        let program = classifier()?;
        let ex: Vec<TrainingExample> = b
            .docs
            .iter()
            .take(3)
            .map(|d| TrainingExample::new(PREDICT, *d, b.gold[d]))
            .collect();
        check_examples("supervised", &program, &mut kb, &ex, seed, &mut out)?;
    }
    // ER and the network kinds
    for kind in [ConstraintKind::Er, ConstraintKind::Nber, ConstraintKind::Lper, ConstraintKind::Colper] {
        let b = small_bundle(seed)?;
        let mut kb = b.kb.clone();
        let mut program = classifier()?;
        let e = match kind {
            ConstraintKind::Er => emit_er(&mut kb, PREDICT, &b.docs)?,
            _ => emit_network(&mut kb, kind, PREDICT, NEAR, 3, &b.docs)?,
        };
        program.extend(e.program);
        check_examples(&kind.to_string(), &program, &mut kb, &e.examples, seed, &mut out)?;
    }
    // two-view CT: pure tokens in view 1, shared tokens in view 2
    {
        let b = small_bundle(seed)?;
        let mut kb = b.kb.clone();
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for (d, f, w) in kb.relation(HAS_FEATURE).map(|r| r.facts()).unwrap_or_default() {
            let shared = kb.entity_name(f).is_some_and(|n| n.starts_with('s'));
            if shared { &mut f2 } else { &mut f1 }.push((d, f, w));
        }
        for (rel, facts, dom) in [("hasFeature1", &f1, "features1"), ("hasFeature2", &f2, "features2")] {
            for &(d, f, w) in facts.iter() {
                kb.add_fact(rel, d, f, w)?;
            }
            let mut fs: Vec<EntityId> = facts.iter().map(|x| x.1).collect();
            fs.sort_unstable();
            fs.dedup();
            kb.define_domain(dom, fs);
        }
        let v1 = View {
            has_feature: "hasFeature1".into(),
            feature_domain: "features1".into(),
        };
        let v2 = View {
            has_feature: "hasFeature2".into(),
            feature_domain: "features2".into(),
        };
        let e = emit_cotrain(&mut kb, [&v1, &v2], LABELS, &b.docs)?;
        check_examples("CT", &e.program, &mut kb, &e.examples, seed, &mut out)?;
    }
    // typed CT: relation and type classifiers joined by hasType
    {
        let b = small_bundle(seed)?;
        let mut kb = b.kb.clone();
        let rels: Vec<EntityId> = ["side_effects", "used_to_treat", "other_rel"]
            .iter()
            .map(|r| kb.intern(r))
            .collect::<Result<_>>()?;
        let types: Vec<EntityId> = ["symptom", "disease", "other_type"]
            .iter()
            .map(|t| kb.intern(t))
            .collect::<Result<_>>()?;
        kb.define_domain("relations", rels);
        kb.define_domain("types", types);
        let has_type: Vec<(String, String)> = [
            ("side_effects", "symptom"),
            ("used_to_treat", "disease"),
            ("other_rel", "other_type"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let mut program = parse_program(
            "#trainable indicatesR features relations init=zeros\n\
             #trainable indicatesT features types init=zeros\n\
             #softmax predictR\n#softmax predictT\n\
             predictR(X,Y) :- hasFeature(X,F), indicatesR(F,Y).\n\
             predictT(X,Y) :- hasFeature(X,F), indicatesT(F,Y).\n",
        )?;
        let e = emit_cotrain_typed(&mut kb, "predictR", "predictT", &has_type, &b.docs)?;
        program.extend(e.program);
        check_examples("CT_TYPED", &program, &mut kb, &e.examples, seed, &mut out)?;
    }
    // pair and set constraints over mention groups
    for kind in [ConstraintKind::NberPair, ConstraintKind::ColperSet] {
        let b = small_bundle(seed)?;
        let mut kb = b.kb.clone();
        let groups = vec![
            MentionGroup {
                key: "docA".into(),
                mentions: b.docs[0..3].to_vec(),
            },
            MentionGroup {
                key: "docB".into(),
                mentions: b.docs[2..5].to_vec(),
            },
        ];
        let mut program = classifier()?;
        let e = emit_pair_groups(&mut kb, kind, PREDICT, &groups, GroupKey::Document, 20, 3, seed)?;
        program.extend(e.program);
        check_examples(&kind.to_string(), &program, &mut kb, &e.examples, seed, &mut out)?;
    }
    Ok(out)
}

/// Settings for paired supervised vs constrained training runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SslGainConfig {
    pub seeds: usize,
    pub data: SyntheticConfig,
    pub labeled_per_class: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub constraint_weight: f64,
    pub train: TrainConfig,
    /// Also run NBER on a homophily-0.5 graph (reported, never asserted).
    pub control: bool,
}

impl Default for SslGainConfig {
    fn default() -> Self {
        SslGainConfig {
            seeds: 10,
            data: SyntheticConfig::default(),
            labeled_per_class: 5,
            unlabeled: 500,
            test: 500,
            constraint_weight: 1.0,
            train: TrainConfig {
                epochs: 40,
                batch_size: 32,
                learning_rate: 0.05,
                patience: None,
                ..TrainConfig::default()
            },
            control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub supervised: f64,
    pub er: f64,
    pub nber: f64,
    pub nber_control: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SslGainReport {
    pub runs: Vec<SeedResult>,
}

impl SslGainReport {
    pub fn er_wins(&self) -> usize {
        self.runs.iter().filter(|r| r.er > r.supervised).count()
    }

    pub fn nber_wins(&self) -> usize {
        self.runs.iter().filter(|r| r.nber > r.supervised).count()
    }

    pub fn means(&self) -> BTreeMap<&'static str, f64> {
        let n = self.runs.len().max(1) as f64;
        let mut m = BTreeMap::new();
        m.insert("supervised", self.runs.iter().map(|r| r.supervised).sum::<f64>() / n);
        m.insert("er", self.runs.iter().map(|r| r.er).sum::<f64>() / n);
        m.insert("nber", self.runs.iter().map(|r| r.nber).sum::<f64>() / n);
        let control: Vec<f64> = self.runs.iter().filter_map(|r| r.nber_control).collect();
        if !control.is_empty() {
            m.insert("nber_control", control.iter().sum::<f64>() / control.len() as f64);
        }
        m
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed,supervised,er,nber,nber_control")?;
        for r in &self.runs {
            let c = r.nber_control.map(|c| c.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.seed, r.supervised, r.er, r.nber, c)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.means() {
            let _ = writeln!(s, "mean test accuracy {k:<12} {v:.4}");
        }
        let _ = writeln!(s, "ER wins {}/{}", self.er_wins(), self.runs.len());
        let _ = writeln!(s, "NBER wins {}/{}", self.nber_wins(), self.runs.len());
        s
    }
}

fn run_variant(cfg: &SslGainConfig, data: &SyntheticConfig, kind: Option<ConstraintKind>, seed: u64) -> Result<f64> {
    let per_class = cfg.labeled_per_class;
    let bundle = generate_synthetic(data)?;
    let split = make_split(&bundle, per_class, cfg.test, 0.0, seed)?;
    let mut spec = Vec::new();
    if let Some(k) = kind {
        let mut c = ConstraintSpec::new(k);
        c.weight = cfg.constraint_weight;
        c.max_unlabeled = Some(cfg.unlabeled);
        spec.push(c);
    }
    let mut exp = build_text_experiment(&split, &spec, seed)?;
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    exp.fit(&train, &[])?;
    exp.accuracy(&split.labeled(&split.test))
}

/// For each seed: supervised-only, +ER and +NBER on the same synthetic data
/// and split; test accuracy per variant.
pub fn check_ssl_gain(cfg: &SslGainConfig) -> Result<SslGainReport> {
    let mut report = SslGainReport::default();
    for s in 0..cfg.seeds as u64 {
        let data = SyntheticConfig {
            seed: s,
            docs: cfg.labeled_per_class * cfg.data.classes + cfg.unlabeled + cfg.test,
            ..cfg.data.clone()
        };
        let supervised = run_variant(cfg, &data, None, s)?;
        let er = run_variant(cfg, &data, Some(ConstraintKind::Er), s)?;
        let nber = run_variant(cfg, &data, Some(ConstraintKind::Nber), s)?;
        let nber_control = if cfg.control {
            let weak = SyntheticConfig {
                graph_homophily: 0.5,
                ..data.clone()
            };
            Some(run_variant(cfg, &weak, Some(ConstraintKind::Nber), s)?)
        } else {
            None
        };
        log::info!("seed {s}: supervised {supervised:.4} er {er:.4} nber {nber:.4}");
        report.runs.push(SeedResult {
            seed: s,
            supervised,
            er,
            nber,
            nber_control,
        });
    }
    Ok(report)
}
