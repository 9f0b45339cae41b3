//! Dataset ingestion, splits and a synthetic document generator.
//!
//! Content files hold one document per line, `<doc-id> <f1 ... fk> <label>`,
//! whitespace separated. Cites files hold `<cited-id> <citing-id>` pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase};
use crate::train::TrainingExample;

pub const HAS_FEATURE: &str = "hasFeature";
pub const NEAR: &str = "near";
/// Domain names registered on the bundle's KB.
pub const DOCS: &str = "docs";
pub const FEATURES: &str = "features";
pub const LABELS: &str = "labels";
pub const DEFAULT_VAL_FRACTION: f64 = 0.25;

/// A KB of `hasFeature` and `near` facts with gold labels and a split.
/// The KB is left unfrozen so templates can add their own facts.
#[derive(Debug, Clone, Default)]
pub struct DatasetBundle {
    pub kb: KnowledgeBase,
    pub docs: Vec<EntityId>,
    pub features: Vec<EntityId>,
    pub labels: Vec<EntityId>,
    pub gold: BTreeMap<EntityId, EntityId>,
    pub train: Vec<EntityId>,
    pub val: Vec<EntityId>,
    pub test: Vec<EntityId>,
    pub unlabeled: Vec<EntityId>,
    pub dropped_docs: usize,
    pub dropped_citations: usize,
}

impl DatasetBundle {
    /// `(doc, gold label)` pairs for a set of documents.
    pub fn labeled(&self, docs: &[EntityId]) -> Vec<(EntityId, EntityId)> {
        docs.iter().map(|d| (*d, self.gold[d])).collect()
    }

    fn register_domains(&mut self) {
        self.kb.define_domain(DOCS, self.docs.clone());
        self.kb.define_domain(FEATURES, self.features.clone());
        self.kb.define_domain(LABELS, self.labels.clone());
    }
}

fn feature_name(i: usize) -> String {
    format!("w{i}")
}

fn ingest_err(line: usize, message: impl Into<String>) -> Error {
    Error::Ingest {
        line,
        message: message.into(),
    }
}

struct RawDoc {
    id: String,
    weights: Vec<f64>,
    label: String,
}

fn read_content<R: BufRead>(content: R) -> Result<Vec<RawDoc>> {
    let mut docs = Vec::new();
    let mut width = None;
    for (i, line) in content.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 3 {
            return Err(ingest_err(lineno, "expected `<doc-id> <features...> <label>`"));
        }
        let k = cols.len() - 2;
        if *width.get_or_insert(k) != k {
            return Err(ingest_err(
                lineno,
                format!("expected {} feature columns, found {k}", width.unwrap_or(k)),
            ));
        }
        let weights = cols[1..cols.len() - 1]
            .iter()
            .map(|c| match c.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(ingest_err(lineno, format!("bad feature value `{c}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        docs.push(RawDoc {
            id: cols[0].to_string(),
            weights,
            label: cols[cols.len() - 1].to_string(),
        });
    }
    Ok(docs)
}

/// Builds a bundle from LINQS-style content and cites readers. Every
/// document is labeled and unsplit; use [`make_split`] next.
pub fn load_citation_dataset<C: BufRead, E: BufRead>(content: C, cites: E) -> Result<DatasetBundle> {
    let raw = read_content(content)?;
    let mut b = DatasetBundle::default();
    let mut doc_ids: HashMap<String, EntityId> = HashMap::new();
    let mut used_features = BTreeSet::new();
    let labels: BTreeSet<&str> = raw
        .iter()
        .filter(|d| d.weights.iter().sum::<f64>() > 0.0)
        .map(|d| d.label.as_str())
        .collect();
    for d in &raw {
        let total: f64 = d.weights.iter().sum();
        if total <= 0.0 {
            log::warn!("document `{}` has no features; dropped", d.id);
            b.dropped_docs += 1;
            continue;
        }
        if labels.contains(d.id.as_str()) || d.id.starts_with('w') && d.id[1..].parse::<usize>().is_ok() {
            return Err(Error::Ingest {
                line: 0,
                message: format!("document id `{}` collides with a label or feature name", d.id),
            });
        }
        if doc_ids.contains_key(&d.id) {
            return Err(Error::Ingest {
                line: 0,
                message: format!("duplicate document id `{}`", d.id),
            });
        }
        let doc = b.kb.intern(&d.id)?;
        doc_ids.insert(d.id.clone(), doc);
        b.docs.push(doc);
        let label = b.kb.intern(&d.label)?;
        b.gold.insert(doc, label);
        for (j, &w) in d.weights.iter().enumerate() {
            if w > 0.0 {
                let f = b.kb.intern(&feature_name(j))?;
                used_features.insert(f);
                b.kb.add_fact(HAS_FEATURE, doc, f, w / total)?;
            }
        }
        b.kb.add_fact(NEAR, doc, doc, 1.0)?;
    }
    b.kb.ensure_relation(NEAR)?;
    b.kb.ensure_relation(HAS_FEATURE)?;
    for (i, line) in cites.lines().enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            [] => {}
            [cited, citing] => match (doc_ids.get(*cited), doc_ids.get(*citing)) {
                (Some(&a), Some(&c)) => {
                    b.kb.add_fact(NEAR, a, c, 1.0)?;
                    b.kb.add_fact(NEAR, c, a, 1.0)?;
                }
                _ => b.dropped_citations += 1,
            },
            _ => return Err(ingest_err(i + 1, "expected `<cited-id> <citing-id>`")),
        }
    }
    if b.dropped_citations > 0 {
        log::warn!("{} citations reference unknown documents; dropped", b.dropped_citations);
    }
    b.features = used_features.into_iter().collect();
    b.labels = labels.iter().map(|l| b.kb.entity(l).expect("interned")).collect();
    b.labels.sort_unstable();
    b.register_domains();
    Ok(b)
}

/// Stratified split: `per_class_train` documents per label, of which
/// `round(val_fraction · per_class_train)` go to validation; then `test_n`
/// test documents from the rest; everything else is unlabeled.
pub fn make_split(
    bundle: &DatasetBundle,
    per_class_train: usize,
    test_n: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must be in [0, 1), got {val_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for &d in &bundle.docs {
        if let Some(&y) = bundle.gold.get(&d) {
            by_class.entry(y).or_default().push(d);
        }
    }
    let n_val = (val_fraction * per_class_train as f64).round() as usize;
    let mut out = bundle.clone();
    out.train.clear();
    out.val.clear();
    out.test.clear();
    out.unlabeled.clear();
    let mut rest = Vec::new();
    for (&y, docs) in &by_class {
        if docs.len() < per_class_train {
            return Err(Error::Split {
                class: bundle.kb.entity_name(y).unwrap_or("?").to_string(),
                needed: per_class_train,
                available: docs.len(),
            });
        }
        let mut docs = docs.clone();
        docs.shuffle(&mut rng);
        out.val.extend_from_slice(&docs[..n_val]);
        out.train.extend_from_slice(&docs[n_val..per_class_train]);
        rest.extend_from_slice(&docs[per_class_train..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    if rest.len() < test_n {
        return Err(Error::Split {
            class: "test".into(),
            needed: test_n,
            available: rest.len(),
        });
    }
    out.test = rest[..test_n].to_vec();
    out.unlabeled = rest[test_n..].to_vec();
    let labeled: BTreeSet<EntityId> = bundle.gold.keys().copied().collect();
    out.unlabeled
        .extend(bundle.docs.iter().filter(|d| !labeled.contains(d)).copied());
    for v in [&mut out.train, &mut out.val, &mut out.test, &mut out.unlabeled] {
        v.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub vocab_per_class: usize,
    /// Probability that a token is drawn from the shared vocabulary.
    pub ambiguity: f64,
    pub docs: usize,
    /// Probability that a `near` edge joins two documents of the same class.
    pub graph_homophily: f64,
    pub seed: u64,
    pub doc_length: usize,
    pub shared_vocab: usize,
    pub edges_per_doc: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 2,
            vocab_per_class: 50,
            ambiguity: 0.6,
            docs: 1000,
            graph_homophily: 0.9,
            seed: 0,
            doc_length: 10,
            shared_vocab: 1000,
            edges_per_doc: 2,
        }
    }
}

/// Documents named `d<i>` with round-robin classes `c<k>`; class-pure
/// tokens `w<k>_<j>` and shared tokens `s<j>`. `near` is symmetric and
/// reflexive. All documents carry gold labels; the split is empty.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    if cfg.classes == 0 || cfg.docs == 0 || cfg.doc_length == 0 || cfg.vocab_per_class == 0 {
        return Err(Error::Config("synthetic sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.ambiguity) || !(0.0..=1.0).contains(&cfg.graph_homophily) {
        return Err(Error::Config("ambiguity and homophily must lie in [0, 1]".into()));
    }
    if cfg.ambiguity > 0.0 && cfg.shared_vocab == 0 {
        return Err(Error::Config("ambiguity > 0 needs a shared vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = DatasetBundle::default();
    b.labels = (0..cfg.classes)
        .map(|k| b.kb.intern(&format!("c{k}")))
        .collect::<Result<_>>()?;
    let pure: Vec<Vec<EntityId>> = (0..cfg.classes)
        .map(|k| {
            (0..cfg.vocab_per_class)
                .map(|j| b.kb.intern(&format!("w{k}_{j}")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let shared: Vec<EntityId> = (0..cfg.shared_vocab)
        .map(|j| b.kb.intern(&format!("s{j}")))
        .collect::<Result<_>>()?;
    let mut by_class: Vec<Vec<EntityId>> = vec![Vec::new(); cfg.classes];
    let mut used = BTreeSet::new();
    for i in 0..cfg.docs {
        let k = i % cfg.classes;
        let d = b.kb.intern(&format!("d{i}"))?;
        b.docs.push(d);
        b.gold.insert(d, b.labels[k]);
        by_class[k].push(d);
        let mut counts: BTreeMap<EntityId, f64> = BTreeMap::new();
        for _ in 0..cfg.doc_length {
            let tok = if rng.random::<f64>() < cfg.ambiguity {
                shared[rng.random_range(0..shared.len())]
            } else {
                pure[k][rng.random_range(0..cfg.vocab_per_class)]
            };
            *counts.entry(tok).or_insert(0.0) += 1.0;
        }
        for (f, c) in counts {
            used.insert(f);
            b.kb.add_fact(HAS_FEATURE, d, f, c / cfg.doc_length as f64)?;
        }
        b.kb.add_fact(NEAR, d, d, 1.0)?;
    }
    for (i, &d) in b.docs.iter().enumerate() {
        let k = i % cfg.classes;
        for _ in 0..cfg.edges_per_doc {
            let same = cfg.classes == 1 || rng.random::<f64>() < cfg.graph_homophily;
            let pool = if same {
                &by_class[k]
            } else {
                let mut other = rng.random_range(0..cfg.classes - 1);
                if other >= k {
                    other += 1;
                }
                &by_class[other]
            };
            let e = pool[rng.random_range(0..pool.len())];
            b.kb.add_fact(NEAR, d, e, 1.0)?;
            b.kb.add_fact(NEAR, e, d, 1.0)?;
        }
    }
    b.features = used.into_iter().collect();
    b.register_domains();
    Ok(b)
}

/// Reads `predicate<TAB>query<TAB>target` lines, interning entities.
pub fn load_examples_tsv<R: BufRead>(kb: &mut KnowledgeBase, reader: R) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [pred, q, t] = cols.as_slice() else {
            return Err(ingest_err(i + 1, "expected `predicate<TAB>query<TAB>target`"));
        };
        if pred.is_empty() || q.is_empty() || t.is_empty() {
            return Err(ingest_err(i + 1, "empty field"));
        }
        let q = kb.intern(q)?;
        let t = kb.intern(t)?;
        out.push(TrainingExample::new(pred, q, t));
    }
    Ok(out)
}
