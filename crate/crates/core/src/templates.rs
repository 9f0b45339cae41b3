//! Rule, fact and example generators for the entropic constraint templates.
//!
//! Every generator returns the program fragment it emitted and the
//! `(head, x, low)` examples; auxiliary facts are written straight into the
//! (unfrozen) KB. Emitting the same template twice leaves the KB unchanged.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, LOW};
use crate::rules::{parse_program, Program};
use crate::train::TrainingExample;

pub const ER_HEAD: &str = "predictionHasEntropy";
pub const NBER_HEAD: &str = "neighborPredictionsHaveEntropy";
pub const LPER_HEAD: &str = "nearbyPredictionsHaveEntropy";
pub const LPER_SIM: &str = "sim";
pub const COLPER_HEAD: &str = "colinkedPredictionsHaveEntropy";
pub const COLPER_SIM: &str = "cosim";
pub const PAIR_HEAD: &str = "pairPredictionsHaveEntropy";
pub const SET_HEAD: &str = "setPredictionsHaveEntropy";
pub const HAS_EXAMPLE: &str = "hasExample";
pub const HAS_EXAMPLE_SET: &str = "hasExampleSet";
pub const IN_PAIR: &str = "inPair";
pub const HAS_TYPE: &str = "hasType";
pub const DEFAULT_GROUP_CAP: usize = 20;
pub const DEFAULT_SET_DEPTH: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConstraintKind {
    Er,
    Ct,
    CtTyped,
    Nber,
    Lper,
    Colper,
    NberPair,
    ColperSet,
}

impl ConstraintKind {
    pub fn is_recursive(self) -> bool {
        matches!(self, ConstraintKind::Lper | ConstraintKind::Colper | ConstraintKind::ColperSet)
    }

    /// Head predicate of the entropy examples this kind emits.
    pub fn head(self) -> &'static str {
        match self {
            ConstraintKind::Er | ConstraintKind::Ct | ConstraintKind::CtTyped => ER_HEAD,
            ConstraintKind::Nber => NBER_HEAD,
            ConstraintKind::Lper => LPER_HEAD,
            ConstraintKind::Colper => COLPER_HEAD,
            ConstraintKind::NberPair => PAIR_HEAD,
            ConstraintKind::ColperSet => SET_HEAD,
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintKind::Er => "ER",
            ConstraintKind::Ct => "CT",
            ConstraintKind::CtTyped => "CT_TYPED",
            ConstraintKind::Nber => "NBER",
            ConstraintKind::Lper => "LPER",
            ConstraintKind::Colper => "COLPER",
            ConstraintKind::NberPair => "NBER_PAIR",
            ConstraintKind::ColperSet => "COLPER_SET",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    #[default]
    Document,
    Section,
}

/// One constraint as configured for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    #[serde(default = "default_near")]
    pub near: String,
    #[serde(default = "default_depth")]
    pub depth: i64,
    /// `(relation, type)` pairs; only for `CT_TYPED`.
    #[serde(default)]
    pub has_type: Vec<(String, String)>,
    #[serde(default)]
    pub group_key: GroupKey,
    /// Cap on the unlabeled examples drawn for this constraint.
    #[serde(default)]
    pub max_unlabeled: Option<usize>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_near() -> String {
    "near".into()
}

fn default_depth() -> i64 {
    DEFAULT_SET_DEPTH
}

fn default_weight() -> f64 {
    1.0
}

impl ConstraintSpec {
    pub fn new(kind: ConstraintKind) -> Self {
        ConstraintSpec {
            kind,
            near: default_near(),
            depth: default_depth(),
            has_type: Vec::new(),
            group_key: GroupKey::Document,
            max_unlabeled: None,
            weight: default_weight(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.kind.is_recursive() && self.depth < 1 {
            return Err(Error::Config(format!("{} needs depth >= 1, got {}", self.kind, self.depth)));
        }
        if (self.kind == ConstraintKind::CtTyped) != !self.has_type.is_empty() {
            return Err(Error::Config("hasType facts are given exactly for CT_TYPED".into()));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Config(format!("constraint weight must be >= 0, got {}", self.weight)));
        }
        Ok(())
    }
}

/// A generated program fragment plus its entropy-target examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Emitted {
    pub head: String,
    pub program: Program,
    pub examples: Vec<TrainingExample>,
    /// Facts written to the KB: `(relation, head, tail)`, all weight 1.
    pub facts: Vec<(String, EntityId, EntityId)>,
}

fn low_examples(kb: &mut KnowledgeBase, head: &str, xs: &[EntityId]) -> Result<Vec<TrainingExample>> {
    let low = kb.intern(LOW)?;
    Ok(xs.iter().map(|&x| TrainingExample::new(head, x, low)).collect())
}

fn fact(kb: &mut KnowledgeBase, out: &mut Vec<(String, EntityId, EntityId)>, rel: &str, h: EntityId, t: EntityId) -> Result<()> {
    kb.add_fact(rel, h, t, 1.0)?;
    out.push((rel.to_string(), h, t));
    Ok(())
}

/// `predict(X,Y) :- hasFeature(X,F), indicates(F,Y).` with a zero-initialized
/// trainable `indicates` over `feature_domain × label_domain` and a softmax
/// on `predict`.
pub fn emit_classifier(
    predict: &str,
    has_feature: &str,
    indicates: &str,
    feature_domain: &str,
    label_domain: &str,
) -> Result<Program> {
    parse_program(&format!(
        "#trainable {indicates} {feature_domain} {label_domain} init=zeros\n\
         #softmax {predict}\n\
         {predict}(X,Y) :- {has_feature}(X,F), {indicates}(F,Y).\n"
    ))
}

pub fn emit_er(kb: &mut KnowledgeBase, predict: &str, unlabeled: &[EntityId]) -> Result<Emitted> {
    Ok(Emitted {
        head: ER_HEAD.into(),
        program: parse_program(&format!("{ER_HEAD}(X,H) :- {predict}(X,Y), entropy(Y,H).\n"))?,
        examples: low_examples(kb, ER_HEAD, unlabeled)?,
        facts: Vec::new(),
    })
}

/// One feature view of a two-view co-training setup.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub has_feature: String,
    pub feature_domain: String,
}

/// Two classifiers `predict1`/`predict2` over separate feature views with
/// their own trainable `indicates1`/`indicates2`, merged disjunctively into
/// `predict`, plus the ER rule over the merge.
pub fn emit_cotrain(
    kb: &mut KnowledgeBase,
    views: [&View; 2],
    label_domain: &str,
    unlabeled: &[EntityId],
) -> Result<Emitted> {
    let mut text = String::new();
    for (i, v) in views.iter().enumerate() {
        let n = i + 1;
        text.push_str(&format!(
            "#trainable indicates{n} {} {label_domain} init=zeros\n#softmax predict{n}\n\
             predict{n}(X,Y) :- {}(X,F), indicates{n}(F,Y).\n\
             predict(X,Y) :- predict{n}(X,Y).\n",
            v.feature_domain, v.has_feature
        ));
    }
    text.push_str(&format!("{ER_HEAD}(X,H) :- predict(X,Y), entropy(Y,H).\n"));
    Ok(Emitted {
        head: ER_HEAD.into(),
        program: parse_program(&text)?,
        examples: low_examples(kb, ER_HEAD, unlabeled)?,
        facts: Vec::new(),
    })
}

/// Relation/type agreement: `predict(X,T)` merges the type classifier with
/// the relation classifier mapped through `hasType`.
pub fn emit_cotrain_typed(
    kb: &mut KnowledgeBase,
    predict_r: &str,
    predict_t: &str,
    has_type: &[(String, String)],
    unlabeled: &[EntityId],
) -> Result<Emitted> {
    let mut facts = Vec::new();
    for (r, t) in has_type {
        let r = kb
            .entity(r)
            .ok_or_else(|| Error::UnknownSymbol(format!("relation constant `{r}`")))?;
        let t = kb
            .entity(t)
            .ok_or_else(|| Error::UnknownSymbol(format!("type constant `{t}`")))?;
        fact(kb, &mut facts, HAS_TYPE, r, t)?;
    }
    let program = parse_program(&format!(
        "predict(X,T) :- {predict_t}(X,T).\n\
         predict(X,T) :- {predict_r}(X,R), {HAS_TYPE}(R,T).\n\
         {ER_HEAD}(X,H) :- predict(X,T), entropy(T,H).\n"
    ))?;
    Ok(Emitted {
        head: ER_HEAD.into(),
        program,
        examples: low_examples(kb, ER_HEAD, unlabeled)?,
        facts,
    })
}

/// NBER, LPER or COLPER over `near`. LPER and COLPER get their own head and
/// similarity predicates so both can be combined in one program.
pub fn emit_network(
    kb: &mut KnowledgeBase,
    kind: ConstraintKind,
    predict: &str,
    near: &str,
    depth: i64,
    unlabeled: &[EntityId],
) -> Result<Emitted> {
    if depth < 1 {
        return Err(Error::Config(format!("{kind} needs depth >= 1, got {depth}")));
    }
    let text = match kind {
        ConstraintKind::Nber => format!(
            "{NBER_HEAD}(X1,H) :- {near}(X1,X2), {predict}(X2,Y2), entropy(Y2,H).\n"
        ),
        ConstraintKind::Lper => format!(
            "#maxdepth {LPER_SIM} {depth}\n\
             {LPER_HEAD}(X1,H) :- {LPER_SIM}(X1,X3), {predict}(X3,Y3), entropy(Y3,H).\n\
             {LPER_SIM}(X1,X3) :- {near}(X1,X3).\n\
             {LPER_SIM}(X1,X3) :- {near}(X1,X2), {LPER_SIM}(X2,X3).\n"
        ),
        ConstraintKind::Colper => format!(
            "#maxdepth {COLPER_SIM} {depth}\n\
             {COLPER_HEAD}(X1,H) :- {COLPER_SIM}(X1,X3), {predict}(X3,Y3), entropy(Y3,H).\n\
             {COLPER_SIM}(X1,X3) :- {near}(X1,X3).\n\
             {COLPER_SIM}(X1,X3) :- {near}(X1,Z), {near}(Z,X2), {COLPER_SIM}(X2,X3).\n"
        ),
        other => return Err(Error::Config(format!("{other} is not a network constraint"))),
    };
    let head = kind.head();
    Ok(Emitted {
        head: head.into(),
        program: parse_program(&text)?,
        examples: low_examples(kb, head, unlabeled)?,
        facts: Vec::new(),
    })
}

/// A group of mentions expected to share a label, named by its document or
/// section.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionGroup {
    pub key: String,
    pub mentions: Vec<EntityId>,
}

/// Pair-level (NBER_PAIR) or set-level (COLPER_SET) agreement over mention
/// groups. Each mention pair gets a virtual entity
/// `pair::<key>::<mention>::<mention>`; groups above `cap` mentions are
/// subsampled to `cap` with a stream seeded by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn emit_pair_groups(
    kb: &mut KnowledgeBase,
    kind: ConstraintKind,
    predict: &str,
    groups: &[MentionGroup],
    group_key: GroupKey,
    cap: usize,
    depth: i64,
    seed: u64,
) -> Result<Emitted> {
    let text = match kind {
        ConstraintKind::NberPair => format!(
            "{PAIR_HEAD}(P,H) :- {HAS_EXAMPLE}(P,X1), {predict}(X1,Y), entropy(Y,H).\n"
        ),
        ConstraintKind::ColperSet => {
            if depth < 1 {
                return Err(Error::Config(format!("{kind} needs depth >= 1, got {depth}")));
            }
            format!(
                "#maxdepth {HAS_EXAMPLE_SET} {depth}\n\
                 {SET_HEAD}(P,H) :- {HAS_EXAMPLE_SET}(P,X2), {predict}(X2,Y), entropy(Y,H).\n\
                 {HAS_EXAMPLE_SET}(P,X2) :- {HAS_EXAMPLE}(P,X2).\n\
                 {HAS_EXAMPLE_SET}(P,X2) :- {HAS_EXAMPLE}(P,X1), {IN_PAIR}(X1,P2), {HAS_EXAMPLE_SET}(P2,X2).\n"
            )
        }
        other => return Err(Error::Config(format!("{other} is not a pair/set constraint"))),
    };
    if cap < 2 {
        return Err(Error::Config(format!("group cap must be >= 2, got {cap}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Vec::new();
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for g in groups {
        let mut mentions: Vec<EntityId> = g.mentions.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if mentions.len() < 2 {
            log::warn!("{group_key:?} group `{}` has fewer than two mentions; skipped", g.key);
            continue;
        }
        if mentions.len() > cap {
            mentions = mentions.choose_multiple(&mut rng, cap).copied().collect();
            mentions.sort_unstable();
        }
        for a in 0..mentions.len() {
            for b in a + 1..mentions.len() {
                let (xi, xj) = (mentions[a], mentions[b]);
                let name = format!(
                    "pair::{}::{}::{}",
                    g.key,
                    kb.entity_name(xi).unwrap_or("?"),
                    kb.entity_name(xj).unwrap_or("?")
                );
                let p = kb.intern(&name)?;
                if !seen.insert(p) {
                    continue;
                }
                pairs.push(p);
                fact(kb, &mut facts, HAS_EXAMPLE, p, xi)?;
                fact(kb, &mut facts, HAS_EXAMPLE, p, xj)?;
                if kind == ConstraintKind::ColperSet {
                    fact(kb, &mut facts, IN_PAIR, xi, p)?;
                    fact(kb, &mut facts, IN_PAIR, xj, p)?;
                }
            }
        }
    }
    let head = kind.head();
    Ok(Emitted {
        head: head.into(),
        program: parse_program(&text)?,
        examples: low_examples(kb, head, &pairs)?,
        facts,
    })
}

/// Adds `near(d,d)` for every document and the reverse of every stored
/// `near` edge.
pub fn close_near(kb: &mut KnowledgeBase, near: &str, docs: &[EntityId]) -> Result<()> {
    let edges = kb.relation(near).map(|r| r.facts()).unwrap_or_default();
    for (a, b, w) in edges {
        if kb.weight(near, b, a).is_none() {
            kb.add_fact(near, b, a, w)?;
        }
    }
    for &d in docs {
        kb.add_fact(near, d, d, 1.0)?;
    }
    Ok(())
}

/// At most `n` entities drawn without replacement, in their original order.
pub fn subsample(xs: &[EntityId], n: Option<usize>, seed: u64) -> Vec<EntityId> {
    match n {
        Some(n) if n < xs.len() => {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.truncate(n);
            idx.sort_unstable();
            idx.into_iter().map(|i| xs[i]).collect()
        }
        _ => xs.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_check() {
        let mut s = ConstraintSpec::new(ConstraintKind::Lper);
        s.depth = 0;
        assert!(s.check().is_err());
        let mut t = ConstraintSpec::new(ConstraintKind::Er);
        t.has_type.push(("a".into(), "b".into()));
        assert!(t.check().is_err());
        assert!(ConstraintSpec::new(ConstraintKind::CtTyped).check().is_err());
    }

    #[test]
    fn subsample_is_ordered_and_bounded() {
        let xs: Vec<EntityId> = (10..30).collect();
        let s = subsample(&xs, Some(5), 1);
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&xs, None, 1), xs);
    }
}
