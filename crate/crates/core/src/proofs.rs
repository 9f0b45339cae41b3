//! Top-down proof enumeration, used as an oracle for compiled evaluation.
//!
//! Recursion is cut off at the same unroll depth the compiler uses, and
//! `#softmax` directives are ignored, so per-answer proof-weight sums equal
//! a plan's pre-normalization scores.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase};
use crate::rules::{ValidatedProgram, ENTROPY};

pub const PROOF_BUDGET: usize = 1_000_000;

/// A fact used by a proof: `relation(head, tail)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactRef {
    pub relation: String,
    pub head: EntityId,
    pub tail: EntityId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProofTrace {
    pub answer: EntityId,
    /// Product of the weights of `facts`; rules contribute a factor of 1.
    pub weight: f64,
    pub facts: Vec<FactRef>,
}

struct Prover<'a> {
    vp: &'a ValidatedProgram,
    kb: &'a KnowledgeBase,
    default_depth: i64,
    produced: usize,
}

impl Prover<'_> {
    fn depth(&self, pred: &str) -> Result<usize> {
        let d = self.vp.max_depth(pred).unwrap_or(self.default_depth);
        if d <= 0 {
            return Err(Error::Config(format!("unroll depth for `{pred}` must be positive")));
        }
        Ok(d as usize)
    }

    fn top_level(&self, pred: &str) -> Result<usize> {
        if self.vp.is_recursive(pred) {
            Ok(self.depth(pred)? - 1)
        } else {
            Ok(0)
        }
    }

    fn charge(&mut self, n: usize) -> Result<()> {
        self.produced += n;
        if self.produced > PROOF_BUDGET {
            return Err(Error::OracleBudget(PROOF_BUDGET));
        }
        Ok(())
    }

    fn prove(&mut self, pred: &str, level: usize, x: EntityId) -> Result<Vec<ProofTrace>> {
        let mut out = Vec::new();
        if let Some(rel) = self.kb.relation(pred) {
            let row: Vec<(EntityId, EntityId, f64)> = match rel.matrix() {
                Some(m) => m.row_range(x).map(|k| (x, m.col(k), m.value(k))).collect(),
                None => rel.facts().into_iter().filter(|f| f.0 == x).collect(),
            };
            for (h, t, w) in row {
                {
                    out.push(ProofTrace {
                        answer: t,
                        weight: w,
                        facts: vec![FactRef {
                            relation: pred.to_string(),
                            head: h,
                            tail: t,
                            weight: w,
                        }],
                    });
                }
            }
        } else if !self.vp.defines(pred) {
            return Err(Error::UnknownPredicate(pred.to_string()));
        }
        let rules: Vec<_> = self.vp.rules_for(pred).cloned().collect();
        if self.vp.is_recursive(pred)
            && self.kb.relation(pred).is_none()
            && rules.iter().all(|r| self.vp.rule_is_recursive(r))
        {
            return Err(Error::NoBaseCase(pred.to_string()));
        }
        for rule in &rules {
            if level == 0 && self.vp.rule_is_recursive(rule) {
                continue;
            }
            let mut partial = vec![ProofTrace {
                answer: x,
                weight: 1.0,
                facts: vec![],
            }];
            for atom in &rule.body {
                if atom.predicate == ENTROPY {
                    return Err(Error::Config(format!(
                        "`{ENTROPY}` is computed, not proved; cannot enumerate `{}`",
                        rule.head.predicate
                    )));
                }
                let sub_level = if self.vp.same_component(pred, &atom.predicate) {
                    level - 1
                } else {
                    self.top_level(&atom.predicate)?
                };
                let mut next = Vec::new();
                for p in &partial {
                    let continuations = self.prove(&atom.predicate, sub_level, p.answer)?;
                    self.charge(continuations.len())?;
                    for q in continuations {
                        let mut facts = p.facts.clone();
                        facts.extend(q.facts);
                        next.push(ProofTrace {
                            answer: q.answer,
                            weight: p.weight * q.weight,
                            facts,
                        });
                    }
                }
                partial = next;
            }
            out.extend(partial);
        }
        Ok(out)
    }
}

/// All proofs of `target(query, Y)`. `depth` is the unroll depth for
/// recursive predicates without a `#maxdepth` directive.
pub fn enumerate_proofs(
    vp: &ValidatedProgram,
    kb: &KnowledgeBase,
    target: &str,
    query: EntityId,
    depth: i64,
) -> Result<Vec<ProofTrace>> {
    if query >= kb.num_entities() {
        return Err(Error::Index {
            index: query,
            size: kb.num_entities(),
        });
    }
    if depth <= 0 {
        return Err(Error::Config(format!("depth must be positive, got {depth}")));
    }
    let mut prover = Prover {
        vp,
        kb,
        default_depth: depth,
        produced: 0,
    };
    let level = prover.top_level(target)?;
    prover.prove(target, level, query)
}

/// Per-answer sums of proof weights.
pub fn answer_scores(proofs: &[ProofTrace]) -> BTreeMap<EntityId, f64> {
    let mut scores = BTreeMap::new();
    for p in proofs {
        *scores.entry(p.answer).or_insert(0.0) += p.weight;
    }
    scores
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{parse_program, validate_program};

    #[test]
    fn classifier_proofs() {
        let mut kb = KnowledgeBase::new();
        kb.add_fact_named("hasFeature", "x1", "pars", 0.6).unwrap();
        kb.add_fact_named("hasFeature", "x1", "lstm", 0.4).unwrap();
        kb.add_fact_named("indicates", "pars", "accept", 0.2).unwrap();
        kb.add_fact_named("indicates", "lstm", "reject", 0.3).unwrap();
        kb.freeze().unwrap();
        let p = parse_program("predict(X,Y) :- hasFeature(X,F), indicates(F,Y).").unwrap();
        let vp = validate_program(&p, &kb).unwrap();
        let x1 = kb.entity("x1").unwrap();
        let proofs = enumerate_proofs(&vp, &kb, "predict", x1, 3).unwrap();
        assert_eq!(proofs.len(), 2);
        for proof in &proofs {
            assert!((proof.weight - 0.12).abs() < 1e-15);
            let product: f64 = proof.facts.iter().map(|f| f.weight).product();
            assert_eq!(product, proof.weight);
        }
    }

    #[test]
    fn empty_kb_has_no_proofs() {
        let mut kb = KnowledgeBase::new();
        kb.intern("x").unwrap();
        kb.ensure_relation("hasFeature").unwrap();
        kb.ensure_relation("indicates").unwrap();
        kb.freeze().unwrap();
        let p = parse_program("predict(X,Y) :- hasFeature(X,F), indicates(F,Y).").unwrap();
        let vp = validate_program(&p, &kb).unwrap();
        assert!(enumerate_proofs(&vp, &kb, "predict", 2, 3).unwrap().is_empty());
    }

    #[test]
    fn budget_guard() {
        let mut kb = KnowledgeBase::new();
        let ids: Vec<_> = (0..12).map(|i| kb.intern(&format!("e{i}")).unwrap()).collect();
        for &a in &ids {
            for &b in &ids {
                kb.add_fact("r", a, b, 1.0).unwrap();
            }
        }
        kb.freeze().unwrap();
        let p = parse_program("p(X,Y) :- r(X,A), r(A,B), r(B,C), r(C,D), r(D,E), r(E,Y).").unwrap();
        let vp = validate_program(&p, &kb).unwrap();
        assert_eq!(
            enumerate_proofs(&vp, &kb, "p", ids[0], 3),
            Err(Error::OracleBudget(PROOF_BUDGET))
        );
    }
}
