//! Weighted multi-head training and evaluation metrics.
//!
//! The objective is `l_predict + Σᵢ wᵢ · l_i`, where every head loss is the
//! mean cross-entropy over that head's own examples. Each optimizer step
//! draws one minibatch from every active head; heads cycle through their
//! examples independently, reshuffling on wrap-around.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{ExampleLoss, Gradients, Session, StaticRows};
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, ParamSnapshot, RelId};
use crate::plan::Plan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub predicate: String,
    pub query: EntityId,
    pub target: EntityId,
}

impl TrainingExample {
    pub fn new(predicate: &str, query: EntityId, target: EntityId) -> Self {
        TrainingExample {
            predicate: predicate.to_string(),
            query,
            target,
        }
    }
}

/// One weighted term of the training objective.
#[derive(Debug, Clone)]
pub struct LossHead {
    pub name: String,
    pub plan: Plan,
    pub examples: Vec<(EntityId, EntityId)>,
    pub weight: f64,
}

impl LossHead {
    /// Builds a head; every example must query the plan's target predicate.
    pub fn new(name: &str, plan: Plan, examples: &[TrainingExample], weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Config(format!("head `{name}` has invalid weight {weight}")));
        }
        for ex in examples {
            if ex.predicate != plan.target {
                return Err(Error::Config(format!(
                    "head `{name}` compiles `{}` but has an example for `{}`",
                    plan.target, ex.predicate
                )));
            }
        }
        Ok(LossHead {
            name: name.to_string(),
            examples: examples.iter().map(|e| (e.query, e.target)).collect(),
            plan,
            weight,
        })
    }

    fn check(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config(format!(
                "head `{}` has invalid weight {}",
                self.name, self.weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub name: String,
    pub weight: f64,
    /// Mean over scored examples; 0 for an empty head.
    pub loss: f64,
    pub scored: usize,
    pub skipped: usize,
}

/// Full-data mean loss of every head under the current parameters.
pub fn head_losses(heads: &[LossHead], kb: &KnowledgeBase) -> Result<Vec<HeadLoss>> {
    head_losses_cached(heads, kb, &mut vec![StaticRows::default(); heads.len()])
}

fn head_losses_cached(heads: &[LossHead], kb: &KnowledgeBase, caches: &mut [StaticRows]) -> Result<Vec<HeadLoss>> {
    heads
        .iter()
        .zip(caches.iter_mut())
        .map(|(h, cache)| {
            h.check()?;
            let mut session = Session::with_static_rows(&h.plan, kb, std::mem::take(cache))?;
            let (mut total, mut scored, mut skipped) = (0.0, 0, 0);
            for &(q, t) in &h.examples {
                match session.example_loss(q, t)? {
                    ExampleLoss::Skipped => skipped += 1,
                    ExampleLoss::Scored { loss, .. } => {
                        total += loss;
                        scored += 1;
                    }
                }
            }
            *cache = session.into_static_rows();
            Ok(HeadLoss {
                name: h.name.clone(),
                weight: h.weight,
                loss: if scored > 0 { total / scored as f64 } else { 0.0 },
                scored,
                skipped,
            })
        })
        .collect()
}

/// `Σ_h w_h · l_h`; the supervised head carries weight 1.
pub fn combine(losses: &[HeadLoss]) -> f64 {
    losses
        .iter()
        .filter(|h| h.weight > 0.0)
        .map(|h| h.weight * h.loss)
        .sum()
}

pub fn total_loss(heads: &[LossHead], kb: &KnowledgeBase) -> Result<f64> {
    Ok(combine(&head_losses(heads, kb)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::default(),
            seed: 0,
            patience: Some(20),
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "epochs, batch size and learning rate must be positive".into(),
            ));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Config("invalid Adam parameters".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub heads: Vec<HeadLoss>,
    pub total: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 means the initial parameters).
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Examples dropped during training steps for lack of support.
    pub skipped_examples: usize,
}

impl History {
    /// CSV `epoch,head,loss,val_accuracy`, one row per head plus a `total` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,head,loss,val_accuracy")?;
        for r in &self.epochs {
            let acc = r.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
            for h in &r.heads {
                writeln!(out, "{},{},{},{}", r.epoch, h.name, h.loss, acc)?;
            }
            writeln!(out, "{},total,{},{}", r.epoch, r.total, acc)?;
        }
        Ok(())
    }
}

/// Held-out examples used for model selection and early stopping.
pub struct Validation<'a> {
    pub plan: &'a Plan,
    pub examples: &'a [(EntityId, EntityId)],
}

struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Cycler { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        let mut out = Vec::with_capacity(size.min(n));
        while out.len() < size.min(n) {
            if self.pos == n {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Gradients,
        v: Gradients,
    },
}

impl OptState {
    fn new(opt: Optimizer, kb: &KnowledgeBase) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, eps } => OptState::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: Gradients::zeros(kb),
                v: Gradients::zeros(kb),
            },
        }
    }

    fn step(&mut self, kb: &mut KnowledgeBase, grads: &Gradients, lr: f64) -> Result<()> {
        match self {
            OptState::Sgd => {
                for (&r, g) in &grads.by_relation {
                    let w = kb.values_mut_by_id(r)?;
                    for (x, d) in w.iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (&r, g) in &grads.by_relation {
                    let mr = m.by_relation.get_mut(&r).unwrap();
                    let vr = v.by_relation.get_mut(&r).unwrap();
                    let w = kb.values_mut_by_id(r)?;
                    for k in 0..g.len() {
                        mr[k] = *beta1 * mr[k] + (1.0 - *beta1) * g[k];
                        vr[k] = *beta2 * vr[k] + (1.0 - *beta2) * g[k] * g[k];
                        let mhat = mr[k] / c1;
                        let vhat = vr[k] / c2;
                        w[k] -= lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains the KB's trainable relations. Returns the parameters with the best
/// validation accuracy (or the final parameters without validation), which
/// are also left installed in `kb`.
pub fn train(
    heads: &[LossHead],
    kb: &mut KnowledgeBase,
    config: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<(ParamSnapshot, History)> {
    config.check()?;
    for h in heads {
        h.check()?;
    }
    if !kb.is_frozen() {
        return Err(Error::NotFrozen("training".into()));
    }
    let active: Vec<usize> = (0..heads.len())
        .filter(|&i| heads[i].weight > 0.0 && !heads[i].examples.is_empty())
        .collect();
    let mut cyclers: Vec<Cycler> = heads
        .iter()
        .enumerate()
        .map(|(i, h)| {
            Cycler::new(
                h.examples.len(),
                config.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )
        })
        .collect();
    let steps = active
        .iter()
        .map(|&i| heads[i].examples.len().div_ceil(config.batch_size))
        .max()
        .unwrap_or(0);
    let mut caches = vec![StaticRows::default(); heads.len()];
    let mut opt = OptState::new(config.optimizer, kb);
    let mut history = History::default();
    let validate = |kb: &KnowledgeBase| -> Result<Option<f64>> {
        match &validation {
            Some(v) if !v.examples.is_empty() => Ok(Some(evaluate_accuracy(v.plan, kb, v.examples)?)),
            _ => Ok(None),
        }
    };
    let mut best = kb.params()?;
    let mut best_acc = validate(kb)?;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        for _ in 0..steps {
            let mut total = Gradients::zeros(kb);
            for &i in &active {
                let head = &heads[i];
                let batch: Vec<(EntityId, EntityId)> = cyclers[i]
                    .next_batch(config.batch_size)
                    .into_iter()
                    .map(|k| head.examples[k])
                    .collect();
                let mut session = Session::with_static_rows(&head.plan, kb, std::mem::take(&mut caches[i]))?;
                let result = session.forward_backward(&batch)?;
                caches[i] = session.into_static_rows();
                history.skipped_examples += result.skipped;
                if !result.loss.is_finite() {
                    return Err(Error::Divergence(epoch));
                }
                total.add_scaled(head.weight, &result.grads);
            }
            opt.step(kb, &total, config.learning_rate)?;
        }
        let losses = head_losses_cached(heads, kb, &mut caches)?;
        let total = combine(&losses);
        if !total.is_finite() {
            return Err(Error::Divergence(epoch));
        }
        let acc = validate(kb)?;
        history.epochs.push(EpochRecord {
            epoch,
            heads: losses,
            total,
            val_accuracy: acc,
        });
        match (acc, best_acc) {
            (Some(a), Some(b)) if a > b => {
                best_acc = Some(a);
                best = kb.params()?;
                history.best_epoch = epoch;
                since_best = 0;
            }
            (Some(_), Some(_)) => {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
            _ => {
                best = kb.params()?;
                history.best_epoch = epoch;
            }
        }
    }
    if history.skipped_examples > 0 {
        log::warn!(
            "{} training examples had empty support and were skipped",
            history.skipped_examples
        );
    }
    kb.set_params(&best)?;
    history.best_val_accuracy = best_acc;
    Ok((best, history))
}

/// Argmax label per query (ties go to the lowest entity id); `None` for empty support.
pub fn predict_labels(plan: &Plan, kb: &KnowledgeBase, queries: &[EntityId]) -> Result<Vec<Option<EntityId>>> {
    let mut session = Session::new(plan, kb)?;
    queries
        .iter()
        .map(|&q| {
            let out = session.output(q)?;
            let mut best: Option<(EntityId, f64)> = None;
            for (e, v) in out.iter() {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((e, v));
                }
            }
            Ok(best.map(|(e, _)| e))
        })
        .collect()
}

/// Fraction of queries whose argmax prediction equals the gold label.
/// Queries with empty support count as incorrect.
pub fn evaluate_accuracy(plan: &Plan, kb: &KnowledgeBase, test: &[(EntityId, EntityId)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("accuracy needs a nonempty test set".into()));
    }
    let queries: Vec<EntityId> = test.iter().map(|&(q, _)| q).collect();
    let predictions = predict_labels(plan, kb, &queries)?;
    let mut correct = 0;
    let mut empty = 0;
    for (p, &(_, gold)) in predictions.iter().zip(test) {
        match p {
            Some(label) if *label == gold => correct += 1,
            None => empty += 1,
            _ => {}
        }
    }
    if empty > 0 {
        log::warn!("{empty} test queries had empty support and were counted incorrect");
    }
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was retrieved; precision is reported as 0.
    pub empty_retrieval: bool,
}

/// Precision, recall and F1 of a retrieved (mention, relation) set against gold pairs.
pub fn retrieval_scores(
    retrieved: &BTreeSet<(EntityId, EntityId)>,
    gold: &BTreeSet<(EntityId, EntityId)>,
) -> RetrievalScores {
    let tp = retrieved.intersection(gold).count() as f64;
    let precision = if retrieved.is_empty() {
        0.0
    } else {
        tp / retrieved.len() as f64
    };
    let recall = if gold.is_empty() { 0.0 } else { tp / gold.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RetrievalScores {
        precision,
        recall,
        f1,
        empty_retrieval: retrieved.is_empty(),
    }
}

/// Predicts every mention, drops those predicted as `other_label`, and
/// scores the remaining (mention, relation) pairs against `gold`.
pub fn evaluate_retrieval_f1(
    plan: &Plan,
    kb: &KnowledgeBase,
    mentions: &[EntityId],
    gold: &BTreeSet<(EntityId, EntityId)>,
    other_label: EntityId,
) -> Result<RetrievalScores> {
    let predictions = predict_labels(plan, kb, mentions)?;
    let retrieved: BTreeSet<(EntityId, EntityId)> = mentions
        .iter()
        .zip(predictions)
        .filter_map(|(&m, p)| p.filter(|&l| l != other_label).map(|l| (m, l)))
        .collect();
    let scores = retrieval_scores(&retrieved, gold);
    if scores.empty_retrieval {
        log::warn!("retrieval set is empty; precision reported as 0");
    }
    Ok(scores)
}

/// Writes every trainable relation as facts TSV.
pub fn save_checkpoint<W: Write>(kb: &KnowledgeBase, out: W) -> Result<()> {
    kb.write_facts_tsv(&kb.trainable_names(), out)
}

/// Restores trainable weights written by [`save_checkpoint`] into a frozen KB.
pub fn load_checkpoint<R: BufRead>(kb: &mut KnowledgeBase, input: R) -> Result<usize> {
    if !kb.is_frozen() {
        return Err(Error::NotFrozen("loading a checkpoint".into()));
    }
    kb.read_facts_tsv(input)
}

/// Relation ids that a set of heads can update.
pub fn trainable_in_heads(heads: &[LossHead], kb: &KnowledgeBase) -> Vec<RelId> {
    let mut ids: Vec<RelId> = heads
        .iter()
        .flat_map(|h| h.plan.relations())
        .filter(|&r| kb.relation_by_id(r).is_trainable())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retrieval_arithmetic() {
        let gold: BTreeSet<_> = [(1, 10), (2, 10), (3, 11), (4, 11)].into();
        let exact = retrieval_scores(&gold, &gold);
        assert_eq!((exact.precision, exact.recall, exact.f1), (1.0, 1.0, 1.0));
        let retrieved: BTreeSet<_> = [(1, 10), (2, 10), (5, 10), (6, 11)].into();
        let s = retrieval_scores(&retrieved, &gold);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        let none = retrieval_scores(&BTreeSet::new(), &gold);
        assert!(none.empty_retrieval);
        assert_eq!(none.precision, 0.0);
    }

    #[test]
    fn combine_weights() {
        let h = |name: &str, w, l| HeadLoss {
            name: name.into(),
            weight: w,
            loss: l,
            scored: 1,
            skipped: 0,
        };
        let total = combine(&[h("predict", 1.0, 0.7), h("a", 1.0, 0.5), h("b", 2.0, 0.25)]);
        assert!((total - 1.7).abs() < 1e-12);
        assert_eq!(combine(&[h("predict", 1.0, 0.7), h("a", 0.0, 0.5)]), 0.7);
    }

    #[test]
    fn cycler_covers_all_before_repeating() {
        let mut c = Cycler::new(5, 3);
        let mut seen: Vec<usize> = c.next_batch(3);
        seen.extend(c.next_batch(2));
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.next_batch(10).len(), 5);
    }
}
