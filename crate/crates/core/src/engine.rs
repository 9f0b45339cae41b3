//! Forward evaluation and reverse-mode differentiation of compiled plans.
//!
//! A [`Session`] evaluates a plan against one parameter snapshot. Sub-plan
//! rows (the output of a non-linear predicate for a single entity) are
//! computed once per session and shared by every query in the batch; the
//! reverse pass accumulates adjoints for those rows and back-propagates each
//! row exactly once, callers before callees.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::kb::{Csr, EntityId, KnowledgeBase, RelId};
use crate::plan::{Graph, NodeKind, Plan};
use crate::sparse::SparseVec;

/// Guard added to log arguments and L1 denominators.
pub const EPS: f64 = 1e-12;

/// Weights on the reserved `high` / `low` entities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyPair {
    pub high: f64,
    pub low: f64,
}

/// Tsallis entropy with q = 2, `1 - Σ pᵢ²`, reported as a (high, low) pair.
pub fn tsallis_entropy_pair(p: &[f64]) -> Result<EntropyPair> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| x < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization(total));
    }
    let high = 1.0 - p.iter().map(|x| x * x).sum::<f64>();
    Ok(EntropyPair {
        high,
        low: 1.0 - high,
    })
}

/// Softmax over the masked entries, exact zeros elsewhere.
pub fn softmax_masked(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// The target had no probability mass in the prediction's support.
    pub off_support: bool,
}

/// `-ln(p[target] + ε)`.
pub fn cross_entropy_loss(p: &[f64], target: EntityId) -> CrossEntropy {
    match p.get(target) {
        Some(&pt) if pt > 0.0 => CrossEntropy {
            loss: -(pt + EPS).ln(),
            off_support: false,
        },
        _ => CrossEntropy {
            loss: -EPS.ln(),
            off_support: true,
        },
    }
}

fn softmax_sparse(v: &SparseVec) -> SparseVec {
    let max = v.val.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut val: Vec<f64> = v.val.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = val.iter().sum();
    val.iter_mut().for_each(|x| *x /= z);
    SparseVec {
        idx: v.idx.clone(),
        val,
    }
}

fn l1_normalize_sparse(v: &SparseVec) -> SparseVec {
    let s: f64 = v.val.iter().map(|x| x.abs()).sum::<f64>() + EPS;
    SparseVec {
        idx: v.idx.clone(),
        val: v.val.iter().map(|x| x / s).collect(),
    }
}

fn l1_normalize_backward(v: &SparseVec, g: &[f64], adj_in: &mut [f64]) {
    let s: f64 = v.val.iter().map(|x| x.abs()).sum::<f64>() + EPS;
    let gv: f64 = g.iter().zip(&v.val).map(|(a, b)| a * b).sum();
    for (a, &x) in v.val.iter().enumerate() {
        adj_in[a] += g[a] / s - x.signum() * gv / (s * s);
    }
}

fn tsallis_sparse(p: &SparseVec, high: EntityId, low: EntityId) -> SparseVec {
    if p.is_empty() {
        return SparseVec::default();
    }
    let h = 1.0 - p.val.iter().map(|x| x * x).sum::<f64>();
    let (idx, val) = if high < low {
        (vec![high, low], vec![h, 1.0 - h])
    } else {
        (vec![low, high], vec![1.0 - h, h])
    };
    SparseVec { idx, val }
}

/// Gradient accumulators for trainable relations, aligned with CSR storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub by_relation: BTreeMap<RelId, Vec<f64>>,
}

impl Gradients {
    pub fn zeros(kb: &KnowledgeBase) -> Self {
        let by_relation = kb
            .trainable_ids()
            .into_iter()
            .map(|r| (r, vec![0.0; kb.relation_by_id(r).nnz()]))
            .collect();
        Gradients { by_relation }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.by_relation.values_mut() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// `self += c · other`
    pub fn add_scaled(&mut self, c: f64, other: &Gradients) {
        for (r, g) in &other.by_relation {
            let mine = self
                .by_relation
                .entry(*r)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in mine.iter_mut().zip(g) {
                *a += c * b;
            }
        }
    }

    pub fn get(&self, kb: &KnowledgeBase, rel: &str) -> Option<&[f64]> {
        kb.relation_id(rel)
            .and_then(|r| self.by_relation.get(&r))
            .map(Vec::as_slice)
    }

    pub fn max_abs(&self) -> f64 {
        self.by_relation
            .values()
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone)]
struct Tape {
    values: Vec<SparseVec>,
}

impl Tape {
    fn output(&self) -> &SparseVec {
        self.values.last().unwrap()
    }
}

/// Outcome of one example's loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleLoss {
    /// The prediction has empty structural support; excluded from losses.
    Skipped,
    Scored { loss: f64, off_support: bool },
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    /// Mean loss over scored examples (0 when none were scored).
    pub loss: f64,
    /// Gradient of the mean loss.
    pub grads: Gradients,
    pub scored: usize,
    pub skipped: usize,
    pub off_support: usize,
}

/// Rows of sub-plans that read no trainable relation. They do not change
/// when parameters do, so a trainer can carry them from one session to the
/// next. Only valid for the plan and KB structure that produced them.
#[derive(Debug, Clone, Default)]
pub struct StaticRows {
    rows: Vec<HashMap<EntityId, Tape>>,
}

/// Sub-plans whose rows depend on no trainable relation, callees included.
fn static_subplans(plan: &Plan, kb: &KnowledgeBase) -> Vec<bool> {
    let mut out: Vec<bool> = Vec::with_capacity(plan.subplans.len());
    for sub in &plan.subplans {
        let fixed = sub.graph.nodes.iter().all(|n| match n.kind {
            NodeKind::MatVec(r) => !kb.relation_by_id(r).is_trainable(),
            NodeKind::Call(c) => out[c],
            _ => true,
        });
        out.push(fixed);
    }
    out
}

/// Evaluation context bound to a plan and a fixed parameter snapshot.
pub struct Session<'a> {
    plan: &'a Plan,
    kb: &'a KnowledgeBase,
    mats: HashMap<RelId, &'a Csr>,
    rows: Vec<HashMap<EntityId, Tape>>,
    fixed: Vec<bool>,
}

impl<'a> Session<'a> {
    pub fn new(plan: &'a Plan, kb: &'a KnowledgeBase) -> Result<Self> {
        Self::with_static_rows(plan, kb, StaticRows::default())
    }

    /// Session seeded with rows kept from an earlier session on the same plan.
    pub fn with_static_rows(plan: &'a Plan, kb: &'a KnowledgeBase, cache: StaticRows) -> Result<Self> {
        let mut mats = HashMap::new();
        for r in plan.relations() {
            let m = kb
                .relation_by_id(r)
                .matrix()
                .ok_or_else(|| Error::NotFrozen("evaluating a plan".into()))?;
            mats.insert(r, m);
        }
        let fixed = static_subplans(plan, kb);
        let mut rows = cache.rows;
        rows.resize_with(plan.subplans.len(), HashMap::new);
        for (r, &f) in rows.iter_mut().zip(&fixed) {
            if !f {
                r.clear();
            }
        }
        Ok(Session {
            plan,
            kb,
            mats,
            rows,
            fixed,
        })
    }

    /// Rows worth keeping for the next session.
    pub fn into_static_rows(self) -> StaticRows {
        let mut rows = self.rows;
        for (r, &f) in rows.iter_mut().zip(&self.fixed) {
            if !f {
                *r = HashMap::new();
            }
        }
        StaticRows { rows }
    }

    fn ensure_row(&mut self, sub: usize, e: EntityId) {
        if self.rows[sub].contains_key(&e) {
            return;
        }
        let plan = self.plan;
        let tape = self.run(&plan.subplans[sub].graph, SparseVec::onehot(e));
        self.rows[sub].insert(e, tape);
    }

    fn run(&mut self, graph: &'a Graph, seed: SparseVec) -> Tape {
        let mut values: Vec<SparseVec> = Vec::with_capacity(graph.len());
        for node in &graph.nodes {
            let v = match &node.kind {
                NodeKind::SeedInput => seed.clone(),
                NodeKind::MatVec(r) => values[node.inputs[0]].matvec(self.mats[r]),
                NodeKind::DisjunctionSum => SparseVec::sum(node.inputs.iter().map(|&i| &values[i])),
                NodeKind::L1Normalize => l1_normalize_sparse(&values[node.inputs[0]]),
                NodeKind::SoftmaxMasked => {
                    let input = &values[node.inputs[0]];
                    if input.is_empty() {
                        SparseVec::default()
                    } else {
                        softmax_sparse(input)
                    }
                }
                NodeKind::TsallisEntropyPair => {
                    tsallis_sparse(&values[node.inputs[0]], self.kb.high(), self.kb.low())
                }
                NodeKind::Call(s) => {
                    let input = &values[node.inputs[0]];
                    for &e in &input.idx {
                        self.ensure_row(*s, e);
                    }
                    let rows = &self.rows[*s];
                    SparseVec::weighted_sum(input.iter().map(|(e, c)| (c, rows[&e].output())))
                }
            };
            values.push(v);
        }
        Tape { values }
    }

    fn check_query(&self, q: EntityId) -> Result<()> {
        if q >= self.kb.num_entities() {
            return Err(Error::Index {
                index: q,
                size: self.kb.num_entities(),
            });
        }
        Ok(())
    }

    /// Sparse output row for `target(q, Y)`.
    pub fn output(&mut self, q: EntityId) -> Result<SparseVec> {
        self.check_query(q)?;
        let plan = self.plan;
        let tape = self.run(&plan.main, SparseVec::onehot(q));
        Ok(tape.values.last().unwrap().clone())
    }

    /// Output as a distribution: as-is for softmax/entropy plans, otherwise L1-normalized.
    fn distribution(&self, out: &SparseVec) -> SparseVec {
        if self.plan.output_is_distribution() {
            out.clone()
        } else {
            l1_normalize_sparse(out)
        }
    }

    pub fn example_loss(&mut self, q: EntityId, target: EntityId) -> Result<ExampleLoss> {
        let out = self.output(q)?;
        if out.is_empty() {
            return Ok(ExampleLoss::Skipped);
        }
        let p = self.distribution(&out);
        Ok(match p.get(target) {
            Some(pt) => ExampleLoss::Scored {
                loss: -(pt + EPS).ln(),
                off_support: false,
            },
            None => ExampleLoss::Scored {
                loss: -EPS.ln(),
                off_support: true,
            },
        })
    }

    /// Mean cross-entropy over `batch` and its gradient w.r.t. every trainable cell.
    pub fn forward_backward(&mut self, batch: &[(EntityId, EntityId)]) -> Result<BatchResult> {
        let mut result = BatchResult {
            grads: Gradients::zeros(self.kb),
            ..Default::default()
        };
        let mut row_adj: Vec<BTreeMap<EntityId, Vec<f64>>> = vec![BTreeMap::new(); self.plan.subplans.len()];
        let mut total = 0.0;
        for &(q, target) in batch {
            self.check_query(q)?;
            let plan = self.plan;
            let tape = self.run(&plan.main, SparseVec::onehot(q));
            let out = tape.output();
            if out.is_empty() {
                result.skipped += 1;
                continue;
            }
            result.scored += 1;
            let mut out_adj = vec![0.0; out.len()];
            if self.plan.output_is_distribution() {
                match out.position(target) {
                    Some(k) => {
                        let pt = out.val[k];
                        total += -(pt + EPS).ln();
                        out_adj[k] = -1.0 / (pt + EPS);
                    }
                    None => {
                        total += -EPS.ln();
                        result.off_support += 1;
                    }
                }
            } else {
                let p = l1_normalize_sparse(out);
                match p.position(target) {
                    Some(k) => {
                        let pt = p.val[k];
                        total += -(pt + EPS).ln();
                        let mut g = vec![0.0; p.len()];
                        g[k] = -1.0 / (pt + EPS);
                        l1_normalize_backward(out, &g, &mut out_adj);
                    }
                    None => {
                        total += -EPS.ln();
                        result.off_support += 1;
                    }
                }
            }
            self.backward(&self.plan.main, &tape, out_adj, &mut result.grads, &mut row_adj);
        }
        for s in (0..self.plan.subplans.len()).rev() {
            let pending = std::mem::take(&mut row_adj[s]);
            for (e, adj) in pending {
                let tape = &self.rows[s][&e];
                self.backward(&self.plan.subplans[s].graph, tape, adj, &mut result.grads, &mut row_adj);
            }
        }
        if result.scored > 0 {
            let n = result.scored as f64;
            result.loss = total / n;
            result.grads.scale(1.0 / n);
        }
        Ok(result)
    }

    fn backward(
        &self,
        graph: &Graph,
        tape: &Tape,
        out_adj: Vec<f64>,
        grads: &mut Gradients,
        row_adj: &mut [BTreeMap<EntityId, Vec<f64>>],
    ) {
        let values = &tape.values;
        let mut adj: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();
        *adj.last_mut().unwrap() = out_adj;
        for (n, node) in graph.nodes.iter().enumerate().rev() {
            if node.inputs.is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[n]);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let out = &values[n];
            match &node.kind {
                NodeKind::SeedInput => {}
                NodeKind::MatVec(r) => {
                    let i = node.inputs[0];
                    let v = &values[i];
                    let m = self.mats[r];
                    let mut cell_grads = grads.by_relation.get_mut(r);
                    for (a, (row, x)) in v.iter().enumerate() {
                        let mut acc = 0.0;
                        for k in m.row_range(row) {
                            let b = out.position(m.col(k)).expect("matvec support");
                            acc += m.value(k) * g[b];
                            if let Some(cg) = cell_grads.as_deref_mut() {
                                cg[k] += x * g[b];
                            }
                        }
                        adj[i][a] += acc;
                    }
                }
                NodeKind::DisjunctionSum => {
                    for &i in &node.inputs {
                        for a in 0..values[i].len() {
                            let b = out.position(values[i].idx[a]).expect("sum support");
                            adj[i][a] += g[b];
                        }
                    }
                }
                NodeKind::L1Normalize => {
                    let i = node.inputs[0];
                    let mut local = vec![0.0; values[i].len()];
                    l1_normalize_backward(&values[i], &g, &mut local);
                    adj[i].iter_mut().zip(local).for_each(|(a, b)| *a += b);
                }
                NodeKind::SoftmaxMasked => {
                    let i = node.inputs[0];
                    let gp: f64 = g.iter().zip(&out.val).map(|(a, b)| a * b).sum();
                    for a in 0..out.len() {
                        adj[i][a] += out.val[a] * (g[a] - gp);
                    }
                }
                NodeKind::TsallisEntropyPair => {
                    let i = node.inputs[0];
                    let gh = out.position(self.kb.high()).map_or(0.0, |k| g[k]);
                    let gl = out.position(self.kb.low()).map_or(0.0, |k| g[k]);
                    for a in 0..values[i].len() {
                        adj[i][a] += (gh - gl) * (-2.0 * values[i].val[a]);
                    }
                }
                NodeKind::Call(s) => {
                    let i = node.inputs[0];
                    let v = &values[i];
                    let fixed = self.fixed[*s];
                    for (a, (e, c)) in v.iter().enumerate() {
                        let row = self.rows[*s][&e].output();
                        let mut dot = 0.0;
                        let mut radj = vec![0.0; if fixed { 0 } else { row.len() }];
                        for (k, (j, y)) in row.iter().enumerate() {
                            let b = out.position(j).expect("call support");
                            dot += y * g[b];
                            if !fixed {
                                radj[k] = c * g[b];
                            }
                        }
                        adj[i][a] += dot;
                        if fixed {
                            continue;
                        }
                        match row_adj[*s].get_mut(&e) {
                            Some(acc) => acc.iter_mut().zip(radj).for_each(|(x, y)| *x += y),
                            None => {
                                row_adj[*s].insert(e, radj);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dense output rows (|queries| × |entities|). Softmax-terminated plans give
/// distributions over the structural support with exact zeros elsewhere;
/// queries without support give all-zero rows.
pub fn evaluate(plan: &Plan, kb: &KnowledgeBase, queries: &[EntityId]) -> Result<Vec<Vec<f64>>> {
    let mut session = Session::new(plan, kb)?;
    let n = kb.num_entities();
    queries
        .iter()
        .map(|&q| session.output(q).map(|v| v.to_dense(n)))
        .collect()
}

/// Entities reachable through the sparsity pattern for `target(q, Y)`.
pub fn support_mask(plan: &Plan, kb: &KnowledgeBase, q: EntityId) -> Result<Vec<bool>> {
    let mut session = Session::new(plan, kb)?;
    let out = session.output(q)?;
    let mut mask = vec![false; kb.num_entities()];
    for &e in &out.idx {
        mask[e] = true;
    }
    Ok(mask)
}

/// Mean loss and gradients over `batch` of (query, target) pairs.
pub fn forward_backward(
    plan: &Plan,
    kb: &KnowledgeBase,
    batch: &[(EntityId, EntityId)],
) -> Result<BatchResult> {
    Session::new(plan, kb)?.forward_backward(batch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub cells: usize,
    /// Largest analytic gradient magnitude seen, to show the check is not vacuous.
    pub max_abs_grad: f64,
}

/// Relative error floor: differences below this magnitude count as absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares every trainable-cell gradient of the loss on `example` against
/// central differences `(L(w+h) - L(w-h)) / 2h`. The relative error of a
/// cell is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    plan: &Plan,
    kb: &mut KnowledgeBase,
    example: (EntityId, EntityId),
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = forward_backward(plan, kb, &[example])?.grads;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        cells: 0,
        max_abs_grad: analytic.max_abs(),
    };
    let loss_at = |kb: &KnowledgeBase| -> Result<f64> {
        Ok(forward_backward(plan, kb, &[example])?.loss)
    };
    for (&r, grads) in &analytic.by_relation {
        for (k, &a) in grads.iter().enumerate() {
            let w = kb.values_mut_by_id(r)?[k];
            kb.values_mut_by_id(r)?[k] = w + h;
            let plus = loss_at(kb)?;
            kb.values_mut_by_id(r)?[k] = w - h;
            let minus = loss_at(kb)?;
            kb.values_mut_by_id(r)?[k] = w;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.cells += 1;
        }
    }
    Ok(report)
}
