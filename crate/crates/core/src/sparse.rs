//! Sparse row messages. The stored index set doubles as the structural
//! support: entries are kept even when their value is exactly zero.

use crate::kb::{Csr, EntityId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<EntityId>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn onehot(e: EntityId) -> Self {
        SparseVec {
            idx: vec![e],
            val: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn position(&self, e: EntityId) -> Option<usize> {
        self.idx.binary_search(&e).ok()
    }

    pub fn get(&self, e: EntityId) -> Option<f64> {
        self.position(e).map(|k| self.val[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (e, v) in self.iter() {
            out[e] = v;
        }
        out
    }

    /// Sorts by entity and adds duplicates, each entry summed in input order.
    /// Large inputs go through a dense scratch row.
    fn accumulate(pairs: Vec<(EntityId, f64)>) -> Self {
        if pairs.len() >= 256 {
            let top = pairs.iter().map(|&(e, _)| e).max().unwrap_or(0);
            let mut dense = vec![0.0; top + 1];
            let mut seen = vec![false; top + 1];
            let mut idx = Vec::new();
            for &(e, x) in &pairs {
                if !seen[e] {
                    seen[e] = true;
                    idx.push(e);
                }
                dense[e] += x;
            }
            idx.sort_unstable();
            let val = idx.iter().map(|&e| dense[e]).collect();
            return SparseVec { idx, val };
        }
        let mut out = SparseVec::default();
        for (e, x) in pairs {
            match out.idx.binary_search(&e) {
                Ok(k) => out.val[k] += x,
                Err(k) => {
                    out.idx.insert(k, e);
                    out.val.insert(k, 0.0 + x);
                }
            }
        }
        out
    }

    /// `self · m`, keeping every structurally reachable column.
    pub fn matvec(&self, m: &Csr) -> SparseVec {
        let mut pairs = Vec::new();
        for (i, v) in self.iter() {
            for k in m.row_range(i) {
                pairs.push((m.col(k), v * m.value(k)));
            }
        }
        Self::accumulate(pairs)
    }

    /// Sum over inputs; the support is the union of supports.
    pub fn sum<'a>(inputs: impl IntoIterator<Item = &'a SparseVec>) -> SparseVec {
        Self::accumulate(inputs.into_iter().flat_map(|v| v.iter()).collect())
    }

    /// `Σ_k coef_k · rows_k`, union support.
    pub fn weighted_sum<'a>(terms: impl IntoIterator<Item = (f64, &'a SparseVec)>) -> SparseVec {
        Self::accumulate(
            terms
                .into_iter()
                .flat_map(|(c, v)| v.iter().map(move |(e, x)| (e, c * x)))
                .collect(),
        )
    }

    /// Dot product over the intersection of supports.
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.idx.len() && j < other.idx.len() {
            match self.idx[i].cmp(&other.idx[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += self.val[i] * other.val[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}
