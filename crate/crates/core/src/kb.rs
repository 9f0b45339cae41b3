//! Interned symbols and the weighted fact store.
//!
//! Every constant (documents, features, labels, the reserved `high`/`low`
//! pair, virtual pair entities) lives in one id space. Each relation is a
//! sparse entity × entity matrix. Facts are staged in an ordered map while
//! the knowledge base is being built; [`KnowledgeBase::freeze`] converts
//! every relation to CSR form, after which only trainable values may change
//! and the sparsity pattern is fixed.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelId = usize;

pub const HIGH: &str = "high";
pub const LOW: &str = "low";

/// Bidirectional name ↔ id map with contiguous ids.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, EntityId>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    /// A table holding only the reserved `high` (0) and `low` (1) entities.
    pub fn new() -> Self {
        let mut table = SymbolTable {
            names: Vec::new(),
            ids: HashMap::new(),
        };
        table.insert(HIGH);
        table.insert(LOW);
        table
    }

    fn insert(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<EntityId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Compressed sparse row matrix over entity ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<EntityId>,
    values: Vec<f64>,
}

impl Csr {
    fn from_entries(n_rows: usize, entries: &BTreeMap<(EntityId, EntityId), f64>) -> Self {
        let mut row_ptr = vec![0; n_rows + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (&(h, t), &w) in entries {
            row_ptr[h + 1] += 1;
            cols.push(t);
            values.push(w);
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr {
            row_ptr,
            cols,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len().saturating_sub(1)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Storage positions of row `i`; empty for rows past the end.
    pub fn row_range(&self, i: EntityId) -> std::ops::Range<usize> {
        if i + 1 >= self.row_ptr.len() {
            return 0..0;
        }
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn col(&self, k: usize) -> EntityId {
        self.cols[k]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn position(&self, head: EntityId, tail: EntityId) -> Option<usize> {
        let range = self.row_range(head);
        let start = range.start;
        self.cols[range]
            .binary_search(&tail)
            .ok()
            .map(|off| start + off)
    }

    /// (head, tail, weight) triples in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (EntityId, EntityId, f64)> + '_ {
        (0..self.n_rows()).flat_map(move |h| {
            self.row_range(h)
                .map(move |k| (h, self.cols[k], self.values[k]))
        })
    }
}

/// Initial values for a dense trainable block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Zeros,
    /// Uniform in `[-scale, scale]`, drawn from a ChaCha stream seeded with `seed`.
    Uniform { scale: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Relation {
    name: String,
    trainable: bool,
    staged: BTreeMap<(EntityId, EntityId), f64>,
    matrix: Option<Csr>,
}

impl Relation {
    fn new(name: &str) -> Self {
        Relation {
            name: name.to_string(),
            trainable: false,
            staged: BTreeMap::new(),
            matrix: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Non-trainable relations must hold nonnegative weights.
    pub fn nonneg_required(&self) -> bool {
        !self.trainable
    }

    /// The frozen matrix; `None` before [`KnowledgeBase::freeze`].
    pub fn matrix(&self) -> Option<&Csr> {
        self.matrix.as_ref()
    }

    pub fn nnz(&self) -> usize {
        match &self.matrix {
            Some(m) => m.nnz(),
            None => self.staged.len(),
        }
    }

    pub fn weight(&self, head: EntityId, tail: EntityId) -> Option<f64> {
        match &self.matrix {
            Some(m) => m.position(head, tail).map(|k| m.values[k]),
            None => self.staged.get(&(head, tail)).copied(),
        }
    }

    /// All stored (head, tail, weight) triples, row-major.
    pub fn facts(&self) -> Vec<(EntityId, EntityId, f64)> {
        match &self.matrix {
            Some(m) => m.iter().collect(),
            None => self.staged.iter().map(|(&(h, t), &w)| (h, t, w)).collect(),
        }
    }
}

/// Values of every trainable relation, aligned with each relation's CSR storage order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSnapshot {
    pub values: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: SymbolTable,
    relations: Vec<Relation>,
    relation_ids: HashMap<String, RelId>,
    domains: BTreeMap<String, Vec<EntityId>>,
    frozen: bool,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> Result<EntityId> {
        if let Some(id) = self.entities.get(name) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::Frozen(format!("intern new entity `{name}`")));
        }
        Ok(self.entities.insert(name))
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name)
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.name(id)
    }

    /// Name lookup that fails with `UnknownSymbol`.
    pub fn require_entity(&self, name: &str) -> Result<EntityId> {
        self.entity(name)
            .ok_or_else(|| Error::UnknownSymbol(name.to_string()))
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.entities
    }

    pub fn high(&self) -> EntityId {
        0
    }

    pub fn low(&self) -> EntityId {
        1
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Returns the id of `name`, creating an empty relation if needed.
    pub fn ensure_relation(&mut self, name: &str) -> Result<RelId> {
        if let Some(&id) = self.relation_ids.get(name) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::Frozen(format!("create relation `{name}`")));
        }
        let id = self.relations.len();
        self.relations.push(Relation::new(name));
        self.relation_ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelId> {
        self.relation_ids.get(name).copied()
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relation_id(name).map(|id| &self.relations[id])
    }

    pub fn relation_by_id(&self, id: RelId) -> &Relation {
        &self.relations[id]
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e >= self.num_entities() {
            return Err(Error::Index {
                index: e,
                size: self.num_entities(),
            });
        }
        Ok(())
    }

    /// Stores `rel(head, tail) = weight`; a later write to the same cell wins.
    pub fn add_fact(
        &mut self,
        rel: &str,
        head: EntityId,
        tail: EntityId,
        weight: f64,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(format!("add fact to `{rel}`")));
        }
        self.check_entity(head)?;
        self.check_entity(tail)?;
        let id = self.ensure_relation(rel)?;
        let relation = &mut self.relations[id];
        if !relation.trainable && !(weight >= 0.0) {
            return Err(Error::WeightDomain {
                relation: rel.to_string(),
                weight,
            });
        }
        relation.staged.insert((head, tail), weight);
        Ok(())
    }

    /// [`add_fact`](Self::add_fact) with entity names, interning as needed.
    pub fn add_fact_named(&mut self, rel: &str, head: &str, tail: &str, weight: f64) -> Result<()> {
        let h = self.intern(head)?;
        let t = self.intern(tail)?;
        self.add_fact(rel, h, t, weight)
    }

    /// Marks `rel` trainable. With both domains given, a dense block over
    /// `head_domain × tail_domain` is materialized with values from `init`,
    /// overwriting any existing weights in that block.
    pub fn declare_trainable(
        &mut self,
        rel: &str,
        head_domain: Option<&[EntityId]>,
        tail_domain: Option<&[EntityId]>,
        init: InitSpec,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(format!("declare `{rel}` trainable")));
        }
        for &e in head_domain.unwrap_or(&[]).iter().chain(tail_domain.unwrap_or(&[])) {
            if e >= self.num_entities() {
                return Err(Error::UnknownSymbol(format!("entity id {e}")));
            }
        }
        let id = self.ensure_relation(rel)?;
        let relation = &mut self.relations[id];
        relation.trainable = true;
        if let (Some(heads), Some(tails)) = (head_domain, tail_domain) {
            let mut rng = match init {
                InitSpec::Uniform { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
                InitSpec::Zeros => None,
            };
            for &h in heads {
                for &t in tails {
                    let w = match (init, rng.as_mut()) {
                        (InitSpec::Uniform { scale, .. }, Some(rng)) => {
                            rng.random_range(-scale..=scale)
                        }
                        _ => 0.0,
                    };
                    relation.staged.insert((h, t), w);
                }
            }
        }
        Ok(())
    }

    pub fn define_domain(&mut self, name: &str, members: Vec<EntityId>) {
        self.domains.insert(name.to_string(), members);
    }

    pub fn domain(&self, name: &str) -> Option<&[EntityId]> {
        self.domains.get(name).map(Vec::as_slice)
    }

    /// Converts every relation to CSR form and locks the entity set and supports.
    pub fn freeze(&mut self) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let n = self.num_entities();
        for relation in &mut self.relations {
            if !relation.trainable {
                if let Some((_, &w)) = relation.staged.iter().find(|(_, &w)| !(w >= 0.0)) {
                    return Err(Error::WeightDomain {
                        relation: relation.name.clone(),
                        weight: w,
                    });
                }
            }
            relation.matrix = Some(Csr::from_entries(n, &relation.staged));
            relation.staged.clear();
        }
        self.frozen = true;
        Ok(())
    }

    pub fn weight(&self, rel: &str, head: EntityId, tail: EntityId) -> Option<f64> {
        self.relation(rel).and_then(|r| r.weight(head, tail))
    }

    /// Overwrites an existing cell. After freeze only trainable relations
    /// may change, and only inside their support.
    pub fn set_weight(&mut self, rel: &str, head: EntityId, tail: EntityId, weight: f64) -> Result<()> {
        if !self.frozen {
            return self.add_fact(rel, head, tail, weight);
        }
        let id = self
            .relation_id(rel)
            .ok_or_else(|| Error::UnknownPredicate(rel.to_string()))?;
        let relation = &mut self.relations[id];
        if !relation.trainable {
            return Err(Error::Frozen(format!("modify non-trainable relation `{rel}`")));
        }
        let matrix = relation.matrix.as_mut().expect("frozen relation has a matrix");
        let k = matrix.position(head, tail).ok_or_else(|| {
            Error::Frozen(format!("add new support cell ({head}, {tail}) to `{rel}`"))
        })?;
        matrix.values[k] = weight;
        Ok(())
    }

    /// Number of stored cells across trainable relations.
    pub fn parameter_count(&self) -> usize {
        self.relations
            .iter()
            .filter(|r| r.trainable)
            .map(Relation::nnz)
            .sum()
    }

    pub fn trainable_ids(&self) -> Vec<RelId> {
        (0..self.relations.len())
            .filter(|&i| self.relations[i].trainable)
            .collect()
    }

    /// Dense row vector with 1.0 at `e`.
    pub fn onehot(&self, e: EntityId) -> Result<Vec<f64>> {
        self.check_entity(e)?;
        let mut v = vec![0.0; self.num_entities()];
        v[e] = 1.0;
        Ok(v)
    }

    pub fn params(&self) -> Result<ParamSnapshot> {
        if !self.frozen {
            return Err(Error::NotFrozen("taking a parameter snapshot".into()));
        }
        let values = self
            .relations
            .iter()
            .filter(|r| r.trainable)
            .map(|r| (r.name.clone(), r.matrix.as_ref().unwrap().values.clone()))
            .collect();
        Ok(ParamSnapshot { values })
    }

    pub fn set_params(&mut self, snapshot: &ParamSnapshot) -> Result<()> {
        for (name, values) in &snapshot.values {
            let m = self.trainable_values_mut(name)?;
            if m.len() != values.len() {
                return Err(Error::Config(format!(
                    "snapshot for `{name}` has {} values, relation has {}",
                    values.len(),
                    m.len()
                )));
            }
            m.copy_from_slice(values);
        }
        Ok(())
    }

    /// Mutable CSR values of a trainable relation (support stays fixed).
    pub fn trainable_values_mut(&mut self, rel: &str) -> Result<&mut [f64]> {
        let id = self
            .relation_id(rel)
            .ok_or_else(|| Error::UnknownPredicate(rel.to_string()))?;
        self.values_mut_by_id(id)
    }

    pub(crate) fn values_mut_by_id(&mut self, id: RelId) -> Result<&mut [f64]> {
        let relation = &mut self.relations[id];
        if !relation.trainable {
            return Err(Error::Frozen(format!(
                "modify non-trainable relation `{}`",
                relation.name
            )));
        }
        match relation.matrix.as_mut() {
            Some(m) => Ok(&mut m.values),
            None => Err(Error::NotFrozen("updating parameters".into())),
        }
    }

    /// Reads `relation<TAB>head<TAB>tail[<TAB>weight]` lines. Before freeze
    /// this adds facts; after freeze it overwrites existing trainable cells,
    /// which is how checkpoints are restored. Returns the number of facts read.
    pub fn read_facts_tsv<R: BufRead>(&mut self, reader: R) -> Result<usize> {
        let mut count = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(Error::Ingest {
                    line: lineno,
                    message: format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let weight = match fields.get(3) {
                Some(w) => w.trim().parse::<f64>().map_err(|e| Error::Ingest {
                    line: lineno,
                    message: format!("bad weight `{w}`: {e}"),
                })?,
                None => 1.0,
            };
            let (rel, head, tail) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if self.frozen {
                let h = self.require_entity(head)?;
                let t = self.require_entity(tail)?;
                self.set_weight(rel, h, t, weight)?;
            } else {
                self.add_fact_named(rel, head, tail, weight)?;
            }
            count += 1;
        }
        Ok(count)
    }

    /// Writes the named relations as facts TSV. Weights use the shortest
    /// round-trip representation so reloading is bit-exact.
    pub fn write_facts_tsv<W: Write>(&self, rels: &[&str], mut out: W) -> Result<()> {
        for rel in rels {
            let relation = self
                .relation(rel)
                .ok_or_else(|| Error::UnknownPredicate(rel.to_string()))?;
            for (h, t, w) in relation.facts() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    rel,
                    self.entities.name(h).unwrap(),
                    self.entities.name(t).unwrap(),
                    w
                )?;
            }
        }
        Ok(())
    }

    /// Names of all trainable relations, in declaration order.
    pub fn trainable_names(&self) -> Vec<&str> {
        self.relations
            .iter()
            .filter(|r| r.trainable)
            .map(|r| r.name.as_str())
            .collect()
    }
}
