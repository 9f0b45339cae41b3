//! Compilation of a validated program into a differentiable dataflow plan.
//!
//! Messages are row vectors over entities; each body atom multiplies the
//! message on the right by its relation matrix, alternative rules for one
//! predicate are summed, and recursive predicates are unrolled to a fixed
//! depth (level 0 uses only non-recursive rules, level k refers to level
//! k-1). A predicate whose definition is not linear in its input message
//! (a `#softmax` predicate, or one whose rule ends in `entropy`) is compiled
//! once into a sub-plan seeded by a one-hot row; a call site then mixes the
//! sub-plan's per-entity outputs with the incoming message weights.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, RelId};
use crate::rules::{ValidatedProgram, ENTROPY};

pub const DEFAULT_DEPTH: i64 = 3;

pub type NodeId = usize;
pub type SubPlanId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    SeedInput,
    MatVec(RelId),
    DisjunctionSum,
    L1Normalize,
    SoftmaxMasked,
    TsallisEntropyPair,
    /// `v ↦ Σ_e v[e] · subplan(onehot(e))`
    Call(SubPlanId),
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::SeedInput => "SeedInput",
            NodeKind::MatVec(_) => "MatVec",
            NodeKind::DisjunctionSum => "DisjunctionSum",
            NodeKind::L1Normalize => "L1Normalize",
            NodeKind::SoftmaxMasked => "SoftmaxMasked",
            NodeKind::TsallisEntropyPair => "TsallisEntropyPair",
            NodeKind::Call(_) => "Call",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kind: NodeKind,
    /// Relation or predicate the node belongs to.
    pub label: String,
    pub inputs: Vec<NodeId>,
}

/// Topologically ordered nodes; node 0 is the seed, the last node is the output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    pub nodes: Vec<Node>,
}

impl Graph {
    fn seeded(label: &str) -> Self {
        Graph {
            nodes: vec![Node {
                kind: NodeKind::SeedInput,
                label: label.to_string(),
                inputs: vec![],
            }],
        }
    }

    fn push(&mut self, kind: NodeKind, label: &str, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(Node {
            kind,
            label: label.to_string(),
            inputs,
        });
        self.nodes.len() - 1
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubPlan {
    pub predicate: String,
    pub level: usize,
    pub graph: Graph,
}

/// A compiled query plan for `target(x, Y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub target: String,
    pub main: Graph,
    /// Callees always have smaller ids than their callers.
    pub subplans: Vec<SubPlan>,
    /// Unroll depth used for every recursive predicate reached.
    pub depths: BTreeMap<String, usize>,
}

impl Plan {
    /// True when the output row is already a probability distribution.
    pub fn output_is_distribution(&self) -> bool {
        matches!(
            self.main.nodes.last().map(|n| &n.kind),
            Some(NodeKind::SoftmaxMasked) | Some(NodeKind::TsallisEntropyPair)
        )
    }

    pub fn graph(&self, sub: Option<SubPlanId>) -> &Graph {
        match sub {
            Some(s) => &self.subplans[s].graph,
            None => &self.main,
        }
    }

    /// Relation ids referenced by any MatVec node.
    pub fn relations(&self) -> Vec<RelId> {
        let mut out: Vec<RelId> = self
            .subplans
            .iter()
            .map(|s| &s.graph)
            .chain(std::iter::once(&self.main))
            .flat_map(|g| g.nodes.iter())
            .filter_map(|n| match n.kind {
                NodeKind::MatVec(r) => Some(r),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Line-oriented serialization, one node per line:
    /// `<node-id> <kind> <relation-or-predicate> <input-node-ids>`.
    /// Node ids are global: sub-plans come first in id order, then the main
    /// graph. Each graph opens with its `SeedInput` (labelled `pred@level` for
    /// sub-plans). A `Call` lists its input followed by the callee's output
    /// node. Inputs are comma separated, `-` when there are none. `#` lines
    /// carry the target and unroll depths.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# target {}", self.target);
        for (p, d) in &self.depths {
            let _ = writeln!(out, "# depth {p} {d}");
        }
        let mut offsets = Vec::with_capacity(self.subplans.len());
        let mut next = 0;
        for s in &self.subplans {
            offsets.push(next);
            next += s.graph.len();
        }
        let main_offset = next;
        let mut emit = |g: &Graph, offset: usize, seed_label: String| {
            for (i, n) in g.nodes.iter().enumerate() {
                let mut inputs: Vec<usize> = n.inputs.iter().map(|&j| j + offset).collect();
                if let NodeKind::Call(s) = n.kind {
                    inputs.push(offsets[s] + self.subplans[s].graph.output());
                }
                let inputs = if inputs.is_empty() {
                    "-".to_string()
                } else {
                    inputs
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                };
                let label = if n.kind == NodeKind::SeedInput {
                    seed_label.as_str()
                } else {
                    n.label.as_str()
                };
                let _ = writeln!(out, "{} {} {} {}", i + offset, n.kind.name(), label, inputs);
            }
        };
        for (s, sp) in self.subplans.iter().enumerate() {
            emit(&sp.graph, offsets[s], format!("{}@{}", sp.predicate, sp.level));
        }
        emit(&self.main, main_offset, self.target.clone());
        out
    }

    /// Rebuilds a plan from [`dump`](Self::dump) output.
    pub fn from_dump(text: &str, kb: &KnowledgeBase) -> Result<Plan> {
        let bad = |line: usize, msg: &str| Error::Parse {
            line,
            column: 1,
            message: msg.to_string(),
        };
        let mut target = None;
        let mut depths = BTreeMap::new();
        // (graph index, local id) for each global id
        let mut location: Vec<(usize, usize)> = Vec::new();
        let mut graphs: Vec<(String, Graph)> = Vec::new();
        for (li, line) in text.lines().enumerate() {
            let lineno = li + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                match parts.as_slice() {
                    ["target", t] => target = Some(t.to_string()),
                    ["depth", p, d] => {
                        let d = d.parse().map_err(|_| bad(lineno, "bad depth"))?;
                        depths.insert(p.to_string(), d);
                    }
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [id, kind, label, inputs] = parts.as_slice() else {
                return Err(bad(lineno, "expected 4 fields"));
            };
            let id: usize = id.parse().map_err(|_| bad(lineno, "bad node id"))?;
            if id != location.len() {
                return Err(bad(lineno, "node ids must be consecutive"));
            }
            let inputs: Vec<usize> = if *inputs == "-" {
                vec![]
            } else {
                inputs
                    .split(',')
                    .map(|s| s.parse().map_err(|_| bad(lineno, "bad input id")))
                    .collect::<Result<_>>()?
            };
            for &i in &inputs {
                if i >= id {
                    return Err(bad(lineno, "input refers forward"));
                }
            }
            if *kind == "SeedInput" {
                graphs.push((label.to_string(), Graph::default()));
            }
            if graphs.is_empty() {
                return Err(bad(lineno, "graph must start with SeedInput"));
            }
            let gi = graphs.len() - 1;
            let local = |global: usize| -> Result<usize> {
                match location.get(global) {
                    Some(&(g, l)) if g == gi => Ok(l),
                    _ => Err(bad(lineno, "input crosses graphs")),
                }
            };
            let (kind, local_inputs) = match *kind {
                "SeedInput" => (NodeKind::SeedInput, vec![]),
                "MatVec" => {
                    let r = kb
                        .relation_id(label)
                        .ok_or_else(|| Error::UnknownPredicate(label.to_string()))?;
                    (NodeKind::MatVec(r), inputs.iter().map(|&i| local(i)).collect::<Result<_>>()?)
                }
                "DisjunctionSum" => (
                    NodeKind::DisjunctionSum,
                    inputs.iter().map(|&i| local(i)).collect::<Result<_>>()?,
                ),
                "L1Normalize" => (NodeKind::L1Normalize, inputs.iter().map(|&i| local(i)).collect::<Result<_>>()?),
                "SoftmaxMasked" => (NodeKind::SoftmaxMasked, inputs.iter().map(|&i| local(i)).collect::<Result<_>>()?),
                "TsallisEntropyPair" => (
                    NodeKind::TsallisEntropyPair,
                    inputs.iter().map(|&i| local(i)).collect::<Result<_>>()?,
                ),
                "Call" => {
                    let [input, callee_out] = inputs.as_slice() else {
                        return Err(bad(lineno, "Call takes an input and a callee output"));
                    };
                    let (callee, _) = location[*callee_out];
                    if callee >= gi {
                        return Err(bad(lineno, "callee must precede caller"));
                    }
                    (NodeKind::Call(callee), vec![local(*input)?])
                }
                other => return Err(bad(lineno, &format!("unknown node kind `{other}`"))),
            };
            let graph = &mut graphs[gi].1;
            graph.nodes.push(Node {
                kind,
                label: label.to_string(),
                inputs: local_inputs,
            });
            location.push((gi, graph.nodes.len() - 1));
        }
        let (main_label, main) = graphs.pop().ok_or_else(|| bad(1, "empty plan"))?;
        let subplans = graphs
            .into_iter()
            .map(|(label, mut graph)| {
                let (pred, level) = label
                    .rsplit_once('@')
                    .ok_or_else(|| bad(1, "sub-plan seed must be labelled pred@level"))?;
                let level = level.parse().map_err(|_| bad(1, "bad level"))?;
                graph.nodes[0].label = pred.to_string();
                Ok(SubPlan {
                    predicate: pred.to_string(),
                    level,
                    graph,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut main = main;
        main.nodes[0].label = main_label.clone();
        Ok(Plan {
            target: target.unwrap_or(main_label),
            main,
            subplans,
            depths,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    /// Unroll depth for recursive predicates without `#maxdepth`.
    pub default_depth: i64,
    /// When false, `#softmax` directives are ignored and the plan yields
    /// pre-normalization scores.
    pub apply_softmax: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            default_depth: DEFAULT_DEPTH,
            apply_softmax: true,
        }
    }
}

struct Compiler<'a> {
    vp: &'a ValidatedProgram,
    kb: &'a KnowledgeBase,
    opts: CompileOptions,
    subplans: Vec<SubPlan>,
    memo: HashMap<(String, usize), SubPlanId>,
    depths: BTreeMap<String, usize>,
}

impl Compiler<'_> {
    fn depth_of(&mut self, pred: &str) -> Result<usize> {
        let d = self.vp.max_depth(pred).unwrap_or(self.opts.default_depth);
        if d <= 0 {
            return Err(Error::Config(format!("unroll depth for `{pred}` must be positive, got {d}")));
        }
        self.depths.insert(pred.to_string(), d as usize);
        Ok(d as usize)
    }

    fn top_level(&mut self, pred: &str) -> Result<usize> {
        if self.vp.is_recursive(pred) {
            Ok(self.depth_of(pred)? - 1)
        } else {
            Ok(0)
        }
    }

    fn nonlinear(&self, pred: &str) -> bool {
        (self.opts.apply_softmax && self.vp.is_softmax(pred))
            || self
                .vp
                .rules_for(pred)
                .any(|r| r.body.last().is_some_and(|a| a.predicate == ENTROPY))
    }

    fn call(&mut self, g: &mut Graph, pred: &str, level: usize, input: NodeId) -> Result<NodeId> {
        if self.nonlinear(pred) {
            let sid = self.subplan(pred, level)?;
            Ok(g.push(NodeKind::Call(sid), pred, vec![input]))
        } else {
            self.expand(g, pred, level, input)
        }
    }

    fn subplan(&mut self, pred: &str, level: usize) -> Result<SubPlanId> {
        let key = (pred.to_string(), level);
        if let Some(&id) = self.memo.get(&key) {
            return Ok(id);
        }
        let mut graph = Graph::seeded(pred);
        self.expand_full(&mut graph, pred, level, 0)?;
        let id = self.subplans.len();
        self.subplans.push(SubPlan {
            predicate: pred.to_string(),
            level,
            graph,
        });
        self.memo.insert(key, id);
        Ok(id)
    }

    fn expand_full(&mut self, g: &mut Graph, pred: &str, level: usize, input: NodeId) -> Result<NodeId> {
        let out = self.expand(g, pred, level, input)?;
        if self.opts.apply_softmax && self.vp.is_softmax(pred) {
            Ok(g.push(NodeKind::SoftmaxMasked, pred, vec![out]))
        } else {
            Ok(out)
        }
    }

    fn expand(&mut self, g: &mut Graph, pred: &str, level: usize, input: NodeId) -> Result<NodeId> {
        let mut branches = Vec::new();
        if let Some(rel) = self.kb.relation_id(pred) {
            branches.push(g.push(NodeKind::MatVec(rel), pred, vec![input]));
        }
        if !self.vp.defines(pred) && branches.is_empty() {
            return Err(Error::UnknownPredicate(pred.to_string()));
        }
        if self.vp.is_recursive(pred)
            && branches.is_empty()
            && self.vp.rules_for(pred).all(|r| self.vp.rule_is_recursive(r))
        {
            return Err(Error::NoBaseCase(pred.to_string()));
        }
        let rules: Vec<_> = self.vp.rules_for(pred).cloned().collect();
        for rule in &rules {
            let recursive = self.vp.rule_is_recursive(rule);
            if recursive && level == 0 {
                continue;
            }
            let mut msg = input;
            for atom in &rule.body {
                if atom.predicate == ENTROPY {
                    msg = g.push(NodeKind::L1Normalize, ENTROPY, vec![msg]);
                    msg = g.push(NodeKind::TsallisEntropyPair, ENTROPY, vec![msg]);
                } else {
                    let sub_level = if self.vp.same_component(pred, &atom.predicate) {
                        level - 1
                    } else {
                        self.top_level(&atom.predicate)?
                    };
                    msg = self.call(g, &atom.predicate, sub_level, msg)?;
                }
            }
            branches.push(msg);
        }
        Ok(match branches.len() {
            1 => branches[0],
            _ => g.push(NodeKind::DisjunctionSum, pred, branches),
        })
    }
}

/// Compiles `target` with default options.
pub fn compile(vp: &ValidatedProgram, target: &str, kb: &KnowledgeBase) -> Result<Plan> {
    compile_with(vp, target, kb, CompileOptions::default())
}

pub fn compile_with(
    vp: &ValidatedProgram,
    target: &str,
    kb: &KnowledgeBase,
    opts: CompileOptions,
) -> Result<Plan> {
    if opts.default_depth <= 0 {
        return Err(Error::Config(format!(
            "default depth must be positive, got {}",
            opts.default_depth
        )));
    }
    let mut c = Compiler {
        vp,
        kb,
        opts,
        subplans: Vec::new(),
        memo: HashMap::new(),
        depths: BTreeMap::new(),
    };
    let level = c.top_level(target)?;
    let mut main = Graph::seeded(target);
    c.expand_full(&mut main, target, level, 0)?;
    Ok(Plan {
        target: target.to_string(),
        main,
        subplans: c.subplans,
        depths: c.depths,
    })
}
