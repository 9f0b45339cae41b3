//! Rule language: function-free binary chain Horn clauses plus directives.
//!
//! ```text
//! % comment
//! #trainable indicates feature label init=zeros
//! #softmax predict
//! #maxdepth sim 3
//! predict(X,Y) :- hasFeature(X,F), indicates(F,Y).
//! ```
//!
//! `:-` and `<-` are both accepted as the implication symbol. `#` lines are
//! directives; an unknown directive is a parse error.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::kb::{InitSpec, KnowledgeBase};

/// Name of the only builtin predicate.
pub const ENTROPY: &str = "entropy";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub predicate: String,
    pub arg1: String,
    pub arg2: String,
}

impl Atom {
    pub fn new(predicate: &str, arg1: &str, arg2: &str) -> Self {
        Atom {
            predicate: predicate.to_string(),
            arg1: arg1.to_string(),
            arg2: arg2.to_string(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{})", self.predicate, self.arg1, self.arg2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Atom>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} :- ", self.head)?;
        for (i, atom) in self.body.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{atom}")?;
        }
        write!(f, ".")
    }
}

/// Initializer named in a `#trainable` directive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    /// `#trainable rel [head_domain tail_domain] [init=zeros|uniform:s]`
    Trainable {
        relation: String,
        domains: Option<(String, String)>,
        init: Init,
    },
    /// `#builtin name`
    Builtin(String),
    /// `#softmax pred`
    Softmax(String),
    /// `#maxdepth pred d`
    MaxDepth(String, i64),
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Trainable {
                relation,
                domains,
                init,
            } => {
                write!(f, "#trainable {relation}")?;
                if let Some((h, t)) = domains {
                    write!(f, " {h} {t}")?;
                }
                match init {
                    Init::Zeros => write!(f, " init=zeros"),
                    Init::Uniform(s) => write!(f, " init=uniform:{s}"),
                }
            }
            Directive::Builtin(b) => write!(f, "#builtin {b}"),
            Directive::Softmax(p) => write!(f, "#softmax {p}"),
            Directive::MaxDepth(p, d) => write!(f, "#maxdepth {p} {d}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub rules: Vec<Rule>,
    pub directives: Vec<Directive>,
}

impl Program {
    /// Appends another program's rules and directives, skipping exact duplicates.
    pub fn extend(&mut self, other: Program) {
        for r in other.rules {
            if !self.rules.contains(&r) {
                self.rules.push(r);
            }
        }
        for d in other.directives {
            if !self.directives.contains(&d) {
                self.directives.push(d);
            }
        }
    }

    pub fn softmax_predicates(&self) -> BTreeSet<String> {
        self.directives
            .iter()
            .filter_map(|d| match d {
                Directive::Softmax(p) => Some(p.clone()),
                _ => None,
            })
            .collect()
    }

    /// Declares every `#trainable` relation in `kb`. Domain names resolve
    /// through [`KnowledgeBase::domain`]; uniform initializers draw from a
    /// stream derived from `seed` and the relation's position.
    pub fn apply_directives(&self, kb: &mut KnowledgeBase, seed: u64) -> Result<()> {
        for (i, d) in self.directives.iter().enumerate() {
            if let Directive::Trainable {
                relation,
                domains,
                init,
            } = d
            {
                let init = match *init {
                    Init::Zeros => InitSpec::Zeros,
                    Init::Uniform(scale) => InitSpec::Uniform {
                        scale,
                        seed: seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    },
                };
                match domains {
                    Some((h, t)) => {
                        let heads = kb
                            .domain(h)
                            .ok_or_else(|| Error::UnknownSymbol(format!("domain `{h}`")))?
                            .to_vec();
                        let tails = kb
                            .domain(t)
                            .ok_or_else(|| Error::UnknownSymbol(format!("domain `{t}`")))?
                            .to_vec();
                        kb.declare_trainable(relation, Some(&heads), Some(&tails), init)?;
                    }
                    None => kb.declare_trainable(relation, None, None, init)?,
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.directives {
            writeln!(f, "{d}")?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Canonical text; `parse_program(&format_program(p)) == p`.
pub fn format_program(p: &Program) -> String {
    p.to_string()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Implies,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn parse_directive(text: &str, line: usize) -> Result<Directive> {
    let mut parts = text.split_whitespace();
    let name = parts.next().unwrap_or("");
    let args: Vec<&str> = parts.collect();
    let check_ident = |s: &str| -> Result<String> {
        let mut chars = s.chars();
        match chars.next() {
            Some(c) if is_ident_start(c) && chars.all(is_ident_char) => Ok(s.to_string()),
            _ => Err(parse_err(line, 1, format!("invalid identifier `{s}`"))),
        }
    };
    match name {
        "#trainable" => {
            let mut init = Init::Zeros;
            let mut positional = Vec::new();
            for a in args {
                if let Some(spec) = a.strip_prefix("init=") {
                    init = if spec == "zeros" {
                        Init::Zeros
                    } else if let Some(s) = spec.strip_prefix("uniform:") {
                        let scale: f64 = s
                            .parse()
                            .map_err(|_| parse_err(line, 1, format!("bad uniform scale `{s}`")))?;
                        if !(scale > 0.0) || !scale.is_finite() {
                            return Err(parse_err(line, 1, "uniform scale must be positive"));
                        }
                        Init::Uniform(scale)
                    } else {
                        return Err(parse_err(line, 1, format!("unknown initializer `{spec}`")));
                    };
                } else {
                    positional.push(check_ident(a)?);
                }
            }
            match positional.len() {
                1 => Ok(Directive::Trainable {
                    relation: positional.remove(0),
                    domains: None,
                    init,
                }),
                3 => Ok(Directive::Trainable {
                    relation: positional[0].clone(),
                    domains: Some((positional[1].clone(), positional[2].clone())),
                    init,
                }),
                _ => Err(parse_err(
                    line,
                    1,
                    "#trainable expects `rel [head_domain tail_domain] [init=...]`",
                )),
            }
        }
        "#builtin" => match args.as_slice() {
            [b] if *b == ENTROPY => Ok(Directive::Builtin(b.to_string())),
            [b] => Err(parse_err(line, 1, format!("unknown builtin `{b}`"))),
            _ => Err(parse_err(line, 1, "#builtin expects one name")),
        },
        "#softmax" => match args.as_slice() {
            [p] => Ok(Directive::Softmax(check_ident(p)?)),
            _ => Err(parse_err(line, 1, "#softmax expects one predicate")),
        },
        "#maxdepth" => match args.as_slice() {
            [p, d] => {
                let depth: i64 = d
                    .parse()
                    .map_err(|_| parse_err(line, 1, format!("bad depth `{d}`")))?;
                Ok(Directive::MaxDepth(check_ident(p)?, depth))
            }
            _ => Err(parse_err(line, 1, "#maxdepth expects `pred depth`")),
        },
        other => Err(parse_err(line, 1, format!("unknown directive `{other}`"))),
    }
}

fn tokenize(text: &str) -> Result<(Vec<Spanned>, Vec<Directive>)> {
    let mut toks = Vec::new();
    let mut directives = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let trimmed = raw.trim_start();
        if trimmed.starts_with('#') {
            let body = trimmed.split('%').next().unwrap_or("");
            directives.push(parse_directive(body.trim(), line)?);
            continue;
        }
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let push = |toks: &mut Vec<Spanned>, tok| {
                toks.push(Spanned { tok, line, column })
            };
            match c {
                '%' => break,
                c if c.is_whitespace() => {
                    i += 1;
                }
                '(' => {
                    push(&mut toks, Tok::LParen);
                    i += 1;
                }
                ')' => {
                    push(&mut toks, Tok::RParen);
                    i += 1;
                }
                ',' => {
                    push(&mut toks, Tok::Comma);
                    i += 1;
                }
                '.' => {
                    push(&mut toks, Tok::Dot);
                    i += 1;
                }
                ':' | '<' if chars.get(i + 1) == Some(&'-') => {
                    push(&mut toks, Tok::Implies);
                    i += 2;
                }
                c if is_ident_start(c) => {
                    let start = i;
                    while i < chars.len() && is_ident_char(chars[i]) {
                        i += 1;
                    }
                    let s: String = chars[start..i].iter().collect();
                    push(&mut toks, Tok::Ident(s));
                }
                other => return Err(parse_err(line, column, format!("unexpected character `{other}`"))),
            }
        }
    }
    Ok((toks, directives))
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn location(&self) -> (usize, usize) {
        self.peek().map(|s| (s.line, s.column)).unwrap_or(self.end)
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        match self.peek() {
            Some(s) if s.tok == want => {
                self.pos += 1;
                Ok(())
            }
            _ => {
                let (l, c) = self.location();
                Err(parse_err(l, c, format!("expected {what}")))
            }
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize, usize)> {
        match self.peek() {
            Some(Spanned {
                tok: Tok::Ident(s),
                line,
                column,
            }) => {
                let out = (s.clone(), *line, *column);
                self.pos += 1;
                Ok(out)
            }
            _ => {
                let (l, c) = self.location();
                Err(parse_err(l, c, format!("expected {what}")))
            }
        }
    }

    fn atom(&mut self) -> Result<Atom> {
        let (predicate, line, column) = self.ident("predicate name")?;
        if predicate.starts_with(|c: char| c.is_ascii_uppercase()) {
            return Err(parse_err(line, column, format!("predicate `{predicate}` must start lowercase")));
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            let (arg, l, c) = self.ident("variable")?;
            if !arg.starts_with(|c: char| c.is_ascii_uppercase()) {
                return Err(parse_err(l, c, format!("expected a variable, found constant `{arg}`")));
            }
            args.push(arg);
            match self.peek().map(|s| &s.tok) {
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RParen) => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    let (l, c) = self.location();
                    return Err(parse_err(l, c, "expected `,` or `)`"));
                }
            }
        }
        if args.len() != 2 {
            return Err(Error::Arity {
                line,
                column,
                predicate,
                found: args.len(),
            });
        }
        let arg2 = args.pop().unwrap();
        let arg1 = args.pop().unwrap();
        Ok(Atom {
            predicate,
            arg1,
            arg2,
        })
    }

    fn rule(&mut self) -> Result<Rule> {
        let head = self.atom()?;
        self.expect(Tok::Implies, "`:-` or `<-`")?;
        let mut body = vec![self.atom()?];
        loop {
            match self.peek().map(|s| &s.tok) {
                Some(Tok::Comma) => {
                    self.pos += 1;
                    body.push(self.atom()?);
                }
                Some(Tok::Dot) => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    let (l, c) = self.location();
                    return Err(parse_err(l, c, "expected `,` or `.`"));
                }
            }
        }
        Ok(Rule { head, body })
    }
}

/// Parses rule text into a [`Program`], preserving rule order.
pub fn parse_program(text: &str) -> Result<Program> {
    let (toks, directives) = tokenize(text)?;
    let last_line = text.lines().count().max(1);
    let last_col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
    let mut parser = Parser {
        toks,
        pos: 0,
        end: (last_line, last_col),
    };
    let mut rules = Vec::new();
    while parser.peek().is_some() {
        rules.push(parser.rule()?);
    }
    Ok(Program { rules, directives })
}

/// A program checked against a knowledge base, with its recursion structure.
#[derive(Debug, Clone)]
pub struct ValidatedProgram {
    program: Program,
    rules_by_head: BTreeMap<String, Vec<usize>>,
    /// Strongly connected component id for every rule-defined predicate.
    component: HashMap<String, usize>,
    recursive: BTreeSet<String>,
    softmax: BTreeSet<String>,
    max_depth: BTreeMap<String, i64>,
}

impl ValidatedProgram {
    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn rules_for(&self, predicate: &str) -> impl Iterator<Item = &Rule> {
        self.rules_by_head
            .get(predicate)
            .into_iter()
            .flatten()
            .map(move |&i| &self.program.rules[i])
    }

    pub fn defines(&self, predicate: &str) -> bool {
        self.rules_by_head.contains_key(predicate)
    }

    pub fn is_recursive(&self, predicate: &str) -> bool {
        self.recursive.contains(predicate)
    }

    pub fn recursive_predicates(&self) -> &BTreeSet<String> {
        &self.recursive
    }

    /// True when `a` and `b` are mutually dependent rule-defined predicates.
    pub fn same_component(&self, a: &str, b: &str) -> bool {
        match (self.component.get(a), self.component.get(b)) {
            (Some(x), Some(y)) => x == y && self.recursive.contains(a),
            _ => false,
        }
    }

    /// True when some body atom of `rule` refers back into the head's component.
    pub fn rule_is_recursive(&self, rule: &Rule) -> bool {
        rule.body
            .iter()
            .any(|a| self.same_component(&rule.head.predicate, &a.predicate))
    }

    pub fn is_softmax(&self, predicate: &str) -> bool {
        self.softmax.contains(predicate)
    }

    pub fn max_depth(&self, predicate: &str) -> Option<i64> {
        self.max_depth.get(predicate).copied()
    }

    pub fn max_depths(&self) -> &BTreeMap<String, i64> {
        &self.max_depth
    }
}

fn check_chain(rule: &Rule) -> Result<()> {
    let chain_err = |v: &str| Error::Chain {
        rule: rule.to_string(),
        variable: v.to_string(),
    };
    let mut expected = &rule.head.arg1;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    seen.insert(&rule.head.arg1);
    for atom in &rule.body {
        if &atom.arg1 != expected {
            return Err(chain_err(&atom.arg1));
        }
        let last = std::ptr::eq(atom, rule.body.last().unwrap());
        if last {
            if atom.arg2 != rule.head.arg2 {
                return Err(chain_err(&atom.arg2));
            }
            if rule.head.arg1 == rule.head.arg2 {
                return Err(chain_err(&atom.arg2));
            }
        } else if !seen.insert(&atom.arg2) || atom.arg2 == rule.head.arg2 {
            // intermediate variables must be fresh
            return Err(chain_err(&atom.arg2));
        }
        expected = &atom.arg2;
    }
    Ok(())
}

/// Checks the chain property, builtin placement, and predicate resolution,
/// and computes which predicates are recursive.
pub fn validate_program(p: &Program, kb: &KnowledgeBase) -> Result<ValidatedProgram> {
    let mut rules_by_head: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, rule) in p.rules.iter().enumerate() {
        if rule.head.predicate == ENTROPY {
            return Err(Error::Config(format!("cannot define builtin `{ENTROPY}` by a rule")));
        }
        rules_by_head
            .entry(rule.head.predicate.clone())
            .or_default()
            .push(i);
    }

    for rule in &p.rules {
        check_chain(rule)?;
        for (j, atom) in rule.body.iter().enumerate() {
            if atom.predicate == ENTROPY {
                if j + 1 != rule.body.len() {
                    return Err(Error::BuiltinPosition {
                        rule: rule.to_string(),
                        builtin: ENTROPY.to_string(),
                    });
                }
                if j == 0 {
                    return Err(Error::BuiltinPosition {
                        rule: rule.to_string(),
                        builtin: ENTROPY.to_string(),
                    });
                }
                continue;
            }
            if !rules_by_head.contains_key(&atom.predicate) && kb.relation(&atom.predicate).is_none()
            {
                return Err(Error::UnknownPredicate(atom.predicate.clone()));
            }
        }
    }

    let mut softmax = BTreeSet::new();
    let mut max_depth = BTreeMap::new();
    for d in &p.directives {
        match d {
            Directive::Softmax(pred) => {
                if !rules_by_head.contains_key(pred) && kb.relation(pred).is_none() {
                    return Err(Error::UnknownPredicate(pred.clone()));
                }
                softmax.insert(pred.clone());
            }
            Directive::MaxDepth(pred, depth) => {
                if max_depth.insert(pred.clone(), *depth).is_some() {
                    return Err(Error::Config(format!("duplicate #maxdepth for `{pred}`")));
                }
            }
            Directive::Trainable { relation, .. } => {
                if kb.relation(relation).is_none() {
                    return Err(Error::UnknownPredicate(relation.clone()));
                }
            }
            Directive::Builtin(_) => {}
        }
    }

    // Reachability over rule-defined predicates; components are mutual reachability classes.
    let preds: Vec<&String> = rules_by_head.keys().collect();
    let index: HashMap<&str, usize> = preds.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let n = preds.len();
    let mut edges = vec![BTreeSet::new(); n];
    for rule in &p.rules {
        let h = index[rule.head.predicate.as_str()];
        for atom in &rule.body {
            if let Some(&b) = index.get(atom.predicate.as_str()) {
                edges[h].insert(b);
            }
        }
    }
    let mut reach = vec![vec![false; n]; n];
    for s in 0..n {
        let mut stack: Vec<usize> = edges[s].iter().copied().collect();
        while let Some(v) = stack.pop() {
            if !reach[s][v] {
                reach[s][v] = true;
                stack.extend(edges[v].iter().copied());
            }
        }
    }
    let mut component = HashMap::new();
    let mut recursive = BTreeSet::new();
    for i in 0..n {
        let comp = (0..n)
            .find(|&j| j == i || (reach[i][j] && reach[j][i]))
            .unwrap();
        component.insert(preds[i].clone(), comp);
        if reach[i][i] {
            recursive.insert(preds[i].clone());
        }
    }

    Ok(ValidatedProgram {
        program: p.clone(),
        rules_by_head,
        component,
        recursive,
        softmax,
        max_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = "predict(X,Y) :- hasFeature(X,F), indicates(F,Y).";

    fn kb_with(rels: &[&str]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        for r in rels {
            kb.ensure_relation(r).unwrap();
        }
        kb
    }

    #[test]
    fn parses_classifier_rule() {
        let p = parse_program(FIG1).unwrap();
        assert_eq!(p.rules.len(), 1);
        let r = &p.rules[0];
        assert_eq!(r.head, Atom::new("predict", "X", "Y"));
        let body: Vec<_> = r.body.iter().map(|a| a.predicate.as_str()).collect();
        assert_eq!(body, ["hasFeature", "indicates"]);
    }

    #[test]
    fn arrow_forms_and_recursion() {
        let p = parse_program("sim(X1,X3) :- near(X1,X3).\nsim(X1,X3) <- near(X1,X2), sim(X2,X3).")
            .unwrap();
        assert_eq!(p.rules.len(), 2);
        let vp = validate_program(&p, &kb_with(&["near"])).unwrap();
        assert!(vp.is_recursive("sim"));
        assert!(!vp.rule_is_recursive(&p.rules[0]));
        assert!(vp.rule_is_recursive(&p.rules[1]));
    }

    #[test]
    fn unary_atom_is_an_arity_error() {
        match parse_program("p(X) :- q(X).") {
            Err(Error::Arity {
                line: 1,
                column: 1,
                found: 1,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_location() {
        match parse_program("p(X,Y) :- q(X,Y)\nr(X,Y) :- q(X,Y).") {
            Err(Error::Parse { line: 2, column: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_program("p(X,y) :- q(X,y)."), Err(Error::Parse { .. })));
        assert!(matches!(parse_program("#frobnicate x"), Err(Error::Parse { line: 1, .. })));
        // same input, same error
        assert_eq!(parse_program("p(X,Y) :- q(X,Y) $"), parse_program("p(X,Y) :- q(X,Y) $"));
    }

    #[test]
    fn comments_and_directives() {
        let text = "% a comment\n#trainable indicates feature label init=uniform:0.01\n#builtin entropy\n#softmax predict % trailing\n#maxdepth sim 2\npredict(X,Y) :- hasFeature(X,F), % split\n   indicates(F,Y).\n";
        let p = parse_program(text).unwrap();
        assert_eq!(p.rules.len(), 1);
        assert_eq!(
            p.directives,
            vec![
                Directive::Trainable {
                    relation: "indicates".into(),
                    domains: Some(("feature".into(), "label".into())),
                    init: Init::Uniform(0.01)
                },
                Directive::Builtin("entropy".into()),
                Directive::Softmax("predict".into()),
                Directive::MaxDepth("sim".into(), 2),
            ]
        );
    }

    #[test]
    fn entropy_rule_validates() {
        let p = parse_program(&format!(
            "{FIG1}\npredictionHasEntropy(X,H) :- predict(X,Y), entropy(Y,H)."
        ))
        .unwrap();
        validate_program(&p, &kb_with(&["hasFeature", "indicates"])).unwrap();
    }

    #[test]
    fn entropy_must_be_last() {
        let p = parse_program("p(X,H) :- q(X,Y), entropy(Y,H2), q(H2,H).").unwrap();
        assert!(matches!(
            validate_program(&p, &kb_with(&["q"])),
            Err(Error::BuiltinPosition { .. })
        ));
    }

    #[test]
    fn disconnected_rule_names_variable() {
        let p = parse_program("p(X,Y) :- q(Z,W).").unwrap();
        match validate_program(&p, &kb_with(&["q"])) {
            Err(Error::Chain { variable, .. }) => assert_eq!(variable, "Z"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_intermediate_variable_is_rejected() {
        let p = parse_program("p(X,Y) :- q(X,Z), q(Z,X), q(X,Y).").unwrap();
        assert!(matches!(validate_program(&p, &kb_with(&["q"])), Err(Error::Chain { .. })));
    }

    #[test]
    fn unknown_predicate() {
        let p = parse_program("p(X,Y) :- nope(X,Y).").unwrap();
        assert!(matches!(
            validate_program(&p, &KnowledgeBase::new()),
            Err(Error::UnknownPredicate(ref s)) if s == "nope"
        ));
    }

    #[test]
    fn colinked_chain_of_three() {
        let p = parse_program("sim(X1,X3) :- near(X1,X3).\nsim(X1,X3) :- near(X1,Z), near(Z,X2), sim(X2,X3).")
            .unwrap();
        let vp = validate_program(&p, &kb_with(&["near"])).unwrap();
        assert_eq!(p.rules[1].body.len(), 3);
        assert!(vp.is_recursive("sim"));
    }

    #[test]
    fn format_is_canonical_and_idempotent() {
        let p = parse_program(&format!("#softmax predict\n{FIG1}")).unwrap();
        let text = format_program(&p);
        assert_eq!(parse_program(&text).unwrap(), p);
        assert_eq!(format_program(&parse_program(&text).unwrap()), text);
    }

    #[test]
    fn mutual_recursion_components() {
        let p = parse_program(
            "a(X,Y) :- r(X,Y).\na(X,Y) :- r(X,Z), b(Z,Y).\nb(X,Y) :- a(X,Y).\nc(X,Y) :- a(X,Y).",
        )
        .unwrap();
        let vp = validate_program(&p, &kb_with(&["r"])).unwrap();
        assert!(vp.same_component("a", "b"));
        assert!(!vp.same_component("c", "a"));
        assert!(!vp.is_recursive("c"));
    }
}
