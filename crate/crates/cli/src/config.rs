//! Run configuration: one TOML document, overridable per key from the
//! command line with `--section.key=value`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use entlog::data::SyntheticConfig;
use entlog::templates::ConstraintSpec;
use entlog::train::{Optimizer, TrainConfig};
use entlog::tune::Strategy;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const OUT_DIR_ENV: &str = "ENTLOG_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "entlog-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub paths: Paths,
    pub data: DataSection,
    /// Generate a synthetic citation dataset instead of reading one.
    pub synthetic: Option<SyntheticSection>,
    /// Named entity sets for `#trainable` directives (rules mode).
    pub domains: BTreeMap<String, DomainSpec>,
    /// Weight per example predicate (rules mode); unlisted heads weigh 1.
    pub weights: BTreeMap<String, f64>,
    /// Constraint heads added to the text classifier (dataset mode).
    pub constraints: Vec<ConstraintSpec>,
    pub train: TrainSection,
    pub tune: TuneSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub rules: Option<PathBuf>,
    pub facts: Vec<PathBuf>,
    pub examples: Vec<PathBuf>,
    pub val_examples: Vec<PathBuf>,
    pub test_examples: Vec<PathBuf>,
    pub content: Option<PathBuf>,
    pub cites: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Paths {
    fn all(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        v.extend(self.rules.as_deref());
        v.extend(self.facts.iter().map(PathBuf::as_path));
        v.extend(self.examples.iter().map(PathBuf::as_path));
        v.extend(self.val_examples.iter().map(PathBuf::as_path));
        v.extend(self.test_examples.iter().map(PathBuf::as_path));
        v.extend(self.content.as_deref());
        v.extend(self.cites.as_deref());
        v.extend(self.checkpoint.as_deref());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub per_class_train: usize,
    pub test: usize,
    pub val_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            per_class_train: 20,
            test: 1000,
            val_fraction: entlog::data::DEFAULT_VAL_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub vocab_per_class: usize,
    pub shared_vocab: usize,
    pub ambiguity: f64,
    pub docs: usize,
    pub doc_length: usize,
    pub graph_homophily: f64,
    pub edges_per_doc: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        SyntheticSection {
            classes: d.classes,
            vocab_per_class: d.vocab_per_class,
            shared_vocab: d.shared_vocab,
            ambiguity: d.ambiguity,
            docs: d.docs,
            doc_length: d.doc_length,
            graph_homophily: d.graph_homophily,
            edges_per_doc: d.edges_per_doc,
        }
    }
}

impl SyntheticSection {
    pub fn to_config(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            vocab_per_class: self.vocab_per_class,
            ambiguity: self.ambiguity,
            docs: self.docs,
            graph_homophily: self.graph_homophily,
            seed,
            doc_length: self.doc_length,
            shared_vocab: self.shared_vocab,
            edges_per_doc: self.edges_per_doc,
        }
    }
}

/// Either an explicit member list or every head/tail entity of a relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Members(Vec<String>),
    Relation { relation: String, side: Side },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerName,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            optimizer: OptimizerName::Adam,
            patience: d.patience.unwrap_or(0),
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: match self.optimizer {
                OptimizerName::Adam => Optimizer::default(),
                OptimizerName::Sgd => Optimizer::Sgd,
            },
            seed,
            patience: (self.patience > 0).then_some(self.patience),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    #[default]
    Bayesian,
    Random,
}

impl From<StrategyName> for Strategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Bayesian => Strategy::Bayesian,
            StrategyName::Random => Strategy::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub budget: usize,
    pub strategy: StrategyName,
    pub lower: f64,
    pub upper: f64,
    /// Heads whose weights are tuned; empty means every non-target head.
    pub heads: Vec<String>,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            budget: entlog::tune::DEFAULT_BUDGET,
            strategy: StrategyName::Bayesian,
            lower: 0.0,
            upper: entlog::tune::DEFAULT_UPPER,
            heads: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Accuracy,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Predicate whose argmax answer is the prediction.
    pub target: String,
    pub mode: EvalMode,
    /// Label meaning "no relation" in retrieval mode.
    pub other_label: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            target: entlog::experiment::PREDICT.into(),
            mode: EvalMode::Accuracy,
            other_label: None,
        }
    }
}

/// Splits `--a.b=value` overrides out of `args`, returning the rest.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some(body) = a.strip_prefix("--") {
            if let Some((key, value)) = body.split_once('=') {
                if key.contains('.') {
                    overrides.push((key.to_string(), value.to_string()));
                    continue;
                }
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!(UsageError(format!("override `{key}`: `{part}` is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the config file (if any), applies overrides and checks that every
/// referenced path exists.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut table, k, parse_value(v))?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| UsageError(format!("invalid config: {e}")))?;
    for p in config.paths.all() {
        if !p.exists() {
            bail!(UsageError(format!("path does not exist: {}", p.display())));
        }
    }
    Ok(config)
}

impl RunConfig {
    /// Flag, then config file, then environment, then the built-in default.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing config")
    }

    pub fn is_dataset(&self) -> bool {
        self.paths.content.is_some() || self.synthetic.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_out() {
        let args = vec!["entlog".into(), "train".into(), "--train.epochs=5".into(), "--out=x".into()];
        let (rest, ov) = extract_overrides(args);
        assert_eq!(rest, vec!["entlog", "train", "--out=x"]);
        assert_eq!(ov, vec![("train.epochs".to_string(), "5".to_string())]);
    }

    #[test]
    fn override_values_are_typed() {
        let cfg = load(
            None,
            &[
                ("train.epochs".into(), "5".into()),
                ("train.optimizer".into(), "sgd".into()),
                ("eval.target".into(), "\"label\"".into()),
                ("tune.heads".into(), "[\"a\", \"b\"]".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.optimizer, OptimizerName::Sgd);
        assert_eq!(cfg.eval.target, "label");
        assert_eq!(cfg.tune.heads, vec!["a", "b"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, &[("train.epoch".into(), "5".into())]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.synthetic = Some(SyntheticSection::default());
        cfg.domains.insert("labels".into(), DomainSpec::Members(vec!["a".into()]));
        cfg.domains.insert(
            "features".into(),
            DomainSpec::Relation {
                relation: "hasFeature".into(),
                side: Side::Tail,
            },
        );
        cfg.constraints.push(ConstraintSpec::new(entlog::templates::ConstraintKind::Nber));
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
