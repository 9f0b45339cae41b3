//! Assembly of a document classifier plus constraint heads from a dataset
//! bundle.

use crate::data::{DatasetBundle, FEATURES, HAS_FEATURE, LABELS};
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase};
use crate::plan::{compile, Plan};
use crate::rules::{validate_program, Program, ValidatedProgram};
use crate::templates::{emit_classifier, emit_er, emit_network, subsample, ConstraintKind, ConstraintSpec};
use crate::train::{evaluate_accuracy, train, History, LossHead, TrainConfig, TrainingExample, Validation};

pub const PREDICT: &str = "predict";
pub const INDICATES: &str = "indicates";

/// A frozen KB with its program, the classifier plan and the loss heads.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub kb: KnowledgeBase,
    pub program: ValidatedProgram,
    pub predict: Plan,
    pub heads: Vec<LossHead>,
}

/// Text classifier `predict(X,Y) :- hasFeature(X,F), indicates(F,Y).` trained
/// on `bundle.train`, plus one head per constraint over `bundle.unlabeled`.
/// Supported kinds: ER, NBER, LPER and COLPER.
pub fn build_text_experiment(
    bundle: &DatasetBundle,
    constraints: &[ConstraintSpec],
    seed: u64,
) -> Result<Experiment> {
    let mut kb = bundle.kb.clone();
    let mut program = emit_classifier(PREDICT, HAS_FEATURE, INDICATES, FEATURES, LABELS)?;
    let mut pending: Vec<(String, Vec<TrainingExample>, f64)> = Vec::new();
    for (k, spec) in constraints.iter().enumerate() {
        spec.check()?;
        let unlabeled = subsample(&bundle.unlabeled, spec.max_unlabeled, seed ^ (k as u64 + 1));
        let emitted = match spec.kind {
            ConstraintKind::Er => emit_er(&mut kb, PREDICT, &unlabeled)?,
            ConstraintKind::Nber | ConstraintKind::Lper | ConstraintKind::Colper => {
                emit_network(&mut kb, spec.kind, PREDICT, &spec.near, spec.depth, &unlabeled)?
            }
            other => {
                return Err(Error::Config(format!(
                    "{other} needs relation-extraction inputs; supply rules and examples directly"
                )))
            }
        };
        program.extend(emitted.program);
        pending.push((emitted.head, emitted.examples, spec.weight));
    }
    program.apply_directives(&mut kb, seed)?;
    kb.freeze()?;
    let vp = validate_program(&program, &kb)?;
    let predict = compile(&vp, PREDICT, &kb)?;
    let train_examples: Vec<TrainingExample> = bundle
        .labeled(&bundle.train)
        .into_iter()
        .map(|(x, y)| TrainingExample::new(PREDICT, x, y))
        .collect();
    let mut heads = vec![LossHead::new(PREDICT, predict.clone(), &train_examples, 1.0)?];
    for (head, examples, weight) in pending {
        let plan = compile(&vp, &head, &kb)?;
        heads.push(LossHead::new(&head, plan, &examples, weight)?);
    }
    Ok(Experiment {
        kb,
        program: vp,
        predict,
        heads,
    })
}

impl Experiment {
    /// Trains in place, validating on `val` when it is nonempty.
    pub fn fit(&mut self, config: &TrainConfig, val: &[(EntityId, EntityId)]) -> Result<History> {
        let validation = (!val.is_empty()).then_some(Validation {
            plan: &self.predict,
            examples: val,
        });
        let (_, history) = train(&self.heads, &mut self.kb, config, validation)?;
        Ok(history)
    }

    pub fn accuracy(&self, test: &[(EntityId, EntityId)]) -> Result<f64> {
        evaluate_accuracy(&self.predict, &self.kb, test)
    }

    pub fn set_weight(&mut self, head: &str, weight: f64) -> Result<()> {
        let h = self
            .heads
            .iter_mut()
            .find(|h| h.name == head)
            .ok_or_else(|| Error::UnknownPredicate(head.to_string()))?;
        h.weight = weight;
        Ok(())
    }

    pub fn program_text(&self) -> String {
        let p: &Program = self.program.program();
        p.to_string()
    }
}
