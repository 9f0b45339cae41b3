#![allow(dead_code)]

use entlog::kb::KnowledgeBase;
use entlog::plan::{compile, compile_with, CompileOptions, Plan};
use entlog::rules::{parse_program, validate_program, ValidatedProgram};

pub const CLASSIFIER: &str = "predict(X,Y) :- hasFeature(X,F), indicates(F,Y).";

/// The toy document classifier: x1 has features pars (0.6) and lstm (0.4).
pub fn fig1_kb() -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    kb.add_fact_named("hasFeature", "x1", "pars", 0.6).unwrap();
    kb.add_fact_named("hasFeature", "x1", "lstm", 0.4).unwrap();
    kb.add_fact_named("indicates", "pars", "accept", 0.2).unwrap();
    kb.add_fact_named("indicates", "lstm", "reject", 0.3).unwrap();
    kb
}

pub fn validated(text: &str, kb: &KnowledgeBase) -> ValidatedProgram {
    validate_program(&parse_program(text).unwrap(), kb).unwrap()
}

pub fn plan(text: &str, target: &str, kb: &KnowledgeBase) -> Plan {
    compile(&validated(text, kb), target, kb).unwrap()
}

pub fn raw_plan(text: &str, target: &str, kb: &KnowledgeBase, depth: i64) -> Plan {
    let options = CompileOptions {
        default_depth: depth,
        apply_softmax: false,
    };
    compile_with(&validated(text, kb), target, kb, options).unwrap()
}

/// Every rule set from the document-classification and relation-extraction
/// examples, one program per constraint.
pub const CORPUS: &[&str] = &[
    "predict(X,Y) :- hasFeature(X,F), indicates(F,Y).",
    "predictionHasEntropy(X,H) :- predict(X,Y), entropy(Y,H).",
    "predictionHasEntropy(X,H) :- predict(X,Y), entropy(Y,H).\n\
     predict(X,Y) :- predict1(X,Y).\n\
     predict(X,Y) :- predict2(X,Y).\n\
     predict1(X,Y) :- hasFeature1(X,F), indicates1(F,Y).\n\
     predict2(X,Y) :- hasFeature2(X,F), indicates2(F,Y).",
    "neighborPredictionsHaveEntropy(X1,H) :- near(X1,X2), predict(X2,Y2), entropy(Y2,H).",
    "nearbyPredictionsHaveEntropy(X1,H) :- sim(X1,X3), predict(X3,Y3), entropy(Y3,H).\n\
     sim(X1,X3) :- near(X1,X3).\n\
     sim(X1,X3) :- near(X1,X2), sim(X2,X3).",
    "nearbyPredictionsHaveEntropy(X1,H) :- sim(X1,X3), predict(X3,Y3), entropy(Y3,H).\n\
     sim(X1,X3) :- near(X1,X3).\n\
     sim(X1,X3) :- near(X1,Z), near(Z,X2), sim(X2, X3).",
    "predictionHasEntropy(X,H) :- predict(X,T), entropy(T,H).\n\
     predict(X,T) :- predictT(X,T).\n\
     predict(X,T) :- predictR(X,R), hasType(R,T).",
    "pairPredictionsHaveEntropy(P,H) :- hasExample(P,X1), predict(X1,Y), entropy(Y,H).",
    "setPredictionsHaveEntropy(P,H) :- hasExampleSet(P,X2), predict(X2,Y), entropy(Y,H).\n\
     hasExampleSet(P,X2) :- hasExample(P,X2).\n\
     hasExampleSet(P,X2) :- hasExample(P,X1), inPair(X1,P2), hasExampleSet(P2, X2).",
    "#trainable indicates features labels init=uniform:0.1\n#softmax predict\n#maxdepth sim 2\n\
     predict(X,Y) :- hasFeature(X,F), indicates(F,Y).",
];
