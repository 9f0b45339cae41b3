mod common;

use common::CORPUS;

use entlog::engine::evaluate;
use entlog::kb::KnowledgeBase;
use entlog::plan::Plan;
use entlog::rules::{format_program, parse_program};

#[test]
fn corpus_parse_format_round_trip() {
    for text in CORPUS {
        let p = parse_program(text).unwrap();
        let formatted = format_program(&p);
        let again = parse_program(&formatted).unwrap();
        assert_eq!(p, again, "{text}");
        // formatting is a fixed point
        assert_eq!(formatted, format_program(&again));
    }
}

#[test]
fn corpus_rule_counts() {
    let counts: Vec<usize> = CORPUS.iter().map(|t| parse_program(t).unwrap().rules.len()).collect();
    assert_eq!(counts, vec![1, 1, 5, 1, 3, 3, 3, 1, 3, 1]);
}

fn corpus_kb() -> KnowledgeBase {
    let mut kb = common::fig1_kb();
    for (r, a, b, w) in [
        ("near", "x1", "x2", 1.0),
        ("near", "x2", "x1", 1.0),
        ("near", "x1", "x1", 1.0),
        ("hasFeature", "x2", "lstm", 1.0),
        ("hasExample", "p", "x1", 1.0),
        ("hasExample", "p", "x2", 1.0),
        ("inPair", "x1", "p", 1.0),
        ("inPair", "x2", "p", 1.0),
    ] {
        kb.add_fact_named(r, a, b, w).unwrap();
    }
    kb.freeze().unwrap();
    kb
}

#[test]
fn dumped_plans_reparse_to_the_same_graph() {
    let kb = corpus_kb();
    let cases = [
        (CORPUS[0], "predict"),
        (CORPUS[3], "neighborPredictionsHaveEntropy"),
        (CORPUS[4], "nearbyPredictionsHaveEntropy"),
        (CORPUS[5], "nearbyPredictionsHaveEntropy"),
        (CORPUS[8], "setPredictionsHaveEntropy"),
    ];
    for (rules, target) in cases {
        let text = if rules.contains("predict(X,Y) :- hasFeature") {
            format!("#softmax predict\n{rules}")
        } else {
            format!("#softmax predict\n{}\n{rules}", common::CLASSIFIER)
        };
        let plan = common::plan(&text, target, &kb);
        let dump = plan.dump();
        let back = Plan::from_dump(&dump, &kb).unwrap();
        assert_eq!(plan, back, "{target}");
        assert_eq!(back.dump(), dump);
        let qs: Vec<_> = (0..kb.num_entities()).collect();
        assert_eq!(evaluate(&plan, &kb, &qs).unwrap(), evaluate(&back, &kb, &qs).unwrap());
    }
}

#[test]
fn malformed_dump_is_rejected() {
    let kb = corpus_kb();
    assert!(Plan::from_dump("not a plan", &kb).is_err());
    let dump = common::plan(common::CLASSIFIER, "predict", &kb).dump();
    let broken = dump.replace("indicates", "nosuchrel");
    assert!(Plan::from_dump(&broken, &kb).is_err());
}
