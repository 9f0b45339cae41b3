use std::collections::BTreeSet;
use std::io::Write;

use entlog::data::{
    generate_synthetic, load_citation_dataset, load_examples_tsv, make_split, SyntheticConfig, HAS_FEATURE, NEAR,
};
use entlog::kb::KnowledgeBase;
use entlog::Error;
use proptest::prelude::*;

const CONTENT: &str = "\
a 1 1 1 1 0 0 ML
b 0 1 0 0 1 0 DB
c 0 0 2 0 0 2 ML
d 0 0 0 0 0 0 DB
e 1 0 0 0 0 0 DB
";

fn load(content: &str, cites: &str) -> entlog::data::DatasetBundle {
    load_citation_dataset(content.as_bytes(), cites.as_bytes()).unwrap()
}

#[test]
fn binary_features_are_l1_normalized() {
    let b = load(CONTENT, "");
    let a = b.kb.entity("a").unwrap();
    let facts: Vec<_> = b.kb.relation(HAS_FEATURE).unwrap().facts().into_iter().filter(|f| f.0 == a).collect();
    assert_eq!(facts.len(), 4);
    assert!(facts.iter().all(|f| f.2 == 0.25));
    let c = b.kb.entity("c").unwrap();
    let w: Vec<f64> = b.kb.relation(HAS_FEATURE).unwrap().facts().into_iter().filter(|f| f.0 == c).map(|f| f.2).collect();
    assert_eq!(w, vec![0.5, 0.5]);
}

#[test]
fn zero_feature_documents_are_dropped() {
    let b = load(CONTENT, "");
    assert_eq!(b.dropped_docs, 1);
    assert!(b.kb.entity("d").is_none());
    assert_eq!(b.docs.len(), 4);
}

#[test]
fn citation_edge_gives_symmetric_and_self_near() {
    let b = load(CONTENT, "a b\n");
    let (a, bb) = (b.kb.entity("a").unwrap(), b.kb.entity("b").unwrap());
    for (h, t) in [(a, bb), (bb, a), (a, a), (bb, bb)] {
        assert_eq!(b.kb.weight(NEAR, h, t), Some(1.0));
    }
    assert_eq!(b.kb.relation(NEAR).unwrap().nnz(), 4 + 2);
}

#[test]
fn empty_cites_leaves_only_self_loops() {
    let b = load(CONTENT, "");
    let near = b.kb.relation(NEAR).unwrap().facts();
    assert_eq!(near.len(), b.docs.len());
    assert!(near.iter().all(|(h, t, w)| h == t && *w == 1.0));
}

#[test]
fn unknown_citations_are_counted() {
    let b = load(CONTENT, "a zz\nd a\n");
    assert_eq!(b.dropped_citations, 2);
}

#[test]
fn malformed_lines_report_line_numbers() {
    let err = load_citation_dataset("a 1 x ML\n".as_bytes(), "".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Ingest { line: 1, .. }));
    let err = load_citation_dataset(CONTENT.as_bytes(), "a b\na b c\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Ingest { line: 2, .. }));
}

#[test]
fn real_valued_features_keep_proportions() {
    let b = load("p1 0.2 0.6 0 X\np2 1 0 0 Y\n", "");
    let p1 = b.kb.entity("p1").unwrap();
    let w: Vec<f64> = b.kb.relation(HAS_FEATURE).unwrap().facts().into_iter().filter(|f| f.0 == p1).map(|f| f.2).collect();
    assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
}

fn six_class_bundle() -> entlog::data::DatasetBundle {
    let mut content = String::new();
    for i in 0..600 {
        let mut feats = vec!["0"; 6];
        feats[i % 6] = "1";
        content.push_str(&format!("doc{i} {} C{}\n", feats.join(" "), i % 6));
    }
    load(&content, "")
}

#[test]
fn split_protocol_arithmetic() {
    let b = six_class_bundle();
    let s = make_split(&b, 20, 300, 0.25, 1).unwrap();
    assert_eq!(s.train.len() + s.val.len(), 120);
    assert_eq!(s.val.len(), 30);
    assert_eq!(s.test.len(), 300);
    assert_eq!(s.unlabeled.len(), 600 - 120 - 300);
    let sets: Vec<BTreeSet<_>> = [&s.train, &s.val, &s.test, &s.unlabeled]
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(sets[i].is_disjoint(&sets[j]));
        }
    }
    let again = make_split(&b, 20, 300, 0.25, 1).unwrap();
    assert_eq!((&s.train, &s.val, &s.test), (&again.train, &again.val, &again.test));
    let other = make_split(&b, 20, 300, 0.25, 2).unwrap();
    assert_ne!(other.test, s.test);
}

#[test]
fn split_reports_short_class() {
    let b = load(CONTENT, "");
    match make_split(&b, 3, 0, 0.0, 0) {
        Err(Error::Split { class, needed, available }) => {
            assert_eq!((class.as_str(), needed, available), ("ML", 3, 2));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn synthetic_without_ambiguity_is_separable() {
    let cfg = SyntheticConfig {
        ambiguity: 0.0,
        docs: 40,
        ..SyntheticConfig::default()
    };
    let b = generate_synthetic(&cfg).unwrap();
    for (d, f, _) in b.kb.relation(HAS_FEATURE).unwrap().facts() {
        let label = b.kb.entity_name(b.gold[&d]).unwrap();
        let feature = b.kb.entity_name(f).unwrap();
        // class-pure tokens are named w<class>_<j>
        assert!(feature.starts_with(&format!("w{}_", &label[1..])));
    }
}

#[test]
fn synthetic_full_homophily_links_same_class() {
    let cfg = SyntheticConfig {
        graph_homophily: 1.0,
        docs: 60,
        classes: 3,
        ..SyntheticConfig::default()
    };
    let b = generate_synthetic(&cfg).unwrap();
    for (h, t, _) in b.kb.relation(NEAR).unwrap().facts() {
        assert_eq!(b.gold[&h], b.gold[&t]);
    }
}

#[test]
fn examples_tsv() {
    let mut kb = KnowledgeBase::new();
    let ex = load_examples_tsv(&mut kb, "predict\tx1\taccept\npredictionHasEntropy\tx7\tlow\n".as_bytes()).unwrap();
    assert_eq!(ex.len(), 2);
    assert_eq!(ex[0].predicate, "predict");
    assert_eq!(kb.entity_name(ex[0].query), Some("x1"));
    assert_eq!(kb.entity_name(ex[0].target), Some("accept"));
    assert_eq!(ex[1].target, kb.low());
    assert!(load_examples_tsv(&mut kb, "".as_bytes()).unwrap().is_empty());
}

#[test]
fn loads_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let content = dir.path().join("x.content");
    let cites = dir.path().join("x.cites");
    std::fs::File::create(&content).unwrap().write_all(CONTENT.as_bytes()).unwrap();
    std::fs::File::create(&cites).unwrap().write_all(b"a c\n").unwrap();
    let b = load_citation_dataset(
        std::io::BufReader::new(std::fs::File::open(&content).unwrap()),
        std::io::BufReader::new(std::fs::File::open(&cites).unwrap()),
    )
    .unwrap();
    assert_eq!(b.docs.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn near_symmetric_reflexive_and_rows_normalized(
        rows in prop::collection::vec(prop::collection::vec(0u8..3, 5), 1..12),
        edges in prop::collection::vec((0usize..12, 0usize..12), 0..20),
    ) {
        let mut content = String::new();
        for (i, r) in rows.iter().enumerate() {
            let cols: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            content.push_str(&format!("d{i} {} L{}\n", cols.join(" "), i % 2));
        }
        let cites: String = edges.iter().map(|(a, b)| format!("d{a} d{b}\n")).collect();
        let b = load(&content, &cites);
        let near = b.kb.relation(NEAR).unwrap();
        for (h, t, _) in near.facts() {
            prop_assert!(near.weight(t, h).is_some());
        }
        for &d in &b.docs {
            prop_assert_eq!(near.weight(d, d), Some(1.0));
            let s: f64 = b.kb.relation(HAS_FEATURE).unwrap().facts().iter().filter(|f| f.0 == d).map(|f| f.2).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }
}
