use alloc::string::ToString;

use super::*;
use crate::oracle::{FormatType, ReferenceOracle, SizeRange};

fn corpus(tokens: &[&str], per_type: usize, seed: u64) -> Corpus {
    let mut rng = Lcg::new(seed);
    let mut files = Vec::new();
    for tok in tokens {
        let ty: FormatType = tok.parse().unwrap();
        for k in 0..per_type {
            let spec = ty.instantiate(&SizeRange::default(), &mut rng);
            files.push((format!("{tok}-{k}"), spec.encode(&mut rng).unwrap()));
        }
    }
    Corpus::new(files, &ReferenceOracle).unwrap()
}

fn log_files(corpus: &Corpus, which: impl IntoIterator<Item = usize>) -> LogSet {
    which
        .into_iter()
        .map(|i| {
            let f = &corpus.files[i];
            let log = ReferenceOracle.trace(&f.bytes, &f.id).unwrap();
            let program = PreparedLog::new(&log)
                .unwrap()
                .choose(DEFAULT_STRIDES)
                .unwrap();
            (i, LoggedFile { log, program })
        })
        .collect()
}

#[test]
fn hand_executed_hew() {
    let good: [&[u8]; 2] = [&[1, 5], &[1, 6]];
    let bad: [&[u8]; 1] = [&[2, 5]];
    assert_eq!(
        pick_a_hew(&good, &bad, 2),
        Some(Predicate { index: 0, value: 1 })
    );
}

#[test]
fn identical_headers_fall_back_to_first_byte() {
    let good: [&[u8]; 1] = [&[9, 4]];
    let bad: [&[u8]; 1] = [&[9, 4]];
    assert_eq!(
        pick_a_hew(&good, &bad, 2),
        Some(Predicate { index: 0, value: 9 })
    );
}

#[test]
fn short_files_fail_predicates() {
    let p = Predicate { index: 4, value: 0 };
    assert!(!p.eval(&[0; 4]));
    assert!(p.eval(&[0; 5]));
}

#[test]
fn one_type_gives_one_leaf() {
    let c = corpus(&["bmp24"], 6, 1);
    let all: Vec<usize> = (0..c.len()).collect();
    let tree = build_tree(&c, &all, &log_files(&c, [0, 1, 2]), 32, Voting::Cartesian).unwrap();
    assert_eq!(tree.leaf_count(), 1);
    assert!(test_parser(&tree, &c, &all).unparseable().is_empty());
}

#[test]
fn untraced_type_gets_a_null_leaf() {
    let c = corpus(&["fwc", "wav-m8"], 4, 2);
    let all: Vec<usize> = (0..c.len()).collect();
    let tree = build_tree(&c, &all, &log_files(&c, [0]), 32, Voting::Cartesian).unwrap();
    let ParserTree::Node { sat, unsat, .. } = &tree else {
        panic!("expected a split: {tree:?}");
    };
    assert!(matches!(**sat, ParserTree::Leaf(Some(_))));
    assert_eq!(**unsat, ParserTree::Leaf(None));
    let report = test_parser(&tree, &c, &all);
    assert_eq!(report.unparseable(), [4, 5, 6, 7]);
    assert!(report.verdicts[4..]
        .iter()
        .all(|(_, v)| *v == Verdict::Error(InterpError::NoParser)));
}

#[test]
fn wav_channel_split() {
    let c = corpus(&["wav-m8", "wav-s16"], 5, 3);
    let all: Vec<usize> = (0..c.len()).collect();
    let tree = build_tree(&c, &all, &log_files(&c, [0, 5]), 64, Voting::Cartesian).unwrap();
    assert_eq!(tree.leaf_count(), 2);
    let root = tree.predicates()[0];
    assert!([22, 32].contains(&root.index), "{root}");
    assert!(test_parser(&tree, &c, &all).unparseable().is_empty());
}

#[test]
fn null_tree_parses_nothing() {
    let c = corpus(&["fwc"], 3, 4);
    let report = test_parser(&ParserTree::Leaf(None), &c, &[0, 1, 2]);
    assert_eq!(report.unparseable(), [0, 1, 2]);
}

#[test]
fn wrong_height_binding_reports_first_difference() {
    let c = corpus(&["bmp24"], 4, 5);
    let all: Vec<usize> = (0..c.len()).collect();
    let ParserTree::Leaf(Some(mut p)) =
        build_tree(&c, &all, &log_files(&c, [0, 1]), 32, Voting::Cartesian).unwrap()
    else {
        panic!("expected one leaf");
    };
    // Height read from the width field instead.
    let width = p.symbols["LOOP_BOUND_A"].def.clone();
    p.symbols.get_mut("LOOP_BOUND_B").unwrap().def = width;
    let tree = ParserTree::Leaf(Some(p));
    let f = c.files.iter().find(|f| f.bytes[18] != f.bytes[22]).unwrap();
    assert!(matches!(
        verdict(&tree, f),
        Verdict::Mismatch { .. } | Verdict::Error(_)
    ));
}

#[test]
fn single_type_converges_in_one_round() {
    let c = corpus(&["wav-s16"], 8, 6);
    let opts = ExpandOptions {
        header_start: 64,
        ..ExpandOptions::default()
    };
    let done = expand_logs_until_converged(&c, &ReferenceOracle, &opts).unwrap();
    assert_eq!(done.rounds.len(), 1);
    assert!(done.logs.len() <= opts.batch);
    assert_eq!(done.tree.leaf_count(), 1);
}

#[test]
fn header_grows_until_bounds_bind() {
    // The sample count lives at offset 40, past a 32-byte header.
    let c = corpus(&["wav-m16"], 12, 7);
    let opts = ExpandOptions {
        batch: 2,
        ..ExpandOptions::default()
    };
    let done = expand_logs_until_converged(&c, &ReferenceOracle, &opts).unwrap();
    assert_eq!(done.header_size, 64);
    assert!(done.logs.len() <= 4, "{:?}", done.rounds);
}

#[test]
fn dot_output() {
    assert_eq!(
        export_dot(&ParserTree::Leaf(None), &[3]),
        "digraph parser {\n  node [fontname=\"monospace\"];\n  n0 [shape=box, label=\"leaf 0\\nno parser\\n3 file(s)\"];\n}\n"
    );
    let two = ParserTree::Node {
        predicate: Predicate {
            index: 28,
            value: 24,
        },
        sat: Box::new(ParserTree::Leaf(None)),
        unsat: Box::new(ParserTree::Leaf(None)),
    };
    let dot = export_dot(&two, &[1, 2]);
    assert_eq!(dot.matches(" [label=\"in[28] == 24\"]").count(), 1);
    assert_eq!(dot.matches("shape=box").count(), 2);
    assert!(dot.contains("n0 -> n1 [label=\"true\"]"));
    assert!(dot.contains("n0 -> n2 [label=\"false\"]"));
}

#[test]
fn routing_counts_match_leaves() {
    let c = corpus(&["fwc", "bmp16"], 4, 8);
    let all: Vec<usize> = (0..c.len()).collect();
    let tree = build_tree(&c, &all, &log_files(&c, [0, 4]), 32, Voting::Cartesian).unwrap();
    let counts = leaf_counts(&tree, &c);
    assert_eq!(counts.iter().sum::<usize>(), c.len());
    assert_eq!(counts.len(), tree.leaf_count());
}

#[test]
fn strategies_order_by_size() {
    let c = corpus(&["fwc"], 6, 9);
    let pool: Vec<usize> = (0..6).collect();
    let small = Strategy::Smallest.select(&c, &pool, 2, 0);
    let large = Strategy::Largest.select(&c, &pool, 2, 0);
    let len = |i: usize| c.files[i].bytes.len();
    assert!(small
        .iter()
        .all(|&s| pool.iter().filter(|&&p| len(p) < len(s)).count() < 2));
    assert!(large
        .iter()
        .all(|&l| pool.iter().filter(|&&p| len(p) > len(l)).count() < 2));
    assert_eq!(
        Strategy::Random(4).select(&c, &pool, 3, 1),
        Strategy::Random(4).select(&c, &pool, 3, 1)
    );
    for s in ["smallest", "largest", "random:12"] {
        assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
    }
    assert!("biggest".parse::<Strategy>().is_err());
}
