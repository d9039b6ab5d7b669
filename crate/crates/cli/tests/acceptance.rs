//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits nonzero when any criterion fails.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regen::commands::{converge, evaluate};
use regen::config::RunConfig;
use regen::manifest::generate;
use regen::verify::{find_compiler, verify_emitted, VerifyStatus};
use regen_core::emit::{emit_source, scan_raw_subscripts, EmitOptions};
use regen_core::generalize::{
    consistent_assignment, vote, AssignmentVariant, Candidate, Voting, WeightMatrix,
};
use regen_core::ir::{Field, HeaderSource, IrProgram, SymbolDef};
use regen_core::lcg::Lcg;
use regen_core::oracle::{FormatSpec, FormatType, Oracle, ReferenceOracle, SizeRange};
use regen_core::summarize::{choose_stride, DEFAULT_STRIDES};
use regen_core::tree::{test_parser, Converged, Corpus, ParserTree, Predicate, Strategy};

const MIXED: [&str; 8] = [
    "wav-m8", "wav-s16", "bmp16", "bmp24", "bmp24-td", "bmp32", "bmp32-td", "fwc",
];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn types(tokens: &[&str]) -> Vec<FormatType> {
    tokens.iter().map(|t| t.parse().unwrap()).collect()
}

/// A generated corpus plus the format token of each file.
struct Labelled {
    corpus: Corpus,
    formats: Vec<String>,
}

fn labelled(tokens: &[&str], count: usize, sizes: &SizeRange, seed: u64) -> Labelled {
    let (manifest, files) = generate(&types(tokens), count, sizes, seed).unwrap();
    let formats = manifest.files.iter().map(|e| e.format.clone()).collect();
    let named = manifest
        .files
        .iter()
        .map(|e| e.path.display().to_string())
        .zip(files);
    Labelled {
        corpus: Corpus::new(named, &ReferenceOracle).unwrap(),
        formats,
    }
}

fn encode(specs: &[FormatSpec], seed: u64) -> Corpus {
    let mut rng = Lcg::new(seed);
    let files = specs
        .iter()
        .enumerate()
        .map(|(k, s)| (format!("file-{k}"), s.encode(&mut rng).unwrap()));
    Corpus::new(files, &ReferenceOracle).unwrap()
}

fn bitmap(token: &str, width: u32, height: u32) -> FormatSpec {
    match token
        .parse::<FormatType>()
        .unwrap()
        .instantiate(&SizeRange::default(), &mut Lcg::new(0))
    {
        FormatSpec::Bmp(mut b) => {
            b.width = width;
            b.height = height;
            FormatSpec::Bmp(b)
        }
        other => other,
    }
}

fn all_parse(tree: &ParserTree, corpus: &Corpus) -> usize {
    let all: Vec<usize> = (0..corpus.len()).collect();
    test_parser(tree, corpus, &all).parseable().len()
}

struct Mixed {
    data: Labelled,
    result: Result<Converged, String>,
    elapsed: Duration,
}

fn mixed() -> &'static Mixed {
    static MIXED_RUN: OnceLock<Mixed> = OnceLock::new();
    MIXED_RUN.get_or_init(|| {
        let data = labelled(&MIXED, 20, &SizeRange::default(), 7);
        let start = Instant::now();
        let result = converge(&data.corpus, &RunConfig::default()).map_err(|e| e.to_string());
        Mixed {
            data,
            result,
            elapsed: start.elapsed(),
        }
    })
}

fn mixed_tree() -> Result<&'static Converged, Verdict> {
    mixed()
        .result
        .as_ref()
        .map_err(|e| verdict(false, format!("mixed corpus did not converge: {e}")))
}

fn training_completeness() -> Verdict {
    let m = mixed();
    let done = match mixed_tree() {
        Ok(d) => d,
        Err(v) => return v,
    };
    let parsed = all_parse(&done.tree, &m.data.corpus);
    let n = m.data.corpus.len();
    verdict(
        parsed == n && m.elapsed < Duration::from_secs(300),
        format!(
            "{parsed}/{n} files byte-exact across {} types, {} leaves, {:.1?}",
            MIXED.len(),
            done.tree.leaf_count(),
            m.elapsed
        ),
    )
}

fn stride_parsimony() -> Verdict {
    let mut rng = Lcg::new(21);
    let mut wrong = Vec::new();
    for (token, want) in [("bmp24", 3), ("bmp32", 4)] {
        for _ in 0..12 {
            let (w, h) = (rng.range(1, 60) as u32, rng.range(1, 60) as u32);
            let file = encode(&[bitmap(token, w, h)], rng.range(0, 1 << 20))
                .files
                .remove(0);
            let log = ReferenceOracle.trace(&file.bytes, &file.id).unwrap();
            let got = choose_stride(&log, DEFAULT_STRIDES).unwrap();
            if got != want {
                wrong.push(format!("{token} {w}x{h} -> {got}"));
            }
        }
    }
    verdict(wrong.is_empty(), format!("24 bitmaps, wrong: {wrong:?}"))
}

fn size_generalization() -> Verdict {
    let cfg = RunConfig::default();
    let mut rng = Lcg::new(33);
    let mut notes = Vec::new();
    let mut pass = true;
    for token in ["bmp16", "bmp24", "bmp24-td", "bmp32", "bmp32-td"] {
        let train = encode(&[bitmap(token, 13, 7)], 1);
        let tree = match converge(&train, &cfg) {
            Ok(d) => d.tree,
            Err(e) => {
                pass = false;
                notes.push(format!("{token}: {e}"));
                continue;
            }
        };
        let specs: Vec<FormatSpec> = (0..50)
            .map(|k| {
                // Every fifth size is well beyond the training file.
                let hi = if k % 5 == 0 { 300 } else { 60 };
                bitmap(token, rng.range(1, hi) as u32, rng.range(1, hi) as u32)
            })
            .collect();
        let test = encode(&specs, 2 + rng.range(0, 1000));
        let ok = all_parse(&tree, &test);
        pass &= ok == 50;
        notes.push(format!("{token} {ok}/50"));
    }
    verdict(pass, notes.join(", "))
}

fn square_ambiguity() -> Verdict {
    let cfg = RunConfig::default();
    let mut rng = Lcg::new(44);
    let mut notes = Vec::new();
    let mut pass = true;
    for token in ["bmp24", "bmp32"] {
        let mut specs: Vec<FormatSpec> = (0..10)
            .map(|_| {
                let d = rng.range(2, 40) as u32;
                bitmap(token, d, d)
            })
            .collect();
        specs.push(bitmap(token, 9, 5));
        let tree = match converge(&encode(&specs, 4), &cfg) {
            Ok(d) => d.tree,
            Err(e) => {
                pass = false;
                notes.push(format!("{token}: {e}"));
                continue;
            }
        };
        let fresh: Vec<FormatSpec> = (0..20)
            .map(|_| {
                let w = rng.range(1, 50) as u32;
                let h = loop {
                    let h = rng.range(1, 50) as u32;
                    if h != w {
                        break h;
                    }
                };
                bitmap(token, w, h)
            })
            .collect();
        let ok = all_parse(&tree, &encode(&fresh, 5));
        pass &= ok == 20;
        notes.push(format!("{token} {ok}/20"));
    }
    verdict(pass, notes.join(", "))
}

fn cross_validation() -> Verdict {
    // Two rare types with a single file each, so some repeats hold out a
    // type that training never saw.
    let mut data = labelled(&MIXED, 20, &SizeRange::default(), 55);
    let rare = labelled(&["bmp16-565", "wav-m16"], 1, &SizeRange::default(), 56);
    data.corpus.files.extend(rare.corpus.files);
    data.formats.extend(rare.formats);
    let cfg = RunConfig {
        repeats: 20,
        seed: 9,
        ..RunConfig::default()
    };
    let report = evaluate(&data.corpus, &data.formats, &cfg);
    let (mut full, mut partial, mut explained) = (0, 0, 0);
    let mut pass = true;
    for r in &report.repeats {
        for &i in &r.test_failures {
            let absent = r.formats_missing_from_train.contains(&data.formats[i]);
            explained += usize::from(absent);
            pass &= absent;
        }
        if r.formats_missing_from_train.is_empty() {
            full += 1;
            pass &= r.train_accuracy.is_some() && r.test_accuracy() == 1.0;
        } else {
            partial += 1;
        }
    }
    let (mean, min, _) = report.summary();
    verdict(
        pass,
        format!(
            "{full} repeats with every type trained at 100%, {partial} with a type missing, \
             {explained} failures all from missing types; mean {mean:.4}, min {min:.4}"
        ),
    )
}

fn log_selection_ordering() -> Verdict {
    let sizes = SizeRange {
        min_dim: 1,
        max_dim: 160,
        min_samples: 2,
        max_samples: 30000,
        min_chunk: 1,
        max_chunk: 20000,
    };
    let data = labelled(&["bmp24", "wav-s16", "fwc"], 20, &sizes, 66);
    let lens: Vec<usize> = data.corpus.files.iter().map(|f| f.bytes.len()).collect();
    let spread = *lens.iter().max().unwrap() as f64 / *lens.iter().min().unwrap() as f64;
    let traced = |strategy| {
        let cfg = RunConfig {
            strategy,
            ..RunConfig::default()
        };
        converge(&data.corpus, &cfg).map(|d| d.traced_bytes())
    };
    let (small, large) = match (traced(Strategy::Smallest), traced(Strategy::Largest)) {
        (Ok(s), Ok(l)) => (s, l),
        (a, b) => return verdict(false, format!("did not converge: {a:?} {b:?}")),
    };
    let mut random = Vec::new();
    for seed in 1..=3 {
        match traced(Strategy::Random(seed)) {
            Ok(t) => random.push(t as f64),
            Err(e) => return verdict(false, format!("random:{seed} did not converge: {e}")),
        }
    }
    let mean = random.iter().sum::<f64>() / 3.0;
    verdict(
        spread >= 100.0 && (small as f64) < mean && mean < large as f64,
        format!("spread {spread:.0}x, smallest {small} < random mean {mean:.0} < largest {large}"),
    )
}

fn random_matrix(rng: &mut Lcg, max_dim: u64) -> WeightMatrix {
    let (v, e, f) = (
        rng.range(1, max_dim),
        rng.range(1, max_dim),
        rng.range(1, max_dim),
    );
    let density = rng.range(10, 90);
    let mut w = WeightMatrix::new(v as usize, e as usize, f as usize);
    for vi in 0..v as usize {
        for ei in 0..e as usize {
            for fi in 0..f as usize {
                if rng.range(0, 99) < density {
                    w.set(vi, ei, fi, rng.range(1, 3));
                }
            }
        }
    }
    w
}

/// Per file, per variable, the expressions with positive weight.
fn candidate_lists(w: &WeightMatrix) -> Vec<Vec<Vec<Candidate>>> {
    let (v, e, f) = w.dims();
    (0..f)
        .map(|fi| {
            (0..v)
                .map(|vi| {
                    (0..e)
                        .filter(|&ei| w.get(vi, ei, fi) > 0)
                        .map(|ei| Candidate::Literal(ei as i64))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn brute_force(w: &WeightMatrix) -> usize {
    let (v, e, f) = w.dims();
    let mut tuple = vec![0; v];
    let mut best = 0;
    loop {
        let ok = (0..f)
            .filter(|&fi| (0..v).all(|vi| w.get(vi, tuple[vi], fi) > 0))
            .count();
        best = best.max(ok);
        let mut k = 0;
        loop {
            if k == v {
                return best;
            }
            tuple[k] += 1;
            if tuple[k] < e {
                break;
            }
            tuple[k] = 0;
            k += 1;
        }
    }
}

fn assignment_equivalence() -> Verdict {
    let mut rng = Lcg::new(77);
    let (mut differ, mut bad_simplest) = (0, 0);
    for _ in 0..1000 {
        let w = random_matrix(&mut rng, 6);
        let conceptual = consistent_assignment(AssignmentVariant::Conceptual, &w);
        let optimized = consistent_assignment(AssignmentVariant::Optimized, &w);
        if (conceptual.files, conceptual.assignments) != (optimized.files, optimized.assignments) {
            differ += 1;
        }
        let s = consistent_assignment(AssignmentVariant::Simplest, &w);
        let compatible = s
            .assignments
            .iter()
            .all(|&(v, e)| s.files.iter().all(|&f| w.get(v, e, f) > 0));
        if s.files.is_empty() || !compatible {
            bad_simplest += 1;
        }
    }
    let (mut checked, mut below_greedy, mut below_exhaustive) = (0, 0, 0);
    while checked < 1000 {
        let w = random_matrix(&mut rng, 4);
        let (v, e, _) = w.dims();
        if e.pow(v as u32) > 256 {
            continue;
        }
        checked += 1;
        let lists = candidate_lists(&w);
        let cartesian = vote(&lists, Voting::Cartesian).supporters.len();
        let greedy = vote(&lists, Voting::Assignment(AssignmentVariant::Optimized))
            .supporters
            .len();
        below_greedy += usize::from(cartesian < greedy);
        below_exhaustive += usize::from(cartesian != brute_force(&w));
    }
    verdict(
        differ == 0 && bad_simplest == 0 && below_greedy == 0 && below_exhaustive == 0,
        format!(
            "optimized differs from conceptual {differ}/1000, simplest invalid {bad_simplest}/1000, \
             cartesian below greedy {below_greedy}/1000, cartesian off the exhaustive optimum {below_exhaustive}/1000"
        ),
    )
}

fn mutate(rng: &mut Lcg, file: &[u8]) -> Vec<u8> {
    let mut out = file.to_vec();
    match rng.range(0, 4) {
        0 => {
            for _ in 0..rng.range(1, 8) {
                let i = rng.range(0, out.len() as u64 - 1) as usize;
                out[i] = rng.next_byte();
            }
        }
        1 => out.truncate(rng.range(0, out.len() as u64) as usize),
        2 => {
            let extra = rng.range(1, 64) as usize;
            out.extend((0..extra).map(|_| rng.next_byte()));
        }
        3 => {
            let extreme =
                [0u32, 1, 0x7FFF_FFFF, 0x8000_0000, 0xFFFF_FFFF][rng.range(0, 4) as usize];
            let at = rng.range(0, 15) as usize * 4;
            if at + 4 <= out.len() {
                out[at..at + 4].copy_from_slice(&extreme.to_le_bytes());
            }
        }
        _ => {
            let i = rng.range(0, 63.min(out.len() as u64 - 1)) as usize;
            out[i] = rng.next_byte();
        }
    }
    out
}

fn safety() -> Verdict {
    let m = mixed();
    let done = match mixed_tree() {
        Ok(d) => d,
        Err(v) => return v,
    };
    let files = &m.data.corpus.files;
    let mut rng = Lcg::new(88);
    let (mut panics, mut errors) = (0, 0);
    let mut mutants = Vec::new();
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for k in 0..10_000 {
        let src = &files[rng.range(0, files.len() as u64 - 1) as usize].bytes;
        let bytes = mutate(&mut rng, src);
        match panic::catch_unwind(AssertUnwindSafe(|| done.tree.interpret(&bytes))) {
            Err(_) => panics += 1,
            Ok(Err(_)) => errors += 1,
            Ok(Ok(_)) => {}
        }
        if k % 50 == 0 {
            mutants.push((format!("mutant-{k}"), bytes));
        }
    }
    panic::set_hook(hook);

    let source = match emit_source(&done.tree, &EmitOptions::default()) {
        Ok(s) => s,
        Err(e) => return verdict(false, format!("emit failed: {e}")),
    };
    let raw = scan_raw_subscripts(&source);

    let mut targets: Vec<(String, Vec<u8>)> = files
        .iter()
        .map(|f| (f.id.clone(), f.bytes.clone()))
        .collect();
    targets.extend(mutants);
    let work = tempfile::tempdir().unwrap();
    let report = verify_emitted(
        &done.tree,
        &source,
        &targets,
        find_compiler().as_deref(),
        work.path(),
    );
    let (compiled_ok, compiled) = match &report {
        Ok(r) if r.status == VerifyStatus::Checked => (r.passed(), format!("{r}")),
        Ok(r) => (matches!(r.status, VerifyStatus::Skipped(_)), format!("{r}")),
        Err(e) => (false, e.to_string()),
    };
    verdict(
        panics == 0 && raw.is_empty() && compiled_ok,
        format!(
            "10000 mutations: {panics} panics, {errors} structured errors; {} raw accesses; compiled: {}",
            raw.len(),
            compiled.lines().next().unwrap_or("")
        ),
    )
}

/// Calls `visit` at every node with the corpus files reaching each side.
fn splits(
    tree: &ParserTree,
    reach: Vec<usize>,
    files: &[&[u8]],
    visit: &mut impl FnMut(Predicate, &[usize], &[usize]),
) {
    if let ParserTree::Node {
        predicate,
        sat,
        unsat,
    } = tree
    {
        let (yes, no): (Vec<usize>, Vec<usize>) =
            reach.into_iter().partition(|&i| predicate.eval(files[i]));
        visit(*predicate, &yes, &no);
        splits(sat, yes, files, visit);
        splits(unsat, no, files, visit);
    }
}

fn predicate_meaningfulness() -> Verdict {
    let m = mixed();
    let done = match mixed_tree() {
        Ok(d) => d,
        Err(v) => return v,
    };
    let fmt = &m.data.formats;
    let bytes: Vec<&[u8]> = m
        .data
        .corpus
        .files
        .iter()
        .map(|f| f.bytes.as_slice())
        .collect();
    let bpp24 = |i: &usize| fmt[*i].starts_with("bmp24");
    let bitmap = |i: &usize| fmt[*i].starts_with("bmp");
    let channels = |i: &usize| bytes[*i][22];
    let wav = |i: &usize| fmt[*i].starts_with("wav");
    let (mut bpp_split, mut channel_split) = (Vec::new(), Vec::new());
    splits(
        &done.tree,
        (0..bytes.len()).collect(),
        &bytes,
        &mut |p, yes, no| {
            let sides = [yes, no];
            if p.index == 28 {
                // 24-bit bitmaps all on one side, some other bitmap on the other.
                let with24: Vec<bool> = sides.iter().map(|s| s.iter().any(bpp24)).collect();
                let other: Vec<bool> = sides
                    .iter()
                    .map(|s| s.iter().filter(|i| bitmap(i)).any(|i| !bpp24(i)))
                    .collect();
                if (with24[0] != with24[1]) && (other[0] && with24[1] || other[1] && with24[0]) {
                    bpp_split.push(p);
                }
            }
            if p.index == 22 || p.index == 32 {
                let seen: Vec<BTreeSet<u8>> = sides
                    .iter()
                    .map(|s| s.iter().filter(|i| wav(i)).map(channels).collect())
                    .collect();
                if !seen[0].is_empty() && !seen[1].is_empty() && seen[0].is_disjoint(&seen[1]) {
                    channel_split.push(p);
                }
            }
        },
    );
    let literal24 = done.tree.predicates().contains(&Predicate {
        index: 28,
        value: 24,
    });
    let literal2 = done.tree.predicates().contains(&Predicate {
        index: 22,
        value: 2,
    });
    let show = |ps: &[Predicate]| {
        ps.iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    verdict(
        !bpp_split.is_empty() && !channel_split.is_empty(),
        format!(
            "bit-depth splits [{}], channel splits [{}]; in[28] == 24 present: {literal24}, in[22] == 2 present: {literal2}",
            show(&bpp_split),
            show(&channel_split)
        ),
    )
}

fn def<'p>(p: &'p IrProgram, name: &str) -> Option<&'p SymbolDef> {
    p.symbols.get(name).map(|s| &s.def)
}

fn header_literals() -> Verdict {
    let m = mixed();
    let done = match mixed_tree() {
        Ok(d) => d,
        Err(v) => return v,
    };
    let leaf_for = |token: &str| {
        let i = m.data.formats.iter().position(|f| f == token).unwrap();
        done.tree.route(&m.data.corpus.files[i].bytes).1
    };
    let mut notes = Vec::new();
    let mut pass = true;

    match leaf_for("fwc") {
        Some(p) => {
            let base = p.symbols.get("MIN_Y");
            let ok = base.is_some_and(|s| s.value == 32 && s.def == SymbolDef::Literal);
            pass &= ok;
            notes.push(format!("fwc base {:?}", base.map(|s| (s.value, &s.def))));
        }
        None => {
            pass = false;
            notes.push("no fwc leaf".into());
        }
    }

    let field = |offset| {
        SymbolDef::Header(HeaderSource::Field(Field {
            offset,
            bits: 32,
            signed: true,
        }))
    };
    for token in ["bmp16", "bmp24", "bmp32"] {
        match leaf_for(token) {
            Some(p) => {
                let a = def(p, "LOOP_BOUND_A");
                let b = def(p, "LOOP_BOUND_B");
                let ok = a == Some(&field(18)) && b == Some(&field(22));
                pass &= ok;
                let show = |d: Option<&SymbolDef>| match d {
                    Some(SymbolDef::Header(h)) => h.to_string(),
                    other => format!("{other:?}"),
                };
                notes.push(format!("{token} width {} height {}", show(a), show(b)));
            }
            None => {
                pass = false;
                notes.push(format!("no {token} leaf"));
            }
        }
    }
    verdict(pass, notes.join(", "))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("training completeness", training_completeness),
        ("stride parsimony", stride_parsimony),
        ("size generalization", size_generalization),
        ("square ambiguity", square_ambiguity),
        ("cross-validation", cross_validation),
        ("log selection ordering", log_selection_ordering),
        ("assignment equivalence", assignment_equivalence),
        ("safety", safety),
        ("predicate meaningfulness", predicate_meaningfulness),
        ("header literals", header_literals),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = panic::catch_unwind(check).unwrap_or_else(|_| verdict(false, "panicked"));
        failed += usize::from(!v.pass);
        println!(
            "{} criterion {} ({name}): {} [{:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            n + 1,
            v.detail,
            start.elapsed()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
