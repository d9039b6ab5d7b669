//! Decision trees over header bytes, with one generalized parser per leaf,
//! and the driver that decides which files to trace next.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::generalize::{
    generalize_with, header_sizes, Example, Voting, DEFAULT_HEADER_CAP, DEFAULT_HEADER_START,
};
use crate::interp::{run_program, InterpError};
use crate::ir::{IrProgram, Role, SymbolDef};
use crate::lcg::Lcg;
use crate::oracle::{Buffers, Oracle, OracleError};
use crate::summarize::{PreparedLog, SummarizeError, DEFAULT_STRIDES};
use crate::trace::TraceLog;

/// `file[index] == value`; false when the file is too short.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub index: usize,
    pub value: u8,
}

impl Predicate {
    pub fn eval(&self, file: &[u8]) -> bool {
        file.get(self.index) == Some(&self.value)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in[{}] == {}", self.index, self.value)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParserTree {
    /// `None` where no trace reached this part of the tree yet.
    Leaf(Option<Box<IrProgram>>),
    Node {
        predicate: Predicate,
        sat: Box<ParserTree>,
        unsat: Box<ParserTree>,
    },
}

impl ParserTree {
    /// The leaf `file` is routed to, with its depth-first index.
    pub fn route(&self, file: &[u8]) -> (usize, Option<&IrProgram>) {
        let mut node = self;
        let mut skipped = 0;
        loop {
            match node {
                ParserTree::Leaf(p) => return (skipped, p.as_deref()),
                ParserTree::Node {
                    predicate,
                    sat,
                    unsat,
                } => {
                    if predicate.eval(file) {
                        node = sat;
                    } else {
                        skipped += sat.leaf_count();
                        node = unsat;
                    }
                }
            }
        }
    }

    pub fn interpret(&self, file: &[u8]) -> Result<Buffers, InterpError> {
        match self.route(file).1 {
            Some(p) => run_program(p, file),
            None => Err(InterpError::NoParser),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            ParserTree::Leaf(_) => 1,
            ParserTree::Node { sat, unsat, .. } => sat.leaf_count() + unsat.leaf_count(),
        }
    }

    /// Leaves in depth-first order, satisfied branch first.
    pub fn leaves(&self) -> Vec<Option<&IrProgram>> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let ParserTree::Leaf(p) = t {
                out.push(p.as_deref());
            }
        });
        out
    }

    pub fn predicates(&self) -> Vec<Predicate> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let ParserTree::Node { predicate, .. } = t {
                out.push(*predicate);
            }
        });
        out
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ParserTree)) {
        f(self);
        if let ParserTree::Node { sat, unsat, .. } = self {
            sat.walk(f);
            unsat.walk(f);
        }
    }
}

/// A training file with the output the oracle produces for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusFile {
    pub id: String,
    pub bytes: Vec<u8>,
    pub expected: Buffers,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub files: Vec<CorpusFile>,
}

impl Corpus {
    pub fn new(
        files: impl IntoIterator<Item = (String, Vec<u8>)>,
        oracle: &impl Oracle,
    ) -> Result<Corpus, OracleError> {
        let files = files
            .into_iter()
            .map(|(id, bytes)| {
                let expected = oracle.parse(&bytes)?;
                Ok(CorpusFile {
                    id,
                    bytes,
                    expected,
                })
            })
            .collect::<Result<_, OracleError>>()?;
        Ok(Corpus { files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

/// A trace and the concrete program summarized from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoggedFile {
    pub log: TraceLog,
    pub program: IrProgram,
}

/// Traces acquired so far, keyed by corpus index.
pub type LogSet = BTreeMap<usize, LoggedFile>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Parsed,
    Mismatch { array: String, offset: usize },
    Error(InterpError),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Parsed => f.write_str("parsed"),
            Verdict::Mismatch { array, offset } => write!(f, "mismatch in {array} at {offset}"),
            Verdict::Error(e) => write!(f, "error: {e}"),
        }
    }
}

/// First difference between two sets of output buffers, if any.
pub fn compare_buffers(got: &Buffers, want: &Buffers) -> Verdict {
    for name in want.keys().chain(got.keys()) {
        let (g, w) = match (got.get(name), want.get(name)) {
            (Some(g), Some(w)) => (g, w),
            _ => {
                return Verdict::Mismatch {
                    array: name.clone(),
                    offset: 0,
                }
            }
        };
        if g != w {
            let offset = g
                .iter()
                .zip(w)
                .position(|(a, b)| a != b)
                .unwrap_or(g.len().min(w.len()));
            return Verdict::Mismatch {
                array: name.clone(),
                offset,
            };
        }
    }
    Verdict::Parsed
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseReport {
    /// `(corpus index, verdict)` in the order tested.
    pub verdicts: Vec<(usize, Verdict)>,
}

impl ParseReport {
    pub fn parseable(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .filter(|(_, v)| *v == Verdict::Parsed)
            .map(|(i, _)| *i)
            .collect()
    }

    pub fn unparseable(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .filter(|(_, v)| *v != Verdict::Parsed)
            .map(|(i, _)| *i)
            .collect()
    }
}

pub fn verdict(tree: &ParserTree, file: &CorpusFile) -> Verdict {
    match tree.interpret(&file.bytes) {
        Ok(out) => compare_buffers(&out, &file.expected),
        Err(e) => Verdict::Error(e),
    }
}

/// Runs `tree` on the corpus files in `members`.
pub fn test_parser(tree: &ParserTree, corpus: &Corpus, members: &[usize]) -> ParseReport {
    ParseReport {
        verdicts: members
            .iter()
            .map(|&i| (i, verdict(tree, &corpus.files[i])))
            .collect(),
    }
}

/// The byte equality that best separates `good` from `bad` files.
///
/// Each `(index, value)` scores `good_hits / |good| - bad_hits / |bad|`,
/// compared here after scaling by `|good| * |bad|`. The largest magnitude
/// wins. Ties go to the index holding the fewest distinct values across
/// both sets, since type tags vary less than sizes do, then to the smaller
/// index and value.
pub fn pick_a_hew(good: &[&[u8]], bad: &[&[u8]], header_size: usize) -> Option<Predicate> {
    let (ng, nb) = (good.len() as i64, bad.len() as i64);
    let mut best: Option<((i64, isize), Predicate)> = None;
    for index in 0..header_size {
        let mut score = [0i64; 256];
        let mut seen = [false; 256];
        for f in good {
            if let Some(&v) = f.get(index) {
                score[v as usize] += nb;
                seen[v as usize] = true;
            }
        }
        for f in bad {
            if let Some(&v) = f.get(index) {
                score[v as usize] -= ng;
                seen[v as usize] = true;
            }
        }
        let distinct = seen.iter().filter(|&&s| s).count() as isize;
        for value in 0..256 {
            let key = (score[value].abs(), -distinct);
            if seen[value] && best.is_none_or(|(b, _)| key > b) {
                best = Some((
                    key,
                    Predicate {
                        index,
                        value: value as u8,
                    },
                ));
            }
        }
    }
    best.map(|(_, p)| p)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeError {
    /// No header byte separates the files; a larger header may.
    HeaderTooSmall {
        header_size: usize,
    },
    NonConvergence {
        header_size: usize,
        unparseable: usize,
    },
    EmptyCorpus,
    Oracle(OracleError),
    Summarize(SummarizeError),
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::HeaderTooSmall { header_size } => {
                write!(
                    f,
                    "no predicate within the first {header_size} bytes splits the files"
                )
            }
            TreeError::NonConvergence {
                header_size,
                unparseable,
            } => write!(
                f,
                "{unparseable} files still unparseable with a {header_size}-byte header"
            ),
            TreeError::EmptyCorpus => f.write_str("the corpus is empty"),
            TreeError::Oracle(e) => write!(f, "oracle: {e}"),
            TreeError::Summarize(e) => write!(f, "summarize: {e}"),
        }
    }
}

impl core::error::Error for TreeError {}

impl From<OracleError> for TreeError {
    fn from(e: OracleError) -> Self {
        TreeError::Oracle(e)
    }
}

impl From<SummarizeError> for TreeError {
    fn from(e: SummarizeError) -> Self {
        TreeError::Summarize(e)
    }
}

/// Generalizes the largest same-skeleton group among the logs of `members`.
pub fn build_indiv_parser(
    corpus: &Corpus,
    members: &[usize],
    logs: &LogSet,
    header_size: usize,
    voting: Voting,
) -> Option<IrProgram> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in members {
        if let Some(l) = logs.get(&i) {
            groups.entry(l.program.skeleton_key()).or_default().push(i);
        }
    }
    // Largest group; among equals the first skeleton key.
    let group = groups.into_values().rev().max_by_key(Vec::len)?;
    let examples: Vec<Example> = group
        .iter()
        .map(|i| Example {
            program: &logs[i].program,
            input: &corpus.files[*i].bytes,
        })
        .collect();
    generalize_with(&examples, header_size, voting)
        .ok()
        .map(|g| g.program)
}

/// Builds a tree for the corpus files in `members` from the logs among them.
pub fn build_tree(
    corpus: &Corpus,
    members: &[usize],
    logs: &LogSet,
    header_size: usize,
    voting: Voting,
) -> Result<ParserTree, TreeError> {
    let Some(parser) = build_indiv_parser(corpus, members, logs, header_size, voting) else {
        return Ok(ParserTree::Leaf(None));
    };
    let leaf = ParserTree::Leaf(Some(Box::new(parser)));
    let report = test_parser(&leaf, corpus, members);
    let (good, bad) = (report.parseable(), report.unparseable());
    if bad.is_empty() {
        return Ok(leaf);
    }
    if good.is_empty() {
        return Ok(ParserTree::Leaf(None));
    }
    let bytes = |set: &[usize]| -> Vec<&[u8]> {
        set.iter()
            .map(|&i| corpus.files[i].bytes.as_slice())
            .collect()
    };
    let predicate = pick_a_hew(&bytes(&good), &bytes(&bad), header_size)
        .ok_or(TreeError::HeaderTooSmall { header_size })?;
    let (sat, unsat): (Vec<usize>, Vec<usize>) = members
        .iter()
        .partition(|&&i| predicate.eval(&corpus.files[i].bytes));
    if sat.is_empty() || unsat.is_empty() {
        return Err(TreeError::HeaderTooSmall { header_size });
    }
    Ok(ParserTree::Node {
        predicate,
        sat: Box::new(build_tree(corpus, &sat, logs, header_size, voting)?),
        unsat: Box::new(build_tree(corpus, &unsat, logs, header_size, voting)?),
    })
}

/// Order in which unparseable files are traced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Smallest,
    Largest,
    Random(u64),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Smallest => f.write_str("smallest"),
            Strategy::Largest => f.write_str("largest"),
            Strategy::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smallest" => Ok(Strategy::Smallest),
            "largest" => Ok(Strategy::Largest),
            _ => s
                .strip_prefix("random:")
                .and_then(|seed| seed.parse().ok())
                .map(Strategy::Random)
                .ok_or_else(|| format!("unknown strategy '{s}' (smallest, largest, random:SEED)")),
        }
    }
}

impl Strategy {
    /// Up to `count` files from `pool`, in tracing order.
    pub fn select(
        &self,
        corpus: &Corpus,
        pool: &[usize],
        count: usize,
        round: usize,
    ) -> Vec<usize> {
        let mut pool = pool.to_vec();
        match self {
            Strategy::Smallest => pool.sort_by_key(|&i| (corpus.files[i].bytes.len(), i)),
            Strategy::Largest => {
                pool.sort_by_key(|&i| (core::cmp::Reverse(corpus.files[i].bytes.len()), i))
            }
            Strategy::Random(seed) => {
                pool.sort_unstable();
                Lcg::new(seed.wrapping_add(round as u64)).shuffle(&mut pool);
            }
        }
        pool.truncate(count);
        pool
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandOptions {
    pub batch: usize,
    pub strategy: Strategy,
    pub header_start: usize,
    pub header_cap: usize,
    pub strides: core::ops::RangeInclusive<usize>,
    pub voting: Voting,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions {
            batch: 10,
            strategy: Strategy::Smallest,
            header_start: DEFAULT_HEADER_START,
            header_cap: DEFAULT_HEADER_CAP,
            strides: DEFAULT_STRIDES,
            voting: Voting::Cartesian,
        }
    }
}

/// One iteration of the log-expansion loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    pub new_logs: usize,
    pub unparseable: usize,
    /// Input bytes traced so far, across all rounds.
    pub traced_bytes: u64,
    pub header_size: usize,
    pub leaves: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Converged {
    pub tree: ParserTree,
    pub logs: LogSet,
    pub rounds: Vec<Round>,
    pub header_size: usize,
}

impl Converged {
    pub fn traced_bytes(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.traced_bytes)
    }
}

/// Leaves whose parser still has a loop bound it could not tie to the
/// input, which usually means the header estimate is too small.
fn literal_bound_leaves(tree: &ParserTree) -> usize {
    tree.leaves()
        .into_iter()
        .flatten()
        .filter(|p| {
            p.symbol_infos().iter().any(|i| {
                matches!(i.role, Role::Bound { .. })
                    && matches!(
                        p.symbols.get(&i.name).map(|s| &s.def),
                        Some(SymbolDef::Literal)
                    )
            })
        })
        .count()
}

/// Traces unparseable files in batches and rebuilds the tree until every
/// corpus file parses.
///
/// The header estimate grows when no predicate splits a node, when a round
/// of new traces does not reduce the unparseable count, when a leaf keeps a
/// literal loop bound, or when every unparseable file is already traced.
/// A tree that parses the whole corpus but keeps literal bounds is held as
/// a fallback while larger headers are tried; the fallback with the fewest
/// such leaves is returned if the cap is reached first.
pub fn expand_logs_until_converged(
    corpus: &Corpus,
    oracle: &impl Oracle,
    options: &ExpandOptions,
) -> Result<Converged, TreeError> {
    if corpus.is_empty() {
        return Err(TreeError::EmptyCorpus);
    }
    let sizes = header_sizes(options.header_start, options.header_cap);
    let mut size_idx = 0;
    let header = |idx: usize| sizes.get(idx).copied().unwrap_or(options.header_start);
    let all: Vec<usize> = (0..corpus.len()).collect();
    let mut logs = LogSet::new();
    let mut rounds: Vec<Round> = Vec::new();
    let mut unparseable = all.clone();
    let mut traced_bytes = 0u64;
    let mut acquire = true;
    let mut fallback: Option<(usize, Converged)> = None;

    macro_rules! escalate {
        ($count:expr) => {{
            if size_idx + 1 >= sizes.len() {
                if let Some((_, mut done)) = fallback.take() {
                    done.rounds = rounds;
                    return Ok(done);
                }
                return Err(TreeError::NonConvergence {
                    header_size: header(size_idx),
                    unparseable: $count,
                });
            }
            size_idx += 1;
        }};
    }

    loop {
        let mut new_logs = 0;
        if acquire {
            let pool: Vec<usize> = unparseable
                .iter()
                .copied()
                .filter(|i| !logs.contains_key(i))
                .collect();
            if pool.is_empty() {
                escalate!(unparseable.len());
            }
            for i in options
                .strategy
                .select(corpus, &pool, options.batch, rounds.len())
            {
                let file = &corpus.files[i];
                let log = oracle.trace(&file.bytes, &file.id)?;
                let program = PreparedLog::new(&log)?.choose(options.strides.clone())?;
                logs.insert(i, LoggedFile { log, program });
                traced_bytes += file.bytes.len() as u64;
                new_logs += 1;
            }
        }
        let tree = loop {
            match build_tree(corpus, &all, &logs, header(size_idx), options.voting) {
                Ok(t) => break t,
                Err(TreeError::HeaderTooSmall { .. }) => escalate!(unparseable.len()),
                Err(e) => return Err(e),
            }
        };
        let previous = unparseable.len();
        unparseable = test_parser(&tree, corpus, &all).unparseable();
        rounds.push(Round {
            round: rounds.len() + 1,
            new_logs,
            unparseable: unparseable.len(),
            traced_bytes,
            header_size: header(size_idx),
            leaves: tree.leaf_count(),
        });
        let literal = literal_bound_leaves(&tree);
        if unparseable.is_empty() {
            let done = Converged {
                tree,
                logs: logs.clone(),
                rounds: rounds.clone(),
                header_size: header(size_idx),
            };
            if literal == 0 {
                return Ok(done);
            }
            if fallback.as_ref().is_none_or(|(n, _)| literal < *n) {
                fallback = Some((literal, done));
            }
            escalate!(0);
            acquire = false;
            continue;
        }
        acquire = true;
        if new_logs > 0 && unparseable.len() >= previous && rounds.len() > 1 {
            escalate!(unparseable.len());
            acquire = false;
        } else if literal > 0 && size_idx + 1 < sizes.len() {
            size_idx += 1;
            acquire = false;
        }
    }
}

/// Corpus files routed to each leaf, in depth-first leaf order.
pub fn leaf_counts(tree: &ParserTree, corpus: &Corpus) -> Vec<usize> {
    let mut counts = alloc::vec![0; tree.leaf_count()];
    for f in &corpus.files {
        counts[tree.route(&f.bytes).0] += 1;
    }
    counts
}

/// Graphviz rendering. `counts` gives the files routed to each leaf.
pub fn export_dot(tree: &ParserTree, counts: &[usize]) -> String {
    let mut out = String::from("digraph parser {\n  node [fontname=\"monospace\"];\n");
    let mut next_node = 0;
    let mut next_leaf = 0;
    dot_node(tree, counts, &mut out, &mut next_node, &mut next_leaf);
    out.push_str("}\n");
    out
}

fn dot_node(
    tree: &ParserTree,
    counts: &[usize],
    out: &mut String,
    node: &mut usize,
    leaf: &mut usize,
) -> usize {
    let id = *node;
    *node += 1;
    match tree {
        ParserTree::Leaf(p) => {
            let k = *leaf;
            *leaf += 1;
            let files = counts.get(k).copied().unwrap_or(0);
            let label = match p {
                Some(p) => format!(
                    "leaf {k}\\nstride {}, {} nest(s)\\nfrom {}\\n{files} file(s)",
                    p.stride,
                    p.nests().count(),
                    p.source
                ),
                None => format!("leaf {k}\\nno parser\\n{files} file(s)"),
            };
            let _ = writeln!(out, "  n{id} [shape=box, label=\"{label}\"];");
        }
        ParserTree::Node {
            predicate,
            sat,
            unsat,
        } => {
            let _ = writeln!(out, "  n{id} [label=\"{predicate}\"];");
            let a = dot_node(sat, counts, out, node, leaf);
            let b = dot_node(unsat, counts, out, node, leaf);
            let _ = writeln!(out, "  n{id} -> n{a} [label=\"true\"];");
            let _ = writeln!(out, "  n{id} -> n{b} [label=\"false\"];");
        }
    }
    id
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.round,
            self.new_logs,
            self.unparseable,
            self.traced_bytes,
            self.header_size,
            self.leaves
        )
    }
}

#[cfg(test)]
mod tests;
