//! The subcommands, as functions over a [`RunConfig`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use regen_core::emit::{emit_source, scan_raw_subscripts, EmitOptions};
use regen_core::lcg::Lcg;
use regen_core::oracle::{FormatType, ReferenceOracle};
use regen_core::tree::{
    expand_logs_until_converged, export_dot, leaf_counts, test_parser, Converged, Corpus,
    ParserTree, TreeError,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{self, Manifest};
use crate::verify::{find_compiler, verify_emitted, VerifyReport};

pub const TREE_FILE: &str = "tree.json";
pub const DOT_FILE: &str = "tree.dot";
pub const ROUNDS_FILE: &str = "rounds.txt";
pub const SOURCE_FILE: &str = "parser.c";
pub const EVAL_FILE: &str = "eval.txt";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn parse_formats(tokens: &[String]) -> Result<Vec<FormatType>, CliError> {
    tokens
        .iter()
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("{e}")))
        })
        .collect()
}

/// Writes the corpus files, `manifest.json` and `config.toml`.
pub fn gen_corpus(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let formats = parse_formats(&cfg.formats)?;
    let (manifest, files) = manifest::generate(&formats, cfg.count, &cfg.sizes, cfg.seed)?;
    create_dir(&cfg.corpus_dir)?;
    for (entry, bytes) in manifest.files.iter().zip(&files) {
        write(&cfg.corpus_dir.join(&entry.path), bytes)?;
    }
    manifest.save(&cfg.corpus_dir)?;
    cfg.save(&cfg.corpus_dir)?;
    Ok(manifest)
}

/// Runs the convergence loop, mapping failures to command errors.
pub fn converge(corpus: &Corpus, cfg: &RunConfig) -> Result<Converged, CliError> {
    expand_logs_until_converged(corpus, &ReferenceOracle, &cfg.expand_options()).map_err(
        |e| match e {
            TreeError::NonConvergence { .. } | TreeError::HeaderTooSmall { .. } => {
                CliError::NonConvergence(e.to_string())
            }
            TreeError::Oracle(_) => CliError::OracleMismatch(e.to_string()),
            other => CliError::Failed(other.to_string()),
        },
    )
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn rounds_text(done: &Converged) -> String {
    let mut t = String::from("round new_logs unparseable traced_bytes header_size leaves\n");
    for r in &done.rounds {
        let _ = writeln!(t, "{r}");
    }
    t
}

/// Infers a tree for the corpus and writes traces, leaf programs, the tree
/// and the round report under the output directory.
pub fn infer(cfg: &RunConfig) -> Result<Converged, CliError> {
    let corpus = Manifest::load(&cfg.corpus_dir)?.load_corpus(&cfg.corpus_dir)?;
    let done = converge(&corpus, cfg)?;
    let all: Vec<usize> = (0..corpus.len()).collect();
    let bad = test_parser(&done.tree, &corpus, &all).unparseable();
    if !bad.is_empty() {
        return Err(CliError::OracleMismatch(format!(
            "{} training files differ from the oracle",
            bad.len()
        )));
    }

    let out = &cfg.out_dir;
    for sub in ["logs", "leaves"] {
        let dir = out.join(sub);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        create_dir(&dir)?;
    }
    for (i, logged) in &done.logs {
        let name = format!("{i:04}-{}.trace", file_stem(&corpus.files[*i].id));
        write(&out.join("logs").join(name), logged.log.to_text())?;
    }
    for (k, leaf) in done.tree.leaves().iter().enumerate() {
        let text = leaf.map_or_else(|| String::from("// no parser\n"), |p| p.to_text());
        write(&out.join("leaves").join(format!("leaf_{k}.ir")), text)?;
    }
    let json =
        serde_json::to_string_pretty(&done.tree).map_err(|e| CliError::Failed(e.to_string()))?;
    write(&out.join(TREE_FILE), json + "\n")?;
    write(
        &out.join(DOT_FILE),
        export_dot(&done.tree, &leaf_counts(&done.tree, &corpus)),
    )?;
    write(&out.join(ROUNDS_FILE), rounds_text(&done))?;
    cfg.save(out)?;
    Ok(done)
}

pub fn load_tree(out_dir: &Path) -> Result<ParserTree, CliError> {
    let path = out_dir.join(TREE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path,
        msg: e.to_string(),
    })
}

/// Writes `parser.c` for the inferred tree.
pub fn emit(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let tree = load_tree(&cfg.out_dir)?;
    let source = emit_source(
        &tree,
        &EmitOptions {
            partial: cfg.partial,
        },
    )
    .map_err(|e| CliError::Failed(e.to_string()))?;
    let raw = scan_raw_subscripts(&source);
    if let Some(first) = raw.first() {
        return Err(CliError::Failed(format!(
            "emitted source touches storage directly at line {}: {}",
            first.line, first.text
        )));
    }
    let path = cfg.out_dir.join(SOURCE_FILE);
    write(&path, source)?;
    Ok(path)
}

/// Writes `tree.dot`, with per-leaf file counts when the corpus is present.
pub fn viz(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let tree = load_tree(&cfg.out_dir)?;
    let counts = match Manifest::load(&cfg.corpus_dir) {
        Ok(m) => leaf_counts(&tree, &m.load_corpus(&cfg.corpus_dir)?),
        Err(_) => vec![0; tree.leaf_count()],
    };
    let path = cfg.out_dir.join(DOT_FILE);
    write(&path, export_dot(&tree, &counts))?;
    Ok(path)
}

/// Compiles the emitted parser and compares it with the interpreter on the
/// corpus. Reports a skip when no compiler is installed.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let tree = load_tree(&cfg.out_dir)?;
    let source = emit_source(
        &tree,
        &EmitOptions {
            partial: cfg.partial,
        },
    )
    .map_err(|e| CliError::Failed(e.to_string()))?;
    let corpus = Manifest::load(&cfg.corpus_dir)?.load_corpus(&cfg.corpus_dir)?;
    let files: Vec<(String, Vec<u8>)> = corpus.files.into_iter().map(|f| (f.id, f.bytes)).collect();
    verify_emitted(
        &tree,
        &source,
        &files,
        find_compiler().as_deref(),
        &cfg.out_dir.join("verify"),
    )
}

/// One train/test split of a cross-validation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatResult {
    pub repeat: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// `None` when the training run itself failed.
    pub train_accuracy: Option<f64>,
    pub test_failures: Vec<usize>,
    pub formats_missing_from_train: BTreeSet<String>,
}

impl RepeatResult {
    pub fn test_accuracy(&self) -> f64 {
        if self.test.is_empty() {
            return 1.0;
        }
        1.0 - self.test_failures.len() as f64 / self.test.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub formats: Vec<String>,
    pub repeats: Vec<RepeatResult>,
}

impl EvalReport {
    /// Mean, minimum and maximum test accuracy.
    pub fn summary(&self) -> (f64, f64, f64) {
        let acc: Vec<f64> = self
            .repeats
            .iter()
            .map(RepeatResult::test_accuracy)
            .collect();
        if acc.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, min, max)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "repeat train test train_acc test_acc failing_formats missing_formats"
        )?;
        for r in &self.repeats {
            let failing: BTreeSet<&str> = r
                .test_failures
                .iter()
                .map(|&i| self.formats[i].as_str())
                .collect();
            let list = |s: Vec<&str>| {
                if s.is_empty() {
                    String::from("-")
                } else {
                    s.join(",")
                }
            };
            writeln!(
                f,
                "{} {} {} {} {:.4} {} {}",
                r.repeat,
                r.train.len(),
                r.test.len(),
                r.train_accuracy
                    .map_or_else(|| String::from("failed"), |a| format!("{a:.4}")),
                r.test_accuracy(),
                list(failing.into_iter().collect()),
                list(
                    r.formats_missing_from_train
                        .iter()
                        .map(String::as_str)
                        .collect()
                ),
            )?;
        }
        let (mean, min, max) = self.summary();
        writeln!(f, "test accuracy mean {mean:.4} min {min:.4} max {max:.4}")
    }
}

/// Splits `0..formats.len()` into training and test indices.
pub fn split(
    formats: &[String],
    fraction: f64,
    stratified: bool,
    rng: &mut Lcg,
) -> (Vec<usize>, Vec<usize>) {
    let take = |n: usize| {
        ((n as f64 * fraction).round() as usize).clamp(1.min(n), n.saturating_sub(1).max(1))
    };
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    if stratified {
        for (i, f) in formats.iter().enumerate() {
            groups.entry(f.as_str()).or_default().push(i);
        }
    } else {
        groups.insert("", (0..formats.len()).collect());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut members) in groups {
        rng.shuffle(&mut members);
        let k = take(members.len()).min(members.len());
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Repeated train/test evaluation over an in-memory corpus. `formats[i]`
/// names the format of corpus file `i`.
pub fn evaluate(corpus: &Corpus, formats: &[String], cfg: &RunConfig) -> EvalReport {
    let mut repeats = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let mut rng = Lcg::new(cfg.seed.wrapping_add(repeat as u64));
        let (train, test) = split(formats, cfg.split, cfg.stratified, &mut rng);
        let sub = Corpus {
            files: train.iter().map(|&i| corpus.files[i].clone()).collect(),
        };
        let trained = converge(&sub, cfg).ok();
        let test_failures: Vec<usize> = test
            .iter()
            .copied()
            .filter(|&i| {
                let f = &corpus.files[i];
                trained
                    .as_ref()
                    .is_none_or(|t| t.tree.interpret(&f.bytes).as_ref() != Ok(&f.expected))
            })
            .collect();
        let seen: BTreeSet<&str> = train.iter().map(|&i| formats[i].as_str()).collect();
        let formats_missing_from_train = test
            .iter()
            .map(|&i| formats[i].as_str())
            .filter(|f| !seen.contains(f))
            .map(String::from)
            .collect();
        repeats.push(RepeatResult {
            repeat,
            train,
            test,
            train_accuracy: trained.map(|_| 1.0),
            test_failures,
            formats_missing_from_train,
        });
    }
    EvalReport {
        formats: formats.to_vec(),
        repeats,
    }
}

/// Cross-validates on the corpus and writes `eval.txt`.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let manifest = Manifest::load(&cfg.corpus_dir)?;
    let corpus = manifest.load_corpus(&cfg.corpus_dir)?;
    let formats: Vec<String> = manifest.files.iter().map(|e| e.format.clone()).collect();
    let report = evaluate(&corpus, &formats, cfg);
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join(EVAL_FILE), report.to_string())?;
    cfg.save(&cfg.out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let formats: Vec<String> = (0..10)
            .map(|i| if i < 7 { "a".into() } else { "b".into() })
            .collect();
        let (tr, te) = split(&formats, 0.8, false, &mut Lcg::new(3));
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert_eq!(split(&formats, 0.8, false, &mut Lcg::new(3)), (tr, te));
        let (tr, _) = split(&formats, 0.8, true, &mut Lcg::new(3));
        assert!(tr.iter().any(|&i| i >= 7) && tr.iter().any(|&i| i < 7));
    }

    #[test]
    fn singleton_groups_train() {
        let formats = vec![String::from("a")];
        assert_eq!(
            split(&formats, 0.8, true, &mut Lcg::new(1)),
            (vec![0], vec![])
        );
    }
}
