use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regen::commands;
use regen::config::RunConfig;
use regen::error::CliError;
use regen::verify::VerifyStatus;
use regen_core::generalize::Voting;
use regen_core::tree::Strategy;

#[derive(Parser)]
#[command(
    name = "regen",
    version,
    about = "Infer binary parsers from execution traces"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded corpus with a manifest.
    GenCorpus(Overrides),
    /// Infer a parser tree for a corpus.
    Infer(Overrides),
    /// Repeated train/test evaluation.
    Eval(Overrides),
    /// Write C source for an inferred tree.
    Emit(Overrides),
    /// Write the tree as Graphviz.
    Viz(Overrides),
    /// Compile the emitted parser and compare it with the interpreter.
    Verify(Overrides),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated format tokens.
    #[arg(long, value_delimiter = ',')]
    formats: Option<Vec<String>>,
    /// Files per format.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// smallest, largest or random:SEED
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    header_start: Option<usize>,
    #[arg(long)]
    header_cap: Option<usize>,
    #[arg(long)]
    stride_min: Option<usize>,
    #[arg(long)]
    stride_max: Option<usize>,
    /// cartesian, simplest, conceptual or optimized
    #[arg(long)]
    voting: Option<Voting>,
    #[arg(long)]
    partial: bool,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    stratified: bool,
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        set!(corpus => corpus_dir, out => out_dir, seed => seed, formats => formats, count => count,
            batch => batch, strategy => strategy, header_start => header_start, header_cap => header_cap,
            stride_min => stride_min, stride_max => stride_max, voting => voting, split => split,
            repeats => repeats);
        cfg.partial |= self.partial;
        cfg.stratified |= self.stratified;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let (command, overrides) = match cli.command {
        Command::GenCorpus(o) => ("gen-corpus", o),
        Command::Infer(o) => ("infer", o),
        Command::Eval(o) => ("eval", o),
        Command::Emit(o) => ("emit", o),
        Command::Viz(o) => ("viz", o),
        Command::Verify(o) => ("verify", o),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    match command {
        "gen-corpus" => {
            let m = commands::gen_corpus(&cfg)?;
            println!(
                "wrote {} files to {}",
                m.files.len(),
                cfg.corpus_dir.display()
            );
        }
        "infer" => {
            let done = commands::infer(&cfg)?;
            print!("{}", commands::rounds_text(&done));
            println!(
                "converged: {} leaves, {} logs, {} traced bytes, header {}",
                done.tree.leaf_count(),
                done.logs.len(),
                done.traced_bytes(),
                done.header_size
            );
        }
        "eval" => print!("{}", commands::eval(&cfg)?),
        "emit" => println!("{}", commands::emit(&cfg)?.display()),
        "viz" => println!("{}", commands::viz(&cfg)?.display()),
        _ => {
            let report = commands::verify(&cfg)?;
            println!("{report}");
            if !report.passed() && !matches!(report.status, VerifyStatus::Skipped(_)) {
                return Err(CliError::Failed(
                    "emitted parser disagrees with the interpreter".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
