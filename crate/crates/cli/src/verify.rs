//! Compiling emitted C and checking it against the interpreter.

use std::env;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use regen_core::emit::REJECT_STATUS;
use regen_core::interp::InterpError;
use regen_core::tree::ParserTree;

use crate::buffers;
use crate::error::CliError;

/// `$CC` if set, otherwise the first of `cc`, `gcc`, `clang` on `PATH`.
pub fn find_compiler() -> Option<PathBuf> {
    if let Some(cc) = env::var_os("CC").filter(|v| !v.is_empty()) {
        return Some(PathBuf::from(cc));
    }
    let path = env::var_os("PATH")?;
    ["cc", "gcc", "clang"].iter().find_map(|name| {
        env::split_paths(&path)
            .map(|dir| dir.join(name))
            .find(|p| p.is_file())
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerifyStatus {
    Skipped(String),
    CompileFailed(String),
    Checked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    pub status: VerifyStatus,
    pub files: usize,
    pub identical: usize,
    /// One line per file whose compiled result differs.
    pub mismatches: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.status == VerifyStatus::Checked && self.identical == self.files
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            VerifyStatus::Skipped(why) => write!(f, "skipped: {why}"),
            VerifyStatus::CompileFailed(diag) => write!(f, "compile failed:\n{diag}"),
            VerifyStatus::Checked => {
                write!(f, "{}/{} files identical", self.identical, self.files)?;
                for m in &self.mismatches {
                    write!(f, "\n  {m}")?;
                }
                Ok(())
            }
        }
    }
}

/// Compiles `source` and runs it on every file, comparing with
/// `tree.interpret`. Files the interpreter rejects must make the compiled
/// program exit unsuccessfully without a signal.
pub fn verify_emitted(
    tree: &ParserTree,
    source: &str,
    files: &[(String, Vec<u8>)],
    compiler: Option<&Path>,
    workdir: &Path,
) -> Result<VerifyReport, CliError> {
    let skipped = |why: &str| VerifyReport {
        status: VerifyStatus::Skipped(why.into()),
        files: files.len(),
        identical: 0,
        mismatches: Vec::new(),
    };
    let Some(cc) = compiler else {
        return Ok(skipped("no C compiler found"));
    };
    fs::create_dir_all(workdir).map_err(|e| CliError::io(workdir, e))?;
    let src = workdir.join("parser.c");
    let exe = workdir.join("parser");
    fs::write(&src, source).map_err(|e| CliError::io(&src, e))?;
    let out = Command::new(cc)
        .args(["-std=c99", "-O1", "-o"])
        .arg(&exe)
        .arg(&src)
        .output()
        .map_err(|e| CliError::io(cc, e))?;
    if !out.status.success() {
        return Ok(VerifyReport {
            status: VerifyStatus::CompileFailed(String::from_utf8_lossy(&out.stderr).into_owned()),
            files: files.len(),
            identical: 0,
            mismatches: Vec::new(),
        });
    }
    let input = workdir.join("input.bin");
    let output = workdir.join("output.bin");
    let mut report = VerifyReport {
        status: VerifyStatus::Checked,
        files: files.len(),
        identical: 0,
        mismatches: Vec::new(),
    };
    for (id, bytes) in files {
        fs::write(&input, bytes).map_err(|e| CliError::io(&input, e))?;
        let _ = fs::remove_file(&output);
        let run = Command::new(&exe)
            .arg(&input)
            .arg(&output)
            .output()
            .map_err(|e| CliError::io(&exe, e))?;
        let code = run.status.code();
        let verdict = match tree.interpret(bytes) {
            Ok(want) => match (code, buffers::read(&output)) {
                (Some(0), Ok(got)) if got == want => None,
                (Some(0), Ok(_)) => Some("output differs from the interpreter".to_string()),
                (c, _) => Some(format!(
                    "exit {c:?} where the interpreter succeeds: {}",
                    String::from_utf8_lossy(&run.stderr).trim()
                )),
            },
            Err(InterpError::NoParser) if code == Some(REJECT_STATUS) => None,
            Err(e) => match code {
                Some(c) if c != 0 && c != REJECT_STATUS => None,
                c => Some(format!("exit {c:?} where the interpreter fails with: {e}")),
            },
        };
        match verdict {
            None => report.identical += 1,
            Some(why) => report.mismatches.push(format!("{id}: {why}")),
        }
    }
    Ok(report)
}
