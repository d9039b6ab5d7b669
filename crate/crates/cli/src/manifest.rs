//! Corpus manifests: which file holds which format instance.

use std::fs;
use std::path::{Path, PathBuf};

use regen_core::lcg::Lcg;
use regen_core::oracle::{gen_corpus, FormatSpec, FormatType, ReferenceOracle, SizeRange};
use regen_core::tree::Corpus;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    /// Relative to the corpus directory.
    pub path: PathBuf,
    /// Format token, e.g. `bmp24-td`.
    pub format: String,
    pub spec: FormatSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub files: Vec<Entry>,
}

fn extension(spec: &FormatSpec) -> &'static str {
    match spec {
        FormatSpec::Wav(_) => "wav",
        FormatSpec::Bmp(_) => "bmp",
        FormatSpec::Fwc(_) => "fwc",
    }
}

/// Instantiates `count` specs per format and encodes them. Sizes come from
/// one seeded stream and file contents from another, so the same inputs
/// always give the same bytes.
pub fn generate(
    formats: &[FormatType],
    count: usize,
    sizes: &SizeRange,
    seed: u64,
) -> Result<(Manifest, Vec<Vec<u8>>), CliError> {
    let mut rng = Lcg::new(seed);
    let mut entries = Vec::new();
    let mut specs = Vec::new();
    for ty in formats {
        for k in 0..count {
            let spec = ty.instantiate(sizes, &mut rng);
            entries.push(Entry {
                path: PathBuf::from(format!("{ty}-{k:04}.{}", extension(&spec))),
                format: ty.to_string(),
                spec: spec.clone(),
            });
            specs.push(spec);
        }
    }
    if specs.is_empty() {
        return Err(CliError::Usage("no files to generate".into()));
    }
    let files = gen_corpus(&specs, seed.wrapping_add(1))
        .map_err(|e| CliError::Usage(e.to_string()))?
        .into_iter()
        .map(|(bytes, _)| bytes)
        .collect();
    Ok((
        Manifest {
            seed,
            files: entries,
        },
        files,
    ))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format {
            path,
            msg: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Failed(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// Reads every listed file and runs the oracle on it.
    pub fn load_corpus(&self, dir: &Path) -> Result<Corpus, CliError> {
        let mut files = Vec::with_capacity(self.files.len());
        for e in &self.files {
            let path = dir.join(&e.path);
            let bytes = fs::read(&path).map_err(|err| CliError::io(&path, err))?;
            files.push((e.path.display().to_string(), bytes));
        }
        Corpus::new(files, &ReferenceOracle).map_err(|e| CliError::OracleMismatch(e.to_string()))
    }
}
