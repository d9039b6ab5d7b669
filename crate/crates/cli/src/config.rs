//! Run configuration. Every field has a default, and each command saves
//! the configuration it ran with next to its results.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regen_core::generalize::{Voting, DEFAULT_HEADER_CAP, DEFAULT_HEADER_START};
use regen_core::oracle::SizeRange;
use regen_core::summarize::DEFAULT_STRIDES;
use regen_core::tree::{ExpandOptions, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Format tokens such as `bmp24-td` or `wav-s16`.
    pub formats: Vec<String>,
    /// Files per format.
    pub count: usize,
    pub sizes: SizeRange,
    pub batch: usize,
    #[serde(with = "as_text")]
    pub strategy: Strategy,
    pub header_start: usize,
    pub header_cap: usize,
    pub stride_min: usize,
    pub stride_max: usize,
    #[serde(with = "as_text")]
    pub voting: Voting,
    /// Emit reject branches for leaves without a parser.
    pub partial: bool,
    pub split: f64,
    pub repeats: usize,
    /// Split each format separately so every format reaches training.
    pub stratified: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            seed: 1,
            formats: [
                "wav-m8", "wav-s16", "bmp16", "bmp24", "bmp24-td", "bmp32", "fwc",
            ]
            .map(String::from)
            .to_vec(),
            count: 20,
            sizes: SizeRange::default(),
            batch: 10,
            strategy: Strategy::Smallest,
            header_start: DEFAULT_HEADER_START,
            header_cap: DEFAULT_HEADER_CAP,
            stride_min: *DEFAULT_STRIDES.start(),
            stride_max: *DEFAULT_STRIDES.end(),
            voting: Voting::Cartesian,
            partial: false,
            split: 0.8,
            repeats: 20,
            stratified: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(CONFIG_FILE);
        let text = toml::to_string(self).map_err(|e| CliError::Failed(e.to_string()))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.into()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.stride_min == 0 || self.stride_min > self.stride_max {
            return bad("stride range must be non-empty and start at 1 or more");
        }
        if self.header_start == 0 || self.header_start > self.header_cap {
            return bad("header start must be between 1 and the header cap");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn expand_options(&self) -> ExpandOptions {
        ExpandOptions {
            batch: self.batch,
            strategy: self.strategy,
            header_start: self.header_start,
            header_cap: self.header_cap,
            strides: self.stride_min..=self.stride_max,
            voting: self.voting,
        }
    }
}

/// Serde through `Display`/`FromStr`.
mod as_text {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}
