//! Reference parsers and corpus generation for the three sample formats.
//!
//! Each format has one parsing routine written against a [`Sink`]. The plain
//! sink keeps natively computed bytes; the tracing sink additionally builds
//! the expression that explains each byte. Values are never derived from the
//! expressions, so replaying a trace is a real cross-check.

mod bmp;
mod fwc;
mod wav;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::expr::ByteExpr;
use crate::lcg::Lcg;
use crate::trace::{TraceEntry, TraceLog};

pub use bmp::{BmpSpec, BmpVersion, Layout16, Order32};
pub use fwc::FwcSpec;
pub use wav::WavSpec;

/// Named output buffers, keyed by array name.
pub type Buffers = BTreeMap<String, Vec<u8>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum FormatSpec {
    Wav(WavSpec),
    Bmp(BmpSpec),
    Fwc(FwcSpec),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleError {
    UnknownMagic,
    Truncated { needed: u64, len: u64 },
    Unsupported(String),
    InvalidSpec(String),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::UnknownMagic => f.write_str("unrecognised file magic"),
            OracleError::Truncated { needed, len } => {
                write!(f, "file needs {needed} bytes but has {len}")
            }
            OracleError::Unsupported(what) => write!(f, "unsupported {what}"),
            OracleError::InvalidSpec(what) => write!(f, "invalid format spec: {what}"),
        }
    }
}

impl core::error::Error for OracleError {}

/// Receives output bytes in order, per array.
pub(crate) trait Sink {
    fn put(&mut self, array: &str, value: u8, expr: impl FnOnce() -> ByteExpr);
}

#[derive(Default)]
struct ValueSink {
    buffers: Buffers,
}

impl Sink for ValueSink {
    fn put(&mut self, array: &str, value: u8, _expr: impl FnOnce() -> ByteExpr) {
        self.buffers
            .entry(array.to_string())
            .or_default()
            .push(value);
    }
}

#[derive(Default)]
struct TraceSink {
    buffers: Buffers,
    entries: Vec<TraceEntry>,
}

impl Sink for TraceSink {
    fn put(&mut self, array: &str, value: u8, expr: impl FnOnce() -> ByteExpr) {
        let buf = self.buffers.entry(array.to_string()).or_default();
        let index = buf.len() as u64;
        buf.push(value);
        self.entries.push(TraceEntry {
            array: array.to_string(),
            index,
            expr: expr().canonicalize(),
        });
    }
}

pub(crate) fn read_u16(file: &[u8], at: usize) -> Result<u16, OracleError> {
    need(file, at + 2)?;
    Ok(u16::from_le_bytes([file[at], file[at + 1]]))
}

pub(crate) fn read_u32(file: &[u8], at: usize) -> Result<u32, OracleError> {
    need(file, at + 4)?;
    Ok(u32::from_le_bytes([
        file[at],
        file[at + 1],
        file[at + 2],
        file[at + 3],
    ]))
}

pub(crate) fn need(file: &[u8], len: usize) -> Result<(), OracleError> {
    if file.len() < len {
        return Err(OracleError::Truncated {
            needed: len as u64,
            len: file.len() as u64,
        });
    }
    Ok(())
}

fn dispatch<S: Sink>(file: &[u8], sink: &mut S) -> Result<(), OracleError> {
    if file.starts_with(b"BM") {
        bmp::parse(file, sink)
    } else if file.starts_with(b"RIFF") {
        wav::parse(file, sink)
    } else if file.starts_with(fwc::MAGIC) {
        fwc::parse(file, sink)
    } else {
        Err(OracleError::UnknownMagic)
    }
}

/// Parses any of the three formats into its canonical in-memory buffers.
pub fn oracle_parse(file: &[u8]) -> Result<Buffers, OracleError> {
    let mut sink = ValueSink::default();
    dispatch(file, &mut sink)?;
    Ok(sink.buffers)
}

/// Parses like [`oracle_parse`] and also records the per-byte trace.
pub fn traced_parse(file: &[u8], file_id: &str) -> Result<(Buffers, TraceLog), OracleError> {
    let mut sink = TraceSink::default();
    dispatch(file, &mut sink)?;
    let log = TraceLog {
        file_id: file_id.to_string(),
        input_len: file.len() as u64,
        entries: sink.entries,
    };
    Ok((sink.buffers, log))
}

/// The functionality oracle as seen by the inference pipeline.
pub trait Oracle {
    fn parse(&self, file: &[u8]) -> Result<Buffers, OracleError>;
    fn trace(&self, file: &[u8], file_id: &str) -> Result<TraceLog, OracleError>;
}

/// The built-in reference parsers.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceOracle;

impl Oracle for ReferenceOracle {
    fn parse(&self, file: &[u8]) -> Result<Buffers, OracleError> {
        oracle_parse(file)
    }

    fn trace(&self, file: &[u8], file_id: &str) -> Result<TraceLog, OracleError> {
        traced_parse(file, file_id).map(|(_, log)| log)
    }
}

impl FormatSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        match self {
            FormatSpec::Wav(s) => s.validate(),
            FormatSpec::Bmp(s) => s.validate(),
            FormatSpec::Fwc(s) => s.validate(),
        }
    }

    pub fn encode(&self, rng: &mut Lcg) -> Result<Vec<u8>, OracleError> {
        self.validate()?;
        Ok(match self {
            FormatSpec::Wav(s) => s.encode(rng),
            FormatSpec::Bmp(s) => s.encode(rng),
            FormatSpec::Fwc(s) => s.encode(rng),
        })
    }

    pub fn format_type(&self) -> FormatType {
        match self {
            FormatSpec::Wav(s) => FormatType::Wav {
                channels: s.channels,
                bits: s.bits,
            },
            FormatSpec::Bmp(s) => FormatType::Bmp {
                version: s.version,
                bpp: s.bpp,
                top_down: s.top_down,
                layout16: s.layout16,
                order32: s.order32,
            },
            FormatSpec::Fwc(_) => FormatType::Fwc,
        }
    }
}

/// Generates one file per spec from a single seeded stream.
pub fn gen_corpus(
    specs: &[FormatSpec],
    seed: u64,
) -> Result<Vec<(Vec<u8>, FormatSpec)>, OracleError> {
    if specs.is_empty() {
        return Err(OracleError::InvalidSpec("no specs given".into()));
    }
    let mut rng = Lcg::new(seed);
    specs
        .iter()
        .map(|s| Ok((s.encode(&mut rng)?, s.clone())))
        .collect()
}

/// A format variant with its size parameters left open.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FormatType {
    Wav {
        channels: u8,
        bits: u8,
    },
    Bmp {
        version: BmpVersion,
        bpp: u16,
        top_down: bool,
        layout16: Layout16,
        order32: Order32,
    },
    Fwc,
}

/// Size ranges used when instantiating a [`FormatType`] at random.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min_dim: u32,
    pub max_dim: u32,
    pub min_samples: u32,
    pub max_samples: u32,
    pub min_chunk: u32,
    pub max_chunk: u32,
}

impl Default for SizeRange {
    fn default() -> Self {
        SizeRange {
            min_dim: 4,
            max_dim: 40,
            min_samples: 4,
            max_samples: 400,
            min_chunk: 2,
            max_chunk: 200,
        }
    }
}

const SAMPLE_RATES: [u32; 4] = [8000, 11025, 22050, 44100];

impl FormatType {
    /// Picks sizes from `rng`. Bitmap widths are odd three times out of four
    /// so that most files carry row padding.
    pub fn instantiate(self, sizes: &SizeRange, rng: &mut Lcg) -> FormatSpec {
        match self {
            FormatType::Wav { channels, bits } => FormatSpec::Wav(WavSpec {
                channels,
                bits,
                samples: rng.range(sizes.min_samples as u64, sizes.max_samples as u64) as u32,
                sample_rate: SAMPLE_RATES[rng.range(0, 3) as usize],
            }),
            FormatType::Bmp {
                version,
                bpp,
                top_down,
                layout16,
                order32,
            } => {
                let mut width = rng.range(sizes.min_dim as u64, sizes.max_dim as u64) as u32;
                if rng.range(0, 3) != 0 && width.is_multiple_of(2) {
                    width = if width < sizes.max_dim {
                        width + 1
                    } else {
                        width - 1
                    };
                }
                let height = rng.range(sizes.min_dim as u64, sizes.max_dim as u64) as u32;
                FormatSpec::Bmp(BmpSpec {
                    version,
                    bpp,
                    top_down,
                    layout16,
                    order32,
                    width,
                    height,
                })
            }
            FormatType::Fwc => FormatSpec::Fwc(FwcSpec {
                len0: rng.range(sizes.min_chunk as u64, sizes.max_chunk as u64) as u32,
                len1: rng.range(sizes.min_chunk as u64, sizes.max_chunk as u64) as u32,
            }),
        }
    }
}

impl fmt::Display for FormatType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatType::Wav { channels, bits } => {
                write!(f, "wav-{}{}", if *channels == 1 { "m" } else { "s" }, bits)
            }
            FormatType::Bmp {
                version,
                bpp,
                top_down,
                layout16,
                order32,
            } => {
                write!(f, "bmp{bpp}")?;
                if *bpp == 16 && *layout16 == Layout16::R5G6B5 {
                    f.write_str("-565")?;
                }
                if *bpp == 32 && *order32 == Order32::Rgba {
                    f.write_str("-rgba")?;
                }
                if *top_down {
                    f.write_str("-td")?;
                }
                match version {
                    BmpVersion::V3 => Ok(()),
                    BmpVersion::V4 => f.write_str("-v4"),
                    BmpVersion::V5 => f.write_str("-v5"),
                }
            }
            FormatType::Fwc => f.write_str("fwc"),
        }
    }
}

impl FromStr for FormatType {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OracleError::InvalidSpec(format!("unknown format token '{s}'"));
        if s == "fwc" {
            return Ok(FormatType::Fwc);
        }
        if let Some(rest) = s.strip_prefix("wav-") {
            let (channels, bits) = match rest {
                "m8" => (1, 8),
                "m16" => (1, 16),
                "s8" => (2, 8),
                "s16" => (2, 16),
                _ => return Err(bad()),
            };
            return Ok(FormatType::Wav { channels, bits });
        }
        let rest = s.strip_prefix("bmp").ok_or_else(bad)?;
        let mut parts = rest.split('-');
        let bpp: u16 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        if ![16, 24, 32].contains(&bpp) {
            return Err(bad());
        }
        let mut ty = (BmpVersion::V3, false, Layout16::X1R5G5B5, Order32::Bgra);
        for p in parts {
            match p {
                "565" if bpp == 16 => ty.2 = Layout16::R5G6B5,
                "rgba" if bpp == 32 => ty.3 = Order32::Rgba,
                "td" => ty.1 = true,
                "v4" => ty.0 = BmpVersion::V4,
                "v5" => ty.0 = BmpVersion::V5,
                _ => return Err(bad()),
            }
        }
        Ok(FormatType::Bmp {
            version: ty.0,
            bpp,
            top_down: ty.1,
            layout16: ty.2,
            order32: ty.3,
        })
    }
}
