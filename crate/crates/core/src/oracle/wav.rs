//! Canonical 44-byte-header PCM WAV files.
//!
//! Output is one buffer per channel (`ch0`, `ch1`) of signed 64-bit
//! little-endian samples. Unsigned 8-bit samples become `sample - 128`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{need, read_u16, read_u32, OracleError, Sink};
use crate::expr::{BinOp, ByteExpr, Width};
use crate::lcg::Lcg;

pub const DATA_OFFSET: usize = 44;
const CHANNEL_NAMES: [&str; 2] = ["ch0", "ch1"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WavSpec {
    pub channels: u8,
    pub bits: u8,
    pub samples: u32,
    pub sample_rate: u32,
}

impl WavSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(1..=2).contains(&self.channels) || ![8, 16].contains(&self.bits) {
            return Err(OracleError::InvalidSpec(format!(
                "{} channels of {} bits",
                self.channels, self.bits
            )));
        }
        if self.samples == 0 || self.samples > 1 << 26 {
            return Err(OracleError::InvalidSpec(format!(
                "{} samples",
                self.samples
            )));
        }
        Ok(())
    }

    pub fn block_align(&self) -> u32 {
        self.channels as u32 * self.bits as u32 / 8
    }

    pub fn encode(&self, rng: &mut Lcg) -> Vec<u8> {
        let data_len = self.samples * self.block_align();
        let mut f = Vec::with_capacity(DATA_OFFSET + data_len as usize);
        f.extend_from_slice(b"RIFF");
        f.extend_from_slice(&(36 + data_len).to_le_bytes());
        f.extend_from_slice(b"WAVEfmt ");
        f.extend_from_slice(&16u32.to_le_bytes());
        f.extend_from_slice(&1u16.to_le_bytes());
        f.extend_from_slice(&(self.channels as u16).to_le_bytes());
        f.extend_from_slice(&self.sample_rate.to_le_bytes());
        f.extend_from_slice(&(self.sample_rate * self.block_align()).to_le_bytes());
        f.extend_from_slice(&(self.block_align() as u16).to_le_bytes());
        f.extend_from_slice(&(self.bits as u16).to_le_bytes());
        f.extend_from_slice(b"data");
        f.extend_from_slice(&data_len.to_le_bytes());
        let start = f.len();
        f.resize(start + data_len as usize, 0);
        rng.fill(&mut f[start..]);
        f
    }
}

fn sample_expr(bits: u16, at: u64) -> ByteExpr {
    if bits == 8 {
        ByteExpr::bin(
            BinOp::Sub,
            ByteExpr::zext(Width::W64, ByteExpr::read(at)),
            ByteExpr::constant(128, Width::W64),
        )
    } else {
        let word = ByteExpr::bin(
            BinOp::Or,
            ByteExpr::zext(Width::W16, ByteExpr::read(at)),
            ByteExpr::bin(
                BinOp::Shl,
                ByteExpr::zext(Width::W16, ByteExpr::read(at + 1)),
                ByteExpr::constant(8, Width::W16),
            ),
        );
        ByteExpr::sext(Width::W64, word)
    }
}

pub(crate) fn parse<S: Sink>(file: &[u8], sink: &mut S) -> Result<(), OracleError> {
    need(file, DATA_OFFSET)?;
    if &file[8..16] != b"WAVEfmt " || &file[36..40] != b"data" {
        return Err(OracleError::Unsupported("RIFF layout".into()));
    }
    if read_u32(file, 16)? != 16 || read_u16(file, 20)? != 1 {
        return Err(OracleError::Unsupported("non-PCM fmt chunk".into()));
    }
    let channels = read_u16(file, 22)?;
    let bits = read_u16(file, 34)?;
    if !(1..=2).contains(&channels) || ![8, 16].contains(&bits) {
        return Err(OracleError::Unsupported(format!(
            "{channels} channels of {bits} bits"
        )));
    }
    let block = read_u16(file, 32)?;
    if block != channels * bits / 8 {
        return Err(OracleError::Unsupported(format!("block alignment {block}")));
    }
    let data_len = read_u32(file, 40)? as u64;
    let end = DATA_OFFSET as u64 + data_len;
    if (file.len() as u64) < end {
        return Err(OracleError::Truncated {
            needed: end,
            len: file.len() as u64,
        });
    }
    let frames = data_len / block as u64;
    let width = bits as u64 / 8;

    for (c, name) in CHANNEL_NAMES.iter().enumerate().take(channels as usize) {
        for frame in 0..frames {
            let at = DATA_OFFSET as u64 + frame * block as u64 + c as u64 * width;
            let i = at as usize;
            let sample: i64 = if bits == 8 {
                file[i] as i64 - 128
            } else {
                i16::from_le_bytes([file[i], file[i + 1]]) as i64
            };
            for (k, byte) in sample.to_le_bytes().into_iter().enumerate() {
                let k = k as u32;
                sink.put(name, byte, || {
                    ByteExpr::extract(8 * k + 7, 8 * k, sample_expr(bits, at))
                });
            }
        }
    }
    Ok(())
}
