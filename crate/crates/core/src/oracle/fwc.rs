//! Two-chunk firmware container.
//!
//! Layout: magic `FWC0`, u32 LE lengths at 4 and 8, 20 reserved zero bytes,
//! then both chunks back to back from offset 32.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{need, read_u32, OracleError, Sink};
use crate::expr::ByteExpr;
use crate::lcg::Lcg;

pub(crate) const MAGIC: &[u8] = b"FWC0";
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FwcSpec {
    pub len0: u32,
    pub len1: u32,
}

impl FwcSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.len0 == 0 || self.len1 == 0 || self.len0 > 1 << 28 || self.len1 > 1 << 28 {
            return Err(OracleError::InvalidSpec(format!(
                "chunk lengths {} and {}",
                self.len0, self.len1
            )));
        }
        Ok(())
    }

    pub fn encode(&self, rng: &mut Lcg) -> Vec<u8> {
        let mut f = Vec::with_capacity(HEADER_LEN + (self.len0 + self.len1) as usize);
        f.extend_from_slice(MAGIC);
        f.extend_from_slice(&self.len0.to_le_bytes());
        f.extend_from_slice(&self.len1.to_le_bytes());
        f.resize(HEADER_LEN, 0);
        f.resize(HEADER_LEN + (self.len0 + self.len1) as usize, 0);
        rng.fill(&mut f[HEADER_LEN..]);
        f
    }
}

pub(crate) fn parse<S: Sink>(file: &[u8], sink: &mut S) -> Result<(), OracleError> {
    need(file, HEADER_LEN)?;
    let lens = [read_u32(file, 4)? as u64, read_u32(file, 8)? as u64];
    let end = HEADER_LEN as u64 + lens[0] + lens[1];
    if (file.len() as u64) < end {
        return Err(OracleError::Truncated {
            needed: end,
            len: file.len() as u64,
        });
    }
    let mut at = HEADER_LEN as u64;
    for (name, len) in ["chunk0", "chunk1"].into_iter().zip(lens) {
        for o in at..at + len {
            sink.put(name, file[o as usize], || ByteExpr::read(o));
        }
        at += len;
    }
    Ok(())
}
