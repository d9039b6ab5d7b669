//! Output buffers on disk: the raw bytes of every buffer concatenated in
//! name order, plus a sidecar index (`<path>.idx`) with one
//! `name offset length` line per buffer.

use std::fs;
use std::path::{Path, PathBuf};

use regen_core::oracle::Buffers;

use crate::error::CliError;

pub fn index_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".idx");
    PathBuf::from(os)
}

pub fn encode(buffers: &Buffers) -> (Vec<u8>, String) {
    let mut raw = Vec::new();
    let mut index = String::new();
    for (name, bytes) in buffers {
        index.push_str(&format!("{name} {} {}\n", raw.len(), bytes.len()));
        raw.extend_from_slice(bytes);
    }
    (raw, index)
}

pub fn decode(raw: &[u8], index: &str) -> Result<Buffers, String> {
    let mut out = Buffers::new();
    for (n, line) in index
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        // Split from the right so names may contain spaces.
        let mut parts = line.rsplitn(3, ' ');
        let (Some(len), Some(offset), Some(name)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(format!("index line {} is malformed", n + 1));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("index line {} is malformed", n + 1))
        };
        let (offset, len) = (parse(offset)?, parse(len)?);
        let bytes = offset
            .checked_add(len)
            .and_then(|end| raw.get(offset..end))
            .ok_or_else(|| format!("index line {} points past the data", n + 1))?;
        out.insert(name.to_string(), bytes.to_vec());
    }
    Ok(out)
}

pub fn write(path: &Path, buffers: &Buffers) -> Result<(), CliError> {
    let (raw, index) = encode(buffers);
    fs::write(path, raw).map_err(|e| CliError::io(path, e))?;
    let idx = index_path(path);
    fs::write(&idx, index).map_err(|e| CliError::io(&idx, e))
}

pub fn read(path: &Path) -> Result<Buffers, CliError> {
    let raw = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let idx = index_path(path);
    let index = fs::read_to_string(&idx).map_err(|e| CliError::io(&idx, e))?;
    decode(&raw, &index).map_err(|msg| CliError::Format { path: idx, msg })
}
