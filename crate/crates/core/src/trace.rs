//! Trace logs: one record per output byte, mapping it to an expression over
//! input bytes.
//!
//! Text form, one record per line:
//!
//! ```text
//! IN <file-id> <length>
//! OUT <array> <index> := <s-expression>
//! ```

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::expr::{parse_sexpr, ByteExpr, ExprError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub array: String,
    pub index: u64,
    pub expr: ByteExpr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceLog {
    pub file_id: String,
    pub input_len: u64,
    pub entries: Vec<TraceEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceError {
    Syntax { line: usize, message: String },
    Schema { line: usize, error: ExprError },
    Duplicate { array: String, index: u64 },
    Gap { array: String, missing: u64 },
    Evaluation(ExprError),
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::Syntax { line, message } => write!(f, "line {line}: {message}"),
            TraceError::Schema { line, error } => write!(f, "line {line}: {error}"),
            TraceError::Duplicate { array, index } => {
                write!(f, "duplicate record for {array}[{index}]")
            }
            TraceError::Gap { array, missing } => {
                write!(f, "array {array} has no record for index {missing}")
            }
            TraceError::Evaluation(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TraceError {}

impl TraceLog {
    /// Entries grouped per array, each sorted by index.
    pub fn arrays(&self) -> BTreeMap<&str, Vec<&TraceEntry>> {
        let mut out: BTreeMap<&str, Vec<&TraceEntry>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.array.as_str()).or_default().push(e);
        }
        for list in out.values_mut() {
            list.sort_by_key(|e| e.index);
        }
        out
    }

    /// Checks uniqueness, contiguity from 0, width rules and offset bounds.
    pub fn validate(&self) -> Result<(), TraceError> {
        for (array, list) in self.arrays() {
            for (expected, e) in list.iter().enumerate() {
                let expected = expected as u64;
                if e.index < expected {
                    return Err(TraceError::Duplicate {
                        array: array.to_string(),
                        index: e.index,
                    });
                }
                if e.index > expected {
                    return Err(TraceError::Gap {
                        array: array.to_string(),
                        missing: expected,
                    });
                }
            }
        }
        for e in &self.entries {
            e.expr.check().map_err(TraceError::Evaluation)?;
            let mut bad = None;
            e.expr.visit_reads(&mut |o| {
                if o >= self.input_len && bad.is_none() {
                    bad = Some(o);
                }
            });
            if let Some(offset) = bad {
                return Err(TraceError::Evaluation(ExprError::OutOfRange { offset }));
            }
        }
        Ok(())
    }

    /// Replays every entry against `input`, producing the output buffers.
    pub fn replay(&self, input: &[u8]) -> Result<BTreeMap<String, Vec<u8>>, TraceError> {
        let mut out: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for (array, list) in self.arrays() {
            let mut buf = Vec::with_capacity(list.len());
            for e in list {
                buf.push(e.expr.eval(input).map_err(TraceError::Evaluation)? as u8);
            }
            out.insert(array.to_string(), buf);
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "IN {} {}", self.file_id, self.input_len);
        for e in &self.entries {
            let _ = writeln!(s, "OUT {} {} := {}", e.array, e.index, e.expr);
        }
        s
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| !c.is_whitespace())
}

/// Parses and validates a trace. Expressions are canonicalized on the way in.
pub fn parse_trace(text: &str) -> Result<TraceLog, TraceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let syntax = |line, message: &str| TraceError::Syntax {
        line,
        message: message.to_string(),
    };

    let (hline, header) = lines.next().ok_or_else(|| syntax(1, "missing IN header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "IN" {
        return Err(syntax(hline, "expected `IN <file-id> <length>`"));
    }
    let input_len: u64 = parts[2]
        .parse()
        .map_err(|_| syntax(hline, "invalid input length"))?;
    let mut log = TraceLog {
        file_id: parts[1].to_string(),
        input_len,
        entries: Vec::new(),
    };

    for (line, text) in lines {
        let rest = text
            .trim_start()
            .strip_prefix("OUT ")
            .ok_or_else(|| syntax(line, "expected OUT record"))?;
        let (lhs, rhs) = rest
            .split_once(":=")
            .ok_or_else(|| syntax(line, "missing `:=`"))?;
        let mut lhs = lhs.split_whitespace();
        let (array, index) = match (lhs.next(), lhs.next(), lhs.next()) {
            (Some(a), Some(i), None) if is_name(a) => (a, i),
            _ => return Err(syntax(line, "expected `<array> <index>` before `:=`")),
        };
        let index: u64 = index
            .parse()
            .map_err(|_| syntax(line, "invalid output index"))?;
        let expr = parse_sexpr(rhs.trim()).map_err(|e| TraceError::Syntax {
            line,
            message: e.to_string(),
        })?;
        expr.check()
            .map_err(|error| TraceError::Schema { line, error })?;
        log.entries.push(TraceEntry {
            array: array.to_string(),
            index,
            expr: expr.canonicalize(),
        });
    }
    log.validate()?;
    Ok(log)
}
