//! Direct execution of IR programs against input bytes.
//!
//! Every input read is bounds-checked and every output write goes through a
//! growable buffer, so malformed files end in an [`InterpError`] instead of a
//! crash.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ir::{HeaderSource, IrProgram, LoopNest, SymbolDef};
use crate::oracle::Buffers;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InterpError {
    ReadPastEnd {
        offset: i64,
    },
    NegativeOutputIndex {
        index: i64,
    },
    UnboundSymbol(String),
    Overflow,
    OutputLimit {
        index: i64,
    },
    /// The decision tree routed the file to a leaf without a parser.
    NoParser,
}

impl fmt::Display for InterpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpError::ReadPastEnd { offset } => {
                write!(f, "read past end of input at offset {offset}")
            }
            InterpError::NegativeOutputIndex { index } => write!(f, "invalid output index {index}"),
            InterpError::UnboundSymbol(name) => write!(f, "symbol {name} has no value"),
            InterpError::Overflow => f.write_str("arithmetic overflow in index computation"),
            InterpError::OutputLimit { index } => {
                write!(f, "output index {index} exceeds the output limit")
            }
            InterpError::NoParser => f.write_str("no parser for this file type"),
        }
    }
}

impl core::error::Error for InterpError {}

/// Largest output index a run may write for an input of `len` bytes.
pub fn output_limit(len: usize) -> i64 {
    16 * len as i64 + 65536
}

struct Resolver<'a> {
    program: &'a IrProgram,
    input: &'a [u8],
    values: BTreeMap<String, i64>,
    active: BTreeSet<String>,
}

impl Resolver<'_> {
    fn get(&mut self, name: &str) -> Result<i64, InterpError> {
        if let Some(v) = self.values.get(name) {
            return Ok(*v);
        }
        let sym = self
            .program
            .symbols
            .get(name)
            .ok_or_else(|| InterpError::UnboundSymbol(name.to_string()))?;
        if !self.active.insert(name.to_string()) {
            return Err(InterpError::UnboundSymbol(name.to_string()));
        }
        let v = match &sym.def {
            SymbolDef::Literal => sym.value,
            SymbolDef::Rewrite(r) => {
                let mut vals = BTreeMap::new();
                for op in r.operands() {
                    vals.insert(op, self.get(op)?);
                }
                r.eval(|n| vals.get(n).copied())
                    .ok_or(InterpError::Overflow)?
            }
            SymbolDef::Header(h) => self.header(h)?,
        };
        self.active.remove(name);
        self.values.insert(name.to_string(), v);
        Ok(v)
    }

    fn field(&self, f: &crate::ir::Field) -> Result<i128, InterpError> {
        f.read(self.input).ok_or(InterpError::ReadPastEnd {
            offset: (f.offset.max(self.input.len() as u64)) as i64,
        })
    }

    fn header(&mut self, h: &HeaderSource) -> Result<i64, InterpError> {
        let narrow = |v: i128| i64::try_from(v).map_err(|_| InterpError::Overflow);
        match h {
            HeaderSource::Field(f) => narrow(self.field(f)?),
            HeaderSource::NegField(f) => narrow(-self.field(f)?),
            HeaderSource::Product(a, b) => narrow(
                self.field(a)?
                    .checked_mul(self.field(b)?)
                    .ok_or(InterpError::Overflow)?,
            ),
            HeaderSource::NegProduct(a, b) => narrow(
                -(self
                    .field(a)?
                    .checked_mul(self.field(b)?)
                    .ok_or(InterpError::Overflow)?),
            ),
            HeaderSource::Adjacent {
                min_y,
                in_factor,
                bound,
            } => {
                let base = self.get(min_y)?;
                let f = self.get(in_factor)?;
                let n = self.get(bound)?;
                f.checked_abs()
                    .and_then(|f| f.checked_mul(n))
                    .and_then(|e| e.checked_add(base))
                    .ok_or(InterpError::Overflow)
            }
        }
    }
}

/// Computes every symbol's value for `input`.
pub fn resolve_symbols(
    program: &IrProgram,
    input: &[u8],
) -> Result<BTreeMap<String, i64>, InterpError> {
    let mut r = Resolver {
        program,
        input,
        values: BTreeMap::new(),
        active: BTreeSet::new(),
    };
    for name in program.symbols.keys() {
        r.get(name)?;
    }
    Ok(r.values)
}

fn ck(v: Option<i64>) -> Result<i64, InterpError> {
    v.ok_or(InterpError::Overflow)
}

struct LevelRun {
    bound: i64,
    step: i64,
    out_factor: i64,
    in_factor: i64,
    addend: i64,
}

fn run_nest(
    program: &IrProgram,
    nest: &LoopNest,
    values: &BTreeMap<String, i64>,
    input: &[u8],
    out: &mut Vec<u8>,
    budget: &mut u64,
) -> Result<(), InterpError> {
    let get = |n: &String| {
        values
            .get(n)
            .copied()
            .ok_or_else(|| InterpError::UnboundSymbol(n.clone()))
    };
    let min_x = get(&nest.min_x)?;
    let y0 = ck(get(&nest.min_y)?.checked_add(nest.y0_delta))?;
    let mut levels = Vec::with_capacity(nest.levels.len());
    for l in &nest.levels {
        let run = LevelRun {
            bound: get(&l.bound)?,
            step: l.step.max(1),
            out_factor: get(&l.out_factor)?,
            in_factor: get(&l.in_factor)?,
            addend: match &l.addend {
                Some(a) => get(a)?,
                None => 0,
            },
        };
        if run.bound <= 0 {
            return Ok(());
        }
        levels.push(run);
    }
    let limit = output_limit(input.len());
    let mut idx = alloc::vec![0i64; levels.len()];
    loop {
        let mut x = min_x;
        let mut y = y0;
        for (l, &i) in levels.iter().zip(&idx) {
            x = ck(i.checked_mul(l.out_factor).and_then(|d| x.checked_add(d)))?;
            y = ck(i
                .checked_add(l.addend)
                .and_then(|k| k.checked_mul(l.in_factor))
                .and_then(|d| y.checked_add(d)))?;
        }
        for s in &nest.body {
            *budget = budget
                .checked_sub(1)
                .ok_or(InterpError::OutputLimit { index: x })?;
            let xi = ck(x.checked_add(s.out_delta))?;
            if xi < 0 {
                return Err(InterpError::NegativeOutputIndex { index: xi });
            }
            if xi > limit {
                return Err(InterpError::OutputLimit { index: xi });
            }
            let template = &program
                .shapes
                .get(s.shape)
                .ok_or(InterpError::Overflow)?
                .template;
            let value = template.eval_with(&mut |p| {
                let rel = *s.rel.get(p as usize).ok_or(InterpError::Overflow)?;
                let at = ck(y.checked_add(rel))?;
                usize::try_from(at)
                    .ok()
                    .and_then(|i| input.get(i).copied())
                    .ok_or(InterpError::ReadPastEnd { offset: at })
            })?;
            let xi = xi as usize;
            if xi >= out.len() {
                out.resize(xi + 1, 0);
            }
            out[xi] = value as u8;
        }
        // Odometer, innermost level fastest.
        let mut k = levels.len();
        loop {
            if k == 0 {
                return Ok(());
            }
            k -= 1;
            idx[k] = ck(idx[k].checked_add(levels[k].step))?;
            if idx[k] < levels[k].bound {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Runs one program, producing its output buffers.
pub fn run_program(program: &IrProgram, input: &[u8]) -> Result<Buffers, InterpError> {
    let values = resolve_symbols(program, input)?;
    let mut budget = 4 * output_limit(input.len()) as u64;
    let mut buffers = Buffers::new();
    for a in &program.arrays {
        let mut out = Vec::new();
        for n in &a.nests {
            run_nest(program, n, &values, input, &mut out, &mut budget)?;
        }
        buffers.insert(a.name.clone(), out);
    }
    Ok(buffers)
}
