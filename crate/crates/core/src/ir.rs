//! Loop-nest intermediate representation and its canonical text form.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::expr::ByteExpr;

/// One output byte per body statement, relative to the record origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub out_delta: i64,
    pub shape: usize,
    /// Placeholder offsets relative to the nest's `y0_0` cursor.
    pub rel: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub bound: String,
    pub out_factor: String,
    pub in_factor: String,
    /// Present when the level walks the input backwards.
    pub addend: Option<String>,
    pub step: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopNest {
    pub min_x: String,
    pub min_y: String,
    /// Distance from `MIN_Y` to the first placeholder of the first statement.
    pub y0_delta: i64,
    /// Outermost first.
    pub levels: Vec<Level>,
    pub body: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayProgram {
    pub name: String,
    pub nests: Vec<LoopNest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeDef {
    pub key: String,
    pub template: ByteExpr,
}

/// Little-endian header field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Field {
    pub offset: u64,
    pub bits: u32,
    pub signed: bool,
}

impl Field {
    /// Reads the field, or `None` when it extends past the input or has an
    /// unsupported width.
    pub fn read(&self, input: &[u8]) -> Option<i128> {
        if !matches!(self.bits, 8 | 16 | 32 | 64) {
            return None;
        }
        let len = (self.bits / 8) as usize;
        let start = usize::try_from(self.offset).ok()?;
        let bytes = input.get(start..start.checked_add(len)?)?;
        let mut raw: u64 = 0;
        for (i, b) in bytes.iter().enumerate() {
            raw |= (*b as u64) << (8 * i);
        }
        Some(if self.signed && self.bits < 64 {
            let shift = 64 - self.bits;
            (((raw << shift) as i64) >> shift) as i128
        } else if self.signed {
            raw as i64 as i128
        } else {
            raw as i128
        })
    }

    pub fn end(&self) -> u64 {
        self.offset + (self.bits / 8) as u64
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.signed { "signed" } else { "unsigned" };
        write!(f, "read_le({}, {}, {sign})", self.offset, self.bits)
    }
}

/// Constant rewritten as a template over other symbols.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rewrite {
    /// `-x + 1`
    OneMinus(String),
    Mul(String, String),
    NegMul(String, String),
    Pad4Mul(String, String),
    Pad4NegMul(String, String),
}

impl Rewrite {
    pub fn operands(&self) -> Vec<&str> {
        match self {
            Rewrite::OneMinus(x) => alloc::vec![x.as_str()],
            Rewrite::Mul(x, y)
            | Rewrite::NegMul(x, y)
            | Rewrite::Pad4Mul(x, y)
            | Rewrite::Pad4NegMul(x, y) => {
                alloc::vec![x.as_str(), y.as_str()]
            }
        }
    }

    /// Evaluates with `lookup` resolving operand names.
    pub fn eval(&self, lookup: impl Fn(&str) -> Option<i64>) -> Option<i64> {
        let v = |n: &String| lookup(n);
        match self {
            Rewrite::OneMinus(x) => 1i64.checked_sub(v(x)?),
            Rewrite::Mul(x, y) => v(x)?.checked_mul(v(y)?),
            Rewrite::NegMul(x, y) => v(x)?.checked_mul(v(y)?)?.checked_neg(),
            Rewrite::Pad4Mul(x, y) => pad4(v(x)?.checked_mul(v(y)?)?),
            Rewrite::Pad4NegMul(x, y) => pad4(v(x)?.checked_mul(v(y)?)?.checked_neg()?),
        }
    }
}

impl fmt::Display for Rewrite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rewrite::OneMinus(x) => write!(f, "-{x} + 1"),
            Rewrite::Mul(x, y) => write!(f, "{x} * {y}"),
            Rewrite::NegMul(x, y) => write!(f, "-{x} * {y}"),
            Rewrite::Pad4Mul(x, y) => write!(f, "pad4({x} * {y})"),
            Rewrite::Pad4NegMul(x, y) => write!(f, "pad4(-{x} * {y})"),
        }
    }
}

/// Rounds the magnitude up to a multiple of four, keeping the sign.
pub fn pad4(x: i64) -> Option<i64> {
    let m = x.unsigned_abs().checked_add(3)? / 4 * 4;
    let m = i64::try_from(m).ok()?;
    Some(if x < 0 { -m } else { m })
}

/// Where a bound or base offset comes from in a new file.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HeaderSource {
    Field(Field),
    NegField(Field),
    Product(Field, Field),
    NegProduct(Field, Field),
    /// `min_y + |in_factor| * bound` of another nest.
    Adjacent {
        min_y: String,
        in_factor: String,
        bound: String,
    },
}

impl fmt::Display for HeaderSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeaderSource::Field(a) => write!(f, "{a}"),
            HeaderSource::NegField(a) => write!(f, "-{a}"),
            HeaderSource::Product(a, b) => write!(f, "{a} * {b}"),
            HeaderSource::NegProduct(a, b) => write!(f, "-{a} * {b}"),
            HeaderSource::Adjacent {
                min_y,
                in_factor,
                bound,
            } => write!(f, "{min_y} + |{in_factor}| * {bound}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolDef {
    Literal,
    Rewrite(Rewrite),
    Header(HeaderSource),
}

/// A named constant: its value in the originating file plus how to
/// recompute it elsewhere.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub value: i64,
    pub def: SymbolDef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrProgram {
    pub stride: usize,
    pub source: String,
    pub shapes: Vec<ShapeDef>,
    pub arrays: Vec<ArrayProgram>,
    pub symbols: BTreeMap<String, Symbol>,
}

/// What a symbol controls, with levels counted from the innermost loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    MinX,
    MinY,
    Bound { level: usize },
    OutFactor { level: usize },
    InFactor { level: usize },
    Addend { level: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolInfo {
    pub name: String,
    pub nest: usize,
    pub role: Role,
}

pub(crate) fn level_letter(level_from_inner: usize) -> char {
    (b'A' + (level_from_inner.min(25)) as u8) as char
}

impl LoopNest {
    /// Levels innermost first, paired with their level number.
    pub fn levels_inner_first(&self) -> impl Iterator<Item = (usize, &Level)> {
        self.levels.iter().rev().enumerate()
    }
}

impl IrProgram {
    pub fn nests(&self) -> impl Iterator<Item = &LoopNest> {
        self.arrays.iter().flat_map(|a| a.nests.iter())
    }

    pub fn nests_mut(&mut self) -> impl Iterator<Item = &mut LoopNest> {
        self.arrays.iter_mut().flat_map(|a| a.nests.iter_mut())
    }

    /// Every symbol with its nest index and role, in declaration order.
    pub fn symbol_infos(&self) -> Vec<SymbolInfo> {
        let mut out = Vec::new();
        for (n, nest) in self.nests().enumerate() {
            let info = |name: &String, role| SymbolInfo {
                name: name.clone(),
                nest: n,
                role,
            };
            out.push(info(&nest.min_y, Role::MinY));
            out.push(info(&nest.min_x, Role::MinX));
            for (level, l) in nest.levels_inner_first() {
                out.push(info(&l.bound, Role::Bound { level }));
            }
            for (level, l) in nest.levels_inner_first() {
                out.push(info(&l.out_factor, Role::OutFactor { level }));
                out.push(info(&l.in_factor, Role::InFactor { level }));
                if let Some(a) = &l.addend {
                    out.push(info(a, Role::Addend { level }));
                }
            }
        }
        out
    }

    pub fn value(&self, name: &str) -> Option<i64> {
        self.symbols.get(name).map(|s| s.value)
    }

    /// Structural identity: two programs with equal keys differ only in
    /// symbol values (other than `MIN_X`) and definitions.
    pub fn skeleton_key(&self) -> String {
        let mut k = format!("stride {}\n", self.stride);
        for s in &self.shapes {
            let _ = writeln!(k, "shape {}", s.key);
        }
        for a in &self.arrays {
            let _ = writeln!(k, "array {}", a.name);
            for n in &a.nests {
                let _ = write!(
                    k,
                    "nest x={} y0={} levels",
                    self.value(&n.min_x).unwrap_or(0),
                    n.y0_delta
                );
                for l in &n.levels {
                    k.push_str(if l.addend.is_some() { " -" } else { " +" });
                }
                for s in &n.body {
                    let _ = write!(k, " [{} {} {:?}]", s.out_delta, s.shape, s.rel);
                }
                k.push('\n');
            }
        }
        k
    }

    /// Canonical text; its length is the parsimony metric.
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        for (i, s) in self.shapes.iter().enumerate() {
            let _ = writeln!(t, "EXPR_{i} := {};", s.key);
        }
        for a in &self.arrays {
            let _ = writeln!(t, "array {} {{", a.name);
            for n in &a.nests {
                self.write_nest(&mut t, &a.name, n);
            }
            t.push_str("}\n");
        }
        t
    }

    fn decl(&self, t: &mut String, indent: usize, name: &str) {
        let pad = "  ".repeat(indent);
        match self.symbols.get(name) {
            Some(sym) => {
                let _ = write!(t, "{pad}{name} := {};", sym.value);
                match &sym.def {
                    SymbolDef::Literal => {}
                    SymbolDef::Rewrite(r) => {
                        let _ = write!(t, " // {r}");
                    }
                    SymbolDef::Header(h) => {
                        let _ = write!(t, " // {h}");
                    }
                }
                t.push('\n');
            }
            None => {
                let _ = writeln!(t, "{pad}{name} := ?;");
            }
        }
    }

    fn write_nest(&self, t: &mut String, array: &str, n: &LoopNest) {
        let prefix = n.min_y.strip_suffix("MIN_Y").unwrap_or("");
        self.decl(t, 1, &n.min_y);
        let _ = writeln!(t, "  {prefix}MIN_Y0_0 := {} + {};", n.min_y, n.y0_delta);
        self.decl(t, 1, &n.min_x);
        for (_, l) in n.levels_inner_first() {
            self.decl(t, 1, &l.bound);
        }
        for (_, l) in n.levels_inner_first() {
            self.decl(t, 1, &l.out_factor);
            self.decl(t, 1, &l.in_factor);
            if let Some(a) = &l.addend {
                self.decl(t, 1, a);
            }
        }
        let depth = n.levels.len();
        let mut indent = 1;
        for (i, l) in n.levels.iter().enumerate() {
            let letter = level_letter(depth - 1 - i);
            let pad = "  ".repeat(indent);
            let _ = writeln!(
                t,
                "{pad}for (idx{letter} := 0; idx{letter} < {}; idx{letter} += {}) {{",
                l.bound, l.step
            );
            indent += 1;
            let pad = "  ".repeat(indent);
            let outer = if i == 0 {
                None
            } else {
                Some(level_letter(depth - i))
            };
            let tail = |slot: usize| {
                outer
                    .map(|o| format!(" + NUM_{o}_{slot}"))
                    .unwrap_or_default()
            };
            let _ = writeln!(
                t,
                "{pad}NUM_{letter}_0 := idx{letter} * {}{};",
                l.out_factor,
                tail(0)
            );
            match &l.addend {
                Some(a) => {
                    let _ = writeln!(
                        t,
                        "{pad}NUM_{letter}_1 := (idx{letter} + {a}) * {}{};",
                        l.in_factor,
                        tail(1)
                    );
                }
                None => {
                    let _ = writeln!(
                        t,
                        "{pad}NUM_{letter}_1 := idx{letter} * {}{};",
                        l.in_factor,
                        tail(1)
                    );
                }
            }
        }
        let pad = "  ".repeat(indent);
        let (x_base, y_base) = if depth == 0 {
            (String::new(), String::new())
        } else {
            let inner = level_letter(0);
            (format!("NUM_{inner}_0 + "), format!("NUM_{inner}_1 + "))
        };
        let _ = writeln!(
            t,
            "{pad}x0 := {x_base}{}; y0_0 := {y_base}{prefix}MIN_Y0_0;",
            n.min_x
        );
        for (j, s) in n.body.iter().enumerate() {
            if j > 0 {
                let _ = write!(t, "{pad}x{j} := x0 + {};", s.out_delta);
                if let Some(r) = s.rel.first() {
                    let _ = write!(t, " y{j}_0 := y0_0 + ({r});");
                }
                t.push('\n');
            }
            for (p, r) in s.rel.iter().enumerate().skip(1) {
                let _ = writeln!(t, "{pad}y{j}_{p} := y0_0 + ({r});");
            }
            let args: Vec<String> = (0..s.rel.len()).map(|p| format!("y{j}_{p}")).collect();
            let _ = writeln!(
                t,
                "{pad}{array}[x{j}] := EXPR_{}({});",
                s.shape,
                args.join(", ")
            );
        }
        for i in (0..depth).rev() {
            let _ = writeln!(t, "{}}}", "  ".repeat(i + 1));
        }
    }
}

impl fmt::Display for IrProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Symbol names for nest `n` of a program with `levels` loop levels.
pub(crate) struct NestNames {
    pub prefix: String,
}

impl NestNames {
    pub fn new(nest_index: usize) -> Self {
        NestNames {
            prefix: if nest_index == 0 {
                String::new()
            } else {
                format!("N{nest_index}_")
            },
        }
    }

    pub fn min_x(&self) -> String {
        format!("{}MIN_X", self.prefix)
    }

    pub fn min_y(&self) -> String {
        format!("{}MIN_Y", self.prefix)
    }

    pub fn bound(&self, level: usize) -> String {
        format!("{}LOOP_BOUND_{}", self.prefix, level_letter(level))
    }

    pub fn out_factor(&self, level: usize) -> String {
        format!("{}FACTOR_{}_0", self.prefix, level_letter(level + 1))
    }

    pub fn in_factor(&self, level: usize) -> String {
        format!("{}FACTOR_{}_1", self.prefix, level_letter(level + 1))
    }

    pub fn addend(&self, level: usize) -> String {
        format!("{}ADDEND_{}_1", self.prefix, level_letter(level + 1))
    }
}

pub(crate) fn literal(value: i64) -> Symbol {
    Symbol {
        value,
        def: SymbolDef::Literal,
    }
}
