//! Width-tagged bit-vector expressions over input-file bytes.
//!
//! Every node evaluates to an unsigned value of exactly 8, 16, 32, 64 or 128
//! bits. Signedness is a property of operators (`sext`, `ashr`), never of
//! values.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
    W128,
}

impl Width {
    pub const ALL: [Width; 5] = [Width::W8, Width::W16, Width::W32, Width::W64, Width::W128];

    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
            Width::W64 => 64,
            Width::W128 => 128,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Width> {
        Width::ALL.into_iter().find(|w| w.bits() == bits)
    }

    /// Smallest width that can hold `bits` bits.
    pub fn covering(bits: u32) -> Option<Width> {
        Width::ALL.into_iter().find(|w| w.bits() >= bits)
    }

    pub fn mask(self) -> u128 {
        match self {
            Width::W128 => u128::MAX,
            w => (1u128 << w.bits()) - 1,
        }
    }

    fn sign_bit(self) -> u128 {
        1u128 << (self.bits() - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Shl,
    LShr,
    AShr,
    And,
    Or,
    Xor,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub const ALL: [BinOp; 9] = [
        BinOp::Shl,
        BinOp::LShr,
        BinOp::AShr,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Shl => "shl",
            BinOp::LShr => "lshr",
            BinOp::AShr => "ashr",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    pub fn is_shift(self) -> bool {
        matches!(self, BinOp::Shl | BinOp::LShr | BinOp::AShr)
    }
}

/// Expression tree. `Read` offsets index the input file; inside an
/// [`ExprShape`] template they index the placeholder list instead.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ByteExpr {
    Read(u64),
    Const {
        value: u128,
        width: Width,
    },
    ZeroExt(Width, Box<ByteExpr>),
    SignExt(Width, Box<ByteExpr>),
    Extract {
        hi: u32,
        lo: u32,
        arg: Box<ByteExpr>,
    },
    Bin(BinOp, Box<ByteExpr>, Box<ByteExpr>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprError {
    /// Input read at an offset that is not inside the file.
    OutOfRange {
        offset: u64,
    },
    BinaryWidthMismatch {
        op: BinOp,
        lhs: Width,
        rhs: Width,
    },
    BadExtract {
        hi: u32,
        lo: u32,
        width: Width,
    },
    NarrowingExtension {
        to: Width,
        from: Width,
    },
    ConstTooWide {
        value: u128,
        width: Width,
    },
    NonConstantShift,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprError::OutOfRange { offset } => {
                write!(f, "read of input offset {offset} is out of range")
            }
            ExprError::BinaryWidthMismatch { op, lhs, rhs } => {
                write!(
                    f,
                    "{} operands have widths {} and {}",
                    op.mnemonic(),
                    lhs.bits(),
                    rhs.bits()
                )
            }
            ExprError::BadExtract { hi, lo, width } => {
                write!(
                    f,
                    "extract {hi} {lo} is invalid on a {}-bit value",
                    width.bits()
                )
            }
            ExprError::NarrowingExtension { to, from } => {
                write!(
                    f,
                    "extension to {} bits from {} bits",
                    to.bits(),
                    from.bits()
                )
            }
            ExprError::ConstTooWide { value, width } => {
                write!(f, "constant {value} does not fit {} bits", width.bits())
            }
            ExprError::NonConstantShift => f.write_str("shift amount depends on input bytes"),
        }
    }
}

impl core::error::Error for ExprError {}

impl ByteExpr {
    pub fn read(offset: u64) -> ByteExpr {
        ByteExpr::Read(offset)
    }

    pub fn constant(value: u128, width: Width) -> ByteExpr {
        ByteExpr::Const {
            value: value & width.mask(),
            width,
        }
    }

    pub fn zext(width: Width, arg: ByteExpr) -> ByteExpr {
        ByteExpr::ZeroExt(width, Box::new(arg))
    }

    pub fn sext(width: Width, arg: ByteExpr) -> ByteExpr {
        ByteExpr::SignExt(width, Box::new(arg))
    }

    pub fn extract(hi: u32, lo: u32, arg: ByteExpr) -> ByteExpr {
        ByteExpr::Extract {
            hi,
            lo,
            arg: Box::new(arg),
        }
    }

    pub fn bin(op: BinOp, lhs: ByteExpr, rhs: ByteExpr) -> ByteExpr {
        ByteExpr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// Declared result width. Assumes the tree passed [`ByteExpr::check`].
    pub fn width(&self) -> Width {
        match self {
            ByteExpr::Read(_) => Width::W8,
            ByteExpr::Const { width, .. } => *width,
            ByteExpr::ZeroExt(w, _) | ByteExpr::SignExt(w, _) => *w,
            ByteExpr::Extract { hi, lo, .. } => Width::covering(hi - lo + 1).unwrap_or(Width::W128),
            ByteExpr::Bin(_, lhs, _) => lhs.width(),
        }
    }

    /// Validates the width algebra and returns the result width.
    pub fn check(&self) -> Result<Width, ExprError> {
        match self {
            ByteExpr::Read(_) => Ok(Width::W8),
            ByteExpr::Const { value, width } => {
                if *value & !width.mask() != 0 {
                    return Err(ExprError::ConstTooWide {
                        value: *value,
                        width: *width,
                    });
                }
                Ok(*width)
            }
            ByteExpr::ZeroExt(to, arg) | ByteExpr::SignExt(to, arg) => {
                let from = arg.check()?;
                if *to < from {
                    return Err(ExprError::NarrowingExtension { to: *to, from });
                }
                Ok(*to)
            }
            ByteExpr::Extract { hi, lo, arg } => {
                let w = arg.check()?;
                if hi < lo || *hi >= w.bits() {
                    return Err(ExprError::BadExtract {
                        hi: *hi,
                        lo: *lo,
                        width: w,
                    });
                }
                Ok(self.width())
            }
            ByteExpr::Bin(op, lhs, rhs) => {
                let l = lhs.check()?;
                let r = rhs.check()?;
                if l != r {
                    return Err(ExprError::BinaryWidthMismatch {
                        op: *op,
                        lhs: l,
                        rhs: r,
                    });
                }
                if op.is_shift() && rhs.reads_input() {
                    return Err(ExprError::NonConstantShift);
                }
                Ok(l)
            }
        }
    }

    pub fn reads_input(&self) -> bool {
        let mut any = false;
        self.visit_reads(&mut |_| any = true);
        any
    }

    /// Calls `f` on every `Read` offset in left-to-right order.
    pub fn visit_reads(&self, f: &mut impl FnMut(u64)) {
        match self {
            ByteExpr::Read(o) => f(*o),
            ByteExpr::Const { .. } => {}
            ByteExpr::ZeroExt(_, a)
            | ByteExpr::SignExt(_, a)
            | ByteExpr::Extract { arg: a, .. } => a.visit_reads(f),
            ByteExpr::Bin(_, l, r) => {
                l.visit_reads(f);
                r.visit_reads(f);
            }
        }
    }

    pub fn reads(&self) -> Vec<u64> {
        let mut out = Vec::new();
        self.visit_reads(&mut |o| out.push(o));
        out
    }

    fn min_read(&self) -> Option<u64> {
        let mut min = None;
        self.visit_reads(&mut |o| {
            min = Some(min.map_or(o, |m: u64| m.min(o)));
        });
        min
    }

    /// Evaluates with `fetch` resolving each `Read` operand.
    pub fn eval_with<E>(&self, fetch: &mut impl FnMut(u64) -> Result<u8, E>) -> Result<u128, E> {
        Ok(match self {
            ByteExpr::Read(o) => fetch(*o)? as u128,
            ByteExpr::Const { value, width } => value & width.mask(),
            ByteExpr::ZeroExt(_, a) => a.eval_with(fetch)?,
            ByteExpr::SignExt(to, a) => {
                let from = a.width();
                let v = a.eval_with(fetch)?;
                if v & from.sign_bit() != 0 {
                    (v | !from.mask()) & to.mask()
                } else {
                    v
                }
            }
            ByteExpr::Extract { hi, lo, arg } => {
                let v = arg.eval_with(fetch)?;
                let bits = hi - lo + 1;
                let field_mask = if bits >= 128 {
                    u128::MAX
                } else {
                    (1u128 << bits) - 1
                };
                (v >> lo) & field_mask
            }
            ByteExpr::Bin(op, l, r) => {
                let w = l.width();
                let a = l.eval_with(fetch)?;
                let b = r.eval_with(fetch)?;
                apply_bin(*op, w, a, b)
            }
        })
    }

    /// Evaluates against concrete file bytes.
    pub fn eval(&self, input: &[u8]) -> Result<u128, ExprError> {
        self.eval_with(&mut |o| {
            usize::try_from(o)
                .ok()
                .and_then(|i| input.get(i).copied())
                .ok_or(ExprError::OutOfRange { offset: o })
        })
    }

    /// Rebuilds every same-width `or` chain with operands ordered by their
    /// lowest input offset. Evaluation is unchanged.
    pub fn canonicalize(&self) -> ByteExpr {
        match self {
            ByteExpr::Read(_) | ByteExpr::Const { .. } => self.clone(),
            ByteExpr::ZeroExt(w, a) => ByteExpr::zext(*w, a.canonicalize()),
            ByteExpr::SignExt(w, a) => ByteExpr::sext(*w, a.canonicalize()),
            ByteExpr::Extract { hi, lo, arg } => ByteExpr::extract(*hi, *lo, arg.canonicalize()),
            ByteExpr::Bin(BinOp::Or, _, _) => {
                let mut operands = Vec::new();
                self.flatten_or(self.width(), &mut operands);
                let mut keyed: Vec<(Option<u64>, String, ByteExpr)> = operands
                    .into_iter()
                    .map(|e| {
                        let c = e.canonicalize();
                        (c.min_read(), shape_text(&c), c)
                    })
                    .collect();
                // Constant operands (no reads) sort after reads.
                keyed.sort_by(|a, b| {
                    let ka = (a.0.is_none(), a.0, &a.1);
                    let kb = (b.0.is_none(), b.0, &b.1);
                    ka.cmp(&kb)
                });
                let mut iter = keyed.into_iter().map(|(_, _, e)| e);
                let first = iter.next().expect("or has operands");
                iter.fold(first, |acc, e| ByteExpr::bin(BinOp::Or, acc, e))
            }
            ByteExpr::Bin(op, l, r) => ByteExpr::bin(*op, l.canonicalize(), r.canonicalize()),
        }
    }

    fn flatten_or(&self, width: Width, out: &mut Vec<ByteExpr>) {
        match self {
            ByteExpr::Bin(BinOp::Or, l, r) if l.width() == width => {
                l.flatten_or(width, out);
                r.flatten_or(width, out);
            }
            other => out.push(other.clone()),
        }
    }

    /// Replaces `Read(i)` placeholders with `offsets[i]`.
    pub fn substitute(&self, offsets: &[u64]) -> ByteExpr {
        match self {
            ByteExpr::Read(i) => ByteExpr::Read(offsets[*i as usize]),
            ByteExpr::Const { .. } => self.clone(),
            ByteExpr::ZeroExt(w, a) => ByteExpr::zext(*w, a.substitute(offsets)),
            ByteExpr::SignExt(w, a) => ByteExpr::sext(*w, a.substitute(offsets)),
            ByteExpr::Extract { hi, lo, arg } => {
                ByteExpr::extract(*hi, *lo, arg.substitute(offsets))
            }
            ByteExpr::Bin(op, l, r) => {
                ByteExpr::bin(*op, l.substitute(offsets), r.substitute(offsets))
            }
        }
    }

    fn write_sexpr(&self, out: &mut String, placeholders: bool) {
        match self {
            ByteExpr::Read(o) if placeholders => {
                let _ = o;
                out.push_str("(read _)");
            }
            ByteExpr::Read(o) => {
                let _ = write!(out, "(read {o})");
            }
            ByteExpr::Const { value, width } => {
                let _ = write!(out, "(const {value} {})", width.bits());
            }
            ByteExpr::ZeroExt(w, a) => {
                let _ = write!(out, "(zext {} ", w.bits());
                a.write_sexpr(out, placeholders);
                out.push(')');
            }
            ByteExpr::SignExt(w, a) => {
                let _ = write!(out, "(sext {} ", w.bits());
                a.write_sexpr(out, placeholders);
                out.push(')');
            }
            ByteExpr::Extract { hi, lo, arg } => {
                let _ = write!(out, "(extract {hi} {lo} ");
                arg.write_sexpr(out, placeholders);
                out.push(')');
            }
            ByteExpr::Bin(op, l, r) => {
                out.push('(');
                out.push_str(op.mnemonic());
                out.push(' ');
                l.write_sexpr(out, placeholders);
                out.push(' ');
                r.write_sexpr(out, placeholders);
                out.push(')');
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            ByteExpr::Read(_) | ByteExpr::Const { .. } => 1,
            ByteExpr::ZeroExt(_, a)
            | ByteExpr::SignExt(_, a)
            | ByteExpr::Extract { arg: a, .. } => 1 + a.node_count(),
            ByteExpr::Bin(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }
}

pub(crate) fn apply_bin(op: BinOp, w: Width, a: u128, b: u128) -> u128 {
    let mask = w.mask();
    let bits = w.bits() as u128;
    let r = match op {
        BinOp::Shl => {
            if b >= bits {
                0
            } else {
                a << b
            }
        }
        BinOp::LShr => {
            if b >= bits {
                0
            } else {
                a >> b
            }
        }
        BinOp::AShr => {
            let negative = a & w.sign_bit() != 0;
            if b >= bits {
                if negative {
                    mask
                } else {
                    0
                }
            } else if negative {
                let shifted = (a | !mask) as i128 >> b;
                shifted as u128
            } else {
                a >> b
            }
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
    };
    r & mask
}

impl fmt::Display for ByteExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_sexpr(&mut s, false);
        f.write_str(&s)
    }
}

fn shape_text(e: &ByteExpr) -> String {
    let mut s = String::new();
    e.write_sexpr(&mut s, true);
    s
}

/// An expression with its input offsets abstracted into placeholders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExprShape {
    /// Canonical text with every read printed as `(read _)`.
    pub key: String,
    /// Template whose `Read(i)` nodes refer to placeholder `i`.
    pub template: ByteExpr,
    /// Concrete offsets, in left-to-right placeholder order.
    pub offsets: Vec<u64>,
}

impl ExprShape {
    pub fn arity(&self) -> usize {
        self.offsets.len()
    }

    /// Re-inserts the concrete offsets.
    pub fn concretize(&self) -> ByteExpr {
        self.template.substitute(&self.offsets)
    }
}

pub fn abstract_expr(expr: &ByteExpr) -> ExprShape {
    let canonical = expr.canonicalize();
    let mut offsets = Vec::new();
    let template = number_reads(&canonical, &mut offsets);
    ExprShape {
        key: shape_text(&canonical),
        template,
        offsets,
    }
}

fn number_reads(e: &ByteExpr, offsets: &mut Vec<u64>) -> ByteExpr {
    match e {
        ByteExpr::Read(o) => {
            offsets.push(*o);
            ByteExpr::Read(offsets.len() as u64 - 1)
        }
        ByteExpr::Const { .. } => e.clone(),
        ByteExpr::ZeroExt(w, a) => ByteExpr::zext(*w, number_reads(a, offsets)),
        ByteExpr::SignExt(w, a) => ByteExpr::sext(*w, number_reads(a, offsets)),
        ByteExpr::Extract { hi, lo, arg } => {
            ByteExpr::extract(*hi, *lo, number_reads(arg, offsets))
        }
        ByteExpr::Bin(op, l, r) => {
            let l = number_reads(l, offsets);
            let r = number_reads(r, offsets);
            ByteExpr::bin(*op, l, r)
        }
    }
}

/// Error from [`parse_sexpr`], with a byte column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SexprError {
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SexprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

struct SexprParser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> SexprParser<'a> {
    fn err(&self, message: impl Into<String>) -> SexprError {
        SexprError {
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, c: char) -> Result<(), SexprError> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(alloc::format!("expected '{c}'")))
        }
    }

    fn atom(&mut self) -> Result<&'a str, SexprError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += c.len_utf8();
        }
        if start == self.pos {
            return Err(self.err("expected an atom"));
        }
        Ok(&self.src[start..self.pos])
    }

    fn number<T: core::str::FromStr>(&mut self) -> Result<T, SexprError> {
        let a = self.atom()?;
        a.parse()
            .map_err(|_| self.err(alloc::format!("invalid number '{a}'")))
    }

    fn width(&mut self) -> Result<Width, SexprError> {
        let bits: u32 = self.number()?;
        Width::from_bits(bits).ok_or_else(|| self.err(alloc::format!("unsupported width {bits}")))
    }

    fn expr(&mut self) -> Result<ByteExpr, SexprError> {
        self.expect('(')?;
        let head = self.atom()?;
        let e = match head {
            "read" => ByteExpr::Read(self.number()?),
            "const" => {
                let value: u128 = self.number()?;
                let width = self.width()?;
                ByteExpr::Const { value, width }
            }
            "zext" => {
                let w = self.width()?;
                ByteExpr::zext(w, self.expr()?)
            }
            "sext" => {
                let w = self.width()?;
                ByteExpr::sext(w, self.expr()?)
            }
            "extract" => {
                let hi = self.number()?;
                let lo = self.number()?;
                ByteExpr::extract(hi, lo, self.expr()?)
            }
            other => match BinOp::from_mnemonic(other) {
                Some(op) => {
                    let l = self.expr()?;
                    let r = self.expr()?;
                    ByteExpr::bin(op, l, r)
                }
                None => return Err(self.err(alloc::format!("unknown operator '{other}'"))),
            },
        };
        self.expect(')')?;
        Ok(e)
    }
}

/// Parses the s-expression grammar used by trace files. Width rules are
/// not checked here; see [`ByteExpr::check`].
pub fn parse_sexpr(src: &str) -> Result<ByteExpr, SexprError> {
    let mut p = SexprParser { src, pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != src.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn c32(v: u128) -> ByteExpr {
        ByteExpr::constant(v, Width::W32)
    }

    #[test]
    fn multiply_shift_identity() {
        let e = ByteExpr::bin(
            BinOp::LShr,
            ByteExpr::bin(BinOp::Mul, c32(31), c32(33)),
            c32(2),
        );
        assert_eq!(e.eval(&[]).unwrap(), 255);
    }

    #[test]
    fn identity_read() {
        let mut input = vec![0u8; 8];
        input[5] = 0x7F;
        assert_eq!(ByteExpr::read(5).eval(&input).unwrap(), 0x7F);
    }

    #[test]
    fn little_endian_pair() {
        let e = ByteExpr::bin(
            BinOp::Or,
            ByteExpr::bin(
                BinOp::Shl,
                ByteExpr::zext(Width::W32, ByteExpr::read(1)),
                c32(8),
            ),
            ByteExpr::zext(Width::W32, ByteExpr::read(0)),
        );
        assert_eq!(e.eval(&[0xAD, 0xDE]).unwrap(), 0xDEAD);
    }

    #[test]
    fn out_of_range_names_offset() {
        assert_eq!(
            ByteExpr::read(9).eval(&[1, 2]),
            Err(ExprError::OutOfRange { offset: 9 })
        );
    }

    #[test]
    fn signed_ops() {
        let minus_two = ByteExpr::constant(0xFE, Width::W8);
        let e = ByteExpr::bin(
            BinOp::AShr,
            minus_two.clone(),
            ByteExpr::constant(1, Width::W8),
        );
        assert_eq!(e.eval(&[]).unwrap(), 0xFF);
        let e = ByteExpr::bin(
            BinOp::LShr,
            minus_two.clone(),
            ByteExpr::constant(1, Width::W8),
        );
        assert_eq!(e.eval(&[]).unwrap(), 0x7F);
        let e = ByteExpr::sext(Width::W64, minus_two.clone());
        assert_eq!(e.eval(&[]).unwrap(), u64::MAX as u128 - 1);
        let e = ByteExpr::zext(Width::W64, minus_two);
        assert_eq!(e.eval(&[]).unwrap(), 0xFE);
        let e = ByteExpr::bin(
            BinOp::Shl,
            ByteExpr::constant(0x81, Width::W8),
            ByteExpr::constant(1, Width::W8),
        );
        assert_eq!(e.eval(&[]).unwrap(), 0x02);
    }

    #[test]
    fn oversized_shifts() {
        let x = ByteExpr::constant(0x80, Width::W8);
        let big = ByteExpr::constant(9, Width::W8);
        assert_eq!(
            ByteExpr::bin(BinOp::Shl, x.clone(), big.clone())
                .eval(&[])
                .unwrap(),
            0
        );
        assert_eq!(
            ByteExpr::bin(BinOp::LShr, x.clone(), big.clone())
                .eval(&[])
                .unwrap(),
            0
        );
        assert_eq!(ByteExpr::bin(BinOp::AShr, x, big).eval(&[]).unwrap(), 0xFF);
    }

    #[test]
    fn wide_arithmetic_wraps() {
        let max = ByteExpr::constant(u128::MAX, Width::W128);
        let one = ByteExpr::constant(1, Width::W128);
        assert_eq!(ByteExpr::bin(BinOp::Add, max, one).eval(&[]).unwrap(), 0);
    }

    #[test]
    fn width_checks() {
        let bad = ByteExpr::bin(BinOp::Add, ByteExpr::read(0), c32(1));
        assert!(matches!(
            bad.check(),
            Err(ExprError::BinaryWidthMismatch { .. })
        ));
        let bad = ByteExpr::extract(8, 0, ByteExpr::read(0));
        assert!(matches!(bad.check(), Err(ExprError::BadExtract { .. })));
        let bad = ByteExpr::zext(Width::W8, c32(1));
        assert!(matches!(
            bad.check(),
            Err(ExprError::NarrowingExtension { .. })
        ));
        let bad = ByteExpr::bin(BinOp::Shl, ByteExpr::read(0), ByteExpr::read(1));
        assert_eq!(bad.check(), Err(ExprError::NonConstantShift));
        let ok = ByteExpr::extract(15, 4, c32(0));
        assert_eq!(ok.check().unwrap(), Width::W16);
    }

    #[test]
    fn shapes_ignore_offsets_only() {
        let a = abstract_expr(&ByteExpr::read(44));
        let b = abstract_expr(&ByteExpr::read(46));
        assert_eq!(a.key, b.key);
        assert_eq!(a.offsets, vec![44]);
        assert_eq!(b.offsets, vec![46]);

        let plus = |k| {
            ByteExpr::bin(
                BinOp::Add,
                ByteExpr::read(3),
                ByteExpr::constant(k, Width::W8),
            )
        };
        assert_ne!(abstract_expr(&plus(1)).key, abstract_expr(&plus(2)).key);
    }

    #[test]
    fn canonical_or_orders_by_offset() {
        let hi = ByteExpr::bin(
            BinOp::Shl,
            ByteExpr::zext(Width::W32, ByteExpr::read(0x189)),
            c32(8),
        );
        let lo = ByteExpr::zext(Width::W32, ByteExpr::read(0x188));
        let swapped = ByteExpr::bin(BinOp::Or, hi.clone(), lo.clone());
        let ordered = ByteExpr::bin(BinOp::Or, lo, hi);
        let s1 = abstract_expr(&swapped);
        let s2 = abstract_expr(&ordered);
        assert_eq!(s1.key, s2.key);
        assert_eq!(s1.offsets, vec![0x188, 0x189]);
        assert_eq!(s1.concretize(), ordered);
    }

    #[test]
    fn sexpr_round_trip() {
        let text = "(extract 7 0 (ashr (mul (const 33 32) (ashr (ashr (and (or (zext 32 (read 392)) (shl (zext 32 (read 393)) (const 8 32))) (const 992 32)) (const 2 32)) (const 3 32))) (const 2 32)))";
        let e = parse_sexpr(text).unwrap();
        assert_eq!(alloc::format!("{e}"), text);
        assert!(parse_sexpr("(read 1").is_err());
        assert!(parse_sexpr("(frob 1 2)").is_err());
        assert!(parse_sexpr("(const 1 12)").is_err());
    }
}
