//! C source generation for parser trees.
//!
//! The emitted translation unit reaches input bytes only through
//! `readBytesFromFP` and output bytes only through `writeArray`.
//! [`scan_raw_subscripts`] checks that property on any source text.
//!
//! Arithmetic on indices mirrors the interpreter: every step is checked,
//! and any failure ends the process with a nonzero status before output is
//! written. 128-bit values use a two-limb struct.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::expr::{BinOp, ByteExpr, ExprError, Width};
use crate::ir::{Field, HeaderSource, IrProgram, LoopNest, Rewrite, SymbolDef};
use crate::tree::ParserTree;

/// Exit status of an emitted parser that reached a reject branch.
pub const REJECT_STATUS: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Read,
    Const,
    ZeroExt,
    SignExt,
    Extract,
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

impl NodeKind {
    pub const ALL: [NodeKind; 14] = [
        NodeKind::Read,
        NodeKind::Const,
        NodeKind::ZeroExt,
        NodeKind::SignExt,
        NodeKind::Extract,
        NodeKind::Shl,
        NodeKind::LShr,
        NodeKind::AShr,
        NodeKind::And,
        NodeKind::Or,
        NodeKind::Xor,
        NodeKind::Add,
        NodeKind::Sub,
        NodeKind::Mul,
    ];

    pub fn of(expr: &ByteExpr) -> NodeKind {
        match expr {
            ByteExpr::Read(_) => NodeKind::Read,
            ByteExpr::Const { .. } => NodeKind::Const,
            ByteExpr::ZeroExt(..) => NodeKind::ZeroExt,
            ByteExpr::SignExt(..) => NodeKind::SignExt,
            ByteExpr::Extract { .. } => NodeKind::Extract,
            ByteExpr::Bin(op, ..) => match op {
                BinOp::Shl => NodeKind::Shl,
                BinOp::LShr => NodeKind::LShr,
                BinOp::AShr => NodeKind::AShr,
                BinOp::And => NodeKind::And,
                BinOp::Or => NodeKind::Or,
                BinOp::Xor => NodeKind::Xor,
                BinOp::Add => NodeKind::Add,
                BinOp::Sub => NodeKind::Sub,
                BinOp::Mul => NodeKind::Mul,
            },
        }
    }
}

/// C production for one expression kind.
///
/// Placeholders: `{W}` result bits, `{A}` operand bits, `{C}` arithmetic
/// bits (at least 32, so small operands never promote to signed `int`),
/// `{a}`/`{b}` operands, `{lo}`/`{bits}`/`{mask}` extract parameters and
/// `{v}`/`{hi}` constant limbs. `wide` is used for 128-bit nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoweringRule {
    pub kind: NodeKind,
    pub narrow: &'static str,
    pub wide: Option<&'static str>,
}

pub const LOWERING_RULES: [LoweringRule; 14] = [
    LoweringRule {
        kind: NodeKind::Read,
        narrow: "in_at(fp, y, {a})",
        wide: None,
    },
    LoweringRule {
        kind: NodeKind::Const,
        narrow: "((uint{W}_t)UINT64_C({v}))",
        wide: Some("u128_make(UINT64_C({hi}), UINT64_C({v}))"),
    },
    LoweringRule {
        kind: NodeKind::ZeroExt,
        narrow: "((uint{W}_t)(uint{A}_t)({a}))",
        wide: Some("u128_from_u64((uint64_t)(uint{A}_t)({a}))"),
    },
    LoweringRule {
        kind: NodeKind::SignExt,
        narrow: "((uint{W}_t)(int{W}_t)(int{A}_t)({a}))",
        wide: Some("u128_from_i64((int64_t)(int{A}_t)({a}))"),
    },
    LoweringRule {
        kind: NodeKind::Extract,
        narrow: "((uint{W}_t)(((uint{A}_t)({a}) >> {lo}) & UINT64_C({mask})))",
        wide: Some("u128_extract({a}, {lo}, {bits})"),
    },
    LoweringRule {
        kind: NodeKind::Shl,
        narrow: "shl_{W}({a}, (uint64_t)({b}))",
        wide: Some("u128_shl({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::LShr,
        narrow: "lshr_{W}({a}, (uint64_t)({b}))",
        wide: Some("u128_lshr({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::AShr,
        narrow: "ashr_{W}({a}, (uint64_t)({b}))",
        wide: Some("u128_ashr({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::And,
        narrow: "((uint{W}_t)(({a}) & ({b})))",
        wide: Some("u128_and({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::Or,
        narrow: "((uint{W}_t)(({a}) | ({b})))",
        wide: Some("u128_or({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::Xor,
        narrow: "((uint{W}_t)(({a}) ^ ({b})))",
        wide: Some("u128_xor({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::Add,
        narrow: "((uint{W}_t)((uint{C}_t)({a}) + (uint{C}_t)({b})))",
        wide: Some("u128_add({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::Sub,
        narrow: "((uint{W}_t)((uint{C}_t)({a}) - (uint{C}_t)({b})))",
        wide: Some("u128_sub({a}, {b})"),
    },
    LoweringRule {
        kind: NodeKind::Mul,
        narrow: "((uint{W}_t)((uint{C}_t)({a}) * (uint{C}_t)({b})))",
        wide: Some("u128_mul({a}, {b})"),
    },
];

pub fn rule_for(kind: NodeKind) -> &'static LoweringRule {
    LOWERING_RULES
        .iter()
        .find(|r| r.kind == kind)
        .expect("every node kind has a lowering rule")
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').expect("placeholder is closed");
        let key = &after[..close];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("no value for placeholder {key}"));
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    out
}

/// Lowers `expr` to a C expression of type `uintN_t` (or `u128`). `read`
/// renders the operand of each `Read` node.
pub fn lower_expr(expr: &ByteExpr, read: &impl Fn(u64) -> String) -> Result<String, ExprError> {
    expr.check()?;
    Ok(lower(expr, read))
}

fn lower(e: &ByteExpr, read: &impl Fn(u64) -> String) -> String {
    let rule = rule_for(NodeKind::of(e));
    let w = e.width();
    let wb = format!("{}", w.bits());
    let wide = || rule.wide.expect("kind has a wide form");
    match e {
        ByteExpr::Read(p) => fill(rule.narrow, &[("a", &read(*p))]),
        ByteExpr::Const { value, width } => {
            let v = format!("{:#x}", *value as u64);
            if *width == Width::W128 {
                let hi = format!("{:#x}", (*value >> 64) as u64);
                fill(wide(), &[("hi", &hi), ("v", &v)])
            } else {
                fill(rule.narrow, &[("W", &wb), ("v", &v)])
            }
        }
        ByteExpr::ZeroExt(to, a) | ByteExpr::SignExt(to, a) => {
            let aw = a.width();
            let at = lower(a, read);
            let ab = format!("{}", aw.bits());
            match (*to == Width::W128, aw == Width::W128) {
                (true, true) => at,
                (true, false) => fill(wide(), &[("A", &ab), ("a", &at)]),
                _ => fill(rule.narrow, &[("W", &wb), ("A", &ab), ("a", &at)]),
            }
        }
        ByteExpr::Extract { hi, lo, arg } => {
            let aw = arg.width();
            let at = lower(arg, read);
            let bits = hi - lo + 1;
            let lo = format!("{lo}");
            if aw == Width::W128 {
                let x = fill(
                    wide(),
                    &[("a", &at), ("lo", &lo), ("bits", &format!("{bits}"))],
                );
                if w == Width::W128 {
                    x
                } else {
                    format!("((uint{wb}_t)({x}).lo)")
                }
            } else {
                let mask = if bits >= 64 {
                    u64::MAX
                } else {
                    (1u64 << bits) - 1
                };
                fill(
                    rule.narrow,
                    &[
                        ("W", &wb),
                        ("A", &format!("{}", aw.bits())),
                        ("a", &at),
                        ("lo", &lo),
                        ("mask", &format!("{mask:#x}")),
                    ],
                )
            }
        }
        ByteExpr::Bin(_, l, r) => {
            let (a, b) = (lower(l, read), lower(r, read));
            if w == Width::W128 {
                fill(wide(), &[("a", &a), ("b", &b)])
            } else {
                let c = format!("{}", w.bits().max(32));
                fill(rule.narrow, &[("W", &wb), ("C", &c), ("a", &a), ("b", &b)])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmitOptions {
    /// Turn leaves without a parser into reject branches instead of failing.
    pub partial: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EmitError {
    NullLeaf {
        leaf: usize,
    },
    UnboundSymbol {
        leaf: usize,
        name: String,
    },
    CyclicSymbol {
        leaf: usize,
        name: String,
    },
    InvalidExpr {
        leaf: usize,
        shape: usize,
        error: ExprError,
    },
    MissingShape {
        leaf: usize,
        shape: usize,
    },
    ArityMismatch {
        leaf: usize,
        shape: usize,
    },
    UnsupportedField {
        leaf: usize,
        field: Field,
    },
}

impl fmt::Display for EmitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmitError::NullLeaf { leaf } => {
                write!(
                    f,
                    "leaf {leaf} has no parser (emit a partial parser to reject it instead)"
                )
            }
            EmitError::UnboundSymbol { leaf, name } => {
                write!(f, "leaf {leaf}: symbol {name} is not defined")
            }
            EmitError::CyclicSymbol { leaf, name } => {
                write!(
                    f,
                    "leaf {leaf}: symbol {name} is defined in terms of itself"
                )
            }
            EmitError::InvalidExpr { leaf, shape, error } => {
                write!(f, "leaf {leaf}: expression {shape} is malformed: {error}")
            }
            EmitError::MissingShape { leaf, shape } => {
                write!(f, "leaf {leaf}: no expression {shape}")
            }
            EmitError::ArityMismatch { leaf, shape } => {
                write!(f, "leaf {leaf}: a statement passes the wrong number of operands to expression {shape}")
            }
            EmitError::UnsupportedField { leaf, field } => {
                write!(f, "leaf {leaf}: cannot read header field {field}")
            }
        }
    }
}

impl core::error::Error for EmitError {}

const RUNTIME: &str = r#"#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

typedef struct {
    uint64_t lo;
    uint64_t hi;
} u128;

typedef struct {
    uint8_t *data;
    uint64_t size;
    uint64_t used;
} Array;

/* Sign and magnitude of a header value, with an overflow mark. */
typedef struct {
    int neg;
    int big;
    uint64_t mag;
} HeaderValue;

static int64_t input_len;
static int64_t input_pos = -1;
static int64_t output_limit;
static uint64_t budget;

static void fail(const char *what) {
    fprintf(stderr, "%s\n", what);
    exit(1);
}

/* Reads exactly count bytes at offset, seeking only when the previous read
   did not end there. Anything short of a full read aborts. */
static void readBytesFromFP(FILE *fp, int64_t offset, size_t count, uint8_t *buf) {
    if (offset < 0 || offset > input_len || (int64_t)count > input_len - offset) {
        fprintf(stderr, "Unable to read %lu bytes at offset %lld\n", (unsigned long)count, (long long)offset);
        exit(1);
    }
    if (offset != input_pos && fseek(fp, (long)offset, SEEK_SET) != 0) {
        fprintf(stderr, "Unable to fseek to offset %lld\n", (long long)offset);
        exit(1);
    }
    if (fread(buf, 1, count, fp) != count) {
        fprintf(stderr, "Unable to read %lu bytes at offset %lld\n", (unsigned long)count, (long long)offset);
        exit(1);
    }
    input_pos = offset + (int64_t)count;
}

/* Stores value at index, growing the zero-filled array as needed. */
static void writeArray(Array *arr, int64_t index, uint8_t value) {
    if (index < 0) {
        fprintf(stderr, "Invalid index %lld\n", (long long)index);
        exit(1);
    }
    if ((uint64_t)index >= arr->size) {
        uint64_t newSize = arr->size;
        uint8_t *grown;
        while ((uint64_t)index >= newSize) {
            newSize = (newSize + 1) * 2;
        }
        grown = (uint8_t *)realloc(arr->data, (size_t)newSize);
        if (grown == NULL) {
            fail("Unable to grow output array");
        }
        memset(grown + arr->size, 0, (size_t)(newSize - arr->size));
        arr->data = grown;
        arr->size = newSize;
    }
    arr->data[index] = value;
    if ((uint64_t)index >= arr->used) {
        arr->used = (uint64_t)index + 1;
    }
}

static inline int64_t ck_add(int64_t a, int64_t b) {
    if ((b > 0 && a > INT64_MAX - b) || (b < 0 && a < INT64_MIN - b)) {
        fail("arithmetic overflow");
    }
    return a + b;
}

static inline int64_t ck_sub(int64_t a, int64_t b) {
    if ((b < 0 && a > INT64_MAX + b) || (b > 0 && a < INT64_MIN + b)) {
        fail("arithmetic overflow");
    }
    return a - b;
}

static inline int64_t ck_mul(int64_t a, int64_t b) {
    int bad;
    if (a > 0) {
        bad = b > 0 ? a > INT64_MAX / b : b < INT64_MIN / a;
    } else {
        bad = b > 0 ? a < INT64_MIN / b : (a != 0 && b < INT64_MAX / a);
    }
    if (bad) {
        fail("arithmetic overflow");
    }
    return a * b;
}

static inline int64_t ck_neg(int64_t a) {
    if (a == INT64_MIN) {
        fail("arithmetic overflow");
    }
    return -a;
}

static inline int64_t ck_abs(int64_t a) {
    return a < 0 ? ck_neg(a) : a;
}

/* Magnitude rounded up to a multiple of four, sign kept. */
static inline int64_t pad4(int64_t x) {
    uint64_t mag = x < 0 ? (uint64_t)0 - (uint64_t)x : (uint64_t)x;
    if (mag > UINT64_MAX - 3) {
        fail("arithmetic overflow");
    }
    mag = (mag + 3) / 4 * 4;
    if (mag > (uint64_t)INT64_MAX) {
        fail("arithmetic overflow");
    }
    return x < 0 ? -(int64_t)mag : (int64_t)mag;
}

static inline uint8_t in_at(FILE *fp, int64_t y, int64_t rel) {
    uint8_t b;
    readBytesFromFP(fp, ck_add(y, rel), 1, &b);
    return b;
}

static inline int header_byte_is(FILE *fp, int64_t index, uint8_t value) {
    uint8_t b;
    if (index >= input_len) {
        return 0;
    }
    readBytesFromFP(fp, index, 1, &b);
    return b == value;
}

/* Little-endian header field. */
static inline HeaderValue read_field(FILE *fp, uint64_t offset, unsigned bits, int is_signed) {
    HeaderValue v = {0, 0, 0};
    uint64_t raw = 0;
    unsigned i;
    if (offset > (uint64_t)INT64_MAX - 8) {
        fail("Unable to read header field");
    }
    for (i = 0; i < bits / 8; i++) {
        uint8_t b;
        readBytesFromFP(fp, (int64_t)offset + (int64_t)i, 1, &b);
        raw |= (uint64_t)b << (8 * i);
    }
    v.mag = raw;
    if (is_signed && ((raw >> (bits - 1)) & 1)) {
        uint64_t mask = bits == 64 ? UINT64_MAX : (((uint64_t)1 << bits) - 1);
        v.neg = 1;
        v.mag = ((~raw) & mask) + 1;
    }
    return v;
}

static inline HeaderValue neg_field(HeaderValue v) {
    if (v.mag != 0 || v.big) {
        v.neg = !v.neg;
    }
    return v;
}

static inline HeaderValue mul_field(HeaderValue a, HeaderValue b) {
    HeaderValue r;
    r.neg = a.neg != b.neg;
    r.big = a.big || b.big || (a.mag != 0 && b.mag > UINT64_MAX / a.mag);
    r.mag = a.mag * b.mag;
    if (r.mag == 0 && !r.big) {
        r.neg = 0;
    }
    return r;
}

static inline int64_t narrow_field(HeaderValue v) {
    if (v.big) {
        fail("arithmetic overflow");
    }
    if (!v.neg) {
        if (v.mag > (uint64_t)INT64_MAX) {
            fail("arithmetic overflow");
        }
        return (int64_t)v.mag;
    }
    if (v.mag > (uint64_t)INT64_MAX + 1) {
        fail("arithmetic overflow");
    }
    return v.mag == (uint64_t)INT64_MAX + 1 ? INT64_MIN : -(int64_t)v.mag;
}

static inline int64_t out_index(int64_t x, int64_t delta) {
    int64_t xi = ck_add(x, delta);
    if (budget == 0) {
        fail("output limit exceeded");
    }
    budget--;
    if (xi > output_limit) {
        fail("output index exceeds the output limit");
    }
    return xi;
}

static void reject(void) {
    fprintf(stderr, "no parser for this file type\n");
    exit(3);
}

typedef struct {
    FILE *bytes;
    FILE *index;
    uint64_t offset;
} Sink;

/* Raw buffers go to path, one "name offset length" line each to path.idx. */
static void sink_open(Sink *s, const char *path) {
    size_t n = strlen(path);
    char *index_path = (char *)malloc(n + 5);
    if (index_path == NULL) {
        fail("out of memory");
    }
    memcpy(index_path, path, n);
    memcpy(index_path + n, ".idx", 5);
    s->bytes = fopen(path, "wb");
    s->index = fopen(index_path, "wb");
    free(index_path);
    if (s->bytes == NULL || s->index == NULL) {
        fail("Unable to open output");
    }
    s->offset = 0;
}

static void sink_put(Sink *s, const char *name, const Array *arr) {
    if (arr->used > 0 && fwrite(arr->data, 1, (size_t)arr->used, s->bytes) != arr->used) {
        fail("Unable to write output");
    }
    fprintf(s->index, "%s %llu %llu\n", name, (unsigned long long)s->offset, (unsigned long long)arr->used);
    s->offset += arr->used;
}

static void sink_close(Sink *s) {
    if (fclose(s->bytes) != 0 || fclose(s->index) != 0) {
        fail("Unable to write output");
    }
}

static inline u128 u128_make(uint64_t hi, uint64_t lo) {
    u128 r;
    r.lo = lo;
    r.hi = hi;
    return r;
}

static inline u128 u128_from_u64(uint64_t v) {
    return u128_make(0, v);
}

static inline u128 u128_from_i64(int64_t v) {
    return u128_make(v < 0 ? UINT64_MAX : 0, (uint64_t)v);
}

static inline u128 u128_and(u128 a, u128 b) {
    return u128_make(a.hi & b.hi, a.lo & b.lo);
}

static inline u128 u128_or(u128 a, u128 b) {
    return u128_make(a.hi | b.hi, a.lo | b.lo);
}

static inline u128 u128_xor(u128 a, u128 b) {
    return u128_make(a.hi ^ b.hi, a.lo ^ b.lo);
}

static inline u128 u128_add(u128 a, u128 b) {
    uint64_t lo = a.lo + b.lo;
    return u128_make(a.hi + b.hi + (lo < a.lo), lo);
}

static inline u128 u128_sub(u128 a, u128 b) {
    return u128_make(a.hi - b.hi - (a.lo < b.lo), a.lo - b.lo);
}

static inline u128 u128_mul(u128 a, u128 b) {
    uint64_t a0 = a.lo & 0xffffffffu, a1 = a.lo >> 32;
    uint64_t b0 = b.lo & 0xffffffffu, b1 = b.lo >> 32;
    uint64_t p00 = a0 * b0, p01 = a0 * b1, p10 = a1 * b0, p11 = a1 * b1;
    uint64_t mid = (p00 >> 32) + (p01 & 0xffffffffu) + (p10 & 0xffffffffu);
    uint64_t lo = (mid << 32) | (p00 & 0xffffffffu);
    uint64_t hi = p11 + (p01 >> 32) + (p10 >> 32) + (mid >> 32);
    return u128_make(hi + a.lo * b.hi + a.hi * b.lo, lo);
}

static inline unsigned u128_amount(u128 b) {
    return (b.hi != 0 || b.lo >= 128) ? 128 : (unsigned)b.lo;
}

static inline u128 u128_shl(u128 a, u128 b) {
    unsigned n = u128_amount(b);
    if (n == 0) {
        return a;
    }
    if (n >= 128) {
        return u128_make(0, 0);
    }
    if (n >= 64) {
        return u128_make(a.lo << (n - 64), 0);
    }
    return u128_make((a.hi << n) | (a.lo >> (64 - n)), a.lo << n);
}

static inline u128 u128_lshr(u128 a, u128 b) {
    unsigned n = u128_amount(b);
    if (n == 0) {
        return a;
    }
    if (n >= 128) {
        return u128_make(0, 0);
    }
    if (n >= 64) {
        return u128_make(0, a.hi >> (n - 64));
    }
    return u128_make(a.hi >> n, (a.lo >> n) | (a.hi << (64 - n)));
}

static inline u128 u128_ashr(u128 a, u128 b) {
    unsigned n = u128_amount(b);
    uint64_t fill = (a.hi >> 63) ? UINT64_MAX : 0;
    if (n == 0) {
        return a;
    }
    if (n >= 128) {
        return u128_make(fill, fill);
    }
    if (n >= 64) {
        return u128_make(fill, (uint64_t)((int64_t)a.hi >> (n - 64)));
    }
    return u128_make((uint64_t)((int64_t)a.hi >> n), (a.lo >> n) | (a.hi << (64 - n)));
}

static inline u128 u128_extract(u128 a, unsigned lo, unsigned bits) {
    u128 r = u128_lshr(a, u128_from_u64(lo));
    if (bits >= 128) {
        return r;
    }
    if (bits > 64) {
        r.hi &= ((uint64_t)1 << (bits - 64)) - 1;
    } else {
        r.hi = 0;
        if (bits < 64) {
            r.lo &= ((uint64_t)1 << bits) - 1;
        }
    }
    return r;
}
"#;

/// Fixed-width shift helpers. Shifts by the full width or more saturate
/// as in the interpreter; the arithmetic form is a signed-cast shift.
fn shift_helpers(out: &mut String) {
    for w in [8u32, 16, 32, 64] {
        let c = w.max(32);
        let _ = write!(
            out,
            "\nstatic inline uint{w}_t shl_{w}(uint{w}_t a, uint64_t b) {{\n    \
             return b >= {w} ? 0 : (uint{w}_t)((uint{c}_t)a << b);\n}}\n\
             \nstatic inline uint{w}_t lshr_{w}(uint{w}_t a, uint64_t b) {{\n    \
             return b >= {w} ? 0 : (uint{w}_t)(a >> b);\n}}\n\
             \nstatic inline uint{w}_t ashr_{w}(uint{w}_t a, uint64_t b) {{\n    \
             return (uint{w}_t)((int{w}_t)a >> (b >= {w} ? {w} - 1 : b));\n}}\n"
        );
    }
}

/// Includes, runtime helpers and shift helpers shared by every emitted
/// unit, without `main`. Lowered expressions compile against it.
pub fn runtime_prelude() -> String {
    let mut out = String::from(RUNTIME);
    shift_helpers(&mut out);
    out
}

fn c_i64(v: i64) -> String {
    if v == i64::MIN {
        String::from("INT64_MIN")
    } else {
        format!("INT64_C({v})")
    }
}

/// Text safe to place inside a C comment.
fn comment_text(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || " _-.,:+|()".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn c_string(s: &str) -> String {
    let mut out = String::from("\"");
    for b in s.bytes() {
        match b {
            b'"' | b'\\' => {
                out.push('\\');
                out.push(b as char);
            }
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\{b:03o}");
            }
        }
    }
    out.push('"');
    out
}

fn template_arity(template: &ByteExpr) -> usize {
    template
        .reads()
        .iter()
        .map(|&p| p as usize + 1)
        .max()
        .unwrap_or(0)
}

fn symbol_deps(def: &SymbolDef) -> Vec<&str> {
    match def {
        SymbolDef::Literal => Vec::new(),
        SymbolDef::Rewrite(r) => r.operands(),
        SymbolDef::Header(HeaderSource::Adjacent {
            min_y,
            in_factor,
            bound,
        }) => alloc::vec![min_y.as_str(), in_factor.as_str(), bound.as_str()],
        SymbolDef::Header(_) => Vec::new(),
    }
}

/// Symbol names in an order where each follows its dependencies.
fn symbol_order(program: &IrProgram, leaf: usize) -> Result<Vec<&str>, EmitError> {
    #[derive(PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(
        program: &'a IrProgram,
        name: &'a str,
        leaf: usize,
        marks: &mut BTreeMap<&'a str, Mark>,
        order: &mut Vec<&'a str>,
    ) -> Result<(), EmitError> {
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => {
                return Err(EmitError::CyclicSymbol {
                    leaf,
                    name: name.into(),
                })
            }
            None => {}
        }
        let (key, sym) =
            program
                .symbols
                .get_key_value(name)
                .ok_or_else(|| EmitError::UnboundSymbol {
                    leaf,
                    name: name.into(),
                })?;
        marks.insert(key, Mark::Active);
        for dep in symbol_deps(&sym.def) {
            visit(program, dep, leaf, marks, order)?;
        }
        marks.insert(key, Mark::Done);
        order.push(key);
        Ok(())
    }
    let mut marks = BTreeMap::new();
    let mut order = Vec::new();
    for name in program.symbols.keys() {
        visit(program, name, leaf, &mut marks, &mut order)?;
    }
    Ok(order)
}

struct LeafWriter<'a> {
    leaf: usize,
    program: &'a IrProgram,
    vars: BTreeMap<&'a str, String>,
    /// Parameter count of each shape function.
    params: Vec<usize>,
}

impl LeafWriter<'_> {
    fn var(&self, name: &str) -> Result<&str, EmitError> {
        self.vars
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| EmitError::UnboundSymbol {
                leaf: self.leaf,
                name: name.into(),
            })
    }

    fn field(&self, f: &Field) -> Result<String, EmitError> {
        if !matches!(f.bits, 8 | 16 | 32 | 64) {
            return Err(EmitError::UnsupportedField {
                leaf: self.leaf,
                field: *f,
            });
        }
        Ok(format!(
            "read_field(fp, UINT64_C({}), {}, {})",
            f.offset,
            f.bits,
            u8::from(f.signed)
        ))
    }

    fn def(&self, name: &str) -> Result<String, EmitError> {
        let sym = &self.program.symbols[name];
        Ok(match &sym.def {
            SymbolDef::Literal => c_i64(sym.value),
            SymbolDef::Rewrite(r) => match r {
                Rewrite::OneMinus(x) => format!("ck_sub(1, {})", self.var(x)?),
                Rewrite::Mul(x, y) => format!("ck_mul({}, {})", self.var(x)?, self.var(y)?),
                Rewrite::NegMul(x, y) => {
                    format!("ck_neg(ck_mul({}, {}))", self.var(x)?, self.var(y)?)
                }
                Rewrite::Pad4Mul(x, y) => {
                    format!("pad4(ck_mul({}, {}))", self.var(x)?, self.var(y)?)
                }
                Rewrite::Pad4NegMul(x, y) => {
                    format!("pad4(ck_neg(ck_mul({}, {})))", self.var(x)?, self.var(y)?)
                }
            },
            SymbolDef::Header(h) => match h {
                HeaderSource::Field(f) => format!("narrow_field({})", self.field(f)?),
                HeaderSource::NegField(f) => format!("narrow_field(neg_field({}))", self.field(f)?),
                HeaderSource::Product(a, b) => {
                    format!(
                        "narrow_field(mul_field({}, {}))",
                        self.field(a)?,
                        self.field(b)?
                    )
                }
                HeaderSource::NegProduct(a, b) => format!(
                    "narrow_field(neg_field(mul_field({}, {})))",
                    self.field(a)?,
                    self.field(b)?
                ),
                HeaderSource::Adjacent {
                    min_y,
                    in_factor,
                    bound,
                } => format!(
                    "ck_add(ck_mul(ck_abs({}), {}), {})",
                    self.var(in_factor)?,
                    self.var(bound)?,
                    self.var(min_y)?
                ),
            },
        })
    }

    fn nest(&self, out: &mut String, array: &str, nest: &LoopNest) -> Result<(), EmitError> {
        let _ = writeln!(out, "    {{");
        let _ = writeln!(out, "        int64_t min_x = {};", self.var(&nest.min_x)?);
        let _ = writeln!(
            out,
            "        int64_t y0 = ck_add({}, {});",
            self.var(&nest.min_y)?,
            c_i64(nest.y0_delta)
        );
        for (k, l) in nest.levels.iter().enumerate() {
            let addend = match &l.addend {
                Some(a) => String::from(self.var(a)?),
                None => String::from("0"),
            };
            let _ = writeln!(
                out,
                "        int64_t b{k} = {}, st{k} = {}, of{k} = {}, if{k} = {}, ad{k} = {addend};",
                self.var(&l.bound)?,
                c_i64(l.step.max(1)),
                self.var(&l.out_factor)?,
                self.var(&l.in_factor)?,
            );
        }
        let guard: Vec<String> = (0..nest.levels.len())
            .map(|k| format!("b{k} > 0"))
            .collect();
        let guard = if guard.is_empty() {
            String::from("1")
        } else {
            guard.join(" && ")
        };
        let _ = writeln!(out, "        (void)min_x;\n        (void)y0;");
        let _ = writeln!(out, "        if ({guard}) {{");
        let mut pad = String::from("            ");
        for k in 0..nest.levels.len() {
            let _ = writeln!(
                out,
                "{pad}for (int64_t i{k} = 0; i{k} < b{k}; i{k} = ck_add(i{k}, st{k})) {{"
            );
            pad.push_str("    ");
        }
        let _ = writeln!(out, "{pad}int64_t x = min_x;\n{pad}int64_t y = y0;");
        for k in 0..nest.levels.len() {
            let _ = writeln!(out, "{pad}x = ck_add(x, ck_mul(i{k}, of{k}));");
            let _ = writeln!(
                out,
                "{pad}y = ck_add(y, ck_mul(ck_add(i{k}, ad{k}), if{k}));"
            );
        }
        for s in &nest.body {
            let shape = self
                .program
                .shapes
                .get(s.shape)
                .ok_or(EmitError::MissingShape {
                    leaf: self.leaf,
                    shape: s.shape,
                })?;
            if s.rel.len() < template_arity(&shape.template) {
                return Err(EmitError::ArityMismatch {
                    leaf: self.leaf,
                    shape: s.shape,
                });
            }
            let mut args = String::new();
            for p in 0..self.params[s.shape] {
                let _ = write!(args, ", {}", c_i64(s.rel.get(p).copied().unwrap_or(0)));
            }
            let _ = writeln!(
                out,
                "{pad}writeArray(&{array}, out_index(x, {}), leaf{}_shape{}(fp, y{args}));",
                c_i64(s.out_delta),
                self.leaf,
                s.shape
            );
        }
        if nest.body.is_empty() {
            let _ = writeln!(out, "{pad}(void)x;\n{pad}(void)y;");
        }
        for k in (0..nest.levels.len()).rev() {
            pad.truncate(12 + 4 * k);
            let _ = writeln!(out, "{pad}}}");
        }
        let _ = writeln!(out, "        }}\n    }}");
        Ok(())
    }

    fn shapes(&self, out: &mut String) -> Result<(), EmitError> {
        for (j, shape) in self.program.shapes.iter().enumerate() {
            let body = lower_expr(&shape.template, &|p| format!("r{p}")).map_err(|error| {
                EmitError::InvalidExpr {
                    leaf: self.leaf,
                    shape: j,
                    error,
                }
            })?;
            let mut params = String::new();
            let mut unused = String::from("    (void)fp;\n    (void)y;\n");
            for p in 0..self.params[j] {
                let _ = write!(params, ", int64_t r{p}");
                let _ = writeln!(unused, "    (void)r{p};");
            }
            let value = if shape.template.width() == Width::W128 {
                format!("(uint8_t)({body}).lo")
            } else {
                format!("(uint8_t)({body})")
            };
            let _ = write!(
                out,
                "\n/* {} */\nstatic uint8_t leaf{}_shape{j}(FILE *fp, int64_t y{params}) {{\n{unused}    return {value};\n}}\n",
                comment_text(&shape.key),
                self.leaf
            );
        }
        Ok(())
    }

    fn function(&mut self, out: &mut String) -> Result<(), EmitError> {
        let order = symbol_order(self.program, self.leaf)?;
        for (i, name) in order.iter().enumerate() {
            self.vars.insert(name, format!("s{i}"));
        }
        let p = self.program;
        self.params = p
            .shapes
            .iter()
            .map(|s| template_arity(&s.template))
            .collect();
        for stmt in p.arrays.iter().flat_map(|a| &a.nests).flat_map(|n| &n.body) {
            if let Some(n) = self.params.get_mut(stmt.shape) {
                *n = (*n).max(stmt.rel.len());
            }
        }
        self.shapes(out)?;
        let _ = write!(
            out,
            "\n/* {}, stride {} */\nstatic void leaf_{}(FILE *fp, const char *out_path) {{\n    Sink sink;\n",
            comment_text(&self.program.source),
            self.program.stride,
            self.leaf
        );
        for name in &order {
            let _ = writeln!(
                out,
                "    int64_t {} = {}; /* {} */",
                self.vars[name],
                self.def(name)?,
                comment_text(name)
            );
            let _ = writeln!(out, "    (void){};", self.vars[name]);
        }
        for (a, array) in self.program.arrays.iter().enumerate() {
            let _ = writeln!(
                out,
                "    Array a{a} = {{NULL, 0, 0}}; /* {} */",
                comment_text(&array.name)
            );
        }
        for (a, array) in self.program.arrays.iter().enumerate() {
            for nest in &array.nests {
                self.nest(out, &format!("a{a}"), nest)?;
            }
        }
        let _ = writeln!(out, "    sink_open(&sink, out_path);");
        let mut named: Vec<(usize, &str)> = self
            .program
            .arrays
            .iter()
            .enumerate()
            .map(|(a, x)| (a, x.name.as_str()))
            .collect();
        // A later array of the same name replaces an earlier one.
        named.reverse();
        named.sort_by(|x, y| x.1.cmp(y.1));
        named.dedup_by(|x, y| x.1 == y.1);
        for (a, name) in named {
            let _ = writeln!(out, "    sink_put(&sink, {}, &a{a});", c_string(name));
        }
        let _ = writeln!(out, "    sink_close(&sink);");
        for a in 0..self.program.arrays.len() {
            let _ = writeln!(out, "    free(a{a}.data);");
        }
        out.push_str("}\n");
        Ok(())
    }
}

fn dispatch(out: &mut String, tree: &ParserTree, next_leaf: &mut usize, depth: usize) {
    let pad = "    ".repeat(depth);
    match tree {
        ParserTree::Leaf(Some(_)) => {
            let _ = writeln!(out, "{pad}leaf_{next_leaf}(fp, out_path);");
            *next_leaf += 1;
        }
        ParserTree::Leaf(None) => {
            let _ = writeln!(out, "{pad}reject(); /* leaf {next_leaf} */");
            *next_leaf += 1;
        }
        ParserTree::Node {
            predicate,
            sat,
            unsat,
        } => {
            let _ = writeln!(
                out,
                "{pad}if (header_byte_is(fp, INT64_C({}), {})) {{",
                predicate.index, predicate.value
            );
            dispatch(out, sat, next_leaf, depth + 1);
            let _ = writeln!(out, "{pad}}} else {{");
            dispatch(out, unsat, next_leaf, depth + 1);
            let _ = writeln!(out, "{pad}}}");
        }
    }
}

const MAIN: &str = r#"
int main(int argc, char **argv) {
    FILE *fp;
    long end;
    if (argc != 3) {
        fprintf(stderr, "usage: %s INPUT OUTPUT\n", argc > 0 ? argv[0] : "parser");
        return 2;
    }
    fp = fopen(argv[1], "rb");
    if (fp == NULL) {
        fprintf(stderr, "Unable to open %s\n", argv[1]);
        return 1;
    }
    if (fseek(fp, 0, SEEK_END) != 0) {
        fail("Unable to fseek");
    }
    end = ftell(fp);
    if (end < 0) {
        fail("Unable to determine input size");
    }
    input_len = (int64_t)end;
    input_pos = -1;
    output_limit = ck_add(ck_mul(16, input_len), 65536);
    budget = 4 * (uint64_t)output_limit;
    dispatch(fp, argv[2]);
    fclose(fp);
    return 0;
}
"#;

/// Emits one C translation unit implementing `tree`. The program takes an
/// input path and an output path; buffers go to the output path and their
/// index to the same path with `.idx` appended.
pub fn emit_source(tree: &ParserTree, options: &EmitOptions) -> Result<String, EmitError> {
    let leaves = tree.leaves();
    if !options.partial {
        if let Some(leaf) = leaves.iter().position(Option::is_none) {
            return Err(EmitError::NullLeaf { leaf });
        }
    }
    let mut out = runtime_prelude();
    for (leaf, program) in leaves.iter().enumerate() {
        if let Some(program) = program {
            LeafWriter {
                leaf,
                program,
                vars: BTreeMap::new(),
                params: Vec::new(),
            }
            .function(&mut out)?;
        }
    }
    out.push_str("\nstatic void dispatch(FILE *fp, const char *out_path) {\n");
    let mut next = 0;
    dispatch(&mut out, tree, &mut next, 1);
    out.push_str("    (void)fp;\n    (void)out_path;\n}\n");
    out.push_str(MAIN);
    Ok(out)
}

/// Names of input and output byte storage in emitted code.
pub const STORAGE_NAMES: [&str; 2] = ["buf", "data"];
/// Functions allowed to touch storage directly.
pub const STORAGE_HELPERS: [&str; 2] = ["readBytesFromFP", "writeArray"];

/// A direct access to input or output storage outside the helpers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawAccess {
    pub line: usize,
    pub text: String,
}

/// Blanks comments and string or character literals, keeping line breaks.
fn code_only(src: &str) -> Vec<u8> {
    let b = src.as_bytes();
    let mut out = b.to_vec();
    let mut i = 0;
    while i < b.len() {
        let blank_until = |out: &mut Vec<u8>, from: usize, to: usize| {
            for c in &mut out[from..to] {
                if *c != b'\n' {
                    *c = b' ';
                }
            }
        };
        if b[i..].starts_with(b"/*") {
            let end = src[i + 2..].find("*/").map_or(b.len(), |e| i + 2 + e + 2);
            blank_until(&mut out, i, end);
            i = end;
        } else if b[i..].starts_with(b"//") {
            let end = src[i..].find('\n').map_or(b.len(), |e| i + e);
            blank_until(&mut out, i, end);
            i = end;
        } else if b[i] == b'"' || b[i] == b'\'' {
            let quote = b[i];
            let mut j = i + 1;
            while j < b.len() && b[j] != quote {
                j += if b[j] == b'\\' { 2 } else { 1 };
            }
            let end = (j + 1).min(b.len());
            blank_until(&mut out, i, end);
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

fn is_ident(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

/// Byte ranges of the helper function bodies.
fn helper_bodies(code: &[u8]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    for name in STORAGE_HELPERS {
        let name = name.as_bytes();
        let mut from = 0;
        while let Some(pos) = find(code, name, from) {
            from = pos + name.len();
            let before_ok = pos == 0 || !is_ident(code[pos - 1]);
            let mut j = from;
            while j < code.len() && code[j].is_ascii_whitespace() {
                j += 1;
            }
            if !before_ok || code.get(j) != Some(&b'(') {
                continue;
            }
            let Some(close) = matching(code, j, b'(', b')') else {
                continue;
            };
            let mut k = close + 1;
            while k < code.len() && code[k].is_ascii_whitespace() {
                k += 1;
            }
            if code.get(k) == Some(&b'{') {
                if let Some(end) = matching(code, k, b'{', b'}') {
                    ranges.push((k, end));
                }
            }
        }
    }
    ranges
}

fn find(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    hay.get(from..)?
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

fn matching(code: &[u8], open_at: usize, open: u8, close: u8) -> Option<usize> {
    let mut depth = 0usize;
    for (i, &c) in code.iter().enumerate().skip(open_at) {
        if c == open {
            depth += 1;
        } else if c == close {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

/// Finds subscripts (`data[..]`) and dereferences (`*data`, `*(data ..`)
/// of storage names outside the helper bodies. Comments and literals are
/// ignored.
pub fn scan_raw_subscripts(src: &str) -> Vec<RawAccess> {
    let code = code_only(src);
    let allowed = helper_bodies(&code);
    let mut found = Vec::new();
    for name in STORAGE_NAMES {
        let name = name.as_bytes();
        let mut from = 0;
        while let Some(pos) = find(&code, name, from) {
            from = pos + name.len();
            let end = from;
            if (pos > 0 && is_ident(code[pos - 1])) || code.get(end).copied().is_some_and(is_ident)
            {
                continue;
            }
            if allowed.iter().any(|&(a, b)| a < pos && pos < b) {
                continue;
            }
            let mut j = end;
            while j < code.len() && code[j] == b' ' {
                j += 1;
            }
            let subscript = code.get(j) == Some(&b'[');
            let mut k = pos;
            // Walk back over a member path such as `arr->` or `s.`.
            loop {
                if k >= 2 && &code[k - 2..k] == b"->" {
                    k -= 2;
                } else if k >= 1 && code[k - 1] == b'.' {
                    k -= 1;
                } else {
                    break;
                }
                while k > 0 && is_ident(code[k - 1]) {
                    k -= 1;
                }
            }
            while k > 0 && matches!(code[k - 1], b' ' | b'(') {
                k -= 1;
            }
            let deref = k > 0 && code[k - 1] == b'*' && {
                // `a * data` is multiplication; `*data` and `(*data` are not.
                let mut m = k - 1;
                while m > 0 && code[m - 1] == b' ' {
                    m -= 1;
                }
                m == 0 || !(is_ident(code[m - 1]) || code[m - 1] == b')' || code[m - 1] == b']')
            };
            if subscript || deref {
                let line = code[..pos].iter().filter(|&&c| c == b'\n').count() + 1;
                let text = src.lines().nth(line - 1).unwrap_or_default().trim().into();
                found.push(RawAccess { line, text });
            }
        }
    }
    found.sort_by_key(|r| r.line);
    found
}
