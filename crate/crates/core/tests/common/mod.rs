//! Generators shared by the property tests.

#![allow(dead_code)]

use proptest::prelude::*;
use regen_core::expr::{BinOp, ByteExpr, Width};
use regen_core::lcg::Lcg;
use regen_core::oracle::{FormatSpec, FormatType, SizeRange};

pub const INPUT_LEN: u64 = 24;

pub const TOKENS: [&str; 12] = [
    "wav-m8",
    "wav-m16",
    "wav-s8",
    "wav-s16",
    "bmp16",
    "bmp16-565",
    "bmp24",
    "bmp24-td",
    "bmp32",
    "bmp32-td",
    "bmp32-rgba-v5",
    "fwc",
];

pub fn small_sizes() -> SizeRange {
    SizeRange {
        min_dim: 1,
        max_dim: 20,
        min_samples: 1,
        max_samples: 80,
        min_chunk: 1,
        max_chunk: 80,
    }
}

/// A small random file of some supported format.
pub fn any_file() -> impl Strategy<Value = (String, Vec<u8>)> {
    (0..TOKENS.len(), any::<u64>()).prop_map(|(t, seed)| {
        let ty: FormatType = TOKENS[t].parse().unwrap();
        let mut rng = Lcg::new(seed);
        let spec: FormatSpec = ty.instantiate(&small_sizes(), &mut rng);
        (TOKENS[t].to_string(), spec.encode(&mut rng).unwrap())
    })
}

fn width() -> impl Strategy<Value = Width> {
    prop::sample::select(Width::ALL.to_vec())
}

/// Narrows or widens `e` to exactly `w`.
pub fn fit(e: ByteExpr, w: Width) -> ByteExpr {
    match e.width().cmp(&w) {
        std::cmp::Ordering::Less => ByteExpr::zext(w, e),
        std::cmp::Ordering::Greater => ByteExpr::extract(w.bits() - 1, 0, e),
        std::cmp::Ordering::Equal => e,
    }
}

/// Well-formed expressions over the first [`INPUT_LEN`] input bytes,
/// covering every node kind.
pub fn any_expr() -> impl Strategy<Value = ByteExpr> {
    let leaf = prop_oneof![
        (0..INPUT_LEN).prop_map(ByteExpr::read),
        (width(), any::<u128>()).prop_map(|(w, v)| ByteExpr::constant(v & w.mask(), w)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (width(), inner.clone()).prop_map(|(w, a)| {
                let w = w.max(a.width());
                ByteExpr::zext(w, a)
            }),
            (width(), inner.clone()).prop_map(|(w, a)| {
                let w = w.max(a.width());
                ByteExpr::sext(w, a)
            }),
            (inner.clone(), any::<u32>(), any::<u32>()).prop_map(|(a, x, y)| {
                let bits = a.width().bits();
                let (lo, hi) = ((x % bits).min(y % bits), (x % bits).max(y % bits));
                ByteExpr::extract(hi, lo, a)
            }),
            (
                prop::sample::select(BinOp::ALL.to_vec()),
                inner.clone(),
                inner,
                any::<u32>()
            )
                .prop_map(|(op, a, b, amount)| {
                    let w = a.width();
                    let rhs = if op.is_shift() {
                        ByteExpr::constant((amount % (2 * w.bits())) as u128, w)
                    } else {
                        fit(b, w)
                    };
                    ByteExpr::bin(op, a, rhs)
                }),
        ]
    })
}
