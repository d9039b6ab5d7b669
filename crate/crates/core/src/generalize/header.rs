//! Binding loop bounds and base offsets to header fields.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;

use crate::ir::{Field, HeaderSource, IrProgram, Role, SymbolDef};

pub const DEFAULT_HEADER_START: usize = 32;
pub const DEFAULT_HEADER_CAP: usize = 1024;

/// Header sizes to try in order: `start`, doubled until `cap`.
pub fn header_sizes(start: usize, cap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut size = start.max(1);
    while size <= cap {
        out.push(size);
        size = match size.checked_mul(2) {
            Some(s) => s,
            None => break,
        };
    }
    out
}

/// Wider first, then signed first, then by offset.
type FieldRank = (Reverse<u32>, Reverse<bool>, u64);

/// A way to recompute a bound or base offset in another file.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Binding {
    Source(HeaderSource),
    Literal(i64),
}

impl Binding {
    pub fn def(&self) -> SymbolDef {
        match self {
            Binding::Source(h) => SymbolDef::Header(h.clone()),
            Binding::Literal(_) => SymbolDef::Literal,
        }
    }

    fn rank(&self) -> (u8, Vec<FieldRank>) {
        let kind = match self {
            Binding::Source(HeaderSource::Field(_)) => 0,
            Binding::Source(HeaderSource::NegField(_)) => 1,
            Binding::Source(HeaderSource::Adjacent { .. }) => 2,
            Binding::Source(HeaderSource::Product(..)) => 3,
            Binding::Source(HeaderSource::NegProduct(..)) => 4,
            Binding::Literal(_) => 5,
        };
        let fields: Vec<(Reverse<u32>, Reverse<bool>, u64)> = match self {
            Binding::Source(HeaderSource::Field(a) | HeaderSource::NegField(a)) => {
                alloc::vec![(Reverse(a.bits), Reverse(a.signed), a.offset)]
            }
            Binding::Source(HeaderSource::Product(a, b) | HeaderSource::NegProduct(a, b)) => {
                alloc::vec![
                    (Reverse(a.bits), Reverse(a.signed), a.offset),
                    (Reverse(b.bits), Reverse(b.signed), b.offset)
                ]
            }
            _ => Vec::new(),
        };
        (kind, fields)
    }
}

/// A binding for the symbol's value multiplied by `scale`. Scaled choices
/// only exist for single-level bounds, where the loop then steps by `scale`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Choice {
    pub binding: Binding,
    pub scale: i64,
}

impl Choice {
    pub fn plain(binding: Binding) -> Choice {
        Choice { binding, scale: 1 }
    }

    /// Ordering among equally supported choices: fields before derived
    /// forms, unscaled before scaled, wider before narrower, signed before
    /// unsigned.
    fn rank(&self) -> impl Ord + '_ {
        let (kind, fields) = self.binding.rank();
        (kind, self.scale, fields, self)
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Source(h) => write!(f, "{h}"),
            Binding::Literal(v) => write!(f, "{v}"),
        }
    }
}

/// Every little-endian field of the first `limit` bytes, by value.
pub struct FieldIndex {
    by_value: BTreeMap<i128, Vec<Field>>,
}

impl FieldIndex {
    pub fn new(input: &[u8], limit: usize) -> FieldIndex {
        let limit = limit.min(input.len()) as u64;
        let mut by_value: BTreeMap<i128, Vec<Field>> = BTreeMap::new();
        for offset in 0..limit {
            for bits in [8, 16, 32, 64] {
                for signed in [true, false] {
                    let f = Field {
                        offset,
                        bits,
                        signed,
                    };
                    if f.end() > limit {
                        continue;
                    }
                    if let Some(v) = f.read(input) {
                        by_value.entry(v).or_default().push(f);
                    }
                }
            }
        }
        FieldIndex { by_value }
    }

    pub fn matching(&self, value: i128) -> &[Field] {
        self.by_value.get(&value).map_or(&[], Vec::as_slice)
    }

    /// Products of two 16- or 32-bit fields equal to `value`, each factor
    /// at least 2 in magnitude.
    pub fn products(&self, value: i128) -> Vec<(Field, Field)> {
        let mut out = Vec::new();
        if value == 0 {
            return out;
        }
        for (&va, fa) in &self.by_value {
            if va.abs() < 2 || value % va != 0 {
                continue;
            }
            let vb = value / va;
            if vb.abs() < 2 {
                continue;
            }
            for a in fa.iter().filter(|f| f.bits == 16 || f.bits == 32) {
                for b in self
                    .matching(vb)
                    .iter()
                    .filter(|f| f.bits == 16 || f.bits == 32)
                {
                    if a <= b {
                        out.push((*a, *b));
                    }
                }
            }
        }
        out
    }
}

/// Bound and base-offset symbols in binding order: per nest, bounds from
/// the innermost level out, then the base offset.
pub fn binding_targets(program: &IrProgram) -> Vec<(String, usize, Role)> {
    let infos = program.symbol_infos();
    let mut out = Vec::new();
    for n in 0..program.nests().count() {
        for i in infos.iter().filter(|i| i.nest == n) {
            if matches!(i.role, Role::Bound { .. }) {
                out.push((i.name.clone(), n, i.role));
            }
        }
        for i in infos.iter().filter(|i| i.nest == n && i.role == Role::MinY) {
            out.push((i.name.clone(), n, i.role));
        }
    }
    out
}

/// Bindings reproducing `target` for one symbol of one file.
pub fn binding_candidates(
    program: &IrProgram,
    fields: &FieldIndex,
    nest: usize,
    role: Role,
    target: i64,
) -> Vec<Binding> {
    let t = target as i128;
    let mut out: Vec<Binding> = fields
        .matching(t)
        .iter()
        .map(|f| Binding::Source(HeaderSource::Field(*f)))
        .collect();
    if t != 0 {
        out.extend(
            fields
                .matching(-t)
                .iter()
                .map(|f| Binding::Source(HeaderSource::NegField(*f))),
        );
    }
    match role {
        Role::Bound { .. } => {
            for (a, b) in fields.products(t) {
                out.push(Binding::Source(HeaderSource::Product(a, b)));
            }
            for (a, b) in fields.products(-t) {
                out.push(Binding::Source(HeaderSource::NegProduct(a, b)));
            }
        }
        Role::MinY => {
            for other in program.nests().take(nest) {
                let Some(outer) = other.levels.first() else {
                    continue;
                };
                let value = |n: &str| program.value(n);
                let extent = (|| {
                    value(&outer.in_factor)?
                        .checked_abs()?
                        .checked_mul(value(&outer.bound)?)?
                        .checked_add(value(&other.min_y)?)
                })();
                if extent == Some(target) {
                    out.push(Binding::Source(HeaderSource::Adjacent {
                        min_y: other.min_y.clone(),
                        in_factor: outer.in_factor.clone(),
                        bound: outer.bound.clone(),
                    }));
                }
            }
        }
        _ => {}
    }
    out.push(Binding::Literal(target));
    out
}

/// Picks the choice found in the most lists; ties by [`Choice::rank`].
/// Returns the winner and the indices of the lists containing it.
pub fn vote_binding(per_file: &[Vec<Choice>]) -> Option<(Choice, Vec<usize>)> {
    let mut counts: BTreeMap<&Choice, usize> = BTreeMap::new();
    for list in per_file {
        let mut seen: Vec<&Choice> = list.iter().collect();
        seen.sort();
        seen.dedup();
        for b in seen {
            *counts.entry(b).or_default() += 1;
        }
    }
    let (best, _) = counts
        .into_iter()
        .min_by_key(|(b, n)| (Reverse(*n), b.rank()))?;
    let best = best.clone();
    let support = (0..per_file.len())
        .filter(|&f| per_file[f].contains(&best))
        .collect();
    Some((best, support))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_schedule() {
        assert_eq!(header_sizes(32, 1024), [32, 64, 128, 256, 512, 1024]);
        assert_eq!(header_sizes(32, 32), [32]);
        assert!(header_sizes(64, 32).is_empty());
    }

    #[test]
    fn widest_signed_field_wins() {
        let mut header = alloc::vec![0u8; 32];
        header[18] = 61;
        header[22] = 76;
        let idx = FieldIndex::new(&header, 32);
        let list: Vec<Choice> = idx
            .matching(61)
            .iter()
            .map(|f| Choice::plain(Binding::Source(HeaderSource::Field(*f))))
            .collect();
        assert_eq!(list.len(), 6);
        let (best, _) = vote_binding(&[list]).unwrap();
        assert_eq!(
            best.binding,
            Binding::Source(HeaderSource::Field(Field {
                offset: 18,
                bits: 32,
                signed: true
            }))
        );
    }

    #[test]
    fn scaled_field_beats_plain_literal() {
        let f = Binding::Source(HeaderSource::Field(Field {
            offset: 40,
            bits: 32,
            signed: true,
        }));
        let list = alloc::vec![
            Choice::plain(Binding::Literal(10)),
            Choice {
                binding: f.clone(),
                scale: 4
            }
        ];
        assert_eq!(vote_binding(&[list]).unwrap().0.binding, f);
    }

    #[test]
    fn fields_stay_inside_the_limit() {
        let header = [7u8; 40];
        let idx = FieldIndex::new(&header, 20);
        assert!(idx.by_value.values().flatten().all(|f| f.end() <= 20));
    }

    #[test]
    fn products_of_two_fields() {
        let mut header = alloc::vec![0u8; 32];
        header[18] = 6;
        header[22..26].copy_from_slice(&(-5i32).to_le_bytes());
        let idx = FieldIndex::new(&header, 32);
        let p = idx.products(-30);
        assert!(p.contains(&(
            Field {
                offset: 18,
                bits: 32,
                signed: true
            },
            Field {
                offset: 22,
                bits: 32,
                signed: true
            }
        )));
    }

    #[test]
    fn support_counts_decide_before_rank() {
        let field = Choice::plain(Binding::Source(HeaderSource::Field(Field {
            offset: 4,
            bits: 32,
            signed: true,
        })));
        let lit = Choice::plain(Binding::Literal(32));
        let lists = [
            alloc::vec![field.clone(), lit.clone()],
            alloc::vec![lit.clone()],
            alloc::vec![lit.clone()],
        ];
        let (best, support) = vote_binding(&lists).unwrap();
        assert_eq!(best, lit);
        assert_eq!(support, [0, 1, 2]);
        let (best, support) = vote_binding(&lists[..1]).unwrap();
        assert_eq!(best, field);
        assert_eq!(support, [0]);
    }
}
