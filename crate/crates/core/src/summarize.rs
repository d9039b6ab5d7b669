//! Recovers affine loop nests from a flat trace.
//!
//! Output bytes are cut into records of `stride` consecutive bytes. Records
//! with the same statement shapes and relative read offsets form a group;
//! each group's `(output, input)` origins are fitted with lines, and the
//! lines are fitted again until nothing merges.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::expr::abstract_expr;
use crate::ir::{literal, ArrayProgram, IrProgram, Level, LoopNest, NestNames, ShapeDef, Stmt};
use crate::trace::TraceLog;

pub const DEFAULT_STRIDES: core::ops::RangeInclusive<usize> = 1..=8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SummarizeError {
    ZeroStride,
    Uncovered { array: String, index: u64 },
}

impl fmt::Display for SummarizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SummarizeError::ZeroStride => f.write_str("stride must be at least 1"),
            SummarizeError::Uncovered { array, index } => {
                write!(f, "no record covers {array}[{index}]")
            }
        }
    }
}

impl core::error::Error for SummarizeError {}

/// A run `k -> (out_start + k * out_step, in_start + k * in_step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AffineSegment {
    pub out_start: i64,
    pub in_start: i64,
    pub count: u64,
    pub out_step: i64,
    pub in_step: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dim {
    pub count: u64,
    pub out_step: i64,
    pub in_step: i64,
}

/// A set of points: an origin replicated over `dims` (outermost first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub out: i64,
    pub inp: i64,
    pub dims: Vec<Dim>,
}

impl Block {
    pub fn point(out: i64, inp: i64) -> Block {
        Block {
            out,
            inp,
            dims: Vec::new(),
        }
    }

    pub fn len(&self) -> u64 {
        self.dims.iter().map(|d| d.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Expands to the covered points in iteration order.
    pub fn points(&self) -> Vec<(i64, i64)> {
        let mut out = vec![(self.out, self.inp)];
        for d in &self.dims {
            let mut next = Vec::with_capacity(out.len() * d.count as usize);
            for &(o, i) in &out {
                for k in 0..d.count as i64 {
                    next.push((o + k * d.out_step, i + k * d.in_step));
                }
            }
            out = next;
        }
        // Outer dims were applied first, so the order is already outer-major.
        out
    }
}

/// One greedy pass: consecutive blocks with equal dims whose origins step by
/// a constant delta become one block with an extra outer dimension.
pub fn merge_pass(blocks: &[Block]) -> Option<Vec<Block>> {
    let mut out = Vec::with_capacity(blocks.len());
    let mut merged = false;
    let mut i = 0;
    while i < blocks.len() {
        let first = &blocks[i];
        let mut j = i + 1;
        if j < blocks.len() && blocks[j].dims == first.dims {
            let delta = (blocks[j].out - first.out, blocks[j].inp - first.inp);
            j += 1;
            while j < blocks.len()
                && blocks[j].dims == first.dims
                && (
                    blocks[j].out - blocks[j - 1].out,
                    blocks[j].inp - blocks[j - 1].inp,
                ) == delta
            {
                j += 1;
            }
            let mut dims = vec![Dim {
                count: (j - i) as u64,
                out_step: delta.0,
                in_step: delta.1,
            }];
            dims.extend_from_slice(&first.dims);
            out.push(Block {
                out: first.out,
                inp: first.inp,
                dims,
            });
            merged = true;
            i = j;
        } else {
            out.push(first.clone());
            i += 1;
        }
    }
    merged.then_some(out)
}

/// First interpolation pass over raw `(output, input)` pairs.
pub fn interpolate(pairs: &[(i64, i64)]) -> Vec<AffineSegment> {
    let points: Vec<Block> = pairs.iter().map(|&(o, i)| Block::point(o, i)).collect();
    let blocks = merge_pass(&points).unwrap_or(points);
    blocks
        .into_iter()
        .map(|b| match b.dims.first() {
            Some(d) => AffineSegment {
                out_start: b.out,
                in_start: b.inp,
                count: d.count,
                out_step: d.out_step,
                in_step: d.in_step,
            },
            None => AffineSegment {
                out_start: b.out,
                in_start: b.inp,
                count: 1,
                out_step: 0,
                in_step: 0,
            },
        })
        .collect()
}

/// Repeats [`merge_pass`] until it no longer changes anything.
pub fn nest(mut blocks: Vec<Block>) -> Vec<Block> {
    while let Some(next) = merge_pass(&blocks) {
        blocks = next;
    }
    blocks
}

struct AbstractEntry {
    shape: usize,
    offsets: Vec<u64>,
}

/// A trace with every expression abstracted once, reusable across strides.
pub struct PreparedLog {
    source: String,
    shapes: Vec<ShapeDef>,
    arrays: Vec<(String, Vec<AbstractEntry>)>,
}

impl PreparedLog {
    pub fn new(log: &TraceLog) -> Result<PreparedLog, SummarizeError> {
        let mut shapes: Vec<ShapeDef> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut arrays = Vec::new();
        for (name, entries) in log.arrays() {
            let mut list = Vec::with_capacity(entries.len());
            for (expected, e) in entries.iter().enumerate() {
                if e.index != expected as u64 {
                    return Err(SummarizeError::Uncovered {
                        array: name.to_string(),
                        index: expected as u64,
                    });
                }
                let shape = abstract_expr(&e.expr);
                let id = *index.entry(shape.key.clone()).or_insert_with(|| {
                    shapes.push(ShapeDef {
                        key: shape.key.clone(),
                        template: shape.template.clone(),
                    });
                    shapes.len() - 1
                });
                list.push(AbstractEntry {
                    shape: id,
                    offsets: shape.offsets,
                });
            }
            arrays.push((name.to_string(), list));
        }
        Ok(PreparedLog {
            source: log.file_id.clone(),
            shapes,
            arrays,
        })
    }

    pub fn summarize(&self, stride: usize) -> Result<IrProgram, SummarizeError> {
        if stride == 0 {
            return Err(SummarizeError::ZeroStride);
        }
        let mut program = IrProgram {
            stride,
            source: self.source.clone(),
            shapes: self.shapes.clone(),
            arrays: Vec::new(),
            symbols: BTreeMap::new(),
        };
        let mut nest_index = 0;
        for (name, entries) in &self.arrays {
            type Key = Vec<(usize, Vec<i64>)>;
            let mut groups: Vec<(Key, Vec<Block>)> = Vec::new();
            let mut by_key: BTreeMap<Key, usize> = BTreeMap::new();
            for (r, record) in entries.chunks(stride).enumerate() {
                let base = record
                    .iter()
                    .flat_map(|e| e.offsets.first())
                    .next()
                    .copied()
                    .unwrap_or(0) as i64;
                let key: Key = record
                    .iter()
                    .map(|e| {
                        (
                            e.shape,
                            e.offsets.iter().map(|&o| o as i64 - base).collect(),
                        )
                    })
                    .collect();
                let g = *by_key.entry(key.clone()).or_insert_with(|| {
                    groups.push((key, Vec::new()));
                    groups.len() - 1
                });
                groups[g].1.push(Block::point((r * stride) as i64, base));
            }
            let mut placed: Vec<(Block, usize)> = Vec::new();
            for (g, (_, points)) in groups.iter().enumerate() {
                for b in nest(points.clone()) {
                    placed.push((b, g));
                }
            }
            placed.sort_by_key(|(b, _)| b.out);

            let mut nests = Vec::new();
            for (block, g) in placed {
                nests.push(build_nest(&mut program, nest_index, &block, &groups[g].0));
                nest_index += 1;
            }
            program.arrays.push(ArrayProgram {
                name: name.clone(),
                nests,
            });
        }
        Ok(program)
    }

    /// Summarizes at every candidate stride and keeps the shortest text;
    /// ties go to the smaller stride.
    pub fn choose(
        &self,
        strides: impl IntoIterator<Item = usize>,
    ) -> Result<IrProgram, SummarizeError> {
        let mut best: Option<(usize, IrProgram)> = None;
        for s in strides {
            let p = self.summarize(s)?;
            let len = p.to_text().len();
            if best.as_ref().is_none_or(|(l, _)| len < *l) {
                best = Some((len, p));
            }
        }
        best.map(|(_, p)| p).ok_or(SummarizeError::ZeroStride)
    }
}

fn build_nest(
    program: &mut IrProgram,
    nest_index: usize,
    block: &Block,
    key: &[(usize, Vec<i64>)],
) -> LoopNest {
    let names = NestNames::new(nest_index);
    let depth = block.dims.len();
    let min_rel = key
        .iter()
        .flat_map(|(_, rel)| rel.iter().copied())
        .min()
        .unwrap_or(0);
    let mut cursor = block.inp;
    let mut levels = Vec::with_capacity(depth);
    for (i, d) in block.dims.iter().enumerate() {
        let level = depth - 1 - i;
        let addend = (d.in_step < 0).then(|| {
            cursor += (d.count as i64 - 1) * d.in_step;
            let n = names.addend(level);
            program
                .symbols
                .insert(n.clone(), literal(-(d.count as i64 - 1)));
            n
        });
        let l = Level {
            bound: names.bound(level),
            out_factor: names.out_factor(level),
            in_factor: names.in_factor(level),
            addend,
            step: 1,
        };
        program
            .symbols
            .insert(l.bound.clone(), literal(d.count as i64));
        program
            .symbols
            .insert(l.out_factor.clone(), literal(d.out_step));
        program
            .symbols
            .insert(l.in_factor.clone(), literal(d.in_step));
        levels.push(l);
    }
    program.symbols.insert(names.min_x(), literal(block.out));
    program
        .symbols
        .insert(names.min_y(), literal(cursor + min_rel));
    LoopNest {
        min_x: names.min_x(),
        min_y: names.min_y(),
        y0_delta: -min_rel,
        levels,
        body: key
            .iter()
            .enumerate()
            .map(|(j, (shape, rel))| Stmt {
                out_delta: j as i64,
                shape: *shape,
                rel: rel.clone(),
            })
            .collect(),
    }
}

pub fn summarize(log: &TraceLog, stride: usize) -> Result<IrProgram, SummarizeError> {
    PreparedLog::new(log)?.summarize(stride)
}

/// Returns the stride in `candidates` giving the shortest canonical text.
pub fn choose_stride(
    log: &TraceLog,
    candidates: impl IntoIterator<Item = usize>,
) -> Result<usize, SummarizeError> {
    Ok(PreparedLog::new(log)?.choose(candidates)?.stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcg::Lcg;
    use crate::oracle::{traced_parse, BmpSpec, BmpVersion, Layout16, Order32};

    fn bmp(bpp: u16, w: u32, h: u32, top_down: bool) -> Vec<u8> {
        BmpSpec {
            version: BmpVersion::V3,
            bpp,
            top_down,
            layout16: Layout16::X1R5G5B5,
            order32: Order32::Bgra,
            width: w,
            height: h,
        }
        .encode(&mut Lcg::new(11))
    }

    #[test]
    fn wav_like_line() {
        let pairs: Vec<(i64, i64)> = (0..10).map(|i| (i, 44 + 2 * i)).collect();
        let segs = interpolate(&pairs);
        assert_eq!(
            segs,
            [AffineSegment {
                out_start: 0,
                in_start: 44,
                count: 10,
                out_step: 1,
                in_step: 2
            }]
        );
    }

    #[test]
    fn single_point_is_degenerate() {
        assert_eq!(
            interpolate(&[(0, 5)]),
            [AffineSegment {
                out_start: 0,
                in_start: 5,
                count: 1,
                out_step: 0,
                in_step: 0
            }]
        );
    }

    #[test]
    fn bottom_up_rows_interpolate_per_row() {
        let (w, h, row) = (61i64, 76i64, 184i64);
        let mut pairs = Vec::new();
        for y in 0..h {
            for x in 0..w {
                pairs.push(((y * w + x) * 3, 54 + (h - 1 - y) * row + 3 * x));
            }
        }
        let segs = interpolate(&pairs);
        assert_eq!(segs.len(), 76);
        for pair in segs.windows(2) {
            assert_eq!(pair[0].in_start - pair[1].in_start, 184);
            assert_eq!(pair[0].count, 61);
        }
        let blocks: Vec<Block> = pairs.iter().map(|&(o, i)| Block::point(o, i)).collect();
        let nested = nest(blocks);
        assert_eq!(nested.len(), 1);
        assert_eq!(
            nested[0].dims.iter().map(|d| d.count).collect::<Vec<_>>(),
            [76, 61]
        );
        assert_eq!(nested[0].points(), pairs);
    }

    #[test]
    fn one_segment_is_already_fixed() {
        let blocks: Vec<Block> = (0..5).map(|i| Block::point(i, i)).collect();
        let nested = nest(blocks);
        assert_eq!(nested.len(), 1);
        assert_eq!(nested[0].dims.len(), 1);
    }

    #[test]
    fn bgr_bitmap_matches_reference_layout() {
        let file = bmp(24, 61, 76, false);
        let (_, log) = traced_parse(&file, "f").unwrap();
        let p = summarize(&log, 3).unwrap();
        let v = |n: &str| p.value(n).unwrap();
        assert_eq!(v("LOOP_BOUND_A"), 61);
        assert_eq!(v("LOOP_BOUND_B"), 76);
        assert_eq!(v("FACTOR_B_0"), 3);
        assert_eq!(v("FACTOR_B_1"), 3);
        assert_eq!(v("FACTOR_C_0"), 183);
        assert_eq!(v("FACTOR_C_1"), -184);
        assert_eq!(v("ADDEND_C_1"), -75);
        assert_eq!(v("MIN_Y"), 54);
        assert_eq!(v("MIN_X"), 0);
        let nest = &p.arrays[0].nests[0];
        assert_eq!(nest.y0_delta, 2);
        let rels: Vec<i64> = nest.body.iter().map(|s| s.rel[0]).collect();
        assert_eq!(rels, [0, -1, -2]);
    }

    #[test]
    fn strides_for_bitmaps() {
        let (_, log24) = traced_parse(&bmp(24, 23, 73, false), "a").unwrap();
        assert_eq!(choose_stride(&log24, DEFAULT_STRIDES).unwrap(), 3);
        let (_, log32) = traced_parse(&bmp(32, 23, 73, false), "b").unwrap();
        assert_eq!(choose_stride(&log32, DEFAULT_STRIDES).unwrap(), 4);
    }

    #[test]
    fn copy_prefers_stride_one() {
        let mut text = alloc::string::String::from("IN f 64\n");
        for i in 0..40 {
            text.push_str(&alloc::format!("OUT a {i} := (read {})\n", i + 7));
        }
        let log = crate::trace::parse_trace(&text).unwrap();
        assert_eq!(choose_stride(&log, DEFAULT_STRIDES).unwrap(), 1);
    }

    #[test]
    fn empty_log_gives_empty_program() {
        let log = TraceLog {
            file_id: "e".into(),
            input_len: 0,
            entries: Vec::new(),
        };
        assert!(summarize(&log, 1).unwrap().arrays.is_empty());
        assert_eq!(summarize(&log, 0), Err(SummarizeError::ZeroStride));
    }
}
