//! Turning per-file programs of one skeleton into a single program that
//! recomputes its constants from each input.
//!
//! Factors and addends are rewritten over other symbols by Cartesian
//! voting; bounds and base offsets are then bound to header fields one at a
//! time, each vote shrinking the set of files that still agree.

pub mod assign;
pub mod header;
pub mod rewrite;

use alloc::vec::Vec;
use core::fmt;

use crate::interp::resolve_symbols;
use crate::ir::{IrProgram, Role, SymbolDef};
pub use assign::{consistent_assignment, Assignment, AssignmentVariant, WeightMatrix};
pub use header::{
    binding_candidates, header_sizes, vote_binding, Binding, Choice, FieldIndex,
    DEFAULT_HEADER_CAP, DEFAULT_HEADER_START,
};
pub use rewrite::{
    enumerate_rewrites, rewrite_scope, vote, vote_cartesian, Candidate, Vote, Voting,
};

/// A concrete program with the input it was summarized from.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub program: &'a IrProgram,
    pub input: &'a [u8],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generalized {
    pub program: IrProgram,
    /// Indices into the examples that the program reproduces.
    pub supporters: Vec<usize>,
    pub used_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeneralizeError {
    NoExamples,
    SkeletonMismatch { index: usize },
    NoSupport,
}

impl fmt::Display for GeneralizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneralizeError::NoExamples => f.write_str("nothing to generalize"),
            GeneralizeError::SkeletonMismatch { index } => {
                write!(f, "example {index} has a different loop structure")
            }
            GeneralizeError::NoSupport => f.write_str("no example survives generalization"),
        }
    }
}

impl core::error::Error for GeneralizeError {}

/// Smallest offset any statement reads.
fn first_data_offset(program: &IrProgram) -> usize {
    program
        .nests()
        .filter_map(|n| program.value(&n.min_y))
        .min()
        .map_or(usize::MAX, |v| v.max(0) as usize)
}

/// Step for a single-level nest whose bound may be bound in input bytes
/// instead of records, or `None` when the nest does not qualify.
fn input_step(program: &IrProgram, nest: usize) -> Option<i64> {
    let n = program.nests().nth(nest)?;
    let [level] = n.levels.as_slice() else {
        return None;
    };
    let literal =
        |name: &str| matches!(program.symbols.get(name)?.def, SymbolDef::Literal).then_some(());
    literal(&level.in_factor)?;
    literal(&level.out_factor)?;
    if level.addend.is_some() || level.step != 1 {
        return None;
    }
    let step = program.value(&level.in_factor)?.checked_abs()?;
    let out = program.value(&level.out_factor)?;
    (step > 1 && out % step == 0).then_some(step)
}

/// Makes a single-level nest count in steps of `scale`.
fn apply_scale(program: &mut IrProgram, nest: usize, scale: i64) {
    let level = program.nests().nth(nest).expect("nest exists").levels[0].clone();
    for (name, mul, div) in [
        (&level.bound, scale, 1),
        (&level.in_factor, 1, scale),
        (&level.out_factor, 1, scale),
    ] {
        if let Some(s) = program.symbols.get_mut(name) {
            s.value = s.value * mul / div;
        }
    }
    program.nests_mut().nth(nest).expect("nest exists").levels[0].step = scale;
}

fn set_def(program: &mut IrProgram, name: &str, def: SymbolDef) {
    if let Some(s) = program.symbols.get_mut(name) {
        s.def = def;
    }
}

/// Generalizes `examples`, which must share one skeleton, with Cartesian
/// voting. Header fields are searched below `header_size` and below each
/// file's first data byte.
pub fn generalize(
    examples: &[Example],
    header_size: usize,
) -> Result<Generalized, GeneralizeError> {
    generalize_with(examples, header_size, Voting::Cartesian)
}

pub fn generalize_with(
    examples: &[Example],
    header_size: usize,
    voting: Voting,
) -> Result<Generalized, GeneralizeError> {
    let first = examples.first().ok_or(GeneralizeError::NoExamples)?;
    let key = first.program.skeleton_key();
    if let Some(index) = examples
        .iter()
        .position(|e| e.program.skeleton_key() != key)
    {
        return Err(GeneralizeError::SkeletonMismatch { index });
    }

    let vars = rewrite::rewritable(first.program);
    let per_file: Vec<Vec<Vec<Candidate>>> = examples
        .iter()
        .map(|e| {
            vars.iter()
                .map(|v| rewrite::candidates(e.program, v))
                .collect()
        })
        .collect();
    let vote = vote(&per_file, voting);
    let mut kept = vote.supporters.clone();
    let mut programs: Vec<IrProgram> = examples.iter().map(|e| e.program.clone()).collect();
    for &f in &kept {
        for (v, c) in vars.iter().zip(&vote.tuple) {
            set_def(&mut programs[f], v, c.def());
        }
    }

    let fields: Vec<Option<FieldIndex>> = (0..examples.len())
        .map(|f| {
            kept.contains(&f).then(|| {
                let limit = header_size.min(first_data_offset(&programs[f]));
                FieldIndex::new(examples[f].input, limit)
            })
        })
        .collect();
    for (name, nest, role) in header::binding_targets(first.program) {
        let scale = match role {
            Role::Bound { .. } => kept.first().and_then(|&f| input_step(&programs[f], nest)),
            _ => None,
        };
        let lists: Vec<Vec<Choice>> = kept
            .iter()
            .map(|&f| {
                let p = &programs[f];
                let idx = fields[f].as_ref().expect("index built for kept files");
                let value = p.value(&name).unwrap_or_default();
                let mut list: Vec<Choice> = binding_candidates(p, idx, nest, role, value)
                    .into_iter()
                    .map(Choice::plain)
                    .collect();
                if let Some(scale) = scale {
                    if let Some(scaled) = value.checked_mul(scale) {
                        list.extend(
                            binding_candidates(p, idx, nest, role, scaled)
                                .into_iter()
                                .filter(|b| !matches!(b, Binding::Literal(_)))
                                .map(|binding| Choice { binding, scale }),
                        );
                    }
                }
                list
            })
            .collect();
        let Some((choice, support)) = vote_binding(&lists) else {
            break;
        };
        kept = support.into_iter().map(|i| kept[i]).collect();
        for &f in &kept {
            if choice.scale != 1 {
                apply_scale(&mut programs[f], nest, choice.scale);
            }
            set_def(&mut programs[f], &name, choice.binding.def());
        }
    }

    // Everything chosen above holds by construction; recomputing each
    // symbol from the raw input is the independent check.
    let template = kept
        .first()
        .map(|&f| programs[f].clone())
        .ok_or(GeneralizeError::NoSupport)?;
    let supporters: Vec<usize> = kept
        .into_iter()
        .filter(|&f| {
            let want: alloc::collections::BTreeMap<_, _> = programs[f]
                .symbols
                .iter()
                .map(|(k, s)| (k.clone(), s.value))
                .collect();
            resolve_symbols(&template, examples[f].input).is_ok_and(|got| got == want)
        })
        .collect();
    let rep = *supporters.first().ok_or(GeneralizeError::NoSupport)?;
    let mut program = programs.swap_remove(rep);
    program.source = examples[rep].program.source.clone();
    Ok(Generalized {
        program,
        supporters,
        used_fallback: vote.used_fallback,
    })
}
