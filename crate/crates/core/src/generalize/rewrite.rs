//! Rewriting loop factors and addends in terms of other symbols.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::assign::{consistent_assignment, AssignmentVariant, WeightMatrix};
use crate::ir::{IrProgram, Rewrite, Role, SymbolDef};

/// Upper limit on tuples enumerated for one file before voting switches to
/// the greedy assignment.
pub const CARTESIAN_CAP: usize = 1_000_000;

/// One possible definition for a rewritable symbol.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Candidate {
    Rewrite(Rewrite),
    Literal(i64),
}

impl Candidate {
    pub fn def(&self) -> SymbolDef {
        match self {
            Candidate::Rewrite(r) => SymbolDef::Rewrite(r.clone()),
            Candidate::Literal(_) => SymbolDef::Literal,
        }
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::Rewrite(r) => write!(f, "{r}"),
            Candidate::Literal(v) => write!(f, "{v}"),
        }
    }
}

/// Factor and addend symbols, in declaration order.
pub fn rewritable(program: &IrProgram) -> Vec<String> {
    program
        .symbol_infos()
        .into_iter()
        .filter(|i| {
            matches!(
                i.role,
                Role::OutFactor { .. } | Role::InFactor { .. } | Role::Addend { .. }
            )
        })
        .map(|i| i.name)
        .collect()
}

/// Symbols a rewrite of `var` may mention: bounds of the same nest at the
/// same or inner levels, then factors at strictly inner levels.
pub fn rewrite_scope(program: &IrProgram, var: &str) -> Vec<String> {
    let infos = program.symbol_infos();
    let Some(me) = infos.iter().find(|i| i.name == var) else {
        return Vec::new();
    };
    let level = match me.role {
        Role::OutFactor { level } | Role::InFactor { level } | Role::Addend { level } => level,
        _ => return Vec::new(),
    };
    let same_nest = || infos.iter().filter(|i| i.nest == me.nest);
    let mut scope: Vec<String> = same_nest()
        .filter(|i| matches!(i.role, Role::Bound { level: l } if l <= level))
        .map(|i| i.name.clone())
        .collect();
    scope.extend(
        same_nest()
            .filter(|i| {
                matches!(i.role, Role::OutFactor { level: l } | Role::InFactor { level: l } if l < level)
            })
            .map(|i| i.name.clone()),
    );
    scope
}

/// Every template instance over in-scope symbols that reproduces the
/// value of `var` in `program`.
pub fn enumerate_rewrites(program: &IrProgram, var: &str) -> Vec<Rewrite> {
    let Some(target) = program.value(var) else {
        return Vec::new();
    };
    let scope = rewrite_scope(program, var);
    let lookup = |n: &str| program.value(n);
    let mut out = Vec::new();
    for x in &scope {
        let r = Rewrite::OneMinus(x.clone());
        if r.eval(lookup) == Some(target) {
            out.push(r);
        }
    }
    for (i, x) in scope.iter().enumerate() {
        for y in &scope[i..] {
            let (x, y) = (x.clone(), y.clone());
            for r in [
                Rewrite::Mul(x.clone(), y.clone()),
                Rewrite::NegMul(x.clone(), y.clone()),
                Rewrite::Pad4Mul(x.clone(), y.clone()),
                Rewrite::Pad4NegMul(x, y),
            ] {
                if r.eval(lookup) == Some(target) {
                    out.push(r);
                }
            }
        }
    }
    out
}

/// Rewrites for `var`, or its literal value when nothing matches.
pub fn candidates(program: &IrProgram, var: &str) -> Vec<Candidate> {
    let rewrites = enumerate_rewrites(program, var);
    if rewrites.is_empty() {
        program
            .value(var)
            .map(Candidate::Literal)
            .into_iter()
            .collect()
    } else {
        rewrites.into_iter().map(Candidate::Rewrite).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub tuple: Vec<Candidate>,
    pub votes: usize,
    /// Files whose candidate lists contain the whole tuple.
    pub supporters: Vec<usize>,
    pub used_fallback: bool,
}

fn tie_key(tuple: &[Candidate]) -> (usize, String) {
    let parts: Vec<String> = tuple.iter().map(|c| format!("{c}")).collect();
    (parts.iter().map(String::len).sum(), parts.join(";"))
}

fn supporters(per_file: &[Vec<Vec<Candidate>>], tuple: &[Candidate]) -> Vec<usize> {
    (0..per_file.len())
        .filter(|&f| {
            tuple
                .iter()
                .zip(&per_file[f])
                .all(|(c, list)| list.contains(c))
        })
        .collect()
}

/// Picks one candidate per variable by counting, for each tuple of the
/// per-file Cartesian products, how many files produce it. `per_file[f][v]`
/// lists the candidates for variable `v` in file `f`.
///
/// Ties go to the shorter rendering, then the lexicographically smaller one.
pub fn vote_cartesian(per_file: &[Vec<Vec<Candidate>>]) -> Vote {
    let vars = per_file.first().map_or(0, Vec::len);
    let oversized = per_file.iter().any(|lists| {
        lists
            .iter()
            .try_fold(1usize, |acc, l| {
                acc.checked_mul(l.len()).filter(|&n| n <= CARTESIAN_CAP)
            })
            .is_none()
    });
    if oversized {
        return vote_greedy(per_file, vars);
    }

    let mut counts: BTreeMap<Vec<&Candidate>, usize> = BTreeMap::new();
    for lists in per_file {
        if lists.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = alloc::vec![0usize; vars];
        loop {
            let tuple: Vec<&Candidate> = idx.iter().zip(lists).map(|(&i, l)| &l[i]).collect();
            *counts.entry(tuple).or_default() += 1;
            let mut k = vars;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < lists[k].len() {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    let best = counts
        .into_iter()
        .map(|(t, n)| (t.into_iter().cloned().collect::<Vec<_>>(), n))
        .min_by(|(ta, na), (tb, nb)| nb.cmp(na).then_with(|| tie_key(ta).cmp(&tie_key(tb))));
    match best {
        Some((tuple, votes)) => Vote {
            supporters: supporters(per_file, &tuple),
            tuple,
            votes,
            used_fallback: false,
        },
        None => Vote {
            tuple: Vec::new(),
            votes: 0,
            supporters: Vec::new(),
            used_fallback: false,
        },
    }
}

/// How one rewrite per variable is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Voting {
    /// Count every tuple; falls back to the optimized assignment when a
    /// file's product exceeds [`CARTESIAN_CAP`].
    #[default]
    Cartesian,
    Assignment(AssignmentVariant),
}

impl fmt::Display for Voting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Voting::Cartesian => f.write_str("cartesian"),
            Voting::Assignment(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Voting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cartesian" => Ok(Voting::Cartesian),
            _ => s.parse().map(Voting::Assignment),
        }
    }
}

pub fn vote(per_file: &[Vec<Vec<Candidate>>], voting: Voting) -> Vote {
    let vars = per_file.first().map_or(0, Vec::len);
    match voting {
        Voting::Cartesian => vote_cartesian(per_file),
        Voting::Assignment(variant) => vote_assignment(per_file, vars, variant),
    }
}

fn vote_greedy(per_file: &[Vec<Vec<Candidate>>], vars: usize) -> Vote {
    vote_assignment(per_file, vars, AssignmentVariant::Optimized)
}

fn vote_assignment(
    per_file: &[Vec<Vec<Candidate>>],
    vars: usize,
    variant: AssignmentVariant,
) -> Vote {
    let mut universe: Vec<&Candidate> = per_file.iter().flatten().flatten().collect();
    universe.sort();
    universe.dedup();
    let mut w = WeightMatrix::new(vars, universe.len(), per_file.len());
    for (f, lists) in per_file.iter().enumerate() {
        for (v, list) in lists.iter().enumerate() {
            for c in list {
                let e = universe.binary_search(&c).unwrap_or_default();
                w.set(v, e, f, 1);
            }
        }
    }
    let result = consistent_assignment(variant, &w);
    let mut tuple: Vec<Option<Candidate>> = alloc::vec![None; vars];
    for (v, e) in result.assignments {
        tuple[v] = Some(universe[e].clone());
    }
    // A variable nobody could assign takes the first remaining file's pick,
    // or any file's when that file has none.
    let first = result.files.first().copied().unwrap_or(0);
    let filled: Option<Vec<Candidate>> = tuple
        .into_iter()
        .enumerate()
        .map(|(v, c)| {
            c.or_else(|| per_file.get(first)?.get(v)?.first().cloned())
                .or_else(|| {
                    per_file
                        .iter()
                        .find_map(|lists| lists.get(v)?.first().cloned())
                })
        })
        .collect();
    let Some(tuple) = filled else {
        return Vote {
            tuple: Vec::new(),
            votes: 0,
            supporters: Vec::new(),
            used_fallback: true,
        };
    };
    let supporters = supporters(per_file, &tuple);
    Vote {
        votes: supporters.len(),
        tuple,
        supporters,
        used_fallback: true,
    }
}
