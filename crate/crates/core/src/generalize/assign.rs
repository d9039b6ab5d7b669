//! Picking one expression per variable so that as many files as possible
//! agree with every pick.
//!
//! Three strategies share one contract: the returned file set is non-empty
//! whenever any file exists, and every returned `(variable, expression)` pair
//! has positive weight in every returned file.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssignmentVariant {
    /// Follows the first file only.
    Simplest,
    /// Greedy on summed weight, rescanning every weight each round.
    Conceptual,
    /// Same picks as `Conceptual`, with incrementally maintained sums.
    Optimized,
}

/// Sparse `W[v][e][f]`; absent entries weigh zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WeightMatrix {
    vars: usize,
    exprs: usize,
    files: usize,
    w: BTreeMap<usize, BTreeMap<usize, BTreeMap<usize, u64>>>,
}

impl WeightMatrix {
    pub fn new(vars: usize, exprs: usize, files: usize) -> WeightMatrix {
        WeightMatrix {
            vars,
            exprs,
            files,
            w: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.vars, self.exprs, self.files)
    }

    /// Panics when an index is out of range.
    pub fn set(&mut self, v: usize, e: usize, f: usize, weight: u64) {
        assert!(
            v < self.vars && e < self.exprs && f < self.files,
            "index out of range"
        );
        let row = self.w.entry(v).or_default().entry(e).or_default();
        if weight == 0 {
            row.remove(&f);
        } else {
            row.insert(f, weight);
        }
    }

    pub fn get(&self, v: usize, e: usize, f: usize) -> u64 {
        self.w
            .get(&v)
            .and_then(|r| r.get(&e))
            .and_then(|r| r.get(&f))
            .copied()
            .unwrap_or(0)
    }

    /// Number of positive entries.
    pub fn nnz(&self) -> usize {
        self.w
            .values()
            .flat_map(|r| r.values())
            .map(|r| r.len())
            .sum()
    }

    fn positive(&self, v: usize) -> impl Iterator<Item = (usize, &BTreeMap<usize, u64>)> {
        self.w.get(&v).into_iter().flat_map(|r| {
            r.iter()
                .filter(|(_, fs)| !fs.is_empty())
                .map(|(e, fs)| (*e, fs))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// Ascending file indices.
    pub files: Vec<usize>,
    /// In the order they were chosen.
    pub assignments: Vec<(usize, usize)>,
    /// Weight subtractions performed by the optimized strategy.
    pub prunes: usize,
}

impl fmt::Display for AssignmentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssignmentVariant::Simplest => "simplest",
            AssignmentVariant::Conceptual => "conceptual",
            AssignmentVariant::Optimized => "optimized",
        })
    }
}

impl FromStr for AssignmentVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simplest" => Ok(AssignmentVariant::Simplest),
            "conceptual" => Ok(AssignmentVariant::Conceptual),
            "optimized" => Ok(AssignmentVariant::Optimized),
            _ => Err(format!(
                "unknown voting variant '{s}' (cartesian, simplest, conceptual, optimized)"
            )),
        }
    }
}

pub fn consistent_assignment(variant: AssignmentVariant, w: &WeightMatrix) -> Assignment {
    match variant {
        AssignmentVariant::Simplest => simplest(w),
        AssignmentVariant::Conceptual => conceptual(w),
        AssignmentVariant::Optimized => optimized(w),
    }
}

fn simplest(w: &WeightMatrix) -> Assignment {
    let mut files: Vec<usize> = (0..w.files).collect();
    let mut assignments = Vec::new();
    if let Some(&exemplar) = files.first() {
        for v in 0..w.vars {
            // Lowest positive weight for the exemplar; any would do.
            let pick = w
                .positive(v)
                .filter_map(|(e, fs)| fs.get(&exemplar).map(|&wt| (wt, e)))
                .min();
            if let Some((_, e)) = pick {
                assignments.push((v, e));
                files.retain(|&f| w.get(v, e, f) > 0);
            }
        }
    }
    Assignment {
        files,
        assignments,
        prunes: 0,
    }
}

fn conceptual(w: &WeightMatrix) -> Assignment {
    let mut files: Vec<usize> = (0..w.files).collect();
    let mut unassigned: BTreeSet<usize> = (0..w.vars).collect();
    let mut assignments = Vec::new();
    loop {
        let mut best: Option<(u64, usize, usize)> = None;
        for &v in &unassigned {
            for (e, fs) in w.positive(v) {
                let total: u64 = files.iter().filter_map(|f| fs.get(f)).sum();
                if total > 0 && best.is_none_or(|(b, _, _)| total > b) {
                    best = Some((total, v, e));
                }
            }
        }
        let Some((_, v, e)) = best else { break };
        assignments.push((v, e));
        unassigned.remove(&v);
        files.retain(|&f| w.get(v, e, f) > 0);
    }
    Assignment {
        files,
        assignments,
        prunes: 0,
    }
}

fn optimized(w: &WeightMatrix) -> Assignment {
    let mut sums: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut per_file: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for v in 0..w.vars {
        for (e, fs) in w.positive(v) {
            for (&f, &wt) in fs {
                *sums.entry((v, e)).or_default() += wt;
                per_file.entry(f).or_default().push((v, e));
            }
        }
    }
    let mut prunes = 0;
    let mut prune = |sums: &mut BTreeMap<(usize, usize), u64>, key: (usize, usize), f: usize| {
        prunes += 1;
        if let Some(s) = sums.get_mut(&key) {
            *s -= w.get(key.0, key.1, f);
            if *s == 0 {
                sums.remove(&key);
            }
        }
    };

    let mut remaining: BTreeSet<usize> = (0..w.files).collect();
    let mut assigned = BTreeSet::new();
    let mut assignments = Vec::new();
    loop {
        // Maximum sum; the map's order makes the smallest pair win ties.
        let mut best: Option<((usize, usize), u64)> = None;
        for (&key, &s) in &sums {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((key, s));
            }
        }
        let Some(((v, e), _)) = best else { break };
        assignments.push((v, e));

        let compatible: BTreeSet<usize> = w.w[&v][&e]
            .keys()
            .filter(|f| remaining.contains(f))
            .copied()
            .collect();
        for (e2, fs) in w.positive(v) {
            for &f in fs.keys() {
                if compatible.contains(&f) {
                    prune(&mut sums, (v, e2), f);
                }
            }
        }
        let dropped: Vec<usize> = remaining.difference(&compatible).copied().collect();
        for f in dropped {
            remaining.remove(&f);
            for &(v2, e2) in per_file.get(&f).map(Vec::as_slice).unwrap_or(&[]) {
                if !assigned.contains(&v2) {
                    prune(&mut sums, (v2, e2), f);
                }
            }
        }
        assigned.insert(v);
    }
    Assignment {
        files: remaining.into_iter().collect(),
        assignments,
        prunes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcg::Lcg;

    const ALL: [AssignmentVariant; 3] = [
        AssignmentVariant::Simplest,
        AssignmentVariant::Conceptual,
        AssignmentVariant::Optimized,
    ];

    fn random(rng: &mut Lcg, max: u64, density: u64) -> WeightMatrix {
        let (v, e, f) = (
            rng.range(1, max) as usize,
            rng.range(1, max) as usize,
            rng.range(1, max) as usize,
        );
        let mut w = WeightMatrix::new(v, e, f);
        for a in 0..v {
            for b in 0..e {
                for c in 0..f {
                    if rng.range(0, 99) < density {
                        w.set(a, b, c, 1);
                    }
                }
            }
        }
        w
    }

    #[test]
    fn single_entry() {
        let mut w = WeightMatrix::new(1, 1, 1);
        w.set(0, 0, 0, 1);
        for variant in ALL {
            let a = consistent_assignment(variant, &w);
            assert_eq!(a.files, [0]);
            assert_eq!(a.assignments, [(0, 0)]);
        }
    }

    #[test]
    fn optimized_matches_conceptual() {
        let mut rng = Lcg::new(17);
        for i in 0..1000 {
            let w = random(&mut rng, 6, [20, 50, 90][i % 3]);
            let c = consistent_assignment(AssignmentVariant::Conceptual, &w);
            let o = consistent_assignment(AssignmentVariant::Optimized, &w);
            assert_eq!(
                (&c.files, &c.assignments),
                (&o.files, &o.assignments),
                "{w:?}"
            );
            assert!(o.prunes <= w.nnz());
        }
    }

    #[test]
    fn every_variant_is_consistent() {
        let mut rng = Lcg::new(3);
        for _ in 0..300 {
            let w = random(&mut rng, 6, 60);
            for variant in ALL {
                let a = consistent_assignment(variant, &w);
                assert!(!a.files.is_empty());
                for &(v, e) in &a.assignments {
                    assert!(a.files.iter().all(|&f| w.get(v, e, f) > 0));
                }
            }
        }
    }

    #[test]
    fn greedy_can_lose_files_that_exhaustive_search_keeps() {
        // Two picks tie on weight 3; the tie goes to (0, 0), which strands
        // file 3 and then splits off file 0.
        let mut w = WeightMatrix::new(2, 3, 4);
        for f in [0, 1, 2] {
            w.set(0, 0, f, 1);
        }
        for f in [1, 2, 3] {
            w.set(0, 1, f, 1);
            w.set(1, 2, f, 1);
        }
        w.set(1, 1, 0, 1);
        let greedy = consistent_assignment(AssignmentVariant::Conceptual, &w);
        assert_eq!(greedy.files, [1, 2]);
        assert_eq!(brute_force(&w), 3);
    }

    fn brute_force(w: &WeightMatrix) -> usize {
        let (v, e, f) = w.dims();
        let mut best = 0;
        let mut tuple = alloc::vec![0usize; v];
        loop {
            let ok = (0..f)
                .filter(|&file| (0..v).all(|var| w.get(var, tuple[var], file) > 0))
                .count();
            best = best.max(ok);
            let mut k = 0;
            loop {
                if k == v {
                    return best;
                }
                tuple[k] += 1;
                if tuple[k] < e {
                    break;
                }
                tuple[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn greedy_never_beats_exhaustive() {
        let mut rng = Lcg::new(99);
        for _ in 0..200 {
            let w = random(&mut rng, 5, 50);
            let greedy = consistent_assignment(AssignmentVariant::Conceptual, &w);
            let (v, _, _) = w.dims();
            if greedy.assignments.len() == v {
                assert!(greedy.files.len() <= brute_force(&w));
            }
        }
    }
}
