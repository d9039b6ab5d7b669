//! Infers loop-structured binary parsers from byte-level execution traces.
//!
//! The pipeline: trace a reference parser ([`oracle`]), summarize each trace
//! into affine loop nests ([`summarize`]), generalize constants across files
//! ([`generalize`]), merge per-type parsers into a byte-predicate decision
//! tree ([`tree`]), then run it ([`interp`]) or emit C source ([`emit`]).

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod emit;
pub mod expr;
pub mod generalize;
pub mod interp;
pub mod ir;
pub mod lcg;
pub mod oracle;
pub mod summarize;
pub mod trace;
pub mod tree;
