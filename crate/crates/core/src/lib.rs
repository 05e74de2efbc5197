//! Numerical laboratory for local-in-position weak values, Bohmian
//! trajectories and the von Neumann weak-measurement chain in one dimension.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bohm;
pub mod harness;
pub mod intrinsics;
pub mod measure;
pub mod qgrid;
pub mod seed;
pub mod weakval;
