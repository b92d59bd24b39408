//! Freeway traffic density estimation with a Rao-Blackwellized particle
//! filter on a stochastic cell transmission model.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctm;
pub mod data;
pub mod fusion;
pub mod harness;
pub mod network;
pub mod rng;
pub mod smc;
