//! Desk-scale benchmark for neural outfit compatibility and personalized
//! outfit generation: six model families, a synthetic data generator with
//! a planted (exactly checkable) compatibility rule, and the full metric
//! suite, wired into a reproducible experiment harness.

pub mod catalog;
pub mod eval;
pub mod generation;
pub mod harness;
pub mod models;
pub mod nn;
pub mod rng;
pub mod scoring;
pub mod synthgen;
