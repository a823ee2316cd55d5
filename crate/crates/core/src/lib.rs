// NaN-rejecting checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod changedet;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod featureng;
pub mod netgen;
pub mod pipeline;
pub mod scene;
pub mod scenegen;
pub mod seeds;

pub use error::{Error, Result};
