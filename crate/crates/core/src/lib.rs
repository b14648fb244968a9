// `!(x > 0.0)` guards intentionally reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod aero;
pub mod env;
pub mod nn;
pub mod ppo;
pub mod transfer;
pub mod pso;
pub mod eval;
pub mod cli;
