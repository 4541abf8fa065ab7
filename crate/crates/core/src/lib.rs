//! Hellinger–Kantorovich geometry on finite discrete measures.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bessel;
pub mod cone;
pub mod cylinder;
pub mod error;
pub mod expr;
pub mod io;
pub mod let_solver;
pub mod measure;
pub mod potentials;
mod quad;
pub mod random_measures;
pub mod regularize;
pub mod transport;

pub use cone::{ConePoint, LetKind};
pub use error::{Error, Result};
pub use let_solver::{ghk_sq, hk_sq, solve_let, LetProblem, LetSolution};
pub use measure::DiscreteMeasure;
