//! Numerical laboratory for abelian affine vortices: scalar Taubes solves,
//! gauged fields on uniform grids, weighted norms, pregluing of broken
//! configurations and Newton correction to exact discrete solutions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod disk;
pub mod field;
pub mod grid;
pub mod linearized;
pub mod newton;
pub mod norms;
pub mod poly;
pub mod preglue;
pub mod reduce;
pub mod sparse;
pub mod taubes;
pub mod target_model;

pub use num_complex::Complex64;
