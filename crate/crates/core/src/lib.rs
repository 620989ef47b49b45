//! Numerical experiments with Perelman's lambda-functional and Ricci-type
//! flows on discretized flat tori.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exec;
mod fft;
pub mod flows;
pub mod gauge;
pub mod geometry;
pub mod grid;
pub mod lab;
mod krylov;
pub mod nodal;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{
    sym_index, ChristoffelField, MetricField, ScalarField, SymTensorField, TorusGrid, VectorField,
};
