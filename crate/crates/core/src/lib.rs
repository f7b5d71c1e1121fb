#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod app;
pub mod calculus;
pub mod config;
pub mod control;
pub mod diffusion;
pub mod error;
pub mod estimate;
pub mod expr;
pub mod functional;
pub mod mild;
pub mod nonlinearity;
pub mod path;
pub mod rng;
pub mod viscosity;
