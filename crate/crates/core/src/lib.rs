//! Physics-informed operator learning on finite-element weighted-residual
//! losses for coupled thermo-mechanics.
//!
//! The crate trains neural operators (FNO, DeepONet, and a modulated
//! conditional neural field) by minimizing element-level FEM residuals
//! instead of labeled data, and ships a nonlinear FEM solver that serves
//! as the reference oracle for every prediction.
//!
//! Module map:
//! - [`mesh`]: structured grids, unstructured mesh ingestion, boundary sets.
//! - [`material`]: temperature-dependent material laws and Voigt matrices.
//! - [`fem`]: shape functions, quadrature, element residuals, training loss.
//! - [`solver`]: Newton-Raphson thermal solve, linear thermo-elastic solve,
//!   direct and BiCGSTAB linear backends.
//! - [`tape`]: reverse-mode gradient tape over the operator forward passes
//!   and the residual loss head.
//! - [`operators`]: the three neural-operator backbones.
//! - [`sampler`]: random microstructure generators.
//! - [`training`]: monolithic/staggered training loops, Adam, checkpoints.
//! - [`evalx`]: error metrics, timing benchmarks, VTK export.
//! - [`problems`]: the shipped problem setups (square plate, cubic RVE,
//!   casting surrogate) with their boundary-condition tables.

pub mod error;
pub mod evalx;
pub mod fem;
pub mod material;
pub mod mesh;
pub mod operators;
pub mod problems;
pub mod sampler;
pub mod solver;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
