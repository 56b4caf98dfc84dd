//! Finite-element machinery: shape functions, quadrature, element kernels,
//! and weighted-residual loss assembly.

pub mod kernel;
pub mod loss;
pub mod shape;

pub use kernel::{
    element_mechanical_residual, element_mechanical_system, element_thermal_residual,
    element_thermal_tangent, ElementKernelCache, KernelCacheStore, KernelPoint,
};
pub use loss::{
    apply_dirichlet, assemble_loss, assemble_residuals, assemble_residuals_frozen_coeffs,
    GlobalResiduals, LossMode, SolutionState,
};
pub use shape::{quadrature, shape_functions, QuadratureRule};
