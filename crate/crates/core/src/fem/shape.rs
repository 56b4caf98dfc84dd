//! Reference-element shape functions and quadrature rules.

use crate::error::{Error, Result};
use crate::mesh::ElemKind;

/// Quadrature points and weights on the reference element. Weights sum to
/// the reference volume: 4 (quad4), 8 (hex8), 1/6 (tet4).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// 2x2 Gauss for quad4, 2x2x2 for hex8, 4-point rule for tet4.
pub fn quadrature(kind: ElemKind) -> QuadratureRule {
    let g = 1.0 / 3.0_f64.sqrt();
    match kind {
        ElemKind::Quad4 => {
            let mut points = Vec::new();
            for &eta in &[-g, g] {
                for &xi in &[-g, g] {
                    points.push([xi, eta, 0.0]);
                }
            }
            QuadratureRule { weights: vec![1.0; 4], points }
        }
        ElemKind::Hex8 => {
            let mut points = Vec::new();
            for &zeta in &[-g, g] {
                for &eta in &[-g, g] {
                    for &xi in &[-g, g] {
                        points.push([xi, eta, zeta]);
                    }
                }
            }
            QuadratureRule { weights: vec![1.0; 8], points }
        }
        ElemKind::Tet4 => {
            let a = (5.0 + 3.0 * 5.0_f64.sqrt()) / 20.0;
            let b = (5.0 - 5.0_f64.sqrt()) / 20.0;
            QuadratureRule {
                points: vec![[b, b, b], [a, b, b], [b, a, b], [b, b, a]],
                weights: vec![1.0 / 24.0; 4],
            }
        }
    }
}

/// Shape functions N and reference-space gradients dN/dxi at `xi`.
/// `dn` is returned node-major: dn[a * dim + j] = dN_a / dxi_j.
pub fn shape_functions(kind: ElemKind, xi: &[f64; 3]) -> (Vec<f64>, Vec<f64>) {
    let (x, y, z) = (xi[0], xi[1], xi[2]);
    match kind {
        ElemKind::Quad4 => {
            let n = vec![
                0.25 * (1.0 - x) * (1.0 - y),
                0.25 * (1.0 + x) * (1.0 - y),
                0.25 * (1.0 + x) * (1.0 + y),
                0.25 * (1.0 - x) * (1.0 + y),
            ];
            let dn = vec![
                -0.25 * (1.0 - y), -0.25 * (1.0 - x), //
                0.25 * (1.0 - y), -0.25 * (1.0 + x), //
                0.25 * (1.0 + y), 0.25 * (1.0 + x), //
                -0.25 * (1.0 + y), 0.25 * (1.0 - x),
            ];
            (n, dn)
        }
        ElemKind::Hex8 => {
            // Signs per corner, bottom face first.
            const S: [[f64; 3]; 8] = [
                [-1.0, -1.0, -1.0],
                [1.0, -1.0, -1.0],
                [1.0, 1.0, -1.0],
                [-1.0, 1.0, -1.0],
                [-1.0, -1.0, 1.0],
                [1.0, -1.0, 1.0],
                [1.0, 1.0, 1.0],
                [-1.0, 1.0, 1.0],
            ];
            let mut n = Vec::with_capacity(8);
            let mut dn = Vec::with_capacity(24);
            for s in &S {
                let fx = 1.0 + s[0] * x;
                let fy = 1.0 + s[1] * y;
                let fz = 1.0 + s[2] * z;
                n.push(0.125 * fx * fy * fz);
                dn.push(0.125 * s[0] * fy * fz);
                dn.push(0.125 * fx * s[1] * fz);
                dn.push(0.125 * fx * fy * s[2]);
            }
            (n, dn)
        }
        ElemKind::Tet4 => {
            let n = vec![1.0 - x - y - z, x, y, z];
            let dn = vec![
                -1.0, -1.0, -1.0, //
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0,
            ];
            (n, dn)
        }
    }
}

/// Jacobian J[i][j] = d x_i / d xi_j at a point, from node-major dn and
/// element coordinates xe (node-major, dim entries per node).
pub fn jacobian(dim: usize, npe: usize, dn: &[f64], xe: &[f64]) -> [[f64; 3]; 3] {
    let mut j = [[0.0; 3]; 3];
    for a in 0..npe {
        for i in 0..dim {
            for jj in 0..dim {
                j[i][jj] += xe[a * dim + i] * dn[a * dim + jj];
            }
        }
    }
    j
}

pub fn det(dim: usize, j: &[[f64; 3]; 3]) -> f64 {
    if dim == 2 {
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    } else {
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    }
}

pub fn jacobian_det(dim: usize, npe: usize, dn: &[f64], xe: &[f64]) -> f64 {
    det(dim, &jacobian(dim, npe, dn, xe))
}

/// Inverse of the (dim x dim) Jacobian.
pub fn invert(dim: usize, j: &[[f64; 3]; 3], detj: f64) -> Result<[[f64; 3]; 3]> {
    if detj <= 0.0 {
        return Err(Error::MeshConstruction(format!("nonpositive Jacobian determinant {detj:.3e}")));
    }
    let mut inv = [[0.0; 3]; 3];
    if dim == 2 {
        inv[0][0] = j[1][1] / detj;
        inv[0][1] = -j[0][1] / detj;
        inv[1][0] = -j[1][0] / detj;
        inv[1][1] = j[0][0] / detj;
    } else {
        inv[0][0] = (j[1][1] * j[2][2] - j[1][2] * j[2][1]) / detj;
        inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / detj;
        inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / detj;
        inv[1][0] = (j[1][2] * j[2][0] - j[1][0] * j[2][2]) / detj;
        inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / detj;
        inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / detj;
        inv[2][0] = (j[1][0] * j[2][1] - j[1][1] * j[2][0]) / detj;
        inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / detj;
        inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / detj;
    }
    Ok(inv)
}
