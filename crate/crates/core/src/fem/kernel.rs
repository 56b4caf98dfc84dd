//! Element kernels: cached shape data per quadrature point and the thermal
//! and mechanical element residuals and tangents.

use crate::error::{Error, Result};
use crate::material::{self, MaterialLaw};
use crate::mesh::{ElemKind, Mesh};

use super::shape::{self, quadrature};

/// Per-quadrature-point shape data for one element.
#[derive(Debug, Clone)]
pub struct KernelPoint {
    /// Shape function row N (npe).
    pub n: Vec<f64>,
    /// Gradient matrix B_t, row-major (dim x npe): B_t[i][a] = dN_a/dx_i.
    pub b_t: Vec<f64>,
    /// Strain-displacement matrix B_u, row-major (nvoigt x npe*dim),
    /// interleaved displacement ordering.
    pub b_u: Vec<f64>,
    /// Quadrature weight times det(J).
    pub wk: f64,
}

/// Shape data for every quadrature point of one element.
#[derive(Debug, Clone)]
pub struct ElementKernelCache {
    pub kind: ElemKind,
    pub points: Vec<KernelPoint>,
}

impl ElementKernelCache {
    /// Build from element coordinates `xe` (node-major, dim per node).
    pub fn build(kind: ElemKind, xe: &[f64]) -> Result<Self> {
        let dim = kind.dim();
        let npe = kind.nodes_per_elem();
        let nv = material::voigt_size(dim);
        let rule = quadrature(kind);
        let mut points = Vec::with_capacity(rule.points.len());
        for (pt, &w) in rule.points.iter().zip(&rule.weights) {
            let (n, dn) = shape::shape_functions(kind, pt);
            let j = shape::jacobian(dim, npe, &dn, xe);
            let detj = shape::det(dim, &j);
            if detj <= 0.0 {
                return Err(Error::MeshConstruction(format!(
                    "nonpositive Jacobian determinant {detj:.3e} while building kernel cache"
                )));
            }
            let inv = shape::invert(dim, &j, detj)?;
            // dN_a/dx_i = sum_j dN_a/dxi_j * inv[j][i]
            let mut b_t = vec![0.0; dim * npe];
            for a in 0..npe {
                for i in 0..dim {
                    let mut v = 0.0;
                    for jj in 0..dim {
                        v += dn[a * dim + jj] * inv[jj][i];
                    }
                    b_t[i * npe + a] = v;
                }
            }
            let mut b_u = vec![0.0; nv * npe * dim];
            let cols = npe * dim;
            for a in 0..npe {
                let dx = b_t[a];
                let dy = b_t[npe + a];
                if dim == 2 {
                    b_u[a * dim] = dx; // eps_xx <- u_x
                    b_u[cols + a * dim + 1] = dy; // eps_yy <- u_y
                    b_u[2 * cols + a * dim] = dy; // gamma_xy <- u_x
                    b_u[2 * cols + a * dim + 1] = dx; // gamma_xy <- u_y
                } else {
                    let dz = b_t[2 * npe + a];
                    b_u[a * dim] = dx;
                    b_u[cols + a * dim + 1] = dy;
                    b_u[2 * cols + a * dim + 2] = dz;
                    // gamma_yz
                    b_u[3 * cols + a * dim + 1] = dz;
                    b_u[3 * cols + a * dim + 2] = dy;
                    // gamma_xz
                    b_u[4 * cols + a * dim] = dz;
                    b_u[4 * cols + a * dim + 2] = dx;
                    // gamma_xy
                    b_u[5 * cols + a * dim] = dy;
                    b_u[5 * cols + a * dim + 1] = dx;
                }
            }
            points.push(KernelPoint { n, b_t, b_u, wk: w * detj });
        }
        Ok(ElementKernelCache { kind, points })
    }
}

/// Kernel caches for a whole mesh. Structured grids share a single cache
/// since all elements are congruent; unstructured meshes store one per
/// element.
#[derive(Debug, Clone)]
pub enum KernelCacheStore {
    Shared(ElementKernelCache),
    PerElement(Vec<ElementKernelCache>),
}

impl KernelCacheStore {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        let npe = mesh.elem_kind.nodes_per_elem();
        let mut xe = vec![0.0; npe * mesh.dim];
        if mesh.structured_info().is_some() {
            mesh.gather_coords(0, &mut xe);
            Ok(KernelCacheStore::Shared(ElementKernelCache::build(mesh.elem_kind, &xe)?))
        } else {
            let mut caches = Vec::with_capacity(mesh.n_elements());
            for e in 0..mesh.n_elements() {
                mesh.gather_coords(e, &mut xe);
                caches.push(ElementKernelCache::build(mesh.elem_kind, &xe)?);
            }
            Ok(KernelCacheStore::PerElement(caches))
        }
    }

    pub fn get(&self, element: usize) -> &ElementKernelCache {
        match self {
            KernelCacheStore::Shared(c) => c,
            KernelCacheStore::PerElement(v) => &v[element],
        }
    }
}

/// Thermal element residual r_t = sum_k W_k B_t^T k(T) (B_t Te) - source
/// term, with k evaluated from interpolated k0 and T at each point.
/// `source` is a constant body source (zero in all shipped configs).
pub fn element_thermal_residual(
    cache: &ElementKernelCache,
    law: MaterialLaw,
    te: &[f64],
    k0e: &[f64],
    source: f64,
    out: &mut [f64],
) {
    let npe = te.len();
    let dim = cache.kind.dim();
    out.iter_mut().for_each(|v| *v = 0.0);
    for p in &cache.points {
        let mut t = 0.0;
        let mut k0 = 0.0;
        for a in 0..npe {
            t += p.n[a] * te[a];
            k0 += p.n[a] * k0e[a];
        }
        let k = match law {
            MaterialLaw::TemperatureDependent => material::conductivity(k0, t),
            MaterialLaw::Linear => k0,
        };
        // grad = B_t Te
        let mut grad = [0.0; 3];
        for i in 0..dim {
            for a in 0..npe {
                grad[i] += p.b_t[i * npe + a] * te[a];
            }
        }
        let wk_k = p.wk * k;
        for a in 0..npe {
            let mut v = 0.0;
            for i in 0..dim {
                v += p.b_t[i * npe + a] * grad[i];
            }
            out[a] += wk_k * v - p.wk * p.n[a] * source;
        }
    }
}

/// Thermal element tangent dK = sum_k W_k [B^T k B + B^T (dk/dT)(B Te) N],
/// row-major npe x npe.
pub fn element_thermal_tangent(
    cache: &ElementKernelCache,
    law: MaterialLaw,
    te: &[f64],
    k0e: &[f64],
    out: &mut [f64],
) {
    let npe = te.len();
    let dim = cache.kind.dim();
    out.iter_mut().for_each(|v| *v = 0.0);
    for p in &cache.points {
        let mut t = 0.0;
        let mut k0 = 0.0;
        for a in 0..npe {
            t += p.n[a] * te[a];
            k0 += p.n[a] * k0e[a];
        }
        let (k, dk) = match law {
            MaterialLaw::TemperatureDependent => {
                (material::conductivity(k0, t), material::conductivity_dt(k0, t))
            }
            MaterialLaw::Linear => (k0, 0.0),
        };
        let mut grad = [0.0; 3];
        for i in 0..dim {
            for a in 0..npe {
                grad[i] += p.b_t[i * npe + a] * te[a];
            }
        }
        for a in 0..npe {
            let mut bg = 0.0;
            for i in 0..dim {
                bg += p.b_t[i * npe + a] * grad[i];
            }
            for b in 0..npe {
                let mut bb = 0.0;
                for i in 0..dim {
                    bb += p.b_t[i * npe + a] * p.b_t[i * npe + b];
                }
                out[a * npe + b] += p.wk * (k * bb + dk * bg * p.n[b]);
            }
        }
    }
}

/// Mechanical element residual
/// r_u = sum_k W_k B_u^T D(T) (B_u Ue - thermal strain), interleaved DOFs.
#[allow(clippy::too_many_arguments)]
pub fn element_mechanical_residual(
    cache: &ElementKernelCache,
    law: MaterialLaw,
    ue: &[f64],
    te: &[f64],
    t0e: &[f64],
    e0e: &[f64],
    nu: f64,
    alpha: f64,
    out: &mut [f64],
) -> Result<()> {
    let dim = cache.kind.dim();
    let npe = te.len();
    let nv = material::voigt_size(dim);
    let cols = npe * dim;
    out.iter_mut().for_each(|v| *v = 0.0);
    for p in &cache.points {
        let mut t = 0.0;
        let mut t0 = 0.0;
        let mut e0 = 0.0;
        for a in 0..npe {
            t += p.n[a] * te[a];
            t0 += p.n[a] * t0e[a];
            e0 += p.n[a] * e0e[a];
        }
        let e = match law {
            MaterialLaw::TemperatureDependent => material::youngs_modulus(e0, t)?,
            MaterialLaw::Linear => e0,
        };
        let d = material::elasticity_matrix(e, nu, dim)?;
        // strain = B_u Ue minus thermal part on the normal components
        let mut eps = [0.0; 6];
        for i in 0..nv {
            for c in 0..cols {
                eps[i] += p.b_u[i * cols + c] * ue[c];
            }
        }
        // subtract the thermal strain from the normal components (0..dim)
        let eth = alpha * (t - t0);
        for item in eps.iter_mut().take(dim) {
            *item -= eth;
        }
        let mut sigma = [0.0; 6];
        for i in 0..nv {
            for j in 0..nv {
                sigma[i] += d[i * nv + j] * eps[j];
            }
        }
        for c in 0..cols {
            let mut v = 0.0;
            for i in 0..nv {
                v += p.b_u[i * cols + c] * sigma[i];
            }
            out[c] += p.wk * v;
        }
    }
    Ok(())
}

/// Mechanical element stiffness K_e = sum W B^T D B and thermal load
/// f_e = sum W B^T D eps_t, both at the given temperatures.
#[allow(clippy::too_many_arguments)]
pub fn element_mechanical_system(
    cache: &ElementKernelCache,
    law: MaterialLaw,
    te: &[f64],
    t0e: &[f64],
    e0e: &[f64],
    nu: f64,
    alpha: f64,
    k_out: &mut [f64],
    f_out: &mut [f64],
) -> Result<()> {
    let dim = cache.kind.dim();
    let npe = te.len();
    let nv = material::voigt_size(dim);
    let cols = npe * dim;
    k_out.iter_mut().for_each(|v| *v = 0.0);
    f_out.iter_mut().for_each(|v| *v = 0.0);
    let mut db = vec![0.0; nv * cols];
    for p in &cache.points {
        let mut t = 0.0;
        let mut t0 = 0.0;
        let mut e0 = 0.0;
        for a in 0..npe {
            t += p.n[a] * te[a];
            t0 += p.n[a] * t0e[a];
            e0 += p.n[a] * e0e[a];
        }
        let e = match law {
            MaterialLaw::TemperatureDependent => material::youngs_modulus(e0, t)?,
            MaterialLaw::Linear => e0,
        };
        let d = material::elasticity_matrix(e, nu, dim)?;
        // db = D B
        for i in 0..nv {
            for c in 0..cols {
                let mut v = 0.0;
                for j in 0..nv {
                    v += d[i * nv + j] * p.b_u[j * cols + c];
                }
                db[i * cols + c] = v;
            }
        }
        for r in 0..cols {
            for c in 0..cols {
                let mut v = 0.0;
                for i in 0..nv {
                    v += p.b_u[i * cols + r] * db[i * cols + c];
                }
                k_out[r * cols + c] += p.wk * v;
            }
        }
        let eps_t = material::thermal_strain_voigt(alpha, t, t0, dim);
        let mut dst = [0.0; 6];
        for i in 0..nv {
            for j in 0..nv {
                dst[i] += d[i * nv + j] * eps_t[j];
            }
        }
        for c in 0..cols {
            let mut v = 0.0;
            for i in 0..nv {
                v += p.b_u[i * cols + c] * dst[i];
            }
            f_out[c] += p.wk * v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_grid;
    use approx::assert_relative_eq;

    fn unit_square_cache() -> ElementKernelCache {
        let xe = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        ElementKernelCache::build(ElemKind::Quad4, &xe).unwrap()
    }

    #[test]
    fn partition_of_unity_and_bt_annihilates_constants() {
        let m = build_structured_grid(3, &[3, 3, 3], &[1.0, 2.0, 0.5]).unwrap();
        let store = KernelCacheStore::build(&m).unwrap();
        let cache = store.get(0);
        for p in &cache.points {
            let sum: f64 = p.n.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);
            let npe = p.n.len();
            for i in 0..3 {
                let row_sum: f64 = (0..npe).map(|a| p.b_t[i * npe + a]).sum();
                assert!(row_sum.abs() < 1e-12, "B_t row {i} sums to {row_sum}");
            }
        }
    }

    #[test]
    fn constant_temperature_gives_zero_residual() {
        let cache = unit_square_cache();
        let te = [0.7; 4];
        let k0 = [1.3, 0.5, 0.9, 1.1];
        let mut r = [0.0; 4];
        element_thermal_residual(&cache, MaterialLaw::TemperatureDependent, &te, &k0, 0.0, &mut r);
        for v in r {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn unit_square_conduction_matrix_is_golden() {
        // Exact integration of B^T B over the unit square for bilinear
        // shape functions gives (1/6) [[4,-1,-2,-1],...] -- frozen here as
        // the symbolic oracle.
        let golden = [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ];
        let cache = unit_square_cache();
        let k0 = [1.0; 4];
        for col in 0..4 {
            let mut te = [0.0; 4];
            te[col] = 1.0;
            let mut r = [0.0; 4];
            element_thermal_residual(&cache, MaterialLaw::Linear, &te, &k0, 0.0, &mut r);
            for row in 0..4 {
                assert!(
                    (r[row] - golden[row][col] / 6.0).abs() < 1e-12,
                    "K[{row}][{col}] = {} != {}",
                    r[row],
                    golden[row][col] / 6.0
                );
            }
        }
    }

    #[test]
    fn interior_residual_vanishes_for_linear_profile() {
        // Two-element strip with a linear-in-x temperature profile: with
        // constant conductivity the interior nodes carry zero residual.
        let m = build_structured_grid(2, &[3, 2], &[2.0, 1.0]).unwrap();
        let store = KernelCacheStore::build(&m).unwrap();
        let te: Vec<f64> = (0..m.n_nodes()).map(|n| m.node(n)[0] / 2.0).collect();
        let k0 = vec![1.0; m.n_nodes()];
        let mut global = vec![0.0; m.n_nodes()];
        let mut re = [0.0; 4];
        for e in 0..m.n_elements() {
            let conn = m.element(e);
            let tes: Vec<f64> = conn.iter().map(|&n| te[n]).collect();
            let k0s: Vec<f64> = conn.iter().map(|&n| k0[n]).collect();
            element_thermal_residual(store.get(e), MaterialLaw::Linear, &tes, &k0s, 0.0, &mut re);
            for (a, &n) in conn.iter().enumerate() {
                global[n] += re[a];
            }
        }
        // interior nodes are 1 and 4 (middle column)
        assert!(global[1].abs() < 1e-13, "{global:?}");
        assert!(global[4].abs() < 1e-13, "{global:?}");
    }

    #[test]
    fn zero_displacement_at_reference_temperature_gives_zero_residual() {
        let cache = unit_square_cache();
        let ue = [0.0; 8];
        let te = [0.3; 4];
        let t0e = [0.3; 4];
        let e0e = [1.0; 4];
        let mut r = [0.0; 8];
        element_mechanical_residual(
            &cache,
            MaterialLaw::TemperatureDependent,
            &ue,
            &te,
            &t0e,
            &e0e,
            0.3,
            1e-3,
            &mut r,
        )
        .unwrap();
        for v in r {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn rigid_translation_gives_zero_residual() {
        let cache = unit_square_cache();
        let mut ue = [0.0; 8];
        for a in 0..4 {
            ue[2 * a] = 0.37;
            ue[2 * a + 1] = -0.12;
        }
        let te = [0.0; 4];
        let t0e = [0.0; 4];
        let e0e = [2.0; 4];
        let mut r = [0.0; 8];
        element_mechanical_residual(
            &cache,
            MaterialLaw::TemperatureDependent,
            &ue,
            &te,
            &t0e,
            &e0e,
            0.3,
            1e-3,
            &mut r,
        )
        .unwrap();
        for v in r {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn free_thermal_expansion_is_stress_free() {
        // u = alpha dT x is the homogeneous expansion field; with the
        // matching thermal strain subtracted the residual vanishes.
        let cache = unit_square_cache();
        let xe = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let alpha = 1e-3;
        let dt = 0.5;
        let mut ue = [0.0; 8];
        for a in 0..4 {
            ue[2 * a] = alpha * dt * xe[2 * a];
            ue[2 * a + 1] = alpha * dt * xe[2 * a + 1];
        }
        let te = [dt; 4];
        let t0e = [0.0; 4];
        let e0e = [1.0; 4];
        let mut r = [0.0; 8];
        element_mechanical_residual(
            &cache,
            MaterialLaw::TemperatureDependent,
            &ue,
            &te,
            &t0e,
            &e0e,
            0.3,
            alpha,
            &mut r,
        )
        .unwrap();
        for v in r {
            assert!(v.abs() < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn degenerate_stiffness_is_reported() {
        let cache = unit_square_cache();
        let ue = [0.0; 8];
        let te = [2.0; 4];
        let t0e = [0.0; 4];
        let e0e = [1.0; 4];
        let mut r = [0.0; 8];
        let err = element_mechanical_residual(
            &cache,
            MaterialLaw::TemperatureDependent,
            &ue,
            &te,
            &t0e,
            &e0e,
            0.3,
            1e-3,
            &mut r,
        );
        assert!(matches!(err, Err(crate::Error::DegenerateStiffness { .. })));
    }

    #[test]
    fn hex8_mechanical_system_is_symmetric() {
        let m = build_structured_grid(3, &[2, 2, 2], &[1.0, 1.0, 1.0]).unwrap();
        let store = KernelCacheStore::build(&m).unwrap();
        let te = [0.2; 8];
        let t0e = [0.0; 8];
        let e0e = [1.0; 8];
        let mut k = vec![0.0; 24 * 24];
        let mut f = vec![0.0; 24];
        element_mechanical_system(
            store.get(0),
            MaterialLaw::TemperatureDependent,
            &te,
            &t0e,
            &e0e,
            0.3,
            1e-3,
            &mut k,
            &mut f,
        )
        .unwrap();
        for r in 0..24 {
            for c in 0..24 {
                assert_relative_eq!(k[r * 24 + c], k[c * 24 + r], max_relative = 1e-12);
            }
        }
    }
}
