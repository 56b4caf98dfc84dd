//! Temperature-dependent, spatially heterogeneous material laws.
//!
//! A single per-node phase function `phi` sets both the conductivity
//! prefactor `k0` and the stiffness prefactor `E0`. The temperature laws
//! are a sigmoid-shaped conductivity decay and an affine stiffness decay;
//! `MaterialLaw::Linear` bypasses both (k = k0, E = E0) for verification
//! problems with known solutions.

use crate::error::{Error, Result};

/// Which temperature dependence the constitutive evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MaterialLaw {
    /// k(T) = k0 (1/2 + 1/(2(1+exp(20(T-1/2))))), E(T) = E0 (1 - 3T/5).
    TemperatureDependent,
    /// k = k0, E = E0.
    Linear,
}

/// Per-node phase function plus the scalar constants of the material model.
#[derive(Debug, Clone)]
pub struct MaterialField {
    /// Phase function, one value per mesh node; sets k0 and E0.
    pub phi: Vec<f64>,
    pub nu: f64,
    pub alpha: f64,
    /// Reference temperature for thermal strains.
    pub t_ref: f64,
    pub law: MaterialLaw,
}

impl MaterialField {
    pub fn new(phi: Vec<f64>, nu: f64, alpha: f64, t_ref: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&nu) {
            return Err(Error::MaterialSingularity(format!(
                "Poisson ratio must satisfy 0 <= nu < 0.5, got {nu}"
            )));
        }
        Ok(MaterialField {
            phi,
            nu,
            alpha,
            t_ref,
            law: MaterialLaw::TemperatureDependent,
        })
    }

    /// Homogeneous field (phi = 1 everywhere) with default constants.
    pub fn homogeneous(n_nodes: usize) -> Self {
        MaterialField {
            phi: vec![1.0; n_nodes],
            nu: 0.3,
            alpha: 1e-3,
            t_ref: 0.0,
            law: MaterialLaw::TemperatureDependent,
        }
    }

    pub fn with_law(mut self, law: MaterialLaw) -> Self {
        self.law = law;
        self
    }

    pub fn conductivity(&self, k0: f64, t: f64) -> f64 {
        match self.law {
            MaterialLaw::TemperatureDependent => conductivity(k0, t),
            MaterialLaw::Linear => k0,
        }
    }

    pub fn conductivity_dt(&self, k0: f64, t: f64) -> f64 {
        match self.law {
            MaterialLaw::TemperatureDependent => conductivity_dt(k0, t),
            MaterialLaw::Linear => 0.0,
        }
    }

    pub fn youngs_modulus(&self, e0: f64, t: f64) -> Result<f64> {
        match self.law {
            MaterialLaw::TemperatureDependent => youngs_modulus(e0, t),
            MaterialLaw::Linear => Ok(e0),
        }
    }
}

/// Sigmoid-decaying thermal conductivity k0 (1/2 + 1/(2(1+e^{20(T-1/2)}))).
///
/// The exponential saturates instead of overflowing, so the value stays in
/// [k0/2, k0] for any T.
pub fn conductivity(k0: f64, t: f64) -> f64 {
    let arg = 20.0 * (t - 0.5);
    let inner = if arg > 700.0 { 0.0 } else { 1.0 / (2.0 * (1.0 + arg.exp())) };
    k0 * (0.5 + inner)
}

/// Analytic dk/dT of [`conductivity`].
pub fn conductivity_dt(k0: f64, t: f64) -> f64 {
    let arg = 20.0 * (t - 0.5);
    if arg > 700.0 || arg < -700.0 {
        return 0.0;
    }
    let e = arg.exp();
    let denom = 1.0 + e;
    -k0 * 20.0 * e / (2.0 * denom * denom)
}

/// Affine stiffness decay E0 (1 - 3T/5). Fails when the result is
/// nonpositive (T >= 5/3).
pub fn youngs_modulus(e0: f64, t: f64) -> Result<f64> {
    let e = e0 * (1.0 - 3.0 * t / 5.0);
    if e <= 0.0 {
        return Err(Error::DegenerateStiffness { t });
    }
    Ok(e)
}

/// Isotropic elasticity matrix in Voigt notation: 3x3 plane strain in 2D,
/// the standard 6x6 in 3D. Returned row-major.
pub fn elasticity_matrix(e: f64, nu: f64, dim: usize) -> Result<Vec<f64>> {
    if nu >= 0.5 {
        return Err(Error::MaterialSingularity(format!(
            "elasticity matrix singular at nu = {nu}"
        )));
    }
    if !(e > 0.0) {
        return Err(Error::DegenerateStiffness { t: f64::NAN });
    }
    let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    match dim {
        2 => {
            // Plane strain.
            let d11 = c * (1.0 - nu);
            let d12 = c * nu;
            let g = e / (2.0 * (1.0 + nu));
            Ok(vec![
                d11, d12, 0.0, //
                d12, d11, 0.0, //
                0.0, 0.0, g,
            ])
        }
        3 => {
            let d11 = c * (1.0 - nu);
            let d12 = c * nu;
            let g = e / (2.0 * (1.0 + nu));
            let mut d = vec![0.0; 36];
            for i in 0..3 {
                for j in 0..3 {
                    d[i * 6 + j] = if i == j { d11 } else { d12 };
                }
            }
            for i in 3..6 {
                d[i * 6 + i] = g;
            }
            Ok(d)
        }
        _ => Err(Error::SizeMismatch(format!("elasticity matrix needs dim 2 or 3, got {dim}"))),
    }
}

/// Number of Voigt components: 3 in 2D (xx, yy, xy), 6 in 3D.
pub fn voigt_size(dim: usize) -> usize {
    if dim == 2 {
        3
    } else {
        6
    }
}

/// Thermal strain alpha (T - T0) s in Voigt notation, with s = [1,1,0] in 2D
/// and [1,1,1,0,0,0] in 3D.
pub fn thermal_strain_voigt(alpha: f64, t: f64, t0: f64, dim: usize) -> Vec<f64> {
    let e = alpha * (t - t0);
    let mut v = vec![0.0; voigt_size(dim)];
    for item in v.iter_mut().take(dim.min(3)) {
        *item = e;
    }
    if dim == 3 {
        v[2] = e;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn conductivity_at_half_is_three_quarters() {
        assert_relative_eq!(conductivity(1.0, 0.5), 0.75, max_relative = 1e-15);
    }

    #[test]
    fn conductivity_saturates_for_large_t() {
        assert_relative_eq!(conductivity(1.0, 1e6), 0.5, max_relative = 1e-15);
        assert_relative_eq!(conductivity(3.0, -1e6), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn conductivity_at_zero() {
        // 2 (0.5 + 1/(2(1+e^{-10}))) evaluated directly.
        let expected = 2.0 * (0.5 + 1.0 / (2.0 * (1.0 + (-10.0f64).exp())));
        assert_relative_eq!(conductivity(2.0, 0.0), expected, max_relative = 1e-15);
        assert_relative_eq!(conductivity(2.0, 0.0), 1.9999546, max_relative = 1e-7);
    }

    #[test]
    fn conductivity_dt_hand_values() {
        // At T = 1/2 the sigmoid derivative is 1/4; with chain factor 20 and
        // the leading 1/2 this gives -20/8 = -2.5 per unit k0.
        assert_relative_eq!(conductivity_dt(1.0, 0.5), -2.5, max_relative = 1e-14);
        assert_relative_eq!(conductivity_dt(4.0, 0.5), -10.0, max_relative = 1e-14);
        assert_eq!(conductivity_dt(1.0, -1e6), 0.0);
    }

    #[test]
    fn conductivity_dt_matches_finite_differences() {
        let h = 1e-6;
        for &t in &[-1.0, 0.0, 0.3, 0.5, 0.6, 1.0, 2.0] {
            let fd = (conductivity(1.0, t + h) - conductivity(1.0, t - h)) / (2.0 * h);
            let ad = conductivity_dt(1.0, t);
            assert!(
                (fd - ad).abs() <= 1e-6 * ad.abs().max(1e-6),
                "t={t}: fd={fd} analytic={ad}"
            );
        }
    }

    #[test]
    fn youngs_modulus_values() {
        assert_relative_eq!(youngs_modulus(1.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(youngs_modulus(1.0, 1.0).unwrap(), 0.4, max_relative = 1e-15);
        assert_relative_eq!(youngs_modulus(0.1, 0.5).unwrap(), 0.07, max_relative = 1e-15);
        assert!(youngs_modulus(1.0, 5.0 / 3.0).is_err());
        assert!(youngs_modulus(1.0, 2.0).is_err());
    }

    #[test]
    fn elasticity_matrix_nu_zero_3d() {
        let d = elasticity_matrix(1.0, 0.0, 3).unwrap();
        assert_relative_eq!(d[0], 1.0);
        assert_relative_eq!(d[1], 0.0);
        assert_relative_eq!(d[3 * 6 + 3], 0.5);
    }

    #[test]
    fn elasticity_matrix_plane_strain_value() {
        // E (1-nu) / ((1+nu)(1-2nu)) at E=1, nu=0.3: 0.7/0.52.
        let d = elasticity_matrix(1.0, 0.3, 2).unwrap();
        assert_relative_eq!(d[0], 0.7 / 0.52, max_relative = 1e-12);
        assert_relative_eq!(d[0], 1.346154, max_relative = 1e-6);
    }

    #[test]
    fn elasticity_matrix_rejects_incompressible() {
        assert!(elasticity_matrix(1.0, 0.5, 2).is_err());
    }

    fn symmetric_positive_definite(d: &[f64], n: usize) -> bool {
        for i in 0..n {
            for j in 0..n {
                if (d[i * n + j] - d[j * n + i]).abs() > 1e-14 {
                    return false;
                }
            }
        }
        // Cholesky as the positive-definiteness check.
        let mut a = d.to_vec();
        for k in 0..n {
            let mut s = a[k * n + k];
            for p in 0..k {
                s -= a[k * n + p] * a[k * n + p];
            }
            if s <= 0.0 {
                return false;
            }
            let l = s.sqrt();
            a[k * n + k] = l;
            for i in k + 1..n {
                let mut s = a[i * n + k];
                for p in 0..k {
                    s -= a[i * n + p] * a[k * n + p];
                }
                a[i * n + k] = s / l;
            }
        }
        true
    }

    #[test]
    fn thermal_strain_values() {
        assert_eq!(thermal_strain_voigt(1.0, 0.3, 0.3, 3), vec![0.0; 6]);
        let v = thermal_strain_voigt(1e-3, 1.0, 0.0, 3);
        assert_eq!(v, vec![1e-3, 1e-3, 1e-3, 0.0, 0.0, 0.0]);
        let v2 = thermal_strain_voigt(0.5, 0.2, 0.0, 2);
        assert_relative_eq!(v2[0], 0.1, max_relative = 1e-15);
        assert_relative_eq!(v2[1], 0.1, max_relative = 1e-15);
        assert_eq!(v2[2], 0.0);
    }

    #[test]
    fn material_field_rejects_bad_nu() {
        assert!(MaterialField::new(vec![1.0], 0.5, 1e-3, 0.0).is_err());
        assert!(MaterialField::new(vec![1.0], -0.1, 1e-3, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn conductivity_monotone_and_bounded(t1 in -5.0f64..5.0, dt in 0.0f64..5.0, k0 in 0.01f64..10.0) {
            let a = conductivity(k0, t1);
            let b = conductivity(k0, t1 + dt);
            prop_assert!(b <= a + 1e-15);
            prop_assert!(a <= k0 && a >= 0.5 * k0);
        }

        #[test]
        fn youngs_modulus_ratio_independent_of_e0(e0 in 0.01f64..10.0, t in -1.0f64..1.5) {
            let r1 = youngs_modulus(e0, t).unwrap() / e0;
            let r2 = youngs_modulus(1.0, t).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-12);
        }

        #[test]
        fn elasticity_scales_linearly(e in 0.01f64..10.0, nu in 0.0f64..0.49, c in 0.1f64..5.0) {
            let d1 = elasticity_matrix(e, nu, 2).unwrap();
            let d2 = elasticity_matrix(c * e, nu, 2).unwrap();
            for (a, b) in d1.iter().zip(&d2) {
                prop_assert!((c * a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn elasticity_spd(e in 0.01f64..10.0, nu in 0.0f64..0.49) {
            let d2 = elasticity_matrix(e, nu, 2).unwrap();
            prop_assert!(symmetric_positive_definite(&d2, 3));
            let d3 = elasticity_matrix(e, nu, 3).unwrap();
            prop_assert!(symmetric_positive_definite(&d3, 6));
        }
    }
}
