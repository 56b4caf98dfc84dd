//! Nonlinear FEM reference solver: Newton-Raphson for the temperature
//! field with the analytic conductivity tangent, followed by a linear
//! thermo-elastic solve. Coupling is one-way (temperature drives
//! mechanics), so the sequential composition is exact.

pub mod linear;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::kernel::{
    element_mechanical_system, element_thermal_residual, element_thermal_tangent, KernelCacheStore,
};
use crate::fem::SolutionState;
use crate::material::MaterialField;
use crate::mesh::{DirichletSpec, Mesh};

pub use linear::{linear_solve, CsrMatrix, IterOpts, LinearBackend};

/// Solver options, exposed as config keys.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SolverOpts {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_backend: LinearBackend,
    pub bicgstab_tol: f64,
    pub bicgstab_max_iter: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            newton_tol: 1e-10,
            newton_max_iter: 25,
            linear_backend: LinearBackend::Direct,
            bicgstab_tol: 1e-10,
            bicgstab_max_iter: 20_000,
        }
    }
}

impl SolverOpts {
    fn iter_opts(&self) -> IterOpts {
        IterOpts { tol: self.bicgstab_tol, max_iter: self.bicgstab_max_iter }
    }
}

/// Convergence record of a Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

/// Record of the linear mechanical solve.
#[derive(Debug, Clone)]
pub struct LinearReport {
    pub residual_norm: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledReports {
    pub thermal: NewtonReport,
    pub mechanical: LinearReport,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton-Raphson solve of the nonlinear conduction problem. The tangent
/// includes the dk/dT term, so convergence is quadratic.
pub fn solve_thermal_newton(
    mesh: &Mesh,
    mat: &MaterialField,
    spec: &DirichletSpec,
    opts: &SolverOpts,
) -> Result<(Vec<f64>, NewtonReport)> {
    let start = Instant::now();
    let bcs = spec.expand(mesh)?;
    if bcs.thermal.is_empty() {
        return Err(Error::IllPosed(
            "thermal problem needs at least one temperature Dirichlet entry".into(),
        ));
    }
    let kernels = KernelCacheStore::build(mesh)?;
    let n = mesh.n_nodes();
    let fixed = bcs.thermal_mask(n);
    // free-DOF numbering
    let mut free_of_node = vec![usize::MAX; n];
    let mut n_free = 0;
    for i in 0..n {
        if !fixed[i] {
            free_of_node[i] = n_free;
            n_free += 1;
        }
    }

    let mut t = vec![0.0; n];
    for &(i, v) in &bcs.thermal {
        t[i] = v;
    }

    let npe = mesh.elem_kind.nodes_per_elem();
    let mut te = vec![0.0; npe];
    let mut phie = vec![0.0; npe];
    let mut ret = vec![0.0; npe];
    let mut ket = vec![0.0; npe * npe];

    let mut residual_norms = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    loop {
        // assemble residual on free DOFs and the tangent for the next step
        let mut r = vec![0.0; n_free];
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for e in 0..mesh.n_elements() {
            let conn = mesh.element(e);
            for (a, &node) in conn.iter().enumerate() {
                te[a] = t[node];
                phie[a] = mat.phi[node];
            }
            let cache = kernels.get(e);
            element_thermal_residual(cache, mat.law, &te, &phie, 0.0, &mut ret);
            element_thermal_tangent(cache, mat.law, &te, &phie, &mut ket);
            for (a, &na) in conn.iter().enumerate() {
                let fa = free_of_node[na];
                if fa == usize::MAX {
                    continue;
                }
                r[fa] += ret[a];
                for (b, &nb) in conn.iter().enumerate() {
                    let fb = free_of_node[nb];
                    if fb != usize::MAX {
                        triplets.push((fa, fb, ket[a * npe + b]));
                    }
                }
            }
        }
        let rn = norm(&r);
        residual_norms.push(rn);
        if rn <= opts.newton_tol {
            converged = true;
            break;
        }
        if iterations >= opts.newton_max_iter {
            break;
        }
        let k = CsrMatrix::from_triplets(n_free, n_free, triplets);
        let delta = linear_solve(&k, &r, opts.linear_backend, opts.iter_opts())?;
        for i in 0..n {
            let f = free_of_node[i];
            if f != usize::MAX {
                t[i] -= delta[f];
            }
        }
        iterations += 1;
    }

    let report = NewtonReport {
        iterations,
        residual_norms: residual_norms.clone(),
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    };
    if !converged {
        return Err(Error::NonConvergence {
            max_iter: opts.newton_max_iter,
            residual: *residual_norms.last().unwrap_or(&f64::NAN),
        });
    }
    Ok((t, report))
}

/// Linear thermo-elastic solve at a fixed temperature field.
pub fn solve_mechanical(
    mesh: &Mesh,
    mat: &MaterialField,
    t: &[f64],
    spec: &DirichletSpec,
    opts: &SolverOpts,
) -> Result<(Vec<f64>, LinearReport)> {
    let start = Instant::now();
    let bcs = spec.expand(mesh)?;
    if bcs.mechanical.is_empty() {
        return Err(Error::IllPosed(
            "mechanical problem needs displacement constraints to remove rigid modes".into(),
        ));
    }
    let kernels = KernelCacheStore::build(mesh)?;
    let dim = mesh.dim;
    let n_dofs = mesh.n_nodes() * dim;
    let fixed = bcs.mechanical_mask(n_dofs);
    let mut bc_value = vec![0.0; n_dofs];
    for &(i, v) in &bcs.mechanical {
        bc_value[i] = v;
    }
    let mut free_of_dof = vec![usize::MAX; n_dofs];
    let mut n_free = 0;
    for i in 0..n_dofs {
        if !fixed[i] {
            free_of_dof[i] = n_free;
            n_free += 1;
        }
    }

    let npe = mesh.elem_kind.nodes_per_elem();
    let cols = npe * dim;
    let mut te = vec![0.0; npe];
    let mut t0e = vec![0.0; npe];
    let mut phie = vec![0.0; npe];
    let mut ke = vec![0.0; cols * cols];
    let mut fe = vec![0.0; cols];

    let mut rhs = vec![0.0; n_free];
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for e in 0..mesh.n_elements() {
        let conn = mesh.element(e);
        for (a, &node) in conn.iter().enumerate() {
            te[a] = t[node];
            t0e[a] = mat.t_ref;
            phie[a] = mat.phi[node];
        }
        element_mechanical_system(
            kernels.get(e),
            mat.law,
            &te,
            &t0e,
            &phie,
            mat.nu,
            mat.alpha,
            &mut ke,
            &mut fe,
        )?;
        for (a, &na) in conn.iter().enumerate() {
            for da in 0..dim {
                let ga = na * dim + da;
                let fa = free_of_dof[ga];
                if fa == usize::MAX {
                    continue;
                }
                rhs[fa] += fe[a * dim + da];
                for (b, &nb) in conn.iter().enumerate() {
                    for db in 0..dim {
                        let gb = nb * dim + db;
                        let kval = ke[(a * dim + da) * cols + (b * dim + db)];
                        let fb = free_of_dof[gb];
                        if fb != usize::MAX {
                            triplets.push((fa, fb, kval));
                        } else {
                            rhs[fa] -= kval * bc_value[gb];
                        }
                    }
                }
            }
        }
    }

    let k = CsrMatrix::from_triplets(n_free, n_free, triplets);
    let u_free = linear_solve(&k, &rhs, opts.linear_backend, opts.iter_opts())?;

    let mut ax = vec![0.0; n_free];
    k.matvec(&u_free, &mut ax);
    let res: f64 = ax
        .iter()
        .zip(&rhs)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let rel = res / norm(&rhs).max(1e-300);

    let mut u = bc_value;
    for i in 0..n_dofs {
        let f = free_of_dof[i];
        if f != usize::MAX {
            u[i] = u_free[f];
        }
    }
    Ok((u, LinearReport { residual_norm: rel, wall_time: start.elapsed().as_secs_f64() }))
}

/// Thermal Newton solve followed by the mechanical solve.
pub fn solve_coupled(
    mesh: &Mesh,
    mat: &MaterialField,
    spec: &DirichletSpec,
    opts: &SolverOpts,
) -> Result<(SolutionState, CoupledReports)> {
    let (t, thermal) = solve_thermal_newton(mesh, mat, spec, opts)?;
    let (u, mechanical) = solve_mechanical(mesh, mat, &t, spec, opts)?;
    Ok((SolutionState { t, u }, CoupledReports { thermal, mechanical }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_loss, LossMode};
    use crate::material::MaterialLaw;
    use crate::mesh::{build_structured_grid, FieldComponent};

    fn strip_spec(t_left: f64, t_right: f64) -> DirichletSpec {
        DirichletSpec::fixed(&[
            ("x0", FieldComponent::T, t_left),
            ("x1", FieldComponent::T, t_right),
        ])
    }

    #[test]
    fn linear_strip_converges_in_one_step() {
        let mesh = build_structured_grid(2, &[6, 2], &[1.0, 0.2]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes()).with_law(MaterialLaw::Linear);
        let (t, report) =
            solve_thermal_newton(&mesh, &mat, &strip_spec(1.0, 0.0), &SolverOpts::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        for n in 0..mesh.n_nodes() {
            let exact = 1.0 - mesh.node(n)[0];
            assert!((t[n] - exact).abs() < 1e-12, "node {n}: {} vs {exact}", t[n]);
        }
    }

    #[test]
    fn missing_thermal_bc_is_ill_posed() {
        let mesh = build_structured_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let spec = DirichletSpec::default();
        assert!(matches!(
            solve_thermal_newton(&mesh, &mat, &spec, &SolverOpts::default()),
            Err(Error::IllPosed(_))
        ));
    }

    /// Picard iteration as an independent oracle for the nonlinear solve.
    fn picard_solve(mesh: &Mesh, mat: &MaterialField, spec: &DirichletSpec) -> Vec<f64> {
        let bcs = spec.expand(mesh).unwrap();
        let n = mesh.n_nodes();
        let fixed = bcs.thermal_mask(n);
        let mut free_of_node = vec![usize::MAX; n];
        let mut n_free = 0;
        for i in 0..n {
            if !fixed[i] {
                free_of_node[i] = n_free;
                n_free += 1;
            }
        }
        let kernels = KernelCacheStore::build(mesh).unwrap();
        let npe = mesh.elem_kind.nodes_per_elem();
        let mut t = vec![0.0; n];
        for &(i, v) in &bcs.thermal {
            t[i] = v;
        }
        for _ in 0..200 {
            let mut triplets = Vec::new();
            let mut rhs = vec![0.0; n_free];
            for e in 0..mesh.n_elements() {
                let conn = mesh.element(e);
                let cache = kernels.get(e);
                // frozen-coefficient element conduction matrix
                let mut ke = vec![0.0; npe * npe];
                for p in &cache.points {
                    let mut told = 0.0;
                    let mut k0 = 0.0;
                    for (a, &node) in conn.iter().enumerate() {
                        told += p.n[a] * t[node];
                        k0 += p.n[a] * mat.phi[node];
                    }
                    let k = mat.conductivity(k0, told);
                    for a in 0..npe {
                        for b in 0..npe {
                            let mut bb = 0.0;
                            for i in 0..mesh.dim {
                                bb += p.b_t[i * npe + a] * p.b_t[i * npe + b];
                            }
                            ke[a * npe + b] += p.wk * k * bb;
                        }
                    }
                }
                for (a, &na) in conn.iter().enumerate() {
                    let fa = free_of_node[na];
                    if fa == usize::MAX {
                        continue;
                    }
                    for (b, &nb) in conn.iter().enumerate() {
                        let fb = free_of_node[nb];
                        if fb != usize::MAX {
                            triplets.push((fa, fb, ke[a * npe + b]));
                        } else {
                            rhs[fa] -= ke[a * npe + b] * t[nb];
                        }
                    }
                }
            }
            let k = CsrMatrix::from_triplets(n_free, n_free, triplets);
            let sol = linear_solve(&k, &rhs, LinearBackend::Direct, IterOpts::default()).unwrap();
            let mut delta: f64 = 0.0;
            for i in 0..n {
                let f = free_of_node[i];
                if f != usize::MAX {
                    delta = delta.max((t[i] - sol[f]).abs());
                    t[i] = sol[f];
                }
            }
            if delta < 1e-13 {
                break;
            }
        }
        t
    }

    #[test]
    fn nonlinear_solve_matches_picard_and_tail_is_superlinear() {
        let mesh = build_structured_grid(2, &[9, 9], &[1.0, 1.0]).unwrap();
        let mut mat = MaterialField::homogeneous(mesh.n_nodes());
        // heterogeneous conductivity to exercise the interpolation path
        for (i, p) in mat.phi.iter_mut().enumerate() {
            *p = 0.4 + 0.5 * ((i as f64) * 0.13).sin().abs();
        }
        let spec = strip_spec(0.5, 0.0);
        let (t, report) = solve_thermal_newton(&mesh, &mat, &spec, &SolverOpts::default()).unwrap();
        assert!(report.converged);

        let t_picard = picard_solve(&mesh, &mat, &spec);
        for i in 0..mesh.n_nodes() {
            assert!(
                (t[i] - t_picard[i]).abs() < 1e-8,
                "node {i}: newton {} vs picard {}",
                t[i],
                t_picard[i]
            );
        }

        // residual norms decrease strictly after the first iteration, with a
        // superlinear tail
        let rn = &report.residual_norms;
        assert!(rn.len() >= 3, "expected a few iterations, got {rn:?}");
        for w in rn[1..].windows(2) {
            assert!(w[1] < w[0], "not strictly decreasing: {rn:?}");
        }
        let last_ratio = rn[rn.len() - 1] / rn[rn.len() - 2].max(1e-300);
        let first_ratio = rn[1] / rn[0];
        assert!(
            last_ratio < first_ratio || rn[rn.len() - 1] < 1e-12,
            "tail not superlinear: {rn:?}"
        );
    }

    #[test]
    fn thermal_solution_ignores_displacement_bcs() {
        let mesh = build_structured_grid(2, &[5, 5], &[1.0, 1.0]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let spec_a = strip_spec(0.5, 0.0);
        let mut entries = spec_a.entries.clone();
        entries.extend(
            DirichletSpec::fixed(&[
                ("x0", FieldComponent::Ux, 0.0),
                ("x1", FieldComponent::Ux, 0.1),
            ])
            .entries,
        );
        let spec_b = DirichletSpec::new(entries);
        let (ta, _) = solve_thermal_newton(&mesh, &mat, &spec_a, &SolverOpts::default()).unwrap();
        let (tb, _) = solve_thermal_newton(&mesh, &mat, &spec_b, &SolverOpts::default()).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn mechanical_zero_at_reference_temperature() {
        let mesh = build_structured_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let t = vec![mat.t_ref; mesh.n_nodes()];
        let spec = DirichletSpec::fixed(&[
            ("x0", FieldComponent::Ux, 0.0),
            ("x0", FieldComponent::Uy, 0.0),
            ("x1", FieldComponent::Ux, 0.0),
            ("x1", FieldComponent::Uy, 0.0),
        ]);
        let (u, rep) = solve_mechanical(&mesh, &mat, &t, &spec, &SolverOpts::default()).unwrap();
        assert!(rep.residual_norm < 1e-10);
        for v in u {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn free_expansion_is_stress_free_3d() {
        let mesh = build_structured_grid(3, &[4, 4, 4], &[1.0, 1.0, 1.0]).unwrap();
        // minimal rigid-body constraints at the origin corner and two axis
        // neighbours; the expansion field satisfies all of them exactly
        let mesh = mesh
            .with_boundary_set("pin0", vec![0])
            .unwrap()
            .with_boundary_set("pinx", vec![1])
            .unwrap()
            .with_boundary_set("piny", vec![4])
            .unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let dt = 0.4;
        let t = vec![dt; mesh.n_nodes()];
        let spec = DirichletSpec::fixed(&[
            ("pin0", FieldComponent::Ux, 0.0),
            ("pin0", FieldComponent::Uy, 0.0),
            ("pin0", FieldComponent::Uz, 0.0),
            ("pinx", FieldComponent::Uy, 0.0),
            ("pinx", FieldComponent::Uz, 0.0),
            ("piny", FieldComponent::Uz, 0.0),
        ]);
        let (u, _) = solve_mechanical(&mesh, &mat, &t, &spec, &SolverOpts::default()).unwrap();
        let c = mat.alpha * dt;
        for n in 0..mesh.n_nodes() {
            let x = mesh.node(n);
            for d in 0..3 {
                let exact = c * x[d];
                assert!(
                    (u[n * 3 + d] - exact).abs() < 1e-9,
                    "node {n} dim {d}: {} vs {exact}",
                    u[n * 3 + d]
                );
            }
        }
    }

    #[test]
    fn mechanical_requires_constraints() {
        let mesh = build_structured_grid(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let t = vec![0.0; mesh.n_nodes()];
        assert!(matches!(
            solve_mechanical(&mesh, &mat, &t, &DirichletSpec::default(), &SolverOpts::default()),
            Err(Error::IllPosed(_))
        ));
    }

    #[test]
    fn mechanical_solution_minimizes_independent_energy() {
        // Second route: the strain energy functional evaluated by direct
        // quadrature must be stationary at the solver's solution. The energy
        // is quadratic, so central differences are exact up to roundoff.
        let mesh = build_structured_grid(2, &[4, 3], &[1.0, 1.0]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let spec = DirichletSpec::fixed(&[
            ("x0", FieldComponent::T, 0.5),
            ("x1", FieldComponent::T, 0.0),
            ("x0", FieldComponent::Ux, 0.0),
            ("x0", FieldComponent::Uy, 0.0),
            ("x1", FieldComponent::Ux, 0.1),
            ("x1", FieldComponent::Uy, 0.1),
        ]);
        let opts = SolverOpts::default();
        let (t, _) = solve_thermal_newton(&mesh, &mat, &spec, &opts).unwrap();
        let (u, _) = solve_mechanical(&mesh, &mat, &t, &spec, &opts).unwrap();

        let kernels = KernelCacheStore::build(&mesh).unwrap();
        let dim = mesh.dim;
        let npe = mesh.elem_kind.nodes_per_elem();
        let nv = crate::material::voigt_size(dim);
        let energy = |u: &[f64]| -> f64 {
            let mut total = 0.0;
            for e in 0..mesh.n_elements() {
                let conn = mesh.element(e);
                let cache = kernels.get(e);
                for p in &cache.points {
                    let mut tq = 0.0;
                    let mut e0 = 0.0;
                    for (a, &node) in conn.iter().enumerate() {
                        tq += p.n[a] * t[node];
                        e0 += p.n[a] * mat.phi[node];
                    }
                    let em = crate::material::youngs_modulus(e0, tq).unwrap();
                    let d = crate::material::elasticity_matrix(em, mat.nu, dim).unwrap();
                    let mut eps = [0.0; 6];
                    for i in 0..nv {
                        for (a, &node) in conn.iter().enumerate() {
                            for dd in 0..dim {
                                eps[i] += p.b_u[i * npe * dim + a * dim + dd] * u[node * dim + dd];
                            }
                        }
                    }
                    let eth = mat.alpha * (tq - mat.t_ref);
                    for item in eps.iter_mut().take(dim) {
                        *item -= eth;
                    }
                    let mut w = 0.0;
                    for i in 0..nv {
                        for j in 0..nv {
                            w += eps[i] * d[i * nv + j] * eps[j];
                        }
                    }
                    total += 0.5 * p.wk * w;
                }
            }
            total
        };

        let bcs = spec.expand(&mesh).unwrap();
        let fixed = bcs.mechanical_mask(mesh.n_nodes() * dim);
        let e_scale = energy(&u).abs().max(1.0);
        let h = 1e-5;
        for i in 0..u.len() {
            if fixed[i] {
                continue;
            }
            let mut up = u.clone();
            up[i] += h;
            let mut um = u.clone();
            um[i] -= h;
            let g = (energy(&up) - energy(&um)) / (2.0 * h);
            assert!(g.abs() < 1e-9 * e_scale, "dof {i}: grad {g}");
        }
    }

    #[test]
    fn coupled_solution_zeroes_the_loss() {
        let mesh = build_structured_grid(2, &[6, 6], &[1.0, 1.0]).unwrap();
        let mut mat = MaterialField::homogeneous(mesh.n_nodes());
        for (i, p) in mat.phi.iter_mut().enumerate() {
            *p = 0.3 + 0.6 * ((i as f64) * 0.7).cos().powi(2);
        }
        let spec = DirichletSpec::fixed(&[
            ("x0", FieldComponent::T, 0.5),
            ("x1", FieldComponent::T, 0.0),
            ("x0", FieldComponent::Ux, 0.0),
            ("x0", FieldComponent::Uy, 0.0),
            ("x1", FieldComponent::Ux, 0.1),
            ("x1", FieldComponent::Uy, 0.1),
        ]);
        let (state, _) = solve_coupled(&mesh, &mat, &spec, &SolverOpts::default()).unwrap();
        let kernels = KernelCacheStore::build(&mesh).unwrap();
        let bcs = spec.expand(&mesh).unwrap();
        let (l, _, _) =
            assemble_loss(&mesh, &mat, &kernels, &state, LossMode::DetachTest, &bcs).unwrap();
        let scale = norm(&state.t) + norm(&state.u);
        assert!(l.abs() <= 1e-10 * scale.max(1.0), "L = {l}");
    }

    #[test]
    fn trivial_homogeneous_case_gives_zero_fields() {
        let mesh = build_structured_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes());
        let spec = DirichletSpec::fixed(&[
            ("x0", FieldComponent::T, 0.0),
            ("x1", FieldComponent::T, 0.0),
            ("x0", FieldComponent::Ux, 0.0),
            ("x0", FieldComponent::Uy, 0.0),
            ("x1", FieldComponent::Ux, 0.0),
            ("x1", FieldComponent::Uy, 0.0),
        ]);
        let (state, reports) = solve_coupled(&mesh, &mat, &spec, &SolverOpts::default()).unwrap();
        assert!(reports.thermal.converged);
        for v in state.t.iter().chain(&state.u) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn strip_refinement_converges_at_second_order() {
        // Nonlinear conduction on a strip has the Kirchhoff-transform
        // solution: theta(T) = integral of k is harmonic, so
        // theta(T(x)) = (1-x) theta(T_left). T(x) is recovered by bisection
        // and serves as the analytic oracle for the L2 convergence rate.
        let t_left = 1.2; // spans the sigmoid knee of the conductivity law
        let kappa = |t: f64| crate::material::conductivity(1.0, t);
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                let x = a + i as f64 * h;
                s += if i % 2 == 0 { 2.0 } else { 4.0 } * f(x);
            }
            s * h / 3.0
        }
        let theta = |t: f64| simpson(&kappa, 0.0, t, 2000);
        let theta_left = theta(t_left);
        let t_of_x = |x: f64| {
            let target = (1.0 - x) * theta_left;
            let (mut lo, mut hi) = (0.0f64, t_left);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if theta(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };

        let mut errors = Vec::new();
        for &nx in &[17usize, 33, 65] {
            let mesh = build_structured_grid(2, &[nx, 2], &[1.0, 0.25]).unwrap();
            let mat = MaterialField::homogeneous(mesh.n_nodes());
            let spec = strip_spec(t_left, 0.0);
            let (t, _) = solve_thermal_newton(&mesh, &mat, &spec, &SolverOpts::default()).unwrap();
            let kernels = KernelCacheStore::build(&mesh).unwrap();
            let npe = mesh.elem_kind.nodes_per_elem();
            let mut err2 = 0.0;
            let mut xe = vec![0.0; npe * 2];
            for e in 0..mesh.n_elements() {
                mesh.gather_coords(e, &mut xe);
                let conn = mesh.element(e);
                let cache = kernels.get(e);
                for p in &cache.points {
                    let mut th = 0.0;
                    let mut xq = 0.0;
                    for (a, &node) in conn.iter().enumerate() {
                        th += p.n[a] * t[node];
                        xq += p.n[a] * xe[a * 2];
                    }
                    let diff = th - t_of_x(xq);
                    err2 += p.wk * diff * diff;
                }
            }
            errors.push(err2.sqrt());
        }
        let rate1 = (errors[0] / errors[1]).log2();
        let rate2 = (errors[1] / errors[2]).log2();
        assert!(
            rate1 >= 1.9 && rate2 >= 1.9,
            "errors {errors:?} rates {rate1:.3} {rate2:.3}"
        );
    }
}
