//! Sparse matrices and the two linear backends: a banded LU direct solver
//! with partial pivoting and a Jacobi-preconditioned BiCGSTAB.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut i = 0;
        while i < triplets.len() {
            let (r, c, mut v) = triplets[i];
            let mut j = i + 1;
            while j < triplets.len() && triplets[j].0 == r && triplets[j].1 == c {
                v += triplets[j].2;
                j += 1;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            i = j;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    /// Largest sub- and super-diagonal extent of the sparsity pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }
}

/// Linear-solve backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearBackend {
    Direct,
    Bicgstab,
}

/// Options for the iterative backend.
#[derive(Debug, Clone, Copy)]
pub struct IterOpts {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterOpts {
    fn default() -> Self {
        IterOpts { tol: 1e-10, max_iter: 20_000 }
    }
}

/// Solve A x = b with the chosen backend. The returned solution satisfies
/// ||Ax - b|| / ||b|| <= tol (machine-level for the direct backend).
pub fn linear_solve(a: &CsrMatrix, b: &[f64], backend: LinearBackend, opts: IterOpts) -> Result<Vec<f64>> {
    if a.n_rows != a.n_cols || a.n_rows != b.len() {
        return Err(Error::SizeMismatch(format!(
            "matrix {}x{} with rhs of length {}",
            a.n_rows,
            a.n_cols,
            b.len()
        )));
    }
    match backend {
        LinearBackend::Direct => banded_lu_solve(a, b),
        LinearBackend::Bicgstab => bicgstab(a, b, opts),
    }
}

/// Banded LU with partial pivoting (LAPACK-style band storage). Fill-in is
/// confined to kl extra superdiagonals, so storage is (2kl+ku+1) x n.
fn banded_lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n_rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let (kl, ku) = a.bandwidths();
    let ldab = 2 * kl + ku + 1;
    // Element A(i, j) lives at ab[(kl + ku + i - j) * n + j].
    let mut ab = vec![0.0; ldab * n];
    for r in 0..n {
        for k in a.row_ptr[r]..a.row_ptr[r + 1] {
            let c = a.col_idx[k];
            ab[(kl + ku + r - c) * n + c] = a.values[k];
        }
    }

    let mut ipiv = vec![0usize; n];
    let mut ju = 0usize;
    for j in 0..n {
        let km = kl.min(n - 1 - j);
        // pivot search among rows j..=j+km of column j
        let mut jp = 0usize;
        let mut pmax = 0.0f64;
        for p in 0..=km {
            let v = ab[(kl + ku + p) * n + j].abs();
            if v > pmax {
                pmax = v;
                jp = p;
            }
        }
        ipiv[j] = j + jp;
        if pmax == 0.0 {
            return Err(Error::LinearSolve(format!(
                "singular matrix: zero pivot at column {j} (system may be under-constrained)"
            )));
        }
        ju = ju.max((j + ku + jp).min(n - 1));
        if jp != 0 {
            // swap matrix rows j and j+jp across columns j..=ju;
            // c <= ju <= j+ku+kl keeps both band indices in range
            for c in j..=ju {
                ab.swap((kl + ku + j - c) * n + c, (kl + ku + j + jp - c) * n + c);
            }
        }
        let pivot = ab[(kl + ku) * n + j];
        for p in 1..=km {
            ab[(kl + ku + p) * n + j] /= pivot;
        }
        for c in j + 1..=ju {
            let ajc = ab[(kl + ku + j - c) * n + c];
            if ajc != 0.0 {
                for p in 1..=km {
                    ab[(kl + ku + j + p - c) * n + c] -= ab[(kl + ku + p) * n + j] * ajc;
                }
            }
        }
    }

    // Forward substitution with row swaps.
    let mut x = b.to_vec();
    for j in 0..n {
        let p = ipiv[j];
        if p != j {
            x.swap(j, p);
        }
        let km = kl.min(n - 1 - j);
        for q in 1..=km {
            x[j + q] -= ab[(kl + ku + q) * n + j] * x[j];
        }
    }
    // Back substitution; U has bandwidth kl+ku after pivoting.
    for j in (0..n).rev() {
        x[j] /= ab[(kl + ku) * n + j];
        let top = j.saturating_sub(kl + ku);
        for i in top..j {
            x[i] -= ab[(kl + ku + i - j) * n + j] * x[j];
        }
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB. Errors with the best iterate on
/// stagnation.
fn bicgstab(a: &CsrMatrix, b: &[f64], opts: IterOpts) -> Result<Vec<f64>> {
    let n = a.n_rows;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut inv_diag = a.diagonal();
    for d in &mut inv_diag {
        *d = if d.abs() > 0.0 { 1.0 / *d } else { 1.0 };
    }
    let precond = |v: &[f64], out: &mut [f64]| {
        for i in 0..v.len() {
            out[i] = v[i] * inv_diag[i];
        }
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];

    let mut best_x = x.clone();
    let mut best_res = 1.0f64;

    for iter in 0..opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < f64::MIN_POSITIVE * 1e4 {
            break; // breakdown; report stagnation below
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut p_hat);
        a.matvec(&p_hat, &mut v);
        let rhv = dot(&r_hat, &v);
        if rhv.abs() < f64::MIN_POSITIVE * 1e4 {
            break;
        }
        alpha = rho_new / rhv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= opts.tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return finish_bicgstab(a, b, x, bnorm, opts, iter + 1);
        }
        precond(&s, &mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = norm(&r) / bnorm;
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
        }
        if res <= opts.tol {
            return finish_bicgstab(a, b, x, bnorm, opts, iter + 1);
        }
        if omega.abs() < f64::MIN_POSITIVE * 1e4 {
            break;
        }
        rho = rho_new;
    }
    Err(Error::BicgstabStagnation {
        iterations: opts.max_iter,
        residual: best_res,
        best: best_x,
    })
}

/// Recompute the true residual before declaring convergence.
fn finish_bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: Vec<f64>,
    bnorm: f64,
    opts: IterOpts,
    iterations: usize,
) -> Result<Vec<f64>> {
    let mut ax = vec![0.0; b.len()];
    a.matvec(&x, &mut ax);
    let res = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    if res <= opts.tol * 10.0 {
        Ok(x)
    } else {
        Err(Error::BicgstabStagnation { iterations, residual: res, best: x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; b.len()];
        a.matvec(x, &mut ax);
        let num: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        num / norm(b).max(1e-300)
    }

    #[test]
    fn identity_returns_rhs() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        for backend in [LinearBackend::Direct, LinearBackend::Bicgstab] {
            let x = linear_solve(&a, &b, backend, IterOpts::default()).unwrap();
            for (xi, bi) in x.iter().zip(&b) {
                assert!((xi - bi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_tridiagonal_matches_closed_form() {
        // Tridiag(-1, 2, -1) with unit load has the discrete solution
        // x_i = i (n + 1 - i) / 2 (1-based), derived by summing the
        // telescoping differences.
        let n = 31;
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 2.0));
            if i > 0 {
                triplets.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                triplets.push((i, i + 1, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, triplets);
        let b = vec![1.0; n];
        for backend in [LinearBackend::Direct, LinearBackend::Bicgstab] {
            let x = linear_solve(&a, &b, backend, IterOpts::default()).unwrap();
            for i in 0..n {
                let k = (i + 1) as f64;
                let exact = k * (n as f64 + 1.0 - k) / 2.0;
                assert!(
                    (x[i] - exact).abs() < 1e-8 * exact.abs().max(1.0),
                    "{backend:?} i={i}: {} vs {exact}",
                    x[i]
                );
            }
        }
    }

    #[test]
    fn random_spd_backends_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let n = 50;
        let mut m = vec![0.0; n * n];
        for v in m.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        // A = M M^T + n I is SPD and dense.
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[i * n + k] * m[j * n + k];
                }
                if i == j {
                    s += n as f64;
                }
                triplets.push((i, j, s));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, triplets);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let xd = linear_solve(&a, &b, LinearBackend::Direct, IterOpts::default()).unwrap();
        let xi = linear_solve(&a, &b, LinearBackend::Bicgstab, IterOpts::default()).unwrap();
        assert!(residual(&a, &xd, &b) < 1e-12);
        for (p, q) in xd.iter().zip(&xi) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
    }

    #[test]
    fn nonsymmetric_banded_with_pivoting() {
        // A matrix that needs pivoting: small diagonal against large
        // off-diagonal entries.
        let triplets = vec![
            (0, 0, 1e-12),
            (0, 1, 2.0),
            (1, 0, 3.0),
            (1, 1, 1.0),
            (1, 2, -1.0),
            (2, 1, 0.5),
            (2, 2, 4.0),
        ];
        let a = CsrMatrix::from_triplets(3, 3, triplets);
        let b = vec![2.0, 3.0, 4.5];
        let x = linear_solve(&a, &b, LinearBackend::Direct, IterOpts::default()).unwrap();
        assert!(residual(&a, &x, &b) < 1e-12, "residual {}", residual(&a, &x, &b));
    }

    #[test]
    fn singular_matrix_is_reported() {
        let triplets = vec![(0, 0, 1.0), (1, 1, 0.0)];
        let a = CsrMatrix::from_triplets(2, 2, triplets);
        let b = vec![1.0, 1.0];
        assert!(linear_solve(&a, &b, LinearBackend::Direct, IterOpts::default()).is_err());
    }

    #[test]
    fn bicgstab_stagnation_carries_best_iterate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                triplets.push((i, j, rng.gen_range(-1.0..1.0)));
            }
            triplets.push((i, i, 2.0));
        }
        let a = CsrMatrix::from_triplets(n, n, triplets);
        let b = vec![1.0; n];
        let out = linear_solve(&a, &b, LinearBackend::Bicgstab, IterOpts { tol: 1e-14, max_iter: 2 });
        match out {
            Err(Error::BicgstabStagnation { best, residual: res, .. }) => {
                assert_eq!(best.len(), n);
                assert!(res > 0.0);
            }
            other => panic!("expected stagnation, got {other:?}"),
        }
    }
}
