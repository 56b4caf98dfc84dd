//! Evaluation: relative L2 error statistics against the nonlinear FEM
//! oracle, timing benchmarks, and VTK export of solution fields with
//! optional centroid-recovered von Mises stress and heat-flux magnitude.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::{KernelCacheStore, SolutionState};
use crate::material::{self, MaterialField};
use crate::mesh::{build_structured_grid, DirichletSpec, ElemKind, Mesh};
use crate::operators::{ModelSet, SampleInput};
use crate::problems::MaterialConstants;
use crate::sampler::{self, FourierSamplerConfig};
use crate::solver::{solve_coupled, SolverOpts};
use crate::tape::{FemProblem, Params};

/// ||pred - ref||_2 / ||ref||_2. A zero reference norm is an undefined
/// metric and reported as an error so callers can exclude the sample.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::SizeMismatch(format!(
            "prediction has {} values, reference has {}",
            pred.len(),
            reference.len()
        )));
    }
    let ref_norm: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative L2 undefined for a zero-norm reference field".into(),
        ));
    }
    let diff: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        .sqrt();
    Ok(diff / ref_norm)
}

/// Per-field relative L2 errors over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub label: String,
    pub fields: Vec<String>,
    /// per_sample[sample][field]
    pub per_sample: Vec<Vec<f64>>,
    /// Samples dropped because the oracle failed or a reference norm was
    /// zero.
    pub excluded: usize,
}

impl ErrorReport {
    pub fn empty(label: &str, fields: Vec<String>) -> Self {
        ErrorReport { label: label.into(), fields, per_sample: Vec::new(), excluded: 0 }
    }

    pub fn mean_per_field(&self) -> Vec<f64> {
        let nf = self.fields.len();
        let mut sums = vec![0.0; nf];
        for row in &self.per_sample {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = self.per_sample.len().max(1) as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }

    pub fn mean_overall(&self) -> f64 {
        let per_field = self.mean_per_field();
        per_field.iter().sum::<f64>() / per_field.len().max(1) as f64
    }

    pub fn quantile_per_field(&self, q: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.fields.len());
        for f in 0..self.fields.len() {
            let mut vals: Vec<f64> = self.per_sample.iter().map(|r| r[f]).collect();
            if vals.is_empty() {
                out.push(f64::NAN);
                continue;
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos = q * (vals.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            out.push(vals[lo] * (1.0 - w) + vals[hi] * w);
        }
        out
    }

    pub fn median_per_field(&self) -> Vec<f64> {
        self.quantile_per_field(0.5)
    }

    /// One record per line; floats use the shortest round-trippable form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# feol-error-report v1");
        let _ = writeln!(s, "label {}", self.label);
        let _ = writeln!(s, "fields {}", self.fields.join(" "));
        let _ = writeln!(s, "excluded {}", self.excluded);
        for (i, row) in self.per_sample.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "sample {i} {}", vals.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut label = String::new();
        let mut fields = Vec::new();
        let mut excluded = 0usize;
        let mut per_sample = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("label") => label = toks.collect::<Vec<_>>().join(" "),
                Some("fields") => fields = toks.map(|t| t.to_string()).collect(),
                Some("excluded") => {
                    excluded = toks
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Config("bad excluded count".into()))?
                }
                Some("sample") => {
                    let _idx = toks.next();
                    let row: Vec<f64> = toks
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Config("bad sample row".into()))?;
                    per_sample.push(row);
                }
                _ => return Err(Error::Config(format!("bad report line: {line}"))),
            }
        }
        Ok(ErrorReport { label, fields, per_sample, excluded })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCase {
    InDistribution,
    Gyroid,
    Polycrystal,
    DualPhase,
}

impl TestCase {
    pub fn label(&self) -> &'static str {
        match self {
            TestCase::InDistribution => "in_distribution",
            TestCase::Gyroid => "gyroid",
            TestCase::Polycrystal => "polycrystal",
            TestCase::DualPhase => "dual_phase",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "in_distribution" => Some(TestCase::InDistribution),
            "gyroid" => Some(TestCase::Gyroid),
            "polycrystal" => Some(TestCase::Polycrystal),
            "dual_phase" => Some(TestCase::DualPhase),
            _ => None,
        }
    }

    pub fn all() -> [TestCase; 4] {
        [TestCase::InDistribution, TestCase::Gyroid, TestCase::Polycrystal, TestCase::DualPhase]
    }
}

/// The structured-grid problem family used for field-input evaluation.
#[derive(Debug, Clone)]
pub struct FieldTestbed {
    pub dim: usize,
    pub spec: DirichletSpec,
    pub consts: MaterialConstants,
    /// In-distribution generator; its grid is replaced by the evaluation
    /// resolution.
    pub sampler: FourierSamplerConfig,
    pub solver: SolverOpts,
}

impl FieldTestbed {
    pub fn mesh_at(&self, resolution: usize) -> Result<Mesh> {
        build_structured_grid(
            self.dim,
            &vec![resolution; self.dim],
            &vec![1.0; self.dim],
        )
    }

    pub fn field_names(&self) -> Vec<String> {
        let mut f = vec!["T".to_string(), "Ux".to_string(), "Uy".to_string()];
        if self.dim == 3 {
            f.push("Uz".to_string());
        }
        f
    }

    /// Test field for one sample of a case, at the given resolution.
    pub fn test_field(&self, case: TestCase, resolution: usize, index: u64) -> Result<Vec<f64>> {
        let grid = vec![resolution; self.dim];
        match case {
            TestCase::InDistribution => {
                let cfg = FourierSamplerConfig { grid, ..self.sampler.clone() };
                sampler::fourier_field(&cfg, index)
            }
            TestCase::Gyroid => {
                // cycle a pinned list of periods for sample diversity
                const PERIODS: [f64; 5] = [0.5, 0.4, 0.6, 0.45, 0.55];
                let period = PERIODS[(index as usize) % PERIODS.len()];
                sampler::gyroid_field(&grid, period, self.sampler.phi_min, self.sampler.phi_max)
            }
            TestCase::Polycrystal => sampler::voronoi_polycrystal(
                &grid,
                60,
                (self.sampler.phi_min, self.sampler.phi_max),
                1000 + index,
            ),
            TestCase::DualPhase => sampler::dual_phase_field(
                &grid,
                60,
                (self.sampler.phi_min, self.sampler.phi_max),
                0.5,
                2000 + index,
            ),
        }
    }
}

/// Split an interleaved displacement vector into per-component slices.
pub fn split_components(u: &[f64], dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|d| u.iter().skip(d).step_by(dim).copied().collect())
        .collect()
}

/// For each sample: generate the field, solve the oracle, predict, and
/// record per-field relative L2 errors. Oracle failures and zero-norm
/// references exclude the sample with a warning count.
pub fn evaluate_testcase(
    testbed: &FieldTestbed,
    set: &ModelSet,
    params: &[Params],
    case: TestCase,
    n_samples: usize,
    resolution: usize,
    first_index: u64,
) -> Result<ErrorReport> {
    let mut report = ErrorReport::empty(case.label(), testbed.field_names());
    if n_samples == 0 {
        return Ok(report);
    }
    let mesh = Arc::new(testbed.mesh_at(resolution)?);
    let bcs = testbed.spec.expand(&mesh)?;
    let kernels = Arc::new(KernelCacheStore::build(&mesh)?);
    let problem = FemProblem::new(mesh.clone(), kernels, Arc::new(bcs));

    for i in 0..n_samples {
        let phi = testbed.test_field(case, resolution, first_index + i as u64)?;
        let mat = testbed.consts.field(phi.clone())?;
        let oracle = match solve_coupled(&mesh, &mat, &testbed.spec, &testbed.solver) {
            Ok((state, _)) => state,
            Err(_) => {
                report.excluded += 1;
                continue;
            }
        };
        let input = SampleInput::from_field(&mesh, phi)?;
        let pred = set.predict(params, &input, &problem)?;

        let mut row = Vec::with_capacity(report.fields.len());
        let mut valid = true;
        match relative_l2(&pred.t, &oracle.t) {
            Ok(v) => row.push(v),
            Err(_) => valid = false,
        }
        if valid {
            let pred_u = split_components(&pred.u, testbed.dim);
            let ref_u = split_components(&oracle.u, testbed.dim);
            for d in 0..testbed.dim {
                match relative_l2(&pred_u[d], &ref_u[d]) {
                    Ok(v) => row.push(v),
                    Err(_) => {
                        valid = false;
                        break;
                    }
                }
            }
        }
        if valid {
            report.per_sample.push(row);
        } else {
            report.excluded += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub resolution: usize,
    pub inference_seconds: f64,
    pub oracle_seconds: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub hardware: String,
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# feol-timing-report v1");
        let _ = writeln!(s, "hardware {}", self.hardware);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "row {} {} {} {}",
                r.resolution, r.inference_seconds, r.oracle_seconds, r.speedup
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut hardware = String::new();
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("hardware") => hardware = toks.collect::<Vec<_>>().join(" "),
                Some("row") => {
                    let vals: Vec<&str> = toks.collect();
                    if vals.len() != 4 {
                        return Err(Error::Config("bad timing row".into()));
                    }
                    rows.push(TimingRow {
                        resolution: vals[0].parse().map_err(|_| Error::Config("bad resolution".into()))?,
                        inference_seconds: vals[1].parse().map_err(|_| Error::Config("bad value".into()))?,
                        oracle_seconds: vals[2].parse().map_err(|_| Error::Config("bad value".into()))?,
                        speedup: vals[3].parse().map_err(|_| Error::Config("bad value".into()))?,
                    });
                }
                _ => return Err(Error::Config(format!("bad timing line: {line}"))),
            }
        }
        Ok(TimingReport { hardware, rows })
    }
}

fn median(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Median inference and oracle-solve times per resolution, on the same
/// in-distribution samples. The first inference per resolution is a warmup
/// and excluded.
pub fn benchmark_timing(
    testbed: &FieldTestbed,
    set: &ModelSet,
    params: &[Params],
    resolutions: &[usize],
    n_cases: usize,
) -> Result<TimingReport> {
    let hardware = format!(
        "cpu x{}",
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    let mut rows = Vec::new();
    for &res in resolutions {
        let mesh = Arc::new(testbed.mesh_at(res)?);
        let bcs = testbed.spec.expand(&mesh)?;
        let kernels = Arc::new(KernelCacheStore::build(&mesh)?);
        let problem = FemProblem::new(mesh.clone(), kernels, Arc::new(bcs));

        let mut inf_times = Vec::with_capacity(n_cases);
        let mut orc_times = Vec::with_capacity(n_cases);
        for i in 0..=n_cases {
            let phi = testbed.test_field(TestCase::InDistribution, res, 50_000 + i as u64)?;
            let input = SampleInput::from_field(&mesh, phi.clone())?;
            let start = Instant::now();
            let _ = set.predict(params, &input, &problem)?;
            let dt = start.elapsed().as_secs_f64();
            if i > 0 {
                inf_times.push(dt);
            }
            if i > 0 {
                let mat = testbed.consts.field(phi)?;
                let start = Instant::now();
                let _ = solve_coupled(&mesh, &mat, &testbed.spec, &testbed.solver)?;
                orc_times.push(start.elapsed().as_secs_f64());
            }
        }
        let inference_seconds = median(inf_times);
        let oracle_seconds = median(orc_times);
        rows.push(TimingRow {
            resolution: res,
            inference_seconds,
            oracle_seconds,
            speedup: oracle_seconds / inference_seconds,
        });
    }
    Ok(TimingReport { hardware, rows })
}

/// Von Mises stress and heat-flux magnitude recovered at element
/// centroids.
pub fn centroid_stress_flux(
    mesh: &Mesh,
    mat: &MaterialField,
    state: &SolutionState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    state.check_sizes(mesh)?;
    let dim = mesh.dim;
    let npe = mesh.elem_kind.nodes_per_elem();
    let nv = material::voigt_size(dim);
    let centroid = match mesh.elem_kind {
        ElemKind::Quad4 | ElemKind::Hex8 => [0.0, 0.0, 0.0],
        ElemKind::Tet4 => [0.25, 0.25, 0.25],
    };
    let (n_funcs, dn) = crate::fem::shape_functions(mesh.elem_kind, &centroid);

    let mut vm = Vec::with_capacity(mesh.n_elements());
    let mut flux = Vec::with_capacity(mesh.n_elements());
    let mut xe = vec![0.0; npe * dim];
    for e in 0..mesh.n_elements() {
        mesh.gather_coords(e, &mut xe);
        let conn = mesh.element(e);
        let j = crate::fem::shape::jacobian(dim, npe, &dn, &xe);
        let detj = crate::fem::shape::det(dim, &j);
        let inv = crate::fem::shape::invert(dim, &j, detj)?;
        // nodal-to-centroid interpolation and gradients
        let mut t = 0.0;
        let mut phi = 0.0;
        for (a, &node) in conn.iter().enumerate() {
            t += n_funcs[a] * state.t[node];
            phi += n_funcs[a] * mat.phi[node];
        }
        let mut grad_t = [0.0; 3];
        let mut grad_u = [[0.0; 3]; 3]; // grad_u[comp][axis]
        for (a, &node) in conn.iter().enumerate() {
            let mut dx = [0.0; 3];
            for i in 0..dim {
                for jj in 0..dim {
                    dx[i] += dn[a * dim + jj] * inv[jj][i];
                }
            }
            for i in 0..dim {
                grad_t[i] += dx[i] * state.t[node];
                for c in 0..dim {
                    grad_u[c][i] += dx[i] * state.u[node * dim + c];
                }
            }
        }
        // flux magnitude
        let k = mat.conductivity(phi, t);
        let qmag = (0..dim).map(|i| (k * grad_t[i]).powi(2)).sum::<f64>().sqrt();
        flux.push(qmag);
        // stress
        let e_mod = mat.youngs_modulus(phi, t)?;
        let d = material::elasticity_matrix(e_mod, mat.nu, dim)?;
        let mut eps = vec![0.0; nv];
        if dim == 2 {
            eps[0] = grad_u[0][0];
            eps[1] = grad_u[1][1];
            eps[2] = grad_u[0][1] + grad_u[1][0];
        } else {
            eps[0] = grad_u[0][0];
            eps[1] = grad_u[1][1];
            eps[2] = grad_u[2][2];
            eps[3] = grad_u[1][2] + grad_u[2][1];
            eps[4] = grad_u[0][2] + grad_u[2][0];
            eps[5] = grad_u[0][1] + grad_u[1][0];
        }
        let eth = mat.alpha * (t - mat.t_ref);
        for item in eps.iter_mut().take(dim) {
            *item -= eth;
        }
        let mut sigma = vec![0.0; nv];
        for i in 0..nv {
            for jj in 0..nv {
                sigma[i] += d[i * nv + jj] * eps[jj];
            }
        }
        let v = if dim == 2 {
            // in-plane components of the plane-strain state
            (sigma[0] * sigma[0] - sigma[0] * sigma[1] + sigma[1] * sigma[1]
                + 3.0 * sigma[2] * sigma[2])
                .max(0.0)
                .sqrt()
        } else {
            let (sx, sy, sz, tyz, txz, txy) =
                (sigma[0], sigma[1], sigma[2], sigma[3], sigma[4], sigma[5]);
            (0.5 * ((sx - sy).powi(2) + (sy - sz).powi(2) + (sz - sx).powi(2))
                + 3.0 * (tyz * tyz + txz * txz + txy * txy))
                .max(0.0)
                .sqrt()
        };
        vm.push(v);
    }
    Ok((vm, flux))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VtkOptions {
    pub stress: bool,
    pub flux: bool,
    /// Displace coordinates by U times this factor.
    pub deform_scale: Option<f64>,
}

/// Legacy ASCII VTK v3.0 unstructured-grid export with point data T and U
/// and optional centroid cell data.
pub fn export_vtk(
    mesh: &Mesh,
    mat: &MaterialField,
    state: &SolutionState,
    opts: VtkOptions,
    path: &Path,
) -> Result<()> {
    state.check_sizes(mesh)?;
    let dim = mesh.dim;
    let n = mesh.n_nodes();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "feol solution export");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {n} double");
    let scale = opts.deform_scale.unwrap_or(0.0);
    for node in 0..n {
        let x = mesh.node(node);
        let mut p = [0.0; 3];
        for d in 0..dim {
            p[d] = x[d] + scale * state.u[node * dim + d];
        }
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    let npe = mesh.elem_kind.nodes_per_elem();
    let ne = mesh.n_elements();
    let _ = writeln!(s, "CELLS {ne} {}", ne * (npe + 1));
    for e in 0..ne {
        let conn: Vec<String> = mesh.element(e).iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{npe} {}", conn.join(" "));
    }
    let cell_type = match mesh.elem_kind {
        ElemKind::Quad4 => 9,
        ElemKind::Hex8 => 12,
        ElemKind::Tet4 => 10,
    };
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        let _ = writeln!(s, "{cell_type}");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    let _ = writeln!(s, "SCALARS temperature double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for v in &state.t {
        let _ = writeln!(s, "{v}");
    }
    let _ = writeln!(s, "VECTORS displacement double");
    for node in 0..n {
        let mut u = [0.0; 3];
        for d in 0..dim {
            u[d] = state.u[node * dim + d];
        }
        let _ = writeln!(s, "{} {} {}", u[0], u[1], u[2]);
    }
    if opts.stress || opts.flux {
        let (vm, flux) = centroid_stress_flux(mesh, mat, state)?;
        let _ = writeln!(s, "CELL_DATA {ne}");
        if opts.stress {
            let _ = writeln!(s, "SCALARS von_mises double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in &vm {
                let _ = writeln!(s, "{v}");
            }
        }
        if opts.flux {
            let _ = writeln!(s, "SCALARS heat_flux_magnitude double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in &flux {
                let _ = writeln!(s, "{v}");
            }
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Minimal reader for the files written by [`export_vtk`]: points, the
/// temperature scalars, and the displacement vectors.
pub fn read_vtk_point_data(path: &Path) -> Result<(Vec<[f64; 3]>, Vec<f64>, Vec<[f64; 3]>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    let mut points = Vec::new();
    let mut temperature = Vec::new();
    let mut displacement = Vec::new();
    while let Some(line) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "POINTS" => {
                let count: usize = toks[1].parse().map_err(|_| Error::Config("bad POINTS".into()))?;
                for _ in 0..count {
                    let row = lines.next().ok_or_else(|| Error::Config("short POINTS".into()))?;
                    let vals: Vec<f64> = row
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Config("bad point".into()))?;
                    points.push([vals[0], vals[1], vals[2]]);
                }
            }
            "SCALARS" if toks.get(1) == Some(&"temperature") => {
                lines.next(); // LOOKUP_TABLE
                for _ in 0..points.len() {
                    let row = lines.next().ok_or_else(|| Error::Config("short SCALARS".into()))?;
                    temperature.push(
                        row.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config("bad scalar".into()))?,
                    );
                }
            }
            "VECTORS" if toks.get(1) == Some(&"displacement") => {
                for _ in 0..points.len() {
                    let row = lines.next().ok_or_else(|| Error::Config("short VECTORS".into()))?;
                    let vals: Vec<f64> = row
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Config("bad vector".into()))?;
                    displacement.push([vals[0], vals[1], vals[2]]);
                }
            }
            _ => {}
        }
    }
    Ok((points, temperature, displacement))
}
