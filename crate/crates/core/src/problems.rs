//! The shipped problem setups: a 2D square plate, a 3D cubic cell, and an
//! irregular casting-style solid with a parametric feeder temperature —
//! plus dataset builders that pair sampled inputs with their loss-head
//! contexts.
//!
//! Boundary tables: the square/cube problems prescribe T = 0.5 at x = 0,
//! T = 0 at x = L, and pull every displacement component from 0 at x = 0
//! to 0.1 at x = L; the remaining faces are natural. The 2D table reuses
//! the cubic pattern restricted to two axes. The casting solid fixes the
//! bottom (T = 0.001, U = 0), keeps the surroundings at T = 0.001 with
//! free tractions, pins the inlet base laterally, and drives the feeder
//! top with a parametric temperature with the top fully clamped.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::Result;
use crate::fem::KernelCacheStore;
use crate::material::MaterialField;
use crate::mesh::{
    build_structured_grid, BcValue, DirichletEntry, DirichletSpec, ElemKind, FieldComponent, Mesh,
    ParametricTag,
};
use crate::operators::SampleInput;
use crate::sampler::{self, FourierSamplerConfig};
use crate::tape::FemProblem;
use crate::training::{Dataset, TrainSample};

/// Scalar material constants shared by a problem.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MaterialConstants {
    pub nu: f64,
    pub alpha: f64,
    pub t_ref: f64,
}

impl Default for MaterialConstants {
    fn default() -> Self {
        MaterialConstants { nu: 0.3, alpha: 1e-3, t_ref: 0.0 }
    }
}

impl MaterialConstants {
    pub fn field(&self, phi: Vec<f64>) -> Result<MaterialField> {
        MaterialField::new(phi, self.nu, self.alpha, self.t_ref)
    }
}

/// Square-plate boundary table (the cubic pattern restricted to 2D).
pub fn square2d_spec() -> DirichletSpec {
    DirichletSpec::fixed(&[
        ("x0", FieldComponent::T, 0.5),
        ("x1", FieldComponent::T, 0.0),
        ("x0", FieldComponent::Ux, 0.0),
        ("x1", FieldComponent::Ux, 0.1),
        ("x0", FieldComponent::Uy, 0.0),
        ("x1", FieldComponent::Uy, 0.1),
    ])
}

pub fn square2d_mesh(nodes_per_side: usize) -> Result<Mesh> {
    build_structured_grid(2, &[nodes_per_side, nodes_per_side], &[1.0, 1.0])
}

/// Cubic-cell boundary table.
pub fn rve3d_spec() -> DirichletSpec {
    DirichletSpec::fixed(&[
        ("x0", FieldComponent::T, 0.5),
        ("x1", FieldComponent::T, 0.0),
        ("x0", FieldComponent::Ux, 0.0),
        ("x1", FieldComponent::Ux, 0.1),
        ("x0", FieldComponent::Uy, 0.0),
        ("x1", FieldComponent::Uy, 0.1),
        ("x0", FieldComponent::Uz, 0.0),
        ("x1", FieldComponent::Uz, 0.1),
    ])
}

pub fn rve3d_mesh(nodes_per_side: usize) -> Result<Mesh> {
    build_structured_grid(
        3,
        &[nodes_per_side, nodes_per_side, nodes_per_side],
        &[1.0, 1.0, 1.0],
    )
}

/// Casting boundary table. The feeder temperature is parametric and must
/// be resolved before solving.
pub fn casting_spec() -> DirichletSpec {
    let mut entries = vec![DirichletEntry {
        bset: "feeder_top".into(),
        field: FieldComponent::T,
        value: BcValue::Parametric(ParametricTag::Parametric),
    }];
    entries.extend(
        DirichletSpec::fixed(&[
            ("bottom", FieldComponent::T, 0.001),
            ("bottom", FieldComponent::Ux, 0.0),
            ("bottom", FieldComponent::Uy, 0.0),
            ("bottom", FieldComponent::Uz, 0.0),
            ("surroundings", FieldComponent::T, 0.001),
            ("inlet_bottom", FieldComponent::Ux, 0.0),
            ("inlet_bottom", FieldComponent::Uy, 0.0),
            ("feeder_top", FieldComponent::Ux, 0.0),
            ("feeder_top", FieldComponent::Uy, 0.0),
            ("feeder_top", FieldComponent::Uz, 0.0),
        ])
        .entries,
    );
    DirichletSpec::new(entries)
}

/// Half-ulp slack for the voxel-center and node containment tests.
const GEOM_EPS: f64 = 1e-9;

fn within(lo: f64, v: f64, hi: f64) -> bool {
    v >= lo - GEOM_EPS && v <= hi + GEOM_EPS
}

/// Plan-view footprint of the casting solid: an F-shaped slab plus the
/// inlet column footprint.
fn casting_solid(x: f64, y: f64, z: f64) -> bool {
    let slab = z <= 0.5 + GEOM_EPS
        && ((x <= 0.4 + GEOM_EPS && y <= 1.0 + GEOM_EPS)
            || (x <= 1.0 + GEOM_EPS && within(0.7, y, 1.0))
            || (x <= 0.8 + GEOM_EPS && within(0.35, y, 0.55)));
    let inlet = within(0.5, z, 0.85) && inlet_footprint(x, y);
    slab || inlet
}

fn inlet_footprint(x: f64, y: f64) -> bool {
    within(0.10, x, 0.30) && within(0.75, y, 0.95)
}

/// Deterministic irregular tetrahedral solid with a top feeder boundary:
/// an F-shaped slab (z in [0, 0.5]) carrying an inlet column up to
/// z = 0.85, voxelized at the given resolution and split into
/// tetrahedra. Boundary sets `bottom`, `surroundings`, `inlet_bottom`,
/// and `feeder_top` are disjoint.
pub fn casting_surrogate_mesh(divisions: usize) -> Result<Mesh> {
    let h = 1.0 / divisions as f64;
    let nz_total = (0.85 / h).round() as usize;
    let nxy = divisions;

    // voxel occupancy by center
    let voxel = |i: usize, j: usize, k: usize| -> bool {
        let (x, y, z) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h);
        casting_solid(x, y, z)
    };

    let mut node_ids: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    let mut coords: Vec<f64> = Vec::new();
    let mut node_of = |i: usize, j: usize, k: usize, coords: &mut Vec<f64>| -> usize {
        let key = (i, j, k);
        if let Some(&id) = node_ids.get(&key) {
            return id;
        }
        let id = coords.len() / 3;
        coords.extend_from_slice(&[i as f64 * h, j as f64 * h, k as f64 * h]);
        node_ids.insert(key, id);
        id
    };

    // hex corner offsets in the bottom-face-then-top-face order
    const CORNERS: [(usize, usize, usize); 8] = [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ];
    // six tetrahedra around the 0-6 diagonal
    const TETS: [[usize; 4]; 6] = [
        [0, 1, 2, 6],
        [0, 2, 3, 6],
        [0, 3, 7, 6],
        [0, 7, 4, 6],
        [0, 4, 5, 6],
        [0, 5, 1, 6],
    ];

    let mut elements: Vec<usize> = Vec::new();
    let mut occupied: Vec<(usize, usize, usize)> = Vec::new();
    for k in 0..nz_total {
        for j in 0..nxy {
            for i in 0..nxy {
                if !voxel(i, j, k) {
                    continue;
                }
                occupied.push((i, j, k));
                let ids: Vec<usize> = CORNERS
                    .iter()
                    .map(|&(di, dj, dk)| node_of(i + di, j + dj, k + dk, &mut coords))
                    .collect();
                for tet in &TETS {
                    let mut conn = [ids[tet[0]], ids[tet[1]], ids[tet[2]], ids[tet[3]]];
                    if signed_volume(&coords, &conn) < 0.0 {
                        conn.swap(2, 3);
                    }
                    elements.extend_from_slice(&conn);
                }
            }
        }
    }

    // exterior nodes: any of the up-to-8 incident voxels missing
    let occupied_set: std::collections::BTreeSet<(usize, usize, usize)> =
        occupied.iter().copied().collect();
    let n_nodes = coords.len() / 3;
    let mut exterior = vec![false; n_nodes];
    for (&(i, j, k), &id) in &node_ids {
        let mut interior = true;
        for dk in 0..2usize {
            for dj in 0..2usize {
                for di in 0..2usize {
                    let (vi, vj, vk) = (
                        i.wrapping_sub(1).wrapping_add(di),
                        j.wrapping_sub(1).wrapping_add(dj),
                        k.wrapping_sub(1).wrapping_add(dk),
                    );
                    if vi >= nxy || vj >= nxy || vk >= nz_total || !occupied_set.contains(&(vi, vj, vk)) {
                        interior = false;
                    }
                }
            }
        }
        exterior[id] = !interior;
    }

    // top node plane derived from what actually got voxelized
    let zmax = occupied.iter().map(|&(_, _, k)| k + 1).max().unwrap_or(0);
    let z_inlet_base = (0.5 / h).round() as usize;
    let mut bottom = Vec::new();
    let mut feeder_top = Vec::new();
    let mut inlet_bottom = Vec::new();
    let mut surroundings = Vec::new();
    for (&(i, j, k), &id) in &node_ids {
        if !exterior[id] {
            continue;
        }
        let (x, y) = (i as f64 * h, j as f64 * h);
        if k == 0 {
            bottom.push(id);
        } else if k == zmax {
            feeder_top.push(id);
        } else if k == z_inlet_base && inlet_footprint(x, y) {
            inlet_bottom.push(id);
        } else if k <= z_inlet_base {
            surroundings.push(id);
        }
        // the inlet column's lateral surface carries no constraints
    }

    let mut boundary_sets = BTreeMap::new();
    boundary_sets.insert("bottom".to_string(), bottom);
    boundary_sets.insert("feeder_top".to_string(), feeder_top);
    boundary_sets.insert("inlet_bottom".to_string(), inlet_bottom);
    boundary_sets.insert("surroundings".to_string(), surroundings);

    Mesh::new(3, ElemKind::Tet4, coords, elements, boundary_sets)
}

fn signed_volume(coords: &[f64], conn: &[usize; 4]) -> f64 {
    let p = |n: usize| [coords[conn[n] * 3], coords[conn[n] * 3 + 1], coords[conn[n] * 3 + 2]];
    let (a, b, c, d) = (p(0), p(1), p(2), p(3));
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let ad = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    (ab[0] * (ac[1] * ad[2] - ac[2] * ad[1]) - ab[1] * (ac[0] * ad[2] - ac[2] * ad[0])
        + ab[2] * (ac[0] * ad[1] - ac[1] * ad[0]))
        / 6.0
}

/// Evenly spaced parameter values over [lo, hi], endpoints included.
pub fn uniform_parameters(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Midpoints between evenly spaced training values: unseen by training.
pub fn heldout_parameters(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
        .collect()
}

/// Dataset of Fourier-sampled phase fields on a structured mesh; the
/// loss-head context is shared since every sample sees the same boundary
/// values.
pub fn field_dataset(
    mesh: &Arc<Mesh>,
    spec: &DirichletSpec,
    consts: MaterialConstants,
    sampler_cfg: &FourierSamplerConfig,
    first_index: u64,
    count: usize,
) -> Result<Dataset> {
    let bcs = spec.expand(mesh)?;
    let kernels = Arc::new(KernelCacheStore::build(mesh)?);
    let problem = Arc::new(FemProblem::new(mesh.clone(), kernels, Arc::new(bcs)));
    let mut samples = Vec::with_capacity(count);
    let mut hash_input: Vec<u8> = Vec::new();
    for i in 0..count {
        let phi = sampler::fourier_field(sampler_cfg, first_index + i as u64)?;
        for v in &phi {
            hash_input.extend_from_slice(&v.to_le_bytes());
        }
        let mat = Arc::new(consts.field(phi.clone())?);
        samples.push(TrainSample {
            input: SampleInput::from_field(mesh, phi)?,
            mat,
            problem: problem.clone(),
        });
    }
    Ok(Dataset { samples, content_hash: sampler::content_hash(&hash_input) })
}

/// Dataset of boundary-parameter samples on a fixed mesh with a
/// homogeneous material; each sample resolves the parametric entries with
/// its own value, so the loss-head context differs per sample.
pub fn parametric_dataset(
    mesh: &Arc<Mesh>,
    spec: &DirichletSpec,
    consts: MaterialConstants,
    parameters: &[f64],
) -> Result<Dataset> {
    let kernels = Arc::new(KernelCacheStore::build(mesh)?);
    let mat = Arc::new(consts.field(vec![1.0; mesh.n_nodes()])?);
    let mut samples = Vec::with_capacity(parameters.len());
    let mut hash_input: Vec<u8> = Vec::new();
    for &p in parameters {
        hash_input.extend_from_slice(&p.to_le_bytes());
        let resolved = spec.resolve(p);
        let bcs = resolved.expand(mesh)?;
        let problem = Arc::new(FemProblem::new(mesh.clone(), kernels.clone(), Arc::new(bcs)));
        samples.push(TrainSample {
            input: SampleInput::from_param(mesh, vec![p]),
            mat: mat.clone(),
            problem,
        });
    }
    Ok(Dataset { samples, content_hash: sampler::content_hash(&hash_input) })
}
