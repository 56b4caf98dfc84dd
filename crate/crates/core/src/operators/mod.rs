//! Neural-operator backbones: FNO, DeepONet, and a modulated conditional
//! neural field, plus network decomposition and checkpoint I/O.
//!
//! Every backbone maps an input sample (material field or boundary
//! parameter) and query coordinates to the nodal solution fields. Output
//! order is always [T, Ux, Uy(, Uz)]; predictions are scaled by the
//! configured output factor and then overwritten with the hard Dirichlet
//! values.

pub mod checkpoint;
pub mod decomp;
pub mod deeponet;
pub mod fno;
pub mod ifol;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::SolutionState;
use crate::mesh::Mesh;
use crate::tape::{FemProblem, NodeId, Params, Tape, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use decomp::{build_decomposition, DecompositionStrategy};
pub use deeponet::{DeepOnetConfig, DeepOnetModel};
pub use fno::{FnoConfig, FnoModel};
pub use ifol::{IfolConfig, IfolModel};

/// One backbone instance with its registered parameter segments.
#[derive(Debug, Clone)]
pub enum Backbone {
    Fno(FnoModel),
    DeepOnet(DeepOnetModel),
    Ifol(IfolModel),
}

impl Backbone {
    pub fn n_out_fields(&self) -> usize {
        match self {
            Backbone::Fno(m) => m.cfg.out_fields,
            Backbone::DeepOnet(m) => m.cfg.out_fields,
            Backbone::Ifol(m) => m.cfg.out_fields,
        }
    }

    pub fn descriptor(&self) -> checkpoint::ArchDescriptor {
        match self {
            Backbone::Fno(m) => checkpoint::ArchDescriptor::Fno(m.cfg.clone()),
            Backbone::DeepOnet(m) => checkpoint::ArchDescriptor::DeepOnet(m.cfg.clone()),
            Backbone::Ifol(m) => checkpoint::ArchDescriptor::Ifol(m.cfg.clone()),
        }
    }

    /// Forward pass emitting one flat [n_points] node per output field,
    /// already multiplied by the output scale.
    pub fn forward_fields(
        &self,
        tape: &mut Tape,
        model_idx: usize,
        input: &SampleInput,
    ) -> Result<Vec<NodeId>> {
        match self {
            Backbone::Fno(m) => m.forward_fields(tape, model_idx, input),
            Backbone::DeepOnet(m) => m.forward_fields(tape, model_idx, input),
            Backbone::Ifol(m) => m.forward_fields(tape, model_idx, input),
        }
    }
}

/// One input sample for a forward pass.
///
/// `coords` is the [dim, n] matrix of normalized query coordinates;
/// `spatial` carries the structured-grid shape ([ny, nx] or [nz, ny, nx])
/// when the backbone needs a grid (FNO).
#[derive(Debug, Clone)]
pub struct SampleInput {
    pub phi: Option<Vec<f64>>,
    pub param: Option<Vec<f64>>,
    pub coords: Tensor,
    pub spatial: Option<Vec<usize>>,
}

impl SampleInput {
    /// Grid sample: per-node phase field on a structured mesh.
    pub fn from_field(mesh: &Mesh, phi: Vec<f64>) -> Result<Self> {
        let info = mesh.structured_info().ok_or_else(|| {
            Error::Unsupported("grid input requires a structured mesh".into())
        })?;
        // tensor spatial layout is [.., ny, nx] with x fastest, matching the
        // mesh node ordering
        let spatial: Vec<usize> = info.nodes_per_side.iter().rev().copied().collect();
        Ok(SampleInput {
            phi: Some(phi),
            param: None,
            coords: normalized_coords(mesh),
            spatial: Some(spatial),
        })
    }

    /// Parametric sample: a parameter vector plus query coordinates.
    pub fn from_param(mesh: &Mesh, param: Vec<f64>) -> Self {
        SampleInput {
            phi: None,
            param: Some(param),
            coords: normalized_coords(mesh),
            spatial: None,
        }
    }
}

/// Per-axis [0, 1] normalization of the mesh node coordinates, as a
/// [dim, n_nodes] tensor.
pub fn normalized_coords(mesh: &Mesh) -> Tensor {
    let n = mesh.n_nodes();
    let dim = mesh.dim;
    let (lo, hi) = mesh.bounding_box();
    let mut data = vec![0.0; dim * n];
    for node in 0..n {
        let x = mesh.node(node);
        for d in 0..dim {
            let range = (hi[d] - lo[d]).max(1e-300);
            data[d * n + node] = (x[d] - lo[d]) / range;
        }
    }
    Tensor::new(vec![dim, n], data)
}

/// A set of models jointly covering the output fields [T, Ux, Uy(, Uz)].
/// One model per entry in `models`; fields are assigned to models in
/// order.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub models: Vec<Backbone>,
}

impl ModelSet {
    pub fn single(model: Backbone) -> Self {
        ModelSet { models: vec![model] }
    }

    pub fn total_fields(&self) -> usize {
        self.models.iter().map(|m| m.n_out_fields()).sum()
    }

    /// Forward all models and assemble the (T, U) state nodes with hard
    /// Dirichlet imposition.
    pub fn state_nodes(
        &self,
        tape: &mut Tape,
        input: &SampleInput,
        problem: &FemProblem,
    ) -> Result<(NodeId, NodeId)> {
        let dim = problem.mesh.dim;
        let mut fields = Vec::with_capacity(1 + dim);
        for (idx, model) in self.models.iter().enumerate() {
            fields.extend(model.forward_fields(tape, idx, input)?);
        }
        if fields.len() != 1 + dim {
            return Err(Error::WidthMismatch(format!(
                "model set emits {} fields, problem needs {}",
                fields.len(),
                1 + dim
            )));
        }
        let t_raw = fields[0];
        let u_raw = tape.interleave(&fields[1..]);
        let t = tape.gather_overwrite(t_raw, problem.t_bc_idx.clone(), problem.t_bc_val.clone());
        let u = tape.gather_overwrite(u_raw, problem.u_bc_idx.clone(), problem.u_bc_val.clone());
        Ok((t, u))
    }

    /// Forward-only prediction on an eval tape.
    pub fn predict(
        &self,
        params: &[Params],
        input: &SampleInput,
        problem: &FemProblem,
    ) -> Result<SolutionState> {
        let mut tape = Tape::eval(params);
        let (t, u) = self.state_nodes(&mut tape, input, problem)?;
        Ok(SolutionState {
            t: tape.real(t).data.clone(),
            u: tape.real(u).data.clone(),
        })
    }

    /// Build the parameter arena for this model set with seeded
    /// initialization; model i owns params[i]. Segment registration is
    /// deterministic, so replaying it on a clone reproduces the layout the
    /// stored models were built with.
    pub fn init_params(&self, seed: u64) -> Vec<Params> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64) << 32));
                let mut p = Params::new();
                match m.clone() {
                    Backbone::Fno(mut f) => f.register(&mut p),
                    Backbone::DeepOnet(mut d) => d.register(&mut p),
                    Backbone::Ifol(mut f) => f.register(&mut p),
                };
                init_params(&mut p, m, &mut rng);
                p
            })
            .collect()
    }
}

/// Kaiming-style fan-in uniform init for affine segments, scaled positive
/// uniform for spectral segments.
fn init_params(params: &mut Params, model: &Backbone, rng: &mut ChaCha8Rng) {
    let plan: Vec<(usize, SegmentInit)> = match model {
        Backbone::Fno(m) => m.init_plan(),
        Backbone::DeepOnet(m) => m.init_plan(),
        Backbone::Ifol(m) => m.init_plan(),
    };
    for (seg, init) in plan {
        let data = params.seg_mut(seg);
        match init {
            SegmentInit::AffineWeight { fan_in } => {
                let s = (1.0 / fan_in as f64).sqrt();
                for v in data.iter_mut() {
                    *v = rng.gen_range(-s..s);
                }
            }
            SegmentInit::Bias { fan_in } => {
                let s = (1.0 / fan_in as f64).sqrt();
                for v in data.iter_mut() {
                    *v = rng.gen_range(-s..s);
                }
            }
            SegmentInit::Spectral { in_channels, out_channels } => {
                let s = 1.0 / (in_channels * out_channels) as f64;
                for v in data.iter_mut() {
                    *v = rng.gen_range(0.0..s);
                }
            }
            SegmentInit::Zero => {
                for v in data.iter_mut() {
                    *v = 0.0;
                }
            }
        }
    }
}

/// How one parameter segment is initialized.
#[derive(Debug, Clone, Copy)]
pub enum SegmentInit {
    AffineWeight { fan_in: usize },
    Bias { fan_in: usize },
    Spectral { in_channels: usize, out_channels: usize },
    Zero,
}

/// Shared MLP helper: a stack of affine layers with the given activation
/// between them (none after the last).
#[derive(Debug, Clone)]
pub(crate) struct MlpSegs {
    pub weights: Vec<usize>,
    pub biases: Vec<usize>,
    pub widths: Vec<usize>, // layer output widths
}

impl MlpSegs {
    /// Register an MLP mapping `input_dim` through `widths`.
    pub fn register(params: &mut Params, name: &str, input_dim: usize, widths: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut prev = input_dim;
        for (i, &w) in widths.iter().enumerate() {
            weights.push(params.add_segment(&format!("{name}_w{i}"), w * prev));
            biases.push(params.add_segment(&format!("{name}_b{i}"), w));
            prev = w;
        }
        MlpSegs { weights, biases, widths: widths.to_vec() }
    }

    pub fn init_plan(&self, input_dim: usize) -> Vec<(usize, SegmentInit)> {
        let mut plan = Vec::new();
        let mut prev = input_dim;
        for i in 0..self.widths.len() {
            plan.push((self.weights[i], SegmentInit::AffineWeight { fan_in: prev }));
            plan.push((self.biases[i], SegmentInit::Bias { fan_in: prev }));
            prev = self.widths[i];
        }
        plan
    }

    /// Forward with activation after every layer except the last.
    pub fn forward(
        &self,
        tape: &mut Tape,
        model_idx: usize,
        x: NodeId,
        act: crate::tape::Activation,
    ) -> NodeId {
        let mut cur = x;
        for i in 0..self.widths.len() {
            cur = tape.affine(
                crate::tape::ParamRef { model: model_idx, seg: self.weights[i] },
                Some(crate::tape::ParamRef { model: model_idx, seg: self.biases[i] }),
                self.widths[i],
                cur,
            );
            if i + 1 < self.widths.len() {
                cur = tape.activation(act, cur);
            }
        }
        cur
    }

    pub fn n_params(&self, input_dim: usize) -> usize {
        let mut total = 0;
        let mut prev = input_dim;
        for &w in &self.widths {
            total += w * prev + w;
            prev = w;
        }
        total
    }
}

/// Build a `FemProblem` from its parts.
pub fn fem_problem(mesh: Arc<Mesh>, bcs: crate::mesh::ExpandedBcs) -> Result<FemProblem> {
    let kernels = Arc::new(crate::fem::KernelCacheStore::build(&mesh)?);
    Ok(FemProblem::new(mesh, kernels, Arc::new(bcs)))
}
