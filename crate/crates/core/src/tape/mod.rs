//! Reverse-mode gradient tape over the operator forward passes and the
//! residual loss head.
//!
//! The primitive set is closed and small, so every adjoint is
//! hand-verifiable: pointwise affine maps, activations, FFTs, retained-mode
//! spectral multiplication, structural data movement (pad/crop/concat/
//! slice/interleave), Dirichlet overwrite, inner products, and the
//! residual-loss head. All arithmetic is f64.

pub mod fft;

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fem::loss::{assemble_residuals_frozen_coeffs, LossMode};
use crate::fem::{KernelCacheStore, SolutionState};
use crate::material::MaterialField;
use crate::mesh::{ExpandedBcs, Mesh};

/// Dense row-major real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Dense row-major complex tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CTensor {
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl CTensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        CTensor { shape, data: vec![Complex64::default(); n] }
    }
}

#[derive(Debug, Clone)]
pub enum Value {
    R(Tensor),
    C(CTensor),
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::R(t) => &t.shape,
            Value::C(t) => &t.shape,
        }
    }

    pub fn as_real(&self) -> &Tensor {
        match self {
            Value::R(t) => t,
            Value::C(_) => panic!("expected real tensor"),
        }
    }

    fn as_complex(&self) -> &CTensor {
        match self {
            Value::C(t) => t,
            Value::R(_) => panic!("expected complex tensor"),
        }
    }
}

/// Trainable parameter storage for one model: a flat f64 vector with named
/// segments. Complex parameters are stored as interleaved (re, im) pairs.
#[derive(Debug, Clone)]
pub struct Params {
    pub data: Vec<f64>,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Params {
    pub fn new() -> Self {
        Params { data: Vec::new(), segments: Vec::new() }
    }

    /// Register a named segment of `len` values, zero-initialized.
    pub fn add_segment(&mut self, name: &str, len: usize) -> usize {
        let offset = self.data.len();
        self.data.resize(offset + len, 0.0);
        self.segments.push(Segment { name: name.to_string(), offset, len });
        self.segments.len() - 1
    }

    pub fn seg(&self, id: usize) -> &[f64] {
        let s = &self.segments[id];
        &self.data[s.offset..s.offset + s.len]
    }

    pub fn seg_mut(&mut self, id: usize) -> &mut [f64] {
        let s = &self.segments[id];
        &mut self.data[s.offset..s.offset + s.len]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Reference to a parameter segment of one model in the arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub model: usize,
    pub seg: usize,
}

/// Per-model parameter gradients, aligned with each model's flat vector.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    fn zeros_like(params: &[Params]) -> Self {
        Gradients(params.iter().map(|p| vec![0.0; p.n_params()]).collect())
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.0 {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
    Gelu,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

/// Which physics the loss head exposes to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelect {
    Total,
    ThermalOnly,
    MechanicalOnly,
}

/// Shared problem context for the residual loss head: mesh, kernel caches,
/// expanded boundary conditions, and the index/value arrays used for hard
/// Dirichlet imposition.
#[derive(Debug, Clone)]
pub struct FemProblem {
    pub mesh: Arc<Mesh>,
    pub kernels: Arc<KernelCacheStore>,
    pub bcs: Arc<ExpandedBcs>,
    pub t_mask: Arc<Vec<bool>>,
    pub u_mask: Arc<Vec<bool>>,
    pub t_bc_idx: Arc<Vec<usize>>,
    pub t_bc_val: Arc<Vec<f64>>,
    pub u_bc_idx: Arc<Vec<usize>>,
    pub u_bc_val: Arc<Vec<f64>>,
}

impl FemProblem {
    pub fn new(mesh: Arc<Mesh>, kernels: Arc<KernelCacheStore>, bcs: Arc<ExpandedBcs>) -> Self {
        let t_mask = Arc::new(bcs.thermal_mask(mesh.n_nodes()));
        let u_mask = Arc::new(bcs.mechanical_mask(mesh.n_nodes() * mesh.dim));
        let (t_bc_idx, t_bc_val): (Vec<usize>, Vec<f64>) = bcs.thermal.iter().copied().unzip();
        let (u_bc_idx, u_bc_val): (Vec<usize>, Vec<f64>) = bcs.mechanical.iter().copied().unzip();
        FemProblem {
            mesh,
            kernels,
            bcs,
            t_mask,
            u_mask,
            t_bc_idx: Arc::new(t_bc_idx),
            t_bc_val: Arc::new(t_bc_val),
            u_bc_idx: Arc::new(u_bc_idx),
            u_bc_val: Arc::new(u_bc_val),
        }
    }
}

pub type NodeId = usize;

enum Op {
    Input,
    Affine { w: ParamRef, b: Option<ParamRef>, x: NodeId },
    Activation { x: NodeId, kind: Activation },
    Add { a: NodeId, b: NodeId },
    AddColBroadcast { x: NodeId, v: NodeId },
    Scale { x: NodeId, c: f64 },
    Concat { a: NodeId, b: NodeId },
    InnerProduct { a: NodeId, b: NodeId },
    ToComplex { x: NodeId },
    FftForward { x: NodeId },
    FftInverse { x: NodeId },
    RealPart { x: NodeId },
    ModeMultiply { w: ParamRef, x: NodeId, modes: Vec<usize>, out_channels: usize },
    Pad { x: NodeId, pad: usize },
    Crop { x: NodeId, pad: usize },
    SliceChannel { x: NodeId, channel: usize },
    Interleave { parts: Vec<NodeId> },
    GatherOverwrite { x: NodeId, indices: Arc<Vec<usize>>, values: Arc<Vec<f64>> },
    FemLoss { t: NodeId, u: NodeId, g_t: Vec<f64>, g_u: Vec<f64>, select: LossSelect },
}

struct Node {
    op: Op,
    value: Value,
}

/// The recording tape. Holds a borrowed parameter arena (one `Params` per
/// model) and the value of every node.
pub struct Tape<'p> {
    params: &'p [Params],
    nodes: Vec<Node>,
    recording: bool,
}

impl<'p> Tape<'p> {
    /// A tape that records enough to run `backward`.
    pub fn record(params: &'p [Params]) -> Self {
        Tape { params, nodes: Vec::new(), recording: true }
    }

    /// Forward-only evaluation; `backward` is unavailable.
    pub fn eval(params: &'p [Params]) -> Self {
        Tape { params, nodes: Vec::new(), recording: false }
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id].value
    }

    pub fn real(&self, id: NodeId) -> &Tensor {
        self.nodes[id].value.as_real()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value.as_real().data[0]
    }

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn seg(&self, r: ParamRef) -> &[f64] {
        self.params[r.model].seg(r.seg)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, Value::R(t))
    }

    /// y[o, c] = sum_i W[o, i] x[i, c] (+ b[o]); w stored row-major
    /// [out, in].
    pub fn affine(&mut self, w: ParamRef, b: Option<ParamRef>, out_dim: usize, x: NodeId) -> NodeId {
        let (in_dim, cols, xshape) = {
            let xt = self.real(x);
            (xt.shape[0], xt.len() / xt.shape[0], xt.shape.clone())
        };
        debug_assert_eq!(self.seg(w).len(), out_dim * in_dim);
        let mut y = vec![0.0; out_dim * cols];
        {
            let wdat = self.seg(w);
            let xt = self.real(x);
            for o in 0..out_dim {
                let yrow = &mut y[o * cols..(o + 1) * cols];
                for i in 0..in_dim {
                    let wv = wdat[o * in_dim + i];
                    if wv == 0.0 {
                        continue;
                    }
                    let xrow = &xt.data[i * cols..(i + 1) * cols];
                    for (yv, xv) in yrow.iter_mut().zip(xrow) {
                        *yv += wv * xv;
                    }
                }
            }
            if let Some(bref) = b {
                let bdat = self.params[bref.model].seg(bref.seg);
                for o in 0..out_dim {
                    let bo = bdat[o];
                    for v in &mut y[o * cols..(o + 1) * cols] {
                        *v += bo;
                    }
                }
            }
        }
        let mut shape = xshape;
        shape[0] = out_dim;
        self.push(Op::Affine { w, b, x }, Value::R(Tensor::new(shape, y)))
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let xt = self.real(x);
        let data = xt.data.iter().map(|&v| kind.apply(v)).collect();
        let shape = xt.shape.clone();
        self.push(Op::Activation { x, kind }, Value::R(Tensor::new(shape, data)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (at, bt) = (self.real(a), self.real(b));
        debug_assert_eq!(at.shape, bt.shape);
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x + y).collect();
        let shape = at.shape.clone();
        self.push(Op::Add { a, b }, Value::R(Tensor::new(shape, data)))
    }

    /// x: [r, c], v: [r] (or [r, 1]); adds v to every column of x.
    pub fn add_col_broadcast(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let (rows, cols, shape) = {
            let xt = self.real(x);
            (xt.shape[0], xt.len() / xt.shape[0], xt.shape.clone())
        };
        let vt = self.real(v);
        debug_assert_eq!(vt.len(), rows);
        let vdat = vt.data.clone();
        let mut data = self.real(x).data.clone();
        for r in 0..rows {
            let add = vdat[r];
            for c in &mut data[r * cols..(r + 1) * cols] {
                *c += add;
            }
        }
        self.push(Op::AddColBroadcast { x, v }, Value::R(Tensor::new(shape, data)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let xt = self.real(x);
        let data = xt.data.iter().map(|&v| c * v).collect();
        let shape = xt.shape.clone();
        self.push(Op::Scale { x, c }, Value::R(Tensor::new(shape, data)))
    }

    /// Concatenate along the feature axis (axis 0).
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (at, bt) = (self.real(a), self.real(b));
        debug_assert_eq!(at.shape[1..], bt.shape[1..]);
        let mut shape = at.shape.clone();
        shape[0] += bt.shape[0];
        let mut data = Vec::with_capacity(at.len() + bt.len());
        data.extend_from_slice(&at.data);
        data.extend_from_slice(&bt.data);
        self.push(Op::Concat { a, b }, Value::R(Tensor::new(shape, data)))
    }

    /// a: [p], b: [p, n] -> y[n] with y[c] = sum_p a[p] b[p, c].
    pub fn inner_product(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (at, bt) = (self.real(a), self.real(b));
        let p = at.len();
        let cols = bt.len() / p;
        debug_assert_eq!(bt.shape[0], p);
        let mut y = vec![0.0; cols];
        for q in 0..p {
            let av = at.data[q];
            for c in 0..cols {
                y[c] += av * bt.data[q * cols + c];
            }
        }
        self.push(Op::InnerProduct { a, b }, Value::R(Tensor::new(vec![cols], y)))
    }

    pub fn to_complex(&mut self, x: NodeId) -> NodeId {
        let xt = self.real(x);
        let data = xt.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let shape = xt.shape.clone();
        self.push(Op::ToComplex { x }, Value::C(CTensor { shape, data }))
    }

    pub fn fft_forward(&mut self, x: NodeId) -> NodeId {
        let xt = self.nodes[x].value.as_complex();
        let mut data = xt.data.clone();
        let shape = xt.shape.clone();
        fft::fft_spatial_forward(&mut data, &shape);
        self.push(Op::FftForward { x }, Value::C(CTensor { shape, data }))
    }

    pub fn fft_inverse(&mut self, x: NodeId) -> NodeId {
        let xt = self.nodes[x].value.as_complex();
        let mut data = xt.data.clone();
        let shape = xt.shape.clone();
        fft::fft_spatial_inverse(&mut data, &shape);
        self.push(Op::FftInverse { x }, Value::C(CTensor { shape, data }))
    }

    pub fn real_part(&mut self, x: NodeId) -> NodeId {
        let xt = self.nodes[x].value.as_complex();
        let data = xt.data.iter().map(|v| v.re).collect();
        let shape = xt.shape.clone();
        self.push(Op::RealPart { x }, Value::R(Tensor::new(shape, data)))
    }

    /// Retained-mode spectral multiplication. The weight segment holds
    /// interleaved (re, im) pairs laid out as
    /// [block, out_channel, in_channel, m_1, ..., m_d] over the corner
    /// blocks of the half-spectrum: the last spatial dimension keeps modes
    /// 0..m_last, every other dimension keeps both 0..m and n-m..n, giving
    /// 2^(d-1) blocks. Output is zero outside the retained set.
    pub fn mode_multiply(
        &mut self,
        w: ParamRef,
        x: NodeId,
        modes: &[usize],
        out_channels: usize,
    ) -> Result<NodeId> {
        let (shape, x_data) = {
            let xt = self.nodes[x].value.as_complex();
            (xt.shape.clone(), xt.data.clone())
        };
        let d = shape.len() - 1;
        debug_assert_eq!(modes.len(), d);
        for (j, &m) in modes.iter().enumerate() {
            let n = shape[1 + j];
            if n < 2 * m {
                return Err(Error::Nyquist { grid: n, modes: m });
            }
        }
        let in_channels = shape[0];
        let mut out_shape = shape.clone();
        out_shape[0] = out_channels;
        let mut out = CTensor::zeros(out_shape);

        let spatial: Vec<usize> = shape[1..].to_vec();
        let plane: usize = spatial.iter().product();
        let block_size: usize = modes.iter().product();
        let n_blocks = 1usize << (d - 1);
        let wdat = self.seg(w);
        debug_assert_eq!(wdat.len(), n_blocks * out_channels * in_channels * block_size * 2);

        let strides = spatial_strides(&spatial);
        let mut midx = vec![0usize; d];
        for blk in 0..n_blocks {
            for flat in 0..block_size {
                decode_modes(flat, modes, &mut midx);
                let off = block_offset(blk, &midx, modes, &spatial, &strides);
                for o in 0..out_channels {
                    let mut acc = Complex64::default();
                    for i in 0..in_channels {
                        let widx =
                            ((((blk * out_channels + o) * in_channels) + i) * block_size + flat) * 2;
                        let wv = Complex64::new(wdat[widx], wdat[widx + 1]);
                        acc += wv * x_data[i * plane + off];
                    }
                    out.data[o * plane + off] = acc;
                }
            }
        }
        Ok(self.push(
            Op::ModeMultiply { w, x, modes: modes.to_vec(), out_channels },
            Value::C(out),
        ))
    }

    /// Zero-pad every spatial axis by `pad` on both ends.
    pub fn pad(&mut self, x: NodeId, pad: usize) -> NodeId {
        let xt = self.real(x);
        let shape = xt.shape.clone();
        let out_shape: Vec<usize> =
            std::iter::once(shape[0]).chain(shape[1..].iter().map(|&n| n + 2 * pad)).collect();
        let mut out = Tensor::zeros(out_shape);
        window_copy(&xt.data, &shape, &mut out.data, &out.shape, pad, true);
        self.push(Op::Pad { x, pad }, Value::R(out))
    }

    /// Remove `pad` entries from both ends of every spatial axis.
    pub fn crop(&mut self, x: NodeId, pad: usize) -> NodeId {
        let xt = self.real(x);
        let shape = xt.shape.clone();
        let out_shape: Vec<usize> =
            std::iter::once(shape[0]).chain(shape[1..].iter().map(|&n| n - 2 * pad)).collect();
        let mut out = Tensor::zeros(out_shape);
        window_copy(&xt.data, &shape, &mut out.data, &out.shape, pad, false);
        self.push(Op::Crop { x, pad }, Value::R(out))
    }

    /// Extract channel `c` of a [C, spatial..] tensor as a flat vector.
    pub fn slice_channel(&mut self, x: NodeId, channel: usize) -> NodeId {
        let xt = self.real(x);
        let plane: usize = xt.shape[1..].iter().product();
        let data = xt.data[channel * plane..(channel + 1) * plane].to_vec();
        self.push(Op::SliceChannel { x, channel }, Value::R(Tensor::new(vec![plane], data)))
    }

    /// Interleave k equal-length vectors into one vector of length k*n:
    /// out[i*k + j] = parts[j][i].
    pub fn interleave(&mut self, parts: &[NodeId]) -> NodeId {
        let k = parts.len();
        let n = self.real(parts[0]).len();
        let mut data = vec![0.0; n * k];
        for (j, &p) in parts.iter().enumerate() {
            let pt = self.real(p);
            debug_assert_eq!(pt.len(), n);
            for i in 0..n {
                data[i * k + j] = pt.data[i];
            }
        }
        self.push(Op::Interleave { parts: parts.to_vec() }, Value::R(Tensor::new(vec![n * k], data)))
    }

    /// Overwrite entries at `indices` with `values`; gradients into the
    /// overwritten entries are zero.
    pub fn gather_overwrite(
        &mut self,
        x: NodeId,
        indices: Arc<Vec<usize>>,
        values: Arc<Vec<f64>>,
    ) -> NodeId {
        let xt = self.real(x);
        let mut data = xt.data.clone();
        for (&i, &v) in indices.iter().zip(values.iter()) {
            data[i] = v;
        }
        let shape = xt.shape.clone();
        self.push(Op::GatherOverwrite { x, indices, values }, Value::R(Tensor::new(shape, data)))
    }

    /// Residual loss head. `t` and `u` must already carry their Dirichlet
    /// values. Returns (node, thermal loss, mechanical loss).
    ///
    /// With `frozen` set, the residual factor is evaluated at the frozen
    /// fields instead of the current inputs; this makes the loss a
    /// well-defined function of the inputs for finite-difference checks.
    pub fn fem_loss(
        &mut self,
        problem: &FemProblem,
        mat: &MaterialField,
        t: NodeId,
        u: NodeId,
        mode: LossMode,
        select: LossSelect,
        frozen: Option<&SolutionState>,
    ) -> Result<(NodeId, f64, f64)> {
        let current = SolutionState {
            t: self.real(t).data.clone(),
            u: self.real(u).data.clone(),
        };
        let trial: &SolutionState = frozen.unwrap_or(&current);

        let (g_t, g_u, l_t, l_u) = match mode {
            LossMode::DetachTest => {
                let res = assemble_residuals_frozen_coeffs(
                    &problem.mesh,
                    mat,
                    &problem.kernels,
                    trial,
                    trial,
                )?;
                let mut g_t = res.thermal;
                let mut g_u = res.mechanical;
                mask_inplace(&mut g_t, &problem.t_mask);
                mask_inplace(&mut g_u, &problem.u_mask);
                let l_t = dot(&current.t, &g_t);
                let l_u = dot(&current.u, &g_u);
                (g_t, g_u, l_t, l_u)
            }
            LossMode::Energy => {
                // coefficients frozen at the trial fields; the linear
                // operator is applied to the current fields and to the
                // BC-only fields
                let res_cur = assemble_residuals_frozen_coeffs(
                    &problem.mesh,
                    mat,
                    &problem.kernels,
                    trial,
                    &current,
                )?;
                let mut bc_state = SolutionState {
                    t: vec![0.0; current.t.len()],
                    u: vec![0.0; current.u.len()],
                };
                for &(i, v) in &problem.bcs.thermal {
                    bc_state.t[i] = v;
                }
                for &(i, v) in &problem.bcs.mechanical {
                    bc_state.u[i] = v;
                }
                let res_bc = assemble_residuals_frozen_coeffs(
                    &problem.mesh,
                    mat,
                    &problem.kernels,
                    trial,
                    &bc_state,
                )?;
                let mut g_t = res_cur.thermal;
                let mut g_u = res_cur.mechanical;
                mask_inplace(&mut g_t, &problem.t_mask);
                mask_inplace(&mut g_u, &problem.u_mask);
                let mut bc_t = res_bc.thermal;
                let mut bc_u = res_bc.mechanical;
                mask_inplace(&mut bc_t, &problem.t_mask);
                mask_inplace(&mut bc_u, &problem.u_mask);
                let l_t = 0.5 * (dot(&current.t, &g_t) + dot(&current.t, &bc_t));
                let l_u = 0.5 * (dot(&current.u, &g_u) + dot(&current.u, &bc_u));
                (g_t, g_u, l_t, l_u)
            }
        };

        let value = match select {
            LossSelect::Total => l_t + l_u,
            LossSelect::ThermalOnly => l_t,
            LossSelect::MechanicalOnly => l_u,
        };
        let node = self.push(
            Op::FemLoss { t, u, g_t, g_u, select },
            Value::R(Tensor::scalar(value)),
        );
        Ok((node, l_t, l_u))
    }

    /// Reverse pass from a scalar root. Returns parameter gradients for
    /// every model in the arena.
    pub fn backward(&self, root: NodeId, cotangent: f64) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Tape("backward on a non-recording tape".into()));
        }
        if self.nodes[root].value.as_real().len() != 1 {
            return Err(Error::Tape("backward root must be a scalar".into()));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root] = Some(Value::R(Tensor::scalar(cotangent)));

        for id in (0..=root).rev() {
            let Some(out_adj) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Affine { w, b, x } => {
                    let ya = out_adj.as_real();
                    let xt = self.real(*x);
                    let in_dim = xt.shape[0];
                    let cols = xt.len() / in_dim;
                    let out_dim = ya.shape[0];
                    let wdat = self.seg(*w);
                    {
                        let xshape = xt.shape.clone();
                        let xa = ensure_real(&mut adj[*x], &xshape);
                        for o in 0..out_dim {
                            let yrow = &ya.data[o * cols..(o + 1) * cols];
                            for i in 0..in_dim {
                                let wv = wdat[o * in_dim + i];
                                if wv == 0.0 {
                                    continue;
                                }
                                let xrow = &mut xa.data[i * cols..(i + 1) * cols];
                                for (xv, yv) in xrow.iter_mut().zip(yrow) {
                                    *xv += wv * yv;
                                }
                            }
                        }
                    }
                    let xt = self.real(*x);
                    let seg = &self.params[w.model].segments()[w.seg];
                    let gw = &mut grads.0[w.model][seg.offset..seg.offset + seg.len];
                    for o in 0..out_dim {
                        let yrow = &ya.data[o * cols..(o + 1) * cols];
                        for i in 0..in_dim {
                            let xrow = &xt.data[i * cols..(i + 1) * cols];
                            let mut s = 0.0;
                            for (yv, xv) in yrow.iter().zip(xrow) {
                                s += yv * xv;
                            }
                            gw[o * in_dim + i] += s;
                        }
                    }
                    if let Some(bref) = b {
                        let seg = &self.params[bref.model].segments()[bref.seg];
                        let gb = &mut grads.0[bref.model][seg.offset..seg.offset + seg.len];
                        for o in 0..out_dim {
                            let s: f64 = ya.data[o * cols..(o + 1) * cols].iter().sum();
                            gb[o] += s;
                        }
                    }
                }
                Op::Activation { x, kind } => {
                    let ya = out_adj.as_real();
                    let xvals = self.real(*x).data.clone();
                    let xshape = self.real(*x).shape.clone();
                    let xa = ensure_real(&mut adj[*x], &xshape);
                    for i in 0..xvals.len() {
                        xa.data[i] += ya.data[i] * kind.derivative(xvals[i]);
                    }
                }
                Op::Add { a, b } => {
                    let ya = out_adj.as_real();
                    for &src in &[*a, *b] {
                        let shape = self.real(src).shape.clone();
                        let sa = ensure_real(&mut adj[src], &shape);
                        for i in 0..ya.len() {
                            sa.data[i] += ya.data[i];
                        }
                    }
                }
                Op::AddColBroadcast { x, v } => {
                    let ya = out_adj.as_real();
                    let rows = ya.shape[0];
                    let cols = ya.len() / rows;
                    {
                        let shape = self.real(*x).shape.clone();
                        let xa = ensure_real(&mut adj[*x], &shape);
                        for i in 0..ya.len() {
                            xa.data[i] += ya.data[i];
                        }
                    }
                    let vshape = self.real(*v).shape.clone();
                    let va = ensure_real(&mut adj[*v], &vshape);
                    for r in 0..rows {
                        let s: f64 = ya.data[r * cols..(r + 1) * cols].iter().sum();
                        va.data[r] += s;
                    }
                }
                Op::Scale { x, c } => {
                    let ya = out_adj.as_real();
                    let shape = self.real(*x).shape.clone();
                    let xa = ensure_real(&mut adj[*x], &shape);
                    for i in 0..ya.len() {
                        xa.data[i] += c * ya.data[i];
                    }
                }
                Op::Concat { a, b } => {
                    let ya = out_adj.as_real();
                    let a_len = self.real(*a).len();
                    {
                        let shape = self.real(*a).shape.clone();
                        let aa = ensure_real(&mut adj[*a], &shape);
                        for i in 0..a_len {
                            aa.data[i] += ya.data[i];
                        }
                    }
                    let shape = self.real(*b).shape.clone();
                    let ba = ensure_real(&mut adj[*b], &shape);
                    for i in 0..ba.data.len() {
                        ba.data[i] += ya.data[a_len + i];
                    }
                }
                Op::InnerProduct { a, b } => {
                    let ya = out_adj.as_real();
                    let a_vals = self.real(*a).data.clone();
                    let b_vals = self.real(*b).data.clone();
                    let p = a_vals.len();
                    let cols = ya.len();
                    {
                        let shape = self.real(*a).shape.clone();
                        let aa = ensure_real(&mut adj[*a], &shape);
                        for q in 0..p {
                            let mut s = 0.0;
                            for c in 0..cols {
                                s += ya.data[c] * b_vals[q * cols + c];
                            }
                            aa.data[q] += s;
                        }
                    }
                    let shape = self.real(*b).shape.clone();
                    let ba = ensure_real(&mut adj[*b], &shape);
                    for q in 0..p {
                        let av = a_vals[q];
                        for c in 0..cols {
                            ba.data[q * cols + c] += av * ya.data[c];
                        }
                    }
                }
                Op::ToComplex { x } => {
                    let ya = out_adj.as_complex();
                    let shape = self.real(*x).shape.clone();
                    let xa = ensure_real(&mut adj[*x], &shape);
                    for i in 0..xa.data.len() {
                        xa.data[i] += ya.data[i].re;
                    }
                }
                Op::FftForward { x } => {
                    let ya = out_adj.as_complex();
                    let mut data = ya.data.clone();
                    fft::fft_spatial_forward_adjoint(&mut data, &ya.shape);
                    let shape = ya.shape.clone();
                    let xa = ensure_complex(&mut adj[*x], &shape);
                    for i in 0..data.len() {
                        xa.data[i] += data[i];
                    }
                }
                Op::FftInverse { x } => {
                    let ya = out_adj.as_complex();
                    let mut data = ya.data.clone();
                    fft::fft_spatial_inverse_adjoint(&mut data, &ya.shape);
                    let shape = ya.shape.clone();
                    let xa = ensure_complex(&mut adj[*x], &shape);
                    for i in 0..data.len() {
                        xa.data[i] += data[i];
                    }
                }
                Op::RealPart { x } => {
                    let ya = out_adj.as_real();
                    let shape = ya.shape.clone();
                    let xa = ensure_complex(&mut adj[*x], &shape);
                    for i in 0..ya.len() {
                        xa.data[i] += Complex64::new(ya.data[i], 0.0);
                    }
                }
                Op::ModeMultiply { w, x, modes, out_channels } => {
                    let ya = out_adj.as_complex();
                    let (shape, x_data) = {
                        let xt = self.nodes[*x].value.as_complex();
                        (xt.shape.clone(), xt.data.clone())
                    };
                    let d = shape.len() - 1;
                    let in_channels = shape[0];
                    let spatial: Vec<usize> = shape[1..].to_vec();
                    let plane: usize = spatial.iter().product();
                    let block_size: usize = modes.iter().product();
                    let n_blocks = 1usize << (d - 1);
                    let wdat = self.seg(*w).to_vec();
                    let strides = spatial_strides(&spatial);

                    let seg = &self.params[w.model].segments()[w.seg];
                    let xa = ensure_complex(&mut adj[*x], &shape);
                    let gw = &mut grads.0[w.model][seg.offset..seg.offset + seg.len];
                    let mut midx = vec![0usize; d];
                    for blk in 0..n_blocks {
                        for flat in 0..block_size {
                            decode_modes(flat, modes, &mut midx);
                            let off = block_offset(blk, &midx, modes, &spatial, &strides);
                            for o in 0..*out_channels {
                                let yv = ya.data[o * plane + off];
                                if yv == Complex64::default() {
                                    continue;
                                }
                                for i in 0..in_channels {
                                    let widx = ((((blk * *out_channels + o) * in_channels) + i)
                                        * block_size
                                        + flat)
                                        * 2;
                                    let wv = Complex64::new(wdat[widx], wdat[widx + 1]);
                                    xa.data[i * plane + off] += wv.conj() * yv;
                                    let gwv = yv * x_data[i * plane + off].conj();
                                    gw[widx] += gwv.re;
                                    gw[widx + 1] += gwv.im;
                                }
                            }
                        }
                    }
                }
                Op::Pad { x, pad } => {
                    let ya = out_adj.as_real();
                    let xshape = self.real(*x).shape.clone();
                    let mut gathered = vec![0.0; xshape.iter().product()];
                    window_copy(&ya.data, &ya.shape, &mut gathered, &xshape, *pad, false);
                    let xa = ensure_real(&mut adj[*x], &xshape);
                    for i in 0..gathered.len() {
                        xa.data[i] += gathered[i];
                    }
                }
                Op::Crop { x, pad } => {
                    let ya = out_adj.as_real();
                    let xshape = self.real(*x).shape.clone();
                    let mut scattered = vec![0.0; xshape.iter().product()];
                    window_copy(&ya.data, &ya.shape, &mut scattered, &xshape, *pad, true);
                    let xa = ensure_real(&mut adj[*x], &xshape);
                    for i in 0..scattered.len() {
                        xa.data[i] += scattered[i];
                    }
                }
                Op::SliceChannel { x, channel } => {
                    let ya = out_adj.as_real();
                    let xshape = self.real(*x).shape.clone();
                    let plane: usize = xshape[1..].iter().product();
                    let xa = ensure_real(&mut adj[*x], &xshape);
                    for i in 0..plane {
                        xa.data[channel * plane + i] += ya.data[i];
                    }
                }
                Op::Interleave { parts } => {
                    let ya = out_adj.as_real();
                    let k = parts.len();
                    for (j, &p) in parts.iter().enumerate() {
                        let shape = self.real(p).shape.clone();
                        let pa = ensure_real(&mut adj[p], &shape);
                        let n = pa.data.len();
                        for i in 0..n {
                            pa.data[i] += ya.data[i * k + j];
                        }
                    }
                }
                Op::GatherOverwrite { x, indices, .. } => {
                    let ya = out_adj.as_real();
                    let mut masked = ya.data.clone();
                    for &i in indices.iter() {
                        masked[i] = 0.0;
                    }
                    let shape = self.real(*x).shape.clone();
                    let xa = ensure_real(&mut adj[*x], &shape);
                    for i in 0..masked.len() {
                        xa.data[i] += masked[i];
                    }
                }
                Op::FemLoss { t, u, g_t, g_u, select } => {
                    let c = out_adj.as_real().data[0];
                    if !matches!(select, LossSelect::MechanicalOnly) {
                        let shape = self.real(*t).shape.clone();
                        let g = g_t.clone();
                        let ta = ensure_real(&mut adj[*t], &shape);
                        for i in 0..g.len() {
                            ta.data[i] += c * g[i];
                        }
                    }
                    if !matches!(select, LossSelect::ThermalOnly) {
                        let shape = self.real(*u).shape.clone();
                        let g = g_u.clone();
                        let ua = ensure_real(&mut adj[*u], &shape);
                        for i in 0..g.len() {
                            ua.data[i] += c * g[i];
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mask_inplace(v: &mut [f64], fixed: &[bool]) {
    for (x, &f) in v.iter_mut().zip(fixed) {
        if f {
            *x = 0.0;
        }
    }
}

fn ensure_real<'a>(slot: &'a mut Option<Value>, shape: &[usize]) -> &'a mut Tensor {
    if slot.is_none() {
        *slot = Some(Value::R(Tensor::zeros(shape.to_vec())));
    }
    match slot.as_mut().unwrap() {
        Value::R(t) => t,
        Value::C(_) => panic!("adjoint type mismatch"),
    }
}

fn ensure_complex<'a>(slot: &'a mut Option<Value>, shape: &[usize]) -> &'a mut CTensor {
    if slot.is_none() {
        *slot = Some(Value::C(CTensor::zeros(shape.to_vec())));
    }
    match slot.as_mut().unwrap() {
        Value::C(t) => t,
        Value::R(_) => panic!("adjoint type mismatch"),
    }
}

fn spatial_strides(spatial: &[usize]) -> Vec<usize> {
    let d = spatial.len();
    let mut strides = vec![1usize; d];
    for j in (0..d.saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * spatial[j + 1];
    }
    strides
}

fn decode_modes(flat: usize, modes: &[usize], out: &mut [usize]) {
    let mut rem = flat;
    for j in (0..modes.len()).rev() {
        out[j] = rem % modes[j];
        rem /= modes[j];
    }
}

/// Spectrum offset of a retained mode: non-last dims pick the low or high
/// corner depending on the block bit; the last dim always uses the low
/// half.
fn block_offset(
    blk: usize,
    midx: &[usize],
    modes: &[usize],
    spatial: &[usize],
    strides: &[usize],
) -> usize {
    let d = modes.len();
    let mut off = 0usize;
    for j in 0..d {
        let kj = if j + 1 < d && (blk >> j) & 1 == 1 {
            spatial[j] - modes[j] + midx[j]
        } else {
            midx[j]
        };
        off += kj * strides[j];
    }
    off
}

/// Copy between a full tensor and its centered spatial window (offset `pad`
/// on every spatial axis). `scatter = true` writes the small tensor into
/// the big one; `scatter = false` gathers the window out of the big one.
fn window_copy(
    src: &[f64],
    src_shape: &[usize],
    dst: &mut [f64],
    dst_shape: &[usize],
    pad: usize,
    scatter: bool,
) {
    let (small_shape, big_shape): (&[usize], &[usize]) =
        if scatter { (src_shape, dst_shape) } else { (dst_shape, src_shape) };
    debug_assert_eq!(small_shape[0], big_shape[0]);
    let d = small_shape.len() - 1;
    let channels = small_shape[0];
    let small_sp = &small_shape[1..];
    let big_sp = &big_shape[1..];
    let small_plane: usize = small_sp.iter().product();
    let big_plane: usize = big_sp.iter().product();
    let small_strides = spatial_strides(small_sp);
    let big_strides = spatial_strides(big_sp);

    for c in 0..channels {
        let mut idx = vec![0usize; d];
        loop {
            let mut so = 0usize;
            let mut bo = 0usize;
            for j in 0..d {
                so += idx[j] * small_strides[j];
                bo += (idx[j] + pad) * big_strides[j];
            }
            if scatter {
                dst[c * big_plane + bo] = src[c * small_plane + so];
            } else {
                dst[c * small_plane + so] = src[c * big_plane + bo];
            }
            // advance multi-index, most-minor axis last
            let mut j = d;
            let mut done = true;
            while j > 0 {
                j -= 1;
                idx[j] += 1;
                if idx[j] < small_sp[j] {
                    done = false;
                    break;
                }
                idx[j] = 0;
            }
            if done {
                break;
            }
        }
    }
}

/// Probe random parameters and compare reverse-mode gradients against
/// central finite differences of the forward evaluation. Returns the
/// maximum relative discrepancy over the probed parameters.
///
/// `eval(params, with_grad)` must return the scalar loss and, when asked,
/// the gradients. The caller freezes whatever the loss mode detaches, so
/// the function being differenced is the one the tape differentiates.
pub fn gradient_check(
    params: &mut Vec<Params>,
    eval: &mut dyn FnMut(&[Params], bool) -> Result<(f64, Option<Gradients>)>,
    n_probe: usize,
    h_base: f64,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let (_, grads) = eval(params, true)?;
    let grads = grads.ok_or_else(|| Error::Tape("eval did not return gradients".into()))?;

    let total: usize = params.iter().map(|p| p.n_params()).sum();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    for _ in 0..n_probe {
        let mut flat = rng.gen_range(0..total);
        let mut model = 0;
        while flat >= params[model].n_params() {
            flat -= params[model].n_params();
            model += 1;
        }
        probes.push((model, flat));
    }

    let mut fds = Vec::with_capacity(probes.len());
    for &(model, idx) in &probes {
        let orig = params[model].data[idx];
        let h = h_base * orig.abs().max(1.0);
        params[model].data[idx] = orig + h;
        let (lp, _) = eval(params, false)?;
        params[model].data[idx] = orig - h;
        let (lm, _) = eval(params, false)?;
        params[model].data[idx] = orig;
        fds.push((lp - lm) / (2.0 * h));
    }

    let fd_scale = fds.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut max_rel: f64 = 0.0;
    for (&(model, idx), &fd) in probes.iter().zip(&fds) {
        let ad = grads.0[model][idx];
        let denom = fd.abs().max(ad.abs()).max(1e-8 * fd_scale).max(1e-12);
        max_rel = max_rel.max((ad - fd).abs() / denom);
    }
    Ok(max_rel)
}
