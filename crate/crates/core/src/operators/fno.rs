//! Fourier neural operator on structured grids.
//!
//! Each stage combines a spectral convolution over retained low-frequency
//! modes with a pointwise linear path: v <- gelu(Re(IFFT(R . FFT(v))) + W v
//! + b). The input is the phase field plus (optionally) normalized
//! coordinate channels; spatial sides are zero-padded before the spectral
//! stages and cropped afterwards. Because the retained modes are fixed
//! physical frequencies, the same parameters run at any resolution with at
//! least two grid nodes per retained mode.

use crate::error::{Error, Result};
use crate::tape::{Activation, NodeId, ParamRef, Params, Tape, Tensor};

use super::{SampleInput, SegmentInit};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FnoConfig {
    pub dim: usize,
    /// Retained modes per spatial dimension, ordered like the tensor axes
    /// ([my, mx] in 2D, [mz, my, mx] in 3D).
    pub modes: Vec<usize>,
    /// Channel width of the spectral stages.
    pub width: usize,
    pub n_stages: usize,
    /// Width of the first projection layer.
    pub proj_dim: usize,
    /// Zero-padding applied to each end of every spatial side.
    pub padding: usize,
    pub output_scale: f64,
    /// Append normalized coordinate channels to the input.
    pub include_coords: bool,
    pub out_fields: usize,
}

impl FnoConfig {
    pub fn in_channels(&self) -> usize {
        1 + if self.include_coords { self.dim } else { 0 }
    }

    pub fn n_blocks(&self) -> usize {
        1 << (self.dim - 1)
    }

    /// Closed-form parameter count: lifting + per stage (spectral blocks +
    /// pointwise path) + two projection layers.
    pub fn n_params(&self) -> usize {
        let w = self.width;
        let block: usize = self.modes.iter().product();
        let spectral = self.n_blocks() * w * w * block * 2;
        let lift = w * self.in_channels() + w;
        let stage = spectral + w * w + w;
        let prom = self.proj_dim * w + self.proj_dim;
        let head = self.out_fields * self.proj_dim + self.out_fields;
        lift + self.n_stages * stage + prom + head
    }
}

#[derive(Debug, Clone)]
struct StageSegs {
    spectral: usize,
    pw_w: usize,
    pw_b: usize,
}

#[derive(Debug, Clone)]
pub struct FnoModel {
    pub cfg: FnoConfig,
    lift_w: usize,
    lift_b: usize,
    stages: Vec<StageSegs>,
    proj1_w: usize,
    proj1_b: usize,
    proj2_w: usize,
    proj2_b: usize,
}

impl FnoModel {
    pub fn new(cfg: FnoConfig) -> Self {
        FnoModel {
            cfg,
            lift_w: 0,
            lift_b: 0,
            stages: Vec::new(),
            proj1_w: 0,
            proj1_b: 0,
            proj2_w: 0,
            proj2_b: 0,
        }
    }

    /// Register all parameter segments in `params`.
    pub fn register(&mut self, params: &mut Params) {
        let cfg = &self.cfg;
        let w = cfg.width;
        self.lift_w = params.add_segment("lift_w", w * cfg.in_channels());
        self.lift_b = params.add_segment("lift_b", w);
        let block: usize = cfg.modes.iter().product();
        self.stages = (0..cfg.n_stages)
            .map(|s| StageSegs {
                spectral: params
                    .add_segment(&format!("stage{s}_spectral"), cfg.n_blocks() * w * w * block * 2),
                pw_w: params.add_segment(&format!("stage{s}_pw_w"), w * w),
                pw_b: params.add_segment(&format!("stage{s}_pw_b"), w),
            })
            .collect();
        self.proj1_w = params.add_segment("proj1_w", cfg.proj_dim * w);
        self.proj1_b = params.add_segment("proj1_b", cfg.proj_dim);
        self.proj2_w = params.add_segment("proj2_w", cfg.out_fields * cfg.proj_dim);
        self.proj2_b = params.add_segment("proj2_b", cfg.out_fields);
    }

    pub fn init_plan(&self) -> Vec<(usize, SegmentInit)> {
        let cfg = &self.cfg;
        let mut plan = vec![
            (self.lift_w, SegmentInit::AffineWeight { fan_in: cfg.in_channels() }),
            (self.lift_b, SegmentInit::Bias { fan_in: cfg.in_channels() }),
        ];
        for s in &self.stages {
            plan.push((
                s.spectral,
                SegmentInit::Spectral { in_channels: cfg.width, out_channels: cfg.width },
            ));
            plan.push((s.pw_w, SegmentInit::AffineWeight { fan_in: cfg.width }));
            plan.push((s.pw_b, SegmentInit::Bias { fan_in: cfg.width }));
        }
        plan.push((self.proj1_w, SegmentInit::AffineWeight { fan_in: cfg.width }));
        plan.push((self.proj1_b, SegmentInit::Bias { fan_in: cfg.width }));
        plan.push((self.proj2_w, SegmentInit::AffineWeight { fan_in: cfg.proj_dim }));
        plan.push((self.proj2_b, SegmentInit::Bias { fan_in: cfg.proj_dim }));
        plan
    }

    pub fn forward_fields(
        &self,
        tape: &mut Tape,
        model_idx: usize,
        input: &SampleInput,
    ) -> Result<Vec<NodeId>> {
        let cfg = &self.cfg;
        let spatial = input
            .spatial
            .as_ref()
            .ok_or_else(|| Error::WidthMismatch("FNO needs a structured grid input".into()))?
            .clone();
        if spatial.len() != cfg.dim {
            return Err(Error::WidthMismatch(format!(
                "FNO configured for dim {}, input grid has {} axes",
                cfg.dim,
                spatial.len()
            )));
        }
        for (j, &m) in cfg.modes.iter().enumerate() {
            if spatial[j] < 2 * m {
                return Err(Error::Nyquist { grid: spatial[j], modes: m });
            }
        }
        let n: usize = spatial.iter().product();
        let phi = input
            .phi
            .as_ref()
            .ok_or_else(|| Error::WidthMismatch("FNO needs a phase-field input".into()))?;
        if phi.len() != n {
            return Err(Error::SizeMismatch(format!(
                "phase field has {} values for a {spatial:?} grid",
                phi.len()
            )));
        }

        // input channels: phase field (+ coordinate channels)
        let mut shape = vec![cfg.in_channels()];
        shape.extend_from_slice(&spatial);
        let mut data = Vec::with_capacity(cfg.in_channels() * n);
        data.extend_from_slice(phi);
        if cfg.include_coords {
            // coords tensor is [dim, n] with rows x, y(, z); the tensor
            // spatial axes are ordered [.., y, x]
            for d in 0..cfg.dim {
                data.extend_from_slice(&input.coords.data[d * n..(d + 1) * n]);
            }
        }
        let x = tape.input(Tensor::new(shape, data));

        let pr = |seg| ParamRef { model: model_idx, seg };
        let mut v = tape.affine(pr(self.lift_w), Some(pr(self.lift_b)), cfg.width, x);
        if cfg.padding > 0 {
            v = tape.pad(v, cfg.padding);
        }
        for stage in &self.stages {
            let cx = tape.to_complex(v);
            let fx = tape.fft_forward(cx);
            let mx = tape.mode_multiply(pr(stage.spectral), fx, &cfg.modes, cfg.width)?;
            let ix = tape.fft_inverse(mx);
            let spec = tape.real_part(ix);
            let pw = tape.affine(pr(stage.pw_w), Some(pr(stage.pw_b)), cfg.width, v);
            let sum = tape.add(spec, pw);
            v = tape.activation(Activation::Gelu, sum);
        }
        if cfg.padding > 0 {
            v = tape.crop(v, cfg.padding);
        }
        let h = tape.affine(pr(self.proj1_w), Some(pr(self.proj1_b)), cfg.proj_dim, v);
        let h = tape.activation(Activation::Gelu, h);
        let out = tape.affine(pr(self.proj2_w), Some(pr(self.proj2_b)), cfg.out_fields, h);
        let scaled = tape.scale(out, cfg.output_scale);
        Ok((0..cfg.out_fields).map(|c| tape.slice_channel(scaled, c)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_grid;
    use crate::operators::{Backbone, ModelSet, SampleInput};

    fn tiny_cfg() -> FnoConfig {
        FnoConfig {
            dim: 2,
            modes: vec![3, 3],
            width: 4,
            n_stages: 2,
            proj_dim: 8,
            padding: 2,
            output_scale: 1e-3,
            include_coords: true,
            out_fields: 3,
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut params = Params::new();
        let mut model = FnoModel::new(tiny_cfg());
        model.register(&mut params);
        // leave everything zero
        let arena = vec![params];
        let mesh = build_structured_grid(2, &[8, 8], &[1.0, 1.0]).unwrap();
        let input = SampleInput::from_field(&mesh, vec![0.5; 64]).unwrap();
        let mut tape = Tape::eval(&arena);
        let fields = model.forward_fields(&mut tape, 0, &input).unwrap();
        for f in fields {
            for v in &tape.real(f).data {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = tiny_cfg();
        let mut params = Params::new();
        let mut model = FnoModel::new(cfg.clone());
        model.register(&mut params);
        assert_eq!(params.n_params(), cfg.n_params());

        let cfg3 = FnoConfig { dim: 3, modes: vec![2, 2, 2], ..tiny_cfg() };
        let mut p3 = Params::new();
        let mut m3 = FnoModel::new(cfg3.clone());
        m3.register(&mut p3);
        assert_eq!(p3.n_params(), cfg3.n_params());
    }

    #[test]
    fn forward_shape_tracks_resolution_without_parameter_changes() {
        let model = {
            let cfg = tiny_cfg();
            Backbone::Fno({
                let mut m = FnoModel::new(cfg);
                let mut p = Params::new();
                m.register(&mut p);
                m
            })
        };
        let set = ModelSet::single(model);
        let arena = set.init_params(3);
        for nside in [8usize, 16, 21] {
            let mesh = build_structured_grid(2, &[nside, nside], &[1.0, 1.0]).unwrap();
            let phi = vec![0.5; mesh.n_nodes()];
            let input = SampleInput::from_field(&mesh, phi).unwrap();
            let mut tape = Tape::eval(&arena);
            let fields = match &set.models[0] {
                Backbone::Fno(m) => m.forward_fields(&mut tape, 0, &input).unwrap(),
                _ => unreachable!(),
            };
            assert_eq!(fields.len(), 3);
            assert_eq!(tape.real(fields[0]).len(), nside * nside);
        }
    }

    #[test]
    fn grid_below_nyquist_is_rejected() {
        let mut m = FnoModel::new(tiny_cfg());
        let mut p = Params::new();
        m.register(&mut p);
        let arena = vec![p];
        let mesh = build_structured_grid(2, &[5, 5], &[1.0, 1.0]).unwrap();
        let input = SampleInput::from_field(&mesh, vec![0.5; 25]).unwrap();
        let mut tape = Tape::eval(&arena);
        assert!(matches!(
            m.forward_fields(&mut tape, 0, &input),
            Err(Error::Nyquist { .. })
        ));
    }

    #[test]
    fn record_and_eval_forwards_are_bitwise_identical() {
        let mut m = FnoModel::new(tiny_cfg());
        let mut p = Params::new();
        m.register(&mut p);
        let set = ModelSet::single(Backbone::Fno(m));
        let arena = set.init_params(11);
        let mesh = build_structured_grid(2, &[9, 9], &[1.0, 1.0]).unwrap();
        let phi: Vec<f64> = (0..81).map(|i| 0.1 + 0.9 * ((i as f64 * 0.3).sin().abs())).collect();
        let input = SampleInput::from_field(&mesh, phi).unwrap();

        let fields_of = |tape: &mut Tape| -> Vec<Vec<f64>> {
            let model = match &set.models[0] {
                Backbone::Fno(m) => m,
                _ => unreachable!(),
            };
            model
                .forward_fields(tape, 0, &input)
                .unwrap()
                .into_iter()
                .map(|f| tape.real(f).data.clone())
                .collect()
        };
        let mut rec = Tape::record(&arena);
        let a = fields_of(&mut rec);
        let mut ev = Tape::eval(&arena);
        let b = fields_of(&mut ev);
        assert_eq!(a, b);
    }
}
