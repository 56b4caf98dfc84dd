//! Modulated conditional neural field: a coordinate synthesizer with skip
//! connections whose layers are shifted by per-layer modulator networks
//! conditioned on the problem parameter.
//!
//! Each synthesizer layer computes
//!   out = prev + a(W [cur; prev] + b + phi_i(u))
//! over the running pair (cur, prev). Layer 0 consumes (x, 0); the
//! previous-state stream starts at zero and carries real activations from
//! layer 2 on. Activations are Leaky ReLU with slope 0.01.

use crate::error::{Error, Result};
use crate::tape::{Activation, NodeId, ParamRef, Params, Tape, Tensor};

use super::{MlpSegs, SampleInput, SegmentInit};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IfolConfig {
    pub dim: usize,
    /// Length of the conditioning parameter vector.
    pub param_dim: usize,
    /// Synthesizer layer widths (uniform width expected).
    pub synthesizer: Vec<usize>,
    /// Modulator hidden widths (each modulator ends in an affine layer onto
    /// its synthesizer layer width).
    pub modulator_hidden: Vec<usize>,
    pub out_fields: usize,
    pub output_scale: f64,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone)]
pub struct IfolModel {
    pub cfg: IfolConfig,
    syn_w: Vec<usize>,
    syn_b: Vec<usize>,
    modulators: Vec<MlpSegs>,
    head_w: usize,
    head_b: usize,
}

impl IfolModel {
    pub fn new(cfg: IfolConfig) -> Self {
        IfolModel {
            cfg,
            syn_w: Vec::new(),
            syn_b: Vec::new(),
            modulators: Vec::new(),
            head_w: 0,
            head_b: 0,
        }
    }

    pub fn register(&mut self, params: &mut Params) {
        let cfg = self.cfg.clone();
        let mut cur_width = cfg.dim;
        for (i, &w) in cfg.synthesizer.iter().enumerate() {
            // concat of (cur, prev); prev always has the layer width
            let in_dim = cur_width + w;
            self.syn_w.push(params.add_segment(&format!("syn{i}_w"), w * in_dim));
            self.syn_b.push(params.add_segment(&format!("syn{i}_b"), w));
            // modulator: param -> hidden -> layer width
            let mut widths = cfg.modulator_hidden.clone();
            widths.push(w);
            self.modulators.push(MlpSegs::register(
                params,
                &format!("mod{i}"),
                cfg.param_dim,
                &widths,
            ));
            cur_width = w;
        }
        let last = *cfg.synthesizer.last().expect("synthesizer needs layers");
        self.head_w = params.add_segment("head_w", cfg.out_fields * last);
        self.head_b = params.add_segment("head_b", cfg.out_fields);
    }

    pub fn init_plan(&self) -> Vec<(usize, SegmentInit)> {
        let cfg = &self.cfg;
        let mut plan = Vec::new();
        let mut cur_width = cfg.dim;
        for (i, &w) in cfg.synthesizer.iter().enumerate() {
            let in_dim = cur_width + w;
            plan.push((self.syn_w[i], SegmentInit::AffineWeight { fan_in: in_dim }));
            plan.push((self.syn_b[i], SegmentInit::Bias { fan_in: in_dim }));
            plan.extend(self.modulators[i].init_plan(cfg.param_dim));
            cur_width = w;
        }
        let last = *cfg.synthesizer.last().unwrap();
        plan.push((self.head_w, SegmentInit::AffineWeight { fan_in: last }));
        plan.push((self.head_b, SegmentInit::Bias { fan_in: last }));
        plan
    }

    pub fn n_params(&self) -> usize {
        let cfg = &self.cfg;
        let mut total = 0;
        let mut cur_width = cfg.dim;
        for (i, &w) in cfg.synthesizer.iter().enumerate() {
            total += w * (cur_width + w) + w;
            total += self.modulators[i].n_params(cfg.param_dim);
            cur_width = w;
        }
        total + cfg.out_fields * cur_width + cfg.out_fields
    }

    pub fn forward_fields(
        &self,
        tape: &mut Tape,
        model_idx: usize,
        input: &SampleInput,
    ) -> Result<Vec<NodeId>> {
        let cfg = &self.cfg;
        let u = input
            .param
            .as_ref()
            .ok_or_else(|| Error::WidthMismatch("conditional field needs a parameter vector".into()))?;
        if u.len() != cfg.param_dim {
            return Err(Error::WidthMismatch(format!(
                "modulators expect a parameter of length {}, got {}",
                cfg.param_dim,
                u.len()
            )));
        }
        if input.coords.shape[0] != cfg.dim {
            return Err(Error::WidthMismatch(format!(
                "synthesizer expects {}-dimensional coordinates",
                cfg.dim
            )));
        }
        let n = input.coords.len() / cfg.dim;
        let act = Activation::LeakyRelu(cfg.leaky_slope);
        let pr = |seg| ParamRef { model: model_idx, seg };

        let u_in = tape.input(Tensor::new(vec![cfg.param_dim, 1], u.clone()));
        let mut cur = tape.input(input.coords.clone());
        // None stands for a zero previous stream of the layer width; layer
        // 0's current input is the raw coordinate block whose width
        // differs, so the pair restarts at (out_1, 0) before advancing as
        // (out_{i+1}, out_i) from layer 2 on.
        let mut prev: Option<NodeId> = None;

        for (i, &w) in cfg.synthesizer.iter().enumerate() {
            let prev_node =
                prev.unwrap_or_else(|| tape.input(Tensor::zeros(vec![w, n])));
            let cat = tape.concat(cur, prev_node);
            let z = tape.affine(pr(self.syn_w[i]), Some(pr(self.syn_b[i])), w, cat);
            let phi = self.modulators[i].forward(tape, model_idx, u_in, act);
            let shifted = tape.add_col_broadcast(z, phi);
            let activated = tape.activation(act, shifted);
            let out = tape.add(prev_node, activated);
            prev = if i == 0 { None } else { Some(cur) };
            cur = out;
        }
        let head = tape.affine(pr(self.head_w), Some(pr(self.head_b)), cfg.out_fields, cur);
        let scaled = tape.scale(head, cfg.output_scale);
        Ok((0..cfg.out_fields).map(|c| tape.slice_channel(scaled, c)).collect())
    }
}
