//! Training loops: monolithic (thermal + mechanical loss every step) and
//! staggered (alternating the active loss every N switch epochs), with
//! Adam, an exponential or linear learning-rate schedule, per-epoch
//! shuffling, and deterministic batch-gradient reduction.
//!
//! Gradients over a batch are averaged with a fixed chunked summation
//! order, so identical (seed, config, dataset) runs reproduce loss
//! histories to the last bit regardless of worker count.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::loss::LossMode;
use crate::material::MaterialField;
use crate::operators::{ModelSet, SampleInput};
use crate::tape::{FemProblem, Gradients, LossSelect, Params, Tape};

/// Which training scheme drives the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainScheme {
    Monolithic,
    /// Alternate the active loss every `switch_epochs` epochs.
    Staggered { switch_epochs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    Exponential,
    Linear,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub scheme: TrainScheme,
    pub n_epoch: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_decay: LrDecay,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_interval: usize,
}

impl TrainConfig {
    pub fn new(scheme: TrainScheme, n_epoch: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            scheme,
            n_epoch,
            batch_size,
            lr_start: 1e-2,
            lr_end: 1e-3,
            lr_decay: LrDecay::Exponential,
            seed,
            loss_mode: LossMode::DetachTest,
            checkpoint_interval: 0,
        }
    }

    /// Validate against a dataset size; returns advisory warnings.
    pub fn validate(&self, dataset_size: usize) -> Result<Vec<String>> {
        if self.lr_end > self.lr_start {
            return Err(Error::Config("lr_end must not exceed lr_start".into()));
        }
        if self.n_epoch == 0 {
            return Err(Error::Config("n_epoch must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > dataset_size {
            return Err(Error::Config(format!(
                "batch size {} invalid for a dataset of {dataset_size} samples",
                self.batch_size
            )));
        }
        let mut warnings = Vec::new();
        if let TrainScheme::Staggered { switch_epochs } = self.scheme {
            if switch_epochs == 0 {
                return Err(Error::Config("switch_epochs must be at least 1".into()));
            }
            if self.n_epoch < 2 * switch_epochs {
                warnings.push(format!(
                    "staggered schedule with switch_epochs {switch_epochs} never completes a full \
                     thermal/mechanical cycle within {} epochs",
                    self.n_epoch
                ));
            }
        }
        Ok(warnings)
    }
}

/// Learning rate at a 0-based epoch index: exact endpoints, exponential or
/// linear interpolation between them.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.n_epoch <= 1 {
        return cfg.lr_start;
    }
    let t = epoch as f64 / (cfg.n_epoch - 1) as f64;
    match cfg.lr_decay {
        LrDecay::Exponential => cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t),
        LrDecay::Linear => cfg.lr_start + (cfg.lr_end - cfg.lr_start) * t,
    }
}

/// Active physics of a staggered epoch (1-based), per the switching rule
/// `n mod 2N < N selects the thermal loss`.
pub fn staggered_stage(epoch_1based: usize, switch_epochs: usize) -> Stage {
    if epoch_1based % (2 * switch_epochs) < switch_epochs {
        Stage::Thermal
    } else {
        Stage::Mechanical
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    Thermal,
    Mechanical,
}

/// One training sample: the operator input, its material field, and the
/// loss-head context (which carries the sample's boundary values).
#[derive(Clone)]
pub struct TrainSample {
    pub input: SampleInput,
    pub mat: Arc<MaterialField>,
    pub problem: Arc<FemProblem>,
}

#[derive(Clone, Default)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
    /// Content hash of the generated inputs, recorded in run manifests.
    pub content_hash: String,
}

/// Per-epoch record. `losses_bitwise_eq` compares reruns exactly on the
/// loss values (wall times naturally differ).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_thermal: f64,
    pub loss_mechanical: f64,
    pub lr: f64,
    pub wall_time: f64,
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn losses_bitwise_eq(&self, other: &LossHistory) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.loss.to_bits() == b.loss.to_bits()
                    && a.loss_thermal.to_bits() == b.loss_thermal.to_bits()
                    && a.loss_mechanical.to_bits() == b.loss_mechanical.to_bits()
                    && a.stage == b.stage
            })
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Adam optimizer over the per-model flat parameter vectors.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &[Params]) -> Self {
        Adam {
            m: params.iter().map(|p| vec![0.0; p.n_params()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.n_params()]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [Params], grads: &Gradients, lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (mi, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(&mut self.v))
            .enumerate()
        {
            let _ = mi;
            for i in 0..p.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / b1t;
                let vhat = v[i] / b2t;
                p.data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Loss and (optionally) gradients for one sample.
fn sample_loss(
    params: &[Params],
    set: &ModelSet,
    sample: &TrainSample,
    mode: LossMode,
    select: LossSelect,
    with_grad: bool,
) -> Result<(f64, f64, f64, Option<Gradients>)> {
    let mut tape = if with_grad { Tape::record(params) } else { Tape::eval(params) };
    let (t, u) = set.state_nodes(&mut tape, &sample.input, &sample.problem)?;
    let (node, l_t, l_u) =
        tape.fem_loss(&sample.problem, &sample.mat, t, u, mode, select, None)?;
    let loss = tape.scalar(node);
    let grads = if with_grad { Some(tape.backward(node, 1.0)?) } else { None };
    Ok((loss, l_t, l_u, grads))
}

/// Public single-sample evaluation (used by the evaluation layer and
/// tests).
pub fn evaluate_sample_loss(
    params: &[Params],
    set: &ModelSet,
    sample: &TrainSample,
    mode: LossMode,
) -> Result<(f64, f64, f64)> {
    let (l, lt, lu, _) = sample_loss(params, set, sample, mode, LossSelect::Total, false)?;
    Ok((l, lt, lu))
}

/// Fixed chunk width for batch reduction; summation order is independent
/// of the worker count.
const REDUCE_CHUNK: usize = 4;

/// Mean loss and gradients over a batch, reduced deterministically.
fn batch_step(
    params: &[Params],
    set: &ModelSet,
    batch: &[TrainSample],
    mode: LossMode,
    select: LossSelect,
) -> Result<(f64, f64, f64, Gradients)> {
    let chunk_results: Vec<Result<(f64, f64, f64, Gradients)>> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc: Option<(f64, f64, f64, Gradients)> = None;
            for s in chunk {
                let (l, lt, lu, g) = sample_loss(params, set, s, mode, select, true)?;
                let g = g.expect("gradients requested");
                match &mut acc {
                    None => acc = Some((l, lt, lu, g)),
                    Some((al, alt, alu, ag)) => {
                        *al += l;
                        *alt += lt;
                        *alu += lu;
                        ag.add_assign(&g);
                    }
                }
            }
            Ok(acc.expect("non-empty chunk"))
        })
        .collect();

    let mut total: Option<(f64, f64, f64, Gradients)> = None;
    for r in chunk_results {
        let (l, lt, lu, g) = r?;
        match &mut total {
            None => total = Some((l, lt, lu, g)),
            Some((al, alt, alu, ag)) => {
                *al += l;
                *alt += lt;
                *alu += lu;
                ag.add_assign(&g);
            }
        }
    }
    let (l, lt, lu, mut g) = total.expect("non-empty batch");
    let inv = 1.0 / batch.len() as f64;
    g.scale(inv);
    Ok((l * inv, lt * inv, lu * inv, g))
}

const EARLY_STOP_WINDOW: usize = 50;
const EARLY_STOP_REL: f64 = 1e-8;

/// Run the configured training scheme. Parameters are updated in place;
/// `on_checkpoint(epoch, params)` fires every `checkpoint_interval` epochs
/// and after the final epoch.
pub fn train(
    set: &ModelSet,
    params: &mut Vec<Params>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &[Params]) -> Result<()>,
) -> Result<LossHistory> {
    cfg.validate(dataset.samples.len())?;
    let mut adam = Adam::new(params);
    let mut history = LossHistory::default();
    let mut recent: Vec<f64> = Vec::new();

    let n = dataset.samples.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.n_epoch {
        let epoch_start = Instant::now();
        let lr = lr_schedule(epoch - 1, cfg);
        let (select, stage) = match cfg.scheme {
            TrainScheme::Monolithic => (LossSelect::Total, None),
            TrainScheme::Staggered { switch_epochs } => {
                match staggered_stage(epoch, switch_epochs) {
                    Stage::Thermal => (LossSelect::ThermalOnly, Some(Stage::Thermal)),
                    Stage::Mechanical => (LossSelect::MechanicalOnly, Some(Stage::Mechanical)),
                }
            }
        };

        // one shuffle stream per epoch keeps batches order-independent
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut sum_l = 0.0;
        let mut sum_lt = 0.0;
        let mut sum_lu = 0.0;
        let mut n_seen = 0usize;
        for (batch_idx, batch_ids) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainSample> =
                batch_ids.iter().map(|&i| dataset.samples[i].clone()).collect();
            let (l, lt, lu, grads) = batch_step(params, set, &batch, cfg.loss_mode, select)?;
            if !l.is_finite() || !lt.is_finite() || !lu.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    thermal: lt,
                    mechanical: lu,
                });
            }
            adam.step(params, &grads, lr);
            sum_l += l * batch.len() as f64;
            sum_lt += lt * batch.len() as f64;
            sum_lu += lu * batch.len() as f64;
            n_seen += batch.len();
        }

        let inv = 1.0 / n_seen as f64;
        let record = EpochRecord {
            epoch,
            loss: sum_l * inv,
            loss_thermal: sum_lt * inv,
            loss_mechanical: sum_lu * inv,
            lr,
            wall_time: epoch_start.elapsed().as_secs_f64(),
            stage,
        };
        let loss_now = record.loss;
        history.epochs.push(record);

        if cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 {
            on_checkpoint(epoch, params)?;
        }

        recent.push(loss_now);
        if recent.len() > EARLY_STOP_WINDOW {
            let old = recent[recent.len() - 1 - EARLY_STOP_WINDOW];
            // only a plateau counts: never stop on an increasing sequence
            if loss_now <= old
                && (old - loss_now).abs() <= EARLY_STOP_REL * old.abs().max(1e-300)
            {
                break;
            }
        }
    }

    on_checkpoint(history.epochs.last().map_or(0, |e| e.epoch), params)?;
    Ok(history)
}

/// Everything needed to re-run a training command exactly.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub dataset_hash: String,
    pub model_seed: u64,
    pub git_revision: String,
    pub final_loss: f64,
    pub final_loss_thermal: f64,
    pub final_loss_mechanical: f64,
    pub epochs_run: usize,
}

impl RunManifest {
    pub fn new(
        cfg: &TrainConfig,
        dataset: &Dataset,
        model_seed: u64,
        history: &LossHistory,
    ) -> Self {
        let last = history.epochs.last();
        RunManifest {
            config: cfg.clone(),
            dataset_hash: dataset.content_hash.clone(),
            model_seed,
            git_revision: std::env::var("FEOL_GIT_REVISION").unwrap_or_else(|_| "unknown".into()),
            final_loss: last.map_or(f64::NAN, |e| e.loss),
            final_loss_thermal: last.map_or(f64::NAN, |e| e.loss_thermal),
            final_loss_mechanical: last.map_or(f64::NAN, |e| e.loss_mechanical),
            epochs_run: history.epochs.len(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("manifest encode: {e}")))
    }
}
