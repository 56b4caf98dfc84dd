//! Network decomposition strategies: one shared network for all fields,
//! one network per physics, or one network per scalar field, with channel
//! widths rescaled so the total trainable parameter count stays within 5%
//! of the single-network baseline.

use crate::error::{Error, Result};
use crate::tape::Params;

use super::{Backbone, FnoConfig, FnoModel, ModelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionStrategy {
    Single,
    PerPhysics,
    PerField,
}

fn fno_with_width(base: &FnoConfig, width: usize, out_fields: usize) -> FnoModel {
    let mut cfg = base.clone();
    cfg.width = width;
    cfg.out_fields = out_fields;
    let mut m = FnoModel::new(cfg);
    let mut scratch = Params::new();
    m.register(&mut scratch);
    m
}

/// Build an FNO model set for the given strategy. For the decomposed
/// strategies the stage width is searched so the total parameter count is
/// within 5% of the single-network baseline; if no width achieves that, a
/// configuration error reports the nearest feasible widths.
pub fn build_decomposition(
    strategy: DecompositionStrategy,
    base: &FnoConfig,
) -> Result<ModelSet> {
    let n_solution_fields = 1 + base.dim;
    let target = {
        let mut cfg = base.clone();
        cfg.out_fields = n_solution_fields;
        cfg.n_params()
    };
    let tol = 0.05;

    let out_sets: Vec<usize> = match strategy {
        DecompositionStrategy::Single => {
            let mut cfg = base.clone();
            cfg.out_fields = n_solution_fields;
            let mut m = FnoModel::new(cfg);
            let mut scratch = Params::new();
            m.register(&mut scratch);
            return Ok(ModelSet::single(Backbone::Fno(m)));
        }
        DecompositionStrategy::PerPhysics => vec![1, base.dim],
        DecompositionStrategy::PerField => vec![1; n_solution_fields],
    };

    let count_one = |width: usize, fields: usize| -> usize {
        let mut cfg = base.clone();
        cfg.width = width;
        cfg.out_fields = fields;
        cfg.n_params()
    };
    let total_for = |widths: &[usize]| -> usize {
        widths.iter().zip(&out_sets).map(|(&w, &f)| count_one(w, f)).sum()
    };

    // best common width first, then per-model +-1 refinement; counts are
    // monotone in each width so coordinate descent settles quickly
    let mut best_common = 1;
    let mut best_diff = usize::MAX;
    for width in 1..=base.width * 2 {
        let total = total_for(&vec![width; out_sets.len()]);
        let diff = total.abs_diff(target);
        if diff < best_diff {
            best_diff = diff;
            best_common = width;
        }
    }
    let mut widths = vec![best_common; out_sets.len()];
    loop {
        let mut improved = false;
        for i in 0..widths.len() {
            let current = total_for(&widths).abs_diff(target);
            for cand in [widths[i].saturating_sub(1).max(1), widths[i] + 1] {
                let mut trial = widths.clone();
                trial[i] = cand;
                if total_for(&trial).abs_diff(target) < current {
                    widths = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }

    let total = total_for(&widths);
    let rel = (total as f64 - target as f64).abs() / target as f64;
    if rel > tol {
        return Err(Error::Config(format!(
            "no channel widths match the {target}-parameter baseline within 5%; nearest found: \
             widths {widths:?} with {total} parameters ({:.1}% off)",
            rel * 100.0
        )));
    }
    let models = widths
        .iter()
        .zip(&out_sets)
        .map(|(&w, &f)| Backbone::Fno(fno_with_width(base, w, f)))
        .collect();
    Ok(ModelSet { models })
}
