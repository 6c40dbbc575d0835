//! Training objective `L = L_data + λ1·L_moment + λ2·L_SymNet`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PdeNetModel;
use crate::moments::moment_loss;
use crate::simulator::TrajectorySet;
use crate::symnet::symnet_sparsity_loss;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_moment: f64,
    pub lambda_symnet: f64,
    pub s_moment: f64,
    pub s_symnet: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_moment: 0.001,
            lambda_symnet: 0.005,
            s_moment: 0.01,
            s_symnet: 0.001,
        }
    }
}

impl LossWeights {
    /// Data term only (the warm-up configuration).
    pub fn data_only() -> Self {
        LossWeights {
            lambda_moment: 0.0,
            lambda_symnet: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_moment,
            self.lambda_symnet,
            self.s_moment,
            self.s_symnet,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "loss weights must be finite and non-negative",
            ));
        }
        if self.s_moment <= 0.0 || self.s_symnet <= 0.0 {
            return Err(Error::invalid("Huber thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub moment: f64,
    pub symnet: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(data: f64, moment: f64, symnet: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            data,
            moment,
            symnet,
            total: data + w.lambda_moment * moment + w.lambda_symnet * symnet,
        }
    }
}

pub(crate) fn check_batch(
    observed: &TrajectorySet,
    model: &PdeNetModel,
    n_blocks: usize,
) -> Result<()> {
    if observed.samples.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    if n_blocks == 0 {
        return Err(Error::invalid("need at least one block"));
    }
    if let Some(s) = observed.samples.iter().find(|s| s.len() < n_blocks + 1) {
        return Err(Error::invalid(format!(
            "sample has {} snapshots, need {}",
            s.len(),
            n_blocks + 1
        )));
    }
    if observed.components.len() != model.n_components() {
        return Err(Error::shape(
            "batch and model have different component counts",
        ));
    }
    crate::grid::check_same_grid(&observed.grid, &model.grid)?;
    if !(model.dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    Ok(())
}

/// `(1/n) Σ_{i=1..n} Σ_j ‖U_j(t_i) − Ũ_j(t_i)‖² / δt²`, where `Ũ_j` is the
/// model rollout from `U_j(t_0)` and `‖·‖²` is the plain nodal sum of squares
/// over all components.
pub fn data_loss(observed: &TrajectorySet, model: &PdeNetModel, n_blocks: usize) -> Result<f64> {
    check_batch(observed, model, n_blocks)?;
    let mut total = 0.0;
    for sample in &observed.samples {
        let r = model.rollout(&sample[0], n_blocks)?;
        if let Some(block) = r.diverged_at {
            return Err(Error::Divergence { block });
        }
        for (pred, obs) in r.states.iter().zip(&sample[1..]) {
            for (a, b) in pred.components.iter().zip(&obs.components) {
                total += a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
            }
        }
    }
    Ok(total / (n_blocks as f64 * model.dt * model.dt))
}

pub fn total_loss(
    observed: &TrajectorySet,
    model: &PdeNetModel,
    n_blocks: usize,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let data = data_loss(observed, model, n_blocks)?;
    Ok(LossBreakdown::combine(
        data,
        moment_loss(&model.filters, w.s_moment),
        symnet_sparsity_loss(&model.symnets, w.s_symnet),
        w,
    ))
}
