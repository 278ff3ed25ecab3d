use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PlanError, WorldModel};
use crate::model::SpaceValue;

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemPlannerConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub samples: usize,
    pub elites: usize,
}

impl Default for CemPlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            iterations: 20,
            samples: 1000,
            elites: 100,
        }
    }
}

impl CemPlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 || self.iterations == 0 || self.samples == 0 || self.elites == 0 {
            return Err("horizon, iterations, samples and elites must be positive".into());
        }
        if self.elites > self.samples {
            return Err(format!(
                "elites ({}) exceed samples ({})",
                self.elites, self.samples
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemResult {
    /// horizon × action-dim.
    pub plan: Vec<Vec<f64>>,
    pub score: f64,
    /// Final Gaussian, flattened time-major.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub initial_std: Vec<f64>,
    pub best_per_iteration: Vec<f64>,
}

/// Per-dimension starting spread: half the largest absolute bound.
pub fn initial_std(low: &[f64], high: &[f64]) -> Vec<f64> {
    low.iter()
        .zip(high)
        .map(|(l, h)| {
            let m = l.abs().max(h.abs());
            if m.is_finite() {
                m / 2.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Mean and population standard deviation of the elites, per coordinate.
pub fn refit(elites: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let k = elites.len() as f64;
    let dim = elites.first().map_or(0, |e| e.len());
    let mut mean = vec![0.0; dim];
    for e in elites {
        for (m, x) in mean.iter_mut().zip(e.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; dim];
    for e in elites {
        for ((v, x), m) in var.iter_mut().zip(e.iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.iter().map(|v| (v / k).sqrt()).collect();
    (mean, std)
}

fn to_actions(flat: &[f64], dim: usize) -> Vec<SpaceValue> {
    flat.chunks(dim)
        .map(|c| SpaceValue::Box(c.to_vec()))
        .collect()
}

/// Cross-entropy planning over an open-loop action sequence in a box space.
pub fn cem_plan<R: Rng + ?Sized>(
    model: &mut dyn WorldModel,
    state: &SpaceValue,
    low: &[f64],
    high: &[f64],
    config: &CemPlannerConfig,
    rng: &mut R,
) -> Result<CemResult, PlanError> {
    config.validate().map_err(PlanError::Config)?;
    let dim = low.len();
    if dim == 0 || high.len() != dim {
        return Err(PlanError::Config(
            "action bounds must be non-empty and of equal length".into(),
        ));
    }
    let len = config.horizon * dim;
    let init = initial_std(low, high);
    let mut mean = vec![0.0; len];
    let mut std: Vec<f64> = (0..len).map(|i| init[i % dim]).collect();
    let mut best_per_iteration = Vec::with_capacity(config.iterations);
    let mut final_best: Option<(Vec<f64>, f64)> = None;

    for _ in 0..config.iterations {
        let mut plans: Vec<Vec<f64>> = Vec::with_capacity(config.samples);
        for _ in 0..config.samples {
            let plan: Vec<f64> = (0..len)
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    (mean[i] + std[i].max(STD_FLOOR) * z).clamp(low[i % dim], high[i % dim])
                })
                .collect();
            plans.push(plan);
        }
        let mut scored: Vec<(usize, f64)> = Vec::with_capacity(plans.len());
        for (i, p) in plans.iter().enumerate() {
            let rollout = model.rollout(state, &to_actions(p, dim));
            if rollout.error.is_none() {
                scored.push((i, rollout.total_reward()));
            }
        }
        if scored.is_empty() {
            return Err(PlanError::ModelUnusable(
                "every sampled plan failed in the model".into(),
            ));
        }
        // Stable sort keeps index order among equal scores.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let elites: Vec<&[f64]> = scored
            .iter()
            .take(config.elites)
            .map(|(i, _)| plans[*i].as_slice())
            .collect();
        let (m, s) = refit(&elites);
        mean = m;
        std = s;
        let (bi, bs) = scored[0];
        best_per_iteration.push(bs);
        final_best = Some((plans[bi].clone(), bs));
    }

    let (plan, score) = final_best.expect("at least one iteration");
    Ok(CemResult {
        plan: plan.chunks(dim).map(<[f64]>::to_vec).collect(),
        score,
        mean,
        std,
        initial_std: init,
        best_per_iteration,
    })
}
