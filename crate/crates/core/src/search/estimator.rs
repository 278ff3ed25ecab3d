use serde::{Deserialize, Serialize};

use super::{Prior, SearchConfig};
use crate::llm::Action;

/// Learned blend of the global and local value for one action type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    pub w_g: f64,
    pub w_l: f64,
    pub prior: Prior,
    pub sum: f64,
    pub count: usize,
}

impl ActionStats {
    fn new(prior: Prior) -> Self {
        Self {
            w_g: 1.0,
            w_l: 1.0,
            prior,
            sum: 0.0,
            count: 0,
        }
    }

    pub fn global_mean(&self) -> f64 {
        (self.prior.value * self.prior.pseudo_count + self.sum)
            / (self.prior.pseudo_count + self.count as f64)
    }

    pub fn combine(&self, v_g: f64, v_l: f64) -> f64 {
        (self.w_g * v_g + self.w_l * v_l) / (self.w_g + self.w_l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStep {
    pub action: Action,
    pub v_g: f64,
    pub v_l: f64,
    pub predicted: f64,
    pub observed: f64,
    pub w_g: f64,
    pub w_l: f64,
}

/// Predicts the value of unexplored generate and improve arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimator {
    pub generate: ActionStats,
    pub improve: ActionStats,
    pub learning_rate: f64,
    pub training_log: Vec<TrainingStep>,
}

impl ValueEstimator {
    pub fn new(config: &SearchConfig) -> Self {
        Self {
            generate: ActionStats::new(config.prior_generate),
            improve: ActionStats::new(config.prior_improve),
            learning_rate: config.learning_rate,
            training_log: Vec::new(),
        }
    }

    /// Fix arms are not estimated; they inherit the temporary value of their chain.
    pub fn stats(&self, action: Action) -> Option<&ActionStats> {
        match action {
            Action::Generate => Some(&self.generate),
            Action::Improve => Some(&self.improve),
            Action::Fix => None,
        }
    }

    fn stats_mut(&mut self, action: Action) -> Option<&mut ActionStats> {
        match action {
            Action::Generate => Some(&mut self.generate),
            Action::Improve => Some(&mut self.improve),
            Action::Fix => None,
        }
    }

    pub fn global_mean(&self, action: Action) -> Option<f64> {
        self.stats(action).map(ActionStats::global_mean)
    }

    /// Returns (v_G, v_L) for an arm whose expanded same-type siblings have
    /// values `local`.
    pub fn inputs(&self, action: Action, local: &[f64]) -> Option<(f64, f64)> {
        let v_g = self.global_mean(action)?;
        let v_l = if local.is_empty() {
            v_g
        } else {
            local.iter().sum::<f64>() / local.len() as f64
        };
        Some((v_g, v_l))
    }

    pub fn estimate(&self, action: Action, local: &[f64]) -> Option<f64> {
        let (v_g, v_l) = self.inputs(action, local)?;
        self.stats(action).map(|s| s.combine(v_g, v_l))
    }

    /// One gradient step on the squared error of the prediction made from
    /// (v_G, v_L), then records `observed` in the global mean.
    pub fn update(&mut self, action: Action, v_g: f64, v_l: f64, observed: f64) {
        let lr = self.learning_rate;
        let Some(s) = self.stats_mut(action) else {
            return;
        };
        let predicted = s.combine(v_g, v_l);
        let total = s.w_g + s.w_l;
        let g = 2.0 * (predicted - observed) / total;
        s.w_g = (s.w_g - lr * g * (v_g - predicted)).max(0.0);
        s.w_l = (s.w_l - lr * g * (v_l - predicted)).max(0.0);
        if s.w_g + s.w_l < 1e-6 {
            s.w_g = 1e-6 - s.w_l;
        }
        s.sum += observed;
        s.count += 1;
        let step = TrainingStep {
            action,
            v_g,
            v_l,
            predicted,
            observed,
            w_g: s.w_g,
            w_l: s.w_l,
        };
        self.training_log.push(step);
    }
}
