use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PlanError, WorldModel};
use crate::model::SpaceValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsPlannerConfig {
    pub iterations: usize,
    pub max_actions: usize,
    pub exploration: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub temperature: f64,
}

impl Default for MctsPlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 25,
            max_actions: 100,
            exploration: 1.0,
            epsilon: 1.0,
            gamma: 0.99,
            temperature: 0.01,
        }
    }
}

impl MctsPlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations == 0 || self.max_actions == 0 {
            return Err("iterations and max_actions must be positive".into());
        }
        if !(self.exploration > 0.0
            && self.epsilon > 0.0
            && self.gamma > 0.0
            && self.temperature > 0.0)
        {
            return Err("exploration, epsilon, gamma and temperature must be positive".into());
        }
        Ok(())
    }
}

struct Node {
    state: SpaceValue,
    reward: f64,
    done: bool,
    children: Vec<Option<usize>>,
    visits: u64,
    value_sum: f64,
}

impl Node {
    fn new(state: SpaceValue, reward: f64, done: bool, n_actions: usize) -> Self {
        Self {
            state,
            reward,
            done,
            children: vec![None; n_actions],
            visits: 0,
            value_sum: 0.0,
        }
    }

    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctsDecision {
    pub action: usize,
    /// Mean return through each root child; None when never tried.
    pub root_values: Vec<Option<f64>>,
    pub root_visits: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub simulations: usize,
    pub failed_steps: usize,
}

/// Softmax over `values` at temperature `t`, computed stably.
pub fn softmax(values: &[f64], t: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| ((v - max) / t).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

fn random_rollout<R: Rng + ?Sized>(
    model: &mut dyn WorldModel,
    from: &SpaceValue,
    n_actions: usize,
    config: &MctsPlannerConfig,
    rng: &mut R,
) -> f64 {
    let mut s = from.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..config.max_actions {
        let a = SpaceValue::Discrete(rng.random_range(0..n_actions) as i64);
        match model.step(&s, &a) {
            Ok(out) => {
                total += discount * out.r;
                discount *= config.gamma;
                if out.d {
                    break;
                }
                s = out.s_next;
            }
            Err(_) => break,
        }
    }
    total
}

/// Chooses one discrete action from `state` by UCT search in `model`.
pub fn mcts_plan<R: Rng + ?Sized>(
    model: &mut dyn WorldModel,
    state: &SpaceValue,
    n_actions: usize,
    config: &MctsPlannerConfig,
    rng: &mut R,
) -> Result<MctsDecision, PlanError> {
    if n_actions == 0 {
        return Err(PlanError::Config("action space is empty".into()));
    }
    config.validate().map_err(PlanError::Config)?;
    let mut nodes = vec![Node::new(state.clone(), 0.0, false, n_actions)];
    let mut failed_steps = 0;

    for _ in 0..config.iterations {
        let mut path = vec![0usize];
        let mut id = 0;
        let future = loop {
            if nodes[id].done {
                break 0.0;
            }
            if let Some(a) = nodes[id].children.iter().position(Option::is_none) {
                let action = SpaceValue::Discrete(a as i64);
                let child = match model.step(&nodes[id].state, &action) {
                    Ok(out) => Node::new(out.s_next, out.r, out.d, n_actions),
                    Err(_) => {
                        // A failed step ends the simulation with what was collected so far.
                        failed_steps += 1;
                        Node::new(nodes[id].state.clone(), 0.0, true, n_actions)
                    }
                };
                let cid = nodes.len();
                let (done, s) = (child.done, child.state.clone());
                nodes.push(child);
                nodes[id].children[a] = Some(cid);
                path.push(cid);
                break if done {
                    0.0
                } else {
                    random_rollout(model, &s, n_actions, config, rng)
                };
            }
            let parent_visits = nodes[id].visits.max(1) as f64;
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (a, c) in nodes[id].children.iter().enumerate() {
                let c = &nodes[c.expect("all children tried")];
                let score = c.mean()
                    + config.exploration
                        * (parent_visits.ln() / (c.visits as f64 + config.epsilon)).sqrt();
                if score > best_score {
                    best = a;
                    best_score = score;
                }
            }
            id = nodes[id].children[best].expect("child exists");
            path.push(id);
        };
        let mut g = future;
        for &pid in path.iter().rev() {
            let n = &mut nodes[pid];
            if pid != 0 {
                g = n.reward + config.gamma * g;
            }
            n.visits += 1;
            n.value_sum += g;
        }
    }

    let root_values: Vec<Option<f64>> = nodes[0]
        .children
        .iter()
        .map(|c| c.map(|c| nodes[c].mean()))
        .collect();
    let root_visits: Vec<u64> = nodes[0]
        .children
        .iter()
        .map(|c| c.map_or(0, |c| nodes[c].visits))
        .collect();
    let tried: Vec<usize> = (0..n_actions)
        .filter(|&a| root_values[a].is_some())
        .collect();
    let values: Vec<f64> = tried
        .iter()
        .map(|&a| root_values[a].unwrap_or(0.0))
        .collect();
    let p_tried = softmax(&values, config.temperature);
    let mut probabilities = vec![0.0; n_actions];
    for (k, &a) in tried.iter().enumerate() {
        probabilities[a] = p_tried[k];
    }
    let action = tried[sample_index(&p_tried, rng)];
    Ok(MctsDecision {
        action,
        root_values,
        root_visits,
        probabilities,
        simulations: config.iterations,
        failed_steps,
    })
}
