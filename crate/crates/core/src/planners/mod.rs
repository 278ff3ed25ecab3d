//! Planning inside a world model, and episode-level evaluation of a
//! synthesized model against the true environment.

mod cem;
mod mcts;

use std::collections::VecDeque;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fixtures::FixtureEnv;
use crate::model::{normalized_return, SpaceSpec, SpaceValue, StepOutput};
use crate::sandbox::{ExecError, Executor, PlanRollout};

pub use cem::{cem_plan, initial_std, refit, CemPlannerConfig, CemResult, STD_FLOOR};
pub use mcts::{mcts_plan, softmax, MctsDecision, MctsPlannerConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("planner configuration: {0}")]
    Config(String),
    #[error("model unusable: {0}")]
    ModelUnusable(String),
    #[error("true environment failed: {0}")]
    Environment(ExecError),
    #[error("random and oracle returns coincide ({0}); normalized return is undefined")]
    Degenerate(f64),
}

/// Anything that can predict transitions from explicit states.
pub trait WorldModel {
    fn step(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError>;

    fn rollout(&mut self, s0: &SpaceValue, actions: &[SpaceValue]) -> PlanRollout {
        let mut out = PlanRollout::default();
        let mut s = s0.clone();
        for a in actions {
            match self.step(&s, a) {
                Ok(step) => {
                    let done = step.d;
                    s = step.s_next.clone();
                    out.steps.push(step);
                    if done {
                        break;
                    }
                }
                Err(e) => {
                    out.error = Some(e);
                    break;
                }
            }
        }
        out
    }
}

/// The fixture's own transition function used as a model.
pub struct OracleModel {
    env: Arc<dyn FixtureEnv>,
}

impl OracleModel {
    pub fn new(env: Arc<dyn FixtureEnv>) -> Self {
        Self { env }
    }
}

impl WorldModel for OracleModel {
    fn step(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        self.env.transition(s, a)
    }
}

/// A loaded program behind an executor.
pub struct ExecutorModel<E> {
    executor: E,
}

impl<E: Executor> ExecutorModel<E> {
    pub fn load(mut executor: E, program: &str) -> Result<Self, ExecError> {
        executor.load_program(program)?;
        Ok(Self { executor })
    }
}

impl<E: Executor> WorldModel for ExecutorModel<E> {
    fn step(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        self.executor.step_from(s, a)
    }

    fn rollout(&mut self, s0: &SpaceValue, actions: &[SpaceValue]) -> PlanRollout {
        self.executor.run_plan(s0, actions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Planner {
    Mcts(MctsPlannerConfig),
    Cem(CemPlannerConfig),
}

impl Planner {
    /// MCTS for discrete actions, CEM for boxes.
    pub fn for_space(space: &SpaceSpec) -> Self {
        match space {
            SpaceSpec::Discrete { .. } => Planner::Mcts(MctsPlannerConfig::default()),
            SpaceSpec::Box { .. } => Planner::Cem(CemPlannerConfig::default()),
        }
    }
}

pub enum Policy<'a> {
    Random,
    Planned {
        model: &'a mut dyn WorldModel,
        planner: Planner,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub s: SpaceValue,
    pub a: SpaceValue,
    pub r: f64,
    pub s_next: SpaceValue,
    pub d: bool,
    /// Why the policy fell back to a random action, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    pub terminated: bool,
    pub log: Vec<StepLog>,
}

pub fn random_action<R: Rng + ?Sized>(space: &SpaceSpec, rng: &mut R) -> SpaceValue {
    match space {
        SpaceSpec::Discrete { n } => SpaceValue::Discrete(rng.random_range(0..(*n).max(1)) as i64),
        SpaceSpec::Box { low, high } => SpaceValue::Box(
            low.iter()
                .zip(high)
                .map(|(l, h)| {
                    let (l, h) = (
                        if l.is_finite() { *l } else { -1.0 },
                        if h.is_finite() { *h } else { 1.0 },
                    );
                    if h > l {
                        rng.random_range(l..h)
                    } else {
                        l
                    }
                })
                .collect(),
        ),
    }
}

/// Steps the true environment with the policy's actions until it terminates
/// or `max_steps` is reached.
pub fn run_episode<R: Rng + ?Sized>(
    env: &dyn FixtureEnv,
    policy: &mut Policy<'_>,
    max_steps: usize,
    rng: &mut R,
) -> Result<EpisodeResult, PlanError> {
    let space = env.action_space();
    let mut s = env.initial_state();
    let mut log = Vec::new();
    let mut queued: VecDeque<SpaceValue> = VecDeque::new();
    let mut ret = 0.0;
    let mut terminated = false;

    for t in 0..max_steps {
        let mut fallback = None;
        let a = match policy {
            Policy::Random => random_action(&space, rng),
            Policy::Planned { model, planner } => {
                let planned = match (planner, &space) {
                    (Planner::Mcts(cfg), SpaceSpec::Discrete { n }) => {
                        mcts_plan(&mut **model, &s, *n as usize, cfg, rng)
                            .map(|d| SpaceValue::Discrete(d.action as i64))
                    }
                    (Planner::Cem(cfg), SpaceSpec::Box { low, high }) => match queued.pop_front() {
                        Some(a) => Ok(a),
                        None => cem_plan(&mut **model, &s, low, high, cfg, rng).map(|r| {
                            queued.extend(r.plan.into_iter().map(SpaceValue::Box));
                            queued.pop_front().expect("plan is non-empty")
                        }),
                    },
                    _ => Err(PlanError::Config(
                        "planner does not match the action space".into(),
                    )),
                };
                match planned {
                    Ok(a) => a,
                    Err(e @ PlanError::Config(_)) => return Err(e),
                    Err(e) => {
                        warn!("step {t}: planner failed ({e}); acting randomly");
                        fallback = Some(e.to_string());
                        random_action(&space, rng)
                    }
                }
            }
        };
        let out = env.transition(&s, &a).map_err(PlanError::Environment)?;
        ret += out.r;
        log.push(StepLog {
            t,
            s: s.clone(),
            a,
            r: out.r,
            s_next: out.s_next.clone(),
            d: out.d,
            fallback,
        });
        s = out.s_next;
        if out.d {
            terminated = true;
            break;
        }
    }
    Ok(EpisodeResult {
        ret,
        steps: log.len(),
        terminated,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            episodes: 10,
            max_steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwmEvaluation {
    pub normalized_return: f64,
    pub std_error: f64,
    /// Set when the program could not be loaded; the return is then 0.
    pub unusable: bool,
    pub error: Option<String>,
    pub cwm_returns: Vec<f64>,
    pub oracle_returns: Vec<f64>,
    pub random_returns: Vec<f64>,
    pub cwm_episodes: Vec<EpisodeResult>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Standard error of the mean (sample standard deviation over sqrt(n)).
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn planner_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

fn random_seed(seed: u64, episode: usize) -> u64 {
    planner_seed(seed, episode) ^ 0x5eed_0000_0000_0000
}

/// Episodes of `policy` with the per-episode seeds shared by every policy.
pub fn run_episodes(
    env: &dyn FixtureEnv,
    policy: &mut Policy<'_>,
    opts: &EpisodeOptions,
    random: bool,
) -> Result<Vec<EpisodeResult>, PlanError> {
    (0..opts.episodes)
        .map(|e| {
            let seed = if random {
                random_seed(opts.seed, e)
            } else {
                planner_seed(opts.seed, e)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(env, policy, opts.max_steps, &mut rng)
        })
        .collect()
}

/// Normalized return of planning with `model` against planning with the
/// true dynamics and against a random policy.
pub fn evaluate_model(
    model: Option<&mut dyn WorldModel>,
    env: Arc<dyn FixtureEnv>,
    planner: &Planner,
    opts: &EpisodeOptions,
) -> Result<CwmEvaluation, PlanError> {
    let mut oracle = OracleModel::new(Arc::clone(&env));
    let oracle_eps = run_episodes(
        env.as_ref(),
        &mut Policy::Planned {
            model: &mut oracle,
            planner: planner.clone(),
        },
        opts,
        false,
    )?;
    let random_eps = run_episodes(env.as_ref(), &mut Policy::Random, opts, true)?;
    let oracle_returns: Vec<f64> = oracle_eps.iter().map(|e| e.ret).collect();
    let random_returns: Vec<f64> = random_eps.iter().map(|e| e.ret).collect();
    let Some(model) = model else {
        return Ok(CwmEvaluation {
            normalized_return: 0.0,
            std_error: 0.0,
            unusable: true,
            error: None,
            cwm_returns: Vec::new(),
            oracle_returns,
            random_returns,
            cwm_episodes: Vec::new(),
        });
    };
    let cwm_eps = run_episodes(
        env.as_ref(),
        &mut Policy::Planned {
            model,
            planner: planner.clone(),
        },
        opts,
        false,
    )?;
    let cwm_returns: Vec<f64> = cwm_eps.iter().map(|e| e.ret).collect();
    let (r_true, r_rand) = (mean(&oracle_returns), mean(&random_returns));
    let normalized = normalized_return(mean(&cwm_returns), r_true, r_rand)
        .map_err(|_| PlanError::Degenerate(r_true))?;
    let per_episode: Vec<f64> = cwm_returns
        .iter()
        .map(|r| (r - r_rand) / (r_true - r_rand))
        .collect();
    Ok(CwmEvaluation {
        normalized_return: normalized,
        std_error: std_error(&per_episode),
        unusable: false,
        error: None,
        cwm_returns,
        oracle_returns,
        random_returns,
        cwm_episodes: cwm_eps,
    })
}

/// Loads `program` into `executor` and evaluates it by planning.
pub fn evaluate_cwm<E: Executor>(
    program: &str,
    executor: E,
    env: Arc<dyn FixtureEnv>,
    planner: &Planner,
    opts: &EpisodeOptions,
) -> Result<CwmEvaluation, PlanError> {
    match ExecutorModel::load(executor, program) {
        Ok(mut model) => evaluate_model(Some(&mut model), env, planner, opts),
        Err(e) => {
            let mut r = evaluate_model(None, env, planner, opts)?;
            r.error = Some(e.to_string());
            Ok(r)
        }
    }
}

#[cfg(test)]
mod tests;
