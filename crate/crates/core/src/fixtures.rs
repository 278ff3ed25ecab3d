//! Small deterministic reference environments with native implementations.
//!
//! Each fixture ships a Python ground-truth program under `fixtures/` and a
//! native twin here. [`registry`] maps the Python sources (and a few deliberately
//! wrong variants) to the native twins so that [`NativeExecutor`] can stand in
//! for a real worker.
//!
//! [`NativeExecutor`]: crate::sandbox::NativeExecutor

use std::path::PathBuf;
use std::sync::Arc;

use crate::model::{SpaceSpec, SpaceValue, StepOutput};
use crate::sandbox::{EnvFactory, ExecError, IoProgram, NativeEnv, ProgramRegistry};

pub const LINEWORLD_SOURCE: &str = include_str!("../../../fixtures/lineworld/ground_truth.py");
pub const LINEWORLD_NO_GOAL_SOURCE: &str =
    include_str!("../../../fixtures/lineworld/variants/no_goal.py");
pub const LINEWORLD_FROZEN_SOURCE: &str =
    include_str!("../../../fixtures/lineworld/variants/frozen.py");
pub const LINEWORLD_HALTING_SOURCE: &str =
    include_str!("../../../fixtures/lineworld/variants/halting.py");
pub const MINICLIFF_SOURCE: &str = include_str!("../../../fixtures/minicliff/ground_truth.py");
pub const MINICLIFF_NO_CLIFF_SOURCE: &str =
    include_str!("../../../fixtures/minicliff/variants/no_cliff.py");
pub const TRACKING_SOURCE: &str = include_str!("../../../fixtures/tracking/ground_truth.py");
pub const APPS_SUM_SOURCE: &str = include_str!("../../../fixtures/apps_sum/programs/correct.py");
pub const APPS_SUM_ABS_SOURCE: &str =
    include_str!("../../../fixtures/apps_sum/programs/abs_sum.py");
pub const APPS_SUM_SILENT_SOURCE: &str =
    include_str!("../../../fixtures/apps_sum/programs/silent.py");

pub const TRACKING_TARGETS: [f64; 10] = [0.5, -1.0, 1.5, 0.0, -0.5, 1.0, -1.5, 0.25, 0.75, -0.25];

/// Directory holding the on-disk fixture environments and problems.
pub fn fixtures_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A pure transition function over explicit states.
pub trait FixtureEnv: Send + Sync {
    fn name(&self) -> &str;
    fn action_space(&self) -> SpaceSpec;
    fn observation_space(&self) -> SpaceSpec;
    fn initial_state(&self) -> SpaceValue;
    fn transition(&self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError>;
}

fn index_of(v: &SpaceValue, what: &str) -> Result<i64, ExecError> {
    v.as_index()
        .ok_or_else(|| ExecError::runtime(format!("TypeError: {what} must be an integer, got {v}")))
}

fn invalid_action(a: &SpaceValue) -> ExecError {
    ExecError::runtime(format!("ValueError: invalid action {a}"))
}

/// Corridor of `goal + 1` cells. Action 0 moves left, 1 moves right; reaching
/// the goal pays +1 and terminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineWorld {
    pub goal: i64,
}

impl LineWorld {
    pub fn new(goal: i64) -> Self {
        Self { goal }
    }
}

impl Default for LineWorld {
    fn default() -> Self {
        Self { goal: 9 }
    }
}

impl FixtureEnv for LineWorld {
    fn name(&self) -> &str {
        "lineworld"
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::discrete(2)
    }

    fn observation_space(&self) -> SpaceSpec {
        SpaceSpec::discrete(self.goal as u64 + 1)
    }

    fn initial_state(&self) -> SpaceValue {
        SpaceValue::Discrete(0)
    }

    fn transition(&self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let pos = index_of(s, "state")?;
        let next = match a.as_index() {
            Some(1) => (pos + 1).min(self.goal),
            Some(0) => (pos - 1).max(0),
            _ => return Err(invalid_action(a)),
        };
        let done = next == self.goal;
        Ok(StepOutput::new(next, if done { 1.0 } else { 0.0 }, done))
    }
}

/// Wrong LineWorld models used as low-accuracy candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineWorldVariant {
    /// Correct motion, but never rewards and never terminates.
    NoGoal,
    /// Never moves.
    Frozen,
    /// Never moves, pays -1 and ends every episode at once.
    Halting,
}

impl FixtureEnv for LineWorldVariant {
    fn name(&self) -> &str {
        match self {
            LineWorldVariant::NoGoal => "lineworld-no-goal",
            LineWorldVariant::Frozen => "lineworld-frozen",
            LineWorldVariant::Halting => "lineworld-halting",
        }
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::discrete(2)
    }

    fn observation_space(&self) -> SpaceSpec {
        SpaceSpec::discrete(10)
    }

    fn initial_state(&self) -> SpaceValue {
        SpaceValue::Discrete(0)
    }

    fn transition(&self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let pos = index_of(s, "state")?;
        match self {
            LineWorldVariant::Frozen => Ok(StepOutput::new(pos, 0.0, false)),
            LineWorldVariant::Halting => Ok(StepOutput::new(pos, -1.0, true)),
            LineWorldVariant::NoGoal => {
                let next = if a.as_index() == Some(1) {
                    (pos + 1).min(9)
                } else {
                    (pos - 1).max(0)
                };
                Ok(StepOutput::new(next, 0.0, false))
            }
        }
    }
}

/// 3x4 cliff walk. Cells are `row * 4 + col`; start 8, goal 11, cliff 9 and 10.
/// Actions: 0 up, 1 right, 2 down, 3 left. Falling off the cliff costs -100 and
/// returns the agent to the start without ending the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MiniCliff {
    /// Ignore the cliff entirely (a plausible but wrong model).
    pub no_cliff: bool,
}

impl MiniCliff {
    pub const ROWS: i64 = 3;
    pub const COLS: i64 = 4;
    pub const START: i64 = 8;
    pub const GOAL: i64 = 11;
}

impl FixtureEnv for MiniCliff {
    fn name(&self) -> &str {
        if self.no_cliff {
            "minicliff-no-cliff"
        } else {
            "minicliff"
        }
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::discrete(4)
    }

    fn observation_space(&self) -> SpaceSpec {
        SpaceSpec::discrete((Self::ROWS * Self::COLS) as u64)
    }

    fn initial_state(&self) -> SpaceValue {
        SpaceValue::Discrete(Self::START)
    }

    fn transition(&self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let cell = index_of(s, "state")?;
        let (mut row, mut col) = (cell.div_euclid(Self::COLS), cell.rem_euclid(Self::COLS));
        match a.as_index() {
            Some(0) => row = (row - 1).max(0),
            Some(1) => col = (col + 1).min(Self::COLS - 1),
            Some(2) => row = (row + 1).min(Self::ROWS - 1),
            Some(3) => col = (col - 1).max(0),
            _ if self.no_cliff => {}
            _ => return Err(invalid_action(a)),
        }
        let next = row * Self::COLS + col;
        if !self.no_cliff && (next == 9 || next == 10) {
            return Ok(StepOutput::new(Self::START, -100.0, false));
        }
        Ok(StepOutput::new(next, -1.0, next == Self::GOAL))
    }
}

/// Ten-step setpoint tracking with a scalar control in [-2, 2]. The state is
/// the step index as a one-element box; reward is minus the squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub targets: Vec<f64>,
}

impl Default for Tracking {
    fn default() -> Self {
        Self {
            targets: TRACKING_TARGETS.to_vec(),
        }
    }
}

impl FixtureEnv for Tracking {
    fn name(&self) -> &str {
        "tracking"
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::bounded(vec![-2.0], vec![2.0])
    }

    fn observation_space(&self) -> SpaceSpec {
        SpaceSpec::bounded(vec![0.0], vec![self.targets.len() as f64])
    }

    fn initial_state(&self) -> SpaceValue {
        SpaceValue::Box(vec![0.0])
    }

    fn transition(&self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let t = s
            .to_vec()
            .first()
            .copied()
            .ok_or_else(|| ExecError::runtime("IndexError: list index out of range"))?
            .round() as i64;
        let target = usize::try_from(t)
            .ok()
            .and_then(|i| self.targets.get(i))
            .ok_or_else(|| ExecError::runtime("IndexError: list index out of range"))?;
        let u = a
            .to_vec()
            .first()
            .copied()
            .ok_or_else(|| ExecError::runtime("IndexError: list index out of range"))?
            .clamp(-2.0, 2.0);
        let next = t + 1;
        Ok(StepOutput::new(
            vec![next as f64],
            -(u - target).powi(2),
            next as usize == self.targets.len(),
        ))
    }
}

/// Looks up a shipped fixture environment by directory name.
pub fn fixture_env(name: &str) -> Option<Arc<dyn FixtureEnv>> {
    match name {
        "lineworld" => Some(Arc::new(LineWorld::default())),
        "minicliff" => Some(Arc::new(MiniCliff::default())),
        "tracking" => Some(Arc::new(Tracking::default())),
        _ => None,
    }
}

/// Ground-truth program source of a shipped fixture environment.
pub fn ground_truth_source(name: &str) -> Option<&'static str> {
    match name {
        "lineworld" => Some(LINEWORLD_SOURCE),
        "minicliff" => Some(MINICLIFF_SOURCE),
        "tracking" => Some(TRACKING_SOURCE),
        _ => None,
    }
}

/// Adapts a pure fixture to the stateful `set_state`/`step` contract.
pub struct FixtureProgram<E> {
    env: E,
    state: SpaceValue,
}

impl<E: FixtureEnv> FixtureProgram<E> {
    pub fn new(env: E) -> Self {
        let state = env.initial_state();
        Self { env, state }
    }
}

impl<E: FixtureEnv> NativeEnv for FixtureProgram<E> {
    fn set_state(&mut self, s: &SpaceValue) -> Result<(), ExecError> {
        self.state = s.clone();
        Ok(())
    }

    fn step(&mut self, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let out = self.env.transition(&self.state, a)?;
        self.state = out.s_next.clone();
        Ok(out)
    }
}

pub fn factory<E: FixtureEnv + Clone + 'static>(env: E) -> EnvFactory {
    Arc::new(move || Ok(Box::new(FixtureProgram::new(env.clone())) as Box<dyn NativeEnv>))
}

fn parse_pair(stdin: &str) -> Result<(i64, i64), ExecError> {
    let line = stdin
        .lines()
        .next()
        .ok_or_else(|| ExecError::runtime("EOFError: EOF when reading a line"))?;
    let nums: Vec<i64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| ExecError::runtime(format!("ValueError: {e}")))?;
    match nums[..] {
        [a, b] => Ok((a, b)),
        _ => Err(ExecError::runtime(format!(
            "ValueError: expected 2 values to unpack, got {}",
            nums.len()
        ))),
    }
}

fn io_program(f: fn(&str) -> Result<String, ExecError>) -> IoProgram {
    Arc::new(f)
}

/// Registry of every shipped fixture program and variant.
pub fn registry() -> ProgramRegistry {
    let mut reg = ProgramRegistry::new();
    reg.register_env(LINEWORLD_SOURCE, factory(LineWorld::default()));
    reg.register_env(LINEWORLD_NO_GOAL_SOURCE, factory(LineWorldVariant::NoGoal));
    reg.register_env(LINEWORLD_FROZEN_SOURCE, factory(LineWorldVariant::Frozen));
    reg.register_env(LINEWORLD_HALTING_SOURCE, factory(LineWorldVariant::Halting));
    reg.register_env(MINICLIFF_SOURCE, factory(MiniCliff::default()));
    reg.register_env(
        MINICLIFF_NO_CLIFF_SOURCE,
        factory(MiniCliff { no_cliff: true }),
    );
    reg.register_env(TRACKING_SOURCE, factory(Tracking::default()));
    reg.register_io(
        APPS_SUM_SOURCE,
        io_program(|s| parse_pair(s).map(|(a, b)| format!("{}\n", a + b))),
    );
    reg.register_io(
        APPS_SUM_ABS_SOURCE,
        io_program(|s| parse_pair(s).map(|(a, b)| format!("{}\n", a.abs() + b.abs()))),
    );
    reg.register_io(
        APPS_SUM_SILENT_SOURCE,
        io_program(|s| parse_pair(s).map(|_| String::new())),
    );
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(
        env: &dyn FixtureEnv,
        s: impl Into<SpaceValue>,
        a: impl Into<SpaceValue>,
    ) -> StepOutput {
        env.transition(&s.into(), &a.into()).unwrap()
    }

    #[test]
    fn lineworld_examples() {
        let lw = LineWorld::default();
        assert_eq!(step(&lw, 2, 1), StepOutput::new(3, 0.0, false));
        assert_eq!(step(&lw, 8, 1), StepOutput::new(9, 1.0, true));
        assert_eq!(step(&lw, 0, 0), StepOutput::new(0, 0.0, false));
        assert!(lw.transition(&2.into(), &5.into()).is_err());
    }

    #[test]
    fn minicliff_examples() {
        let mc = MiniCliff::default();
        assert_eq!(step(&mc, 8, 1), StepOutput::new(8, -100.0, false));
        assert_eq!(step(&mc, 7, 2), StepOutput::new(11, -1.0, true));
        assert_eq!(step(&mc, 4, 2), StepOutput::new(8, -1.0, false));
        let nc = MiniCliff { no_cliff: true };
        assert_eq!(step(&nc, 8, 1), StepOutput::new(9, -1.0, false));
    }

    #[test]
    fn tracking_rewards_squared_error() {
        let tr = Tracking::default();
        let out = step(&tr, vec![0.0], vec![0.0]);
        assert_eq!(out, StepOutput::new(vec![1.0], -0.25, false));
        let out = step(&tr, vec![9.0], vec![5.0]);
        assert_eq!(out, StepOutput::new(vec![10.0], -(2.25f64.powi(2)), true));
    }

    #[test]
    fn registry_covers_all_sources() {
        let reg = registry();
        assert_eq!(reg.len(), 10);
        assert!(reg.env(LINEWORLD_SOURCE).is_some());
        assert!(reg.io(APPS_SUM_SOURCE).is_some());
        let sum = reg.io(APPS_SUM_ABS_SOURCE).unwrap();
        assert_eq!(sum("-4 1\n").unwrap(), "5\n");
    }
}
