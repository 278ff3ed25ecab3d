//! Shared data model: environments, trajectories, programs and evaluation
//! results, plus the scalar metrics computed over them.

mod metrics;
mod space;

pub use metrics::{
    compute_accuracy, judge_output, match_transition, normalize_output, normalized_return,
    pass_at_budget, strict_accuracy, MatchFlags, MetricError,
};
pub use space::{SpaceKind, SpaceSpec, SpaceValue};

use serde::{Deserialize, Serialize};

use crate::sandbox::{ErrorClass, ExecError};

/// One `(s, a, r, s', d)` record from an offline buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: SpaceValue,
    pub a: SpaceValue,
    pub r: f64,
    pub s_next: SpaceValue,
    pub d: bool,
}

/// What a world model returns for one `step` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub s_next: SpaceValue,
    pub r: f64,
    pub d: bool,
}

impl StepOutput {
    pub fn new(s_next: impl Into<SpaceValue>, r: f64, d: bool) -> Self {
        Self {
            s_next: s_next.into(),
            r,
            d,
        }
    }
}

/// Ordered transitions. Order matters: the first mismatch is the example shown
/// to the improve prompt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub source_meta: String,
}

impl ReplayBuffer {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Self {
            transitions,
            source_meta: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// An environment to model: its description, spaces and offline data.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvTask {
    pub name: String,
    pub description: String,
    pub action_space: SpaceSpec,
    pub observation_space: SpaceSpec,
    pub buffer: ReplayBuffer,
}

impl EnvTask {
    /// Checks the description, both spaces, and every buffer row.
    pub fn validate(&self) -> Result<(), String> {
        if self.description.trim().is_empty() {
            return Err("description is empty".into());
        }
        self.action_space
            .validate()
            .map_err(|e| format!("action space: {e}"))?;
        self.observation_space
            .validate()
            .map_err(|e| format!("observation space: {e}"))?;
        for (i, t) in self.buffer.transitions.iter().enumerate() {
            check_transition(t, &self.action_space, &self.observation_space)
                .map_err(|e| format!("transition {i}: {e}"))?;
        }
        Ok(())
    }
}

/// Checks a transition against both spaces, naming the offending field.
pub fn check_transition(
    t: &Transition,
    action_space: &SpaceSpec,
    observation_space: &SpaceSpec,
) -> Result<(), String> {
    observation_space
        .coerce(&t.s)
        .map_err(|e| format!("field s: {e}"))?;
    action_space
        .coerce(&t.a)
        .map_err(|e| format!("field a: {e}"))?;
    if !t.r.is_finite() {
        return Err("field r: reward is not finite".into());
    }
    observation_space
        .coerce(&t.s_next)
        .map_err(|e| format!("field s_next: {e}"))?;
    Ok(())
}

/// A stdin/stdout test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitTestCase {
    #[serde(alias = "stdin")]
    pub input: String,
    #[serde(alias = "stdout")]
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UnitTestResult {
    Pass,
    WrongOutput { actual: String },
    Error { class: ErrorClass, message: String },
    Timeout,
}

impl UnitTestResult {
    pub fn passed(&self) -> bool {
        matches!(self, UnitTestResult::Pass)
    }
}

/// A stdin/stdout programming problem. Only the first `improve_eligible` tests
/// may be shown to the model as feedback; all of them are used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct IoProblem {
    pub id: String,
    pub statement: String,
    pub tests: Vec<UnitTestCase>,
    pub improve_eligible: usize,
}

impl IoProblem {
    /// Builds a problem with the first ceil(n/2) tests marked as feedback examples.
    pub fn new(
        id: impl Into<String>,
        statement: impl Into<String>,
        tests: Vec<UnitTestCase>,
    ) -> Self {
        let improve_eligible = tests.len().div_ceil(2);
        Self {
            id: id.into(),
            statement: statement.into(),
            tests,
            improve_eligible,
        }
    }

    pub fn improve_examples(&self) -> &[UnitTestCase] {
        &self.tests[..self.improve_eligible]
    }
}

/// Element-wise float tolerance used when comparing predictions to the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            atol: 1e-4,
            rtol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    Error { class: ErrorClass, message: String },
}

/// Comparison of one predicted transition against the buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub index: usize,
    pub status: OutcomeStatus,
    pub state_match: bool,
    pub reward_match: bool,
    pub done_match: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<StepOutput>,
}

impl PredictionOutcome {
    pub fn compared(index: usize, predicted: StepOutput, flags: MatchFlags) -> Self {
        Self {
            index,
            status: OutcomeStatus::Ok,
            state_match: flags.state,
            reward_match: flags.reward,
            done_match: flags.done,
            predicted: Some(predicted),
        }
    }

    pub fn failed(index: usize, error: &ExecError) -> Self {
        Self {
            index,
            status: OutcomeStatus::Error {
                class: error.class,
                message: error.message.clone(),
            },
            state_match: false,
            reward_match: false,
            done_match: false,
            predicted: None,
        }
    }

    pub fn is_full_match(&self) -> bool {
        self.state_match && self.reward_match && self.done_match
    }
}

/// Accuracy of one program over a buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub outcomes: Vec<PredictionOutcome>,
    pub first_mismatch: Option<usize>,
    pub wall_time: f64,
}

impl EvaluationReport {
    pub fn from_outcomes(
        outcomes: Vec<PredictionOutcome>,
        wall_time: f64,
    ) -> Result<Self, MetricError> {
        let accuracy = compute_accuracy(&outcomes)?;
        let first_mismatch = outcomes
            .iter()
            .find(|o| !o.is_full_match())
            .map(|o| o.index);
        Ok(Self {
            accuracy,
            outcomes,
            first_mismatch,
            wall_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_split_rounds_up() {
        let case = |i: usize| UnitTestCase {
            input: i.to_string(),
            output: i.to_string(),
        };
        let p = IoProblem::new("p", "s", (0..10).map(case).collect());
        assert_eq!(p.improve_examples().len(), 5);
        assert_eq!(p.improve_examples()[4].input, "4");
        let p = IoProblem::new("p", "s", vec![case(0)]);
        assert_eq!(p.improve_eligible, 1);
        let p = IoProblem::new("p", "s", (0..7).map(case).collect());
        assert_eq!(p.improve_eligible, 4);
    }

    #[test]
    fn report_first_mismatch_is_lowest_failing_index() {
        let full = MatchFlags {
            state: true,
            reward: true,
            done: true,
        };
        let partial = MatchFlags {
            reward: false,
            ..full
        };
        let out = StepOutput::new(1, 0.0, false);
        let outcomes = vec![
            PredictionOutcome::compared(0, out.clone(), full),
            PredictionOutcome::compared(1, out.clone(), partial),
            PredictionOutcome::compared(2, out, partial),
        ];
        let report = EvaluationReport::from_outcomes(outcomes, 0.0).unwrap();
        assert_eq!(report.first_mismatch, Some(1));
        assert!((report.accuracy - (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);

        let all = vec![PredictionOutcome::compared(
            0,
            StepOutput::new(1, 0.0, false),
            full,
        )];
        let report = EvaluationReport::from_outcomes(all, 0.0).unwrap();
        assert_eq!(report.first_mismatch, None);
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn error_outcomes_clear_every_flag() {
        let err = ExecError::new(ErrorClass::Runtime, "boom");
        let o = PredictionOutcome::failed(3, &err);
        assert!(!o.state_match && !o.reward_match && !o.done_match);
        assert!(o.predicted.is_none());
    }

    #[test]
    fn validate_reports_offending_field() {
        let task = EnvTask {
            name: "t".into(),
            description: "desc".into(),
            action_space: SpaceSpec::discrete(2),
            observation_space: SpaceSpec::bounded(vec![0.0], vec![1.0]),
            buffer: ReplayBuffer::new(vec![Transition {
                s: SpaceValue::Box(vec![0.5]),
                a: SpaceValue::Discrete(1),
                r: 0.0,
                s_next: SpaceValue::Box(vec![1.5]),
                d: false,
            }]),
        };
        let err = task.validate().unwrap_err();
        assert!(
            err.contains("transition 0") && err.contains("s_next"),
            "{err}"
        );
    }
}
