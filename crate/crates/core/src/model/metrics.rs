use thiserror::Error;

use super::{
    PredictionOutcome, SpaceValue, StepOutput, ToleranceConfig, Transition, UnitTestCase,
    UnitTestResult,
};
use crate::sandbox::{ErrorClass, ExecError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("empty evaluation")]
    EmptyEvaluation,
    #[error("degenerate normalization: oracle and random returns are equal")]
    DegenerateNormalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchFlags {
    pub state: bool,
    pub reward: bool,
    pub done: bool,
}

/// Mean over transitions of the equally weighted state/reward/done match flags.
pub fn compute_accuracy(outcomes: &[PredictionOutcome]) -> Result<f64, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyEvaluation);
    }
    let per_item = |o: &PredictionOutcome| {
        (f64::from(u8::from(o.state_match))
            + f64::from(u8::from(o.reward_match))
            + f64::from(u8::from(o.done_match)))
            / 3.0
    };
    let total: f64 = outcomes.iter().map(per_item).sum();
    Ok(total / outcomes.len() as f64)
}

fn close(x: f64, truth: f64, tol: &ToleranceConfig) -> bool {
    (x - truth).abs() <= tol.atol + tol.rtol * truth.abs()
}

fn state_matches(predicted: &SpaceValue, truth: &SpaceValue, tol: &ToleranceConfig) -> bool {
    match truth {
        SpaceValue::Discrete(t) => match predicted {
            SpaceValue::Discrete(p) => p == t,
            SpaceValue::Box(v) => v.len() == 1 && v[0] == *t as f64,
        },
        SpaceValue::Box(t) => {
            let p = predicted.to_vec();
            p.len() == t.len() && p.iter().zip(t).all(|(x, y)| close(*x, *y, tol))
        }
    }
}

/// Compares one prediction against the recorded transition.
///
/// Real components match within `atol + rtol * |truth|`; discrete states and the
/// done flag must be equal. A shape mismatch is a state mismatch, not an error.
pub fn match_transition(
    predicted: &StepOutput,
    truth: &Transition,
    tol: &ToleranceConfig,
) -> MatchFlags {
    MatchFlags {
        state: state_matches(&predicted.s_next, &truth.s_next, tol),
        reward: close(predicted.r, truth.r, tol),
        done: predicted.d == truth.d,
    }
}

/// Rescales a planner return so that a random policy scores 0 and the oracle
/// planner scores 1.
pub fn normalized_return(r_cwm: f64, r_true: f64, r_rand: f64) -> Result<f64, MetricError> {
    let span = r_true - r_rand;
    if span == 0.0 {
        return Err(MetricError::DegenerateNormalization);
    }
    Ok((r_cwm - r_rand) / span)
}

/// True when every test case passed.
pub fn strict_accuracy(results: &[UnitTestResult]) -> bool {
    results.iter().all(UnitTestResult::passed)
}

/// True when any attempt within the budget solved the problem.
pub fn pass_at_budget(per_attempt_solved: &[bool]) -> bool {
    per_attempt_solved.iter().any(|s| *s)
}

/// Strips trailing whitespace on each line and trailing blank lines.
pub fn normalize_output(text: &str) -> String {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

pub fn judge_output(case: &UnitTestCase, actual: Result<&str, &ExecError>) -> UnitTestResult {
    match actual {
        Ok(stdout) if normalize_output(stdout) == normalize_output(&case.output) => {
            UnitTestResult::Pass
        }
        Ok(stdout) => UnitTestResult::WrongOutput {
            actual: stdout.to_string(),
        },
        Err(e) if e.class == ErrorClass::Timeout => UnitTestResult::Timeout,
        Err(e) => UnitTestResult::Error {
            class: e.class,
            message: e.message.clone(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutcomeStatus;

    fn outcome(s: bool, r: bool, d: bool) -> PredictionOutcome {
        PredictionOutcome {
            index: 0,
            status: OutcomeStatus::Ok,
            state_match: s,
            reward_match: r,
            done_match: d,
            predicted: None,
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(compute_accuracy(&[outcome(true, true, true)]).unwrap(), 1.0);
        let two = [outcome(true, true, true), outcome(false, false, true)];
        assert!((compute_accuracy(&two).unwrap() - 0.6667).abs() < 1e-4);
        let err = ExecError::new(ErrorClass::Runtime, "x");
        let errs: Vec<_> = (0..3).map(|i| PredictionOutcome::failed(i, &err)).collect();
        assert_eq!(compute_accuracy(&errs).unwrap(), 0.0);
        assert_eq!(compute_accuracy(&[]), Err(MetricError::EmptyEvaluation));
    }

    fn truth() -> Transition {
        Transition {
            s: SpaceValue::Box(vec![0.0, 0.0]),
            a: SpaceValue::Discrete(0),
            r: 1.0,
            s_next: SpaceValue::Box(vec![0.5, -2.0]),
            d: false,
        }
    }

    #[test]
    fn match_examples() {
        let tol = ToleranceConfig::default();
        let t = truth();
        let exact = StepOutput::new(vec![0.5, -2.0], 1.0, false);
        assert_eq!(
            match_transition(&exact, &t, &tol),
            MatchFlags {
                state: true,
                reward: true,
                done: true
            }
        );
        let near = StepOutput::new(vec![0.5, -2.0], 1.00005, false);
        assert!(match_transition(&near, &t, &tol).reward);
        let done = StepOutput::new(vec![0.5, -2.0], 1.0, true);
        assert!(!match_transition(&done, &t, &tol).done);
        let short = StepOutput::new(vec![0.5], 1.0, false);
        assert!(!match_transition(&short, &t, &tol).state);
        let nan = StepOutput::new(vec![f64::NAN, -2.0], 1.0, false);
        assert!(!match_transition(&nan, &t, &tol).state);
    }

    #[test]
    fn discrete_states_compare_exactly() {
        let tol = ToleranceConfig::default();
        let t = Transition {
            s: SpaceValue::Discrete(2),
            a: SpaceValue::Discrete(1),
            r: 0.0,
            s_next: SpaceValue::Discrete(3),
            d: false,
        };
        assert!(match_transition(&StepOutput::new(3, 0.0, false), &t, &tol).state);
        assert!(match_transition(&StepOutput::new(vec![3.0], 0.0, false), &t, &tol).state);
        assert!(!match_transition(&StepOutput::new(vec![3.00001], 0.0, false), &t, &tol).state);
        assert!(!match_transition(&StepOutput::new(4, 0.0, false), &t, &tol).state);
    }

    #[test]
    fn normalized_return_examples() {
        assert_eq!(normalized_return(5.0, 5.0, 1.0).unwrap(), 1.0);
        assert_eq!(normalized_return(1.0, 5.0, 1.0).unwrap(), 0.0);
        let cliff = normalized_return(-90.2, -100.0, -1169.2).unwrap();
        assert!((cliff - 1.0092).abs() < 5e-4, "{cliff}");
        assert_eq!(
            normalized_return(1.0, 2.0, 2.0),
            Err(MetricError::DegenerateNormalization)
        );
    }

    #[test]
    fn strict_and_pass_at_budget() {
        let wrong = UnitTestResult::WrongOutput { actual: "x".into() };
        assert!(strict_accuracy(&[
            UnitTestResult::Pass,
            UnitTestResult::Pass
        ]));
        assert!(!strict_accuracy(&[UnitTestResult::Pass, wrong]));
        assert!(!strict_accuracy(&[UnitTestResult::Timeout]));

        let mut attempts = vec![false; 19];
        attempts.push(true);
        assert!(pass_at_budget(&attempts));
        assert!(!pass_at_budget(&[false; 20]));
        assert!(pass_at_budget(&[true]));
    }

    #[test]
    fn output_normalization() {
        assert_eq!(normalize_output("5  \n\n\n"), "5");
        assert_eq!(normalize_output("a \nb\t\n"), "a\nb");
        let case = UnitTestCase {
            input: "5".into(),
            output: "5\n".into(),
        };
        assert!(judge_output(&case, Ok("5")).passed());
        assert_eq!(
            judge_output(&case, Ok("")),
            UnitTestResult::WrongOutput {
                actual: String::new()
            }
        );
        let t = ExecError::new(ErrorClass::Timeout, "slow");
        assert_eq!(judge_output(&case, Err(&t)), UnitTestResult::Timeout);
    }
}
