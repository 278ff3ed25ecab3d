//! Scoring candidate programs: accuracy on an offline buffer, or the fraction
//! of unit tests passed for stdin/stdout problems.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::llm::TaskKind;
use crate::model::{
    judge_output, match_transition, EnvTask, EvaluationReport, IoProblem, PredictionOutcome,
    SpaceValue, StepOutput, ToleranceConfig, Transition, UnitTestResult,
};
use crate::sandbox::{ErrorClass, ExecError, Executor};

/// A concrete example of wrong behaviour, rendered for the improve prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub input: String,
    pub output: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy or unit-test pass fraction.
    pub value: f64,
    /// Set when the program failed to run; such a program is buggy.
    pub error: Option<ExecError>,
    pub feedback: Option<Feedback>,
    pub report: Option<EvaluationReport>,
    pub unit_results: Vec<UnitTestResult>,
}

impl Evaluation {
    pub fn buggy(error: ExecError) -> Self {
        Self {
            value: 0.0,
            error: Some(error),
            feedback: None,
            report: None,
            unit_results: Vec::new(),
        }
    }

    pub fn is_buggy(&self) -> bool {
        self.error.is_some()
    }
}

pub trait Evaluator {
    fn kind(&self) -> TaskKind;
    fn task_id(&self) -> &str;
    /// Environment description or problem statement.
    fn description(&self) -> &str;
    fn evaluate(&mut self, program: &str) -> Evaluation;
}

impl<T: Evaluator + ?Sized> Evaluator for Box<T> {
    fn kind(&self) -> TaskKind {
        (**self).kind()
    }

    fn task_id(&self) -> &str {
        (**self).task_id()
    }

    fn description(&self) -> &str {
        (**self).description()
    }

    fn evaluate(&mut self, program: &str) -> Evaluation {
        (**self).evaluate(program)
    }
}

/// Text shown to the fix prompt for an execution failure.
pub fn format_error(e: &ExecError) -> String {
    let mut text = format!(
        "The code raised the following {} error:\n\n{}",
        e.class, e.message
    );
    if !e.trace.is_empty() {
        text.push_str("\n\nTraceback (last lines):\n");
        text.push_str(&e.trace);
    }
    text
}

fn num(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| x.to_string())
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

pub fn render_state_action(s: &SpaceValue, a: &SpaceValue) -> String {
    format!("state = {s}\naction = {a}")
}

pub fn render_step(out: &StepOutput) -> String {
    format!(
        "next state = {}\nreward = {}\ndone = {}",
        out.s_next,
        num(out.r),
        py_bool(out.d)
    )
}

fn transition_feedback(t: &Transition, outcome: &PredictionOutcome) -> Feedback {
    let truth = StepOutput {
        s_next: t.s_next.clone(),
        r: t.r,
        d: t.d,
    };
    Feedback {
        input: render_state_action(&t.s, &t.a),
        output: render_step(&truth),
        prediction: outcome
            .predicted
            .as_ref()
            .map(render_step)
            .unwrap_or_else(|| "no prediction".into()),
    }
}

/// Scores a world-model program by replaying the task's buffer through it.
pub struct BufferEvaluator<E> {
    task: EnvTask,
    executor: E,
    tolerance: ToleranceConfig,
}

impl<E: Executor> BufferEvaluator<E> {
    pub fn new(task: EnvTask, executor: E) -> Self {
        Self {
            task,
            executor,
            tolerance: ToleranceConfig::default(),
        }
    }

    pub fn with_tolerance(mut self, tolerance: ToleranceConfig) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn task(&self) -> &EnvTask {
        &self.task
    }

    pub fn executor_mut(&mut self) -> &mut E {
        &mut self.executor
    }
}

impl<E: Executor> Evaluator for BufferEvaluator<E> {
    fn kind(&self) -> TaskKind {
        TaskKind::Cwm
    }

    fn task_id(&self) -> &str {
        &self.task.name
    }

    fn description(&self) -> &str {
        &self.task.description
    }

    fn evaluate(&mut self, program: &str) -> Evaluation {
        let started = Instant::now();
        if let Err(e) = self.executor.load_program(program) {
            return Evaluation::buggy(e);
        }
        let transitions = &self.task.buffer.transitions;
        let items: Vec<(SpaceValue, SpaceValue)> = transitions
            .iter()
            .map(|t| (t.s.clone(), t.a.clone()))
            .collect();
        let results = match self.executor.predict_batch(&items) {
            Ok(r) => r,
            Err(e) => return Evaluation::buggy(e),
        };
        let mut first_error = None;
        let outcomes: Vec<PredictionOutcome> = results
            .into_iter()
            .zip(transitions)
            .enumerate()
            .map(|(i, (res, t))| match res {
                Ok(pred) => {
                    let flags = match_transition(&pred, t, &self.tolerance);
                    PredictionOutcome::compared(i, pred, flags)
                }
                Err(e) => {
                    let o = PredictionOutcome::failed(i, &e);
                    first_error.get_or_insert(e);
                    o
                }
            })
            .collect();
        let report =
            match EvaluationReport::from_outcomes(outcomes, started.elapsed().as_secs_f64()) {
                Ok(r) => r,
                Err(e) => {
                    return Evaluation::buggy(ExecError::new(ErrorClass::Runtime, e.to_string()))
                }
            };
        let feedback = report
            .first_mismatch
            .map(|i| transition_feedback(&transitions[i], &report.outcomes[i]));
        Evaluation {
            value: report.accuracy,
            error: first_error,
            feedback,
            report: Some(report),
            unit_results: Vec::new(),
        }
    }
}

/// Scores a stdin/stdout program by the fraction of unit tests it passes.
pub struct UnitTestEvaluator<E> {
    problem: IoProblem,
    executor: E,
    per_case_timeout: Duration,
}

impl<E: Executor> UnitTestEvaluator<E> {
    pub fn new(problem: IoProblem, executor: E) -> Self {
        Self {
            problem,
            executor,
            per_case_timeout: Duration::from_secs(1),
        }
    }

    pub fn with_timeout(mut self, per_case_timeout: Duration) -> Self {
        self.per_case_timeout = per_case_timeout;
        self
    }

    pub fn problem(&self) -> &IoProblem {
        &self.problem
    }

    /// Runs every test and judges each one.
    pub fn judge(&mut self, program: &str) -> Result<Vec<UnitTestResult>, ExecError> {
        let inputs: Vec<String> = self.problem.tests.iter().map(|c| c.input.clone()).collect();
        let outputs = self
            .executor
            .run_io_program(program, &inputs, self.per_case_timeout)?;
        Ok(self
            .problem
            .tests
            .iter()
            .zip(&outputs)
            .map(|(case, out)| judge_output(case, out.as_deref()))
            .collect())
    }
}

impl<E: Executor> Evaluator for UnitTestEvaluator<E> {
    fn kind(&self) -> TaskKind {
        TaskKind::IoProblem
    }

    fn task_id(&self) -> &str {
        &self.problem.id
    }

    fn description(&self) -> &str {
        &self.problem.statement
    }

    fn evaluate(&mut self, program: &str) -> Evaluation {
        let inputs: Vec<String> = self.problem.tests.iter().map(|c| c.input.clone()).collect();
        let outputs = match self
            .executor
            .run_io_program(program, &inputs, self.per_case_timeout)
        {
            Ok(o) => o,
            Err(e) => return Evaluation::buggy(e),
        };
        let results: Vec<UnitTestResult> = self
            .problem
            .tests
            .iter()
            .zip(&outputs)
            .map(|(case, out)| judge_output(case, out.as_deref()))
            .collect();
        let first_error = outputs.iter().find_map(|o| o.as_ref().err().cloned());
        let passed = results.iter().filter(|r| r.passed()).count();
        let value = if results.is_empty() {
            0.0
        } else {
            passed as f64 / results.len() as f64
        };

        let eligible = self.problem.improve_eligible.min(results.len());
        let pick = (0..eligible)
            .find(|&i| !results[i].passed())
            .or(if eligible > 0 { Some(0) } else { None });
        let feedback = pick.map(|i| Feedback {
            input: self.problem.tests[i].input.clone(),
            output: self.problem.tests[i].output.clone(),
            prediction: match &outputs[i] {
                Ok(stdout) => stdout.clone(),
                Err(e) => e.to_string(),
            },
        });
        Evaluation {
            value,
            error: first_error,
            feedback,
            report: None,
            unit_results: results,
        }
    }
}
