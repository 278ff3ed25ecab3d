//! Execution of untrusted candidate programs.
//!
//! Programs run behind the [`Executor`] trait. [`Sandbox`] talks to an external
//! worker process over line-delimited JSON; [`NativeExecutor`] runs registered
//! in-process stand-ins and is what the test suites and `--worker native` use.

mod client;
mod native;
pub mod protocol;
pub mod stub;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{SpaceValue, StepOutput};

pub use client::{
    spawn_worker, Sandbox, SandboxError, WorkerCommand, WorkerHandle, WorkerLimits, WorkerState,
    WorkerStats,
};
pub use native::{
    normalize_source, EnvFactory, IoProgram, NativeEnv, NativeExecutor, ProgramRegistry,
};

/// Maximum number of traceback lines kept on an error.
pub const TRACE_LINES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    Syntax,
    Runtime,
    Timeout,
    Protocol,
    Resource,
    /// No code could be extracted from a completion. Never produced by a worker.
    Parse,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorClass::Syntax => "syntax",
            ErrorClass::Runtime => "runtime",
            ErrorClass::Timeout => "timeout",
            ErrorClass::Protocol => "protocol",
            ErrorClass::Resource => "resource",
            ErrorClass::Parse => "parse",
        };
        f.write_str(s)
    }
}

/// A classified failure of a candidate program or of the worker running it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{class} error: {message}")]
pub struct ExecError {
    pub class: ErrorClass,
    pub message: String,
    #[serde(default)]
    pub trace: String,
}

impl ExecError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
            trace: String::new(),
        }
    }

    /// Attaches a traceback, keeping only its last [`TRACE_LINES`] lines.
    pub fn with_trace(mut self, trace: &str) -> Self {
        self.trace = tail_lines(trace, TRACE_LINES);
        self
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Runtime, message)
    }

    pub fn timeout(limit: Duration) -> Self {
        Self::new(
            ErrorClass::Timeout,
            format!("exceeded time limit of {:.3}s", limit.as_secs_f64()),
        )
    }
}

pub(crate) fn tail_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.len().saturating_sub(n);
    lines[start..].join("\n")
}

/// Result of running an action sequence: the realized prefix and, if the
/// program failed part way, the error that stopped it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanRollout {
    pub steps: Vec<StepOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ExecError>,
}

impl PlanRollout {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.r).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 1.0;
        let mut total = 0.0;
        for s in &self.steps {
            total += g * s.r;
            g *= gamma;
        }
        total
    }
}

/// Per-item result of a prediction batch.
pub type ItemResult = Result<StepOutput, ExecError>;

/// Something that can load a candidate world model and query it.
pub trait Executor {
    /// Compiles and instantiates `source`. Replaces any previously loaded program.
    fn load_program(&mut self, source: &str) -> Result<(), ExecError>;

    /// For each `(s, a)`: `set_state(s)` then `step(a)`. Item failures stay local
    /// to the item; the outer error is reserved for failures of the whole call.
    fn predict_batch(
        &mut self,
        items: &[(SpaceValue, SpaceValue)],
    ) -> Result<Vec<ItemResult>, ExecError>;

    fn step_from(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError>;

    /// Steps sequentially from `s0`, stopping after the first terminal step.
    fn run_plan(&mut self, s0: &SpaceValue, actions: &[SpaceValue]) -> PlanRollout;

    /// Runs a stdin/stdout program once per case, each in isolation.
    fn run_io_program(
        &mut self,
        source: &str,
        cases: &[String],
        per_case_timeout: Duration,
    ) -> Result<Vec<Result<String, ExecError>>, ExecError>;
}

impl<E: Executor + ?Sized> Executor for Box<E> {
    fn load_program(&mut self, source: &str) -> Result<(), ExecError> {
        (**self).load_program(source)
    }

    fn predict_batch(
        &mut self,
        items: &[(SpaceValue, SpaceValue)],
    ) -> Result<Vec<ItemResult>, ExecError> {
        (**self).predict_batch(items)
    }

    fn step_from(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        (**self).step_from(s, a)
    }

    fn run_plan(&mut self, s0: &SpaceValue, actions: &[SpaceValue]) -> PlanRollout {
        (**self).run_plan(s0, actions)
    }

    fn run_io_program(
        &mut self,
        source: &str,
        cases: &[String],
        per_case_timeout: Duration,
    ) -> Result<Vec<Result<String, ExecError>>, ExecError> {
        (**self).run_io_program(source, cases, per_case_timeout)
    }
}
