use std::collections::HashMap;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use super::{ErrorClass, ExecError, Executor, ItemResult, PlanRollout};
use crate::model::{SpaceValue, StepOutput};

/// An in-process environment instance with the same contract as a candidate
/// program: `set_state` followed by `step`.
pub trait NativeEnv: Send {
    fn set_state(&mut self, s: &SpaceValue) -> Result<(), ExecError>;
    fn step(&mut self, a: &SpaceValue) -> Result<StepOutput, ExecError>;
}

pub type EnvFactory = Arc<dyn Fn() -> Result<Box<dyn NativeEnv>, ExecError> + Send + Sync>;
pub type IoProgram = Arc<dyn Fn(&str) -> Result<String, ExecError> + Send + Sync>;

/// Collapses formatting noise so that a program emitted by a model matches its
/// registered counterpart: trailing whitespace and surrounding blank lines go.
pub fn normalize_source(source: &str) -> String {
    let lines: Vec<&str> = source.lines().map(str::trim_end).collect();
    let start = lines
        .iter()
        .position(|l| !l.is_empty())
        .unwrap_or(lines.len());
    let end = lines
        .iter()
        .rposition(|l| !l.is_empty())
        .map_or(start, |i| i + 1);
    lines[start..end].join("\n")
}

/// Maps program sources to native implementations.
#[derive(Clone, Default)]
pub struct ProgramRegistry {
    envs: HashMap<String, EnvFactory>,
    io: HashMap<String, IoProgram>,
}

impl ProgramRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_env(&mut self, source: &str, factory: EnvFactory) {
        self.envs.insert(normalize_source(source), factory);
    }

    pub fn register_io(&mut self, source: &str, program: IoProgram) {
        self.io.insert(normalize_source(source), program);
    }

    pub fn merge(&mut self, other: ProgramRegistry) {
        self.envs.extend(other.envs);
        self.io.extend(other.io);
    }

    pub fn env(&self, source: &str) -> Option<&EnvFactory> {
        self.envs.get(&normalize_source(source))
    }

    pub fn io(&self, source: &str) -> Option<&IoProgram> {
        self.io.get(&normalize_source(source))
    }

    pub fn len(&self) -> usize {
        self.envs.len() + self.io.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Classifies a source with no registered implementation the way a worker
/// would fail on it: missing class members are runtime errors, anything else
/// counts as a compile failure.
fn classify_unknown(source: &str) -> ExecError {
    let has = |needle: &str| source.contains(needle);
    if has("class Environment") {
        for member in ["__init__", "set_state", "step"] {
            if !has(&format!("def {member}(")) {
                return ExecError::runtime(format!("missing member {member}"));
            }
        }
    }
    let line = source
        .lines()
        .position(|l| !l.trim().is_empty())
        .map_or(1, |i| i + 1);
    ExecError::new(
        ErrorClass::Syntax,
        format!("invalid syntax (line {line}): program not recognized by the native executor"),
    )
}

/// Executes registered programs in-process. Used in tests and by
/// `--worker native`; it provides no isolation.
pub struct NativeExecutor {
    registry: Arc<ProgramRegistry>,
    loaded: Option<Box<dyn NativeEnv>>,
}

impl NativeExecutor {
    pub fn new(registry: Arc<ProgramRegistry>) -> Self {
        Self {
            registry,
            loaded: None,
        }
    }

    pub fn is_loaded(&self) -> bool {
        self.loaded.is_some()
    }

    fn env(&mut self) -> Result<&mut Box<dyn NativeEnv>, ExecError> {
        self.loaded
            .as_mut()
            .ok_or_else(|| ExecError::runtime("no program loaded"))
    }
}

impl Executor for NativeExecutor {
    fn load_program(&mut self, source: &str) -> Result<(), ExecError> {
        self.loaded = None;
        let factory = self
            .registry
            .env(source)
            .cloned()
            .ok_or_else(|| classify_unknown(source))?;
        self.loaded = Some(factory()?);
        Ok(())
    }

    fn predict_batch(
        &mut self,
        items: &[(SpaceValue, SpaceValue)],
    ) -> Result<Vec<ItemResult>, ExecError> {
        let env = self.env()?;
        Ok(items
            .iter()
            .map(|(s, a)| {
                env.set_state(s)?;
                env.step(a)
            })
            .collect())
    }

    fn step_from(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let env = self.env()?;
        env.set_state(s)?;
        env.step(a)
    }

    fn run_plan(&mut self, s0: &SpaceValue, actions: &[SpaceValue]) -> PlanRollout {
        let mut out = PlanRollout::default();
        let env = match self.env() {
            Ok(env) => env,
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        };
        if actions.is_empty() {
            return out;
        }
        if let Err(e) = env.set_state(s0) {
            out.error = Some(e);
            return out;
        }
        for a in actions {
            match env.step(a) {
                Ok(step) => {
                    let done = step.d;
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

    fn run_io_program(
        &mut self,
        source: &str,
        cases: &[String],
        per_case_timeout: Duration,
    ) -> Result<Vec<Result<String, ExecError>>, ExecError> {
        let Some(program) = self.registry.io(source).cloned() else {
            let err = classify_unknown(source);
            return Ok(cases.iter().map(|_| Err(err.clone())).collect());
        };
        Ok(cases
            .iter()
            .map(|stdin| run_with_timeout(&program, stdin, per_case_timeout))
            .collect())
    }
}

// A timed-out case leaves its thread running detached; native programs are
// trusted test doubles so this only matters for deliberately hanging ones.
fn run_with_timeout(
    program: &IoProgram,
    stdin: &str,
    timeout: Duration,
) -> Result<String, ExecError> {
    let (tx, rx) = mpsc::channel();
    let program = Arc::clone(program);
    let stdin = stdin.to_string();
    thread::spawn(move || {
        let _ = tx.send(program(&stdin));
    });
    match rx.recv_timeout(timeout) {
        Ok(r) => r,
        Err(mpsc::RecvTimeoutError::Timeout) => Err(ExecError::timeout(timeout)),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(ExecError::runtime("program panicked")),
    }
}
