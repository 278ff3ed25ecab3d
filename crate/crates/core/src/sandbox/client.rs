use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::protocol::{
    self, Call, HandshakeResult, IoOutput, PredictBatchResult, Request, RunIoResult, RunPlanResult,
    StartupLimits, StartupLine, StateAction, PROTOCOL_VERSION,
};
use super::{ErrorClass, ExecError, Executor, ItemResult, PlanRollout};
use crate::model::{SpaceValue, StepOutput};

/// How to launch a worker process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorkerLimits {
    pub cpu_seconds_per_call: f64,
    pub memory_cap_mb: u64,
    pub wall_timeout: Duration,
    pub kill_grace: Duration,
}

impl Default for WorkerLimits {
    fn default() -> Self {
        Self {
            cpu_seconds_per_call: 1.0,
            memory_cap_mb: 512,
            wall_timeout: Duration::from_secs(60),
            kill_grace: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerState {
    Idle,
    /// Holds the hex SHA-256 of the loaded source.
    Loaded(String),
    Dead,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorkerStats {
    pub requests_served: u64,
    pub restarts: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("failed to start worker {path}: {message}")]
    Startup { path: String, message: String },
    #[error("worker handshake failed: {0}")]
    Handshake(ExecError),
}

impl From<SandboxError> for ExecError {
    fn from(e: SandboxError) -> Self {
        match e {
            SandboxError::Startup { .. } => ExecError::new(ErrorClass::Resource, e.to_string()),
            SandboxError::Handshake(inner) => inner,
        }
    }
}

/// A live worker process. Requests are strictly sequential; once the worker
/// times out, crashes, or violates the protocol it is killed and marked dead.
pub struct WorkerHandle {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    limits: WorkerLimits,
    state: WorkerState,
    version: u32,
    stats: WorkerStats,
}

/// Launches a worker, sends it the limits line and performs the handshake.
pub fn spawn_worker(
    command: &WorkerCommand,
    limits: WorkerLimits,
) -> Result<WorkerHandle, SandboxError> {
    let path = command.program.display().to_string();
    let mut child = Command::new(&command.program)
        .args(&command.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SandboxError::Startup {
            path: path.clone(),
            message: e.to_string(),
        })?;
    let stdin = child.stdin.take().expect("stdin is piped");
    let stdout = child.stdout.take().expect("stdout is piped");

    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(stdout);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });

    let mut handle = WorkerHandle {
        child,
        stdin,
        lines: rx,
        next_id: 1,
        limits,
        state: WorkerState::Idle,
        version: 0,
        stats: WorkerStats::default(),
    };
    let startup = StartupLine {
        limits: StartupLimits {
            cpu_seconds_per_call: limits.cpu_seconds_per_call,
            memory_cap_mb: limits.memory_cap_mb,
            wall_timeout: limits.wall_timeout.as_secs_f64(),
        },
    };
    if let Err(e) = handle.write_line(&protocol::encode_line(&startup)) {
        return Err(SandboxError::Startup {
            path,
            message: e.message,
        });
    }
    let result = handle
        .request(
            Call::Handshake {
                version: PROTOCOL_VERSION,
            },
            limits.wall_timeout,
        )
        .and_then(protocol::parse_result::<HandshakeResult>)
        .map_err(SandboxError::Handshake)?;
    if result.version != PROTOCOL_VERSION {
        handle.kill();
        return Err(SandboxError::Handshake(ExecError::new(
            ErrorClass::Protocol,
            format!(
                "worker speaks protocol version {}, expected {PROTOCOL_VERSION}",
                result.version
            ),
        )));
    }
    handle.version = result.version;
    debug!("worker {} ready (pid {})", path, handle.pid());
    Ok(handle)
}

impl WorkerHandle {
    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn state(&self) -> &WorkerState {
        &self.state
    }

    pub fn stats(&self) -> WorkerStats {
        self.stats
    }

    pub fn limits(&self) -> WorkerLimits {
        self.limits
    }

    pub fn is_dead(&self) -> bool {
        self.state == WorkerState::Dead
    }

    /// Kills the process and marks the handle dead. Idempotent.
    pub fn kill(&mut self) {
        if self.state != WorkerState::Dead {
            let _ = self.child.kill();
            let _ = self.child.wait();
            self.state = WorkerState::Dead;
        }
    }

    fn write_line(&mut self, line: &str) -> Result<(), ExecError> {
        let res = self
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush());
        res.map_err(|e| {
            self.kill();
            ExecError::new(
                ErrorClass::Resource,
                format!("worker exited unexpectedly: {e}"),
            )
        })
    }

    /// Sends one request and waits up to `timeout` for its response.
    pub fn request(
        &mut self,
        call: Call,
        timeout: Duration,
    ) -> Result<serde_json::Value, ExecError> {
        if self.is_dead() {
            return Err(ExecError::new(ErrorClass::Resource, "worker is dead"));
        }
        let id = self.next_id;
        self.next_id += 1;
        let op = call.op();
        self.write_line(&protocol::encode_line(&Request { id, call }))?;

        let deadline = Instant::now() + timeout;
        let line = match self
            .lines
            .recv_timeout(deadline.saturating_duration_since(Instant::now()))
        {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                self.kill();
                return Err(ExecError::new(
                    ErrorClass::Protocol,
                    format!("unreadable worker output: {e}"),
                ));
            }
            Err(RecvTimeoutError::Timeout) => {
                warn!(
                    "worker {} exceeded {:?} on {op}; killing",
                    self.pid(),
                    timeout
                );
                self.kill();
                return Err(ExecError::timeout(timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .wait()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|e| e.to_string());
                self.state = WorkerState::Dead;
                return Err(ExecError::new(
                    ErrorClass::Resource,
                    format!("worker exited unexpectedly during {op} ({status})"),
                ));
            }
        };
        let response = match protocol::decode_response(&line) {
            Ok(r) => r,
            Err(e) => {
                self.kill();
                return Err(e);
            }
        };
        if response.id != id {
            self.kill();
            return Err(ExecError::new(
                ErrorClass::Protocol,
                format!("response id {} does not match request id {id}", response.id),
            ));
        }
        self.stats.requests_served += 1;
        response.into_result()
    }

    /// Loads a program and records its hash on success.
    pub fn load(&mut self, source: &str) -> Result<(), ExecError> {
        let timeout = self.limits.wall_timeout;
        let res = self.request(
            Call::Load {
                source: source.to_string(),
            },
            timeout,
        );
        match res {
            Ok(_) => {
                self.state = WorkerState::Loaded(hex::encode(Sha256::digest(source.as_bytes())));
                Ok(())
            }
            Err(e) => {
                if !self.is_dead() {
                    self.state = WorkerState::Idle;
                }
                Err(e)
            }
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        if self.is_dead() {
            return;
        }
        let id = self.next_id;
        let bye = protocol::encode_line(&Request {
            id,
            call: Call::Shutdown {},
        });
        if self
            .stdin
            .write_all(bye.as_bytes())
            .and_then(|_| self.stdin.flush())
            .is_ok()
        {
            let deadline = Instant::now() + self.limits.kill_grace;
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    self.state = WorkerState::Dead;
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
        }
        self.kill();
    }
}

/// An [`Executor`] backed by a worker process that is transparently replaced
/// after it dies. The failed request itself is still reported as an error.
pub struct Sandbox {
    command: WorkerCommand,
    limits: WorkerLimits,
    worker: Option<WorkerHandle>,
    program: Option<String>,
    restarts: u64,
}

impl Sandbox {
    pub fn new(command: WorkerCommand, limits: WorkerLimits) -> Self {
        Self {
            command,
            limits,
            worker: None,
            program: None,
            restarts: 0,
        }
    }

    /// Spawns the first worker eagerly so that startup errors surface early.
    pub fn start(command: WorkerCommand, limits: WorkerLimits) -> Result<Self, SandboxError> {
        let worker = spawn_worker(&command, limits)?;
        Ok(Self {
            worker: Some(worker),
            ..Self::new(command, limits)
        })
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    pub fn worker(&self) -> Option<&WorkerHandle> {
        self.worker.as_ref()
    }

    fn live_worker(&mut self) -> Result<&mut WorkerHandle, ExecError> {
        let needs_spawn = self.worker.as_ref().is_none_or(WorkerHandle::is_dead);
        if needs_spawn {
            let had_worker = self.worker.is_some();
            let mut fresh = spawn_worker(&self.command, self.limits)?;
            if had_worker {
                self.restarts += 1;
            }
            fresh.stats.restarts = self.restarts;
            if let Some(source) = &self.program {
                fresh.load(source)?;
            }
            self.worker = Some(fresh);
        }
        Ok(self.worker.as_mut().expect("worker present"))
    }

    fn call(&mut self, call: Call, timeout: Duration) -> Result<serde_json::Value, ExecError> {
        self.live_worker()?.request(call, timeout)
    }
}

impl Executor for Sandbox {
    fn load_program(&mut self, source: &str) -> Result<(), ExecError> {
        self.program = None;
        let worker = self.live_worker()?;
        worker.load(source)?;
        self.program = Some(source.to_string());
        Ok(())
    }

    fn predict_batch(
        &mut self,
        items: &[(SpaceValue, SpaceValue)],
    ) -> Result<Vec<ItemResult>, ExecError> {
        let call = Call::PredictBatch {
            items: items
                .iter()
                .map(|(s, a)| StateAction {
                    s: s.clone(),
                    a: a.clone(),
                })
                .collect(),
        };
        let timeout = self.limits.wall_timeout;
        match self
            .call(call, timeout)
            .and_then(protocol::parse_result::<PredictBatchResult>)
        {
            Ok(res) if res.results.len() == items.len() => {
                Ok(res.results.into_iter().map(Into::into).collect())
            }
            Ok(res) => Err(ExecError::new(
                ErrorClass::Protocol,
                format!(
                    "expected {} results, got {}",
                    items.len(),
                    res.results.len()
                ),
            )),
            Err(e) => Ok(items.iter().map(|_| Err(e.clone())).collect()),
        }
    }

    fn step_from(&mut self, s: &SpaceValue, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        let call = Call::StepFrom {
            s: s.clone(),
            a: a.clone(),
        };
        let timeout = self.limits.wall_timeout;
        self.call(call, timeout).and_then(protocol::parse_result)
    }

    fn run_plan(&mut self, s0: &SpaceValue, actions: &[SpaceValue]) -> PlanRollout {
        let call = Call::RunPlan {
            s0: s0.clone(),
            actions: actions.to_vec(),
        };
        let timeout = self.limits.wall_timeout;
        match self
            .call(call, timeout)
            .and_then(protocol::parse_result::<RunPlanResult>)
        {
            Ok(r) => r,
            Err(e) => PlanRollout {
                steps: Vec::new(),
                error: Some(e),
            },
        }
    }

    fn run_io_program(
        &mut self,
        source: &str,
        cases: &[String],
        per_case_timeout: Duration,
    ) -> Result<Vec<Result<String, ExecError>>, ExecError> {
        let call = Call::RunIo {
            source: source.to_string(),
            cases: cases.to_vec(),
            timeout: per_case_timeout.as_secs_f64(),
        };
        let budget = per_case_timeout * cases.len() as u32 + self.limits.kill_grace;
        let timeout = self.limits.wall_timeout.max(budget);
        match self
            .call(call, timeout)
            .and_then(protocol::parse_result::<RunIoResult>)
        {
            Ok(res) if res.outputs.len() == cases.len() => Ok(res
                .outputs
                .into_iter()
                .map(|o| Result::<IoOutput, ExecError>::from(o).map(|o| o.stdout))
                .collect()),
            Ok(res) => Err(ExecError::new(
                ErrorClass::Protocol,
                format!(
                    "expected {} outputs, got {}",
                    cases.len(),
                    res.outputs.len()
                ),
            )),
            Err(e) => Ok(cases.iter().map(|_| Err(e.clone())).collect()),
        }
    }
}
