//! A protocol-conformant worker backed by [`NativeExecutor`].
//!
//! It serves the shipped fixture programs plus a handful of deliberately
//! misbehaving ones, which lets the client side be tested end to end without
//! a Python runtime. The `cwm-stub-worker` binary wraps [`serve`].

use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use super::protocol::{
    self, Call, IoOutput, PredictBatchResult, Response, RunIoResult, StartupLine, WireItem,
};
use super::{ErrorClass, ExecError, Executor, NativeEnv, NativeExecutor, ProgramRegistry};
use crate::fixtures::{self, FixtureEnv, LineWorld};
use crate::model::{SpaceValue, StepOutput};

/// `step` never returns.
pub const HANG_SOURCE: &str = "class Environment:
    def __init__(self):
        self.position = 0

    def set_state(self, state):
        self.position = int(state)

    def step(self, action):
        while True:
            pass
";

/// `step` takes the whole worker process down.
pub const CRASH_SOURCE: &str = "import os


class Environment:
    def __init__(self):
        self.position = 0

    def set_state(self, state):
        self.position = int(state)

    def step(self, action):
        os._exit(70)
";

/// LineWorld dynamics, except that stepping from cell 5 divides by zero.
pub const DIV_ZERO_SOURCE: &str = "class Environment:
    def __init__(self):
        self.position = 0

    def set_state(self, state):
        self.position = int(state)

    def step(self, action):
        if self.position == 5:
            return 1 / 0
        self.position = min(self.position + 1, 9) if action == 1 else max(self.position - 1, 0)
        done = self.position == 9
        return self.position, 1.0 if done else 0.0, done
";

/// The constructor raises.
pub const BAD_INIT_SOURCE: &str = "class Environment:
    def __init__(self):
        raise RuntimeError('cannot initialise')

    def set_state(self, state):
        pass

    def step(self, action):
        pass
";

/// Echoes stdin to stdout.
pub const ECHO_SOURCE: &str = "import sys
sys.stdout.write(sys.stdin.read().rstrip('\\n') + '\\n')
";

/// Stdin program that never terminates.
pub const IO_LOOP_SOURCE: &str = "while True:
    pass
";

struct Hang;

impl NativeEnv for Hang {
    fn set_state(&mut self, _: &SpaceValue) -> Result<(), ExecError> {
        Ok(())
    }

    fn step(&mut self, _: &SpaceValue) -> Result<StepOutput, ExecError> {
        loop {
            thread::sleep(Duration::from_secs(3600));
        }
    }
}

struct Crash;

impl NativeEnv for Crash {
    fn set_state(&mut self, _: &SpaceValue) -> Result<(), ExecError> {
        Ok(())
    }

    fn step(&mut self, _: &SpaceValue) -> Result<StepOutput, ExecError> {
        std::process::exit(70)
    }
}

struct DivZero(i64);

impl NativeEnv for DivZero {
    fn set_state(&mut self, s: &SpaceValue) -> Result<(), ExecError> {
        self.0 = s
            .as_index()
            .ok_or_else(|| ExecError::runtime("TypeError: state must be an integer"))?;
        Ok(())
    }

    fn step(&mut self, a: &SpaceValue) -> Result<StepOutput, ExecError> {
        if self.0 == 5 {
            return Err(ExecError::runtime("ZeroDivisionError: division by zero")
                .with_trace("Traceback (most recent call last):\n  File \"<program>\", line 10, in step\nZeroDivisionError: division by zero"));
        }
        let out = LineWorld::default().transition(&SpaceValue::Discrete(self.0), a)?;
        self.0 = out.s_next.as_index().unwrap_or(self.0);
        Ok(out)
    }
}

/// Programs that misbehave on purpose. `CRASH_SOURCE` exits the current
/// process, so this registry must only be served from a separate worker.
pub fn diagnostic_registry() -> ProgramRegistry {
    let mut reg = ProgramRegistry::new();
    reg.register_env(
        HANG_SOURCE,
        Arc::new(|| Ok(Box::new(Hang) as Box<dyn NativeEnv>)),
    );
    reg.register_env(
        CRASH_SOURCE,
        Arc::new(|| Ok(Box::new(Crash) as Box<dyn NativeEnv>)),
    );
    reg.register_env(
        DIV_ZERO_SOURCE,
        Arc::new(|| Ok(Box::new(DivZero(0)) as Box<dyn NativeEnv>)),
    );
    reg.register_env(
        BAD_INIT_SOURCE,
        Arc::new(|| Err(ExecError::runtime("RuntimeError: cannot initialise"))),
    );
    reg.register_io(
        ECHO_SOURCE,
        Arc::new(|s: &str| Ok(format!("{}\n", s.trim_end_matches('\n')))),
    );
    reg.register_io(
        IO_LOOP_SOURCE,
        Arc::new(|_: &str| loop {
            thread::sleep(Duration::from_secs(3600));
        }),
    );
    reg
}

/// Fixture programs plus the diagnostic ones.
pub fn stub_registry() -> ProgramRegistry {
    let mut reg = fixtures::registry();
    reg.merge(diagnostic_registry());
    reg
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("results always serialize")
}

fn dispatch(exec: &mut NativeExecutor, call: Call, version: u32) -> Result<Value, ExecError> {
    match call {
        Call::Handshake { .. } => Ok(json!({ "version": version })),
        Call::Load { source } => exec.load_program(&source).map(|_| json!({})),
        Call::PredictBatch { items } => {
            let pairs: Vec<(SpaceValue, SpaceValue)> =
                items.into_iter().map(|i| (i.s, i.a)).collect();
            let results = exec.predict_batch(&pairs)?;
            Ok(to_value(PredictBatchResult {
                results: results.into_iter().map(WireItem::from).collect(),
            }))
        }
        Call::StepFrom { s, a } => exec.step_from(&s, &a).map(to_value),
        Call::RunPlan { s0, actions } => Ok(to_value(exec.run_plan(&s0, &actions))),
        Call::RunIo {
            source,
            cases,
            timeout,
        } => {
            let limit = Duration::from_secs_f64(timeout.max(0.0));
            let outputs = exec.run_io_program(&source, &cases, limit)?;
            Ok(to_value(RunIoResult {
                outputs: outputs
                    .into_iter()
                    .map(|o| WireItem::from(o.map(|stdout| IoOutput { stdout })))
                    .collect(),
            }))
        }
        Call::Shutdown {} => Ok(json!({})),
    }
}

/// Runs the worker loop until shutdown or end of input. The first input line
/// must be the startup limits. `version` is what the handshake reports.
pub fn serve<R: BufRead, W: Write>(
    mut input: R,
    mut output: W,
    registry: Arc<ProgramRegistry>,
    version: u32,
) -> io::Result<()> {
    let mut exec = NativeExecutor::new(registry);
    let mut first = String::new();
    if input.read_line(&mut first)? == 0 {
        return Ok(());
    }
    if let Err(e) = serde_json::from_str::<StartupLine>(first.trim_end()) {
        let err = ExecError::new(ErrorClass::Protocol, format!("malformed startup line: {e}"));
        output.write_all(protocol::encode_line(&Response::failure(0, err)).as_bytes())?;
        output.flush()?;
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "malformed startup line",
        ));
    }

    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let (response, stop) = match protocol::decode_request(&line) {
            Ok(req) => {
                let stop = matches!(req.call, Call::Shutdown {});
                let resp = match dispatch(&mut exec, req.call, version) {
                    Ok(v) => Response::success(req.id, v),
                    Err(e) => Response::failure(req.id, e),
                };
                (resp, stop)
            }
            Err(e) => (Response::failure(protocol::salvage_id(&line), e), false),
        };
        output.write_all(protocol::encode_line(&response).as_bytes())?;
        output.flush()?;
        if stop {
            return Ok(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::protocol::{decode_response, Request, StartupLimits};
    use std::io::Cursor;

    fn run(requests: &[String]) -> Vec<Response> {
        let startup = protocol::encode_line(&StartupLine {
            limits: StartupLimits {
                cpu_seconds_per_call: 1.0,
                memory_cap_mb: 512,
                wall_timeout: 60.0,
            },
        });
        let input = std::iter::once(startup)
            .chain(requests.iter().cloned())
            .collect::<String>();
        let mut out = Vec::new();
        let reg = Arc::new(fixtures::registry());
        serve(
            Cursor::new(input),
            &mut out,
            reg,
            protocol::PROTOCOL_VERSION,
        )
        .unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| decode_response(l).unwrap())
            .collect()
    }

    fn req(id: u64, call: Call) -> String {
        protocol::encode_line(&Request { id, call })
    }

    #[test]
    fn serves_fixture_requests() {
        let out = run(&[
            req(1, Call::Handshake { version: 1 }),
            req(
                2,
                Call::Load {
                    source: fixtures::LINEWORLD_SOURCE.into(),
                },
            ),
            req(
                3,
                Call::StepFrom {
                    s: SpaceValue::Discrete(8),
                    a: SpaceValue::Discrete(1),
                },
            ),
            "this is not json\n".to_string(),
            req(5, Call::Shutdown {}),
            req(6, Call::Handshake { version: 1 }),
        ]);
        assert_eq!(out.len(), 5, "nothing is served after shutdown");
        assert_eq!(out[0].result, Some(json!({"version": 1})));
        assert!(out[1].ok);
        assert_eq!(
            out[2].result,
            Some(json!({"s_next": 9, "r": 1.0, "d": true}))
        );
        assert!(!out[3].ok);
        assert_eq!(out[3].error.as_ref().unwrap().class, ErrorClass::Protocol);
        assert_eq!(out[4].id, 5);
    }
}
