use std::time::{Duration, Instant};

use cwm_core::fixtures::{self, LINEWORLD_SOURCE};
use cwm_core::model::{judge_output, SpaceValue, StepOutput, UnitTestCase, UnitTestResult};
use cwm_core::sandbox::stub::{
    BAD_INIT_SOURCE, CRASH_SOURCE, DIV_ZERO_SOURCE, ECHO_SOURCE, HANG_SOURCE, IO_LOOP_SOURCE,
};
use cwm_core::sandbox::{
    spawn_worker, ErrorClass, ExecError, Executor, Sandbox, SandboxError, WorkerCommand,
    WorkerLimits, WorkerState,
};
use proptest::prelude::*;

fn stub() -> WorkerCommand {
    WorkerCommand::new(env!("CARGO_BIN_EXE_cwm-stub-worker"))
}

fn limits(wall: f64) -> WorkerLimits {
    WorkerLimits {
        wall_timeout: Duration::from_secs_f64(wall),
        ..WorkerLimits::default()
    }
}

fn sandbox() -> Sandbox {
    Sandbox::start(stub(), limits(10.0)).unwrap()
}

fn d(i: i64) -> SpaceValue {
    SpaceValue::Discrete(i)
}

#[test]
fn spawn_with_default_limits_is_idle() {
    let w = spawn_worker(&stub(), WorkerLimits::default()).unwrap();
    assert_eq!(*w.state(), WorkerState::Idle);
    assert_eq!(w.version(), 1);
    assert!(w.pid() > 0);
    assert_eq!(w.limits().cpu_seconds_per_call, 1.0);
    assert_eq!(w.limits().memory_cap_mb, 512);
}

#[test]
fn bad_worker_path_names_the_path() {
    let err = spawn_worker(
        &WorkerCommand::new("/nonexistent/cwm-worker"),
        WorkerLimits::default(),
    )
    .err()
    .unwrap();
    assert!(matches!(err, SandboxError::Startup { .. }));
    assert!(err.to_string().contains("/nonexistent/cwm-worker"), "{err}");
}

#[test]
fn version_mismatch_is_a_protocol_error() {
    let cmd = stub().arg("--protocol-version").arg("2");
    match spawn_worker(&cmd, WorkerLimits::default()) {
        Err(SandboxError::Handshake(e)) => {
            assert_eq!(e.class, ErrorClass::Protocol);
            assert!(e.message.contains("version 2"), "{}", e.message);
        }
        other => panic!(
            "expected handshake failure, got {:?}",
            other.map(|w| w.pid())
        ),
    }
}

#[test]
fn load_classifies_failures() {
    let mut w = spawn_worker(&stub(), limits(10.0)).unwrap();
    w.load(LINEWORLD_SOURCE).unwrap();
    assert!(matches!(w.state(), WorkerState::Loaded(h) if h.len() == 64));

    let e = w.load("def (").unwrap_err();
    assert_eq!(e.class, ErrorClass::Syntax);
    assert!(e.message.contains("line 1"), "{}", e.message);
    assert_eq!(*w.state(), WorkerState::Idle);

    let missing = "class Environment:\n    def __init__(self):\n        pass\n\n    def step(self, action):\n        return 0, 0.0, False\n";
    let e = w.load(missing).unwrap_err();
    assert_eq!(e.class, ErrorClass::Runtime);
    assert_eq!(e.message, "missing member set_state");

    let e = w.load(BAD_INIT_SOURCE).unwrap_err();
    assert_eq!(e.class, ErrorClass::Runtime);
    assert_eq!(w.stats().requests_served, 5);
}

#[test]
fn predict_batch_isolates_item_errors() {
    let mut sb = sandbox();
    sb.load_program(LINEWORLD_SOURCE).unwrap();
    let out = sb.predict_batch(&[(d(2), d(1))]).unwrap();
    assert_eq!(out, vec![Ok(StepOutput::new(3, 0.0, false))]);

    sb.load_program(DIV_ZERO_SOURCE).unwrap();
    let out = sb
        .predict_batch(&[(d(1), d(1)), (d(5), d(1)), (d(7), d(0))])
        .unwrap();
    assert_eq!(out[0], Ok(StepOutput::new(2, 0.0, false)));
    let e = out[1].as_ref().unwrap_err();
    assert_eq!(e.class, ErrorClass::Runtime);
    assert!(e.trace.contains("ZeroDivisionError"));
    assert_eq!(out[2], Ok(StepOutput::new(6, 0.0, false)));
}

#[test]
fn thousand_item_batch_is_fast_and_ordered() {
    let mut sb = sandbox();
    sb.load_program(LINEWORLD_SOURCE).unwrap();
    let items: Vec<_> = (0..1000).map(|i| (d(i % 10), d((i / 10) % 2))).collect();
    let start = Instant::now();
    let out = sb.predict_batch(&items).unwrap();
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(out.len(), 1000);
    for ((s, a), r) in items.iter().zip(&out) {
        let pos = s.as_index().unwrap();
        let next = if a.as_index() == Some(1) {
            (pos + 1).min(9)
        } else {
            (pos - 1).max(0)
        };
        assert_eq!(r.as_ref().unwrap().s_next, d(next));
    }
}

#[test]
fn step_from_contract() {
    let mut sb = sandbox();
    sb.load_program(LINEWORLD_SOURCE).unwrap();
    assert_eq!(
        sb.step_from(&d(8), &d(1)).unwrap(),
        StepOutput::new(9, 1.0, true)
    );
    let e = sb.step_from(&d(3), &d(7)).unwrap_err();
    assert_eq!(e.class, ErrorClass::Runtime);
    let first = sb.step_from(&d(4), &d(0)).unwrap();
    assert_eq!(sb.step_from(&d(4), &d(0)).unwrap(), first);
}

#[test]
fn run_plan_contract() {
    let mut sb = sandbox();
    sb.load_program(LINEWORLD_SOURCE).unwrap();
    assert!(sb.run_plan(&d(0), &[]).steps.is_empty());

    let rights: Vec<_> = (0..10).map(|_| d(1)).collect();
    let r = sb.run_plan(&d(6), &rights);
    assert_eq!(r.steps.len(), 3);
    assert!(r.steps[2].d);
    assert!(r.error.is_none());

    let r = sb.run_plan(&d(0), &rights[..9]);
    assert_eq!(r.total_reward(), 1.0);
}

#[test]
fn run_io_contract() {
    let mut sb = sandbox();
    let out = sb
        .run_io_program(ECHO_SOURCE, &["5".into()], Duration::from_secs(1))
        .unwrap();
    assert_eq!(out, vec![Ok("5\n".to_string())]);

    let start = Instant::now();
    let out = sb
        .run_io_program(IO_LOOP_SOURCE, &["1".into()], Duration::from_millis(200))
        .unwrap();
    assert_eq!(out[0].as_ref().unwrap_err().class, ErrorClass::Timeout);
    assert!(start.elapsed() < Duration::from_secs(2));

    let out = sb
        .run_io_program(
            fixtures::APPS_SUM_SILENT_SOURCE,
            &["1 2\n".into()],
            Duration::from_secs(1),
        )
        .unwrap();
    let case = UnitTestCase {
        input: "1 2\n".into(),
        output: "3\n".into(),
    };
    let stdout = out[0].as_deref().unwrap();
    assert_eq!(stdout, "");
    assert_eq!(
        judge_output(&case, Ok(stdout)),
        UnitTestResult::WrongOutput {
            actual: String::new()
        }
    );
}

#[test]
fn crash_is_contained_and_worker_replaced() {
    let mut sb = sandbox();
    let first_pid = sb.worker().unwrap().pid();
    sb.load_program(CRASH_SOURCE).unwrap();
    let e = sb.step_from(&d(0), &d(1)).unwrap_err();
    assert_eq!(e.class, ErrorClass::Resource);
    assert!(sb.worker().unwrap().is_dead());

    sb.load_program(LINEWORLD_SOURCE).unwrap();
    assert_eq!(sb.restarts(), 1);
    assert_ne!(sb.worker().unwrap().pid(), first_pid);
    assert_eq!(sb.worker().unwrap().stats().restarts, 1);
    assert_eq!(
        sb.step_from(&d(2), &d(1)).unwrap(),
        StepOutput::new(3, 0.0, false)
    );
}

#[test]
fn hanging_step_is_killed_within_the_ceiling() {
    let wall = 1.5;
    let mut sb = Sandbox::start(stub(), limits(wall)).unwrap();
    sb.load_program(HANG_SOURCE).unwrap();
    let start = Instant::now();
    let e = sb.step_from(&d(0), &d(1)).unwrap_err();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(e.class, ErrorClass::Timeout);
    assert!(e.message.contains("1.500"), "{}", e.message);
    assert!(elapsed < wall + 1.0, "took {elapsed}s");
    assert!(sb.worker().unwrap().is_dead());

    let out = sb.predict_batch(&[(d(0), d(1)), (d(1), d(1))]).unwrap();
    assert!(out
        .iter()
        .all(|r| r.as_ref().unwrap_err().class == ErrorClass::Timeout));
}

#[test]
fn dead_worker_is_never_reused() {
    let mut w = spawn_worker(&stub(), limits(10.0)).unwrap();
    w.kill();
    let e = w.load(LINEWORLD_SOURCE).unwrap_err();
    assert_eq!(e.class, ErrorClass::Resource);
    assert_eq!(*w.state(), WorkerState::Dead);
}

/// Twelve misbehaving programs and the class each must be reported with.
#[test]
fn misbehaving_programs_are_classified() {
    let timeout_limits = limits(1.0);
    let mut sb = Sandbox::start(stub(), timeout_limits).unwrap();
    let no_step = "class Environment:\n    def __init__(self):\n        pass\n\n    def set_state(self, s):\n        pass\n";
    let no_init = "class Environment:\n    def set_state(self, s):\n        pass\n\n    def step(self, a):\n        pass\n";
    let no_set_state = "class Environment:\n    def __init__(self):\n        pass\n\n    def step(self, a):\n        pass\n";

    let load_class = |sb: &mut Sandbox, src: &str| sb.load_program(src).unwrap_err().class;
    let step_class = |sb: &mut Sandbox, src: &str, s: i64, a: i64| -> ErrorClass {
        sb.load_program(src).unwrap();
        sb.step_from(&d(s), &d(a)).unwrap_err().class
    };
    let io_class = |sb: &mut Sandbox, src: &str, input: &str| -> ErrorClass {
        let out = sb
            .run_io_program(src, &[input.to_string()], Duration::from_millis(200))
            .unwrap();
        out[0].as_ref().unwrap_err().class
    };

    let mut got: Vec<(&str, ErrorClass, ErrorClass)> = vec![
        (
            "unclosed def",
            load_class(&mut sb, "def ("),
            ErrorClass::Syntax,
        ),
        (
            "stray indent",
            load_class(&mut sb, "    x = = 1"),
            ErrorClass::Syntax,
        ),
        (
            "bad io syntax",
            io_class(&mut sb, "print(", "1"),
            ErrorClass::Syntax,
        ),
        (
            "missing step",
            load_class(&mut sb, no_step),
            ErrorClass::Runtime,
        ),
        (
            "missing init",
            load_class(&mut sb, no_init),
            ErrorClass::Runtime,
        ),
        (
            "missing set_state",
            load_class(&mut sb, no_set_state),
            ErrorClass::Runtime,
        ),
        (
            "raising init",
            load_class(&mut sb, BAD_INIT_SOURCE),
            ErrorClass::Runtime,
        ),
        (
            "divide by zero",
            step_class(&mut sb, DIV_ZERO_SOURCE, 5, 1),
            ErrorClass::Runtime,
        ),
        (
            "invalid action",
            step_class(&mut sb, LINEWORLD_SOURCE, 0, 3),
            ErrorClass::Runtime,
        ),
        (
            "bad stdin",
            io_class(&mut sb, fixtures::APPS_SUM_SOURCE, "x y"),
            ErrorClass::Runtime,
        ),
        (
            "io loop",
            io_class(&mut sb, IO_LOOP_SOURCE, "1"),
            ErrorClass::Timeout,
        ),
    ];
    got.push((
        "hanging step",
        step_class(&mut sb, HANG_SOURCE, 0, 1),
        ErrorClass::Timeout,
    ));
    assert_eq!(got.len(), 12);
    for (name, actual, expected) in got {
        assert_eq!(actual, expected, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_equals_separate_predictions(
        items in proptest::collection::vec((0i64..10, 0i64..2), 1..8)
    ) {
        let mut sb = sandbox();
        sb.load_program(LINEWORLD_SOURCE).unwrap();
        let pairs: Vec<_> = items.iter().map(|(s, a)| (d(*s), d(*a))).collect();
        let batch = sb.predict_batch(&pairs).unwrap();
        for (pair, joint) in pairs.iter().zip(&batch) {
            let single: Result<StepOutput, ExecError> = sb.predict_batch(std::slice::from_ref(pair)).unwrap().remove(0);
            prop_assert_eq!(&single, joint);
        }
    }
}
