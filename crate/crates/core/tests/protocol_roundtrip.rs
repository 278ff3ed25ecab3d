use cwm_core::model::{SpaceValue, StepOutput};
use cwm_core::sandbox::protocol::{
    decode_request, decode_response, encode_line, parse_result, Call, IoOutput, PredictBatchResult,
    Request, Response, RunIoResult, StateAction, WireItem,
};
use cwm_core::sandbox::{ErrorClass, ExecError, PlanRollout};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        Just(0.0),
        Just(-0.5),
        any::<i32>().prop_map(f64::from)
    ]
}

fn space_value() -> impl Strategy<Value = SpaceValue> {
    prop_oneof![
        any::<i64>().prop_map(SpaceValue::Discrete),
        proptest::collection::vec(finite(), 1..6).prop_map(SpaceValue::Box),
    ]
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[ -~]{0,40}",
        "\\PC{0,20}",
        Just("line one\nline \"two\"\n\ttabbed\\".to_string()),
    ]
}

fn error() -> impl Strategy<Value = ExecError> {
    let class = prop_oneof![
        Just(ErrorClass::Syntax),
        Just(ErrorClass::Runtime),
        Just(ErrorClass::Timeout),
        Just(ErrorClass::Protocol),
        Just(ErrorClass::Resource),
    ];
    (class, text(), text()).prop_map(|(class, message, trace)| ExecError {
        class,
        message,
        trace,
    })
}

fn step() -> impl Strategy<Value = StepOutput> {
    (space_value(), finite(), any::<bool>()).prop_map(|(s, r, d)| StepOutput::new(s, r, d))
}

fn call() -> impl Strategy<Value = Call> {
    prop_oneof![
        any::<u32>().prop_map(|version| Call::Handshake { version }),
        text().prop_map(|source| Call::Load { source }),
        proptest::collection::vec((space_value(), space_value()), 0..5).prop_map(|v| {
            Call::PredictBatch {
                items: v.into_iter().map(|(s, a)| StateAction { s, a }).collect(),
            }
        }),
        (space_value(), space_value()).prop_map(|(s, a)| Call::StepFrom { s, a }),
        (
            space_value(),
            proptest::collection::vec(space_value(), 0..5)
        )
            .prop_map(|(s0, actions)| Call::RunPlan { s0, actions }),
        (
            text(),
            proptest::collection::vec(text(), 0..4),
            0.0..100.0f64
        )
            .prop_map(|(source, cases, timeout)| Call::RunIo {
                source,
                cases,
                timeout
            }),
        Just(Call::Shutdown {}),
    ]
}

fn item<T: std::fmt::Debug>(ok: impl Strategy<Value = T>) -> impl Strategy<Value = WireItem<T>> {
    prop_oneof![
        ok.prop_map(WireItem::Ok),
        error().prop_map(|error| WireItem::Err { error })
    ]
}

#[derive(Debug, Clone)]
enum Payload {
    Batch(PredictBatchResult),
    Io(RunIoResult),
    Plan(PlanRollout),
    Step(StepOutput),
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        proptest::collection::vec(item(step()), 0..5)
            .prop_map(|results| Payload::Batch(PredictBatchResult { results })),
        proptest::collection::vec(item(text().prop_map(|stdout| IoOutput { stdout })), 0..5)
            .prop_map(|outputs| Payload::Io(RunIoResult { outputs })),
        (
            proptest::collection::vec(step(), 0..5),
            proptest::option::of(error())
        )
            .prop_map(|(steps, error)| Payload::Plan(PlanRollout { steps, error })),
        step().prop_map(Payload::Step),
    ]
}

fn check<T>(value: &T, id: u64) -> Result<(), TestCaseError>
where
    T: serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug,
{
    let resp = Response::success(id, serde_json::to_value(value).unwrap());
    let line = encode_line(&resp);
    prop_assert_eq!(line.matches('\n').count(), 1);
    let back = decode_response(&line).unwrap();
    prop_assert_eq!(&back, &resp);
    let decoded: T = parse_result(back.into_result().unwrap()).unwrap();
    prop_assert_eq!(&decoded, value);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn requests_round_trip(id in any::<u64>(), call in call()) {
        let req = Request { id, call };
        let line = encode_line(&req);
        prop_assert!(line.ends_with('\n'));
        prop_assert_eq!(line.matches('\n').count(), 1);
        prop_assert_eq!(decode_request(&line).unwrap(), req);
    }

    #[test]
    fn responses_round_trip(id in any::<u64>(), payload in payload(), err in error()) {
        match payload {
            Payload::Batch(p) => check(&p, id)?,
            Payload::Io(p) => check(&p, id)?,
            Payload::Plan(p) => check(&p, id)?,
            Payload::Step(p) => check(&p, id)?,
        }
        let resp = Response::failure(id, err.clone());
        let back = decode_response(&encode_line(&resp)).unwrap();
        prop_assert_eq!(back.into_result().unwrap_err(), err);
    }
}
