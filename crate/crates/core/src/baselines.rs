//! Comparison methods: a Thompson-sampling refinement loop over a growing
//! pool of programs, and independent zero-shot attempts.

use log::debug;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::eval::{format_error, Evaluation, Evaluator, Feedback};
use crate::llm::{
    parse_code, render_prompt, zero_shot_prompt, Action, CompletionRequest, LanguageModel,
    PromptContext,
};
use crate::model::{pass_at_budget, UnitTestResult};
use crate::sandbox::{ErrorClass, ExecError};
use crate::search::{ConfigError, ExpansionRecord, SearchTrace};

pub const WORLDCODER: &str = "worldcoder";
pub const ZERO_SHOT: &str = "zero-shot-cot";

pub fn beta_init(r: f64, c: f64) -> (f64, f64) {
    (1.0 + c * r, 1.0 + c * (1.0 - r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditArm {
    pub program: String,
    pub alpha: f64,
    pub beta: f64,
    /// Evaluation score; zero for buggy programs.
    pub score: f64,
    pub is_buggy: bool,
    pub error: Option<ExecError>,
    pub feedback: Option<Feedback>,
}

impl BanditArm {
    pub fn new(program: String, evaluation: Evaluation, c: f64) -> Self {
        let score = if evaluation.is_buggy() {
            0.0
        } else {
            evaluation.value
        };
        let (alpha, beta) = beta_init(score, c);
        Self {
            program,
            alpha,
            beta,
            score,
            is_buggy: evaluation.is_buggy(),
            error: evaluation.error,
            feedback: evaluation.feedback,
        }
    }
}

/// Draws once from each arm's Beta and returns the index of the largest draw.
pub fn thompson_select<R: Rng + ?Sized>(arms: &[(f64, f64)], rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_draw = f64::NEG_INFINITY;
    for (i, &(a, b)) in arms.iter().enumerate() {
        let draw = Beta::new(a, b)
            .expect("beta parameters are at least 1")
            .sample(rng);
        if draw > best_draw {
            best = i;
            best_draw = draw;
        }
    }
    best
}

/// Success when the child strictly beats the parent it was refined from.
pub fn beta_update(arm: &mut BanditArm, child_score: f64, parent_score: f64) {
    if child_score > parent_score {
        arm.alpha += 1.0;
    } else {
        arm.beta += 1.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCoderConfig {
    pub budget: usize,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for WorldCoderConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            concentration: 5.0,
            seed: 0,
        }
    }
}

impl WorldCoderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError("budget must be at least 1".into()));
        }
        if !(self.concentration > 0.0) {
            return Err(ConfigError("concentration must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WorldCoderOutcome {
    pub program: String,
    pub trace: SearchTrace,
    pub arms: Vec<BanditArm>,
}

fn evaluate_completion<E: Evaluator + ?Sized>(
    evaluator: &mut E,
    completion: &str,
    prefix: &str,
) -> (String, Evaluation) {
    match parse_code(completion, prefix) {
        Ok(p) => {
            let e = evaluator.evaluate(&p);
            (p, e)
        }
        Err(e) => (
            completion.trim().to_string(),
            Evaluation::buggy(ExecError::new(ErrorClass::Parse, e.to_string())),
        ),
    }
}

pub fn worldcoder_search<M, E>(
    config: &WorldCoderConfig,
    gateway: &M,
    evaluator: &mut E,
) -> Result<WorldCoderOutcome, ConfigError>
where
    M: LanguageModel + ?Sized,
    E: Evaluator + ?Sized,
{
    config.validate()?;
    let kind = evaluator.kind();
    let description = evaluator.description().to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = SearchTrace::new(
        WORLDCODER,
        evaluator.task_id(),
        config.seed,
        serde_json::to_value(config).expect("config serializes"),
    );
    let mut arms: Vec<BanditArm> = Vec::new();

    while trace.llm_calls_used < config.budget {
        let sampled = if arms.is_empty() {
            None
        } else {
            let params: Vec<(f64, f64)> = arms.iter().map(|a| (a.alpha, a.beta)).collect();
            Some(thompson_select(&params, &mut rng))
        };
        let mut ctx = PromptContext {
            description: Some(description.clone()),
            ..PromptContext::default()
        };
        let action = match sampled {
            None => {
                ctx.code_so_far = Some(String::new());
                Action::Generate
            }
            Some(i) if arms[i].is_buggy => {
                ctx.code = Some(arms[i].program.clone());
                ctx.error = Some(arms[i].error.as_ref().map(format_error).unwrap_or_default());
                Action::Fix
            }
            Some(i) => {
                let fb = arms[i].feedback.clone().unwrap_or(Feedback {
                    input: String::new(),
                    output: String::new(),
                    prediction: String::new(),
                });
                ctx.code = Some(arms[i].program.clone());
                ctx.input = Some(fb.input);
                ctx.output = Some(fb.output);
                ctx.prediction = Some(fb.prediction);
                Action::Improve
            }
        };
        let prompt = match render_prompt(action, kind, &ctx) {
            Ok(p) => p,
            Err(e) => {
                trace.aborted = Some(format!("prompt rendering failed: {e}"));
                break;
            }
        };
        let prefix = prompt.assistant_prefix.clone();
        let response = match gateway.complete(&CompletionRequest::new(action, prompt)) {
            Ok(r) => r,
            Err(e) => {
                trace.aborted = Some(e.to_string());
                break;
            }
        };
        trace.llm_calls_used += 1;
        let (program, evaluation) = evaluate_completion(evaluator, &response.text, &prefix);
        let arm = BanditArm::new(program, evaluation, config.concentration);
        if let Some(i) = sampled {
            let parent_score = arms[i].score;
            beta_update(&mut arms[i], arm.score, parent_score);
        }
        debug!(
            "call {}: {} from arm {:?} scored {:.4}{}",
            trace.llm_calls_used,
            action,
            sampled,
            arm.score,
            if arm.is_buggy { " (buggy)" } else { "" }
        );
        trace.expansions.push(ExpansionRecord {
            call: trace.llm_calls_used,
            node: arms.len() + 1,
            parent: sampled.map_or(0, |i| i + 1),
            action,
            value: arm.score,
            temporary: false,
            is_buggy: arm.is_buggy,
            error_class: arm.error.as_ref().map(|e| e.class),
        });
        let perfect = !arm.is_buggy && arm.score >= 1.0;
        arms.push(arm);
        if perfect {
            break;
        }
    }

    let mut best: Option<usize> = None;
    for (i, a) in arms.iter().enumerate() {
        if !a.is_buggy && best.is_none_or(|b| a.score > arms[b].score) {
            best = Some(i);
        }
    }
    trace.best_node = best.map(|b| b + 1);
    trace.best_value = best.map(|b| arms[b].score);
    trace.program_valid = best.is_some();
    trace.best_program = best.map(|b| arms[b].program.clone()).unwrap_or_default();
    Ok(WorldCoderOutcome {
        program: trace.best_program.clone(),
        trace,
        arms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub index: usize,
    pub program: Option<String>,
    pub value: f64,
    pub solved: bool,
    pub error: Option<ExecError>,
    pub unit_results: Vec<UnitTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub attempts: Vec<Attempt>,
    pub solved: bool,
    pub trace: SearchTrace,
}

/// k independent zero-shot completions, each judged on every test.
pub fn zero_shot_pass_at_k<M, E>(
    k: usize,
    gateway: &M,
    evaluator: &mut E,
) -> Result<PassAtK, ConfigError>
where
    M: LanguageModel + ?Sized,
    E: Evaluator + ?Sized,
{
    if k == 0 {
        return Err(ConfigError("k must be at least 1".into()));
    }
    let prompt = zero_shot_prompt(evaluator.description());
    let mut trace = SearchTrace::new(
        ZERO_SHOT,
        evaluator.task_id(),
        0,
        serde_json::json!({ "k": k }),
    );
    let mut attempts = Vec::with_capacity(k);
    for index in 0..k {
        let response =
            match gateway.complete(&CompletionRequest::new(Action::Generate, prompt.clone())) {
                Ok(r) => r,
                Err(e) => {
                    trace.aborted = Some(e.to_string());
                    break;
                }
            };
        trace.llm_calls_used += 1;
        let attempt = match parse_code(&response.text, &prompt.assistant_prefix) {
            Ok(program) => {
                let e = evaluator.evaluate(&program);
                Attempt {
                    index,
                    solved: !e.is_buggy() && e.value >= 1.0,
                    value: if e.is_buggy() { 0.0 } else { e.value },
                    program: Some(program),
                    error: e.error,
                    unit_results: e.unit_results,
                }
            }
            Err(e) => Attempt {
                index,
                program: None,
                value: 0.0,
                solved: false,
                error: Some(ExecError::new(ErrorClass::Parse, e.to_string())),
                unit_results: Vec::new(),
            },
        };
        trace.expansions.push(ExpansionRecord {
            call: index + 1,
            node: index + 1,
            parent: 0,
            action: Action::Generate,
            value: attempt.value,
            temporary: false,
            is_buggy: attempt.error.is_some(),
            error_class: attempt.error.as_ref().map(|e| e.class),
        });
        attempts.push(attempt);
    }
    let solved_flags: Vec<bool> = attempts.iter().map(|a| a.solved).collect();
    let solved = pass_at_budget(&solved_flags);
    let mut best: Option<usize> = None;
    for (i, a) in attempts.iter().enumerate() {
        if a.program.is_some()
            && a.error.is_none()
            && best.is_none_or(|b| a.value > attempts[b].value)
        {
            best = Some(i);
        }
    }
    trace.best_node = best.map(|b| b + 1);
    trace.best_value = best.map(|b| attempts[b].value);
    trace.program_valid = best.is_some();
    trace.best_program = best
        .and_then(|b| attempts[b].program.clone())
        .unwrap_or_default();
    Ok(PassAtK {
        attempts,
        solved,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockRecord, TaskKind};

    struct Marker;

    impl Evaluator for Marker {
        fn kind(&self) -> TaskKind {
            TaskKind::IoProblem
        }
        fn task_id(&self) -> &str {
            "marker"
        }
        fn description(&self) -> &str {
            "Add two numbers."
        }
        fn evaluate(&mut self, program: &str) -> Evaluation {
            if program.contains("BUG") {
                return Evaluation::buggy(ExecError::runtime("NameError: name 'x' is not defined"));
            }
            Evaluation {
                value: program.trim_start_matches("v=").parse().unwrap_or(0.0),
                error: None,
                feedback: Some(Feedback {
                    input: "1 2".into(),
                    output: "3".into(),
                    prediction: "4".into(),
                }),
                report: None,
                unit_results: Vec::new(),
            }
        }
    }

    #[test]
    fn beta_init_examples() {
        assert_eq!(beta_init(1.0, 5.0), (6.0, 1.0));
        assert_eq!(beta_init(0.0, 5.0), (1.0, 6.0));
        assert_eq!(beta_init(0.5, 5.0), (3.5, 3.5));
    }

    #[test]
    fn update_rule() {
        let mut arm = BanditArm::new("p".into(), Marker.evaluate("v=0.5"), 5.0);
        beta_update(&mut arm, 0.8, 0.5);
        assert_eq!((arm.alpha, arm.beta), (4.5, 3.5));
        beta_update(&mut arm, 0.2, 0.5);
        beta_update(&mut arm, 0.5, 0.5);
        assert_eq!((arm.alpha, arm.beta), (4.5, 5.5));
    }

    #[test]
    fn single_arm_is_always_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(thompson_select(&[(1.0, 6.0)], &mut rng), 0);
    }

    #[test]
    fn budget_one_is_single_generate() {
        let m = MockBackend::sequence(["v=0.4"]);
        let cfg = WorldCoderConfig {
            budget: 1,
            ..WorldCoderConfig::default()
        };
        let out = worldcoder_search(&cfg, &m, &mut Marker).unwrap();
        assert_eq!(out.program, "v=0.4");
        assert_eq!(out.trace.method, WORLDCODER);
        assert_eq!(out.trace.llm_calls_used, 1);
    }

    #[test]
    fn perfect_improve_ends_at_call_two() {
        let m = MockBackend::new(vec![
            MockRecord::default_for(Action::Generate, "v=0.3"),
            MockRecord::default_for(Action::Improve, "```python\nv=1.0\n```"),
        ]);
        let out = worldcoder_search(&WorldCoderConfig::default(), &m, &mut Marker).unwrap();
        assert_eq!(out.trace.llm_calls_used, 2);
        assert_eq!(out.trace.best_value, Some(1.0));
        assert_eq!(out.arms.len(), 2);
        assert_eq!(out.arms[0].alpha, 1.0 + 5.0 * 0.3 + 1.0);
    }

    #[test]
    fn buggy_arm_gets_fix_prompt() {
        let m = MockBackend::new(vec![
            MockRecord::default_for(Action::Generate, "BUG"),
            MockRecord::default_for(Action::Fix, "```python\nv=0.6\n```"),
            MockRecord::default_for(Action::Improve, "```python\nv=0.5\n```"),
        ]);
        let cfg = WorldCoderConfig {
            budget: 6,
            ..WorldCoderConfig::default()
        };
        let out = worldcoder_search(&cfg, &m, &mut Marker).unwrap();
        let reqs = m.requests();
        assert_eq!(reqs[1].action, Action::Fix);
        assert!(reqs[1].prompt.user.contains("NameError"));
        assert_eq!(out.arms.len(), 6);
        assert_eq!(out.trace.best_value, Some(0.6));
    }

    #[test]
    fn seeded_runs_repeat() {
        let run = || {
            let m = MockBackend::new(vec![
                MockRecord::default_for(Action::Generate, "v=0.3"),
                MockRecord::default_for(Action::Improve, "```python\nv=0.2\n```"),
            ]);
            worldcoder_search(&WorldCoderConfig::default(), &m, &mut Marker)
                .unwrap()
                .trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pass_at_k_accounting() {
        let mut records: Vec<MockRecord> = (0..20)
            .map(|i| MockRecord::at(Action::Generate, i, "v=0.5"))
            .collect();
        records[13] = MockRecord::at(Action::Generate, 13, "Reasoning...\n```python\nv=1.0\n```");
        let m = MockBackend::new(records);
        let r = zero_shot_pass_at_k(20, &m, &mut Marker).unwrap();
        assert!(r.solved);
        assert_eq!(r.attempts.len(), 20);
        assert_eq!(r.trace.method, ZERO_SHOT);
        assert!(m.requests()[0]
            .prompt
            .user
            .ends_with("Let's think step by step."));

        let m = MockBackend::sequence(["v=0.2"]);
        assert!(!zero_shot_pass_at_k(1, &m, &mut Marker).unwrap().solved);

        let m = MockBackend::new(vec![MockRecord::default_for(
            Action::Generate,
            "``` ```\n```\n```",
        )]);
        let r = zero_shot_pass_at_k(20, &m, &mut Marker).unwrap();
        assert!(!r.solved);
        assert!(r
            .attempts
            .iter()
            .all(|a| a.error.as_ref().unwrap().class == ErrorClass::Parse));
    }
}
