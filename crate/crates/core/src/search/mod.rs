//! LLM-guided Monte Carlo tree search over programs, where each edge is a
//! generate, improve or fix request.

mod estimator;
mod stats;

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::eval::{format_error, Evaluation, Evaluator, Feedback};
use crate::llm::{
    parse_code, render_prompt, Action, CompletionRequest, LanguageModel, PromptContext,
};
use crate::model::EvaluationReport;
use crate::sandbox::{ErrorClass, ExecError};

pub use estimator::{ActionStats, TrainingStep, ValueEstimator};
pub use stats::{tree_statistics, ActionShare, StatsReport};

pub const METHOD: &str = "gif-mcts";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub value: f64,
    pub pseudo_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of LLM calls.
    pub budget: usize,
    /// Content lines a node commits beyond its parent's state.
    pub lines_per_state: usize,
    pub epsilon: f64,
    pub exploration: f64,
    pub gamma: f64,
    pub prior_generate: Prior,
    pub prior_improve: Prior,
    /// Fix attempts allowed per buggy chain.
    pub max_fixes: usize,
    pub enabled_actions: Vec<Action>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            lines_per_state: 2,
            epsilon: 1.0,
            exploration: 0.1,
            gamma: 1.0,
            prior_generate: Prior {
                value: 0.5,
                pseudo_count: 2.0,
            },
            prior_improve: Prior {
                value: 0.55,
                pseudo_count: 2.0,
            },
            max_fixes: 3,
            enabled_actions: Action::ALL.to_vec(),
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid search config: {0}")]
pub struct ConfigError(pub String);

impl SearchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if self.lines_per_state == 0 {
            return bad("lines_per_state must be at least 1");
        }
        if self.max_fixes == 0 {
            return bad("max_fixes must be at least 1");
        }
        for p in [self.prior_generate, self.prior_improve] {
            if !(0.0..=1.0).contains(&p.value) || !(p.pseudo_count >= 0.0) {
                return bad("priors must lie in [0, 1] with a non-negative pseudo-count");
            }
        }
        if self.enabled_actions.is_empty() {
            return bad("at least one action must be enabled");
        }
        if !(self.epsilon > 0.0) || !(self.exploration >= 0.0) || !(self.learning_rate >= 0.0) {
            return bad("epsilon must be positive; exploration and learning_rate non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn enabled(&self, action: Action) -> bool {
        self.enabled_actions.contains(&action)
    }
}

/// Removes one action type from the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoGenerate,
    NoImprove,
    NoFix,
}

impl Ablation {
    pub fn removed(self) -> Action {
        match self {
            Ablation::NoGenerate => Action::Generate,
            Ablation::NoImprove => Action::Improve,
            Ablation::NoFix => Action::Fix,
        }
    }

    pub fn apply(self, config: &mut SearchConfig) {
        config.enabled_actions.retain(|a| *a != self.removed());
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no-{}", self.removed())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-generate" => Ok(Ablation::NoGenerate),
            "no-improve" => Ok(Ablation::NoImprove),
            "no-fix" => Ok(Ablation::NoFix),
            other => Err(format!(
                "unknown ablation {other:?} (expected no-generate, no-improve or no-fix)"
            )),
        }
    }
}

pub fn uct_score(
    value: f64,
    parent_visits: u64,
    same_type_children: usize,
    config: &SearchConfig,
) -> f64 {
    let n = parent_visits.max(1) as f64;
    value + config.exploration * (n.ln() / (same_type_children as f64 + config.epsilon)).sqrt()
}

pub fn buggy_temp_value(failed_fixes: usize, max_fixes: usize) -> f64 {
    if failed_fixes >= max_fixes {
        return 0.0;
    }
    0.99 * (1.0 - failed_fixes as f64 / max_fixes as f64)
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// What selection needs to know about one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmView {
    pub value: f64,
    pub same_type_children: usize,
}

pub fn select_arm(arms: &[ArmView], parent_visits: u64, config: &SearchConfig) -> Option<usize> {
    let scores: Vec<f64> = arms
        .iter()
        .map(|a| uct_score(a.value, parent_visits, a.same_type_children, config))
        .collect();
    argmax(&scores)
}

fn is_content(line: &str) -> bool {
    !line.trim().is_empty()
}

/// Splits `program` into the committed state (the parent's content lines plus
/// `l` more) and the rollout. Blank lines travel with the next content line.
pub fn split_state_rollout(
    parent_state: &[String],
    program: &str,
    l: usize,
) -> (Vec<String>, Vec<String>) {
    let lines: Vec<String> = program.lines().map(|s| s.trim_end().to_string()).collect();
    let target = parent_state.iter().filter(|s| is_content(s)).count() + l;
    let mut seen = 0;
    for (i, line) in lines.iter().enumerate() {
        if is_content(line) {
            seen += 1;
            if seen == target {
                let rollout = lines[i + 1..].to_vec();
                let mut state = lines;
                state.truncate(i + 1);
                return (state, rollout);
            }
        }
    }
    (lines, Vec::new())
}

fn join_lines(lines: &[String]) -> String {
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionArm {
    pub action: Action,
    pub child: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub incoming_action: Option<Action>,
    pub depth: usize,
    pub state_lines: Vec<String>,
    pub rollout_lines: Vec<String>,
    /// The node's own evaluation; None for the root and for buggy nodes.
    pub score: Option<f64>,
    pub value_sum: f64,
    pub value_count: usize,
    pub visit_count: u64,
    pub is_buggy: bool,
    /// Failed fixes so far; only meaningful on the first buggy node of a chain.
    pub failed_fixes: usize,
    /// First buggy node of the fix chain this node belongs to.
    pub chain_head: Option<usize>,
    pub error_info: Option<ExecError>,
    pub eval_report: Option<EvaluationReport>,
    pub feedback: Option<Feedback>,
    pub arms: Vec<ActionArm>,
}

impl SearchNode {
    fn root() -> Self {
        Self {
            id: 0,
            parent: None,
            incoming_action: None,
            depth: 0,
            state_lines: Vec::new(),
            rollout_lines: Vec::new(),
            score: None,
            value_sum: 0.0,
            value_count: 0,
            visit_count: 0,
            is_buggy: false,
            failed_fixes: 0,
            chain_head: None,
            error_info: None,
            eval_report: None,
            feedback: None,
            arms: vec![ActionArm {
                action: Action::Generate,
                child: None,
            }],
        }
    }

    pub fn program(&self) -> String {
        let mut lines = self.state_lines.clone();
        lines.extend(self.rollout_lines.iter().cloned());
        join_lines(&lines)
    }

    /// Prefix offered to a generate continuation.
    pub fn code_so_far(&self) -> String {
        if self.state_lines.is_empty() {
            String::new()
        } else {
            format!("{}\n", join_lines(&self.state_lines))
        }
    }

    pub fn mean_value(&self) -> Option<f64> {
        (self.value_count > 0).then(|| self.value_sum / self.value_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
    pub max_fixes: usize,
}

impl SearchTree {
    pub fn new(max_fixes: usize) -> Self {
        Self {
            nodes: vec![SearchNode::root()],
            max_fixes,
        }
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    /// Temporary value of a buggy node that has no backed-up value yet.
    pub fn temp_value(&self, id: usize) -> Option<f64> {
        let n = &self.nodes[id];
        if !n.is_buggy || n.value_count > 0 {
            return None;
        }
        let head = n.chain_head.unwrap_or(id);
        Some(buggy_temp_value(
            self.nodes[head].failed_fixes,
            self.max_fixes,
        ))
    }

    /// Value used by selection: the backed-up mean, else the temporary value.
    pub fn value(&self, id: usize) -> f64 {
        let n = &self.nodes[id];
        n.mean_value()
            .or_else(|| self.temp_value(id))
            .unwrap_or(0.0)
    }

    /// Which nodes still have an unexpanded arm somewhere below them.
    pub fn open_flags(&self) -> Vec<bool> {
        let mut open = vec![false; self.nodes.len()];
        // Children always have larger ids than their parents.
        for id in (0..self.nodes.len()).rev() {
            open[id] = self.nodes[id].arms.iter().any(|a| match a.child {
                None => true,
                Some(c) => open[c],
            });
        }
        open
    }

    /// Non-temporary values of expanded children reached through `action`.
    pub fn sibling_values(&self, id: usize, action: Action) -> Vec<f64> {
        self.nodes[id]
            .arms
            .iter()
            .filter(|a| a.action == action)
            .filter_map(|a| a.child)
            .filter_map(|c| self.nodes[c].mean_value())
            .collect()
    }

    /// Candidate arms at `id` with their selection views; closed subtrees are skipped.
    pub fn arm_views(
        &self,
        id: usize,
        open: &[bool],
        estimator: &ValueEstimator,
    ) -> Vec<(usize, ArmView)> {
        let node = &self.nodes[id];
        let mut expanded = [0usize; 3];
        for a in &node.arms {
            if a.child.is_some() {
                expanded[a.action as usize] += 1;
            }
        }
        let mut estimates: [Option<f64>; 3] = [None; 3];
        node.arms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.child.is_none_or(|c| open[c]))
            .map(|(i, a)| {
                let value = match a.child {
                    Some(c) => self.value(c),
                    None if a.action == Action::Fix => self.temp_value(id).unwrap_or(0.0),
                    None => *estimates[a.action as usize].get_or_insert_with(|| {
                        estimator
                            .estimate(a.action, &self.sibling_values(id, a.action))
                            .unwrap_or(0.0)
                    }),
                };
                (
                    i,
                    ArmView {
                        value,
                        same_type_children: expanded[a.action as usize],
                    },
                )
            })
            .collect()
    }
}

/// Descends from the root by UCT until an unexpanded arm. Returns the path as
/// (node, arm index) pairs, or None when nothing is left to expand.
pub fn select_leaf(
    tree: &SearchTree,
    config: &SearchConfig,
    estimator: &ValueEstimator,
) -> Option<Vec<(usize, usize)>> {
    let open = tree.open_flags();
    if !open[0] {
        return None;
    }
    let mut path = Vec::new();
    let mut id = 0;
    loop {
        let views = tree.arm_views(id, &open, estimator);
        let arms: Vec<ArmView> = views.iter().map(|(_, v)| *v).collect();
        let pick = select_arm(&arms, tree.nodes[id].visit_count, config)?;
        let arm_idx = views[pick].0;
        path.push((id, arm_idx));
        match tree.nodes[id].arms[arm_idx].child {
            None => return Some(path),
            Some(c) => id = c,
        }
    }
}

/// Adds a leaf value to every node on `path` (root first, leaf last).
pub fn backpropagate(tree: &mut SearchTree, path: &[usize], leaf_value: f64, gamma: f64) {
    let mut discount = 1.0;
    for &id in path.iter().rev() {
        let n = &mut tree.nodes[id];
        n.value_sum += discount * leaf_value;
        n.value_count += 1;
        n.visit_count += 1;
        discount *= gamma;
    }
}

fn count_visit(tree: &mut SearchTree, path: &[usize]) {
    for &id in path {
        tree.nodes[id].visit_count += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    /// 1-based LLM call number.
    pub call: usize,
    pub node: usize,
    pub parent: usize,
    pub action: Action,
    pub value: f64,
    pub temporary: bool,
    pub is_buggy: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_class: Option<ErrorClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub method: String,
    pub task_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub expansions: Vec<ExpansionRecord>,
    pub best_node: Option<usize>,
    pub best_value: Option<f64>,
    pub llm_calls_used: usize,
    pub best_program: String,
    /// False when no node produced a runnable program.
    pub program_valid: bool,
    pub aborted: Option<String>,
}

impl SearchTrace {
    pub fn new(method: &str, task_id: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            method: method.to_string(),
            task_id: task_id.to_string(),
            seed,
            config,
            expansions: Vec::new(),
            best_node: None,
            best_value: None,
            llm_calls_used: 0,
            best_program: String::new(),
            program_valid: false,
            aborted: None,
        }
    }

    pub fn count(&self, action: Action) -> usize {
        self.expansions
            .iter()
            .filter(|e| e.action == action)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub program: String,
    pub trace: SearchTrace,
    pub tree: SearchTree,
    pub estimator: ValueEstimator,
}

impl SearchOutcome {
    pub fn best_value(&self) -> Option<f64> {
        self.trace.best_value
    }

    pub fn stats(&self) -> StatsReport {
        tree_statistics(&self.trace, &self.tree)
    }
}

/// Healthy node with the highest own score; earliest id on ties.
pub fn best_node(tree: &SearchTree) -> Option<usize> {
    let mut best: Option<usize> = None;
    for n in &tree.nodes {
        if let Some(s) = n.score {
            if best.is_none_or(|b| s > tree.nodes[b].score.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(n.id);
            }
        }
    }
    best
}

fn prompt_context(node: &SearchNode, action: Action, description: &str) -> PromptContext {
    let mut ctx = PromptContext {
        description: Some(description.to_string()),
        ..PromptContext::default()
    };
    match action {
        Action::Generate => ctx.code_so_far = Some(node.code_so_far()),
        Action::Improve => {
            ctx.code = Some(node.program());
            let fb = node.feedback.clone().unwrap_or(Feedback {
                input: String::new(),
                output: String::new(),
                prediction: String::new(),
            });
            ctx.input = Some(fb.input);
            ctx.output = Some(fb.output);
            ctx.prediction = Some(fb.prediction);
        }
        Action::Fix => {
            ctx.code = Some(node.program());
            ctx.error = Some(
                node.error_info
                    .as_ref()
                    .map(format_error)
                    .unwrap_or_default(),
            );
        }
    }
    ctx
}

/// Program text for a generate completion. A completion that restates the
/// prefix instead of continuing it is taken as is.
fn continue_program(code_so_far: &str, code: &str) -> String {
    let prefix = code_so_far.trim_end();
    if prefix.is_empty() || code.starts_with(prefix) {
        code.to_string()
    } else {
        format!("{code_so_far}{code}")
    }
}

struct Expansion {
    node: SearchNode,
    evaluation: Option<Evaluation>,
}

fn build_child(
    tree: &SearchTree,
    parent: usize,
    action: Action,
    completion: &str,
    prefix: &str,
    config: &SearchConfig,
    evaluator: &mut (impl Evaluator + ?Sized),
) -> Expansion {
    let p = &tree.nodes[parent];
    let parsed = parse_code(completion, prefix);
    let (program, parse_error) = match (&parsed, action) {
        (Ok(code), Action::Generate) => (continue_program(&p.code_so_far(), code), None),
        (Ok(code), _) => (code.clone(), None),
        (Err(e), Action::Generate) => (
            format!("{}{}", p.code_so_far(), completion.trim()),
            Some(ExecError::new(ErrorClass::Parse, e.to_string())),
        ),
        (Err(e), _) => (
            completion.trim().to_string(),
            Some(ExecError::new(ErrorClass::Parse, e.to_string())),
        ),
    };
    let (state, rollout) = split_state_rollout(&p.state_lines, &program, config.lines_per_state);
    let normalized = {
        let mut all = state.clone();
        all.extend(rollout.iter().cloned());
        join_lines(&all)
    };
    let evaluation = match parse_error {
        Some(e) => Evaluation::buggy(e),
        None => evaluator.evaluate(&normalized),
    };
    let chain_head = if evaluation.is_buggy() {
        if action == Action::Fix && p.is_buggy {
            Some(p.chain_head.unwrap_or(parent))
        } else {
            Some(tree.nodes.len())
        }
    } else {
        None
    };
    let node = SearchNode {
        id: tree.nodes.len(),
        parent: Some(parent),
        incoming_action: Some(action),
        depth: p.depth + 1,
        state_lines: state,
        rollout_lines: rollout,
        score: (!evaluation.is_buggy()).then_some(evaluation.value),
        value_sum: 0.0,
        value_count: 0,
        visit_count: 0,
        is_buggy: evaluation.is_buggy(),
        failed_fixes: 0,
        chain_head,
        error_info: evaluation.error.clone(),
        eval_report: evaluation.report.clone(),
        feedback: evaluation.feedback.clone(),
        arms: Vec::new(),
    };
    Expansion {
        node,
        evaluation: Some(evaluation),
    }
}

/// Runs the search until a perfect program, an exhausted budget, or a
/// gateway failure (recorded in `trace.aborted`).
pub fn run_search<M, E>(
    config: &SearchConfig,
    gateway: &M,
    evaluator: &mut E,
) -> Result<SearchOutcome, ConfigError>
where
    M: LanguageModel + ?Sized,
    E: Evaluator + ?Sized,
{
    config.validate()?;
    let kind = evaluator.kind();
    let description = evaluator.description().to_string();
    let mut tree = SearchTree::new(config.max_fixes);
    let mut estimator = ValueEstimator::new(config);
    let mut trace = SearchTrace::new(
        METHOD,
        evaluator.task_id(),
        config.seed,
        serde_json::to_value(config).expect("config serializes"),
    );

    while trace.llm_calls_used < config.budget {
        let Some(path) = select_leaf(&tree, config, &estimator) else {
            info!(
                "nothing left to expand after {} calls",
                trace.llm_calls_used
            );
            break;
        };
        let (parent, arm_idx) = *path.last().expect("non-empty path");
        let action = tree.nodes[parent].arms[arm_idx].action;
        let estimate_inputs = estimator.inputs(action, &tree.sibling_values(parent, action));

        let ctx = prompt_context(&tree.nodes[parent], action, &description);
        let prompt = match render_prompt(action, kind, &ctx) {
            Ok(p) => p,
            Err(e) => {
                trace.aborted = Some(format!("prompt rendering failed: {e}"));
                break;
            }
        };
        let prefix = prompt.assistant_prefix.clone();
        let request = CompletionRequest::new(action, prompt);
        let response = match gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                trace.aborted = Some(e.to_string());
                break;
            }
        };
        trace.llm_calls_used += 1;

        let Expansion {
            mut node,
            evaluation,
        } = build_child(
            &tree,
            parent,
            action,
            &response.text,
            &prefix,
            config,
            evaluator,
        );
        let child = node.id;
        let buggy = node.is_buggy;
        if buggy {
            if config.enabled(Action::Fix) {
                node.arms.push(ActionArm {
                    action: Action::Fix,
                    child: None,
                });
            }
        } else {
            for a in [Action::Generate, Action::Improve] {
                if config.enabled(a) {
                    node.arms.push(ActionArm {
                        action: a,
                        child: None,
                    });
                }
            }
        }
        tree.nodes.push(node);
        tree.nodes[parent].arms[arm_idx].child = Some(child);
        if action != Action::Fix && config.enabled(action) {
            tree.nodes[parent].arms.push(ActionArm {
                action,
                child: None,
            });
        }

        let mut ids: Vec<usize> = path.iter().map(|(n, _)| *n).collect();
        ids.push(child);
        let value = evaluation.as_ref().map(|e| e.value).unwrap_or(0.0);
        let temporary = buggy && config.enabled(Action::Fix);
        if buggy && action == Action::Fix && tree.nodes[parent].is_buggy {
            let head = tree.nodes[child]
                .chain_head
                .expect("buggy node has a chain");
            tree.nodes[head].failed_fixes =
                (tree.nodes[head].failed_fixes + 1).min(config.max_fixes);
            if tree.nodes[head].failed_fixes >= config.max_fixes {
                // The chain is exhausted: no further fix arm.
                tree.nodes[child].arms.clear();
            }
        }
        if temporary {
            count_visit(&mut tree, &ids);
        } else {
            // Without fix, a buggy program simply scores zero.
            let v = if buggy { 0.0 } else { value };
            backpropagate(&mut tree, &ids, v, config.gamma);
            if action != Action::Fix {
                if let Some((v_g, v_l)) = estimate_inputs {
                    estimator.update(action, v_g, v_l, v);
                }
            }
        }

        let n = &tree.nodes[child];
        let shown = if temporary {
            tree.value(child)
        } else if buggy {
            0.0
        } else {
            value
        };
        debug!(
            "call {}: {} from node {} -> node {} value {:.4}{}",
            trace.llm_calls_used,
            action,
            parent,
            child,
            shown,
            if buggy { " (buggy)" } else { "" }
        );
        trace.expansions.push(ExpansionRecord {
            call: trace.llm_calls_used,
            node: child,
            parent,
            action,
            value: shown,
            temporary,
            is_buggy: buggy,
            error_class: n.error_info.as_ref().map(|e| e.class),
        });
        if !buggy && value >= 1.0 {
            info!("perfect program found at call {}", trace.llm_calls_used);
            break;
        }
    }

    let best = best_node(&tree);
    trace.best_node = best;
    trace.best_value = best.and_then(|b| tree.nodes[b].score);
    trace.program_valid = best.is_some();
    trace.best_program = best.map(|b| tree.nodes[b].program()).unwrap_or_default();
    Ok(SearchOutcome {
        program: trace.best_program.clone(),
        trace,
        tree,
        estimator,
    })
}
