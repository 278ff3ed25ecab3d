use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Action, CompletionRequest, CompletionResponse, GatewayError, LanguageModel};

/// One scripted completion.
///
/// With an `action`, `index` counts calls of that action (0-based); without
/// one it counts all calls. A record with no `index` is the default for its
/// action (or for everything).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub completion: String,
}

impl MockRecord {
    pub fn at(action: Action, index: usize, completion: impl Into<String>) -> Self {
        Self {
            action: Some(action),
            index: Some(index),
            completion: completion.into(),
        }
    }

    pub fn default_for(action: Action, completion: impl Into<String>) -> Self {
        Self {
            action: Some(action),
            index: None,
            completion: completion.into(),
        }
    }
}

#[derive(Default)]
struct Counters {
    total: usize,
    per_action: HashMap<Action, usize>,
    log: Vec<CompletionRequest>,
}

/// Deterministic backend replaying a script.
pub struct MockBackend {
    exact: HashMap<(Action, usize), String>,
    action_default: HashMap<Action, String>,
    global: HashMap<usize, String>,
    global_default: Option<String>,
    counters: Mutex<Counters>,
}

impl MockBackend {
    pub fn new(records: Vec<MockRecord>) -> Self {
        let mut m = Self {
            exact: HashMap::new(),
            action_default: HashMap::new(),
            global: HashMap::new(),
            global_default: None,
            counters: Mutex::new(Counters::default()),
        };
        for r in records {
            match (r.action, r.index) {
                (Some(a), Some(i)) => {
                    m.exact.insert((a, i), r.completion);
                }
                (Some(a), None) => {
                    m.action_default.insert(a, r.completion);
                }
                (None, Some(i)) => {
                    m.global.insert(i, r.completion);
                }
                (None, None) => m.global_default = Some(r.completion),
            }
        }
        m
    }

    /// Replays `completions` in call order regardless of action.
    pub fn sequence<S: Into<String>>(completions: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            completions
                .into_iter()
                .enumerate()
                .map(|(i, c)| MockRecord {
                    action: None,
                    index: Some(i),
                    completion: c.into(),
                })
                .collect(),
        )
    }

    /// Reads a script: either a JSON array of records or one record per line.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        Self::from_script(&text)
            .map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))
    }

    pub fn from_script(text: &str) -> Result<Self, String> {
        let records: Vec<MockRecord> = if text.trim_start().starts_with('[') {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(n, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", n + 1)))
                .collect::<Result<_, _>>()?
        };
        Ok(Self::new(records))
    }

    pub fn calls(&self) -> usize {
        self.counters.lock().expect("mock lock").total
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.counters.lock().expect("mock lock").log.clone()
    }

    fn lookup(&self, action: Action, action_index: usize, global_index: usize) -> Option<&String> {
        self.exact
            .get(&(action, action_index))
            .or_else(|| self.action_default.get(&action))
            .or_else(|| self.global.get(&global_index))
            .or(self.global_default.as_ref())
    }
}

impl LanguageModel for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut c = self.counters.lock().expect("mock lock");
        let global_index = c.total;
        let action_index = *c.per_action.get(&request.action).unwrap_or(&0);
        c.total += 1;
        *c.per_action.entry(request.action).or_insert(0) += 1;
        c.log.push(request.clone());
        match self.lookup(request.action, action_index, global_index) {
            Some(text) => Ok(CompletionResponse {
                text: text.clone(),
                usage: None,
                latency: Duration::ZERO,
            }),
            None => Err(GatewayError::ScriptExhausted {
                action: request.action,
                index: action_index,
            }),
        }
    }

    fn describe(&self) -> String {
        "mock".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::PromptBundle;

    fn req(action: Action) -> CompletionRequest {
        CompletionRequest::new(
            action,
            PromptBundle {
                system: String::new(),
                user: String::new(),
                assistant_prefix: String::new(),
            },
        )
    }

    #[test]
    fn sequence_replays_in_order() {
        let m = MockBackend::sequence(["A", "B"]);
        assert_eq!(m.complete(&req(Action::Generate)).unwrap().text, "A");
        assert_eq!(m.complete(&req(Action::Fix)).unwrap().text, "B");
        assert!(matches!(
            m.complete(&req(Action::Generate)),
            Err(GatewayError::ScriptExhausted { .. })
        ));
        assert_eq!(m.calls(), 3);
    }

    #[test]
    fn lookup_precedence() {
        let m = MockBackend::new(vec![
            MockRecord::at(Action::Generate, 1, "g1"),
            MockRecord::default_for(Action::Generate, "g*"),
            MockRecord {
                action: None,
                index: None,
                completion: "any".into(),
            },
        ]);
        assert_eq!(m.complete(&req(Action::Generate)).unwrap().text, "g*");
        assert_eq!(m.complete(&req(Action::Generate)).unwrap().text, "g1");
        assert_eq!(m.complete(&req(Action::Improve)).unwrap().text, "any");
        assert_eq!(m.requests()[2].action, Action::Improve);
    }

    #[test]
    fn scripts_parse_as_array_or_lines() {
        let lines = "{\"action\": \"fix\", \"index\": 0, \"completion\": \"f\"}\n\n{\"completion\": \"d\"}\n";
        let m = MockBackend::from_script(lines).unwrap();
        assert_eq!(m.complete(&req(Action::Fix)).unwrap().text, "f");
        assert_eq!(m.complete(&req(Action::Fix)).unwrap().text, "d");
        let arr = r#"[{"index": 0, "completion": "x"}]"#;
        let m = MockBackend::from_script(arr).unwrap();
        assert_eq!(m.complete(&req(Action::Improve)).unwrap().text, "x");
        assert!(MockBackend::from_script("{bad")
            .err()
            .unwrap()
            .contains("line 1"));
    }
}
