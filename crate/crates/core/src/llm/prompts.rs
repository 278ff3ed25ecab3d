use super::{Action, PromptBundle, TaskKind};

const CWM_GENERATE: &str = include_str!("templates/cwm_generate.txt");
const CWM_IMPROVE: &str = include_str!("templates/cwm_improve.txt");
const CWM_FIX: &str = include_str!("templates/cwm_fix.txt");
const APPS_GENERATE: &str = include_str!("templates/apps_generate.txt");
const APPS_IMPROVE: &str = include_str!("templates/apps_improve.txt");
const APPS_FIX: &str = include_str!("templates/apps_fix.txt");

const ZERO_SHOT_SUFFIX: &str = "Let's think step by step.";

/// Values substituted into a template. Which ones are required depends on the
/// template; an absent one that the template uses is an error.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    /// Environment description or problem statement.
    pub description: Option<String>,
    pub code_so_far: Option<String>,
    pub code: Option<String>,
    pub input: Option<String>,
    pub output: Option<String>,
    pub prediction: Option<String>,
    pub error: Option<String>,
}

impl PromptContext {
    fn lookup(&self, name: &str) -> Option<Option<&str>> {
        let field = match name {
            "ENV_DESCRIPTION" | "PROB_DESCRIPTION" => &self.description,
            "CODE_SO_FAR" => &self.code_so_far,
            "CODE" => &self.code,
            "INPUT" => &self.input,
            "OUTPUT" => &self.output,
            "PREDICTION" => &self.prediction,
            "ERROR" => &self.error,
            _ => return None,
        };
        Some(field.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing {0}")]
    Missing(String),
    #[error("template is missing its <{0}> section")]
    Malformed(&'static str),
}

fn template(action: Action, kind: TaskKind) -> &'static str {
    match (kind, action) {
        (TaskKind::Cwm, Action::Generate) => CWM_GENERATE,
        (TaskKind::Cwm, Action::Improve) => CWM_IMPROVE,
        (TaskKind::Cwm, Action::Fix) => CWM_FIX,
        (TaskKind::IoProblem, Action::Generate) => APPS_GENERATE,
        (TaskKind::IoProblem, Action::Improve) => APPS_IMPROVE,
        (TaskKind::IoProblem, Action::Fix) => APPS_FIX,
    }
}

fn section<'a>(text: &'a str, tag: &'static str) -> Result<&'a str, PromptError> {
    let open = format!("<{tag}>\n");
    let close = format!("\n</{tag}>");
    let start = text.find(&open).ok_or(PromptError::Malformed(tag))? + open.len();
    let len = text[start..]
        .find(&close)
        .ok_or(PromptError::Malformed(tag))?;
    Ok(&text[start..start + len])
}

/// Replaces `{NAME}` markers in one left-to-right pass. Substituted text is
/// never rescanned, and braces that do not name a known field are kept.
fn substitute(text: &str, ctx: &PromptContext) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_uppercase() || c == '_'))
            .unwrap_or(after.len());
        let name = &after[..name_len];
        if name_len > 0 && after[name_len..].starts_with('}') {
            if let Some(value) = ctx.lookup(name) {
                let value = value.ok_or_else(|| PromptError::Missing(name.to_string()))?;
                out.push_str(value);
                rest = &after[name_len + 1..];
                continue;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_prompt(
    action: Action,
    kind: TaskKind,
    ctx: &PromptContext,
) -> Result<PromptBundle, PromptError> {
    let text = template(action, kind);
    Ok(PromptBundle {
        system: substitute(section(text, "system")?, ctx)?,
        user: substitute(section(text, "user")?, ctx)?,
        assistant_prefix: substitute(section(text, "assistant")?, ctx)?,
    })
}

/// Zero-shot chain-of-thought prompt: the bare description and a nudge to reason.
pub fn zero_shot_prompt(description: &str) -> PromptBundle {
    PromptBundle {
        system: String::new(),
        user: format!("{}\n\n{ZERO_SHOT_SUFFIX}", description.trim_end()),
        assistant_prefix: String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no code found in completion")]
pub struct ParseError;

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Whether `prefix` leaves a code fence open.
fn opens_fence(prefix: &str) -> bool {
    prefix.lines().filter(|l| is_fence(l)).count() % 2 == 1
}

fn tidy(lines: &[&str]) -> String {
    let start = lines
        .iter()
        .position(|l| !l.trim().is_empty())
        .unwrap_or(lines.len());
    lines[start..].join("\n").trim_end().to_string()
}

fn until_fence(lines: &[&str]) -> String {
    let end = lines
        .iter()
        .position(|l| is_fence(l))
        .unwrap_or(lines.len());
    tidy(&lines[..end])
}

/// Extracts program text from a completion.
///
/// When the assistant prefix left a fence open the completion is code up to
/// the closing fence, unless the backend ignored the prefill and opened its
/// own fence first. Otherwise the first fenced block wins, and a completion
/// without any fence is taken whole.
pub fn parse_code(completion: &str, assistant_prefix: &str) -> Result<String, ParseError> {
    let lines: Vec<&str> = completion.lines().collect();
    let first_content = lines.iter().position(|l| !l.trim().is_empty());
    let reopened = first_content.is_some_and(|i| {
        let l = lines[i].trim_start();
        l.starts_with("```") && l.len() > 3
    });
    let code = if opens_fence(assistant_prefix) && !reopened {
        until_fence(&lines)
    } else if let Some(open) = lines.iter().position(|l| is_fence(l)) {
        until_fence(&lines[open + 1..])
    } else {
        completion.trim().to_string()
    };
    if code.trim().is_empty() {
        Err(ParseError)
    } else {
        Ok(code)
    }
}
