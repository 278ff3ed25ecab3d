//! Task ingestion, run manifests and results tables.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    check_transition, EnvTask, IoProblem, ReplayBuffer, SpaceKind, SpaceSpec, Transition,
    UnitTestCase,
};

pub const DESCRIPTION_FILE: &str = "description.md";
pub const SPACES_FILE: &str = "spaces.json";
pub const BUFFER_FILE: &str = "buffer.jsonl";
pub const STATEMENT_FILE: &str = "statement.md";
pub const TESTS_FILE: &str = "tests.jsonl";

/// An ingestion failure, located as precisely as the input allows.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct IngestError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file.display())?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        if let Some(field) = &self.field {
            write!(f, ": field {field}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl IngestError {
    fn new(file: &Path, message: impl Into<String>) -> Self {
        Self {
            file: file.to_path_buf(),
            line: None,
            field: None,
            message: message.into(),
        }
    }

    fn missing(file: &Path) -> Self {
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(file, format!("missing {name}"))
    }

    fn at(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

fn read(path: &Path) -> Result<String, IngestError> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(IngestError::missing(path)),
        Err(e) => Err(IngestError::new(path, e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacesFile {
    pub action: SpaceSpec,
    pub observation: SpaceSpec,
}

fn task_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(dir)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into())
}

/// Splits "field s: message" into its parts.
fn split_field(msg: &str) -> (Option<String>, String) {
    match msg.strip_prefix("field ").and_then(|r| r.split_once(": ")) {
        Some((f, m)) => (Some(f.to_string()), m.to_string()),
        None => (None, msg.to_string()),
    }
}

/// Reads an environment directory with a description, spaces and buffer.
pub fn ingest_environment(dir: &Path) -> Result<EnvTask, IngestError> {
    let desc_path = dir.join(DESCRIPTION_FILE);
    let spaces_path = dir.join(SPACES_FILE);
    let buffer_path = dir.join(BUFFER_FILE);
    let description = read(&desc_path)?;
    if description.trim().is_empty() {
        return Err(IngestError::new(&desc_path, "description is empty"));
    }
    let spaces: SpacesFile = serde_json::from_str(&read(&spaces_path)?)
        .map_err(|e| IngestError::new(&spaces_path, e.to_string()).at(e.line()))?;
    for (name, space) in [
        ("action", &spaces.action),
        ("observation", &spaces.observation),
    ] {
        space.validate().map_err(|e| IngestError {
            field: Some(name.into()),
            ..IngestError::new(&spaces_path, e)
        })?;
    }
    let mut transitions = Vec::new();
    for (i, line) in read(&buffer_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(line)
            .map_err(|e| IngestError::new(&buffer_path, e.to_string()).at(i + 1))?;
        if let Err(msg) = check_transition(&t, &spaces.action, &spaces.observation) {
            let (field, message) = split_field(&msg);
            return Err(IngestError {
                field,
                ..IngestError::new(&buffer_path, message).at(i + 1)
            });
        }
        transitions.push(t);
    }
    let mut buffer = ReplayBuffer::new(transitions);
    buffer.source_meta = buffer_path.display().to_string();
    Ok(EnvTask {
        name: task_name(dir),
        description,
        action_space: spaces.action,
        observation_space: spaces.observation,
        buffer,
    })
}

/// Writes `task` in the layout read by [`ingest_environment`].
pub fn write_environment(task: &EnvTask, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(DESCRIPTION_FILE), task.description.as_bytes())?;
    let spaces = SpacesFile {
        action: task.action_space.clone(),
        observation: task.observation_space.clone(),
    };
    write_atomic(&dir.join(SPACES_FILE), to_json(&spaces).as_bytes())?;
    let mut buf = String::new();
    for t in &task.buffer.transitions {
        buf.push_str(&serde_json::to_string(t).expect("transition serializes"));
        buf.push('\n');
    }
    write_atomic(&dir.join(BUFFER_FILE), buf.as_bytes())
}

/// Reads a stdin/stdout problem: a statement and its unit tests.
pub fn ingest_io_problem(dir: &Path) -> Result<IoProblem, IngestError> {
    let statement_path = dir.join(STATEMENT_FILE);
    let tests_path = dir.join(TESTS_FILE);
    let statement = read(&statement_path)?;
    let mut tests = Vec::new();
    for (i, line) in read(&tests_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: UnitTestCase = serde_json::from_str(line)
            .map_err(|e| IngestError::new(&tests_path, e.to_string()).at(i + 1))?;
        tests.push(case);
    }
    if tests.is_empty() {
        return Err(IngestError::new(&tests_path, "problem has no tests"));
    }
    Ok(IoProblem::new(task_name(dir), statement, tests))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Directory name of one run: `<timestamp>-<method>-<task>`.
pub fn run_dir_name(timestamp: &str, method: &str, task: &str) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect::<String>()
    };
    format!("{}-{}-{}", clean(timestamp), clean(method), clean(task))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Headline numbers of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub accuracy: Option<f64>,
    pub normalized_return: Option<f64>,
    pub normalized_return_error: Option<f64>,
    pub llm_calls_used: Option<usize>,
    pub wall_time: f64,
    pub action_kind: Option<SpaceKind>,
    pub solved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub method: String,
    pub task_id: String,
    pub budget: Option<usize>,
    pub seed: u64,
    pub backend: Option<String>,
    pub backend_hash: Option<String>,
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
    /// Artifact files, relative to the run directory.
    pub artifacts: Vec<String>,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn write(&self, run_dir: &Path) -> std::io::Result<PathBuf> {
        let path = run_dir.join(MANIFEST_FILE);
        write_atomic(&path, to_json(self).as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        serde_json::from_str(&read(path)?)
            .map_err(|e| IngestError::new(path, e.to_string()).at(e.line()))
    }
}

/// Every manifest under `root`, one directory deep, sorted by path.
pub fn find_manifests(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if root.join(MANIFEST_FILE).is_file() {
        found.push(root.join(MANIFEST_FILE));
    }
    for entry in fs::read_dir(root)? {
        let p = entry?.path().join(MANIFEST_FILE);
        if p.is_file() {
            found.push(p);
        }
    }
    found.sort();
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run: String,
    pub method: String,
    pub task_id: String,
    pub action_kind: Option<SpaceKind>,
    pub accuracy: Option<f64>,
    pub normalized_return: Option<f64>,
    pub normalized_return_error: Option<f64>,
    pub llm_calls_used: Option<usize>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// "discrete", "continuous" or "all".
    pub group: String,
    pub runs: usize,
    pub accuracy: Option<f64>,
    pub normalized_return: Option<f64>,
    pub llm_calls_used: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(group: &str, rows: &[&ResultRow]) -> AggregateRow {
    AggregateRow {
        group: group.to_string(),
        runs: rows.len(),
        accuracy: mean_of(rows.iter().map(|r| r.accuracy)),
        normalized_return: mean_of(rows.iter().map(|r| r.normalized_return)),
        llm_calls_used: mean_of(rows.iter().map(|r| r.llm_calls_used.map(|c| c as f64))),
        wall_time: mean_of(rows.iter().map(|r| Some(r.wall_time))).unwrap_or(0.0),
    }
}

impl ResultsTable {
    pub fn from_rows(rows: Vec<ResultRow>) -> Self {
        let mut aggregates = Vec::new();
        for kind in [SpaceKind::Discrete, SpaceKind::Continuous] {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.action_kind == Some(kind))
                .collect();
            if !group.is_empty() {
                aggregates.push(aggregate(&kind.to_string(), &group));
            }
        }
        let all: Vec<&ResultRow> = rows.iter().collect();
        aggregates.push(aggregate("all", &all));
        Self { rows, aggregates }
    }

    pub fn from_manifests(manifests: &[(PathBuf, RunManifest)]) -> Self {
        let rows = manifests
            .iter()
            .map(|(path, m)| ResultRow {
                run: path
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                method: m.method.clone(),
                task_id: m.task_id.clone(),
                action_kind: m.summary.action_kind,
                accuracy: m.summary.accuracy,
                normalized_return: m.summary.normalized_return,
                normalized_return_error: m.summary.normalized_return_error,
                llm_calls_used: m.summary.llm_calls_used,
                wall_time: m.summary.wall_time,
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from(
            "run,method,task,action_kind,accuracy,normalized_return,normalized_return_error,llm_calls,wall_time\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.3}\n",
                r.run,
                r.method,
                r.task_id,
                r.action_kind.map(|k| k.to_string()).unwrap_or_default(),
                opt(r.accuracy),
                opt(r.normalized_return),
                opt(r.normalized_return_error),
                r.llm_calls_used.map(|c| c.to_string()).unwrap_or_default(),
                r.wall_time
            ));
        }
        for a in &self.aggregates {
            out.push_str(&format!(
                "mean:{},,,{},{},{},,{},{:.3}\n",
                a.group,
                if a.group == "all" {
                    String::new()
                } else {
                    a.group.clone()
                },
                opt(a.accuracy),
                opt(a.normalized_return),
                opt(a.llm_calls_used),
                a.wall_time
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut lines = vec![vec![
            "task".to_string(),
            "method".into(),
            "kind".into(),
            "accuracy".into(),
            "norm. return".into(),
            "calls".into(),
            "time (s)".into(),
        ]];
        for r in &self.rows {
            let ret = match (r.normalized_return, r.normalized_return_error) {
                (Some(v), Some(e)) => format!("{v:.4} ± {e:.4}"),
                (v, _) => opt(v),
            };
            lines.push(vec![
                r.task_id.clone(),
                r.method.clone(),
                r.action_kind
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "-".into()),
                opt(r.accuracy),
                ret,
                r.llm_calls_used
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "-".into()),
                format!("{:.2}", r.wall_time),
            ]);
        }
        for a in &self.aggregates {
            lines.push(vec![
                format!("mean ({})", a.group),
                String::new(),
                format!("{} runs", a.runs),
                opt(a.accuracy),
                opt(a.normalized_return),
                a.llm_calls_used
                    .map(|c| format!("{c:.1}"))
                    .unwrap_or_else(|| "-".into()),
                format!("{:.2}", a.wall_time),
            ]);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}", w = *w))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}
