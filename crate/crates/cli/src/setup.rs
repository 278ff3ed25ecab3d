//! Backend and worker construction from command-line specs.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context};
use cwm_core::bench::sha256_hex;
use cwm_core::llm::{BackendConfig, HttpBackend, LanguageModel, MockBackend};
use cwm_core::sandbox::{stub, Executor, NativeExecutor, Sandbox, WorkerCommand, WorkerLimits};

/// `http:<url>#<model>` or `mock:<script>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Http { url: String, model: String },
    Mock { script: PathBuf },
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("mock:") {
            if rest.is_empty() {
                return Err("mock backend needs a script path".into());
            }
            return Ok(BackendSpec::Mock {
                script: rest.into(),
            });
        }
        if let Some(rest) = s.strip_prefix("http:") {
            let (url, model) = rest
                .rsplit_once('#')
                .ok_or("http backend must look like http:<url>#<model>")?;
            if url.is_empty() || model.is_empty() {
                return Err("http backend must look like http:<url>#<model>".into());
            }
            return Ok(BackendSpec::Http {
                url: url.to_string(),
                model: model.to_string(),
            });
        }
        Err(format!(
            "unknown backend '{s}', expected http:<url>#<model> or mock:<script>"
        ))
    }
}

impl BackendSpec {
    /// Hash of the spec, plus the script contents for mocks.
    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(match self {
            BackendSpec::Http { url, model } => {
                sha256_hex(format!("http:{url}#{model}").as_bytes())
            }
            BackendSpec::Mock { script } => {
                let bytes = fs::read(script)
                    .with_context(|| format!("cannot read mock script {}", script.display()))?;
                let mut all = b"mock:".to_vec();
                all.extend(bytes);
                sha256_hex(&all)
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            BackendSpec::Http { url, model } => format!("http:{url}#{model}"),
            BackendSpec::Mock { script } => format!("mock:{}", script.display()),
        }
    }

    pub fn build(&self) -> anyhow::Result<Box<dyn LanguageModel>> {
        Ok(match self {
            BackendSpec::Http { url, model } => {
                Box::new(HttpBackend::new(BackendConfig::new(url, model))?)
            }
            BackendSpec::Mock { script } => Box::new(MockBackend::from_file(script)?),
        })
    }
}

/// `native` or `command:<program> [args...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerSpec {
    Native,
    Command(Vec<String>),
}

impl FromStr for WorkerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "native" {
            return Ok(WorkerSpec::Native);
        }
        match s.strip_prefix("command:") {
            Some(cmd) => {
                let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
                if parts.is_empty() {
                    Err("worker command is empty".into())
                } else {
                    Ok(WorkerSpec::Command(parts))
                }
            }
            None => Err(format!(
                "unknown worker '{s}', expected native or command:<program> [args]"
            )),
        }
    }
}

impl WorkerSpec {
    pub fn label(&self) -> String {
        match self {
            WorkerSpec::Native => "native".into(),
            WorkerSpec::Command(parts) => format!("command:{}", parts.join(" ")),
        }
    }

    pub fn build(&self) -> anyhow::Result<Box<dyn Executor>> {
        Ok(match self {
            WorkerSpec::Native => Box::new(NativeExecutor::new(Arc::new(stub::stub_registry()))),
            WorkerSpec::Command(parts) => {
                let mut cmd = WorkerCommand::new(&parts[0]);
                for a in &parts[1..] {
                    cmd = cmd.arg(a.clone());
                }
                Box::new(Sandbox::start(cmd, WorkerLimits::default())?)
            }
        })
    }
}

pub fn require_dir(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_dir() {
        bail!("{what} directory not found: {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_specs_parse() {
        assert_eq!(
            "http:http://localhost:8000/v1#llama"
                .parse::<BackendSpec>()
                .unwrap(),
            BackendSpec::Http {
                url: "http://localhost:8000/v1".into(),
                model: "llama".into()
            }
        );
        assert!(matches!(
            "mock:s.json".parse::<BackendSpec>().unwrap(),
            BackendSpec::Mock { .. }
        ));
        assert!("http:nomodel".parse::<BackendSpec>().is_err());
        assert!("ftp:x".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn worker_specs_parse() {
        assert_eq!("native".parse::<WorkerSpec>().unwrap(), WorkerSpec::Native);
        assert_eq!(
            "command:python3 worker.py".parse::<WorkerSpec>().unwrap(),
            WorkerSpec::Command(vec!["python3".into(), "worker.py".into()])
        );
        assert!("command:".parse::<WorkerSpec>().is_err());
    }
}
