//! Service configuration: one TOML document with `${VAR}` / `${VAR:-default}`
//! environment interpolation. Relative paths resolve against the config file's
//! directory.
//!
//! ```toml
//! [server]
//! bind = "127.0.0.1:8080"
//! usage_log = "usage.jsonl"
//!
//! [paths]
//! store = "store"
//! tasks = "tasks"
//! videos = "videos"
//!
//! [embedding]
//! provider = "local"          # or "remote" (EMBED_API_URL/KEY/MODEL)
//! dim = 256
//!
//! [llm]
//! provider = "remote"         # or "scripted"
//! url = "${LLM_API_URL}"
//! api_key = "${LLM_API_KEY}"
//! model = "${LLM_MODEL:-gpt-4o-mini}"
//!
//! [limits]
//! compile_timeout_secs = 10
//! test_timeout_secs = 10
//! max_concurrent_evaluations = 4
//!
//! [runners.python]
//! kind = "command"
//! source_file = "main.py"
//! compile = "python3 -m py_compile {{source_file}}"
//! test = "for t in test_*.py; do python3 \"$t\"; done"
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use lecture_rag::exercises::CommandTemplate;
use regex::{Captures, Regex};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub server: ServerSection,
    pub paths: PathsSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    pub llm: LlmSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub limits: LimitsSection,
    #[serde(default)]
    pub runners: BTreeMap<String, RunnerSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default)]
    pub usage_log: Option<PathBuf>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            usage_log: None,
        }
    }
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default)]
    pub store: Option<PathBuf>,
    pub tasks: PathBuf,
    #[serde(default)]
    pub videos: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSection {
    Local {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        dim: usize,
        #[serde(default)]
        url: Option<String>,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default)]
        model: Option<String>,
    },
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self::Local { dim: default_dim() }
    }
}

fn default_dim() -> usize {
    lecture_rag::embedding::DEFAULT_LOCAL_DIM
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmSection {
    /// Replays a JSON script of completions; see `ScriptedProvider::from_json`.
    Scripted {
        script: PathBuf,
        #[serde(default = "yes")]
        cycle: bool,
    },
    Remote {
        #[serde(default)]
        url: Option<String>,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default)]
        model: Option<String>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    #[serde(default)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    #[serde(default = "ten")]
    pub compile_timeout_secs: f64,
    #[serde(default = "ten")]
    pub test_timeout_secs: f64,
    #[serde(default = "four")]
    pub max_concurrent_evaluations: usize,
}

impl Default for LimitsSection {
    fn default() -> Self {
        Self {
            compile_timeout_secs: ten(),
            test_timeout_secs: ten(),
            max_concurrent_evaluations: four(),
        }
    }
}

fn ten() -> f64 {
    10.0
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunnerSection {
    Command(CommandTemplate),
    Scripted {
        #[serde(default)]
        passed: u32,
        #[serde(default = "one")]
        total: u32,
        #[serde(default)]
        output: String,
        #[serde(default)]
        compile_error: Option<String>,
    },
}

fn one() -> u32 {
    1
}

static ENV_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}").expect("valid regex"));

/// Replaces `${VAR}` and `${VAR:-default}` using `lookup`.
pub fn interpolate(src: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut missing = None;
    let out = ENV_REF.replace_all(src, |c: &Captures| match (lookup(&c[1]), c.get(2)) {
        (Some(v), _) => v,
        (None, Some(default)) => default.as_str().to_string(),
        (None, None) => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(ConfigError::MissingEnv(name)),
        None => Ok(out.into_owned()),
    }
}

impl Config {
    pub fn parse(src: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let src = interpolate(src, |k| std::env::var(k).ok())?;
        let mut config: Config = toml::from_str(&src)?;
        config.resolve_paths(base_dir);
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&src, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.paths.store.iter_mut().for_each(fix);
        fix(&mut self.paths.tasks);
        self.paths.videos.iter_mut().for_each(fix);
        self.server.usage_log.iter_mut().for_each(fix);
        self.prompt.template.iter_mut().for_each(fix);
        if let LlmSection::Scripted { script, .. } = &mut self.llm {
            fix(script);
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let l = &self.limits;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(l.compile_timeout_secs) || !positive(l.test_timeout_secs) {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        if l.max_concurrent_evaluations == 0 {
            return Err(ConfigError::Invalid("max_concurrent_evaluations must be at least 1".into()));
        }
        for (language, runner) in &self.runners {
            if let RunnerSection::Command(CommandTemplate {
                summary_pattern: Some(p),
                ..
            }) = runner
            {
                Regex::new(p).map_err(|e| ConfigError::Invalid(format!("runners.{language}.summary_pattern: {e}")))?;
            }
        }
        Ok(())
    }
}
