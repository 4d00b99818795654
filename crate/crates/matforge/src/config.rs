//! Application configuration: a JSON file plus `MATFORGE_` environment
//! overrides.
//!
//! An override variable names a config key path in upper case with `__`
//! between levels, e.g. `MATFORGE_PORT=9000` or
//! `MATFORGE_PATHS__CHECKPOINT=model.txb`. Values are parsed as JSON when
//! possible and taken as strings otherwise.

use std::path::{Path, PathBuf};

use matforge_core::predict::{AppearanceMode, DEFAULT_RETRIEVAL_K};
use matforge_core::text::{DEFAULT_CONCRETENESS_THRESHOLD, MAX_CONCRETENESS, MIN_CONCRETENESS};
use matforge_core::train::TrainConfig;
use matforge_core::vectordb::DEFAULT_BETA;
use matforge_core::RenderConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::retry::RetryPolicy;

pub const ENV_PREFIX: &str = "MATFORGE_";
/// Variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "MATFORGE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Data file locations. Unset entries use the built-in data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub checkpoint: Option<PathBuf>,
    pub nouns: Option<PathBuf>,
    pub adjectives: Option<PathBuf>,
    pub concreteness: Option<PathBuf>,
    pub colors: Option<PathBuf>,
    pub ior: Option<PathBuf>,
    pub opacity: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub antonyms: Option<PathBuf>,
    pub mdl_template: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Paths {
    fn inputs(&self) -> Vec<(&'static str, &Option<PathBuf>)> {
        vec![
            ("checkpoint", &self.checkpoint),
            ("nouns", &self.nouns),
            ("adjectives", &self.adjectives),
            ("concreteness", &self.concreteness),
            ("colors", &self.colors),
            ("ior", &self.ior),
            ("opacity", &self.opacity),
            ("word_vectors", &self.word_vectors),
            ("antonyms", &self.antonyms),
            ("mdl_template", &self.mdl_template),
            ("static_dir", &self.static_dir),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Built-in deterministic mock.
    Mock { dim: usize, seed: u64 },
    /// Adapter child process speaking the wire protocol on stdin/stdout.
    Stdio { command: Vec<String> },
    /// Adapter endpoint accepting one request per POST.
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Mock { dim: 512, seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Retrieval {
    pub k: usize,
    pub beta: f64,
}

impl Default for Retrieval {
    fn default() -> Self {
        Retrieval {
            k: DEFAULT_RETRIEVAL_K,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub port: u16,
    pub paths: Paths,
    pub provider: ProviderConfig,
    pub retry: RetryPolicy,
    /// Preview and evaluation renders.
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub retrieval: Retrieval,
    pub appearance: AppearanceMode,
    pub concreteness_threshold: f64,
    /// Hidden widths of a freshly initialised model; the input width comes
    /// from the provider and the latent is the parameter vector.
    pub hidden_layers: Vec<usize>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 0,
            port: 8080,
            paths: Paths::default(),
            provider: ProviderConfig::default(),
            retry: RetryPolicy::default(),
            render: RenderConfig::with_size(128, 128),
            train: TrainConfig::default(),
            retrieval: Retrieval::default(),
            appearance: AppearanceMode::default(),
            concreteness_threshold: DEFAULT_CONCRETENESS_THRESHOLD,
            hidden_layers: vec![256, 64],
        }
    }
}

impl AppConfig {
    /// The file (if any) overlaid with `env`; absent keys take defaults.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text)?
            }
            None => Value::Object(Default::default()),
        };
        apply_env(&mut value, env)?;
        let cfg: AppConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.port < 1024 {
            return bad(format!("port {} outside [1024, 65535]", self.port));
        }
        for (name, p) in self.paths.inputs() {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("paths.{name}: {} does not exist", p.display()));
                }
            }
        }
        self.render
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("render: {e}")))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.retrieval.k == 0 || !(self.retrieval.beta.is_finite() && self.retrieval.beta >= 0.0)
        {
            return bad("retrieval: k must be positive and beta finite and non-negative".into());
        }
        if !(MIN_CONCRETENESS..=MAX_CONCRETENESS).contains(&self.concreteness_threshold) {
            return bad(format!(
                "concreteness_threshold {} outside [1, 5]",
                self.concreteness_threshold
            ));
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden_layers must be positive".into());
        }
        match &self.provider {
            ProviderConfig::Mock { dim, .. } if *dim == 0 => {
                bad("provider.dim must be positive".into())
            }
            ProviderConfig::Stdio { command } if command.is_empty() => {
                bad("provider.command is empty".into())
            }
            _ => Ok(()),
        }
    }
}

/// Applies `MATFORGE_*` variables to a config value tree.
pub fn apply_env(
    value: &mut Value,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<(), ConfigError> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != CONFIG_ENV)
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::Invalid(format!(
                "malformed override variable {key}"
            )));
        }
        let parsed = serde_json::from_str::<Value>(&raw).unwrap_or(Value::String(raw));
        let mut slot = &mut *value;
        for part in &path {
            if slot.is_null() {
                *slot = Value::Object(Default::default());
            }
            let obj = slot.as_object_mut().ok_or_else(|| {
                ConfigError::Invalid(format!("{key}: `{part}` is not inside an object"))
            })?;
            slot = obj.entry(part.clone()).or_insert(Value::Null);
        }
        *slot = parsed;
    }
    Ok(())
}
