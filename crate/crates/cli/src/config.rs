//! Application configuration: built-in defaults, then an optional INI-style
//! file, then `--set section.key=value` overrides, then command flags.
//!
//! ```text
//! [paths]
//! vocab = data/vocab.txt
//! embeddings = data/embeddings.txt
//! runs_dir = runs
//!
//! [mechanism]
//! kind = rantext
//! epsilon = 2.0
//!
//! [remote]
//! model = gpt-4
//! temperature = 0.5
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use dptext_core::attacks::DEFAULT_CHUNK_SIZE;
use dptext_core::{LlmEndpointConfig, MechanismConfig};
use ini::Ini;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("override `{0}` is not of the form section.key=value")]
    BadOverride(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub vocab: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub runs_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub k: usize,
    pub chunk_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub paths: Paths,
    pub mechanism: MechanismConfig,
    pub remote: LlmEndpointConfig,
    pub restoration: LlmEndpointConfig,
    pub attack: AttackSettings,
    pub n_docs: usize,
    pub seed: Option<u64>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                runs_dir: PathBuf::from("runs"),
                ..Paths::default()
            },
            mechanism: MechanismConfig::rantext(2.0),
            remote: LlmEndpointConfig::remote(),
            restoration: LlmEndpointConfig::restoration(),
            attack: AttackSettings {
                k: 10,
                chunk_size: DEFAULT_CHUNK_SIZE,
            },
            n_docs: 3,
            seed: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn set_endpoint(ep: &mut LlmEndpointConfig, key: &str, full: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "base_url" => ep.base_url = value.to_string(),
        "model" => ep.model = value.to_string(),
        "temperature" => ep.temperature = parse(full, value)?,
        "max_tokens" => ep.max_output_tokens = parse(full, value)?,
        "api_key_env" => ep.api_key_env = value.to_string(),
        "timeout" => ep.timeout_secs = parse(full, value)?,
        "max_concurrency" => ep.max_concurrency = parse(full, value)?,
        _ => return Err(ConfigError::UnknownKey(full.to_string())),
    }
    Ok(())
}

impl AppConfig {
    /// Sets `section.key` to `value`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let full = format!("{section}.{key}");
        let value = value.trim();
        match (section, key) {
            ("paths", "vocab") => self.paths.vocab = optional_path(value),
            ("paths", "embeddings") => self.paths.embeddings = optional_path(value),
            ("paths", "merges") => self.paths.merges = optional_path(value),
            ("paths", "runs_dir") => self.paths.runs_dir = PathBuf::from(value),
            ("mechanism", "kind") => self.mechanism.kind = parse(&full, value)?,
            ("mechanism", "epsilon") => self.mechanism.epsilon_em = parse(&full, value)?,
            ("mechanism", "epsilon_lap") => {
                self.mechanism.epsilon_lap = if value.is_empty() { None } else { Some(parse(&full, value)?) }
            }
            ("mechanism", "sensitivity") => self.mechanism.laplace_sensitivity = parse(&full, value)?,
            ("mechanism", "scoring") => self.mechanism.scoring_mode = parse(&full, value)?,
            ("mechanism", "top_k") => self.mechanism.top_k = parse(&full, value)?,
            ("remote", k) => set_endpoint(&mut self.remote, k, &full, value)?,
            ("restoration", k) => set_endpoint(&mut self.restoration, k, &full, value)?,
            ("attack", "k") => self.attack.k = parse(&full, value)?,
            ("attack", "chunk_size") => self.attack.chunk_size = parse(&full, value)?,
            ("run", "n") => self.n_docs = parse(&full, value)?,
            ("run", "seed") => self.seed = Some(parse(&full, value)?),
            _ => return Err(ConfigError::UnknownKey(full)),
        }
        Ok(())
    }

    /// Applies every `key = value` of an INI document.
    pub fn apply_ini(&mut self, ini: &Ini) -> Result<(), ConfigError> {
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                match section {
                    Some(section) => self.set(section, key, value)?,
                    None => return Err(ConfigError::UnknownKey(key.to_string())),
                }
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let ini = Ini::load_from_file(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        self.apply_ini(&ini)
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (lhs, value) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        let (section, key) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        self.set(section, key, value)
    }

    /// Checks that configured files exist and the mechanism is usable.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, path) in [
            ("paths.vocab", &self.paths.vocab),
            ("paths.embeddings", &self.paths.embeddings),
            ("paths.merges", &self.paths.merges),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(ConfigError::Invalid(format!("{name}: {} does not exist", p.display())));
                }
            }
        }
        if self.paths.vocab.is_some() != self.paths.embeddings.is_some() {
            return Err(ConfigError::Invalid(
                "paths.vocab and paths.embeddings must be given together".into(),
            ));
        }
        self.mechanism
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
