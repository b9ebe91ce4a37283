//! Service configuration: TOML file, then `CONCIERGE_*` environment overrides.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlu::DEFAULT_THRESHOLD;

pub const ENV_PREFIX: &str = "CONCIERGE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub port: u16,
    pub log_dir: PathBuf,
    pub poi_catalog: Option<PathBuf>,
    pub programme: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub dialogue: Option<PathBuf>,
    pub threshold: f64,
    pub capacity: usize,
    pub session_ttl_secs: u64,
    pub admin_token: Option<String>,
    pub web_dir: Option<PathBuf>,
    pub rest_rich_cards: bool,
    /// Pins the service clock, e.g. to replay a conference day.
    pub fixed_time: Option<DateTime<Utc>>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            log_dir: PathBuf::from("logs"),
            poi_catalog: None,
            programme: None,
            corpus: None,
            dialogue: None,
            threshold: DEFAULT_THRESHOLD,
            capacity: 1000,
            session_ttl_secs: 1800,
            admin_token: None,
            web_dir: None,
            rest_rich_cards: false,
            fixed_time: None,
        }
    }
}

fn parse_env<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Env {
        name: name.to_string(),
        message: e.to_string(),
    })
}

impl Config {
    /// Defaults, then the file (if any), then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Applies `CONCIERGE_<FIELD>` overrides read through `lookup`.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        let get = |field: &str| {
            let name = format!("{ENV_PREFIX}{field}");
            lookup(&name).map(|v| (name, v))
        };
        if let Some((_, v)) = get("BIND") {
            self.bind = v;
        }
        if let Some((n, v)) = get("PORT") {
            self.port = parse_env(&n, &v)?;
        }
        if let Some((_, v)) = get("LOG_DIR") {
            self.log_dir = v.into();
        }
        if let Some((_, v)) = get("POI_CATALOG") {
            self.poi_catalog = Some(v.into());
        }
        if let Some((_, v)) = get("PROGRAMME") {
            self.programme = Some(v.into());
        }
        if let Some((_, v)) = get("CORPUS") {
            self.corpus = Some(v.into());
        }
        if let Some((_, v)) = get("DIALOGUE") {
            self.dialogue = Some(v.into());
        }
        if let Some((n, v)) = get("THRESHOLD") {
            self.threshold = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = get("CAPACITY") {
            self.capacity = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = get("SESSION_TTL_SECS") {
            self.session_ttl_secs = parse_env(&n, &v)?;
        }
        if let Some((_, v)) = get("ADMIN_TOKEN") {
            self.admin_token = Some(v).filter(|t| !t.is_empty());
        }
        if let Some((_, v)) = get("WEB_DIR") {
            self.web_dir = Some(v.into());
        }
        if let Some((n, v)) = get("REST_RICH_CARDS") {
            self.rest_rich_cards = parse_env(&n, &v)?;
        }
        if let Some((n, v)) = get("FIXED_TIME") {
            self.fixed_time = Some(parse_env(&n, &v)?);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "threshold {} not in (0, 1]",
                self.threshold
            )));
        }
        if self.capacity == 0 {
            return Err(ConfigError::Invalid("capacity must be at least 1".into()));
        }
        Ok(())
    }
}
