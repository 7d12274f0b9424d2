use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use visurvey_core::store::SinkConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

/// The server config file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub studies: Vec<PathBuf>,
    pub deployments: Vec<PathBuf>,
    pub sink: SinkConfig,
    /// Environment variable holding the bearer token clients must send.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    /// Directory served under `/assets/{imageTitle}`.
    #[serde(default)]
    pub assets_dir: Option<PathBuf>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ServerConfig = toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(config.resolved(base))
    }

    /// Rebases relative paths onto `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.studies.iter_mut().for_each(fix);
        self.deployments.iter_mut().for_each(fix);
        if let Some(dir) = self.assets_dir.as_mut() {
            fix(dir);
        }
        match &mut self.sink {
            SinkConfig::File { path, .. } => fix(path),
            SinkConfig::Http { outbox_path, .. } => fix(outbox_path),
            SinkConfig::Memory => {}
        }
        self
    }
}
