//! HTTP API over a study deployment: studies, due occurrences, survey
//! sessions, snoozing and result export, all under `/v1`.
//!
//! State lives in memory. Active item sets are rebuilt from the result sink
//! at startup when the sink can be read back.

mod config;
mod error;
mod routes;
mod state;
mod wire;

pub use config::{ConfigError, ServerConfig};
pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, LoadError};
pub use wire::{OccurrenceView, SessionView, StepPayload};

use std::sync::Arc;

use visurvey_core::{RandomIds, SystemClock};

/// Loads `config`, binds its address and serves until ctrl-c.
pub async fn serve(config: ServerConfig) -> Result<(), LoadError> {
    let state = AppState::from_config(&config, Arc::new(SystemClock), Arc::new(RandomIds))?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| LoadError::Bind { addr: config.bind, source })?;
    eprintln!("listening on http://{}", config.bind);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| LoadError::Bind { addr: config.bind, source })
}
