//! HTTP/JSON batch-scoring service over the reward pipeline.
//!
//! Endpoints:
//!
//! | method | path                  | purpose                                   |
//! |--------|-----------------------|-------------------------------------------|
//! | GET    | `/healthz`            | liveness, model presence, stats version   |
//! | POST   | `/v1/score`           | score a batch, optionally updating stats  |
//! | POST   | `/v1/groups/fit`      | fit and install a group model             |
//! | GET    | `/v1/groups/model`    | download the installed group model        |
//! | POST   | `/v1/groups/model`    | upload a group model                      |
//! | GET    | `/v1/stats`           | normalizer snapshot document              |
//! | POST   | `/v1/stats/restore`   | replace the normalizer from a snapshot    |
//! | GET    | `/v1/grpo/config`     | configured optimization constants         |
//! | POST   | `/v1/grpo/advantages` | group-relative advantages for reward sets |

pub mod config;
pub mod routes;
pub mod state;

use std::future::Future;
use std::sync::Arc;

use thiserror::Error;
use tokio::net::TcpListener;

pub use config::{ConfigError, ServiceConfig};
pub use routes::router;
pub use state::AppState;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write stats snapshot to {path}: {source}")]
    Snapshot {
        path: String,
        source: std::io::Error,
    },
}

/// Serves on an already-bound listener until `shutdown` resolves, then
/// writes the stats snapshot if one is configured.
pub async fn serve_with_shutdown<F>(
    state: Arc<AppState>,
    listener: TcpListener,
    shutdown: F,
) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "scoring service listening");
    }
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    write_exit_snapshot(&state)
}

pub fn write_exit_snapshot(state: &AppState) -> Result<(), ServeError> {
    if let Some(path) = &state.config.snapshot_on_exit {
        let (stats, _) = state.stats_snapshot();
        std::fs::write(path, stats.to_json()).map_err(|source| ServeError::Snapshot {
            path: path.display().to_string(),
            source,
        })?;
        tracing::info!(path = %path.display(), "stats snapshot written");
    }
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

/// Boots from `config`, binds its host and port, and serves until a
/// shutdown signal.
pub async fn run(config: ServiceConfig) -> Result<(), ServeError> {
    let addr = format!("{}:{}", config.host, config.port);
    let state = Arc::new(AppState::boot(config)?);
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    serve_with_shutdown(state, listener, shutdown_signal()).await
}
