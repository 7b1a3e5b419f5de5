//! HTTP API and batch front end over `fieldwork-core`.
//!
//! Every route is served both at the root (the default session) and under
//! `/sessions/{sid}` when multi-session mode is enabled.

pub mod api;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod events;
pub mod inspect;
pub mod mesh;
pub mod routes;
pub mod script;
pub mod state;

pub use error::ApiError;
pub use routes::router;
pub use state::{ApiSession, AppState};

/// Serves `state` on an already bound listener until the future is dropped
/// or the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: std::sync::Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
