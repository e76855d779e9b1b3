//! HTTP service for conducting dose-finding trials.
//!
//! Each session holds a design, the patients included so far and the
//! standing recommendation for the next one. Every change is appended to
//! the session's audit log, which is also its persistence format.

pub mod routes;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use routes::router;
pub use session::{Session, SessionError};
pub use store::{SessionStore, StoreError};

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, data: Option<PathBuf>) -> std::io::Result<()> {
    let store = match data {
        Some(dir) => SessionStore::open(dir).await.map_err(|e| std::io::Error::other(e.to_string()))?,
        None => SessionStore::in_memory(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
