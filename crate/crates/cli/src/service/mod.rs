//! HTTP simulation service.
//!
//! Each session owns a worker thread; request handlers only read the
//! latest published frame and status or send commands that the worker
//! applies between steps.

mod api;
mod session;
mod store;

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

pub use session::{Frame, SessionHandle, SessionStatus, Status};
pub use store::Store;

use crate::config::Config;
use crate::run::{now_rfc3339, Run, RunError};

pub struct AppState {
    pub config: Config,
    pub store: Store,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    next_id: AtomicU64,
}

pub type App = Arc<AppState>;

impl AppState {
    pub fn new(config: Config, data_dir: impl Into<PathBuf>) -> std::io::Result<App> {
        Ok(Arc::new(AppState {
            config,
            store: Store::open(data_dir)?,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }))
    }

    fn frame_interval(&self) -> Duration {
        Duration::from_millis(self.config.frame_interval_ms)
    }

    pub fn create_session(&self, run: Run) -> SessionHandle {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let handle = SessionHandle::spawn(id.clone(), run, now_rfc3339(), self.frame_interval());
        self.sessions.write().unwrap().insert(id, handle.clone());
        handle
    }

    pub fn session(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn remove_session(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.write().unwrap().remove(id)
    }

    pub fn sessions(&self) -> Vec<SessionHandle> {
        let mut v: Vec<_> = self.sessions.read().unwrap().values().cloned().collect();
        v.sort_by_key(|h| h.id.trim_start_matches('s').parse::<u64>().unwrap_or(u64::MAX));
        v
    }

    /// Saves every live session under `runs/autosave-<id>` and stops the
    /// workers. Returns the run names written.
    pub async fn persist_all(&self) -> Vec<String> {
        let sessions: Vec<SessionHandle> = self.sessions.write().unwrap().drain().map(|(_, h)| h).collect();
        let mut saved = Vec::new();
        for h in sessions {
            let name = format!("autosave-{}", h.id);
            let dir = self.store.run_path(&name);
            match h.call(|reply| session::Command::Save { dir, frames: true, reply }).await {
                Ok(_) => saved.push(name),
                Err(e) => log::error!("persisting session {}: {e}", h.id),
            }
            h.stop();
        }
        saved
    }

    /// Replays a saved run into a fresh (paused) session.
    pub fn session_from_run(&self, name: &str) -> Result<SessionHandle, RunError> {
        let (run, _) = Run::replay(&self.store.run_path(name))?;
        Ok(self.create_session(run))
    }
}

/// Serves until `shutdown` resolves, then persists all sessions.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: App,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<Vec<String>> {
    let router = api::router(app.clone(), static_dir);
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await?;
    Ok(app.persist_all().await)
}

pub use api::router;
