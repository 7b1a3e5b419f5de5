use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::http::StatusCode;
use fieldwork_core::scene::{SceneHandle, TerrainScene, TilesetId};
use fieldwork_core::session::Session;
use fieldwork_core::tileset::{FsResolver, Resolver};
use tokio::sync::broadcast;

use crate::error::ApiError;
use crate::events::{EventKind, SessionEvent};

pub const DEFAULT_SESSION: &str = "default";
const EVENT_BUFFER: usize = 1024;

/// One shared session. All mutations go through [`ApiSession::mutate`],
/// which applies them and publishes their events under a single lock, so
/// every subscriber sees the applied order.
#[derive(Debug)]
pub struct ApiSession {
    pub id: String,
    inner: Mutex<Inner>,
    tx: broadcast::Sender<Arc<SessionEvent>>,
    clients: AtomicUsize,
}

#[derive(Debug, Default)]
struct Inner {
    session: Session,
    log: Vec<Arc<SessionEvent>>,
}

impl ApiSession {
    pub fn new(id: impl Into<String>, session: Session) -> Self {
        let (tx, _) = broadcast::channel(EVENT_BUFFER);
        Self { id: id.into(), inner: Mutex::new(Inner { session, log: Vec::new() }), tx, clients: AtomicUsize::new(0) }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn read<R>(&self, f: impl FnOnce(&Session) -> R) -> R {
        f(&self.lock().session)
    }

    /// Like [`ApiSession::read`], also returning the number of events
    /// applied so far.
    pub fn read_with_seq<R>(&self, f: impl FnOnce(&Session) -> R) -> (u64, R) {
        let inner = self.lock();
        (inner.log.len() as u64, f(&inner.session))
    }

    /// Runs `f` against the session and publishes the events it returns.
    /// Nothing is published when `f` fails.
    pub fn mutate<R>(
        &self,
        f: impl FnOnce(&mut Session) -> Result<(R, Vec<EventKind>), ApiError>,
    ) -> Result<R, ApiError> {
        let mut inner = self.lock();
        let (out, events) = f(&mut inner.session)?;
        for kind in events {
            let ev = Arc::new(SessionEvent { seq: inner.log.len() as u64 + 1, kind });
            inner.log.push(ev.clone());
            // no receivers is fine
            let _ = self.tx.send(ev);
        }
        Ok(out)
    }

    /// Events after `since` plus a receiver for everything later, taken
    /// atomically so nothing is missed or repeated.
    pub fn subscribe(&self, since: u64) -> (Vec<Arc<SessionEvent>>, broadcast::Receiver<Arc<SessionEvent>>) {
        let inner = self.lock();
        let start = (since as usize).min(inner.log.len());
        (inner.log[start..].to_vec(), self.tx.subscribe())
    }

    pub fn event_seq(&self) -> u64 {
        self.lock().log.len() as u64
    }

    pub fn clients(&self) -> usize {
        self.clients.load(Ordering::SeqCst)
    }

    pub fn client_guard(self: &Arc<Self>) -> ClientGuard {
        self.clients.fetch_add(1, Ordering::SeqCst);
        ClientGuard(self.clone())
    }
}

/// Counts a connected event-stream client for as long as it lives.
#[derive(Debug)]
pub struct ClientGuard(Arc<ApiSession>);

impl Drop for ClientGuard {
    fn drop(&mut self) {
        self.0.clients.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct AppState {
    pub scene: Arc<SceneHandle>,
    pub resolver: Arc<dyn Resolver>,
    pub multi_session: bool,
    sessions: RwLock<BTreeMap<String, Arc<ApiSession>>>,
    next_session: AtomicU64,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState")
            .field("multi_session", &self.multi_session)
            .field("sessions", &self.session_ids())
            .finish_non_exhaustive()
    }
}

impl AppState {
    pub fn new(scene: Arc<SceneHandle>, resolver: Arc<dyn Resolver>, multi_session: bool) -> Self {
        let mut sessions = BTreeMap::new();
        sessions.insert(DEFAULT_SESSION.to_string(), Arc::new(ApiSession::new(DEFAULT_SESSION, Session::new())));
        Self { scene, resolver, multi_session, sessions: RwLock::new(sessions), next_session: AtomicU64::new(0) }
    }

    /// Single-session state reading tilesets from the local filesystem.
    pub fn local() -> Self {
        Self::new(Arc::new(SceneHandle::new()), Arc::new(FsResolver), false)
    }

    pub fn snapshot(&self) -> Arc<TerrainScene> {
        self.scene.snapshot()
    }

    pub fn default_session(&self) -> Arc<ApiSession> {
        self.session(DEFAULT_SESSION).expect("default session always exists")
    }

    pub fn session(&self, id: &str) -> Result<Arc<ApiSession>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("UnknownSession", format!("no session {id:?}")))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    /// Opens a new session listing every tileset already in the scene.
    pub fn create_session(&self) -> Result<Arc<ApiSession>, ApiError> {
        if !self.multi_session {
            return Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "MultiSessionDisabled",
                "the server runs a single shared session",
            ));
        }
        let n = self.next_session.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("s{n}");
        let mut session = Session::new();
        for t in self.snapshot().tilesets() {
            session.add_tileset(t.id, t.uri.clone());
        }
        let s = Arc::new(ApiSession::new(id.clone(), session));
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id, s.clone());
        Ok(s)
    }

    /// Loads `uri` into the shared scene and lists it in `session`.
    /// Blocking; call from a blocking context.
    pub fn register_tileset(&self, session: &ApiSession, uri: &str) -> Result<TilesetId, ApiError> {
        let id = self.scene.register_tileset(uri, self.resolver.as_ref())?;
        session.mutate(|s| {
            s.add_tileset(id, uri);
            Ok(((), vec![EventKind::TilesetRegistered { tileset_id: id, uri: uri.to_string() }]))
        })?;
        Ok(id)
    }
}
