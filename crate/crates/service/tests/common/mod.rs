#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use fieldwork_core::fixtures::FixtureBundle;
use fieldwork_service::events::drain_sse_frames;
use fieldwork_service::{router, AppState};
use serde_json::Value;
use tempfile::TempDir;

pub const WAIT: Duration = Duration::from_secs(10);

/// In-process server on an ephemeral port.
pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    pub http: reqwest::Client,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    pub async fn start(state: AppState) -> Self {
        let state = Arc::new(state);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let app = router(state.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self { base, state, http: reqwest::Client::new(), task }
    }

    pub async fn local() -> Self {
        Self::start(AppState::local()).await
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(self.url(path)).send().await.unwrap()
    }

    pub async fn post(&self, path: &str, body: &Value) -> reqwest::Response {
        self.http.post(self.url(path)).json(body).send().await.unwrap()
    }

    /// POST expecting `status`; returns the JSON body.
    pub async fn post_ok(&self, path: &str, body: &Value, status: u16) -> Value {
        let r = self.post(path, body).await;
        let got = r.status().as_u16();
        let text = r.text().await.unwrap();
        assert_eq!(got, status, "POST {path} {body}: {text}");
        serde_json::from_str(&text).unwrap()
    }

    pub async fn get_json(&self, path: &str) -> Value {
        let r = self.get(path).await;
        assert_eq!(r.status().as_u16(), 200, "GET {path}");
        r.json().await.unwrap()
    }

    pub async fn events(&self, path: &str) -> EventStream {
        EventStream::open(self.http.get(self.url(path))).await
    }

    /// Writes `bundle` below a fresh folder and registers its root.
    pub async fn register(&self, prefix: &str, bundle: &FixtureBundle) -> (TempDir, Value) {
        let dir = tempfile::tempdir().unwrap();
        let root = bundle.write_to(dir.path()).unwrap();
        let info = self
            .post_ok(&format!("{prefix}/tilesets"), &serde_json::json!({ "uri": root.to_str().unwrap() }), 201)
            .await;
        (dir, info)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Client side of `GET /events`.
pub struct EventStream {
    resp: reqwest::Response,
    buf: String,
    ready: VecDeque<Value>,
}

impl EventStream {
    pub async fn open(req: reqwest::RequestBuilder) -> Self {
        let resp = req.send().await.unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        assert_eq!(resp.headers()["content-type"], "text/event-stream");
        Self { resp, buf: String::new(), ready: VecDeque::new() }
    }

    /// Next event payload, or `None` when nothing arrives within `wait`.
    pub async fn next_within(&mut self, wait: Duration) -> Option<Value> {
        loop {
            if let Some(v) = self.ready.pop_front() {
                return Some(v);
            }
            let chunk = tokio::time::timeout(wait, self.resp.chunk()).await.ok()?.unwrap()?;
            self.buf.push_str(std::str::from_utf8(&chunk).unwrap());
            for data in drain_sse_frames(&mut self.buf) {
                self.ready.push_back(serde_json::from_str(&data).unwrap());
            }
        }
    }

    pub async fn next(&mut self) -> Value {
        self.next_within(WAIT).await.expect("event within the timeout")
    }

    pub async fn take(&mut self, n: usize) -> Vec<Value> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.next().await);
        }
        out
    }
}
