//! HTTP annotation service: exposes pending queries and accepts human labels.
//!
//! Routes:
//! - `GET /api/queries` pending queries, smallest margin first
//! - `POST /api/labels` `{series, t, label}` with `label` 0, 1 or `"skip"`
//! - `GET /api/series/{id}?from&to` values and current labels
//! - `GET /api/status`
//!
//! Anything else is served from the optional static UI directory.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::Array2;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::active::{Answer, LabelOracle, LabelRecord, LabelStore, OracleReply, Provenance, Query, QueryBatch};
use crate::error::{Error, Result};

/// A series the annotator can browse; `t` in the API is the row index of `values`.
#[derive(Debug, Clone)]
pub struct SeriesView {
    pub id: String,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Progress {
    pub episode: usize,
    pub episodes: usize,
    pub n_al: usize,
    pub k_lp: usize,
}

#[derive(Debug, Default)]
struct Queue {
    pending: Vec<Query>,
    answered: Vec<(String, usize, Answer)>,
}

/// State shared between the trainer and the HTTP handlers.
#[derive(Debug)]
pub struct AnnotationHub {
    pub store: Arc<LabelStore>,
    series: BTreeMap<String, SeriesView>,
    queue: Mutex<Queue>,
    changed: Condvar,
    progress: Mutex<Progress>,
}

impl AnnotationHub {
    pub fn new(store: Arc<LabelStore>, series: Vec<SeriesView>) -> Self {
        Self {
            store,
            series: series.into_iter().map(|s| (s.id.clone(), s)).collect(),
            queue: Mutex::new(Queue::default()),
            changed: Condvar::new(),
            progress: Mutex::new(Progress::default()),
        }
    }

    pub fn set_progress(&self, p: Progress) {
        *self.progress.lock() = p;
    }

    /// Adds queries not already pending.
    pub fn publish(&self, batch: &QueryBatch) {
        let mut q = self.queue.lock();
        for query in &batch.queries {
            if !q.pending.iter().any(|p| p.series == query.series && p.t == query.t) {
                q.pending.push(query.clone());
            }
        }
        q.pending.sort_by(|a, b| a.margin.total_cmp(&b.margin).then_with(|| a.series.cmp(&b.series)).then(a.t.cmp(&b.t)));
    }

    pub fn pending(&self) -> Vec<Query> {
        self.queue.lock().pending.clone()
    }

    /// Resolves one pending query. Labels land in the store immediately with human provenance.
    pub fn submit(&self, series: &str, t: usize, answer: Answer) -> std::result::Result<(), SubmitError> {
        if !self.series.contains_key(series) {
            return Err(SubmitError::UnknownSeries);
        }
        let mut q = self.queue.lock();
        let pos = q.pending.iter().position(|p| p.series == series && p.t == t).ok_or(SubmitError::NotPending)?;
        if let Answer::Label(label) = answer {
            if label > 1 {
                return Err(SubmitError::BadLabel);
            }
            self.store
                .insert(LabelRecord::new(series, t, label, Provenance::Human, 1.0))
                .map_err(|_| SubmitError::BadLabel)?;
        }
        q.pending.remove(pos);
        q.answered.push((series.to_string(), t, answer));
        self.changed.notify_all();
        Ok(())
    }

    /// Waits until nothing is pending or `wait` elapses, then drains the answers.
    pub fn collect(&self, wait: Duration) -> OracleReply {
        let deadline = Instant::now() + wait;
        let mut q = self.queue.lock();
        while !q.pending.is_empty() {
            if self.changed.wait_until(&mut q, deadline).timed_out() {
                break;
            }
        }
        OracleReply { answers: std::mem::take(&mut q.answered), pending: q.pending.len() }
    }

    fn status(&self) -> Value {
        let p = self.progress.lock().clone();
        let counts = self.store.counts();
        let q = self.queue.lock();
        json!({
            "episode": p.episode,
            "episodes": p.episodes,
            "n_al": p.n_al,
            "k_lp": p.k_lp,
            "pending": q.pending.len(),
            "answered_unconsumed": q.answered.len(),
            "labels": {
                "human": counts.get(&Provenance::Human).copied().unwrap_or(0),
                "ground_truth": counts.get(&Provenance::GroundTruth).copied().unwrap_or(0),
                "propagated": counts.get(&Provenance::Propagated).copied().unwrap_or(0),
            },
            "series": self.series.keys().collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitError {
    UnknownSeries,
    NotPending,
    BadLabel,
}

/// Oracle that hands queries to the annotation service.
#[derive(Debug, Clone)]
pub struct ServiceOracle {
    pub hub: Arc<AnnotationHub>,
    pub wait: Duration,
}

impl LabelOracle for ServiceOracle {
    fn provenance(&self) -> Provenance {
        Provenance::Human
    }

    fn answer(&self, batch: &QueryBatch) -> Result<OracleReply> {
        self.hub.publish(batch);
        Ok(self.hub.collect(self.wait))
    }
}

#[derive(Clone)]
struct AppState {
    hub: Arc<AnnotationHub>,
    ui_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    series: String,
    t: usize,
    label: Answer,
}

#[derive(Debug, Deserialize)]
struct RangeParams {
    from: Option<usize>,
    to: Option<usize>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn get_queries(State(st): State<AppState>) -> Json<Vec<Query>> {
    Json(st.hub.pending())
}

async fn post_label(State(st): State<AppState>, body: std::result::Result<Json<LabelBody>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    match st.hub.submit(&body.series, body.t, body.label) {
        Ok(()) => Json(json!({ "series": body.series, "t": body.t, "label": body.label })).into_response(),
        Err(SubmitError::UnknownSeries) => error(StatusCode::NOT_FOUND, format!("unknown series {}", body.series)),
        Err(SubmitError::NotPending) => error(StatusCode::CONFLICT, format!("{}@{} is not a pending query", body.series, body.t)),
        Err(SubmitError::BadLabel) => error(StatusCode::BAD_REQUEST, "label must be 0, 1 or \"skip\""),
    }
}

async fn get_series(State(st): State<AppState>, UrlPath(id): UrlPath<String>, UrlQuery(range): UrlQuery<RangeParams>) -> Response {
    let Some(s) = st.hub.series.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown series {id}"));
    };
    let len = s.values.nrows();
    let from = range.from.unwrap_or(0).min(len);
    let to = range.to.unwrap_or(len).clamp(from, len);
    let values: Vec<Vec<f64>> = (from..to).map(|t| s.values.row(t).to_vec()).collect();
    let labels = st.hub.store.view(&id, from, to - from);
    Json(json!({ "series": id, "from": from, "to": to, "values": values, "labels": labels })).into_response()
}

async fn get_status(State(st): State<AppState>) -> Json<Value> {
    Json(st.hub.status())
}

const FALLBACK_PAGE: &str = "<!doctype html><title>annotation</title><p>No UI bundle configured. API: \
<code>/api/queries</code>, <code>/api/labels</code>, <code>/api/series/{id}</code>, <code>/api/status</code>.</p>";

async fn static_files(State(st): State<AppState>, uri: Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let Some(dir) = &st.ui_dir else {
        return if rel == "index.html" { Html(FALLBACK_PAGE).into_response() } else { error(StatusCode::NOT_FOUND, "not found") };
    };
    if Path::new(rel).components().any(|c| !matches!(c, Component::Normal(_))) {
        return error(StatusCode::NOT_FOUND, "not found");
    }
    match std::fs::read(dir.join(rel)) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(rel))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "not found"),
    }
}

fn content_type(path: &str) -> &'static str {
    match Path::new(path).extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

pub fn router(hub: Arc<AnnotationHub>, ui_dir: Option<PathBuf>) -> Router {
    Router::new()
        .route("/api/queries", get(get_queries))
        .route("/api/labels", post(post_label))
        .route("/api/series/{id}", get(get_series))
        .route("/api/status", get(get_status))
        .fallback(static_files)
        .with_state(AppState { hub, ui_dir })
}

/// A service running on its own thread; dropping the handle stops it.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in a background thread.
pub fn spawn(hub: Arc<AnnotationHub>, addr: &str, ui_dir: Option<PathBuf>) -> Result<ServiceHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(Error::Io)?;
    let app = router(hub, ui_dir);
    let thread = std::thread::Builder::new().name("annotation-service".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(std_listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("annotation service failed to start: {e}");
                    return;
                }
            };
            let served = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = served.await {
                log::error!("annotation service stopped: {e}");
            }
        });
    })?;
    log::info!("annotation service listening on http://{local}");
    Ok(ServiceHandle { addr: local, shutdown: Some(tx), thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hub() -> AnnotationHub {
        let store = Arc::new(LabelStore::new());
        AnnotationHub::new(store, vec![SeriesView { id: "s".into(), values: Array2::zeros((10, 1)) }])
    }

    fn batch(ts: &[usize]) -> QueryBatch {
        QueryBatch {
            queries: ts.iter().map(|&t| Query { series: "s".into(), t, margin: 1.0 / (t + 1) as f64, window: vec![] }).collect(),
            budget: ts.len(),
        }
    }

    #[test]
    fn submit_resolves_only_pending_queries() {
        let h = hub();
        h.publish(&batch(&[3, 4]));
        h.publish(&batch(&[4]));
        assert_eq!(h.pending().iter().map(|q| q.t).collect::<Vec<_>>(), vec![4, 3]);
        assert_eq!(h.submit("s", 5, Answer::Label(1)), Err(SubmitError::NotPending));
        assert_eq!(h.submit("x", 3, Answer::Label(1)), Err(SubmitError::UnknownSeries));
        assert_eq!(h.submit("s", 3, Answer::Label(7)), Err(SubmitError::BadLabel));
        h.submit("s", 3, Answer::Label(1)).unwrap();
        h.submit("s", 4, Answer::SKIP).unwrap();
        assert_eq!(h.submit("s", 3, Answer::Label(0)), Err(SubmitError::NotPending));
        assert_eq!(h.store.get("s", 3).unwrap().provenance, Provenance::Human);
        assert!(h.store.get("s", 4).is_none());
        let reply = h.collect(Duration::ZERO);
        assert_eq!(reply.answers.len(), 2);
        assert_eq!(reply.pending, 0);
        assert!(h.collect(Duration::ZERO).answers.is_empty());
    }

    #[test]
    fn collect_times_out_with_pending_work() {
        let h = hub();
        h.publish(&batch(&[1, 2]));
        let start = Instant::now();
        let reply = h.collect(Duration::from_millis(30));
        assert!(start.elapsed() >= Duration::from_millis(30));
        assert_eq!(reply.pending, 2);
    }
}
