use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, RawPathParams, Request, State};
use axum::http::header::{HeaderMap, HeaderValue, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use fieldwork_core::measure::MarkerId;
use fieldwork_core::scene::TilesetId;
use fieldwork_core::session::{export_session, import_session};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::api::*;
use crate::error::ApiError;
use crate::events::{EventKind, SessionEvent};
use crate::mesh::{encode_glb, ORIGIN_ECEF_HEADER, ORIGIN_GEODETIC_HEADER};
use crate::state::{ApiSession, AppState};

type AppRef = Arc<AppState>;

pub const EVENT_SEQ_HEADER: &str = "x-fieldwork-event-seq";

/// JSON body whose rejections use the `{code, message}` error shape.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let axum::Json(v) = axum::Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(v))
    }
}

fn json<T: serde::Serialize>(status: StatusCode, v: &T) -> Response {
    (status, axum::Json(v)).into_response()
}

/// The session a request addresses: `/sessions/{sid}/...` or the default.
pub struct Sess(pub Arc<ApiSession>);

impl FromRequestParts<AppRef> for Sess {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppRef) -> Result<Self, ApiError> {
        let params =
            RawPathParams::from_request_parts(parts, state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        match params.iter().find(|(k, _)| *k == "sid") {
            Some((_, sid)) => Ok(Sess(state.session(sid)?)),
            None => Ok(Sess(state.default_session())),
        }
    }
}

#[derive(Deserialize)]
struct IdParam {
    id: u64,
}

type IdPath = Result<Path<IdParam>, PathRejection>;

fn path_id(p: IdPath) -> Result<u64, ApiError> {
    Ok(p?.0.id)
}

fn session_routes() -> Router<AppRef> {
    Router::new()
        .route("/tilesets", post(register_tileset).get(list_tilesets))
        .route("/tilesets/{id}/meshes", get(tileset_meshes))
        .route("/raycast", post(raycast))
        .route("/markers", post(add_marker).get(list_markers))
        .route("/markers/{id}", get(get_marker).patch(patch_marker))
        .route("/measurements", get(list_measurements))
        .route("/measurements/distance", post(measure_distance))
        .route("/measurements/strike-dip", post(measure_strike_dip))
        .route("/measurements/clip-box", post(measure_clip_box))
        .route("/session", get(get_session).put(put_session))
        .route("/events", get(events))
        .route("/status", get(status))
}

pub fn router(state: AppRef) -> Router {
    let routes = session_routes();
    Router::new()
        .merge(routes.clone())
        .nest("/sessions/{sid}", routes)
        .route("/sessions", post(create_session).get(list_sessions))
        .fallback(|| async { ApiError::not_found("NotFound", "no such endpoint") })
        .with_state(state)
}

async fn register_tileset(
    State(app): State<AppRef>,
    Sess(sess): Sess,
    ApiJson(body): ApiJson<RegisterTileset>,
) -> Result<Response, ApiError> {
    let app2 = app.clone();
    let id = tokio::task::spawn_blocking(move || app2.register_tileset(&sess, &body.uri))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let info = TilesetInfo::from_scene(&app.snapshot(), id).expect("just registered");
    Ok(json(StatusCode::CREATED, &info))
}

async fn list_tilesets(State(app): State<AppRef>) -> Response {
    let scene = app.snapshot();
    let list: Vec<TilesetInfo> =
        scene.tilesets().iter().filter_map(|t| TilesetInfo::from_scene(&scene, t.id)).collect();
    json(StatusCode::OK, &list)
}

async fn tileset_meshes(State(app): State<AppRef>, id: IdPath) -> Result<Response, ApiError> {
    let id = TilesetId(path_id(id)?);
    let scene = app.snapshot();
    let t = scene.tileset(id).ok_or_else(|| ApiError::not_found("UnknownTileset", format!("no tileset {id}")))?;
    let meshes = scene.meshes()[t.mesh_range.clone()].to_vec();
    let encoded = tokio::task::spawn_blocking(move || encode_glb(&meshes))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    let (origin, glb) = encoded.ok_or_else(|| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "EmptyScene", format!("tileset {id} has no triangles"))
    })?;
    let mut headers = HeaderMap::new();
    headers.insert(CONTENT_TYPE, HeaderValue::from_static("model/gltf-binary"));
    headers.insert(ORIGIN_ECEF_HEADER, HeaderValue::from_str(&origin.ecef_header()).expect("ascii"));
    headers.insert(ORIGIN_GEODETIC_HEADER, HeaderValue::from_str(&origin.geodetic_header()).expect("ascii"));
    // chunked so large scenes start flowing before the client has it all
    let chunks: Vec<Result<Bytes, Infallible>> = glb.chunks(1 << 16).map(|c| Ok(Bytes::copy_from_slice(c))).collect();
    Ok((headers, Body::from_stream(stream::iter(chunks))).into_response())
}

async fn raycast(State(app): State<AppRef>, ApiJson(body): ApiJson<RayBody>) -> Result<Response, ApiError> {
    let ray = body.to_ray()?;
    let hit = app.snapshot().raycast(&ray).ok_or(fieldwork_core::measure::MeasureError::NoHit)?;
    Ok(json(StatusCode::OK, &HitBody::new(&hit)?))
}

async fn add_marker(
    State(app): State<AppRef>,
    Sess(sess): Sess,
    ApiJson(req): ApiJson<MarkerRequest>,
) -> Result<Response, ApiError> {
    // resolve against the current snapshot outside the session lock
    let position = req.resolve(&app.snapshot())?;
    let marker = sess.mutate(|s| {
        let m = marker_record(&s.add_marker(position));
        Ok((m.clone(), vec![EventKind::MarkerAdded { marker: m }]))
    })?;
    Ok(json(StatusCode::CREATED, &marker))
}

async fn list_markers(Sess(sess): Sess) -> Response {
    let list: Vec<_> = sess.read(|s| s.markers().iter().map(marker_record).collect());
    json(StatusCode::OK, &list)
}

fn unknown_marker(id: u64) -> ApiError {
    fieldwork_core::measure::MeasureError::UnknownMarker(MarkerId(id)).into()
}

async fn get_marker(Sess(sess): Sess, id: IdPath) -> Result<Response, ApiError> {
    let id = path_id(id)?;
    let m = sess.read(|s| s.marker(MarkerId(id)).map(marker_record)).ok_or_else(|| unknown_marker(id))?;
    Ok(json(StatusCode::OK, &m))
}

async fn patch_marker(Sess(sess): Sess, id: IdPath, ApiJson(patch): ApiJson<LabelPatch>) -> Result<Response, ApiError> {
    let id = path_id(id)?;
    let m = sess.mutate(|s| {
        let before = s.marker(MarkerId(id)).map(|m| m.label_visible);
        let m = marker_record(&s.set_label_visible(MarkerId(id), patch.label_visible)?);
        let events = if before == Some(patch.label_visible) {
            vec![]
        } else {
            vec![EventKind::MarkerUpdated { marker: m.clone() }]
        };
        Ok((m, events))
    })?;
    Ok(json(StatusCode::OK, &m))
}

async fn list_measurements(Sess(sess): Sess) -> Response {
    let list: Vec<_> = sess.read(|s| s.measurements().iter().map(measurement_record).collect());
    json(StatusCode::OK, &list)
}

async fn measure_distance(Sess(sess): Sess, ApiJson(body): ApiJson<MarkerIds>) -> Result<Response, ApiError> {
    let r = sess.mutate(|s| {
        let rec = measurement_record(&s.measure_distance(&body.marker_ids)?);
        Ok((rec.clone(), vec![EventKind::MeasurementAdded { measurement: rec }]))
    })?;
    Ok(json(StatusCode::CREATED, &MeasurementResponse { record: r, hidden_labels: vec![] }))
}

async fn measure_strike_dip(Sess(sess): Sess, ApiJson(body): ApiJson<MarkerIds>) -> Result<Response, ApiError> {
    let r = sess.mutate(|s| {
        let (m, changed) = s.measure_strike_dip(&body.marker_ids)?;
        let rec = measurement_record(&m);
        let mut events = vec![EventKind::MeasurementAdded { measurement: rec.clone() }];
        events.extend(changed.iter().map(|mk| EventKind::MarkerUpdated { marker: marker_record(mk) }));
        let hidden = changed.iter().map(|mk| mk.id).collect();
        Ok((MeasurementResponse { record: rec, hidden_labels: hidden }, events))
    })?;
    Ok(json(StatusCode::CREATED, &r))
}

async fn measure_clip_box(
    State(app): State<AppRef>,
    Sess(sess): Sess,
    ApiJson(body): ApiJson<MarkerIds>,
) -> Result<Response, ApiError> {
    let scene = app.snapshot();
    let r = sess.mutate(|s| {
        let rec = measurement_record(&s.measure_clip_box(&body.marker_ids, &scene)?);
        Ok((rec.clone(), vec![EventKind::MeasurementAdded { measurement: rec }]))
    })?;
    Ok(json(StatusCode::CREATED, &MeasurementResponse { record: r, hidden_labels: vec![] }))
}

async fn get_session(Sess(sess): Sess) -> Response {
    // seq and document read under one lock so they describe the same state
    let (seq, body) = sess.read_with_seq(export_session);
    let mut headers = HeaderMap::new();
    headers.insert(CONTENT_TYPE, HeaderValue::from_static("application/json"));
    headers.insert(EVENT_SEQ_HEADER, HeaderValue::from(seq));
    (headers, body).into_response()
}

async fn put_session(State(app): State<AppRef>, Sess(sess): Sess, body: Bytes) -> Result<Response, ApiError> {
    let out = import_session(&body, &app.snapshot())?;
    let resp = ImportResponse {
        markers: out.session.markers().len(),
        measurements: out.session.measurements().len(),
        stale_results: out.has_stale_results(),
        warnings: out.warnings.clone(),
    };
    sess.mutate(|s| {
        *s = out.session;
        Ok(((), vec![EventKind::SessionReplaced { markers: resp.markers, measurements: resp.measurements }]))
    })?;
    Ok(json(StatusCode::OK, &resp))
}

#[derive(Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

fn sse_event(ev: &SessionEvent) -> Event {
    Event::default().id(ev.seq.to_string()).event(ev.kind.name()).json_data(ev).expect("events serialize")
}

/// Server-sent events. Replays events after `?since=` or `Last-Event-ID`
/// (default: none) and then follows live mutations in applied order.
async fn events(
    Sess(sess): Sess,
    headers: HeaderMap,
    query: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let last_id = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse::<u64>().ok());
    let since = query?.0.since.or(last_id).unwrap_or_else(|| sess.event_seq());
    let guard = sess.client_guard();
    let (backlog, rx) = sess.subscribe(since);
    let replay = stream::iter(backlog).map(|ev| Ok(sse_event(&ev)));
    let live = stream::unfold((rx, guard), |(mut rx, guard)| async move {
        let ev = match rx.recv().await {
            Ok(ev) => sse_event(&ev),
            // the client must resync from GET /session
            Err(RecvError::Lagged(n)) => Event::default().event("lagged").data(n.to_string()),
            Err(RecvError::Closed) => return None,
        };
        Some((Ok(ev), (rx, guard)))
    });
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::default()))
}

async fn status(State(app): State<AppRef>, Sess(sess): Sess) -> Response {
    let (seq, (markers, measurements, tilesets)) =
        sess.read_with_seq(|s| (s.markers().len(), s.measurements().len(), s.tilesets().len()));
    json(
        StatusCode::OK,
        &SessionStatus {
            session_id: sess.id.clone(),
            clients: sess.clients(),
            event_seq: seq,
            markers,
            measurements,
            tilesets,
            scene_triangles: app.snapshot().triangle_count(),
        },
    )
}

async fn create_session(State(app): State<AppRef>) -> Result<Response, ApiError> {
    let s = app.create_session()?;
    Ok(json(StatusCode::CREATED, &SessionCreated { session_id: s.id.clone() }))
}

async fn list_sessions(State(app): State<AppRef>) -> Response {
    json(StatusCode::OK, &app.session_ids())
}
