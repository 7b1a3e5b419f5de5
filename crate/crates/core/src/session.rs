//! Measurement sessions and their JSON document form.
//!
//! Exported documents are deterministic: keys follow struct order, lists
//! follow creation order and floats are written with shortest round-trip
//! precision. On import every stored result is recomputed from the marker
//! positions; the recomputed value is kept and disagreements are reported
//! as [`ImportWarning::StaleResults`].

use chrono::{DateTime, SecondsFormat, Utc};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::geodesy::{enu_frame_at, GeodeticCoord};
use crate::measure::{self, ClipBox, Marker, MarkerId, MeasureError, PolylineDistanceResult, StrikeDipResult};
use crate::scene::{TerrainScene, TilesetId};

pub const SCHEMA_VERSION: u64 = 1;
pub const FILE_EXTENSION: &str = ".vfsession.json";
/// The published JSON schema for [`SessionDocument`].
pub const SCHEMA_JSON: &str = include_str!("../schema/session.schema.json");

const STALE_RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("document does not match the session schema: {0}")]
    SchemaViolation(String),
    #[error("unsupported schema_version {0}")]
    UnknownVersion(u64),
    #[error("measurement {measurement} references missing marker {marker}")]
    DanglingMarkerRef { measurement: u64, marker: u64 },
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::SchemaViolation(_) => "SchemaViolation",
            SessionError::UnknownVersion(_) => "UnknownVersion",
            SessionError::DanglingMarkerRef { .. } => "DanglingMarkerRef",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementId(pub u64);

impl std::fmt::Display for MeasurementId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Distance,
    StrikeDip,
    ClipBox,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementResult {
    Distance(PolylineDistanceResult),
    StrikeDip(StrikeDipResult),
    ClipBox(ClipBox),
}

impl MeasurementResult {
    pub fn kind(&self) -> MeasurementKind {
        match self {
            MeasurementResult::Distance(_) => MeasurementKind::Distance,
            MeasurementResult::StrikeDip(_) => MeasurementKind::StrikeDip,
            MeasurementResult::ClipBox(_) => MeasurementKind::ClipBox,
        }
    }

    pub fn to_json(&self) -> Value {
        let v = match self {
            MeasurementResult::Distance(r) => serde_json::to_value(r),
            MeasurementResult::StrikeDip(r) => serde_json::to_value(r),
            MeasurementResult::ClipBox(b) => serde_json::to_value(ClipBoxRecord::from(b)),
        };
        v.expect("result records serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub id: MeasurementId,
    pub marker_ids: Vec<MarkerId>,
    pub result: MeasurementResult,
}

impl Measurement {
    pub fn kind(&self) -> MeasurementKind {
        self.result.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilesetRef {
    pub id: TilesetId,
    pub uri: String,
}

/// Markers and measurements of one field party, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Session {
    tilesets: Vec<TilesetRef>,
    markers: Vec<Marker>,
    measurements: Vec<Measurement>,
    last_marker_id: u64,
    last_measurement_id: u64,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tilesets(&self) -> &[TilesetRef] {
        &self.tilesets
    }

    pub fn add_tileset(&mut self, id: TilesetId, uri: impl Into<String>) {
        self.tilesets.push(TilesetRef { id, uri: uri.into() });
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn marker(&self, id: MarkerId) -> Option<&Marker> {
        // ids are assigned in increasing order
        self.markers.binary_search_by_key(&id, |m| m.id).ok().map(|i| &self.markers[i])
    }

    pub fn measurement(&self, id: MeasurementId) -> Option<&Measurement> {
        self.measurements.iter().find(|m| m.id == id)
    }

    pub fn add_marker(&mut self, position: GeodeticCoord) -> Marker {
        self.last_marker_id += 1;
        let marker =
            Marker { id: MarkerId(self.last_marker_id), position, label_visible: true, created_at: Utc::now() };
        self.markers.push(marker.clone());
        marker
    }

    pub fn set_label_visible(&mut self, id: MarkerId, visible: bool) -> Result<Marker, MeasureError> {
        let i = self.markers.binary_search_by_key(&id, |m| m.id).map_err(|_| MeasureError::UnknownMarker(id))?;
        self.markers[i].label_visible = visible;
        Ok(self.markers[i].clone())
    }

    fn positions(&self, ids: &[MarkerId]) -> Result<Vec<GeodeticCoord>, MeasureError> {
        ids.iter().map(|&id| self.marker(id).map(|m| m.position).ok_or(MeasureError::UnknownMarker(id))).collect()
    }

    fn three(&self, ids: &[MarkerId]) -> Result<[GeodeticCoord; 3], MeasureError> {
        if ids.len() != 3 {
            return Err(MeasureError::WrongMarkerCount { expected: 3, got: ids.len() });
        }
        let p = self.positions(ids)?;
        Ok([p[0], p[1], p[2]])
    }

    fn record(&mut self, marker_ids: &[MarkerId], result: MeasurementResult) -> Measurement {
        self.last_measurement_id += 1;
        let m = Measurement { id: MeasurementId(self.last_measurement_id), marker_ids: marker_ids.to_vec(), result };
        self.measurements.push(m.clone());
        m
    }

    pub fn measure_distance(&mut self, ids: &[MarkerId]) -> Result<Measurement, MeasureError> {
        if ids.len() < 2 {
            return Err(MeasureError::TooFewMarkers(ids.len()));
        }
        let r = measure::polyline_distance(&self.positions(ids)?)?;
        Ok(self.record(ids, MeasurementResult::Distance(r)))
    }

    /// Records a strike & dip measurement and hides the labels of all but
    /// the first-placed of its markers. Returns the markers whose label
    /// state changed.
    pub fn measure_strike_dip(&mut self, ids: &[MarkerId]) -> Result<(Measurement, Vec<Marker>), MeasureError> {
        let p = self.three(ids)?;
        let r = measure::strike_dip([&p[0], &p[1], &p[2]])?;
        let m = self.record(ids, MeasurementResult::StrikeDip(r));
        let mut sorted = ids.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut changed = Vec::new();
        for &id in &sorted[1..] {
            if self.marker(id).is_some_and(|mk| mk.label_visible) {
                changed.push(self.set_label_visible(id, false)?);
            }
        }
        Ok((m, changed))
    }

    pub fn measure_clip_box(&mut self, ids: &[MarkerId], scene: &TerrainScene) -> Result<Measurement, MeasureError> {
        let p = self.three(ids)?;
        let b = measure::clip_box_from_markers([&p[0], &p[1], &p[2]], scene)?;
        Ok(self.record(ids, MeasurementResult::ClipBox(b)))
    }

    pub fn to_document(&self) -> SessionDocument {
        SessionDocument {
            schema_version: SCHEMA_VERSION,
            tilesets: self.tilesets.clone(),
            markers: self.markers.iter().map(MarkerRecord::from).collect(),
            measurements: self
                .measurements
                .iter()
                .map(|m| MeasurementRecord {
                    id: m.id,
                    kind: m.kind(),
                    marker_ids: m.marker_ids.clone(),
                    results: m.result.to_json(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionDocument {
    pub schema_version: u64,
    pub tilesets: Vec<TilesetRef>,
    pub markers: Vec<MarkerRecord>,
    pub measurements: Vec<MeasurementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerRecord {
    pub id: MarkerId,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
    pub label_visible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

impl From<&Marker> for MarkerRecord {
    fn from(m: &Marker) -> Self {
        Self {
            id: m.id,
            lat_deg: m.position.latitude_deg,
            lon_deg: m.position.longitude_deg,
            height_m: m.position.height_m,
            label_visible: m.label_visible,
            created_at: Some(m.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRecord {
    pub id: MeasurementId,
    #[serde(rename = "type")]
    pub kind: MeasurementKind,
    pub marker_ids: Vec<MarkerId>,
    pub results: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodeticRecord {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
}

/// Wire form of a [`ClipBox`]; the ENU frame is implied by the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipBoxRecord {
    pub anchor: GeodeticRecord,
    pub axis_u_ecef: [f64; 3],
    pub axis_v_ecef: [f64; 3],
    pub width_m: f64,
    pub length_m: f64,
    pub h_min_m: f64,
    pub h_max_m: f64,
}

impl From<&ClipBox> for ClipBoxRecord {
    fn from(b: &ClipBox) -> Self {
        Self {
            anchor: GeodeticRecord {
                lat_deg: b.anchor.latitude_deg,
                lon_deg: b.anchor.longitude_deg,
                height_m: b.anchor.height_m,
            },
            axis_u_ecef: b.axis_u.into(),
            axis_v_ecef: b.axis_v.into(),
            width_m: b.width_m,
            length_m: b.length_m,
            h_min_m: b.h_min_m,
            h_max_m: b.h_max_m,
        }
    }
}

impl ClipBoxRecord {
    pub fn to_clip_box(&self) -> Result<ClipBox, SessionError> {
        let anchor = GeodeticCoord::new(self.anchor.lat_deg, self.anchor.lon_deg, self.anchor.height_m)
            .map_err(|e| SessionError::SchemaViolation(format!("clip box anchor: {e}")))?;
        Ok(ClipBox {
            anchor,
            frame: enu_frame_at(&anchor),
            axis_u: Vector3::from(self.axis_u_ecef),
            axis_v: Vector3::from(self.axis_v_ecef),
            width_m: self.width_m,
            length_m: self.length_m,
            h_min_m: self.h_min_m,
            h_max_m: self.h_max_m,
        })
    }
}

/// Non-fatal findings of [`import_session`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code")]
pub enum ImportWarning {
    /// The stored result differs from the recomputed one, which was kept.
    StaleResults { measurement: MeasurementId, fields: Vec<String> },
    /// The result could not be recomputed (e.g. no geometry is loaded under
    /// a clip box); the stored value was kept.
    NotRecomputed { measurement: MeasurementId, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOutcome {
    pub session: Session,
    pub warnings: Vec<ImportWarning>,
}

impl ImportOutcome {
    pub fn has_stale_results(&self) -> bool {
        self.warnings.iter().any(|w| matches!(w, ImportWarning::StaleResults { .. }))
    }
}

pub fn export_session(session: &Session) -> Vec<u8> {
    export_document(&session.to_document())
}

pub fn export_document(doc: &SessionDocument) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("session documents serialize");
    out.push(b'\n');
    out
}

/// Parses and validates a session document, then rebuilds the session with
/// results recomputed against `scene`.
pub fn import_session(bytes: &[u8], scene: &TerrainScene) -> Result<ImportOutcome, SessionError> {
    let doc = parse_document(bytes)?;
    import_document(&doc, scene)
}

pub fn parse_document(bytes: &[u8]) -> Result<SessionDocument, SessionError> {
    let schema_err = |e: serde_json::Error| SessionError::SchemaViolation(e.to_string());
    let value: Value = serde_json::from_slice(bytes).map_err(schema_err)?;
    let version = match value.get("schema_version") {
        None => return Err(SessionError::SchemaViolation("missing schema_version".into())),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| SessionError::SchemaViolation("schema_version must be a non-negative integer".into()))?,
    };
    if version != SCHEMA_VERSION {
        return Err(SessionError::UnknownVersion(version));
    }
    serde_json::from_value(value).map_err(schema_err)
}

pub fn import_document(doc: &SessionDocument, scene: &TerrainScene) -> Result<ImportOutcome, SessionError> {
    let bad = |m: String| Err(SessionError::SchemaViolation(m));

    let mut tileset_ids = BTreeSet::new();
    for t in &doc.tilesets {
        if !tileset_ids.insert(t.id) {
            return bad(format!("duplicate tileset id {}", t.id));
        }
    }

    let mut markers: BTreeMap<MarkerId, Marker> = BTreeMap::new();
    for r in &doc.markers {
        let position = GeodeticCoord::new(r.lat_deg, r.lon_deg, r.height_m)
            .map_err(|e| SessionError::SchemaViolation(format!("marker {}: {e}", r.id)))?;
        let created_at = match &r.created_at {
            Some(s) => DateTime::parse_from_rfc3339(s)
                .map_err(|e| SessionError::SchemaViolation(format!("marker {} created_at: {e}", r.id)))?
                .with_timezone(&Utc),
            None => Utc::now(),
        };
        let marker = Marker { id: r.id, position, label_visible: r.label_visible, created_at };
        if markers.insert(r.id, marker).is_some() {
            return bad(format!("duplicate marker id {}", r.id));
        }
    }

    let mut seen = BTreeSet::new();
    for m in &doc.measurements {
        if !seen.insert(m.id) {
            return bad(format!("duplicate measurement id {}", m.id));
        }
        if let Some(missing) = m.marker_ids.iter().find(|id| !markers.contains_key(id)) {
            return Err(SessionError::DanglingMarkerRef { measurement: m.id.0, marker: missing.0 });
        }
    }

    let mut session = Session {
        tilesets: doc.tilesets.clone(),
        markers: markers.into_values().collect(),
        measurements: Vec::with_capacity(doc.measurements.len()),
        last_marker_id: 0,
        last_measurement_id: 0,
    };
    session.last_marker_id = session.markers.last().map_or(0, |m| m.id.0);
    session.last_measurement_id = doc.measurements.iter().map(|m| m.id.0).max().unwrap_or(0);

    let mut warnings = Vec::new();
    for rec in &doc.measurements {
        let (result, warning) = recompute(&session, rec, scene)?;
        warnings.extend(warning);
        session.measurements.push(Measurement { id: rec.id, marker_ids: rec.marker_ids.clone(), result });
    }
    Ok(ImportOutcome { session, warnings })
}

fn recompute(
    session: &Session,
    rec: &MeasurementRecord,
    scene: &TerrainScene,
) -> Result<(MeasurementResult, Option<ImportWarning>), SessionError> {
    let invalid = |e: String| SessionError::SchemaViolation(format!("measurement {}: {e}", rec.id));
    let ids = &rec.marker_ids;
    let positions = session.positions(ids).map_err(|e| invalid(e.to_string()))?;
    let stale = |fields: Vec<String>| {
        (!fields.is_empty()).then_some(ImportWarning::StaleResults { measurement: rec.id, fields })
    };
    match rec.kind {
        MeasurementKind::Distance => {
            let stored: PolylineDistanceResult =
                serde_json::from_value(rec.results.clone()).map_err(|e| invalid(e.to_string()))?;
            let fresh = measure::polyline_distance(&positions).map_err(|e| invalid(e.to_string()))?;
            let mut diff = Vec::new();
            check(&mut diff, "total_m", stored.total_m, fresh.total_m);
            if stored.segments.len() != fresh.segments.len() {
                diff.push("segments".into());
            } else {
                for (i, (a, b)) in stored.segments.iter().zip(&fresh.segments).enumerate() {
                    check(&mut diff, &format!("segments[{i}].distance_m"), a.distance_m, b.distance_m);
                    check(
                        &mut diff,
                        &format!("segments[{i}].elevation_diff_m"),
                        a.elevation_diff_m,
                        b.elevation_diff_m,
                    );
                }
            }
            Ok((MeasurementResult::Distance(fresh), stale(diff)))
        }
        MeasurementKind::StrikeDip => {
            let stored: StrikeDipResult =
                serde_json::from_value(rec.results.clone()).map_err(|e| invalid(e.to_string()))?;
            let [a, b, c] = three_of(&positions).map_err(invalid)?;
            let fresh = measure::strike_dip([&a, &b, &c]).map_err(|e| invalid(e.to_string()))?;
            let mut diff = Vec::new();
            check_angle(&mut diff, "strike_azimuth_deg", stored.strike_azimuth_deg, fresh.strike_azimuth_deg);
            check(&mut diff, "dip_deg", stored.dip_deg, fresh.dip_deg);
            check_angle(&mut diff, "dip_direction_deg", stored.dip_direction_deg, fresh.dip_direction_deg);
            check(&mut diff, "extent_m", stored.extent_m, fresh.extent_m);
            if stored.horizontal != fresh.horizontal {
                diff.push("horizontal".into());
            }
            Ok((MeasurementResult::StrikeDip(fresh), stale(diff)))
        }
        MeasurementKind::ClipBox => {
            let record: ClipBoxRecord =
                serde_json::from_value(rec.results.clone()).map_err(|e| invalid(e.to_string()))?;
            let stored = record.to_clip_box()?;
            let [a, b, c] = three_of(&positions).map_err(invalid)?;
            let fresh = match measure::clip_box_from_markers([&a, &b, &c], scene) {
                Ok(f) => f,
                Err(MeasureError::NoGeometry) => {
                    let reason = "no geometry under the box in the current scene".to_string();
                    let w = ImportWarning::NotRecomputed { measurement: rec.id, reason };
                    return Ok((MeasurementResult::ClipBox(stored), Some(w)));
                }
                Err(e) => return Err(invalid(e.to_string())),
            };
            let mut diff = Vec::new();
            for k in 0..3 {
                check(&mut diff, &format!("axis_u_ecef[{k}]"), stored.axis_u[k], fresh.axis_u[k]);
                check(&mut diff, &format!("axis_v_ecef[{k}]"), stored.axis_v[k], fresh.axis_v[k]);
            }
            check(&mut diff, "width_m", stored.width_m, fresh.width_m);
            check(&mut diff, "length_m", stored.length_m, fresh.length_m);
            check(&mut diff, "h_min_m", stored.h_min_m, fresh.h_min_m);
            check(&mut diff, "h_max_m", stored.h_max_m, fresh.h_max_m);
            let anchor = &record.anchor;
            let fresh_anchor = fresh.anchor;
            check(&mut diff, "anchor.lat_deg", anchor.lat_deg, fresh_anchor.latitude_deg);
            check_angle(&mut diff, "anchor.lon_deg", anchor.lon_deg, fresh_anchor.longitude_deg);
            check(&mut diff, "anchor.height_m", anchor.height_m, fresh_anchor.height_m);
            Ok((MeasurementResult::ClipBox(fresh), stale(diff)))
        }
    }
}

fn three_of(p: &[GeodeticCoord]) -> Result<[GeodeticCoord; 3], String> {
    match p {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected 3 markers, got {}", p.len())),
    }
}

fn differs(a: f64, b: f64) -> bool {
    !((a - b).abs() <= STALE_RELATIVE_TOLERANCE * a.abs().max(b.abs()).max(1.0))
}

fn check(diff: &mut Vec<String>, field: &str, stored: f64, fresh: f64) {
    if differs(stored, fresh) {
        diff.push(field.to_string());
    }
}

fn check_angle(diff: &mut Vec<String>, field: &str, stored: f64, fresh: f64) {
    let d = (stored - fresh).rem_euclid(360.0);
    let d = d.min(360.0 - d);
    if differs(d, 0.0) || !stored.is_finite() {
        diff.push(field.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_session_document() {
        let bytes = export_session(&Session::new());
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["markers"], Value::Array(vec![]));
        assert_eq!(v["measurements"], Value::Array(vec![]));
        assert_eq!(v["tilesets"], Value::Array(vec![]));
    }

    #[test]
    fn version_and_shape_errors() {
        let scene = TerrainScene::default();
        let doc = br#"{"schema_version": 2, "tilesets": [], "markers": [], "measurements": []}"#;
        assert_eq!(import_session(doc, &scene).unwrap_err(), SessionError::UnknownVersion(2));
        let doc = br#"{"tilesets": [], "markers": [], "measurements": []}"#;
        assert!(matches!(import_session(doc, &scene), Err(SessionError::SchemaViolation(_))));
        let doc = br#"{"schema_version": 1, "tilesets": [], "markers": {}, "measurements": []}"#;
        assert!(matches!(import_session(doc, &scene), Err(SessionError::SchemaViolation(_))));
        assert!(matches!(import_session(b"not json", &scene), Err(SessionError::SchemaViolation(_))));
    }

    #[test]
    fn dangling_marker() {
        let doc = br#"{"schema_version": 1, "tilesets": [],
            "markers": [{"id": 1, "lat_deg": 0, "lon_deg": 0, "height_m": 0, "label_visible": true}],
            "measurements": [{"id": 1, "type": "distance", "marker_ids": [1, 7],
                              "results": {"total_m": 0, "segments": [{"distance_m": 0, "elevation_diff_m": 0}]}}]}"#;
        assert_eq!(
            import_session(doc, &TerrainScene::default()).unwrap_err(),
            SessionError::DanglingMarkerRef { measurement: 1, marker: 7 }
        );
    }

    #[test]
    fn strike_dip_hides_later_labels() {
        let mut s = Session::new();
        let a = s.add_marker(GeodeticCoord::new(10.0, 10.0, 0.0).unwrap()).id;
        let b = s.add_marker(GeodeticCoord::new(10.001, 10.0, 5.0).unwrap()).id;
        let c = s.add_marker(GeodeticCoord::new(10.0, 10.001, 0.0).unwrap()).id;
        let (_, changed) = s.measure_strike_dip(&[c, a, b]).unwrap();
        assert_eq!(changed.iter().map(|m| m.id).collect::<Vec<_>>(), vec![b, c]);
        assert!(s.marker(a).unwrap().label_visible);
        assert!(!s.marker(b).unwrap().label_visible);
    }

    #[test]
    fn angle_comparison_wraps() {
        let mut d = Vec::new();
        check_angle(&mut d, "a", 359.99999999999, 0.0);
        assert!(d.is_empty());
        check_angle(&mut d, "a", 10.0, 0.0);
        assert_eq!(d, vec!["a".to_string()]);
    }
}
