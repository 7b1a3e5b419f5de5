use fieldwork_core::fixtures::{self, GridSpec};
use fieldwork_core::geodesy::{enu_frame_at, GeodeticCoord};
use fieldwork_core::measure::MarkerId;
use fieldwork_core::scene::{SceneHandle, TerrainScene, TilesetId};
use fieldwork_core::session::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use serde_json::Value;

fn site() -> GeodeticCoord {
    GeodeticCoord::new(39.74, -105.0, 1600.0).unwrap()
}

fn scene() -> std::sync::Arc<TerrainScene> {
    let handle = SceneHandle::new();
    let spec = GridSpec { site: site(), half_extent_m: 300.0, cells: 30, tiles: 2 };
    handle.register_meshes("flat.json", fixtures::flat_terrain(&spec)).unwrap();
    handle.snapshot()
}

const VALIDATE_PY: &str = r#"
import json, sys
from jsonschema import Draft202012Validator
schema = json.load(open(sys.argv[1]))
Draft202012Validator.check_schema(schema)
v = Draft202012Validator(schema)
bad = 0
for i, doc in enumerate(json.load(open(sys.argv[2]))):
    for e in v.iter_errors(doc):
        bad += 1
        print(i, e.json_path, e.message)
sys.exit(1 if bad else 0)
"#;

/// Validates documents with the Python `jsonschema` package, an
/// implementation independent of ours. Returns the reported violations.
fn schema_violations(docs: &[Vec<u8>]) -> String {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    let batch = dir.path().join("docs.json");
    std::fs::write(&schema, SCHEMA_JSON).unwrap();
    let values: Vec<Value> = docs.iter().map(|d| serde_json::from_slice(d).unwrap()).collect();
    std::fs::write(&batch, serde_json::to_vec(&values).unwrap()).unwrap();
    let out = std::process::Command::new("python3")
        .arg("-c")
        .arg(VALIDATE_PY)
        .arg(&schema)
        .arg(&batch)
        .output()
        .expect("python3 with jsonschema is required for schema checks");
    assert!(out.stderr.is_empty(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_valid_all(docs: &[Vec<u8>]) {
    let v = schema_violations(docs);
    assert!(v.is_empty(), "{v}");
}

#[derive(Debug, Clone)]
enum Op {
    Marker(f64, f64, f64),
    Distance(Vec<usize>),
    StrikeDip([usize; 3]),
    ClipBox([usize; 3]),
    Hide(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (-250.0f64..250.0, -250.0f64..250.0, -30.0f64..30.0).prop_map(|(e, n, h)| Op::Marker(e, n, h)),
        2 => prop::collection::vec(0usize..1000, 2..6).prop_map(Op::Distance),
        1 => prop::array::uniform3(0usize..1000).prop_map(Op::StrikeDip),
        1 => prop::array::uniform3(0usize..1000).prop_map(Op::ClipBox),
        1 => (0usize..1000).prop_map(Op::Hide),
    ]
}

/// Replays `ops`, ignoring measurement errors, up to the marker and
/// measurement caps.
fn build(ops: &[Op], scene: &TerrainScene) -> Session {
    let frame = enu_frame_at(&site());
    let mut s = Session::new();
    s.add_tileset(TilesetId(1), "flat.json");
    let pick = |s: &Session, k: usize| s.markers()[k % s.markers().len()].id;
    for op in ops {
        let n = s.markers().len();
        match op {
            Op::Marker(e, nn, h) if n < 100 => {
                s.add_marker(fixtures::draped(&frame, *e, *nn, site().height_m + h));
            }
            _ if n == 0 || s.measurements().len() >= 30 => {}
            Op::Distance(ks) => {
                let ids: Vec<MarkerId> = ks.iter().map(|&k| pick(&s, k)).collect();
                let _ = s.measure_distance(&ids);
            }
            Op::StrikeDip(ks) => {
                let ids = ks.map(|k| pick(&s, k));
                let _ = s.measure_strike_dip(&ids);
            }
            Op::ClipBox(ks) => {
                let ids = ks.map(|k| pick(&s, k));
                let _ = s.measure_clip_box(&ids, scene);
            }
            Op::Hide(k) => {
                let id = pick(&s, *k);
                s.set_label_visible(id, false).unwrap();
            }
            _ => {}
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_identity(ops in prop::collection::vec(op(), 0..220)) {
        let scene = scene();
        let s = build(&ops, &scene);
        let bytes = export_session(&s);
        let imported = import_session(&bytes, &scene).unwrap();
        prop_assert!(imported.warnings.is_empty(), "{:?}", imported.warnings);
        prop_assert_eq!(&imported.session, &s);
        prop_assert_eq!(export_session(&imported.session), bytes);
    }
}

#[test]
fn randomized_documents_validate_against_schema() {
    let scene = scene();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let docs: Vec<Vec<u8>> = (0..40)
        .map(|_| {
            let ops = prop::collection::vec(op(), 0..200).new_tree(&mut runner).unwrap().current();
            export_session(&build(&ops, &scene))
        })
        .collect();
    assert_valid_all(&docs);
}

fn three_markers_and_distance() -> (Session, std::sync::Arc<TerrainScene>) {
    let scene = scene();
    let frame = enu_frame_at(&site());
    let mut s = Session::new();
    let ids: Vec<MarkerId> = [(0.0, 0.0, 0.0), (100.0, 0.0, 12.0), (100.0, 80.0, -3.0)]
        .iter()
        .map(|&(e, n, h)| s.add_marker(fixtures::draped(&frame, e, n, site().height_m + h)).id)
        .collect();
    s.measure_distance(&ids).unwrap();
    (s, scene)
}

#[test]
fn small_session_document_validates() {
    let (mut s, scene) = three_markers_and_distance();
    let first = export_session(&s);
    let ids: Vec<MarkerId> = s.markers().iter().map(|m| m.id).collect();
    s.measure_strike_dip(&ids).unwrap();
    s.measure_clip_box(&ids, &scene).unwrap();
    assert_valid_all(&[first, export_session(&s), export_session(&Session::new())]);
}

#[test]
fn schema_rejects_tampered_documents() {
    let (s, _) = three_markers_and_distance();
    let doc: Value = serde_json::from_slice(&export_session(&s)).unwrap();
    let mut extra = doc.clone();
    extra["markers"][0]["colour"] = "red".into();
    let mut lat = doc.clone();
    lat["markers"][0]["lat_deg"] = 91.0.into();
    let mut kind = doc.clone();
    kind["measurements"][0]["type"] = "area".into();
    let mut results = doc;
    results["measurements"][0]["results"] = serde_json::json!({ "dip_deg": 3.0 });
    let docs: Vec<Vec<u8>> = [extra, lat, kind, results].iter().map(|d| serde_json::to_vec(d).unwrap()).collect();
    let v = schema_violations(&docs);
    for i in 0..4 {
        assert!(v.lines().any(|l| l.starts_with(&format!("{i} "))), "doc {i} accepted: {v}");
    }
}

#[test]
fn export_is_deterministic_and_full_precision() {
    let (s, _) = three_markers_and_distance();
    let a = export_session(&s);
    assert_eq!(a, export_session(&s));
    let doc: SessionDocument = serde_json::from_slice(&a).unwrap();
    for (m, r) in s.markers().iter().zip(&doc.markers) {
        assert_eq!(m.position.latitude_deg.to_bits(), r.lat_deg.to_bits());
        assert_eq!(m.position.longitude_deg.to_bits(), r.lon_deg.to_bits());
        assert_eq!(m.position.height_m.to_bits(), r.height_m.to_bits());
    }
}

#[test]
fn hand_edited_dip_is_stale() {
    let (mut s, scene) = three_markers_and_distance();
    let ids: Vec<MarkerId> = s.markers().iter().map(|m| m.id).collect();
    let (m, _) = s.measure_strike_dip(&ids).unwrap();
    let mut doc: Value = serde_json::from_slice(&export_session(&s)).unwrap();
    let rec = doc["measurements"].as_array_mut().unwrap().iter_mut().find(|r| r["id"] == m.id.0).unwrap();
    let true_dip = rec["results"]["dip_deg"].as_f64().unwrap();
    rec["results"]["dip_deg"] = (true_dip + 3.0).into();
    let out = import_session(&serde_json::to_vec(&doc).unwrap(), &scene).unwrap();
    assert!(out.has_stale_results());
    assert_eq!(out.warnings, vec![ImportWarning::StaleResults { measurement: m.id, fields: vec!["dip_deg".into()] }]);
    // the recomputed value wins
    assert_eq!(out.session, s);
}

#[test]
fn tiny_edits_are_not_stale() {
    let (s, scene) = three_markers_and_distance();
    let mut doc: Value = serde_json::from_slice(&export_session(&s)).unwrap();
    let total = doc["measurements"][0]["results"]["total_m"].as_f64().unwrap();
    doc["measurements"][0]["results"]["total_m"] = (total * (1.0 + 1e-9)).into();
    let out = import_session(&serde_json::to_vec(&doc).unwrap(), &scene).unwrap();
    assert!(out.warnings.is_empty());
}

#[test]
fn import_errors() {
    let (s, scene) = three_markers_and_distance();
    let mut doc: Value = serde_json::from_slice(&export_session(&s)).unwrap();

    let mut dangling = doc.clone();
    dangling["measurements"][0]["marker_ids"][1] = 99.into();
    assert_eq!(
        import_session(&serde_json::to_vec(&dangling).unwrap(), &scene).unwrap_err(),
        SessionError::DanglingMarkerRef { measurement: 1, marker: 99 }
    );

    let mut future = doc.clone();
    future["schema_version"] = 7.into();
    assert_eq!(
        import_session(&serde_json::to_vec(&future).unwrap(), &scene).unwrap_err(),
        SessionError::UnknownVersion(7)
    );

    let mut dup = doc.clone();
    dup["markers"][1]["id"] = 1.into();
    assert!(matches!(
        import_session(&serde_json::to_vec(&dup).unwrap(), &scene),
        Err(SessionError::SchemaViolation(_))
    ));

    doc["markers"][0]["lat_deg"] = "north".into();
    assert!(matches!(
        import_session(&serde_json::to_vec(&doc).unwrap(), &scene),
        Err(SessionError::SchemaViolation(_))
    ));
}

#[test]
fn clip_box_kept_when_scene_is_empty() {
    let (mut s, scene) = three_markers_and_distance();
    let ids: Vec<MarkerId> = s.markers().iter().map(|m| m.id).collect();
    let b = s.measure_clip_box(&ids, &scene).unwrap();
    let out = import_session(&export_session(&s), &TerrainScene::default()).unwrap();
    assert_eq!(out.warnings.len(), 1);
    assert!(matches!(&out.warnings[0], ImportWarning::NotRecomputed { measurement, .. } if *measurement == b.id));
    assert_eq!(out.session, s);
}

#[test]
fn ids_continue_after_import() {
    let (s, scene) = three_markers_and_distance();
    let mut out = import_session(&export_session(&s), &scene).unwrap().session;
    let m = out.add_marker(site());
    assert_eq!(m.id, MarkerId(4));
    let d = out.measure_distance(&[MarkerId(1), MarkerId(4)]).unwrap();
    assert_eq!(d.id, MeasurementId(2));
}
