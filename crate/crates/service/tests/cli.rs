use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use fieldwork_core::fixtures::{self, CRATER_DEPTH_M, CRATER_RADIUS_M};
use serde_json::{json, Value};

fn fieldwork() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fieldwork"))
}

fn run(args: &[&str]) -> Output {
    fieldwork().args(args).output().unwrap()
}

fn stdout_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Writes a named fixture through the CLI and returns its root path.
fn fixture(name: &str, dir: &Path) -> String {
    let out = stdout_ok(&["fixture", name, "--out", dir.to_str().unwrap()]);
    let root = out.trim().to_string();
    assert!(Path::new(&root).is_file(), "{root}");
    root
}

#[test]
fn inspect_minimal_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("minimal", dir.path());
    let text = stdout_ok(&["inspect", &root]);
    assert!(text.contains("selected   1 tile\n"), "{text}");
    assert!(text.contains("triangles  2\n"), "{text}");
    assert!(text.contains("(3D Tiles 1.0)"), "{text}");
}

#[test]
fn inspect_reports_tree_shape_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("add", dir.path());
    let r: Value = serde_json::from_str(&stdout_ok(&["inspect", &root, "--json"])).unwrap();
    assert_eq!(r["nodes_per_level"], json!([1, 4]));
    assert_eq!((r["selected_tiles"].as_u64(), r["triangles"].as_u64()), (Some(5), Some(34)));

    let dir = tempfile::tempdir().unwrap();
    let root = fixture("external", dir.path());
    let r: Value = serde_json::from_str(&stdout_ok(&["inspect", &root, "--json"])).unwrap();
    assert_eq!(r["external_documents"], 1);
    assert_eq!(r["triangles"], 4);
}

#[test]
fn measure_across_the_crater() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("crater", dir.path());
    let spec = fixtures::crater_spec();
    let frame = spec.frame();
    let at = |e: f64, n: f64| {
        let g = fixtures::draped(&frame, e, n, 0.0);
        json!({ "surface": { "lat_deg": g.latitude_deg, "lon_deg": g.longitude_deg } })
    };
    let script = json!({
        "markers": [
            at(-CRATER_RADIUS_M, 0.0), at(CRATER_RADIUS_M, 0.0),
            at(-1300.0, -1300.0), at(1300.0, -1300.0), at(0.0, 1300.0)
        ],
        "measurements": [
            { "type": "distance", "marker_ids": [1, 2] },
            { "type": "clip_box", "marker_ids": [3, 4, 5] }
        ]
    });
    let script_path = dir.path().join("script.json");
    std::fs::write(&script_path, serde_json::to_vec(&script).unwrap()).unwrap();
    let out_path = dir.path().join("session.json");
    let printed = stdout_ok(&["measure", "--tileset", &root, "--script", script_path.to_str().unwrap()]);
    stdout_ok(&[
        "measure",
        "--tileset",
        &root,
        "--script",
        script_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);

    let doc: Value = serde_json::from_str(&printed).unwrap();
    let cell = spec.cell_size_m();
    let total = doc["measurements"][0]["results"]["total_m"].as_f64().unwrap();
    assert!((total - 2.0 * CRATER_RADIUS_M).abs() <= cell, "{total}");
    let clip = &doc["measurements"][1]["results"];
    let (lo, hi) = (clip["h_min_m"].as_f64().unwrap(), clip["h_max_m"].as_f64().unwrap());
    assert!((lo + CRATER_DEPTH_M).abs() <= cell && hi.abs() <= cell, "{clip}");
    assert_eq!(doc["tilesets"][0]["uri"], root);

    // same document apart from marker timestamps
    let mut saved: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let mut printed = doc.clone();
    for d in [&mut saved, &mut printed] {
        for m in d["markers"].as_array_mut().unwrap() {
            m.as_object_mut().unwrap().remove("created_at");
        }
    }
    assert_eq!(saved, printed);
}

#[test]
fn measure_reads_stdin_and_reports_the_failing_step() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("flat", dir.path());
    let mut child = fieldwork()
        .args(["measure", "--tileset", &root, "--script", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let script = json!({ "measurements": [{ "type": "distance", "marker_ids": [1] }] });
    child.stdin.take().unwrap().write_all(script.to_string().as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: measurements[0]:") && err.contains("TooFewMarkers"), "{err}");
}

#[test]
fn bench_hits_every_ray_on_the_crater() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("crater", dir.path());
    for extra in [&[][..], &["--sequential"][..]] {
        let mut args = vec!["bench", "raycast", "--tileset", root.as_str(), "--rays", "1000", "--json"];
        args.extend_from_slice(extra);
        let r: Value = serde_json::from_str(&stdout_ok(&args)).unwrap();
        assert_eq!(r["rays"], 1000);
        assert_eq!(r["hits"], 1000);
        assert_eq!(r["triangles"], fixtures::crater_spec().triangle_count());
        assert_eq!(r["parallel"], extra.is_empty());
        let l = &r["latency"];
        assert!(l["min_us"].as_f64() <= l["p50_us"].as_f64() && l["p50_us"].as_f64() <= l["max_us"].as_f64());
    }
    let text = stdout_ok(&["bench", "raycast", "--synthetic", "20000", "--rays", "200"]);
    assert!(text.contains("hit rate 100.00%"), "{text}");
    assert!(text.contains("triangles  20000 in 64 meshes"), "{text}");
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope/tileset.json");
    let out = run(&["inspect", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Unreadable"));

    std::fs::write(dir.path().join("tileset.json"), b"{\"asset\": {\"version\": \"9.9\"}, \"root\": {}}").unwrap();
    let out = run(&["inspect", dir.path().join("tileset.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnsupportedVersion"));

    // clap usage errors
    assert_eq!(run(&["bench", "raycast"]).status.code(), Some(2));
    assert_eq!(run(&["fixture", "volcano", "--out", "x"]).status.code(), Some(2));
}

struct Served {
    child: Child,
    base: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(cmd: &mut Command) -> Served {
    let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line:?}")).to_string();
    Served { child, base }
}

async fn status(base: &str) -> Value {
    reqwest::get(format!("{base}/status")).await.unwrap().json().await.unwrap()
}

#[tokio::test]
async fn serve_preloads_tilesets_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixture("flat", dir.path());
    let s = serve(fieldwork().args(["serve", "--port", "0", "--tileset", &root]));
    let st = status(&s.base).await;
    assert_eq!((st["tilesets"].as_u64(), st["scene_triangles"].as_u64()), (Some(1), Some(800)));
    assert_eq!(st["event_seq"], 1);
}

#[tokio::test]
async fn serve_reads_port_from_env_and_config() {
    let dir = tempfile::tempdir().unwrap();
    fixture("minimal", &dir.path().join("data"));
    let conf: PathBuf = dir.path().join("fieldwork.conf");
    // the relative path resolves against the config's folder; the env
    // variable outranks the config's port
    std::fs::write(&conf, "port = 1\nmulti_session = true\ntileset = data/tileset.json\n").unwrap();
    let s = serve(fieldwork().args(["serve", "--config", conf.to_str().unwrap()]).env("FIELDWORK_PORT", "0"));
    assert_eq!(status(&s.base).await["scene_triangles"], 2);
    let r = reqwest::Client::new().post(format!("{}/sessions", s.base)).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 201);
}
