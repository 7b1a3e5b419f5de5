mod oracle;

use std::sync::Arc;

use fieldwork_core::fixtures::{self, GridSpec};
use fieldwork_core::geodesy::{ecef_delta_to_engine, enu_frame_at, EngineOrigin, GeodeticCoord};
use fieldwork_core::measure::*;
use fieldwork_core::scene::SceneHandle;
use fieldwork_core::session::Session;
use fieldwork_core::spatial::Ray;
use fieldwork_core::EcefVec;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn site() -> GeodeticCoord {
    GeodeticCoord::new(-23.55, -46.63, 760.0).unwrap()
}

/// (strike, dip) pairs with strike following the right-hand rule.
const PLANES: [(f64, f64); 12] = [
    (90.0, 45.0), // dips 45 degrees toward the south
    (0.0, 30.0),
    (45.0, 10.0),
    (123.4, 67.8),
    (180.0, 5.0),
    (200.0, 85.0),
    (270.0, 60.0),
    (315.0, 22.5),
    (359.0, 1.0),
    (12.0, 0.5),
    (300.0, 89.0),
    (77.7, 33.3),
];

fn plane_markers(strike: f64, dip: f64, arm: f64) -> Vec<GeodeticCoord> {
    oracle::to_geodetic(&enu_frame_at(&site()), &oracle::plane_points(strike, dip, arm))
}

#[test]
fn analytic_planes() {
    for (strike, dip) in PLANES {
        let m = plane_markers(strike, dip, 40.0);
        let r = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
        assert!(!r.horizontal);
        assert!(oracle::angle_diff(r.strike_azimuth_deg, strike) < 1e-6, "{strike}/{dip}: {r:?}");
        assert!((r.dip_deg - dip).abs() < 1e-6, "{strike}/{dip}: {r:?}");
        assert!(oracle::angle_diff(r.dip_direction_deg, strike + 90.0) < 1e-6);
        assert!(oracle::angle_diff(r.dip_direction_deg, r.strike_azimuth_deg + 90.0) < 1e-9);
    }
}

#[test]
fn forty_five_degrees_south() {
    let m = plane_markers(90.0, 45.0, 40.0);
    let r = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
    assert!((r.dip_direction_deg - 180.0).abs() < 1e-6);
    assert!((r.strike_azimuth_deg - 90.0).abs() < 1e-6);
    assert!((r.dip_deg - 45.0).abs() < 1e-6);
}

#[test]
fn all_permutations_agree() {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for (strike, dip) in PLANES {
        let m = plane_markers(strike, dip, 25.0);
        let base = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
        for p in PERMS {
            let r = strike_dip([&m[p[0]], &m[p[1]], &m[p[2]]]).unwrap();
            assert!(oracle::angle_diff(r.strike_azimuth_deg, base.strike_azimuth_deg) < 1e-9);
            assert!(oracle::angle_diff(r.dip_direction_deg, base.dip_direction_deg) < 1e-9);
            assert!((r.dip_deg - base.dip_deg).abs() < 1e-9);
            assert_eq!(r.extent_m, base.extent_m);
            assert_eq!(r.horizontal, base.horizontal);
        }
    }
}

#[test]
fn horizontal_flag() {
    let frame = enu_frame_at(&site());
    let pts = [Vector3::new(10.0, 0.0, 0.0), Vector3::new(-5.0, 8.0, 0.0), Vector3::new(-5.0, -8.0, 0.0)];
    let m = oracle::to_geodetic(&frame, &pts);
    let r = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
    assert!(r.horizontal);
    assert!(r.dip_deg < 1e-6);
    assert_eq!((r.strike_azimuth_deg, r.dip_direction_deg), (0.0, 0.0));

    // just under and just over the threshold
    for (dip, flagged) in [(0.009, true), (0.011, false)] {
        let m = plane_markers(30.0, dip, 50.0);
        assert_eq!(strike_dip([&m[0], &m[1], &m[2]]).unwrap().horizontal, flagged, "{dip}");
    }
}

#[test]
fn extent_is_max_pairwise_distance() {
    let frame = enu_frame_at(&site());
    let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 1.0)];
    let m = oracle::to_geodetic(&frame, &pts);
    let r = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
    assert!((r.extent_m - 3f64.sqrt()).abs() < 1e-8);
}

#[test]
fn collinear_and_coincident_markers() {
    let frame = enu_frame_at(&site());
    let line = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(3.0, 4.0, 1.0), Vector3::new(6.0, 8.0, 2.0)];
    let m = oracle::to_geodetic(&frame, &line);
    assert!(matches!(strike_dip([&m[0], &m[1], &m[2]]), Err(MeasureError::CollinearMarkers(_))));
    assert!(matches!(strike_dip([&m[0], &m[0], &m[1]]), Err(MeasureError::CollinearMarkers(_))));
}

#[test]
fn translation_moves_dip_by_less_than_threshold() {
    let frame = enu_frame_at(&site());
    for (strike, dip) in PLANES {
        let pts = oracle::plane_points(strike, dip, 200.0);
        let m = oracle::to_geodetic(&frame, &pts);
        let shifted: Vec<Vector3<f64>> = pts.iter().map(|p| p + Vector3::new(1000.0, 0.0, 0.0)).collect();
        let s = oracle::to_geodetic(&frame, &shifted);
        let a = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
        let b = strike_dip([&s[0], &s[1], &s[2]]).unwrap();
        assert!((a.dip_deg - b.dip_deg).abs() < 0.01, "{strike}/{dip}");
    }
}

#[test]
fn distance_examples() {
    let frame = enu_frame_at(&site());
    let m = oracle::to_geodetic(&frame, &[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]);
    let r = polyline_distance(&m).unwrap();
    assert!((r.total_m - 1.0).abs() < 1e-9);
    // the two markers share a height up to tangent-plane curvature (~1e-7 m)
    assert!(r.segments[0].elevation_diff_m.abs() < 1e-6);
    let origin = EngineOrigin::at(&site());
    let d = m[1].to_ecef().to_vector() - m[0].to_ecef().to_vector();
    let units = ecef_delta_to_engine(&d, &origin).to_vector().norm();
    assert!((units - 100.0).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn distance_properties(pts in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0, -50.0f64..50.0), 2..12)) {
        let frame = enu_frame_at(&site());
        let local: Vec<Vector3<f64>> = pts.iter().map(|&(e, n, u)| Vector3::new(e, n, u)).collect();
        let m = oracle::to_geodetic(&frame, &local);
        let r = polyline_distance(&m).unwrap();
        prop_assert_eq!(r.segments.len(), m.len() - 1);
        let chord = m[0].to_ecef().distance(&m[m.len() - 1].to_ecef());
        prop_assert!(r.total_m >= chord - 1e-9);
        let sum: f64 = r.segments.iter().map(|s| s.distance_m).sum();
        prop_assert!((sum - r.total_m).abs() < 1e-9);
        let dh: f64 = r.segments.iter().map(|s| s.elevation_diff_m).sum();
        prop_assert!((dh - (m[m.len() - 1].height_m - m[0].height_m)).abs() < 1e-9);

        // the same path in engine units, divided by 100
        let origin = EngineOrigin::at(&site());
        let engine_total: f64 = m
            .windows(2)
            .map(|w| {
                let d = w[1].to_ecef().to_vector() - w[0].to_ecef().to_vector();
                ecef_delta_to_engine(&d, &origin).to_vector().norm()
            })
            .sum();
        prop_assert!((engine_total / 100.0 - r.total_m).abs() <= 1e-9 * r.total_m.max(1e-300));
    }

    #[test]
    fn permutation_invariance_random(
        strike in 0.0f64..360.0,
        dip in 0.05f64..89.9,
        arm in 1.0f64..300.0,
    ) {
        let m = plane_markers(strike, dip, arm);
        let a = strike_dip([&m[0], &m[1], &m[2]]).unwrap();
        let b = strike_dip([&m[2], &m[0], &m[1]]).unwrap();
        let c = strike_dip([&m[1], &m[0], &m[2]]).unwrap();
        for r in [b, c] {
            prop_assert!(oracle::angle_diff(r.strike_azimuth_deg, a.strike_azimuth_deg) < 1e-9);
            prop_assert!((r.dip_deg - a.dip_deg).abs() < 1e-9);
        }
        prop_assert!((a.dip_deg - dip).abs() < 1e-6);
        prop_assert!(oracle::angle_diff(a.strike_azimuth_deg, strike) < 1e-6);
    }
}

fn flat_scene(site: GeodeticCoord, half: f64, cells: usize) -> SceneHandle {
    let handle = SceneHandle::new();
    let spec = GridSpec { site, half_extent_m: half, cells, tiles: 2 };
    handle.register_meshes("flat", fixtures::flat_terrain(&spec)).unwrap();
    handle
}

#[test]
fn marker_from_vertical_ray_on_flat_fixture() {
    let s = site();
    let handle = flat_scene(s, 200.0, 40);
    let scene = handle.snapshot();
    let frame = enu_frame_at(&s);
    let mut session = Session::new();
    for (e, n) in [(0.0, 0.0), (37.2, -81.9), (-150.0, 120.5)] {
        let target = fixtures::draped(&frame, e, n, s.height_m);
        let ray = fixtures::vertical_ray(&frame, e, n, s.height_m + 500.0);
        let marker = place_marker(&scene, &ray, &mut session).unwrap();
        assert!((marker.position.latitude_deg - target.latitude_deg).abs() < 1e-6);
        assert!((marker.position.longitude_deg - target.longitude_deg).abs() < 1e-6);
        assert!((marker.position.height_m - target.height_m).abs() < 1e-3);
        assert!(marker.label_visible);
    }
    // same point twice gives two markers
    let ray = fixtures::vertical_ray(&frame, 1.0, 1.0, 1000.0);
    let a = place_marker(&scene, &ray, &mut session).unwrap();
    let b = place_marker(&scene, &ray, &mut session).unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!(a.position, b.position);
    // a ray pointing away from the ground misses
    let up = Ray::unbounded(ray.origin, -ray.direction).unwrap();
    assert_eq!(place_marker(&scene, &up, &mut session), Err(MeasureError::NoHit));
}

#[test]
fn clip_box_over_flat_plane() {
    let s = GeodeticCoord { height_m: 0.0, ..site() };
    let handle = flat_scene(s, 200.0, 40);
    let scene = handle.snapshot();
    let frame = enu_frame_at(&s);
    let m1 = fixtures::draped(&frame, -50.0, -20.0, 0.0);
    let m2 = fixtures::draped(&frame, 50.0, -20.0, 0.0);
    let m3 = fixtures::draped(&frame, -50.0, 30.0, 0.0);
    let b = clip_box_from_markers([&m1, &m2, &m3], &scene).unwrap();
    assert!((b.width_m - 100.0).abs() < 1e-3);
    assert!((b.length_m - 50.0).abs() < 1e-3);
    assert!(b.h_min_m.abs() < 1e-3 && b.h_max_m.abs() < 1e-3);
    // axes: u east, v north
    assert!((b.axis_u - frame.east).norm() < 1e-4);
    assert!((b.axis_v - frame.north).norm() < 1e-4);

    let on_line = fixtures::draped(&frame, 10.0, -20.0, 0.0);
    assert!(matches!(clip_box_from_markers([&m1, &m2, &on_line], &scene), Err(MeasureError::DegenerateBox(_))));
}

#[test]
fn point_in_clipbox_matches_face_tests() {
    let s = GeodeticCoord::new(64.1, -21.9, 30.0).unwrap();
    let frame = enu_frame_at(&s);
    let mut b = {
        let handle = flat_scene(s, 300.0, 30);
        let scene = handle.snapshot();
        let m1 = fixtures::draped(&frame, -40.0, 10.0, 30.0);
        let m2 = fixtures::draped(&frame, 60.0, 80.0, 30.0);
        let m3 = fixtures::draped(&frame, -90.0, 100.0, 30.0);
        clip_box_from_markers([&m1, &m2, &m3], &scene).unwrap()
    };
    // give the box some height so the height faces matter
    b.h_min_m = 20.0;
    b.h_max_m = 45.0;
    let center_local = b.axis_u * (b.width_m / 2.0) + b.axis_v * (b.length_m / 2.0);
    let center_ground = EcefVec::from(b.frame.origin.to_vector() + center_local);
    let g = center_ground.to_geodetic().unwrap();
    let center = GeodeticCoord { height_m: 32.5, ..g }.to_ecef();
    assert!(point_in_clipbox(&b, &center));
    let outside = EcefVec::from(b.frame.origin.to_vector() - b.axis_u * 1.0 + b.axis_v * 5.0);
    assert!(!point_in_clipbox(&b, &outside));

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut inside = 0;
    for _ in 0..10_000 {
        let local = Vector3::new(
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(-20.0..60.0),
        );
        let p = frame.to_ecef(&local);
        let ours = point_in_clipbox(&b, &p);
        assert_eq!(ours, oracle::inside_box_by_faces(&b, &p), "{local:?}");
        inside += ours as usize;
    }
    assert!(inside > 150, "{inside}");
}

#[test]
fn crater_rim_to_rim_and_clip_box() {
    let spec = fixtures::crater_spec();
    let handle = SceneHandle::new();
    handle.register_meshes("crater", fixtures::crater_terrain()).unwrap();
    let scene = handle.snapshot();
    let frame = spec.frame();
    let cell = spec.cell_size_m();
    let mut session = Session::new();
    let west = place_marker(&scene, &fixtures::vertical_ray(&frame, -1250.0, 0.0, 1000.0), &mut session).unwrap();
    let east = place_marker(&scene, &fixtures::vertical_ray(&frame, 1250.0, 0.0, 1000.0), &mut session).unwrap();
    let d = polyline_distance(&[west.position, east.position]).unwrap();
    assert!((d.total_m - 2500.0).abs() <= cell, "{}", d.total_m);

    let m1 = fixtures::draped(&frame, -1300.0, -1300.0, 0.0);
    let m2 = fixtures::draped(&frame, 1300.0, -1300.0, 0.0);
    let m3 = fixtures::draped(&frame, 0.0, 1300.0, 0.0);
    let b = clip_box_from_markers([&m1, &m2, &m3], &scene).unwrap();
    assert!((b.h_min_m + 500.0).abs() <= cell, "{}", b.h_min_m);
    assert!(b.h_max_m.abs() <= cell, "{}", b.h_max_m);
}

#[test]
fn scene_handle_snapshots_are_stable() {
    let handle = SceneHandle::new();
    let before = handle.snapshot();
    assert!(!before.has_geometry());
    let id = handle.register_meshes("a", fixtures::flat_terrain(&fixtures::flat_spec(site()))).unwrap();
    assert!(!before.has_geometry());
    let after = handle.snapshot();
    assert!(after.has_geometry());
    assert_eq!(after.tilesets()[0].id, id);
    let id2 = handle.register_meshes("a", fixtures::flat_terrain(&fixtures::flat_spec(site()))).unwrap();
    assert_ne!(id, id2);
    assert!(Arc::strong_count(&after) >= 1);
}
