//! Independent reference implementations used to check the engine.
//!
//! Nothing here calls the algorithms under test: geodetic inversion uses
//! Heikkinen's closed form, ray hits use Moller-Trumbore over every
//! triangle, planes are built from their strike and dip, and box membership
//! is tested face by face.
#![allow(dead_code)]

use fieldwork_core::geodesy::{EnuFrame, GeodeticCoord, WGS84_A, WGS84_F};
use fieldwork_core::measure::ClipBox;
use fieldwork_core::spatial::{Bvh, NodeKind, Ray};
use fieldwork_core::tileset::TriangleMesh;
use fieldwork_core::EcefVec;
use nalgebra::Vector3;

/// Closed-form ECEF to geodetic (Heikkinen 1982), returns degrees and meters.
pub fn heikkinen(x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    let a = WGS84_A;
    let b = a * (1.0 - WGS84_F);
    let e2 = 1.0 - (b * b) / (a * a);
    let ep2 = (a * a) / (b * b) - 1.0;
    let p = (x * x + y * y).sqrt();
    let big_f = 54.0 * b * b * z * z;
    let g = p * p + (1.0 - e2) * z * z - e2 * (a * a - b * b);
    let c = e2 * e2 * big_f * p * p / (g * g * g);
    let s = (1.0 + c + (c * c + 2.0 * c).sqrt()).cbrt();
    let k = s + 1.0 + 1.0 / s;
    let pp = big_f / (3.0 * k * k * g * g);
    let q = (1.0 + 2.0 * e2 * e2 * pp).sqrt();
    let r0 = -(pp * e2 * p) / (1.0 + q)
        + (0.5 * a * a * (1.0 + 1.0 / q) - pp * (1.0 - e2) * z * z / (q * (1.0 + q)) - 0.5 * pp * p * p)
            .max(0.0)
            .sqrt();
    let u = ((p - e2 * r0).powi(2) + z * z).sqrt();
    let v = ((p - e2 * r0).powi(2) + (1.0 - e2) * z * z).sqrt();
    let z0 = b * b * z / (a * v);
    let h = u * (1.0 - b * b / (a * v));
    let lat = (z + ep2 * z0).atan2(p);
    let lon = y.atan2(x);
    (lat.to_degrees(), lon.to_degrees(), h)
}

/// Textbook forward transform from the prime vertical radius of curvature.
pub fn textbook_ecef(lat_deg: f64, lon_deg: f64, h: f64) -> [f64; 3] {
    let a = WGS84_A;
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let phi = lat_deg.to_radians();
    let lam = lon_deg.to_radians();
    let n = a / (1.0 - e2 * phi.sin().powi(2)).sqrt();
    [(n + h) * phi.cos() * lam.cos(), (n + h) * phi.cos() * lam.sin(), (n * (1.0 - e2) + h) * phi.sin()]
}

/// Brute-force closest hit: (t, mesh id, triangle index).
///
/// Each triangle is shifted into ray-origin-relative coordinates before the
/// Moller-Trumbore test, which keeps its precision independent of ECEF
/// magnitudes.
pub fn brute_force_hit(meshes: &[TriangleMesh], ray: &Ray) -> Option<(f64, u32, u32)> {
    let mut best: Option<(f64, u32, u32)> = None;
    for (m, mesh) in meshes.iter().enumerate() {
        let shift = mesh.tile_origin.to_vector() - ray.origin.to_vector();
        for (t, idx) in mesh.indices.iter().enumerate() {
            let [a, b, c] = idx.map(|i| shift + mesh.positions[i as usize]);
            if let Some(dist) = moller_trumbore(&ray.direction, &a, &b, &c) {
                if dist <= ray.t_max {
                    let cand = (dist, m as u32, t as u32);
                    best = match best {
                        Some(cur) if cur.0 <= dist => Some(cur),
                        _ => Some(cand),
                    };
                }
            }
        }
    }
    best
}

/// Two-sided Moller-Trumbore with the ray starting at the origin.
pub fn moller_trumbore(dir: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = -a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    (t >= 0.0).then_some(t)
}

/// Three points, centered on the local origin, spanning the plane with the
/// given strike (right-hand rule) and dip, `arm_m` from the center.
pub fn plane_points(strike_deg: f64, dip_deg: f64, arm_m: f64) -> [Vector3<f64>; 3] {
    let s = strike_deg.to_radians();
    let d = dip_deg.to_radians();
    let dd = s + std::f64::consts::FRAC_PI_2;
    let along = Vector3::new(s.sin(), s.cos(), 0.0);
    let down_dip = Vector3::new(d.cos() * dd.sin(), d.cos() * dd.cos(), -d.sin());
    [along * arm_m, -along * (arm_m / 2.0) + down_dip * arm_m, -along * (arm_m / 2.0) - down_dip * arm_m]
}

/// Geodetic coordinates of local ENU points.
pub fn to_geodetic(frame: &EnuFrame, pts: &[Vector3<f64>]) -> Vec<GeodeticCoord> {
    pts.iter()
        .map(|p| {
            let e = frame.to_ecef(p);
            let (lat, lon, h) = heikkinen(e.x, e.y, e.z);
            GeodeticCoord::new(lat, lon, h).unwrap()
        })
        .collect()
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Box membership from six separate face tests: four vertical planes through
/// the box edges and two ellipsoidal height limits.
pub fn inside_box_by_faces(b: &ClipBox, p: &EcefVec) -> bool {
    let anchor = b.frame.origin.to_vector();
    let q = p.to_vector();
    let u_far = anchor + b.axis_u * b.width_m;
    let v_far = anchor + b.axis_v * b.length_m;
    let faces = [(anchor, b.axis_u), (u_far, -b.axis_u), (anchor, b.axis_v), (v_far, -b.axis_v)];
    let (_, _, h) = heikkinen(q.x, q.y, q.z);
    faces.iter().all(|(point, normal)| (q - point).dot(normal) >= 0.0) && h >= b.h_min_m && h <= b.h_max_m
}

/// Structural audit of a BVH: every triangle referenced exactly once, every
/// child box inside its parent, every leaf box containing its triangles.
pub fn audit_bvh(bvh: &Bvh) -> Result<(), String> {
    let nodes = bvh.nodes();
    let meshes = bvh.meshes();
    let total: usize = meshes.iter().map(|m| m.triangle_count()).sum();
    let mut seen = vec![Vec::<bool>::new(); meshes.len()];
    for (m, mesh) in meshes.iter().enumerate() {
        seen[m] = vec![false; mesh.triangle_count()];
    }
    let mut referenced = 0usize;
    let mut reached = vec![false; nodes.len()];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if reached[i] {
            return Err(format!("node {i} reached twice"));
        }
        reached[i] = true;
        let node = &nodes[i];
        match node.kind {
            NodeKind::Interior { left, right } => {
                for c in [left as usize, right as usize] {
                    if c >= nodes.len() {
                        return Err(format!("node {i} child {c} out of range"));
                    }
                    if !node.aabb.padded(1e-9).contains(&nodes[c].aabb) {
                        return Err(format!("node {c} escapes parent {i}"));
                    }
                    stack.push(c);
                }
            }
            NodeKind::Leaf { first, count } => {
                if count == 0 || count as usize > fieldwork_core::spatial::MAX_LEAF_SIZE {
                    return Err(format!("leaf {i} holds {count} triangles"));
                }
                for r in &bvh.refs()[first as usize..(first + count) as usize] {
                    let slot = &mut seen[r.mesh_id as usize][r.triangle as usize];
                    if *slot {
                        return Err(format!("triangle {r:?} referenced twice"));
                    }
                    *slot = true;
                    referenced += 1;
                    for v in meshes[r.mesh_id as usize].triangle_world(r.triangle as usize) {
                        if !node.aabb.padded(1e-9).contains_point(&v.to_vector()) {
                            return Err(format!("leaf {i} does not contain {r:?}"));
                        }
                    }
                }
            }
        }
    }
    if referenced != total {
        return Err(format!("{referenced} of {total} triangles referenced"));
    }
    if let Some(i) = reached.iter().position(|r| !r) {
        return Err(format!("node {i} unreachable"));
    }
    Ok(())
}
