//! Ray and footprint queries over scene triangles.

mod aabb;
mod bvh;
mod ray;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geodesy::{ecef_to_geodetic, EnuFrame};

pub use aabb::Aabb;
pub use bvh::{Bvh, BvhNode, NodeKind, TriRef, MAX_LEAF_SIZE};
pub use ray::{Hit, Ray, TriangleCrossing, WatertightRay, DEFAULT_T_MAX};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("scene contains no triangles")]
    EmptyScene,
    #[error("no geometry under the footprint")]
    NoGeometry,
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("degenerate footprint: {0}")]
    DegenerateFootprint(String),
}

impl SpatialError {
    pub fn code(&self) -> &'static str {
        match self {
            SpatialError::EmptyScene => "EmptyScene",
            SpatialError::NoGeometry => "NoGeometry",
            SpatialError::InvalidRay(_) => "InvalidRay",
            SpatialError::DegenerateFootprint(_) => "DegenerateFootprint",
        }
    }
}

/// Horizontal rectangle anchored at the origin of an ENU frame, spanning
/// `[0, width] x [0, length]` along two perpendicular (east, north) axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub axis_u: Vector2<f64>,
    pub axis_v: Vector2<f64>,
    pub width_m: f64,
    pub length_m: f64,
}

impl Footprint {
    pub fn new(axis_u: Vector2<f64>, axis_v: Vector2<f64>, width_m: f64, length_m: f64) -> Result<Self, SpatialError> {
        let fp = Self { axis_u, axis_v, width_m, length_m };
        fp.validate()?;
        Ok(fp)
    }

    /// East-aligned rectangle.
    pub fn axis_aligned(width_m: f64, length_m: f64) -> Result<Self, SpatialError> {
        Self::new(Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0), width_m, length_m)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        let bad = |m: &str| Err(SpatialError::DegenerateFootprint(m.into()));
        if !(self.width_m > 0.0 && self.length_m > 0.0) || !self.width_m.is_finite() || !self.length_m.is_finite() {
            return bad("width and length must be positive");
        }
        if (self.axis_u.norm() - 1.0).abs() > 1e-9 || (self.axis_v.norm() - 1.0).abs() > 1e-9 {
            return bad("axes must be unit vectors");
        }
        if self.axis_u.dot(&self.axis_v).abs() > 1e-9 {
            return bad("axes must be perpendicular");
        }
        Ok(())
    }

    /// (u, v) coordinates of a horizontal (east, north) offset.
    pub fn project(&self, east_north: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(east_north.dot(&self.axis_u), east_north.dot(&self.axis_v))
    }
}

const FOOTPRINT_PAD_M: f64 = 1e-6;

/// Minimum and maximum ellipsoidal height of the scene surface whose
/// horizontal projection in `frame` falls inside `footprint`.
///
/// Each candidate triangle is clipped against the footprint prism, so the
/// range covers exactly the cut-out surface rather than whole triangles
/// that merely touch it.
pub fn elevation_range(bvh: &Bvh, footprint: &Footprint, frame: &EnuFrame) -> Result<(f64, f64), SpatialError> {
    footprint.validate()?;
    let rot = frame.rotation_to_local();
    let frame_origin = frame.origin.to_vector();
    let to_uv = |local: &Vector3<f64>| footprint.project(&Vector2::new(local.x, local.y));

    let node_overlaps = |b: &Aabb| {
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for c in b.corners() {
            let uv = to_uv(&(rot * (c - frame_origin)));
            lo = lo.inf(&uv);
            hi = hi.sup(&uv);
        }
        lo.x <= footprint.width_m + FOOTPRINT_PAD_M
            && hi.x >= -FOOTPRINT_PAD_M
            && lo.y <= footprint.length_m + FOOTPRINT_PAD_M
            && hi.y >= -FOOTPRINT_PAD_M
    };

    let mut range: Option<(f64, f64)> = None;
    let meshes = bvh.meshes();
    bvh.visit_triangles(node_overlaps, |r| {
        let mesh = &meshes[r.mesh_id as usize];
        let shift = rot * (mesh.tile_origin.to_vector() - frame_origin);
        let corners = mesh.triangle_local(r.triangle as usize).map(|p| shift + rot * p);
        let polygon = clip_to_footprint(&corners, footprint, &to_uv);
        for p in polygon {
            let Ok(g) = ecef_to_geodetic(&frame.to_ecef(&p)) else {
                continue;
            };
            range = Some(match range {
                None => (g.height_m, g.height_m),
                Some((lo, hi)) => (lo.min(g.height_m), hi.max(g.height_m)),
            });
        }
    });
    range.ok_or(SpatialError::NoGeometry)
}

type PlaneDistance<'a> = &'a dyn Fn(&Vector2<f64>) -> f64;

/// Sutherland-Hodgman clip of a triangle (ENU points) against the four
/// vertical half-spaces of the footprint.
fn clip_to_footprint(
    corners: &[Vector3<f64>; 3],
    fp: &Footprint,
    to_uv: &impl Fn(&Vector3<f64>) -> Vector2<f64>,
) -> Vec<Vector3<f64>> {
    let mut poly: Vec<Vector3<f64>> = corners.to_vec();
    // signed distance inside each plane, >= 0 keeps
    let planes: [PlaneDistance; 4] = [&|uv| uv.x, &|uv| fp.width_m - uv.x, &|uv| uv.y, &|uv| fp.length_m - uv.y];
    for plane in planes {
        if poly.is_empty() {
            break;
        }
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let da = plane(&to_uv(&a));
            let db = plane(&to_uv(&b));
            if da >= 0.0 {
                out.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                let s = da / (da - db);
                out.push(a + (b - a) * s);
            }
        }
        poly = out;
    }
    poly
}
