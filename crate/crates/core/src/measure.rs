//! Interpretation toolbox: markers, multi-segment distance, strike & dip and
//! clipping boxes.
//!
//! All geometry is evaluated in ECEF meters. "Horizontal" means the local
//! ENU tangent plane (at the markers' centroid for strike & dip, at the first
//! marker for clip boxes), and heights are WGS84 ellipsoidal heights.
//! Azimuths are clockwise from true north.

use chrono::{DateTime, Utc};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{ecef_to_geodetic, enu_frame_at, EcefVec, EnuFrame, GeodesyError, GeodeticCoord};
use crate::scene::TerrainScene;
use crate::spatial::{Footprint, Ray, SpatialError};

/// Triangles with less area than this (m²) are treated as collinear.
pub const EPS_AREA_M2: f64 = 1e-6;
/// Planes dipping less than this (degrees) are reported as horizontal.
pub const EPS_DIP_DEG: f64 = 0.01;
/// Minimum box width and length in meters.
pub const EPS_BOX_M: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("ray does not hit any geometry")]
    NoHit,
    #[error("need at least 2 markers, got {0}")]
    TooFewMarkers(usize),
    #[error("markers are collinear (triangle area {0:.3e} m²)")]
    CollinearMarkers(f64),
    #[error("degenerate clipping box: {0}")]
    DegenerateBox(String),
    #[error("unknown marker id {0}")]
    UnknownMarker(MarkerId),
    #[error("expected {expected} markers, got {got}")]
    WrongMarkerCount { expected: usize, got: usize },
    #[error("no geometry under the clipping box")]
    NoGeometry,
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

impl MeasureError {
    pub fn code(&self) -> &'static str {
        match self {
            MeasureError::NoHit => "NoHit",
            MeasureError::TooFewMarkers(_) => "TooFewMarkers",
            MeasureError::CollinearMarkers(_) => "CollinearMarkers",
            MeasureError::DegenerateBox(_) => "DegenerateBox",
            MeasureError::UnknownMarker(_) => "UnknownMarker",
            MeasureError::WrongMarkerCount { .. } => "WrongMarkerCount",
            MeasureError::NoGeometry => "NoGeometry",
            MeasureError::Geodesy(_) => "InvalidCoordinate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkerId(pub u64);

impl std::fmt::Display for MarkerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub id: MarkerId,
    pub position: GeodeticCoord,
    pub label_visible: bool,
    pub created_at: DateTime<Utc>,
}

impl Marker {
    pub fn ecef(&self) -> EcefVec {
        self.position.to_ecef()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub distance_m: f64,
    /// Signed: height of the later marker minus the earlier one.
    pub elevation_diff_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolylineDistanceResult {
    pub total_m: f64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrikeDipResult {
    pub strike_azimuth_deg: f64,
    pub dip_deg: f64,
    pub dip_direction_deg: f64,
    pub extent_m: f64,
    pub horizontal: bool,
}

/// Oriented box: a horizontal rectangle at the anchor spanning
/// `[0, width] x [0, length]` along `axis_u`, `axis_v`, extruded over the
/// ellipsoidal height range `[h_min, h_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBox {
    pub anchor: GeodeticCoord,
    pub frame: EnuFrame,
    /// Horizontal unit axes in ECEF components.
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    pub width_m: f64,
    pub length_m: f64,
    pub h_min_m: f64,
    pub h_max_m: f64,
}

impl ClipBox {
    /// (u, v) along the box axes and ellipsoidal height of a point.
    pub fn local_coords(&self, p: &EcefVec) -> Option<(f64, f64, f64)> {
        let d = p.to_vector() - self.frame.origin.to_vector();
        let h = ecef_to_geodetic(p).ok()?.height_m;
        Some((d.dot(&self.axis_u), d.dot(&self.axis_v), h))
    }

    pub fn footprint(&self) -> Footprint {
        let u = self.frame.direction_to_local(&self.axis_u);
        let v = self.frame.direction_to_local(&self.axis_v);
        Footprint {
            axis_u: Vector2::new(u.x, u.y),
            axis_v: Vector2::new(v.x, v.y),
            width_m: self.width_m,
            length_m: self.length_m,
        }
    }
}

/// Geodetic position of the closest surface point along `ray`.
pub fn surface_point(scene: &TerrainScene, ray: &Ray) -> Result<GeodeticCoord, MeasureError> {
    let hit = scene.raycast(ray).ok_or(MeasureError::NoHit)?;
    Ok(ecef_to_geodetic(&hit.point)?)
}

/// Casts `ray` into the scene and records a marker at the hit point.
pub fn place_marker(
    scene: &TerrainScene,
    ray: &Ray,
    session: &mut crate::session::Session,
) -> Result<Marker, MeasureError> {
    let position = surface_point(scene, ray)?;
    Ok(session.add_marker(position))
}

/// Chord distances and signed height changes along an ordered marker list.
pub fn polyline_distance(points: &[GeodeticCoord]) -> Result<PolylineDistanceResult, MeasureError> {
    if points.len() < 2 {
        return Err(MeasureError::TooFewMarkers(points.len()));
    }
    let ecef: Vec<EcefVec> = points.iter().map(GeodeticCoord::to_ecef).collect();
    let segments: Vec<Segment> = points
        .windows(2)
        .zip(ecef.windows(2))
        .map(|(g, e)| Segment { distance_m: e[0].distance(&e[1]), elevation_diff_m: g[1].height_m - g[0].height_m })
        .collect();
    Ok(PolylineDistanceResult { total_m: segments.iter().map(|s| s.distance_m).sum(), segments })
}

/// Wraps an angle into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r + 0.0
    }
}

/// Orientation of the plane through three points (right-hand rule: dip
/// direction is strike + 90°).
pub fn strike_dip(points: [&GeodeticCoord; 3]) -> Result<StrikeDipResult, MeasureError> {
    let e = points.map(|g| g.to_ecef().to_vector());
    let centroid = EcefVec::from((e[0] + e[1] + e[2]) / 3.0);
    let frame = EnuFrame::at_ecef(&centroid)?;

    let l1 = frame.direction_to_local(&(e[1] - e[0]));
    let l2 = frame.direction_to_local(&(e[2] - e[0]));
    let cross = l1.cross(&l2);
    let area = cross.norm() / 2.0;
    if !(area > EPS_AREA_M2) {
        return Err(MeasureError::CollinearMarkers(area));
    }
    let mut n = cross / cross.norm();
    if n.z < 0.0 {
        n = -n;
    }
    // vertical plane: both normals are horizontal, pick the one whose dip
    // direction lies in [0, 180)
    if n.z.abs() < 1e-12 && (n.x < 0.0 || (n.x == 0.0 && n.y < 0.0)) {
        n = -n;
    }
    let horizontal_len = n.x.hypot(n.y);
    let dip_deg = horizontal_len.atan2(n.z).to_degrees();
    let extent_m = (e[0] - e[1]).norm().max((e[1] - e[2]).norm()).max((e[0] - e[2]).norm());

    if dip_deg < EPS_DIP_DEG {
        return Ok(StrikeDipResult {
            strike_azimuth_deg: 0.0,
            dip_deg,
            dip_direction_deg: 0.0,
            extent_m,
            horizontal: true,
        });
    }
    let dip_direction_deg = wrap_degrees(n.x.atan2(n.y).to_degrees());
    Ok(StrikeDipResult {
        strike_azimuth_deg: wrap_degrees(dip_direction_deg - 90.0),
        dip_deg,
        dip_direction_deg,
        extent_m,
        horizontal: false,
    })
}

/// Horizontal box from three markers: the first two fix the width edge, the
/// third the length and side. Height spans the surface under the box.
pub fn clip_box_from_markers(points: [&GeodeticCoord; 3], scene: &TerrainScene) -> Result<ClipBox, MeasureError> {
    let (frame, footprint) = clip_box_footprint(points)?;
    let (h_min_m, h_max_m) = scene.elevation_range(&footprint, &frame).map_err(|e| match e {
        SpatialError::DegenerateFootprint(m) => MeasureError::DegenerateBox(m),
        _ => MeasureError::NoGeometry,
    })?;
    Ok(ClipBox {
        anchor: *points[0],
        frame,
        axis_u: frame.direction_to_ecef(&Vector3::new(footprint.axis_u.x, footprint.axis_u.y, 0.0)),
        axis_v: frame.direction_to_ecef(&Vector3::new(footprint.axis_v.x, footprint.axis_v.y, 0.0)),
        width_m: footprint.width_m,
        length_m: footprint.length_m,
        h_min_m,
        h_max_m,
    })
}

/// Frame at the first marker and the box footprint within it.
pub fn clip_box_footprint(points: [&GeodeticCoord; 3]) -> Result<(EnuFrame, Footprint), MeasureError> {
    let frame = enu_frame_at(points[0]);
    let l2 = frame.to_local(&points[1].to_ecef());
    let l3 = frame.to_local(&points[2].to_ecef());
    let along = Vector2::new(l2.x, l2.y);
    let width_m = along.norm();
    if !(width_m > EPS_BOX_M) {
        return Err(MeasureError::DegenerateBox("first two markers coincide horizontally".into()));
    }
    let axis_u = along / width_m;
    let mut axis_v = Vector2::new(-axis_u.y, axis_u.x);
    let side = Vector2::new(l3.x, l3.y).dot(&axis_v);
    if !(side.abs() > EPS_BOX_M) {
        return Err(MeasureError::DegenerateBox("third marker lies on the line through the first two".into()));
    }
    if side < 0.0 {
        axis_v = -axis_v;
    }
    let footprint = Footprint { axis_u, axis_v, width_m, length_m: side.abs() };
    Ok((frame, footprint))
}

/// Whether `p` lies inside the box (faces inclusive).
pub fn point_in_clipbox(clip: &ClipBox, p: &EcefVec) -> bool {
    match clip.local_coords(p) {
        Some((u, v, h)) => {
            (0.0..=clip.width_m).contains(&u)
                && (0.0..=clip.length_m).contains(&v)
                && (clip.h_min_m..=clip.h_max_m).contains(&h)
        }
        None => false,
    }
}
