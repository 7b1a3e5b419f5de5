//! Request and response bodies. Geometry travels as ECEF doubles, positions
//! meant for people as geodetic degrees and meters.

use fieldwork_core::geodesy::{enu_frame_at, GeodeticCoord};
use fieldwork_core::measure::{self, Marker, MarkerId, MeasureError};
use fieldwork_core::scene::{TerrainScene, TilesetId};
use fieldwork_core::session::{GeodeticRecord, ImportWarning, MarkerRecord, Measurement, MeasurementRecord, Session};
use fieldwork_core::spatial::{Hit, Ray, SpatialError, DEFAULT_T_MAX};
use fieldwork_core::{EcefVec, Error};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Start height for rays dropped onto the surface at a latitude/longitude.
pub const DRAPE_START_HEIGHT_M: f64 = 20_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayBody {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

impl RayBody {
    pub fn to_ray(&self) -> Result<Ray, SpatialError> {
        Ray::new(
            EcefVec::from(Vector3::from(self.origin)),
            Vector3::from(self.direction),
            self.t_max.unwrap_or(DEFAULT_T_MAX),
        )
    }
}

impl From<&Ray> for RayBody {
    fn from(r: &Ray) -> Self {
        Self { origin: r.origin.to_vector().into(), direction: r.direction.into(), t_max: Some(r.t_max) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatLon {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitBody {
    pub t: f64,
    pub point: [f64; 3],
    pub geodetic: GeodeticRecord,
    pub mesh_id: u32,
    pub triangle_index: u32,
    pub normal: [f64; 3],
}

impl HitBody {
    pub fn new(hit: &Hit) -> Result<Self, MeasureError> {
        let g = hit.point.to_geodetic()?;
        Ok(Self {
            t: hit.t,
            point: hit.point.to_vector().into(),
            geodetic: geodetic_record(&g),
            mesh_id: hit.mesh_id,
            triangle_index: hit.triangle_index,
            normal: hit.normal,
        })
    }
}

pub fn geodetic_record(g: &GeodeticCoord) -> GeodeticRecord {
    GeodeticRecord { lat_deg: g.latitude_deg, lon_deg: g.longitude_deg, height_m: g.height_m }
}

/// How a new marker is positioned: on the first surface hit of a ray, at
/// the surface below a latitude/longitude, or at an explicit position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkerRequest {
    Ray(RayBody),
    Surface(LatLon),
    Geodetic(GeodeticRecord),
}

impl MarkerRequest {
    pub fn resolve(&self, scene: &TerrainScene) -> Result<GeodeticCoord, Error> {
        Ok(match self {
            MarkerRequest::Ray(r) => measure::surface_point(scene, &r.to_ray()?)?,
            MarkerRequest::Surface(ll) => {
                let top = GeodeticCoord::new(ll.lat_deg, ll.lon_deg, DRAPE_START_HEIGHT_M)?;
                let ray = Ray::unbounded(top.to_ecef(), -enu_frame_at(&top).up)?;
                measure::surface_point(scene, &ray)?
            }
            MarkerRequest::Geodetic(g) => GeodeticCoord::new(g.lat_deg, g.lon_deg, g.height_m)?,
        })
    }

    pub fn place(&self, scene: &TerrainScene, session: &mut Session) -> Result<Marker, Error> {
        let position = self.resolve(scene)?;
        Ok(session.add_marker(position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelPatch {
    pub label_visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerIds {
    pub marker_ids: Vec<MarkerId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterTileset {
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilesetInfo {
    pub tileset_id: TilesetId,
    pub uri: String,
    pub selected_tiles: usize,
    pub triangle_count: usize,
    pub mesh_count: usize,
}

impl TilesetInfo {
    pub fn from_scene(scene: &TerrainScene, id: TilesetId) -> Option<Self> {
        let t = scene.tileset(id)?;
        Some(Self {
            tileset_id: t.id,
            uri: t.uri.clone(),
            selected_tiles: t.selected_tiles,
            triangle_count: t.triangle_count,
            mesh_count: t.mesh_range.len(),
        })
    }
}

pub fn marker_record(m: &Marker) -> MarkerRecord {
    MarkerRecord::from(m)
}

pub fn measurement_record(m: &Measurement) -> MeasurementRecord {
    MeasurementRecord { id: m.id, kind: m.kind(), marker_ids: m.marker_ids.clone(), results: m.result.to_json() }
}

/// A stored measurement; strike & dip also lists the markers whose labels
/// it hid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementResponse {
    #[serde(flatten)]
    pub record: MeasurementRecord,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub hidden_labels: Vec<MarkerId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportResponse {
    pub markers: usize,
    pub measurements: usize,
    pub stale_results: bool,
    pub warnings: Vec<ImportWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub clients: usize,
    pub event_seq: u64,
    pub markers: usize,
    pub measurements: usize,
    pub tilesets: usize,
    pub scene_triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}
