//! Mesh delivery for renderers that only have 32-bit floats.
//!
//! Vertices are written in the east-north-up frame of an origin near the
//! geometry, converted to glTF's y-up axes, so they stay small. The origin
//! travels as full f64 metadata; `local_to_ecef_matrix` of that frame is the
//! tile transform that places the GLB back on the globe.

use std::sync::Arc;

use fieldwork_core::geodesy::{enu_frame_at, EnuFrame, GeodeticCoord};
use fieldwork_core::tileset::glb::{GlbWriter, IndexWidth, PrimitiveData};
use fieldwork_core::tileset::TriangleMesh;
use fieldwork_core::EcefVec;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const ORIGIN_ECEF_HEADER: &str = "x-fieldwork-origin-ecef";
pub const ORIGIN_GEODETIC_HEADER: &str = "x-fieldwork-origin-geodetic";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshOrigin {
    pub ecef: [f64; 3],
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
}

impl MeshOrigin {
    pub fn frame(&self) -> EnuFrame {
        enu_frame_at(&GeodeticCoord::new(self.lat_deg, self.lon_deg, self.height_m).expect("origin was valid"))
    }

    /// `x,y,z` with shortest round-trip formatting.
    pub fn ecef_header(&self) -> String {
        format!("{},{},{}", self.ecef[0], self.ecef[1], self.ecef[2])
    }

    pub fn geodetic_header(&self) -> String {
        format!("{},{},{}", self.lat_deg, self.lon_deg, self.height_m)
    }
}

/// Mean of the tile origins, moved onto the geodetic position it denotes
/// so that its ENU frame is well defined.
fn pick_origin(meshes: &[Arc<TriangleMesh>]) -> Option<GeodeticCoord> {
    let sum = meshes.iter().fold(Vector3::zeros(), |a, m| a + m.tile_origin.to_vector());
    EcefVec::from(sum / meshes.len() as f64).to_geodetic().ok()
}

/// One GLB primitive per mesh. Returns `None` for an empty slice or an
/// origin too close to the Earth's center to have a frame.
pub fn encode_glb(meshes: &[Arc<TriangleMesh>]) -> Option<(MeshOrigin, Vec<u8>)> {
    if meshes.is_empty() {
        return None;
    }
    let g = pick_origin(meshes)?;
    let frame = enu_frame_at(&g);
    let origin = MeshOrigin {
        ecef: frame.origin.to_vector().into(),
        lat_deg: g.latitude_deg,
        lon_deg: g.longitude_deg,
        height_m: g.height_m,
    };
    let prims: Vec<PrimitiveData> = meshes
        .iter()
        .map(|m| {
            // tile offset, then per-vertex offsets, all in f64 before the
            // single rounding to f32
            let shift = frame.direction_to_local(&(m.tile_origin.to_vector() - frame.origin.to_vector()));
            let positions = m
                .positions
                .iter()
                .map(|p| {
                    let l = shift + frame.direction_to_local(p);
                    [l.x as f32, l.z as f32, -l.y as f32]
                })
                .collect();
            PrimitiveData { positions, indices: m.indices.iter().flatten().copied().collect(), ..Default::default() }
        })
        .collect();
    let writer = GlbWriter {
        index_width: IndexWidth::U32,
        extras: Some(json!({ "fieldwork_origin": origin, "frame": "enu_y_up" })),
        ..Default::default()
    };
    Some((origin, writer.write(&prims)))
}
