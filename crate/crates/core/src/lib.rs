//! Measurement engine for virtual fieldwork on georeferenced terrain models.
//!
//! Terrain is loaded from 3D Tiles / GLB into a [`scene::TerrainScene`],
//! picked with rays through a BVH, and measured with the tools in
//! [`measure`]. Sessions of markers and measurements persist as JSON via
//! [`session`].

// `!(x > eps)` is how the guards reject NaN along with small values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fixtures;
pub mod geodesy;
pub mod measure;
pub mod par;
pub mod scene;
pub mod session;
pub mod spatial;
pub mod tileset;

use thiserror::Error;

pub use geodesy::{EcefVec, GeodeticCoord};
pub use par::Parallelism;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Geodesy(#[from] geodesy::GeodesyError),
    #[error(transparent)]
    Tileset(#[from] tileset::TilesetError),
    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),
    #[error(transparent)]
    Measure(#[from] measure::MeasureError),
    #[error(transparent)]
    Session(#[from] session::SessionError),
}

impl Error {
    /// Stable machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Geodesy(_) => "InvalidCoordinate",
            Error::Tileset(e) => e.code(),
            Error::Spatial(e) => e.code(),
            Error::Measure(e) => e.code(),
            Error::Session(e) => e.code(),
        }
    }
}
