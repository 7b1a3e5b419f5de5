//! WGS84 coordinate frames: geodetic, ECEF, local East-North-Up and engine units.
//!
//! Heights are ellipsoidal (above the WGS84 ellipsoid), never geoid-referenced.
//! Every function here is pure and all arithmetic is carried out in `f64`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 inverse flattening.
pub const WGS84_INV_F: f64 = 298.257_223_563;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / WGS84_INV_F;
/// WGS84 semi-minor axis in meters, `a * (1 - f)`.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared, `f * (2 - f)`.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Engine units per meter (1 unit = 1 cm).
pub const UNITS_PER_METER: f64 = 100.0;

const NEAR_CENTER_M: f64 = 1.0;
const HEIGHT_TOLERANCE_M: f64 = 1e-9;
const MAX_ITERATIONS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("latitude {0} is outside [-90, 90] degrees")]
    LatitudeOutOfRange(f64),
    #[error("coordinate component is not finite")]
    NonFinite,
    #[error("position is within {NEAR_CENTER_M} m of the Earth's center")]
    NearCenter,
}

/// A position given as WGS84 latitude, longitude and ellipsoidal height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub height_m: f64,
}

impl GeodeticCoord {
    /// Validates the latitude and normalizes the longitude into `[-180, 180)`.
    pub fn new(latitude_deg: f64, longitude_deg: f64, height_m: f64) -> Result<Self, GeodesyError> {
        if !(latitude_deg.is_finite() && longitude_deg.is_finite() && height_m.is_finite()) {
            return Err(GeodesyError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeodesyError::LatitudeOutOfRange(latitude_deg));
        }
        Ok(Self { latitude_deg, longitude_deg: normalize_longitude(longitude_deg), height_m })
    }

    pub fn to_ecef(&self) -> EcefVec {
        geodetic_to_ecef(self)
    }
}

/// Wraps a longitude in degrees into the half-open range `[-180, 180)`.
pub fn normalize_longitude(longitude_deg: f64) -> f64 {
    if (-180.0..180.0).contains(&longitude_deg) {
        return longitude_deg;
    }
    let wrapped = (longitude_deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Earth-centered, Earth-fixed position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EcefVec {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefVec {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn distance(&self, other: &EcefVec) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn offset(&self, delta: &Vector3<f64>) -> EcefVec {
        (self.to_vector() + delta).into()
    }

    pub fn to_geodetic(&self) -> Result<GeodeticCoord, GeodesyError> {
        ecef_to_geodetic(self)
    }
}

impl From<Vector3<f64>> for EcefVec {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl From<EcefVec> for Vector3<f64> {
    fn from(v: EcefVec) -> Self {
        v.to_vector()
    }
}

impl From<[f64; 3]> for EcefVec {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Closed-form WGS84 geodetic to ECEF conversion.
pub fn geodetic_to_ecef(g: &GeodeticCoord) -> EcefVec {
    let (sin_lat, cos_lat) = g.latitude_deg.to_radians().sin_cos();
    let (sin_lon, cos_lon) = g.longitude_deg.to_radians().sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    EcefVec {
        x: (n + g.height_m) * cos_lat * cos_lon,
        y: (n + g.height_m) * cos_lat * sin_lon,
        z: (n * (1.0 - WGS84_E2) + g.height_m) * sin_lat,
    }
}

/// Inverse of [`geodetic_to_ecef`].
///
/// Starts from Bowring's closed-form latitude and refines by fixed-point
/// iteration until the height changes by less than 1 nm (at most 10 rounds).
pub fn ecef_to_geodetic(e: &EcefVec) -> Result<GeodeticCoord, GeodesyError> {
    if !e.is_finite() {
        return Err(GeodesyError::NonFinite);
    }
    if e.norm() <= NEAR_CENTER_M {
        return Err(GeodesyError::NearCenter);
    }

    let p = e.x.hypot(e.y);
    let longitude = e.y.atan2(e.x);

    let ep2 = WGS84_E2 / (1.0 - WGS84_E2);
    let theta = (e.z * WGS84_A).atan2(p * WGS84_B);
    let (sin_t, cos_t) = theta.sin_cos();
    let mut latitude = (e.z + ep2 * WGS84_B * sin_t.powi(3)).atan2(p - WGS84_E2 * WGS84_A * cos_t.powi(3));

    let mut height = ellipsoid_height(p, e.z, latitude);
    for _ in 0..MAX_ITERATIONS {
        let sin_lat = latitude.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        latitude = (e.z + WGS84_E2 * n * sin_lat).atan2(p);
        let next = ellipsoid_height(p, e.z, latitude);
        let delta = (next - height).abs();
        height = next;
        if delta < HEIGHT_TOLERANCE_M {
            break;
        }
    }

    Ok(GeodeticCoord {
        latitude_deg: latitude.to_degrees().clamp(-90.0, 90.0),
        longitude_deg: normalize_longitude(longitude.to_degrees()),
        height_m: height,
    })
}

// h = p cos(lat) + z sin(lat) - a sqrt(1 - e² sin²(lat)); stable at the poles
fn ellipsoid_height(p: f64, z: f64, latitude: f64) -> f64 {
    let (sin_lat, cos_lat) = latitude.sin_cos();
    p * cos_lat + z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt()
}

/// Local East-North-Up tangent frame at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuFrame {
    pub origin: EcefVec,
    pub east: Vector3<f64>,
    pub north: Vector3<f64>,
    pub up: Vector3<f64>,
}

/// ENU frame whose up axis is the ellipsoid normal at `g`.
///
/// Exactly at a pole the longitude is meaningless; east is then fixed to point
/// toward the 90°E meridian, i.e. the ECEF +Y axis.
pub fn enu_frame_at(g: &GeodeticCoord) -> EnuFrame {
    let longitude = if g.latitude_deg.abs() == 90.0 { 0.0 } else { g.longitude_deg.to_radians() };
    let (sin_lat, cos_lat) = g.latitude_deg.to_radians().sin_cos();
    let (sin_lon, cos_lon) = longitude.sin_cos();
    EnuFrame {
        origin: geodetic_to_ecef(g),
        east: Vector3::new(-sin_lon, cos_lon, 0.0),
        north: Vector3::new(-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat),
        up: Vector3::new(cos_lat * cos_lon, cos_lat * sin_lon, sin_lat),
    }
}

impl EnuFrame {
    /// Frame at an ECEF position, using the geodetic normal through it.
    pub fn at_ecef(e: &EcefVec) -> Result<Self, GeodesyError> {
        let g = ecef_to_geodetic(e)?;
        let mut frame = enu_frame_at(&g);
        frame.origin = *e;
        Ok(frame)
    }

    /// Rows are east, north, up: maps ECEF deltas to ENU components.
    pub fn rotation_to_local(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[self.east.transpose(), self.north.transpose(), self.up.transpose()])
    }

    /// ECEF position to (east, north, up) meters relative to the origin.
    pub fn to_local(&self, e: &EcefVec) -> Vector3<f64> {
        let d = e.to_vector() - self.origin.to_vector();
        Vector3::new(d.dot(&self.east), d.dot(&self.north), d.dot(&self.up))
    }

    /// ECEF direction (no translation) to ENU components.
    pub fn direction_to_local(&self, d: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(d.dot(&self.east), d.dot(&self.north), d.dot(&self.up))
    }

    /// ENU direction to ECEF components.
    pub fn direction_to_ecef(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.east * local.x + self.north * local.y + self.up * local.z
    }

    pub fn to_ecef(&self, local: &Vector3<f64>) -> EcefVec {
        self.origin.offset(&self.direction_to_ecef(local))
    }

    /// Column-major 4x4 placing ENU coordinates into ECEF, as used for
    /// georeferenced tile transforms.
    pub fn local_to_ecef_matrix(&self) -> Matrix4<f64> {
        let o = self.origin;
        Matrix4::new(
            self.east.x,
            self.north.x,
            self.up.x,
            o.x,
            self.east.y,
            self.north.y,
            self.up.y,
            o.y,
            self.east.z,
            self.north.z,
            self.up.z,
            o.z,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Position in engine units (centimeters) relative to an [`EngineOrigin`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineVec {
    pub x_u: f64,
    pub y_u: f64,
    pub z_u: f64,
}

impl EngineVec {
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x_u, self.y_u, self.z_u)
    }
}

/// Anchor of the engine coordinate system: x east, y north, z up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOrigin {
    pub frame: EnuFrame,
}

impl EngineOrigin {
    pub fn at(g: &GeodeticCoord) -> Self {
        Self { frame: enu_frame_at(g) }
    }

    pub fn ecef(&self) -> EcefVec {
        self.frame.origin
    }

    /// Scales ENU meters to engine units; exactly `100 * meters` per axis.
    pub fn local_to_engine(local: &Vector3<f64>) -> EngineVec {
        EngineVec { x_u: local.x * UNITS_PER_METER, y_u: local.y * UNITS_PER_METER, z_u: local.z * UNITS_PER_METER }
    }

    pub fn engine_to_local(v: &EngineVec) -> Vector3<f64> {
        Vector3::new(v.x_u, v.y_u, v.z_u) / UNITS_PER_METER
    }
}

pub fn ecef_to_engine(e: &EcefVec, origin: &EngineOrigin) -> EngineVec {
    EngineOrigin::local_to_engine(&origin.frame.to_local(e))
}

/// Engine-unit components of an ECEF displacement. Unlike
/// [`ecef_to_engine`] this never touches absolute ECEF magnitudes, so the
/// relative error stays at the level of one rotation.
pub fn ecef_delta_to_engine(d: &Vector3<f64>, origin: &EngineOrigin) -> EngineVec {
    EngineOrigin::local_to_engine(&origin.frame.direction_to_local(d))
}

pub fn engine_to_ecef(v: &EngineVec, origin: &EngineOrigin) -> EcefVec {
    origin.frame.to_ecef(&EngineOrigin::engine_to_local(v))
}
