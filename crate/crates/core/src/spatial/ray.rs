use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SpatialError;
use crate::geodesy::EcefVec;

/// A half-line in ECEF with a unit direction and a finite reach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: EcefVec,
    pub direction: Vector3<f64>,
    pub t_max: f64,
}

/// Default reach: comfortably more than an Earth diameter.
pub const DEFAULT_T_MAX: f64 = 2.0e7;

impl Ray {
    /// Normalizes `direction`; rejects zero or non-finite input.
    pub fn new(origin: EcefVec, direction: Vector3<f64>, t_max: f64) -> Result<Self, SpatialError> {
        if !origin.is_finite() {
            return Err(SpatialError::InvalidRay("origin is not finite".into()));
        }
        let len = direction.norm();
        if !len.is_finite() || len == 0.0 {
            return Err(SpatialError::InvalidRay("direction must be a non-zero vector".into()));
        }
        if !(t_max > 0.0) {
            return Err(SpatialError::InvalidRay("t_max must be positive".into()));
        }
        Ok(Self { origin, direction: direction / len, t_max })
    }

    pub fn unbounded(origin: EcefVec, direction: Vector3<f64>) -> Result<Self, SpatialError> {
        Self::new(origin, direction, DEFAULT_T_MAX)
    }

    pub fn at(&self, t: f64) -> EcefVec {
        self.origin.offset(&(self.direction * t))
    }
}

/// Closest intersection of a ray with a scene triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub t: f64,
    pub point: EcefVec,
    pub mesh_id: u32,
    pub triangle_index: u32,
    /// Barycentric weights of the second and third triangle corners.
    pub u: f64,
    pub v: f64,
    /// Unit geometric normal following the triangle winding.
    pub normal: [f64; 3],
}

/// Distance and barycentrics of a ray/triangle crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleCrossing {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// Precomputed shear for the watertight ray/triangle test.
///
/// The ray is transformed so that it runs along +z from the origin; the
/// triangle is then tested with 2D edge functions that are evaluated
/// identically for an edge shared by two triangles, so no ray can slip
/// through the seam.
#[derive(Debug, Clone, Copy)]
pub struct WatertightRay {
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl WatertightRay {
    pub fn new(direction: &Vector3<f64>) -> Self {
        let abs = direction.abs();
        let kz = if abs.x >= abs.y && abs.x >= abs.z {
            0
        } else if abs.y >= abs.z {
            1
        } else {
            2
        };
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if direction[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self {
            kx,
            ky,
            kz,
            sx: direction[kx] / direction[kz],
            sy: direction[ky] / direction[kz],
            sz: 1.0 / direction[kz],
        }
    }

    /// Tests a triangle given relative to the ray origin.
    #[inline]
    pub fn intersect(
        &self,
        a: &Vector3<f64>,
        b: &Vector3<f64>,
        c: &Vector3<f64>,
        t_max: f64,
    ) -> Option<TriangleCrossing> {
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];

        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let az = self.sz * a[kz];
        let bz = self.sz * b[kz];
        let cz = self.sz * c[kz];
        let t_scaled = u * az + v * bz + w * cz;
        if det > 0.0 {
            if t_scaled < 0.0 || t_scaled > t_max * det {
                return None;
            }
        } else if t_scaled > 0.0 || t_scaled < t_max * det {
            return None;
        }
        let inv = 1.0 / det;
        let (mut bu, mut bv) = (v * inv, w * inv);
        if bu + bv > 1.0 {
            let s = bu + bv;
            bu /= s;
            bv /= s;
        }
        Some(TriangleCrossing { t: t_scaled * inv, u: bu, v: bv })
    }
}
