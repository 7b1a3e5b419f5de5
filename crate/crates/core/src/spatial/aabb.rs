use nalgebra::Vector3;

/// Axis-aligned box in ECEF meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vector3::repeat(f64::INFINITY), max: Vector3::repeat(f64::NEG_INFINITY) }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.min[k] > self.max[k])
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn contains_point(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && other.max[k] <= self.max[k])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> Vector3<f64> {
        if self.is_empty() {
            Vector3::zeros()
        } else {
            self.max - self.min
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        let d = self.diagonal();
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    pub fn padded(&self, by: f64) -> Aabb {
        Aabb { min: self.min.add_scalar(-by), max: self.max.add_scalar(by) }
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            )
        })
    }

    /// Slab test. Returns the entry distance when the ray overlaps the box
    /// within `[0, t_max]`, widened by `pad` meters on both ends so that
    /// rounding in box construction never culls a true hit.
    #[inline]
    pub fn ray_entry(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64, pad: f64) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let mut near = (self.min[k] - origin[k]) * inv_dir[k];
            let mut far = (self.max[k] - origin[k]) * inv_dir[k];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN (0 * inf) means the origin lies on the slab plane of a
            // parallel ray; the slab does not constrain t then.
            if !near.is_nan() {
                t0 = t0.max(near);
            }
            if !far.is_nan() {
                t1 = t1.min(far);
            }
        }
        if t0 > t1 + pad || t1 < -pad || t0 > t_max + pad {
            return None;
        }
        Some(t0.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_hits_and_misses() {
        let b = Aabb { min: Vector3::new(0.0, 0.0, 0.0), max: Vector3::new(1.0, 1.0, 1.0) };
        let inv = |d: Vector3<f64>| d.map(|c| 1.0 / c);
        let o = Vector3::new(0.5, 0.5, 5.0);
        assert_eq!(b.ray_entry(&o, &inv(Vector3::new(0.0, 0.0, -1.0)), 10.0, 0.0), Some(4.0));
        assert_eq!(b.ray_entry(&o, &inv(Vector3::new(0.0, 0.0, 1.0)), 10.0, 0.0), None);
        assert_eq!(b.ray_entry(&o, &inv(Vector3::new(0.0, 0.0, -1.0)), 3.0, 0.0), None);
        // grazing along a face
        let o = Vector3::new(1.0, 0.5, 5.0);
        assert!(b.ray_entry(&o, &inv(Vector3::new(0.0, 0.0, -1.0)), 10.0, 0.0).is_some());
    }

    #[test]
    fn containment() {
        let a = Aabb::from_points(&[Vector3::new(0.0, 0.0, 0.0), Vector3::new(2.0, 2.0, 2.0)]);
        let b = Aabb::from_points(&[Vector3::new(0.5, 0.5, 0.5), Vector3::new(1.0, 1.0, 1.0)]);
        assert!(a.contains(&b) && !b.contains(&a));
        assert!(a.intersects(&b));
        assert!(Aabb::empty().is_empty());
        assert_eq!(a.surface_area(), 24.0);
    }
}
