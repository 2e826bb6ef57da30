use nalgebra::Vector3;

use crate::scalar::Real;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T: Real> {
    pub min: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> Aabb<T> {
    /// An inverted box that acts as the identity for [`Aabb::union`].
    pub fn empty() -> Self {
        let big = T::max_value().expect("bounded float");
        Self {
            min: Vector3::repeat(big),
            max: Vector3::repeat(-big),
        }
    }

    pub fn from_points<'a, I>(points: I) -> Self
    where
        I: IntoIterator<Item = &'a Vector3<T>>,
    {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn grow(&mut self, p: &Vector3<T>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vector3<T> {
        if self.is_empty() {
            return Vector3::zeros();
        }
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<T> {
        (self.min + self.max) * T::lit(0.5)
    }

    pub fn volume(&self) -> T {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let min = self.min.sup(&other.min);
        let max = self.max.inf(&other.max);
        if (0..3).any(|i| min[i] > max[i]) {
            None
        } else {
            Some(Self { min, max })
        }
    }

    /// Squared distance from a point to the box (zero inside).
    pub fn distance_squared_to_point(&self, p: &Vector3<T>) -> T {
        let mut d2 = T::zero();
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                T::zero()
            };
            d2 += v * v;
        }
        d2
    }

    /// Squared gap between two boxes (zero when they overlap).
    pub fn distance_squared_to_box(&self, other: &Self) -> T {
        let mut d2 = T::zero();
        for i in 0..3 {
            let gap = (other.min[i] - self.max[i]).max(self.min[i] - other.max[i]);
            if gap > T::zero() {
                d2 += gap * gap;
            }
        }
        d2
    }

    /// Slab test. Returns the parametric entry distance if the ray meets the
    /// box within `[0, t_max]`.
    pub fn ray_entry(&self, origin: &Vector3<T>, dir: &Vector3<T>, t_max: T) -> Option<T> {
        let mut t0 = T::zero();
        let mut t1 = t_max;
        for i in 0..3 {
            if dir[i] == T::zero() {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = T::one() / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_distances() {
        let b = Aabb {
            min: Vector3::new(0.0, 0.0, 0.0),
            max: Vector3::new(1.0, 1.0, 1.0),
        };
        assert_eq!(b.distance_squared_to_point(&Vector3::new(0.5, 0.5, 0.5)), 0.0);
        assert_eq!(b.distance_squared_to_point(&Vector3::new(2.0, 0.5, 0.5)), 1.0);
        let c = Aabb {
            min: Vector3::new(3.0, 0.0, 0.0),
            max: Vector3::new(4.0, 1.0, 1.0),
        };
        assert_eq!(b.distance_squared_to_box(&c), 4.0);
        assert!(b.intersection(&c).is_none());
    }

    #[test]
    fn slab_hits_and_misses() {
        let b = Aabb {
            min: Vector3::new(-1.0, -1.0, -1.0),
            max: Vector3::new(1.0, 1.0, 1.0),
        };
        let o = Vector3::new(-5.0, 0.0, 0.0);
        assert_eq!(b.ray_entry(&o, &Vector3::x(), f64::INFINITY), Some(4.0));
        assert_eq!(b.ray_entry(&o, &-Vector3::x(), f64::INFINITY), None);
        assert_eq!(b.ray_entry(&Vector3::zeros(), &Vector3::z(), 1.0), Some(0.0));
    }
}
