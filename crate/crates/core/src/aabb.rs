use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("AABB half extent must be strictly positive on every axis, got {0:?}")]
pub struct InvalidAabb(pub [f64; 3]);

/// Axis-aligned box described by its center and half extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    center: Vec3,
    half_extent: Vec3,
}

impl Aabb {
    pub fn new(center: Vec3, half_extent: Vec3) -> Result<Self, InvalidAabb> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(half_extent.x) && ok(half_extent.y) && ok(half_extent.z)) {
            return Err(InvalidAabb(half_extent.to_array()));
        }
        Ok(Aabb { center, half_extent })
    }

    /// The `[-1, 1]^3` cube.
    pub fn unit() -> Self {
        Aabb { center: Vec3::ZERO, half_extent: Vec3::splat(1.0) }
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn half_extent(&self) -> Vec3 {
        self.half_extent
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.half_extent
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.half_extent
    }

    pub fn size(&self) -> Vec3 {
        self.half_extent * 2.0
    }

    /// Inclusive containment with a relative slack of `1e-9` of the extent.
    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        let slack = 1e-9;
        (0..3).all(|i| libm::fabs(d[i]) <= self.half_extent[i] * (1.0 + slack))
    }

    /// Maps a contained point to `[0, 1]^3`, clamping the slack region.
    pub fn normalize(&self, p: Vec3) -> Vec3 {
        let lo = self.min();
        let s = self.size();
        let f = |v: f64, l: f64, w: f64| ((v - l) / w).clamp(0.0, 1.0);
        Vec3::new(f(p.x, lo.x, s.x), f(p.y, lo.y, s.y), f(p.z, lo.z, s.z))
    }

    /// Closest contained point.
    pub fn clamp(&self, p: Vec3) -> Vec3 {
        let lo = self.min();
        let hi = self.max();
        Vec3::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y), p.z.clamp(lo.z, hi.z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_follow_center_and_half_extent() {
        let b = Aabb::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 1.0, 2.0)).unwrap();
        assert_eq!(b.min(), Vec3::new(0.5, 1.0, 1.0));
        assert_eq!(b.max(), Vec3::new(1.5, 3.0, 5.0));
        assert_eq!(b.size(), Vec3::new(1.0, 2.0, 4.0));
    }

    #[test]
    fn rejects_degenerate_extent() {
        assert!(Aabb::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(Aabb::new(Vec3::ZERO, Vec3::new(1.0, -1.0, 1.0)).is_err());
        assert!(Aabb::new(Vec3::ZERO, Vec3::new(f64::NAN, 1.0, 1.0)).is_err());
    }
}
