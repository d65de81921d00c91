//! Planar rigid-body geometry shared by the simulator, graph builder and merge.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Simulation clock period in seconds (10 Hz sensing).
pub const TICK_SECONDS: f64 = 0.1;

/// Discrete timestamp counted in 0.1 s ticks.
///
/// Timestamps are kept integral so that time gaps and wire encodings are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Tick(pub u32);

impl Tick {
    pub fn seconds(self) -> f64 {
        f64::from(self.0) * TICK_SECONDS
    }

    /// Gap from `earlier` to `self` in seconds.
    pub fn since(self, earlier: Tick) -> f64 {
        (f64::from(self.0) - f64::from(earlier.0)) * TICK_SECONDS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const fn planar(x: f64, y: f64) -> Self {
        Vec3 { x, y, z: 0.0 }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn planar_norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Rotates about the z axis.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps −π to π already; this only catches rounding at the seam
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// World pose of a vehicle: planar position plus height and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Pose {
            position,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    /// Maps a point from this pose's local frame into the world frame.
    /// Height is carried through unchanged.
    pub fn to_world(&self, local: Vec3) -> Vec3 {
        let r = local.rotate_z(self.yaw);
        Vec3::new(r.x + self.position.x, r.y + self.position.y, local.z)
    }

    /// Maps a world point into this pose's local frame. Height passes through.
    pub fn to_local(&self, world: Vec3) -> Vec3 {
        let d = Vec3::new(world.x - self.position.x, world.y - self.position.y, world.z);
        d.rotate_z(-self.yaw)
    }

    /// Rigid motion taking coordinates expressed in `self` into coordinates
    /// expressed in `target`, i.e. `target⁻¹ ∘ self`.
    pub fn relative_to(&self, target: &Pose) -> RigidTransform {
        let yaw = normalize_angle(self.yaw - target.yaw);
        let offset = target.to_local(Vec3::new(self.position.x, self.position.y, 0.0));
        RigidTransform {
            yaw,
            tx: offset.x,
            ty: offset.y,
        }
    }

    /// Applies a world-frame rigid motion to this pose.
    pub fn transformed(&self, motion: &RigidTransform) -> Pose {
        let p = motion.apply(self.position);
        Pose::new(p, self.yaw + motion.yaw)
    }

    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.position.x - other.position.x).hypot(self.position.y - other.position.y)
    }
}

/// Planar rigid motion `p ↦ R(yaw)·p + t`, z passthrough.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform {
    pub fn new(yaw: f64, tx: f64, ty: f64) -> Self {
        RigidTransform { yaw, tx, ty }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = p.rotate_z(self.yaw);
        Vec3::new(r.x + self.tx, r.y + self.ty, p.z)
    }

    /// Rotates a direction (velocity) without translating it.
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        v.rotate_z(self.yaw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn angle_normalization_range() {
        for k in -20..=20 {
            let a = normalize_angle(f64::from(k) * 0.7);
            assert!(a > -PI && a <= PI, "{a}");
        }
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
    }

    #[test]
    fn local_world_roundtrip() {
        let pose = Pose::new(Vec3::planar(3.0, -4.0), 0.8);
        let p = Vec3::new(1.5, 2.5, 0.3);
        let back = pose.to_local(pose.to_world(p));
        assert_abs_diff_eq!(back.x, p.x, epsilon = 1e-12);
        assert_abs_diff_eq!(back.y, p.y, epsilon = 1e-12);
        assert_abs_diff_eq!(back.z, p.z);
    }

    #[test]
    fn relative_transform_matches_world_roundtrip() {
        let a = Pose::new(Vec3::planar(10.0, 2.0), 0.3);
        let b = Pose::new(Vec3::planar(-5.0, 7.0), -1.2);
        let p = Vec3::planar(4.0, -1.0);
        let via_world = b.to_local(a.to_world(p));
        let direct = a.relative_to(&b).apply(p);
        assert_abs_diff_eq!(via_world.x, direct.x, epsilon = 1e-12);
        assert_abs_diff_eq!(via_world.y, direct.y, epsilon = 1e-12);
    }

    #[test]
    fn tick_gaps_are_exact_multiples() {
        assert_abs_diff_eq!(Tick(3).since(Tick(1)), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(Tick(7).seconds(), 0.7, epsilon = 1e-15);
    }
}
