use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Rigid pose in the world frame. The robot base sits at the origin, +x is
/// the front, +y the right side and +z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn new(position: Vec3, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn identity_at(position: Vec3) -> Self {
        Self::new(position, Matrix3::identity())
    }

    /// Object pose rotated about +z.
    pub fn from_yaw(position: Vec3, yaw: f64) -> Self {
        Self::new(position, *Rotation3::from_axis_angle(&Vec3::z_axis(), yaw).matrix())
    }

    /// Gripper pose pointing straight down, rotated about +z by `yaw`.
    pub fn gripper_down(position: Vec3, yaw: f64) -> Self {
        let down = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw);
        Self::new(position, rz.matrix() * down)
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        err <= tol && self.position.iter().all(|v| v.is_finite())
    }

    /// Component-wise translation and quaternion slerp.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        let position = self.position + (other.position - self.position) * t;
        if self.rotation == other.rotation {
            return Pose::new(position, self.rotation);
        }
        let q0 = UnitQuaternion::from_matrix(&self.rotation);
        let q1 = UnitQuaternion::from_matrix(&other.rotation);
        let q = q0.try_slerp(&q1, t, 1e-12).unwrap_or(if t < 0.5 { q0 } else { q1 });
        Pose::new(position, *q.to_rotation_matrix().matrix())
    }

    pub fn translated(&self, delta: Vec3) -> Pose {
        Pose::new(self.position + delta, self.rotation)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Axis-aligned hull of a box with the given pose and half extents.
    pub fn of_box(pose: &Pose, half_extents: &Vec3) -> Self {
        let r = &pose.rotation;
        let mut e = Vec3::zeros();
        for i in 0..3 {
            e[i] = (0..3).map(|j| r[(i, j)].abs() * half_extents[j]).sum();
        }
        Self {
            min: pose.position - e,
            max: pose.position + e,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let d = self.max - self.min;
        d.x.max(0.0) * d.y.max(0.0) * d.z.max(0.0)
    }

    pub fn footprint_area(&self) -> f64 {
        let d = self.max - self.min;
        d.x.max(0.0) * d.y.max(0.0)
    }

    pub fn overlap_extent(&self, other: &Aabb, axis: usize) -> f64 {
        (self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])).max(0.0)
    }

    pub fn footprint_overlap(&self, other: &Aabb) -> f64 {
        self.overlap_extent(other, 0) * self.overlap_extent(other, 1)
    }

    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        self.overlap_extent(other, 0) * self.overlap_extent(other, 1) * self.overlap_extent(other, 2)
    }

    /// Smallest per-axis overlap; positive means the boxes interpenetrate by
    /// at least that much on every axis.
    pub fn penetration(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|a| self.max[a].min(other.max[a]) - self.min[a].max(other.min[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_xy_strict(&self, p: &Vec3) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    /// Fraction of this box's volume that lies inside `other`.
    pub fn contained_fraction(&self, other: &Aabb) -> f64 {
        let v = self.volume();
        if v <= 0.0 {
            return 0.0;
        }
        self.intersection_volume(other) / v
    }

    /// Fraction of this box's footprint that lies over `other`'s footprint.
    pub fn footprint_fraction(&self, other: &Aabb) -> f64 {
        let a = self.footprint_area();
        if a <= 0.0 {
            return 0.0;
        }
        self.footprint_overlap(other) / a
    }

    /// Support test shared by the simulator and the scene graph: bottom face
    /// within `gap` of the other's top and at least half the footprint over it.
    pub fn rests_on(&self, other: &Aabb, gap: f64) -> bool {
        (self.min.z - other.max.z).abs() <= gap + 1e-9
            && self.center().z > other.center().z
            && self.footprint_fraction(other) >= 0.5
    }
}
