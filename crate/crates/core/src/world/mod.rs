//! Deterministic quasi-static tabletop world.
//!
//! There are no dynamics: the gripper teleports along interpolated action
//! frames, and every frame is resolved by a small set of contact rules
//! (grasp on close, release-and-settle on open, point pushes, joint pulls
//! and button presses). Demonstration collection, `exec_primitive` and
//! policy rollouts all go through the same per-frame stepping, so recorded
//! trajectories and evaluated policies see identical physics.

mod body;
pub mod category;
mod exec;
mod geometry;
mod spawn;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use body::{step, StepEvents};
pub use exec::{
    exec_primitive, execute_call, motion_to_actions, plan_motion, sample_jitter, sample_waypoints,
    ActionFrame, ExecResult, Motion, PrimitiveCall, PrimitiveKind,
};
pub use geometry::{Aabb, Pose, Vec3};
pub use spawn::{spawn_scene, spawn_scene_with, KinematicsSpec, ObjectSpec, SceneSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinematics {
    Free,
    Fixed,
    /// Joint travel along `axis` in `[0, max]`; `current` is the opening.
    Prismatic { axis: [f64; 3], max: f64, current: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub category: String,
    /// 0 is not displayed; `n >= 1` renders as the suffix " n".
    pub instance_index: u32,
    pub state: String,
    pub pose: Pose,
    pub half_extents: Vec3,
    pub kinematics: Kinematics,
    /// Articulated parent (a handle hangs off its drawer).
    pub parent: Option<ObjectId>,
    /// Position when the own joint (or the parent's joint) is at zero.
    pub rest_position: Vec3,
}

impl ObjectInstance {
    pub fn label(&self) -> String {
        label_of(&self.category, self.instance_index)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::of_box(&self.pose, &self.half_extents)
    }

    pub fn is_free(&self) -> bool {
        matches!(self.kinematics, Kinematics::Free)
    }

    pub fn kind(&self) -> category::Kind {
        category::kind(&self.category)
    }
}

pub fn label_of(category: &str, instance_index: u32) -> String {
    if instance_index == 0 {
        category.to_string()
    } else {
        format!("{category} {instance_index}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Hold {
    /// Rigid grasp; the object pose is `gripper * relative`.
    Rigid {
        object: ObjectId,
        rel_position: Vec3,
        rel_rotation: nalgebra::Matrix3<f64>,
    },
    /// Grasped handle of a prismatic joint.
    Handle { handle: ObjectId, joint: ObjectId },
}

impl Hold {
    pub fn object(&self) -> ObjectId {
        match self {
            Hold::Rigid { object, .. } => *object,
            Hold::Handle { handle, .. } => *handle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub pose: Pose,
    pub closed: bool,
    pub hold: Option<Hold>,
    /// Button currently under a press; cleared once the gripper leaves it.
    pub pressing: Option<ObjectId>,
}

impl Gripper {
    pub fn held(&self) -> Option<ObjectId> {
        self.hold.as_ref().map(Hold::object)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Height of the table surface objects settle onto.
    #[serde(default = "default_surface")]
    pub surface_z: f64,
}

fn default_surface() -> f64 {
    0.05
}

impl Default for TableBounds {
    fn default() -> Self {
        Self {
            x: [0.0, 0.8],
            y: [-0.6, 0.6],
            surface_z: default_surface(),
        }
    }
}

impl TableBounds {
    /// Clamps a box center so its footprint stays on the table.
    pub fn clamp_center(&self, center: Vec3, half: &Vec3) -> Vec3 {
        let cx = clamp_span(center.x, self.x[0] + half.x, self.x[1] - half.x);
        let cy = clamp_span(center.y, self.y[0] + half.y, self.y[1] - half.y);
        Vec3::new(cx, cy, center.z)
    }

    pub fn contains_footprint(&self, aabb: &Aabb) -> bool {
        const EPS: f64 = 1e-9;
        aabb.min.x >= self.x[0] - EPS
            && aabb.max.x <= self.x[1] + EPS
            && aabb.min.y >= self.y[0] - EPS
            && aabb.max.y <= self.y[1] + EPS
    }
}

fn clamp_span(v: f64, lo: f64, hi: f64) -> f64 {
    if lo > hi {
        (lo + hi) * 0.5
    } else {
        v.clamp(lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene_id: String,
    pub objects: Vec<ObjectInstance>,
    pub gripper: Gripper,
    pub table_bounds: TableBounds,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub category: String,
    pub instance_index: u32,
    pub state: String,
    pub position: [f64; 3],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
}

impl ObjectRecord {
    pub fn label(&self) -> String {
        label_of(&self.category, self.instance_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperRecord {
    pub position: [f64; 3],
    pub closed: bool,
    pub held: Option<String>,
}

/// Ground-truth stand-in for the perception stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub objects: Vec<ObjectRecord>,
    pub gripper: GripperRecord,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum WorldError {
    #[error("objects {0} and {1} overlap at spawn")]
    OverlappingSpawn(String, String),
    #[error("object {0} is outside the table bounds")]
    OutOfBounds(String),
    #[error("object {0} has invalid geometry: {1}")]
    InvalidObject(String, String),
    #[error("state {state:?} is not valid for {category:?}")]
    InvalidState { category: String, state: String },
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("{0:?} matches several instances; use an instance number")]
    AmbiguousObject(String),
    #[error("gripper is already holding an object")]
    GripperBusy,
    #[error("gripper is empty")]
    GripperEmpty,
    #[error("{0:?} has no articulated joint")]
    NotArticulated(String),
    #[error("{0:?} cannot be pressed")]
    NotPressable(String),
    #[error("motion has no waypoints")]
    EmptyPath,
    #[error("gripper schedule length {schedule} does not match {waypoints} waypoints")]
    ScheduleMismatch { waypoints: usize, schedule: usize },
    #[error("invalid primitive arguments: {0}")]
    InvalidCall(String),
}

impl WorldState {
    pub fn object(&self, id: ObjectId) -> &ObjectInstance {
        &self.objects[id.0]
    }

    pub fn object_mut(&mut self, id: ObjectId) -> &mut ObjectInstance {
        &mut self.objects[id.0]
    }

    /// Resolves "category" (only when a single instance exists) or
    /// "category N".
    pub fn resolve(&self, name: &str) -> Result<ObjectId, WorldError> {
        let name = name.trim();
        let same_category: Vec<&ObjectInstance> =
            self.objects.iter().filter(|o| o.category == name).collect();
        match same_category.len() {
            1 => return Ok(same_category[0].id),
            n if n > 1 => return Err(WorldError::AmbiguousObject(name.to_string())),
            _ => {}
        }
        if let Some((cat, idx)) = name.rsplit_once(' ') {
            if let Ok(idx) = idx.parse::<u32>() {
                if let Some(o) = self
                    .objects
                    .iter()
                    .find(|o| o.category == cat && o.instance_index == idx)
                {
                    return Ok(o.id);
                }
            }
        }
        Err(WorldError::UnknownObject(name.to_string()))
    }

    pub fn observe(&self) -> Observation {
        observe(self)
    }

    /// Children (handles) attached to `id`.
    pub fn children(&self, id: ObjectId) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(move |o| o.parent == Some(id))
    }

    /// Joint whose handle or body `id` names.
    pub fn joint_of(&self, id: ObjectId) -> Option<ObjectId> {
        let obj = self.object(id);
        if matches!(obj.kinematics, Kinematics::Prismatic { .. }) {
            return Some(id);
        }
        let parent = obj.parent?;
        matches!(self.object(parent).kinematics, Kinematics::Prismatic { .. }).then_some(parent)
    }

    /// Free objects whose boxes interpenetrate by more than `tol` on every
    /// axis, skipping container pairs and held objects.
    pub fn interpenetrating_pairs(&self, tol: f64) -> Vec<(ObjectId, ObjectId)> {
        let held = self.gripper.held();
        let solid: Vec<&ObjectInstance> = self
            .objects
            .iter()
            .filter(|o| o.is_free() && !o.kind().is_container() && Some(o.id) != held)
            .collect();
        let mut out = Vec::new();
        for (i, a) in solid.iter().enumerate() {
            for b in &solid[i + 1..] {
                if a.aabb().penetration(&b.aabb()) > tol {
                    out.push((a.id, b.id));
                }
            }
        }
        out
    }
}

/// Per-object ground truth: live state and the axis-aligned hull.
pub fn observe(world: &WorldState) -> Observation {
    let objects = world
        .objects
        .iter()
        .map(|o| {
            let b = o.aabb();
            ObjectRecord {
                category: o.category.clone(),
                instance_index: o.instance_index,
                state: o.state.clone(),
                position: [o.pose.position.x, o.pose.position.y, o.pose.position.z],
                x_range: [b.min.x, b.max.x],
                y_range: [b.min.y, b.max.y],
                z_range: [b.min.z, b.max.z],
            }
        })
        .collect();
    let g = &world.gripper;
    Observation {
        objects,
        gripper: GripperRecord {
            position: [g.pose.position.x, g.pose.position.y, g.pose.position.z],
            closed: g.closed,
            held: g.held().map(|id| world.object(id).label()),
        },
    }
}
