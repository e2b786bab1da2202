use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::category::{self, Kind};
use super::{
    Gripper, Kinematics, ObjectId, ObjectInstance, Pose, TableBounds, Vec3, WorldError, WorldState,
};
use crate::config::SimConfig;

/// Scene description as stored in scene files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub table_bounds: TableBounds,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category: String,
    pub position: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub kinematics: KinematicsSpec,
    /// Rotation about +z in radians.
    #[serde(default)]
    pub yaw: f64,
    /// Explicit instance number; assigned automatically when omitted.
    #[serde(default)]
    pub instance_index: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinematicsSpec {
    #[default]
    Free,
    Fixed,
    Prismatic {
        axis: [f64; 3],
        #[serde(default)]
        max: Option<f64>,
    },
}

/// Builds a world from a scene spec with the default simulator constants.
pub fn spawn_scene(spec: &SceneSpec) -> Result<WorldState, WorldError> {
    spawn_scene_with(spec, &SimConfig::default())
}

pub fn spawn_scene_with(spec: &SceneSpec, cfg: &SimConfig) -> Result<WorldState, WorldError> {
    let mut per_category: HashMap<&str, usize> = HashMap::new();
    for o in &spec.objects {
        *per_category.entry(o.category.as_str()).or_default() += 1;
    }
    let mut seen: HashMap<&str, u32> = HashMap::new();
    let mut objects = Vec::with_capacity(spec.objects.len());

    for (i, o) in spec.objects.iter().enumerate() {
        let counter = seen.entry(o.category.as_str()).or_default();
        *counter += 1;
        let instance_index = o.instance_index.unwrap_or(if per_category[o.category.as_str()] > 1 {
            *counter
        } else {
            0
        });
        let label = super::label_of(&o.category, instance_index);

        let half = Vec3::from(o.half_extents);
        if half.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(WorldError::InvalidObject(label, "half extents must be positive".into()));
        }
        let position = Vec3::from(o.position);
        if position.iter().any(|v| !v.is_finite()) || !o.yaw.is_finite() {
            return Err(WorldError::InvalidObject(label, "non-finite pose".into()));
        }
        let state = o
            .state
            .clone()
            .unwrap_or_else(|| category::default_state(&o.category).to_string());
        if !category::states(&o.category).contains(&state.as_str()) {
            return Err(WorldError::InvalidState {
                category: o.category.clone(),
                state,
            });
        }

        let (kinematics, rest_position) = match &o.kinematics {
            KinematicsSpec::Free => (Kinematics::Free, position),
            KinematicsSpec::Fixed => (Kinematics::Fixed, position),
            KinematicsSpec::Prismatic { axis, max } => {
                let axis = Vec3::from(*axis);
                let norm = axis.norm();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(WorldError::InvalidObject(label, "zero joint axis".into()));
                }
                let axis = axis / norm;
                let max = max.unwrap_or(cfg.prismatic_max);
                if !(max.is_finite() && max > 0.0) {
                    return Err(WorldError::InvalidObject(label, "joint range must be positive".into()));
                }
                let current = if state == "open" { max } else { 0.0 };
                (
                    Kinematics::Prismatic {
                        axis: axis.into(),
                        max,
                        current,
                    },
                    position - axis * current,
                )
            }
        };

        objects.push(ObjectInstance {
            id: ObjectId(i),
            category: o.category.clone(),
            instance_index,
            state,
            pose: Pose::from_yaw(position, o.yaw),
            half_extents: half,
            kinematics,
            parent: None,
            rest_position,
        });
    }

    link_handles(&mut objects);

    let world = WorldState {
        scene_id: spec.id.clone(),
        objects,
        gripper: Gripper {
            pose: Pose::gripper_down(Vec3::from(cfg.home), 0.0),
            closed: false,
            hold: None,
            pressing: None,
        },
        table_bounds: spec.table_bounds.clone(),
        rng_seed: spec.seed,
    };

    for o in world.objects.iter().filter(|o| o.is_free()) {
        if !world.table_bounds.contains_footprint(&o.aabb()) {
            return Err(WorldError::OutOfBounds(o.label()));
        }
    }
    if let Some((a, b)) = world.interpenetrating_pairs(1e-3).first() {
        return Err(WorldError::OverlappingSpawn(
            world.object(*a).label(),
            world.object(*b).label(),
        ));
    }
    Ok(world)
}

/// Attaches "X handle" to "X" (same instance number) and records the rest
/// position of every handle relative to its joint.
fn link_handles(objects: &mut [ObjectInstance]) {
    for i in 0..objects.len() {
        let Kind::Handle { parent } = objects[i].kind() else {
            continue;
        };
        let idx = objects[i].instance_index;
        let Some(p) = objects
            .iter()
            .position(|o| o.category == parent && o.instance_index == idx)
        else {
            continue;
        };
        let offset = match &objects[p].kinematics {
            Kinematics::Prismatic { axis, current, .. } => Vec3::from(*axis) * *current,
            _ => Vec3::zeros(),
        };
        let pid = objects[p].id;
        let h = &mut objects[i];
        h.parent = Some(pid);
        h.rest_position = h.pose.position - offset;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(category: &str, position: [f64; 3], half: [f64; 3]) -> ObjectSpec {
        ObjectSpec {
            category: category.into(),
            position,
            half_extents: half,
            state: None,
            kinematics: KinematicsSpec::Free,
            yaw: 0.0,
            instance_index: None,
        }
    }

    fn spec(objects: Vec<ObjectSpec>) -> SceneSpec {
        SceneSpec {
            id: "t".into(),
            seed: 0,
            table_bounds: TableBounds::default(),
            objects,
        }
    }

    #[test]
    fn closed_drawer_joint_at_zero() {
        let mut drawer = obj("drawer", [0.45, 0.3, 0.11], [0.1, 0.1, 0.06]);
        drawer.kinematics = KinematicsSpec::Prismatic {
            axis: [-1.0, 0.0, 0.0],
            max: None,
        };
        drawer.state = Some("closed".into());
        let block = obj("red block", [0.4, -0.2, 0.08], [0.03; 3]);
        let w = spawn_scene(&spec(vec![drawer, block])).unwrap();
        assert_eq!(w.objects.len(), 2);
        match &w.objects[0].kinematics {
            Kinematics::Prismatic { current, max, .. } => {
                assert_eq!(*current, 0.0);
                assert_eq!(*max, 0.15);
            }
            k => panic!("unexpected {k:?}"),
        }
    }

    #[test]
    fn empty_scene() {
        let w = spawn_scene(&spec(vec![])).unwrap();
        assert!(w.objects.is_empty());
        assert!(w.observe().objects.is_empty());
    }

    #[test]
    fn overlap_rejected() {
        let a = obj("red block", [0.4, 0.0, 0.08], [0.03; 3]);
        let b = obj("blue block", [0.41, 0.0, 0.08], [0.03; 3]);
        assert!(matches!(
            spawn_scene(&spec(vec![a, b])),
            Err(WorldError::OverlappingSpawn(..))
        ));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let a = obj("red block", [0.79, 0.0, 0.08], [0.03; 3]);
        assert!(matches!(
            spawn_scene(&spec(vec![a])),
            Err(WorldError::OutOfBounds(_))
        ));
    }

    #[test]
    fn bad_state_rejected() {
        let mut a = obj("drawer", [0.4, 0.0, 0.08], [0.03; 3]);
        a.state = Some("ajar".into());
        assert!(matches!(
            spawn_scene(&spec(vec![a])),
            Err(WorldError::InvalidState { .. })
        ));
    }

    #[test]
    fn duplicate_categories_get_numbers() {
        let a = obj("red block", [0.2, 0.0, 0.08], [0.03; 3]);
        let b = obj("red block", [0.4, 0.0, 0.08], [0.03; 3]);
        let w = spawn_scene(&spec(vec![a, b])).unwrap();
        assert_eq!(w.objects[0].label(), "red block 1");
        assert_eq!(w.objects[1].label(), "red block 2");
        assert!(matches!(
            w.resolve("red block"),
            Err(WorldError::AmbiguousObject(_))
        ));
        assert_eq!(w.resolve("red block 2").unwrap(), ObjectId(1));
        assert!(matches!(
            w.resolve("green block"),
            Err(WorldError::UnknownObject(_))
        ));
    }
}
