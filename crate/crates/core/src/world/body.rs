//! Per-frame contact rules. `step` is the only place the world changes
//! while the gripper moves.

use super::category::Kind;
use super::{Hold, Kinematics, ObjectId, Pose, Vec3, WorldState};
use crate::config::SimConfig;

/// Gap allowed between a resting object and its support.
pub const SUPPORT_GAP: f64 = 0.01;
/// Minimum volumetric share for an object to count as inside a container.
pub const INSIDE_FRACTION: f64 = 0.9;
/// Interpenetration tolerated between free objects.
pub const PENETRATION_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepEvents {
    pub grasped: Option<ObjectId>,
    pub released: Option<ObjectId>,
    pub pushed: Vec<ObjectId>,
    pub pressed: Option<ObjectId>,
    /// Net joint travel applied this frame.
    pub joint_delta: f64,
}

/// Moves the gripper to `target` with the commanded finger state and
/// resolves contacts. Motion is applied under the previous finger state; a
/// change of finger state takes effect at the new pose.
pub fn step(world: &mut WorldState, target: &Pose, closed: bool, cfg: &SimConfig) -> StepEvents {
    let mut ev = StepEvents::default();
    let prev = world.gripper.pose.position;
    let was_closed = world.gripper.closed;
    world.gripper.pose = target.clone();
    let delta = target.position - prev;

    match world.gripper.hold.clone() {
        Some(Hold::Rigid {
            object,
            rel_position,
            rel_rotation,
        }) => {
            let g = &world.gripper.pose;
            let pose = Pose::new(g.position + g.rotation * rel_position, g.rotation * rel_rotation);
            world.object_mut(object).pose = pose;
        }
        Some(Hold::Handle { joint, .. }) => {
            ev.joint_delta = drive_joint(world, joint, &delta);
        }
        None if was_closed && (delta.x != 0.0 || delta.y != 0.0) => {
            ev.pushed = push(world, &delta, cfg);
        }
        None => {}
    }

    if was_closed && world.gripper.hold.is_none() {
        ev.pressed = press(world, cfg);
    } else {
        world.gripper.pressing = None;
    }

    if closed && !was_closed {
        world.gripper.closed = true;
        ev.grasped = grasp(world, cfg);
    } else if !closed && was_closed {
        world.gripper.closed = false;
        world.gripper.pressing = None;
        if let Some(hold) = world.gripper.hold.take() {
            let id = hold.object();
            if matches!(hold, Hold::Rigid { .. }) {
                settle(world, id, cfg);
            }
            ev.released = Some(id);
        }
    }
    ev
}

fn graspable(world: &WorldState, id: ObjectId, cfg: &SimConfig) -> bool {
    let o = world.object(id);
    match o.kind() {
        Kind::Handle { .. } => world.joint_of(id).is_some(),
        _ => o.is_free() && o.half_extents.max() <= cfg.grasp_limit,
    }
}

fn grasp(world: &mut WorldState, cfg: &SimConfig) -> Option<ObjectId> {
    let g = world.gripper.pose.clone();
    let p = g.position;
    let mut best: Option<(f64, ObjectId)> = None;
    for o in &world.objects {
        if !graspable(world, o.id, cfg) {
            continue;
        }
        let c = o.pose.position;
        let top = o.aabb().max.z;
        if (p.x - c.x).abs() > cfg.contact_tolerance
            || (p.y - c.y).abs() > cfg.contact_tolerance
            || (p.z - top).abs() > cfg.grasp_height_tolerance
        {
            continue;
        }
        let d = (p - Vec3::new(c.x, c.y, top)).norm();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, o.id));
        }
    }
    let (_, id) = best?;
    let hold = match world.joint_of(id) {
        Some(joint) if world.object(id).parent.is_some() => Hold::Handle { handle: id, joint },
        _ => {
            let o = world.object(id);
            let rt = g.rotation.transpose();
            Hold::Rigid {
                object: id,
                rel_position: rt * (o.pose.position - p),
                rel_rotation: rt * o.pose.rotation,
            }
        }
    };
    world.gripper.hold = Some(hold);
    Some(id)
}

/// Applies the gripper displacement to a prismatic joint. Returns the joint
/// travel actually applied after clamping to the range.
fn drive_joint(world: &mut WorldState, joint: ObjectId, delta: &Vec3) -> f64 {
    let (axis, max, current) = match &world.object(joint).kinematics {
        Kinematics::Prismatic { axis, max, current } => (Vec3::from(*axis), *max, *current),
        _ => return 0.0,
    };
    let next = (current + delta.dot(&axis)).clamp(0.0, max);
    let applied = next - current;
    if applied == 0.0 {
        return 0.0;
    }
    set_joint(world, joint, next);
    applied
}

/// Sets a prismatic joint value, moving the body, its handles and anything
/// inside it. Poses are recomputed from rest so a round trip is exact.
pub(crate) fn set_joint(world: &mut WorldState, joint: ObjectId, value: f64) {
    let Kinematics::Prismatic { axis, max, current } = world.object(joint).kinematics.clone()
    else {
        return;
    };
    let axis = Vec3::from(axis);
    let body = world.object(joint).aabb();
    let held = world.gripper.held();
    let contents: Vec<ObjectId> = world
        .objects
        .iter()
        .filter(|o| o.is_free() && Some(o.id) != held && o.id != joint)
        .filter(|o| o.aabb().contained_fraction(&body) >= INSIDE_FRACTION)
        .map(|o| o.id)
        .collect();
    let shift = axis * (value - current);

    let o = world.object_mut(joint);
    o.kinematics = Kinematics::Prismatic {
        axis: axis.into(),
        max,
        current: value,
    };
    o.pose.position = o.rest_position + axis * value;
    if o.state == "open" || o.state == "closed" {
        o.state = if value >= max * 0.5 { "open" } else { "closed" }.to_string();
    }
    let children: Vec<ObjectId> = world.children(joint).map(|c| c.id).collect();
    for c in children {
        let c = world.object_mut(c);
        c.pose.position = c.rest_position + axis * value;
    }
    for id in contents {
        world.object_mut(id).pose.position += shift;
    }
}

/// Point push by a closed, empty gripper that moved by `delta` this frame.
fn push(world: &mut WorldState, delta: &Vec3, cfg: &SimConfig) -> Vec<ObjectId> {
    let m = Vec3::new(delta.x, delta.y, 0.0);
    let len = m.norm();
    let u = m / len;
    let p = world.gripper.pose.position;
    let mut moved = Vec::new();
    for i in 0..world.objects.len() {
        let o = &world.objects[i];
        if !o.is_free() {
            continue;
        }
        let b = o.aabb();
        if !b.contains_xy_strict(&p) || p.z < b.min.z || p.z > b.max.z {
            continue;
        }
        let c = o.pose.position;
        let lateral = (u.x * (c.y - p.y) - u.y * (c.x - p.x)).abs();
        if lateral > cfg.contact_tolerance {
            // Off-center contact slips past the object.
            continue;
        }
        let mut s = f64::INFINITY;
        for a in 0..2 {
            if m[a] > 0.0 {
                s = s.min((p[a] - b.min[a]) / m[a]);
            } else if m[a] < 0.0 {
                s = s.min((p[a] - b.max[a]) / m[a]);
            }
        }
        if !s.is_finite() || s <= 0.0 {
            continue;
        }
        let id = o.id;
        if translate_checked(world, id, m * s) {
            moved.push(id);
        }
    }
    moved
}

/// Translates a free object (and its contents) in xy, clamped to the table.
/// Reverts and returns false if the result would interpenetrate another
/// solid object.
fn translate_checked(world: &mut WorldState, id: ObjectId, shift: Vec3) -> bool {
    let before = world.object(id).aabb();
    let contents: Vec<ObjectId> = if world.object(id).kind().is_container() {
        world
            .objects
            .iter()
            .filter(|o| o.id != id && o.is_free())
            .filter(|o| o.aabb().contained_fraction(&before) >= INSIDE_FRACTION)
            .map(|o| o.id)
            .collect()
    } else {
        Vec::new()
    };
    let saved = world.object(id).pose.position;
    let half = world.object(id).aabb().half_extents();
    let target = world.table_bounds.clamp_center(saved + shift, &half);
    let applied = target - saved;
    world.object_mut(id).pose.position = target;

    let me = world.object(id).aabb();
    let solid_me = !world.object(id).kind().is_container();
    let blocked = world.objects.iter().any(|o| {
        o.id != id
            && o.is_free()
            && !contents.contains(&o.id)
            && Some(o.id) != world.gripper.held()
            && !o.kind().is_container()
            && solid_me
            && o.aabb().penetration(&me) > PENETRATION_TOL
    });
    if blocked {
        world.object_mut(id).pose.position = saved;
        return false;
    }
    for c in contents {
        world.object_mut(c).pose.position += applied;
    }
    applied.norm() > 0.0
}

fn press(world: &mut WorldState, cfg: &SimConfig) -> Option<ObjectId> {
    let p = world.gripper.pose.position;
    let button = world.objects.iter().find(|o| {
        if !matches!(o.kind(), Kind::Button { .. }) {
            return false;
        }
        let b = o.aabb();
        (p.x - o.pose.position.x).abs() <= cfg.contact_tolerance
            && (p.y - o.pose.position.y).abs() <= cfg.contact_tolerance
            && p.z <= b.max.z - cfg.press_depth * 0.5
            && p.z >= b.min.z
    });
    let Some(button) = button.map(|b| b.id) else {
        world.gripper.pressing = None;
        return None;
    };
    if world.gripper.pressing == Some(button) {
        return None;
    }
    world.gripper.pressing = Some(button);
    trigger(world, button, cfg);
    Some(button)
}

/// Effect of pressing a button: a catapult with the matching name fires.
fn trigger(world: &mut WorldState, button: ObjectId, cfg: &SimConfig) {
    let b = world.object(button);
    let Kind::Button { target } = b.kind() else {
        return;
    };
    let idx = b.instance_index;
    let Some(cat) = world
        .objects
        .iter()
        .find(|o| o.category == target && o.instance_index == idx && o.kind() == Kind::Catapult)
        .map(|o| o.id)
    else {
        return;
    };
    world.object_mut(cat).state = "triggered".to_string();
    let arm = world.object(cat).aabb();
    let held = world.gripper.held();
    let riders: Vec<ObjectId> = world
        .objects
        .iter()
        .filter(|o| o.is_free() && o.id != cat && Some(o.id) != held)
        .filter(|o| o.aabb().rests_on(&arm, SUPPORT_GAP))
        .map(|o| o.id)
        .collect();
    let launch = Vec3::from(cfg.launch_displacement);
    for id in riders {
        let o = world.object_mut(id);
        o.pose.position += launch;
        settle(world, id, cfg);
    }
}

/// Drops an object onto the highest support under its footprint: a
/// container floor when it is above an open container, else the highest top
/// surface below it, else the table.
pub(crate) fn settle(world: &mut WorldState, id: ObjectId, cfg: &SimConfig) {
    let half = world.object(id).aabb().half_extents();
    let clamped = world
        .table_bounds
        .clamp_center(world.object(id).pose.position, &half);
    world.object_mut(id).pose.position = clamped;
    let z = support_height(world, id) + half.z + cfg.settle_eps;
    world.object_mut(id).pose.position.z = z;
}

pub(crate) fn support_height(world: &WorldState, id: ObjectId) -> f64 {
    let me = world.object(id).aabb();
    let bottom = me.min.z;
    let mut support = world.table_bounds.surface_z;
    for o in &world.objects {
        if o.id == id || Some(o.id) == world.gripper.held() {
            continue;
        }
        let b = o.aabb();
        if me.footprint_overlap(&b) <= 1e-12 {
            continue;
        }
        let h = if o.kind().is_container() && me.footprint_fraction(&b) >= INSIDE_FRACTION {
            b.min.z
        } else {
            b.max.z
        };
        if h <= bottom + 1e-9 && h > support {
            support = h;
        }
    }
    support
}
