//! Primitive actions: waypoint sampling, interpolation into 10-D action
//! frames and execution through [`step`].

use std::fmt;

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::body::{self, step};
use super::category::Kind;
use super::{Kinematics, ObjectId, Pose, Vec3, WorldError, WorldState};
use crate::config::SimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Pick,
    PlaceOn,
    PlaceAt,
    Push,
    PrismaticJointOpen,
    PrismaticJointClose,
    Press,
    RevoluteJointOpen,
    RevoluteJointClose,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 9] = [
        PrimitiveKind::Pick,
        PrimitiveKind::PlaceOn,
        PrimitiveKind::PlaceAt,
        PrimitiveKind::Push,
        PrimitiveKind::PrismaticJointOpen,
        PrimitiveKind::PrismaticJointClose,
        PrimitiveKind::Press,
        PrimitiveKind::RevoluteJointOpen,
        PrimitiveKind::RevoluteJointClose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Pick => "Pick",
            PrimitiveKind::PlaceOn => "PlaceOn",
            PrimitiveKind::PlaceAt => "PlaceAt",
            PrimitiveKind::Push => "Push",
            PrimitiveKind::PrismaticJointOpen => "PrismaticJointOpen",
            PrimitiveKind::PrismaticJointClose => "PrismaticJointClose",
            PrimitiveKind::Press => "Press",
            PrimitiveKind::RevoluteJointOpen => "RevoluteJointOpen",
            PrimitiveKind::RevoluteJointClose => "RevoluteJointClose",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// A grounded primitive invocation. Each variant carries exactly the
/// arguments it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "PascalCase")]
pub enum PrimitiveCall {
    Pick { obj: String },
    PlaceOn { obj: String },
    PlaceAt { pos: [f64; 3] },
    Push { obj: String, direction: [f64; 2], distance: f64 },
    PrismaticJointOpen { obj: String },
    PrismaticJointClose { obj: String },
    Press { obj: String },
    RevoluteJointOpen { obj: String },
    RevoluteJointClose { obj: String },
}

impl PrimitiveCall {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            PrimitiveCall::Pick { .. } => PrimitiveKind::Pick,
            PrimitiveCall::PlaceOn { .. } => PrimitiveKind::PlaceOn,
            PrimitiveCall::PlaceAt { .. } => PrimitiveKind::PlaceAt,
            PrimitiveCall::Push { .. } => PrimitiveKind::Push,
            PrimitiveCall::PrismaticJointOpen { .. } => PrimitiveKind::PrismaticJointOpen,
            PrimitiveCall::PrismaticJointClose { .. } => PrimitiveKind::PrismaticJointClose,
            PrimitiveCall::Press { .. } => PrimitiveKind::Press,
            PrimitiveCall::RevoluteJointOpen { .. } => PrimitiveKind::RevoluteJointOpen,
            PrimitiveCall::RevoluteJointClose { .. } => PrimitiveKind::RevoluteJointClose,
        }
    }

    pub fn obj_name(&self) -> Option<&str> {
        match self {
            PrimitiveCall::PlaceAt { .. } => None,
            PrimitiveCall::Pick { obj }
            | PrimitiveCall::PlaceOn { obj }
            | PrimitiveCall::Push { obj, .. }
            | PrimitiveCall::PrismaticJointOpen { obj }
            | PrimitiveCall::PrismaticJointClose { obj }
            | PrimitiveCall::Press { obj }
            | PrimitiveCall::RevoluteJointOpen { obj }
            | PrimitiveCall::RevoluteJointClose { obj } => Some(obj),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        match self {
            PrimitiveCall::Push {
                direction,
                distance,
                ..
            } => {
                if !(distance.is_finite() && *distance >= 0.0) {
                    return Err(WorldError::InvalidCall(format!(
                        "push distance must be a non-negative number, got {distance}"
                    )));
                }
                let n = (direction[0].powi(2) + direction[1].powi(2)).sqrt();
                if !(n.is_finite() && n > 0.0) {
                    return Err(WorldError::InvalidCall("push direction must be non-zero".into()));
                }
                Ok(())
            }
            PrimitiveCall::PlaceAt { pos } if pos.iter().any(|v| !v.is_finite()) => {
                Err(WorldError::InvalidCall("place position must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Renders in the answer grammar, e.g. `Push('red block', [0, 1], 0.1)`.
impl fmt::Display for PrimitiveCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.kind().name();
        match self {
            PrimitiveCall::PlaceAt { pos } => {
                write!(f, "{name}([{}, {}, {}])", pos[0], pos[1], pos[2])
            }
            PrimitiveCall::Push {
                obj,
                direction,
                distance,
            } => write!(
                f,
                "{name}('{obj}', [{}, {}], {distance})",
                direction[0], direction[1]
            ),
            other => write!(f, "{name}('{}')", other.obj_name().unwrap_or_default()),
        }
    }
}

/// One commanded gripper pose plus finger state.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionFrame {
    pub pose: Pose,
    pub closed: bool,
}

impl ActionFrame {
    /// Position, rotation rows 0 and 1, gripper command (1 = closed).
    pub fn to_vector(&self) -> [f64; 10] {
        let p = &self.pose.position;
        let r = &self.pose.rotation;
        [
            p.x,
            p.y,
            p.z,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            if self.closed { 1.0 } else { 0.0 },
        ]
    }

    /// Inverse of [`to_vector`](Self::to_vector). The third rotation row is
    /// the cross product of the first two; the gripper channel is
    /// thresholded at 0.5.
    pub fn from_vector(v: &[f64; 10]) -> Self {
        let r0 = Vec3::new(v[3], v[4], v[5]);
        let r1 = Vec3::new(v[6], v[7], v[8]);
        let r2 = r0.cross(&r1);
        let rotation = Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()]);
        ActionFrame {
            pose: Pose::new(Vec3::new(v[0], v[1], v[2]), rotation),
            closed: v[9] >= 0.5,
        }
    }
}

/// Waypoints with the finger state commanded on arrival at each.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub waypoints: Vec<Pose>,
    pub schedule: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct ExecResult {
    pub world: WorldState,
    pub motion: Vec<ActionFrame>,
    pub ok: bool,
}

/// Uniform xy offset in `[-radius, radius]^2`.
pub fn sample_jitter<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    if radius <= 0.0 {
        return Vec3::zeros();
    }
    Vec3::new(
        rng.random_range(-radius..=radius),
        rng.random_range(-radius..=radius),
        0.0,
    )
}

/// Interpolates waypoints at the configured step length. Interior frames of
/// a segment keep the finger state of its start; the endpoint carries the
/// state of its own waypoint.
pub fn motion_to_actions(
    waypoints: &[Pose],
    schedule: &[bool],
    step_length: f64,
) -> Result<Vec<ActionFrame>, WorldError> {
    if waypoints.is_empty() {
        return Err(WorldError::EmptyPath);
    }
    if waypoints.len() != schedule.len() {
        return Err(WorldError::ScheduleMismatch {
            waypoints: waypoints.len(),
            schedule: schedule.len(),
        });
    }
    let mut frames = vec![ActionFrame {
        pose: waypoints[0].clone(),
        closed: schedule[0],
    }];
    for i in 0..waypoints.len() - 1 {
        let (a, b) = (&waypoints[i], &waypoints[i + 1]);
        let len = (b.position - a.position).norm();
        let same_rotation = (a.rotation - b.rotation).abs().max() < 1e-12;
        if len < 1e-12 && same_rotation {
            if schedule[i] != schedule[i + 1] {
                frames.push(ActionFrame {
                    pose: b.clone(),
                    closed: schedule[i + 1],
                });
            }
            continue;
        }
        let n = ((len / step_length) - 1e-9).ceil().max(1.0) as usize;
        for k in 1..n {
            frames.push(ActionFrame {
                pose: a.interpolate(b, k as f64 / n as f64),
                closed: schedule[i],
            });
        }
        frames.push(ActionFrame {
            pose: b.clone(),
            closed: schedule[i + 1],
        });
    }
    Ok(frames)
}

fn resolve(world: &WorldState, name: &str) -> Result<ObjectId, WorldError> {
    world.resolve(name)
}

fn check_gripper(world: &WorldState, call: &PrimitiveCall) -> Result<(), WorldError> {
    let holding = world.gripper.hold.is_some();
    match call.kind() {
        PrimitiveKind::PlaceOn | PrimitiveKind::PlaceAt if !holding => Err(WorldError::GripperEmpty),
        PrimitiveKind::PlaceOn | PrimitiveKind::PlaceAt => Ok(()),
        _ if holding => Err(WorldError::GripperBusy),
        _ => Ok(()),
    }
}

/// Plans the waypoint sequence for `call`. `Ok(None)` means the call is
/// well-formed but statically infeasible (nothing would move).
pub fn plan_motion<R: Rng + ?Sized>(
    world: &WorldState,
    call: &PrimitiveCall,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Option<Motion>, WorldError> {
    call.validate()?;
    let target = match call.obj_name() {
        Some(name) => Some(resolve(world, name)?),
        None => None,
    };
    check_gripper(world, call)?;
    let j = sample_jitter(rng, cfg.jitter_radius);
    let down = |p: Vec3| Pose::gripper_down(p, 0.0);

    let motion = match call {
        PrimitiveCall::Pick { .. } => {
            let id = target.unwrap();
            let o = world.object(id);
            let b = o.aabb();
            let blocked = world
                .objects
                .iter()
                .any(|x| x.id != id && x.aabb().rests_on(&b, body::SUPPORT_GAP));
            if !o.is_free() || o.half_extents.max() > cfg.grasp_limit || blocked {
                return Ok(None);
            }
            let top = Vec3::new(o.pose.position.x, o.pose.position.y, b.max.z) + j;
            Motion {
                waypoints: vec![
                    down(top + Vec3::z() * cfg.clearance),
                    down(top),
                    down(top),
                    down(top + Vec3::z() * cfg.z_lift),
                ],
                schedule: vec![false, false, true, true],
            }
        }
        PrimitiveCall::PlaceOn { .. } => {
            let id = target.unwrap();
            let held = world.gripper.held().unwrap();
            if held == id {
                return Ok(None);
            }
            let t = world.object(id);
            let tb = t.aabb();
            let c = Vec3::new(t.pose.position.x, t.pose.position.y, 0.0) + j;
            let floor = if t.kind().is_container() { tb.min.z } else { tb.max.z };
            place_motion(world, c, floor, tb.max.z, cfg)
        }
        PrimitiveCall::PlaceAt { pos } => {
            let held = world.gripper.held().unwrap();
            let half = world.object(held).aabb().half_extents();
            let c = world.table_bounds.clamp_center(Vec3::from(*pos), &half) + j;
            let support = support_at(world, held, c);
            let floor = (pos[2] - half.z - cfg.settle_eps).max(support);
            place_motion(world, c, floor, floor, cfg)
        }
        PrimitiveCall::Push {
            direction, distance, ..
        } => {
            let id = target.unwrap();
            let o = world.object(id);
            if !o.is_free() {
                return Ok(None);
            }
            let u = Vec3::new(direction[0], direction[1], 0.0).normalize();
            let b = o.aabb();
            let h = b.half_extents();
            let along = u.x.abs() * h.x + u.y.abs() * h.y;
            let c = o.pose.position;
            let p0 = c - u * (along + cfg.push_gap) + j;
            let end = p0 + u * (cfg.push_gap + distance);
            let up = Vec3::z() * (b.max.z - c.z + cfg.clearance);
            let yaw = u.y.atan2(u.x);
            let pose = |p: Vec3| Pose::gripper_down(p, yaw);
            Motion {
                waypoints: vec![pose(p0 + up), pose(p0), pose(end), pose(end + up)],
                schedule: vec![true; 4],
            }
        }
        PrimitiveCall::PrismaticJointOpen { .. } | PrimitiveCall::PrismaticJointClose { .. } => {
            let id = target.unwrap();
            let (joint, handle) = joint_and_handle(world, id)?;
            let Kinematics::Prismatic { axis, max, current } = &world.object(joint).kinematics
            else {
                unreachable!()
            };
            let axis = Vec3::from(*axis);
            let opening = matches!(call, PrimitiveCall::PrismaticJointOpen { .. });
            let (dir, travel) = if opening {
                (axis, max - current)
            } else {
                (-axis, *current)
            };
            let h = world.object(handle);
            let top = Vec3::new(h.pose.position.x, h.pose.position.y, h.aabb().max.z) + j;
            let pulled = top + dir * (travel + cfg.joint_overshoot);
            let lift = Vec3::z() * cfg.clearance;
            Motion {
                waypoints: vec![
                    down(top + lift),
                    down(top),
                    down(top),
                    down(pulled),
                    down(pulled),
                    down(pulled + lift),
                ],
                schedule: vec![false, false, true, true, false, false],
            }
        }
        PrimitiveCall::Press { .. } => {
            let id = target.unwrap();
            let o = world.object(id);
            if !matches!(o.kind(), Kind::Button { .. }) {
                return Err(WorldError::NotPressable(o.label()));
            }
            let b = o.aabb();
            let top = Vec3::new(o.pose.position.x, o.pose.position.y, b.max.z) + j;
            Motion {
                waypoints: vec![
                    down(top + Vec3::z() * cfg.clearance),
                    down(top - Vec3::z() * cfg.press_depth),
                    down(top + Vec3::z() * cfg.clearance),
                ],
                schedule: vec![true; 3],
            }
        }
        PrimitiveCall::RevoluteJointOpen { .. } | PrimitiveCall::RevoluteJointClose { .. } => {
            // No revolute joints exist in this world.
            return Err(WorldError::NotArticulated(world.object(target.unwrap()).label()));
        }
    };
    Ok(Some(motion))
}

/// Release sequence that puts the held object's bottom `settle_eps` above
/// `floor` at xy `c`; `clear_top` is the height to pass over.
fn place_motion(world: &WorldState, c: Vec3, floor: f64, clear_top: f64, cfg: &SimConfig) -> Motion {
    let held = world.gripper.held().unwrap();
    let o = world.object(held);
    let hz = o.aabb().half_extents().z;
    let offset = o.pose.position - world.gripper.pose.position;
    let place_center = Vec3::new(c.x, c.y, floor + hz + cfg.settle_eps);
    let above_center = Vec3::new(c.x, c.y, floor.max(clear_top) + hz + cfg.clearance);
    let rot = world.gripper.pose.rotation;
    let at = |center: Vec3| Pose::new(center - offset, rot);
    let place = at(place_center);
    let retreat = place.translated(Vec3::z() * cfg.clearance);
    Motion {
        waypoints: vec![at(above_center), place.clone(), place, retreat],
        schedule: vec![true, true, false, false],
    }
}

/// Support height under the held object if it were centred at `c`.
fn support_at(world: &WorldState, held: ObjectId, c: Vec3) -> f64 {
    let mut probe = world.clone();
    probe.gripper.hold = None;
    let o = probe.object_mut(held);
    o.pose.position = Vec3::new(c.x, c.y, 10.0);
    body::support_height(&probe, held)
}

fn joint_and_handle(world: &WorldState, id: ObjectId) -> Result<(ObjectId, ObjectId), WorldError> {
    let Some(joint) = world.joint_of(id) else {
        return Err(WorldError::NotArticulated(world.object(id).label()));
    };
    if id != joint {
        return Ok((joint, id));
    }
    match world.children(joint).next() {
        Some(h) => Ok((joint, h.id)),
        None => Err(WorldError::NotArticulated(world.object(id).label())),
    }
}

/// Waypoints only; empty when the call is statically infeasible.
pub fn sample_waypoints<R: Rng + ?Sized>(
    world: &WorldState,
    call: &PrimitiveCall,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<Pose>, WorldError> {
    Ok(plan_motion(world, call, cfg, rng)?
        .map(|m| m.waypoints)
        .unwrap_or_default())
}

/// Executes `call` in place, handing every frame to `record` together with
/// the world as it was before the frame. Returns whether the primitive
/// achieved its own postcondition.
pub fn execute_call<R, F>(
    world: &mut WorldState,
    call: &PrimitiveCall,
    cfg: &SimConfig,
    rng: &mut R,
    mut record: F,
) -> Result<bool, WorldError>
where
    R: Rng + ?Sized,
    F: FnMut(&WorldState, &ActionFrame),
{
    let Some(motion) = plan_motion(world, call, cfg, rng)? else {
        return Ok(false);
    };
    let target = call.obj_name().map(|n| world.resolve(n)).transpose()?;
    let held_before = world.gripper.held();
    let start = target.map(|t| world.object(t).pose.position);

    let mut path = Vec::with_capacity(motion.waypoints.len() + 1);
    path.push(world.gripper.pose.clone());
    path.extend(motion.waypoints.iter().cloned());
    let mut schedule = Vec::with_capacity(path.len());
    schedule.push(motion.schedule[0]);
    schedule.extend(motion.schedule.iter().copied());
    let frames = motion_to_actions(&path, &schedule, cfg.step_length)?;

    let mut pressed = false;
    for f in frames.iter().skip(1) {
        record(world, f);
        let ev = step(world, &f.pose, f.closed, cfg);
        pressed |= ev.pressed.is_some();
    }

    let ok = match call {
        PrimitiveCall::Pick { .. } => world.gripper.held() == target && target.is_some(),
        PrimitiveCall::PlaceOn { .. } | PrimitiveCall::PlaceAt { .. } => {
            held_before.is_some() && world.gripper.hold.is_none()
        }
        PrimitiveCall::Push {
            direction, distance, ..
        } => {
            let u = Vec3::new(direction[0], direction[1], 0.0).normalize();
            let moved = world.object(target.unwrap()).pose.position - start.unwrap();
            *distance == 0.0 || moved.dot(&u) >= 0.5 * distance
        }
        PrimitiveCall::PrismaticJointOpen { .. } | PrimitiveCall::PrismaticJointClose { .. } => {
            let joint = world.joint_of(target.unwrap()).unwrap();
            match &world.object(joint).kinematics {
                Kinematics::Prismatic { max, current, .. } => {
                    if matches!(call, PrimitiveCall::PrismaticJointOpen { .. }) {
                        *current == *max
                    } else {
                        *current == 0.0
                    }
                }
                _ => false,
            }
        }
        PrimitiveCall::Press { .. } => pressed,
        PrimitiveCall::RevoluteJointOpen { .. } | PrimitiveCall::RevoluteJointClose { .. } => false,
    };
    Ok(ok)
}

/// Functional form of [`execute_call`].
pub fn exec_primitive<R: Rng + ?Sized>(
    world: &WorldState,
    call: &PrimitiveCall,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<ExecResult, WorldError> {
    let mut next = world.clone();
    let mut motion = Vec::new();
    let ok = execute_call(&mut next, call, cfg, rng, |_, f| motion.push(f.clone()))?;
    Ok(ExecResult {
        world: next,
        motion,
        ok,
    })
}
