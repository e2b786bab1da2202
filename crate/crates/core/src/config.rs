use serde::{Deserialize, Serialize};

/// Simulator constants. All lengths are meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Largest half extent an object may have and still be picked.
    pub grasp_limit: f64,
    /// Height a picked object is raised above its start.
    pub z_lift: f64,
    /// Gap left between a placed object and its support.
    pub settle_eps: f64,
    /// Approach / retreat height above the object top.
    pub clearance: f64,
    /// Half-width of the square the waypoint jitter is drawn from.
    pub jitter_radius: f64,
    /// Interpolation step between consecutive action frames.
    pub step_length: f64,
    /// Maximum off-center distance (per axis) at which a grasp, a push or a
    /// press still takes hold.
    pub contact_tolerance: f64,
    /// Vertical slack when closing the gripper on top of an object.
    pub grasp_height_tolerance: f64,
    /// Standoff between the pusher and the object face before a push.
    pub push_gap: f64,
    /// How far below a button top the press waypoint goes.
    pub press_depth: f64,
    /// Extra travel past the joint limit when opening or closing.
    pub joint_overshoot: f64,
    /// Displacement applied to objects resting on a triggered catapult.
    pub launch_displacement: [f64; 3],
    /// Default travel of a prismatic joint when the scene does not give one.
    pub prismatic_max: f64,
    /// Gripper home position at the start of every episode.
    pub home: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grasp_limit: 0.06,
            z_lift: 0.15,
            settle_eps: 0.002,
            clearance: 0.10,
            jitter_radius: 0.01,
            step_length: 0.02,
            contact_tolerance: 0.009,
            grasp_height_tolerance: 0.01,
            push_gap: 0.02,
            press_depth: 0.005,
            joint_overshoot: 0.01,
            launch_displacement: [0.25, 0.0, 0.0],
            prismatic_max: 0.15,
            home: [0.30, 0.0, 0.35],
        }
    }
}

impl SimConfig {
    /// Same constants with waypoint jitter disabled.
    pub fn without_jitter(&self) -> Self {
        Self {
            jitter_radius: 0.0,
            ..self.clone()
        }
    }
}
