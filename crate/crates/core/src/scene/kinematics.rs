//! Forward kinematics of the 6-DoF arm.
//!
//! Chain, from the floor up: J1 yaw about the vertical base axis, J2 shoulder
//! pitch carrying the long arm, J3 elbow pitch carrying the short arm, J4 roll
//! about the forearm, J5 wrist pitch and J6 roll about the approach axis. With
//! J2 = J3 = 0 both links stand vertical. The tool frame's local x is the
//! approach axis (perpendicular to the forearm at J5 = 0) and local z is the
//! camera's image-up direction.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::ArmConfig;

pub type Joints = [f64; 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub joints: Joints,
    pub joint_limits: [[f64; 2]; 6],
    pub gripper: Gripper,
    pub home_pose: Joints,
}

impl RobotState {
    pub fn at_home(arm: &ArmConfig) -> Self {
        let home = home_pose(arm);
        Self { joints: home, joint_limits: arm.joint_limits, gripper: Gripper::Open, home_pose: home }
    }

    pub fn clamp_to_limits(&mut self) {
        for (q, [lo, hi]) in self.joints.iter_mut().zip(self.joint_limits) {
            *q = q.clamp(lo, hi);
        }
    }

    pub fn within_limits(&self) -> bool {
        self.joints.iter().zip(self.joint_limits).all(|(q, [lo, hi])| *q >= lo && *q <= hi)
    }

    /// Largest absolute joint deviation from the home pose.
    pub fn distance_from_home(&self) -> f64 {
        self.joints
            .iter()
            .zip(self.home_pose)
            .map(|(q, h)| (q - h).abs())
            .fold(0.0, f64::max)
    }

    pub fn go_home(&mut self) {
        self.joints = self.home_pose;
        self.gripper = Gripper::Open;
    }
}

pub fn home_pose(arm: &ArmConfig) -> Joints {
    [0.0, 0.0, 0.0, 0.0, arm.home_wrist_pitch, 0.0]
}

/// Palm and camera frames produced by [`forward_kinematics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPoses {
    pub end_effector: Isometry3<f64>,
    pub camera: Isometry3<f64>,
}

impl ArmPoses {
    pub fn palm_position(&self) -> Vector3<f64> {
        self.end_effector.translation.vector
    }

    pub fn approach_axis(&self) -> Vector3<f64> {
        self.end_effector.rotation * Vector3::x()
    }
}

pub fn forward_kinematics(arm: &ArmConfig, joints: &Joints) -> ArmPoses {
    let [q1, q2, q3, q4, q5, q6] = *joints;
    let yaw = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a);
    let pitch = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
    let roll = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a);
    let lift = |d: f64| Isometry3::from_parts(Translation3::new(0.0, 0.0, d), UnitQuaternion::identity());
    let rot = |r: UnitQuaternion<f64>| Isometry3::from_parts(Translation3::identity(), r);

    let wrist = rot(yaw(q1))
        * lift(arm.shoulder_height)
        * rot(pitch(q2))
        * lift(arm.long_arm)
        * rot(pitch(q3))
        * lift(arm.short_arm)
        * rot(yaw(q4))
        * rot(pitch(q5))
        * rot(roll(q6));
    let along = |d: f64| Isometry3::from_parts(Translation3::new(d, 0.0, 0.0), UnitQuaternion::identity());
    let end_effector = wrist * along(arm.palm_offset);
    let camera = end_effector * along(-arm.camera_offset);
    ArmPoses { end_effector, camera }
}
