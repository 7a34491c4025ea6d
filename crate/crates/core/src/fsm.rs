//! The six-state grasp controller.
//!
//! Each state owns a subset of the joints. The user (through intent) steers
//! search and the initial approach; vision centres the object and decides
//! when to hand over to the autonomous final approach, grasp and return.

use std::collections::BTreeSet;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::intent::IntentSample;
use crate::riemann::MiClass;
use crate::scene::{forward_kinematics, Color, ObjectKind, RobotState, Shape};
use crate::vision::{Camera, VisionSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateId {
    ObjectSearch = 1,
    CenterObject = 2,
    InitialApproach = 3,
    FinalApproach = 4,
    GraspObject = 5,
    ReturnToStart = 6,
}

impl StateId {
    pub const ALL: [StateId; 6] = [
        StateId::ObjectSearch,
        StateId::CenterObject,
        StateId::InitialApproach,
        StateId::FinalApproach,
        StateId::GraspObject,
        StateId::ReturnToStart,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    /// States whose command never depends on intent.
    pub fn autonomous(self) -> bool {
        matches!(self, StateId::FinalApproach | StateId::GraspObject | StateId::ReturnToStart)
    }
}

/// What caused a state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Bci,
    Cv,
    Default,
}

pub type Edge = (StateId, Trigger, StateId);

/// The complete transition relation, self-loops included.
pub fn legal_edges() -> BTreeSet<Edge> {
    use StateId::*;
    let mut edges: BTreeSet<Edge> = [
        (ObjectSearch, Trigger::Bci, CenterObject),
        (CenterObject, Trigger::Cv, ObjectSearch),
        (CenterObject, Trigger::Cv, InitialApproach),
        (InitialApproach, Trigger::Cv, CenterObject),
        (InitialApproach, Trigger::Cv, FinalApproach),
        (FinalApproach, Trigger::Cv, GraspObject),
        (GraspObject, Trigger::Default, ReturnToStart),
        (ReturnToStart, Trigger::Default, ObjectSearch),
    ]
    .into_iter()
    .collect();
    for s in StateId::ALL {
        for t in [Trigger::Bci, Trigger::Cv, Trigger::Default] {
            edges.insert((s, t, s));
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Hold,
    Close,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCommand {
    pub velocities: [f64; 6],
    pub gripper: GripperCommand,
}

impl JointCommand {
    pub fn stop() -> Self {
        Self { velocities: [0.0; 6], gripper: GripperCommand::Hold }
    }

    fn joint(i: usize, v: f64) -> Self {
        let mut c = Self::stop();
        c.velocities[i] = v;
        c
    }

    pub fn is_zero(&self) -> bool {
        self.velocities.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmState {
    pub current: StateId,
    /// Where centering hands back to; set only while centering.
    pub return_state: Option<StateId>,
    /// The last tick changed state and emitted the all-zero lock command.
    pub lock_pending: bool,
    pub state_entry_time: f64,
    /// Object of interest, tracked by its colour.
    pub ooi: Option<Color>,
    /// Object identity as classified when the final approach began.
    pub selected: Option<ObjectKind>,
    /// Centering must converge to the tight threshold (state-boundary
    /// centering rather than a mid-approach detour).
    pub full_centering: bool,
    /// When the object of interest was last seen.
    pub last_seen: f64,
    /// Closest palm distance estimated during the final approach.
    pub closest: f64,
    /// Steering class held without interruption, and since when.
    pub steer_since: Option<(MiClass, f64)>,
}

impl FsmState {
    pub fn new(t: f64) -> Self {
        Self {
            current: StateId::ObjectSearch,
            return_state: None,
            lock_pending: false,
            state_entry_time: t,
            ooi: None,
            selected: None,
            full_centering: false,
            last_seen: t,
            closest: f64::INFINITY,
            steer_since: None,
        }
    }

    fn enter(&mut self, next: StateId, t: f64) {
        self.current = next;
        self.state_entry_time = t;
        self.last_seen = t;
        if next != StateId::CenterObject {
            self.return_state = None;
            self.full_centering = false;
        }
        // Centering detours do not consume intent, so they do not break a
        // held steering class.
        if !matches!(next, StateId::CenterObject | StateId::InitialApproach) {
            self.steer_since = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub state: FsmState,
    pub command: JointCommand,
    /// The edge taken, when the state changed.
    pub edge: Option<Edge>,
}

/// Confident class and the joint speed it maps to, or `None` below threshold.
fn confident(cfg: &SimConfig, intent: &IntentSample) -> Option<(MiClass, f64)> {
    let class = intent.class?;
    if intent.certainty.is_nan() || intent.certainty < cfg.fsm.cert_min {
        return None;
    }
    Some((class, (cfg.fsm.gain * intent.certainty).min(cfg.fsm.v_max)))
}

/// Palm-to-object distance from the camera's range estimate.
fn palm_distance(cfg: &SimConfig, vision: &VisionSummary, color: Color) -> Option<f64> {
    vision.observation(color)?.estimated_distance.map(|d| d - cfg.arm.camera_offset)
}

/// One controller step.
pub fn tick(cfg: &SimConfig, fsm: &FsmState, intent: &IntentSample, vision: &VisionSummary, robot: &RobotState, t: f64) -> Tick {
    let f = &cfg.fsm;
    let mut s = fsm.clone();
    s.lock_pending = false;
    let wish = confident(cfg, intent);
    if let Some(c) = s.ooi {
        if vision.observation(c).is_some() {
            s.last_seen = t;
        }
    }
    let lost_for = t - s.last_seen;

    let (command, next): (JointCommand, Option<(Trigger, StateId)>) = match s.current {
        StateId::ObjectSearch => {
            let steer = wish.filter(|(c, _)| matches!(c, MiClass::Left | MiClass::Right)).map(|(c, _)| c);
            s.ooi = vision.object_of_interest(steer).map(|o| o.blob.color);
            match wish {
                Some((MiClass::Left, v)) => (JointCommand::joint(0, v), None),
                Some((MiClass::Right, v)) => (JointCommand::joint(0, -v), None),
                Some((MiClass::BothHands, _)) if s.ooi.is_some() => {
                    s.return_state = Some(StateId::InitialApproach);
                    s.full_centering = true;
                    (JointCommand::stop(), Some((Trigger::Bci, StateId::CenterObject)))
                }
                _ => (JointCommand::stop(), None),
            }
        }
        StateId::CenterObject => {
            let threshold = if s.full_centering { f.center_threshold_px * 0.4 } else { f.center_threshold_px };
            match s.ooi.and_then(|c| vision.centering_error(c)) {
                Some(err) if err.norm() <= threshold => {
                    (JointCommand::stop(), Some((Trigger::Cv, s.return_state.unwrap_or(StateId::ObjectSearch))))
                }
                Some(err) => {
                    let dist = s.ooi.and_then(|c| vision.observation(c)).and_then(|o| o.estimated_distance);
                    let c = centering_command(cfg, &vision.camera, robot, err, dist);
                    if centering_blocked(robot, &c) {
                        // Joint limits stop the view short of centre; carry on
                        // from as close as it gets.
                        (JointCommand::stop(), Some((Trigger::Cv, s.return_state.unwrap_or(StateId::ObjectSearch))))
                    } else {
                        (c, None)
                    }
                }
                None if lost_for > f.lost_timeout => (JointCommand::stop(), Some((Trigger::Cv, StateId::ObjectSearch))),
                None => (JointCommand::stop(), None),
            }
        }
        StateId::InitialApproach => {
            if let Some((c @ (MiClass::Left | MiClass::Right), _)) = wish {
                let since = match s.steer_since {
                    Some((held, since)) if held == c => since,
                    _ => t,
                };
                s.steer_since = Some((c, since));
                if t - since >= f.switch_dwell - 1e-9 {
                    if let Some(o) = vision.object_of_interest(Some(c)) {
                        s.ooi = Some(o.blob.color);
                        s.last_seen = t;
                    }
                }
            } else {
                s.steer_since = None;
            }
            let err = s.ooi.and_then(|c| vision.centering_error(c));
            let dist = s.ooi.and_then(|c| palm_distance(cfg, vision, c));
            let steer = match wish {
                Some((MiClass::Left, v)) => JointCommand::joint(0, v),
                Some((MiClass::Right, v)) => JointCommand::joint(0, -v),
                Some((MiClass::BothHands, v)) => JointCommand::joint(1, v),
                Some((MiClass::BothFeet, v)) => JointCommand::joint(1, -v),
                None => JointCommand::joint(1, f.default_approach),
            };
            match err {
                None => (steer, Some((Trigger::Cv, StateId::CenterObject))),
                Some(_) if dist.is_some_and(|d| d < f.d_final) || unfavorable(cfg, robot) => {
                    let shape = s.ooi.and_then(|c| vision.observation(c)).and_then(|o| o.shape);
                    s.selected = s.ooi.zip(shape).map(|(color, shape)| ObjectKind { shape, color });
                    s.closest = dist.unwrap_or(f64::INFINITY);
                    (JointCommand::stop(), Some((Trigger::Cv, StateId::FinalApproach)))
                }
                Some(e)
                    if e.norm() > f.detour_threshold_px
                        && !centering_blocked(robot, &centering_command(cfg, &vision.camera, robot, e, dist.map(|d| d + cfg.arm.camera_offset))) =>
                {
                    (steer, Some((Trigger::Cv, StateId::CenterObject)))
                }
                Some(_) => (steer, None),
            }
        }
        StateId::FinalApproach => {
            let dist = s.ooi.and_then(|c| palm_distance_for(cfg, vision, c, s.selected.map(|k| k.shape)));
            if let Some(d) = dist {
                s.closest = s.closest.min(d);
            }
            let j3_limit = robot.joints[2] >= robot.joint_limits[2][1] - 1e-9;
            let passed = dist.is_some_and(|d| d > s.closest + CLOSEST_HYSTERESIS);
            let arrived = dist.is_some_and(|d| d < f.d_grasp);
            if arrived || passed || j3_limit || lost_for > f.lost_timeout {
                (JointCommand::stop(), Some((Trigger::Cv, StateId::GraspObject)))
            } else {
                // The short arm swings the camera with it; J1 and J5 keep the
                // object on the palm axis meanwhile.
                let mut c = match s.ooi.and_then(|c| vision.centering_error(c)) {
                    Some(err) => centering_command(cfg, &vision.camera, robot, err, dist.map(|d| d + cfg.arm.camera_offset)),
                    None => JointCommand::stop(),
                };
                c.velocities[2] = f.final_approach_rate;
                (c, None)
            }
        }
        StateId::GraspObject => {
            if t - s.state_entry_time >= f.t_dwell - 1e-9 {
                (JointCommand::stop(), Some((Trigger::Default, StateId::ReturnToStart)))
            } else {
                (JointCommand { velocities: [0.0; 6], gripper: GripperCommand::Close }, None)
            }
        }
        StateId::ReturnToStart => {
            if robot.distance_from_home() <= f.eps_home {
                (JointCommand { velocities: [0.0; 6], gripper: GripperCommand::Open }, Some((Trigger::Default, StateId::ObjectSearch)))
            } else {
                let mut v = [0.0; 6];
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi = (f.return_gain * (robot.home_pose[i] - robot.joints[i])).clamp(-f.v_max, f.v_max);
                }
                (JointCommand { velocities: v, gripper: GripperCommand::Hold }, None)
            }
        }
    };

    let Some((trigger, to)) = next else {
        return Tick { state: s, command, edge: None };
    };
    let from = s.current;
    if to == StateId::CenterObject && from == StateId::InitialApproach {
        s.return_state = Some(StateId::InitialApproach);
        s.full_centering = false;
    }
    s.enter(to, t);
    if to == StateId::ObjectSearch {
        s.ooi = None;
        s.selected = if from == StateId::CenterObject { None } else { s.selected };
    }
    // Detours between centering and the initial approach keep moving; every
    // other change first locks all joints for one step.
    let smooth = matches!(
        (from, to),
        (StateId::InitialApproach, StateId::CenterObject) | (StateId::CenterObject, StateId::InitialApproach)
    );
    s.lock_pending = !smooth;
    let command = if smooth { command } else { JointCommand { velocities: [0.0; 6], ..command } };
    Tick { state: s, command, edge: Some((from, trigger, to)) }
}

/// Palm distance during the final approach, using the shape classified at
/// hand-over so the estimate stays on one area model.
fn palm_distance_for(cfg: &SimConfig, vision: &VisionSummary, color: Color, shape: Option<Shape>) -> Option<f64> {
    let Some(shape) = shape else { return palm_distance(cfg, vision, color) };
    let obs = vision.observation(color)?;
    let cam = &vision.camera;
    let offset = ((obs.blob.center.y - cam.optical_center().y) / cam.focal_px).atan();
    crate::vision::DistanceModel::new(&cfg.camera, &cfg.objects)
        .with_elevation(cam.depression() + offset)
        .estimate(&obs.blob, shape)
        .ok()
        .map(|d| d - cfg.arm.camera_offset)
}

/// The shoulder is past its comfort bound, or the wrist can tilt the camera
/// no further.
fn unfavorable(cfg: &SimConfig, robot: &RobotState) -> bool {
    let [_, j5_max] = robot.joint_limits[4];
    robot.joints[1] >= cfg.fsm.j2_comfort || robot.joints[4] >= j5_max - 1e-9
}

/// Every joint the centering step would move is already at the limit it
/// pushes against.
fn centering_blocked(robot: &RobotState, c: &JointCommand) -> bool {
    const SLOW: f64 = 1e-3;
    c.velocities.iter().zip(robot.joints.iter().zip(robot.joint_limits)).all(|(v, (q, [lo, hi]))| {
        let v = if (*v > 0.0 && *q >= hi - 1e-9) || (*v < 0.0 && *q <= lo + 1e-9) { 0.0 } else { *v };
        v.abs() < SLOW
    })
}

/// Distance rise that marks the closest approach as passed.
const CLOSEST_HYSTERESIS: f64 = 0.01;

/// Joint-space step on J1 and J5 that drives the blob centre toward the
/// image centre, from a finite-difference image Jacobian about the object's
/// estimated position.
fn centering_command(
    cfg: &SimConfig,
    camera: &Camera,
    robot: &RobotState,
    err: Vector2<f64>,
    distance: Option<f64>,
) -> JointCommand {
    let f = &cfg.fsm;
    let center = camera.optical_center() + err;
    let range = distance.unwrap_or(cfg.layout.set_radius).max(0.05);
    let target: Vector3<f64> = camera.position() + camera.ray(center.x, center.y) * range;

    const H: f64 = 1e-4;
    let project = |q: &[f64; 6]| {
        let cam = Camera { pose: forward_kinematics(&cfg.arm, q).camera, ..*camera };
        cam.project(&target)
    };
    let base = project(&robot.joints);
    let mut jac = Matrix2::zeros();
    for (col, joint) in [0usize, 4].into_iter().enumerate() {
        let mut q = robot.joints;
        q[joint] += H;
        if let (Some(p0), Some(p1)) = (base, project(&q)) {
            jac.set_column(col, &((p1 - p0) / H));
        }
    }
    let want = -err * f.centering_gain;
    let dq = jac.try_inverse().map(|inv| inv * want).unwrap_or_else(|| {
        // Degenerate view: fall back to independent axes with default signs.
        Vector2::new(-err.x.signum(), err.y.signum()) * f.v_max
    });
    let scale = (dq.amax() / f.v_max).max(1.0);
    let dq = dq / scale;
    let mut c = JointCommand::stop();
    c.velocities[0] = dq.x;
    c.velocities[4] = dq.y;
    c
}
