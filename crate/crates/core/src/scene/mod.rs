//! World model: graspable objects, the arm, time stepping and the geometric
//! grasp test.

pub mod kinematics;

use std::fmt;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CaptureConfig, SimConfig};
pub use kinematics::{forward_kinematics, ArmPoses, Gripper, Joints, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cube,
    Cylinder,
    Sphere,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Cylinder, Shape::Sphere];
}

/// Object colours, in the order used for deterministic tie breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Yellow,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Yellow, Color::Blue];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Yellow => [255, 255, 0],
            Color::Blue => [0, 0, 255],
        }
    }
}

/// The (shape, colour) identity the vision system can observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectKind {
    pub shape: Shape,
    pub color: Color,
}

impl ObjectKind {
    pub fn all() -> impl Iterator<Item = ObjectKind> {
        Shape::ALL
            .into_iter()
            .flat_map(|shape| Color::ALL.into_iter().map(move |color| ObjectKind { shape, color }))
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?}", self.color, self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SetLocations,
    RandomLocations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspObject {
    pub id: usize,
    pub shape: Shape,
    pub color: Color,
    /// Geometric centre, metres.
    pub position: Vector3<f64>,
    /// Cube edge or cylinder/sphere diameter.
    pub characteristic_size: f64,
    /// Cylinder height; equals the size for cubes and spheres.
    pub height: f64,
    /// Rotation about the vertical axis (cube faces).
    pub yaw: f64,
    /// Nonzero only for drifting spheres.
    pub velocity: Vector3<f64>,
    /// Centre of the containment bin.
    pub anchor: Vector3<f64>,
}

impl GraspObject {
    pub fn kind(&self) -> ObjectKind {
        ObjectKind { shape: self.shape, color: self.color }
    }

    /// Radius of a sphere enclosing the object.
    pub fn bounding_radius(&self) -> f64 {
        let r = self.characteristic_size / 2.0;
        match self.shape {
            Shape::Sphere => r,
            Shape::Cube => r * 3f64.sqrt(),
            Shape::Cylinder => (r * r + (self.height / 2.0).powi(2)).sqrt(),
        }
    }

    /// Object resting on the floor at polar position (`radius`, `bearing`), turned to
    /// face the base.
    pub fn new(id: usize, kind: ObjectKind, cfg: &SimConfig, radius: f64, bearing: f64) -> Self {
        let size = cfg.objects.size;
        let height = match kind.shape {
            Shape::Cylinder => size * cfg.objects.cylinder_aspect,
            _ => size,
        };
        let position = Vector3::new(radius * bearing.cos(), radius * bearing.sin(), height / 2.0);
        Self {
            id,
            shape: kind.shape,
            color: kind.color,
            position,
            characteristic_size: size,
            height,
            yaw: bearing,
            velocity: Vector3::zeros(),
            anchor: position,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<GraspObject>,
    pub robot: RobotState,
    pub training_robot: Option<RobotState>,
    pub sim_time: f64,
    pub rng_seed: u64,
    pub protocol: Protocol,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub success: bool,
    pub contacted_object: Option<usize>,
    pub closure_pose: Vector3<f64>,
}

/// Object layout of a protocol, drawing from `rng` for randomized placements.
fn place_objects(cfg: &SimConfig, protocol: Protocol, rng: &mut ChaCha8Rng) -> Vec<GraspObject> {
    let mut objects = match protocol {
        Protocol::SetLocations => ObjectKind::all()
            .zip(&cfg.layout.set_bearings)
            .enumerate()
            .map(|(id, (kind, &bearing))| GraspObject::new(id, kind, cfg, cfg.layout.set_radius, bearing))
            .collect::<Vec<_>>(),
        Protocol::RandomLocations => {
            let shape = Shape::ALL[rng.random_range(0..3)];
            let color = Color::ALL[rng.random_range(0..3)];
            let [rmin, rmax] = cfg.layout.random_radius;
            let [bmin, bmax] = cfg.layout.random_bearing;
            let radius = rng.random_range(rmin..=rmax);
            let bearing = rng.random_range(bmin..=bmax);
            vec![GraspObject::new(0, ObjectKind { shape, color }, cfg, radius, bearing)]
        }
    };
    if cfg.drift.enabled {
        for obj in objects.iter_mut().filter(|o| o.shape == Shape::Sphere) {
            let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            obj.velocity = Vector3::new(heading.cos(), heading.sin(), 0.0) * cfg.drift.speed;
        }
    }
    objects
}

impl Scene {
    pub fn build(cfg: &SimConfig, protocol: Protocol, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = place_objects(cfg, protocol, &mut rng);
        Self {
            objects,
            robot: RobotState::at_home(&cfg.arm),
            training_robot: None,
            sim_time: 0.0,
            rng_seed: seed,
            protocol,
            rng,
        }
    }

    pub fn object(&self, id: usize) -> Option<&GraspObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn poses(&self, cfg: &SimConfig) -> ArmPoses {
        forward_kinematics(&cfg.arm, &self.robot.joints)
    }

    /// Advances the world by `dt`: explicit Euler on the joints followed by
    /// clamping, sphere drift with reflecting bins, and the clock.
    pub fn step(&self, cfg: &SimConfig, joint_velocities: &Joints, dt: f64) -> Scene {
        let mut next = self.clone();
        next.step_in_place(cfg, joint_velocities, dt);
        next
    }

    pub fn step_in_place(&mut self, cfg: &SimConfig, joint_velocities: &Joints, dt: f64) {
        debug_assert!(dt > 0.0);
        integrate(&mut self.robot, joint_velocities, dt);
        let half = cfg.drift.bin_half_width;
        for obj in self.objects.iter_mut().filter(|o| o.velocity != Vector3::zeros()) {
            for axis in 0..2 {
                let mut x = obj.position[axis] + obj.velocity[axis] * dt;
                let lo = obj.anchor[axis] - half;
                let hi = obj.anchor[axis] + half;
                // Reflect until inside; a single bounce suffices unless dt is huge.
                while x < lo || x > hi {
                    x = if x > hi { 2.0 * hi - x } else { 2.0 * lo - x };
                    obj.velocity[axis] = -obj.velocity[axis];
                }
                obj.position[axis] = x;
            }
        }
        self.sim_time += dt;
    }

    /// Steps the training replica with its own velocities.
    pub fn step_training_robot(&mut self, joint_velocities: &Joints, dt: f64) {
        if let Some(robot) = self.training_robot.as_mut() {
            integrate(robot, joint_velocities, dt);
        }
    }

    /// Closes the gripper and decides which object, if any, ended up inside
    /// the capture volume.
    pub fn attempt_grasp(&mut self, cfg: &SimConfig) -> GraspOutcome {
        self.robot.gripper = Gripper::Closed;
        grasp_outcome(&cfg.capture, &self.poses(cfg), &self.objects)
    }

    /// Robot back home with the gripper open and objects back at their
    /// protocol placement (redrawn for random locations). The clock continues.
    pub fn reset_trial(&self, cfg: &SimConfig) -> Scene {
        let mut next = self.clone();
        next.reset_in_place(cfg);
        next
    }

    pub fn reset_in_place(&mut self, cfg: &SimConfig) {
        self.robot.go_home();
        if let Some(trainer) = self.training_robot.as_mut() {
            trainer.go_home();
        }
        self.objects = place_objects(cfg, self.protocol, &mut self.rng);
    }
}

fn integrate(robot: &mut RobotState, joint_velocities: &Joints, dt: f64) {
    for (q, v) in robot.joints.iter_mut().zip(joint_velocities) {
        *q += v * dt;
    }
    robot.clamp_to_limits();
}

/// Offset of `point` in the palm frame: (along approach axis, lateral, vertical).
pub fn palm_frame_offset(poses: &ArmPoses, point: &Vector3<f64>) -> Vector3<f64> {
    poses.end_effector.inverse_transform_vector(&(point - poses.palm_position()))
}

/// Capture test for a single offset expressed in the palm frame.
pub fn captured(capture: &CaptureConfig, shape: Shape, offset: &Vector3<f64>) -> bool {
    let lateral = capture.lateral_tolerance(shape);
    let cross = Vector2::new(offset.y, offset.z);
    offset.x.abs() <= capture.finger_span && cross.x.abs() <= lateral && cross.y.abs() <= lateral
}

pub fn grasp_outcome(capture: &CaptureConfig, poses: &ArmPoses, objects: &[GraspObject]) -> GraspOutcome {
    let contacted = objects
        .iter()
        .filter_map(|o| {
            let offset = palm_frame_offset(poses, &o.position);
            captured(capture, o.shape, &offset).then_some((o.id, offset.norm()))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(id, _)| id);
    GraspOutcome { success: contacted.is_some(), contacted_object: contacted, closure_pose: poses.palm_position() }
}
