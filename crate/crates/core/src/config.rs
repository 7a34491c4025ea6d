//! Simulator configuration.
//!
//! Every tunable of the arm, camera, controller and protocols lives here so a
//! single JSON file can describe a whole experiment. Missing keys fall back to
//! the defaults below.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scene::Shape;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub arm: ArmConfig,
    pub capture: CaptureConfig,
    pub objects: ObjectConfig,
    pub layout: LayoutConfig,
    pub drift: DriftConfig,
    pub camera: CameraConfig,
    pub fsm: FsmConfig,
    pub trainer: TrainerConfig,
    pub eeg: EegConfig,
    /// Fixed simulator step, seconds.
    pub dt: f64,
    /// Simulated-time budget for one grasp trial, seconds.
    pub trial_timeout: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            arm: ArmConfig::default(),
            capture: CaptureConfig::default(),
            objects: ObjectConfig::default(),
            layout: LayoutConfig::default(),
            drift: DriftConfig::default(),
            camera: CameraConfig::default(),
            fsm: FsmConfig::default(),
            trainer: TrainerConfig::default(),
            eeg: EegConfig::default(),
            dt: 0.05,
            trial_timeout: 600.0,
        }
    }
}

impl SimConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.dt.is_nan() || self.dt <= 0.0 {
            return bad("dt must be positive");
        }
        if self.arm.long_arm <= 0.0 || self.arm.short_arm <= 0.0 {
            return bad("link lengths must be positive");
        }
        if self.arm.camera_offset > self.arm.palm_offset {
            return bad("camera must sit between wrist and palm");
        }
        for (i, [lo, hi]) in self.arm.joint_limits.iter().enumerate() {
            if lo > hi {
                return Err(ConfigError::Invalid(format!("joint {} has min > max", i + 1)));
            }
        }
        if self.objects.size <= 0.0 {
            return bad("object size must be positive");
        }
        if self.layout.set_bearings.len() != 9 {
            return bad("set-locations layout needs exactly 9 bearings");
        }
        let [rmin, rmax] = self.layout.random_radius;
        if !(0.0 < rmin && rmin <= rmax) {
            return bad("random radius range is empty");
        }
        if self.camera.width == 0 || self.camera.height == 0 {
            return bad("camera resolution must be nonzero");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    /// Height of the J2 shoulder axis above the floor.
    pub shoulder_height: f64,
    pub long_arm: f64,
    pub short_arm: f64,
    /// Distance from the wrist (J5) axis to the palm along the approach axis.
    pub palm_offset: f64,
    /// Eye-in-hand camera distance behind the palm along the approach axis.
    pub camera_offset: f64,
    /// Per-joint `[min, max]` in radians.
    pub joint_limits: [[f64; 2]; 6],
    /// Wrist pitch of the home pose; every other home joint is zero.
    pub home_wrist_pitch: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            shoulder_height: 0.0,
            long_arm: 0.40,
            short_arm: 0.30,
            palm_offset: 0.10,
            camera_offset: 0.05,
            joint_limits: [
                [-PI, PI],
                [0.0, 2.0],
                [-2.0, 2.0],
                [0.0, 0.0],
                [-PI / 2.0, PI / 2.0],
                [0.0, 0.0],
            ],
            home_wrist_pitch: 0.85,
        }
    }
}

/// Geometric capture volume standing in for contact physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub aperture: f64,
    pub finger_span: f64,
    pub margin_cube: f64,
    pub margin_cylinder: f64,
    pub margin_sphere: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            aperture: 0.10,
            finger_span: 0.08,
            margin_cube: 0.0,
            margin_cylinder: 0.015,
            margin_sphere: 0.025,
        }
    }
}

impl CaptureConfig {
    pub fn margin(&self, shape: Shape) -> f64 {
        match shape {
            Shape::Cube => self.margin_cube,
            Shape::Cylinder => self.margin_cylinder,
            Shape::Sphere => self.margin_sphere,
        }
    }

    /// Largest lateral offset from the palm axis that still closes on `shape`.
    pub fn lateral_tolerance(&self, shape: Shape) -> f64 {
        self.aperture / 2.0 - self.margin(shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectConfig {
    /// Cube edge, cylinder diameter and sphere diameter.
    pub size: f64,
    /// Cylinder height as a multiple of its diameter.
    pub cylinder_aspect: f64,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self { size: 0.05, cylinder_aspect: 1.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub set_radius: f64,
    /// Bearings (radians, counter-clockwise from the home heading) of the nine
    /// set-location slots, in the order cube/cylinder/sphere x red/yellow/blue.
    pub set_bearings: Vec<f64>,
    pub random_radius: [f64; 2],
    /// Bearing range of a random object; J1 must be able to centre it.
    pub random_bearing: [f64; 2],
}

impl Default for LayoutConfig {
    fn default() -> Self {
        // 40 degree spacing on a full circle. Colours cycle red, yellow, blue so
        // that same-coloured objects are 120 degrees apart and never share the
        // view while the arm faces any one object.
        let set_bearings = (0..9).map(|i| ((i as f64) - 4.0) * 40f64.to_radians()).collect();
        Self {
            set_radius: 0.5,
            set_bearings,
            random_radius: [0.2, 0.7],
            random_bearing: [-160f64.to_radians(), 160f64.to_radians()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub enabled: bool,
    pub bin_half_width: f64,
    pub speed: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { enabled: false, bin_half_width: 0.05, speed: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal and vertical field of view, degrees.
    pub fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 128, height: 128, fov_deg: 60.0 }
    }
}

impl CameraConfig {
    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsmConfig {
    /// Joint speed per unit certainty, rad/s.
    pub gain: f64,
    pub v_max: f64,
    pub cert_min: f64,
    /// Slow default J2 approach when no class is confident.
    pub default_approach: f64,
    /// Centering done once the OOI is within this many pixels of the centre.
    pub center_threshold_px: f64,
    /// Initial approach detours to centering beyond this offset.
    pub detour_threshold_px: f64,
    /// Proportional gain of the image-space centering loop, 1/s.
    pub centering_gain: f64,
    pub d_final: f64,
    pub d_grasp: f64,
    pub t_dwell: f64,
    pub eps_home: f64,
    pub j2_comfort: f64,
    /// Autonomous J3 rate during the final approach.
    pub final_approach_rate: f64,
    /// Proportional gain of the return-to-start motion, 1/s.
    pub return_gain: f64,
    /// Object-of-interest loss tolerated before recovery, seconds.
    pub lost_timeout: f64,
    /// A steering class must be held this long before it can move the
    /// object of interest during the initial approach, seconds.
    pub switch_dwell: f64,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            gain: 1.0,
            v_max: 0.5,
            cert_min: 0.05,
            default_approach: 0.05,
            center_threshold_px: 5.0,
            detour_threshold_px: 12.0,
            centering_gain: 2.0,
            d_final: 0.15,
            d_grasp: 0.05,
            t_dwell: 2.0,
            eps_home: 0.01,
            j2_comfort: 1.8,
            final_approach_rate: 0.2,
            return_gain: 2.0,
            lost_timeout: 1.0,
            switch_dwell: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub move_duration: f64,
    pub rest_duration: f64,
    /// Training-robot joint speed, rad/s.
    pub joint_speed: f64,
    /// Both robots reset when the training end-effector drops below this.
    pub reset_height: f64,
    /// Spacing of the windows recorded in a session log, seconds.
    pub log_hop: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            move_duration: 2.0,
            rest_duration: 2.0,
            joint_speed: 0.2,
            reset_height: 0.1,
            log_hop: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EegConfig {
    pub channels: usize,
    pub sample_rate: f64,
    pub window_samples: usize,
    pub shrinkage: f64,
    /// Variance gain of the class direction at full separability.
    pub alpha: f64,
    /// Seed of the fixed class directions.
    pub basis_seed: u64,
}

impl Default for EegConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            sample_rate: 250.0,
            window_samples: 250,
            shrinkage: 0.1,
            alpha: 2.0,
            basis_seed: 0x5EED_0B45,
        }
    }
}
