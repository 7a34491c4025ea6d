//! The closed loop: render, decide intent, tick the controller, integrate.

use crate::config::SimConfig;
use crate::fsm::{tick, FsmState, StateId, Tick};
use crate::intent::{IntentSample, IntentSource, IntentView};
use crate::scene::{Gripper, GraspOutcome, Scene};
use crate::vision::{overlay_ar, render, Camera, DistanceModel, ImagePair, VisionSummary};

pub fn camera_for(cfg: &SimConfig, scene: &Scene) -> Camera {
    Camera::new(scene.poses(cfg).camera, &cfg.camera)
}

/// Renders the eye-in-hand view and returns it with its analysis.
pub fn observe_frame(cfg: &SimConfig, scene: &Scene) -> (ImagePair, VisionSummary) {
    let camera = camera_for(cfg, scene);
    let frame = render(&scene.objects, &camera);
    let summary = VisionSummary::from_frame(camera, &frame, &DistanceModel::new(&cfg.camera, &cfg.objects));
    (frame, summary)
}

pub fn observe(cfg: &SimConfig, scene: &Scene) -> VisionSummary {
    observe_frame(cfg, scene).1
}

/// The displayed frame: the camera view with the AR box on the object of
/// interest.
pub fn annotated_frame(frame: &ImagePair, vision: &VisionSummary, fsm: &FsmState) -> ImagePair {
    let mut out = frame.clone();
    if let Some(obs) = fsm.ooi.and_then(|c| vision.observation(c)) {
        overlay_ar(&mut out, &obs.blob.bbox);
    }
    out
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub time: f64,
    pub intent: IntentSample,
    pub tick: Tick,
    pub vision: VisionSummary,
    /// Set on the step the gripper closed.
    pub grasp: Option<GraspOutcome>,
}

pub struct Simulation {
    pub cfg: SimConfig,
    pub scene: Scene,
    pub fsm: FsmState,
    pub desired: Option<usize>,
    source: Box<dyn IntentSource + Send>,
    last_frame: Option<ImagePair>,
}

impl Simulation {
    pub fn new(cfg: SimConfig, scene: Scene, source: Box<dyn IntentSource + Send>, desired: Option<usize>) -> Self {
        let fsm = FsmState::new(scene.sim_time);
        Self { cfg, scene, fsm, desired, source, last_frame: None }
    }

    pub fn set_source(&mut self, source: Box<dyn IntentSource + Send>) {
        self.source = source;
    }

    pub fn time(&self) -> f64 {
        self.scene.sim_time
    }

    /// Most recent rendered frame, annotated.
    pub fn last_frame(&self) -> Option<&ImagePair> {
        self.last_frame.as_ref()
    }

    pub fn step(&mut self) -> StepReport {
        let t = self.scene.sim_time;
        let (frame, vision) = observe_frame(&self.cfg, &self.scene);
        let view = IntentView {
            cfg: &self.cfg,
            scene: &self.scene,
            vision: &vision,
            fsm: &self.fsm,
            desired: self.desired,
        };
        let intent = self.source.next_intent(&view, t);
        let out = tick(&self.cfg, &self.fsm, &intent, &vision, &self.scene.robot, t);
        let mut grasp = None;
        if let Some((_, _, to)) = out.edge {
            match to {
                StateId::GraspObject => grasp = Some(self.scene.attempt_grasp(&self.cfg)),
                StateId::ObjectSearch => self.scene.robot.gripper = Gripper::Open,
                _ => {}
            }
        }
        self.last_frame = Some(annotated_frame(&frame, &vision, &out.state));
        self.scene.step_in_place(&self.cfg, &out.command.velocities, self.cfg.dt);
        self.fsm = out.state.clone();
        StepReport { time: t, intent, tick: out, vision, grasp }
    }

    /// Puts robot and objects back and restarts the controller.
    pub fn reset(&mut self) {
        self.scene.reset_in_place(&self.cfg);
        self.fsm = FsmState::new(self.scene.sim_time);
    }
}
