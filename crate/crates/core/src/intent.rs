//! Intent sources: everything that can stand in for the user's motor imagery.
//!
//! The controller only ever sees an [`IntentSample`]; which source produced it
//! is invisible downstream.

use std::f64::consts::PI;
use std::sync::mpsc::{Receiver, TryRecvError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::fsm::{FsmState, StateId};
use crate::riemann::{predict, EegStream, EegSynth, MdmModel, MiClass};
use crate::scene::Scene;
use crate::vision::VisionSummary;

/// External samples older than this never drive motion.
pub const STALENESS: f64 = 0.5;

/// Oracle turns toward the target while its bearing error exceeds this.
const ORACLE_BEARING_TOL: f64 = 5.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentSample {
    pub class: Option<MiClass>,
    pub certainty: f64,
    pub timestamp: f64,
}

impl IntentSample {
    pub fn none(timestamp: f64) -> Self {
        Self { class: None, certainty: 0.0, timestamp }
    }

    pub fn new(class: MiClass, certainty: f64, timestamp: f64) -> Self {
        Self { class: Some(class), certainty: certainty.max(0.0), timestamp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    Random,
    Oracle,
    Classifier,
    External,
    /// Scripted leftward search used by the random-locations protocol.
    Autonomous,
}

/// Read-only view of the world handed to an intent source each step.
#[derive(Debug, Clone, Copy)]
pub struct IntentView<'a> {
    pub cfg: &'a SimConfig,
    pub scene: &'a Scene,
    pub vision: &'a VisionSummary,
    pub fsm: &'a FsmState,
    /// Object the user is trying to grasp, when the trial has one.
    pub desired: Option<usize>,
}

pub trait IntentSource {
    fn kind(&self) -> IntentKind;
    fn next_intent(&mut self, view: &IntentView<'_>, t: f64) -> IntentSample;
}

/// Ambient noise: uniform class, certainty uniform in [0, 0.5).
#[derive(Debug, Clone)]
pub struct RandomIntent {
    rng: ChaCha8Rng,
}

impl RandomIntent {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl IntentSource for RandomIntent {
    fn kind(&self) -> IntentKind {
        IntentKind::Random
    }

    fn next_intent(&mut self, _view: &IntentView<'_>, t: f64) -> IntentSample {
        let class = MiClass::ALL[self.rng.random_range(0..4)];
        let certainty = self.rng.random_range(0.0..0.5);
        IntentSample::new(class, certainty, t)
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Class a perfect user would imagine right now, or `None` to rest.
pub fn oracle_class(view: &IntentView<'_>) -> Option<MiClass> {
    let target = view.scene.object(view.desired?)?;
    let q1 = view.scene.robot.joints[0];
    let err = wrap_angle(target.position.y.atan2(target.position.x) - q1);
    let toward = if err > 0.0 { MiClass::Left } else { MiClass::Right };
    let ooi_is_target = view.fsm.ooi == Some(target.color);
    match view.fsm.current {
        StateId::ObjectSearch => {
            let ranked = view.vision.object_of_interest(None).map(|o| o.blob.color);
            if err.abs() <= ORACLE_BEARING_TOL && ranked == Some(target.color) {
                Some(MiClass::BothHands)
            } else {
                Some(toward)
            }
        }
        StateId::InitialApproach if !ooi_is_target => Some(toward),
        StateId::InitialApproach => {
            let too_close = view
                .vision
                .observation(target.color)
                .and_then(|o| o.estimated_distance)
                .is_some_and(|d| d - view.cfg.arm.camera_offset < view.cfg.fsm.d_grasp);
            Some(if too_close { MiClass::BothFeet } else { MiClass::BothHands })
        }
        _ => None,
    }
}

/// Scripted perfect user steering toward the desired object at full certainty.
#[derive(Debug, Clone, Default)]
pub struct OracleIntent;

impl IntentSource for OracleIntent {
    fn kind(&self) -> IntentKind {
        IntentKind::Oracle
    }

    fn next_intent(&mut self, view: &IntentView<'_>, t: f64) -> IntentSample {
        match oracle_class(view) {
            Some(c) => IntentSample::new(c, 1.0, t),
            None => IntentSample::none(t),
        }
    }
}

/// Synthetic EEG imagining the oracle's class, decoded by an MDM model.
#[derive(Debug, Clone)]
pub struct ClassifierIntent {
    model: MdmModel,
    stream: EegStream,
    shrinkage: f64,
}

impl ClassifierIntent {
    pub fn new(model: MdmModel, synth: EegSynth, separability: f64, shrinkage: f64, seed: u64) -> Self {
        Self { model, stream: EegStream::new(synth, separability, seed), shrinkage }
    }

    /// Decodes the current window after streaming `class` up to `t`.
    pub fn decode(&mut self, class: Option<MiClass>, t: f64) -> IntentSample {
        self.stream.advance_to(t, class);
        let prediction = self.stream.covariance(self.shrinkage).and_then(|c| predict(&self.model, &c));
        match prediction {
            Ok((c, score)) => IntentSample::new(c, score.value, t),
            Err(e) => {
                log::warn!("classifier window rejected: {e}");
                IntentSample::none(t)
            }
        }
    }
}

impl IntentSource for ClassifierIntent {
    fn kind(&self) -> IntentKind {
        IntentKind::Classifier
    }

    fn next_intent(&mut self, view: &IntentView<'_>, t: f64) -> IntentSample {
        self.decode(oracle_class(view), t)
    }
}

/// Samples pushed from outside the simulation loop (the network service).
#[derive(Debug)]
pub struct ExternalIntent {
    queue: Receiver<IntentSample>,
    latest: Option<IntentSample>,
    connected: bool,
}

impl ExternalIntent {
    pub fn new(queue: Receiver<IntentSample>) -> Self {
        Self { queue, latest: None, connected: true }
    }

    pub fn connected(&self) -> bool {
        self.connected
    }

    /// Drains the queue and returns the newest sample if it is still fresh at
    /// `t`.
    pub fn sample_at(&mut self, t: f64) -> IntentSample {
        loop {
            match self.queue.try_recv() {
                Ok(s) => self.latest = Some(s),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.connected = false;
                    break;
                }
            }
        }
        match self.latest {
            Some(s) if self.connected && t - s.timestamp <= STALENESS && s.timestamp <= t + 1e-9 => {
                IntentSample { timestamp: t, ..s }
            }
            _ => IntentSample::none(t),
        }
    }
}

impl IntentSource for ExternalIntent {
    fn kind(&self) -> IntentKind {
        IntentKind::External
    }

    fn next_intent(&mut self, _view: &IntentView<'_>, t: f64) -> IntentSample {
        self.sample_at(t)
    }
}

/// Leftward search for the random-locations protocol: turn left until some
/// blob is in the central half of the view (reversing at the base-yaw
/// limit), then confirm it.
#[derive(Debug, Clone, Default)]
pub struct AutonomousSearch {
    turning_right: bool,
}

impl IntentSource for AutonomousSearch {
    fn kind(&self) -> IntentKind {
        IntentKind::Autonomous
    }

    fn next_intent(&mut self, view: &IntentView<'_>, t: f64) -> IntentSample {
        if view.fsm.current != StateId::ObjectSearch {
            return IntentSample::none(t);
        }
        // Only confirm once the blob is well inside the view, so the object is
        // one the base can turn to without crossing its yaw limit.
        let half = view.vision.camera.width as f64 / 4.0;
        let central = view
            .vision
            .object_of_interest(None)
            .and_then(|o| view.vision.centering_error(o.blob.color))
            .is_some_and(|e| e.x.abs() <= half);
        if central {
            return IntentSample::new(MiClass::BothHands, 1.0, t);
        }
        let [lo, hi] = view.scene.robot.joint_limits[0];
        let q1 = view.scene.robot.joints[0];
        if q1 >= hi - 1e-9 {
            self.turning_right = true;
        } else if q1 <= lo + 1e-9 {
            self.turning_right = false;
        }
        let class = if self.turning_right { MiClass::Right } else { MiClass::Left };
        IntentSample::new(class, 1.0, t)
    }
}
