//! Batch experiments: many independent grasp trials and their statistics.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::fsm::StateId;
use crate::intent::{AutonomousSearch, ClassifierIntent, IntentKind, IntentSource, OracleIntent, RandomIntent};
use crate::riemann::{EegSynth, MdmModel};
use crate::scene::{ObjectKind, Protocol, Scene, Shape};
use crate::sim::Simulation;
use crate::trainer::{train_classifier, TrainerError};

/// Length of the prompt-only session that calibrates the classifier.
pub const CALIBRATION_SECONDS: f64 = 240.0;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{intent:?} intent cannot drive the {protocol:?} protocol")]
    Incompatible { protocol: Protocol, intent: IntentKind },
    #[error("no trial records")]
    Empty,
    #[error("classifier calibration failed: {0}")]
    Calibration(#[from] TrainerError),
    #[error("trial records: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub trials: usize,
    pub intent: IntentKind,
    pub separability: f64,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol, trials: usize, intent: IntentKind, seed: u64) -> Self {
        Self { protocol, trials, intent, separability: 1.0, seed }
    }

    pub fn with_separability(self, separability: f64) -> Self {
        Self { separability, ..self }
    }

    /// Random locations are searched autonomously whatever intent was asked
    /// for; the external queue cannot be batched.
    fn effective_intent(&self) -> Result<IntentKind, HarnessError> {
        match (self.protocol, self.intent) {
            (_, IntentKind::External) | (Protocol::SetLocations, IntentKind::Autonomous) => {
                Err(HarnessError::Incompatible { protocol: self.protocol, intent: self.intent })
            }
            (Protocol::RandomLocations, _) => Ok(IntentKind::Autonomous),
            (Protocol::SetLocations, k) => Ok(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub protocol: Protocol,
    pub intent: IntentKind,
    /// EEG separability, for classifier-driven trials.
    pub separability: Option<f64>,
    pub seed: u64,
    pub desired_object: ObjectKind,
    /// Colour of the tracked blob and shape from the depth classifier at the
    /// hand-over to the final approach.
    pub selected_object: Option<ObjectKind>,
    pub grasp_success: bool,
    pub correct_selection: bool,
    /// Simulated seconds until the trial ended.
    pub duration: f64,
    pub timed_out: bool,
    /// Ground truth: the object actually inside the gripper at closure.
    pub grasped_object: Option<ObjectKind>,
}

/// Independent per-trial seed.
pub fn trial_seed(seed: u64, trial_id: usize) -> u64 {
    // splitmix64 finaliser over the pair.
    let mut z = seed ^ (trial_id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Separability of the calibration session. The model always comes from a
/// well-separated user; the batch separability only degrades the EEG it is
/// then applied to, as when the cap is taken off after training.
pub const CALIBRATION_SEPARABILITY: f64 = 1.0;

/// The classifier a batch uses, fitted on a prompt-only session.
pub fn calibrate(cfg: &SimConfig, spec: &ExperimentSpec) -> Result<MdmModel, HarnessError> {
    Ok(train_classifier(cfg, CALIBRATION_SECONDS, CALIBRATION_SEPARABILITY, spec.seed ^ 0xCA1B)?)
}

fn source_for(
    cfg: &SimConfig,
    kind: IntentKind,
    separability: f64,
    model: Option<&MdmModel>,
    seed: u64,
) -> Box<dyn IntentSource + Send> {
    match kind {
        IntentKind::Random => Box::new(RandomIntent::new(seed)),
        IntentKind::Oracle => Box::new(OracleIntent),
        IntentKind::Autonomous => Box::new(AutonomousSearch::default()),
        IntentKind::Classifier => Box::new(ClassifierIntent::new(
            model.expect("classifier trials need a calibrated model").clone(),
            EegSynth::new(&cfg.eeg),
            separability,
            cfg.eeg.shrinkage,
            seed,
        )),
        IntentKind::External => unreachable!("rejected by effective_intent"),
    }
}

/// One trial from home to the end of its first grasp attempt (or timeout).
pub fn run_trial(
    cfg: &SimConfig,
    spec: &ExperimentSpec,
    trial_id: usize,
    model: Option<&MdmModel>,
) -> Result<TrialRecord, HarnessError> {
    let intent = spec.effective_intent()?;
    let seed = trial_seed(spec.seed, trial_id);
    let scene = Scene::build(cfg, spec.protocol, seed);
    let desired_id = match spec.protocol {
        Protocol::SetLocations => ChaCha8Rng::seed_from_u64(seed ^ 0xDE51).random_range(0..scene.objects.len()),
        Protocol::RandomLocations => 0,
    };
    let desired_object = scene.objects[desired_id].kind();
    let objects = scene.objects.clone();
    let source = source_for(cfg, intent, spec.separability, model, seed ^ 0x1D7E);
    let mut sim = Simulation::new(cfg.clone(), scene, source, Some(desired_id));

    let mut grasp = None;
    let mut selected = None;
    let mut finished = false;
    while sim.time() < cfg.trial_timeout - 1e-9 {
        let report = sim.step();
        if let Some(g) = report.grasp {
            grasp = Some(g);
            selected = report.tick.state.selected;
        }
        if report.tick.edge.is_some_and(|(from, _, to)| from == StateId::ReturnToStart && to == StateId::ObjectSearch) {
            finished = true;
            break;
        }
    }
    let selected_object = selected.or(sim.fsm.selected);
    let grasped_object = grasp.and_then(|g| g.contacted_object).and_then(|id| objects.iter().find(|o| o.id == id)).map(|o| o.kind());
    Ok(TrialRecord {
        trial_id,
        protocol: spec.protocol,
        intent,
        separability: (intent == IntentKind::Classifier).then_some(spec.separability),
        seed,
        desired_object,
        selected_object,
        grasp_success: grasp.is_some_and(|g| g.success),
        correct_selection: selected_object == Some(desired_object),
        duration: sim.time(),
        timed_out: !finished,
        grasped_object,
    })
}

/// Runs `spec.trials` trials in trial-id order.
pub fn run_experiment(cfg: &SimConfig, spec: &ExperimentSpec) -> Result<Vec<TrialRecord>, HarnessError> {
    let intent = spec.effective_intent()?;
    let model = match intent {
        IntentKind::Classifier => Some(calibrate(cfg, spec)?),
        _ => None,
    };
    (0..spec.trials).map(|i| run_trial(cfg, spec, i, model.as_ref())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub attempts: usize,
    pub successes: usize,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTally {
    pub object: ObjectKind,
    #[serde(flatten)]
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    /// Attempts and grasp successes per desired object, all nine listed.
    pub per_object: Vec<ObjectTally>,
    pub success_rate: f64,
    pub correct_selection_rate: f64,
    pub correct_and_grasped_rate: f64,
    pub mean_duration: f64,
    pub timeouts: usize,
}

impl Summary {
    pub fn shape(&self, shape: Shape) -> Tally {
        self.per_object.iter().filter(|o| o.object.shape == shape).fold(
            Tally { attempts: 0, successes: 0 },
            |acc, o| Tally { attempts: acc.attempts + o.tally.attempts, successes: acc.successes + o.tally.successes },
        )
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>8} {:>9} {:>7}", "object", "attempts", "successes", "rate");
        for o in &self.per_object {
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>9} {:>6.1}%",
                o.object.to_string(),
                o.tally.attempts,
                o.tally.successes,
                100.0 * o.tally.rate()
            );
        }
        for shape in Shape::ALL {
            let t = self.shape(shape);
            let _ = writeln!(out, "{:<18} {:>8} {:>9} {:>6.1}%", format!("all {shape:?}"), t.attempts, t.successes, 100.0 * t.rate());
        }
        let _ = writeln!(out, "trials             {}", self.trials);
        let _ = writeln!(out, "grasp success      {:.1}%", 100.0 * self.success_rate);
        let _ = writeln!(out, "correct selection  {:.1}%", 100.0 * self.correct_selection_rate);
        let _ = writeln!(out, "correct + grasped  {:.1}%", 100.0 * self.correct_and_grasped_rate);
        let _ = writeln!(out, "mean duration      {:.1} s", self.mean_duration);
        let _ = writeln!(out, "timeouts           {}", self.timeouts);
        out
    }
}

pub fn summarize(records: &[TrialRecord]) -> Result<Summary, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Empty);
    }
    let n = records.len() as f64;
    let count = |f: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let per_object = ObjectKind::all()
        .map(|object| {
            let mine = records.iter().filter(|r| r.desired_object == object);
            ObjectTally {
                object,
                tally: Tally {
                    attempts: mine.clone().count(),
                    successes: mine.filter(|r| r.grasp_success).count(),
                },
            }
        })
        .collect();
    Ok(Summary {
        trials: records.len(),
        per_object,
        success_rate: count(&|r| r.grasp_success) as f64 / n,
        correct_selection_rate: count(&|r| r.correct_selection) as f64 / n,
        correct_and_grasped_rate: count(&|r| r.correct_selection && r.grasp_success) as f64 / n,
        mean_duration: records.iter().map(|r| r.duration).sum::<f64>() / n,
        timeouts: count(&|r| r.timed_out),
    })
}

fn fmt_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Format(e.to_string())
}

pub fn write_records(mut out: impl Write, records: &[TrialRecord]) -> Result<(), HarnessError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(fmt_err)?;
        out.write_all(b"\n").map_err(fmt_err)?;
    }
    out.flush().map_err(fmt_err)
}

pub fn read_records(input: impl BufRead) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(fmt_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Format(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Plot-ready CSV, one row per trial.
pub fn write_csv(mut out: impl Write, records: &[TrialRecord]) -> Result<(), HarnessError> {
    let kind = |k: Option<ObjectKind>| k.map(|k| format!("{:?} {:?}", k.color, k.shape).to_lowercase()).unwrap_or_default();
    writeln!(
        out,
        "trial_id,protocol,intent,separability,seed,desired,selected,grasp_success,correct_selection,duration,timed_out,grasped"
    )
    .map_err(fmt_err)?;
    for r in records {
        writeln!(
            out,
            "{},{:?},{:?},{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            r.protocol,
            r.intent,
            r.separability.map(|s| s.to_string()).unwrap_or_default(),
            r.seed,
            kind(Some(r.desired_object)),
            kind(r.selected_object),
            r.grasp_success,
            r.correct_selection,
            r.duration,
            r.timed_out,
            kind(r.grasped_object)
        )
        .map_err(fmt_err)?;
    }
    out.flush().map_err(fmt_err)
}
