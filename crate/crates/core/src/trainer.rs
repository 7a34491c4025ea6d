//! Trainer sessions: a training replica of the arm acts out random prompts
//! while the user's robot tries to follow, and the EEG recorded meanwhile is
//! labelled from the prompt schedule for classifier training.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{SimConfig, TrainerConfig};
use crate::intent::{ClassifierIntent, IntentSample};
use crate::riemann::{fit_mdm, predict, EegStream, EegSynth, MdmModel, MiClass, RiemannError, SpdMatrix};
use crate::scene::{forward_kinematics, Joints, RobotState};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("trace lengths differ: {user} user samples vs {trainer} trainer samples")]
    LengthMismatch { user: usize, trainer: usize },
    #[error("trace timestamps differ at sample {0}")]
    TimestampMismatch(usize),
    #[error("session has no labelled windows")]
    EmptySession,
    #[error(transparent)]
    Riemann(#[from] RiemannError),
    #[error("session log: {0}")]
    Format(String),
}

/// One cue: move for `move_duration`, then rest for `rest_duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub class: MiClass,
    pub move_start: f64,
    pub move_duration: f64,
    pub rest_duration: f64,
}

impl Prompt {
    pub fn move_end(&self) -> f64 {
        self.move_start + self.move_duration
    }

    pub fn end(&self) -> f64 {
        self.move_end() + self.rest_duration
    }

    /// Half-open move interval `[start, start + move_duration)`.
    pub fn moving_at(&self, t: f64) -> bool {
        t >= self.move_start && t < self.move_end()
    }
}

/// Prompt starting at `t` with a uniformly drawn class.
pub fn next_prompt(cfg: &TrainerConfig, rng: &mut impl Rng, t: f64) -> Prompt {
    Prompt {
        class: MiClass::ALL[rng.random_range(0..MiClass::ALL.len())],
        move_start: t,
        move_duration: cfg.move_duration,
        rest_duration: cfg.rest_duration,
    }
}

/// Prompt sequence with start times at exact multiples of the period.
#[derive(Debug, Clone)]
pub struct PromptSchedule {
    cfg: TrainerConfig,
    rng: ChaCha8Rng,
    issued: Vec<Prompt>,
}

impl PromptSchedule {
    pub fn new(cfg: &TrainerConfig, seed: u64) -> Self {
        Self { cfg: cfg.clone(), rng: ChaCha8Rng::seed_from_u64(seed), issued: Vec::new() }
    }

    fn period(&self) -> f64 {
        self.cfg.move_duration + self.cfg.rest_duration
    }

    /// The prompt covering `t`, drawing new prompts as time passes. Returns
    /// the newly issued prompt as the second element when one starts.
    pub fn at(&mut self, t: f64) -> (Prompt, Option<Prompt>) {
        let mut fresh = None;
        while self.issued.last().is_none_or(|p| t >= p.end()) {
            let start = self.issued.len() as f64 * self.period();
            let p = next_prompt(&self.cfg, &mut self.rng, start);
            self.issued.push(p);
            fresh = Some(p);
        }
        (*self.issued.last().expect("at least one prompt"), fresh)
    }

    pub fn issued(&self) -> &[Prompt] {
        &self.issued
    }
}

/// Joint velocities a class maps to on either robot.
pub fn class_velocities(class: MiClass, speed: f64) -> Joints {
    let mut v = [0.0; 6];
    match class {
        MiClass::Left => v[0] = speed,
        MiClass::Right => v[0] = -speed,
        MiClass::BothHands => v[1] = speed,
        MiClass::BothFeet => v[1] = -speed,
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerDrive {
    pub velocities: Joints,
    /// The training end-effector is below the reset height: send both robots
    /// home.
    pub reset: bool,
}

/// Training-robot command for `prompt` at time `t`.
pub fn drive_training_robot(cfg: &SimConfig, prompt: &Prompt, t: f64, robot: &RobotState) -> TrainerDrive {
    let height = forward_kinematics(&cfg.arm, &robot.joints).palm_position().z;
    let velocities = if prompt.moving_at(t) {
        class_velocities(prompt.class, cfg.trainer.joint_speed)
    } else {
        [0.0; 6]
    };
    TrainerDrive { velocities, reset: height < cfg.trainer.reset_height }
}

fn left_riemann(samples: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (t, v) in samples {
        if let Some((t0, v0)) = prev {
            total += v0 * (t - t0);
        }
        prev = Some((t, v));
    }
    total
}

/// Time-integrated end-effector separation, metre-seconds.
pub fn tracking_error(user: &[(f64, Vector3<f64>)], trainer: &[(f64, Vector3<f64>)]) -> Result<f64, TrainerError> {
    if user.len() != trainer.len() {
        return Err(TrainerError::LengthMismatch { user: user.len(), trainer: trainer.len() });
    }
    if let Some(i) = user.iter().zip(trainer).position(|(a, b)| a.0 != b.0) {
        return Err(TrainerError::TimestampMismatch(i));
    }
    Ok(left_riemann(user.iter().zip(trainer).map(|(a, b)| (a.0, (a.1 - b.1).norm()))))
}

/// How the user's robot is steered during a session.
#[derive(Debug, Clone)]
pub enum SessionDriver {
    /// Imagines exactly the prompted class.
    Oracle,
    /// Unworn cap: uniform classes at low certainty.
    Random,
    /// Prompted class streamed as EEG and decoded.
    Classifier(MdmModel),
    /// No user robot; prompts and EEG only.
    Graz,
}

/// A recorded window reduced to its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionWindow {
    pub center: f64,
    pub label: Option<MiClass>,
    pub covariance: SpdMatrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub prompts: Vec<Prompt>,
    pub windows: Vec<SessionWindow>,
    /// `(t, metres)` between the two end-effectors; empty for Graz sessions.
    pub distance_trace: Vec<(f64, f64)>,
    pub resets: usize,
}

impl SessionLog {
    pub fn tracking_error(&self) -> f64 {
        left_riemann(self.distance_trace.iter().copied())
    }
}

/// Label of a window: the class whose move interval contains its centre.
pub fn window_label(prompts: &[Prompt], center: f64) -> Option<MiClass> {
    prompts.iter().find(|p| p.moving_at(center)).map(|p| p.class)
}

/// Runs a session of `duration` seconds at separability `separability`.
pub fn run_session(cfg: &SimConfig, duration: f64, separability: f64, driver: SessionDriver, seed: u64) -> Result<SessionLog, TrainerError> {
    let synth = EegSynth::new(&cfg.eeg);
    let window_len = cfg.eeg.window_samples as f64 / cfg.eeg.sample_rate;
    let steps = (duration / cfg.dt).round() as u64;
    let hop_steps = ((cfg.trainer.log_hop / cfg.dt).round() as u64).max(1);

    let mut schedule = PromptSchedule::new(&cfg.trainer, seed);
    let mut stream = EegStream::new(synth.clone(), separability, seed ^ 0xEE6);
    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0x4A4D);
    let mut decoder = match &driver {
        SessionDriver::Classifier(model) => {
            Some(ClassifierIntent::new(model.clone(), synth, separability, cfg.eeg.shrinkage, seed ^ 0xC1A5))
        }
        _ => None,
    };
    let with_robots = !matches!(driver, SessionDriver::Graz);
    let mut user = RobotState::at_home(&cfg.arm);
    let mut trainer = RobotState::at_home(&cfg.arm);
    let mut log = SessionLog::default();

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let (prompt, _) = schedule.at(t);
        let imagined = prompt.moving_at(t).then_some(prompt.class);
        stream.advance_to(t, imagined);

        if k % hop_steps == 0 && t >= window_len - 1e-9 {
            let center = t - window_len / 2.0;
            log.windows.push(SessionWindow {
                center,
                label: window_label(schedule.issued(), center),
                covariance: stream.covariance(cfg.eeg.shrinkage)?,
            });
        }
        if !with_robots {
            continue;
        }

        let distance = (forward_kinematics(&cfg.arm, &user.joints).palm_position()
            - forward_kinematics(&cfg.arm, &trainer.joints).palm_position())
        .norm();
        log.distance_trace.push((t, distance));

        let intent = match &driver {
            SessionDriver::Oracle => match imagined {
                Some(c) => IntentSample::new(c, 1.0, t),
                None => IntentSample::none(t),
            },
            SessionDriver::Random => {
                IntentSample::new(MiClass::ALL[noise.random_range(0..4)], noise.random_range(0.0..0.5), t)
            }
            SessionDriver::Classifier(_) => decoder.as_mut().expect("decoder").decode(imagined, t),
            SessionDriver::Graz => unreachable!(),
        };
        let user_v = match intent.class {
            Some(c) if intent.certainty >= cfg.fsm.cert_min => class_velocities(c, cfg.trainer.joint_speed),
            _ => [0.0; 6],
        };
        let drive = drive_training_robot(cfg, &prompt, t, &trainer);
        if drive.reset {
            user.go_home();
            trainer.go_home();
            log.resets += 1;
            continue;
        }
        for (robot, v) in [(&mut user, user_v), (&mut trainer, drive.velocities)] {
            for (q, dq) in robot.joints.iter_mut().zip(v) {
                *q += dq * cfg.dt;
            }
            robot.clamp_to_limits();
        }
    }
    log.prompts = schedule.issued().iter().copied().filter(|p| p.move_start <= duration).collect();
    Ok(log)
}

/// Prompt-only session used for pre-training.
pub fn run_graz_session(cfg: &SimConfig, duration: f64, separability: f64, seed: u64) -> Result<SessionLog, TrainerError> {
    run_session(cfg, duration, separability, SessionDriver::Graz, seed)
}

/// Labelled covariances of the windows whose centres fall in a move interval.
pub fn collect_training_set(session: &SessionLog) -> Result<Vec<(SpdMatrix, MiClass)>, TrainerError> {
    let set: Vec<_> = session
        .windows
        .iter()
        .filter_map(|w| w.label.map(|c| (w.covariance.clone(), c)))
        .collect();
    if set.is_empty() {
        return Err(TrainerError::EmptySession);
    }
    Ok(set)
}

/// Fits on the first `train_fraction` of `data` and scores the rest.
pub fn holdout_accuracy(data: &[(SpdMatrix, MiClass)], train_fraction: f64) -> Result<f64, TrainerError> {
    let split = ((data.len() as f64 * train_fraction).round() as usize).clamp(1, data.len().saturating_sub(1));
    let (train, test) = data.split_at(split);
    if test.is_empty() {
        return Err(TrainerError::EmptySession);
    }
    let model = fit_mdm(train)?;
    let mut hits = 0;
    for (x, c) in test {
        if predict(&model, x)?.0 == *c {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// MDM model from a Graz session of `duration` seconds.
pub fn train_classifier(cfg: &SimConfig, duration: f64, separability: f64, seed: u64) -> Result<MdmModel, TrainerError> {
    let log = run_graz_session(cfg, duration, separability, seed)?;
    Ok(fit_mdm(&collect_training_set(&log)?)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SessionLine {
    Prompt(Prompt),
    Window {
        center: f64,
        label: Option<MiClass>,
        dim: usize,
        upper: Vec<f64>,
    },
    Trace {
        t: Vec<f64>,
        distance: Vec<f64>,
        resets: usize,
    },
}

/// Writes prompts, windows (in the covariance dataset encoding plus `type`
/// and `center`) and the distance trace as JSON lines.
pub fn write_session(mut out: impl Write, log: &SessionLog) -> Result<(), TrainerError> {
    let fmt = |e: &dyn std::fmt::Display| TrainerError::Format(e.to_string());
    let mut put = |line: &SessionLine| -> Result<(), TrainerError> {
        serde_json::to_writer(&mut out, line).map_err(|e| fmt(&e))?;
        out.write_all(b"\n").map_err(|e| fmt(&e))
    };
    for p in &log.prompts {
        put(&SessionLine::Prompt(*p))?;
    }
    for w in &log.windows {
        put(&SessionLine::Window {
            center: w.center,
            label: w.label,
            dim: w.covariance.dim(),
            upper: w.covariance.upper(),
        })?;
    }
    let (t, distance) = log.distance_trace.iter().copied().unzip();
    put(&SessionLine::Trace { t, distance, resets: log.resets })?;
    out.flush().map_err(|e| fmt(&e))
}

pub fn read_session(input: impl BufRead) -> Result<SessionLog, TrainerError> {
    let mut log = SessionLog::default();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TrainerError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SessionLine =
            serde_json::from_str(&line).map_err(|e| TrainerError::Format(format!("line {}: {e}", n + 1)))?;
        match parsed {
            SessionLine::Prompt(p) => log.prompts.push(p),
            SessionLine::Window { center, label, dim, upper } => {
                log.windows.push(SessionWindow { center, label, covariance: SpdMatrix::from_upper(dim, &upper)? })
            }
            SessionLine::Trace { t, distance, resets } => {
                log.distance_trace = t.into_iter().zip(distance).collect();
                log.resets = resets;
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn prompts_are_uniform_and_spaced() {
        let cfg = cfg();
        let mut schedule = PromptSchedule::new(&cfg.trainer, 9);
        let mut counts = [0usize; 4];
        for k in 0..10_000 {
            schedule.at(k as f64 * 4.0);
        }
        for (i, p) in schedule.issued().iter().enumerate() {
            counts[p.class.index()] += 1;
            assert_eq!(p.move_start, i as f64 * 4.0);
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_prompts() {
        let cfg = cfg();
        let mut a = PromptSchedule::new(&cfg.trainer, 3);
        let mut b = PromptSchedule::new(&cfg.trainer, 3);
        a.at(100.0);
        b.at(100.0);
        assert_eq!(a.issued(), b.issued());
    }

    #[test]
    fn rest_phase_is_still() {
        let cfg = cfg();
        let p = Prompt { class: MiClass::Left, move_start: 0.0, move_duration: 2.0, rest_duration: 2.0 };
        let robot = RobotState::at_home(&cfg.arm);
        assert_eq!(drive_training_robot(&cfg, &p, 2.5, &robot).velocities, [0.0; 6]);
        assert_eq!(drive_training_robot(&cfg, &p, 1.0, &robot).velocities[0], 0.2);
    }

    #[test]
    fn left_for_two_seconds_turns_point_four() {
        let cfg = cfg();
        let p = Prompt { class: MiClass::Left, move_start: 0.0, move_duration: 2.0, rest_duration: 2.0 };
        let mut robot = RobotState::at_home(&cfg.arm);
        for k in 0..80 {
            let v = drive_training_robot(&cfg, &p, k as f64 * 0.05, &robot).velocities;
            robot.joints[0] += v[0] * 0.05;
        }
        assert!((robot.joints[0] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn low_end_effector_requests_reset() {
        let cfg = cfg();
        let p = Prompt { class: MiClass::BothHands, move_start: 0.0, move_duration: 2.0, rest_duration: 2.0 };
        let mut robot = RobotState::at_home(&cfg.arm);
        assert!(!drive_training_robot(&cfg, &p, 0.0, &robot).reset);
        robot.joints[1] = 1.9;
        robot.joints[2] = 1.0;
        assert!(drive_training_robot(&cfg, &p, 0.0, &robot).reset);
    }

    #[test]
    fn tracking_error_integrates_offset() {
        let a: Vec<_> = (0..=100).map(|i| (i as f64 * 0.1, Vector3::zeros())).collect();
        let b: Vec<_> = a.iter().map(|(t, _)| (*t, Vector3::new(0.0, 0.1, 0.0))).collect();
        assert_eq!(tracking_error(&a, &a).unwrap(), 0.0);
        assert!((tracking_error(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(tracking_error(&a, &b[1..]), Err(TrainerError::LengthMismatch { .. })));
    }

    #[test]
    fn rest_centred_windows_are_unlabelled() {
        let p = [Prompt { class: MiClass::BothFeet, move_start: 0.0, move_duration: 2.0, rest_duration: 2.0 }];
        assert_eq!(window_label(&p, 1.0), Some(MiClass::BothFeet));
        assert_eq!(window_label(&p, 2.0), None);
        assert_eq!(window_label(&p, 3.5), None);
    }

    #[test]
    fn empty_session_is_rejected() {
        assert!(matches!(collect_training_set(&SessionLog::default()), Err(TrainerError::EmptySession)));
    }

    #[test]
    fn session_round_trips() {
        let cfg = cfg();
        let log = run_session(&cfg, 12.0, 1.0, SessionDriver::Oracle, 2).unwrap();
        assert!(!log.windows.is_empty());
        let mut buf = Vec::new();
        write_session(&mut buf, &log).unwrap();
        let back = read_session(&buf[..]).unwrap();
        assert_eq!(back.prompts, log.prompts);
        assert_eq!(back.distance_trace, log.distance_trace);
        assert_eq!(back.windows.len(), log.windows.len());
        for (a, b) in back.windows.iter().zip(&log.windows) {
            assert_eq!(a.label, b.label);
            assert!((a.covariance.matrix() - b.covariance.matrix()).amax() < 1e-12);
        }
    }
}
