//! Network front end: newline-delimited JSON over TCP. Telemetry and camera
//! frames go out to every client; intents and session control come in and are
//! applied by the simulation loop in arrival order.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::fsm::{FsmState, StateId};
use crate::harness::{trial_seed, TrialRecord};
use crate::intent::{ExternalIntent, IntentKind, IntentSample};
use crate::riemann::MiClass;
use crate::scene::{GraspOutcome, Gripper, Joints, ObjectKind, Protocol, RobotState, Scene};
use crate::sim::{annotated_frame, observe_frame, Simulation};
use crate::trainer::{class_velocities, drive_training_robot, Prompt, PromptSchedule};
use crate::vision::{BBox, ImagePair};

/// Frames are sent at this rate or faster.
pub const FRAME_RATE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Grasp trials on the configured protocol.
    Test,
    /// Prompted training with a replica robot to follow.
    Trainer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub sim_time: f64,
    pub mode: Mode,
    pub protocol: Protocol,
    pub running: bool,
    /// 1 to 6.
    pub fsm_state: u8,
    pub fsm_state_name: StateId,
    pub joints: Joints,
    pub gripper: Gripper,
    /// Joint velocities commanded on this step.
    pub command: Joints,
    pub ooi_bbox: Option<BBox>,
    pub desired_object: Option<ObjectKind>,
    /// The intent the controller acted on this step.
    pub intent: IntentSample,
    pub training_joints: Option<Joints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub sim_time: f64,
    pub width: usize,
    pub height: usize,
    /// Base64 of row-major RGB8 pixels, overlay included.
    pub rgb: String,
}

impl FrameMessage {
    pub fn encode(sim_time: f64, frame: &ImagePair) -> Self {
        Self {
            sim_time,
            width: frame.width,
            height: frame.height,
            rgb: base64::engine::general_purpose::STANDARD.encode(&frame.rgb),
        }
    }

    pub fn decode_rgb(&self) -> Result<Vec<u8>, base64::DecodeError> {
        base64::engine::general_purpose::STANDARD.decode(&self.rgb)
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Telemetry {
    State(StateMessage),
    Frame(FrameMessage),
    Prompt { sim_time: f64, prompt: Prompt },
    TrialResult { sim_time: f64, record: TrialRecord },
    /// Reply to a message that could not be understood.
    Error { sim_time: f64, message: String },
}

impl Telemetry {
    pub fn sim_time(&self) -> f64 {
        match self {
            Telemetry::State(s) => s.sim_time,
            Telemetry::Frame(f) => f.sim_time,
            Telemetry::Prompt { sim_time, .. } | Telemetry::TrialResult { sim_time, .. } | Telemetry::Error { sim_time, .. } => {
                *sim_time
            }
        }
    }

    fn line(&self) -> Arc<str> {
        serde_json::to_string(self).expect("telemetry serializes").into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Control {
    Start,
    Pause,
    Reset,
    SetMode { mode: Mode },
    SetProtocol { protocol: Protocol },
}

/// Client to server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Intent { class: MiClass, certainty: f64 },
    Control(Control),
}

/// Decodes one line from a client. `Ok(None)` is a well-formed message of a
/// type this server does not handle.
pub fn parse_command(line: &str) -> Result<Option<Command>, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
    let kind = value.get("type").and_then(|t| t.as_str()).ok_or("missing string field \"type\"")?.to_owned();
    if !matches!(kind.as_str(), "intent" | "control") {
        return Ok(None);
    }
    match serde_json::from_value::<Command>(value).map_err(|e| format!("bad {kind} message: {e}"))? {
        Command::Intent { certainty, .. } if !certainty.is_finite() => Err("certainty must be a number".into()),
        Command::Intent { class, certainty } => Ok(Some(Command::Intent { class, certainty: certainty.clamp(0.0, 1.0) })),
        c => Ok(Some(c)),
    }
}

/// Everything the connection threads hand to the simulation loop.
enum Inbound {
    Subscribe(Sender<Arc<str>>),
    Command(Command),
    Malformed { reply: Sender<Arc<str>>, message: String },
}

/// Simulation side of the service: the world, the session settings and the
/// trial bookkeeping. Everything here runs on one thread.
pub struct Session {
    cfg: SimConfig,
    seed: u64,
    mode: Mode,
    protocol: Protocol,
    running: bool,
    sim: Simulation,
    intents: Sender<IntentSample>,
    /// Intent reader while training; in test mode the simulation owns it.
    trainer_intent: Option<ExternalIntent>,
    schedule: PromptSchedule,
    trial_id: usize,
    trial_start: f64,
    grasp: Option<(GraspOutcome, Option<ObjectKind>)>,
    steps: u64,
}

impl Session {
    pub fn new(cfg: SimConfig, protocol: Protocol, seed: u64) -> Self {
        let (tx, rx) = channel();
        let scene = Scene::build(&cfg, protocol, trial_seed(seed, 0));
        let sim = Simulation::new(cfg.clone(), scene, Box::new(ExternalIntent::new(rx)), None);
        let schedule = PromptSchedule::new(&cfg.trainer, seed);
        let mut s = Self {
            cfg,
            seed,
            mode: Mode::Test,
            protocol,
            running: false,
            sim,
            intents: tx,
            trainer_intent: None,
            schedule,
            trial_id: 0,
            trial_start: 0.0,
            grasp: None,
            steps: 0,
        };
        s.sim.desired = Some(s.draw_desired());
        s
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn running(&self) -> bool {
        self.running
    }

    pub fn fsm(&self) -> &FsmState {
        &self.sim.fsm
    }

    pub fn scene(&self) -> &Scene {
        &self.sim.scene
    }

    fn draw_desired(&self) -> usize {
        let n = self.sim.scene.objects.len();
        ChaCha8Rng::seed_from_u64(trial_seed(self.seed, self.trial_id) ^ 0xDE51).random_range(0..n)
    }

    /// Queues an intent, stamped with the current simulated time.
    pub fn push_intent(&mut self, class: MiClass, certainty: f64) {
        let sample = IntentSample::new(class, certainty.clamp(0.0, 1.0), self.time());
        // The receiver lives as long as the session.
        let _ = self.intents.send(sample);
    }

    /// Applies a control action; returns any messages it produced.
    pub fn control(&mut self, action: Control) -> Vec<Telemetry> {
        match action {
            Control::Start => self.running = true,
            Control::Pause => self.running = false,
            Control::Reset => self.restart(),
            Control::SetMode { mode } => {
                self.mode = mode;
                self.restart();
            }
            Control::SetProtocol { protocol } => {
                self.protocol = protocol;
                let t = self.time();
                self.sim.scene = Scene::build(&self.cfg, protocol, trial_seed(self.seed, self.trial_id));
                self.sim.scene.sim_time = t;
                self.restart();
            }
        }
        vec![Telemetry::State(self.state_message(IntentSample::none(self.time()), [0.0; 6]))]
    }

    /// Home pose, fresh controller and a new intent channel for the current
    /// mode. The clock keeps running.
    fn restart(&mut self) {
        self.sim.reset();
        self.trial_start = self.time();
        self.grasp = None;
        self.sim.desired = Some(self.draw_desired());
        let (tx, rx) = channel();
        self.intents = tx;
        match self.mode {
            Mode::Test => {
                self.sim.scene.training_robot = None;
                self.trainer_intent = None;
                self.sim.set_source(Box::new(ExternalIntent::new(rx)));
            }
            Mode::Trainer => {
                self.sim.scene.training_robot = Some(RobotState::at_home(&self.cfg.arm));
                self.trainer_intent = Some(ExternalIntent::new(rx));
                self.schedule = PromptSchedule::new(&self.cfg.trainer, self.seed ^ self.trial_start.to_bits());
            }
        }
    }

    fn frame_every(&self) -> u64 {
        ((1.0 / (FRAME_RATE * self.cfg.dt)) + 1e-9).floor().max(1.0) as u64
    }

    /// Advances one step if running and returns the telemetry it produced, in
    /// send order.
    pub fn step(&mut self) -> Vec<Telemetry> {
        if !self.running {
            return Vec::new();
        }
        let mut out = Vec::new();
        let send_frame = self.steps.is_multiple_of(self.frame_every());
        self.steps += 1;
        match self.mode {
            Mode::Test => self.step_test(send_frame, &mut out),
            Mode::Trainer => self.step_trainer(send_frame, &mut out),
        }
        out
    }

    fn step_test(&mut self, send_frame: bool, out: &mut Vec<Telemetry>) {
        let report = self.sim.step();
        if let Some(g) = report.grasp {
            self.grasp = Some((g, report.tick.state.selected));
        }
        out.push(Telemetry::State(self.state_message(report.intent, report.tick.command.velocities)));
        if send_frame {
            if let Some(frame) = self.sim.last_frame() {
                out.push(Telemetry::Frame(FrameMessage::encode(report.time, frame)));
            }
        }
        let finished = report.tick.edge.is_some_and(|(from, _, to)| from == StateId::ReturnToStart && to == StateId::ObjectSearch);
        let timed_out = self.time() - self.trial_start >= self.cfg.trial_timeout - 1e-9;
        if finished || timed_out {
            out.push(Telemetry::TrialResult { sim_time: self.time(), record: self.trial_record(timed_out && !finished) });
            self.trial_id += 1;
            self.restart();
        }
    }

    fn step_trainer(&mut self, send_frame: bool, out: &mut Vec<Telemetry>) {
        let t = self.time();
        let (prompt, fresh) = self.schedule.at(t);
        if let Some(p) = fresh {
            out.push(Telemetry::Prompt { sim_time: t, prompt: p });
        }
        let intent = self.trainer_intent.as_mut().map_or(IntentSample::none(t), |src| src.sample_at(t));
        let user_v = match intent.class {
            Some(c) if intent.certainty >= self.cfg.fsm.cert_min => class_velocities(c, self.cfg.trainer.joint_speed),
            _ => [0.0; 6],
        };
        let trainer = self.sim.scene.training_robot.get_or_insert_with(|| RobotState::at_home(&self.cfg.arm));
        let drive = drive_training_robot(&self.cfg, &prompt, t, trainer);
        let frame = send_frame.then(|| {
            let (frame, vision) = observe_frame(&self.cfg, &self.sim.scene);
            annotated_frame(&frame, &vision, &self.sim.fsm)
        });
        if drive.reset {
            self.sim.scene.robot.go_home();
            if let Some(r) = self.sim.scene.training_robot.as_mut() {
                r.go_home();
            }
            self.sim.scene.step_in_place(&self.cfg, &[0.0; 6], self.cfg.dt);
        } else {
            self.sim.scene.step_training_robot(&drive.velocities, self.cfg.dt);
            self.sim.scene.step_in_place(&self.cfg, &user_v, self.cfg.dt);
        }
        out.push(Telemetry::State(self.state_message(intent, user_v)));
        if let Some(frame) = frame {
            out.push(Telemetry::Frame(FrameMessage::encode(t, &frame)));
        }
    }

    fn trial_record(&self, timed_out: bool) -> TrialRecord {
        let objects = &self.sim.scene.objects;
        let desired_object = self.sim.desired.and_then(|id| self.sim.scene.object(id)).map_or(objects[0].kind(), |o| o.kind());
        let selected_object = self.grasp.and_then(|(_, s)| s);
        let grasped_object =
            self.grasp.and_then(|(g, _)| g.contacted_object).and_then(|id| self.sim.scene.object(id)).map(|o| o.kind());
        TrialRecord {
            trial_id: self.trial_id,
            protocol: self.protocol,
            intent: IntentKind::External,
            separability: None,
            seed: trial_seed(self.seed, self.trial_id),
            desired_object,
            selected_object,
            grasp_success: self.grasp.is_some_and(|(g, _)| g.success),
            correct_selection: selected_object == Some(desired_object),
            duration: self.time() - self.trial_start,
            timed_out,
            grasped_object,
        }
    }

    fn state_message(&self, intent: IntentSample, command: Joints) -> StateMessage {
        let scene = &self.sim.scene;
        let fsm = &self.sim.fsm;
        let ooi_bbox = fsm.ooi.and_then(|c| {
            let (_, vision) = observe_frame(&self.cfg, scene);
            vision.observation(c).map(|o| o.blob.bbox)
        });
        StateMessage {
            sim_time: self.time(),
            mode: self.mode,
            protocol: self.protocol,
            running: self.running,
            fsm_state: fsm.current.number(),
            fsm_state_name: fsm.current,
            joints: scene.robot.joints,
            gripper: scene.robot.gripper,
            command,
            ooi_bbox,
            desired_object: self.sim.desired.and_then(|id| scene.object(id)).map(|o| o.kind()),
            intent,
            training_joints: scene.training_robot.as_ref().map(|r| r.joints),
        }
    }
}

/// A bound service: the listener thread feeds one ordered queue that the
/// owner drains with [`Server::pump`] between simulation steps.
pub struct Server {
    addr: SocketAddr,
    inbound: Receiver<Inbound>,
    subscribers: Vec<Sender<Arc<str>>>,
    pub session: Session,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, session: Session) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let (tx, rx) = channel();
        thread::spawn(move || accept_loop(listener, tx));
        Ok(Self { addr: local, inbound: rx, subscribers: Vec::new(), session })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn clients(&self) -> usize {
        self.subscribers.len()
    }

    /// Handles queued client input, waiting up to `wait` for the first item.
    /// Returns how many items were handled.
    pub fn pump(&mut self, wait: Duration) -> usize {
        let mut handled = 0;
        let mut next = self.inbound.recv_timeout(wait).ok();
        while let Some(item) = next {
            self.handle(item);
            handled += 1;
            next = self.inbound.try_recv().ok();
        }
        handled
    }

    fn handle(&mut self, item: Inbound) {
        match item {
            Inbound::Subscribe(tx) => self.subscribers.push(tx),
            Inbound::Command(Command::Intent { class, certainty }) => self.session.push_intent(class, certainty),
            Inbound::Command(Command::Control(action)) => {
                let msgs = self.session.control(action);
                self.broadcast(&msgs);
            }
            Inbound::Malformed { reply, message } => {
                let _ = reply.send(Telemetry::Error { sim_time: self.session.time(), message }.line());
            }
        }
    }

    /// One simulation step, broadcast to every client.
    pub fn step(&mut self) -> Vec<Telemetry> {
        let msgs = self.session.step();
        self.broadcast(&msgs);
        msgs
    }

    fn broadcast(&mut self, msgs: &[Telemetry]) {
        for m in msgs {
            let line = m.line();
            self.subscribers.retain(|tx| tx.send(line.clone()).is_ok());
        }
    }

    /// Serves forever. `realtime` paces steps to the simulated clock;
    /// otherwise the loop runs as fast as it can.
    pub fn run(mut self, realtime: bool) -> ! {
        let dt = Duration::from_secs_f64(self.session.cfg.dt);
        let mut deadline = Instant::now();
        loop {
            if !self.session.running() {
                self.pump(Duration::from_millis(50));
                deadline = Instant::now();
                continue;
            }
            self.pump(Duration::ZERO);
            self.step();
            if realtime {
                deadline += dt;
                let now = Instant::now();
                if deadline > now {
                    thread::sleep(deadline - now);
                } else {
                    deadline = now;
                }
            }
        }
    }
}

fn accept_loop(listener: TcpListener, inbound: Sender<Inbound>) {
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                if let Err(e) = connect(stream, inbound.clone()) {
                    log::warn!("dropping client: {e}");
                }
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

fn connect(stream: TcpStream, inbound: Sender<Inbound>) -> std::io::Result<()> {
    let peer = stream.peer_addr()?;
    stream.set_nodelay(true)?;
    let writer = stream.try_clone()?;
    let (tx, rx) = channel::<Arc<str>>();
    if inbound.send(Inbound::Subscribe(tx.clone())).is_err() {
        return Ok(());
    }
    log::info!("client {peer} connected");
    thread::spawn(move || write_loop(writer, rx));
    thread::spawn(move || read_loop(stream, tx, inbound, peer));
    Ok(())
}

fn write_loop(mut stream: TcpStream, lines: Receiver<Arc<str>>) {
    for line in lines {
        if stream.write_all(line.as_bytes()).and_then(|_| stream.write_all(b"\n")).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

fn read_loop(stream: TcpStream, reply: Sender<Arc<str>>, inbound: Sender<Inbound>, peer: SocketAddr) {
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let item = match parse_command(&line) {
            Ok(Some(cmd)) => Inbound::Command(cmd),
            Ok(None) => {
                log::warn!("client {peer}: ignoring message of unknown type: {line}");
                continue;
            }
            Err(message) => Inbound::Malformed { reply: reply.clone(), message },
        };
        if inbound.send(item).is_err() {
            break;
        }
    }
    log::info!("client {peer} disconnected");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certainty_is_clamped_at_ingress() {
        let c = parse_command(r#"{"type":"intent","class":2,"certainty":1.7}"#).unwrap();
        assert_eq!(c, Some(Command::Intent { class: MiClass::BothHands, certainty: 1.0 }));
        let c = parse_command(r#"{"type":"intent","class":0,"certainty":-3}"#).unwrap();
        assert_eq!(c, Some(Command::Intent { class: MiClass::Left, certainty: 0.0 }));
    }

    #[test]
    fn unknown_and_malformed_are_told_apart() {
        assert_eq!(parse_command(r#"{"type":"hello"}"#), Ok(None));
        assert!(parse_command("{").is_err());
        assert!(parse_command(r#"{"class":1}"#).is_err());
        assert!(parse_command(r#"{"type":"intent","class":7,"certainty":0.5}"#).is_err());
        assert!(parse_command(r#"{"type":"control","action":"fly"}"#).is_err());
    }

    #[test]
    fn control_wire_shape() {
        let c = parse_command(r#"{"type":"control","action":"set_mode","mode":"trainer"}"#).unwrap();
        assert_eq!(c, Some(Command::Control(Control::SetMode { mode: Mode::Trainer })));
        let c = parse_command(r#"{"type":"control","action":"set_protocol","protocol":"random_locations"}"#).unwrap();
        assert_eq!(c, Some(Command::Control(Control::SetProtocol { protocol: Protocol::RandomLocations })));
        let json = serde_json::to_value(Command::Control(Control::Pause)).unwrap();
        assert_eq!(json, serde_json::json!({"type": "control", "action": "pause"}));
    }

    #[test]
    fn frames_follow_the_decimation_rate() {
        let cfg = SimConfig::default();
        let mut s = Session::new(cfg.clone(), Protocol::SetLocations, 3);
        s.control(Control::Start);
        let mut frames = Vec::new();
        for _ in 0..40 {
            frames.extend(s.step().into_iter().filter_map(|m| match m {
                Telemetry::Frame(f) => Some(f.sim_time),
                _ => None,
            }));
        }
        assert!(frames.windows(2).all(|w| w[1] - w[0] <= 1.0 / FRAME_RATE + 1e-9), "{frames:?}");
        assert_eq!(frames.len(), 20);
    }

    #[test]
    fn paused_session_does_not_advance() {
        let mut s = Session::new(SimConfig::default(), Protocol::SetLocations, 3);
        assert!(s.step().is_empty());
        assert_eq!(s.time(), 0.0);
    }

    #[test]
    fn trainer_mode_issues_prompts_and_moves_the_replica() {
        let mut s = Session::new(SimConfig::default(), Protocol::SetLocations, 3);
        s.control(Control::SetMode { mode: Mode::Trainer });
        s.control(Control::Start);
        let mut prompts = Vec::new();
        for _ in 0..200 {
            for m in s.step() {
                if let Telemetry::Prompt { prompt, .. } = m {
                    prompts.push(prompt);
                }
            }
        }
        assert_eq!(prompts.len(), 3);
        assert!(s.scene().training_robot.as_ref().is_some_and(|r| r.distance_from_home() > 0.0));
    }
}
