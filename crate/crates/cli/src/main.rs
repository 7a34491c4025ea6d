use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mindgrasp::config::SimConfig;
use mindgrasp::harness::{read_records, run_experiment, summarize, write_records, ExperimentSpec, Summary, TrialRecord};
use mindgrasp::intent::IntentKind;
use mindgrasp::scene::Protocol;
use mindgrasp::service::{Server, Session};
use mindgrasp::trainer::{collect_training_set, holdout_accuracy, run_graz_session, run_session, write_session, SessionDriver};

#[derive(Parser)]
#[command(name = "mindgrasp", version, about = "Motor-imagery driven grasping simulator")]
struct Cli {
    /// Simulator configuration (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a batch of grasp trials and write one JSON record per trial.
    Run {
        #[arg(long, value_enum, default_value_t = ProtocolArg::Set)]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = IntentArg::Oracle)]
        intent: IntentArg,
        /// EEG class separability for classifier intent, 0 to 1.
        #[arg(long, default_value_t = 1.0)]
        separability: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Let spheres wander inside their bins.
        #[arg(long)]
        drift: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary table and JSON for a file of trial records.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Calibrate on a prompt-only session, then follow the training robot
    /// with the fitted classifier.
    Trainer {
        /// Seconds per session.
        #[arg(long, default_value_t = 240.0)]
        duration: f64,
        #[arg(long, default_value_t = 1.0)]
        separability: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Session log of the follow session (JSON lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve telemetry and accept intents over TCP (newline-delimited JSON).
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, value_enum, default_value_t = ProtocolArg::Set)]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Step as fast as possible instead of in real time.
        #[arg(long)]
        fast: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Set,
    Random,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Set => Protocol::SetLocations,
            ProtocolArg::Random => Protocol::RandomLocations,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IntentArg {
    Random,
    Oracle,
    Classifier,
    Autonomous,
}

impl From<IntentArg> for IntentKind {
    fn from(i: IntentArg) -> Self {
        match i {
            IntentArg::Random => IntentKind::Random,
            IntentArg::Oracle => IntentKind::Oracle,
            IntentArg::Classifier => IntentKind::Classifier,
            IntentArg::Autonomous => IntentKind::Autonomous,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };

    match cli.command {
        Cmd::Run { protocol, trials, intent, separability, seed, drift, out } => {
            anyhow::ensure!((0.0..=1.0).contains(&separability), "separability must lie in [0, 1]");
            cfg.drift.enabled |= drift;
            let spec = ExperimentSpec::new(protocol.into(), trials, intent.into(), seed).with_separability(separability);
            log::info!("running {trials} trials");
            let records = run_experiment(&cfg, &spec)?;
            if let Some(path) = out {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_records(BufWriter::new(file), &records)?;
            }
            report(&records)?;
        }
        Cmd::Summarize { input } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            report(&read_records(BufReader::new(file))?)?;
        }
        Cmd::Trainer { duration, separability, seed, out } => {
            anyhow::ensure!(duration > 0.0, "duration must be positive");
            let calibration = run_graz_session(&cfg, duration, separability, seed)?;
            let data = collect_training_set(&calibration)?;
            let accuracy = holdout_accuracy(&data, 0.7)?;
            let model = mindgrasp::riemann::fit_mdm(&data)?;
            let session = run_session(&cfg, duration, separability, SessionDriver::Classifier(model), seed ^ 1)?;
            println!("windows            {}", data.len());
            println!("holdout accuracy   {:.1}%", accuracy * 100.0);
            println!("tracking error     {:.3} m s", session.tracking_error());
            println!("resets             {}", session.resets);
            if let Some(path) = out {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_session(BufWriter::new(file), &session)?;
            }
        }
        Cmd::Serve { addr, protocol, seed, fast } => {
            let server = Server::bind(addr.as_str(), Session::new(cfg, protocol.into(), seed))
                .with_context(|| format!("binding {addr}"))?;
            log::info!("listening on {}", server.local_addr());
            server.run(!fast);
        }
    }
    Ok(())
}

fn report(records: &[TrialRecord]) -> Result<()> {
    let summary: Summary = summarize(records)?;
    println!("{}", summary.table());
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
