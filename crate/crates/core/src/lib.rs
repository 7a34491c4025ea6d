//! Headless simulator of a brain-computer-interface driven, semi-autonomous
//! grasping arm.

pub mod config;
pub mod fsm;
pub mod harness;
pub mod intent;
pub mod riemann;
pub mod scene;
pub mod service;
pub mod sim;
pub mod trainer;
pub mod vision;

pub use config::SimConfig;
