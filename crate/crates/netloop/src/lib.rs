//! The control loop over TCP: a plant client, a controller server and an
//! optional man-in-the-middle proxy, speaking a length-prefixed frame
//! protocol in lock step.

pub mod frame;
pub mod observe;
pub mod roles;
pub mod session;

use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use thiserror::Error;

use hecovert_core::control_sim::LoopError;
use hecovert_core::covert_attack::AttackError;
use hecovert_core::enc_linalg::EncLinalgError;
use hecovert_core::packed_he::HeError;
use hecovert_core::scenario::{Scenario, ScenarioError};

pub use frame::{Frame, FrameError, MsgType};
pub use roles::{run_attacker, run_controller, run_plant, AttackerReport, ControllerReport, PlantOutcome};
pub use session::{Hello, Session};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    EncLinalg(#[from] EncLinalgError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Accepts one plant (or proxy) connection and serves it.
pub fn serve_controller(listener: &TcpListener) -> Result<ControllerReport, NetError> {
    let (mut stream, peer) = listener.accept()?;
    stream.set_nodelay(true)?;
    log::info!("controller: connection from {peer}");
    run_controller(&mut stream)
}

/// Accepts one plant connection, dials the controller and relays.
pub fn serve_attacker<A: ToSocketAddrs>(
    listener: &TcpListener,
    upstream: A,
    scenario: &Scenario,
) -> Result<AttackerReport, NetError> {
    let (mut plant, peer) = listener.accept()?;
    plant.set_nodelay(true)?;
    log::info!("attacker: plant connected from {peer}");
    let mut controller = TcpStream::connect(upstream)?;
    controller.set_nodelay(true)?;
    run_attacker(&mut plant, &mut controller, scenario)
}

/// Dials the controller (or proxy) and runs the plant.
pub fn connect_plant<A: ToSocketAddrs>(addr: A, scenario: &Scenario) -> Result<PlantOutcome, NetError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    run_plant(&mut stream, scenario)
}
