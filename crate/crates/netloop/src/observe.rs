//! Reconstruction of the controller-side trace columns from a controller
//! transcript. The controller cannot decrypt; the key holder can.

use std::io::{Read, Write};

use hecovert_core::control_sim::{build_endpoints, BackendMode, SimTrace};
use hecovert_core::scenario::Scenario;

use crate::frame::{read_frame, write_frame, Frame, MsgType};
use crate::session::Session;
use crate::NetError;

/// `(y_c, u_c)` per step.
pub type ControllerView = Vec<(Vec<f64>, Vec<f64>)>;

pub fn write_transcript<W: Write>(w: &mut W, frames: &[Frame]) -> Result<(), NetError> {
    for f in frames {
        write_frame(w, f)?;
    }
    Ok(())
}

pub fn read_transcript<R: Read>(r: &mut R) -> Result<Vec<Frame>, NetError> {
    let mut frames = Vec::new();
    while let Some(f) = read_frame(r)? {
        frames.push(f);
    }
    Ok(frames)
}

/// `(y_c, u_c)` for every step in the transcript. Unverified links only: on
/// verified links the payload position is the plant's secret.
pub fn controller_view(scenario: &Scenario, transcript: &[Frame]) -> Result<ControllerView, NetError> {
    if scenario.verifier.is_some() {
        return Err(NetError::Protocol("controller view of verified links needs the plant's permutations".into()));
    }
    let key = scenario.key()?;
    let mode = match key {
        None => BackendMode::Plain,
        Some(key) => BackendMode::Encrypted { key, verifier: None },
    };
    let (plant, server, observer) =
        build_endpoints(&scenario.model, &scenario.ctrl, scenario.x0.clone(), scenario.k_start, mode)?;
    let session = match server {
        hecovert_core::control_sim::ControllerServer::Plain(ctrl) => Session::Plain { ctrl },
        hecovert_core::control_sim::ControllerServer::Encrypted { ctx, matrix } => {
            Session::Encrypted { ctx, layout: plant.layout().expect("encrypted layout"), matrix }
        }
    };
    if !transcript.len().is_multiple_of(2) {
        return Err(NetError::Protocol("transcript ends mid-step".into()));
    }
    transcript
        .chunks_exact(2)
        .map(|pair| {
            if pair[0].msg_type != MsgType::EncY || pair[1].msg_type != MsgType::EncU {
                return Err(NetError::Protocol("transcript is not a sequence of ENC_Y/ENC_U pairs".into()));
            }
            let y = session.decode_wire(&pair[0].payload)?;
            let u = session.decode_wire(&pair[1].payload)?;
            Ok(observer.controller_view(&y, &u, None)?)
        })
        .collect()
}

/// Fills the controller-side columns of a plant trace.
pub fn merge_controller_view(trace: &mut SimTrace<f64>, view: &ControllerView) -> Result<(), NetError> {
    if view.len() != trace.len() {
        return Err(NetError::Protocol(format!("transcript has {} steps, trace has {}", view.len(), trace.len())));
    }
    for (row, (y_c, u_c)) in trace.rows.iter_mut().zip(view) {
        row.y_c = y_c.clone();
        row.u_c = u_c.clone();
    }
    Ok(())
}
