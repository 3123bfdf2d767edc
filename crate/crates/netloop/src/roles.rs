use std::io::{Read, Write};

use log::{debug, info, warn};

use hecovert_core::control_sim::{build_endpoints, BackendMode, ControllerServer, SimTrace, TraceRow, Verdict};
use hecovert_core::scenario::Scenario;

use crate::frame::{read_frame, write_frame, Frame, FrameError, MsgType};
use crate::session::{encode_wire, Hello, Session};
use crate::NetError;

/// What the controller saw during one session.
#[derive(Debug, Clone, Default)]
pub struct ControllerReport {
    /// Steps served.
    pub steps: usize,
    /// Malformed or out-of-order frames that were dropped.
    pub rejected: usize,
    /// The plant reported a failed verification.
    pub aborted: bool,
    /// The session ended with BYE rather than a dropped connection.
    pub clean: bool,
    /// Every ENC_Y received and ENC_U sent, in order.
    pub transcript: Vec<Frame>,
}

/// Serves one plant connection until BYE or end of stream.
pub fn run_controller<S: Read + Write>(stream: &mut S) -> Result<ControllerReport, NetError> {
    let mut report = ControllerReport::default();
    let mut session: Option<(Session, ControllerServer<f64>)> = None;
    loop {
        let frame = match read_frame(stream) {
            Ok(Some(f)) => f,
            Ok(None) => {
                warn!("controller: connection closed without BYE after {} steps", report.steps);
                return Ok(report);
            }
            Err(e) if e.recoverable() => {
                warn!("controller: rejected frame: {e}");
                report.rejected += 1;
                continue;
            }
            Err(FrameError::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionReset => {
                warn!("controller: connection reset after {} steps", report.steps);
                return Ok(report);
            }
            Err(e) => return Err(e.into()),
        };
        match frame.msg_type {
            MsgType::Hello => match Hello::decode(&frame.payload) {
                Ok(hello) => {
                    info!("controller: session from k = {}", hello.k_start);
                    let server = hello.session.server();
                    session = Some((hello.session, server));
                }
                Err(e) => {
                    warn!("controller: rejected HELLO: {e}");
                    report.rejected += 1;
                }
            },
            MsgType::EncY => {
                let Some((session, server)) = &session else {
                    warn!("controller: ENC_Y before HELLO");
                    report.rejected += 1;
                    continue;
                };
                let reply = session.decode_wire(&frame.payload).and_then(|w| Ok(server.respond(&w)?));
                match reply {
                    Ok(u) => {
                        let out = Frame::new(MsgType::EncU, encode_wire(&u));
                        write_frame(stream, &out)?;
                        report.transcript.push(frame);
                        report.transcript.push(out);
                        report.steps += 1;
                    }
                    Err(e) => {
                        warn!("controller: rejected ENC_Y: {e}");
                        report.rejected += 1;
                    }
                }
            }
            MsgType::AbortVerification => {
                info!("controller: plant aborted after failed verification");
                report.aborted = true;
            }
            MsgType::Bye => {
                report.clean = true;
                return Ok(report);
            }
            MsgType::EncU => {
                warn!("controller: unexpected ENC_U");
                report.rejected += 1;
            }
        }
    }
}

/// Result of a plant session. `complete` is false when the connection broke
/// before the horizon; the trace then holds the steps finished so far.
#[derive(Debug, Clone)]
pub struct PlantOutcome {
    pub trace: SimTrace<f64>,
    pub tripped: bool,
    pub complete: bool,
    pub error: Option<String>,
}

/// Runs the plant side of `scenario` over `stream`. Controller-side columns
/// of the trace are NaN; see [`crate::observe`].
pub fn run_plant<S: Read + Write>(stream: &mut S, scenario: &Scenario) -> Result<PlantOutcome, NetError> {
    let key = scenario.key()?;
    let mode = match key {
        None => BackendMode::Plain,
        Some(key) => BackendMode::Encrypted { key, verifier: scenario.verifier },
    };
    let (mut plant, server, _) =
        build_endpoints(&scenario.model, &scenario.ctrl, scenario.x0.clone(), scenario.k_start, mode)?;
    let session = match server {
        ControllerServer::Plain(ctrl) => Session::Plain { ctrl },
        ControllerServer::Encrypted { ctx, matrix } => {
            let layout = plant.layout().expect("encrypted plant has a layout");
            Session::Encrypted { ctx, layout, matrix }
        }
    };
    let hello = Hello { k_start: scenario.k_start, session };
    write_frame(stream, &Frame::new(MsgType::Hello, hello.encode()))?;
    let session = hello.session;

    let (m, p) = (scenario.model.m(), scenario.model.p());
    let mut outcome = PlantOutcome { trace: SimTrace::default(), tripped: false, complete: false, error: None };
    let step = |stream: &mut S, plant: &mut hecovert_core::control_sim::PlantClient<f64>| -> Result<_, NetError> {
        let y = plant.measure()?;
        write_frame(stream, &Frame::new(MsgType::EncY, encode_wire(&y)))?;
        let frame = read_frame(stream)?.ok_or_else(|| NetError::Protocol("connection closed mid-step".into()))?;
        if frame.msg_type != MsgType::EncU {
            return Err(NetError::Protocol(format!("expected ENC_U, got {:?}", frame.msg_type)));
        }
        Ok(plant.actuate(&session.decode_wire(&frame.payload)?)?)
    };
    for _ in 0..scenario.steps {
        let s = match step(stream, &mut plant) {
            Ok(s) => s,
            Err(e) => {
                warn!("plant: session broken at k = {}: {e}", plant.k());
                outcome.error = Some(e.to_string());
                return Ok(outcome);
            }
        };
        outcome.trace.rows.push(TraceRow {
            k: s.k,
            x: s.x.as_slice().to_vec(),
            u: s.u.as_ref().map_or_else(|| vec![f64::NAN; m], |u| u.as_slice().to_vec()),
            y: s.y.as_slice().to_vec(),
            u_c: vec![f64::NAN; m],
            y_c: vec![f64::NAN; p],
            verdict: s.verdict,
        });
        if s.verdict == Verdict::Bottom {
            info!("plant: verification failed at k = {}", s.k);
            outcome.tripped = true;
            write_frame(stream, &Frame::empty(MsgType::AbortVerification))?;
            break;
        }
    }
    write_frame(stream, &Frame::empty(MsgType::Bye))?;
    outcome.complete = true;
    Ok(outcome)
}

/// What the attacker proxy did.
#[derive(Debug, Clone, Default)]
pub struct AttackerReport {
    pub steps: usize,
    pub aborted: bool,
}

/// Relays one plant session to the controller, tampering with both links
/// according to `scenario` (a baseline scenario relays unchanged).
pub fn run_attacker<P: Read + Write, C: Read + Write>(
    plant: &mut P,
    controller: &mut C,
    scenario: &Scenario,
) -> Result<AttackerReport, NetError> {
    let hello_frame = match read_frame(plant)? {
        Some(f) if f.msg_type == MsgType::Hello => f,
        Some(f) => return Err(NetError::Protocol(format!("expected HELLO, got {:?}", f.msg_type))),
        None => return Err(NetError::Protocol("plant closed before HELLO".into())),
    };
    let hello = Hello::decode(&hello_frame.payload)?;
    if let Some(layout) = hello.session.layout() {
        if layout != scenario.layout() {
            return Err(NetError::Protocol("plant layout differs from the attacker's configuration".into()));
        }
    }
    let mut attacker = scenario.attacker(hello.session.context())?;
    write_frame(controller, &hello_frame)?;

    let mut report = AttackerReport::default();
    let mut k = hello.k_start;
    loop {
        let Some(frame) = read_frame(plant)? else {
            warn!("attacker: plant closed without BYE");
            return Ok(report);
        };
        match frame.msg_type {
            MsgType::EncY => {
                let mut y = hello.session.decode_wire(&frame.payload)?;
                if let Some(a) = attacker.as_deref_mut() {
                    y = a.tamper_measurement(k, y)?;
                }
                write_frame(controller, &Frame::new(MsgType::EncY, encode_wire(&y)))?;
                let reply =
                    read_frame(controller)?.ok_or_else(|| NetError::Protocol("controller closed mid-step".into()))?;
                if reply.msg_type != MsgType::EncU {
                    return Err(NetError::Protocol(format!("expected ENC_U, got {:?}", reply.msg_type)));
                }
                let mut u = hello.session.decode_wire(&reply.payload)?;
                if let Some(a) = attacker.as_deref_mut() {
                    u = a.tamper_control(k, u)?;
                }
                write_frame(plant, &Frame::new(MsgType::EncU, encode_wire(&u)))?;
                debug!("attacker: relayed k = {k}");
                k += 1;
                report.steps += 1;
            }
            MsgType::AbortVerification => {
                info!("attacker: plant detected the attack at k = {}", k - 1);
                report.aborted = true;
                write_frame(controller, &frame)?;
            }
            MsgType::Bye => {
                write_frame(controller, &frame)?;
                return Ok(report);
            }
            other => return Err(NetError::Protocol(format!("unexpected {other:?} from plant"))),
        }
    }
}
