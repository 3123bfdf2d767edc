use nalgebra::DVector;
use thiserror::Error;

use super::{controller_eval_plain, plant_step, AffineController, LtiModel, ModelError, SimTrace, TraceRow, Verdict};
use crate::covert_attack::AttackError;
use crate::enc_linalg::{enc_matvec, encrypt_matrix, DiagMatrixCipher, EncLinalgError};
use crate::linalg::{pad_matrix, LinalgError};
use crate::packed_he::{tile, HeError, KeyContext, PackedCiphertext, PublicContext};
use crate::scalar::Scalar;
use crate::verify::{
    lift_affine, DecodeOutcome, LiftedAffine, PermutationTag, VerifierContext, VerifierParams, VerifyError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    EncLinalg(#[from] EncLinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("link expects {expected} data, got {found}")]
    WireKind { expected: &'static str, found: &'static str },
    #[error("session already terminated after failed verification")]
    Terminated,
    #[error("actuation without a pending measurement")]
    NoPendingMeasurement,
    #[error("{0}")]
    Config(String),
}

/// One message on either link.
#[derive(Debug, Clone, PartialEq)]
pub enum Wire<T> {
    Plain(Vec<T>),
    Cipher(PackedCiphertext<T>),
}

impl<T: Scalar> Wire<T> {
    fn kind(&self) -> &'static str {
        match self {
            Wire::Plain(_) => "plaintext",
            Wire::Cipher(_) => "encrypted",
        }
    }

    pub fn as_plain(&self) -> Result<&[T], LoopError> {
        match self {
            Wire::Plain(v) => Ok(v),
            other => Err(LoopError::WireKind { expected: "plaintext", found: other.kind() }),
        }
    }

    pub fn as_cipher(&self) -> Result<&PackedCiphertext<T>, LoopError> {
        match self {
            Wire::Cipher(c) => Ok(c),
            other => Err(LoopError::WireKind { expected: "encrypted", found: other.kind() }),
        }
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        match self {
            Wire::Plain(v) => 8 * v.len(),
            Wire::Cipher(c) => PackedCiphertext::<T>::encoded_len(c.slot_count()),
        }
    }
}

/// Slot layout of the vectors carried by encrypted wires.
///
/// A wire vector has `blocks` blocks of `block_dim` entries, zero-padded to
/// `dim` (a power of two) and tiled across all slots. Each block holds
/// `[y; u0; 0]` on the measurement link and `[u; 0]` on the control link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireLayout {
    pub block_dim: usize,
    pub blocks: usize,
    pub dim: usize,
    pub y_len: usize,
    pub u_len: usize,
}

impl WireLayout {
    /// One block per message.
    pub fn unverified(block_dim: usize, y_len: usize, u_len: usize) -> Self {
        Self::verified(block_dim, 1, y_len, u_len)
    }

    /// `lambda` blocks per message.
    pub fn verified(block_dim: usize, lambda: usize, y_len: usize, u_len: usize) -> Self {
        Self { block_dim, blocks: lambda, dim: (block_dim * lambda).next_power_of_two(), y_len, u_len }
    }

    /// Layout of the lifted controller for `lambda` blocks (`1` = unverified).
    pub fn for_controller<T: Scalar>(ctrl: &AffineController<T>, lambda: usize) -> Self {
        let (m, p) = ctrl.k().shape();
        Self::verified((p + m).next_power_of_two(), lambda, p, m)
    }

    /// Slot vector with `delta` at the start of each listed block, zero
    /// elsewhere, tiled with period `dim`.
    pub fn mask<T: Scalar>(&self, blocks: &[usize], delta: &[T], slot_count: usize) -> Vec<T> {
        assert!(delta.len() <= self.block_dim, "delta longer than a block");
        let mut period = vec![T::zero(); self.dim];
        for &b in blocks {
            assert!(b < self.blocks, "block {b} out of range");
            period[b * self.block_dim..b * self.block_dim + delta.len()].copy_from_slice(delta);
        }
        tile(&period, self.dim, slot_count)
    }
}

/// Lifts the controller for `lambda` blocks and encrypts the (padded)
/// block-diagonal matrix, banded when the band fits.
pub fn lifted_controller<T: Scalar>(
    ctx: &PublicContext<T>,
    ctrl: &AffineController<T>,
    lambda: usize,
) -> Result<(LiftedAffine<T>, WireLayout, DiagMatrixCipher<T>), LoopError> {
    let lifted = lift_affine(&(-ctrl.k()), ctrl.u0(), lambda);
    let layout = WireLayout::for_controller(ctrl, lambda);
    let matrix = pad_matrix(&lifted.tilde_k(), layout.dim)?;
    let band = (2 * lifted.band() < layout.dim).then_some(lifted.band());
    let enc = encrypt_matrix(ctx, &matrix, band)?;
    Ok((lifted, layout, enc))
}

/// The remote controller. In encrypted mode it only holds the public context
/// and the encrypted lifted gain.
#[derive(Debug, Clone)]
pub enum ControllerServer<T: Scalar> {
    Plain(AffineController<T>),
    Encrypted { ctx: PublicContext<T>, matrix: DiagMatrixCipher<T> },
}

impl<T: Scalar> ControllerServer<T> {
    pub fn respond(&self, wire: &Wire<T>) -> Result<Wire<T>, LoopError> {
        match self {
            ControllerServer::Plain(ctrl) => {
                let y_c = DVector::from_column_slice(wire.as_plain()?);
                if y_c.len() != ctrl.k().ncols() {
                    return Err(ModelError::Dimension {
                        what: "y_c",
                        expected: ctrl.k().ncols().to_string(),
                        actual: y_c.len().to_string(),
                    }
                    .into());
                }
                Ok(Wire::Plain(controller_eval_plain(ctrl, &y_c).as_slice().to_vec()))
            }
            ControllerServer::Encrypted { ctx, matrix } => {
                Ok(Wire::Cipher(enc_matvec(ctx, matrix, wire.as_cipher()?)?))
            }
        }
    }
}

/// Man-in-the-middle on both links.
pub trait ChannelAttacker<T: Scalar> {
    /// Called on the plant-to-controller message of step `k`.
    fn tamper_measurement(&mut self, k: i64, wire: Wire<T>) -> Result<Wire<T>, AttackError>;
    /// Called on the controller-to-plant message of step `k`.
    fn tamper_control(&mut self, k: i64, wire: Wire<T>) -> Result<Wire<T>, AttackError>;
}

/// Plant-side view of one completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep<T: Scalar> {
    pub k: i64,
    /// State before the update.
    pub x: DVector<T>,
    pub y: DVector<T>,
    /// Applied input; `None` when verification failed.
    pub u: Option<DVector<T>>,
    pub verdict: Verdict,
    pub tag: Option<PermutationTag>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum PlantLink<T: Scalar> {
    Plain,
    Encrypted { key: KeyContext<T>, lifted: LiftedAffine<T>, layout: WireLayout, verifier: Option<VerifierContext<T>> },
}

/// The plant and its network client (encryption, encoding, decoding).
#[derive(Debug, Clone)]
pub struct PlantClient<T: Scalar> {
    model: LtiModel<T>,
    x: DVector<T>,
    k: i64,
    link: PlantLink<T>,
    pending: Option<(DVector<T>, Option<PermutationTag>)>,
    terminated: bool,
}

impl<T: Scalar> PlantClient<T> {
    pub fn plain(model: LtiModel<T>, x0: DVector<T>, k_start: i64) -> Result<Self, LoopError> {
        Self::new(model, x0, k_start, PlantLink::Plain)
    }

    /// Encrypted client; with a verifier every measurement is encoded and
    /// every response decoded and checked.
    pub fn encrypted(
        model: LtiModel<T>,
        x0: DVector<T>,
        k_start: i64,
        key: KeyContext<T>,
        lifted: LiftedAffine<T>,
        verifier: Option<VerifierContext<T>>,
    ) -> Result<Self, LoopError> {
        let (p, m) = (model.p(), model.m());
        if lifted.in_dim() != p || lifted.out_dim() != m {
            return Err(LoopError::Config("lifted controller does not match the plant dimensions".into()));
        }
        let lambda = match &verifier {
            Some(v) => {
                if v.lambda() != lifted.lambda() || v.block_dim() != lifted.block_dim() {
                    return Err(LoopError::Config("verifier and lifted controller disagree on λ or d".into()));
                }
                v.lambda()
            }
            None if lifted.lambda() == 1 => 1,
            None => return Err(LoopError::Config("lifting for λ > 1 requires a verifier".into())),
        };
        let layout = WireLayout::verified(lifted.block_dim(), lambda, p, m);
        if layout.dim > key.slot_count() {
            return Err(LoopError::Config(format!("wire dimension {} exceeds the slot count", layout.dim)));
        }
        Self::new(model, x0, k_start, PlantLink::Encrypted { key, lifted, layout, verifier })
    }

    fn new(model: LtiModel<T>, x0: DVector<T>, k_start: i64, link: PlantLink<T>) -> Result<Self, LoopError> {
        if x0.len() != model.n() {
            return Err(ModelError::Dimension {
                what: "x0",
                expected: model.n().to_string(),
                actual: x0.len().to_string(),
            }
            .into());
        }
        Ok(Self { model, x: x0, k: k_start, link, pending: None, terminated: false })
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn state(&self) -> &DVector<T> {
        &self.x
    }

    pub fn model(&self) -> &LtiModel<T> {
        &self.model
    }

    pub fn layout(&self) -> Option<WireLayout> {
        match &self.link {
            PlantLink::Plain => None,
            PlantLink::Encrypted { layout, .. } => Some(*layout),
        }
    }

    pub fn verified(&self) -> bool {
        matches!(&self.link, PlantLink::Encrypted { verifier: Some(_), .. })
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// Measures `y(k) = C x(k)` and produces the outgoing message.
    pub fn measure(&mut self) -> Result<Wire<T>, LoopError> {
        if self.terminated {
            return Err(LoopError::Terminated);
        }
        let y = self.model.c() * &self.x;
        let (wire, tag) = match &mut self.link {
            PlantLink::Plain => (Wire::Plain(y.as_slice().to_vec()), None),
            PlantLink::Encrypted { key, lifted, layout, verifier } => {
                let w = lifted.augment(y.as_slice());
                let (payload, tag) = match verifier {
                    Some(v) => {
                        let (enc, tag) = v.ecd(&w)?;
                        (enc, Some(tag))
                    }
                    None => (w, None),
                };
                (Wire::Cipher(key.encrypt_vector(&payload, layout.dim)?), tag)
            }
        };
        self.pending = Some((y, tag));
        Ok(wire)
    }

    /// Consumes the controller's response, applies the input and advances
    /// the plant. After a failed verification the session is terminated and
    /// the state is left unchanged.
    pub fn actuate(&mut self, wire: &Wire<T>) -> Result<PlantStep<T>, LoopError> {
        if self.terminated {
            return Err(LoopError::Terminated);
        }
        let (y, tag) = self.pending.take().ok_or(LoopError::NoPendingMeasurement)?;
        let m = self.model.m();
        let (u, verdict) = match &mut self.link {
            PlantLink::Plain => {
                let u = wire.as_plain()?;
                if u.len() != m {
                    return Err(ModelError::Dimension {
                        what: "u",
                        expected: m.to_string(),
                        actual: u.len().to_string(),
                    }
                    .into());
                }
                (Some(u.to_vec()), Verdict::NotApplicable)
            }
            PlantLink::Encrypted { key, layout, verifier, .. } => {
                let ct = wire.as_cipher()?;
                let z = key.decrypt_vector(ct, layout.dim)?;
                match (verifier, &tag) {
                    (Some(v), Some(tag)) => {
                        let encoded_len = v.encoded_len();
                        match v.dcd_with_noise(tag, &z[..encoded_len], ct.noise_bound())? {
                            DecodeOutcome::Payload(p) => (Some(p[..m].to_vec()), Verdict::Ok),
                            DecodeOutcome::Bottom { failing } => {
                                log::debug!("verification failed at k = {} on challenges {failing:?}", self.k);
                                (None, Verdict::Bottom)
                            }
                        }
                    }
                    _ => (Some(z[..m].to_vec()), Verdict::NotApplicable),
                }
            }
        };
        let (k, x) = (self.k, self.x.clone());
        let u = u.map(|u| DVector::from_column_slice(&u));
        match &u {
            Some(u) => {
                self.x = plant_step(&self.model, &self.x, u)?.0;
                self.k += 1;
            }
            None => self.terminated = true,
        }
        Ok(PlantStep { k, x, y, u, verdict, tag })
    }
}

/// Key holder that reads the controller side of the links for the trace.
/// Not a protocol party.
#[derive(Debug, Clone)]
pub struct Observer<T: Scalar> {
    key: Option<(KeyContext<T>, WireLayout)>,
}

impl<T: Scalar> Observer<T> {
    pub fn plain() -> Self {
        Self { key: None }
    }

    pub fn encrypted(key: KeyContext<T>, layout: WireLayout) -> Self {
        Self { key: Some((key, layout)) }
    }

    /// `(y_c, u_c)`: the measurement the controller received and the input
    /// it sent. For verified links the block holding the first payload
    /// replica is read.
    pub fn controller_view(
        &self,
        received: &Wire<T>,
        sent: &Wire<T>,
        tag: Option<&PermutationTag>,
    ) -> Result<(Vec<T>, Vec<T>), LoopError> {
        match &self.key {
            None => Ok((received.as_plain()?.to_vec(), sent.as_plain()?.to_vec())),
            Some((key, layout)) => {
                let start = tag.map_or(0, |t| t.perm[0]) * layout.block_dim;
                let read = |w: &Wire<T>, len: usize| -> Result<Vec<T>, LoopError> {
                    let v = key.decrypt_vector(w.as_cipher()?, layout.dim)?;
                    Ok(v[start..start + len].to_vec())
                };
                Ok((read(received, layout.y_len)?, read(sent, layout.u_len)?))
            }
        }
    }
}

/// How the loop is run.
#[derive(Debug, Clone)]
pub enum BackendMode<T> {
    Plain,
    /// Encrypted links under `key`, optionally with the verifier.
    Encrypted {
        key: KeyContext<T>,
        verifier: Option<VerifierParams>,
    },
}

/// Plant, controller and key-holder views of one loop.
pub type Endpoints<T> = (PlantClient<T>, ControllerServer<T>, Observer<T>);

/// Plant client, controller server and observer for one loop.
pub fn build_endpoints<T: Scalar>(
    model: &LtiModel<T>,
    ctrl: &AffineController<T>,
    x0: DVector<T>,
    k_start: i64,
    mode: BackendMode<T>,
) -> Result<Endpoints<T>, LoopError> {
    ctrl.check_model(model)?;
    Ok(match mode {
        BackendMode::Plain => {
            (PlantClient::plain(model.clone(), x0, k_start)?, ControllerServer::Plain(ctrl.clone()), Observer::plain())
        }
        BackendMode::Encrypted { key, verifier } => {
            let pk = key.public();
            let lambda = verifier.as_ref().map_or(1, |v| v.lambda);
            let (lifted, layout, matrix) = lifted_controller(&pk, ctrl, lambda)?;
            let verifier = verifier
                .map(|params| {
                    VerifierContext::setup(
                        pk.slot_count(),
                        lifted.block_dim(),
                        |c: &[T]| lifted.apply_block(c),
                        &params,
                    )
                })
                .transpose()?;
            let plant = PlantClient::encrypted(model.clone(), x0, k_start, key.clone(), lifted, verifier)?;
            (plant, ControllerServer::Encrypted { ctx: pk, matrix }, Observer::encrypted(key, layout))
        }
    })
}

/// Closed-loop simulation builder.
pub struct ClosedLoop<'a, T: Scalar> {
    model: &'a LtiModel<T>,
    ctrl: &'a AffineController<T>,
    x0: DVector<T>,
    k_start: i64,
    steps: usize,
    mode: BackendMode<T>,
    attacker: Option<&'a mut dyn ChannelAttacker<T>>,
}

/// Per-step serialized message sizes `(measurement, control)` in bytes.
pub type WireSizes = Vec<(usize, usize)>;

impl<'a, T: Scalar> ClosedLoop<'a, T> {
    pub fn new(model: &'a LtiModel<T>, ctrl: &'a AffineController<T>, x0: DVector<T>) -> Self {
        Self { model, ctrl, x0, k_start: 0, steps: 0, mode: BackendMode::Plain, attacker: None }
    }

    /// Time index of the first step.
    pub fn start(mut self, k_start: i64) -> Self {
        self.k_start = k_start;
        self
    }

    pub fn steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn mode(mut self, mode: BackendMode<T>) -> Self {
        self.mode = mode;
        self
    }

    pub fn attacker(mut self, attacker: &'a mut dyn ChannelAttacker<T>) -> Self {
        self.attacker = Some(attacker);
        self
    }

    pub fn run(self) -> Result<SimTrace<T>, LoopError> {
        Ok(self.run_with_sizes()?.0)
    }

    /// Runs the loop and also reports the size of every message.
    pub fn run_with_sizes(self) -> Result<(SimTrace<T>, WireSizes), LoopError> {
        let (mut plant, server, observer) = build_endpoints(self.model, self.ctrl, self.x0, self.k_start, self.mode)?;
        let mut attacker = self.attacker;
        let mut trace = SimTrace { rows: Vec::with_capacity(self.steps) };
        let mut sizes = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let k = plant.k();
            let mut y_wire = plant.measure()?;
            if let Some(a) = attacker.as_deref_mut() {
                y_wire = a.tamper_measurement(k, y_wire)?;
            }
            let u_c_wire = server.respond(&y_wire)?;
            let u_wire = match attacker.as_deref_mut() {
                Some(a) => a.tamper_control(k, u_c_wire.clone())?,
                None => u_c_wire.clone(),
            };
            sizes.push((y_wire.byte_len(), u_wire.byte_len()));
            let step = plant.actuate(&u_wire)?;
            let (y_c, u_c) = observer.controller_view(&y_wire, &u_c_wire, step.tag.as_ref())?;
            let m = self.model.m();
            trace.rows.push(TraceRow {
                k,
                x: step.x.as_slice().to_vec(),
                u: step.u.as_ref().map_or_else(|| vec![T::nan(); m], |u| u.as_slice().to_vec()),
                y: step.y.as_slice().to_vec(),
                u_c,
                y_c,
                verdict: step.verdict,
            });
            if step.verdict == Verdict::Bottom {
                break;
            }
        }
        Ok((trace, sizes))
    }
}

/// Runs `steps` steps from `x0` at time `k_start`.
pub fn run_closed_loop<T: Scalar>(
    model: &LtiModel<T>,
    ctrl: &AffineController<T>,
    x0: DVector<T>,
    k_start: i64,
    steps: usize,
    mode: BackendMode<T>,
    attacker: Option<&mut dyn ChannelAttacker<T>>,
) -> Result<SimTrace<T>, LoopError> {
    let mut lp = ClosedLoop::new(model, ctrl, x0).start(k_start).steps(steps).mode(mode);
    if let Some(a) = attacker {
        lp = lp.attacker(a);
    }
    lp.run()
}
