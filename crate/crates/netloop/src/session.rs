use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use hecovert_core::control_sim::{AffineController, ControllerServer, Wire, WireLayout};
use hecovert_core::enc_linalg::DiagMatrixCipher;
use hecovert_core::packed_he::{BackendConfig, PackedCiphertext, PublicContext};

use crate::NetError;

fn protocol(msg: impl Into<String>) -> NetError {
    NetError::Protocol(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayoutHeader {
    block_dim: usize,
    blocks: usize,
    dim: usize,
    y_len: usize,
    u_len: usize,
}

impl From<WireLayout> for LayoutHeader {
    fn from(l: WireLayout) -> Self {
        Self { block_dim: l.block_dim, blocks: l.blocks, dim: l.dim, y_len: l.y_len, u_len: l.u_len }
    }
}

impl From<LayoutHeader> for WireLayout {
    fn from(l: LayoutHeader) -> Self {
        Self { block_dim: l.block_dim, blocks: l.blocks, dim: l.dim, y_len: l.y_len, u_len: l.u_len }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlainController {
    k: Vec<Vec<f64>>,
    u0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HelloHeader {
    k_start: i64,
    #[serde(default)]
    backend: Option<BackendConfig>,
    #[serde(default)]
    layout: Option<LayoutHeader>,
    #[serde(default)]
    band: Option<usize>,
    /// Which wrapping diagonals follow the header, in order.
    #[serde(default)]
    diagonals: Vec<bool>,
    #[serde(default)]
    controller: Option<PlainController>,
}

/// What the controller needs to serve a loop.
#[derive(Debug, Clone)]
pub enum Session {
    /// Plaintext links; the controller gain travels in the clear.
    Plain { ctrl: AffineController<f64> },
    /// Encrypted links; the lifted controller travels as ciphertexts.
    Encrypted { ctx: PublicContext<f64>, layout: WireLayout, matrix: DiagMatrixCipher<f64> },
}

impl Session {
    pub fn server(&self) -> ControllerServer<f64> {
        match self {
            Session::Plain { ctrl } => ControllerServer::Plain(ctrl.clone()),
            Session::Encrypted { ctx, matrix, .. } => {
                ControllerServer::Encrypted { ctx: ctx.clone(), matrix: matrix.clone() }
            }
        }
    }

    pub fn context(&self) -> Option<&PublicContext<f64>> {
        match self {
            Session::Plain { .. } => None,
            Session::Encrypted { ctx, .. } => Some(ctx),
        }
    }

    pub fn layout(&self) -> Option<WireLayout> {
        match self {
            Session::Plain { .. } => None,
            Session::Encrypted { layout, .. } => Some(*layout),
        }
    }

    /// Parses a wire payload in this session's format.
    pub fn decode_wire(&self, bytes: &[u8]) -> Result<Wire<f64>, NetError> {
        match self {
            Session::Plain { .. } => {
                if !bytes.len().is_multiple_of(8) {
                    return Err(protocol(format!("plaintext payload of {} bytes", bytes.len())));
                }
                Ok(Wire::Plain(
                    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                ))
            }
            Session::Encrypted { ctx, .. } => {
                let ct = PackedCiphertext::from_bytes(bytes)?;
                ctx.check_key(&ct)?;
                if ct.slot_count() != ctx.slot_count() {
                    return Err(protocol(format!("ciphertext has {} slots", ct.slot_count())));
                }
                Ok(Wire::Cipher(ct))
            }
        }
    }
}

pub fn encode_wire(wire: &Wire<f64>) -> Vec<u8> {
    match wire {
        Wire::Plain(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        Wire::Cipher(ct) => ct.to_bytes(),
    }
}

/// Session setup sent by the plant before the first step.
#[derive(Debug, Clone)]
pub struct Hello {
    /// Time index of the first step.
    pub k_start: i64,
    pub session: Session,
}

impl Hello {
    /// `u32` little-endian JSON header length, the JSON header, then the
    /// serialized diagonal ciphertexts.
    pub fn encode(&self) -> Vec<u8> {
        let mut header = HelloHeader {
            k_start: self.k_start,
            backend: None,
            layout: None,
            band: None,
            diagonals: Vec::new(),
            controller: None,
        };
        let mut blobs = Vec::new();
        match &self.session {
            Session::Plain { ctrl } => {
                let k = ctrl.k();
                header.controller = Some(PlainController {
                    k: k.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    u0: ctrl.u0().as_slice().to_vec(),
                });
            }
            Session::Encrypted { ctx, layout, matrix } => {
                header.backend = Some(*ctx.config());
                header.layout = Some((*layout).into());
                header.band = matrix.band();
                header.diagonals = (0..matrix.dim())
                    .map(|i| match matrix.diagonal(i as isize) {
                        Some(ct) => {
                            blobs.extend(ct.to_bytes());
                            true
                        }
                        None => false,
                    })
                    .collect();
            }
        }
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(4 + json.len() + blobs.len());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend(json);
        out.extend(blobs);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetError> {
        if bytes.len() < 4 {
            return Err(protocol("HELLO shorter than its header length"));
        }
        let json_len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let rest = &bytes[4..];
        if rest.len() < json_len {
            return Err(protocol("HELLO header truncated"));
        }
        let header: HelloHeader =
            serde_json::from_slice(&rest[..json_len]).map_err(|e| protocol(format!("HELLO header: {e}")))?;
        let mut blobs = &rest[json_len..];
        let session = match (header.backend, header.layout, header.controller) {
            (None, None, Some(c)) => {
                let rows = c.k.len();
                let cols = c.k.first().map_or(0, Vec::len);
                if rows == 0 || cols == 0 || c.k.iter().any(|r| r.len() != cols) || c.u0.len() != rows {
                    return Err(protocol("HELLO controller has inconsistent dimensions"));
                }
                let k = DMatrix::from_row_iterator(rows, cols, c.k.into_iter().flatten());
                let ctrl = AffineController::new(k, DVector::from_vec(c.u0)).map_err(|e| protocol(e.to_string()))?;
                if !blobs.is_empty() {
                    return Err(protocol("trailing bytes after plaintext HELLO"));
                }
                Session::Plain { ctrl }
            }
            (Some(backend), Some(layout), None) => {
                let ctx = PublicContext::new(backend)?;
                let layout = WireLayout::from(layout);
                let ct_len = PackedCiphertext::<f64>::encoded_len(ctx.slot_count());
                if layout.dim == 0 || layout.dim > ctx.slot_count() || header.diagonals.len() != layout.dim {
                    return Err(protocol("HELLO layout does not match the diagonals"));
                }
                let mut diagonals = Vec::with_capacity(layout.dim);
                for present in header.diagonals {
                    if !present {
                        diagonals.push(None);
                        continue;
                    }
                    if blobs.len() < ct_len {
                        return Err(protocol("HELLO diagonals truncated"));
                    }
                    let ct = PackedCiphertext::from_bytes(&blobs[..ct_len])?;
                    ctx.check_key(&ct)?;
                    diagonals.push(Some(ct));
                    blobs = &blobs[ct_len..];
                }
                if !blobs.is_empty() {
                    return Err(protocol("trailing bytes after HELLO diagonals"));
                }
                let matrix = DiagMatrixCipher::from_parts(layout.dim, header.band, diagonals)?;
                Session::Encrypted { ctx, layout, matrix }
            }
            _ => return Err(protocol("HELLO must describe either a plaintext or an encrypted session")),
        };
        Ok(Hello { k_start: header.k_start, session })
    }
}
