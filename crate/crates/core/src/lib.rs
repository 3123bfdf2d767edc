//! Homomorphic covert attacks on encrypted control loops, and a
//! verifiable-computation defense that adds no communication overhead.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file pin the common `f64` instantiations.

pub mod control_sim;
pub mod covert_attack;
pub mod enc_linalg;
pub mod linalg;
pub mod packed_he;
pub mod scalar;
pub mod scenario;
pub mod stats;
pub mod verify;

pub use scalar::Scalar;

pub type Ciphertext = packed_he::PackedCiphertext<f64>;
pub type PublicContext = packed_he::PublicContext<f64>;
pub type KeyContext = packed_he::KeyContext<f64>;
pub type EncMatrix = enc_linalg::DiagMatrixCipher<f64>;
pub type Model = control_sim::LtiModel<f64>;
pub type Controller = control_sim::AffineController<f64>;
pub type Trace = control_sim::SimTrace<f64>;
pub type Verifier = verify::VerifierContext<f64>;
pub type EncryptedModel = covert_attack::EncModel<f64>;
