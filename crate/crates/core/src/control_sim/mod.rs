//! Discrete-time LTI plants, the static output-feedback controller and the
//! (optionally encrypted, attacked and verified) closed loop.

mod closed_loop;
mod trace;

pub use closed_loop::{
    build_endpoints, lifted_controller, run_closed_loop, BackendMode, ChannelAttacker, ClosedLoop, ControllerServer,
    Endpoints, LoopError, Observer, PlantClient, PlantStep, Wire, WireLayout,
};
pub use trace::{format_sig, SimTrace, TraceRow, Verdict};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::enc_linalg::{enc_matvec, DiagMatrixCipher, EncLinalgError};
use crate::packed_he::{PackedCiphertext, PublicContext};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {actual}")]
    Dimension { what: &'static str, expected: String, actual: String },
}

fn dim_err(what: &'static str, expected: impl ToString, actual: impl ToString) -> ModelError {
    ModelError::Dimension { what, expected: expected.to_string(), actual: actual.to_string() }
}

/// `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
}

impl<T: Scalar> LtiModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim_err("A", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err("B", format!("{n}xm"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(dim_err("C", format!("px{n}"), format!("{}x{}", c.nrows(), c.ncols())));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Linearized quadruple-tank process.
    pub fn quadruple_tank() -> Self {
        let m = |r, c, v: &[f64]| DMatrix::from_row_slice(r, c, &v.iter().map(|x| T::lit(*x)).collect::<Vec<_>>());
        Self::new(
            m(
                4,
                4,
                &[
                    0.984, 0.000, 0.041, 0.000, 0.000, 0.989, 0.000, 0.033, 0.000, 0.000, 0.959, 0.000, 0.000, 0.000,
                    0.000, 0.967,
                ],
            ),
            m(4, 2, &[0.083, 0.001, 0.001, 0.063, 0.000, 0.047, 0.031, 0.000]),
            m(2, 4, &[0.500, 0.000, 0.000, 0.000, 0.000, 0.500, 0.000, 0.000]),
        )
        .expect("preset dimensions are consistent")
    }
}

/// Initial state `x(-20)` of the quadruple-tank scenario.
pub const QUADRUPLE_TANK_X0: [f64; 4] = [1.0, 1.0, 0.0, 0.0];
/// Setpoint the quadruple-tank controller drives the plant to.
pub const QUADRUPLE_TANK_X_REF: [f64; 4] = [1.15, 1.20, 0.17, 0.13];
/// Steps simulated before the attack starts at `k = 0`.
pub const QUADRUPLE_TANK_PRE_ROLL: usize = 20;

/// `u_c = -K y_c + u0`. `K` is stored as the positive gain.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineController<T: Scalar> {
    k: DMatrix<T>,
    u0: DVector<T>,
}

impl<T: Scalar> AffineController<T> {
    pub fn new(k: DMatrix<T>, u0: DVector<T>) -> Result<Self, ModelError> {
        if k.nrows() != u0.len() {
            return Err(dim_err("u0", k.nrows(), u0.len()));
        }
        Ok(Self { k, u0 })
    }

    pub fn k(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn u0(&self) -> &DVector<T> {
        &self.u0
    }

    /// Checks `K` against the model's input and output dimensions.
    pub fn check_model(&self, model: &LtiModel<T>) -> Result<(), ModelError> {
        if self.k.shape() != (model.m(), model.p()) {
            return Err(dim_err(
                "K",
                format!("{}x{}", model.m(), model.p()),
                format!("{}x{}", self.k.nrows(), self.k.ncols()),
            ));
        }
        Ok(())
    }

    pub fn quadruple_tank() -> Self {
        let k = DMatrix::from_row_slice(2, 2, &[11.545, 0.061, 1.609, 11.131].map(T::lit));
        let u0 = DVector::from_column_slice(&[6.80, 7.76].map(T::lit));
        Self { k, u0 }
    }
}

/// One plant step: returns `(A x + B u, C x)`.
pub fn plant_step<T: Scalar>(
    model: &LtiModel<T>,
    x: &DVector<T>,
    u: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>), ModelError> {
    if x.len() != model.n() {
        return Err(dim_err("x", model.n(), x.len()));
    }
    if u.len() != model.m() {
        return Err(dim_err("u", model.m(), u.len()));
    }
    let y = &model.c * x;
    let x_next = &model.a * x + &model.b * u;
    Ok((x_next, y))
}

pub fn controller_eval_plain<T: Scalar>(ctrl: &AffineController<T>, y_c: &DVector<T>) -> DVector<T> {
    &ctrl.u0 - &ctrl.k * y_c
}

/// Encrypted controller: one matvec of the lifted matrix `[-K I]` with the
/// augmented measurement `⟦[y_c; u0]⟧`.
pub fn controller_eval_encrypted<T: Scalar>(
    ctx: &PublicContext<T>,
    enc_ctrl: &DiagMatrixCipher<T>,
    augmented_yc: &PackedCiphertext<T>,
) -> Result<PackedCiphertext<T>, EncLinalgError> {
    enc_matvec(ctx, enc_ctrl, augmented_yc)
}
