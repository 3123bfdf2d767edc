use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{controllability_matrix, AttackError, AttackPlan, Channel};
use crate::control_sim::{ChannelAttacker, LtiModel, Wire, WireLayout};
use crate::enc_linalg::{
    enc_matmat, enc_matrix_power, enc_matvec, enc_newton_schulz_pinv, encrypt_matrix, DiagMatrixCipher, EncLinalgError,
};
use crate::linalg::{pad_matrix, pseudo_inverse};
use crate::packed_he::{tile, HeError, PackedCiphertext, PublicContext};
use crate::scalar::Scalar;

/// Where the attacker's `⟦Cc⁺⟧` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinvSource {
    /// Computed in the clear and encrypted, standing in for an encrypted
    /// identification pipeline.
    #[default]
    Oracle,
    /// Homomorphic Newton-Schulz iteration on `⟦Cc⟧`, scaled by
    /// `1 / |Cc|_F²`. Costs `1 + 2·iterations` levels.
    NewtonSchulz { iterations: usize },
}

/// The encrypted model `(⟦A⟧, ⟦B⟧, ⟦C⟧, ⟦Cc⁺⟧)`, every matrix padded to a
/// common power-of-two dimension, plus the precomputed cooldown map
/// `⟦-Cc⁺ A^n⟧`.
#[derive(Debug, Clone)]
pub struct EncModel<T: Scalar> {
    a: DiagMatrixCipher<T>,
    b: DiagMatrixCipher<T>,
    c: DiagMatrixCipher<T>,
    cc_pinv: DiagMatrixCipher<T>,
    cooldown_map: DiagMatrixCipher<T>,
    dim: usize,
    n: usize,
    m: usize,
    p: usize,
}

fn neg_matrix<T: Scalar>(ctx: &PublicContext<T>, s: DiagMatrixCipher<T>) -> Result<DiagMatrixCipher<T>, AttackError> {
    let (dim, band, diags) = s.into_parts();
    let diags = diags.into_iter().map(|d| d.map(|c| ctx.neg(&c)).transpose()).collect::<Result<Vec<_>, HeError>>()?;
    Ok(DiagMatrixCipher::from_parts(dim, band, diags)?)
}

impl<T: Scalar> EncModel<T> {
    /// Encrypts the model and prepares `⟦-Cc⁺ A^n⟧` homomorphically.
    pub fn encrypt(ctx: &PublicContext<T>, model: &LtiModel<T>, source: PinvSource) -> Result<Self, AttackError> {
        let (n, m, p) = (model.n(), model.m(), model.p());
        let dim = n.max(n * m).max(p).next_power_of_two();
        let enc = |s: &DMatrix<T>| -> Result<DiagMatrixCipher<T>, AttackError> {
            let padded = pad_matrix(s, dim).map_err(EncLinalgError::from)?;
            Ok(encrypt_matrix(ctx, &padded, None)?)
        };
        let a = enc(model.a())?;
        let b = enc(model.b())?;
        let c = enc(model.c())?;
        let cc = controllability_matrix(model);
        let cc_pinv = match source {
            PinvSource::Oracle => enc(&pseudo_inverse(&cc))?,
            PinvSource::NewtonSchulz { iterations } => {
                let alpha = T::one() / cc.norm_squared();
                enc_newton_schulz_pinv(ctx, &enc(&cc)?, alpha, iterations)?
            }
        };
        let a_pow = enc_matrix_power(ctx, &a, n as u32)?;
        let cooldown_map = neg_matrix(ctx, enc_matmat(ctx, &cc_pinv, &a_pow)?)?;
        Ok(Self { a, b, c, cc_pinv, cooldown_map, dim, n, m, p })
    }

    /// Padded dimension shared by all matrices.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unpadded `(n, m, p)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.p)
    }

    pub fn a(&self) -> &DiagMatrixCipher<T> {
        &self.a
    }

    pub fn b(&self) -> &DiagMatrixCipher<T> {
        &self.b
    }

    pub fn c(&self) -> &DiagMatrixCipher<T> {
        &self.c
    }

    pub fn cc_pinv(&self) -> &DiagMatrixCipher<T> {
        &self.cc_pinv
    }

    /// `⟦-Cc⁺ A^n⟧`.
    pub fn cooldown_map(&self) -> &DiagMatrixCipher<T> {
        &self.cooldown_map
    }

    /// Plaintext mask selecting the first `m` entries of every period.
    fn input_mask(&self, slot_count: usize) -> Vec<T> {
        tile(&vec![T::one(); self.m], self.dim, slot_count)
    }
}

/// `(⟦Δx(k+1)⟧, ⟦a_y(k)⟧)` from `⟦Δx(k)⟧` and `⟦a_u(k)⟧`.
pub fn delta_step_encrypted<T: Scalar>(
    ctx: &PublicContext<T>,
    model: &EncModel<T>,
    dx: &PackedCiphertext<T>,
    a_u: &PackedCiphertext<T>,
) -> Result<(PackedCiphertext<T>, PackedCiphertext<T>), AttackError> {
    let a_y = enc_matvec(ctx, &model.c, dx)?;
    let next = ctx.add(&enc_matvec(ctx, &model.a, dx)?, &enc_matvec(ctx, &model.b, a_u)?)?;
    Ok((next, a_y))
}

/// `⟦U⟧ = ⟦-Cc⁺ A^n⟧ ⊗ ⟦Δx(L-n)⟧`; block `i` holds `a_u(L-1-i)`.
fn cooldown_stack<T: Scalar>(
    ctx: &PublicContext<T>,
    model: &EncModel<T>,
    dx: &PackedCiphertext<T>,
) -> Result<PackedCiphertext<T>, AttackError> {
    Ok(enc_matvec(ctx, &model.cooldown_map, dx)?)
}

/// Rotation bringing `a_u(L-n+j)` to the front of the stack.
fn stack_rotation(n: usize, m: usize, j: usize) -> isize {
    ((n - 1 - j) * m) as isize
}

/// Encrypted cooldown inputs `⟦a_u(L-n)⟧, ..., ⟦a_u(L-1)⟧`, each masked to
/// its leading `m` entries.
pub fn cooldown_inputs_encrypted<T: Scalar>(
    ctx: &PublicContext<T>,
    model: &EncModel<T>,
    dx: &PackedCiphertext<T>,
) -> Result<Vec<PackedCiphertext<T>>, AttackError> {
    let stack = cooldown_stack(ctx, model, dx)?;
    let mask = model.input_mask(ctx.slot_count());
    (0..model.n).map(|j| Ok(ctx.mul_plain(&ctx.rotate(&stack, stack_rotation(model.n, model.m, j))?, &mask)?)).collect()
}

/// Re-tiles a vector packed with period `from` to period `to` (`to`
/// dividing `from`), using rotations and additions only. Entries at
/// positions `to..from` of each period must be zero.
pub fn fold_period<T: Scalar>(
    ctx: &PublicContext<T>,
    ct: &PackedCiphertext<T>,
    from: usize,
    to: usize,
) -> Result<PackedCiphertext<T>, AttackError> {
    if to > from || !from.is_multiple_of(to) {
        return Err(AttackError::Unsupported("can only fold to a period dividing the current one"));
    }
    let mut acc = ct.clone();
    for t in 1..from / to {
        acc = ctx.add(&acc, &ctx.rotate(ct, -((t * to) as isize))?)?;
    }
    Ok(acc)
}

/// `a_u(k)` as the encrypted-model attacker holds it.
#[derive(Debug, Clone)]
pub enum EncInput<T> {
    /// Scheduled input, known in the clear.
    Plain(Vec<T>),
    /// Cooldown input, only available encrypted (masked, period `dim`).
    Cipher(PackedCiphertext<T>),
}

/// The Δ-recursion evaluated on ciphertexts.
#[derive(Debug, Clone)]
pub struct EncryptedRecursion<T: Scalar> {
    ctx: PublicContext<T>,
    model: EncModel<T>,
    schedule: Vec<Vec<T>>,
    length: usize,
    dx: PackedCiphertext<T>,
    k: usize,
    stack: Option<PackedCiphertext<T>>,
}

impl<T: Scalar> EncryptedRecursion<T> {
    pub fn new(ctx: PublicContext<T>, model: EncModel<T>, plan: &AttackPlan) -> Result<Self, AttackError> {
        let schedule = plan.schedule::<T>(model.n, model.m)?.into_iter().map(|v| v.as_slice().to_vec()).collect();
        let dx = ctx.encrypt_zero()?;
        Ok(Self { ctx, model, schedule, length: plan.length, dx, k: 0, stack: None })
    }

    pub fn model(&self) -> &EncModel<T> {
        &self.model
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// `⟦Δx(k)⟧`.
    pub fn delta_state(&self) -> &PackedCiphertext<T> {
        &self.dx
    }

    /// Returns `(a_u(k), ⟦a_y(k)⟧)` and advances to `⟦Δx(k+1)⟧`. Past `L` the
    /// input is zero. Running out of depth is reported with the 1-based
    /// step number.
    pub fn step(&mut self) -> Result<(EncInput<T>, PackedCiphertext<T>), AttackError> {
        let step = self.k + 1;
        self.advance().map_err(|e| match e {
            AttackError::He(HeError::DepthExhausted { required, max_depth }) => {
                AttackError::DepthExhausted { step, required, max_depth }
            }
            other => other,
        })
    }

    fn advance(&mut self) -> Result<(EncInput<T>, PackedCiphertext<T>), AttackError> {
        let (ctx, model) = (&self.ctx, &self.model);
        let k = self.k;
        let n = model.n;
        let cooldown_start = self.length - n;
        let a_y = enc_matvec(ctx, &model.c, &self.dx)?;
        let a_dx = enc_matvec(ctx, &model.a, &self.dx)?;
        let (input, b_term) = if k < cooldown_start || k >= self.length {
            let u = self.schedule.get(k).cloned().unwrap_or_else(|| vec![T::zero(); model.m]);
            let enc_u = ctx.encrypt_vector(&u, model.dim)?;
            (EncInput::Plain(u), enc_matvec(ctx, &model.b, &enc_u)?)
        } else {
            if k == cooldown_start {
                self.stack = Some(cooldown_stack(ctx, model, &self.dx)?);
            }
            let stack = self.stack.as_ref().expect("stack computed at cooldown start");
            // The rotated stack carries other blocks after the first m
            // entries; B only reads the first m, so no mask is needed here.
            let rotated = ctx.rotate(stack, stack_rotation(n, model.m, k - cooldown_start))?;
            let b_term = enc_matvec(ctx, &model.b, &rotated)?;
            let masked = ctx.mul_plain(&rotated, &model.input_mask(ctx.slot_count()))?;
            (EncInput::Cipher(masked), b_term)
        };
        self.dx = ctx.add(&a_dx, &b_term)?;
        self.k += 1;
        Ok((input, a_y))
    }
}

/// Attacker holding only the encrypted model and the public context.
/// Supports unverified encrypted links.
#[derive(Debug, Clone)]
pub struct EncryptedModelAttacker<T: Scalar> {
    recursion: EncryptedRecursion<T>,
    ctx: PublicContext<T>,
    layout: WireLayout,
    current: Option<(i64, EncInput<T>)>,
}

impl<T: Scalar> EncryptedModelAttacker<T> {
    pub fn new(
        ctx: PublicContext<T>,
        model: EncModel<T>,
        plan: &AttackPlan,
        layout: WireLayout,
    ) -> Result<Self, AttackError> {
        if layout.blocks != 1 {
            return Err(AttackError::Unsupported("the encrypted-model attacker does not guess verified layouts"));
        }
        if layout.dim > model.dim() {
            return Err(AttackError::Unsupported("wire period larger than the model dimension"));
        }
        let recursion = EncryptedRecursion::new(ctx.clone(), model, plan)?;
        Ok(Self { recursion, ctx, layout, current: None })
    }

    pub fn recursion(&self) -> &EncryptedRecursion<T> {
        &self.recursion
    }

    fn active(&self, k: i64) -> bool {
        k >= 0 && (k as usize) < self.recursion.length()
    }

    fn to_wire_period(&self, ct: &PackedCiphertext<T>) -> Result<PackedCiphertext<T>, AttackError> {
        fold_period(&self.ctx, ct, self.recursion.model().dim(), self.layout.dim)
    }
}

impl<T: Scalar> ChannelAttacker<T> for EncryptedModelAttacker<T> {
    fn tamper_measurement(&mut self, k: i64, wire: Wire<T>) -> Result<Wire<T>, AttackError> {
        if !self.active(k) {
            return Ok(wire);
        }
        let Wire::Cipher(y) = wire else { return Err(AttackError::WireKind("encrypted")) };
        if self.recursion.k() as i64 != k {
            return Err(AttackError::InvalidPlan(format!("attacker at step {} saw step {k}", self.recursion.k())));
        }
        let (a_u, a_y) = self.recursion.step()?;
        let a_y = self.to_wire_period(&a_y)?;
        self.current = Some((k, a_u));
        Ok(Wire::Cipher(self.ctx.sub(&y, &a_y)?))
    }

    fn tamper_control(&mut self, k: i64, wire: Wire<T>) -> Result<Wire<T>, AttackError> {
        let Some((step, a_u)) = self.current.take().filter(|(step, _)| *step == k) else {
            return Ok(wire);
        };
        debug_assert_eq!(step, k);
        let Wire::Cipher(u) = wire else { return Err(AttackError::WireKind("encrypted")) };
        let out = match a_u {
            EncInput::Plain(v) => super::inject(&self.ctx, &self.layout, Channel::Input, &u, &[0], &v)?,
            EncInput::Cipher(c) => self.ctx.add(&u, &self.to_wire_period(&c)?)?,
        };
        Ok(Wire::Cipher(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covert_attack::{cooldown_inputs, delta_step, AttackVariant, PlainRecursion};
    use crate::enc_linalg::decrypt_matrix;
    use crate::linalg::matrix_power;
    use crate::packed_he::{BackendConfig, KeyContext};
    use nalgebra::DVector;

    fn setup(depth: usize) -> (KeyContext<f64>, LtiModel<f64>, EncModel<f64>) {
        let key = KeyContext::new(BackendConfig::exact(64, depth, 11)).unwrap();
        let model = LtiModel::quadruple_tank();
        let enc = EncModel::encrypt(&key.public(), &model, PinvSource::Oracle).unwrap();
        (key, model, enc)
    }

    #[test]
    fn model_decrypts_to_padded_plaintext() {
        let (key, model, enc) = setup(12);
        assert_eq!(enc.dim(), 8);
        let a = decrypt_matrix(&key, enc.a()).unwrap();
        assert!((a - pad_matrix(model.a(), 8).unwrap()).amax() < 1e-15);
        let expected = -(pseudo_inverse(&controllability_matrix(&model)) * matrix_power(model.a(), 4));
        let map = decrypt_matrix(&key, enc.cooldown_map()).unwrap();
        assert!((map - pad_matrix(&expected, 8).unwrap()).amax() < 1e-9);
        assert_eq!(enc.cooldown_map().level(), 3);
    }

    #[test]
    fn one_encrypted_step_matches_plain() {
        let (key, model, enc) = setup(12);
        let pk = key.public();
        let dx = DVector::from_column_slice(&[0.3, -0.2, 0.1, 0.05]);
        let a_u = DVector::from_column_slice(&[2.0, -1.0]);
        let (next, a_y) = delta_step(&model, &dx, &a_u).unwrap();
        let (enc_next, enc_ay) = delta_step_encrypted(
            &pk,
            &enc,
            &pk.encrypt_vector(dx.as_slice(), 8).unwrap(),
            &pk.encrypt_vector(a_u.as_slice(), 8).unwrap(),
        )
        .unwrap();
        let got_next = key.decrypt_vector(&enc_next, 8).unwrap();
        assert!((DVector::from_column_slice(&got_next[..4]) - next).amax() < 1e-8);
        assert!(got_next[4..].iter().all(|v| *v == 0.0));
        let got_ay = key.decrypt_vector(&enc_ay, 2).unwrap();
        assert!((DVector::from_column_slice(&got_ay) - a_y).amax() < 1e-8);
    }

    #[test]
    fn zero_input_keeps_delta_zero() {
        let (key, _, enc) = setup(12);
        let plan = AttackPlan::constant(AttackVariant::EncModel, &[0.0, 0.0], 0, 4, 10);
        let mut rec = EncryptedRecursion::new(key.public(), enc, &plan).unwrap();
        for _ in 0..10 {
            let (_, a_y) = rec.step().unwrap();
            assert!(key.decrypt(&a_y).unwrap().iter().all(|v| *v == 0.0));
            assert!(key.decrypt(rec.delta_state()).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn encrypted_cooldown_matches_plain() {
        let (key, model, enc) = setup(12);
        let pk = key.public();
        let zero = cooldown_inputs_encrypted(&pk, &enc, &pk.encrypt_zero().unwrap()).unwrap();
        assert!(zero.iter().all(|c| key.decrypt(c).unwrap().iter().all(|v| *v == 0.0)));

        let mut plain =
            PlainRecursion::new(model.clone(), &AttackPlan::quadruple_tank(AttackVariant::PlainModel)).unwrap();
        for _ in 0..6 {
            plain.step().unwrap();
        }
        let dx6 = plain.delta_state().clone();
        let expected = cooldown_inputs(&model, &dx6).unwrap();
        let got = cooldown_inputs_encrypted(&pk, &enc, &pk.encrypt_vector(dx6.as_slice(), 8).unwrap()).unwrap();
        for (e, g) in expected.iter().zip(&got) {
            let v = key.decrypt_vector(g, 8).unwrap();
            assert!((DVector::from_column_slice(&v[..2]) - e).amax() < 1e-6);
            assert!(v[2..].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn full_encrypted_recursion_levels_and_result() {
        let (key, model, enc) = setup(12);
        let plan = AttackPlan::quadruple_tank(AttackVariant::EncModel);
        let mut rec = EncryptedRecursion::new(key.public(), enc, &plan).unwrap();
        let mut plain = PlainRecursion::new(model, &plan).unwrap();
        let expected_ay_levels = [1, 2, 3, 4, 5, 6, 7, 9, 10, 11];
        for (k, level) in expected_ay_levels.iter().enumerate() {
            let (enc_u, enc_ay) = rec.step().unwrap();
            let (u, a_y) = plain.step().unwrap();
            assert_eq!(enc_ay.level(), *level, "a_y({k})");
            let got = key.decrypt_vector(&enc_ay, 2).unwrap();
            assert!((DVector::from_column_slice(&got) - a_y).amax() < 1e-6);
            let got_u = match enc_u {
                EncInput::Plain(v) => v,
                EncInput::Cipher(c) => key.decrypt_vector(&c, 2).unwrap(),
            };
            assert!((DVector::from_column_slice(&got_u) - u).amax() < 1e-6);
        }
        assert_eq!(rec.delta_state().level(), 11);
        let dx10 = key.decrypt(rec.delta_state()).unwrap();
        assert!(dx10.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn depth_three_fails_at_step_four() {
        let (key, _, enc) = setup(3);
        let mut rec =
            EncryptedRecursion::new(key.public(), enc, &AttackPlan::quadruple_tank(AttackVariant::EncModel)).unwrap();
        for _ in 0..3 {
            rec.step().unwrap();
        }
        assert_eq!(rec.step().unwrap_err(), AttackError::DepthExhausted { step: 4, required: 4, max_depth: 3 });
    }

    #[test]
    fn newton_schulz_pinv_matches_oracle() {
        let key = KeyContext::<f64>::new(BackendConfig::exact(64, 80, 2)).unwrap();
        let model = LtiModel::quadruple_tank();
        let enc = EncModel::encrypt(&key.public(), &model, PinvSource::NewtonSchulz { iterations: 30 }).unwrap();
        let got = decrypt_matrix(&key, enc.cc_pinv()).unwrap();
        let expected = pad_matrix(&pseudo_inverse(&controllability_matrix(&model)), 8).unwrap();
        let rel = (got - &expected).amax() / expected.amax();
        assert!(rel < 1e-6, "relative deviation {rel:e}");
    }

    #[test]
    fn folding_retiles() {
        let key = KeyContext::<f64>::new(BackendConfig::exact(16, 2, 0)).unwrap();
        let pk = key.public();
        let ct = pk.encrypt_vector(&[1.0, 2.0], 8).unwrap();
        let folded = fold_period(&pk, &ct, 8, 4).unwrap();
        assert_eq!(key.decrypt(&folded).unwrap(), tile(&[1.0, 2.0], 4, 16));
        assert!(fold_period(&pk, &ct, 4, 8).is_err());
        assert_eq!(key.decrypt(&fold_period(&pk, &ct, 8, 8).unwrap()).unwrap(), key.decrypt(&ct).unwrap());
    }
}
