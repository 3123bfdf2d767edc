//! Covert attacks through the homomorphisms of an encrypted loop.
//!
//! The attacker adds `a_u(k)` to the control input and removes the plant's
//! response `a_y(k)` from the measurement, where
//!
//! ```text
//! Δx(k+1) = A Δx(k) + B a_u(k),   a_y(k) = C Δx(k),   Δx(0) = 0.
//! ```
//!
//! The controller then sees the attack-free loop. A finite attack of length
//! `L` ends with a cooldown over its last `n` steps that steers `Δx(L)` back
//! to zero. The plain-model attacker knows `(A, B, C)`; the encrypted-model
//! attacker only holds their encryptions and runs the recursion
//! homomorphically.

mod encrypted;

pub use encrypted::{
    cooldown_inputs_encrypted, delta_step_encrypted, fold_period, EncInput, EncModel, EncryptedModelAttacker,
    EncryptedRecursion, PinvSource,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control_sim::{ChannelAttacker, LtiModel, ModelError, Wire, WireLayout};
use crate::enc_linalg::EncLinalgError;
use crate::linalg::{matrix_power, pseudo_inverse};
use crate::packed_he::{HeError, PackedCiphertext, PublicContext};
use crate::scalar::Scalar;
use crate::verify::{inject_blocks, sample_guess};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error(transparent)]
    He(HeError),
    #[error(transparent)]
    EncLinalg(EncLinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("multiplicative depth exhausted at step {step} of the Δ-recursion (level {required} > {max_depth})")]
    DepthExhausted { step: usize, required: usize, max_depth: usize },
    #[error("cooldown leaves |Δx(L)| = {residual:e}")]
    CooldownResidual { residual: f64 },
    #[error("invalid attack plan: {0}")]
    InvalidPlan(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("attacker expected {0} data on the wire")]
    WireKind(&'static str),
}

impl From<HeError> for AttackError {
    fn from(e: HeError) -> Self {
        AttackError::He(e)
    }
}

impl From<EncLinalgError> for AttackError {
    fn from(e: EncLinalgError) -> Self {
        match e {
            EncLinalgError::He(h) => AttackError::He(h),
            other => AttackError::EncLinalg(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    /// Attacker knows the plant model in the clear.
    PlainModel,
    /// Attacker only holds the encrypted model.
    EncModel,
}

/// Input-attack schedule. Steps of the active range missing from `a_u` are
/// zero, as is every step between the active range and the cooldown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    pub variant: AttackVariant,
    pub a_u: BTreeMap<usize, Vec<f64>>,
    /// Total attack length `L`, cooldown included.
    #[serde(rename = "L")]
    pub length: usize,
    /// First and last step of the active phase, inclusive.
    pub active: [usize; 2],
}

impl AttackPlan {
    /// The same input on every step of `first..=last`.
    pub fn constant(variant: AttackVariant, value: &[f64], first: usize, last: usize, length: usize) -> Self {
        let a_u = (first..=last).map(|k| (k, value.to_vec())).collect();
        Self { variant, a_u, length, active: [first, last] }
    }

    /// `a_u = [2, 2]` on `k = 0..=4`, `L = 10`.
    pub fn quadruple_tank(variant: AttackVariant) -> Self {
        Self::constant(variant, &[2.0, 2.0], 0, 4, 10)
    }

    /// Checks the plan against a model with `n` states and `m` inputs.
    pub fn validate(&self, n: usize, m: usize) -> Result<(), AttackError> {
        let bad = |msg: String| Err(AttackError::InvalidPlan(msg));
        if self.length < n {
            return bad(format!("L = {} is shorter than the cooldown of {n} steps", self.length));
        }
        let [first, last] = self.active;
        if first > last {
            return bad(format!("active range [{first}, {last}] is empty"));
        }
        if last >= self.length - n {
            return bad(format!("active range ends at {last}, overlapping the cooldown from {}", self.length - n));
        }
        for (k, v) in &self.a_u {
            if *k < first || *k > last {
                return bad(format!("a_u({k}) lies outside the active range"));
            }
            if v.len() != m {
                return bad(format!("a_u({k}) has {} entries, expected {m}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("a_u({k}) is not finite"));
            }
        }
        Ok(())
    }

    /// `a_u(k)` for `k = 0..L-n`, zeros filled in.
    pub fn schedule<T: Scalar>(&self, n: usize, m: usize) -> Result<Vec<DVector<T>>, AttackError> {
        self.validate(n, m)?;
        Ok((0..self.length - n)
            .map(|k| match self.a_u.get(&k) {
                Some(v) => DVector::from_iterator(m, v.iter().map(|x| T::lit(*x))),
                None => DVector::zeros(m),
            })
            .collect())
    }
}

/// One step of the attacker's model: returns `(Δx(k+1), a_y(k))`.
pub fn delta_step<T: Scalar>(
    model: &LtiModel<T>,
    dx: &DVector<T>,
    a_u: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>), AttackError> {
    let (next, a_y) = crate::control_sim::plant_step(model, dx, a_u)?;
    Ok((next, a_y))
}

/// `[B  AB  ...  A^{n-1}B]`.
pub fn controllability_matrix<T: Scalar>(model: &LtiModel<T>) -> DMatrix<T> {
    let (n, m) = (model.n(), model.m());
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = model.b().clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = model.a() * block;
    }
    out
}

fn cooldown_tolerance<T: Scalar>(scale: T) -> T {
    let tol = T::default_epsilon().sqrt().max(T::lit(1e-8));
    tol * scale.max(T::one())
}

/// Inputs `a_u(L-n), ..., a_u(L-1)` (in time order) that bring `Δx` from
/// `Δx(L-n)` to zero in `n` steps.
///
/// Expanding `Δx(L) = A^n Δx(L-n) + Σ_i A^i B a_u(L-1-i)` gives
/// `U = -Cc⁺ A^n Δx(L-n)` with block `i` of `U` equal to `a_u(L-1-i)`.
pub fn cooldown_inputs<T: Scalar>(model: &LtiModel<T>, dx: &DVector<T>) -> Result<Vec<DVector<T>>, AttackError> {
    let (n, m) = (model.n(), model.m());
    if dx.len() != n {
        return Err(ModelError::Dimension { what: "Δx", expected: n.to_string(), actual: dx.len().to_string() }.into());
    }
    let drift = matrix_power(model.a(), n as u32) * dx;
    let stack = -(pseudo_inverse(&controllability_matrix(model)) * &drift);
    let inputs: Vec<DVector<T>> = (0..n).map(|j| stack.rows((n - 1 - j) * m, m).into_owned()).collect();
    let mut end = dx.clone();
    for u in &inputs {
        end = model.a() * end + model.b() * u;
    }
    let residual = end.amax();
    if residual.as_f64().is_nan() || residual > cooldown_tolerance(drift.amax()) {
        return Err(AttackError::CooldownResidual { residual: residual.as_f64() });
    }
    Ok(inputs)
}

/// The attacker's plaintext Δ-recursion with scheduled inputs and cooldown.
#[derive(Debug, Clone)]
pub struct PlainRecursion<T: Scalar> {
    model: LtiModel<T>,
    schedule: Vec<DVector<T>>,
    length: usize,
    dx: DVector<T>,
    k: usize,
    cooldown: Vec<DVector<T>>,
}

impl<T: Scalar> PlainRecursion<T> {
    pub fn new(model: LtiModel<T>, plan: &AttackPlan) -> Result<Self, AttackError> {
        let schedule = plan.schedule(model.n(), model.m())?;
        let dx = DVector::zeros(model.n());
        Ok(Self { model, schedule, length: plan.length, dx, k: 0, cooldown: Vec::new() })
    }

    /// Next step index.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// `Δx(k)`.
    pub fn delta_state(&self) -> &DVector<T> {
        &self.dx
    }

    /// Returns `(a_u(k), a_y(k))` and advances to `Δx(k+1)`. Past `L` the
    /// input is zero.
    pub fn step(&mut self) -> Result<(DVector<T>, DVector<T>), AttackError> {
        let k = self.k;
        let cooldown_start = self.length - self.model.n();
        if k == cooldown_start {
            self.cooldown = cooldown_inputs(&self.model, &self.dx)?;
        }
        let a_u = if k < cooldown_start {
            self.schedule[k].clone()
        } else if k < self.length {
            self.cooldown[k - cooldown_start].clone()
        } else {
            DVector::zeros(self.model.m())
        };
        let (next, a_y) = delta_step(&self.model, &self.dx, &a_u)?;
        self.dx = next;
        self.k += 1;
        Ok((a_u, a_y))
    }
}

/// Which link an attack value is injected into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// `⟦u⟧ = ⟦u_c⟧ ⊕ a_u`.
    Input,
    /// `⟦y_c⟧ = ⟦y⟧ ⊕ (-a_y)`.
    Output,
}

/// Adds `value` (input link) or `-value` (output link) to the listed blocks
/// of an encrypted message, with the public context only.
pub fn inject<T: Scalar>(
    ctx: &PublicContext<T>,
    layout: &WireLayout,
    channel: Channel,
    ct: &PackedCiphertext<T>,
    blocks: &[usize],
    value: &[T],
) -> Result<PackedCiphertext<T>, HeError> {
    match channel {
        Channel::Input => inject_blocks(ctx, layout, ct, blocks, value),
        Channel::Output => {
            let neg: Vec<T> = value.iter().map(|v| -*v).collect();
            inject_blocks(ctx, layout, ct, blocks, &neg)
        }
    }
}

/// Attacker that knows the plant model in the clear. On verified links it
/// guesses the payload blocks once per step and uses that guess on both links.
#[derive(Debug, Clone)]
pub struct PlainModelAttacker<T: Scalar> {
    recursion: PlainRecursion<T>,
    link: Option<(PublicContext<T>, WireLayout)>,
    rng: ChaCha8Rng,
    current: Option<(i64, DVector<T>, Vec<usize>)>,
    guesses: Vec<Vec<usize>>,
}

impl<T: Scalar> PlainModelAttacker<T> {
    /// For plaintext links.
    pub fn plain(model: LtiModel<T>, plan: &AttackPlan) -> Result<Self, AttackError> {
        Self::new(model, plan, None, 0)
    }

    /// For encrypted links with the given layout; `seed` drives block guesses.
    pub fn encrypted(
        model: LtiModel<T>,
        plan: &AttackPlan,
        ctx: PublicContext<T>,
        layout: WireLayout,
        seed: u64,
    ) -> Result<Self, AttackError> {
        Self::new(model, plan, Some((ctx, layout)), seed)
    }

    fn new(
        model: LtiModel<T>,
        plan: &AttackPlan,
        link: Option<(PublicContext<T>, WireLayout)>,
        seed: u64,
    ) -> Result<Self, AttackError> {
        Ok(Self {
            recursion: PlainRecursion::new(model, plan)?,
            link,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
            guesses: Vec::new(),
        })
    }

    /// Block guesses made so far, one per attacked step.
    pub fn guesses(&self) -> &[Vec<usize>] {
        &self.guesses
    }

    fn active(&self, k: i64) -> bool {
        k >= 0 && (k as usize) < self.recursion.length()
    }

    fn apply(
        &self,
        channel: Channel,
        wire: Wire<T>,
        blocks: &[usize],
        value: &DVector<T>,
    ) -> Result<Wire<T>, AttackError> {
        match (wire, &self.link) {
            (Wire::Plain(v), None) => {
                let sign = if channel == Channel::Input { T::one() } else { -T::one() };
                Ok(Wire::Plain(v.iter().zip(value.iter()).map(|(a, b)| *a + sign * *b).collect()))
            }
            (Wire::Cipher(ct), Some((ctx, layout))) => {
                Ok(Wire::Cipher(inject(ctx, layout, channel, &ct, blocks, value.as_slice())?))
            }
            (Wire::Plain(_), Some(_)) => Err(AttackError::WireKind("encrypted")),
            (Wire::Cipher(_), None) => Err(AttackError::WireKind("plaintext")),
        }
    }
}

impl<T: Scalar> ChannelAttacker<T> for PlainModelAttacker<T> {
    fn tamper_measurement(&mut self, k: i64, wire: Wire<T>) -> Result<Wire<T>, AttackError> {
        if !self.active(k) {
            return Ok(wire);
        }
        if self.recursion.k() as i64 != k {
            return Err(AttackError::InvalidPlan(format!("attacker at step {} saw step {k}", self.recursion.k())));
        }
        let (a_u, a_y) = self.recursion.step()?;
        let blocks = match &self.link {
            Some((_, layout)) if layout.blocks > 1 => sample_guess(layout.blocks, &mut self.rng),
            _ => vec![0],
        };
        self.guesses.push(blocks.clone());
        let out = self.apply(Channel::Output, wire, &blocks, &a_y)?;
        self.current = Some((k, a_u, blocks));
        Ok(out)
    }

    fn tamper_control(&mut self, k: i64, wire: Wire<T>) -> Result<Wire<T>, AttackError> {
        match self.current.take() {
            Some((step, a_u, blocks)) if step == k => self.apply(Channel::Input, wire, &blocks, &a_u),
            _ => Ok(wire),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rank;
    use rand::{Rng, SeedableRng};

    fn tank() -> LtiModel<f64> {
        LtiModel::quadruple_tank()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn delta_step_cases() {
        let model = tank();
        let zero = DVector::zeros(4);
        let (next, a_y) = delta_step(&model, &zero, &DVector::zeros(2)).unwrap();
        assert_eq!((next, a_y), (DVector::zeros(4), DVector::zeros(2)));
        let a_u = dv(&[2.0, 2.0]);
        let (next, a_y) = delta_step(&model, &zero, &a_u).unwrap();
        assert_eq!(a_y, DVector::zeros(2));
        assert_eq!(next, model.b() * &a_u);
    }

    /// `a_y(k) = C Σ_{i<k} A^{k-i-1} B a_u(i)`, evaluated without recursion.
    fn convolution(model: &LtiModel<f64>, inputs: &[DVector<f64>], k: usize) -> DVector<f64> {
        let mut sum = DVector::zeros(model.n());
        for (i, u) in inputs.iter().enumerate().take(k) {
            sum += matrix_power(model.a(), (k - i - 1) as u32) * model.b() * u;
        }
        model.c() * sum
    }

    #[test]
    fn recursion_matches_convolution_sum() {
        let model = tank();
        let inputs = vec![dv(&[2.0, 2.0]); 5];
        let mut dx = DVector::zeros(4);
        for k in 0..5 {
            let (next, a_y) = delta_step(&model, &dx, &inputs[k]).unwrap();
            assert!((a_y - convolution(&model, &inputs, k)).amax() < 1e-12);
            dx = next;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=2);
            let p = rng.random_range(1..=2);
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let radius = a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
            a /= radius.max(1.0) * 1.1;
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
            let model = LtiModel::new(a, b, c).unwrap();
            let inputs: Vec<DVector<f64>> =
                (0..8).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0))).collect();
            let mut dx = DVector::zeros(n);
            for k in 0..8 {
                let (next, a_y) = delta_step(&model, &dx, &inputs[k]).unwrap();
                assert!((a_y - convolution(&model, &inputs, k)).amax() < 1e-10);
                dx = next;
            }
        }
    }

    #[test]
    fn controllability_cases() {
        let ident =
            LtiModel::<f64>::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let cc = controllability_matrix(&ident);
        assert_eq!(cc, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));
        let scalar = LtiModel::<f64>::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_eq!(controllability_matrix(&scalar), *scalar.b());
        let cc = controllability_matrix(&tank());
        assert_eq!(cc.shape(), (4, 8));
        assert_eq!(rank(&cc), 4);
        // block layout [B AB A²B A³B]
        let a2b = tank().a() * tank().a() * tank().b();
        assert!((cc.columns(4, 2) - a2b).amax() < 1e-15);
    }

    #[test]
    fn cooldown_zero_and_tank_scenario() {
        let model = tank();
        for u in cooldown_inputs(&model, &DVector::zeros(4)).unwrap() {
            assert_eq!(u, DVector::zeros(2));
        }
        let mut rec =
            PlainRecursion::new(model.clone(), &AttackPlan::quadruple_tank(AttackVariant::PlainModel)).unwrap();
        for _ in 0..10 {
            rec.step().unwrap();
        }
        assert!(rec.delta_state().amax() <= 1e-8, "Δx(10) = {}", rec.delta_state());
        for _ in 10..40 {
            let (a_u, a_y) = rec.step().unwrap();
            assert_eq!(a_u, DVector::zeros(2));
            assert!(a_y.amax() <= 1e-8);
        }
    }

    #[test]
    fn gap_step_is_zero() {
        let mut rec = PlainRecursion::new(tank(), &AttackPlan::quadruple_tank(AttackVariant::PlainModel)).unwrap();
        let inputs: Vec<DVector<f64>> = (0..10).map(|_| rec.step().unwrap().0).collect();
        for u in &inputs[..5] {
            assert_eq!(*u, dv(&[2.0, 2.0]));
        }
        assert_eq!(inputs[5], DVector::zeros(2));
        assert!(inputs[6..].iter().all(|u| u.amax() > 0.0));
    }

    #[test]
    fn uncontrollable_system_is_reported() {
        let model = LtiModel::<f64>::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let err = cooldown_inputs(&model, &dv(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, AttackError::CooldownResidual { .. }));
    }

    #[test]
    fn plan_validation_and_json() {
        let plan = AttackPlan::quadruple_tank(AttackVariant::EncModel);
        plan.validate(4, 2).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"L\":10") && json.contains("\"enc_model\""));
        assert_eq!(serde_json::from_str::<AttackPlan>(&json).unwrap(), plan);
        let parsed: AttackPlan =
            serde_json::from_str(r#"{"variant":"plain_model","a_u":{"0":[1,0]},"L":6,"active":[0,1]}"#).unwrap();
        let s = parsed.schedule::<f64>(4, 2).unwrap();
        assert_eq!(s, vec![dv(&[1.0, 0.0]), DVector::zeros(2)]);

        let overlap = AttackPlan::constant(AttackVariant::PlainModel, &[1.0, 1.0], 0, 6, 10);
        assert!(overlap.validate(4, 2).is_err());
        let short = AttackPlan::constant(AttackVariant::PlainModel, &[1.0, 1.0], 0, 0, 3);
        assert!(short.validate(4, 2).is_err());
        let wrong_dim = AttackPlan::constant(AttackVariant::PlainModel, &[1.0], 0, 2, 10);
        assert!(wrong_dim.validate(4, 2).is_err());
    }

    #[test]
    fn injection_round_trip() {
        use crate::packed_he::{BackendConfig, KeyContext};
        let key = KeyContext::<f64>::new(BackendConfig::exact(16, 2, 0)).unwrap();
        let pk = key.public();
        let layout = WireLayout::unverified(4, 2, 2);
        let ct = pk.encrypt_vector(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        let same = inject(&pk, &layout, Channel::Input, &ct, &[0], &[0.0, 0.0]).unwrap();
        assert_eq!(key.decrypt(&same).unwrap(), key.decrypt(&ct).unwrap());
        let a_y = [0.25, -1.5];
        let down = inject(&pk, &layout, Channel::Output, &ct, &[0], &a_y).unwrap();
        assert_eq!(key.decrypt_vector(&down, 4).unwrap(), vec![0.75, 3.5, 3.0, 4.0]);
        let back = inject(&pk, &layout, Channel::Input, &down, &[0], &a_y).unwrap();
        assert_eq!(key.decrypt(&back).unwrap(), key.decrypt(&ct).unwrap());
    }
}
