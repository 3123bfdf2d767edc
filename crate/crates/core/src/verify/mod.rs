//! Verifiable outsourced evaluation without communication overhead.
//!
//! The client packs `λ/2` replicas of its input next to `λ/2` challenge
//! inputs with known outputs, shuffles the `λ` blocks with a fresh secret
//! permutation and sends the result in place of the plain input. A server
//! applying the function blockwise cannot tell the blocks apart, so any
//! tampering either hits a challenge block (detected) or must guess the
//! payload positions exactly.

mod detection;
mod guess;
mod lift;
mod probability;

pub use detection::{run_detection_experiment, DetectionHistogram, DetectionMode};
pub use guess::{attacker_guess_and_inject, inject_blocks, sample_guess};
pub use lift::{lift_affine, LiftedAffine};
pub use probability::{
    bound_product_terms, cumulative_bound, p_succ_cumulative, p_succ_cumulative_exact, p_succ_instant,
    p_succ_instant_exact, security_bits, success_bound, success_bound_exact,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("expansion factor must be even and at least 2, got {0}")]
    InvalidLambda(usize),
    #[error("attack length must be at least 1, got {0}")]
    InvalidAttackLength(usize),
    #[error("λ·d = {needed} exceeds the slot count {slots}")]
    CapacityExceeded { needed: usize, slots: usize },
    #[error("at least one challenge is required")]
    NoChallenges,
    #[error("block dimension must be positive")]
    ZeroBlockDim,
    #[error("threshold must be positive and finite")]
    InvalidThreshold,
    #[error("challenge range must be positive and finite")]
    InvalidChallengeRange,
    #[error("expected a vector of length {expected}, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("permutation tag does not match this verifier: {0}")]
    BadTag(&'static str),
    #[error("invalid experiment: {0}")]
    Experiment(String),
}

/// How the decoder's tolerance `ε` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Fixed `ε`.
    Fixed(f64),
    /// `ε = factor · noise_bound` of the decoded ciphertext.
    NoiseScaled(f64),
}

impl Threshold {
    /// `1e-9` on an exact backend, `8 · noise_bound` on a noisy one.
    pub fn for_backend(noise_std: f64) -> Self {
        if noise_std > 0.0 {
            Threshold::NoiseScaled(8.0)
        } else {
            Threshold::Fixed(1e-9)
        }
    }

    pub fn epsilon(self, noise_bound: f64) -> f64 {
        match self {
            Threshold::Fixed(e) => e,
            Threshold::NoiseScaled(f) => f * noise_bound,
        }
    }

    fn validate(self) -> Result<(), VerifyError> {
        let v = match self {
            Threshold::Fixed(e) => e,
            Threshold::NoiseScaled(f) => f,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(VerifyError::InvalidThreshold)
        }
    }
}

fn default_challenge_range() -> f64 {
    10.0
}

/// Client-side verifier parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierParams {
    /// Expansion factor (even).
    pub lambda: usize,
    /// Number of precomputed challenges.
    pub challenge_count: usize,
    pub threshold: Threshold,
    /// Challenges are drawn uniformly from `[-c_max, c_max]^d`.
    #[serde(default = "default_challenge_range")]
    pub c_max: f64,
    #[serde(default)]
    pub seed: u64,
}

impl VerifierParams {
    pub fn new(lambda: usize, challenge_count: usize, threshold: Threshold, seed: u64) -> Self {
        Self { lambda, challenge_count, threshold, c_max: default_challenge_range(), seed }
    }
}

/// Secret per-step encoding state kept by the client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationTag {
    /// `perm[i]` is the destination block of source block `i`; sources
    /// `0..λ/2` are payload replicas, `λ/2..λ` challenges.
    pub perm: Vec<usize>,
    /// Indices into the challenge store, one per challenge block (0-based).
    pub challenge_indices: Vec<usize>,
    pub step: u64,
}

impl PermutationTag {
    /// Blocks of the shuffled vector that hold payload replicas.
    pub fn payload_blocks(&self) -> Vec<usize> {
        let mut blocks = self.perm[..self.perm.len() / 2].to_vec();
        blocks.sort_unstable();
        blocks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutcome<T> {
    Payload(Vec<T>),
    /// Verification failed; lists the challenge positions `r` that deviated.
    Bottom {
        failing: Vec<usize>,
    },
}

impl<T> DecodeOutcome<T> {
    pub fn is_bottom(&self) -> bool {
        matches!(self, DecodeOutcome::Bottom { .. })
    }
}

#[derive(Debug, Clone)]
pub struct VerifierContext<T> {
    lambda: usize,
    block_dim: usize,
    threshold: Threshold,
    store: Vec<(Vec<T>, Vec<T>)>,
    rng: ChaCha20Rng,
    step: u64,
}

impl<T: Scalar> VerifierContext<T> {
    /// Draws the challenge store and precomputes `h` on it.
    pub fn setup(
        slot_count: usize,
        block_dim: usize,
        h: impl Fn(&[T]) -> Vec<T>,
        params: &VerifierParams,
    ) -> Result<Self, VerifyError> {
        let lambda = params.lambda;
        if lambda < 2 || !lambda.is_multiple_of(2) {
            return Err(VerifyError::InvalidLambda(lambda));
        }
        if block_dim == 0 {
            return Err(VerifyError::ZeroBlockDim);
        }
        if lambda * block_dim > slot_count {
            return Err(VerifyError::CapacityExceeded { needed: lambda * block_dim, slots: slot_count });
        }
        if params.challenge_count == 0 {
            return Err(VerifyError::NoChallenges);
        }
        params.threshold.validate()?;
        if !(params.c_max.is_finite() && params.c_max > 0.0) {
            return Err(VerifyError::InvalidChallengeRange);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
        let c_max = params.c_max;
        let mut store = Vec::with_capacity(params.challenge_count);
        for _ in 0..params.challenge_count {
            let c: Vec<T> = (0..block_dim).map(|_| T::lit(rng.random_range(-c_max..=c_max))).collect();
            let hc = h(&c);
            if hc.len() != block_dim {
                return Err(VerifyError::Length { expected: block_dim, actual: hc.len() });
            }
            store.push((c, hc));
        }
        Ok(Self { lambda, block_dim, threshold: params.threshold, store, rng, step: 0 })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// `λ d`.
    pub fn encoded_len(&self) -> usize {
        self.lambda * self.block_dim
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    pub fn challenge_count(&self) -> usize {
        self.store.len()
    }

    /// Challenge input `c_i` and its precomputed output `h(c_i)`.
    pub fn challenge(&self, i: usize) -> (&[T], &[T]) {
        let (c, hc) = &self.store[i];
        (c, hc)
    }

    /// Encodes `w` under a fresh uniform permutation and fresh challenges.
    pub fn ecd(&mut self, w: &[T]) -> Result<(Vec<T>, PermutationTag), VerifyError> {
        let mut perm: Vec<usize> = (0..self.lambda).collect();
        perm.shuffle(&mut self.rng);
        let m = self.store.len();
        let challenge_indices = (0..self.lambda / 2).map(|_| self.rng.random_range(0..m)).collect();
        let tag = PermutationTag { perm, challenge_indices, step: self.step };
        self.step += 1;
        let encoded = self.encode_with(w, &tag)?;
        Ok((encoded, tag))
    }

    /// Deterministic encoding under a given tag.
    pub fn encode_with(&self, w: &[T], tag: &PermutationTag) -> Result<Vec<T>, VerifyError> {
        self.check_tag(tag)?;
        let d = self.block_dim;
        if w.len() != d {
            return Err(VerifyError::Length { expected: d, actual: w.len() });
        }
        let half = self.lambda / 2;
        let mut out = vec![T::zero(); self.encoded_len()];
        for (src, &dst) in tag.perm.iter().enumerate() {
            let block = if src < half { w } else { &self.store[tag.challenge_indices[src - half]].0 };
            out[dst * d..(dst + 1) * d].copy_from_slice(block);
        }
        Ok(out)
    }

    /// Decodes with the threshold evaluated at zero noise.
    pub fn dcd(&mut self, tag: &PermutationTag, z: &[T]) -> Result<DecodeOutcome<T>, VerifyError> {
        self.dcd_with_noise(tag, z, T::zero())
    }

    /// Checks every challenge block against its precomputed output and, on
    /// success, returns a uniformly chosen payload replica.
    pub fn dcd_with_noise(
        &mut self,
        tag: &PermutationTag,
        z: &[T],
        noise_bound: T,
    ) -> Result<DecodeOutcome<T>, VerifyError> {
        self.check_tag(tag)?;
        let d = self.block_dim;
        if z.len() != self.encoded_len() {
            return Err(VerifyError::Length { expected: self.encoded_len(), actual: z.len() });
        }
        let eps = T::lit(self.threshold.epsilon(noise_bound.as_f64()));
        let half = self.lambda / 2;
        let block = |src: usize| {
            let dst = tag.perm[src];
            &z[dst * d..(dst + 1) * d]
        };
        let failing: Vec<usize> = (0..half)
            .filter(|&r| {
                let expected = &self.store[tag.challenge_indices[r]].1;
                let got = block(half + r);
                // written so that NaN counts as a failure
                !got.iter().zip(expected).all(|(a, b)| (*a - *b).abs() <= eps)
            })
            .collect();
        if !failing.is_empty() {
            return Ok(DecodeOutcome::Bottom { failing });
        }
        let pick = self.rng.random_range(0..half);
        Ok(DecodeOutcome::Payload(block(pick).to_vec()))
    }

    fn check_tag(&self, tag: &PermutationTag) -> Result<(), VerifyError> {
        if tag.perm.len() != self.lambda || tag.challenge_indices.len() != self.lambda / 2 {
            return Err(VerifyError::BadTag("wrong expansion factor"));
        }
        let mut seen = vec![false; self.lambda];
        for &p in &tag.perm {
            if p >= self.lambda || std::mem::replace(&mut seen[p], true) {
                return Err(VerifyError::BadTag("not a permutation"));
            }
        }
        if tag.challenge_indices.iter().any(|&i| i >= self.store.len()) {
            return Err(VerifyError::BadTag("challenge index out of range"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_gof;
    use std::collections::HashMap;

    fn doubling(slot_count: usize, c_max: f64) -> VerifierContext<f64> {
        let mut params = VerifierParams::new(2, 1, Threshold::Fixed(1e-6), 0);
        params.c_max = c_max;
        VerifierContext::setup(slot_count, 1, |x: &[f64]| x.iter().map(|v| 2.0 * v).collect(), &params).unwrap()
    }

    /// Verifier with one challenge forced to `c = 3`.
    fn hand_instance() -> VerifierContext<f64> {
        let mut v = doubling(2, 10.0);
        v.store[0] = (vec![3.0], vec![6.0]);
        v
    }

    fn tag(perm: Vec<usize>) -> PermutationTag {
        PermutationTag { perm, challenge_indices: vec![0], step: 0 }
    }

    #[test]
    fn setup_validation() {
        let h = |x: &[f64]| x.to_vec();
        let p = |lambda| VerifierParams::new(lambda, 1, Threshold::Fixed(1e-9), 1);
        let v = VerifierContext::setup(8, 1, h, &p(2)).unwrap();
        assert_eq!(v.challenge_count(), 1);
        assert!(VerifierContext::setup(65536, 4096, h, &p(16)).is_ok());
        assert_eq!(
            VerifierContext::setup(65536, 4097, h, &p(16)).unwrap_err(),
            VerifyError::CapacityExceeded { needed: 16 * 4097, slots: 65536 }
        );
        assert_eq!(VerifierContext::setup(8, 1, h, &p(3)).unwrap_err(), VerifyError::InvalidLambda(3));
        let mut zero = p(2);
        zero.challenge_count = 0;
        assert_eq!(VerifierContext::setup(8, 1, h, &zero).unwrap_err(), VerifyError::NoChallenges);
        let mut bad = p(2);
        bad.threshold = Threshold::Fixed(0.0);
        assert!(VerifierContext::setup(8, 1, h, &bad).is_err());
    }

    #[test]
    fn challenges_stay_in_box_and_match_h() {
        let v = doubling(64, 0.5);
        let (c, hc) = v.challenge(0);
        assert!(c[0].abs() <= 0.5);
        assert_eq!(hc[0], 2.0 * c[0]);
    }

    #[test]
    fn forced_layouts() {
        let v = hand_instance();
        // payload [7], challenge [3]
        assert_eq!(v.encode_with(&[7.0], &tag(vec![0, 1])).unwrap(), vec![7.0, 3.0]);
        assert_eq!(v.encode_with(&[7.0], &tag(vec![1, 0])).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn decode_hand_traces() {
        let mut v = hand_instance();
        let swap = tag(vec![1, 0]);
        assert_eq!(v.dcd(&swap, &[6.0, 14.0]).unwrap(), DecodeOutcome::Payload(vec![14.0]));
        assert_eq!(v.dcd(&swap, &[8.0, 14.0]).unwrap(), DecodeOutcome::Bottom { failing: vec![0] });
        assert!(v.dcd(&swap, &[f64::NAN, 14.0]).unwrap().is_bottom());
        assert!(v.dcd(&swap, &[6.0]).is_err());
        assert!(v.dcd(&tag(vec![0, 0]), &[6.0, 14.0]).is_err());
    }

    #[test]
    fn noise_scaled_threshold() {
        let mut v = hand_instance();
        v.threshold = Threshold::NoiseScaled(8.0);
        let swap = tag(vec![1, 0]);
        assert!(!v.dcd_with_noise(&swap, &[6.0 + 7e-3, 14.0], 1e-3).unwrap().is_bottom());
        assert!(v.dcd_with_noise(&swap, &[6.0 + 9e-3, 14.0], 1e-3).unwrap().is_bottom());
    }

    #[test]
    fn untampered_blockwise_evaluation_always_passes() {
        let h = |x: &[f64]| vec![x[0] + x[1], x[0] - 3.0 * x[1]];
        let mut v = VerifierContext::setup(64, 2, h, &VerifierParams::new(8, 5, Threshold::Fixed(1e-9), 9)).unwrap();
        for i in 0..2000 {
            let w = [i as f64 * 0.01, -1.5];
            let (enc, tag) = v.ecd(&w).unwrap();
            assert_eq!(tag.step, i);
            let z: Vec<f64> = enc.chunks(2).flat_map(h).collect();
            assert_eq!(v.dcd(&tag, &z).unwrap(), DecodeOutcome::Payload(h(&w)));
        }
    }

    #[test]
    fn payload_independent_of_permutation() {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..n {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        for lambda in [2usize, 4] {
            let h = |x: &[f64]| vec![3.0 * x[0] + 1.0];
            let mut v =
                VerifierContext::setup(8, 1, h, &VerifierParams::new(lambda, 3, Threshold::Fixed(1e-9), 2)).unwrap();
            let perms = permutations(lambda);
            assert_eq!(perms.len(), (1..=lambda).product::<usize>());
            for perm in perms {
                let t = PermutationTag { perm, challenge_indices: vec![lambda % 3; lambda / 2], step: 0 };
                let enc = v.encode_with(&[2.0], &t).unwrap();
                let z: Vec<f64> = enc.iter().map(|x| h(&[*x])[0]).collect();
                assert_eq!(v.dcd(&t, &z).unwrap(), DecodeOutcome::Payload(vec![7.0]));
            }
        }
    }

    #[test]
    fn shuffle_is_uniform_over_24_permutations() {
        let mut v = VerifierContext::setup(
            8,
            1,
            |x: &[f64]| x.to_vec(),
            &VerifierParams::new(4, 1, Threshold::Fixed(1e-9), 77),
        )
        .unwrap();
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        let trials = 10_000;
        for _ in 0..trials {
            let (_, t) = v.ecd(&[1.0]).unwrap();
            *counts.entry(t.perm).or_default() += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = trials as f64 / 24.0;
        let sigma = (trials as f64 * (1.0 / 24.0) * (23.0 / 24.0)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - expected).abs() <= 3.0 * sigma, "count {c} vs {expected}");
        }
        let observed: Vec<u64> = counts.values().copied().collect();
        let gof = chi_square_gof(&observed, &[1.0 / 24.0; 24]);
        assert!(gof.p_value > 0.01, "chi-square p = {}", gof.p_value);
    }
}
