use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_guess, Threshold, VerifierParams, VerifyError};
use crate::control_sim::{
    run_closed_loop, AffineController, BackendMode, LtiModel, Verdict, WireLayout, QUADRUPLE_TANK_X0,
};
use crate::covert_attack::{AttackPlan, AttackVariant, PlainModelAttacker};
use crate::packed_he::{BackendConfig, KeyContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Guesses and permutations sampled directly, no ciphertexts.
    Fast,
    /// The verified encrypted quadruple-tank loop under a plain-model attacker.
    Full,
}

impl std::str::FromStr for DetectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown mode {other:?} (expected fast or full)")),
        }
    }
}

/// Detection steps `k* ∈ 1..=L` plus the undetected runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionHistogram {
    pub lambda: usize,
    pub attack_len: usize,
    /// `counts[j - 1]` runs were detected at step `j`.
    pub counts: Vec<u64>,
    pub undetected: u64,
}

impl DetectionHistogram {
    pub fn empty(lambda: usize, attack_len: usize) -> Self {
        Self { lambda, attack_len, counts: vec![0; attack_len], undetected: 0 }
    }

    /// Records one run; `None` means the attack went unnoticed.
    pub fn record(&mut self, k_star: Option<usize>) {
        match k_star {
            Some(j) => self.counts[j - 1] += 1,
            None => self.undetected += 1,
        }
    }

    pub fn trials(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.undetected
    }

    pub fn count(&self, k_star: usize) -> u64 {
        self.counts[k_star - 1]
    }

    pub fn fraction(&self, k_star: usize) -> f64 {
        self.count(k_star) as f64 / self.trials() as f64
    }

    pub fn undetected_fraction(&self) -> f64 {
        self.undetected as f64 / self.trials() as f64
    }

    /// All bins, detection steps first, undetected last.
    pub fn bins(&self) -> Vec<u64> {
        let mut v = self.counts.clone();
        v.push(self.undetected);
        v
    }

    /// Geometric-law probabilities matching `bins()`.
    pub fn expected_probabilities(&self) -> Result<Vec<f64>, VerifyError> {
        let p = super::p_succ_instant(self.lambda)?;
        let mut probs: Vec<f64> = (1..=self.attack_len).map(|j| (1.0 - p) * p.powi(j as i32 - 1)).collect();
        probs.push(p.powi(self.attack_len as i32));
        Ok(probs)
    }

    /// Adds the counts of another histogram over the same experiment.
    pub fn merge(mut self, other: &Self) -> Self {
        assert_eq!((self.lambda, self.attack_len), (other.lambda, other.attack_len));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.undetected += other.undetected;
        self
    }

    /// `lambda,k_star,count,fraction` rows; `k_star = -1` is undetected.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,k_star,count,fraction\n");
        for j in 1..=self.attack_len {
            let _ = writeln!(out, "{},{},{},{}", self.lambda, j, self.count(j), self.fraction(j));
        }
        let _ = writeln!(out, "{},-1,{},{}", self.lambda, self.undetected, self.undetected_fraction());
        out
    }
}

/// Attack plan used by full mode: `a_u = [2, 2]` until two steps before the
/// cooldown, then the cooldown itself.
fn full_mode_plan(attack_len: usize, n: usize) -> Result<AttackPlan, VerifyError> {
    if attack_len < n + 2 {
        return Err(VerifyError::InvalidAttackLength(attack_len));
    }
    Ok(AttackPlan::constant(AttackVariant::PlainModel, &[2.0, 2.0], 0, attack_len - n - 2, attack_len))
}

fn fast_trial(lambda: usize, attack_len: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    (1..=attack_len).find(|_| sample_guess(lambda, rng) != sample_guess(lambda, rng))
}

struct FullSetup {
    model: LtiModel<f64>,
    ctrl: AffineController<f64>,
    plan: AttackPlan,
    slot_count: usize,
    layout: WireLayout,
}

fn full_trial(lambda: usize, setup: &FullSetup, rng: &mut ChaCha8Rng) -> Result<Option<usize>, VerifyError> {
    let experiment = |e: &dyn std::fmt::Display| VerifyError::Experiment(e.to_string());
    let key =
        KeyContext::<f64>::new(BackendConfig::exact(setup.slot_count, 2, rng.random())).map_err(|e| experiment(&e))?;
    let params = VerifierParams::new(lambda, 16, Threshold::Fixed(1e-9), rng.random());
    let mut attacker =
        PlainModelAttacker::encrypted(setup.model.clone(), &setup.plan, key.public(), setup.layout, rng.random())
            .map_err(|e| experiment(&e))?;
    let trace = run_closed_loop(
        &setup.model,
        &setup.ctrl,
        nalgebra::DVector::from_column_slice(&QUADRUPLE_TANK_X0),
        0,
        setup.plan.length,
        BackendMode::Encrypted { key, verifier: Some(params) },
        Some(&mut attacker),
    )
    .map_err(|e| experiment(&e))?;
    Ok(trace.rows.iter().find(|r| r.verdict == Verdict::Bottom).map(|r| r.k as usize + 1))
}

/// Runs `trials` independent attacks of length `attack_len` against the
/// verifier with expansion factor `lambda` and histograms the step at which
/// each one is first detected. Trial `i` draws from stream `i` of a ChaCha
/// generator seeded with `seed`, so results do not depend on scheduling.
pub fn run_detection_experiment(
    lambda: usize,
    attack_len: usize,
    trials: usize,
    mode: DetectionMode,
    seed: u64,
) -> Result<DetectionHistogram, VerifyError> {
    if lambda < 2 || !lambda.is_multiple_of(2) {
        return Err(VerifyError::InvalidLambda(lambda));
    }
    if attack_len == 0 {
        return Err(VerifyError::InvalidAttackLength(attack_len));
    }
    if trials == 0 {
        return Err(VerifyError::Experiment("trials must be at least 1".into()));
    }
    let full = match mode {
        DetectionMode::Fast => None,
        DetectionMode::Full => {
            let model = LtiModel::quadruple_tank();
            let ctrl = AffineController::quadruple_tank();
            let plan = full_mode_plan(attack_len, model.n())?;
            let layout = WireLayout::for_controller(&ctrl, lambda);
            let slot_count = layout.dim.max(16);
            Some(FullSetup { model, ctrl, plan, slot_count, layout })
        }
    };
    let empty = || DetectionHistogram::empty(lambda, attack_len);
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            match &full {
                None => Ok(fast_trial(lambda, attack_len, &mut rng)),
                Some(setup) => full_trial(lambda, setup, &mut rng),
            }
        })
        .try_fold(empty, |mut h, k_star| {
            h.record(k_star?);
            Ok(h)
        })
        .try_reduce(empty, |a, b| Ok(a.merge(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_gof, chi_square_two_sample};

    #[test]
    fn deterministic_and_complete() {
        let a = run_detection_experiment(4, 10, 5000, DetectionMode::Fast, 9).unwrap();
        let b = run_detection_experiment(4, 10, 5000, DetectionMode::Fast, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials(), 5000);
        assert_ne!(a, run_detection_experiment(4, 10, 5000, DetectionMode::Fast, 10).unwrap());
    }

    #[test]
    fn fast_mode_follows_geometric_law() {
        for lambda in [2, 4, 8] {
            let h = run_detection_experiment(lambda, 10, 20_000, DetectionMode::Fast, 3).unwrap();
            let t = chi_square_gof(&h.bins(), &h.expected_probabilities().unwrap());
            assert!(t.passes(0.001), "λ={lambda}: {t:?}");
        }
    }

    #[test]
    fn lambda_two_first_step() {
        let h = run_detection_experiment(2, 10, 20_000, DetectionMode::Fast, 4).unwrap();
        assert!((h.fraction(1) - 0.5).abs() < 0.02);
    }

    #[test]
    fn full_mode_matches_fast_mode() {
        let full = run_detection_experiment(2, 6, 150, DetectionMode::Full, 5).unwrap();
        let fast = run_detection_experiment(2, 6, 5000, DetectionMode::Fast, 5).unwrap();
        assert_eq!(full.trials(), 150);
        let t = chi_square_two_sample(&full.bins(), &fast.bins());
        assert!(t.passes(0.001), "{t:?}");
    }

    #[test]
    fn full_mode_needs_room_for_cooldown() {
        assert_eq!(
            run_detection_experiment(2, 5, 1, DetectionMode::Full, 0).unwrap_err(),
            VerifyError::InvalidAttackLength(5)
        );
    }

    #[test]
    fn csv_shape() {
        let mut h = DetectionHistogram::empty(2, 2);
        h.record(Some(1));
        h.record(Some(1));
        h.record(Some(2));
        h.record(None);
        assert_eq!(h.to_csv(), "lambda,k_star,count,fraction\n2,1,2,0.5\n2,2,1,0.25\n2,-1,1,0.25\n");
    }

    #[test]
    fn invalid_arguments() {
        assert!(run_detection_experiment(3, 10, 1, DetectionMode::Fast, 0).is_err());
        assert!(run_detection_experiment(2, 0, 1, DetectionMode::Fast, 0).is_err());
        assert!(run_detection_experiment(2, 10, 0, DetectionMode::Fast, 0).is_err());
    }
}
