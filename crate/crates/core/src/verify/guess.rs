use rand::Rng;

use crate::control_sim::WireLayout;
use crate::packed_he::{HeError, PackedCiphertext, PublicContext};
use crate::scalar::Scalar;

/// Uniformly random `λ/2`-subset of the block indices, sorted.
pub fn sample_guess<R: Rng + ?Sized>(lambda: usize, rng: &mut R) -> Vec<usize> {
    let mut guess = rand::seq::index::sample(rng, lambda, lambda / 2).into_vec();
    guess.sort_unstable();
    guess
}

/// Adds `delta` to the leading entries of each listed block, using only the
/// public context.
pub fn inject_blocks<T: Scalar>(
    ctx: &PublicContext<T>,
    layout: &WireLayout,
    ct: &PackedCiphertext<T>,
    blocks: &[usize],
    delta: &[T],
) -> Result<PackedCiphertext<T>, HeError> {
    ctx.add_plain(ct, &layout.mask(blocks, delta, ctx.slot_count()))
}

/// Guesses which blocks carry the payload and injects `delta` into them.
pub fn attacker_guess_and_inject<T: Scalar, R: Rng + ?Sized>(
    ctx: &PublicContext<T>,
    layout: &WireLayout,
    ct: &PackedCiphertext<T>,
    delta: &[T],
    rng: &mut R,
) -> Result<(PackedCiphertext<T>, Vec<usize>), HeError> {
    let guess = sample_guess(layout.blocks, rng);
    let out = inject_blocks(ctx, layout, ct, &guess, delta)?;
    Ok((out, guess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_sim::{controller_eval_plain, AffineController};
    use crate::enc_linalg::{enc_matvec, encrypt_matrix};
    use crate::linalg::pad_matrix;
    use crate::packed_he::{BackendConfig, KeyContext};
    use crate::verify::{lift_affine, DecodeOutcome, Threshold, VerifierContext, VerifierParams};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_block_guess_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 10_000;
        let zeros = (0..draws).filter(|_| sample_guess(2, &mut rng) == vec![0]).count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn guesses_are_subsets_of_half_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for lambda in [2, 4, 8, 16] {
            let g = sample_guess(lambda, &mut rng);
            assert_eq!(g.len(), lambda / 2);
            assert!(g.windows(2).all(|w| w[0] < w[1]));
            assert!(g.iter().all(|&b| b < lambda));
        }
    }

    /// One verified controller evaluation with the measurement channel
    /// tampered in the given blocks.
    fn tampered_step(blocks_of: impl Fn(&[usize]) -> Vec<usize>) -> (DecodeOutcome<f64>, Vec<f64>) {
        let lambda = 4;
        let key = KeyContext::<f64>::new(BackendConfig::exact(64, 4, 3)).unwrap();
        let pk = key.public();
        let ctrl = AffineController::<f64>::quadruple_tank();
        let lifted = lift_affine(&(-ctrl.k()), ctrl.u0(), lambda);
        let d = lifted.block_dim();
        let layout = WireLayout::verified(d, lambda, 2, 2);
        let enc =
            encrypt_matrix(&pk, &pad_matrix(&lifted.tilde_k(), layout.dim).unwrap(), Some(lifted.band())).unwrap();
        let params = VerifierParams::new(lambda, 16, Threshold::Fixed(1e-9), 5);
        let mut verifier = VerifierContext::setup(64, d, |c: &[f64]| lifted.apply_block(c), &params).unwrap();

        let y = [1.1, 0.7];
        let (w, tag) = verifier.ecd(&lifted.augment(&y)).unwrap();
        let ct = pk.encrypt_vector(&w, layout.dim).unwrap();
        let delta = [-0.3, 0.2];
        let forged = inject_blocks(&pk, &layout, &ct, &blocks_of(&tag.payload_blocks()), &delta).unwrap();
        let z = key.decrypt_vector(&enc_matvec(&pk, &enc, &forged).unwrap(), lambda * d).unwrap();
        let expected =
            controller_eval_plain(&ctrl, &(DVector::from_column_slice(&y) + DVector::from_column_slice(&delta)));
        (verifier.dcd(&tag, &z).unwrap(), expected.as_slice().to_vec())
    }

    #[test]
    fn correct_guess_passes_with_shifted_payload() {
        let (outcome, expected) = tampered_step(|payload| payload.to_vec());
        let DecodeOutcome::Payload(u) = outcome else { panic!("correct guess must pass") };
        assert!((u[0] - expected[0]).abs() < 1e-12 && (u[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn wrong_guess_is_detected() {
        let (outcome, _) = tampered_step(|payload| {
            let mut wrong: Vec<usize> = (0..4).filter(|b| !payload.contains(b)).collect();
            wrong.truncate(1);
            wrong.push(payload[0]);
            wrong
        });
        assert!(outcome.is_bottom());
    }
}
