//! Attack success probabilities against the block-shuffling verifier.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

use super::VerifyError;

fn check_lambda(lambda: usize) -> Result<(), VerifyError> {
    if lambda < 2 || !lambda.is_multiple_of(2) {
        return Err(VerifyError::InvalidLambda(lambda));
    }
    Ok(())
}

/// `C(n, k)` as an exact integer.
fn binomial(n: usize, k: usize) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `1 / C(λ, λ/2)` exactly.
pub fn p_succ_instant_exact(lambda: usize) -> Result<BigRational, VerifyError> {
    check_lambda(lambda)?;
    Ok(BigRational::new(BigInt::one(), binomial(lambda, lambda / 2)))
}

/// Probability that one uniform guess of `λ/2` blocks hits exactly the payload blocks.
pub fn p_succ_instant(lambda: usize) -> Result<f64, VerifyError> {
    Ok(p_succ_instant_exact(lambda)?.to_f64().expect("finite probability"))
}

pub fn p_succ_cumulative_exact(lambda: usize, attack_len: usize) -> Result<BigRational, VerifyError> {
    if attack_len < 1 {
        return Err(VerifyError::InvalidAttackLength(attack_len));
    }
    Ok(num_traits::pow(p_succ_instant_exact(lambda)?, attack_len))
}

/// Probability of staying undetected for `attack_len` steps, the permutation
/// being resampled every step.
pub fn p_succ_cumulative(lambda: usize, attack_len: usize) -> Result<f64, VerifyError> {
    Ok(p_succ_cumulative_exact(lambda, attack_len)?.to_f64().expect("finite probability"))
}

/// `2^{-λ/2}`, exactly.
pub fn success_bound_exact(lambda: usize) -> Result<BigRational, VerifyError> {
    check_lambda(lambda)?;
    Ok(BigRational::new(BigInt::one(), BigInt::one() << (lambda / 2)))
}

/// Upper bound `2^{-λ/2}` on the per-step success probability.
pub fn success_bound(lambda: usize) -> Result<f64, VerifyError> {
    check_lambda(lambda)?;
    Ok(0.5f64.powi((lambda / 2) as i32))
}

/// Upper bound `2^{-Lλ/2}` on the cumulative success probability.
pub fn cumulative_bound(lambda: usize, attack_len: usize) -> Result<f64, VerifyError> {
    if attack_len < 1 {
        return Err(VerifyError::InvalidAttackLength(attack_len));
    }
    Ok(success_bound(lambda)?.powi(attack_len as i32))
}

/// Factors `(λ - 2i) / (λ - i)` for `i = 0..λ/2`; their product times
/// `2^{-λ/2}` is `1 / C(λ, λ/2)`.
pub fn bound_product_terms(lambda: usize) -> Result<Vec<BigRational>, VerifyError> {
    check_lambda(lambda)?;
    Ok((0..lambda / 2).map(|i| BigRational::new(BigInt::from(lambda - 2 * i), BigInt::from(lambda - i))).collect())
}

/// Bits of security `-log2(p)`.
pub fn security_bits(p: f64) -> f64 {
    -p.log2()
}
