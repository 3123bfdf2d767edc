//! Dense plaintext linear algebra on nalgebra matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("padding target {target} is not a power of two")]
    TargetNotPowerOfTwo { target: usize },
    #[error("padding target {target} is smaller than dimension {dim}")]
    TargetTooSmall { target: usize, dim: usize },
}

/// Zero-pads a vector to `target` entries.
pub fn pad_vector<T: Scalar>(v: &[T], target: usize) -> Result<Vec<T>, LinalgError> {
    check_target(v.len(), target)?;
    let mut out = v.to_vec();
    out.resize(target, T::zero());
    Ok(out)
}

/// Zero-pads a (possibly rectangular) matrix into the top-left corner of a
/// `target x target` matrix.
pub fn pad_matrix<T: Scalar>(s: &DMatrix<T>, target: usize) -> Result<DMatrix<T>, LinalgError> {
    check_target(s.nrows().max(s.ncols()), target)?;
    let mut out = DMatrix::zeros(target, target);
    out.view_mut((0, 0), (s.nrows(), s.ncols())).copy_from(s);
    Ok(out)
}

fn check_target(dim: usize, target: usize) -> Result<(), LinalgError> {
    if !target.is_power_of_two() {
        return Err(LinalgError::TargetNotPowerOfTwo { target });
    }
    if target < dim {
        return Err(LinalgError::TargetTooSmall { target, dim });
    }
    Ok(())
}

/// Moore-Penrose inverse via the singular value decomposition.
///
/// Singular values below `max(rows, cols) * eps * σ_max` are treated as zero.
pub fn pseudo_inverse<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(T::zero(), |a, s| a.max(*s));
    if sigma_max == T::zero() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let tol = T::lit(m.nrows().max(m.ncols()) as f64) * T::default_epsilon() * sigma_max;
    svd.pseudo_inverse(tol).expect("both singular vector sets were computed")
}

/// Numerical rank from the singular values.
pub fn rank<T: Scalar>(m: &DMatrix<T>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let sigma_max = sv.iter().fold(T::zero(), |a, s| a.max(*s));
    let tol = T::lit(m.nrows().max(m.ncols()) as f64) * T::default_epsilon() * sigma_max;
    sv.iter().filter(|s| **s > tol).count()
}

/// `S^n` by repeated squaring; `S^0 = I`.
pub fn matrix_power<T: Scalar>(s: &DMatrix<T>, mut n: u32) -> DMatrix<T> {
    let mut result = DMatrix::identity(s.nrows(), s.ncols());
    let mut base = s.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Block-diagonal `kron(I_blocks, block)`.
pub fn block_diagonal<T: Scalar>(block: &DMatrix<T>, blocks: usize) -> DMatrix<T> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * blocks, c * blocks);
    for b in 0..blocks {
        out.view_mut((b * r, b * c), (r, c)).copy_from(block);
    }
    out
}

pub fn to_dvector<T: Scalar>(v: &[T]) -> DVector<T> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        let diff = (a - b).abs().max();
        assert!(diff <= tol, "max deviation {diff:e} > {tol:e}");
    }

    #[test]
    fn pinv_identity_and_rank_deficient_diagonal() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_close(&pseudo_inverse(&i), &i, 1e-15);
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
        assert_close(&pseudo_inverse(&d), &expected, 1e-15);
        assert_close(&pseudo_inverse(&DMatrix::<f64>::zeros(2, 3)), &DMatrix::zeros(3, 2), 0.0);
    }

    #[test]
    fn penrose_identities_random_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m = random(4, 8, &mut rng);
            let p = pseudo_inverse(&m);
            assert_eq!(p.shape(), (8, 4));
            assert_close(&(&m * &p * &m), &m, 1e-9);
            assert_close(&(&p * &m * &p), &p, 1e-9);
            assert_close(&(&m * &p).transpose(), &(&m * &p), 1e-9);
            assert_close(&(&p * &m).transpose(), &(&p * &m), 1e-9);
        }
    }

    #[test]
    fn penrose_identities_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(5, 2, &mut rng) * random(2, 6, &mut rng);
        assert_eq!(rank(&m), 2);
        let p = pseudo_inverse(&m);
        assert_close(&(&m * &p * &m), &m, 1e-9);
        assert_close(&(&p * &m * &p), &p, 1e-9);
    }

    #[test]
    fn padding() {
        assert_eq!(pad_vector(&[1.0, 2.0, 3.0], 4).unwrap(), vec![1.0, 2.0, 3.0, 0.0]);
        assert_eq!(pad_vector(&[1.0; 5], 4).unwrap_err(), LinalgError::TargetTooSmall { target: 4, dim: 5 });
        assert_eq!(pad_vector(&[1.0; 2], 3).unwrap_err(), LinalgError::TargetNotPowerOfTwo { target: 3 });
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = pad_matrix(&s, 4).unwrap();
        assert_eq!(p.shape(), (4, 4));
        assert_eq!(p[(1, 1)], 4.0);
        assert_eq!(p.row(2).sum() + p.row(3).sum() + p.column(2).sum() + p.column(3).sum(), 0.0);
    }

    #[test]
    fn power_and_kron() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(matrix_power(&s, 5), DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, 1.0]));
        assert_eq!(matrix_power(&s, 0), DMatrix::identity(2, 2));
        let b = block_diagonal(&s, 3);
        assert_eq!(b.shape(), (6, 6));
        assert_eq!(b[(2, 3)], 1.0);
        assert_eq!(b[(1, 2)], 0.0);
    }
}
