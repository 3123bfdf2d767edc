use nalgebra::{DMatrix, DVector};

use crate::linalg::block_diagonal;
use crate::scalar::Scalar;

/// Affine map `y ↦ K y + v` rewritten as the linear map `K̄ = [K I]` on the
/// augmented input `w̄ = [y; v]`, zero-padded to a power-of-two block.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedAffine<T: Scalar> {
    k_bar: DMatrix<T>,
    offset: DVector<T>,
    in_dim: usize,
    out_dim: usize,
    lambda: usize,
}

/// Lifts `y ↦ K y + v` for `λ` blocks. The block dimension is the next power
/// of two at or above `p + m`.
pub fn lift_affine<T: Scalar>(k: &DMatrix<T>, v: &DVector<T>, lambda: usize) -> LiftedAffine<T> {
    let (m, p) = k.shape();
    assert_eq!(v.len(), m, "offset length must match the rows of K");
    assert!(lambda >= 1, "at least one block");
    let d = (p + m).next_power_of_two();
    let mut k_bar = DMatrix::zeros(d, d);
    k_bar.view_mut((0, 0), (m, p)).copy_from(k);
    for i in 0..m {
        k_bar[(i, p + i)] = T::one();
    }
    LiftedAffine { k_bar, offset: v.clone(), in_dim: p, out_dim: m, lambda }
}

impl<T: Scalar> LiftedAffine<T> {
    /// Padded block dimension `d`.
    pub fn block_dim(&self) -> usize {
        self.k_bar.nrows()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// Length of the original input `y`.
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Length of the original output.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn k_bar(&self) -> &DMatrix<T> {
        &self.k_bar
    }

    pub fn offset(&self) -> &DVector<T> {
        &self.offset
    }

    /// `kron(I_λ, K̄)`, of size `λd x λd`.
    pub fn tilde_k(&self) -> DMatrix<T> {
        block_diagonal(&self.k_bar, self.lambda)
    }

    /// Wrapped bandwidth of [`Self::tilde_k`].
    pub fn band(&self) -> usize {
        self.block_dim() - 1
    }

    /// `[y; v; 0]` as a `d`-vector.
    pub fn augment(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.in_dim, "input length");
        let mut w = vec![T::zero(); self.block_dim()];
        w[..self.in_dim].copy_from_slice(y);
        w[self.in_dim..self.in_dim + self.out_dim].copy_from_slice(self.offset.as_slice());
        w
    }

    /// `K̄ w` for one block.
    pub fn apply_block(&self, w: &[T]) -> Vec<T> {
        (&self.k_bar * DVector::from_column_slice(w)).as_slice().to_vec()
    }
}
