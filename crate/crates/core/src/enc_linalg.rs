//! Encrypted matrix arithmetic with the diagonal method.
//!
//! A `d x d` matrix `S` is stored as its wrapping diagonals
//! `S_i[j] = S[j][(i + j) mod d]`, each packed (tiled with period `d`) into
//! one ciphertext. Then
//!
//! ```text
//! ⟦S v⟧      = ⊕_i ⟦S_i⟧ ⊙ rot_i(⟦v⟧)
//! ⟦(S T)_k⟧  = ⊕_i ⟦S_i⟧ ⊙ rot_i(⟦T_{k-i}⟧)
//! ```
//!
//! Banded matrices (wrapped bandwidth `β`) store only diagonals
//! `-β..=β` and skip the rest, so a matvec costs `2β + 1` multiplications
//! instead of `d`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::packed_he::{tile, HeError, PackedCiphertext, PublicContext};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncLinalgError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("matrix dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("matrix dimension {dim} exceeds slot count {slots}")]
    ExceedsSlots { dim: usize, slots: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("bandwidth {band} is too wide for dimension {dim}")]
    BandTooWide { band: usize, dim: usize },
    #[error("entry ({row}, {col}) is nonzero but lies outside the declared band {band}")]
    OutsideBand { row: usize, col: usize, band: usize },
}

pub type Result<T, E = EncLinalgError> = std::result::Result<T, E>;

/// `output[i][j] = S[j][(i + j) mod d]`.
pub fn extract_wrapping_diagonals<T: Scalar>(s: &DMatrix<T>) -> Result<Vec<Vec<T>>> {
    let (rows, cols) = s.shape();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols }.into());
    }
    let d = rows;
    Ok((0..d).map(|i| (0..d).map(|j| s[(j, (i + j) % d)]).collect()).collect())
}

/// Wrapped diagonal index of entry `(row, col)`, as a signed offset in
/// `(-d/2, d/2]`.
fn wrapped_offset(row: usize, col: usize, d: usize) -> isize {
    let i = (col + d - row) % d;
    if i > d / 2 {
        i as isize - d as isize
    } else {
        i as isize
    }
}

/// Matrix encrypted as a tuple of wrapping-diagonal ciphertexts.
#[derive(Debug, Clone)]
pub struct DiagMatrixCipher<T> {
    dim: usize,
    band: Option<usize>,
    /// Indexed by wrapped diagonal `0..dim`; `None` for diagonals skipped by the band.
    diagonals: Vec<Option<PackedCiphertext<T>>>,
}

impl<T: Scalar> DiagMatrixCipher<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn band(&self) -> Option<usize> {
        self.band
    }

    /// Diagonal `i`, with `i` taken modulo the dimension (`S_{-i} = S_{d-i}`).
    pub fn diagonal(&self, i: isize) -> Option<&PackedCiphertext<T>> {
        self.diagonals[i.rem_euclid(self.dim as isize) as usize].as_ref()
    }

    pub fn stored_count(&self) -> usize {
        self.diagonals.iter().filter(|d| d.is_some()).count()
    }

    /// Stored diagonals as `(signed offset, ciphertext)`; offsets run over
    /// `-β..=β` for banded matrices and `0..d` otherwise.
    pub fn stored(&self) -> Vec<(isize, &PackedCiphertext<T>)> {
        match self.band {
            Some(b) => {
                (-(b as isize)..=b as isize).map(|i| (i, self.diagonal(i).expect("banded diagonal present"))).collect()
            }
            None => (0..self.dim as isize).filter_map(|i| self.diagonal(i).map(|c| (i, c))).collect(),
        }
    }

    /// Highest level among the stored diagonals.
    pub fn level(&self) -> usize {
        self.diagonals.iter().flatten().map(|c| c.level()).max().unwrap_or(0)
    }

    /// Reassembles a matrix from raw parts, e.g. after deserialization.
    pub fn from_parts(dim: usize, band: Option<usize>, diagonals: Vec<Option<PackedCiphertext<T>>>) -> Result<Self> {
        if !dim.is_power_of_two() {
            return Err(EncLinalgError::NotPowerOfTwo(dim));
        }
        if diagonals.len() != dim {
            return Err(EncLinalgError::DimensionMismatch { left: dim, right: diagonals.len() });
        }
        if let Some(b) = band {
            check_band(b, dim)?;
            for (i, d) in diagonals.iter().enumerate() {
                let off = wrapped_offset(0, i, dim).unsigned_abs();
                if (off <= b) != d.is_some() {
                    return Err(EncLinalgError::OutsideBand { row: 0, col: i, band: b });
                }
            }
        }
        Ok(Self { dim, band, diagonals })
    }

    pub fn into_parts(self) -> (usize, Option<usize>, Vec<Option<PackedCiphertext<T>>>) {
        (self.dim, self.band, self.diagonals)
    }
}

fn check_band(band: usize, dim: usize) -> Result<()> {
    if 2 * band + 1 > dim {
        return Err(EncLinalgError::BandTooWide { band, dim });
    }
    Ok(())
}

fn check_dim<T: Scalar>(ctx: &PublicContext<T>, dim: usize) -> Result<()> {
    if !dim.is_power_of_two() {
        return Err(EncLinalgError::NotPowerOfTwo(dim));
    }
    if dim > ctx.slot_count() {
        return Err(EncLinalgError::ExceedsSlots { dim, slots: ctx.slot_count() });
    }
    Ok(())
}

/// Encrypts `s` diagonal by diagonal. With `band = Some(β)` only diagonals
/// `-β..=β` are stored and every entry outside them must be exactly zero.
pub fn encrypt_matrix<T: Scalar>(
    ctx: &PublicContext<T>,
    s: &DMatrix<T>,
    band: Option<usize>,
) -> Result<DiagMatrixCipher<T>> {
    let diags = extract_wrapping_diagonals(s)?;
    let d = s.nrows();
    check_dim(ctx, d)?;
    if let Some(b) = band {
        check_band(b, d)?;
        for row in 0..d {
            for col in 0..d {
                if wrapped_offset(row, col, d).unsigned_abs() > b && s[(row, col)] != T::zero() {
                    return Err(EncLinalgError::OutsideBand { row, col, band: b });
                }
            }
        }
    }
    let slots = ctx.slot_count();
    let diagonals = diags
        .iter()
        .enumerate()
        .map(|(i, diag)| {
            let keep = band.is_none_or(|b| wrapped_offset(0, i, d).unsigned_abs() <= b);
            keep.then(|| ctx.encrypt(&tile(diag, d, slots))).transpose()
        })
        .collect::<Result<Vec<_>, HeError>>()?;
    Ok(DiagMatrixCipher { dim: d, band, diagonals })
}

/// `⟦S v⟧`. Consumes one level; a banded matrix costs `2β + 1` multiplications.
pub fn enc_matvec<T: Scalar>(
    ctx: &PublicContext<T>,
    s: &DiagMatrixCipher<T>,
    v: &PackedCiphertext<T>,
) -> Result<PackedCiphertext<T>> {
    check_dim(ctx, s.dim)?;
    if v.slot_count() != ctx.slot_count() {
        return Err(EncLinalgError::DimensionMismatch { left: ctx.slot_count(), right: v.slot_count() });
    }
    let mut acc: Option<PackedCiphertext<T>> = None;
    for (i, diag) in s.stored() {
        let term = ctx.mul(diag, &ctx.rotate(v, i)?)?;
        acc = Some(match acc {
            None => term,
            Some(a) => ctx.add(&a, &term)?,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(ctx.encrypt_zero()?),
    }
}

/// `⟦S T⟧`, all `d` result diagonals. Missing diagonals of a banded `T` are
/// skipped rather than materialized as encrypted zeros.
pub fn enc_matmat<T: Scalar>(
    ctx: &PublicContext<T>,
    s: &DiagMatrixCipher<T>,
    t: &DiagMatrixCipher<T>,
) -> Result<DiagMatrixCipher<T>> {
    if s.dim != t.dim {
        return Err(EncLinalgError::DimensionMismatch { left: s.dim, right: t.dim });
    }
    check_dim(ctx, s.dim)?;
    let d = s.dim as isize;
    let mut diagonals = Vec::with_capacity(s.dim);
    for k in 0..d {
        let mut acc: Option<PackedCiphertext<T>> = None;
        for (i, s_i) in s.stored() {
            let Some(t_ki) = t.diagonal(k - i) else { continue };
            let term = ctx.mul(s_i, &ctx.rotate(t_ki, i)?)?;
            acc = Some(match acc {
                None => term,
                Some(a) => ctx.add(&a, &term)?,
            });
        }
        diagonals.push(Some(match acc {
            Some(a) => a,
            None => ctx.encrypt_zero()?,
        }));
    }
    Ok(DiagMatrixCipher { dim: s.dim, band: None, diagonals })
}

/// `⟦S^n⟧` by square-and-multiply.
pub fn enc_matrix_power<T: Scalar>(
    ctx: &PublicContext<T>,
    s: &DiagMatrixCipher<T>,
    mut n: u32,
) -> Result<DiagMatrixCipher<T>> {
    assert!(n >= 1, "matrix power exponent must be positive");
    let mut result: Option<DiagMatrixCipher<T>> = None;
    let mut base = s.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => enc_matmat(ctx, &r, &base)?,
            });
        }
        n >>= 1;
        if n > 0 {
            base = enc_matmat(ctx, &base, &base)?;
        }
    }
    Ok(result.expect("n >= 1"))
}

/// `⟦Sᵀ⟧` using `(Sᵀ)_i = rot_i(S_{-i})`; rotations only, no level consumed.
pub fn enc_transpose<T: Scalar>(ctx: &PublicContext<T>, s: &DiagMatrixCipher<T>) -> Result<DiagMatrixCipher<T>> {
    let d = s.dim as isize;
    let diagonals =
        (0..d).map(|i| s.diagonal(-i).map(|c| ctx.rotate(c, i)).transpose()).collect::<Result<Vec<_>, HeError>>()?;
    Ok(DiagMatrixCipher { dim: s.dim, band: s.band, diagonals })
}

fn zip_diagonals<T: Scalar>(
    s: &DiagMatrixCipher<T>,
    t: &DiagMatrixCipher<T>,
    op: impl Fn(&PackedCiphertext<T>, &PackedCiphertext<T>) -> Result<PackedCiphertext<T>, HeError>,
    lone_right: impl Fn(&PackedCiphertext<T>) -> Result<PackedCiphertext<T>, HeError>,
) -> Result<DiagMatrixCipher<T>> {
    if s.dim != t.dim {
        return Err(EncLinalgError::DimensionMismatch { left: s.dim, right: t.dim });
    }
    let diagonals = s
        .diagonals
        .iter()
        .zip(&t.diagonals)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => op(a, b).map(Some),
            (Some(a), None) => Ok(Some(a.clone())),
            (None, Some(b)) => lone_right(b).map(Some),
            (None, None) => Ok(None),
        })
        .collect::<Result<Vec<_>, HeError>>()?;
    let band = match (s.band, t.band) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    Ok(DiagMatrixCipher { dim: s.dim, band, diagonals })
}

/// `⟦S + T⟧`.
pub fn enc_matadd<T: Scalar>(
    ctx: &PublicContext<T>,
    s: &DiagMatrixCipher<T>,
    t: &DiagMatrixCipher<T>,
) -> Result<DiagMatrixCipher<T>> {
    zip_diagonals(s, t, |a, b| ctx.add(a, b), |b| Ok(b.clone()))
}

/// `⟦S - T⟧`.
pub fn enc_matsub<T: Scalar>(
    ctx: &PublicContext<T>,
    s: &DiagMatrixCipher<T>,
    t: &DiagMatrixCipher<T>,
) -> Result<DiagMatrixCipher<T>> {
    zip_diagonals(s, t, |a, b| ctx.sub(a, b), |b| ctx.neg(b))
}

/// `⟦c S⟧` for a public scalar `c`; costs one level.
pub fn enc_matscale<T: Scalar>(ctx: &PublicContext<T>, s: &DiagMatrixCipher<T>, c: T) -> Result<DiagMatrixCipher<T>> {
    let scale = vec![c; ctx.slot_count()];
    let diagonals = s
        .diagonals
        .iter()
        .map(|d| d.as_ref().map(|c| ctx.mul_plain(c, &scale)).transpose())
        .collect::<Result<Vec<_>, HeError>>()?;
    Ok(DiagMatrixCipher { dim: s.dim, band: s.band, diagonals })
}

/// Homomorphic Newton-Schulz iteration for the Moore-Penrose inverse of a
/// square (padded) matrix: `X₀ = α Mᵀ`, `X ← 2X − X M X`.
///
/// Converges for `0 < α < 2 / σ_max(M)²`. Costs `1 + 2·iterations` levels.
pub fn enc_newton_schulz_pinv<T: Scalar>(
    ctx: &PublicContext<T>,
    m: &DiagMatrixCipher<T>,
    alpha: T,
    iterations: usize,
) -> Result<DiagMatrixCipher<T>> {
    let mut x = enc_matscale(ctx, &enc_transpose(ctx, m)?, alpha)?;
    for _ in 0..iterations {
        let mx = enc_matmat(ctx, m, &x)?;
        let xmx = enc_matmat(ctx, &x, &mx)?;
        let two_x = enc_matadd(ctx, &x, &x)?;
        x = enc_matsub(ctx, &two_x, &xmx)?;
    }
    Ok(x)
}

/// Decrypts every diagonal and reassembles the plaintext matrix.
pub fn decrypt_matrix<T: Scalar>(key: &crate::packed_he::KeyContext<T>, s: &DiagMatrixCipher<T>) -> Result<DMatrix<T>> {
    let d = s.dim;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        if let Some(c) = s.diagonal(i as isize) {
            let diag = key.decrypt_vector(c, d)?;
            for (j, v) in diag.into_iter().enumerate() {
                out[(j, (i + j) % d)] = v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matrix_power, pad_matrix, pad_vector, pseudo_inverse};
    use crate::packed_he::{BackendConfig, KeyContext};
    use crate::scalar::max_abs_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(slots: usize, depth: usize) -> KeyContext<f64> {
        KeyContext::new(BackendConfig::exact(slots, depth, 3)).unwrap()
    }

    fn random(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |_, _| rng.random_range(-5.0..5.0))
    }

    // Independent oracle: plain row-by-column product.
    fn naive_matvec(s: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (0..s.nrows()).map(|r| (0..s.ncols()).map(|c| s[(r, c)] * v[c]).sum()).collect()
    }

    #[test]
    fn diagonals_of_small_matrices() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(extract_wrapping_diagonals(&s).unwrap(), vec![vec![1.0, 4.0], vec![2.0, 3.0]]);
        let id = extract_wrapping_diagonals(&DMatrix::<f64>::identity(4, 4)).unwrap();
        assert_eq!(id[0], vec![1.0; 4]);
        assert!(id[1..].iter().all(|d| d.iter().all(|x| *x == 0.0)));
        assert!(extract_wrapping_diagonals(&DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn diagonals_reassemble_and_wrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random(8, &mut rng);
        let diags = extract_wrapping_diagonals(&s).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(s[(j, (i + j) % 8)], diags[i][j]);
            }
        }
        // s_{d-1, d+2} = s_{d-1, 2}: entry (7, 2) sits on diagonal (2 - 7) mod 8 = 3
        assert_eq!(diags[3][7], s[(7, 2)]);
        let key = ctx(8, 2);
        let enc = encrypt_matrix(&key.public(), &s, None).unwrap();
        for i in 1..8isize {
            assert_eq!(
                key.decrypt(enc.diagonal(-i).unwrap()).unwrap(),
                key.decrypt(enc.diagonal(8 - i).unwrap()).unwrap()
            );
        }
    }

    #[test]
    fn encrypt_matrix_bands() {
        let key = ctx(8, 2);
        let pk = key.public();
        let id = encrypt_matrix(&pk, &DMatrix::<f64>::identity(4, 4), Some(0)).unwrap();
        assert_eq!(id.stored_count(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense = random(4, &mut rng);
        let enc = encrypt_matrix(&pk, &dense, None).unwrap();
        assert_eq!(enc.stored_count(), 4);
        let diags = extract_wrapping_diagonals(&dense).unwrap();
        for (i, diag) in diags.iter().enumerate() {
            assert_eq!(&key.decrypt_vector(enc.diagonal(i as isize).unwrap(), 4).unwrap(), diag);
        }
        assert!(matches!(encrypt_matrix(&pk, &dense, Some(1)), Err(EncLinalgError::OutsideBand { .. })));
        assert!(matches!(encrypt_matrix(&pk, &dense, Some(2)), Err(EncLinalgError::BandTooWide { .. })));
        assert!(matches!(
            encrypt_matrix(&pk, &DMatrix::<f64>::identity(16, 16), None),
            Err(EncLinalgError::ExceedsSlots { .. })
        ));
    }

    #[test]
    fn matvec_hand_trace() {
        let key = ctx(2, 2);
        let pk = key.public();
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let enc = encrypt_matrix(&pk, &s, None).unwrap();
        let v = pk.encrypt(&[5.0, 6.0]).unwrap();
        let out = enc_matvec(&pk, &enc, &v).unwrap();
        assert_eq!(key.decrypt(&out).unwrap(), vec![17.0, 39.0]);
        assert_eq!(out.level(), 1);
        let id = encrypt_matrix(&pk, &DMatrix::identity(2, 2), None).unwrap();
        assert_eq!(key.decrypt(&enc_matvec(&pk, &id, &v).unwrap()).unwrap(), vec![5.0, 6.0]);
    }

    #[test]
    fn matvec_with_smaller_dim_than_slots() {
        let key = ctx(64, 2);
        let pk = key.public();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random(8, &mut rng);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = enc_matvec(&pk, &encrypt_matrix(&pk, &s, None).unwrap(), &pk.encrypt_vector(&v, 8).unwrap()).unwrap();
        // the result stays tiled with period 8
        let dec = key.decrypt(&out).unwrap();
        let expected = naive_matvec(&s, &v);
        for j in 0..64 {
            assert!((dec[j] - expected[j % 8]).abs() < 1e-9);
        }
    }

    #[test]
    fn padded_matvec_matches_unpadded() {
        let key = ctx(16, 2);
        let pk = key.public();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let s = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-5.0..5.0));
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let sp = pad_matrix(&s, 4).unwrap();
            let vp = pad_vector(&v, 4).unwrap();
            let out =
                enc_matvec(&pk, &encrypt_matrix(&pk, &sp, None).unwrap(), &pk.encrypt_vector(&vp, 4).unwrap()).unwrap();
            assert!(max_abs_diff(&key.decrypt_vector(&out, 3).unwrap(), &naive_matvec(&s, &v)) < 1e-9);
        }
    }

    #[test]
    fn banded_block_diagonal_matches_dense() {
        let key = ctx(16, 2);
        let pk = key.public();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            // four 4x4 blocks on a 16x16 diagonal: wrapped bandwidth 3
            let mut s = DMatrix::zeros(16, 16);
            for b in 0..4 {
                s.view_mut((4 * b, 4 * b), (4, 4)).copy_from(&random(4, &mut rng));
            }
            let v: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
            let ct = pk.encrypt_vector(&v, 16).unwrap();
            let dense = enc_matvec(&pk, &encrypt_matrix(&pk, &s, None).unwrap(), &ct).unwrap();
            let banded_m = encrypt_matrix(&pk, &s, Some(3)).unwrap();
            let before = pk.op_counts();
            let banded = enc_matvec(&pk, &banded_m, &ct).unwrap();
            assert_eq!((pk.op_counts() - before).mul, 7);
            let a = key.decrypt(&dense).unwrap();
            let b = key.decrypt(&banded).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-9);
        }
    }

    #[test]
    fn matmat_identity_and_random() {
        let key = ctx(4, 4);
        let pk = key.public();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random(4, &mut rng);
        let t = random(4, &mut rng);
        let es = encrypt_matrix(&pk, &s, None).unwrap();
        let et = encrypt_matrix(&pk, &t, None).unwrap();
        let ei = encrypt_matrix(&pk, &DMatrix::identity(4, 4), None).unwrap();
        let si = decrypt_matrix(&key, &enc_matmat(&pk, &es, &ei).unwrap()).unwrap();
        assert!((si - &s).abs().max() < 1e-12);
        let st = enc_matmat(&pk, &es, &et).unwrap();
        assert_eq!(st.level(), 1);
        assert!((decrypt_matrix(&key, &st).unwrap() - &s * &t).abs().max() < 1e-9);
        // (S T) v = S (T v)
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let cv = pk.encrypt(&v).unwrap();
        let left = enc_matvec(&pk, &st, &cv).unwrap();
        let right = enc_matvec(&pk, &es, &enc_matvec(&pk, &et, &cv).unwrap()).unwrap();
        assert!(max_abs_diff(&key.decrypt(&left).unwrap(), &key.decrypt(&right).unwrap()) < 1e-9);
        assert!(matches!(
            enc_matmat(&pk, &es, &encrypt_matrix(&pk, &DMatrix::identity(2, 2), None).unwrap()),
            Err(EncLinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_power_depth_and_value() {
        let key = ctx(8, 3);
        let pk = key.public();
        let id = encrypt_matrix(&pk, &DMatrix::<f64>::identity(8, 8), None).unwrap();
        assert!(
            (decrypt_matrix(&key, &enc_matrix_power(&pk, &id, 5).unwrap()).unwrap() - DMatrix::identity(8, 8))
                .abs()
                .max()
                < 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random(8, &mut rng) * 0.3;
        let es = encrypt_matrix(&pk, &s, None).unwrap();
        let one = enc_matrix_power(&pk, &es, 1).unwrap();
        assert_eq!(decrypt_matrix(&key, &one).unwrap(), decrypt_matrix(&key, &es).unwrap());
        let p4 = enc_matrix_power(&pk, &es, 4).unwrap();
        assert_eq!(p4.level(), 2);
        assert!((decrypt_matrix(&key, &p4).unwrap() - matrix_power(&s, 4)).abs().max() < 1e-9);
        // 2^4 needs four levels
        assert!(matches!(enc_matrix_power(&pk, &es, 16), Err(EncLinalgError::He(HeError::DepthExhausted { .. }))));
    }

    #[test]
    fn transpose_by_rotation() {
        let key = ctx(8, 2);
        let pk = key.public();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random(8, &mut rng);
        let t = enc_transpose(&pk, &encrypt_matrix(&pk, &s, None).unwrap()).unwrap();
        assert!((decrypt_matrix(&key, &t).unwrap() - s.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn newton_schulz_converges_to_pinv() {
        let key = ctx(8, 1 + 2 * 12);
        let pk = key.public();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // rank-4 wide block inside an 8x8 padding, reasonably conditioned
        let mut m = DMatrix::zeros(8, 8);
        m.view_mut((0, 0), (4, 8)).copy_from(&DMatrix::from_fn(4, 8, |r, c| {
            if r == c {
                2.0
            } else {
                rng.random_range(-0.3..0.3)
            }
        }));
        let sigma_max = m.clone().singular_values().max();
        let x = enc_newton_schulz_pinv(&pk, &encrypt_matrix(&pk, &m, None).unwrap(), 1.0 / (sigma_max * sigma_max), 12)
            .unwrap();
        let dec = decrypt_matrix(&key, &x).unwrap();
        assert!((dec - pseudo_inverse(&m)).abs().max() < 1e-8);
    }
}
