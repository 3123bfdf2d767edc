//! Simulated packed (SIMD) homomorphic encryption.
//!
//! A functional stand-in for an approximate-arithmetic scheme such as CKKS:
//! a ciphertext carries a vector of slots, a multiplicative level and a noise
//! estimate. There is no lattice math and no confidentiality; what is modeled
//! is the homomorphic interface (slotwise add/sub/neg/mul, plaintext operands,
//! rotations), leveled depth accounting and optional Gaussian noise.
//!
//! Encryption and evaluation only need a [`PublicContext`]. Decryption needs
//! the [`KeyContext`], which wraps the public one. A party holding only the
//! public context can still produce `⟦m + a⟧` from `⟦m⟧`: the scheme is
//! malleable, which is what the covert attacks in this crate exploit.

use std::marker::PhantomData;
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{inf_norm, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeError {
    #[error("slot count {0} is not a power of two")]
    SlotCountNotPowerOfTwo(usize),
    #[error("max_depth must be at least 1")]
    ZeroDepth,
    #[error("noise_std must be finite and nonnegative, got {0}")]
    InvalidNoise(f64),
    #[error("expected {expected} slots, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("ciphertext key {found:#018x} does not match context key {expected:#018x}")]
    KeyMismatch { expected: u64, found: u64 },
    #[error("multiplicative depth exhausted: level {required} exceeds budget {max_depth}")]
    DepthExhausted { required: usize, max_depth: usize },
    #[error("malformed ciphertext encoding: {0}")]
    Malformed(String),
}

pub type Result<T, E = HeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Number of plaintext slots per ciphertext. Power of two.
    pub slot_count: usize,
    /// Standard deviation of the noise added by every operation; `0` is exact.
    #[serde(default)]
    pub noise_std: f64,
    /// Multiplicative level budget (no bootstrapping).
    pub max_depth: usize,
    #[serde(default)]
    pub seed: u64,
}

impl BackendConfig {
    pub fn exact(slot_count: usize, max_depth: usize, seed: u64) -> Self {
        Self { slot_count, noise_std: 0.0, max_depth, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.slot_count.is_power_of_two() {
            return Err(HeError::SlotCountNotPowerOfTwo(self.slot_count));
        }
        if self.max_depth < 1 {
            return Err(HeError::ZeroDepth);
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(HeError::InvalidNoise(self.noise_std));
        }
        Ok(())
    }

    /// Simulated key tag. Derived from the seed so that separate processes
    /// configured alike operate under the same key.
    pub fn key_id(&self) -> u64 {
        splitmix64(self.seed ^ 0x6b65_795f_6964_5f5f)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counts of homomorphic operations executed under a context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mul: u64,
    pub add: u64,
    pub rotate: u64,
    pub encrypt: u64,
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: Self) -> Self {
        OpCounts {
            mul: self.mul - rhs.mul,
            add: self.add - rhs.add,
            rotate: self.rotate - rhs.rotate,
            encrypt: self.encrypt - rhs.encrypt,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    mul: AtomicU64,
    add: AtomicU64,
    rotate: AtomicU64,
    encrypt: AtomicU64,
}

#[derive(Debug)]
struct Inner {
    config: BackendConfig,
    key_id: u64,
    noise: Option<Normal<f64>>,
    rng: Mutex<ChaCha20Rng>,
    counters: Counters,
}

/// Packed ciphertext. Slot values are only reachable through
/// [`KeyContext::decrypt`].
#[derive(Debug, Clone, PartialEq)]
pub struct PackedCiphertext<T> {
    slots: Vec<T>,
    level: usize,
    noise_bound: T,
    key_id: u64,
}

impl<T: Scalar> PackedCiphertext<T> {
    pub fn level(&self) -> usize {
        self.level
    }

    /// 1σ estimate of the accumulated noise per slot.
    pub fn noise_bound(&self) -> T {
        self.noise_bound
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Size of [`Self::to_bytes`] for a given slot count.
    pub fn encoded_len(slot_count: usize) -> usize {
        4 + 4 + 8 + 8 * slot_count + 8
    }

    /// Little-endian layout: u32 slot count, u32 level, u64 key id,
    /// `slot_count` f64 slot values, f64 noise bound.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.slots.len()));
        out.extend_from_slice(&(self.slots.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.level as u32).to_le_bytes());
        out.extend_from_slice(&self.key_id.to_le_bytes());
        for s in &self.slots {
            out.extend_from_slice(&s.as_f64().to_le_bytes());
        }
        out.extend_from_slice(&self.noise_bound.as_f64().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(HeError::Malformed(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let slot_count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let level = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let key_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if !slot_count.is_power_of_two() {
            return Err(HeError::Malformed(format!("slot count {slot_count} is not a power of two")));
        }
        let expected = Self::encoded_len(slot_count);
        if bytes.len() != expected {
            return Err(HeError::Malformed(format!(
                "expected {expected} bytes for {slot_count} slots, got {}",
                bytes.len()
            )));
        }
        let read = |i: usize| T::lit(f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap()));
        let slots = (0..slot_count).map(|j| read(16 + 8 * j)).collect();
        let noise_bound = read(16 + 8 * slot_count);
        if noise_bound.as_f64().is_nan() || noise_bound < T::zero() {
            return Err(HeError::Malformed("negative or NaN noise bound".into()));
        }
        Ok(Self { slots, level, noise_bound, key_id })
    }
}

/// Zero-pads `v` to `period` entries and repeats it across `slot_count`
/// slots. With this packing a rotation over all slots acts as a rotation
/// modulo `period` on every copy.
pub fn tile<T: Scalar>(v: &[T], period: usize, slot_count: usize) -> Vec<T> {
    assert!(v.len() <= period, "vector of length {} exceeds period {period}", v.len());
    assert!(period > 0 && slot_count.is_multiple_of(period), "period {period} must divide {slot_count}");
    let mut block = v.to_vec();
    block.resize(period, T::zero());
    block.iter().copied().cycle().take(slot_count).collect()
}

/// Encryption and homomorphic evaluation capability (the "public key").
#[derive(Debug)]
pub struct PublicContext<T> {
    inner: Arc<Inner>,
    _scalar: PhantomData<fn() -> T>,
}

impl<T> Clone for PublicContext<T> {
    fn clone(&self) -> Self {
        Self { inner: Arc::clone(&self.inner), _scalar: PhantomData }
    }
}

impl<T: Scalar> PublicContext<T> {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let noise = if config.noise_std > 0.0 {
            Some(Normal::new(0.0, config.noise_std).map_err(|_| HeError::InvalidNoise(config.noise_std))?)
        } else {
            None
        };
        let inner = Inner {
            config,
            key_id: config.key_id(),
            noise,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(config.seed)),
            counters: Counters::default(),
        };
        Ok(Self { inner: Arc::new(inner), _scalar: PhantomData })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.inner.config
    }

    pub fn slot_count(&self) -> usize {
        self.inner.config.slot_count
    }

    pub fn max_depth(&self) -> usize {
        self.inner.config.max_depth
    }

    pub fn key_id(&self) -> u64 {
        self.inner.key_id
    }

    pub fn op_counts(&self) -> OpCounts {
        let c = &self.inner.counters;
        OpCounts {
            mul: c.mul.load(Ordering::Relaxed),
            add: c.add.load(Ordering::Relaxed),
            rotate: c.rotate.load(Ordering::Relaxed),
            encrypt: c.encrypt.load(Ordering::Relaxed),
        }
    }

    fn sigma(&self) -> T {
        T::lit(self.inner.config.noise_std)
    }

    /// Adds one fresh noise realization to every slot.
    fn perturb(&self, slots: &mut [T]) {
        if let Some(normal) = &self.inner.noise {
            let mut rng = self.inner.rng.lock().expect("noise rng poisoned");
            for s in slots.iter_mut() {
                *s += T::lit(normal.sample(&mut *rng));
            }
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let expected = self.slot_count();
        if len != expected {
            return Err(HeError::LengthMismatch { expected, actual: len });
        }
        Ok(())
    }

    pub fn check_key(&self, c: &PackedCiphertext<T>) -> Result<()> {
        if c.key_id != self.inner.key_id {
            return Err(HeError::KeyMismatch { expected: self.inner.key_id, found: c.key_id });
        }
        self.check_len(c.slots.len())
    }

    fn next_level(&self, a: usize, b: usize) -> Result<usize> {
        let required = a.max(b) + 1;
        let max_depth = self.max_depth();
        if required > max_depth {
            return Err(HeError::DepthExhausted { required, max_depth });
        }
        Ok(required)
    }

    pub fn encrypt(&self, m: &[T]) -> Result<PackedCiphertext<T>> {
        self.check_len(m.len())?;
        self.inner.counters.encrypt.fetch_add(1, Ordering::Relaxed);
        let mut slots = m.to_vec();
        self.perturb(&mut slots);
        Ok(PackedCiphertext { slots, level: 0, noise_bound: self.sigma(), key_id: self.inner.key_id })
    }

    /// Encrypts a short vector padded to `period` and tiled across the slots.
    pub fn encrypt_vector(&self, v: &[T], period: usize) -> Result<PackedCiphertext<T>> {
        self.encrypt(&tile(v, period, self.slot_count()))
    }

    pub fn encrypt_zero(&self) -> Result<PackedCiphertext<T>> {
        self.encrypt(&vec![T::zero(); self.slot_count()])
    }

    fn combine(
        &self,
        a: &PackedCiphertext<T>,
        b: &PackedCiphertext<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<PackedCiphertext<T>> {
        self.check_key(a)?;
        self.check_key(b)?;
        self.inner.counters.add.fetch_add(1, Ordering::Relaxed);
        let mut slots: Vec<T> = a.slots.iter().zip(&b.slots).map(|(x, y)| f(*x, *y)).collect();
        self.perturb(&mut slots);
        let s = self.sigma();
        let noise_bound = (a.noise_bound * a.noise_bound + b.noise_bound * b.noise_bound + s * s).sqrt();
        Ok(PackedCiphertext { slots, level: a.level.max(b.level), noise_bound, key_id: a.key_id })
    }

    fn combine_plain(&self, a: &PackedCiphertext<T>, p: &[T], f: impl Fn(T, T) -> T) -> Result<PackedCiphertext<T>> {
        self.check_key(a)?;
        self.check_len(p.len())?;
        self.inner.counters.add.fetch_add(1, Ordering::Relaxed);
        let mut slots: Vec<T> = a.slots.iter().zip(p).map(|(x, y)| f(*x, *y)).collect();
        self.perturb(&mut slots);
        let s = self.sigma();
        let noise_bound = (a.noise_bound * a.noise_bound + s * s).sqrt();
        Ok(PackedCiphertext { slots, level: a.level, noise_bound, key_id: a.key_id })
    }

    pub fn add(&self, a: &PackedCiphertext<T>, b: &PackedCiphertext<T>) -> Result<PackedCiphertext<T>> {
        self.combine(a, b, |x, y| x + y)
    }

    pub fn add_plain(&self, a: &PackedCiphertext<T>, p: &[T]) -> Result<PackedCiphertext<T>> {
        self.combine_plain(a, p, |x, y| x + y)
    }

    pub fn sub(&self, a: &PackedCiphertext<T>, b: &PackedCiphertext<T>) -> Result<PackedCiphertext<T>> {
        self.combine(a, b, |x, y| x - y)
    }

    pub fn sub_plain(&self, a: &PackedCiphertext<T>, p: &[T]) -> Result<PackedCiphertext<T>> {
        self.combine_plain(a, p, |x, y| x - y)
    }

    /// Exact: negation adds no noise.
    pub fn neg(&self, a: &PackedCiphertext<T>) -> Result<PackedCiphertext<T>> {
        self.check_key(a)?;
        Ok(PackedCiphertext {
            slots: a.slots.iter().map(|x| -*x).collect(),
            level: a.level,
            noise_bound: a.noise_bound,
            key_id: a.key_id,
        })
    }

    pub fn mul(&self, a: &PackedCiphertext<T>, b: &PackedCiphertext<T>) -> Result<PackedCiphertext<T>> {
        self.check_key(a)?;
        self.check_key(b)?;
        let level = self.next_level(a.level, b.level)?;
        self.inner.counters.mul.fetch_add(1, Ordering::Relaxed);
        let mut slots: Vec<T> = a.slots.iter().zip(&b.slots).map(|(x, y)| *x * *y).collect();
        let (ma, mb) = (inf_norm(&a.slots), inf_norm(&b.slots));
        self.perturb(&mut slots);
        let s = self.sigma();
        let (ea, eb) = (mb * a.noise_bound, ma * b.noise_bound);
        let noise_bound = (ea * ea + eb * eb + s * s).sqrt();
        Ok(PackedCiphertext { slots, level, noise_bound, key_id: a.key_id })
    }

    pub fn mul_plain(&self, a: &PackedCiphertext<T>, p: &[T]) -> Result<PackedCiphertext<T>> {
        self.check_key(a)?;
        self.check_len(p.len())?;
        let level = self.next_level(a.level, 0)?;
        self.inner.counters.mul.fetch_add(1, Ordering::Relaxed);
        let mut slots: Vec<T> = a.slots.iter().zip(p).map(|(x, y)| *x * *y).collect();
        self.perturb(&mut slots);
        let s = self.sigma();
        let e = inf_norm(p) * a.noise_bound;
        let noise_bound = (e * e + s * s).sqrt();
        Ok(PackedCiphertext { slots, level, noise_bound, key_id: a.key_id })
    }

    /// `rot_i`: slot `j` of the result holds slot `(j + i) mod slot_count`.
    pub fn rotate(&self, a: &PackedCiphertext<T>, i: isize) -> Result<PackedCiphertext<T>> {
        self.check_key(a)?;
        let n = a.slots.len();
        let shift = i.rem_euclid(n as isize) as usize;
        if shift == 0 {
            return Ok(a.clone());
        }
        self.inner.counters.rotate.fetch_add(1, Ordering::Relaxed);
        let mut slots = a.slots.clone();
        slots.rotate_left(shift);
        self.perturb(&mut slots);
        let s = self.sigma();
        let noise_bound = (a.noise_bound * a.noise_bound + s * s).sqrt();
        Ok(PackedCiphertext { slots, level: a.level, noise_bound, key_id: a.key_id })
    }
}

/// Full key material: public evaluation plus decryption.
#[derive(Debug, Clone)]
pub struct KeyContext<T> {
    public: PublicContext<T>,
}

impl<T: Scalar> KeyContext<T> {
    pub fn new(config: BackendConfig) -> Result<Self> {
        Ok(Self { public: PublicContext::new(config)? })
    }

    /// The capability handed to parties that must not decrypt.
    pub fn public(&self) -> PublicContext<T> {
        self.public.clone()
    }

    pub fn decrypt(&self, c: &PackedCiphertext<T>) -> Result<Vec<T>> {
        self.public.check_key(c)?;
        Ok(c.slots.clone())
    }

    /// Leading `len` slots of the decryption.
    pub fn decrypt_vector(&self, c: &PackedCiphertext<T>, len: usize) -> Result<Vec<T>> {
        let mut v = self.decrypt(c)?;
        if len > v.len() {
            return Err(HeError::LengthMismatch { expected: v.len(), actual: len });
        }
        v.truncate(len);
        Ok(v)
    }
}

impl<T> Deref for KeyContext<T> {
    type Target = PublicContext<T>;

    fn deref(&self) -> &PublicContext<T> {
        &self.public
    }
}
