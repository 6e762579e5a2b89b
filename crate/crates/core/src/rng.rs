//! Seeded, splittable random streams.
//!
//! A [`RngStream`] is a ChaCha20 generator keyed by a master seed and a 64-bit
//! stream id. Child streams are derived from `(stream id, tags)` alone, never
//! from the parent's position, so a task's randomness does not depend on which
//! thread runs it or on what other tasks consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{FalError, Result};
use crate::linalg::Vector;
use crate::scalar::Real;

/// Purpose tags used when deriving child streams.
pub mod purpose {
    pub const INIT_OUTPUT: u64 = 0x01;
    pub const INIT_HIDDEN: u64 = 0x02;
    pub const INIT_BIAS: u64 = 0x03;
    pub const DATA: u64 = 0x10;
    pub const SHUFFLE: u64 = 0x11;
    pub const DATASET: u64 = 0x12;
    pub const ADVERSARY: u64 = 0x20;
    pub const RESTART: u64 = 0x21;
    pub const STUDY: u64 = 0x30;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream keyed by this stream's id and `tags`.
    pub fn derive(&self, tags: &[u64]) -> RngStream {
        let id = tags
            .iter()
            .fold(splitmix64(self.stream), |acc, t| splitmix64(acc ^ splitmix64(*t)));
        RngStream::new(self.seed, id)
    }

    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// `n` i.i.d. draws from `N(0, variance)`.
    pub fn gaussian<T: Real>(&mut self, n: usize, variance: f64) -> Result<Vector<T>> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(FalError::invalid(format!(
                "gaussian variance must be positive, got {variance}"
            )));
        }
        let sd = variance.sqrt();
        let data = (0..n).map(|_| T::lit(sd * self.standard_normal())).collect();
        Ok(Vector::from_vec_unchecked(data))
    }

    /// `n` i.i.d. draws from `Uniform[-half_width, +half_width]`.
    pub fn uniform_sym<T: Real>(&mut self, n: usize, half_width: f64) -> Result<Vector<T>> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(FalError::invalid(format!(
                "uniform half width must be positive, got {half_width}"
            )));
        }
        let data = (0..n)
            .map(|_| T::lit(half_width * (2.0 * self.uniform01() - 1.0)))
            .collect();
        Ok(Vector::from_vec_unchecked(data))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniform direction on the unit sphere of `R^n`.
    pub fn unit_direction(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Stream that generates the dataset of a run seeded with `seed`.
pub fn dataset_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0).derive(&[purpose::DATASET])
}

/// Free-function form of [`RngStream::gaussian`].
pub fn sample_gaussian<T: Real>(rng: &mut RngStream, n: usize, variance: f64) -> Result<Vector<T>> {
    rng.gaussian(n, variance)
}

/// Free-function form of [`RngStream::uniform_sym`].
pub fn sample_uniform_sym<T: Real>(
    rng: &mut RngStream,
    n: usize,
    half_width: f64,
) -> Result<Vector<T>> {
    rng.uniform_sym(n, half_width)
}
