//! Seeded random source.
//!
//! The generator is PCG32 (XSH-RR, 64-bit state, selectable stream). A root
//! seed is expanded with splitmix64 into the initial state of each named
//! stream, so data, latent sampling and initialization draw from independent
//! sequences that depend only on `(seed, stream, index)`. Gaussian variates
//! use the Box–Muller transform on two 53-bit uniforms; this algorithm choice
//! is part of the reproducibility contract.

use rand_core::Rng as _;
use rand_pcg::Pcg32;

use crate::numerics::{GraphError, Tensor};
use crate::scalar::Scalar;

/// Purpose of a derived random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Train = 3,
    Fisher = 4,
    Eval = 5,
    Proxy = 6,
    Probe = 7,
    Sample = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random number generator. Never shared between threads of
/// work; derive a separate stream instead.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Pcg32,
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, Stream::Sample, 0)
    }

    /// Independent stream for `(seed, purpose, index)`.
    pub fn derive(seed: u64, stream: Stream, index: u64) -> Self {
        let state = splitmix64(seed ^ splitmix64((stream as u64) << 32 ^ index));
        let seq = splitmix64(state ^ stream as u64);
        Self {
            inner: Pcg32::new(state, seq),
            cached_normal: None,
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = self.inner.next_u32() as u64;
        let lo = self.inner.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection, `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal variate (Box–Muller, both outputs used in order).
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform01(); // (0, 1]
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }
}

/// Tensor of i.i.d. standard normal entries.
pub fn sample_gaussian<S: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.normal())).collect();
    Tensor::new(shape.to_vec(), data).expect("positive sampling shape")
}

pub fn sample_uniform01(rng: &mut Rng) -> f64 {
    rng.uniform01()
}

/// Uniform category in `lo..=hi`. A single-value range consumes no randomness.
pub fn sample_category(rng: &mut Rng, lo: usize, hi: usize) -> Result<usize, GraphError> {
    if lo > hi {
        return Err(GraphError::EmptyRange { lo, hi });
    }
    if lo == hi {
        return Ok(lo);
    }
    Ok(lo + rng.below(hi - lo + 1))
}
