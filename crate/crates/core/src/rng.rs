//! Seeded random number generation.
//!
//! A thin wrapper over ChaCha8 that fixes the sampling recipes used across
//! the engine (normal init, crop offsets, shuffles), so a seed pins every
//! stochastic choice bit-exactly.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

// f64 math (sqrt, ln, ...) comes from the Float trait under no_std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Element;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream, e.g. one per subnetwork.
    pub fn split(&mut self, tag: u64) -> Rng {
        let mut seed = [0u8; 32];
        self.inner.fill_bytes(&mut seed);
        for (i, b) in tag.to_le_bytes().iter().enumerate() {
            seed[i] ^= b;
        }
        Rng {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is irrelevant at the ranges used here (image sizes,
        // dataset lengths), and keeping it branch-free keeps it portable.
        (self.inner.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal<T: Element>(&mut self) -> T {
        let u1 = self.uniform_f64().max(1e-300);
        let u2 = self.uniform_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * core::f64::consts::PI * u2;
        T::from_f64(r * theta.cos())
    }

    /// Fill a slice with N(0, sigma^2) samples.
    pub fn fill_normal<T: Element>(&mut self, out: &mut [T], sigma: f64) {
        for v in out.iter_mut() {
            *v = T::from_f64(self.normal::<f64>() * sigma);
        }
    }

    /// Uniform in [lo, hi).
    pub fn uniform<T: Element>(&mut self, lo: f64, hi: f64) -> T {
        T::from_f64(lo + (hi - lo) * self.uniform_f64())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// A shuffled permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
