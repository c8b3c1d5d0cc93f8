//! Reference oracles for the engine's test suites.
//!
//! Everything here is written as plainly as possible — nested scalar loops
//! in f64 — and shares no code with the engine, so agreement between the
//! two is meaningful evidence. Used by unit, integration, and acceptance
//! tests across the workspace.
//!
//! The [`gradsuite`] module wires these reference routines to the engine's
//! operations for the finite-difference gradient suite.

pub mod gradsuite;

/// Pearson correlation of two equal-length samples; 0 when either side is
/// constant (zero centered norm).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        dot += da * db;
        na += da * da;
        nb += db * db;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Full correlation matrix by the two-nested-loop definition. `feature` is
/// C rows of length `l`; the diagonal is 1 for non-constant channels, else 0.
pub fn correlation_matrix(feature: &[f64], c: usize, l: usize) -> Vec<f64> {
    assert_eq!(feature.len(), c * l);
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let fi = &feature[i * l..(i + 1) * l];
            let fj = &feature[j * l..(j + 1) * l];
            out[i * c + j] = if i == j {
                let constant = fi.iter().all(|&v| v == fi[0]);
                if constant {
                    0.0
                } else {
                    1.0
                }
            } else {
                pearson(fi, fj)
            };
        }
    }
    out
}

/// Gram matrix by double-loop dot products, normalized by c * l.
pub fn gram_matrix(feature: &[f64], c: usize, l: usize) -> Vec<f64> {
    assert_eq!(feature.len(), c * l);
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for k in 0..l {
                acc += feature[i * l + k] * feature[j * l + k];
            }
            out[i * c + j] = acc / (c * l) as f64;
        }
    }
    out
}

/// Population covariance matrix by definition.
pub fn covariance_matrix(feature: &[f64], c: usize, l: usize) -> Vec<f64> {
    let mut means = vec![0.0; c];
    for i in 0..c {
        means[i] = feature[i * l..(i + 1) * l].iter().sum::<f64>() / l as f64;
    }
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = 0.0;
            for k in 0..l {
                acc += (feature[i * l + k] - means[i]) * (feature[j * l + k] - means[j]);
            }
            out[i * c + j] = acc / l as f64;
        }
    }
    out
}

/// Sum over ordered channel pairs i != j of g(r_ij), g = identity or abs.
pub fn uncorrelation_sum(feature: &[f64], c: usize, l: usize, absolute: bool) -> f64 {
    let r = correlation_matrix(feature, c, l);
    let mut acc = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                acc += if absolute { r[i * c + j].abs() } else { r[i * c + j] };
            }
        }
    }
    acc
}

/// Channels of non-zero centered norm, counted directly.
pub fn alive_channels(feature: &[f64], c: usize, l: usize) -> usize {
    (0..c)
        .filter(|&i| {
            let chan = &feature[i * l..(i + 1) * l];
            !chan.iter().all(|&v| v == chan[0])
        })
        .count()
}

/// Direct six-nested-loop convolution, NxCxHxW by OxIxKxK, f64.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_direct(
    x: &[f64],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * ho * wo];
    for ni in 0..n {
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * c_in + ci) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((co * c_in + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * c_out + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Mean squared difference, scalar loops.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc / a.len() as f64
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Worst relative error between a gradient and its reference, with an
/// absolute floor so near-zero entries compare sanely.
pub fn max_relative_error(got: &[f64], want: &[f64], floor: f64) -> f64 {
    assert_eq!(got.len(), want.len());
    let mut worst = 0.0f64;
    for (g, w) in got.iter().zip(want) {
        let denom = g.abs().max(w.abs()).max(floor);
        worst = worst.max((g - w).abs() / denom);
    }
    worst
}

/// Deterministic pseudo-random stream for oracle-side inputs (SplitMix64);
/// intentionally not the engine's generator.
#[derive(Clone)]
pub struct OracleRng(u64);

impl OracleRng {
    pub fn new(seed: u64) -> Self {
        OracleRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    pub fn fill_uniform(&mut self, out: &mut [f64], lo: f64, hi: f64) {
        for v in out {
            *v = self.uniform(lo, hi);
        }
    }
}
