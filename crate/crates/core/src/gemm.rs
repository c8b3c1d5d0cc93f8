//! Small dense matrix kernels used by convolution, matmul, and the feature
//! statistics. Plain safe Rust, shaped so LLVM autovectorizes the inner
//! loops; loop orders are fixed, which keeps results bit-deterministic.

use crate::elem::Element;

const LANES: usize = 16;

/// y += alpha * x
#[inline]
pub fn axpy<T: Element>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with lane-parallel accumulators.
#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); LANES];
    let mut ac = a.chunks_exact(LANES);
    let mut bc = b.chunks_exact(LANES);
    for (ca, cb) in (&mut ac).zip(&mut bc) {
        for l in 0..LANES {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut acc = T::zero();
    for l in 0..LANES {
        acc += lanes[l];
    }
    for (&x, &y) in ac.remainder().iter().zip(bc.remainder()) {
        acc += x * y;
    }
    acc
}

/// out[m x n] += a[m x k] * b[k x n]
pub fn gemm_nn<T: Element>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        // Four b-rows per pass: fewer passes over the output row.
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        while p < k {
            axpy(orow, arow[p], &b[p * n..(p + 1) * n]);
            p += 1;
        }
    }
}

/// out[k x n] += transpose(a[m x k]) * b[m x n]
pub fn gemm_tn<T: Element>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let b0 = &b[i * n..(i + 1) * n];
        let b1 = &b[(i + 1) * n..(i + 2) * n];
        let b2 = &b[(i + 2) * n..(i + 3) * n];
        let b3 = &b[(i + 3) * n..(i + 4) * n];
        for kk in 0..k {
            let (a0, a1, a2, a3) = (
                a[i * k + kk],
                a[(i + 1) * k + kk],
                a[(i + 2) * k + kk],
                a[(i + 3) * k + kk],
            );
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
        }
        i += 4;
    }
    while i < m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            axpy(&mut out[kk * n..(kk + 1) * n], a[i * k + kk], brow);
        }
        i += 1;
    }
}

/// out[m x p] += a[m x n] * transpose(b[p x n])  (rows dotted with rows)
pub fn gemm_nt<T: Element>(out: &mut [T], a: &[T], b: &[T], m: usize, n: usize, p: usize) {
    debug_assert_eq!(out.len(), m * p);
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), p * n);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..p {
            out[i * p + j] += dot(arow, &b[j * n..(j + 1) * n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn naive_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let mut rng = crate::rng::Rng::seed_from_u64(11);
        let (m, k, n) = (5, 7, 9);
        let a: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let want = naive_nn(&a, &b, m, k, n);
        let mut got = vec![0.0; m * n];
        gemm_nn(&mut got, &a, &b, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        // a^T * b via gemm_tn equals naive on transposed a.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let c: Vec<f64> = (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let want = naive_nn(&at, &c, k, m, n);
        let mut got = vec![0.0; k * n];
        gemm_tn(&mut got, &a, &c, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        // a * b^T via gemm_nt (b has rows of length k, like a).
        let d: Vec<f64> = (0..2 * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut dt = vec![0.0; k * 2];
        for i in 0..2 {
            for j in 0..k {
                dt[j * 2 + i] = d[i * k + j];
            }
        }
        let want = naive_nn(&a, &dt, m, k, 2);
        let mut got = vec![0.0; m * 2];
        gemm_nt(&mut got, &a, &d, m, k, 2);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_matches_reference_on_odd_lengths() {
        let a: Vec<f32> = (0..37).map(|i| i as f32 * 0.25 - 3.0).collect();
        let b: Vec<f32> = (0..37).map(|i| 1.5 - i as f32 * 0.125).collect();
        let want: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - want).abs() < 1e-3);
    }
}
