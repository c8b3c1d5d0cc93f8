//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Matrices here are small (channel counts, at most a few hundred), where
//! Jacobi is simple and foolproof. Computation runs in f64 regardless of
//! the caller's element type.

use alloc::vec;
use alloc::vec::Vec;

// f64 math (sqrt, ln, ...) comes from the Float trait under no_std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Element;
use crate::error::{config_err, numerical_err, usage_err, Result};

/// Relative off-diagonal Frobenius norm at which iteration stops.
const OFF_THRESHOLD: f64 = 1e-10;
/// Bound on cyclic sweeps before reporting non-convergence.
const MAX_SWEEPS: usize = 100;
/// Input symmetry tolerance, relative to the largest entry.
const SYMMETRY_TOL: f64 = 1e-5;

/// Result of [`sym_eig`]: eigenvalues in descending order, eigenvectors as
/// the columns of a row-major C x C matrix.
#[derive(Debug, Clone)]
pub struct SymEig<T = f32> {
    pub values: Vec<T>,
    pub vectors: Vec<T>,
}

/// Decompose a symmetric matrix `a` (row-major, `n` x `n`) so that
/// `a = V diag(values) V^T` with orthonormal V.
pub fn sym_eig<T: Element>(a: &[T], n: usize) -> Result<SymEig<T>> {
    if a.len() != n * n {
        return Err(config_err!(
            "matrix data length {} does not match size {n}",
            a.len()
        ));
    }
    if n == 0 {
        return Err(config_err!("matrix size must be positive"));
    }

    let mut m: Vec<f64> = a.iter().map(|&v| v.as_f64()).collect();
    let scale = m.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (m[i * n + j] - m[j * n + i]).abs() > SYMMETRY_TOL * scale {
                return Err(usage_err!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[i * n + j],
                    m[j * n + i]
                ));
            }
        }
    }

    // w holds V^T: row k is eigenvector k, kept in rows for contiguous updates.
    let mut w = vec![0.0f64; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
    }

    let fro: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let target = OFF_THRESHOLD * fro;
    // Rotations with nothing to gain are skipped; far below the convergence
    // target they cannot affect the result.
    let skip = target / (n as f64 * 10.0);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if (2.0 * off).sqrt() <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- J^T A J, J the (p, q) rotation.
                for i in 0..n {
                    let (t1, t2) = (m[i * n + p], m[i * n + q]);
                    m[i * n + p] = c * t1 - s * t2;
                    m[i * n + q] = s * t1 + c * t2;
                }
                for j in 0..n {
                    let (t1, t2) = (m[p * n + j], m[q * n + j]);
                    m[p * n + j] = c * t1 - s * t2;
                    m[q * n + j] = s * t1 + c * t2;
                }
                // V <- V J, tracked transposed: rows p, q of w.
                for j in 0..n {
                    let (t1, t2) = (w[p * n + j], w[q * n + j]);
                    w[p * n + j] = c * t1 - s * t2;
                    w[q * n + j] = s * t1 + c * t2;
                }
            }
        }
    }
    if !converged {
        // One more check after the final sweep.
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if (2.0 * off).sqrt() > target {
            return Err(numerical_err!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (off-norm {:e})",
                (2.0 * off).sqrt()
            ));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .expect("eigenvalues are finite")
    });

    let mut values = Vec::with_capacity(n);
    let mut vectors = vec![T::zero(); n * n];
    for (col, &k) in order.iter().enumerate() {
        values.push(T::from_f64(m[k * n + k]));
        for i in 0..n {
            vectors[i * n + col] = T::from_f64(w[k * n + i]);
        }
    }
    Ok(SymEig { values, vectors })
}
