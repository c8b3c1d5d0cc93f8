//! Feature distribution alignment.
//!
//! [`adain`] matches per-channel mean and standard deviation and ignores
//! cross-channel structure; [`whiten_color`] is the covariance-aware
//! baseline it replaces. [`blend`] interpolates between the content feature
//! and its aligned version for style-strength control.
//!
//! [`adain_on_tape`] is the differentiable twin of [`adain`] used inside
//! training graphs; both compute the same alignment.

use alloc::vec;
use alloc::vec::Vec;

// f64 math (sqrt, ln, ...) comes from the Float trait under no_std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::eig::sym_eig;
use crate::elem::Element;
use crate::error::{usage_err, Result};
use crate::gemm;
use crate::stats::{channel_mean_std, covariance, FeatureMap};
use crate::tape::{Tape, Var};
use crate::tensor::Nchw;

pub const ADAIN_EPS: f64 = 1e-5;
pub const WCT_EIG_FLOOR: f64 = 1e-8;

/// Which feature alignment the transformer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentKind {
    AdaIn,
    Wct,
}

impl AlignmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AlignmentKind::AdaIn => "adain",
            AlignmentKind::Wct => "wct",
        }
    }
}

fn check_channels<T: Element>(xc: &FeatureMap<T>, xs: &FeatureMap<T>) -> Result<()> {
    if xc.channels() != xs.channels() {
        return Err(usage_err!(
            "channel count mismatch: content {} vs style {}",
            xc.channels(),
            xs.channels()
        ));
    }
    Ok(())
}

/// Adaptive instance normalization: per channel i,
/// `out_i = sigma_s_i * (xc_i - mu_c_i) / (sigma_c_i + eps) + mu_s_i`.
pub fn adain<T: Element>(
    xc: &FeatureMap<T>,
    xs: &FeatureMap<T>,
    eps: T,
) -> Result<FeatureMap<T>> {
    check_channels(xc, xs)?;
    let sc = channel_mean_std(xc);
    let ss = channel_mean_std(xs);
    let l = xc.spatial_len();
    let mut out = Vec::with_capacity(xc.data().len());
    for i in 0..xc.channels() {
        let k = ss.std[i] / (sc.std[i] + eps);
        let mu_c = sc.mean[i];
        let mu_s = ss.mean[i];
        out.extend(xc.channel(i).iter().map(|&v| k * (v - mu_c) + mu_s));
    }
    FeatureMap::new(xc.channels(), xc.height(), xc.width(), out).map(|f| {
        debug_assert_eq!(f.spatial_len(), l);
        f
    })
}

/// Style-strength interpolation `(1 - alpha) * xc + alpha * t`.
pub fn blend<T: Element>(
    xc: &FeatureMap<T>,
    t: &FeatureMap<T>,
    alpha: T,
) -> Result<FeatureMap<T>> {
    if alpha < T::zero() || alpha > T::one() {
        return Err(usage_err!(
            "alpha must be in [0, 1], got {}",
            alpha.as_f64()
        ));
    }
    if xc.channels() != t.channels()
        || xc.height() != t.height()
        || xc.width() != t.width()
    {
        return Err(usage_err!("blend operands must have identical shapes"));
    }
    let one_minus = T::one() - alpha;
    let data = xc
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| one_minus * a + alpha * b)
        .collect();
    FeatureMap::new(xc.channels(), xc.height(), xc.width(), data)
}

/// Whitening-coloring transform: center the content feature, rotate its
/// covariance to identity, re-color with the style covariance, add the
/// style mean. Eigenvalues at or below `eig_floor` are projected out, so
/// rank-deficient inputs degrade gracefully instead of producing
/// non-finite values.
pub fn whiten_color<T: Element>(
    xc: &FeatureMap<T>,
    xs: &FeatureMap<T>,
    eig_floor: f64,
) -> Result<FeatureMap<T>> {
    check_channels(xc, xs)?;
    if xc.spatial_len() < 2 || xs.spatial_len() < 2 {
        return Err(usage_err!("whiten_color needs H*W >= 2 on both features"));
    }
    let c = xc.channels();

    let cov_c = covariance(xc);
    let cov_s = covariance(xs);
    let eig_c = sym_eig::<T>(cov_c.data(), c)?;
    let eig_s = sym_eig::<T>(cov_s.data(), c)?;

    // Whitener W = Ec diag(lc^-1/2) Ec^T restricted to lc > floor,
    // colorer S = Es diag(ls^1/2) Es^T, combined A = S W in f64.
    let whiten = scaled_outer(&eig_c, c, |l| {
        if l > eig_floor {
            1.0 / l.sqrt()
        } else {
            0.0
        }
    });
    let color = scaled_outer(&eig_s, c, |l| l.max(0.0).sqrt());
    let mut a64 = vec![0.0f64; c * c];
    gemm::gemm_nn(&mut a64, &color, &whiten, c, c, c);
    let a: Vec<T> = a64.iter().map(|&v| T::from_f64(v)).collect();

    // Center content, apply A, add style mean.
    let mc = channel_mean_std(xc).mean;
    let ms = channel_mean_std(xs).mean;
    let l = xc.spatial_len();
    let mut cent = Vec::with_capacity(c * l);
    for i in 0..c {
        let mu = mc[i];
        cent.extend(xc.channel(i).iter().map(|&v| v - mu));
    }
    let mut out = vec![T::zero(); c * l];
    gemm::gemm_nn(&mut out, &a, &cent, c, c, l);
    for i in 0..c {
        let mu = ms[i];
        for v in &mut out[i * l..(i + 1) * l] {
            *v += mu;
        }
    }
    FeatureMap::new(c, xc.height(), xc.width(), out)
}

/// E diag(f(lambda)) E^T in f64.
fn scaled_outer<T: Element>(
    eig: &crate::eig::SymEig<T>,
    c: usize,
    f: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0f64; c * c];
    for k in 0..c {
        let s = f(eig.values[k].as_f64());
        if s == 0.0 {
            continue;
        }
        for i in 0..c {
            let eik = eig.vectors[i * c + k].as_f64() * s;
            if eik == 0.0 {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += eik * eig.vectors[j * c + k].as_f64();
            }
        }
    }
    out
}

/// Differentiable AdaIN for training graphs. `xc`, `xs` are NxCxHxW vars
/// with matching N and C.
pub fn adain_on_tape<T: Element>(
    tape: &mut Tape<T>,
    xc: Var,
    xs: Var,
    eps: T,
) -> Result<Var> {
    let sc = Nchw::of(tape.value(xc).dims())?;
    let ss = Nchw::of(tape.value(xs).dims())?;
    if sc.n != ss.n || sc.c != ss.c {
        return Err(usage_err!(
            "adain: batch/channel mismatch {:?} vs {:?}",
            tape.value(xc).dims(),
            tape.value(xs).dims()
        ));
    }
    let mu_c = tape.channel_mean(xc)?;
    let var_c = tape.channel_var(xc)?;
    let sd_c = tape.sqrt(var_c);
    let mu_s = tape.channel_mean(xs)?;
    let var_s = tape.channel_var(xs)?;
    let sd_s = tape.sqrt(var_s);

    let den = tape.add_scalar(sd_c, eps);
    let inv = tape.recip(den);
    let k = tape.mul(sd_s, inv)?;

    let centered = tape.bc_sub(xc, mu_c)?;
    let scaled = tape.bc_mul(centered, k)?;
    tape.bc_add(scaled, mu_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::stats;

    fn fm(c: usize, h: usize, w: usize, vals: Vec<f32>) -> FeatureMap<f32> {
        FeatureMap::new(c, h, w, vals).unwrap()
    }

    fn random_fm(c: usize, h: usize, w: usize, rng: &mut Rng) -> FeatureMap<f32> {
        let data = (0..c * h * w).map(|_| rng.uniform(-2.0, 2.0)).collect();
        fm(c, h, w, data)
    }

    #[test]
    fn adain_maps_known_channel_statistics() {
        // xc = [0, 2]: mu 1, sigma 1. xs = [5, 9]: mu 7, sigma 2.
        let xc = fm(1, 1, 2, vec![0.0, 2.0]);
        let xs = fm(1, 1, 2, vec![5.0, 9.0]);
        let out = adain(&xc, &xs, 1e-5).unwrap();
        assert!((out.data()[0] - 5.0).abs() < 1e-3);
        assert!((out.data()[1] - 9.0).abs() < 1e-3);
    }

    #[test]
    fn adain_self_alignment_is_near_identity() {
        let mut rng = Rng::seed_from_u64(9);
        let x = random_fm(4, 5, 5, &mut rng);
        let out = adain(&x, &x, 1e-5).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn adain_output_moments_match_style() {
        let mut rng = Rng::seed_from_u64(10);
        let xc = random_fm(6, 8, 8, &mut rng);
        let xs = random_fm(6, 4, 16, &mut rng);
        let out = adain(&xc, &xs, 1e-5).unwrap();
        let so = stats::channel_mean_std(&out);
        let ss = stats::channel_mean_std(&xs);
        for i in 0..6 {
            assert!((so.mean[i] - ss.mean[i]).abs() < 1e-4);
            assert!((so.std[i] - ss.std[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn blend_endpoints_are_exact() {
        let mut rng = Rng::seed_from_u64(11);
        let xc = random_fm(3, 4, 4, &mut rng);
        let t = random_fm(3, 4, 4, &mut rng);
        assert_eq!(blend(&xc, &t, 0.0).unwrap().data(), xc.data());
        assert_eq!(blend(&xc, &t, 1.0).unwrap().data(), t.data());
        let mid = blend(&fm(1, 1, 1, vec![0.0]), &fm(1, 1, 1, vec![4.0]), 0.5).unwrap();
        assert_eq!(mid.data(), &[2.0]);
    }

    #[test]
    fn blend_rejects_out_of_range_alpha() {
        let x = fm(1, 1, 1, vec![0.0]);
        assert!(blend(&x, &x, 1.5).is_err());
        assert!(blend(&x, &x, -0.1).is_err());
    }

    #[test]
    fn wct_self_alignment_recovers_input() {
        let mut rng = Rng::seed_from_u64(12);
        let x = random_fm(3, 4, 4, &mut rng);
        let out = whiten_color(&x, &x, WCT_EIG_FLOOR).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn wct_output_covariance_matches_style() {
        let mut rng = Rng::seed_from_u64(13);
        let xc = random_fm(3, 4, 4, &mut rng);
        let xs = random_fm(3, 4, 4, &mut rng);
        let out = whiten_color(&xc, &xs, WCT_EIG_FLOOR).unwrap();
        let co = stats::covariance(&out);
        let cs = stats::covariance(&xs);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (a, b) in co.data().iter().zip(cs.data()) {
            num += ((a - b) as f64).powi(2);
            den += (*b as f64).powi(2);
        }
        assert!(num.sqrt() < 1e-3 * den.sqrt(), "{} vs {}", num.sqrt(), den.sqrt());
    }

    #[test]
    fn wct_survives_rank_deficient_content() {
        // Two identical channels: covariance rank 1.
        let base: Vec<f32> = (0..9).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut data = base.clone();
        data.extend(&base);
        data.extend((0..9).map(|i| (i as f32 * 0.11).cos()));
        let xc = fm(3, 3, 3, data);
        let mut rng = Rng::seed_from_u64(14);
        let xs = random_fm(3, 3, 3, &mut rng);
        let out = whiten_color(&xc, &xs, WCT_EIG_FLOOR).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn taped_adain_matches_pure_adain() {
        let mut rng = Rng::seed_from_u64(15);
        let xc = random_fm(5, 6, 6, &mut rng);
        let xs = random_fm(5, 6, 6, &mut rng);
        let pure = adain(&xc, &xs, 1e-5).unwrap();

        let mut tape = Tape::<f32>::new();
        let vc = tape.leaf(xc.to_tensor());
        let vs = tape.leaf(xs.to_tensor());
        let out = adain_on_tape(&mut tape, vc, vs, 1e-5).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(pure.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
