//! Feature statistics: channel moments, covariance, inter-channel
//! correlation, Gram matrices, channel magnitudes, and the alive-channel
//! ratio used to gauge redundancy.
//!
//! A feature map is viewed as C channel vectors of length H*W. All moments
//! use the population (divide-by-N) convention.

use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Element;
use crate::error::{config_err, usage_err, Result};
use crate::gemm;
use crate::tensor::Tensor;

/// A C x H x W activation block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Element> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(config_err!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            ));
        }
        if data.len() != channels * height * width {
            return Err(config_err!(
                "feature data length {} does not match {channels}x{height}x{width}",
                data.len()
            ));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    /// View a CxHxW or 1xCxHxW tensor as a feature map.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let dims = t.dims();
        let (c, h, w) = match dims.len() {
            3 => (dims[0], dims[1], dims[2]),
            4 if dims[0] == 1 => (dims[1], dims[2], dims[3]),
            _ => {
                return Err(config_err!(
                    "expected CxHxW or 1xCxHxW tensor, got {dims:?}"
                ))
            }
        };
        FeatureMap::new(c, h, w, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("consistent by construction")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Channel vector i of length H*W.
    pub fn channel(&self, i: usize) -> &[T] {
        let l = self.spatial_len();
        &self.data[i * l..(i + 1) * l]
    }
}

/// C x C matrix of inter-channel correlation coefficients. Symmetric;
/// diagonal entries are 1 for live channels and 0 for constant ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix<T = f32> {
    size: usize,
    data: Vec<T>,
}

impl<T: Element> CorrelationMatrix<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }

    /// Number of live (non-constant) channels, read off the diagonal.
    pub fn alive_count(&self) -> usize {
        (0..self.size)
            .filter(|&i| self.entry(i, i) > T::from_f64(0.5))
            .count()
    }

    /// Mean absolute off-diagonal coefficient; the redundancy diagnostic.
    pub fn mean_abs_offdiag(&self) -> T {
        if self.size < 2 {
            return T::zero();
        }
        let mut acc = T::zero();
        for i in 0..self.size {
            for j in 0..self.size {
                if i != j {
                    acc += self.entry(i, j).abs();
                }
            }
        }
        acc / T::from_usize(self.size * (self.size - 1))
    }
}

/// Dense square matrix (Gram matrices, covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T = f32> {
    size: usize,
    data: Vec<T>,
}

pub type GramMatrix<T = f32> = SquareMatrix<T>;

impl<T: Element> SquareMatrix<T> {
    pub fn new(size: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != size * size {
            return Err(config_err!(
                "square matrix data length {} does not match size {size}",
                data.len()
            ));
        }
        Ok(SquareMatrix { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }
}

/// Per-channel mean, standard deviation, and magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T = f32> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub magnitude: Vec<T>,
}

/// A channel whose values are all identical carries no signal; its
/// correlation entries are defined as zero. Exact comparison is intended:
/// dead ReLU channels are exactly constant.
fn is_constant<T: Element>(chan: &[T]) -> bool {
    chan.iter().all(|&v| v == chan[0])
}

/// Centered channels with their centered norms; constant channels are
/// zeroed outright so roundoff in the mean cannot fabricate signal.
fn centered<T: Element>(f: &FeatureMap<T>) -> (Vec<T>, Vec<T>) {
    let (c, l) = (f.channels(), f.spatial_len());
    let inv_l = T::one() / T::from_usize(l);
    let mut cent = vec![T::zero(); c * l];
    let mut norms = vec![T::zero(); c];
    for i in 0..c {
        let chan = f.channel(i);
        if is_constant(chan) {
            continue;
        }
        let mut mean = T::zero();
        for &v in chan {
            mean += v;
        }
        mean *= inv_l;
        let dst = &mut cent[i * l..(i + 1) * l];
        let mut ss = T::zero();
        for (d, &v) in dst.iter_mut().zip(chan) {
            let x = v - mean;
            *d = x;
            ss += x * x;
        }
        norms[i] = ss.sqrt();
    }
    (cent, norms)
}

/// Inter-channel correlation coefficient matrix.
///
/// Entry (i, j) is the cosine of the centered channel vectors; entries
/// touching a constant channel are 0, including that channel's diagonal.
pub fn channel_correlation<T: Element>(f: &FeatureMap<T>) -> Result<CorrelationMatrix<T>> {
    let (c, l) = (f.channels(), f.spatial_len());
    if l < 2 {
        return Err(usage_err!(
            "channel correlation needs H*W >= 2, got {l}"
        ));
    }
    let (cent, norms) = centered(f);
    let mut dots = vec![T::zero(); c * c];
    gemm::gemm_nt(&mut dots, &cent, &cent, c, l, c);
    let mut out = vec![T::zero(); c * c];
    for i in 0..c {
        for j in i + 1..c {
            let v = if norms[i] > T::zero() && norms[j] > T::zero() {
                dots[i * c + j] / (norms[i] * norms[j])
            } else {
                T::zero()
            };
            out[i * c + j] = v;
            out[j * c + i] = v;
        }
        out[i * c + i] = if norms[i] > T::zero() { T::one() } else { T::zero() };
    }
    Ok(CorrelationMatrix { size: c, data: out })
}

/// Gram matrix G = F F^T / (C * H * W) of the flattened feature.
pub fn gram<T: Element>(f: &FeatureMap<T>) -> GramMatrix<T> {
    let (c, l) = (f.channels(), f.spatial_len());
    let mut out = vec![T::zero(); c * c];
    gemm::gemm_nt(&mut out, f.data(), f.data(), c, l, c);
    let scale = T::one() / T::from_usize(c * l);
    for v in out.iter_mut() {
        *v *= scale;
    }
    SquareMatrix { size: c, data: out }
}

/// Fraction of live channels across a content/style feature pair: the
/// normalized sum of correlation-matrix diagonals, in [0, 1].
pub fn normalized_diagonal_sum<T: Element>(
    fc: &FeatureMap<T>,
    fs: &FeatureMap<T>,
) -> Result<T> {
    if fc.channels() != fs.channels() {
        return Err(usage_err!(
            "channel count mismatch: {} vs {}",
            fc.channels(),
            fs.channels()
        ));
    }
    let c = fc.channels();
    let mut alive = 0usize;
    for i in 0..c {
        if !is_constant(fc.channel(i)) {
            alive += 1;
        }
        if !is_constant(fs.channel(i)) {
            alive += 1;
        }
    }
    Ok(T::from_usize(alive) / T::from_usize(2 * c))
}

/// Per-channel population mean and standard deviation, plus the channel
/// magnitude (Euclidean norm of the raw channel).
pub fn channel_mean_std<T: Element>(f: &FeatureMap<T>) -> ChannelStats<T> {
    let (c, l) = (f.channels(), f.spatial_len());
    let inv_l = T::one() / T::from_usize(l);
    let mut stats = ChannelStats {
        mean: Vec::with_capacity(c),
        std: Vec::with_capacity(c),
        magnitude: Vec::with_capacity(c),
    };
    for i in 0..c {
        let chan = f.channel(i);
        let mut sum = T::zero();
        let mut sumsq = T::zero();
        for &v in chan {
            sum += v;
            sumsq += v * v;
        }
        let mean = sum * inv_l;
        let var = (sumsq * inv_l - mean * mean).max(T::zero());
        stats.mean.push(mean);
        stats.std.push(var.sqrt());
        stats.magnitude.push(sumsq.sqrt());
    }
    stats
}

/// Population covariance matrix of the centered channel vectors.
pub fn covariance<T: Element>(f: &FeatureMap<T>) -> SquareMatrix<T> {
    let (c, l) = (f.channels(), f.spatial_len());
    let (cent, _) = centered(f);
    let mut out = vec![T::zero(); c * c];
    gemm::gemm_nt(&mut out, &cent, &cent, c, l, c);
    let inv_l = T::one() / T::from_usize(l);
    for v in out.iter_mut() {
        *v *= inv_l;
    }
    SquareMatrix { size: c, data: out }
}

/// Euclidean norm of each raw channel.
pub fn channel_magnitudes<T: Element>(f: &FeatureMap<T>) -> Vec<T> {
    (0..f.channels())
        .map(|i| {
            let chan = f.channel(i);
            let mut ss = T::zero();
            for &v in chan {
                ss += v * v;
            }
            ss.sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(c: usize, vals: &[f32]) -> FeatureMap<f32> {
        let l = vals.len() / c;
        FeatureMap::new(c, 1, l, vals.to_vec()).unwrap()
    }

    #[test]
    fn perfectly_linear_channels_correlate_fully() {
        let f = fm(2, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]);
        let r = channel_correlation(&f).unwrap();
        assert!((r.entry(0, 1) - 1.0).abs() < 1e-6);
        assert!((r.entry(0, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_zero_mean_channels_do_not_correlate() {
        let f = fm(2, &[1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        let r = channel_correlation(&f).unwrap();
        assert!(r.entry(0, 1).abs() < 1e-7);
    }

    #[test]
    fn constant_channels_get_zero_rows_and_diagonal() {
        let f = fm(2, &[0.7, 0.7, 0.7, 0.7, 1.0, 2.0, 3.0, 4.0]);
        let r = channel_correlation(&f).unwrap();
        assert_eq!(r.entry(0, 0), 0.0);
        assert_eq!(r.entry(0, 1), 0.0);
        assert_eq!(r.entry(1, 1), 1.0);
        assert_eq!(r.alive_count(), 1);
    }

    #[test]
    fn correlation_rejects_single_sample() {
        let f = FeatureMap::new(2, 1, 1, vec![1.0f32, 2.0]).unwrap();
        assert!(channel_correlation(&f).is_err());
    }

    #[test]
    fn gram_of_small_feature_matches_hand_value() {
        let f = fm(2, &[1.0, 1.0, 1.0, -1.0]);
        let g = gram(&f);
        assert_eq!(g.data(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn gram_of_zero_feature_is_zero() {
        let f = fm(2, &[0.0; 8]);
        let g = gram(&f);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_sum_counts_live_channels() {
        let live = fm(4, &(0..16).map(|i| (i as f32).sin()).collect::<Vec<_>>());
        let d: f32 = normalized_diagonal_sum(&live, &live).unwrap();
        assert_eq!(d, 1.0);

        let mut half = live.clone();
        half.data_mut()[0..8].fill(0.0); // channels 0 and 1 exactly zero
        let d: f32 = normalized_diagonal_sum(&half, &live).unwrap();
        assert!((d - 0.75).abs() < 1e-7);
    }

    #[test]
    fn diagonal_sum_requires_matching_channels() {
        let a = fm(2, &[0.0; 8]);
        let b = fm(4, &[0.0; 16]);
        assert!(normalized_diagonal_sum(&a, &b).is_err());
    }

    #[test]
    fn mean_and_std_use_population_convention() {
        let f = fm(1, &[0.0, 2.0]);
        let s = channel_mean_std(&f);
        assert!((s.mean[0] - 1.0).abs() < 1e-7);
        assert!((s.std[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn covariance_of_identical_rows_is_all_ones() {
        let f = fm(2, &[1.0, -1.0, 1.0, -1.0]);
        let c = covariance(&f);
        assert_eq!(c.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn magnitudes_are_euclidean_norms() {
        let f = fm(2, &[3.0, 4.0, 0.0, 0.0]);
        let m = channel_magnitudes(&f);
        assert!((m[0] - 5.0).abs() < 1e-6);
        assert_eq!(m[1], 0.0);
    }
}
