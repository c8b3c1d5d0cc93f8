//! Redundant-channel analysis and elimination.
//!
//! Decorrelation training leaves many bottleneck channels with near-zero
//! magnitude. [`select_keep_fraction`] picks the largest-magnitude channels
//! covering a fraction of total magnitude (the keep-80% rule by default),
//! [`zero_channels`] applies elimination at the alignment boundary, and
//! [`prune_sweep`] traces style/content loss as elimination grows.
//! [`export_pruned`] performs the structural counterpart: it drops the
//! eliminated slices from the encoder's output layer and the decoder's
//! input layer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


// f64 math (sqrt, ln, ...) comes from the Float trait under no_std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Element;
use crate::error::{usage_err, Result};
use crate::loss;
use crate::net::{encode, NetKind, Network};
use crate::pipeline::{aligned_feature, decode_feature, StylizeOpts};
use crate::stats::{channel_magnitudes, FeatureMap};
use crate::tensor::Tensor;

/// Keep the smallest set of largest-magnitude channels whose magnitudes sum
/// to at least `fraction` of the total. Ties break toward lower indices.
/// Returns indices in ascending order.
pub fn select_keep_fraction<T: Element>(magnitudes: &[T], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(usage_err!("keep fraction must be in (0, 1], got {fraction}"));
    }
    if magnitudes.iter().any(|&m| m < T::zero()) {
        return Err(usage_err!("magnitudes must be nonnegative"));
    }
    let total: f64 = magnitudes.iter().map(|m| m.as_f64()).sum();
    if total <= 0.0 {
        return Err(usage_err!("all channel magnitudes are zero"));
    }
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&i, &j| {
        magnitudes[j]
            .partial_cmp(&magnitudes[i])
            .expect("magnitudes are finite")
            .then(i.cmp(&j))
    });
    let threshold = fraction * total;
    // Tiny slack so accumulated rounding cannot demand one extra channel.
    let slack = total * 1e-12;
    let mut keep = Vec::new();
    let mut acc = 0.0f64;
    for &i in &order {
        if magnitudes[i].as_f64() == 0.0 {
            break;
        }
        keep.push(i);
        acc += magnitudes[i].as_f64();
        if acc + slack >= threshold {
            break;
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Zero the listed channels; the rest are untouched.
pub fn zero_channels<T: Element>(
    f: &FeatureMap<T>,
    eliminate: &[usize],
) -> Result<FeatureMap<T>> {
    let c = f.channels();
    if let Some(&bad) = eliminate.iter().find(|&&i| i >= c) {
        return Err(usage_err!("channel index {bad} out of range for {c} channels"));
    }
    let mut out = f.clone();
    let l = f.spatial_len();
    for &i in eliminate {
        out.data_mut()[i * l..(i + 1) * l].fill(T::zero());
    }
    Ok(out)
}

/// One measurement of the elimination sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneRow {
    pub eliminated: usize,
    pub style_loss: f64,
    pub content_loss: f64,
}

/// Sweep results plus the keep-fraction working point.
#[derive(Debug, Clone)]
pub struct PruneReport<T = f32> {
    /// Losses at strictly increasing elimination counts (0 first).
    pub rows: Vec<PruneRow>,
    pub keep_fraction: f64,
    /// Losses with each image's own keep-fraction selection applied;
    /// `eliminated` holds the rounded mean count.
    pub keep_row: PruneRow,
    /// Aggregate keep set from magnitudes averaged over all pairs; input
    /// for structural export.
    pub keep_set: Vec<usize>,
    /// Decoded outputs of the first pair at each sweep point, for grids.
    pub decoded: Vec<(usize, Tensor<T>)>,
}

/// Stylize every content/style pair with increasing numbers of channels
/// zeroed at the alignment boundary (smallest magnitudes first, per-image
/// ordering) and record style/content losses through the frozen loss
/// network. `steps` counts sweep points spread over 0..=C.
pub fn prune_sweep<T: Element>(
    encoder: &Network<T>,
    decoder: &Network<T>,
    loss_net: &Network<T>,
    contents: &[Tensor<T>],
    styles: &[Tensor<T>],
    steps: usize,
    keep_fraction: f64,
    keep_decoded: bool,
) -> Result<PruneReport<T>> {
    if contents.is_empty() || styles.is_empty() {
        return Err(usage_err!("prune sweep needs at least one content and style image"));
    }
    if steps < 2 {
        return Err(usage_err!("prune sweep needs at least 2 steps"));
    }
    if loss_net.kind != NetKind::Encoder {
        return Err(usage_err!("loss network must be an encoder"));
    }
    let opts = StylizeOpts::default();
    let pairs: Vec<(usize, usize)> = (0..contents.len().max(styles.len()))
        .map(|i| (i % contents.len(), i % styles.len()))
        .collect();

    // Per pair: blended feature, magnitude order, loss-net targets.
    struct PairState<T> {
        feature: FeatureMap<T>,
        h: usize,
        w: usize,
        order: Vec<usize>, // ascending magnitude
        mags: Vec<T>,
        style_taps: Vec<(String, FeatureMap<T>)>,
        content_target: FeatureMap<T>,
    }
    let mut states = Vec::with_capacity(pairs.len());
    for &(ci, si) in &pairs {
        let aligned = aligned_feature(encoder, &contents[ci], &styles[si], &opts)?;
        let mags = channel_magnitudes(&aligned.feature);
        let mut order: Vec<usize> = (0..mags.len()).collect();
        order.sort_by(|&a, &b| {
            mags[a]
                .partial_cmp(&mags[b])
                .expect("finite magnitudes")
                .then(a.cmp(&b))
        });
        let ls = loss_net.config.downsample_factor();
        let (ps, _, _) = crate::resample::pad_reflect_to_multiple(&styles[si], ls)?;
        let (pc, _, _) = crate::resample::pad_reflect_to_multiple(&contents[ci], ls)?;
        let style_set = encode(loss_net, &ps)?;
        let content_set = encode(loss_net, &pc)?;
        states.push(PairState {
            feature: aligned.feature,
            h: aligned.content_h,
            w: aligned.content_w,
            order,
            mags,
            style_taps: style_set.taps,
            content_target: content_set.content().clone(),
        });
    }
    let c = states[0].feature.channels();

    let mut counts: Vec<usize> = (0..steps)
        .map(|i| (i * c).div_ceil(steps - 1).min(c))
        .collect();
    counts.dedup();

    let measure = |state: &PairState<T>, eliminate: &[usize]| -> Result<(f64, f64, Tensor<T>)> {
        let feat = zero_channels(&state.feature, eliminate)?;
        let out = decode_feature(decoder, &feat, state.h, state.w)?;
        let div = loss_net.config.downsample_factor();
        let (padded, _, _) = crate::resample::pad_reflect_to_multiple(&out, div)?;
        let out_set = encode(loss_net, &padded)?;
        let s = loss::style_loss_value(&out_set.taps, &state.style_taps)?.as_f64();
        let cl = loss::content_loss_value(out_set.content(), &state.content_target)?.as_f64();
        Ok((s, cl, out))
    };

    let mut rows = Vec::with_capacity(counts.len());
    let mut decoded = Vec::new();
    for &count in &counts {
        let mut s_acc = 0.0;
        let mut c_acc = 0.0;
        for (pi, state) in states.iter().enumerate() {
            let eliminate = &state.order[..count];
            let (s, cl, out) = measure(state, eliminate)?;
            s_acc += s;
            c_acc += cl;
            if keep_decoded && pi == 0 {
                decoded.push((count, out));
            }
        }
        rows.push(PruneRow {
            eliminated: count,
            style_loss: s_acc / states.len() as f64,
            content_loss: c_acc / states.len() as f64,
        });
    }

    // Keep-fraction working point with per-image selections.
    let mut s_acc = 0.0;
    let mut c_acc = 0.0;
    let mut elim_acc = 0usize;
    for state in &states {
        let keep = select_keep_fraction(&state.mags, keep_fraction)?;
        let eliminate: Vec<usize> = (0..c).filter(|i| !keep.contains(i)).collect();
        elim_acc += eliminate.len();
        let (s, cl, _) = measure(state, &eliminate)?;
        s_acc += s;
        c_acc += cl;
    }
    let keep_row = PruneRow {
        eliminated: (elim_acc as f64 / states.len() as f64).round() as usize,
        style_loss: s_acc / states.len() as f64,
        content_loss: c_acc / states.len() as f64,
    };

    // Aggregate selection over the calibration set, for structural export.
    let mut mean_mags = vec![0.0f64; c];
    for state in &states {
        for (i, m) in state.mags.iter().enumerate() {
            mean_mags[i] += m.as_f64();
        }
    }
    for m in mean_mags.iter_mut() {
        *m /= states.len() as f64;
    }
    let keep_set = select_keep_fraction(&mean_mags, keep_fraction)?;

    Ok(PruneReport {
        rows,
        keep_fraction,
        keep_row,
        keep_set,
        decoded,
    })
}

/// Structurally remove eliminated channels: slice the encoder's final conv
/// (output side) and the decoder's first conv (input side) down to the keep
/// set. The exported pair stylizes like zeroing those channels.
pub fn export_pruned<T: Element>(
    encoder: &Network<T>,
    decoder: &Network<T>,
    keep: &[usize],
) -> Result<(Network<T>, Network<T>)> {
    let c = encoder.config.bottleneck_channels();
    if keep.is_empty() {
        return Err(usage_err!("keep set must not be empty"));
    }
    if let Some(&bad) = keep.iter().find(|&&i| i >= c) {
        return Err(usage_err!("keep index {bad} out of range for {c} channels"));
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();

    let mut enc = encoder.clone();
    let mut dec = decoder.clone();
    enc.config.bottleneck = Some(keep.len());
    dec.config.bottleneck = Some(keep.len());

    // Encoder: last conv, slice output channels (weight rows + bias).
    {
        let p = enc
            .params
            .len()
            .checked_sub(2)
            .ok_or_else(|| usage_err!("encoder has no conv parameters"))?;
        let w = &enc.params[p].tensor;
        let d = w.dims().to_vec();
        let row = d[1] * d[2] * d[3];
        let mut data = Vec::with_capacity(keep.len() * row);
        for &i in &keep {
            data.extend_from_slice(&w.data()[i * row..(i + 1) * row]);
        }
        enc.params[p].tensor = Tensor::new(vec![keep.len(), d[1], d[2], d[3]], data)?;
        let b = &enc.params[p + 1].tensor;
        let bd: Vec<T> = keep.iter().map(|&i| b.data()[i]).collect();
        enc.params[p + 1].tensor = Tensor::new(vec![keep.len()], bd)?;
    }
    // Decoder: first conv, slice input channels (weight columns).
    {
        let w = &dec.params[0].tensor;
        let d = w.dims().to_vec();
        let kk = d[2] * d[3];
        let mut data = Vec::with_capacity(d[0] * keep.len() * kk);
        for o in 0..d[0] {
            for &i in &keep {
                let at = (o * d[1] + i) * kk;
                data.extend_from_slice(&w.data()[at..at + kk]);
            }
        }
        dec.params[0].tensor = Tensor::new(vec![d[0], keep.len(), d[2], d[3]], data)?;
    }

    // Reassemble layer plans against the new bottleneck.
    let enc2 = rebuild(&enc, NetKind::Encoder)?;
    let dec2 = rebuild(&dec, NetKind::Decoder)?;
    Ok((enc2, dec2))
}

fn rebuild<T: Element>(net: &Network<T>, kind: NetKind) -> Result<Network<T>> {
    // Rebuild topology from config, then move the (already sliced) params in.
    let mut fresh: Network<T> = match kind {
        NetKind::Encoder => crate::net::build_encoder(&net.config, 0)?,
        NetKind::Decoder => crate::net::build_decoder(&net.config, 0)?,
    };
    if fresh.params.len() != net.params.len() {
        return Err(usage_err!("parameter count changed during rebuild"));
    }
    for (dst, src) in fresh.params.iter_mut().zip(&net.params) {
        if dst.tensor.dims() != src.tensor.dims() {
            return Err(usage_err!(
                "parameter {} dims {:?} do not match sliced dims {:?}",
                dst.name,
                dst.tensor.dims(),
                src.tensor.dims()
            ));
        }
        dst.tensor = src.tensor.clone();
    }
    fresh.frozen = net.frozen;
    Ok(fresh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{self, blend};
    use crate::net::{build_decoder, build_encoder, NetworkConfig};
    use crate::pipeline::stylize;
    use crate::rng::Rng;

    #[test]
    fn keep_fraction_follows_the_stated_rule() {
        let keep = select_keep_fraction(&[5.0f32, 3.0, 1.0, 1.0], 0.8).unwrap();
        assert_eq!(keep, vec![0, 1]); // cumulative 8 >= 0.8 * 10
    }

    #[test]
    fn fraction_one_keeps_every_nonzero_channel() {
        let keep = select_keep_fraction(&[2.0f32, 0.0, 1.0, 3.0], 1.0).unwrap();
        assert_eq!(keep, vec![0, 2, 3]);
    }

    #[test]
    fn keep_fraction_rejects_degenerate_inputs() {
        assert!(select_keep_fraction(&[0.0f32, 0.0], 0.8).is_err());
        assert!(select_keep_fraction(&[1.0f32], 0.0).is_err());
        assert!(select_keep_fraction(&[1.0f32], 1.5).is_err());
    }

    #[test]
    fn zero_channels_zeroes_exactly_the_listed_set() {
        let f = FeatureMap::new(3, 1, 2, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = zero_channels(&f, &[1]).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
        let same = zero_channels(&f, &[]).unwrap();
        assert_eq!(same.data(), f.data());
        let all = zero_channels(&f, &[0, 1, 2]).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0));
        assert!(zero_channels(&f, &[3]).is_err());
    }

    #[test]
    fn zero_channels_commutes_on_disjoint_sets() {
        let f = FeatureMap::new(4, 1, 2, (0..8).map(|i| i as f32).collect()).unwrap();
        let ab = zero_channels(&zero_channels(&f, &[0]).unwrap(), &[2]).unwrap();
        let ba = zero_channels(&zero_channels(&f, &[2]).unwrap(), &[0]).unwrap();
        assert_eq!(ab.data(), ba.data());
    }

    #[test]
    fn minimality_holds_exhaustively_for_small_c() {
        let mut rng = Rng::seed_from_u64(31);
        for _ in 0..50 {
            let c = 2 + rng.below(11); // up to 12 channels
            let mags: Vec<f64> = (0..c).map(|_| rng.uniform(0.0, 3.0)).collect();
            let total: f64 = mags.iter().sum();
            if total == 0.0 {
                continue;
            }
            let fraction = 0.5 + 0.5 * rng.uniform_f64();
            let keep = select_keep_fraction(&mags, fraction).unwrap();
            let sum: f64 = keep.iter().map(|&i| mags[i]).sum();
            assert!(sum + total * 1e-9 >= fraction * total);
            // Dropping the smallest kept member must fall below threshold.
            if let Some(&smallest) = keep
                .iter()
                .min_by(|&&a, &&b| mags[a].partial_cmp(&mags[b]).unwrap())
            {
                let reduced = sum - mags[smallest];
                assert!(
                    reduced < fraction * total + total * 1e-9,
                    "keep set not minimal: {mags:?} fraction {fraction}"
                );
            }
        }
    }

    #[test]
    fn structural_export_matches_zeroing() {
        let cfg = NetworkConfig::desk();
        let enc = build_encoder::<f32>(&cfg, 41).unwrap();
        let dec = build_decoder::<f32>(&cfg, 42).unwrap();
        let mut rng = Rng::seed_from_u64(43);
        let mut content = Tensor::zeros(&[3, 32, 32]);
        for v in content.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let mut style = Tensor::zeros(&[3, 32, 32]);
        for v in style.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }

        // Reference: zero the complement at the alignment boundary.
        let keep: Vec<usize> = (0..64).filter(|i| i % 2 == 0).collect();
        let aligned = aligned_feature(&enc, &content, &style, &StylizeOpts::default()).unwrap();
        let eliminate: Vec<usize> = (0..64).filter(|i| !keep.contains(i)).collect();
        let zeroed = zero_channels(&aligned.feature, &eliminate).unwrap();
        let want = decode_feature(&dec, &zeroed, 32, 32).unwrap();

        // Structural: sliced networks stylizing directly.
        let (enc_p, dec_p) = export_pruned(&enc, &dec, &keep).unwrap();
        let got = stylize(&enc_p, &dec_p, &content, &style, &StylizeOpts::default()).unwrap();

        for (a, b) in want.data().iter().zip(got.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn sweep_baseline_matches_unpruned_losses_exactly() {
        let cfg = NetworkConfig::desk();
        let enc = build_encoder::<f32>(&cfg, 51).unwrap();
        let dec = build_decoder::<f32>(&cfg, 52).unwrap();
        let loss_net = enc.snapshot_frozen();
        let mut rng = Rng::seed_from_u64(53);
        let mut img = Tensor::zeros(&[3, 32, 32]);
        for v in img.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let mut sty = Tensor::zeros(&[3, 32, 32]);
        for v in sty.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let report = prune_sweep(
            &enc,
            &dec,
            &loss_net,
            &[img.clone()],
            &[sty.clone()],
            3,
            0.8,
            false,
        )
        .unwrap();
        assert_eq!(report.rows[0].eliminated, 0);
        assert_eq!(report.rows.last().unwrap().eliminated, 64);
        // Increasing counts.
        for pair in report.rows.windows(2) {
            assert!(pair[0].eliminated < pair[1].eliminated);
        }

        // The zero-elimination row equals a direct measurement.
        let aligned = aligned_feature(&enc, &img, &sty, &StylizeOpts::default()).unwrap();
        let out = decode_feature(&dec, &aligned.feature, 32, 32).unwrap();
        let out_set = encode(&loss_net, &out).unwrap();
        let sty_set = encode(&loss_net, &sty).unwrap();
        let s = loss::style_loss_value(&out_set.taps, &sty_set.taps).unwrap() as f64;
        assert!((report.rows[0].style_loss - s).abs() < 1e-12);
    }

    #[test]
    fn blend_then_zero_is_the_documented_order() {
        // stylize applies pruning after blending; confirm via alpha = 0.5.
        let cfg = NetworkConfig::desk();
        let enc = build_encoder::<f32>(&cfg, 61).unwrap();
        let dec = build_decoder::<f32>(&cfg, 62).unwrap();
        let mut rng = Rng::seed_from_u64(63);
        let mut content = Tensor::zeros(&[3, 32, 32]);
        for v in content.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let mut style = Tensor::zeros(&[3, 32, 32]);
        for v in style.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let opts = StylizeOpts {
            alpha: 0.5,
            prune_fraction: Some(0.8),
            ..Default::default()
        };
        let out = stylize(&enc, &dec, &content, &style, &opts).unwrap();

        let fc = encode(&enc, &content).unwrap();
        let fs = encode(&enc, &style).unwrap();
        let t = align::adain(fc.content(), fs.content(), 1e-5).unwrap();
        let blended = blend(fc.content(), &t, 0.5).unwrap();
        let mags = channel_magnitudes(&blended);
        let keep = select_keep_fraction(&mags, 0.8).unwrap();
        let eliminate: Vec<usize> = (0..64).filter(|i| !keep.contains(i)).collect();
        let pruned = zero_channels(&blended, &eliminate).unwrap();
        let want = decode_feature(&dec, &pruned, 32, 32).unwrap();
        assert_eq!(out.data(), want.data());
    }
}
