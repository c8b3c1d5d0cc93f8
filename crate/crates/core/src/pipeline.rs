//! Inference path: encode, align, blend, optionally prune, decode.
//!
//! Inputs of any size are accepted: images are reflect-padded up to the
//! encoder's stride multiple and the output is cropped back.

use alloc::vec::Vec;

use crate::align;
use crate::elem::Element;
use crate::error::{usage_err, Result};
use crate::net::{decode, encode, NetKind, Network};
use crate::prune;
use crate::resample;
use crate::stats::{channel_magnitudes, FeatureMap};
use crate::tensor::Tensor;

/// Runtime options of the stylization path.
#[derive(Debug, Clone, Copy)]
pub struct StylizeOpts {
    /// Style strength in [0, 1]; 0 reproduces decode(encode(content)).
    pub alpha: f64,
    /// When set, keep only the largest-magnitude channels holding this
    /// fraction of total magnitude, zeroing the rest before decoding.
    pub prune_fraction: Option<f64>,
    pub adain_eps: f64,
}

impl Default for StylizeOpts {
    fn default() -> Self {
        StylizeOpts {
            alpha: 1.0,
            prune_fraction: None,
            adain_eps: align::ADAIN_EPS,
        }
    }
}

/// The blended bottleneck feature of one content/style pair, plus the
/// bookkeeping needed to decode back to the original content size.
pub struct AlignedFeature<T = f32> {
    pub feature: FeatureMap<T>,
    pub content_h: usize,
    pub content_w: usize,
}

/// Encode both images, align the content feature to the style statistics,
/// and blend by alpha. Images are CxHxW in [0, 1], any size.
pub fn aligned_feature<T: Element>(
    encoder: &Network<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    opts: &StylizeOpts,
) -> Result<AlignedFeature<T>> {
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(usage_err!("alpha must be in [0, 1], got {}", opts.alpha));
    }
    if encoder.kind != NetKind::Encoder {
        return Err(usage_err!("stylize needs an encoder network"));
    }
    let div = encoder.config.downsample_factor();
    let (pc, ch, cw) = resample::pad_reflect_to_multiple(content, div)
        .map(|(t, h, w)| (t, h, w))?;
    let (ps, _, _) = resample::pad_reflect_to_multiple(style, div)?;

    let fc = encode(encoder, &pc)?;
    let fs = encode(encoder, &ps)?;
    let xc = fc.content();
    let xs = fs.content();

    let t = align::adain(xc, xs, T::from_f64(opts.adain_eps))?;
    let blended = align::blend(xc, &t, T::from_f64(opts.alpha))?;
    Ok(AlignedFeature {
        feature: blended,
        content_h: ch,
        content_w: cw,
    })
}

/// Decode a bottleneck feature and crop away stylization padding. The
/// result is 3xHxW and unclamped; clamping happens at image export.
pub fn decode_feature<T: Element>(
    decoder: &Network<T>,
    feature: &FeatureMap<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let img = decode(decoder, &feature.to_tensor())?;
    let dims = img.dims().to_vec();
    let img3 = img.reshaped(alloc::vec![dims[1], dims[2], dims[3]])?;
    resample::crop_to_size(&img3, out_h, out_w)
}

/// Single-network stylization: encode, AdaIN, blend, optional channel
/// pruning, decode.
pub fn stylize<T: Element>(
    encoder: &Network<T>,
    decoder: &Network<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    opts: &StylizeOpts,
) -> Result<Tensor<T>> {
    let mut aligned = aligned_feature(encoder, content, style, opts)?;
    if let Some(fraction) = opts.prune_fraction {
        let mags = channel_magnitudes(&aligned.feature);
        let keep = prune::select_keep_fraction(&mags, fraction)?;
        let eliminate: Vec<usize> = (0..aligned.feature.channels())
            .filter(|i| !keep.contains(i))
            .collect();
        aligned.feature = prune::zero_channels(&aligned.feature, &eliminate)?;
    }
    decode_feature(decoder, &aligned.feature, aligned.content_h, aligned.content_w)
}

/// Cascade stylization: each stage consumes the previous stage's output as
/// its content image. Returns the output of every stage.
pub fn stylize_cascade<T: Element>(
    stages: &[(Network<T>, Network<T>)],
    content: &Tensor<T>,
    style: &Tensor<T>,
    opts: &StylizeOpts,
) -> Result<Vec<Tensor<T>>> {
    if stages.is_empty() {
        return Err(usage_err!("cascade needs at least one stage"));
    }
    let mut outputs = Vec::with_capacity(stages.len());
    let mut current = content.clone();
    for (enc, dec) in stages {
        let out = stylize(enc, dec, &current, style, opts)?;
        current = out.clone();
        outputs.push(out);
    }
    Ok(outputs)
}
