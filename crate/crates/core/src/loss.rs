//! Training losses: content, style, uncorrelation, and their weighted total.
//!
//! All loss builders append to a [`Tape`] so the whole objective is
//! differentiable end-to-end. `*_value` variants evaluate the same graphs
//! forward-only on plain feature maps, for diagnostics and sweeps.

use alloc::string::String;
use alloc::vec::Vec;

use crate::elem::Element;
use crate::error::{usage_err, Result};
use crate::stats::FeatureMap;
use crate::tape::{CorrelationMode, Tape, Var};

/// Small constant added to centered channel norms inside the differentiable
/// correlation so dead channels contribute zero instead of 0/0.
const NORM_EPS: f64 = 1e-8;

/// Weights (content, style, uncorrelation) of the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub uncorrelation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            style: 50.0,
            uncorrelation: 0.01,
        }
    }
}

/// One training iteration's loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub content: f64,
    pub style: f64,
    pub uncorrelation: f64,
    pub total: f64,
}

impl LossReport {
    /// `total` recomputed from the parts; equals the stored total up to
    /// rounding.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.content * self.content + w.style * self.style + w.uncorrelation * self.uncorrelation
    }
}

/// Mean squared elementwise difference.
pub fn mse<T: Element>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.value(a).dims() != tape.value(b).dims() {
        return Err(usage_err!(
            "mse: shape mismatch {:?} vs {:?}",
            tape.value(a).dims(),
            tape.value(b).dims()
        ));
    }
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.reduce_mean(sq))
}

/// Content loss: MSE between the loss network's content-tap features of the
/// output and the content image.
pub fn content_loss<T: Element>(tape: &mut Tape<T>, out: Var, target: Var) -> Result<Var> {
    mse(tape, out, target)
}

/// Style loss: sum over style taps of the MSE between Gram matrices of
/// output and style features. Grams are normalized by C*H*W.
pub fn style_loss<T: Element>(
    tape: &mut Tape<T>,
    out_taps: &[(String, Var)],
    style_taps: &[(String, Var)],
) -> Result<Var> {
    if out_taps.len() != style_taps.len() {
        return Err(usage_err!(
            "style tap count mismatch: {} vs {}",
            out_taps.len(),
            style_taps.len()
        ));
    }
    let mut total: Option<Var> = None;
    for ((tag_o, o), (tag_s, s)) in out_taps.iter().zip(style_taps) {
        if tag_o != tag_s {
            return Err(usage_err!("style tap tag mismatch: {tag_o} vs {tag_s}"));
        }
        let (co, cs) = (tape.value(*o).dims()[1], tape.value(*s).dims()[1]);
        if co != cs {
            return Err(usage_err!(
                "style tap {tag_o} channel mismatch: {co} vs {cs}"
            ));
        }
        let g_o = gram_normalized(tape, *o)?;
        let g_s = gram_normalized(tape, *s)?;
        let term = mse(tape, g_o, g_s)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| usage_err!("style loss needs at least one tap"))
}

fn gram_normalized<T: Element>(tape: &mut Tape<T>, f: Var) -> Result<Var> {
    let dims = tape.value(f).dims();
    let (c, l) = match dims.len() {
        4 if dims[0] == 1 => (dims[1], dims[2] * dims[3]),
        2 => (dims[0], dims[1]),
        _ => return Err(usage_err!("gram expects 1xCxHxW or CxL, got {dims:?}")),
    };
    tape.gram(f, T::one() / T::from_usize(c * l))
}

/// Differentiable inter-channel correlation matrix of a 1xCxHxW feature.
/// Off-diagonal entries match the statistics-module definition up to the
/// norm epsilon; dead channels give zero rows.
pub fn correlation_on_tape<T: Element>(tape: &mut Tape<T>, f: Var) -> Result<Var> {
    let dims = tape.value(f).dims();
    if dims.len() != 4 || dims[0] != 1 {
        return Err(usage_err!(
            "correlation expects a 1xCxHxW feature, got {dims:?}"
        ));
    }
    let hw = dims[2] * dims[3];
    if hw < 2 {
        return Err(usage_err!(
            "correlation needs H*W >= 2, got {}x{}",
            dims[2],
            dims[3]
        ));
    }
    let mu = tape.channel_mean(f)?;
    let d = tape.bc_sub(f, mu)?;
    let sq = tape.mul(d, d)?;
    let msq = tape.channel_mean(sq)?;
    let ssq = tape.mul_scalar(msq, T::from_usize(hw));
    let norm = tape.sqrt(ssq);
    let den = tape.add_scalar(norm, T::from_f64(NORM_EPS));
    let inv = tape.recip(den);
    let unit = tape.bc_mul(d, inv)?;
    tape.gram(unit, T::one())
}

/// Uncorrelation loss: half the sum, over both features, of g(r_ij) across
/// ordered channel pairs i != j, with g per [`CorrelationMode`].
pub fn uncorrelation_loss<T: Element>(
    tape: &mut Tape<T>,
    fc: Var,
    fs: Var,
    mode: CorrelationMode,
) -> Result<Var> {
    let rc = correlation_on_tape(tape, fc)?;
    let rs = correlation_on_tape(tape, fs)?;
    let oc = tape.offdiag_sum(rc, mode)?;
    let os = tape.offdiag_sum(rs, mode)?;
    let sum = tape.add(oc, os)?;
    Ok(tape.mul_scalar(sum, T::from_f64(0.5)))
}

/// Weighted total objective.
pub fn total_loss<T: Element>(
    tape: &mut Tape<T>,
    content: Var,
    style: Var,
    uncorrelation: Var,
    w: &LossWeights,
) -> Result<Var> {
    let c = tape.mul_scalar(content, T::from_f64(w.content));
    let s = tape.mul_scalar(style, T::from_f64(w.style));
    let u = tape.mul_scalar(uncorrelation, T::from_f64(w.uncorrelation));
    let cs = tape.add(c, s)?;
    tape.add(cs, u)
}

// ---- forward-only wrappers over feature maps -----------------------------

pub fn content_loss_value<T: Element>(
    out: &FeatureMap<T>,
    target: &FeatureMap<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let a = tape.leaf(out.to_tensor());
    let b = tape.leaf(target.to_tensor());
    let l = content_loss(&mut tape, a, b)?;
    Ok(tape.value(l).item())
}

pub fn style_loss_value<T: Element>(
    out_taps: &[(String, FeatureMap<T>)],
    style_taps: &[(String, FeatureMap<T>)],
) -> Result<T> {
    let mut tape = Tape::new();
    let o: Vec<(String, Var)> = out_taps
        .iter()
        .map(|(tag, f)| (tag.clone(), tape.leaf(f.to_tensor())))
        .collect();
    let s: Vec<(String, Var)> = style_taps
        .iter()
        .map(|(tag, f)| (tag.clone(), tape.leaf(f.to_tensor())))
        .collect();
    let l = style_loss(&mut tape, &o, &s)?;
    Ok(tape.value(l).item())
}

pub fn uncorrelation_loss_value<T: Element>(
    fc: &FeatureMap<T>,
    fs: &FeatureMap<T>,
    mode: CorrelationMode,
) -> Result<T> {
    let mut tape = Tape::new();
    let a = tape.leaf(fc.to_tensor());
    let b = tape.leaf(fs.to_tensor());
    let l = uncorrelation_loss(&mut tape, a, b, mode)?;
    Ok(tape.value(l).item())
}
