//! End-to-end training of the encoder/decoder pair against a frozen loss
//! network.
//!
//! Per batch item: encode content and style with the trainable encoder,
//! align with AdaIN, decode, then re-encode the output through the frozen
//! loss network for the content loss (content tap) and style loss (Gram
//! matrices over all style taps). The uncorrelation loss is computed on the
//! trainable encoder's content-tap features of both inputs. The decoder and
//! encoder update with separate Adam learning rates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// f64 math (sqrt, ln, ...) comes from the Float trait under no_std.
#[allow(unused_imports)]
use num_traits::Float;

use crate::align::{adain_on_tape, ADAIN_EPS};
use crate::elem::Element;
use crate::error::{config_err, usage_err, Error, Result};
use crate::loss::{
    content_loss, style_loss, total_loss, uncorrelation_loss, LossReport, LossWeights,
};
use crate::net::{build_decoder, build_encoder, Network, NetworkConfig};
use crate::optim::{adam_step, AdamState};
use crate::resample;
use crate::rng::Rng;
use crate::stats::{channel_correlation, normalized_diagonal_sum};
use crate::tape::{CorrelationMode, Tape};
use crate::tensor::Tensor;

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub epochs: usize,
    /// Overrides the epoch-derived iteration count when set.
    pub iterations: Option<usize>,
    pub batch_size: usize,
    pub lr_decoder: f64,
    pub lr_encoder: f64,
    pub weights: LossWeights,
    pub uncorrelation_mode: CorrelationMode,
    pub resize_to: usize,
    pub crop_to: usize,
    pub seed: u64,
    pub content_dir: String,
    pub style_dir: String,
    /// Progress-reporting cadence (iterations); history records every one.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Laptop-CPU scale: 64x64 crops, batch 4, 2000 iterations.
    pub fn desk() -> Self {
        TrainConfig {
            network: NetworkConfig::desk(),
            epochs: 4,
            iterations: Some(2000),
            batch_size: 4,
            lr_decoder: 1e-3,
            lr_encoder: 1e-3,
            weights: LossWeights::default(),
            uncorrelation_mode: CorrelationMode::Absolute,
            resize_to: 80,
            crop_to: 64,
            seed: 7,
            content_dir: String::new(),
            style_dir: String::new(),
            log_every: 100,
        }
    }

    /// Minutes-scale plumbing check.
    pub fn smoke() -> Self {
        TrainConfig {
            iterations: Some(20),
            batch_size: 2,
            resize_to: 40,
            crop_to: 32,
            log_every: 5,
            ..TrainConfig::desk()
        }
    }

    /// The original large-scale recipe (VGG-sized widths, 240px crops,
    /// batch 8, 4 epochs, decoder 1e-4 / encoder 1e-5).
    pub fn paper() -> Self {
        TrainConfig {
            network: NetworkConfig {
                widths: vec![64, 128, 256],
                ..NetworkConfig::desk()
            },
            epochs: 4,
            iterations: None,
            batch_size: 8,
            lr_decoder: 1e-4,
            lr_encoder: 1e-5,
            resize_to: 256,
            crop_to: 240,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be >= 1"));
        }
        if self.crop_to > self.resize_to {
            return Err(config_err!(
                "crop {} exceeds resize target {}",
                self.crop_to,
                self.resize_to
            ));
        }
        if self.crop_to % self.network.downsample_factor() != 0 {
            return Err(config_err!(
                "crop {} must be a multiple of the network stride {}",
                self.crop_to,
                self.network.downsample_factor()
            ));
        }
        if self.lr_decoder <= 0.0 || self.lr_encoder <= 0.0 {
            return Err(config_err!("learning rates must be positive"));
        }
        if self.iterations.is_none() && self.epochs == 0 {
            return Err(config_err!("either epochs or iterations must be positive"));
        }
        if self.iterations == Some(0) {
            return Err(config_err!("iteration count must be positive"));
        }
        Ok(())
    }

    pub fn total_iterations(&self, dataset_len: usize) -> usize {
        self.iterations
            .unwrap_or_else(|| self.epochs * (dataset_len / self.batch_size).max(1))
    }
}

/// Checkpoints and history of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutput<T = f32> {
    pub encoder: Network<T>,
    pub decoder: Network<T>,
    pub loss_net: Network<T>,
    pub history: Vec<LossReport>,
    /// Set when training stopped early on a numerical failure; the
    /// checkpoints then hold the last good state.
    pub aborted: Option<String>,
}

struct ItemOut<T> {
    content: f64,
    style: f64,
    uncorrelation: f64,
    total: f64,
    enc_grads: Vec<Vec<T>>,
    dec_grads: Vec<Vec<T>>,
}

/// One item's full forward/backward pass.
fn run_item<T: Element>(
    encoder: &Network<T>,
    decoder: &Network<T>,
    loss_net: &Network<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    weights: &LossWeights,
    mode: CorrelationMode,
) -> Result<ItemOut<T>> {
    let mut tape = Tape::new();
    let dims = content.dims().to_vec();
    let xc = tape.leaf(content.clone().reshaped(vec![1, dims[0], dims[1], dims[2]])?);
    let sdims = style.dims().to_vec();
    let xs = tape.leaf(style.clone().reshaped(vec![1, sdims[0], sdims[1], sdims[2]])?);

    let enc = encoder.stage(&mut tape, true);
    let dec = decoder.stage(&mut tape, true);
    let ln = loss_net.stage(&mut tape, false);

    let taps_c = enc.forward_taps(&mut tape, xc)?;
    let taps_s = enc.forward_taps(&mut tape, xs)?;
    let aligned = adain_on_tape(&mut tape, taps_c.content, taps_s.content, T::from_f64(ADAIN_EPS))?;
    let out_img = dec.forward(&mut tape, aligned)?;

    let taps_out = ln.forward_taps(&mut tape, out_img)?;
    let taps_ct = ln.forward_taps(&mut tape, xc)?;
    let taps_st = ln.forward_taps(&mut tape, xs)?;

    let style_tags = &encoder.config.style_tags;
    let filter = |taps: &crate::net::TapVars| {
        taps.taps
            .iter()
            .filter(|(tag, _)| style_tags.contains(tag))
            .cloned()
            .collect::<Vec<_>>()
    };
    let lc = content_loss(&mut tape, taps_out.content, taps_ct.content)?;
    let ls = style_loss(&mut tape, &filter(&taps_out), &filter(&taps_st))?;
    let lu = uncorrelation_loss(&mut tape, taps_c.content, taps_s.content, mode)?;
    let lt = total_loss(&mut tape, lc, ls, lu, weights)?;

    let report = (
        tape.value(lc).item().as_f64(),
        tape.value(ls).item().as_f64(),
        tape.value(lu).item().as_f64(),
        tape.value(lt).item().as_f64(),
    );
    tape.backward(lt)?;

    let collect = |tape: &mut Tape<T>, staged: &crate::net::StagedNet, net: &Network<T>| {
        staged
            .param_vars()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                tape.take_grad(v)
                    .unwrap_or_else(|| vec![T::zero(); net.params[i].tensor.len()])
            })
            .collect::<Vec<_>>()
    };
    let enc_grads = collect(&mut tape, &enc, encoder);
    let dec_grads = collect(&mut tape, &dec, decoder);

    Ok(ItemOut {
        content: report.0,
        style: report.1,
        uncorrelation: report.2,
        total: report.3,
        enc_grads,
        dec_grads,
    })
}

#[cfg(feature = "parallel")]
fn run_batch<T: Element>(
    jobs: Vec<(Tensor<T>, Tensor<T>)>,
    encoder: &Network<T>,
    decoder: &Network<T>,
    loss_net: &Network<T>,
    weights: &LossWeights,
    mode: CorrelationMode,
) -> Vec<Result<ItemOut<T>>> {
    use rayon::prelude::*;
    jobs.par_iter()
        .map(|(c, s)| run_item(encoder, decoder, loss_net, c, s, weights, mode))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_batch<T: Element>(
    jobs: Vec<(Tensor<T>, Tensor<T>)>,
    encoder: &Network<T>,
    decoder: &Network<T>,
    loss_net: &Network<T>,
    weights: &LossWeights,
    mode: CorrelationMode,
) -> Vec<Result<ItemOut<T>>> {
    jobs.iter()
        .map(|(c, s)| run_item(encoder, decoder, loss_net, c, s, weights, mode))
        .collect()
}

/// Train an encoder/decoder pair on in-memory image tensors (CxHxW in
/// [0, 1]). `on_report` receives one report per iteration. The loss network
/// is a frozen snapshot of the encoder's initial weights.
pub fn train<T: Element>(
    cfg: &TrainConfig,
    contents: &[Tensor<T>],
    styles: &[Tensor<T>],
    on_report: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutput<T>> {
    train_with_loss_net(cfg, contents, styles, None, on_report)
}

/// [`train`] with an externally supplied loss network (e.g. weights loaded
/// from a checkpoint) instead of the encoder's initial snapshot.
pub fn train_with_loss_net<T: Element>(
    cfg: &TrainConfig,
    contents: &[Tensor<T>],
    styles: &[Tensor<T>],
    external_loss_net: Option<&Network<T>>,
    on_report: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if contents.is_empty() || styles.is_empty() {
        return Err(config_err!(
            "training needs non-empty content and style datasets ({} content, {} style)",
            contents.len(),
            styles.len()
        ));
    }

    let mut master = Rng::seed_from_u64(cfg.seed);
    let enc_seed = master.next_u64();
    let dec_seed = master.next_u64();
    let mut data_rng = master.split(1);

    let mut encoder: Network<T> = build_encoder(&cfg.network, enc_seed)?;
    let mut decoder: Network<T> = build_decoder(&cfg.network, dec_seed)?;
    let loss_net = match external_loss_net {
        Some(ln) => {
            if ln.kind != crate::net::NetKind::Encoder {
                return Err(usage_err!("loss network must be an encoder"));
            }
            for tag in &cfg.network.style_tags {
                if !ln.config.style_tags.contains(tag) {
                    return Err(usage_err!(
                        "loss network lacks style tap {tag} required by the training config"
                    ));
                }
            }
            ln.snapshot_frozen()
        }
        None => encoder.snapshot_frozen(),
    };

    // The deterministic resize half of preprocessing is cached; the random
    // crop stays per use.
    let resize = |imgs: &[Tensor<T>]| -> Result<Vec<Tensor<T>>> {
        imgs.iter()
            .map(|t| resample::resize_shorter_side(t, cfg.resize_to))
            .collect()
    };
    let contents_r = resize(contents)?;
    let styles_r = resize(styles)?;

    let iterations = cfg.total_iterations(contents.len());
    let mut adam_enc = AdamState::new(&encoder.params);
    let mut adam_dec = AdamState::new(&decoder.params);
    let mut history = Vec::with_capacity(iterations);

    let mut content_order: Vec<usize> = Vec::new();
    let mut style_order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    for iter in 0..iterations {
        // Fresh shuffled pairing whenever an epoch's worth is consumed.
        if cursor + cfg.batch_size > content_order.len().min(style_order.len()) {
            content_order = data_rng.permutation(contents_r.len());
            style_order = data_rng.permutation(styles_r.len());
            while content_order.len() < cfg.batch_size {
                content_order.extend(data_rng.permutation(contents_r.len()));
            }
            while style_order.len() < cfg.batch_size {
                style_order.extend(data_rng.permutation(styles_r.len()));
            }
            cursor = 0;
        }

        let mut jobs = Vec::with_capacity(cfg.batch_size);
        for b in 0..cfg.batch_size {
            let ci = content_order[cursor + b];
            let si = style_order[cursor + b];
            let (ct, cl) = resample::random_crop_offsets(&contents_r[ci], cfg.crop_to, &mut data_rng)?;
            let (st, sl) = resample::random_crop_offsets(&styles_r[si], cfg.crop_to, &mut data_rng)?;
            jobs.push((
                resample::crop_at(&contents_r[ci], ct, cl, cfg.crop_to)?,
                resample::crop_at(&styles_r[si], st, sl, cfg.crop_to)?,
            ));
        }
        cursor += cfg.batch_size;

        let results = run_batch(
            jobs,
            &encoder,
            &decoder,
            &loss_net,
            &cfg.weights,
            cfg.uncorrelation_mode,
        );

        let mut items = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(item) => items.push(item),
                Err(Error::Numerical(msg)) => {
                    return Ok(TrainOutput {
                        encoder,
                        decoder,
                        loss_net,
                        history,
                        aborted: Some(format!("iteration {iter}: {msg}")),
                    });
                }
                Err(other) => return Err(other),
            }
        }

        let inv = 1.0 / items.len() as f64;
        let report = LossReport {
            iteration: iter,
            content: items.iter().map(|i| i.content).sum::<f64>() * inv,
            style: items.iter().map(|i| i.style).sum::<f64>() * inv,
            uncorrelation: items.iter().map(|i| i.uncorrelation).sum::<f64>() * inv,
            total: items.iter().map(|i| i.total).sum::<f64>() * inv,
        };
        if !report.total.is_finite() {
            return Ok(TrainOutput {
                encoder,
                decoder,
                loss_net,
                history,
                aborted: Some(format!("iteration {iter}: non-finite loss {}", report.total)),
            });
        }

        // Mean gradients in fixed item order keep training bit-reproducible
        // regardless of worker scheduling.
        let scale = T::from_f64(inv);
        let mut enc_grads = items[0].enc_grads.clone();
        let mut dec_grads = items[0].dec_grads.clone();
        for item in &items[1..] {
            for (acc, g) in enc_grads.iter_mut().zip(&item.enc_grads) {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            for (acc, g) in dec_grads.iter_mut().zip(&item.dec_grads) {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        for g in enc_grads.iter_mut().chain(dec_grads.iter_mut()) {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }

        if let Err(Error::Numerical(msg)) =
            adam_step(&mut encoder.params, &enc_grads, &mut adam_enc, cfg.lr_encoder)
                .and_then(|_| adam_step(&mut decoder.params, &dec_grads, &mut adam_dec, cfg.lr_decoder))
        {
            return Ok(TrainOutput {
                encoder,
                decoder,
                loss_net,
                history,
                aborted: Some(format!("iteration {iter}: {msg}")),
            });
        }

        on_report(&report);
        history.push(report);
    }

    Ok(TrainOutput {
        encoder,
        decoder,
        loss_net,
        history,
        aborted: None,
    })
}

/// Train the cascade: one network per style scale, the k-th seeing the
/// accumulated style taps 1..k. Networks are independent; chaining happens
/// at inference.
pub fn train_cascade<T: Element>(
    cfgs: &[TrainConfig],
    contents: &[Tensor<T>],
    styles: &[Tensor<T>],
    on_report: &mut dyn FnMut(usize, &LossReport),
) -> Result<Vec<TrainOutput<T>>> {
    for pair in cfgs.windows(2) {
        if pair[1].network.style_tags.len() <= pair[0].network.style_tags.len() {
            return Err(usage_err!(
                "cascade stages must use strictly increasing style tap counts, got {} then {}",
                pair[0].network.style_tags.len(),
                pair[1].network.style_tags.len()
            ));
        }
    }
    let mut outs = Vec::with_capacity(cfgs.len());
    for (stage, cfg) in cfgs.iter().enumerate() {
        let mut cb = |r: &LossReport| on_report(stage, r);
        outs.push(train(cfg, contents, styles, &mut cb)?);
    }
    Ok(outs)
}

/// Derive the k-th cascade stage config (1-based) from a base config:
/// style taps truncated to `k`, content tap kept at the deepest block.
pub fn cascade_stage_config(base: &TrainConfig, k: usize) -> Result<TrainConfig> {
    if k == 0 || k > base.network.style_tags.len() {
        return Err(usage_err!(
            "cascade stage {k} out of range for {} style taps",
            base.network.style_tags.len()
        ));
    }
    let mut cfg = base.clone();
    cfg.network.style_tags.truncate(k);
    if !cfg.network.style_tags.contains(&cfg.network.content_tag) {
        cfg.network.content_tag = "content".into();
    }
    cfg.seed = base.seed.wrapping_add(k as u64);
    Ok(cfg)
}

/// Mean absolute off-diagonal correlation of the encoder's content-tap
/// features, averaged over probe images.
pub fn probe_mean_abs_offdiag<T: Element>(
    encoder: &Network<T>,
    probes: &[Tensor<T>],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(usage_err!("probe set is empty"));
    }
    let mut acc = 0.0;
    for img in probes {
        let fs = crate::net::encode(encoder, img)?;
        let r = channel_correlation(fs.content())?;
        acc += r.mean_abs_offdiag().as_f64();
    }
    Ok(acc / probes.len() as f64)
}

/// Alive-channel ratio D averaged over probe pairs.
pub fn probe_diagonal_sum<T: Element>(
    encoder: &Network<T>,
    content_probes: &[Tensor<T>],
    style_probes: &[Tensor<T>],
) -> Result<f64> {
    if content_probes.is_empty() || content_probes.len() != style_probes.len() {
        return Err(usage_err!("probe sets must be non-empty and equal-sized"));
    }
    let mut acc = 0.0;
    for (c, s) in content_probes.iter().zip(style_probes) {
        let fc = crate::net::encode(encoder, c)?;
        let fs = crate::net::encode(encoder, s)?;
        acc += normalized_diagonal_sum(fc.content(), fs.content())?.as_f64();
    }
    Ok(acc / content_probes.len() as f64)
}

/// Head/tail window means of a loss curve: (initial, final).
pub fn smoothed_ends(values: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, values.len());
    let head = values[..w].iter().sum::<f64>() / w as f64;
    let tail = values[values.len() - w..].iter().sum::<f64>() / w as f64;
    (head, tail)
}

/// Extract one loss component from a history.
pub fn series(history: &[LossReport], pick: impl Fn(&LossReport) -> f64) -> Vec<f64> {
    history.iter().map(pick).collect()
}
