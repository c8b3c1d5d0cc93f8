//! Encoder, decoder, and frozen loss networks.
//!
//! The encoder is a VGG-flavored stack of conv/relu blocks separated by 2x
//! max pooling, with tagged taps after each block; the decoder mirrors it
//! with nearest-neighbor upsampling. The loss network is a frozen snapshot
//! of the encoder taken before training.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::elem::Element;
use crate::error::{config_err, usage_err, Result};
use crate::rng::Rng;
use crate::stats::FeatureMap;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Architecture description for the encoder/decoder family.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// Output width of each block; block count = widths.len().
    pub widths: Vec<usize>,
    pub convs_per_block: usize,
    pub kernel: usize,
    /// Style tap tags; tag i attaches after block i+1.
    pub style_tags: Vec<String>,
    /// Content tap tag: one of the style tags, or a distinct name which
    /// then attaches to the deepest block.
    pub content_tag: String,
    /// Channel count actually leaving the encoder (and entering the
    /// decoder). Defaults to the deepest width; set by structural pruning.
    pub bottleneck: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::desk()
    }
}

impl NetworkConfig {
    /// Laptop-scale default: 3 blocks of widths [16, 32, 64], two convs per
    /// block, content tap at the block-3 output.
    pub fn desk() -> Self {
        NetworkConfig {
            input_channels: 3,
            widths: vec![16, 32, 64],
            convs_per_block: 2,
            kernel: 3,
            style_tags: vec!["tap1".to_string(), "tap2".to_string(), "tap3".to_string()],
            content_tag: "tap3".to_string(),
            bottleneck: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(config_err!("block widths must be positive: {:?}", self.widths));
        }
        if self.input_channels == 0 {
            return Err(config_err!("input channels must be positive"));
        }
        if self.convs_per_block == 0 {
            return Err(config_err!("convs per block must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(config_err!("kernel size must be odd, got {}", self.kernel));
        }
        if self.style_tags.is_empty() {
            return Err(config_err!("at least one style tap is required"));
        }
        if self.style_tags.len() > self.widths.len() {
            return Err(config_err!(
                "{} style taps cannot attach to {} blocks",
                self.style_tags.len(),
                self.widths.len()
            ));
        }
        for (i, a) in self.style_tags.iter().enumerate() {
            if self.style_tags[i + 1..].contains(a) {
                return Err(config_err!("duplicate style tag {a}"));
            }
        }
        // The content tap is a style tap or sits deeper than all of them.
        if !self.style_tags.contains(&self.content_tag)
            && self.style_tags.len() >= self.widths.len()
        {
            return Err(config_err!(
                "content tag {} is not a style tag and no deeper block exists",
                self.content_tag
            ));
        }
        if let Some(b) = self.bottleneck {
            if b == 0 || b > *self.widths.last().expect("non-empty") {
                return Err(config_err!(
                    "bottleneck {b} must be in 1..={}",
                    self.widths.last().expect("non-empty")
                ));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.widths.len()
    }

    /// 1-based block index of the content tap.
    pub fn content_block(&self) -> usize {
        match self.style_tags.iter().position(|t| t == &self.content_tag) {
            Some(i) => i + 1,
            None => self.blocks(),
        }
    }

    /// Output channels of the deepest encoder layer.
    pub fn bottleneck_channels(&self) -> usize {
        self.bottleneck
            .unwrap_or_else(|| *self.widths.last().expect("non-empty"))
    }

    /// Spatial divisor the encoder imposes (one 2x pool between blocks).
    pub fn downsample_factor(&self) -> usize {
        1 << (self.blocks() - 1)
    }

    /// Tag attached after 1-based block `b`, if any.
    fn tag_for_block(&self, b: usize) -> Option<String> {
        if b <= self.style_tags.len() {
            return Some(self.style_tags[b - 1].clone());
        }
        if b == self.content_block() {
            return Some(self.content_tag.clone());
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Convolution referencing parameter slots (weight, bias).
    Conv {
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2x,
    Upsample2x,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// An encoder or decoder with its parameters.
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    pub config: NetworkConfig,
    pub kind: NetKind,
    layers: Vec<Layer>,
    /// Tap tags attached after the layer at the stored index.
    taps: Vec<(String, usize)>,
    pub params: Vec<NamedParam<T>>,
    pub frozen: bool,
}

/// Conv channel plan (in, out) per layer for one network kind.
fn conv_plan(cfg: &NetworkConfig, kind: NetKind) -> Vec<(usize, usize)> {
    let mut enc = Vec::new();
    let mut c_in = cfg.input_channels;
    let blocks = cfg.blocks();
    for (b, &w) in cfg.widths.iter().enumerate() {
        for j in 0..cfg.convs_per_block {
            let last = b + 1 == blocks && j + 1 == cfg.convs_per_block;
            let c_out = if last { cfg.bottleneck_channels() } else { w };
            enc.push((c_in, c_out));
            c_in = c_out;
        }
    }
    match kind {
        NetKind::Encoder => enc,
        // Decoder reverses every arrow of the encoder plan.
        NetKind::Decoder => enc.iter().rev().map(|&(i, o)| (o, i)).collect(),
    }
}

impl<T: Element> Network<T> {
    fn assemble(cfg: NetworkConfig, kind: NetKind, params: Vec<NamedParam<T>>) -> Network<T> {
        let blocks = cfg.blocks();
        let convs = cfg.convs_per_block;
        let pad = (cfg.kernel - 1) / 2;
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        let mut slot = 0;
        for b in 0..blocks {
            for _ in 0..convs {
                layers.push(Layer::Conv {
                    weight: slot,
                    bias: slot + 1,
                    stride: 1,
                    pad,
                });
                slot += 2;
                let is_last = match kind {
                    NetKind::Encoder => false,
                    // Mirrored structure: the decoder's final conv maps back
                    // to image channels with no activation.
                    NetKind::Decoder => b + 1 == blocks && slot == 2 * blocks * convs,
                };
                if !is_last {
                    layers.push(Layer::Relu);
                }
            }
            if kind == NetKind::Encoder {
                if let Some(tag) = cfg.tag_for_block(b + 1) {
                    taps.push((tag, layers.len() - 1));
                }
            }
            if b + 1 < blocks {
                layers.push(match kind {
                    NetKind::Encoder => Layer::MaxPool2x,
                    NetKind::Decoder => Layer::Upsample2x,
                });
            }
        }
        Network {
            config: cfg,
            kind,
            layers,
            taps,
            params,
            frozen: false,
        }
    }

    fn build(cfg: &NetworkConfig, kind: NetKind, seed: u64) -> Result<Network<T>> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let k = cfg.kernel;
        let mut params = Vec::new();
        for (idx, (c_in, c_out)) in conv_plan(cfg, kind).into_iter().enumerate() {
            let fan_in = c_in * k * k;
            let gain = match kind {
                NetKind::Encoder => 6.0,
                NetKind::Decoder => 2.0,
            };
            let sigma = (gain / fan_in as f64).sqrt();
            let mut w = Tensor::<T>::zeros(&[c_out, c_in, k, k]);
            rng.fill_normal(w.data_mut(), sigma);
            let block = idx / cfg.convs_per_block + 1;
            let conv = idx % cfg.convs_per_block + 1;
            params.push(NamedParam {
                name: format!("block{block}.conv{conv}.weight"),
                tensor: w,
            });
            params.push(NamedParam {
                name: format!("block{block}.conv{conv}.bias"),
                tensor: Tensor::zeros(&[c_out]),
            });
        }
        Ok(Network::assemble(cfg.clone(), kind, params))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn taps(&self) -> &[(String, usize)] {
        &self.taps
    }

    /// Deep copy with the frozen flag set; later updates to the source
    /// leave the snapshot untouched.
    pub fn snapshot_frozen(&self) -> Network<T> {
        let mut copy = self.clone();
        copy.frozen = true;
        copy
    }

    /// Insert this network's parameters into a tape. Gradients are tracked
    /// only when `trainable` and the network is not frozen.
    pub fn stage(&self, tape: &mut Tape<T>, trainable: bool) -> StagedNet {
        let trainable = trainable && !self.frozen;
        let vars = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.tensor.clone();
                t.requires_grad = trainable;
                t.grad = None;
                tape.leaf(t)
            })
            .collect();
        StagedNet {
            layers: self.layers.clone(),
            taps: self.taps.clone(),
            param_vars: vars,
            content_tag: self.config.content_tag.clone(),
        }
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            kind: self.kind,
            layers: self.layers.clone(),
            taps: self.taps.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedParam {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            frozen: self.frozen,
        }
    }
}

/// Build the encoder: conv/relu blocks separated by 2x max pooling, weights
/// drawn fan-in-scaled normal from the seed, biases zero.
pub fn build_encoder<T: Element>(cfg: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    Network::build(cfg, NetKind::Encoder, seed)
}

/// Build the decoder: the encoder mirrored, with nearest-neighbor 2x
/// upsampling in place of pooling and no activation after the final conv.
pub fn build_decoder<T: Element>(cfg: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    Network::build(cfg, NetKind::Decoder, seed)
}

/// A network's parameters staged on one tape, reusable across forwards.
pub struct StagedNet {
    layers: Vec<Layer>,
    taps: Vec<(String, usize)>,
    param_vars: Vec<Var>,
    content_tag: String,
}

/// Tapped activations of one encoder forward.
#[derive(Debug, Clone)]
pub struct TapVars {
    pub taps: Vec<(String, Var)>,
    pub content: Var,
}

impl StagedNet {
    pub fn param_vars(&self) -> &[Var] {
        &self.param_vars
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Ok(self.run(tape, x, false)?.0)
    }

    /// Forward pass returning every tagged tap (style taps plus content).
    pub fn forward_taps<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<TapVars> {
        let (_, taps) = self.run(tape, x, true)?;
        let content = taps
            .iter()
            .find(|(tag, _)| tag == &self.content_tag)
            .map(|&(_, v)| v)
            .ok_or_else(|| config_err!("content tag {} not among taps", self.content_tag))?;
        Ok(TapVars { taps, content })
    }

    fn run<T: Element>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        want_taps: bool,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        let mut cur = x;
        let mut taps = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => tape.conv2d(
                    cur,
                    self.param_vars[*weight],
                    self.param_vars[*bias],
                    *stride,
                    *pad,
                )?,
                Layer::Relu => tape.relu(cur),
                Layer::MaxPool2x => tape.maxpool_2x(cur)?,
                Layer::Upsample2x => tape.upsample_nearest_2x(cur)?,
            };
            if want_taps {
                for (tag, at) in &self.taps {
                    if *at == i {
                        taps.push((tag.clone(), cur));
                    }
                }
            }
        }
        Ok((cur, taps))
    }
}

/// Tagged feature maps extracted by [`encode`].
#[derive(Debug, Clone)]
pub struct FeatureSet<T = f32> {
    pub taps: Vec<(String, FeatureMap<T>)>,
    pub content_tag: String,
}

impl<T: Element> FeatureSet<T> {
    pub fn get(&self, tag: &str) -> Option<&FeatureMap<T>> {
        self.taps.iter().find(|(t, _)| t == tag).map(|(_, f)| f)
    }

    pub fn content(&self) -> &FeatureMap<T> {
        self.get(&self.content_tag)
            .expect("content tap present by construction")
    }
}

/// Run the encoder on an image (3xHxW or 1x3xHxW) and collect every tap.
/// Purely functional: no gradients, no state.
pub fn encode<T: Element>(net: &Network<T>, image: &Tensor<T>) -> Result<FeatureSet<T>> {
    if net.kind != NetKind::Encoder {
        return Err(usage_err!("encode requires an encoder network"));
    }
    let dims = image.dims();
    let (h, w) = match dims.len() {
        3 => (dims[1], dims[2]),
        4 => (dims[2], dims[3]),
        _ => return Err(usage_err!("encode expects CxHxW or NxCxHxW, got {dims:?}")),
    };
    let div = net.config.downsample_factor();
    if h % div != 0 || w % div != 0 {
        return Err(usage_err!(
            "encode: spatial size {h}x{w} must be a multiple of {div}"
        ));
    }
    let mut tape = Tape::new();
    let x = if dims.len() == 3 {
        let t = image
            .clone()
            .reshaped(vec![1, dims[0], dims[1], dims[2]])?;
        tape.leaf(t)
    } else {
        tape.leaf(image.clone())
    };
    let staged = net.stage(&mut tape, false);
    let tv = staged.forward_taps(&mut tape, x)?;
    let taps = tv
        .taps
        .iter()
        .map(|(tag, v)| Ok((tag.clone(), FeatureMap::from_tensor(tape.value(*v))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        taps,
        content_tag: net.config.content_tag.clone(),
    })
}

/// Run the decoder on a bottleneck feature, returning the image tensor
/// (1x3xH'xW'), unclamped.
pub fn decode<T: Element>(net: &Network<T>, feature: &Tensor<T>) -> Result<Tensor<T>> {
    if net.kind != NetKind::Decoder {
        return Err(usage_err!("decode requires a decoder network"));
    }
    let mut tape = Tape::new();
    let x = match feature.dims().len() {
        3 => {
            let d = feature.dims().to_vec();
            tape.leaf(feature.clone().reshaped(vec![1, d[0], d[1], d[2]])?)
        }
        4 => tape.leaf(feature.clone()),
        other => return Err(usage_err!("decode expects CxHxW or NxCxHxW, got rank {other}")),
    };
    let staged = net.stage(&mut tape, false);
    let out = staged.forward(&mut tape, x)?;
    Ok(tape.value(out).clone())
}
