//! Binary checkpoint format for named tensor tables.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "UFSE" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | rank x u64 dims
//!             | product(dims) x f32 data
//! ```
//!
//! Round-tripping reproduces every parameter bit-exactly. Network
//! architecture travels as one extra `meta.arch` tensor of small integers,
//! so a checkpoint file is self-contained.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{format_err, Result};
use crate::net::{build_decoder, build_encoder, NetKind, Network, NetworkConfig};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"UFSE";
pub const VERSION: u32 = 1;

const ARCH_TENSOR: &str = "meta.arch";

/// A named tensor table plus format version.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(format_err!("bad magic {magic:02x?}, expected \"UFSE\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err!("unsupported checkpoint version {version}"));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = core::str::from_utf8(r.take(name_len)?)
                .map_err(|_| format_err!("tensor name is not valid UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64()?;
                if d == 0 || d > u32::MAX as u64 {
                    return Err(format_err!("implausible dimension {d} in {name}"));
                }
                dims.push(d as usize);
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            let mut data = Vec::with_capacity(n);
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            tensors.push((
                name,
                Tensor::new(dims, data).map_err(|e| format_err!("{e}"))?,
            ));
        }
        if r.pos != bytes.len() {
            return Err(format_err!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - r.pos
            ));
        }
        Ok(Checkpoint {
            version,
            tensors,
        })
    }

    /// Snapshot a network, including its architecture metadata.
    pub fn from_network(net: &Network<f32>) -> Checkpoint {
        let cfg = &net.config;
        let mut arch = vec![
            match net.kind {
                NetKind::Encoder => 0.0,
                NetKind::Decoder => 1.0,
            },
            if net.frozen { 1.0 } else { 0.0 },
            cfg.input_channels as f32,
            cfg.widths.len() as f32,
            cfg.convs_per_block as f32,
            cfg.kernel as f32,
            cfg.style_tags.len() as f32,
            cfg.content_block() as f32,
            cfg.bottleneck_channels() as f32,
        ];
        arch.extend(cfg.widths.iter().map(|&w| w as f32));
        let n = arch.len();
        let mut tensors = vec![(
            ARCH_TENSOR.to_string(),
            Tensor::new(vec![n], arch).expect("consistent"),
        )];
        tensors.extend(
            net.params
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone())),
        );
        Checkpoint {
            version: VERSION,
            tensors,
        }
    }

    /// Rebuild a network. Tag names are regenerated as `tap1..tapN` (plus
    /// `content` when the content tap is deeper than every style tap).
    pub fn into_network(&self) -> Result<Network<f32>> {
        let arch = self
            .get(ARCH_TENSOR)
            .ok_or_else(|| format_err!("checkpoint lacks {ARCH_TENSOR}"))?;
        let a = arch.data();
        if a.len() < 9 {
            return Err(format_err!("{ARCH_TENSOR} too short: {} entries", a.len()));
        }
        let kind = match a[0] as u32 {
            0 => NetKind::Encoder,
            1 => NetKind::Decoder,
            other => return Err(format_err!("unknown network kind {other}")),
        };
        let frozen = a[1] != 0.0;
        let blocks = a[3] as usize;
        if a.len() != 9 + blocks {
            return Err(format_err!(
                "{ARCH_TENSOR} length {} does not match {blocks} blocks",
                a.len()
            ));
        }
        let widths: Vec<usize> = a[9..].iter().map(|&w| w as usize).collect();
        let n_style = a[6] as usize;
        let content_block = a[7] as usize;
        let style_tags: Vec<String> = (1..=n_style).map(|i| format!("tap{i}")).collect();
        let content_tag = if content_block <= n_style {
            format!("tap{content_block}")
        } else {
            "content".to_string()
        };
        let bottleneck = a[8] as usize;
        let cfg = NetworkConfig {
            input_channels: a[2] as usize,
            widths: widths.clone(),
            convs_per_block: a[4] as usize,
            kernel: a[5] as usize,
            style_tags,
            content_tag,
            bottleneck: if bottleneck == *widths.last().unwrap_or(&0) {
                None
            } else {
                Some(bottleneck)
            },
        };
        cfg.validate().map_err(|e| format_err!("{e}"))?;

        // Build with matching topology, then overwrite parameters by name.
        let mut net: Network<f32> = match kind {
            NetKind::Encoder => build_encoder(&cfg, 0),
            NetKind::Decoder => build_decoder(&cfg, 0),
        }
        .map_err(|e| format_err!("{e}"))?;
        for p in net.params.iter_mut() {
            let stored = self
                .get(&p.name)
                .ok_or_else(|| format_err!("checkpoint lacks parameter {}", p.name))?;
            if stored.dims() != p.tensor.dims() {
                return Err(format_err!(
                    "parameter {} has dims {:?}, expected {:?}",
                    p.name,
                    stored.dims(),
                    p.tensor.dims()
                ));
            }
            p.tensor = stored.clone();
        }
        net.frozen = frozen;
        Ok(net)
    }
}

impl<T> From<&Network<T>> for Checkpoint
where
    T: crate::elem::Element,
{
    fn from(net: &Network<T>) -> Checkpoint {
        // Shadow-mode networks serialize through f32, the production dtype.
        Checkpoint::from_network(&net.cast::<f32>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::build_encoder;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig::desk();
        let net: Network<f32> = build_encoder(&cfg, 77).unwrap();
        let ck = Checkpoint::from_network(&net);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck, back);
        let net2 = back.into_network().unwrap();
        assert_eq!(net.params.len(), net2.params.len());
        for (a, b) in net.params.iter().zip(&net2.params) {
            assert_eq!(a.name, b.name);
            // Bit-exact, not just approximately equal.
            let bits_a: Vec<u32> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(net2.kind, NetKind::Encoder);
        assert_eq!(net2.config.widths, cfg.widths);
    }

    #[test]
    fn header_layout_is_pinned() {
        let cfg = NetworkConfig::desk();
        let net: Network<f32> = build_encoder(&cfg, 1).unwrap();
        let bytes = Checkpoint::from_network(&net).to_bytes();
        assert_eq!(&bytes[0..4], b"UFSE");
        assert_eq!(u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]), 1);
        let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
        assert_eq!(count as usize, net.params.len() + 1);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let cfg = NetworkConfig::desk();
        let net: Network<f32> = build_encoder(&cfg, 1).unwrap();
        let mut bytes = Checkpoint::from_network(&net).to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut extra = Checkpoint::from_network(&net).to_bytes();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn frozen_flag_survives_round_trip() {
        let cfg = NetworkConfig::desk();
        let net: Network<f32> = build_encoder(&cfg, 2).unwrap().snapshot_frozen();
        let back = Checkpoint::from_network(&net)
            .into_network()
            .unwrap();
        assert!(back.frozen);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}
