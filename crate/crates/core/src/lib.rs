//! Feed-forward image style transfer with decorrelated feature encoding.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tape`]) on dense tensors ([`tensor`]). On top of it sit the
//! encoder/decoder networks ([`net`]), feature statistics ([`stats`]),
//! the training losses ([`loss`]), feature alignment transforms
//! ([`align`], with the symmetric eigensolver in [`eig`]), channel
//! pruning ([`prune`]), the Adam optimizer ([`optim`]) and the training
//! loop ([`train`]). [`pipeline`] chains everything into the inference
//! path, [`checkpoint`] holds the binary parameter format.
//!
//! Everything here is pure computation over in-memory buffers; the crate
//! is `no_std`-compatible (with `alloc`). File and image I/O live in the
//! companion `ufse` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod align;
pub mod checkpoint;
pub mod eig;
pub mod elem;
pub mod error;
pub mod loss;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod prune;
pub mod resample;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;

mod gemm;

pub use elem::Element;
pub use error::{Error, Result};
pub use tensor::Tensor;
