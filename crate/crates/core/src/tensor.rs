//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Element;
use crate::error::{config_err, Result};

/// Dense multi-dimensional array, row-major. The universal value of the
/// engine: images, feature maps, parameters, loss scalars.
///
/// A scalar is represented by empty `dims` (one element).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
    /// d(loss)/d(self), populated by a backward pass for tensors that
    /// require gradients.
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(config_err!("tensor dims must be positive, got {dims:?}"));
        }
        if data.len() != n {
            return Err(config_err!(
                "tensor data length {} does not match dims {:?} (product {})",
                data.len(),
                dims,
                n
            ));
        }
        Ok(Tensor {
            dims,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: Vec::new(),
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Scalar value; panics on non-scalars (use only after shape checks).
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Same data, new dims. Element count must match.
    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(config_err!(
                "cannot reshape {} elements to {dims:?}",
                self.data.len()
            ));
        }
        self.dims = dims;
        Ok(self)
    }

    /// Convert the element type (used by the f64 shadow mode in tests).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        // NaN/Inf propagate through the sum, so one reduction suffices.
        let mut acc = T::zero();
        for &x in &self.data {
            acc += x;
        }
        acc.is_finite()
    }
}

/// Dims of an N x C x H x W activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Nchw {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Nchw {
    pub fn of(dims: &[usize]) -> Result<Self> {
        if dims.len() != 4 {
            return Err(config_err!("expected rank-4 NxCxHxW tensor, got {dims:?}"));
        }
        Ok(Nchw {
            n: dims[0],
            c: dims[1],
            h: dims[2],
            w: dims[3],
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
