//! Reverse-mode automatic differentiation on dense tensors.
//!
//! A [`Tape`] is a Wengert list: every operation appends one node holding
//! the forward value plus whatever the backward rule needs. Insertion order
//! is a topological order by construction (operands must already exist), so
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//!
//! Tensors on the tape are immutable once created; the only mutation is
//! gradient accumulation during one backward pass. One tape is single
//! threaded; independent tapes can run on independent threads.

use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Element;
use crate::error::{config_err, numerical_err, usage_err, Result};
use crate::gemm;
use crate::tensor::{Nchw, Tensor};

/// How correlation coefficients enter the uncorrelation objective:
/// `Signed` sums raw coefficients, `Absolute` sums smoothed magnitudes
/// `sqrt(r^2 + 1e-12)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CorrelationMode {
    Signed,
    #[default]
    Absolute,
}

const ABS_SMOOTHING: f64 = 1e-12;

/// Handle to a tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    #[inline]
    fn ix(self) -> usize {
        self.0 as usize
    }
}

enum Op<T> {
    Leaf,
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, T),
    AddScalar(Var, T),
    Sqrt(Var),
    Recip(Var),
    Reshape(Var),
    MeanAll(Var),
    ChannelMean(Var),
    /// rhs broadcast over x; `sign` is +1 for add, -1 for sub.
    BcAdd(Var, Var, T),
    BcMul(Var, Var),
    MatMul(Var, Var),
    /// Scaled self outer product of a C x L matrix: scale * X * X^T.
    Gram(Var, T),
    OffDiagSum(Var, CorrelationMode),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        /// im2col patches, kept only when the weight needs a gradient.
        cols: Option<Vec<T>>,
    },
    MaxPool2x(Var, Vec<u32>),
    Upsample2x(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddScalar(..) => "add_scalar",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::Reshape(_) => "reshape",
            Op::MeanAll(_) => "reduce_mean",
            Op::ChannelMean(_) => "channel_mean",
            Op::BcAdd(..) => "bc_add",
            Op::BcMul(..) => "bc_mul",
            Op::MatMul(..) => "matmul",
            Op::Gram(..) => "gram",
            Op::OffDiagSum(..) => "offdiag_sum",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2x(..) => "maxpool_2x",
            Op::Upsample2x(_) => "upsample_nearest_2x",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Recorded computation graph.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input tensor. Its `requires_grad` flag decides whether the
    /// backward pass reaches it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.ix()].value
    }

    /// Gradient of the last backward target w.r.t. `v`, if populated.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.ix()].value.grad.as_deref()
    }

    /// Move a populated gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.ix()].value.grad.take()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        let id = self.nodes.len();
        assert!(id <= u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { op, value });
        Var(id as u32)
    }

    fn out(&mut self, op: Op<T>, dims: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Var {
        let mut t = Tensor::new(dims, data).expect("internal shape bookkeeping");
        t.requires_grad = requires_grad;
        self.push(op, t)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.ix()].value.requires_grad)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.ix()].value
    }

    // ---- elementwise ----------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.val(x).data().iter().map(|&v| v.max(T::zero())).collect();
        let dims = self.val(x).dims().to_vec();
        let rg = self.rg(&[x]);
        self.out(Op::Relu(x), dims, data, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul")
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, which: &'static str) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.dims() != tb.dims() {
            return Err(config_err!(
                "{which}: shape mismatch {:?} vs {:?}",
                ta.dims(),
                tb.dims()
            ));
        }
        let data: Vec<T> = match which {
            "add" => ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect(),
            "sub" => ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect(),
            _ => ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect(),
        };
        let dims = ta.dims().to_vec();
        let rg = self.rg(&[a, b]);
        let op = match which {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        Ok(self.out(op, dims, data, rg))
    }

    pub fn mul_scalar(&mut self, x: Var, k: T) -> Var {
        let data = self.val(x).data().iter().map(|&v| v * k).collect();
        let dims = self.val(x).dims().to_vec();
        let rg = self.rg(&[x]);
        self.out(Op::MulScalar(x, k), dims, data, rg)
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        let data = self.val(x).data().iter().map(|&v| v + k).collect();
        let dims = self.val(x).dims().to_vec();
        let rg = self.rg(&[x]);
        self.out(Op::AddScalar(x, k), dims, data, rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let data = self.val(x).data().iter().map(|&v| v.sqrt()).collect();
        let dims = self.val(x).dims().to_vec();
        let rg = self.rg(&[x]);
        self.out(Op::Sqrt(x), dims, data, rg)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let data = self.val(x).data().iter().map(|&v| T::one() / v).collect();
        let dims = self.val(x).dims().to_vec();
        let rg = self.rg(&[x]);
        self.out(Op::Recip(x), dims, data, rg)
    }

    // ---- shape ----------------------------------------------------------

    pub fn reshape(&mut self, x: Var, dims: Vec<usize>) -> Result<Var> {
        let n: usize = dims.iter().product();
        if n != self.val(x).len() {
            return Err(config_err!(
                "reshape: {} elements cannot view as {dims:?}",
                self.val(x).len()
            ));
        }
        let data = self.val(x).data().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.out(Op::Reshape(x), dims, data, rg))
    }

    // ---- reductions -----------------------------------------------------

    /// Mean over all elements; returns a scalar.
    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let n = T::from_usize(t.len());
        let mut acc = T::zero();
        for &v in t.data() {
            acc += v;
        }
        let rg = self.rg(&[x]);
        self.out(Op::MeanAll(x), Vec::new(), vec![acc / n], rg)
    }

    /// Population variance over all elements; returns a scalar.
    pub fn reduce_var(&mut self, x: Var) -> Result<Var> {
        let m = self.reduce_mean(x);
        let d = self.bc_sub(x, m)?;
        let sq = self.mul(d, d)?;
        Ok(self.reduce_mean(sq))
    }

    /// Per-(n, c) spatial mean of an NxCxHxW tensor; returns NxCx1x1.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let s = Nchw::of(self.val(x).dims())?;
        let hw = T::from_usize(s.h * s.w);
        let data = self.val(x).data();
        let mut out = Vec::with_capacity(s.n * s.c);
        for nc in 0..s.n * s.c {
            let mut acc = T::zero();
            for &v in &data[nc * s.h * s.w..(nc + 1) * s.h * s.w] {
                acc += v;
            }
            out.push(acc / hw);
        }
        let rg = self.rg(&[x]);
        Ok(self.out(Op::ChannelMean(x), vec![s.n, s.c, 1, 1], out, rg))
    }

    /// Per-(n, c) population variance; returns NxCx1x1.
    pub fn channel_var(&mut self, x: Var) -> Result<Var> {
        let m = self.channel_mean(x)?;
        let d = self.bc_sub(x, m)?;
        let sq = self.mul(d, d)?;
        self.channel_mean(sq)
    }

    // ---- broadcast binary ----------------------------------------------

    pub fn bc_add(&mut self, x: Var, c: Var) -> Result<Var> {
        self.broadcast(x, c, T::one(), false)
    }

    pub fn bc_sub(&mut self, x: Var, c: Var) -> Result<Var> {
        self.broadcast(x, c, -T::one(), false)
    }

    pub fn bc_mul(&mut self, x: Var, c: Var) -> Result<Var> {
        self.broadcast(x, c, T::one(), true)
    }

    /// x (+|-|*) c where c is a scalar or an NxCx1x1 tensor broadcast over
    /// the spatial extent of a rank-4 x.
    fn broadcast(&mut self, x: Var, c: Var, sign: T, is_mul: bool) -> Result<Var> {
        let plan = BcPlan::of(self.val(x).dims(), self.val(c).dims())?;
        let xd = self.val(x).data();
        let cd = self.val(c).data();
        let mut out = Vec::with_capacity(xd.len());
        for group in 0..plan.groups {
            let cv = cd[group % cd.len()];
            let seg = &xd[group * plan.span..(group + 1) * plan.span];
            if is_mul {
                out.extend(seg.iter().map(|&v| v * cv));
            } else {
                let cv = cv * sign;
                out.extend(seg.iter().map(|&v| v + cv));
            }
        }
        let dims = self.val(x).dims().to_vec();
        let rg = self.rg(&[x, c]);
        let op = if is_mul {
            Op::BcMul(x, c)
        } else {
            Op::BcAdd(x, c, sign)
        };
        Ok(self.out(op, dims, out, rg))
    }

    // ---- linear algebra ---------------------------------------------------

    /// 2-D matrix product: [m x k] * [k x n] -> [m x n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.val(a).dims(), self.val(b).dims());
        if da.len() != 2 || db.len() != 2 || da[1] != db[0] {
            return Err(config_err!("matmul: incompatible shapes {da:?} x {db:?}"));
        }
        let (m, k, n) = (da[0], da[1], db[1]);
        let mut out = vec![T::zero(); m * n];
        gemm::gemm_nn(&mut out, self.val(a).data(), self.val(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.out(Op::MatMul(a, b), vec![m, n], out, rg))
    }

    /// Scaled self outer product `scale * X * X^T` of a C x L matrix
    /// (a 1xCxHxW tensor is viewed as C x (H*W)). Returns C x C.
    pub fn gram(&mut self, x: Var, scale: T) -> Result<Var> {
        let (c, l) = as_matrix(self.val(x).dims())?;
        let mut out = vec![T::zero(); c * c];
        gemm::gemm_nt(&mut out, self.val(x).data(), self.val(x).data(), c, l, c);
        for v in out.iter_mut() {
            *v *= scale;
        }
        let rg = self.rg(&[x]);
        Ok(self.out(Op::Gram(x, scale), vec![c, c], out, rg))
    }

    /// Sum of off-diagonal entries of a square matrix, raw or smoothed-
    /// absolute depending on `mode`. Returns a scalar.
    pub fn offdiag_sum(&mut self, x: Var, mode: CorrelationMode) -> Result<Var> {
        let dims = self.val(x).dims();
        if dims.len() != 2 || dims[0] != dims[1] {
            return Err(config_err!("offdiag_sum: expected square matrix, got {dims:?}"));
        }
        let c = dims[0];
        let data = self.val(x).data();
        let eps = T::from_f64(ABS_SMOOTHING);
        let mut acc = T::zero();
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    let v = data[i * c + j];
                    acc += match mode {
                        CorrelationMode::Signed => v,
                        CorrelationMode::Absolute => (v * v + eps).sqrt(),
                    };
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.out(Op::OffDiagSum(x, mode), Vec::new(), vec![acc], rg))
    }

    // ---- structured ops ---------------------------------------------------

    /// 2-D convolution over NxCxHxW with square odd kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = Nchw::of(self.val(x).dims())?;
        let ws = self.val(w).dims();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(config_err!("conv2d: weight must be OxIxKxK, got {ws:?}"));
        }
        let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
        if k % 2 == 0 {
            return Err(config_err!("conv2d: kernel size {k} must be odd"));
        }
        if stride < 1 {
            return Err(config_err!("conv2d: stride must be >= 1"));
        }
        if c_in != xs.c {
            return Err(config_err!(
                "conv2d: input has {} channels, weight expects {c_in}",
                xs.c
            ));
        }
        if self.val(b).dims() != [c_out] {
            return Err(config_err!(
                "conv2d: bias dims {:?} do not match {c_out} output channels",
                self.val(b).dims()
            ));
        }
        let (ho, wo) = conv_out_size(xs.h, xs.w, k, stride, pad)?;

        let patch = c_in * k * k;
        let l = ho * wo;
        let mut cols = vec![T::zero(); xs.n * patch * l];
        {
            let xd = self.val(x).data();
            for n in 0..xs.n {
                im2col(
                    &xd[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w],
                    xs.c,
                    xs.h,
                    xs.w,
                    k,
                    stride,
                    pad,
                    ho,
                    wo,
                    &mut cols[n * patch * l..(n + 1) * patch * l],
                );
            }
        }

        let mut out = vec![T::zero(); xs.n * c_out * l];
        {
            let wd = self.val(w).data();
            let bd = self.val(b).data();
            for n in 0..xs.n {
                let o = &mut out[n * c_out * l..(n + 1) * c_out * l];
                for co in 0..c_out {
                    o[co * l..(co + 1) * l].fill(bd[co]);
                }
                gemm::gemm_nn(o, wd, &cols[n * patch * l..(n + 1) * patch * l], c_out, patch, l);
            }
        }

        let rg = self.rg(&[x, w, b]);
        let keep_cols = self.val(w).requires_grad;
        let op = Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
            cols: keep_cols.then_some(cols),
        };
        Ok(self.out(op, vec![xs.n, c_out, ho, wo], out, rg))
    }

    /// 2x2 max pooling with stride 2. H and W must be even.
    pub fn maxpool_2x(&mut self, x: Var) -> Result<Var> {
        let s = Nchw::of(self.val(x).dims())?;
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(config_err!(
                "maxpool_2x: spatial size {}x{} must be even",
                s.h,
                s.w
            ));
        }
        let (ho, wo) = (s.h / 2, s.w / 2);
        let data = self.val(x).data();
        let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
        let mut argmax = Vec::with_capacity(out.capacity());
        for nc in 0..s.n * s.c {
            let base = nc * s.h * s.w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i00 = base + (2 * oy) * s.w + 2 * ox;
                    let cand = [i00, i00 + 1, i00 + s.w, i00 + s.w + 1];
                    let mut best = cand[0];
                    for &i in &cand[1..] {
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.out(Op::MaxPool2x(x, argmax), vec![s.n, s.c, ho, wo], out, rg))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let s = Nchw::of(self.val(x).dims())?;
        let (ho, wo) = (s.h * 2, s.w * 2);
        let data = self.val(x).data();
        let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
        for nc in 0..s.n * s.c {
            let base = nc * s.h * s.w;
            for oy in 0..ho {
                let iy = oy / 2;
                for ox in 0..wo {
                    out.push(data[base + iy * s.w + ox / 2]);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.out(Op::Upsample2x(x), vec![s.n, s.c, ho, wo], out, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates `grad` on every tensor
    /// reachable from the loss that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.val(loss).is_scalar() {
            return Err(usage_err!(
                "backward target must be scalar, got dims {:?}",
                self.val(loss).dims()
            ));
        }
        if !self.val(loss).requires_grad {
            return Err(usage_err!(
                "backward target does not depend on any tensor requiring gradients"
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.ix()] = Some(vec![T::one()]);

        for i in (0..=loss.ix()).rev() {
            if grads[i].is_none() || !self.nodes[i].value.requires_grad {
                continue;
            }
            let g = grads[i].take().expect("checked above");
            check_finite(&g).map_err(|_| {
                numerical_err!(
                    "non-finite gradient at node {i} ({})",
                    self.nodes[i].op.name()
                )
            })?;
            self.pullback(i, &g, &mut grads)?;
            self.nodes[i].value.grad = Some(g);
        }
        Ok(())
    }

    /// Apply node `i`'s backward rule, accumulating into its inputs.
    fn pullback(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        // Accumulation helper: allocate on first touch, skip constants.
        macro_rules! sink {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.ix()].value.requires_grad {
                    Some(
                        grads[v.ix()]
                            .get_or_insert_with(|| vec![T::zero(); self.nodes[v.ix()].value.len()]),
                    )
                } else {
                    None
                }
            }};
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Relu(x) => {
                if let Some(gx) = sink!(*x) {
                    let y = self.nodes[i].value.data();
                    for (j, &gv) in g.iter().enumerate() {
                        if y[j] > T::zero() {
                            gx[j] += gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = sink!(*a) {
                    gemm::axpy(ga, T::one(), g);
                }
                if let Some(gb) = sink!(*b) {
                    gemm::axpy(gb, T::one(), g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = sink!(*a) {
                    gemm::axpy(ga, T::one(), g);
                }
                if let Some(gb) = sink!(*b) {
                    gemm::axpy(gb, -T::one(), g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = sink!(*a) {
                    let bd = self.val(*b).data();
                    for j in 0..g.len() {
                        ga[j] += g[j] * bd[j];
                    }
                }
                if let Some(gb) = sink!(*b) {
                    let ad = self.val(*a).data();
                    for j in 0..g.len() {
                        gb[j] += g[j] * ad[j];
                    }
                }
            }
            Op::MulScalar(x, k) => {
                if let Some(gx) = sink!(*x) {
                    gemm::axpy(gx, *k, g);
                }
            }
            Op::AddScalar(x, _) => {
                if let Some(gx) = sink!(*x) {
                    gemm::axpy(gx, T::one(), g);
                }
            }
            Op::Sqrt(x) => {
                if let Some(gx) = sink!(*x) {
                    let y = self.nodes[i].value.data();
                    let half = T::from_f64(0.5);
                    for j in 0..g.len() {
                        // sqrt has unbounded slope at 0; a dead (constant)
                        // channel sits exactly there, so freeze it instead
                        // of emitting infinity.
                        if y[j] > T::zero() {
                            gx[j] += g[j] * half / y[j];
                        }
                    }
                }
            }
            Op::Recip(x) => {
                if let Some(gx) = sink!(*x) {
                    let y = self.nodes[i].value.data();
                    for j in 0..g.len() {
                        gx[j] -= g[j] * y[j] * y[j];
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = sink!(*x) {
                    gemm::axpy(gx, T::one(), g);
                }
            }
            Op::MeanAll(x) => {
                if let Some(gx) = sink!(*x) {
                    let k = g[0] / T::from_usize(gx.len());
                    for v in gx.iter_mut() {
                        *v += k;
                    }
                }
            }
            Op::ChannelMean(x) => {
                if let Some(gx) = sink!(*x) {
                    let span = gx.len() / g.len();
                    let inv = T::one() / T::from_usize(span);
                    for (group, &gv) in g.iter().enumerate() {
                        let k = gv * inv;
                        for v in gx[group * span..(group + 1) * span].iter_mut() {
                            *v += k;
                        }
                    }
                }
            }
            Op::BcAdd(x, c, sign) => {
                if let Some(gx) = sink!(*x) {
                    gemm::axpy(gx, T::one(), g);
                }
                if let Some(gc) = sink!(*c) {
                    let span = g.len() / gc.len();
                    for (group, slot) in gc.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for &gv in &g[group * span..(group + 1) * span] {
                            acc += gv;
                        }
                        *slot += acc * *sign;
                    }
                }
            }
            Op::BcMul(x, c) => {
                let span = g.len() / self.val(*c).len();
                if let Some(gx) = sink!(*x) {
                    let cd = self.val(*c).data();
                    for group in 0..cd.len() {
                        let cv = cd[group];
                        let seg = &g[group * span..(group + 1) * span];
                        gemm::axpy(&mut gx[group * span..(group + 1) * span], cv, seg);
                    }
                }
                if let Some(gc) = sink!(*c) {
                    let xd = self.val(*x).data();
                    for (group, slot) in gc.iter_mut().enumerate() {
                        *slot += gemm::dot(
                            &g[group * span..(group + 1) * span],
                            &xd[group * span..(group + 1) * span],
                        );
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let d = self.val(*a).dims();
                    (d[0], d[1])
                };
                let n = self.val(*b).dims()[1];
                if let Some(ga) = sink!(*a) {
                    gemm::gemm_nt(ga, g, self.val(*b).data(), m, n, k);
                }
                if let Some(gb) = sink!(*b) {
                    gemm::gemm_tn(gb, self.val(*a).data(), g, m, k, n);
                }
            }
            Op::Gram(x, scale) => {
                if let Some(gx) = sink!(*x) {
                    let (c, l) = as_matrix(self.val(*x).dims()).expect("validated at forward");
                    // d/dX of scale * X X^T pulled back through dG:
                    // scale * (dG + dG^T) X.
                    let mut sym = vec![T::zero(); c * c];
                    for r in 0..c {
                        for q in 0..c {
                            sym[r * c + q] = (g[r * c + q] + g[q * c + r]) * *scale;
                        }
                    }
                    gemm::gemm_nn(gx, &sym, self.val(*x).data(), c, c, l);
                }
            }
            Op::OffDiagSum(x, mode) => {
                if let Some(gx) = sink!(*x) {
                    let c = self.val(*x).dims()[0];
                    let xd = self.val(*x).data();
                    let eps = T::from_f64(ABS_SMOOTHING);
                    let gv = g[0];
                    for r in 0..c {
                        for q in 0..c {
                            if r != q {
                                let j = r * c + q;
                                gx[j] += match mode {
                                    CorrelationMode::Signed => gv,
                                    CorrelationMode::Absolute => {
                                        gv * xd[j] / (xd[j] * xd[j] + eps).sqrt()
                                    }
                                };
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let xs = Nchw::of(self.val(*x).dims()).expect("validated at forward");
                let ws = self.val(*w).dims();
                let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
                let od = self.nodes[i].value.dims();
                let (ho, wo) = (od[2], od[3]);
                let (patch, l) = (c_in * k * k, ho * wo);

                if let Some(gb) = sink!(*b) {
                    for n in 0..xs.n {
                        for co in 0..c_out {
                            let seg = &g[(n * c_out + co) * l..(n * c_out + co + 1) * l];
                            let mut acc = T::zero();
                            for &v in seg {
                                acc += v;
                            }
                            gb[co] += acc;
                        }
                    }
                }
                if let Some(gw) = sink!(*w) {
                    let cols = cols.as_ref().expect("cols kept when weight needs grad");
                    for n in 0..xs.n {
                        gemm::gemm_nt(
                            gw,
                            &g[n * c_out * l..(n + 1) * c_out * l],
                            &cols[n * patch * l..(n + 1) * patch * l],
                            c_out,
                            l,
                            patch,
                        );
                    }
                }
                if let Some(gx) = sink!(*x) {
                    let wd = self.val(*w).data();
                    let mut gcols = vec![T::zero(); patch * l];
                    for n in 0..xs.n {
                        gcols.fill(T::zero());
                        gemm::gemm_tn(
                            &mut gcols,
                            wd,
                            &g[n * c_out * l..(n + 1) * c_out * l],
                            c_out,
                            patch,
                            l,
                        );
                        col2im_acc(
                            &gcols,
                            xs.c,
                            xs.h,
                            xs.w,
                            k,
                            *stride,
                            *pad,
                            ho,
                            wo,
                            &mut gx[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w],
                        );
                    }
                }
            }
            Op::MaxPool2x(x, argmax) => {
                if let Some(gx) = sink!(*x) {
                    for (j, &gv) in g.iter().enumerate() {
                        gx[argmax[j] as usize] += gv;
                    }
                }
            }
            Op::Upsample2x(x) => {
                if let Some(gx) = sink!(*x) {
                    let s = Nchw::of(self.val(*x).dims()).expect("validated at forward");
                    let (ho, wo) = (s.h * 2, s.w * 2);
                    for nc in 0..s.n * s.c {
                        let obase = nc * ho * wo;
                        let ibase = nc * s.h * s.w;
                        for oy in 0..ho {
                            let irow = ibase + (oy / 2) * s.w;
                            let orow = obase + oy * wo;
                            for ox in 0..wo {
                                gx[irow + ox / 2] += g[orow + ox];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// View dims as a (rows, cols) matrix: rank-2 as-is, rank-4 with N=1 as
/// C x (H*W).
fn as_matrix(dims: &[usize]) -> Result<(usize, usize)> {
    match dims.len() {
        2 => Ok((dims[0], dims[1])),
        4 if dims[0] == 1 => Ok((dims[1], dims[2] * dims[3])),
        _ => Err(config_err!(
            "expected C x L matrix or 1xCxHxW tensor, got {dims:?}"
        )),
    }
}

pub(crate) fn conv_out_size(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let span_h = (h + 2 * pad).checked_sub(k);
    let span_w = (w + 2 * pad).checked_sub(k);
    let (span_h, span_w) = match (span_h, span_w) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(config_err!(
                "conv2d: kernel {k} larger than padded input {h}x{w} (pad {pad})"
            ))
        }
    };
    if span_h % stride != 0 || span_w % stride != 0 {
        return Err(config_err!(
            "conv2d: non-integral output size for input {h}x{w}, kernel {k}, stride {stride}, pad {pad}"
        ));
    }
    Ok((span_h / stride + 1, span_w / stride + 1))
}

/// Broadcast layout: `groups` leading groups of contiguous `span` elements,
/// one rhs element per group.
struct BcPlan {
    groups: usize,
    span: usize,
}

impl BcPlan {
    fn of(x: &[usize], c: &[usize]) -> Result<Self> {
        let xn: usize = x.iter().product();
        let cn: usize = c.iter().product();
        if cn == 1 {
            return Ok(BcPlan { groups: 1, span: xn });
        }
        if x.len() == 4 && c.len() == 4 && c[0] == x[0] && c[1] == x[1] && c[2] == 1 && c[3] == 1 {
            return Ok(BcPlan {
                groups: x[0] * x[1],
                span: x[2] * x[3],
            });
        }
        Err(config_err!(
            "broadcast: rhs {c:?} does not broadcast over {x:?} (scalar or NxCx1x1 expected)"
        ))
    }
}

fn check_finite<T: Element>(xs: &[T]) -> core::result::Result<(), ()> {
    let mut acc = T::zero();
    for &x in xs {
        acc += x;
    }
    if acc.is_finite() {
        Ok(())
    } else {
        Err(())
    }
}

fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let l = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * l;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // ix = ox + kx - pad: one contiguous copy with zero fringes.
                        let off = kx as isize - pad as isize;
                        let lo = (-off).max(0) as usize;
                        let hi = (w as isize - off).clamp(0, wo as isize) as usize;
                        dst[..lo.min(wo)].fill(T::zero());
                        if hi > lo {
                            dst[lo..hi]
                                .copy_from_slice(&src_row[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                        }
                        dst[hi.max(lo)..].fill(T::zero());
                    } else {
                        for (ox, slot) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *slot = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [T],
) {
    let l = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * l;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        let off = kx as isize - pad as isize;
                        let lo = (-off).max(0) as usize;
                        let hi = (w as isize - off).clamp(0, wo as isize) as usize;
                        if hi > lo {
                            gemm::axpy(
                                &mut dst_row[(lo as isize + off) as usize..(hi as isize + off) as usize],
                                T::one(),
                                &src[lo..hi],
                            );
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn tensor(dims: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_matches_definition() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.upsample_nearest_2x(x).unwrap();
        assert_eq!(tape.value(y).dims(), &[1, 1, 4, 4]);
        assert_eq!(
            tape.value(y).data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn reduce_var_uses_population_convention() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[2], &[0.0, 2.0]));
        let v = tape.reduce_var(x).unwrap();
        assert!((tape.value(v).item() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let mut tape = Tape::<f32>::new();
        let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let x = tape.leaf(tensor(&[1, 1, 4, 4], &data));
        let w = tape.leaf(tensor(&[1, 1, 1, 1], &[1.0]));
        let b = tape.leaf(tensor(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), data.as_slice());
    }

    #[test]
    fn conv_averaging_constant_keeps_interior_value() {
        let mut tape = Tape::<f32>::new();
        let v = 3.25f32;
        let x = tape.leaf(tensor(&[1, 1, 5, 5], &[v; 25]));
        let w = tape.leaf(tensor(&[1, 1, 3, 3], &[1.0 / 9.0; 9]));
        let b = tape.leaf(tensor(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(tape.value(y).dims(), &[1, 1, 5, 5]);
        let out = tape.value(y).data();
        for yy in 1..4 {
            for xx in 1..4 {
                assert!((out[yy * 5 + xx] - v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_rejects_non_integral_output() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 6, 6]));
        let w = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.leaf(Tensor::zeros(&[1]));
        // (6 - 3) is not divisible by stride 2.
        let err = tape.conv2d(x, w, b, 2, 0).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[4], &[0.5, -1.0, 2.0, 3.0]).with_grad());
        let m = tape.reduce_mean(x);
        let s = tape.mul_scalar(m, 4.0); // sum = mean * n
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_quadratic_doubles_input() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0]).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let m = tape.reduce_mean(sq);
        let s = tape.mul_scalar(m, 2.0);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0]).with_grad());
        let y = tape.relu(x);
        let err = tape.backward(y).unwrap_err();
        assert!(matches!(err, crate::Error::Usage(_)));
    }

    #[test]
    fn backward_reports_non_finite_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[1], &[0.0]).with_grad());
        let r = tape.recip(x); // 1/0 -> inf value, -inf^2 grad
        let s = tape.reduce_mean(r);
        let err = tape.backward(s).unwrap_err();
        assert!(matches!(err, crate::Error::Numerical(_)));
    }

    #[test]
    fn maxpool_takes_window_maxima() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(
            &[1, 1, 2, 4],
            &[1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 7.0, 2.0],
        ));
        let y = tape.maxpool_2x(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 7.0]);
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0]).with_grad());
        let c = tape.leaf(tensor(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.reduce_mean(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.5, 2.0]);
    }

    #[test]
    fn gram_of_orthogonal_rows_is_diagonal() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(tensor(&[2, 2], &[1.0, 1.0, 1.0, -1.0]));
        // scale 1/(C*H*W) with C=2, L=2 -> 1/4
        let g = tape.gram(x, 0.25).unwrap();
        assert_eq!(tape.value(g).data(), &[0.5, 0.0, 0.0, 0.5]);
    }
}
