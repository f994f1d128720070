//! Reverse-mode differentiation over a flat operation tape.
//!
//! A [`Graph`] records primitive operations as they execute. Node indices are
//! handed out in execution order, so the tape is already topologically sorted
//! and `backward` is a single reverse sweep. `backward` consumes the graph:
//! gradients are moved out and the tape is dropped.
//!
//! Reductions (convolution dot products, loss sums) accumulate in `f64`.

use super::tensor::Tensor;
use super::NumericsError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Variance head clamp bounds: `var = clamp(exp(raw), VAR_MIN, VAR_MAX)`.
pub const VAR_MIN: f64 = 1e-3;
pub const VAR_MAX: f64 = 1e3;

const LN_TWO_PI: f64 = 1.8378770664093453;

enum Op {
    Leaf,
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        dilation: usize,
        causal: bool,
    },
    BiasAdd {
        input: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    /// Splits `2C x T` into halves, outputs `tanh(top) * sigmoid(bottom)`.
    GatedTanh {
        input: NodeId,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    UpsampleRepeat {
        input: NodeId,
        factor: usize,
    },
    ConcatChannels {
        lhs: NodeId,
        rhs: NodeId,
    },
    /// Mean over `rows x T` of `0.5 [ln(2 pi var) + (x - mean)^2 / var]`,
    /// with `var = clamp(exp(raw), VAR_MIN, VAR_MAX)`. `target` is constant.
    GaussianNll {
        mean: NodeId,
        raw_var: NodeId,
        target: Tensor,
        rows: Vec<usize>,
    },
    /// `mean_t || z_t - z_{t-1} ||^2` over columns of a `C x T` tensor.
    Slowness {
        input: NodeId,
    },
    /// `mean_t max(0, || z_t ||^2 - threshold)`.
    Margin {
        input: NodeId,
        threshold: f64,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    AddScalars {
        inputs: Vec<NodeId>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients harvested from a backward pass, indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or a zero tensor of the given shape when the node
    /// did not influence the loss.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Operation tape holding forward values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Output length of a 1-D convolution.
///
/// Valid mode spans `(k - 1) * dilation + 1` inputs; causal mode left-pads
/// `(k - 1) * dilation` zeros so an unstrided convolution preserves length.
pub fn conv1d_out_len(t: usize, k: usize, stride: usize, dilation: usize, causal: bool) -> usize {
    let span = (k - 1) * dilation + 1;
    if causal {
        if t == 0 {
            0
        } else {
            (t - 1) / stride + 1
        }
    } else if t < span {
        0
    } else {
        (t - span) / stride + 1
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite op output");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a constant or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        assert!(value.is_finite(), "non-finite leaf tensor");
        self.push(value, Op::Leaf)
    }

    /// Strided / dilated 1-D convolution of `input` (`C_in x T`) with
    /// `kernel` (`C_out x C_in x k`).
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        dilation: usize,
        causal: bool,
    ) -> NodeId {
        assert!(stride >= 1 && dilation >= 1);
        let x = self.value(input);
        let w = self.value(kernel);
        assert_eq!(x.rank(), 2, "conv1d input must be C_in x T");
        assert_eq!(w.rank(), 3, "conv1d kernel must be C_out x C_in x k");
        let (c_in, t) = (x.shape()[0], x.shape()[1]);
        let (c_out, k_cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(c_in, k_cin, "conv1d channel mismatch: input {c_in}, kernel {k_cin}");
        let t_out = conv1d_out_len(t, k, stride, dilation, causal);
        let pad = if causal { (k - 1) * dilation } else { 0 };

        let mut out = Tensor::zeros(&[c_out, t_out]);
        if t_out > 0 {
            let mut acc = vec![0.0f64; t_out];
            for co in 0..c_out {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ci in 0..c_in {
                    let xin = x.row(ci);
                    for j in 0..k {
                        let wv = w.data()[(co * c_in + ci) * k + j];
                        let off = j * dilation;
                        accumulate_conv_tap(&mut acc, xin, wv, stride, off, pad);
                    }
                }
                out.row_mut(co).copy_from_slice(&acc);
            }
        }
        self.push(
            out,
            Op::Conv1d {
                input,
                kernel,
                stride,
                dilation,
                causal,
            },
        )
    }

    /// Add a per-channel bias (`C`) to a `C x T` tensor.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> NodeId {
        let x = self.value(input);
        let b = self.value(bias);
        assert_eq!(x.rank(), 2);
        assert_eq!(b.rank(), 1);
        assert_eq!(x.rows(), b.len(), "bias length must match channels");
        let mut out = x.clone();
        for c in 0..out.rows() {
            let bv = b.data()[c];
            for v in out.row_mut(c) {
                *v += bv;
            }
        }
        self.push(out, Op::BiasAdd { input, bias })
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu { input })
    }

    /// Gated activation: input `2C x T`, output `tanh(x[..C]) * sigmoid(x[C..])`.
    pub fn gated_tanh(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        assert_eq!(x.rank(), 2);
        let c2 = x.rows();
        assert!(c2 % 2 == 0, "gated_tanh needs an even channel count");
        let c = c2 / 2;
        let t = x.cols();
        let mut out = Tensor::zeros(&[c, t]);
        for ch in 0..c {
            let top = x.row(ch);
            let bot = x.row(c + ch);
            let dst = out.row_mut(ch);
            for i in 0..t {
                dst[i] = top[i].tanh() * sigmoid(bot[i]);
            }
        }
        self.push(out, Op::GatedTanh { input })
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> NodeId {
        let a = self.value(lhs);
        let b = self.value(rhs);
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let mut out = a.clone();
        for (o, bv) in out.data_mut().iter_mut().zip(b.data()) {
            *o += bv;
        }
        self.push(out, Op::Add { lhs, rhs })
    }

    /// Nearest-neighbor repetition along time: `C x T -> C x (T * factor)`.
    pub fn upsample_repeat(&mut self, input: NodeId, factor: usize) -> NodeId {
        assert!(factor >= 1);
        let x = self.value(input);
        assert_eq!(x.rank(), 2);
        let (c, t) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(&[c, t * factor]);
        for ch in 0..c {
            let src = x.row(ch);
            let dst = out.row_mut(ch);
            for i in 0..t {
                for r in 0..factor {
                    dst[i * factor + r] = src[i];
                }
            }
        }
        self.push(out, Op::UpsampleRepeat { input, factor })
    }

    /// Concatenate two `_ x T` tensors along the channel axis.
    pub fn concat_channels(&mut self, lhs: NodeId, rhs: NodeId) -> NodeId {
        let a = self.value(lhs);
        let b = self.value(rhs);
        assert_eq!(a.rank(), 2);
        assert_eq!(b.rank(), 2);
        assert_eq!(a.cols(), b.cols(), "concat time mismatch");
        let out = Tensor::vstack(&[a, b]);
        self.push(out, Op::ConcatChannels { lhs, rhs })
    }

    /// Gaussian negative log-likelihood of `target` under per-element
    /// `N(mean, clamp(exp(raw_var), VAR_MIN, VAR_MAX))`, averaged over the
    /// selected rows and all time steps. Returns a scalar node.
    pub fn gaussian_nll(
        &mut self,
        mean: NodeId,
        raw_var: NodeId,
        target: &Tensor,
        rows: &[usize],
    ) -> Result<NodeId, NumericsError> {
        let m = self.value(mean);
        let r = self.value(raw_var);
        if m.shape() != target.shape() || r.shape() != target.shape() {
            return Err(NumericsError::ShapeMismatch(format!(
                "gaussian_nll: mean {:?}, raw_var {:?}, target {:?}",
                m.shape(),
                r.shape(),
                target.shape()
            )));
        }
        if !target.is_finite() || !m.is_finite() || !r.is_finite() {
            return Err(NumericsError::NonFinite("gaussian_nll input".into()));
        }
        if rows.is_empty() {
            return Ok(self.push(
                Tensor::scalar(0.0),
                Op::GaussianNll {
                    mean,
                    raw_var,
                    target: target.clone(),
                    rows: Vec::new(),
                },
            ));
        }
        let t = target.cols();
        let n = (rows.len() * t) as f64;
        let mut total = 0.0f64;
        for &row in rows {
            let xs = target.row(row);
            let ms = m.row(row);
            let rs = r.row(row);
            for i in 0..t {
                let var = rs[i].exp().clamp(VAR_MIN, VAR_MAX);
                let resid = xs[i] - ms[i];
                total += 0.5 * ((LN_TWO_PI + var.ln()) + resid * resid / var);
            }
        }
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::GaussianNll {
                mean,
                raw_var,
                target: target.clone(),
                rows: rows.to_vec(),
            },
        ))
    }

    /// Temporal smoothness penalty on a latent `C x T`: mean over transitions
    /// of the squared step norm.
    pub fn slowness_penalty(&mut self, input: NodeId) -> NodeId {
        let z = self.value(input);
        assert_eq!(z.rank(), 2);
        let (c, t) = (z.rows(), z.cols());
        let mut total = 0.0f64;
        if t >= 2 {
            for ch in 0..c {
                let row = z.row(ch);
                for i in 1..t {
                    let d = row[i] - row[i - 1];
                    total += d * d;
                }
            }
            total /= (t - 1) as f64;
        }
        self.push(Tensor::scalar(total), Op::Slowness { input })
    }

    /// Latent norm penalty: mean over time of `max(0, ||z_t||^2 - threshold)`.
    pub fn margin_penalty(&mut self, input: NodeId, threshold: f64) -> NodeId {
        let z = self.value(input);
        assert_eq!(z.rank(), 2);
        let (c, t) = (z.rows(), z.cols());
        let mut total = 0.0f64;
        for i in 0..t {
            let mut norm2 = 0.0f64;
            for ch in 0..c {
                let v = z.row(ch)[i];
                norm2 += v * v;
            }
            if norm2 > threshold {
                total += norm2 - threshold;
            }
        }
        self.push(
            Tensor::scalar(total / t as f64),
            Op::Margin { input, threshold },
        )
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            *v *= factor;
        }
        self.push(out, Op::Scale { input, factor })
    }

    /// Sum of scalar nodes.
    pub fn add_scalars(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty());
        let mut total = 0.0f64;
        for &id in inputs {
            total += self.value(id).item();
        }
        self.push(
            Tensor::scalar(total),
            Op::AddScalars {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar loss node. Consumes the tape; gradients
    /// for every node that influenced the loss are returned.
    pub fn backward(self, loss: NodeId) -> Result<Gradients, NumericsError> {
        if loss.0 >= self.nodes.len() {
            return Err(NumericsError::BackwardBeforeForward);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(NumericsError::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !loss_value.is_finite() {
            return Err(NumericsError::NonFinite("loss".into()));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                }
                Op::Conv1d {
                    input,
                    kernel,
                    stride,
                    dilation,
                    causal,
                } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[kernel.0].value;
                    let (c_in, t) = (x.shape()[0], x.shape()[1]);
                    let (c_out, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                    let pad = if *causal { (k - 1) * dilation } else { 0 };

                    let mut gx = take_or_zeros(&mut grads[input.0], x.shape());
                    let mut gw = take_or_zeros(&mut grads[kernel.0], w.shape());
                    for co in 0..c_out {
                        let go = gout.row(co);
                        for ci in 0..c_in {
                            let xin = x.row(ci);
                            let gxr = gx.row_mut(ci);
                            for j in 0..k {
                                let off = j * dilation;
                                let wv = w.data()[(co * c_in + ci) * k + j];
                                let dot = scatter_conv_tap(gxr, go, wv, *stride, off, pad, xin, t);
                                gw.data_mut()[(co * c_in + ci) * k + j] += dot;
                            }
                        }
                    }
                    grads[input.0] = Some(gx);
                    grads[kernel.0] = Some(gw);
                }
                Op::BiasAdd { input, bias } => {
                    let bshape = self.nodes[bias.0].value.shape().to_vec();
                    let mut gb = take_or_zeros(&mut grads[bias.0], &bshape);
                    for c in 0..gout.rows() {
                        let mut acc = 0.0f64;
                        for v in gout.row(c) {
                            acc += v;
                        }
                        gb.data_mut()[c] += acc;
                    }
                    grads[bias.0] = Some(gb);
                    accumulate(&mut grads[input.0], &gout);
                }
                Op::Relu { input } => {
                    let x = &self.nodes[input.0].value;
                    let mut gx = gout.clone();
                    for (g, xv) in gx.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads[input.0], &gx);
                }
                Op::GatedTanh { input } => {
                    let x = &self.nodes[input.0].value;
                    let c = x.rows() / 2;
                    let t = x.cols();
                    let mut gx = take_or_zeros(&mut grads[input.0], x.shape());
                    for ch in 0..c {
                        let top = x.row(ch);
                        let bot = x.row(c + ch);
                        let go = gout.row(ch);
                        for i in 0..t {
                            let th = top[i].tanh();
                            let sg = sigmoid(bot[i]);
                            gx.row_mut(ch)[i] += go[i] * (1.0 - th * th) * sg;
                            gx.row_mut(c + ch)[i] += go[i] * th * sg * (1.0 - sg);
                        }
                    }
                    grads[input.0] = Some(gx);
                }
                Op::Add { lhs, rhs } => {
                    accumulate(&mut grads[lhs.0], &gout);
                    accumulate(&mut grads[rhs.0], &gout);
                }
                Op::UpsampleRepeat { input, factor } => {
                    let x = &self.nodes[input.0].value;
                    let (c, t) = (x.rows(), x.cols());
                    let mut gx = take_or_zeros(&mut grads[input.0], x.shape());
                    for ch in 0..c {
                        let go = gout.row(ch);
                        let gr = gx.row_mut(ch);
                        for i in 0..t {
                            let mut acc = 0.0f64;
                            for r in 0..*factor {
                                acc += go[i * factor + r];
                            }
                            gr[i] += acc;
                        }
                    }
                    grads[input.0] = Some(gx);
                }
                Op::ConcatChannels { lhs, rhs } => {
                    let a_rows = self.nodes[lhs.0].value.rows();
                    let cols = gout.cols();
                    let mut ga = Tensor::zeros(&[a_rows, cols]);
                    let mut gb = Tensor::zeros(&[gout.rows() - a_rows, cols]);
                    ga.data_mut()
                        .copy_from_slice(&gout.data()[..a_rows * cols]);
                    gb.data_mut()
                        .copy_from_slice(&gout.data()[a_rows * cols..]);
                    accumulate(&mut grads[lhs.0], &ga);
                    accumulate(&mut grads[rhs.0], &gb);
                }
                Op::GaussianNll {
                    mean,
                    raw_var,
                    target,
                    rows,
                } => {
                    if rows.is_empty() {
                        continue;
                    }
                    let g = gout.item();
                    let m = &self.nodes[mean.0].value;
                    let r = &self.nodes[raw_var.0].value;
                    let t = target.cols();
                    let n = (rows.len() * t) as f64;
                    let mut gm = take_or_zeros(&mut grads[mean.0], m.shape());
                    let mut gr = take_or_zeros(&mut grads[raw_var.0], r.shape());
                    for &row in rows {
                        let xs = target.row(row);
                        for i in 0..t {
                            let raw = r.row(row)[i];
                            let var = raw.exp().clamp(VAR_MIN, VAR_MAX);
                            let resid = xs[i] - m.row(row)[i];
                            gm.row_mut(row)[i] += g * (-resid / var) / n;
                            // clamp saturates the variance path
                            if raw.exp() > VAR_MIN && raw.exp() < VAR_MAX {
                                gr.row_mut(row)[i] +=
                                    g * 0.5 * (1.0 - resid * resid / var) / n;
                            }
                        }
                    }
                    grads[mean.0] = Some(gm);
                    grads[raw_var.0] = Some(gr);
                }
                Op::Slowness { input } => {
                    let z = &self.nodes[input.0].value;
                    let (c, t) = (z.rows(), z.cols());
                    if t < 2 {
                        continue;
                    }
                    let g = gout.item() * 2.0 / (t - 1) as f64;
                    let mut gz = take_or_zeros(&mut grads[input.0], z.shape());
                    for ch in 0..c {
                        let row = z.row(ch);
                        let gr = gz.row_mut(ch);
                        for i in 1..t {
                            let d = row[i] - row[i - 1];
                            gr[i] += g * d;
                            gr[i - 1] -= g * d;
                        }
                    }
                    grads[input.0] = Some(gz);
                }
                Op::Margin { input, threshold } => {
                    let z = &self.nodes[input.0].value;
                    let (c, t) = (z.rows(), z.cols());
                    let g = gout.item() * 2.0 / t as f64;
                    let mut gz = take_or_zeros(&mut grads[input.0], z.shape());
                    for i in 0..t {
                        let mut norm2 = 0.0f64;
                        for ch in 0..c {
                            let v = z.row(ch)[i];
                            norm2 += v * v;
                        }
                        if norm2 > *threshold {
                            for ch in 0..c {
                                gz.row_mut(ch)[i] += g * z.row(ch)[i];
                            }
                        }
                    }
                    grads[input.0] = Some(gz);
                }
                Op::Scale { input, factor } => {
                    let mut gx = gout.clone();
                    for v in gx.data_mut() {
                        *v *= factor;
                    }
                    accumulate(&mut grads[input.0], &gx);
                }
                Op::AddScalars { inputs } => {
                    for &id in inputs {
                        accumulate(&mut grads[id.0], &gout);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn take_or_zeros(slot: &mut Option<Tensor>, shape: &[usize]) -> Tensor {
    slot.take().unwrap_or_else(|| Tensor::zeros(shape))
}

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g.clone()),
    }
}

/// Forward tap: `acc[t] += w * x[t * stride + off - pad]` for in-range `t`.
fn accumulate_conv_tap(acc: &mut [f64], x: &[f64], w: f64, stride: usize, off: usize, pad: usize) {
    let t_len = x.len();
    let Some((t_lo, base)) = tap_range(acc.len(), t_len, stride, off, pad) else {
        return;
    };
    if stride == 1 {
        let src = &x[base..];
        let dst = &mut acc[t_lo..];
        let n = dst.len().min(src.len());
        for i in 0..n {
            dst[i] += w * src[i];
        }
    } else {
        let mut idx = base;
        for a in acc[t_lo..].iter_mut() {
            if idx >= t_len {
                break;
            }
            *a += w * x[idx];
            idx += stride;
        }
    }
}

/// Backward tap: scatters `w * gout[t]` into `gx` and returns the kernel-tap
/// gradient `sum_t gout[t] * x[idx(t)]`.
fn scatter_conv_tap(
    gx: &mut [f64],
    gout: &[f64],
    w: f64,
    stride: usize,
    off: usize,
    pad: usize,
    x: &[f64],
    t_len: usize,
) -> f64 {
    let Some((t_lo, base)) = tap_range(gout.len(), t_len, stride, off, pad) else {
        return 0.0;
    };
    let mut dot = 0.0f64;
    if stride == 1 {
        let go = &gout[t_lo..];
        let n = go.len().min(t_len - base);
        let gxs = &mut gx[base..base + n];
        let xs = &x[base..base + n];
        for i in 0..n {
            gxs[i] += w * go[i];
            dot += go[i] * xs[i];
        }
    } else {
        let mut idx = base;
        for g in gout[t_lo..].iter() {
            if idx >= t_len {
                break;
            }
            gx[idx] += w * g;
            dot += g * x[idx];
            idx += stride;
        }
    }
    dot
}

/// First output index with an in-range input for this tap, and that input
/// index, or `None` when every output position falls on padding.
fn tap_range(
    out_len: usize,
    t_len: usize,
    stride: usize,
    off: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    let (t_lo, base) = if off >= pad {
        (0, off - pad)
    } else {
        let t_lo = (pad - off).div_ceil(stride);
        (t_lo, t_lo * stride + off - pad)
    };
    if t_lo >= out_len || base >= t_len {
        None
    } else {
        Some((t_lo, base))
    }
}
