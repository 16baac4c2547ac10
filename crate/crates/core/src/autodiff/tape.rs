//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op appends a node
//! holding its forward value plus whatever it needs for the backward sweep;
//! [`Tape::backward`] then walks the nodes in reverse order.

use crate::error::{MfamError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

/// Pooling extent: the whole time axis, or sliding windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolSpan {
    Global,
    Windowed { window: usize, stride: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    Softmax {
        x: Var,
    },
    Pool {
        x: Var,
        mode: PoolMode,
        window: usize,
        stride: usize,
        // flat input index chosen per output element (max mode only)
        argmax: Vec<usize>,
    },
    CrossEntropy {
        x: Var,
        label: usize,
        probs: Vec<f64>,
    },
    GradReverse {
        x: Var,
        lambda: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Sum {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    ScaleRows {
        x: Var,
        w: Var,
    },
    Outer {
        a: Var,
        b: Var,
    },
    WeightedRowSum {
        z: Var,
        a: Var,
    },
    MeanRows {
        z: Var,
    },
    TopKGate {
        a: Var,
        kept: Vec<usize>,
        kept_sum: f64,
    },
    Reshape {
        x: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], one slot per tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Nodes the loss does not
    /// depend on report an all-zero tensor of the node's shape.
    pub fn get(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.grads[v.0].shape().to_vec();
        std::mem::replace(&mut self.grads[v.0], Tensor::zeros(&shape))
    }
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(MfamError::Shape(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Dilated 1-D convolution with zero same-padding.
    ///
    /// `x` is `[Cin, T]`, `w` is `[Cout, Cin, k]` with odd `k`, `b` is
    /// `[Cout]`; the result is `[Cout, T]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ndim() != 2 || wv.ndim() != 3 || bv.ndim() != 1 {
            return shape_err(format!(
                "conv1d expects x [Cin,T], w [Cout,Cin,k], b [Cout]; got {:?}, {:?}, {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            ));
        }
        let (cin, t) = (xv.shape()[0], xv.shape()[1]);
        let (cout, wcin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wcin != cin {
            return shape_err(format!(
                "conv1d input has {cin} channels but kernel expects {wcin}"
            ));
        }
        if bv.len() != cout {
            return shape_err(format!("conv1d bias length {} != {cout}", bv.len()));
        }
        if k % 2 == 0 {
            return shape_err(format!("conv1d kernel size must be odd, got {k}"));
        }
        if dilation == 0 {
            return shape_err("conv1d dilation must be positive".into());
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; cout * t];
        for c in 0..cout {
            let y = &mut out[c * t..(c + 1) * t];
            y.fill(bd[c]);
            for i in 0..cin {
                let xr = &xd[i * t..(i + 1) * t];
                for j in 0..k {
                    let wv = wd[(c * cin + i) * k + j];
                    let off = (j as isize - (k / 2) as isize) * dilation as isize;
                    let (lo, hi) = valid_range(t, off);
                    if lo >= hi {
                        continue;
                    }
                    let xs = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (yv, xv) in y[lo..hi].iter_mut().zip(xs) {
                        *yv += wv * xv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![cout, t], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, dilation }))
    }

    /// `y = W x + b`. `x` may be a vector `[n]` or a batch of rows `[N, n]`,
    /// giving `[m]` or `[N, m]` for `W` of shape `[m, n]`. The bias is
    /// optional.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.ndim() != 2 || xv.ndim() > 2 {
            return shape_err(format!(
                "linear expects w [m,n] and x [n] or [N,n]; got {:?}, {:?}",
                wv.shape(),
                xv.shape()
            ));
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != n {
            return shape_err(format!(
                "linear inner dimension mismatch: w is {m}x{n}, x has {} columns",
                xv.cols()
            ));
        }
        let rows = if xv.ndim() == 2 { xv.rows() } else { 1 };
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.ndim() != 1 || bv.len() != m {
                    return shape_err(format!("linear bias {:?} != [{m}]", bv.shape()));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xd[r * n..(r + 1) * n];
            for o in 0..m {
                let wr = &wd[o * n..(o + 1) * n];
                out[r * m + o] = dot(wr, xr) + bias.map_or(0.0, |b| b[o]);
            }
        }
        let shape = if xv.ndim() == 2 { vec![rows, m] } else { vec![m] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// `W x + b` for a single vector.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.value(x).ndim() != 1 {
            return shape_err(format!(
                "affine expects a vector input, got {:?}",
                self.value(x).shape()
            ));
        }
        self.linear(x, w, Some(b))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let f: fn(f64) -> f64 = match kind {
            Activation::Tanh => f64::tanh,
            Activation::Sigmoid => sigmoid,
            Activation::Relu => |v| v.max(0.0),
        };
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Activation { x, kind })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    /// Softmax over all elements (use on vectors).
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = softmax_slice(xv.data());
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax { x })
    }

    /// Mean or max pooling along the time axis of a `[C, T]` input.
    ///
    /// Global pooling yields `[C]`. Windowed pooling yields `[N, C]` with
    /// `N = (T - window) / stride + 1`, one row per window. Max pooling
    /// routes the gradient to the first maximal element.
    pub fn pool(&mut self, x: Var, mode: PoolMode, span: PoolSpan) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return shape_err(format!("pool expects [C,T], got {:?}", xv.shape()));
        }
        let (c, t) = (xv.shape()[0], xv.shape()[1]);
        let (window, stride) = match span {
            PoolSpan::Global => (t, t),
            PoolSpan::Windowed { window, stride } => {
                if window == 0 || stride == 0 {
                    return shape_err("pool window and stride must be positive".into());
                }
                if window > t {
                    return Err(MfamError::WindowExceedsSequence { window, len: t });
                }
                (window, stride)
            }
        };
        let n = (t - window) / stride + 1;
        let xd = xv.data();
        let mut out = vec![0.0; n * c];
        let mut argmax = Vec::new();
        if mode == PoolMode::Max {
            argmax = vec![0; n * c];
        }
        for wi in 0..n {
            let start = wi * stride;
            for ch in 0..c {
                let seg = &xd[ch * t + start..ch * t + start + window];
                let o = wi * c + ch;
                match mode {
                    PoolMode::Mean => out[o] = seg.iter().sum::<f64>() / window as f64,
                    PoolMode::Max => {
                        let mut best = 0;
                        for (j, &v) in seg.iter().enumerate() {
                            if v > seg[best] {
                                best = j;
                            }
                        }
                        out[o] = seg[best];
                        argmax[o] = ch * t + start + best;
                    }
                }
            }
        }
        let shape = match span {
            PoolSpan::Global => vec![c],
            PoolSpan::Windowed { .. } => vec![n, c],
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Pool {
                x,
                mode,
                window,
                stride,
                argmax,
            },
        ))
    }

    /// `-log softmax(logits)[label]` as a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        let k = lv.len();
        if label >= k {
            return Err(MfamError::Index { index: label, len: k });
        }
        let probs = softmax_slice(lv.data());
        let loss = neg_log_softmax(lv.data(), label);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                x: logits,
                label,
                probs,
            },
        ))
    }

    /// Identity on the forward pass; scales the incoming gradient by
    /// `-lambda` on the backward pass.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(MfamError::Domain(format!(
                "gradient reversal strength must be finite and >= 0, got {lambda}"
            )));
        }
        let value = self.value(x).clone();
        Ok(self.push(value, Op::GradReverse { x, lambda }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return shape_err(format!("add: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return shape_err(format!("mul: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { x, c })
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Concatenates 2-D tensors with equal column counts along axis 0.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| MfamError::shape("concat of zero tensors"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.ndim() != 2 || v.cols() != cols {
                return shape_err(format!(
                    "concat_rows: part {:?} incompatible with {cols} columns",
                    v.shape()
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Multiplies row `c` of a `[C, T]` tensor by `w[c]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 2 || wv.ndim() != 1 || wv.len() != xv.rows() {
            return shape_err(format!(
                "scale_rows: x {:?} with weights {:?}",
                xv.shape(),
                wv.shape()
            ));
        }
        let t = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, &s) in data.chunks_mut(t).zip(wv.data()) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ScaleRows { x, w }))
    }

    /// Row-major vectorized outer product: `out[i * m + j] = a[i] * b[j]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 1 || bv.ndim() != 1 {
            return shape_err(format!(
                "outer expects vectors, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let mut data = Vec::with_capacity(av.len() * bv.len());
        for &x in av.data() {
            data.extend(bv.data().iter().map(|y| x * y));
        }
        let value = Tensor::vector(data);
        Ok(self.push(value, Op::Outer { a, b }))
    }

    /// `Σ_i a[i] · z[i, :]` for `z` of shape `[N, D]` and `a` of length N.
    pub fn weighted_row_sum(&mut self, z: Var, a: Var) -> Result<Var> {
        let (zv, av) = (self.value(z), self.value(a));
        if zv.ndim() != 2 || av.ndim() != 1 || av.len() != zv.rows() {
            return shape_err(format!(
                "weighted_row_sum: z {:?} with weights {:?}",
                zv.shape(),
                av.shape()
            ));
        }
        let d = zv.cols();
        let mut out = vec![0.0; d];
        for (row, &w) in zv.data().chunks(d).zip(av.data()) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedRowSum { z, a }))
    }

    /// Column means of an `[N, D]` tensor.
    pub fn mean_rows(&mut self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        if zv.ndim() != 2 {
            return shape_err(format!("mean_rows expects [N,D], got {:?}", zv.shape()));
        }
        let (n, d) = (zv.rows(), zv.cols());
        let mut out = vec![0.0; d];
        for row in zv.data().chunks(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        Ok(self.push(Tensor::vector(out), Op::MeanRows { z }))
    }

    /// Keeps the `k = min(N, ceil(ratio * N))` largest weights of `a`
    /// (lower index wins ties), zeroes the rest and renormalizes the kept
    /// entries to sum to one. Gradients flow through kept entries only.
    pub fn topk_gate(&mut self, a: Var, ratio: f64) -> Result<Var> {
        let av = self.value(a);
        if av.ndim() != 1 {
            return shape_err(format!("topk_gate expects a vector, got {:?}", av.shape()));
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(MfamError::Domain(format!(
                "top-k ratio must lie in (0, 1], got {ratio}"
            )));
        }
        let kept = topk_indices(av.data(), topk_count(av.len(), ratio));
        let kept_sum: f64 = kept.iter().map(|&i| av.data()[i]).sum();
        // NaN passes through so the loss reports it
        if kept_sum <= 0.0 {
            return Err(MfamError::Domain(
                "top-k gate: retained weights sum to zero".into(),
            ));
        }
        let mut out = vec![0.0; av.len()];
        for &i in &kept {
            out[i] = av.data()[i] / kept_sum;
        }
        Ok(self.push(Tensor::vector(out), Op::TopKGate { a, kept, kept_sum }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(MfamError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;
        for id in (0..=loss.0).rev() {
            if grads[id].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::replace(&mut grads[id], Tensor::scalar(0.0));
            self.backprop_node(id, &g, &mut grads);
            grads[id] = g;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Tensor]) {
        let node = &self.nodes[id];
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dilation } => {
                let (xv, wv) = (val(*x), val(*w));
                let (cin, t) = (xv.shape()[0], xv.shape()[1]);
                let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                let (xd, wd) = (xv.data(), wv.data());
                {
                    let gb = grads[b.0].data_mut();
                    for c in 0..cout {
                        gb[c] += gd[c * t..(c + 1) * t].iter().sum::<f64>();
                    }
                }
                let mut gw = vec![0.0; wd.len()];
                let mut gx = vec![0.0; xd.len()];
                for c in 0..cout {
                    let gy = &gd[c * t..(c + 1) * t];
                    for i in 0..cin {
                        let xr = &xd[i * t..(i + 1) * t];
                        let gxr = &mut gx[i * t..(i + 1) * t];
                        for j in 0..k {
                            let wi = (c * cin + i) * k + j;
                            let off = (j as isize - (k / 2) as isize) * *dilation as isize;
                            let (lo, hi) = valid_range(t, off);
                            if lo >= hi {
                                continue;
                            }
                            let s = (lo as isize + off) as usize;
                            let e = (hi as isize + off) as usize;
                            gw[wi] += dot(&gy[lo..hi], &xr[s..e]);
                            let wv = wd[wi];
                            for (gxv, gyv) in gxr[s..e].iter_mut().zip(&gy[lo..hi]) {
                                *gxv += wv * gyv;
                            }
                        }
                    }
                }
                accumulate(&mut grads[w.0], &gw);
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / n;
                let (xd, wd) = (xv.data(), wv.data());
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wd.len()];
                for r in 0..rows {
                    let xr = &xd[r * n..(r + 1) * n];
                    let gxr = &mut gx[r * n..(r + 1) * n];
                    for o in 0..m {
                        let go = gd[r * m + o];
                        if go == 0.0 {
                            continue;
                        }
                        let wr = &wd[o * n..(o + 1) * n];
                        let gwr = &mut gw[o * n..(o + 1) * n];
                        for q in 0..n {
                            gxr[q] += go * wr[q];
                            gwr[q] += go * xr[q];
                        }
                    }
                }
                if let Some(b) = b {
                    let gb = grads[b.0].data_mut();
                    for r in 0..rows {
                        for o in 0..m {
                            gb[o] += gd[r * m + o];
                        }
                    }
                }
                accumulate(&mut grads[w.0], &gw);
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Activation { x, kind } => {
                let y = node.value.data();
                let xd = val(*x).data();
                let gx = grads[x.0].data_mut();
                for q in 0..y.len() {
                    let d = match kind {
                        Activation::Tanh => 1.0 - y[q] * y[q],
                        Activation::Sigmoid => y[q] * (1.0 - y[q]),
                        Activation::Relu => {
                            if xd[q] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    gx[q] += gd[q] * d;
                }
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let s = dot(gd, y);
                let gx = grads[x.0].data_mut();
                for q in 0..y.len() {
                    gx[q] += y[q] * (gd[q] - s);
                }
            }
            Op::Pool {
                x,
                mode,
                window,
                stride,
                argmax,
            } => {
                let xv = val(*x);
                let (c, t) = (xv.shape()[0], xv.shape()[1]);
                let n = node.value.len() / c;
                let gx = grads[x.0].data_mut();
                for wi in 0..n {
                    for ch in 0..c {
                        let o = wi * c + ch;
                        match mode {
                            PoolMode::Mean => {
                                let share = gd[o] / *window as f64;
                                let start = ch * t + wi * stride;
                                gx[start..start + window]
                                    .iter_mut()
                                    .for_each(|v| *v += share);
                            }
                            PoolMode::Max => gx[argmax[o]] += gd[o],
                        }
                    }
                }
            }
            Op::CrossEntropy { x, label, probs } => {
                let gx = grads[x.0].data_mut();
                for (q, p) in probs.iter().enumerate() {
                    let onehot = if q == *label { 1.0 } else { 0.0 };
                    gx[q] += gd[0] * (p - onehot);
                }
            }
            Op::GradReverse { x, lambda } => {
                let gx = grads[x.0].data_mut();
                for (a, b) in gx.iter_mut().zip(gd) {
                    *a += -lambda * b;
                }
            }
            Op::Add { a, b } => {
                accumulate(&mut grads[a.0], gd);
                accumulate(&mut grads[b.0], gd);
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let ga: Vec<f64> = gd.iter().zip(bd).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = gd.iter().zip(ad).map(|(g, y)| g * y).collect();
                accumulate(&mut grads[a.0], &ga);
                accumulate(&mut grads[b.0], &gb);
            }
            Op::Scale { x, c } => {
                let gx = grads[x.0].data_mut();
                for (a, b) in gx.iter_mut().zip(gd) {
                    *a += c * b;
                }
            }
            Op::Sum { x } => {
                grads[x.0].data_mut().iter_mut().for_each(|v| *v += gd[0]);
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    accumulate(&mut grads[p.0], &gd[off..off + len]);
                    off += len;
                }
            }
            Op::ScaleRows { x, w } => {
                let (xv, wv) = (val(*x), val(*w));
                let t = xv.cols();
                let mut gw = vec![0.0; wv.len()];
                {
                    let gx = grads[x.0].data_mut();
                    for (r, &s) in wv.data().iter().enumerate() {
                        let span = r * t..(r + 1) * t;
                        gw[r] = dot(&gd[span.clone()], &xv.data()[span.clone()]);
                        for (a, b) in gx[span.clone()].iter_mut().zip(&gd[span]) {
                            *a += s * b;
                        }
                    }
                }
                accumulate(&mut grads[w.0], &gw);
            }
            Op::Outer { a, b } => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let m = bd.len();
                let mut ga = vec![0.0; ad.len()];
                let mut gb = vec![0.0; m];
                for i in 0..ad.len() {
                    let gr = &gd[i * m..(i + 1) * m];
                    ga[i] = dot(gr, bd);
                    for j in 0..m {
                        gb[j] += gr[j] * ad[i];
                    }
                }
                accumulate(&mut grads[a.0], &ga);
                accumulate(&mut grads[b.0], &gb);
            }
            Op::WeightedRowSum { z, a } => {
                let (zv, av) = (val(*z), val(*a));
                let d = zv.cols();
                let mut ga = vec![0.0; av.len()];
                {
                    let gz = grads[z.0].data_mut();
                    for (i, &w) in av.data().iter().enumerate() {
                        ga[i] = dot(&zv.data()[i * d..(i + 1) * d], gd);
                        if w != 0.0 {
                            for (a, b) in gz[i * d..(i + 1) * d].iter_mut().zip(gd) {
                                *a += w * b;
                            }
                        }
                    }
                }
                accumulate(&mut grads[a.0], &ga);
            }
            Op::MeanRows { z } => {
                let zv = val(*z);
                let (n, d) = (zv.rows(), zv.cols());
                let gz = grads[z.0].data_mut();
                for row in gz.chunks_mut(d) {
                    for (a, b) in row.iter_mut().zip(gd) {
                        *a += b / n as f64;
                    }
                }
            }
            Op::TopKGate { a, kept, kept_sum } => {
                // out_i = a_i / S over kept i, S = Σ_kept a_j
                let y = node.value.data();
                let s: f64 = kept.iter().map(|&i| gd[i] * y[i]).sum();
                let ga = grads[a.0].data_mut();
                for &i in kept {
                    ga[i] += (gd[i] - s) / kept_sum;
                }
            }
            Op::Reshape { x } => accumulate(&mut grads[x.0], gd),
        }
    }
}

fn accumulate(dst: &mut Tensor, src: &[f64]) {
    for (a, b) in dst.data_mut().iter_mut().zip(src) {
        *a += b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output positions `[lo, hi)` whose input `t + off` lies inside `[0, t)`.
fn valid_range(t: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (t as isize - off.max(0)).max(0) as usize;
    (lo.min(t), hi)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of a slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(x)[label]`, accurate when the label dominates.
fn neg_log_softmax(x: &[f64], label: usize) -> f64 {
    let (top, m) = x
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    let rest: f64 = x
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, v)| (v - m).exp())
        .sum();
    (m - x[label]) + rest.ln_1p()
}

/// Number of instances kept by top-k gating: `min(n, ceil(ratio * n))`.
pub fn topk_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).ceil() as usize).clamp(1, n)
}

/// Indices of the `k` largest values, ties resolved toward the lower index,
/// returned in ascending index order.
pub fn topk_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut kept = order[..k.min(values.len())].to_vec();
    kept.sort_unstable();
    kept
}
