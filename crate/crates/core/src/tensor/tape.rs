use std::cell::RefCell;
use std::collections::HashMap;

use super::kernels::{axis_split, bilinear_taps, gemm, ConvGeometry, ConvPlan, Tap};
use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    GroupNorm {
        input: Var,
        scale: Var,
        shift: Var,
        groups: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Relu(Var),
    Binary(ElementwiseOp, Var, Var),
    Scale(Var, f64),
    /// `x[n, c, ...] * v[c]` or `x[n, c, ...] * v[n, c]`.
    MulChannel {
        input: Var,
        vector: Var,
        per_sample: bool,
    },
    /// `x[n, ...] * s[n, index]`.
    ScaleBySample {
        input: Var,
        scalars: Var,
        index: usize,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        weights: Option<Vec<f64>>,
        probs: Vec<f64>,
        count: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Bilinear(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward_full`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A recorded forward computation.
///
/// Every operator appends a node; [`Tape::backward`] walks the record once in
/// reverse. The record is single-use: a second backward is a state error.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    consumed: bool,
    no_grad: bool,
}

const NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that never records backward information (inference).
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = !self.no_grad && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a constant or a differentiable input.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && !self.no_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Place a parameter on the tape; repeated calls return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let p = store.get(id);
        let mut value = p.tensor.clone();
        value.grad = None;
        value.requires_grad = false;
        let requires_grad = !p.frozen && !self.no_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    // ---- operators ----

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, kcin, kh, kw) = self.value(kernel).dims4()?;
        if kcin != cin {
            return Err(Error::Dimension(format!(
                "conv2d input has {cin} channels, kernel expects {kcin}"
            )));
        }
        if geom.dilation == 0 || geom.stride == 0 {
            return Err(Error::Geometry("stride and dilation must be >= 1".into()));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::Dimension(format!(
                    "conv2d bias shape {:?}, expected [{cout}]",
                    self.shape(b)
                )));
            }
        }
        let (ho, wo) = match (geom.output_extent(h, kh), geom.output_extent(w, kw)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::Geometry(format!(
                    "conv2d on {h}x{w} with kernel {kh}x{kw}, {geom:?} has no output"
                )))
            }
        };
        let plan = ConvPlan {
            cin,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            geom,
        };
        let (rows, plane) = (plan.col_rows(), plan.col_cols());
        let per = samples_per_chunk(n, plane);
        let chw = cin * h * w;
        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        let bv = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * cout * plane];
        with_scratch(rows * per * plane, cout * per * plane, |cols, wide| {
            for s0 in (0..n).step_by(per) {
                let m = per.min(n - s0);
                let ld = m * plane;
                let (cols, wide) = (&mut cols[..rows * ld], &mut wide[..cout * ld]);
                for s in 0..m {
                    plan.im2col(&x[(s0 + s) * chw..(s0 + s + 1) * chw], cols, ld, s * plane);
                }
                gemm(cout, rows, ld, 1.0, kd, false, cols, false, 0.0, wide);
                for s in 0..m {
                    for co in 0..cout {
                        let o = ((s0 + s) * cout + co) * plane;
                        let dst = &mut out[o..o + plane];
                        let src = &wide[co * ld + s * plane..co * ld + (s + 1) * plane];
                        match bv {
                            Some(b) => dst.iter_mut().zip(src).for_each(|(d, v)| *d = v + b[co]),
                            None => dst.copy_from_slice(src),
                        }
                    }
                }
            }
        });
        let value = Tensor::new(&[n, cout, ho, wo], out)?;
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &parents,
        ))
    }

    pub fn group_norm(&mut self, input: Var, groups: usize, scale: Var, shift: Var) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() < 2 {
            return Err(Error::Dimension("group_norm needs at least [N, C]".into()));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "{groups} normalization groups do not divide {c} channels"
            )));
        }
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(Error::Dimension(format!(
                "group_norm affine parameters must have shape [{c}]"
            )));
        }
        let spatial: usize = x.shape()[2..].iter().product();
        let per_group = c / groups * spatial;
        let (sc, sh) = (self.value(scale).data(), self.value(shift).data());
        let xd = x.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; n * groups];
        for s in 0..n {
            for g in 0..groups {
                let base = (s * c + g * (c / groups)) * spatial;
                let seg = &xd[base..base + per_group];
                let mean = seg.iter().sum::<f64>() / per_group as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_group as f64;
                let r = 1.0 / (var + NORM_EPS).sqrt();
                rstd[s * groups + g] = r;
                for (j, chunk) in seg.chunks(spatial).enumerate() {
                    let ch = g * (c / groups) + j;
                    let off = base + j * spatial;
                    for (i, v) in chunk.iter().enumerate() {
                        let xh = (v - mean) * r;
                        xhat[off + i] = xh;
                        out[off + i] = xh * sc[ch] + sh[ch];
                    }
                }
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        Ok(self.push(
            value,
            Op::GroupNorm {
                input,
                scale,
                shift,
                groups,
                xhat,
                rstd,
            },
            &[input, scale, shift],
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Relu(input), &[input])
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "elementwise {op:?} on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| match op {
                ElementwiseOp::Add => x + y,
                ElementwiseOp::Sub => x - y,
            })
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Scale(input, factor), &[input])
    }

    /// Scale every channel of `input` by the matching entry of `vector`
    /// (shape `[C]`, or `[N, C]` for per-sample factors).
    pub fn mul_channel(&mut self, input: Var, vector: Var) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() < 2 {
            return Err(Error::Dimension("mul_channel needs at least [N, C]".into()));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let vs = self.shape(vector);
        let per_sample = if vs == [c] {
            false
        } else if vs == [n, c] {
            true
        } else {
            return Err(Error::Dimension(format!(
                "vector of shape {vs:?} does not broadcast over channels of {:?}",
                x.shape()
            )));
        };
        let spatial: usize = x.shape()[2..].iter().product();
        let v = self.value(vector).data();
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_mut(spatial).enumerate() {
            let f = if per_sample { v[i] } else { v[i % c] };
            chunk.iter_mut().for_each(|e| *e *= f);
        }
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(
            value,
            Op::MulChannel {
                input,
                vector,
                per_sample,
            },
            &[input, vector],
        ))
    }

    /// `out[n, ...] = input[n, ...] * scalars[n, index]`.
    pub fn scale_by_sample(&mut self, input: Var, scalars: Var, index: usize) -> Result<Var> {
        let x = self.value(input);
        let s = self.value(scalars);
        let n = x.shape()[0];
        if s.ndim() != 2 || s.shape()[0] != n || index >= s.shape()[1] {
            return Err(Error::Dimension(format!(
                "scalars {:?} cannot scale batch {:?} at column {index}",
                s.shape(),
                x.shape()
            )));
        }
        let k = s.shape()[1];
        let per = x.len() / n;
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_mut(per).enumerate() {
            let f = s.data()[i * k + index];
            chunk.iter_mut().for_each(|e| *e *= f);
        }
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(
            value,
            Op::ScaleBySample {
                input,
                scalars,
                index,
            },
            &[input, scalars],
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let plane = h * w;
        let data = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::new(&[n, c, 1, 1], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(input), &[input]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        let (n, din) = match xs[..] {
            [n, d] => (n, d),
            _ => return Err(Error::Dimension(format!("linear input must be [N, D], got {xs:?}"))),
        };
        let dout = match ws[..] {
            [o, i] if i == din => o,
            _ => {
                return Err(Error::Dimension(format!(
                    "linear weight {ws:?} incompatible with input {xs:?}"
                )))
            }
        };
        if bs != [dout] {
            return Err(Error::Dimension(format!("linear bias {bs:?}, expected [{dout}]")));
        }
        let b = self.value(bias).data();
        let mut out: Vec<f64> = (0..n * dout).map(|i| b[i % dout]).collect();
        gemm(
            n,
            din,
            dout,
            1.0,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            1.0,
            &mut out,
        );
        let value = Tensor::new(&[n, dout], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        if axis >= x.ndim() {
            return Err(Error::Dimension(format!("softmax axis {axis} out of range")));
        }
        let out = softmax_values(x, axis);
        Ok(self.push(out, Op::Softmax { input, axis }, &[input]))
    }

    /// Mean (optionally class-weighted) negative log-likelihood of `targets`
    /// under softmax of `logits` along axis 1.
    ///
    /// `logits` is `[N, K, ...]`; `targets` holds one label per `(n, ...)`
    /// position in row-major order. The normalizer is the number of
    /// non-ignored positions, so class weights scale the loss directly.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[f64]>,
        ignore: Option<usize>,
    ) -> Result<Var> {
        let x = self.value(logits);
        if x.ndim() < 2 {
            return Err(Error::Dimension("cross_entropy needs [N, K, ...]".into()));
        }
        let k = x.shape()[1];
        let n = x.shape()[0];
        let spatial: usize = x.shape()[2..].iter().product();
        if targets.len() != n * spatial {
            return Err(Error::Dimension(format!(
                "{} targets for {} positions",
                targets.len(),
                n * spatial
            )));
        }
        if let Some(w) = weights {
            if w.len() != k {
                return Err(Error::Dimension(format!("{} class weights for {k} classes", w.len())));
            }
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= k && Some(t) != ignore) {
            return Err(Error::Label(format!("target {bad} outside [0, {k})")));
        }
        let probs = softmax_values(x, 1).into_data();
        let xd = x.data();
        let mut total = 0.0;
        let mut count = 0;
        for s in 0..n {
            for p in 0..spatial {
                let t = targets[s * spatial + p];
                if Some(t) == ignore {
                    continue;
                }
                count += 1;
                let at = |c: usize| (s * k + c) * spatial + p;
                let max = (0..k).map(|c| xd[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..k).map(|c| (xd[at(c)] - max).exp()).sum::<f64>().ln();
                let wt = weights.map_or(1.0, |w| w[t]);
                total += wt * (lse - xd[at(t)]);
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                weights: weights.map(<[f64]>::to_vec),
                probs,
                count,
            },
            &[logits],
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Dimension(format!("concat {s:?} with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let (outer, ext, inner) = axis_split(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * ext + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, Op::Narrow { input, axis, start }, &[input]))
    }

    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::Geometry("resize target must be at least 1x1".into()));
        }
        if (out_h, out_w) == (h, w) {
            let value = self.value(input).clone();
            return Ok(self.push(value, Op::Reshape(input), &[input]));
        }
        let out = resize_values(self.value(input), out_h, out_w);
        debug_assert_eq!(out.shape(), [n, c, out_h, out_w]);
        Ok(self.push(out, Op::Bilinear(input), &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input), &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(input), &[input])
    }

    /// `sum_i input_i * weights_i` against a constant tensor of equal shape.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::Dimension(format!(
                "weighted_sum of {:?} with weights {:?}",
                x.shape(),
                weights.shape()
            )));
        }
        let s = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum(input, weights.data().to_vec()),
            &[input],
        ))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(input), &[input])
    }

    // ---- reverse pass ----

    /// Backpropagate from a scalar `loss`, returning gradients for every node.
    pub fn backward_full(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State("backward already ran on this record".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backpropagate and accumulate parameter gradients into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward_full(loss)?;
        for (&id, &v) in &self.param_leaves {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = &nodes[input.0].value;
                let k = &nodes[kernel.0].value;
                let (n, cin, h, w) = x.dims4().expect("rank 4");
                let (cout, _, kh, kw) = k.dims4().expect("rank 4");
                let (_, _, ho, wo) = node.value.dims4().expect("rank 4");
                let plan = ConvPlan {
                    cin,
                    h,
                    w,
                    kh,
                    kw,
                    ho,
                    wo,
                    geom: *geom,
                };
                let (rows, plane) = (plan.col_rows(), plan.col_cols());
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        for s in 0..n {
                            for co in 0..cout {
                                let off = (s * cout + co) * plane;
                                gb[co] += g[off..off + plane].iter().sum::<f64>();
                            }
                        }
                    });
                }
                let need_k = wants(*kernel);
                let need_x = wants(*input);
                let per = samples_per_chunk(n, plane);
                let chw = cin * h * w;
                let mut gk = if need_k { vec![0.0; k.len()] } else { Vec::new() };
                let mut gx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
                with_scratch(rows * per * plane, cout * per * plane, |cols, gwide| {
                    for s0 in (0..n).step_by(per) {
                        let m = per.min(n - s0);
                        let ld = m * plane;
                        let (cols, gwide) = (&mut cols[..rows * ld], &mut gwide[..cout * ld]);
                        for s in 0..m {
                            for co in 0..cout {
                                let o = ((s0 + s) * cout + co) * plane;
                                gwide[co * ld + s * plane..co * ld + (s + 1) * plane].copy_from_slice(&g[o..o + plane]);
                            }
                        }
                        if need_k {
                            for s in 0..m {
                                plan.im2col(&x.data()[(s0 + s) * chw..(s0 + s + 1) * chw], cols, ld, s * plane);
                            }
                            gemm(cout, ld, rows, 1.0, gwide, false, cols, true, 1.0, &mut gk);
                        }
                        if need_x {
                            gemm(rows, cout, ld, 1.0, k.data(), true, gwide, false, 0.0, cols);
                            for s in 0..m {
                                plan.col2im(cols, ld, s * plane, &mut gx[(s0 + s) * chw..(s0 + s + 1) * chw]);
                            }
                        }
                    }
                });
                if need_k {
                    acc(*kernel, &mut |buf| add_into(buf, &gk));
                }
                if need_x {
                    acc(*input, &mut |buf| add_into(buf, &gx));
                }
            }
            Op::GroupNorm {
                input,
                scale,
                shift,
                groups,
                xhat,
                rstd,
            } => {
                let shape = nodes[input.0].value.shape();
                let (n, c) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let cpg = c / groups;
                let per_group = cpg * spatial;
                let sc = nodes[scale.0].value.data();
                acc(*scale, &mut |gs| {
                    for (row, (gv, xh)) in g.chunks(spatial).zip(xhat.chunks(spatial)).enumerate() {
                        gs[row % c] += gv.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                acc(*shift, &mut |gs| {
                    for (row, gv) in g.chunks(spatial).enumerate() {
                        gs[row % c] += gv.iter().sum::<f64>();
                    }
                });
                acc(*input, &mut |gx| {
                    for s in 0..n {
                        for gr in 0..*groups {
                            let base = (s * c + gr * cpg) * spatial;
                            let r = rstd[s * groups + gr];
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for j in 0..cpg {
                                let off = base + j * spatial;
                                let f = sc[gr * cpg + j];
                                for (gv, xh) in g[off..off + spatial].iter().zip(&xhat[off..off + spatial]) {
                                    mean_d += gv * f;
                                    mean_dx += gv * f * xh;
                                }
                            }
                            mean_d /= per_group as f64;
                            mean_dx /= per_group as f64;
                            for j in 0..cpg {
                                let off = base + j * spatial;
                                let f = sc[gr * cpg + j];
                                let dst = &mut gx[off..off + spatial];
                                for ((o, gv), xh) in dst.iter_mut().zip(&g[off..off + spatial]).zip(&xhat[off..off + spatial]) {
                                    *o += r * (gv * f - mean_d - xh * mean_dx);
                                }
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((b, gv), xv) in gx.iter_mut().zip(g).zip(xv) {
                        if *xv > 0.0 {
                            *b += gv;
                        }
                    }
                });
            }
            Op::Binary(op, a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let sign = if *op == ElementwiseOp::Sub { -1.0 } else { 1.0 };
                acc(*b, &mut |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x += sign * y;
                    }
                });
            }
            Op::Scale(x, f) => {
                acc(*x, &mut |gx| {
                    for (b, gv) in gx.iter_mut().zip(g) {
                        *b += f * gv;
                    }
                });
            }
            Op::MulChannel {
                input,
                vector,
                per_sample,
            } => {
                let xs = &nodes[input.0].value;
                let c = xs.shape()[1];
                let spatial: usize = xs.shape()[2..].iter().product();
                let v = nodes[vector.0].value.data();
                let slot = |i: usize| if *per_sample { i } else { i % c };
                acc(*input, &mut |gx| {
                    for (i, (gc, gi)) in gx.chunks_mut(spatial).zip(g.chunks(spatial)).enumerate() {
                        let f = v[slot(i)];
                        for (b, gv) in gc.iter_mut().zip(gi) {
                            *b += f * gv;
                        }
                    }
                });
                acc(*vector, &mut |gv| {
                    for (i, (xc, gi)) in xs.data().chunks(spatial).zip(g.chunks(spatial)).enumerate() {
                        gv[slot(i)] += xc.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::ScaleBySample {
                input,
                scalars,
                index,
            } => {
                let xs = &nodes[input.0].value;
                let s = &nodes[scalars.0].value;
                let n = xs.shape()[0];
                let k = s.shape()[1];
                let per = xs.len() / n;
                acc(*input, &mut |gx| {
                    for i in 0..n {
                        let f = s.data()[i * k + index];
                        for j in i * per..(i + 1) * per {
                            gx[j] += f * g[j];
                        }
                    }
                });
                acc(*scalars, &mut |gs| {
                    for i in 0..n {
                        let r = i * per..(i + 1) * per;
                        gs[i * k + index] += xs.data()[r.clone()]
                            .iter()
                            .zip(&g[r])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = nodes[x.0].value.dims4().expect("rank 4");
                let plane = h * w;
                acc(*x, &mut |gx| {
                    for (chunk, gv) in gx.chunks_mut(plane).zip(g) {
                        let share = gv / plane as f64;
                        chunk.iter_mut().for_each(|b| *b += share);
                    }
                });
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (n, din) = (nodes[input.0].value.shape()[0], nodes[input.0].value.shape()[1]);
                let dout = nodes[weight.0].value.shape()[0];
                acc(*bias, &mut |gb| {
                    for row in g.chunks(dout) {
                        add_into(gb, row);
                    }
                });
                acc(*weight, &mut |gw| {
                    gemm(dout, n, din, 1.0, g, true, nodes[input.0].value.data(), false, 1.0, gw);
                });
                acc(*input, &mut |gx| {
                    gemm(n, dout, din, 1.0, g, false, nodes[weight.0].value.data(), false, 1.0, gx);
                });
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, ext, inner) = axis_split(node.value.shape(), *axis);
                acc(*input, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * ext + k) * inner + i;
                            let dot: f64 = (0..ext).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..ext {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                weights,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let shape = nodes[logits.0].value.shape();
                let (n, k) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product();
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |gx| {
                    for s in 0..n {
                        let ts = &targets[s * spatial..(s + 1) * spatial];
                        let wts: Vec<f64> = ts
                            .iter()
                            .map(|&t| {
                                if Some(t) == *ignore {
                                    0.0
                                } else {
                                    scale * weights.as_ref().map_or(1.0, |w| w[t])
                                }
                            })
                            .collect();
                        for c in 0..k {
                            let off = (s * k + c) * spatial;
                            let dst = &mut gx[off..off + spatial];
                            for (p, (o, pr)) in dst.iter_mut().zip(&probs[off..off + spatial]).enumerate() {
                                let onehot = if ts[p] == c { 1.0 } else { 0.0 };
                                *o += wts[p] * (pr - onehot);
                            }
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let total = node.value.shape()[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let ext = nodes[v.0].value.shape()[*axis];
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * ext * inner;
                            add_into(&mut gv[dst..dst + ext * inner], &g[src..src + ext * inner]);
                        }
                    });
                    offset += ext;
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, ext, inner) = axis_split(nodes[input.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                acc(*input, &mut |gx| {
                    for o in 0..outer {
                        let dst = (o * ext + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Bilinear(x) => {
                let (_, _, h, w) = nodes[x.0].value.dims4().expect("rank 4");
                let (_, _, oh, ow) = node.value.dims4().expect("rank 4");
                let ty = bilinear_taps(h, oh);
                let tx = bilinear_taps(w, ow);
                acc(*x, &mut |gx| {
                    for (src, dst) in g.chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
                        resize_plane_adjoint(src, dst, w, &ty, &tx);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|b| *b += g[0])),
            Op::Mean(x) => {
                let share = g[0] / nodes[x.0].value.len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|b| *b += share));
            }
            Op::WeightedSum(x, w) => {
                acc(*x, &mut |gx| {
                    for (b, wv) in gx.iter_mut().zip(w) {
                        *b += g[0] * wv;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Softmax along `axis` without recording.
pub fn softmax_values(x: &Tensor, axis: usize) -> Tensor {
    let (outer, ext, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * ext + k) * inner + i;
            let max = (0..ext).map(|k| xd[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..ext {
                let e = (xd[at(k)] - max).exp();
                out[at(k)] = e;
                z += e;
            }
            for k in 0..ext {
                out[at(k)] /= z;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

/// Bilinear (align-corners-false) resize of an NCHW tensor without recording.
pub fn resize_values(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().expect("rank-4 tensor");
    if (h, w) == (out_h, out_w) {
        let mut t = x.clone();
        t.grad = None;
        return t;
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = vec![0.0; n * c * out_h * out_w];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
        for (oy, y) in ty.iter().enumerate() {
            for (ox, xt) in tx.iter().enumerate() {
                let v00 = src[y.lo * w + xt.lo];
                let v01 = src[y.lo * w + xt.hi];
                let v10 = src[y.hi * w + xt.lo];
                let v11 = src[y.hi * w + xt.hi];
                let top = v00 + (v01 - v00) * xt.frac;
                let bot = v10 + (v11 - v10) * xt.frac;
                dst[oy * out_w + ox] = top + (bot - top) * y.frac;
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out).expect("consistent extent")
}

fn resize_plane_adjoint(g: &[f64], dst: &mut [f64], w: usize, ty: &[Tap], tx: &[Tap]) {
    let ow = tx.len();
    for (oy, y) in ty.iter().enumerate() {
        for (ox, xt) in tx.iter().enumerate() {
            let gv = g[oy * ow + ox];
            let (wy1, wx1) = (y.frac, xt.frac);
            let (wy0, wx0) = (1.0 - wy1, 1.0 - wx1);
            dst[y.lo * w + xt.lo] += gv * wy0 * wx0;
            dst[y.lo * w + xt.hi] += gv * wy0 * wx1;
            dst[y.hi * w + xt.lo] += gv * wy1 * wx0;
            dst[y.hi * w + xt.hi] += gv * wy1 * wx1;
        }
    }
}

/// Column budget of one im2col block; keeps the unfolded block cache-sized.
const CHUNK_COLS: usize = 2048;

fn samples_per_chunk(n: usize, plane: usize) -> usize {
    (CHUNK_COLS / plane.max(1)).clamp(1, n.max(1))
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Two reusable buffers of at least the given lengths. Contents are stale.
fn with_scratch<R>(a: usize, b: usize, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (x, y) = &mut *guard;
        if x.len() < a {
            x.resize(a, 0.0);
        }
        if y.len() < b {
            y.resize(b, 0.0);
        }
        f(&mut x[..a], &mut y[..b])
    })
}
