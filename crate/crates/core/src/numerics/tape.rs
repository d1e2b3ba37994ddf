use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity used inside the feed-forward blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh approximation of the Gaussian error linear unit
    #[default]
    Gelu,
    Relu,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    /// `x[.., tail] + b[tail]`
    AddBroadcast(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Mean(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Conv1x1 {
        x: Var,
        weight: Var,
        bias: Var,
        axis: usize,
    },
    SmoothL1 {
        pred: Var,
        target: Tensor<T>,
        beta: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
    is_param: bool,
}

/// Linear record of primitive applications for reverse-mode differentiation.
///
/// One tape per forward/backward pass. Leaves are registered either as
/// constants (never differentiated) or as parameters.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let th = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

fn split_last<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    let last = *t.shape().last().unwrap_or(&1);
    (t.numel() / last.max(1), last)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        self.nodes.push(Node {
            value,
            op,
            tracked,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
            is_param: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// Adds `b` to every trailing block of `x` whose shape equals `b`'s shape.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::shape(format!("broadcast add {xs:?} + {bs:?}")));
        }
        let bn = self.value(b).numel();
        let bias = self.value(b).data();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(bn) {
            for (v, &bv) in chunk.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddBroadcast(x, b), &[x, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(format!("batch_matmul {sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for (i, o) in out.chunks_mut(m * n).enumerate() {
            gemm(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                o,
                m,
                k,
                n,
            );
        }
        let value = Tensor::new([batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(axes)?;
        Ok(self.push(value, Op::Permute(x, axes.to_vec()), &[x]))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).narrow(axis, start, len)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat(&parts, axis)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let value = match act {
            Activation::Gelu => self.value(x).map(gelu),
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
        };
        self.push(value, Op::Act(x, act), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let (_, n) = split_last(&value);
        for row in value.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Normalises each row of the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let input = self.value(x);
        let (rows, d) = split_last(input);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(format!(
                "layer_norm over {:?} with gamma {:?}, beta {:?}",
                input.shape(),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let dn = T::of(d as f64);
        let mut xhat = Vec::with_capacity(input.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(input.numel());
        for row in input.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(input.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(value, Op::Mean(x), &[x])
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut value = self.value(x).clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// 1×1 convolution: mixes the channels found on `axis` with
    /// `weight[c_out, c_in]` and adds `bias[c_out]`.
    pub fn conv1x1(&mut self, x: Var, weight: Var, bias: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if axis >= xs.len() || ws.len() != 2 || ws[1] != xs[axis] || self.shape(bias) != [ws[0]] {
            return Err(Error::shape(format!(
                "conv1x1 over axis {axis} of {xs:?} with weight {ws:?}, bias {:?}",
                self.shape(bias)
            )));
        }
        let (outer, c_in, inner) = axis_split(&xs, axis);
        let c_out = ws[0];
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let mut out = vec![T::zero(); outer * c_out * inner];
        for o in 0..outer {
            for co in 0..c_out {
                let dst = &mut out[(o * c_out + co) * inner..(o * c_out + co + 1) * inner];
                dst.iter_mut().for_each(|v| *v = bd[co]);
                for ci in 0..c_in {
                    let w = wd[co * c_in + ci];
                    let src = &xd[(o * c_in + ci) * inner..(o * c_in + ci + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        let mut shape = xs;
        shape[axis] = c_out;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv1x1 {
                x,
                weight,
                bias,
                axis,
            },
            &[x, weight, bias],
        ))
    }

    /// Mean Smooth-L1 (Huber with transition `beta`) between `pred` and a
    /// constant target.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>, beta: T) -> Result<Var> {
        let loss = crate::train::smooth_l1(self.value(pred), target, beta)?;
        let value = Tensor::scalar(loss);
        Ok(self.push(
            value,
            Op::SmoothL1 {
                pred,
                target: target.clone(),
                beta,
            },
            &[pred],
        ))
    }

    /// `x · weight + bias` applied over the last axis of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::shape(format!("linear {xs:?} with weight {ws:?}")));
        }
        let rows = xs.iter().product::<usize>() / ws[0];
        let flat = if xs.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, ws[0]])?
        };
        let y = self.matmul(flat, weight)?;
        let y = self.add_broadcast(y, bias)?;
        if xs.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[1];
        self.reshape(y, &out_shape)
    }

    /// Reverse sweep from a one-element `loss`. Every parameter leaf gets a
    /// gradient, zero if it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_param && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?);
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::AddBroadcast(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.tracked(*b) {
                    let bshape = self.shape(*b).to_vec();
                    let bn = self.value(*b).numel();
                    let mut gb = vec![T::zero(); bn];
                    for chunk in g.data().chunks(bn) {
                        for (acc, &v) in gb.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(bshape, gb)?);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.dim(0), av.dim(1), bv.dim(1));
                if self.tracked(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt(g.data(), bv.data(), &mut ga, m, n, k);
                    self.accumulate(grads, *a, Tensor::new([m, k], ga)?);
                }
                if self.tracked(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn(av.data(), g.data(), &mut gb, m, k, n);
                    self.accumulate(grads, *b, Tensor::new([k, n], gb)?);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k, n) = (av.dim(0), av.dim(1), av.dim(2), bv.dim(2));
                let gd = g.data();
                if self.tracked(*a) {
                    let mut ga = vec![T::zero(); batch * m * k];
                    for (i, o) in ga.chunks_mut(m * k).enumerate() {
                        gemm_nt(
                            &gd[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            o,
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new([batch, m, k], ga)?);
                }
                if self.tracked(*b) {
                    let mut gb = vec![T::zero(); batch * k * n];
                    for (i, o) in gb.chunks_mut(k * n).enumerate() {
                        gemm_tn(
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            o,
                            m,
                            k,
                            n,
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new([batch, k, n], gb)?);
                }
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.reshape(self.shape(*x).to_vec())?);
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (j, &a) in axes.iter().enumerate() {
                    inverse[a] = j;
                }
                self.accumulate(grads, *x, g.permute(&inverse)?);
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, extent, inner) = axis_split(&xs, *axis);
                let len = g.dim(*axis);
                let mut gx = vec![T::zero(); xs.iter().product()];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    gx[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, Tensor::new(xs, gx)?);
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.tracked(v) {
                        self.accumulate(grads, v, g.narrow(*axis, offset, len)?);
                    }
                    offset += len;
                }
            }
            Op::Act(x, act) => {
                let xv = self.value(*x);
                let gx = match act {
                    Activation::Gelu => g.zip_map(xv, |gv, v| gv * gelu_grad(v))?,
                    Activation::Relu => {
                        g.zip_map(xv, |gv, v| if v > T::zero() { gv } else { T::zero() })?
                    }
                };
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let (_, n) = split_last(out);
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(n).zip(out.data().chunks(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (gv, &y) in gr.iter_mut().zip(yr) {
                        *gv = y * (*gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (_, d) = split_last(out);
                let gam = self.value(*gamma).data();
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                let mut gx = vec![T::zero(); out.numel()];
                let dn = T::of(d as f64);
                for (r, ((grow, hrow), gxrow)) in g
                    .data()
                    .chunks(d)
                    .zip(xhat.chunks(d))
                    .zip(gx.chunks_mut(d))
                    .enumerate()
                {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        ggamma[j] += grow[j] * hrow[j];
                        gbeta[j] += grow[j];
                        let dh = grow[j] * gam[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[j];
                    }
                    let scale = rstd[r] / dn;
                    for j in 0..d {
                        let dh = grow[j] * gam[j];
                        gxrow[j] = scale * (dn * dh - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), gx)?);
                self.accumulate(grads, *gamma, Tensor::new([d], ggamma)?);
                self.accumulate(grads, *beta, Tensor::new([d], gbeta)?);
            }
            Op::Mean(x) => {
                let xs = self.shape(*x).to_vec();
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, Tensor::full(xs, g.item() / T::of(n as f64)));
            }
            Op::Dropout { x, mask } => {
                let mut gx = g.clone();
                for (v, &m) in gx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Conv1x1 {
                x,
                weight,
                bias,
                axis,
            } => {
                let xv = self.value(*x);
                let wd = self.value(*weight).data();
                let (outer, c_in, inner) = axis_split(xv.shape(), *axis);
                let c_out = self.shape(*weight)[0];
                let (xd, gd) = (xv.data(), g.data());
                if self.tracked(*x) {
                    let mut gx = vec![T::zero(); xv.numel()];
                    for o in 0..outer {
                        for ci in 0..c_in {
                            let dst = &mut gx[(o * c_in + ci) * inner..(o * c_in + ci + 1) * inner];
                            for co in 0..c_out {
                                let w = wd[co * c_in + ci];
                                let src =
                                    &gd[(o * c_out + co) * inner..(o * c_out + co + 1) * inner];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                let mut gw = vec![T::zero(); c_out * c_in];
                let mut gb = vec![T::zero(); c_out];
                for o in 0..outer {
                    for co in 0..c_out {
                        let gs = &gd[(o * c_out + co) * inner..(o * c_out + co + 1) * inner];
                        gb[co] += gs.iter().copied().sum::<T>();
                        for ci in 0..c_in {
                            let xs = &xd[(o * c_in + ci) * inner..(o * c_in + ci + 1) * inner];
                            gw[co * c_in + ci] +=
                                gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                }
                self.accumulate(grads, *weight, Tensor::new([c_out, c_in], gw)?);
                self.accumulate(grads, *bias, Tensor::new([c_out], gb)?);
            }
            Op::SmoothL1 { pred, target, beta } => {
                let pv = self.value(*pred);
                let n = T::of(pv.numel() as f64);
                let up = g.item() / n;
                let gp = pv.zip_map(target, |p, t| {
                    let e = p - t;
                    let d = if e.abs() < *beta {
                        e / *beta
                    } else {
                        e.signum()
                    };
                    d * up
                })?;
                self.accumulate(grads, *pred, gp);
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn wrt(&self, v: Var) -> Result<&Tensor<T>> {
        self.get(v)
            .ok_or_else(|| Error::Numerical(format!("no gradient recorded for node {}", v.0)))
    }
}
