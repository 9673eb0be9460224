//! A small reverse-mode tape over CHW tensors.
//!
//! Networks and losses are built as a linear sequence of nodes; `backward`
//! walks the sequence in reverse and accumulates parameter gradients into a
//! [`GradSet`]. Iteration order is fixed everywhere, so both values and
//! gradients are bit-reproducible for a given seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{GradSet, ParamSet};
use super::tensor::Tensor;
use crate::nn::conv::{conv3x3_backward, conv3x3_forward};

pub type NodeId = usize;

enum Op {
    Const,
    Conv3x3 {
        input: NodeId,
        weight: usize,
        bias: usize,
    },
    Relu {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    UpsampleNearest2 {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    TileAvg {
        input: NodeId,
        patch: usize,
    },
    StackChannels {
        inputs: Vec<NodeId>,
    },
    SoftmaxChannels {
        input: NodeId,
    },
    DirectWeights {
        input: NodeId,
    },
    FuseWeighted {
        weights: NodeId,
        images: Vec<Tensor>,
    },
    L1Loss {
        input: NodeId,
        target: Tensor,
    },
    MseLoss {
        input: NodeId,
        target: Tensor,
    },
    NllLoss {
        weights: NodeId,
        log_var: Option<NodeId>,
        target: Tensor,
        lambda_tv: f64,
    },
    AddScaled {
        a: NodeId,
        b: NodeId,
        ka: f64,
        kb: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Forward values plus enough structure to run a reverse pass.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn conv3x3(&mut self, input: NodeId, weight: usize, bias: usize) -> NodeId {
        let w = &self.params.entries[weight];
        let b = &self.params.entries[bias];
        let out_ch = w.shape[0];
        let value = conv3x3_forward(&self.nodes[input].value, &w.data, &b.data, out_ch);
        self.push(Op::Conv3x3 { input, weight, bias }, value)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut value = self.nodes[input].value.clone();
        for v in &mut value.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(Op::Relu { input }, value)
    }

    /// Inverted dropout; a rate of 0 is the identity (no node added).
    pub fn dropout(&mut self, input: NodeId, rate: f64, rng: &mut ChaCha8Rng) -> NodeId {
        if rate <= 0.0 {
            return input;
        }
        let keep = 1.0 / (1.0 - rate);
        let src = &self.nodes[input].value;
        let mask: Vec<f64> = (0..src.data.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut value = src.clone();
        for (v, m) in value.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(Op::Dropout { input, mask }, value)
    }

    pub fn maxpool2(&mut self, input: NodeId) -> NodeId {
        let src = &self.nodes[input].value;
        let (c, h, w) = src.shape();
        debug_assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut value = Tensor::zeros(c, oh, ow);
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            let plane = src.plane(ch);
            let out = value.plane_mut(ch);
            for y in 0..oh {
                for x in 0..ow {
                    let mut best_idx = (2 * y) * w + 2 * x;
                    let mut best = plane[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * y + dy) * w + 2 * x + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                    out[y * ow + x] = best;
                    argmax[(ch * oh + y) * ow + x] = best_idx;
                }
            }
        }
        self.push(Op::MaxPool2 { input, argmax }, value)
    }

    pub fn upsample_nearest2(&mut self, input: NodeId) -> NodeId {
        let src = &self.nodes[input].value;
        let (c, h, w) = src.shape();
        let mut value = Tensor::zeros(c, h * 2, w * 2);
        for ch in 0..c {
            let plane = src.plane(ch);
            let out = value.plane_mut(ch);
            for y in 0..h * 2 {
                for x in 0..w * 2 {
                    out[y * (w * 2) + x] = plane[(y / 2) * w + x / 2];
                }
            }
        }
        self.push(Op::UpsampleNearest2 { input }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert!(self.nodes[a].value.same_shape(&self.nodes[b].value));
        let mut value = self.nodes[a].value.clone();
        for (v, o) in value.data.iter_mut().zip(&self.nodes[b].value.data) {
            *v += o;
        }
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert!(self.nodes[a].value.same_shape(&self.nodes[b].value));
        let mut value = self.nodes[a].value.clone();
        for (v, o) in value.data.iter_mut().zip(&self.nodes[b].value.data) {
            *v -= o;
        }
        self.push(Op::Sub { a, b }, value)
    }

    /// Averages over non-overlapping `patch` x `patch` tiles and broadcasts
    /// the mean back, leaving a piecewise-constant map.
    pub fn tile_average(&mut self, input: NodeId, patch: usize) -> NodeId {
        let value = tile_average_apply(&self.nodes[input].value, patch);
        self.push(Op::TileAvg { input, patch }, value)
    }

    /// Gathers C single-channel maps into one C-channel tensor.
    pub fn stack_channels(&mut self, inputs: Vec<NodeId>) -> NodeId {
        let (c0, h, w) = self.nodes[inputs[0]].value.shape();
        debug_assert_eq!(c0, 1);
        let mut value = Tensor::zeros(inputs.len(), h, w);
        for (i, &id) in inputs.iter().enumerate() {
            debug_assert_eq!(self.nodes[id].value.shape(), (1, h, w));
            value.plane_mut(i).copy_from_slice(self.nodes[id].value.plane(0));
        }
        self.push(Op::StackChannels { inputs }, value)
    }

    /// Per-pixel softmax across channels with max subtraction.
    pub fn softmax_channels(&mut self, input: NodeId) -> NodeId {
        let value = softmax_channels_apply(&self.nodes[input].value);
        self.push(Op::SoftmaxChannels { input }, value)
    }

    /// Per-pixel clamp to [0,1] and renormalization (uniform fallback when
    /// the pixel sum is below 1e-8).
    pub fn direct_weights(&mut self, input: NodeId) -> NodeId {
        let value = direct_weights_apply(&self.nodes[input].value);
        self.push(Op::DirectWeights { input }, value)
    }

    /// x = sum_c weights[c] (*) images[c], single-channel weights broadcast
    /// over the image channels.
    pub fn fuse_weighted(&mut self, weights: NodeId, images: Vec<Tensor>) -> NodeId {
        let value = fuse_weighted_apply(&self.nodes[weights].value, &images);
        self.push(Op::FuseWeighted { weights, images }, value)
    }

    /// Mean absolute error against a constant target; scalar node.
    pub fn l1_loss(&mut self, input: NodeId, target: Tensor) -> NodeId {
        let x = &self.nodes[input].value;
        debug_assert!(x.same_shape(&target));
        let n = x.data.len() as f64;
        let v = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        self.push(Op::L1Loss { input, target }, Tensor::scalar(v))
    }

    /// Mean squared error against a constant target; scalar node.
    pub fn mse_loss(&mut self, input: NodeId, target: Tensor) -> NodeId {
        let x = &self.nodes[input].value;
        debug_assert!(x.same_shape(&target));
        let n = x.data.len() as f64;
        let v = x
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(Op::MseLoss { input, target }, Tensor::scalar(v))
    }

    /// Negative log-likelihood weighting loss with TV smoothing:
    ///
    /// (1/C) * sum_c [ mean(exp(-lv_c) (w_c - t_c)^2) + mean(lv_c / 2)
    ///                 + lambda_tv * tv(w_c) ]
    ///
    /// `log_var = None` freezes the variance head at zero.
    pub fn nll_loss(
        &mut self,
        weights: NodeId,
        log_var: Option<NodeId>,
        target: Tensor,
        lambda_tv: f64,
    ) -> NodeId {
        let w = &self.nodes[weights].value;
        debug_assert!(w.same_shape(&target));
        let (c, h, wd) = w.shape();
        let n = (h * wd) as f64;
        let zero;
        let lv = match log_var {
            Some(id) => {
                debug_assert!(self.nodes[id].value.same_shape(w));
                &self.nodes[id].value
            }
            None => {
                zero = Tensor::zeros(c, h, wd);
                &zero
            }
        };
        let mut total = 0.0;
        for ch in 0..c {
            let wp = w.plane(ch);
            let tp = target.plane(ch);
            let lp = lv.plane(ch);
            let mut acc = 0.0;
            for i in 0..wp.len() {
                let d = wp[i] - tp[i];
                acc += (-lp[i]).exp() * d * d + 0.5 * lp[i];
            }
            total += acc / n + lambda_tv * tv_value(wp, h, wd);
        }
        let v = total / c as f64;
        self.push(
            Op::NllLoss {
                weights,
                log_var,
                target,
                lambda_tv,
            },
            Tensor::scalar(v),
        )
    }

    /// ka * a + kb * b on scalar nodes.
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, ka: f64, kb: f64) -> NodeId {
        let v = ka * self.nodes[a].value.scalar_value() + kb * self.nodes[b].value.scalar_value();
        self.push(Op::AddScaled { a, b, ka, kb }, Tensor::scalar(v))
    }

    /// Reverse pass from the scalar node `loss`, accumulating parameter
    /// gradients into `grads`.
    pub fn backward(&self, loss: NodeId, grads: &mut GradSet) {
        let mut node_grads: Vec<Option<Tensor>> = (0..=loss).map(|_| None).collect();
        node_grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            let Some(g) = node_grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Conv3x3 { input, weight, bias } => {
                    let w = &self.params.entries[*weight];
                    debug_assert!(weight < bias, "weights declared before biases");
                    let (head, tail) = grads.grads.split_at_mut(*bias);
                    let din = conv3x3_backward(
                        &self.nodes[*input].value,
                        &w.data,
                        w.shape[0],
                        &g,
                        &mut head[*weight],
                        &mut tail[0],
                    );
                    accumulate(&mut node_grads[*input], din);
                }
                Op::Relu { input } => {
                    let mut din = g;
                    for (dv, out) in din.data.iter_mut().zip(&self.nodes[id].value.data) {
                        if *out <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::Dropout { input, mask } => {
                    let mut din = g;
                    for (dv, m) in din.data.iter_mut().zip(mask) {
                        *dv *= m;
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::MaxPool2 { input, argmax } => {
                    let src = &self.nodes[*input].value;
                    let (c, h, w) = src.shape();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut din = Tensor::zeros(c, h, w);
                    for ch in 0..c {
                        let gp = g.plane(ch);
                        let dp = din.plane_mut(ch);
                        for i in 0..oh * ow {
                            dp[argmax[ch * oh * ow + i]] += gp[i];
                        }
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::UpsampleNearest2 { input } => {
                    let src = &self.nodes[*input].value;
                    let (c, h, w) = src.shape();
                    let mut din = Tensor::zeros(c, h, w);
                    for ch in 0..c {
                        let gp = g.plane(ch);
                        let dp = din.plane_mut(ch);
                        for y in 0..h * 2 {
                            for x in 0..w * 2 {
                                dp[(y / 2) * w + x / 2] += gp[y * (w * 2) + x];
                            }
                        }
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::Add { a, b } => {
                    accumulate(&mut node_grads[*a], g.clone());
                    accumulate(&mut node_grads[*b], g);
                }
                Op::Sub { a, b } => {
                    let mut neg = g.clone();
                    for v in &mut neg.data {
                        *v = -*v;
                    }
                    accumulate(&mut node_grads[*a], g);
                    accumulate(&mut node_grads[*b], neg);
                }
                Op::TileAvg { input, patch } => {
                    // Self-adjoint: the gradient is tile-averaged too.
                    let din = tile_average_apply(&g, *patch);
                    accumulate(&mut node_grads[*input], din);
                }
                Op::StackChannels { inputs } => {
                    for (i, &src) in inputs.iter().enumerate() {
                        let (_, h, w) = self.nodes[src].value.shape();
                        let mut din = Tensor::zeros(1, h, w);
                        din.plane_mut(0).copy_from_slice(g.plane(i));
                        accumulate(&mut node_grads[src], din);
                    }
                }
                Op::SoftmaxChannels { input } => {
                    let w = &self.nodes[id].value;
                    let (c, h, wd) = w.shape();
                    let mut din = Tensor::zeros(c, h, wd);
                    let hw = h * wd;
                    for i in 0..hw {
                        let mut dot = 0.0;
                        for ch in 0..c {
                            dot += g.plane(ch)[i] * w.plane(ch)[i];
                        }
                        for ch in 0..c {
                            din.plane_mut(ch)[i] = w.plane(ch)[i] * (g.plane(ch)[i] - dot);
                        }
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::DirectWeights { input } => {
                    let s = &self.nodes[*input].value;
                    let w = &self.nodes[id].value;
                    let (c, h, wd) = s.shape();
                    let mut din = Tensor::zeros(c, h, wd);
                    for i in 0..h * wd {
                        let mut sum = 0.0;
                        for ch in 0..c {
                            sum += s.plane(ch)[i].clamp(0.0, 1.0);
                        }
                        if sum < 1e-8 {
                            continue; // uniform fallback has zero gradient
                        }
                        let mut dot = 0.0;
                        for ch in 0..c {
                            dot += g.plane(ch)[i] * w.plane(ch)[i];
                        }
                        for ch in 0..c {
                            let sv = s.plane(ch)[i];
                            if sv > 0.0 && sv < 1.0 {
                                din.plane_mut(ch)[i] = (g.plane(ch)[i] - dot) / sum;
                            }
                        }
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::FuseWeighted { weights, images } => {
                    let c = images.len();
                    let (_, h, w) = self.nodes[*weights].value.shape();
                    let img_ch = images[0].channels;
                    let mut din = Tensor::zeros(c, h, w);
                    for (ci, image) in images.iter().enumerate() {
                        let dp = din.plane_mut(ci);
                        for ch in 0..img_ch {
                            let gp = g.plane(ch);
                            let zp = image.plane(ch);
                            for i in 0..h * w {
                                dp[i] += gp[i] * zp[i];
                            }
                        }
                    }
                    accumulate(&mut node_grads[*weights], din);
                }
                Op::L1Loss { input, target } => {
                    let x = &self.nodes[*input].value;
                    let scale = g.scalar_value() / x.data.len() as f64;
                    let mut din = x.clone();
                    for (d, t) in din.data.iter_mut().zip(&target.data) {
                        let diff = *d - t;
                        *d = if diff > 0.0 {
                            scale
                        } else if diff < 0.0 {
                            -scale
                        } else {
                            0.0
                        };
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::MseLoss { input, target } => {
                    let x = &self.nodes[*input].value;
                    let scale = 2.0 * g.scalar_value() / x.data.len() as f64;
                    let mut din = x.clone();
                    for (d, t) in din.data.iter_mut().zip(&target.data) {
                        *d = scale * (*d - t);
                    }
                    accumulate(&mut node_grads[*input], din);
                }
                Op::NllLoss {
                    weights,
                    log_var,
                    target,
                    lambda_tv,
                } => {
                    let w = &self.nodes[*weights].value;
                    let (c, h, wd) = w.shape();
                    let n = (h * wd) as f64;
                    let gs = g.scalar_value();
                    let zero;
                    let lv = match log_var {
                        Some(id2) => &self.nodes[*id2].value,
                        None => {
                            zero = Tensor::zeros(c, h, wd);
                            &zero
                        }
                    };
                    let mut dw = Tensor::zeros(c, h, wd);
                    let mut dlv = Tensor::zeros(c, h, wd);
                    for ch in 0..c {
                        let wp = w.plane(ch);
                        let tp = target.plane(ch);
                        let lp = lv.plane(ch);
                        let dwp = dw.plane_mut(ch);
                        let dlp = dlv.plane_mut(ch);
                        for i in 0..wp.len() {
                            let d = wp[i] - tp[i];
                            let e = (-lp[i]).exp();
                            dwp[i] = gs * 2.0 * e * d / (n * c as f64);
                            dlp[i] = gs * (0.5 - e * d * d) / (n * c as f64);
                        }
                        if *lambda_tv != 0.0 {
                            tv_backward(wp, h, wd, gs * lambda_tv / c as f64, dwp);
                        }
                    }
                    accumulate(&mut node_grads[*weights], dw);
                    if let Some(id2) = log_var {
                        accumulate(&mut node_grads[*id2], dlv);
                    }
                }
                Op::AddScaled { a, b, ka, kb } => {
                    let gs = g.scalar_value();
                    accumulate(&mut node_grads[*a], Tensor::scalar(gs * ka));
                    accumulate(&mut node_grads[*b], Tensor::scalar(gs * kb));
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
    }
}

pub(crate) fn tile_average_apply(t: &Tensor, patch: usize) -> Tensor {
    let (c, h, w) = t.shape();
    debug_assert!(h % patch == 0 && w % patch == 0);
    let mut out = Tensor::zeros(c, h, w);
    let inv = 1.0 / (patch * patch) as f64;
    for ch in 0..c {
        let src = t.plane(ch);
        let dst = out.plane_mut(ch);
        for ty in (0..h).step_by(patch) {
            for tx in (0..w).step_by(patch) {
                let mut acc = 0.0;
                for y in ty..ty + patch {
                    for x in tx..tx + patch {
                        acc += src[y * w + x];
                    }
                }
                let mean = acc * inv;
                for y in ty..ty + patch {
                    for x in tx..tx + patch {
                        dst[y * w + x] = mean;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn softmax_channels_apply(s: &Tensor) -> Tensor {
    let (c, h, w) = s.shape();
    let mut out = Tensor::zeros(c, h, w);
    for i in 0..h * w {
        let mut m = f64::NEG_INFINITY;
        for ch in 0..c {
            m = m.max(s.plane(ch)[i]);
        }
        let mut sum = 0.0;
        for ch in 0..c {
            let e = (s.plane(ch)[i] - m).exp();
            out.plane_mut(ch)[i] = e;
            sum += e;
        }
        for ch in 0..c {
            out.plane_mut(ch)[i] /= sum;
        }
    }
    out
}

pub(crate) fn direct_weights_apply(s: &Tensor) -> Tensor {
    let (c, h, w) = s.shape();
    let mut out = Tensor::zeros(c, h, w);
    let uniform = 1.0 / c as f64;
    for i in 0..h * w {
        let mut sum = 0.0;
        for ch in 0..c {
            let v = s.plane(ch)[i].clamp(0.0, 1.0);
            out.plane_mut(ch)[i] = v;
            sum += v;
        }
        if sum < 1e-8 {
            for ch in 0..c {
                out.plane_mut(ch)[i] = uniform;
            }
        } else {
            for ch in 0..c {
                out.plane_mut(ch)[i] /= sum;
            }
        }
    }
    out
}

pub(crate) fn fuse_weighted_apply(weights: &Tensor, images: &[Tensor]) -> Tensor {
    let (c, h, w) = weights.shape();
    debug_assert_eq!(c, images.len());
    let img_ch = images[0].channels;
    let mut out = Tensor::zeros(img_ch, h, w);
    for (ci, image) in images.iter().enumerate() {
        let wp = weights.plane(ci);
        for ch in 0..img_ch {
            let zp = image.plane(ch);
            let op = out.plane_mut(ch);
            for i in 0..h * w {
                op[i] += wp[i] * zp[i];
            }
        }
    }
    out
}

/// Anisotropic total variation: mean over pixels of |dx| + |dy| with forward
/// differences and replicate boundary (zero difference at the last row/col).
pub(crate) fn tv_value(plane: &[f64], h: usize, w: usize) -> f64 {
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = plane[y * w + x];
            if x + 1 < w {
                acc += (plane[y * w + x + 1] - v).abs();
            }
            if y + 1 < h {
                acc += (plane[(y + 1) * w + x] - v).abs();
            }
        }
    }
    acc / (h * w) as f64
}

/// Accumulates `scale * d tv / d plane` into `dplane`.
pub(crate) fn tv_backward(plane: &[f64], h: usize, w: usize, scale: f64, dplane: &mut [f64]) {
    let k = scale / (h * w) as f64;
    for y in 0..h {
        for x in 0..w {
            let v = plane[y * w + x];
            if x + 1 < w {
                let d = plane[y * w + x + 1] - v;
                let s = if d > 0.0 {
                    k
                } else if d < 0.0 {
                    -k
                } else {
                    0.0
                };
                dplane[y * w + x + 1] += s;
                dplane[y * w + x] -= s;
            }
            if y + 1 < h {
                let d = plane[(y + 1) * w + x] - v;
                let s = if d > 0.0 {
                    k
                } else if d < 0.0 {
                    -k
                } else {
                    0.0
                };
                dplane[(y + 1) * w + x] += s;
                dplane[y * w + x] -= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_data(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn softmax_channels_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = rand_tensor(&mut rng, 4, 3, 3);
        let w = softmax_channels_apply(&s);
        for i in 0..9 {
            let sum: f64 = (0..4).map(|c| w.plane(c)[i]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_of_constant_is_zero_and_complement_symmetric() {
        let flat = vec![0.42; 12];
        assert_eq!(tv_value(&flat, 3, 4), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!((tv_value(&a, 4, 5) - tv_value(&b, 4, 5)).abs() < 1e-12);
    }

    #[test]
    fn tv_hand_example() {
        // [[0,1],[0,1]]: horizontal diffs 1 and 1, vertical 0s -> mean 0.5
        let m = vec![0.0, 1.0, 0.0, 1.0];
        assert!((tv_value(&m, 2, 2) - 0.5).abs() < 1e-12);
    }

    /// End-to-end finite-difference check of a graph exercising most ops:
    /// conv -> relu -> pool -> upsample -> add -> stack -> softmax -> losses.
    #[test]
    fn tape_gradients_match_finite_differences() {
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wdata: Vec<f64> = (0..2 * 9).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w = params.push("w", vec![2, 1, 3, 3], wdata);
        let b = params.push("b", vec![2], vec![0.1, -0.2]);
        let w2data: Vec<f64> = (0..2 * 9).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w2 = params.push("w2", vec![1, 2, 3, 3], w2data);
        let b2 = params.push("b2", vec![1], vec![0.05]);

        let input = rand_tensor(&mut rng, 1, 4, 4);
        let img_a = rand_tensor(&mut rng, 1, 4, 4);
        let img_b = rand_tensor(&mut rng, 1, 4, 4);
        let gt = rand_tensor(&mut rng, 1, 4, 4);
        let mut onehot = Tensor::zeros(2, 4, 4);
        for i in 0..16 {
            onehot.plane_mut(i % 2)[i] = 1.0;
        }

        let run = |p: &ParamSet| -> f64 {
            let mut tape = Tape::new(p);
            let x = tape.constant(input.clone());
            let c1 = tape.conv3x3(x, w, b);
            let r1 = tape.relu(c1);
            let pooled = tape.maxpool2(r1);
            let up = tape.upsample_nearest2(pooled);
            let merged = tape.add(up, r1);
            let s1 = tape.conv3x3(merged, w2, b2);
            let s2 = tape.tile_average(s1, 2);
            let stacked = tape.stack_channels(vec![s1, s2]);
            let wts = tape.softmax_channels(stacked);
            let lv = tape.sub(stacked, stacked); // zero log-variance with graph deps
            let nll = tape.nll_loss(wts, Some(lv), onehot.clone(), 0.01);
            let fused = tape.fuse_weighted(wts, vec![img_a.clone(), img_b.clone()]);
            let l1 = tape.l1_loss(fused, gt.clone());
            let total = tape.add_scaled(nll, l1, 1.0, 0.7);
            tape.value(total).scalar_value()
        };

        // Analytic gradients.
        let mut grads = GradSet::zeros_like(&params);
        {
            let mut tape = Tape::new(&params);
            let x = tape.constant(input.clone());
            let c1 = tape.conv3x3(x, w, b);
            let r1 = tape.relu(c1);
            let pooled = tape.maxpool2(r1);
            let up = tape.upsample_nearest2(pooled);
            let merged = tape.add(up, r1);
            let s1 = tape.conv3x3(merged, w2, b2);
            let s2 = tape.tile_average(s1, 2);
            let stacked = tape.stack_channels(vec![s1, s2]);
            let wts = tape.softmax_channels(stacked);
            let lv = tape.sub(stacked, stacked);
            let nll = tape.nll_loss(wts, Some(lv), onehot.clone(), 0.01);
            let fused = tape.fuse_weighted(wts, vec![img_a.clone(), img_b.clone()]);
            let l1 = tape.l1_loss(fused, gt.clone());
            let total = tape.add_scaled(nll, l1, 1.0, 0.7);
            tape.backward(total, &mut grads);
        }

        let h = 1e-5;
        let mut checked = 0;
        for e in 0..params.entries.len() {
            for i in (0..params.entries[e].data.len()).step_by(3) {
                let mut pp = params.clone();
                pp.entries[e].data[i] += h;
                let mut pm = params.clone();
                pm.entries[e].data[i] -= h;
                let fd = (run(&pp) - run(&pm)) / (2.0 * h);
                let an = grads.grads[e][i];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "param {e}[{i}]: fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 14);
    }

    #[test]
    fn direct_weights_handles_fallback_and_clamp() {
        let s = Tensor::from_data(2, 1, 2, vec![2.0, 0.0, -1.0, 0.0]);
        let w = direct_weights_apply(&s);
        // Pixel 0: clamp (2,-1) -> (1,0) -> weights (1,0).
        assert!((w.plane(0)[0] - 1.0).abs() < 1e-12);
        assert!(w.plane(1)[0].abs() < 1e-12);
        // Pixel 1: all zero -> uniform.
        assert!((w.plane(0)[1] - 0.5).abs() < 1e-12);
        assert!((w.plane(1)[1] - 0.5).abs() < 1e-12);
    }
}
