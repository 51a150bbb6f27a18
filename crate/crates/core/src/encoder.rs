//! Convolutional descriptor network with a dense adjacency-regression head.
//!
//! Per block: 3x3 same-padded convolution, ReLU, 2x2 average pool (stride 2).
//! Then global average pooling, a dense layer to `gamma` units with ReLU (the
//! descriptor), and a linear dense layer to `C * C` outputs (the predicted,
//! row-major adjacency matrix).
//!
//! Gradients are derived by hand; all arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::image::Image;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub block_widths: Vec<usize>,
    pub gamma: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Defaults: two blocks of 16 and 32 channels, `gamma = 128`.
    pub fn new(input_channels: usize, input_height: usize, input_width: usize, num_classes: usize) -> Self {
        Self {
            input_channels,
            input_height,
            input_width,
            block_widths: vec![16, 32],
            gamma: 128,
            num_classes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_channels", self.input_channels),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("gamma", self.gamma),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.block_widths.is_empty() || self.block_widths.contains(&0) {
            return Err(Error::invalid("need at least one conv block, each with >= 1 channel"));
        }
        let blocks = self.block_widths.len() as u32;
        let factor = 1usize.checked_shl(blocks).filter(|&f| f > 0 && blocks < 32);
        match factor {
            Some(f) if self.input_height.is_multiple_of(f) && self.input_width.is_multiple_of(f) => Ok(()),
            _ => Err(Error::invalid(format!(
                "input {}x{} not divisible by 2^{blocks}",
                self.input_height, self.input_width
            ))),
        }
    }

    pub fn output_len(&self) -> usize {
        self.num_classes * self.num_classes
    }

    fn pooled_width(&self) -> usize {
        *self.block_widths.last().expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `out x in x 3 x 3`, row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `in x out`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

/// Network parameters. The same layout holds gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub blocks: Vec<ConvParams>,
    pub descriptor: DenseParams,
    pub head: DenseParams,
}

pub type Gradients = EncoderParams;

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.block_widths.len());
        let mut cin = cfg.input_channels;
        for &cout in &cfg.block_widths {
            blocks.push(ConvParams {
                kernel: vec![0.0; cout * cin * 9],
                bias: vec![0.0; cout],
                in_channels: cin,
                out_channels: cout,
            });
            cin = cout;
        }
        let dense = |inputs: usize, outputs: usize| DenseParams {
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            inputs,
            outputs,
        };
        Ok(Self {
            blocks,
            descriptor: dense(cfg.pooled_width(), cfg.gamma),
            head: dense(cfg.gamma, cfg.output_len()),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every tensor in declaration order: each block's kernel then bias, then
    /// the descriptor layer's weight and bias, then the head's.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 4);
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.kernel"), b.kernel.as_slice()));
            out.push((format!("block{i}.bias"), b.bias.as_slice()));
        }
        out.push(("descriptor.weight".into(), self.descriptor.weight.as_slice()));
        out.push(("descriptor.bias".into(), self.descriptor.bias.as_slice()));
        out.push(("head.weight".into(), self.head.weight.as_slice()));
        out.push(("head.bias".into(), self.head.bias.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 4);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.kernel"), b.kernel.as_mut_slice()));
            out.push((format!("block{i}.bias"), b.bias.as_mut_slice()));
        }
        out.push(("descriptor.weight".into(), self.descriptor.weight.as_mut_slice()));
        out.push(("descriptor.bias".into(), self.descriptor.bias.as_mut_slice()));
        out.push(("head.weight".into(), self.head.weight.as_mut_slice()));
        out.push(("head.bias".into(), self.head.bias.as_mut_slice()));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let expect = Self::zeros(cfg)?;
        let same = self.tensors().len() == expect.tensors().len()
            && self
                .tensors()
                .iter()
                .zip(expect.tensors())
                .all(|((_, a), (_, b))| a.len() == b.len());
        if same {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match encoder config".into()))
        }
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits of every value.
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (_, t) in self.tensors() {
            for v in t {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// He-style initialization: weights uniform on `±sqrt(3) * sqrt(2 / fan_in)`
/// (zero mean, standard deviation `sqrt(2 / fan_in)`), biases zero. Tensors
/// draw from one SplitMix64 stream seeded with `cfg.seed`, in declaration
/// order.
pub fn init_params(cfg: &EncoderConfig) -> Result<EncoderParams> {
    let mut params = EncoderParams::zeros(cfg)?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut fill = |w: &mut [f64], fan_in: usize| {
        let limit = 3f64.sqrt() * (2.0 / fan_in as f64).sqrt();
        for x in w {
            *x = rng.uniform(-limit, limit);
        }
    };
    for b in &mut params.blocks {
        fill(&mut b.kernel, b.in_channels * 9);
    }
    let d = &mut params.descriptor;
    fill(&mut d.weight, d.inputs);
    let h = &mut params.head;
    fill(&mut h.weight, h.inputs);
    Ok(params)
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Vec<f64>,
    /// Convolution output before ReLU.
    pre: Vec<f64>,
    height: usize,
    width: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    final_height: usize,
    final_width: usize,
    pooled: Vec<f64>,
    descriptor_pre: Vec<f64>,
    fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub descriptor: Vec<f64>,
    pub predicted_adjacency: Vec<f64>,
    pub cache: ForwardCache,
}

fn conv3x3(input: &[f64], p: &ConvParams, h: usize, w: usize) -> Vec<f64> {
    let (cin, cout) = (p.in_channels, p.out_channels);
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(p.bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                for kx in 0..3 {
                    let k = p.kernel[((o * cin + i) * 3 + ky) * 3 + kx];
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += k * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a 3x3 convolution. Returns the input gradient only when
/// `want_input` is set.
fn conv3x3_backward(
    input: &[f64],
    dout: &[f64],
    p: &ConvParams,
    g: &mut ConvParams,
    h: usize,
    w: usize,
    want_input: bool,
) -> Option<Vec<f64>> {
    let (cin, cout) = (p.in_channels, p.out_channels);
    let plane = h * w;
    let mut din = want_input.then(|| vec![0.0; cin * plane]);
    for o in 0..cout {
        let dz = &dout[o * plane..(o + 1) * plane];
        g.bias[o] += dz.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                for kx in 0..3 {
                    let idx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let k = p.kernel[idx];
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &dz[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += d.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(din) = din.as_mut() {
                            let di = &mut din[i * plane + sy * w + x0 + kx - 1..i * plane + sy * w + x1 + kx - 1];
                            for (t, a) in di.iter_mut().zip(d) {
                                *t += k * a;
                            }
                        }
                    }
                    g.kernel[idx] += acc;
                }
            }
        }
    }
    din
}

fn relu_pool(pre: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * ph * pw];
    for c in 0..channels {
        for y in 0..ph {
            for x in 0..pw {
                let at = |yy: usize, xx: usize| pre[(c * h + yy) * w + xx].max(0.0);
                let s = at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1);
                out[(c * ph + y) * pw + x] = 0.25 * s;
            }
        }
    }
    out
}

/// Backward through pool then ReLU: returns the gradient w.r.t. `pre`.
fn relu_pool_backward(pre: &[f64], dpooled: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut dpre = vec![0.0; pre.len()];
    for c in 0..channels {
        for y in 0..ph {
            for x in 0..pw {
                let g = 0.25 * dpooled[(c * ph + y) * pw + x];
                for (yy, xx) in [(2 * y, 2 * x), (2 * y, 2 * x + 1), (2 * y + 1, 2 * x), (2 * y + 1, 2 * x + 1)] {
                    let i = (c * h + yy) * w + xx;
                    if pre[i] > 0.0 {
                        dpre[i] = g;
                    }
                }
            }
        }
    }
    dpre
}

fn dense(x: &[f64], p: &DenseParams) -> Vec<f64> {
    let mut out = p.bias.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &p.weight[i * p.outputs..(i + 1) * p.outputs];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

/// Accumulates dense-layer gradients; returns the input gradient.
fn dense_backward(x: &[f64], dout: &[f64], p: &DenseParams, g: &mut DenseParams) -> Vec<f64> {
    for (gb, d) in g.bias.iter_mut().zip(dout) {
        *gb += d;
    }
    let mut dx = vec![0.0; p.inputs];
    for (i, &xi) in x.iter().enumerate() {
        let row = &p.weight[i * p.outputs..(i + 1) * p.outputs];
        let grow = &mut g.weight[i * p.outputs..(i + 1) * p.outputs];
        let mut acc = 0.0;
        for ((gw, wv), d) in grow.iter_mut().zip(row).zip(dout) {
            *gw += xi * d;
            acc += wv * d;
        }
        dx[i] = acc;
    }
    dx
}

pub fn forward(params: &EncoderParams, cfg: &EncoderConfig, image: &Image) -> Result<ForwardResult> {
    params.check_shapes(cfg)?;
    if (image.channels(), image.height(), image.width())
        != (cfg.input_channels, cfg.input_height, cfg.input_width)
    {
        return Err(Error::Shape(format!(
            "image is {}x{}x{}, encoder expects {}x{}x{}",
            image.channels(),
            image.height(),
            image.width(),
            cfg.input_channels,
            cfg.input_height,
            cfg.input_width
        )));
    }
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input image".into()));
    }

    let (mut h, mut w) = (cfg.input_height, cfg.input_width);
    let mut x = image.data().to_vec();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for p in &params.blocks {
        let pre = conv3x3(&x, p, h, w);
        let pooled = relu_pool(&pre, p.out_channels, h, w);
        blocks.push(BlockCache {
            input: std::mem::replace(&mut x, pooled),
            pre,
            height: h,
            width: w,
        });
        h /= 2;
        w /= 2;
    }
    let plane = (h * w) as f64;
    let gap: Vec<f64> = x.chunks(h * w).map(|c| c.iter().sum::<f64>() / plane).collect();
    let descriptor_pre = dense(&gap, &params.descriptor);
    let descriptor: Vec<f64> = descriptor_pre.iter().map(|v| v.max(0.0)).collect();
    let predicted_adjacency = dense(&descriptor, &params.head);
    Ok(ForwardResult {
        descriptor,
        predicted_adjacency,
        cache: ForwardCache {
            blocks,
            final_height: h,
            final_width: w,
            pooled: x,
            descriptor_pre,
            fingerprint: params.fingerprint(),
        },
    })
}

/// `sum_{p,q} (A[p][q] - A*[p][q])^2 / C^2` for one image.
pub fn rrl_loss(predicted: &[f64], target: &AdjacencyMatrix) -> Result<f64> {
    let t = target.as_slice();
    if predicted.len() != t.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target has {}",
            predicted.len(),
            t.len()
        )));
    }
    let c2 = t.len() as f64;
    Ok(predicted.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / c2)
}

/// Loss and exact gradients for one image.
pub fn backward(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    fwd: &ForwardResult,
    target: &AdjacencyMatrix,
) -> Result<(f64, Gradients)> {
    params.check_shapes(cfg)?;
    let cache = &fwd.cache;
    if cache.fingerprint != params.fingerprint() || cache.blocks.len() != params.blocks.len() {
        return Err(Error::invalid("forward cache was produced with different parameters"));
    }
    if target.size() != cfg.num_classes {
        return Err(Error::Shape(format!(
            "target is {0}x{0}, encoder predicts {1}x{1}",
            target.size(),
            cfg.num_classes
        )));
    }
    let loss = rrl_loss(&fwd.predicted_adjacency, target)?;
    let c2 = target.as_slice().len() as f64;
    let dout: Vec<f64> = fwd
        .predicted_adjacency
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| 2.0 * (a - b) / c2)
        .collect();

    let mut grads = params.zeros_like();
    let ddesc = dense_backward(&fwd.descriptor, &dout, &params.head, &mut grads.head);
    let dpre: Vec<f64> = ddesc
        .iter()
        .zip(&cache.descriptor_pre)
        .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
        .collect();
    let (h, w) = (cache.final_height, cache.final_width);
    let plane = h * w;
    let gap: Vec<f64> = cache
        .pooled
        .chunks(plane)
        .map(|c| c.iter().sum::<f64>() / plane as f64)
        .collect();
    let dgap = dense_backward(&gap, &dpre, &params.descriptor, &mut grads.descriptor);
    let mut dx: Vec<f64> = dgap
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect();

    for (i, (p, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let dz = relu_pool_backward(&bc.pre, &dx, p.out_channels, bc.height, bc.width);
        match conv3x3_backward(&bc.input, &dz, p, &mut grads.blocks[i], bc.height, bc.width, i > 0) {
            Some(d) => dx = d,
            None => break,
        }
    }
    Ok((loss, grads))
}
