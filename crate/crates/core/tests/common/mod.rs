//! Straight-line reference implementations used as test oracles. Everything
//! here works on single samples with explicit loops and shares no code with
//! the library's graph ops.

#![allow(dead_code)]

use autograd::nn::Conv2d;
use autograd::{ParamStore, Tensor};
use inkdepth::context::{ChannelAttention, GlobalContext, LaplacianGating, LocalContext, SpatialAttention};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// CHW volume.
#[derive(Clone, Debug)]
pub struct Vol {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Vol {
    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        assert_eq!(s[0], 1, "oracles take one sample");
        Self {
            c: s[1],
            h: s[2],
            w: s[3],
            v: t.data().to_vec(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            v: self.v.iter().map(|&x| f(x)).collect(),
            ..self.clone()
        }
    }

    pub fn concat(parts: &[Vol]) -> Self {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(&p.v);
        }
        Self {
            c: parts.iter().map(|p| p.c).sum(),
            h,
            w,
            v,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Direct sliding-window convolution with zero padding.
pub fn conv(x: &Vol, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize, dil: usize) -> Vol {
    let ws = weight.shape();
    let (o, ci, k) = (ws[0], ws[1], ws[2]);
    assert_eq!(ci, x.c);
    let span = dil * (k - 1) + 1;
    let oh = (x.h + 2 * pad - span) / stride + 1;
    let ow = (x.w + 2 * pad - span) / stride + 1;
    let wd = weight.data();
    let mut v = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky * dil) as isize - pad as isize;
                            let ix = (ox * stride + kx * dil) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            acc += wd[((oc * ci + c) * k + ky) * k + kx] * x.at(c, iy as usize, ix as usize);
                        }
                    }
                }
                v[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Vol { c: o, h: oh, w: ow, v }
}

pub fn conv_layer(store: &ParamStore, layer: &Conv2d, x: &Vol) -> Vol {
    let w = store.get(layer.weight);
    let b = layer.bias.map(|b| store.get(b));
    let k = w.shape()[2];
    let dil = layer.opts.dilation;
    // recompute "same" padding independently of the layer options
    let pad = if layer.opts.stride == 1 { dil * (k - 1) / 2 } else { layer.opts.padding };
    conv(x, &w, b.as_ref(), layer.opts.stride, pad, dil)
}

/// 4-neighbour Laplacian with replicate borders, by explicit index clamping.
pub fn laplacian(x: &Vol) -> Vol {
    let mut v = vec![0.0; x.v.len()];
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let (yi, xi) = (y as isize, xx as isize);
                let up = x.at(c, clamp(yi - 1, x.h), xx);
                let down = x.at(c, clamp(yi + 1, x.h), xx);
                let left = x.at(c, y, clamp(xi - 1, x.w));
                let right = x.at(c, y, clamp(xi + 1, x.w));
                v[(c * x.h + y) * x.w + xx] = up + down + left + right - 4.0 * x.at(c, y, xx);
            }
        }
    }
    Vol { v, ..x.clone() }
}

pub fn spatial_attention(sa: &SpatialAttention, store: &ParamStore, f: &Vol) -> Vol {
    let branches: Vec<Vol> = sa
        .branches
        .iter()
        .map(|b| conv_layer(store, b, f).map(silu))
        .collect();
    let gate = conv_layer(store, &sa.fuse, &Vol::concat(&branches)).map(sigmoid);
    let lap = laplacian(f);
    let hw = f.h * f.w;
    let mut out = f.clone();
    for c in 0..f.c {
        let plane = &lap.v[c * hw..(c + 1) * hw];
        let peak = plane.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..hw {
            let gain = match sa.gating {
                LaplacianGating::OnePlusAbs => 1.0 + plane[i].abs() / (peak + 1e-12),
                LaplacianGating::Raw => plane[i],
            };
            out.v[c * hw + i] = f.v[c * hw + i] * gate.v[i] * gain;
        }
    }
    out
}

pub fn channel_gate(ca: &ChannelAttention, store: &ParamStore, f: &Vol) -> Vec<f64> {
    let hw = (f.h * f.w) as f64;
    let pooled: Vec<f64> = (0..f.c)
        .map(|c| f.v[c * f.h * f.w..(c + 1) * f.h * f.w].iter().sum::<f64>() / hw)
        .collect();
    let pooled = Vol { c: f.c, h: 1, w: 1, v: pooled };
    let hidden = conv_layer(store, &ca.squeeze, &pooled).map(|v| v.max(0.0));
    conv_layer(store, &ca.excite, &hidden).map(sigmoid).v
}

pub fn channel_attention(ca: &ChannelAttention, store: &ParamStore, f: &Vol) -> Vol {
    let gate = channel_gate(ca, store, f);
    let hw = f.h * f.w;
    let mut out = f.clone();
    for (i, v) in out.v.iter_mut().enumerate() {
        *v *= gate[i / hw];
    }
    out
}

pub fn local_context(lcm: &LocalContext, store: &ParamStore, f: &Vol) -> Vol {
    let s = spatial_attention(&lcm.spatial, store, f);
    let c = channel_attention(&lcm.channel, store, f);
    let mut out = f.clone();
    for i in 0..out.v.len() {
        out.v[i] += s.v[i] + c.v[i];
    }
    out
}

/// Attention weights `[HW][HW]` and the GCM output, with an O(N^2) loop.
pub fn global_context(gcm: &GlobalContext, store: &ParamStore, f: &Vol) -> (Vec<Vec<f64>>, Vol) {
    let q = conv_layer(store, &gcm.query, f);
    let k = conv_layer(store, &gcm.key, f);
    let v = conv_layer(store, &gcm.value, f);
    let n = f.h * f.w;
    let dk = q.c;
    let mut attn = vec![vec![0.0; n]; n];
    for i in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|j| (0..dk).map(|d| q.v[d * n + i] * k.v[d * n + j]).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for j in 0..n {
            attn[i][j] = (scores[j] - m).exp() / z;
        }
    }
    let mut y = f.clone();
    for c in 0..f.c {
        for i in 0..n {
            let mix: f64 = (0..n).map(|j| attn[i][j] * v.v[c * n + j]).sum();
            y.v[c * n + i] += mix;
        }
    }
    (attn, channel_attention(&gcm.channel, store, &y))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Log loss with the squared sum expanded into an explicit double sum.
pub fn depth_loss(pred: &[f64], target: &[f64], lambda: f64) -> f64 {
    let d: Vec<f64> = pred.iter().zip(target).map(|(p, t)| (p / t).ln()).collect();
    let n = d.len() as f64;
    let mut first = 0.0;
    for x in &d {
        first += x * x;
    }
    let mut cross = 0.0;
    for a in &d {
        for b in &d {
            cross += a * b;
        }
    }
    first / n - lambda * cross / (n * n)
}

pub fn masked_l1(pred: &[f64], target: &[f64], mask: &[u8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..pred.len() {
        acc += (1.0 - mask[i] as f64) * (pred[i] - target[i]).abs();
    }
    acc / pred.len() as f64
}

pub fn adversarial(translated: &[f64], real: &[f64]) -> f64 {
    let a: f64 = translated.iter().map(|p| (1.0 - p).ln()).sum();
    let b: f64 = real.iter().map(|p| p.ln()).sum();
    a / translated.len() as f64 + b / real.len() as f64
}

pub fn positive_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..5.0)).collect()
}

/// Discriminator forward pass read from parameter names: three stride-2
/// 3x3 convolutions with leaky ReLU, a 1x1 head, sigmoid and clamp.
pub fn discriminator(store: &ParamStore, f: &Vol) -> Vec<f64> {
    let get = |name: &str| store.get(store.find(name).unwrap());
    let mut x = f.clone();
    for i in 0..3 {
        let w = get(&format!("conv{i}.weight"));
        let b = get(&format!("conv{i}.bias"));
        x = conv(&x, &w, Some(&b), 2, 1, 1).map(|v| if v > 0.0 { v } else { 0.2 * v });
    }
    let head = conv(&x, &get("head.weight"), Some(&get("head.bias")), 1, 0, 1);
    head.v.iter().map(|&v| sigmoid(v).clamp(1e-7, 1.0 - 1e-7)).collect()
}
