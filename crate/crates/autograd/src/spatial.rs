use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Reflection without repeating the edge sample (`..., 2, 1, 0, 1, 2, ...`).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Bilinear source taps (half-pixel centers) for each output position.
fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Graph {
    /// Spatial gather: output pixel `i` of every plane copies input pixel
    /// `index[i]`. Backward scatters-adds. Covers padding, cropping and
    /// nearest-neighbour resampling.
    pub fn gather_spatial(&mut self, x: Var, oh: usize, ow: usize, index: Vec<usize>) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if index.len() != oh * ow || index.iter().any(|&i| i >= h * w) {
            return Err(TensorError::invalid("gather_spatial", "bad index map"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks(h * w) {
            data.extend(index.iter().map(|&i| plane[i]));
        }
        let out = Tensor::new([n, c, oh, ow], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
                for (gplane, plane) in gx
                    .data_mut()
                    .chunks_mut(h * w)
                    .zip(ctx.grad.data().chunks(oh * ow))
                {
                    for (&i, g) in index.iter().zip(plane) {
                        gplane[i] += g;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Reflect-pads bottom and right edges.
    pub fn pad_reflect(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        if bottom >= h.max(2) || right >= w.max(2) {
            return Err(TensorError::invalid(
                "pad_reflect",
                format!("padding ({bottom}, {right}) too large for {h}x{w}"),
            ));
        }
        let (oh, ow) = (h + bottom, w + right);
        let index = (0..oh * ow)
            .map(|i| {
                let y = reflect_index((i / ow) as isize, h);
                let x = reflect_index((i % ow) as isize, w);
                y * w + x
            })
            .collect();
        self.gather_spatial(x, oh, ow, index)
    }

    /// Replicate-pads every edge by `pad`.
    pub fn pad_replicate(&mut self, x: Var, pad: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let index = (0..oh * ow)
            .map(|i| {
                let y = ((i / ow) as isize - pad as isize).clamp(0, h as isize - 1) as usize;
                let x = ((i % ow) as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                y * w + x
            })
            .collect();
        self.gather_spatial(x, oh, ow, index)
    }

    /// Top-left `oh`x`ow` window starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, oh: usize, ow: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        if top + oh > h || left + ow > w {
            return Err(TensorError::invalid("crop", "window exceeds input"));
        }
        let index = (0..oh * ow)
            .map(|i| (top + i / ow) * w + left + i % ow)
            .collect();
        self.gather_spatial(x, oh, ow, index)
    }

    /// 2x2 average pooling with stride 2; odd trailing rows/cols are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(TensorError::invalid("avg_pool2", format!("input {h}x{w} too small")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks(h * w) {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    data.push(0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]));
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
                for (gplane, plane) in gx
                    .data_mut()
                    .chunks_mut(h * w)
                    .zip(ctx.grad.data().chunks(oh * ow))
                {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let g = 0.25 * plane[y * ow + xx];
                            let i = 2 * y * w + 2 * xx;
                            gplane[i] += g;
                            gplane[i + 1] += g;
                            gplane[i + w] += g;
                            gplane[i + w + 1] += g;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Bilinear resize with half-pixel centers (`align_corners = false`).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 {
            return Err(TensorError::invalid("resize_bilinear", "empty output"));
        }
        let ty = linear_taps(h, oh);
        let tx = linear_taps(w, ow);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks(h * w) {
            for &(y0, y1, wy) in &ty {
                for &(x0, x1, wx) in &tx {
                    let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                    let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                    data.push(top * (1.0 - wy) + bot * wy);
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
                for (gplane, plane) in gx
                    .data_mut()
                    .chunks_mut(h * w)
                    .zip(ctx.grad.data().chunks(oh * ow))
                {
                    let mut k = 0;
                    for &(y0, y1, wy) in &ty {
                        for &(x0, x1, wx) in &tx {
                            let g = plane[k];
                            k += 1;
                            gplane[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                            gplane[y0 * w + x1] += g * (1.0 - wy) * wx;
                            gplane[y1 * w + x0] += g * wy * (1.0 - wx);
                            gplane[y1 * w + x1] += g * wy * wx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Per-plane 4-neighbour Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]` with
    /// replicate borders. Not trainable.
    pub fn laplacian(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for plane in src.chunks(h * w) {
            for y in 0..h {
                let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
                for xx in 0..w {
                    let (left, right) = (xx.saturating_sub(1), (xx + 1).min(w - 1));
                    let centre = plane[y * w + xx];
                    let vertical = plane[up * w + xx] + plane[down * w + xx];
                    let horizontal = plane[y * w + left] + plane[y * w + right];
                    data.push((vertical + horizontal) - 4.0 * centre);
                }
            }
        }
        let out = Tensor::new([n, c, h, w], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
                for (gplane, plane) in gx
                    .data_mut()
                    .chunks_mut(h * w)
                    .zip(ctx.grad.data().chunks(h * w))
                {
                    for y in 0..h {
                        let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
                        for xx in 0..w {
                            let (left, right) = (xx.saturating_sub(1), (xx + 1).min(w - 1));
                            let g = plane[y * w + xx];
                            gplane[up * w + xx] += g;
                            gplane[down * w + xx] += g;
                            gplane[y * w + left] += g;
                            gplane[y * w + right] += g;
                            gplane[y * w + xx] -= 4.0 * g;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
