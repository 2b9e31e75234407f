use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Stride, zero padding and dilation of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvOpts {
    /// Stride 1 with "same" padding for a `k`x`k` kernel at `dilation`.
    pub fn same(k: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (k - 1) / 2,
            dilation,
        }
    }

    pub fn strided(k: usize, stride: usize) -> Self {
        Self {
            stride,
            padding: (k - 1) / 2,
            dilation: 1,
        }
    }

    pub fn output_size(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    opts: ConvOpts,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts == ConvOpts::default()
    }

    /// Input row/col for kernel tap `(ki, kj)` at output `(oy, ox)`.
    #[inline]
    fn source(&self, ki: usize, kj: usize, oy: usize, ox: usize) -> Option<(usize, usize)> {
        let o = self.opts;
        let y = (oy * o.stride + ki * o.dilation) as isize - o.padding as isize;
        let x = (ox * o.stride + kj * o.dilation) as isize - o.padding as isize;
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w)
            .then_some((y as usize, x as usize))
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let p = self.p();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            dst[oy * self.ow + ox] = match self.source(ki, kj, oy, ox) {
                                Some((y, x)) => img[(c * self.h + y) * self.w + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.p();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, x)) = self.source(ki, kj, oy, ox) {
                                img[(c * self.h + y) * self.w + x] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // row-major buffers whose lengths are checked in debug builds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// 2-D cross-correlation of `x: [N, Cin, H, W]` with `weight: [Cout,
    /// Cin, kh, kw]` plus optional `bias: [Cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, opts: ConvOpts) -> Result<Var> {
        let (n, cin, h, w) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(TensorError::mismatch(
                "conv2d",
                self.value(x).shape(),
                self.value(weight).shape(),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(TensorError::mismatch("conv2d bias", &[cout], self.value(b).shape()));
            }
        }
        if opts.stride == 0 || opts.dilation == 0 {
            return Err(TensorError::invalid("conv2d", "stride and dilation must be >= 1"));
        }
        let (oh, ow) = match (opts.output_size(h, kh), opts.output_size(w, kw)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(TensorError::invalid(
                    "conv2d",
                    format!("kernel {kh}x{kw} does not fit input {h}x{w} with {opts:?}"),
                ))
            }
        };
        let geo = Geometry {
            cin,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            opts,
        };
        let (k, p) = (geo.k(), geo.p());
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let mut out = vec![0.0; n * cout * p];
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for b in 0..n {
            let img = &xd[b * cin * h * w..(b + 1) * cin * h * w];
            let src: &[f64] = if geo.is_pointwise() {
                img
            } else {
                geo.im2col(img, &mut cols);
                &cols
            };
            gemm(cout, k, p, wd, false, src, false, &mut out[b * cout * p..(b + 1) * cout * p], 0.0);
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for (i, chunk) in out.chunks_mut(p).enumerate() {
                let bias = bd[i % cout];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let out = Tensor::new([n, cout, oh, ow], out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(
            out,
            parents,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let xd = ctx.inputs[0].data();
                let wd = ctx.inputs[1].data();
                let mut gx = ctx.needs[0].then(|| vec![0.0; n * cin * h * w]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; cout * k]);
                let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { k * p }];
                let mut dcols = vec![0.0; k * p];
                for b in 0..n {
                    let gb = &g[b * cout * p..(b + 1) * cout * p];
                    let img = &xd[b * cin * h * w..(b + 1) * cin * h * w];
                    if let Some(gw) = gw.as_mut() {
                        let src: &[f64] = if geo.is_pointwise() {
                            img
                        } else {
                            geo.im2col(img, &mut cols);
                            &cols
                        };
                        gemm(cout, p, k, gb, false, src, true, gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let gimg = &mut gx[b * cin * h * w..(b + 1) * cin * h * w];
                        if geo.is_pointwise() {
                            gemm(k, cout, p, wd, true, gb, false, gimg, 1.0);
                        } else {
                            gemm(k, cout, p, wd, true, gb, false, &mut dcols, 0.0);
                            geo.col2im(&dcols, gimg);
                        }
                    }
                }
                let mut grads = vec![
                    gx.map(|d| Tensor::new([n, cin, h, w], d).unwrap()),
                    gw.map(|d| Tensor::new([cout, cin, kh, kw], d).unwrap()),
                ];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        let mut gbias = vec![0.0; cout];
                        for (i, chunk) in g.chunks(p).enumerate() {
                            gbias[i % cout] += chunk.iter().sum::<f64>();
                        }
                        Tensor::new([cout], gbias).unwrap()
                    }));
                }
                grads
            }),
        ))
    }
}
