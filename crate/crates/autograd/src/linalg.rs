use crate::conv::gemm;
use crate::error::{Result, TensorError};
use crate::graph::{sigmoid, Graph, Var};
use crate::tensor::Tensor;

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape()[..] {
        [b, m, n] => Ok((b, m, n)),
        _ => Err(TensorError::invalid(op, format!("expected rank 3, got {:?}", t.shape()))),
    }
}

impl Graph {
    /// Batched matrix product `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, m, k) = dims3(self.value(a), "matmul")?;
        let (bb, kb, n) = dims3(self.value(b), "matmul")?;
        if ba != bb || k != kb {
            return Err(TensorError::mismatch("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; ba * m * n];
        for i in 0..ba {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..],
                false,
                &bd[i * k * n..],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let out = Tensor::new([ba, m, n], out)?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let (ad, bd, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![0.0; ba * m * k];
                    for i in 0..ba {
                        gemm(m, n, k, &g[i * m * n..], false, &bd[i * k * n..], true, &mut ga[i * m * k..(i + 1) * m * k], 0.0);
                    }
                    Tensor::new([ba, m, k], ga).unwrap()
                });
                let gb = ctx.needs[1].then(|| {
                    let mut gb = vec![0.0; ba * k * n];
                    for i in 0..ba {
                        gemm(k, m, n, &ad[i * m * k..], true, &g[i * m * n..], false, &mut gb[i * k * n..(i + 1) * k * n], 0.0);
                    }
                    Tensor::new([ba, k, n], gb).unwrap()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (b, m, n) = dims3(self.value(x), "transpose")?;
        let out = Tensor::new([b, n, m], transpose3(self.value(x).data(), b, m, n))?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                vec![Some(
                    Tensor::new([b, m, n], transpose3(ctx.grad.data(), b, n, m)).unwrap(),
                )]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("softmax", "rank 0"))?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(last) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let y = ctx.output.data();
                let g = ctx.grad.data();
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(last).zip(g.chunks(last)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                vec![Some(Tensor::new(ctx.output.shape().to_vec(), gx).unwrap())]
            }),
        ))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `target`
    /// (same shape), evaluated in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(TensorError::mismatch("bce_with_logits", z.shape(), target.shape()));
        }
        let n = z.numel() as f64;
        let loss: f64 = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let target = target.clone();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |ctx| {
                let scale = ctx.grad.item() / n;
                let data = ctx.inputs[0]
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&z, &t)| scale * (sigmoid(z) - t))
                    .collect();
                vec![Some(Tensor::new(target.shape().to_vec(), data).unwrap())]
            }),
        ))
    }
}

fn transpose3(src: &[f64], b: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..b {
        for r in 0..m {
            for c in 0..n {
                out[i * m * n + c * m + r] = src[i * m * n + r * n + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 3, 5], |i| (i as f64 * 0.7).sin() * 40.0));
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_small() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new([1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::new([1, 3, 1], vec![1., 0., -1.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[-2.0, -2.0]);
        let t = g.transpose(a).unwrap();
        assert_eq!(g.value(t).data(), &[1., 4., 2., 5., 3., 6.]);
    }
}
