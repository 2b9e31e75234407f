use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Group normalization without affine parameters: each sample's channels
    /// are split into `groups` and standardized over (channels, H, W).
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::invalid(
                "group_norm",
                format!("{c} channels not divisible into {groups} groups"),
            ));
        }
        let len = c / groups * h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(n * groups);
        for chunk in src.chunks(len) {
            let mean = chunk.iter().sum::<f64>() / len as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            data.extend(chunk.iter().map(|v| (v - mean) * s));
        }
        let out = Tensor::new([n, c, h, w], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let y = ctx.output.data();
                let g = ctx.grad.data();
                let mut gx = Vec::with_capacity(y.len());
                for ((yc, gc), s) in y.chunks(len).zip(g.chunks(len)).zip(&inv_std) {
                    let mean_g = gc.iter().sum::<f64>() / len as f64;
                    let mean_gy = gc.iter().zip(yc).map(|(g, y)| g * y).sum::<f64>() / len as f64;
                    gx.extend(gc.iter().zip(yc).map(|(g, y)| s * (g - mean_g - y * mean_gy)));
                }
                vec![Some(Tensor::new(ctx.output.shape().to_vec(), gx).unwrap())]
            }),
        ))
    }
}
