use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{broadcast_offsets, broadcast_shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees for one node.
pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// A tape of tensor operations, evaluated eagerly and differentiated in
/// reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<(u64, ParamId), Var>,
}

/// Result of [`Graph::backward`]: one optional gradient per node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter of `store` (zeros where the store did not
    /// take part in the graph).
    pub fn for_store(&self, graph: &Graph, store: &ParamStore) -> Vec<Tensor> {
        let n = store.len();
        (0..n)
            .map(|i| {
                let id = ParamId(i);
                graph
                    .bound
                    .get(&(store.id(), id))
                    .and_then(|v| self.get(*v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.shape(id)))
            })
            .collect()
    }
}

impl Graph {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (gradients are tracked).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a parameter; binding the same parameter twice returns the same
    /// node so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&(store.id(), id)) {
            return *v;
        }
        let v = self.leaf(store.get(id), true);
        self.bound.insert((store.id(), id), v);
        v
    }

    /// Reads a parameter as a constant: no gradient flows back to the store.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id))
    }

    /// Copies the value of `v` into a fresh constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub(crate) fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(bw) = &node.backward {
                let ctx = BackwardCtx {
                    grad: &grad,
                    inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                    output: &node.value,
                    needs: node
                        .parents
                        .iter()
                        .map(|p| self.nodes[p.0].requires_grad)
                        .collect(),
                };
                let parent_grads = bw(&ctx);
                for (p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[p.0].requires_grad {
                        continue;
                    }
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
            grads[i] = Some(grad);
        }
        Gradients { grads }
    }

    // ---- elementwise -------------------------------------------------

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value(x).map(f);
        self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let xs = ctx.inputs[0].data();
                let ys = ctx.output.data();
                let data = g
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(ctx.grad.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_, _| -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        dfa: fn(f64, f64) -> f64,
        dfb: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(op, av.shape(), bv.shape())?;
        let oa = broadcast_offsets(&out_shape, av.shape());
        let ob = broadcast_offsets(&out_shape, bv.shape());
        let (ad, bd) = (av.data(), bv.data());
        let data = oa.iter().zip(&ob).map(|(&i, &j)| f(ad[i], bd[j])).collect();
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let (av, bv) = (ctx.inputs[0], ctx.inputs[1]);
                let (ad, bd) = (av.data(), bv.data());
                let g = ctx.grad.data();
                let mut ga = ctx.needs[0].then(|| Tensor::zeros(av.shape().to_vec()));
                let mut gb = ctx.needs[1].then(|| Tensor::zeros(bv.shape().to_vec()));
                for (k, (&i, &j)) in oa.iter().zip(&ob).enumerate() {
                    if let Some(ga) = ga.as_mut() {
                        ga.data_mut()[i] += g[k] * dfa(ad[i], bd[j]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.data_mut()[j] += g[k] * dfb(ad[i], bd[j]);
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    /// Broadcasting addition (same rank; size-1 dims broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    // ---- reductions --------------------------------------------------

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(
            out,
            vec![x],
            Box::new(|ctx| {
                vec![Some(Tensor::full(
                    ctx.inputs[0].shape().to_vec(),
                    ctx.grad.item(),
                ))]
            }),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Spatial mean of an NCHW tensor, shape `[N, C, 1, 1]`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let src = self.value(x).data();
        let data = (0..n * c)
            .map(|nc| src[nc * hw..(nc + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::new([n, c, 1, 1], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
                for (nc, chunk) in gx.data_mut().chunks_mut(hw).enumerate() {
                    chunk.fill(g[nc] / hw as f64);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Spatial maximum of an NCHW tensor, shape `[N, C, 1, 1]`. The gradient
    /// goes to the first maximal element.
    pub fn max_spatial(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let src = self.value(x).data();
        let mut argmax = Vec::with_capacity(n * c);
        let mut data = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let plane = &src[nc * hw..(nc + 1) * hw];
            let mut best = 0;
            for (i, v) in plane.iter().enumerate() {
                if *v > plane[best] {
                    best = i;
                }
            }
            argmax.push(nc * hw + best);
            data.push(plane[best]);
        }
        let out = Tensor::new([n, c, 1, 1], data)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
                for (k, &i) in argmax.iter().enumerate() {
                    gx.data_mut()[i] += g[k];
                }
                vec![Some(gx)]
            }),
        ))
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .clone()
                        .reshape(ctx.inputs[0].shape().to_vec())
                        .unwrap(),
                )]
            }),
        ))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::invalid("concat_channels", "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut chans = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xn, xc, xh, xw) = self.value(x).dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(TensorError::mismatch(
                    "concat_channels",
                    self.value(first).shape(),
                    self.value(x).shape(),
                ));
            }
            chans.push(xc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&x, &c) in xs.iter().zip(&chans) {
                data.extend_from_slice(&self.value(x).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let out = Tensor::new([n, total, h, w], data)?;
        Ok(self.push(
            out,
            xs.to_vec(),
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads: Vec<Vec<f64>> =
                    chans.iter().map(|c| Vec::with_capacity(n * c * hw)).collect();
                for b in 0..n {
                    let mut off = b * total * hw;
                    for (gi, &c) in grads.iter_mut().zip(&chans) {
                        gi.extend_from_slice(&g[off..off + c * hw]);
                        off += c * hw;
                    }
                }
                grads
                    .into_iter()
                    .zip(&chans)
                    .zip(&ctx.needs)
                    .map(|((d, &c), &need)| {
                        need.then(|| Tensor::new([n, c, h, w], d).unwrap())
                    })
                    .collect()
            }),
        ))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
