//! Flat DAG executor for convolutional feature extractors.
//!
//! Nodes are stored in topological order (builders only reference earlier
//! nodes). The eval path frees intermediate activations as soon as their
//! last consumer has run; the training path keeps a full tape.

use ndarray::{Array2, Array4, Axis};

use super::ops::{
    dim4, Activation, BatchNorm2d, Conv2d, DwConv2d, NnError, OpCache, PadSpec, Pool2d, Result,
};
use super::Tensor;

#[derive(Debug, Clone)]
pub enum Op {
    /// The image batch enters here; must be node 0.
    Input,
    Conv(Conv2d),
    DwConv(DwConv2d),
    Bn(BatchNorm2d),
    Act(Activation),
    MaxPool(Pool2d),
    AvgPool(Pool2d),
    ZeroPad(PadSpec),
    /// Collapse H and W by averaging; `keepdims` keeps a [N,C,1,1] tensor.
    GlobalAvgPool { keepdims: bool },
    /// Elementwise sum of all inputs.
    Add,
    /// Multiply by a fixed scalar (residual branch scaling).
    Scale(f64),
    /// Channel-wise scaling: first input [N,C,H,W], second [N,C,1,1].
    ScaleChannels,
    /// Concatenate along the channel axis.
    ConcatC,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
}

/// Per-node forward state kept for the backward pass.
pub struct GraphTape {
    pub values: Vec<Tensor>,
    pub caches: Vec<OpCache>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub output: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: vec![Node {
                op: Op::Input,
                inputs: vec![],
            }],
            output: 0,
        }
    }

    /// Append a node and return its id.
    pub fn push(&mut self, op: Op, inputs: &[usize]) -> usize {
        for &i in inputs {
            assert!(i < self.nodes.len(), "inputs must reference earlier nodes");
        }
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
        });
        self.output = self.nodes.len() - 1;
        self.output
    }

    /// Inference forward pass to pooled features, freeing intermediates as
    /// their last consumer completes.
    pub fn features(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let mut refcount = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                refcount[i] += 1;
            }
        }
        refcount[self.output] += 1;

        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let y = {
                let ins: Vec<&Tensor> = node
                    .inputs
                    .iter()
                    .map(|&j| values[j].as_ref().expect("input computed"))
                    .collect();
                eval_op(&node.op, &ins, x)?
            };
            values[i] = Some(y);
            for &j in &node.inputs {
                refcount[j] -= 1;
                if refcount[j] == 0 {
                    values[j] = None;
                }
            }
        }
        match values[self.output].take().expect("output computed") {
            Tensor::T2(f) => Ok(f),
            Tensor::T4(_) => Err(NnError::Shape {
                op: "graph",
                detail: "output node is not pooled features".into(),
            }),
        }
    }

    /// Training forward pass: batch-norm layers use batch statistics and
    /// update their moving averages; every activation is kept on the tape.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array2<f64>, GraphTape)> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut caches: Vec<OpCache> = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            let (y, cache) = {
                let node = &mut self.nodes[i];
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &values[j]).collect();
                train_op(&mut node.op, &ins, x)?
            };
            values.push(y);
            caches.push(cache);
        }
        let features = match &values[self.output] {
            Tensor::T2(f) => f.clone(),
            Tensor::T4(_) => {
                return Err(NnError::Shape {
                    op: "graph",
                    detail: "output node is not pooled features".into(),
                })
            }
        };
        Ok((features, GraphTape { values, caches }))
    }

    /// Accumulate parameter gradients from d(features); returns d(input).
    pub fn backward(&mut self, tape: &GraphTape, dfeatures: &Array2<f64>) -> Result<Array4<f64>> {
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n_nodes];
        grads[self.output] = Some(Tensor::T2(dfeatures.clone()));

        for i in (0..n_nodes).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node_inputs = self.nodes[i].inputs.clone();
            let dxs = {
                let ins: Vec<&Tensor> = node_inputs.iter().map(|&j| &tape.values[j]).collect();
                backward_op(&mut self.nodes[i].op, &ins, &tape.caches[i], &dy)?
            };
            debug_assert_eq!(dxs.len(), node_inputs.len());
            for (&j, dx) in node_inputs.iter().zip(dxs) {
                grads[j] = Some(match grads[j].take() {
                    Some(acc) => super::ops::tensor_add(&acc, &dx),
                    None => dx,
                });
            }
            if i == 0 {
                // Input node: its "gradient" is d(input), handled below.
                grads[0] = Some(dy);
            }
        }
        match grads[0].take() {
            Some(Tensor::T4(dx)) => Ok(dx),
            _ => Err(NnError::Shape {
                op: "graph",
                detail: "no gradient reached the input".into(),
            }),
        }
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let name = |part: &str| format!("node{i}.{part}");
            match &mut node.op {
                Op::Conv(c) => {
                    f(
                        &name("w"),
                        c.w.v.as_slice_mut().unwrap(),
                        c.w.g.as_slice_mut().unwrap(),
                    );
                    if let Some(b) = &mut c.b {
                        f(
                            &name("b"),
                            b.v.as_slice_mut().unwrap(),
                            b.g.as_slice_mut().unwrap(),
                        );
                    }
                }
                Op::DwConv(c) => {
                    f(
                        &name("w"),
                        c.w.v.as_slice_mut().unwrap(),
                        c.w.g.as_slice_mut().unwrap(),
                    );
                    if let Some(b) = &mut c.b {
                        f(
                            &name("b"),
                            b.v.as_slice_mut().unwrap(),
                            b.g.as_slice_mut().unwrap(),
                        );
                    }
                }
                Op::Bn(bn) => {
                    if let Some(g) = &mut bn.gamma {
                        f(
                            &name("gamma"),
                            g.v.as_slice_mut().unwrap(),
                            g.g.as_slice_mut().unwrap(),
                        );
                    }
                    f(
                        &name("beta"),
                        bn.beta.v.as_slice_mut().unwrap(),
                        bn.beta.g.as_slice_mut().unwrap(),
                    );
                    // Moving statistics carry no gradient; expose them with a
                    // zero-length grad sentinel for counting/serialization.
                    let mm = bn.moving_mean.as_slice_mut().unwrap();
                    let mut empty: [f64; 0] = [];
                    f(&name("moving_mean"), mm, &mut empty);
                    let mv = bn.moving_var.as_slice_mut().unwrap();
                    let mut empty2: [f64; 0] = [];
                    f(&name("moving_var"), mv, &mut empty2);
                }
                _ => {}
            }
        }
    }

    /// Total stored parameter values (conv weights/biases, BN terms
    /// including moving statistics).
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v, _| n += v.len());
        n
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn eval_op(op: &Op, ins: &[&Tensor], input: &Array4<f64>) -> Result<Tensor> {
    match op {
        Op::Input => Ok(Tensor::T4(input.clone())),
        Op::Conv(c) => Ok(Tensor::T4(c.forward(ins[0].as4(), false)?.0)),
        Op::DwConv(c) => Ok(Tensor::T4(c.forward(ins[0].as4())?)),
        Op::Bn(bn) => Ok(Tensor::T4(bn.eval(ins[0].as4()))),
        Op::Act(a) => Ok(apply_act(*a, ins[0])),
        Op::MaxPool(p) => Ok(Tensor::T4(p.max_forward(ins[0].as4())?.0)),
        Op::AvgPool(p) => Ok(Tensor::T4(p.avg_forward(ins[0].as4())?)),
        Op::ZeroPad(p) => Ok(Tensor::T4(p.forward(ins[0].as4()))),
        Op::GlobalAvgPool { keepdims } => Ok(global_avg_pool(ins[0].as4(), *keepdims)),
        Op::Add => {
            let mut acc = ins[0].as4().clone();
            for t in &ins[1..] {
                acc = acc + t.as4();
            }
            Ok(Tensor::T4(acc))
        }
        Op::Scale(s) => Ok(Tensor::T4(ins[0].as4().mapv(|v| v * s))),
        Op::ScaleChannels => Ok(Tensor::T4(scale_channels(ins[0].as4(), ins[1].as4()))),
        Op::ConcatC => concat_channels(ins),
    }
}

fn train_op(op: &mut Op, ins: &[&Tensor], input: &Array4<f64>) -> Result<(Tensor, OpCache)> {
    match op {
        Op::Conv(c) => {
            let (y, cache) = c.forward(ins[0].as4(), true)?;
            Ok((Tensor::T4(y), cache))
        }
        Op::Bn(bn) => {
            let (y, cache) = bn.train_forward(ins[0].as4());
            Ok((Tensor::T4(y), cache))
        }
        Op::MaxPool(p) => {
            let (y, cache) = p.max_forward(ins[0].as4())?;
            Ok((Tensor::T4(y), cache))
        }
        other => Ok((eval_op(other, ins, input)?, OpCache::None)),
    }
}

fn backward_op(op: &mut Op, ins: &[&Tensor], cache: &OpCache, dy: &Tensor) -> Result<Vec<Tensor>> {
    match op {
        Op::Input => Ok(vec![]),
        Op::Conv(c) => Ok(vec![Tensor::T4(c.backward(
            ins[0].as4(),
            cache,
            dy.as4(),
        )?)]),
        Op::DwConv(c) => Ok(vec![Tensor::T4(c.backward(ins[0].as4(), dy.as4())?)]),
        Op::Bn(bn) => Ok(vec![Tensor::T4(bn.backward(cache, dy.as4())?)]),
        Op::Act(a) => Ok(vec![act_backward(*a, ins[0], dy)]),
        Op::MaxPool(p) => Ok(vec![Tensor::T4(p.max_backward(
            ins[0].as4(),
            cache,
            dy.as4(),
        )?)]),
        Op::AvgPool(p) => Ok(vec![Tensor::T4(p.avg_backward(ins[0].as4(), dy.as4())?)]),
        Op::ZeroPad(p) => Ok(vec![Tensor::T4(p.backward(ins[0].as4(), dy.as4()))]),
        Op::GlobalAvgPool { keepdims } => {
            let x = ins[0].as4();
            let (_, _, h, w) = dim4(x);
            let scale = 1.0 / (h * w) as f64;
            let mut dx = Array4::<f64>::zeros(x.raw_dim());
            match dy {
                Tensor::T2(d) => {
                    debug_assert!(!*keepdims);
                    for ((n, c, _, _), v) in dx.indexed_iter_mut() {
                        *v = d[(n, c)] * scale;
                    }
                }
                Tensor::T4(d) => {
                    for ((n, c, _, _), v) in dx.indexed_iter_mut() {
                        *v = d[(n, c, 0, 0)] * scale;
                    }
                }
            }
            Ok(vec![Tensor::T4(dx)])
        }
        Op::Add => Ok(ins.iter().map(|_| dy.clone()).collect()),
        Op::Scale(s) => Ok(vec![Tensor::T4(dy.as4().mapv(|v| v * *s))]),
        Op::ScaleChannels => {
            let x = ins[0].as4();
            let s = ins[1].as4();
            let d = dy.as4();
            let (n, c, h, w) = dim4(x);
            let mut dx = Array4::<f64>::zeros(x.raw_dim());
            let mut ds = Array4::<f64>::zeros(s.raw_dim());
            for ni in 0..n {
                for ci in 0..c {
                    let sv = s[(ni, ci, 0, 0)];
                    let mut acc = 0.0;
                    for i in 0..h {
                        for j in 0..w {
                            dx[(ni, ci, i, j)] = d[(ni, ci, i, j)] * sv;
                            acc += d[(ni, ci, i, j)] * x[(ni, ci, i, j)];
                        }
                    }
                    ds[(ni, ci, 0, 0)] = acc;
                }
            }
            Ok(vec![Tensor::T4(dx), Tensor::T4(ds)])
        }
        Op::ConcatC => {
            let d = dy.as4();
            let mut out = Vec::with_capacity(ins.len());
            let mut start = 0;
            for t in ins {
                let c = t.as4().shape()[1];
                out.push(Tensor::T4(
                    d.slice(ndarray::s![.., start..start + c, .., ..]).to_owned(),
                ));
                start += c;
            }
            Ok(out)
        }
    }
}

fn apply_act(a: Activation, x: &Tensor) -> Tensor {
    match x {
        Tensor::T2(v) => Tensor::T2(v.mapv(|e| a.apply_scalar(e))),
        Tensor::T4(v) => Tensor::T4(v.mapv(|e| a.apply_scalar(e))),
    }
}

fn act_backward(a: Activation, x: &Tensor, dy: &Tensor) -> Tensor {
    match (x, dy) {
        (Tensor::T4(xv), Tensor::T4(dv)) => {
            let mut dx = dv.clone();
            ndarray::Zip::from(&mut dx).and(xv).for_each(|d, &xe| {
                *d *= a.derivative(xe);
            });
            Tensor::T4(dx)
        }
        (Tensor::T2(xv), Tensor::T2(dv)) => {
            let mut dx = dv.clone();
            ndarray::Zip::from(&mut dx).and(xv).for_each(|d, &xe| {
                *d *= a.derivative(xe);
            });
            Tensor::T2(dx)
        }
        _ => panic!("rank mismatch in activation backward"),
    }
}

fn global_avg_pool(x: &Array4<f64>, keepdims: bool) -> Tensor {
    let (n, c, h, w) = dim4(x);
    let scale = 1.0 / (h * w) as f64;
    let mut pooled = Array2::<f64>::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            pooled[(ni, ci)] = x
                .index_axis(Axis(0), ni)
                .index_axis(Axis(0), ci)
                .sum()
                * scale;
        }
    }
    if keepdims {
        Tensor::T4(pooled.into_shape_with_order((n, c, 1, 1)).unwrap())
    } else {
        Tensor::T2(pooled)
    }
}

fn scale_channels(x: &Array4<f64>, s: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = dim4(x);
    let mut y = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let sv = s[(ni, ci, 0, 0)];
            for i in 0..h {
                for j in 0..w {
                    y[(ni, ci, i, j)] *= sv;
                }
            }
        }
    }
    y
}

fn concat_channels(ins: &[&Tensor]) -> Result<Tensor> {
    let views: Vec<_> = ins.iter().map(|t| t.as4().view()).collect();
    let (n, _, h, w) = dim4(ins[0].as4());
    for v in &views {
        if v.shape()[0] != n || v.shape()[2] != h || v.shape()[3] != w {
            return Err(NnError::Shape {
                op: "concat",
                detail: format!(
                    "branch shapes disagree: {:?} vs {:?}",
                    views[0].shape(),
                    v.shape()
                ),
            });
        }
    }
    let y = ndarray::concatenate(Axis(1), &views).map_err(|e| NnError::Shape {
        op: "concat",
        detail: e.to_string(),
    })?;
    Ok(Tensor::T4(y))
}

/// Sampled-parameter gradient check support: the number of trainable
/// parameter values in the graph (excludes BN moving statistics).
pub fn trainable_count(graph: &mut Graph) -> usize {
    let mut n = 0;
    graph.visit_params(&mut |name, v, g| {
        if !g.is_empty() {
            n += v.len();
        }
        let _ = name;
    });
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::{Activation, BatchNorm2d, Conv2d, DwConv2d, Padding, PadSpec, Pool2d};
    use crate::nn::Param;
    use ndarray::{Array1, Array3};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A graph exercising every op kind: two conv paths that re-join, a
    /// squeeze-excite branch, pooling, padding, scaling, and concat.
    fn everything_graph(rng: &mut ChaCha8Rng) -> Graph {
        let mut g = Graph::new();
        let conv = |rng: &mut ChaCha8Rng, oc: usize, ic: usize, k: usize, bias: bool| {
            let w = ndarray::Array4::from_shape_simple_fn((oc, ic, k, k), || {
                rng.gen_range(-0.4..0.4)
            });
            Conv2d {
                w: Param::new(w),
                b: bias.then(|| Param::new(Array1::from_shape_simple_fn(oc, || rng.gen_range(-0.1..0.1)))),
                stride: (1, 1),
                pad: Padding::Same,
            }
        };
        let x = 0;
        let p = g.push(Op::ZeroPad(PadSpec::symmetric(1)), &[x]);
        let c1 = g.push(Op::Conv(conv(rng, 4, 3, 3, true)), &[p]);
        let b1 = g.push(Op::Bn(BatchNorm2d::new(4, true, 1e-3)), &[c1]);
        let a1 = g.push(Op::Act(Activation::Relu), &[b1]);
        let dw = {
            let w = Array3::from_shape_simple_fn((4, 3, 3), || rng.gen_range(-0.4..0.4));
            g.push(
                Op::DwConv(DwConv2d {
                    w: Param::new(w),
                    b: Some(Param::new(Array1::zeros(4))),
                    stride: (1, 1),
                    pad: Padding::Same,
                }),
                &[a1],
            )
        };
        let sw = g.push(Op::Act(Activation::Swish), &[dw]);
        let added = g.push(Op::Add, &[a1, sw]);
        // squeeze-excite
        let se1 = g.push(Op::GlobalAvgPool { keepdims: true }, &[added]);
        let se2 = g.push(Op::Conv(conv(rng, 2, 4, 1, true)), &[se1]);
        let se3 = g.push(Op::Act(Activation::Swish), &[se2]);
        let se4 = g.push(Op::Conv(conv(rng, 4, 2, 1, true)), &[se3]);
        let se5 = g.push(Op::Act(Activation::Sigmoid), &[se4]);
        let scaled = g.push(Op::ScaleChannels, &[added, se5]);
        let half = g.push(Op::Scale(0.5), &[scaled]);
        let cat = g.push(Op::ConcatC, &[half, a1]);
        let mp = g.push(
            Op::MaxPool(Pool2d {
                k: (2, 2),
                stride: (2, 2),
                pad: Padding::Valid,
            }),
            &[cat],
        );
        let ap = g.push(
            Op::AvgPool(Pool2d {
                k: (3, 3),
                stride: (1, 1),
                pad: Padding::Same,
            }),
            &[mp],
        );
        let bn2 = g.push(Op::Bn(BatchNorm2d::new(8, false, 1e-3)), &[ap]);
        let th = g.push(Op::Act(Activation::Tanh), &[bn2]);
        g.push(Op::GlobalAvgPool { keepdims: false }, &[th]);
        g
    }

    /// Deterministic scalar loss: weighted sum of the pooled features.
    fn scalar_loss(graph: &mut Graph, x: &Array4<f64>, w: &Array2<f64>) -> f64 {
        let (f, _) = graph.forward_train(x).unwrap();
        (&f * w).sum()
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let graph = everything_graph(&mut rng);
        let x = Array4::from_shape_simple_fn((2, 3, 6, 6), || rng.gen_range(0.0..1.0));
        let n_feat = 8;
        let wloss = Array2::from_shape_simple_fn((2, n_feat), || rng.gen_range(-1.0..1.0));

        // analytic gradients
        let mut g_analytic = graph.clone();
        let (_, tape) = g_analytic.forward_train(&x).unwrap();
        g_analytic.backward(&tape, &wloss).unwrap();

        let mut entries: Vec<(String, usize, f64)> = Vec::new();
        g_analytic.visit_params(&mut |name, v, g| {
            if !g.is_empty() {
                for i in 0..v.len() {
                    entries.push((name.to_string(), i, g[i]));
                }
            }
        });
        assert!(entries.len() > 100, "expected many trainable params");

        let step = 1e-5;
        let mut checked = 0;
        let mut max_rel = 0.0f64;
        for probe in 0..120 {
            let pick = (probe * 997) % entries.len();
            let (name, idx, ga) = entries[pick].clone();
            let mut loss_at = |delta: f64| {
                let mut g = graph.clone();
                g.visit_params(&mut |n, v, _| {
                    if n == name {
                        v[idx] += delta;
                    }
                });
                scalar_loss(&mut g, &x, &wloss)
            };
            let fd = (loss_at(step) - loss_at(-step)) / (2.0 * step);
            // max-pool argmax switches and relu kinks make isolated probes
            // non-differentiable; skip near-zero mismatched pairs
            let denom = ga.abs().max(fd.abs());
            if denom < 1e-7 {
                continue;
            }
            let rel = (fd - ga).abs() / denom;
            max_rel = max_rel.max(rel);
            checked += 1;
        }
        assert!(checked > 60, "too few usable probes: {checked}");
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn eval_and_train_forward_agree_with_unit_bn_stats() {
        // Freshly built BN layers have mean 0 / var 1 moving stats; with
        // standardized input the two paths should be close but not equal.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let graph = everything_graph(&mut rng);
        let x = Array4::from_shape_simple_fn((3, 3, 6, 6), || rng.gen_range(0.0..1.0));
        let f_eval = graph.features(&x).unwrap();
        assert_eq!(f_eval.shape(), &[3, 8]);
        let mut g2 = graph.clone();
        let (f_train, _) = g2.forward_train(&x).unwrap();
        assert_eq!(f_train.shape(), &[3, 8]);
        assert!(f_eval.iter().all(|v| v.is_finite()));
        assert!(f_train.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_gradient_flows_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut graph = everything_graph(&mut rng);
        let x = Array4::from_shape_simple_fn((1, 3, 6, 6), || rng.gen_range(0.0..1.0));
        let (f, tape) = graph.forward_train(&x).unwrap();
        let dout = Array2::ones(f.raw_dim());
        let dx = graph.backward(&tape, &dout).unwrap();
        assert_eq!(dx.shape(), x.shape());
        assert!(dx.iter().any(|&v| v != 0.0));
    }
}
