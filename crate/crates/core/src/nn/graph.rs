//! Define-by-run reverse-mode autodiff over [`Tensor`] values.

use std::collections::HashSet;
use std::sync::Arc;

use super::kernels::{self, ConvGeom, Taps};
use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { tag: u32, id: ParamId },
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom, cols: Vec<f32> },
    Add(NodeId, NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f32),
    Sigmoid(NodeId),
    InstanceNorm { x: NodeId, inv_std: Vec<f32> },
    Upsample(NodeId, usize),
    Resample { x: NodeId, rows: Arc<Taps>, cols: Arc<Taps> },
    Concat(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single forward pass recorded for differentiation.
///
/// With gradients disabled the graph keeps no intermediate buffers beyond
/// node values and `backward` is unavailable.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    trainable: HashSet<u32>,
}

pub const INSTANCE_NORM_EPS: f32 = 1e-5;

impl Graph {
    pub fn new(grad_enabled: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled,
            trainable: HashSet::new(),
        }
    }

    /// Marks every parameter of `store` as receiving gradients.
    pub fn train(&mut self, store: &ParamStore) {
        self.trainable.insert(store.tag());
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn take_value(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Input, requires_grad)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let trainable = self.trainable.contains(&store.tag());
        self.push(
            store.get(id).clone(),
            Op::Param { tag: store.tag(), id },
            trainable,
        )
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let [c_out, c_in, k, _] = self.value(w).shape();
        let [_, xc, h, wd] = self.value(x).shape();
        if xc != c_in {
            return Err(Error::Shape(format!(
                "convolution expects {c_in} input channels, got {xc}"
            )));
        }
        let geom = ConvGeom::new(c_in, h, wd, c_out, k, stride, pad).ok_or_else(|| {
            Error::Shape(format!("{h}x{wd} input too small for a {k}x{k} kernel"))
        })?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let (out, cols) = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
            needs,
        );
        Ok(self.push(out, Op::Conv { x, w, b, geom, cols }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > 0.0 { *v } else { *v * slope });
        let needs = self.needs(x);
        self.push(out, Op::LeakyRelu(x, slope), needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid(x), needs)
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let [n, c, h, w] = out.shape();
        let plane = h * w;
        let mut inv_std = Vec::with_capacity(n * c);
        for p in out.data_mut().chunks_exact_mut(plane) {
            let mean = p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + INSTANCE_NORM_EPS as f64).sqrt();
            for v in p.iter_mut() {
                *v = ((*v as f64 - mean) * inv) as f32;
            }
            inv_std.push(inv as f32);
        }
        debug_assert_eq!(inv_std.len(), n * c);
        let needs = self.needs(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, needs)
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> NodeId {
        let out = kernels::upsample_nearest(self.value(x), factor);
        let needs = self.needs(x);
        self.push(out, Op::Upsample(x, factor), needs)
    }

    /// Separable linear resampling (area pooling, bilinear, …).
    pub fn resample(&mut self, x: NodeId, rows: Arc<Taps>, cols: Arc<Taps>) -> NodeId {
        let out = kernels::resample_forward(self.value(x), &rows, &cols);
        let needs = self.needs(x);
        self.push(out, Op::Resample { x, rows, cols }, needs)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = Tensor::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b), needs))
    }

    /// Back-propagates from several roots at once, each seeded with its own
    /// upstream gradient.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(Error::Parameter("backward on a graph built without gradients".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            if g.shape() != self.value(id).shape() {
                return Err(Error::Shape(format!(
                    "seed gradient {:?} does not match node {:?}",
                    g.shape(),
                    self.value(id).shape()
                )));
            }
            accumulate(&mut grads[id.0], g);
        }
        let mut out = Gradients::default();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => out.inputs.push((i, g)),
                // The same parameter may enter the graph through several nodes.
                Op::Param { tag, id } => match out.params.iter_mut().find(|(k, _)| *k == (*tag, *id)) {
                    Some((_, acc)) => acc.add_assign(&g),
                    None => out.params.push(((*tag, *id), g)),
                },
                Op::Conv { x, w, b, geom, cols } => {
                    let want = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                    let (dx, dw, db) = kernels::conv2d_backward(self.value(*x), self.value(*w), cols, geom, &g, want);
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads[w.0], dw);
                    }
                    if let (Some(db), Some(b)) = (db, b) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Relu(x) => {
                    let mut g = g;
                    for (gv, &y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut g = g;
                    for (gv, &xv) in g.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if xv <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
                Op::Sigmoid(x) => {
                    let mut g = g;
                    for (gv, &y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        *gv *= y * (1.0 - y);
                    }
                    accumulate(&mut grads[x.0], g);
                }
                Op::InstanceNorm { x, inv_std } => {
                    let [_, _, h, w] = node.value.shape();
                    let plane = h * w;
                    let mut g = g;
                    for (pi, (gp, yp)) in g
                        .data_mut()
                        .chunks_exact_mut(plane)
                        .zip(node.value.data().chunks_exact(plane))
                        .enumerate()
                    {
                        let sum_g: f64 = gp.iter().map(|&v| v as f64).sum();
                        let sum_gy: f64 = gp.iter().zip(yp).map(|(&a, &b)| a as f64 * b as f64).sum();
                        let k = inv_std[pi] as f64 / plane as f64;
                        for (gv, &yv) in gp.iter_mut().zip(yp) {
                            *gv = (k * (plane as f64 * *gv as f64 - sum_g - yv as f64 * sum_gy)) as f32;
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
                Op::Upsample(x, f) => {
                    accumulate(&mut grads[x.0], kernels::upsample_nearest_backward(&g, *f));
                }
                Op::Resample { x, rows, cols } => {
                    let dx = kernels::resample_backward(&g, self.value(*x).shape(), rows, cols);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).channels();
                    let (ga, gb) = g.split_channels(ca);
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
            }
        }
        // Deterministic ordering for consumers.
        out.params.sort_by_key(|(k, _)| *k);
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;

    fn loss_and_grad(build: &dyn Fn(&mut Graph, NodeId) -> NodeId, x: &Tensor) -> (f64, Tensor) {
        let mut g = Graph::new(true);
        let xi = g.input(x.clone(), true);
        let y = build(&mut g, xi);
        // loss = Σ y·c with fixed pseudo-random weights c
        let c: Vec<f32> = (0..g.value(y).len()).map(|i| ((i * 7919 % 13) as f32 - 6.0) / 6.0).collect();
        let loss: f64 = g.value(y).data().iter().zip(&c).map(|(&a, &b)| a as f64 * b as f64).sum();
        let seed = Tensor::from_vec(g.value(y).shape(), c).unwrap();
        let grads = g.backward(vec![(y, seed)]).unwrap();
        (loss, grads.input(xi).unwrap().clone())
    }

    fn check(build: &dyn Fn(&mut Graph, NodeId) -> NodeId, shape: [usize; 4]) {
        let len = shape.iter().product::<usize>();
        let x = Tensor::from_vec(shape, (0..len).map(|i| ((i as f32 * 1.37).sin()) * 0.8).collect()).unwrap();
        let (_, grad) = loss_and_grad(build, &x);
        let h = 1e-2f32;
        for i in (0..len).step_by((len / 17).max(1)) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss_and_grad(build, &xp).0 - loss_and_grad(build, &xm).0) / (2.0 * h as f64);
            let an = grad.data()[i] as f64;
            assert!((fd - an).abs() <= 2e-2 * (1.0 + fd.abs()), "index {i}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn conv_gradients() {
        let mut store = ParamStore::new(0, 1);
        let w = store.add_normal("w".into(), [3, 2, 3, 3], 0.5);
        let b = store.add_normal("b".into(), [3, 1, 1, 1], 0.5);
        check(&|g, x| {
            let w = g.param(&store, w);
            let b = g.param(&store, b);
            g.conv2d(x, w, Some(b), 2, 1).unwrap()
        }, [2, 2, 6, 5]);
    }

    #[test]
    fn norm_and_activation_gradients() {
        check(&|g, x| {
            let n = g.instance_norm(x);
            let s = g.sigmoid(n);
            g.leaky_relu(s, 0.2)
        }, [2, 3, 4, 4]);
    }

    #[test]
    fn resample_concat_upsample_gradients() {
        let rows = Arc::new(kernels::area_taps_f32(7, 4));
        let cols = Arc::new(kernels::area_taps_f32(6, 4));
        check(&|g, x| {
            let r = g.resample(x, rows.clone(), cols.clone());
            let u = g.upsample_nearest(r, 2);
            let c = g.concat(u, u).unwrap();
            g.add(c, c).unwrap()
        }, [1, 2, 7, 6]);
    }

    #[test]
    fn param_gradients_reach_store() {
        let mut store = ParamStore::new(3, 1);
        let w = store.add_normal("w".into(), [1, 1, 1, 1], 1.0);
        let mut g = Graph::new(true);
        g.train(&store);
        let x = g.input(Tensor::full([1, 1, 2, 2], 2.0), false);
        let wn = g.param(&store, w);
        let y = g.conv2d(x, wn, None, 1, 0).unwrap();
        let grads = g.backward(vec![(y, Tensor::full([1, 1, 2, 2], 1.0))]).unwrap();
        assert_eq!(grads.for_store(&store)[0].unwrap().data(), &[8.0]);
    }

    #[test]
    fn reused_param_gradients_are_summed() {
        let mut store = ParamStore::new(3, 1);
        let w = store.add_normal("w".into(), [1, 1, 1, 1], 1.0);
        let mut g = Graph::new(true);
        g.train(&store);
        let a = g.input(Tensor::full([1, 1, 2, 2], 2.0), false);
        let b = g.input(Tensor::full([1, 1, 2, 2], -5.0), false);
        let w1 = g.param(&store, w);
        let ya = g.conv2d(a, w1, None, 1, 0).unwrap();
        let w2 = g.param(&store, w);
        let yb = g.conv2d(b, w2, None, 1, 0).unwrap();
        let seeds = vec![(ya, Tensor::full([1, 1, 2, 2], 1.0)), (yb, Tensor::full([1, 1, 2, 2], 1.0))];
        let grads = g.backward(seeds).unwrap();
        assert_eq!(grads.for_store(&store)[0].unwrap().data(), &[8.0 - 20.0]);
    }

    #[test]
    fn frozen_store_gets_no_gradient() {
        let mut store = ParamStore::new(3, 1);
        let w = store.add_normal("w".into(), [1, 1, 1, 1], 1.0);
        let mut g = Graph::new(true);
        let x = g.input(Tensor::full([1, 1, 2, 2], 2.0), true);
        let wn = g.param(&store, w);
        let y = g.conv2d(x, wn, None, 1, 0).unwrap();
        let grads = g.backward(vec![(y, Tensor::full([1, 1, 2, 2], 1.0))]).unwrap();
        assert!(grads.for_store(&store)[0].is_none());
        assert!(grads.input(x).is_some());
    }
}
