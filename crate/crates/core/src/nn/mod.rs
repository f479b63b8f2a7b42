//! Minimal convolutional network toolkit: NCHW tensors, a reverse-mode tape,
//! and an adaptive-moment optimizer. Single-threaded and bit-deterministic.

mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use graph::{Graph, NodeId};
pub use params::{Adam, AdamConfig, Gradients, ParamId, ParamStore, INIT_STD};
pub use tensor::Tensor;

use crate::error::Result;

/// Convolution with bias, initialized from `N(0, INIT_STD)`.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv {
            weight: store.add_normal(format!("{name}.weight"), [c_out, c_in, k, k], INIT_STD),
            bias: store.add_zeros(format!("{name}.bias"), [c_out, 1, 1, 1]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}
