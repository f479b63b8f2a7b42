//! Multi-scale conditional patch discriminators.
//!
//! Every scale runs the same topology (strided 4×4 convolutions with leaky
//! ReLU, then a 3×3 scoring head) on the channel concatenation of the
//! conditioning raster and the candidate image, area-pooled by the scale's
//! factor. Scores are squashed into `(0, 1)`.

use std::sync::Arc;

use super::spec::DiscriminatorSpec;
use crate::error::{Error, Result};
use crate::imaging::downsampled_len;
use crate::nn::kernels::area_taps_f32;
use crate::nn::{Conv, Graph, NodeId, ParamStore, Tensor};

pub(crate) const DISCRIMINATOR_TAG: u32 = 2;
const LEAK: f32 = 0.2;

#[derive(Debug, Clone)]
struct PatchNet {
    layers: Vec<Conv>,
    head: Conv,
}

#[derive(Debug, Clone)]
pub struct Discriminators {
    spec: DiscriminatorSpec,
    conditioning_channels: usize,
    store: ParamStore,
    nets: Vec<PatchNet>,
}

impl Discriminators {
    pub fn new(spec: &DiscriminatorSpec, conditioning_channels: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(DISCRIMINATOR_TAG, seed);
        let base = spec.base_feature_width;
        let nets = (0..spec.count)
            .map(|s| {
                let mut c_in = conditioning_channels + 3;
                let layers = (0..spec.layer_count)
                    .map(|l| {
                        let c_out = base << l.min(3);
                        let conv = Conv::new(&mut store, &format!("d{s}.conv{l}"), c_in, c_out, 4, 2, 1);
                        c_in = c_out;
                        conv
                    })
                    .collect();
                let head = Conv::new(&mut store, &format!("d{s}.head"), c_in, 1, 3, 1, 1);
                PatchNet { layers, head }
            })
            .collect();
        Ok(Discriminators {
            spec: spec.clone(),
            conditioning_channels,
            store,
            nets,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn conditioning_channels(&self) -> usize {
        self.conditioning_channels
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records every scale's scoring pass; returns one score map per scale.
    pub fn forward(&self, g: &mut Graph, cond: NodeId, candidate: NodeId) -> Result<Vec<NodeId>> {
        let logits = self.forward_logits(g, cond, candidate)?;
        Ok(logits.into_iter().map(|z| g.sigmoid(z)).collect())
    }

    /// Like [`Discriminators::forward`] but stops before the final sigmoid.
    pub fn forward_logits(&self, g: &mut Graph, cond: NodeId, candidate: NodeId) -> Result<Vec<NodeId>> {
        let cs = g.value(cond).shape();
        let xs = g.value(candidate).shape();
        if cs[0] != xs[0] || cs[2] != xs[2] || cs[3] != xs[3] {
            return Err(Error::Shape(format!(
                "conditioning {:?} and candidate {:?} must share batch and spatial size",
                cs, xs
            )));
        }
        if cs[1] != self.conditioning_channels || xs[1] != 3 {
            return Err(Error::Shape(format!(
                "discriminator expects {}+3 channels, got {}+{}",
                self.conditioning_channels, cs[1], xs[1]
            )));
        }
        let joint = g.concat(cond, candidate)?;
        let (h, w) = (cs[2], cs[3]);
        let min = 1usize << self.spec.layer_count;
        let mut scores = Vec::with_capacity(self.nets.len());
        for (net, &factor) in self.nets.iter().zip(&self.spec.area_scales) {
            let (sh, sw) = (downsampled_len(h, factor), downsampled_len(w, factor));
            if sh < min || sw < min {
                return Err(Error::Shape(format!(
                    "{w}x{h} input pooled by area x{factor} is {sw}x{sh}, below the {min}x{min} minimum"
                )));
            }
            let mut x = if sh == h && sw == w {
                joint
            } else {
                g.resample(joint, Arc::new(area_taps_f32(h, sh)), Arc::new(area_taps_f32(w, sw)))
            };
            for conv in &net.layers {
                x = conv.forward(g, &self.store, x)?;
                x = g.leaky_relu(x, LEAK);
            }
            scores.push(net.head.forward(g, &self.store, x)?);
        }
        Ok(scores)
    }

    /// Evaluation-mode score maps, one per scale.
    pub fn scores(&self, cond: &Tensor, candidate: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new(false);
        let c = g.input(cond.clone(), false);
        let x = g.input(candidate.clone(), false);
        let nodes = self.forward(&mut g, c, x)?;
        Ok(nodes.into_iter().map(|n| g.take_value(n)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_map_per_scale_strictly_inside_unit_interval() {
        let d = Discriminators::new(&DiscriminatorSpec::default(), 1, 5).unwrap();
        let cond = Tensor::full([2, 1, 32, 32], 0.7);
        let x = Tensor::full([2, 3, 32, 32], 0.2);
        let maps = d.scores(&cond, &x).unwrap();
        assert_eq!(maps.len(), 3);
        let dims: Vec<_> = maps.iter().map(|m| (m.height(), m.width())).collect();
        assert_eq!(dims, vec![(4, 4), (2, 2), (2, 2)]);
        assert!(maps.iter().flat_map(|m| m.data()).all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let d = Discriminators::new(&DiscriminatorSpec::default(), 1, 5).unwrap();
        let cond = Tensor::from_vec([1, 1, 16, 16], (0..256).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let x = Tensor::full([1, 3, 16, 16], 0.4);
        assert_eq!(d.scores(&cond, &x).unwrap(), d.scores(&cond, &x).unwrap());
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let d = Discriminators::new(&DiscriminatorSpec::default(), 1, 5).unwrap();
        let err = d
            .scores(&Tensor::zeros([1, 1, 16, 16]), &Tensor::zeros([1, 3, 8, 8]))
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = d
            .scores(&Tensor::zeros([1, 1, 4, 4]), &Tensor::zeros([1, 3, 4, 4]))
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
