//! Coarse-to-fine generator: a global encoder/residual/decoder network at the
//! coarsest scale followed by local enhancers, each of which doubles the
//! resolution and fuses the previous stage's features by addition.

use std::sync::Arc;

use super::spec::GeneratorSpec;
use crate::error::{Error, Result};
use crate::nn::kernels::area_taps_f32;
use crate::nn::{Conv, Graph, NodeId, ParamStore, Tensor};

/// Clamp applied before taking the logit of a residual base.
const RESIDUAL_EPS: f32 = 1e-3;

pub(crate) const GENERATOR_TAG: u32 = 1;

#[derive(Debug, Clone)]
struct ResBlock {
    a: Conv,
    b: Conv,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        ResBlock {
            a: Conv::new(store, &format!("{name}.a"), width, width, 3, 1, 1),
            b: Conv::new(store, &format!("{name}.b"), width, width, 3, 1, 1),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = conv_norm_relu(g, store, &self.a, x)?;
        let h = self.b.forward(g, store, h)?;
        let h = g.instance_norm(h);
        g.add(x, h)
    }
}

fn conv_norm_relu(g: &mut Graph, store: &ParamStore, conv: &Conv, x: NodeId) -> Result<NodeId> {
    let h = conv.forward(g, store, x)?;
    let h = g.instance_norm(h);
    Ok(g.relu(h))
}

#[derive(Debug, Clone)]
struct GlobalStage {
    front: Conv,
    down: [Conv; 2],
    blocks: Vec<ResBlock>,
    up: [Conv; 2],
    to_rgb: Conv,
}

#[derive(Debug, Clone)]
struct EnhancerStage {
    front: Conv,
    down: Conv,
    blocks: Vec<ResBlock>,
    up: Conv,
    to_rgb: Conv,
}

/// Serial composition of the global stage and the local enhancers.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    store: ParamStore,
    global: GlobalStage,
    enhancers: Vec<EnhancerStage>,
}

impl Generator {
    pub fn new(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(GENERATOR_TAG, seed);
        let f = spec.base_feature_width;
        let c = spec.conditioning_channels;
        let global = GlobalStage {
            front: Conv::new(&mut store, "g1.front", c, f, 3, 1, 1),
            down: [
                Conv::new(&mut store, "g1.down0", f, 2 * f, 3, 2, 1),
                Conv::new(&mut store, "g1.down1", 2 * f, 4 * f, 3, 2, 1),
            ],
            blocks: (0..spec.residual_block_count)
                .map(|i| ResBlock::new(&mut store, &format!("g1.res{i}"), 4 * f))
                .collect(),
            up: [
                Conv::new(&mut store, "g1.up0", 4 * f, 2 * f, 3, 1, 1),
                Conv::new(&mut store, "g1.up1", 2 * f, f, 3, 1, 1),
            ],
            to_rgb: Conv::new(&mut store, "g1.to_rgb", f, 3, 3, 1, 1),
        };
        let half = (f / 2).max(1);
        let enhancers = (2..=spec.stage_count)
            .map(|s| {
                let p = format!("g{s}");
                EnhancerStage {
                    front: Conv::new(&mut store, &format!("{p}.front"), c, half, 3, 1, 1),
                    down: Conv::new(&mut store, &format!("{p}.down"), half, f, 3, 2, 1),
                    blocks: (0..spec.residual_block_count)
                        .map(|i| ResBlock::new(&mut store, &format!("{p}.res{i}"), f))
                        .collect(),
                    up: Conv::new(&mut store, &format!("{p}.up"), f, f, 3, 1, 1),
                    to_rgb: Conv::new(&mut store, &format!("{p}.to_rgb"), f, 3, 3, 1, 1),
                }
            })
            .collect();
        Ok(Generator {
            spec: spec.clone(),
            store,
            global,
            enhancers,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Spatial divisor every input dimension must satisfy when running
    /// `stages` stages.
    pub fn size_multiple(stages: usize) -> usize {
        4 << (stages - 1)
    }

    /// Records a forward pass through the first `stages` stages.
    ///
    /// `cond` must be at the output resolution of the last executed stage;
    /// coarser stages receive area-pooled copies. The result lies in `[0, 1]`.
    pub fn forward(&self, g: &mut Graph, cond: NodeId, stages: usize) -> Result<NodeId> {
        if stages == 0 || stages > self.spec.stage_count {
            return Err(Error::Parameter(format!(
                "cannot run {stages} of {} generator stages",
                self.spec.stage_count
            )));
        }
        let [_, c, h, w] = g.value(cond).shape();
        if c != self.spec.conditioning_channels {
            return Err(Error::Shape(format!(
                "generator expects {} conditioning channels, got {c}",
                self.spec.conditioning_channels
            )));
        }
        let m = Self::size_multiple(stages);
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "conditioning {w}x{h} must be a non-zero multiple of {m} for {stages} stage(s)"
            )));
        }
        // conditioning per stage, finest last
        let mut conds = vec![cond];
        for _ in 1..stages {
            let prev = *conds.last().expect("non-empty");
            let [_, _, ph, pw] = g.value(prev).shape();
            let rows = Arc::new(area_taps_f32(ph, ph / 2));
            let cols = Arc::new(area_taps_f32(pw, pw / 2));
            conds.push(g.resample(prev, rows, cols));
        }
        conds.reverse();

        let store = &self.store;
        let gs = &self.global;
        let mut x = conv_norm_relu(g, store, &gs.front, conds[0])?;
        for d in &gs.down {
            x = conv_norm_relu(g, store, d, x)?;
        }
        for b in &gs.blocks {
            x = b.forward(g, store, x)?;
        }
        for u in &gs.up {
            x = g.upsample_nearest(x, 2);
            x = conv_norm_relu(g, store, u, x)?;
        }
        let mut features = x;
        let mut head = &gs.to_rgb;
        for (stage, cond) in self.enhancers.iter().zip(&conds[1..]) {
            let mut x = conv_norm_relu(g, store, &stage.front, *cond)?;
            x = conv_norm_relu(g, store, &stage.down, x)?;
            x = g.add(x, features)?;
            for b in &stage.blocks {
                x = b.forward(g, store, x)?;
            }
            x = g.upsample_nearest(x, 2);
            features = conv_norm_relu(g, store, &stage.up, x)?;
            head = &stage.to_rgb;
        }
        let mut rgb = head.forward(g, store, features)?;
        if self.spec.residual_output {
            let c = g.value(*conds.last().expect("non-empty"));
            let logits = c
                .data()
                .iter()
                .map(|&v| {
                    let v = v.clamp(RESIDUAL_EPS, 1.0 - RESIDUAL_EPS);
                    (v / (1.0 - v)).ln()
                })
                .collect();
            let base = g.input(Tensor::from_vec(c.shape(), logits)?, false);
            rgb = g.add(rgb, base)?;
        }
        Ok(g.sigmoid(rgb))
    }

    /// Evaluation-mode inference through every stage.
    pub fn generate(&self, cond: &Tensor) -> Result<Tensor> {
        self.generate_stages(cond, self.spec.stage_count)
    }

    pub fn generate_stages(&self, cond: &Tensor, stages: usize) -> Result<Tensor> {
        let mut g = Graph::new(false);
        let c = g.input(cond.clone(), false);
        let out = self.forward(&mut g, c, stages)?;
        Ok(g.take_value(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::spec::Size;

    fn tiny(stages: usize, channels: usize) -> GeneratorSpec {
        GeneratorSpec {
            stage1_output_size: Size::new(16, 8),
            stage2_output_size: Size::new(32, 16),
            stage_count: stages,
            conditioning_channels: channels,
            base_feature_width: 4,
            residual_block_count: 1,
            residual_output: false,
        }
    }

    #[test]
    fn output_matches_final_stage_size() {
        let gen = Generator::new(&tiny(2, 1), 3).unwrap();
        let out = gen.generate(&Tensor::full([2, 1, 16, 32], 0.3)).unwrap();
        assert_eq!(out.shape(), [2, 3, 16, 32]);
        let coarse = gen.generate_stages(&Tensor::full([1, 1, 8, 16], 0.3), 1).unwrap();
        assert_eq!(coarse.shape(), [1, 3, 8, 16]);
    }

    #[test]
    fn single_stage_has_no_enhancer() {
        let one = Generator::new(&tiny(1, 1), 3).unwrap();
        let two = Generator::new(&tiny(2, 1), 3).unwrap();
        assert!(one.store().iter().all(|(n, _)| n.starts_with("g1.")));
        assert!(two.store().len() > one.store().len());
        let out = one.generate(&Tensor::full([1, 1, 8, 16], 0.5)).unwrap();
        assert_eq!(out.shape(), [1, 3, 8, 16]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let gen = Generator::new(&tiny(1, 5), 0).unwrap();
        let err = gen.generate(&Tensor::zeros([1, 1, 8, 16])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Generator::new(&tiny(2, 1), 11).unwrap();
        let b = Generator::new(&tiny(2, 1), 11).unwrap();
        let c = Generator::new(&tiny(2, 1), 12).unwrap();
        assert_eq!(a.store().export(), b.store().export());
        assert_ne!(a.store().export(), c.store().export());
    }
}
