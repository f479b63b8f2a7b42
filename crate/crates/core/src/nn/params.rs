use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable tensors belonging to one network.
#[derive(Debug, Clone)]
pub struct ParamStore {
    tag: u32,
    names: Vec<String>,
    values: Vec<Tensor>,
    rng: ChaCha8Rng,
}

/// Standard deviation of the normal initializer for convolution weights.
pub const INIT_STD: f32 = 0.02;

impl ParamStore {
    pub fn new(tag: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag as u64);
        ParamStore {
            tag,
            names: Vec::new(),
            values: Vec::new(),
            rng,
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn add_normal(&mut self, name: String, shape: [usize; 4], std: f32) -> ParamId {
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(&mut self.rng)).collect();
        self.push(name, Tensor::from_vec(shape, data).expect("length matches"))
    }

    pub(crate) fn add_zeros(&mut self, name: String, shape: [usize; 4]) -> ParamId {
        self.push(name, Tensor::zeros(shape))
    }

    fn push(&mut self, name: String, value: Tensor) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Replaces every value from `(name, tensor)` pairs; names and shapes must match exactly.
    pub fn load(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        if tensors.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                tensors.len()
            )));
        }
        for (i, (name, t)) in tensors.iter().enumerate() {
            if name != &self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected {} {:?}, found {name} {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    t.shape()
                )));
            }
        }
        for (i, (_, t)) in tensors.iter().enumerate() {
            self.values[i] = t.clone();
        }
        Ok(())
    }

    pub fn export(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}

/// Gradients keyed by parameter, produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    pub(crate) params: Vec<((u32, ParamId), Tensor)>,
    pub(crate) inputs: Vec<(usize, Tensor)>,
}

impl Gradients {
    pub fn for_store(&self, store: &ParamStore) -> Vec<Option<&Tensor>> {
        let mut out = vec![None; store.len()];
        for ((tag, id), g) in &self.params {
            if *tag == store.tag() {
                out[id.0] = Some(g);
            }
        }
        out
    }

    pub fn input(&self, node: super::NodeId) -> Option<&Tensor> {
        self.inputs.iter().find(|(n, _)| *n == node.0).map(|(_, g)| g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub(crate) steps: u64,
    pub(crate) first: Vec<Tensor>,
    pub(crate) second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.values.iter().map(|v| Tensor::zeros(v.shape())).collect();
        Adam {
            config,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let lr = (c.learning_rate * bias2.sqrt() / bias1) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        let per_param = grads.for_store(store);
        for (i, value) in store.values_mut().iter_mut().enumerate() {
            let Some(g) = per_param[i] else { continue };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                *w -= lr * m[j] / (v[j].sqrt() + eps);
            }
        }
    }

    pub(crate) fn export(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.first.len());
        for (i, name) in store.names.iter().enumerate() {
            out.push((format!("m.{name}"), self.first[i].clone()));
            out.push((format!("v.{name}"), self.second[i].clone()));
        }
        out
    }

    pub(crate) fn load(&mut self, store: &ParamStore, steps: u64, tensors: &[(String, Tensor)]) -> Result<()> {
        if tensors.len() != 2 * store.len() {
            return Err(Error::Checkpoint("optimizer state does not match the network".into()));
        }
        for (i, name) in store.names.iter().enumerate() {
            let (mn, m) = &tensors[2 * i];
            let (vn, v) = &tensors[2 * i + 1];
            if mn != &format!("m.{name}") || vn != &format!("v.{name}") || m.shape() != store.values[i].shape() || v.shape() != store.values[i].shape() {
                return Err(Error::Checkpoint(format!("optimizer state mismatch for {name}")));
            }
            self.first[i] = m.clone();
            self.second[i] = v.clone();
        }
        self.steps = steps;
        Ok(())
    }
}
