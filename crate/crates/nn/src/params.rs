use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics, updated during training forward passes.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Named tensors of a model, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn push(&mut self, name: String, kind: ParamKind, tensor: Tensor) -> ParamId {
        assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, kind, tensor });
        self.entries.len() - 1
    }

    /// Zero-mean normal weights with std `sqrt(gain / fan_in)`.
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f64) -> ParamId {
        let std = (gain / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        self.push(name.into(), ParamKind::Trainable, Tensor::from_vec(shape, data))
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> ParamId {
        self.push(name.into(), ParamKind::Trainable, Tensor::full(shape, value))
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> ParamId {
        self.push(name.into(), ParamKind::Buffer, Tensor::full(shape, value))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].tensor
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(i, _)| i)
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable().map(|i| self.entries[i].tensor.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name)
    }
}
