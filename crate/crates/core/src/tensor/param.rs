use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub momentum_buffer: Vec<f64>,
    /// Frozen parameters enter a tape as constants and receive no gradient.
    pub frozen: bool,
}

/// Owns every learnable tensor of a model, addressed by hierarchical name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `sqrt(2 / fan_in)`.
    FanIn(usize),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let mut tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
            Init::FanIn(fan_in) => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
            }
        };
        tensor.requires_grad = true;
        tensor.grad = Some(vec![0.0; tensor.len()]);
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.clone(),
            momentum_buffer: vec![0.0; tensor.len()],
            tensor,
            frozen: false,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Ids in canonical (lexicographic name) order.
    pub fn canonical_order(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.by_name.values().copied()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.tensor.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        self.params[id.0]
            .tensor
            .grad
            .as_deref()
            .expect("parameters always carry a gradient buffer")
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let buf = self.params[id.0]
            .tensor
            .grad
            .as_mut()
            .expect("parameters always carry a gradient buffer");
        for (b, v) in buf.iter_mut().zip(g) {
            *b += v;
        }
    }

    /// Freeze every parameter whose name does not satisfy `keep_trainable`.
    pub fn freeze_except(&mut self, keep_trainable: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.frozen = !keep_trainable(&p.name);
        }
    }

    pub fn unfreeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = false;
        }
    }

    pub fn reset_momentum(&mut self) {
        for p in &mut self.params {
            p.momentum_buffer.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
