// SPDX-License-Identifier: Apache-2.0

//! Trainable parameters and the store that owns them.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{CdpError, Result};
use crate::tensor::Tensor;

/// Selects the optimizer learning rate a parameter trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Tensor,
    /// Rows of a sparse table holding gradient since the last zeroing.
    touched: BTreeSet<usize>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, group: ParamGroup, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            group,
            value,
            grad,
            touched: BTreeSet::new(),
        }
    }

    pub fn touched_rows(&self) -> &BTreeSet<usize> {
        &self.touched
    }

    pub fn zero_grad(&mut self) {
        match self.group {
            ParamGroup::Dense => self.grad.fill(0.0),
            ParamGroup::Sparse => {
                for &r in &self.touched {
                    self.grad.row_mut(r).fill(0.0);
                }
            }
        }
        self.touched.clear();
    }
}

/// Owns every parameter of a model. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(CdpError::Config(format!(
                "duplicate parameter name `{}`",
                param.name
            )));
        }
        if param.group == ParamGroup::Sparse && param.value.shape().len() != 2 {
            return Err(CdpError::Config(format!(
                "sparse parameter `{}` must be a rank-2 table",
                param.name
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    /// Adds a parameter initialized uniformly in `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        group: ParamGroup,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut value = Tensor::zeros(shape);
        if scale > 0.0 {
            for v in value.data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        self.add(Parameter::new(name, group, value))
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

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Adds a backward pass's gradients into the parameters' `grad` fields.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, buf) in grads.dense_buffers() {
            let p = &mut self.params[id.0];
            for (g, d) in p.grad.data_mut().iter_mut().zip(buf) {
                *g += d;
            }
        }
        for ((id, row), buf) in grads.row_buffers() {
            let p = &mut self.params[id.0];
            for (g, d) in p.grad.row_mut(row).iter_mut().zip(buf) {
                *g += d;
            }
            p.touched.insert(row);
        }
    }

    /// Order-sensitive FNV-1a digest over every parameter's bits, used to
    /// verify that evaluation leaves a model untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.name.bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
