// SPDX-License-Identifier: Apache-2.0

//! Adam, in a dense form and a lazy per-row form for embedding tables.

use serde::{Deserialize, Serialize};

use crate::error::{CdpError, Result};
use crate::param::{ParamGroup, ParamStore, Parameter};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CdpError::Config(format!("invalid Adam constants {self:?}")))
        }
    }
}

/// Bias-corrected Adam update on one contiguous block.
fn adam_update(
    value: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
    lr: f64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Moment estimates for one parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step_count: 0,
            config,
        }
    }
}

/// One Adam step on a parameter. The gradient is left in place.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.shape() != param.value.shape() {
        return Err(CdpError::dim(
            format!("adam state for `{}`", param.name),
            param.value.shape(),
            state.m.shape(),
        ));
    }
    state.step_count += 1;
    adam_update(
        param.value.data_mut(),
        param.grad.data(),
        state.m.data_mut(),
        state.v.data_mut(),
        state.step_count,
        &state.config,
        lr,
    );
    Ok(())
}

/// Lazy Adam for a `rows × dim` table: moments and bias-correction counters
/// are kept per row, and only rows touched since the last zeroing advance.
#[derive(Clone, Debug)]
pub struct SparseAdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub row_steps: Vec<u64>,
    pub config: AdamConfig,
}

impl SparseAdamState {
    pub fn new(rows: usize, dim: usize, config: AdamConfig) -> Self {
        SparseAdamState {
            m: Tensor::zeros(&[rows, dim]),
            v: Tensor::zeros(&[rows, dim]),
            row_steps: vec![0; rows],
            config,
        }
    }
}

pub fn sparse_adam_step(table: &mut Parameter, state: &mut SparseAdamState, lr: f64) -> Result<()> {
    if state.m.shape() != table.value.shape() {
        return Err(CdpError::dim(
            format!("sparse adam state for `{}`", table.name),
            table.value.shape(),
            state.m.shape(),
        ));
    }
    let rows: Vec<usize> = table.touched_rows().iter().copied().collect();
    for r in rows {
        state.row_steps[r] += 1;
        let step = state.row_steps[r];
        let grad = table.grad.row(r).to_vec();
        adam_update(
            table.value.row_mut(r),
            &grad,
            state.m.row_mut(r),
            state.v.row_mut(r),
            step,
            &state.config,
            lr,
        );
    }
    Ok(())
}

#[derive(Clone, Debug)]
enum Slot {
    Dense(AdamState),
    Sparse(SparseAdamState),
}

/// Adam over a whole store, with separate learning rates per group.
#[derive(Clone, Debug)]
pub struct Optimizer {
    slots: Vec<Slot>,
    pub lr_dense: f64,
    pub lr_sparse: f64,
}

impl Optimizer {
    pub fn new(store: &ParamStore, config: AdamConfig, lr_dense: f64, lr_sparse: f64) -> Result<Self> {
        config.validate()?;
        let slots = store
            .iter()
            .map(|(_, p)| match p.group {
                ParamGroup::Dense => Slot::Dense(AdamState::new(p.value.shape(), config)),
                ParamGroup::Sparse => {
                    let s = p.value.shape();
                    Slot::Sparse(SparseAdamState::new(s[0], s[1], config))
                }
            })
            .collect();
        Ok(Optimizer {
            slots,
            lr_dense,
            lr_sparse,
        })
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for ((_, p), slot) in store.iter_mut().zip(self.slots.iter_mut()) {
            match slot {
                Slot::Dense(s) => adam_step(p, s, self.lr_dense)?,
                Slot::Sparse(s) => sparse_adam_step(p, s, self.lr_sparse)?,
            }
        }
        Ok(())
    }
}
