// SPDX-License-Identifier: Apache-2.0

//! Affine layers and ReLU MLPs on top of the recording graph.

use crate::autodiff::{Graph, Var};
use crate::error::{CdpError, Result};
use crate::param::{ParamGroup, ParamId, ParamStore};
use crate::rng;

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Weight uniform in `±1/sqrt(in_dim)` drawn from the stream named after
    /// the parameter; bias zero.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(CdpError::Config(format!("layer `{name}` needs positive widths")));
        }
        let wname = format!("{name}.w");
        let mut r = rng::stream(seed, &wname);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add_uniform(&wname, ParamGroup::Dense, &[out_dim, in_dim], scale, &mut r)?;
        let bias = if bias {
            Some(store.add_uniform(&format!("{name}.b"), ParamGroup::Dense, &[out_dim], 0.0, &mut r)?)
        } else {
            None
        };
        Ok(Dense {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.dim(x) != self.in_dim {
            return Err(CdpError::dim("layer input", &[self.in_dim], &[g.dim(x)]));
        }
        let w = g.param(self.weight);
        let b = match self.bias {
            Some(b) => g.param(b),
            None => g.constant(vec![0.0; self.out_dim]),
        };
        g.affine(w, b, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stack of affine layers with ReLU between them and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` lists input, hidden and output widths; layers are named
    /// `<name>.l0`, `<name>.l1`, ...
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(CdpError::Config(format!("mlp `{name}` needs at least two widths")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Dense::new(store, &format!("{name}.l{k}"), w[0], w[1], true, seed))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if k < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Dense::params).collect()
    }
}
