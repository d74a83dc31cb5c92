// SPDX-License-Identifier: Apache-2.0

//! Collaborative, contextual and scene conditions, fused by a softmax gate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{CdpError, Result};
use crate::nn::{Dense, Mlp};
use crate::param::{ParamId, ParamStore};

/// Model variant, selecting how (and whether) conditions reach the denoiser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Softmax gate over all three conditions.
    #[default]
    Full,
    /// The denoiser's condition slot is zero-filled.
    NoCondition,
    /// Two-way gate over the contextual and scene conditions.
    NoCollaborative,
    /// The collaborative condition is used directly.
    NoOther,
    /// Unweighted mean of the three conditions.
    NoMoe,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::NoCondition,
        AblationMode::NoCollaborative,
        AblationMode::NoOther,
        AblationMode::NoMoe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoCondition => "no_condition",
            AblationMode::NoCollaborative => "no_collaborative",
            AblationMode::NoOther => "no_other",
            AblationMode::NoMoe => "no_moe",
        }
    }

    /// Number of experts the gate mixes, if the mode has a gate.
    pub fn gate_experts(self) -> Option<usize> {
        match self {
            AblationMode::Full => Some(3),
            AblationMode::NoCollaborative => Some(2),
            _ => None,
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = CdpError;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CdpError::Config(format!("unknown ablation mode `{s}`")))
    }
}

/// Embedded inputs of the three condition encoders.
#[derive(Clone, Copy, Debug)]
pub struct ConditionInputs {
    pub q: Var,
    pub u: Var,
    pub i: Var,
    /// Concatenated context-field embeddings.
    pub ctx: Var,
    /// Concatenated scene-field embeddings.
    pub scene: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FusedCondition {
    pub c: Var,
    /// Gate weights; absent in modes without a gate.
    pub g: Option<Var>,
    pub c_co: Option<Var>,
    pub c_ctx: Option<Var>,
    pub c_scene: Option<Var>,
}

/// `[q ‖ u ‖ i ‖ q⊙u ‖ u−i ‖ q⊙i ‖ q−i]`, width `7d`.
pub fn collab_features(g: &mut Graph<'_>, q: Var, u: Var, i: Var) -> Result<Var> {
    let qu = g.mul(q, u)?;
    let u_i = g.sub(u, i)?;
    let qi = g.mul(q, i)?;
    let q_i = g.sub(q, i)?;
    Ok(g.concat(&[q, u, i, qu, u_i, qi, q_i]))
}

/// Gate logits `W·[parts]` (no bias), softmaxed, then the weighted sum.
pub fn moe_fuse(g: &mut Graph<'_>, gate: ParamId, parts: &[Var]) -> Result<(Var, Var)> {
    let x = g.concat(parts);
    let w = g.param(gate);
    let zero = g.constant(vec![0.0; parts.len()]);
    let logits = g.affine(w, zero, x)?;
    let weights = g.softmax(logits);
    let c = g.mix(weights, parts)?;
    Ok((c, weights))
}

#[derive(Clone, Debug)]
pub struct ConditionBuilder {
    pub mode: AblationMode,
    pub dim: usize,
    pub co: Mlp,
    pub ctx: Mlp,
    pub scene: Mlp,
    pub gate: Option<Dense>,
}

impl ConditionBuilder {
    /// Encoders are built in every mode so their shapes never depend on the
    /// ablation; only the gate differs.
    pub fn new(
        store: &mut ParamStore,
        mode: AblationMode,
        dim: usize,
        ctx_width: usize,
        scene_width: usize,
        seed: u64,
    ) -> Result<Self> {
        let hidden = 2 * dim;
        let co = Mlp::new(store, "cond.co", &[7 * dim, hidden, dim], seed)?;
        let ctx = Mlp::new(store, "cond.ctx", &[ctx_width, hidden, dim], seed)?;
        let scene = Mlp::new(store, "cond.scene", &[scene_width, hidden, dim], seed)?;
        let gate = match mode.gate_experts() {
            Some(k) => Some(Dense::new(store, "cond.gate", k * dim, k, false, seed)?),
            None => None,
        };
        Ok(ConditionBuilder {
            mode,
            dim,
            co,
            ctx,
            scene,
            gate,
        })
    }

    pub fn collab_condition(&self, g: &mut Graph<'_>, q: Var, u: Var, i: Var) -> Result<Var> {
        let x = collab_features(g, q, u, i)?;
        self.co.forward(g, x)
    }

    pub fn ctx_condition(&self, g: &mut Graph<'_>, x_ctx: Var) -> Result<Var> {
        self.ctx.forward(g, x_ctx)
    }

    pub fn scene_condition(&self, g: &mut Graph<'_>, x_scene: Var) -> Result<Var> {
        self.scene.forward(g, x_scene)
    }

    pub fn build(&self, g: &mut Graph<'_>, inputs: &ConditionInputs) -> Result<FusedCondition> {
        let none = FusedCondition {
            c: inputs.q,
            g: None,
            c_co: None,
            c_ctx: None,
            c_scene: None,
        };
        match self.mode {
            AblationMode::NoCondition => Ok(FusedCondition {
                c: g.constant(vec![0.0; self.dim]),
                ..none
            }),
            AblationMode::NoOther => {
                let c_co = self.collab_condition(g, inputs.q, inputs.u, inputs.i)?;
                Ok(FusedCondition {
                    c: c_co,
                    c_co: Some(c_co),
                    ..none
                })
            }
            AblationMode::NoCollaborative => {
                let c_ctx = self.ctx_condition(g, inputs.ctx)?;
                let c_scene = self.scene_condition(g, inputs.scene)?;
                let (c, w) = moe_fuse(g, self.gate_param(), &[c_ctx, c_scene])?;
                Ok(FusedCondition {
                    c,
                    g: Some(w),
                    c_co: None,
                    c_ctx: Some(c_ctx),
                    c_scene: Some(c_scene),
                })
            }
            AblationMode::Full | AblationMode::NoMoe => {
                let c_co = self.collab_condition(g, inputs.q, inputs.u, inputs.i)?;
                let c_ctx = self.ctx_condition(g, inputs.ctx)?;
                let c_scene = self.scene_condition(g, inputs.scene)?;
                let parts = [c_co, c_ctx, c_scene];
                let (c, w) = if self.mode == AblationMode::Full {
                    let (c, w) = moe_fuse(g, self.gate_param(), &parts)?;
                    (c, Some(w))
                } else {
                    (g.mean(&parts)?, None)
                };
                Ok(FusedCondition {
                    c,
                    g: w,
                    c_co: Some(c_co),
                    c_ctx: Some(c_ctx),
                    c_scene: Some(c_scene),
                })
            }
        }
    }

    fn gate_param(&self) -> ParamId {
        self.gate.as_ref().expect("gated mode has a gate").weight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn builder(mode: AblationMode) -> (ParamStore, ConditionBuilder) {
        let mut store = ParamStore::new();
        let b = ConditionBuilder::new(&mut store, mode, 4, 8, 8, 17).unwrap();
        (store, b)
    }

    fn zero_biases(store: &mut ParamStore) {
        for (_, p) in store.iter_mut() {
            if p.name.ends_with(".b") {
                p.value.fill(0.0);
            }
        }
    }

    fn inputs(g: &mut Graph<'_>, seed: u64) -> ConditionInputs {
        let mut r = rng::stream(seed, "inputs");
        let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
        let (q, u, i, ctx, scene) = (v(4), v(4), v(4), v(8), v(8));
        ConditionInputs {
            q: g.constant(q),
            u: g.constant(u),
            i: g.constant(i),
            ctx: g.constant(ctx),
            scene: g.constant(scene),
        }
    }

    #[test]
    fn parse_modes() {
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
        }
        assert!(matches!("bogus".parse::<AblationMode>(), Err(CdpError::Config(_))));
    }

    #[test]
    fn collab_feature_layout() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let q = g.constant(vec![1.0, 2.0]);
        let u = g.constant(vec![3.0, -1.0]);
        let x = collab_features(&mut g, q, u, q).unwrap();
        let v = g.value(x);
        assert_eq!(v.len(), 14);
        assert_eq!(&v[0..2], &[1.0, 2.0]);
        assert_eq!(&v[6..8], &[3.0, -2.0]); // q⊙u
        assert_eq!(&v[8..10], &[2.0, -3.0]); // u−i
        assert_eq!(&v[10..12], &[1.0, 4.0]); // q⊙i
        assert_eq!(&v[12..14], &[0.0, 0.0]); // q−i with q = i
    }

    #[test]
    fn zero_inputs_with_zero_bias_give_zero() {
        let (mut store, b) = builder(AblationMode::Full);
        zero_biases(&mut store);
        let mut g = Graph::new(&store);
        let z4 = g.constant(vec![0.0; 4]);
        let z8 = g.constant(vec![0.0; 8]);
        let c_co = b.collab_condition(&mut g, z4, z4, z4).unwrap();
        let c_ctx = b.ctx_condition(&mut g, z8).unwrap();
        assert!(g.value(c_co).iter().all(|&x| x == 0.0));
        assert!(g.value(c_ctx).iter().all(|&x| x == 0.0));
        assert_eq!(g.dim(c_ctx), 4);
        let wrong = g.constant(vec![0.0; 5]);
        assert!(b.ctx_condition(&mut g, wrong).is_err());
    }

    #[test]
    fn ctx_and_scene_are_separate() {
        let (mut store, b) = builder(AblationMode::Full);
        let scene_before = {
            let mut g = Graph::new(&store);
            let inp = inputs(&mut g, 1);
            let c = b.scene_condition(&mut g, inp.scene).unwrap();
            g.value(c).to_vec()
        };
        for id in b.ctx.params() {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v += 0.3);
        }
        let mut g = Graph::new(&store);
        let inp = inputs(&mut g, 1);
        let c = b.scene_condition(&mut g, inp.scene).unwrap();
        assert_eq!(g.value(c), scene_before.as_slice());
    }

    #[test]
    fn collab_gradient_reaches_all_inputs() {
        use crate::autodiff::Gradients;
        use crate::param::{ParamGroup, Parameter};
        use crate::tensor::Tensor;
        let (mut store, b) = builder(AblationMode::Full);
        let mut ids = Vec::new();
        for (n, vals) in [("q", [0.3, -0.2, 0.5, 0.1]), ("u", [-0.4, 0.6, 0.2, -0.1]), ("i", [0.2, 0.1, -0.3, 0.7])] {
            ids.push(
                store
                    .add(Parameter::new(n, ParamGroup::Dense, Tensor::vector(vals.to_vec()).unwrap()))
                    .unwrap(),
            );
        }
        let mut grads = Gradients::new();
        let mut g = Graph::new(&store);
        let (q, u, i) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let c = b.collab_condition(&mut g, q, u, i).unwrap();
        let l = g.sum(c);
        g.backward(l, &mut grads).unwrap();
        for id in ids {
            assert!(grads.dense(id).unwrap().iter().any(|&x| x.abs() > 1e-12));
        }
    }

    #[test]
    fn uniform_gate_gives_mean() {
        let (mut store, b) = builder(AblationMode::Full);
        store.get_mut(b.gate.as_ref().unwrap().weight).value.fill(0.0);
        let mut g = Graph::new(&store);
        let inp = inputs(&mut g, 2);
        let f = b.build(&mut g, &inp).unwrap();
        for &w in g.value(f.g.unwrap()) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let parts = [f.c_co.unwrap(), f.c_ctx.unwrap(), f.c_scene.unwrap()];
        for k in 0..4 {
            let mean = parts.iter().map(|&p| g.value(p)[k]).sum::<f64>() / 3.0;
            assert!((g.value(f.c)[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_gate_selects_one_expert() {
        let store = {
            let mut s = ParamStore::new();
            let gate = Dense::new(&mut s, "gate", 3, 3, false, 0).unwrap();
            // logits = W·[a ‖ b ‖ c] with a = (1) gives (1000, 0, 0)
            let w = &mut s.get_mut(gate.weight).value;
            w.fill(0.0);
            w.data_mut()[0] = 1000.0;
            s
        };
        let gate = store.id("gate.w").unwrap();
        let mut g = Graph::new(&store);
        let a = g.constant(vec![1.0]);
        let b = g.constant(vec![-4.0]);
        let c = g.constant(vec![7.0]);
        let (fused, w) = moe_fuse(&mut g, gate, &[a, b, c]).unwrap();
        assert!((g.value(fused)[0] - 1.0).abs() < 1e-6);
        assert!((g.value(w)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ablation_fusion_paths() {
        let (store, b) = builder(AblationMode::NoCondition);
        let mut g = Graph::new(&store);
        let inp = inputs(&mut g, 3);
        let f = b.build(&mut g, &inp).unwrap();
        assert!(g.value(f.c).iter().all(|&x| x == 0.0));
        assert!(f.g.is_none() && b.gate.is_none());

        let (store, b) = builder(AblationMode::NoOther);
        let mut g = Graph::new(&store);
        let inp = inputs(&mut g, 3);
        let f = b.build(&mut g, &inp).unwrap();
        assert!(f.g.is_none());
        assert_eq!(g.value(f.c), g.value(f.c_co.unwrap()));

        let (store, b) = builder(AblationMode::NoCollaborative);
        assert_eq!(store.get(b.gate.as_ref().unwrap().weight).value.shape(), &[2, 8]);
        let mut g = Graph::new(&store);
        let inp = inputs(&mut g, 3);
        let f = b.build(&mut g, &inp).unwrap();
        assert_eq!(g.dim(f.g.unwrap()), 2);
        assert!(f.c_co.is_none());

        let (store, b) = builder(AblationMode::NoMoe);
        let mut g = Graph::new(&store);
        let v = g.constant(vec![0.25, -1.0, 2.0, 0.5]);
        let m = g.mean(&[v, v, v]).unwrap();
        assert_eq!(g.value(m), &[0.25, -1.0, 2.0, 0.5]);
        let inp = inputs(&mut g, 3);
        let f = b.build(&mut g, &inp).unwrap();
        assert!(f.g.is_none());
        drop(store);
    }

    #[test]
    fn encoder_shapes_do_not_depend_on_mode() {
        let shapes = |mode| {
            let (store, _) = builder(mode);
            store
                .iter()
                .filter(|(_, p)| !p.name.starts_with("cond.gate"))
                .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec()))
                .collect::<Vec<_>>()
        };
        let full = shapes(AblationMode::Full);
        for m in AblationMode::ALL {
            assert_eq!(shapes(m), full, "{m}");
        }
    }

    #[test]
    fn gate_simplex_and_convexity_sweep() {
        let (store, b) = builder(AblationMode::Full);
        let gate = b.gate.as_ref().unwrap().weight;
        let mut r = rng::stream(4, "sweep");
        for _ in 0..1000 {
            let mut g = Graph::new(&store);
            let mut v = || -> Vec<f64> { (0..4).map(|_| r.random_range(-3.0..3.0)).collect() };
            let parts = [g.constant(v()), g.constant(v()), g.constant(v())];
            let (c, w) = moe_fuse(&mut g, gate, &parts).unwrap();
            let ws = g.value(w);
            assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(ws.iter().all(|&x| x > 0.0 && x < 1.0));
            for k in 0..4 {
                let vals: Vec<f64> = parts.iter().map(|&p| g.value(p)[k]).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ck = g.value(c)[k];
                assert!(ck >= lo - 1e-12 && ck <= hi + 1e-12);
            }
        }
    }
}
