// SPDX-License-Identifier: Apache-2.0

//! The conditional diffusion purifier wired end to end.
//!
//! Training takes one noising draw per sample: the gated, pooled history
//! `z0` is noised to a random step, the denoiser predicts the noise under
//! the fused condition, and the one-shot reconstruction `z*` feeds the click
//! head. Inference starts from the noise-free point at `T` and runs the
//! deterministic reverse trajectory.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Var};
use crate::condition::{AblationMode, ConditionBuilder, ConditionInputs};
use crate::dataset::SampleRecord;
use crate::diffusion::{
    forward_noise_var, reconstruct_z0_var, reverse_denoise, sample_train_timestep, standard_normal, DenoiserNet,
    NoisePredictor, NoiseSchedule, ReverseRule,
};
use crate::embedding::{EmbeddingTable, FeatureVocab};
use crate::error::{CdpError, Result};
use crate::metrics::ScoredLabel;
use crate::nn::Mlp;
use crate::optim::{AdamConfig, Optimizer};
use crate::param::ParamStore;
use crate::purifier::{category_gate, mean_pool};
use crate::rng::{self, Rng};
use crate::synthetic::{FieldSpec, WorldSpec};

/// Feature cardinalities the embedding tables are sized for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub n_queries: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub ctx_fields: Vec<FieldSpec>,
    pub scene_fields: Vec<FieldSpec>,
}

impl VocabSpec {
    pub fn from_world(spec: &WorldSpec) -> Self {
        VocabSpec {
            n_queries: spec.n_queries,
            n_users: spec.n_users,
            n_items: spec.n_items,
            n_categories: spec.n_categories,
            ctx_fields: spec.ctx_cardinalities.clone(),
            scene_fields: spec.scene_cardinalities.clone(),
        }
    }
}

impl Default for VocabSpec {
    fn default() -> Self {
        Self::from_world(&WorldSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdpConfig {
    pub dim: usize,
    pub steps: usize,
    pub inference_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Denoiser hidden width; `None` means `4·dim`.
    pub denoiser_hidden: Option<usize>,
    pub time_dim: usize,
    pub head_hidden: Vec<usize>,
    pub ablation: AblationMode,
    pub reverse_rule: ReverseRule,
    pub lr_dense: f64,
    pub lr_sparse: f64,
    /// Embedding rows start uniform in `±embedding_init`.
    pub embedding_init: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop the click loss from reaching the denoiser through `z*`.
    pub detach_z_star: bool,
    pub seed: u64,
    pub vocab: VocabSpec,
}

impl Default for CdpConfig {
    fn default() -> Self {
        CdpConfig {
            dim: 32,
            steps: 100,
            inference_steps: 20,
            beta_min: 0.005,
            beta_max: 0.01,
            denoiser_hidden: None,
            time_dim: 32,
            head_hidden: vec![64, 32],
            ablation: AblationMode::Full,
            reverse_rule: ReverseRule::Reconstruct,
            lr_dense: 0.00025,
            lr_sparse: 0.0005,
            embedding_init: crate::embedding::EMBEDDING_INIT,
            batch_size: 256,
            epochs: 10,
            detach_z_star: false,
            seed: 7,
            vocab: VocabSpec::default(),
        }
    }
}

impl CdpConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(CdpError::Config(m.into()));
        if self.dim == 0 || self.time_dim == 0 || self.batch_size == 0 {
            return err("dim, time_dim and batch_size must be positive");
        }
        if !self.time_dim.is_multiple_of(2) {
            return err("time_dim must be even");
        }
        if self.inference_steps == 0 || self.inference_steps > self.steps {
            return err("inference_steps must lie in [1, steps]");
        }
        if self.denoiser_hidden == Some(0) || self.head_hidden.contains(&0) {
            return err("hidden widths must be positive");
        }
        if !(self.embedding_init >= 0.0 && self.embedding_init.is_finite()) {
            return err("embedding_init must be finite and non-negative");
        }
        if !(self.lr_dense >= 0.0 && self.lr_sparse >= 0.0) {
            return err("learning rates must be non-negative");
        }
        let v = &self.vocab;
        if v.n_queries == 0 || v.n_users == 0 || v.n_items == 0 || v.n_categories == 0 {
            return err("vocabulary sizes must be positive");
        }
        if v.ctx_fields.is_empty() || v.scene_fields.is_empty() {
            return err("at least one context and one scene field are required");
        }
        Ok(())
    }

    pub fn denoiser_width(&self) -> usize {
        self.denoiser_hidden.unwrap_or(4 * self.dim)
    }

    /// `d·(4 + n_ctx + n_scene) + 1`.
    pub fn sparse_width(&self) -> usize {
        self.dim * (4 + self.vocab.ctx_fields.len() + self.vocab.scene_fields.len()) + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub recon: f64,
    pub bce: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub p: f64,
    pub z_star: Vec<f64>,
    pub gates: Option<Vec<f64>>,
    pub losses: Option<Losses>,
}

/// A fixed noising draw: the step and the injected noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

impl NoiseDraw {
    pub fn sample(rng: &mut Rng, steps: usize, dim: usize) -> Self {
        let t = sample_train_timestep(rng, steps);
        NoiseDraw {
            t,
            eps: standard_normal(rng, dim),
        }
    }
}

struct Recorded {
    p: Var,
    z_star: Var,
    gates: Option<Var>,
    losses: Option<(Var, Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct CdpModel {
    pub config: CdpConfig,
    pub store: ParamStore,
    pub schedule: NoiseSchedule,
    pub emb_query: EmbeddingTable,
    pub emb_user: EmbeddingTable,
    pub emb_item: EmbeddingTable,
    pub emb_category: EmbeddingTable,
    pub emb_ctx: Vec<EmbeddingTable>,
    pub emb_scene: Vec<EmbeddingTable>,
    pub condition: ConditionBuilder,
    pub denoiser: DenoiserNet,
    pub head: Mlp,
}

impl CdpModel {
    pub fn new(config: CdpConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let seed = config.seed;
        let mut store = ParamStore::new();
        let table = |store: &mut ParamStore, field: &str, card: usize| -> Result<EmbeddingTable> {
            let vocab = FeatureVocab::new(field, card)?;
            let mut r = rng::stream(seed, &format!("emb.{field}"));
            EmbeddingTable::with_init(store, vocab, d, config.embedding_init, &mut r)
        };
        let v = config.vocab.clone();
        let emb_query = table(&mut store, "query", v.n_queries)?;
        let emb_user = table(&mut store, "user", v.n_users)?;
        let emb_item = table(&mut store, "item", v.n_items)?;
        let emb_category = table(&mut store, "category", v.n_categories)?;
        let emb_ctx = v
            .ctx_fields
            .iter()
            .map(|f| table(&mut store, &format!("ctx.{}", f.name), f.cardinality))
            .collect::<Result<Vec<_>>>()?;
        let emb_scene = v
            .scene_fields
            .iter()
            .map(|f| table(&mut store, &format!("scene.{}", f.name), f.cardinality))
            .collect::<Result<Vec<_>>>()?;
        let condition = ConditionBuilder::new(
            &mut store,
            config.ablation,
            d,
            d * emb_ctx.len(),
            d * emb_scene.len(),
            seed,
        )?;
        let denoiser = DenoiserNet::new(&mut store, d, config.time_dim, config.denoiser_width(), seed)?;
        let mut widths = vec![d + config.sparse_width()];
        widths.extend(&config.head_hidden);
        widths.push(1);
        let head = Mlp::new(&mut store, "head", &widths, seed)?;
        let schedule = NoiseSchedule::linear(config.beta_min, config.beta_max, config.steps)?;
        Ok(CdpModel {
            config,
            store,
            schedule,
            emb_query,
            emb_user,
            emb_item,
            emb_category,
            emb_ctx,
            emb_scene,
            condition,
            denoiser,
            head,
        })
    }

    fn check_sample(&self, s: &SampleRecord) -> Result<()> {
        if s.ctx_ids.len() != self.emb_ctx.len() || s.scene_ids.len() != self.emb_scene.len() {
            return Err(CdpError::dim(
                "sample (ctx_ids, scene_ids)",
                &[self.emb_ctx.len(), self.emb_scene.len()],
                &[s.ctx_ids.len(), s.scene_ids.len()],
            ));
        }
        if s.label > 1 {
            return Err(CdpError::Usage(format!("label must be 0 or 1, got {}", s.label)));
        }
        Ok(())
    }

    /// `φ_sparse`: query, user, item, category, context fields, scene fields
    /// and the gated-empty bit, concatenated in that order.
    pub fn sparse_features(&self, g: &mut Graph<'_>, s: &SampleRecord, gated_empty: bool) -> Result<Var> {
        self.check_sample(s)?;
        let mut parts = vec![
            self.emb_query.lookup(g, s.query_id),
            self.emb_user.lookup(g, s.user_id),
            self.emb_item.lookup(g, s.item_id),
            self.emb_category.lookup(g, s.category_id),
        ];
        for (t, &id) in self.emb_ctx.iter().zip(&s.ctx_ids) {
            parts.push(t.lookup(g, id));
        }
        for (t, &id) in self.emb_scene.iter().zip(&s.scene_ids) {
            parts.push(t.lookup(g, id));
        }
        parts.push(g.constant(vec![f64::from(u8::from(gated_empty))]));
        Ok(g.concat(&parts))
    }

    /// Click logit `f_DNN(z* ‖ φ_sparse)`.
    pub fn head_logit(&self, g: &mut Graph<'_>, z_star: Var, sparse: Var) -> Result<Var> {
        if g.dim(z_star) != self.config.dim || g.dim(sparse) != self.config.sparse_width() {
            return Err(CdpError::dim(
                "head input (z*, sparse)",
                &[self.config.dim, self.config.sparse_width()],
                &[g.dim(z_star), g.dim(sparse)],
            ));
        }
        let x = g.concat(&[z_star, sparse]);
        self.head.forward(g, x)
    }

    fn record(&self, g: &mut Graph<'_>, s: &SampleRecord, noise: Option<&NoiseDraw>) -> Result<Recorded> {
        self.check_sample(s)?;
        let d = self.config.dim;
        let gated = category_gate(&s.behaviors, s.category_id);
        let pooled = mean_pool(g, &gated, &self.emb_item);
        let sparse = self.sparse_features(g, s, pooled.gated_empty)?;

        // the condition encoders read the same embedding rows as φ_sparse
        let q = self.emb_query.lookup(g, s.query_id);
        let u = self.emb_user.lookup(g, s.user_id);
        let i = self.emb_item.lookup(g, s.item_id);
        let ctx: Vec<Var> = self.emb_ctx.iter().zip(&s.ctx_ids).map(|(t, &id)| t.lookup(g, id)).collect();
        let scene: Vec<Var> = self
            .emb_scene
            .iter()
            .zip(&s.scene_ids)
            .map(|(t, &id)| t.lookup(g, id))
            .collect();
        let inputs = ConditionInputs {
            q,
            u,
            i,
            ctx: g.concat(&ctx),
            scene: g.concat(&scene),
        };
        let cond = self.condition.build(g, &inputs)?;

        let (z_star, recon) = match noise {
            Some(draw) => {
                if draw.eps.len() != d {
                    return Err(CdpError::dim("noise draw", &[d], &[draw.eps.len()]));
                }
                self.schedule.check_step(draw.t)?;
                let eps = g.constant(draw.eps.clone());
                let z_t = forward_noise_var(g, pooled.z0, draw.t, eps, &self.schedule)?;
                let eps_hat = self.denoiser.predict_noise(g, z_t, draw.t, cond.c)?;
                let recon = g.mse(eps_hat, eps)?;
                let z_star = reconstruct_z0_var(g, z_t, draw.t, eps_hat, &self.schedule)?;
                let z_star = if self.config.detach_z_star { g.detach(z_star) } else { z_star };
                (z_star, Some(recon))
            }
            None => {
                let zero = g.constant(vec![0.0; d]);
                let z_t = forward_noise_var(g, pooled.z0, self.schedule.steps(), zero, &self.schedule)?;
                let z_star = reverse_denoise(
                    g,
                    &self.denoiser,
                    z_t,
                    cond.c,
                    &self.schedule,
                    self.config.inference_steps,
                    self.config.reverse_rule,
                )?;
                (z_star, None)
            }
        };

        let logit = self.head_logit(g, z_star, sparse)?;
        let p = g.sigmoid(logit);
        let losses = match recon {
            Some(recon) => {
                let bce = g.bce(p, f64::from(s.label))?;
                let total = g.add(recon, bce)?;
                Some((recon, bce, total))
            }
            None => None,
        };
        Ok(Recorded {
            p,
            z_star,
            gates: cond.g,
            losses,
        })
    }

    fn output(g: &Graph<'_>, r: &Recorded) -> PredictionOutput {
        PredictionOutput {
            p: g.scalar(r.p),
            z_star: g.value(r.z_star).to_vec(),
            gates: r.gates.map(|v| g.value(v).to_vec()),
            losses: r.losses.map(|(a, b, c)| Losses {
                recon: g.scalar(a),
                bce: g.scalar(b),
                total: g.scalar(c),
            }),
        }
    }

    /// Training-mode forward with a fresh `(t, ε)` from `rng`.
    pub fn forward_train(&self, s: &SampleRecord, rng: &mut Rng) -> Result<PredictionOutput> {
        let draw = NoiseDraw::sample(rng, self.config.steps, self.config.dim);
        self.forward_train_with(s, &draw)
    }

    /// Training-mode forward under a fixed noising draw.
    pub fn forward_train_with(&self, s: &SampleRecord, draw: &NoiseDraw) -> Result<PredictionOutput> {
        let mut g = Graph::new(&self.store);
        let r = self.record(&mut g, s, Some(draw))?;
        Ok(Self::output(&g, &r))
    }

    /// Adds `weight · ∇ total` for one sample into `grads` and returns the
    /// unweighted losses.
    pub fn accumulate_gradients(
        &self,
        s: &SampleRecord,
        draw: &NoiseDraw,
        weight: f64,
        grads: &mut Gradients,
    ) -> Result<Losses> {
        let mut g = Graph::new(&self.store);
        let r = self.record(&mut g, s, Some(draw))?;
        let (recon, bce, total) = r.losses.expect("training pass records losses");
        let scaled = g.scale(total, weight);
        g.backward(scaled, grads)?;
        Ok(Losses {
            recon: g.scalar(recon),
            bce: g.scalar(bce),
            total: g.scalar(total),
        })
    }

    /// Deterministic inference over the reverse trajectory.
    pub fn forward_infer(&self, s: &SampleRecord) -> Result<PredictionOutput> {
        let mut g = Graph::new(&self.store);
        let r = self.record(&mut g, s, None)?;
        Ok(Self::output(&g, &r))
    }

    /// Inference over many samples, sharded across threads; outputs keep the
    /// input order.
    pub fn predict_all(&self, records: &[SampleRecord]) -> Result<Vec<PredictionOutput>> {
        records.par_iter().map(|s| self.forward_infer(s)).collect()
    }

    pub fn score(&self, records: &[SampleRecord]) -> Result<Vec<ScoredLabel>> {
        let outs = self.predict_all(records)?;
        Ok(records
            .iter()
            .zip(outs)
            .map(|(s, o)| ScoredLabel {
                score: o.p,
                label: s.label,
                user_id: s.user_id,
                request_id: s.request_id,
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_recon: f64,
    pub mean_bce: f64,
    pub batches: usize,
}

/// Minibatch Adam training with seed-pinned shuffling and noise.
pub struct Trainer {
    optimizer: Optimizer,
    grads: Gradients,
    epoch: usize,
    /// Mean total loss of every batch so far, in order.
    pub batch_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(model: &CdpModel) -> Result<Self> {
        let c = &model.config;
        Ok(Trainer {
            optimizer: Optimizer::new(&model.store, AdamConfig::default(), c.lr_dense, c.lr_sparse)?,
            grads: Gradients::new(),
            epoch: 0,
            batch_losses: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self, model: &mut CdpModel, data: &[SampleRecord]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(CdpError::Usage("cannot train on an empty dataset".into()));
        }
        let seed = model.config.seed;
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(seed, &format!("train.shuffle.{epoch}")));
        let mut noise_rng = rng::stream(seed, &format!("train.noise.{epoch}"));
        let (steps, dim) = (model.config.steps, model.config.dim);

        let (mut sum_total, mut sum_recon, mut sum_bce) = (0.0, 0.0, 0.0);
        let mut batches = 0;
        for batch in order.chunks(model.config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            self.grads.clear();
            let mut batch_total = 0.0;
            for &k in batch {
                let draw = NoiseDraw::sample(&mut noise_rng, steps, dim);
                let l = model.accumulate_gradients(&data[k], &draw, weight, &mut self.grads)?;
                sum_total += l.total;
                sum_recon += l.recon;
                sum_bce += l.bce;
                batch_total += l.total;
            }
            model.store.accumulate(&self.grads);
            self.optimizer.step(&mut model.store)?;
            model.store.zero_grad();
            self.batch_losses.push(batch_total * weight);
            batches += 1;
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            mean_total: sum_total / n,
            mean_recon: sum_recon / n,
            mean_bce: sum_bce / n,
            batches,
        })
    }
}
