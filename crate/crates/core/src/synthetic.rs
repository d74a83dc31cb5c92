// SPDX-License-Identifier: Apache-2.0

//! Synthetic clickstream worlds with planted interests and planted noise.
//!
//! Each user holds one latent interest vector per category and a preference
//! over categories. Behavior sequences mix three sources: interest-driven
//! events (a favored category, then an item chosen by affinity), exposure
//! events drawn from a global Zipf popularity law regardless of category,
//! and drift events drawn uniformly from the whole catalog. Click labels
//! depend only on the user's interest in the target category, the target
//! item and a small hour-of-day offset, so gating and purifying the history
//! is what recovers the signal.
//!
//! All randomness comes from ChaCha8 streams keyed by the world seed (see
//! [`crate::rng`]); a given spec always produces the same bytes.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::diffusion::standard_normal;
use crate::error::{CdpError, Result};
use crate::purifier::BehaviorEvent;
use crate::rng::{self, Rng};
use crate::tensor::sigmoid;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: usize,
}

impl FieldSpec {
    pub fn new(name: &str, cardinality: usize) -> Self {
        FieldSpec {
            name: name.into(),
            cardinality,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_queries: usize,
    pub ctx_cardinalities: Vec<FieldSpec>,
    pub scene_cardinalities: Vec<FieldSpec>,
    pub latent_dim: usize,
    /// Share of exposure-driven (popularity) behavior events.
    pub noise_popular_ratio: f64,
    /// Share of uniformly random cross-category behavior events.
    pub drift_ratio: f64,
    pub seq_len_mean: f64,
    pub max_seq_len: usize,
    /// Mean number of impressions shown per request.
    pub impressions_per_request: usize,
    /// Inverse temperature of affinity-driven item choice.
    pub interest_sharpness: f64,
    /// Spread of the per-user category preference logits.
    pub category_focus: f64,
    /// Multiplier on the user–item affinity in the click logit.
    pub label_scale: f64,
    pub target_positive_rate: f64,
    pub zipf_exponent: f64,
    /// Per-hour click-logit offsets are drawn from `±hour_effect_max`.
    pub hour_effect_max: f64,
    /// Share of item-latent variance carried by the item's category centroid.
    pub category_coherence: f64,
    /// Multiplier on the query–item relevance in the click logit.
    pub query_relevance: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_users: 2000,
            n_items: 2000,
            n_categories: 20,
            n_queries: 100,
            ctx_cardinalities: vec![FieldSpec::new("hour", 24), FieldSpec::new("page", 10)],
            scene_cardinalities: vec![
                FieldSpec::new("client", 3),
                FieldSpec::new("search_source", 4),
            ],
            latent_dim: 16,
            noise_popular_ratio: 0.5,
            drift_ratio: 0.3,
            seq_len_mean: 40.0,
            max_seq_len: 2000,
            impressions_per_request: 5,
            interest_sharpness: 8.0,
            category_focus: 1.5,
            label_scale: 8.0,
            target_positive_rate: 0.15,
            zipf_exponent: 1.1,
            hour_effect_max: 0.5,
            query_relevance: 0.0,
            category_coherence: 0.0,
            seed: 2024,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CdpError::Config(m));
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_categories", self.n_categories),
            ("n_queries", self.n_queries),
        ] {
            if v < 2 {
                return err(format!("{name} must be at least 2, got {v}"));
            }
        }
        if self.latent_dim == 0 || self.max_seq_len == 0 || self.impressions_per_request == 0 {
            return err("latent_dim, max_seq_len and impressions_per_request must be positive".into());
        }
        for (name, r) in [
            ("noise_popular_ratio", self.noise_popular_ratio),
            ("drift_ratio", self.drift_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if self.noise_popular_ratio + self.drift_ratio > 1.0 + 1e-12 {
            return err(format!(
                "noise_popular_ratio + drift_ratio must not exceed 1, got {}",
                self.noise_popular_ratio + self.drift_ratio
            ));
        }
        if self.n_items < self.n_categories {
            return err("every category needs at least one item".into());
        }
        if self.n_queries < self.n_categories {
            return err("every category needs at least one query".into());
        }
        for f in self.ctx_cardinalities.iter().chain(&self.scene_cardinalities) {
            if f.cardinality < 2 {
                return err(format!("field `{}` needs cardinality >= 2", f.name));
            }
        }
        if !self.ctx_cardinalities.iter().any(|f| f.name == "hour") {
            return err("ctx_cardinalities must include an `hour` field".into());
        }
        if !(self.seq_len_mean > 0.0) {
            return err("seq_len_mean must be positive".into());
        }
        if !(self.target_positive_rate > 0.0 && self.target_positive_rate < 1.0) {
            return err("target_positive_rate must lie in (0, 1)".into());
        }
        if !(self.zipf_exponent > 0.0) || self.hour_effect_max < 0.0 {
            return err("zipf_exponent must be positive and hour_effect_max non-negative".into());
        }
        Ok(())
    }

    fn hour_field(&self) -> usize {
        self.ctx_cardinalities
            .iter()
            .position(|f| f.name == "hour")
            .expect("validated")
    }
}

/// Weighted sampler over a fixed list via binary search on the CDF.
#[derive(Clone, Debug)]
struct Cdf {
    cum: Vec<f64>,
}

impl Cdf {
    fn new(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let cum = weights
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Cdf { cum }
    }

    fn sample(&self, r: &mut Rng) -> usize {
        let total = *self.cum.last().expect("non-empty");
        let u = r.random::<f64>() * total;
        self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1)
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub item_category: Vec<u32>,
    pub items_by_category: Vec<Vec<u32>>,
    item_latent: Vec<f64>,
    user_interest: Vec<f64>,
    /// Per-user category preference, normalized.
    pub user_category_pref: Vec<Vec<f64>>,
    user_category_cdf: Vec<Cdf>,
    /// Zipf popularity weight of every item.
    pub popularity: Vec<f64>,
    /// Items sorted by decreasing popularity.
    pub popularity_rank: Vec<u32>,
    popularity_cdf: Cdf,
    category_popularity_cdf: Vec<Cdf>,
    pub query_category: Vec<u32>,
    query_latent: Vec<f64>,
    pub queries_by_category: Vec<Vec<u32>>,
    pub hour_effect: Vec<f64>,
    /// Click-logit intercept calibrated to the target positive rate.
    pub bias: f64,
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let seed = spec.seed;
    let k = spec.latent_dim;
    let n_cat = spec.n_categories;
    let scale = 1.0 / (k as f64).sqrt();

    let mut r = rng::stream(seed, "world.items");
    let mut item_category: Vec<u32> = (0..spec.n_items).map(|i| (i % n_cat) as u32).collect();
    item_category.shuffle(&mut r);
    let mut items_by_category = vec![Vec::new(); n_cat];
    for (i, &c) in item_category.iter().enumerate() {
        items_by_category[c as usize].push(i as u32);
    }
    let centroids = standard_normal(&mut r, n_cat * k);
    let own = standard_normal(&mut r, spec.n_items * k);
    let (wc, wi) = (spec.category_coherence.sqrt(), (1.0 - spec.category_coherence).sqrt());
    let item_latent: Vec<f64> = (0..spec.n_items * k)
        .map(|j| {
            let c = item_category[j / k] as usize;
            scale * (wc * centroids[c * k + j % k] + wi * own[j])
        })
        .collect();

    let mut r = rng::stream(seed, "world.users");
    let user_interest: Vec<f64> = standard_normal(&mut r, spec.n_users * n_cat * k)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    let user_category_pref: Vec<Vec<f64>> = (0..spec.n_users)
        .map(|_| {
            let logits: Vec<f64> = standard_normal(&mut r, n_cat)
                .into_iter()
                .map(|v| v * spec.category_focus)
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let user_category_cdf = user_category_pref.iter().map(|p| Cdf::new(p.iter().copied())).collect();

    let mut r = rng::stream(seed, "world.popularity");
    let mut popularity_rank: Vec<u32> = (0..spec.n_items as u32).collect();
    popularity_rank.shuffle(&mut r);
    let mut popularity = vec![0.0; spec.n_items];
    for (rank, &item) in popularity_rank.iter().enumerate() {
        popularity[item as usize] = 1.0 / ((rank + 1) as f64).powf(spec.zipf_exponent);
    }
    let popularity_cdf = Cdf::new(popularity.iter().copied());
    let category_popularity_cdf = items_by_category
        .iter()
        .map(|items| Cdf::new(items.iter().map(|&i| popularity[i as usize])))
        .collect();

    let query_category: Vec<u32> = (0..spec.n_queries).map(|q| (q % n_cat) as u32).collect();
    let mut queries_by_category = vec![Vec::new(); n_cat];
    for (q, &c) in query_category.iter().enumerate() {
        queries_by_category[c as usize].push(q as u32);
    }

    let mut r = rng::stream(seed, "world.queries");
    let query_latent: Vec<f64> = standard_normal(&mut r, spec.n_queries * k)
        .into_iter()
        .map(|v| v * scale)
        .collect();

    let mut r = rng::stream(seed, "world.context");
    let hours = spec.ctx_cardinalities[spec.hour_field()].cardinality;
    let hour_effect = (0..hours)
        .map(|_| r.random_range(-spec.hour_effect_max..=spec.hour_effect_max))
        .collect();

    let mut world = World {
        spec: spec.clone(),
        item_category,
        items_by_category,
        item_latent,
        user_interest,
        user_category_pref,
        user_category_cdf,
        popularity,
        popularity_rank,
        popularity_cdf,
        category_popularity_cdf,
        query_category,
        query_latent,
        queries_by_category,
        hour_effect,
        bias: 0.0,
    };
    world.bias = world.calibrate_bias();
    Ok(world)
}

impl World {
    pub fn item_latent(&self, item: u32) -> &[f64] {
        let k = self.spec.latent_dim;
        &self.item_latent[item as usize * k..(item as usize + 1) * k]
    }

    pub fn user_interest(&self, user: u32, category: u32) -> &[f64] {
        let k = self.spec.latent_dim;
        let off = (user as usize * self.spec.n_categories + category as usize) * k;
        &self.user_interest[off..off + k]
    }

    /// `⟨user interest in category, item latent⟩`.
    pub fn affinity(&self, user: u32, category: u32, item: u32) -> f64 {
        crate::tensor::dot(self.user_interest(user, category), self.item_latent(item))
    }

    pub fn query_latent(&self, query: u32) -> &[f64] {
        let k = self.spec.latent_dim;
        &self.query_latent[query as usize * k..(query as usize + 1) * k]
    }

    /// `⟨query latent, item latent⟩`.
    pub fn relevance(&self, query: u32, item: u32) -> f64 {
        crate::tensor::dot(self.query_latent(query), self.item_latent(item))
    }

    pub fn click_logit(&self, query: u32, user: u32, item: u32, hour: u32) -> f64 {
        let c = self.item_category[item as usize];
        self.spec.label_scale * self.affinity(user, c, item)
            + self.spec.query_relevance * self.relevance(query, item)
            + self.hour_effect[hour as usize]
            + self.bias
    }

    /// Draws an item index from the global popularity law.
    pub fn sample_popular(&self, r: &mut Rng) -> u32 {
        self.popularity_cdf.sample(r) as u32
    }

    fn sample_category(&self, user: u32, r: &mut Rng) -> u32 {
        self.user_category_cdf[user as usize].sample(r) as u32
    }

    fn sample_interest_item(&self, user: u32, category: u32, r: &mut Rng) -> u32 {
        let items = &self.items_by_category[category as usize];
        let logits: Vec<f64> = items
            .iter()
            .map(|&i| self.spec.interest_sharpness * self.affinity(user, category, i))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cdf = Cdf::new(logits.iter().map(|l| (l - max).exp()));
        items[cdf.sample(r)]
    }

    fn sample_target(&self, category: u32, r: &mut Rng) -> u32 {
        let items = &self.items_by_category[category as usize];
        items[self.category_popularity_cdf[category as usize].sample(r)]
    }

    fn calibrate_bias(&self) -> f64 {
        let mut r = rng::stream(self.spec.seed, "world.calibration");
        let hours = self.hour_effect.len() as u32;
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let u = r.random_range(0..self.spec.n_users as u32);
                let c = self.sample_category(u, &mut r);
                let qs = &self.queries_by_category[c as usize];
                let q = qs[r.random_range(0..qs.len())];
                let i = self.sample_target(c, &mut r);
                let h = r.random_range(0..hours);
                self.click_logit(q, u, i, h) - self.bias
            })
            .collect();
        let rate = |b: f64| draws.iter().map(|l| sigmoid(l + b)).sum::<f64>() / draws.len() as f64;
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < self.spec.target_positive_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn behavior_sequence(&self, user: u32, r: &mut Rng) -> Vec<BehaviorEvent> {
        let spec = &self.spec;
        let len = Poisson::new(spec.seq_len_mean)
            .map(|p| p.sample(r) as usize)
            .unwrap_or(0)
            .min(spec.max_seq_len);
        let n_items = spec.n_items as u32;
        let mut ts = 0u64;
        (0..len)
            .map(|_| {
                let u: f64 = r.random();
                let item = if u < spec.noise_popular_ratio {
                    self.sample_popular(r)
                } else if u < spec.noise_popular_ratio + spec.drift_ratio {
                    r.random_range(0..n_items)
                } else {
                    let c = self.sample_category(user, r);
                    self.sample_interest_item(user, c, r)
                };
                ts += r.random_range(1..=60);
                BehaviorEvent {
                    item_id: item,
                    category_id: self.item_category[item as usize],
                    timestamp: ts,
                }
            })
            .collect()
    }

    /// `n_samples` impressions with days drawn uniformly from `days`.
    /// Impressions are grouped into requests sharing user, query, context
    /// and history; request ids are prefixed with the first day so splits
    /// never collide.
    pub fn generate_dataset(&self, n_samples: usize, days: RangeInclusive<u32>) -> Vec<SampleRecord> {
        let spec = &self.spec;
        let label = format!("dataset.{}-{}", days.start(), days.end());
        let mut r = rng::stream(spec.seed, &label);
        let hour_field = spec.hour_field();
        let mut out = Vec::with_capacity(n_samples);
        let mut request = u64::from(*days.start()) << 40;
        while out.len() < n_samples {
            request += 1;
            let user = r.random_range(0..spec.n_users as u32);
            let category = self.sample_category(user, &mut r);
            let queries = &self.queries_by_category[category as usize];
            let query = queries[r.random_range(0..queries.len())];
            let ctx_ids: Vec<u32> = spec
                .ctx_cardinalities
                .iter()
                .map(|f| r.random_range(0..f.cardinality as u32))
                .collect();
            let scene_ids: Vec<u32> = spec
                .scene_cardinalities
                .iter()
                .map(|f| r.random_range(0..f.cardinality as u32))
                .collect();
            let day = r.random_range(days.clone());
            let behaviors = self.behavior_sequence(user, &mut r);
            let shown = r.random_range(1..=2 * spec.impressions_per_request - 1);
            for _ in 0..shown {
                if out.len() == n_samples {
                    break;
                }
                let item = self.sample_target(category, &mut r);
                let p = sigmoid(self.click_logit(query, user, item, ctx_ids[hour_field]));
                let label = u8::from(r.random::<f64>() < p);
                out.push(SampleRecord {
                    query_id: query,
                    user_id: user,
                    item_id: item,
                    category_id: category,
                    ctx_ids: ctx_ids.clone(),
                    scene_ids: scene_ids.clone(),
                    behaviors: behaviors.clone(),
                    label,
                    request_id: request,
                    day,
                });
            }
        }
        out
    }

    /// FNV-1a digest of every latent quantity, for reproducibility checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        self.item_category.iter().for_each(|&c| eat(u64::from(c)));
        self.item_latent.iter().for_each(|v| eat(v.to_bits()));
        self.user_interest.iter().for_each(|v| eat(v.to_bits()));
        self.user_category_pref.iter().flatten().for_each(|v| eat(v.to_bits()));
        self.popularity.iter().for_each(|v| eat(v.to_bits()));
        self.query_latent.iter().for_each(|v| eat(v.to_bits()));
        self.hour_effect.iter().for_each(|v| eat(v.to_bits()));
        eat(self.bias.to_bits());
        h
    }

    /// Mean over records of |Pearson correlation| between the behavior
    /// category histogram and the user's category preference.
    pub fn history_interest_correlation(&self, records: &[SampleRecord]) -> f64 {
        let n_cat = self.spec.n_categories;
        let mut total = 0.0;
        let mut counted = 0usize;
        for rec in records {
            if rec.behaviors.is_empty() {
                continue;
            }
            let mut hist = vec![0.0; n_cat];
            for e in &rec.behaviors {
                hist[e.category_id as usize] += 1.0;
            }
            if let Some(c) = pearson(&hist, &self.user_category_pref[rec.user_id as usize]) {
                total += c.abs();
                counted += 1;
            }
        }
        if counted == 0 {
            0.0
        } else {
            total / counted as f64
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Train/test split at desk scale: train on days 0–5, test on day 6.
pub const TRAIN_DAYS: RangeInclusive<u32> = 0..=5;
pub const TEST_DAYS: RangeInclusive<u32> = 6..=6;

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldSpec {
        WorldSpec {
            n_users: 300,
            n_items: 400,
            n_categories: 8,
            n_queries: 16,
            seq_len_mean: 30.0,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn validation() {
        assert!(WorldSpec::default().validate().is_ok());
        let bad = WorldSpec {
            noise_popular_ratio: 1.2,
            ..WorldSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldSpec {
            noise_popular_ratio: 0.7,
            drift_ratio: 0.4,
            ..WorldSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldSpec {
            n_categories: 1,
            ..WorldSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn world_is_deterministic() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let c = generate_world(&WorldSpec { seed: 9, ..small() }).unwrap();
        assert_ne!(a.checksum(), c.checksum());
        assert_eq!(a.generate_dataset(200, TRAIN_DAYS), b.generate_dataset(200, TRAIN_DAYS));
    }

    #[test]
    fn latent_norms_concentrate_near_one() {
        let w = generate_world(&small()).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let items: f64 = (0..400).map(|i| norm(w.item_latent(i))).sum::<f64>() / 400.0;
        let users: f64 = (0..300).map(|u| norm(w.user_interest(u, 3))).sum::<f64>() / 300.0;
        assert!((0.8..=1.2).contains(&items), "{items}");
        assert!((0.8..=1.2).contains(&users), "{users}");
    }

    #[test]
    fn popularity_ranks_follow_frequency() {
        let w = generate_world(&small()).unwrap();
        let mut r = rng::stream(1, "zipf");
        let mut counts = vec![0usize; 400];
        for _ in 0..100_000 {
            counts[w.sample_popular(&mut r) as usize] += 1;
        }
        let by_rank: Vec<usize> = w.popularity_rank.iter().map(|&i| counts[i as usize]).collect();
        // head ranks are separated by far more than sampling noise
        for k in 0..8 {
            assert!(by_rank[k] > by_rank[k + 1], "rank {k}: {:?}", &by_rank[..10]);
        }
        assert!(by_rank[0] > 10 * by_rank[200]);
    }

    #[test]
    fn positive_rate_is_calibrated() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let recs = w.generate_dataset(100_000, TRAIN_DAYS);
        let rate = crate::dataset::positive_rate(&recs);
        assert!((0.10..=0.20).contains(&rate), "{rate}");
    }

    #[test]
    fn pure_interest_history_when_noise_free() {
        let spec = WorldSpec {
            noise_popular_ratio: 0.0,
            drift_ratio: 0.0,
            ..small()
        };
        let w = generate_world(&spec).unwrap();
        let recs = w.generate_dataset(300, TRAIN_DAYS);
        // every event comes from a category the user can prefer and picks an
        // item inside that category
        for rec in &recs {
            for e in &rec.behaviors {
                assert_eq!(w.item_category[e.item_id as usize], e.category_id);
                assert!(w.user_category_pref[rec.user_id as usize][e.category_id as usize] > 0.0);
            }
        }
    }

    #[test]
    fn exposure_noise_decouples_history_from_interest() {
        let clean = generate_world(&WorldSpec {
            noise_popular_ratio: 0.0,
            drift_ratio: 0.0,
            ..small()
        })
        .unwrap();
        let noisy = generate_world(&WorldSpec {
            noise_popular_ratio: 1.0,
            drift_ratio: 0.0,
            ..small()
        })
        .unwrap();
        let c_clean = clean.history_interest_correlation(&clean.generate_dataset(2000, TRAIN_DAYS));
        let c_noisy = noisy.history_interest_correlation(&noisy.generate_dataset(2000, TRAIN_DAYS));
        assert!(c_noisy < c_clean, "{c_noisy} vs {c_clean}");
    }

    #[test]
    fn records_respect_invariants() {
        let w = generate_world(&small()).unwrap();
        let recs = w.generate_dataset(500, TEST_DAYS);
        assert_eq!(recs.len(), 500);
        for r in &recs {
            assert_eq!(r.day, 6);
            assert!(r.label <= 1);
            assert_eq!(w.item_category[r.item_id as usize], r.category_id);
            assert_eq!(w.query_category[r.query_id as usize], r.category_id);
            assert!(r.behaviors.len() <= w.spec.max_seq_len);
            assert!(r.behaviors.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        }
    }
}
