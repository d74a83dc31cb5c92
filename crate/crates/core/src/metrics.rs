// SPDX-License-Identifier: Apache-2.0

//! AUC, per-user UAUC and per-request GAUC.
//!
//! AUC is the Mann–Whitney statistic with midrank ties. Numerators are kept
//! as doubled integers (`2·wins + ties`) so the rank-sum path and the
//! pairwise oracle divide the same two integers and agree bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: u8,
    pub user_id: u32,
    pub request_id: u64,
}

fn class_counts(items: &[ScoredLabel]) -> (u64, u64) {
    let pos = items.iter().filter(|s| s.label == 1).count() as u64;
    (pos, items.len() as u64 - pos)
}

/// Rank-sum AUC in `O(n log n)`; `None` when either class is empty.
pub fn auc(items: &[ScoredLabel]) -> Option<f64> {
    let (n_pos, n_neg) = class_counts(items);
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, u8)> = items.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // doubled ranks: a tie block spanning 1-based ranks lo..=hi has midrank
    // (lo + hi) / 2, so twice that is the integer lo + hi
    let mut twice_rank_sum: u64 = 0;
    let mut k = 0;
    while k < sorted.len() {
        let mut j = k;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[k].0 {
            j += 1;
        }
        let twice_mid = (k + 1 + j + 1) as u64;
        let pos_in_block = sorted[k..=j].iter().filter(|s| s.1 == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_block;
        k = j + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Some(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Pairwise AUC oracle, `O(n²)`.
pub fn auc_bruteforce(items: &[ScoredLabel]) -> Option<f64> {
    let (n_pos, n_neg) = class_counts(items);
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut twice: u64 = 0;
    for p in items.iter().filter(|s| s.label == 1) {
        for n in items.iter().filter(|s| s.label == 0) {
            if p.score > n.score {
                twice += 2;
            } else if p.score == n.score {
                twice += 1;
            }
        }
    }
    Some(twice as f64 / (2 * n_pos * n_neg) as f64)
}

fn grouped<K: Ord>(items: &[ScoredLabel], key: impl Fn(&ScoredLabel) -> K) -> BTreeMap<K, Vec<ScoredLabel>> {
    let mut groups: BTreeMap<K, Vec<ScoredLabel>> = BTreeMap::new();
    for s in items {
        groups.entry(key(s)).or_default().push(*s);
    }
    groups
}

/// Unweighted mean of per-user AUC and the number of users that had one.
pub fn uauc_with_count(items: &[ScoredLabel]) -> (Option<f64>, usize) {
    let aucs: Vec<f64> = grouped(items, |s| s.user_id)
        .values()
        .filter_map(|g| auc(g))
        .collect();
    if aucs.is_empty() {
        return (None, 0);
    }
    (Some(aucs.iter().sum::<f64>() / aucs.len() as f64), aucs.len())
}

pub fn uauc(items: &[ScoredLabel]) -> Option<f64> {
    uauc_with_count(items).0
}

/// Impression-weighted mean of per-request AUC and the number of requests
/// that had one.
pub fn gauc_with_count(items: &[ScoredLabel]) -> (Option<f64>, usize) {
    let mut weighted = 0.0;
    let mut weight = 0usize;
    let mut groups = 0usize;
    for g in grouped(items, |s| s.request_id).values() {
        if let Some(a) = auc(g) {
            weighted += g.len() as f64 * a;
            weight += g.len();
            groups += 1;
        }
    }
    if groups == 0 {
        return (None, 0);
    }
    (Some(weighted / weight as f64), groups)
}

pub fn gauc(items: &[ScoredLabel]) -> Option<f64> {
    gauc_with_count(items).0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: Option<f64>,
    pub uauc: Option<f64>,
    pub gauc: Option<f64>,
    pub n_samples: usize,
    pub n_users_scored: usize,
    pub n_groups_scored: usize,
}

impl MetricReport {
    pub fn compute(items: &[ScoredLabel]) -> Self {
        let (uauc, n_users_scored) = uauc_with_count(items);
        let (gauc, n_groups_scored) = gauc_with_count(items);
        MetricReport {
            auc: auc(items),
            uauc,
            gauc,
            n_samples: items.len(),
            n_users_scored,
            n_groups_scored,
        }
    }
}
