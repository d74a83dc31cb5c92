// SPDX-License-Identifier: Apache-2.0

//! Category gating and mean pooling of behavior sequences.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::embedding::EmbeddingTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub item_id: u32,
    pub category_id: u32,
    pub timestamp: u64,
}

/// Mean-pooled intent vector of a gated sequence.
#[derive(Clone, Copy, Debug)]
pub struct PooledInterest {
    pub z0: Var,
    pub matched_count: usize,
    pub gated_empty: bool,
}

/// Events whose category equals `target_category`, in original order.
pub fn category_gate(seq: &[BehaviorEvent], target_category: u32) -> Vec<BehaviorEvent> {
    seq.iter()
        .filter(|e| e.category_id == target_category)
        .copied()
        .collect()
}

/// Mean of the item embeddings of `events`; the zero vector when empty.
pub fn mean_pool(graph: &mut Graph<'_>, events: &[BehaviorEvent], items: &EmbeddingTable) -> PooledInterest {
    if events.is_empty() {
        let z0 = graph.constant(vec![0.0; items.dim]);
        return PooledInterest {
            z0,
            matched_count: 0,
            gated_empty: true,
        };
    }
    let rows: Vec<Var> = events.iter().map(|e| items.lookup(graph, e.item_id)).collect();
    let z0 = graph.mean(&rows).expect("rows share the table dim");
    PooledInterest {
        z0,
        matched_count: events.len(),
        gated_empty: false,
    }
}
