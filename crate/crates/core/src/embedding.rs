// SPDX-License-Identifier: Apache-2.0

//! Embedding tables for categorical features. Every table carries one extra
//! trailing row that absorbs out-of-vocabulary ids.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{CdpError, Result};
use crate::optim::{sparse_adam_step, SparseAdamState};
use crate::param::{ParamGroup, ParamId, ParamStore};

/// Initialization half-width for embedding rows.
pub const EMBEDDING_INIT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub field_name: String,
    /// Number of valid ids; the table holds one more row for OOV.
    pub cardinality: usize,
}

impl FeatureVocab {
    pub fn new(field_name: impl Into<String>, cardinality: usize) -> Result<Self> {
        let field_name = field_name.into();
        if cardinality == 0 {
            return Err(CdpError::Config(format!(
                "vocabulary `{field_name}` must have positive cardinality"
            )));
        }
        Ok(FeatureVocab {
            field_name,
            cardinality,
        })
    }

    pub fn oov_row(&self) -> usize {
        self.cardinality
    }

    pub fn rows(&self) -> usize {
        self.cardinality + 1
    }

    /// Table row for `id`, with out-of-range ids mapped to the OOV row.
    pub fn row(&self, id: u32) -> usize {
        let id = id as usize;
        if id < self.cardinality {
            id
        } else {
            self.oov_row()
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub vocab: FeatureVocab,
    pub dim: usize,
    pub param: ParamId,
}

impl EmbeddingTable {
    /// Registers a `(cardinality + 1) × dim` sparse parameter named
    /// `emb.<field>`, initialized uniformly in `[-0.01, 0.01]`.
    pub fn new<R: Rng>(store: &mut ParamStore, vocab: FeatureVocab, dim: usize, rng: &mut R) -> Result<Self> {
        Self::with_init(store, vocab, dim, EMBEDDING_INIT, rng)
    }

    /// As [`EmbeddingTable::new`] with rows uniform in `[-init, init]`.
    pub fn with_init<R: Rng>(
        store: &mut ParamStore,
        vocab: FeatureVocab,
        dim: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CdpError::Config("embedding dim must be positive".into()));
        }
        let name = format!("emb.{}", vocab.field_name);
        let param = store.add_uniform(&name, ParamGroup::Sparse, &[vocab.rows(), dim], init, rng)?;
        Ok(EmbeddingTable { vocab, dim, param })
    }

    pub fn lookup(&self, graph: &mut Graph<'_>, id: u32) -> Var {
        graph
            .gather(self.param, self.vocab.row(id))
            .expect("vocab rows match the table")
    }

    pub fn row_values<'s>(&self, store: &'s ParamStore, id: u32) -> &'s [f64] {
        store.get(self.param).value.row(self.vocab.row(id))
    }

    pub fn sparse_adam_step(&self, store: &mut ParamStore, state: &mut SparseAdamState, lr: f64) -> Result<()> {
        sparse_adam_step(store.get_mut(self.param), state, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Gradients;
    use crate::optim::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> (ParamStore, EmbeddingTable) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::new(&mut store, FeatureVocab::new("item", 6).unwrap(), 4, &mut rng).unwrap();
        (store, t)
    }

    #[test]
    fn fresh_rows_within_init_range() {
        let (store, t) = table();
        let p = store.get(t.param);
        assert_eq!(p.value.shape(), &[7, 4]);
        assert!(p.value.data().iter().all(|v| v.abs() <= EMBEDDING_INIT));
    }

    #[test]
    fn same_id_same_vector_and_oov() {
        let (store, t) = table();
        let mut g = Graph::new(&store);
        let a = t.lookup(&mut g, 2);
        let b = t.lookup(&mut g, 2);
        assert_eq!(g.value(a), g.value(b));
        let oov = t.lookup(&mut g, 6 + 5);
        assert_eq!(g.value(oov), store.get(t.param).value.row(6));
    }

    #[test]
    fn gradient_lands_only_on_looked_up_row() {
        let (mut store, t) = table();
        let mut grads = Gradients::new();
        {
            let mut g = Graph::new(&store);
            let r = t.lookup(&mut g, 4);
            let s = g.sum(r);
            g.backward(s, &mut grads).unwrap();
        }
        store.accumulate(&grads);
        let p = store.get(t.param);
        assert_eq!(p.touched_rows().iter().copied().collect::<Vec<_>>(), vec![4]);
        for r in 0..7 {
            let expect = if r == 4 { 1.0 } else { 0.0 };
            assert!(p.grad.row(r).iter().all(|&x| x == expect));
        }
        let before = store.get(t.param).value.clone();
        let mut state = SparseAdamState::new(7, 4, AdamConfig::default());
        t.sparse_adam_step(&mut store, &mut state, 0.0005).unwrap();
        let after = &store.get(t.param).value;
        let differing: Vec<usize> = (0..7).filter(|&r| after.row(r) != before.row(r)).collect();
        assert_eq!(differing, vec![4]);
    }
}
