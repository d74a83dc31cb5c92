// SPDX-License-Identifier: Apache-2.0

//! Single-file JSON checkpoints.
//!
//! Layout: `{"format": "cdp-checkpoint", "version": 1, "config": {...},
//! "params": [{"name", "group", "shape", "data"}, ...]}` with parameters in
//! registration order and `data` row-major. Floats are written with
//! round-trip precision, so a load restores every bit. Optimizer moments are
//! not stored; a resumed run restarts Adam.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CdpError, Result};
use crate::model::{CdpConfig, CdpModel};
use crate::param::ParamGroup;

pub const CHECKPOINT_FORMAT: &str = "cdp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: CdpConfig,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &CdpModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params: model
                .store
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    group: p.group,
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model from the stored config and copies every tensor in,
    /// rejecting any name, group or shape disagreement.
    pub fn into_model(self) -> Result<CdpModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CdpError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(CdpError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = CdpModel::new(self.config)?;
        if model.store.len() != self.params.len() {
            return Err(CdpError::Checkpoint(format!(
                "config builds {} parameters, checkpoint holds {}",
                model.store.len(),
                self.params.len()
            )));
        }
        for rec in self.params {
            let id = model
                .store
                .id(&rec.name)
                .ok_or_else(|| CdpError::Checkpoint(format!("unexpected parameter `{}`", rec.name)))?;
            let p = model.store.get_mut(id);
            if p.group != rec.group || p.value.shape() != rec.shape.as_slice() || p.value.len() != rec.data.len() {
                return Err(CdpError::Checkpoint(format!(
                    "parameter `{}`: expected {:?} {:?}, found {:?} {:?} with {} values",
                    rec.name,
                    p.group,
                    p.value.shape(),
                    rec.group,
                    rec.shape,
                    rec.data.len()
                )));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(CdpError::NonFinite(format!("checkpoint parameter `{}`", rec.name)));
            }
            p.value.data_mut().copy_from_slice(&rec.data);
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &CdpModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model))?;
    std::fs::write(path, text).map_err(|e| CdpError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CdpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CdpError::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| CdpError::Checkpoint(e.to_string()))?;
    ck.into_model()
}

/// Loads a checkpoint and requires its config to equal `expected`.
pub fn load_checkpoint_matching(path: &Path, expected: &CdpConfig) -> Result<CdpModel> {
    let model = load_checkpoint(path)?;
    if &model.config != expected {
        return Err(CdpError::Checkpoint(
            "checkpoint config differs from the requested config".into(),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VocabSpec;
    use crate::synthetic::FieldSpec;

    fn config() -> CdpConfig {
        CdpConfig {
            dim: 4,
            steps: 10,
            inference_steps: 3,
            time_dim: 4,
            vocab: VocabSpec {
                n_queries: 3,
                n_users: 5,
                n_items: 7,
                n_categories: 2,
                ctx_fields: vec![FieldSpec::new("hour", 3)],
                scene_fields: vec![FieldSpec::new("client", 2)],
            },
            ..CdpConfig::default()
        }
    }

    #[test]
    fn round_trip_restores_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = CdpModel::new(config()).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(m.store.checksum(), back.store.checksum());
        assert_eq!(m.config, back.config);
        load_checkpoint_matching(&path, &config()).unwrap();
        let other = CdpConfig { seed: 99, ..config() };
        assert!(load_checkpoint_matching(&path, &other).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ck = Checkpoint::from_model(&CdpModel::new(config()).unwrap());
        ck.params[0].shape = vec![1, 1];
        ck.params[0].data = vec![0.0];
        assert!(matches!(ck.into_model(), Err(CdpError::Checkpoint(_))));
    }

    #[test]
    fn version_is_checked() {
        let mut ck = Checkpoint::from_model(&CdpModel::new(config()).unwrap());
        ck.version = 2;
        assert!(matches!(ck.into_model(), Err(CdpError::Checkpoint(_))));
    }
}
