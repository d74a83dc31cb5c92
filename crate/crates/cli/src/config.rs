// SPDX-License-Identifier: Apache-2.0

//! Run configuration: one JSON file holding the world, the model and the
//! experiment sizes, with command-line flags layered on top.

use std::path::{Path, PathBuf};

use cdp_core::{AblationMode, CdpConfig, CdpError, Result, ReverseRule, VocabSpec, WorldSpec};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldSpec,
    /// `model.vocab` is always replaced by the vocabulary of the dataset
    /// being trained or evaluated.
    pub model: CdpConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Model seeds for the ablation grid; the reported metric is the median.
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldSpec::default(),
            model: CdpConfig::default(),
            n_train: 50_000,
            n_test: 10_000,
            ablation_seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CdpError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CdpError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(CdpError::Config("n_train and n_test must be positive".into()));
        }
        if self.ablation_seeds.is_empty() {
            return Err(CdpError::Config("ablation_seeds must not be empty".into()));
        }
        Ok(())
    }

    /// The model config for a dataset generated from `world`.
    pub fn model_for(&self, world: &WorldSpec) -> Result<CdpConfig> {
        let model = CdpConfig {
            vocab: VocabSpec::from_world(world),
            ..self.model.clone()
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn parse_rule(s: &str) -> std::result::Result<ReverseRule, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown reverse rule `{s}` (reconstruct, iterated, ddim)"))
}

fn parse_mode(s: &str) -> std::result::Result<AblationMode, String> {
    s.parse().map_err(|e: CdpError| e.to_string())
}

/// Flags shared by every command. Each one, when given, overrides the
/// matching field of the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run config; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// World seed.
    #[arg(long, global = true)]
    pub world_seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub ablation: Option<AblationMode>,
    #[arg(long, global = true, value_parser = parse_rule)]
    pub reverse_rule: Option<ReverseRule>,
    #[arg(long, global = true)]
    pub inference_steps: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub beta_min: Option<f64>,
    #[arg(long, global = true)]
    pub beta_max: Option<f64>,
    /// Exposure-noise share of behavior events.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Category-drift share of behavior events.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub n_train: Option<usize>,
    #[arg(long, global = true)]
    pub n_test: Option<usize>,
    /// Comma-separated ablation seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

impl Overrides {
    /// True when any model-affecting flag or a config file was given.
    pub fn touches_model(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.epochs.is_some()
            || self.batch_size.is_some()
            || self.ablation.is_some()
            || self.reverse_rule.is_some()
            || self.inference_steps.is_some()
            || self.steps.is_some()
            || self.beta_min.is_some()
            || self.beta_max.is_some()
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let m = &mut c.model;
        if let Some(v) = self.seed {
            m.seed = v;
        }
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.ablation {
            m.ablation = v;
        }
        if let Some(v) = self.reverse_rule {
            m.reverse_rule = v;
        }
        if let Some(v) = self.inference_steps {
            m.inference_steps = v;
        }
        if let Some(v) = self.steps {
            m.steps = v;
        }
        if let Some(v) = self.beta_min {
            m.beta_min = v;
        }
        if let Some(v) = self.beta_max {
            m.beta_max = v;
        }
        let w = &mut c.world;
        if let Some(v) = self.world_seed {
            w.seed = v;
        }
        if let Some(v) = self.eta {
            w.noise_popular_ratio = v;
        }
        if let Some(v) = self.rho {
            w.drift_ratio = v;
        }
        if let Some(v) = self.n_train {
            c.n_train = v;
        }
        if let Some(v) = self.n_test {
            c.n_test = v;
        }
        if let Some(v) = &self.seeds {
            c.ablation_seeds = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": {"dim": 8}, "colour": 1}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&p), Err(CdpError::Config(_))));
        std::fs::write(&p, r#"{"model": {"dimm": 8}}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&p), Err(CdpError::Config(_))));
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": {"seed": 3, "epochs": 2}, "n_train": 100}"#).unwrap();
        let o = Overrides {
            config: Some(p),
            seed: Some(11),
            eta: Some(0.2),
            seeds: Some(vec![4, 5]),
            ..Overrides::default()
        };
        let c = o.resolve().unwrap();
        assert_eq!(c.model.seed, 11);
        assert_eq!(c.model.epochs, 2);
        assert_eq!(c.n_train, 100);
        assert_eq!(c.world.noise_popular_ratio, 0.2);
        assert_eq!(c.ablation_seeds, vec![4, 5]);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let o = Overrides {
            eta: Some(1.5),
            ..Overrides::default()
        };
        assert!(matches!(o.resolve(), Err(CdpError::Config(_))));
        assert_eq!(parse_rule("ddim"), Ok(ReverseRule::Ddim));
        assert!(parse_rule("euler").is_err());
        assert_eq!(parse_mode("no_moe"), Ok(AblationMode::NoMoe));
    }
}
