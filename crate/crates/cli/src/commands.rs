// SPDX-License-Identifier: Apache-2.0

//! The five `cdp` commands, callable as library functions.
//!
//! A dataset is a directory holding `train.jsonl`, `test.jsonl` and a
//! `world.json` sidecar; the sidecar carries the resolved run config, the
//! format version and the SHA-256 of both record files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cdp_core::checkpoint::load_checkpoint;
use cdp_core::dataset::{file_checksum, positive_rate};
use cdp_core::synthetic::{TEST_DAYS, TRAIN_DAYS};
use cdp_core::{
    build_linear_schedule, generate_world, read_dataset, save_checkpoint, write_dataset, AblationMode, CdpConfig,
    CdpError, CdpModel, MetricReport, Result, SampleRecord, Trainer, VocabSpec,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "cdp-dataset";
pub const TRAIN_LOG_FORMAT: &str = "cdp-train-log";
pub const METRICS_FORMAT: &str = "cdp-metrics";
pub const SCORES_FORMAT: &str = "cdp-scores";
pub const ABLATION_FORMAT: &str = "cdp-ablation";
pub const SCHEDULE_FORMAT: &str = "cdp-schedule";

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const SIDECAR_FILE: &str = "world.json";

pub const TRAIN_LOG_HEADER: &str = "epoch,mean_total,mean_recon,mean_bce,wall_seconds";

/// Progress and provenance lines go to stderr; results go to files.
pub fn log(msg: impl AsRef<str>) {
    eprintln!("cdp: {}", msg.as_ref());
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CdpError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CdpError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CdpError::io(path, e))?;
    w.flush().map_err(|e| CdpError::io(path, e))
}

fn write_lines(path: &Path, w: &mut impl Write, lines: &[String]) -> Result<()> {
    for l in lines {
        writeln!(w, "{l}").map_err(|e| CdpError::io(path, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSummary {
    pub file: String,
    pub records: usize,
    pub positive_rate: f64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSummary {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub world_checksum: u64,
    pub train: SplitSummary,
    pub test: SplitSummary,
}

impl DatasetSummary {
    pub fn vocab(&self) -> VocabSpec {
        VocabSpec::from_world(&self.config.world)
    }
}

pub fn generate(cfg: &RunConfig, out_dir: &Path) -> Result<DatasetSummary> {
    cfg.validate()?;
    let world = generate_world(&cfg.world)?;
    let train = world.generate_dataset(cfg.n_train, TRAIN_DAYS);
    let test = world.generate_dataset(cfg.n_test, TEST_DAYS);
    std::fs::create_dir_all(out_dir).map_err(|e| CdpError::io(out_dir, e))?;
    let split = |name: &str, records: &[SampleRecord]| -> Result<SplitSummary> {
        let path = out_dir.join(name);
        write_dataset(records, &path)?;
        Ok(SplitSummary {
            file: name.into(),
            records: records.len(),
            positive_rate: positive_rate(records),
            sha256: file_checksum(&path)?,
        })
    };
    let summary = DatasetSummary {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        config: cfg.clone(),
        world_checksum: world.checksum(),
        train: split(TRAIN_FILE, &train)?,
        test: split(TEST_FILE, &test)?,
    };
    write_json(&out_dir.join(SIDECAR_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub summary: DatasetSummary,
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

/// Reads a dataset directory and checks both files against the sidecar.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let side = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&side).map_err(|e| CdpError::io(&side, e))?;
    let summary: DatasetSummary =
        serde_json::from_str(&text).map_err(|e| CdpError::Config(format!("{}: {e}", side.display())))?;
    if summary.format != DATASET_FORMAT || summary.version != FORMAT_VERSION {
        return Err(CdpError::Config(format!(
            "{}: expected {DATASET_FORMAT} v{FORMAT_VERSION}, found {} v{}",
            side.display(),
            summary.format,
            summary.version
        )));
    }
    let read = |s: &SplitSummary| -> Result<Vec<SampleRecord>> {
        let path = dir.join(&s.file);
        let records = read_dataset(&path)?;
        if file_checksum(&path)? != s.sha256 {
            return Err(CdpError::Config(format!(
                "{} does not match the checksum in its sidecar",
                path.display()
            )));
        }
        Ok(records)
    };
    let train = read(&summary.train)?;
    let test = read(&summary.test)?;
    Ok(Dataset {
        dir: dir.to_path_buf(),
        summary,
        train,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_recon: f64,
    pub mean_bce: f64,
    pub wall_seconds: f64,
}

impl EpochRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.epoch, self.mean_total, self.mean_recon, self.mean_bce, self.wall_seconds
        )
    }
}

fn same_model(a: &CdpConfig, b: &CdpConfig) -> bool {
    CdpConfig { epochs: 0, ..a.clone() } == CdpConfig { epochs: 0, ..b.clone() }
}

/// Trains `model` for its configured epochs, calling `on_epoch` after each.
pub fn fit(
    model: &mut CdpModel,
    data: &[SampleRecord],
    mut on_epoch: impl FnMut(&EpochRow) -> Result<()>,
) -> Result<Vec<EpochRow>> {
    let mut trainer = Trainer::new(model)?;
    let mut rows = Vec::with_capacity(model.config.epochs);
    for _ in 0..model.config.epochs {
        let start = Instant::now();
        let s = trainer.train_epoch(model, data)?;
        let row = EpochRow {
            epoch: s.epoch,
            mean_total: s.mean_total,
            mean_recon: s.mean_recon,
            mean_bce: s.mean_bce,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        for v in [row.mean_total, row.mean_recon, row.mean_bce] {
            if !v.is_finite() {
                return Err(CdpError::NonFinite(format!("epoch {} loss", row.epoch)));
            }
        }
        on_epoch(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Trains on the dataset's train split, writing the per-epoch CSV as it
/// goes and the checkpoint at the end. `resume` starts from a checkpoint's
/// weights; its config must match apart from `epochs`.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    checkpoint: &Path,
    log_csv: &Path,
    resume: Option<&Path>,
) -> Result<(CdpModel, Vec<EpochRow>)> {
    let config = cfg.model_for(&data.summary.config.world)?;
    let mut model = match resume {
        Some(p) => {
            let mut m = load_checkpoint(p)?;
            if !same_model(&m.config, &config) {
                return Err(CdpError::Checkpoint(format!(
                    "{} was trained with a different model config",
                    p.display()
                )));
            }
            m.config.epochs = config.epochs;
            m
        }
        None => CdpModel::new(config)?,
    };
    log(format!(
        "training {} on {} records ({} params), train sha256 {}",
        model.config.ablation.as_str(),
        data.train.len(),
        model.store.total_elements(),
        data.summary.train.sha256
    ));
    let mut w = create(log_csv)?;
    let cfg_json = serde_json::to_string(&model.config)?;
    write_lines(
        log_csv,
        &mut w,
        &[
            format!("# {TRAIN_LOG_FORMAT} v{FORMAT_VERSION}"),
            format!("# config {cfg_json}"),
            TRAIN_LOG_HEADER.into(),
        ],
    )?;
    let epochs = model.config.epochs;
    let rows = fit(&mut model, &data.train, |row| {
        log(format!(
            "epoch {}/{epochs} total {:.5} recon {:.5} bce {:.5} ({:.1}s)",
            row.epoch, row.mean_total, row.mean_recon, row.mean_bce, row.wall_seconds
        ));
        write_lines(log_csv, &mut w, &[row.csv()])?;
        w.flush().map_err(|e| CdpError::io(log_csv, e))
    })?;
    save_checkpoint(&model, checkpoint)?;
    log(format!("checkpoint written to {}", checkpoint.display()));
    Ok((model, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub config: CdpConfig,
    pub test_sha256: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// Loads a checkpoint and checks it fits the dataset and, if given, the
/// expected config.
pub fn load_model_for(checkpoint: &Path, data: &Dataset, expected: Option<&RunConfig>) -> Result<CdpModel> {
    let model = load_checkpoint(checkpoint)?;
    if model.config.vocab != data.summary.vocab() {
        return Err(CdpError::Checkpoint(format!(
            "{} was built for a different vocabulary than {}",
            checkpoint.display(),
            data.dir.display()
        )));
    }
    if let Some(cfg) = expected {
        let want = cfg.model_for(&data.summary.config.world)?;
        if !same_model(&model.config, &want) {
            return Err(CdpError::Checkpoint(format!(
                "{} does not match the requested model config",
                checkpoint.display()
            )));
        }
    }
    Ok(model)
}

pub fn evaluate(model: &CdpModel, data: &Dataset, scores: Option<&Path>) -> Result<EvalReport> {
    let outs = model.predict_all(&data.test)?;
    let scored: Vec<_> = data
        .test
        .iter()
        .zip(&outs)
        .map(|(s, o)| cdp_core::ScoredLabel {
            score: o.p,
            label: s.label,
            user_id: s.user_id,
            request_id: s.request_id,
        })
        .collect();
    if let Some(path) = scores {
        let mut w = create(path)?;
        write_lines(
            path,
            &mut w,
            &[
                format!("# {SCORES_FORMAT} v{FORMAT_VERSION}"),
                format!("# config {}", serde_json::to_string(&model.config)?),
                "score,label,user_id,request_id,gate_0,gate_1,gate_2".into(),
            ],
        )?;
        for (s, o) in scored.iter().zip(&outs) {
            let gates = o.gates.as_deref().unwrap_or(&[]);
            let cell = |k: usize| gates.get(k).map(f64::to_string).unwrap_or_default();
            let line = format!(
                "{},{},{},{},{},{},{}",
                s.score,
                s.label,
                s.user_id,
                s.request_id,
                cell(0),
                cell(1),
                cell(2)
            );
            write_lines(path, &mut w, &[line])?;
        }
        w.flush().map_err(|e| CdpError::io(path, e))?;
    }
    Ok(EvalReport {
        format: METRICS_FORMAT.into(),
        version: FORMAT_VERSION,
        config: model.config.clone(),
        test_sha256: data.summary.test.sha256.clone(),
        metrics: MetricReport::compute(&scored),
    })
}

pub fn eval(
    expected: Option<&RunConfig>,
    checkpoint: &Path,
    data: &Dataset,
    out: &Path,
    scores: Option<&Path>,
) -> Result<EvalReport> {
    let model = load_model_for(checkpoint, data, expected)?;
    let report = evaluate(&model, data, scores)?;
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub mode: AblationMode,
    pub seed: u64,
    pub train_sha256: String,
    pub test_sha256: String,
    pub final_total_loss: f64,
    pub train_seconds: f64,
    pub metrics: MetricReport,
}

/// Medians over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub auc: Option<f64>,
    pub uauc: Option<f64>,
    pub gauc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn row(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn text(&self) -> String {
        let mut s = format!(
            "# {ABLATION_FORMAT} v{FORMAT_VERSION}, median over seeds {:?}\n# config {}\n",
            self.config.ablation_seeds,
            self.config.to_json()
        );
        s.push_str(&format!("{:<18}{:>8}{:>8}{:>8}\n", "mode", "AUC", "UAUC", "GAUC"));
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            s.push_str(&format!(
                "{:<18}{:>8}{:>8}{:>8}\n",
                r.mode.as_str(),
                cell(r.auc),
                cell(r.uauc),
                cell(r.gauc)
            ));
        }
        s
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Trains and evaluates every mode for every configured seed from
/// scratch on the same dataset.
pub fn ablate(cfg: &RunConfig, data: &Dataset, modes: &[AblationMode]) -> Result<AblationTable> {
    let base = cfg.model_for(&data.summary.config.world)?;
    let mut runs = Vec::new();
    for &mode in modes {
        for &seed in &cfg.ablation_seeds {
            log(format!(
                "ablation run mode={} seed={seed} train_sha256={} test_sha256={}",
                mode.as_str(),
                data.summary.train.sha256,
                data.summary.test.sha256
            ));
            let mut model = CdpModel::new(CdpConfig {
                ablation: mode,
                seed,
                ..base.clone()
            })?;
            let start = Instant::now();
            let rows = fit(&mut model, &data.train, |_| Ok(()))?;
            let train_seconds = start.elapsed().as_secs_f64();
            let report = evaluate(&model, data, None)?;
            log(format!(
                "  auc {:?} uauc {:?} gauc {:?} ({train_seconds:.1}s training)",
                report.metrics.auc, report.metrics.uauc, report.metrics.gauc
            ));
            runs.push(AblationRun {
                mode,
                seed,
                train_sha256: data.summary.train.sha256.clone(),
                test_sha256: data.summary.test.sha256.clone(),
                final_total_loss: rows.last().map(|r| r.mean_total).unwrap_or(f64::NAN),
                train_seconds,
                metrics: report.metrics,
            });
        }
    }
    let rows = modes
        .iter()
        .map(|&mode| {
            let of = |f: fn(&MetricReport) -> Option<f64>| {
                let v: Vec<f64> = runs.iter().filter(|r| r.mode == mode).filter_map(|r| f(&r.metrics)).collect();
                median(&v)
            };
            AblationRow {
                mode,
                auc: of(|m| m.auc),
                uauc: of(|m| m.uauc),
                gauc: of(|m| m.gauc),
            }
        })
        .collect();
    Ok(AblationTable {
        format: ABLATION_FORMAT.into(),
        version: FORMAT_VERSION,
        config: cfg.clone(),
        rows,
        runs,
    })
}

pub fn write_ablation(table: &AblationTable, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("ablation.json"), table)?;
    let path = out_dir.join("ablation.txt");
    std::fs::write(&path, table.text()).map_err(|e| CdpError::io(&path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub format: String,
    pub version: u32,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub alpha_bar_first: f64,
    pub alpha_bar_last: f64,
}

pub fn inspect_schedule(cfg: &RunConfig) -> Result<ScheduleSummary> {
    let m = &cfg.model;
    let s = build_linear_schedule(m.beta_min, m.beta_max, m.steps)?;
    Ok(ScheduleSummary {
        format: SCHEDULE_FORMAT.into(),
        version: FORMAT_VERSION,
        steps: s.steps(),
        beta_min: m.beta_min,
        beta_max: m.beta_max,
        alpha_bar_first: s.alpha_bar(1),
        alpha_bar_last: s.alpha_bar(s.steps()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn schedule_defaults() {
        let s = inspect_schedule(&RunConfig::default()).unwrap();
        assert_eq!(s.steps, 100);
        assert!((s.alpha_bar_first - 0.995).abs() < 1e-15);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["T"], 100);
    }

    #[test]
    fn epoch_row_csv_has_five_cells() {
        let r = EpochRow {
            epoch: 2,
            mean_total: 0.5,
            mean_recon: 0.25,
            mean_bce: 0.25,
            wall_seconds: 1.23456,
        };
        assert_eq!(r.csv(), "2,0.5,0.25,0.25,1.235");
        assert_eq!(TRAIN_LOG_HEADER.split(',').count(), 5);
    }
}
