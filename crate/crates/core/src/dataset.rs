// SPDX-License-Identifier: Apache-2.0

//! Impression records and their JSON-Lines file format.
//!
//! One record per line, UTF-8, fields named exactly as in [`SampleRecord`].
//! Records are written in order with no header; an empty file is an empty
//! dataset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CdpError, Result};
use crate::purifier::BehaviorEvent;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub query_id: u32,
    pub user_id: u32,
    pub item_id: u32,
    pub category_id: u32,
    pub ctx_ids: Vec<u32>,
    pub scene_ids: Vec<u32>,
    pub behaviors: Vec<BehaviorEvent>,
    pub label: u8,
    pub request_id: u64,
    pub day: u32,
}

pub const RECORD_FIELDS: [&str; 10] = [
    "query_id",
    "user_id",
    "item_id",
    "category_id",
    "ctx_ids",
    "scene_ids",
    "behaviors",
    "label",
    "request_id",
    "day",
];

pub fn write_dataset(records: &[SampleRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CdpError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| CdpError::io(path, e))?;
    }
    w.flush().map_err(|e| CdpError::io(path, e))
}

/// Decodes one line (1-based `line` for error reporting).
pub fn parse_record(text: &str, line: usize, recovered: usize) -> Result<SampleRecord> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CdpError::Parse {
        line,
        message: e.to_string(),
        recovered,
    })?;
    let obj = value.as_object().ok_or_else(|| CdpError::Parse {
        line,
        message: "record is not a JSON object".into(),
        recovered,
    })?;
    if let Some(missing) = RECORD_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(CdpError::Schema {
            line,
            field: (*missing).to_string(),
        });
    }
    let record: SampleRecord = serde_json::from_value(value).map_err(|e| CdpError::Parse {
        line,
        message: e.to_string(),
        recovered,
    })?;
    if record.label > 1 {
        return Err(CdpError::Parse {
            line,
            message: format!("label must be 0 or 1, got {}", record.label),
            recovered,
        });
    }
    if record.behaviors.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(CdpError::Parse {
            line,
            message: "behavior timestamps must be non-decreasing".into(),
            recovered,
        });
    }
    Ok(record)
}

/// Outcome of a read that keeps whatever decoded before the first bad line.
#[derive(Debug)]
pub struct ReadReport {
    pub records: Vec<SampleRecord>,
    pub error: Option<CdpError>,
}

pub fn read_dataset_report(path: &Path) -> Result<ReadReport> {
    let file = File::open(path).map_err(|e| CdpError::io(path, e))?;
    let mut records = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CdpError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, k + 1, records.len()) {
            Ok(r) => records.push(r),
            Err(e) => {
                return Ok(ReadReport {
                    records,
                    error: Some(e),
                })
            }
        }
    }
    Ok(ReadReport {
        records,
        error: None,
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<SampleRecord>> {
    let report = read_dataset_report(path)?;
    match report.error {
        Some(e) => Err(e),
        None => Ok(report.records),
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CdpError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Fraction of positive labels; zero for an empty slice.
pub fn positive_rate(records: &[SampleRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label == 1).count() as f64 / records.len() as f64
}

/// Splits by day: `day <= last_train_day` goes to the first half.
pub fn split_by_day(records: Vec<SampleRecord>, last_train_day: u32) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    records.into_iter().partition(|r| r.day <= last_train_day)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seed: u32) -> SampleRecord {
        SampleRecord {
            query_id: seed % 7,
            user_id: seed,
            item_id: seed * 3,
            category_id: seed % 5,
            ctx_ids: vec![seed % 24, seed % 10],
            scene_ids: vec![seed % 3, seed % 4],
            behaviors: (0..seed % 4)
                .map(|k| BehaviorEvent {
                    item_id: k,
                    category_id: k % 2,
                    timestamp: u64::from(k) * 10,
                })
                .collect(),
            label: (seed % 2) as u8,
            request_id: u64::from(seed) / 3,
            day: seed % 7,
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(read_dataset(&p).unwrap().is_empty());
    }

    #[test]
    fn truncated_last_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_dataset(&[record(1), record(2)], &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        let third = serde_json::to_string(&record(3)).unwrap();
        text.push_str(&third[..third.len() / 2]);
        std::fs::write(&p, text).unwrap();

        let report = read_dataset_report(&p).unwrap();
        assert_eq!(report.records, vec![record(1), record(2)]);
        match report.error {
            Some(CdpError::Parse { line, recovered, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(recovered, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_dataset(&p), Err(CdpError::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_field_names_the_field() {
        let mut v = serde_json::to_value(record(4)).unwrap();
        v.as_object_mut().unwrap().remove("scene_ids");
        let err = parse_record(&v.to_string(), 9, 0).unwrap_err();
        match err {
            CdpError::Schema { line, field } => {
                assert_eq!(line, 9);
                assert_eq!(field, "scene_ids");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_rejected() {
        let mut v = serde_json::to_value(record(4)).unwrap();
        v["label"] = serde_json::json!(2);
        assert!(parse_record(&v.to_string(), 1, 0).is_err());
    }

    #[test]
    fn day_split_is_disjoint() {
        let recs: Vec<_> = (0..50).map(record).collect();
        let (train, test) = split_by_day(recs, 5);
        assert!(train.iter().all(|r| r.day <= 5));
        assert!(test.iter().all(|r| r.day == 6));
        assert_eq!(train.len() + test.len(), 50);
    }

    fn arb_record() -> impl Strategy<Value = SampleRecord> {
        (
            any::<[u32; 4]>(),
            proptest::collection::vec(any::<u32>(), 0..4),
            proptest::collection::vec(any::<u32>(), 0..4),
            proptest::collection::vec((any::<u32>(), any::<u32>(), 0u64..1000), 0..12),
            0u8..2,
            any::<u64>(),
            any::<u32>(),
        )
            .prop_map(|(ids, ctx, scene, beh, label, request_id, day)| {
                let mut ts = 0;
                let behaviors = beh
                    .into_iter()
                    .map(|(item_id, category_id, dt)| {
                        ts += dt;
                        BehaviorEvent {
                            item_id,
                            category_id,
                            timestamp: ts,
                        }
                    })
                    .collect();
                SampleRecord {
                    query_id: ids[0],
                    user_id: ids[1],
                    item_id: ids[2],
                    category_id: ids[3],
                    ctx_ids: ctx,
                    scene_ids: scene,
                    behaviors,
                    label,
                    request_id,
                    day,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4))]
        #[test]
        fn jsonl_round_trip(records in proptest::collection::vec(arb_record(), 250..=250)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.jsonl");
            write_dataset(&records, &p).unwrap();
            prop_assert_eq!(read_dataset(&p).unwrap(), records);
        }
    }
}
