// SPDX-License-Identifier: Apache-2.0

//! Shared fixtures for the benchmarks: a default-sized model and a slice of
//! the default synthetic world.

use cdp_core::synthetic::TRAIN_DAYS;
use cdp_core::{generate_world, CdpConfig, CdpModel, SampleRecord, VocabSpec, WorldSpec};

pub fn fixture(n_samples: usize) -> (CdpModel, Vec<SampleRecord>) {
    let spec = WorldSpec::default();
    let world = generate_world(&spec).expect("default world is valid");
    let data = world.generate_dataset(n_samples, TRAIN_DAYS);
    let model = CdpModel::new(CdpConfig {
        vocab: VocabSpec::from_world(&spec),
        ..CdpConfig::default()
    })
    .expect("default config is valid");
    (model, data)
}
