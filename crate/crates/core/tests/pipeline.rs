// SPDX-License-Identifier: Apache-2.0

use cdp_core::synthetic::{TEST_DAYS, TRAIN_DAYS};
use cdp_core::{
    build_linear_schedule, forward_noise, generate_world, load_checkpoint, reconstruct_z0, save_checkpoint,
    AblationMode, CdpConfig, CdpModel, ReverseRule, Tensor, Trainer, VocabSpec, WorldSpec,
};
use proptest::prelude::*;

fn small_world() -> WorldSpec {
    WorldSpec {
        n_users: 60,
        n_items: 80,
        n_categories: 4,
        n_queries: 8,
        seq_len_mean: 12.0,
        ..WorldSpec::default()
    }
}

fn small_model(spec: &WorldSpec, mode: AblationMode) -> CdpModel {
    CdpModel::new(CdpConfig {
        dim: 8,
        time_dim: 8,
        head_hidden: vec![16, 8],
        batch_size: 32,
        lr_dense: 0.002,
        lr_sparse: 0.004,
        ablation: mode,
        vocab: VocabSpec::from_world(spec),
        ..CdpConfig::default()
    })
    .unwrap()
}

#[test]
fn training_lowers_the_loss_in_every_mode() {
    let spec = small_world();
    let world = generate_world(&spec).unwrap();
    let train = world.generate_dataset(600, TRAIN_DAYS);
    for mode in AblationMode::ALL {
        let mut model = small_model(&spec, mode);
        let mut trainer = Trainer::new(&model).unwrap();
        let first = trainer.train_epoch(&mut model, &train).unwrap();
        let mut last = first;
        for _ in 0..4 {
            last = trainer.train_epoch(&mut model, &train).unwrap();
        }
        assert!(last.mean_total < first.mean_total, "{mode:?}: {first:?} -> {last:?}");
        assert_eq!(trainer.epochs_done(), 5);
    }
}

#[test]
fn evaluation_is_pure_and_checkpoints_predict_identically() {
    let spec = small_world();
    let world = generate_world(&spec).unwrap();
    let train = world.generate_dataset(300, TRAIN_DAYS);
    let test = world.generate_dataset(200, TEST_DAYS);
    let mut model = small_model(&spec, AblationMode::Full);
    let mut trainer = Trainer::new(&model).unwrap();
    trainer.train_epoch(&mut model, &train).unwrap();

    let before = model.store.checksum();
    let scores = model.score(&test).unwrap();
    assert_eq!(model.store.checksum(), before);
    assert_eq!(model.score(&test).unwrap(), scores);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.score(&test).unwrap(), scores);
}

#[test]
fn reverse_rules_agree_on_one_step_and_differ_after() {
    let spec = small_world();
    let world = generate_world(&spec).unwrap();
    let test = world.generate_dataset(20, TEST_DAYS);
    let base = small_model(&spec, AblationMode::Full);
    let with = |rule, steps| {
        let mut m = base.clone();
        m.config.reverse_rule = rule;
        m.config.inference_steps = steps;
        m.predict_all(&test).unwrap()
    };
    let a = with(ReverseRule::Reconstruct, 1);
    let b = with(ReverseRule::Ddim, 1);
    assert_eq!(a, b);
    let a = with(ReverseRule::Reconstruct, 20);
    let b = with(ReverseRule::Ddim, 20);
    assert_ne!(a, b);
    for out in with(ReverseRule::Iterated, 20) {
        assert!(out.p > 0.0 && out.p < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noising_round_trip(
        z0 in proptest::collection::vec(-5.0f64..5.0, 1..16),
        seed in any::<u64>(),
        t in 1usize..=100,
    ) {
        let s = build_linear_schedule(0.005, 0.01, 100).unwrap();
        let mut r = cdp_core::rng::stream(seed, "prop");
        let eps = Tensor::vector(cdp_core::diffusion::standard_normal(&mut r, z0.len())).unwrap();
        let z0 = Tensor::vector(z0).unwrap();
        let back = reconstruct_z0(&forward_noise(&z0, t, &eps, &s).unwrap(), t, &eps, &s).unwrap();
        for (a, b) in back.data().iter().zip(z0.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn schedule_is_strictly_decreasing(lo in 1e-4f64..0.05, span in 0.0f64..0.05, steps in 1usize..300) {
        let s = build_linear_schedule(lo, lo + span, steps).unwrap();
        for t in 2..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!((s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alpha(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn inference_probabilities_are_open_unit(world_seed in 0u64..1000, model_seed in 0u64..1000) {
        let spec = WorldSpec { seed: world_seed, ..small_world() };
        let world = generate_world(&spec).unwrap();
        let data = world.generate_dataset(8, TEST_DAYS);
        let base = small_model(&spec, AblationMode::Full).config;
        let model = CdpModel::new(CdpConfig { seed: model_seed, ..base }).unwrap();
        for out in model.predict_all(&data).unwrap() {
            prop_assert!(out.p > 0.0 && out.p < 1.0);
            let g = out.gates.unwrap();
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
