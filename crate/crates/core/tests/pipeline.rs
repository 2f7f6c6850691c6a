use oucd_core::checkpoint::Checkpoint;
use oucd_core::model::{ArchConfig, Variant};
use oucd_core::rain::{build_manifest, generate_scene, save_image, synthesize_pair, Manifest, RainParams, Split};
use oucd_core::seed::derive_seed;
use oucd_core::train::{evaluate_checkpoint, load_network, load_split, parameter_digest, train, TrainConfig, Trainer};
use oucd_core::ErrorClass;

fn write_dataset(dir: &std::path::Path, count: usize, side: usize) -> Manifest {
    std::fs::create_dir_all(dir.join("clean")).unwrap();
    std::fs::create_dir_all(dir.join("rainy")).unwrap();
    let rain = RainParams::default().scaled_to(side, side);
    for i in 0..count {
        let name = format!("{i:03}.png");
        let clean = generate_scene(side, side, derive_seed(11, &format!("scene/{i}")));
        let pair = synthesize_pair(&clean, &rain.clone().with_seed(derive_seed(11, &name))).unwrap();
        save_image(&pair.clean, &dir.join("clean").join(&name)).unwrap();
        save_image(&pair.rainy, &dir.join("rainy").join(&name)).unwrap();
    }
    build_manifest(dir, [0.5, 0.25, 0.25], 11).unwrap()
}

fn config(steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.max_steps = Some(steps);
    cfg
}

#[test]
fn dataset_on_disk_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), 8, 48);
    assert_eq!(Manifest::read(&dir.path().join("manifest.txt")).unwrap(), manifest);
    let train_set = load_split(dir.path(), &manifest, Split::Train).unwrap();
    let test_set = load_split(dir.path(), &manifest, Split::Test).unwrap();
    assert_eq!(train_set.len() + test_set.len() + manifest.files(Split::Val).len(), 8);

    let outcome = train(config(3), &train_set).unwrap();
    assert_eq!(outcome.log.len(), 3);
    let path = dir.path().join("run.oucd");
    outcome.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let net = load_network(&ArchConfig::small(), &loaded).unwrap();
    assert_eq!(parameter_digest(&net), parameter_digest(&outcome.network));

    let report = evaluate_checkpoint(&ArchConfig::small(), &loaded, &test_set).unwrap();
    assert_eq!(report.images.len(), test_set.len());
    assert!(report.images.iter().all(|m| m.psnr_db.is_finite() && m.ssim <= 1.0));
}

#[test]
fn resuming_at_an_epoch_boundary_matches_an_unbroken_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), 8, 32);
    let data = load_split(dir.path(), &manifest, Split::Train).unwrap();
    assert_eq!(data.len(), 4);

    let straight = train(config(4), &data).unwrap();
    let first = train(config(2), &data).unwrap();
    let mut resumed = Trainer::resume(config(4), &first.checkpoint).unwrap();
    resumed.run(&data, |_| {}).unwrap();
    assert_eq!(resumed.step(), 4);
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint.to_bytes());
}

#[test]
fn checkpoints_do_not_cross_variants() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), 4, 32);
    let data = load_split(dir.path(), &manifest, Split::Train).unwrap();
    let outcome = train(config(1), &data).unwrap();
    for v in [Variant::UndercompleteOnly, Variant::OvercompleteOnly, Variant::OucdNoMsff] {
        let err = load_network(&ArchConfig::small().with_variant(v), &outcome.checkpoint).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Integrity, "{v:?}");
    }
}
