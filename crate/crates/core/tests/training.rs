use std::path::Path;

use msdcs::network::{self, init_params, ModelParams, NetConfig, Phase, SamplingConfig};
use msdcs::training::{extract_patches, patches_from_images, train_all_on, train_phase, Split, TrainConfig};
use msdcs::{Error, GrayImage};

fn tiny_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/testdata/tiny"))
}

fn small_net() -> NetConfig {
    NetConfig {
        enhance1_depth: 3,
        enhance1_width: 4,
        mwcnn_levels: 1,
        mwcnn_widths: vec![4],
        mwcnn_convs_per_level: 1,
    }
}

fn cfg() -> TrainConfig {
    TrainConfig {
        phases: Phase::ALL.to_vec(),
        epochs_per_lr: 1,
        batch_size: 4,
        seed: 3,
        patch_size: 16,
        patches_per_image: 4,
        holdout_fraction: 0.2,
        ..TrainConfig::default()
    }
}

#[test]
fn patches_are_deterministic_normalized_and_split_by_image() {
    let a = extract_patches(tiny_dir(), &cfg()).unwrap();
    let b = extract_patches(tiny_dir(), &cfg()).unwrap();
    assert_eq!(a.manifest(), b.manifest());
    assert_eq!(a.patches.len(), 6 * 4);
    let c = extract_patches(tiny_dir(), &TrainConfig { seed: 4, ..cfg() }).unwrap();
    assert_ne!(a.manifest(), c.manifest());
    for p in &a.patches {
        assert!(p.data.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let held: Vec<&str> = a.holdout().map(|p| p.source.as_str()).collect();
    assert_eq!(held.len(), 4, "one of six images held out");
    assert!(held.iter().all(|s| *s == held[0]));
    assert!(a.train().all(|p| p.source != held[0] && p.split == Split::Train));
}

#[test]
fn undersized_images_are_listed() {
    let images = tempfile::TempDir::new().unwrap();
    msdcs::image::save_image(&GrayImage::filled(8, 8, 1), images.path().join("small.pgm")).unwrap();
    msdcs::image::save_image(&GrayImage::filled(32, 32, 1), images.path().join("ok.pgm")).unwrap();
    let err = extract_patches(images.path(), &cfg()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("small.pgm") && !err.to_string().contains("ok.pgm"));
}

#[test]
fn optimum_stays_put() {
    // Pixels 0 and 255 map to 0.0 and 1.0, so every Haar sum is exact in
    // f32 and the reconstruction error is exactly zero. With k/255 values
    // the residual is rounding noise, which Adam rescales to full steps.
    let img = GrayImage::new(
        16,
        16,
        (0..256).map(|i| if (i * 7) % 5 < 2 { 255 } else { 0 }).collect(),
    )
    .unwrap();
    let data = patches_from_images(&[("a".into(), img)], &cfg());
    let model = ModelParams::full_rate_identity(2, small_net()).unwrap();
    let mut losses = Vec::new();
    let (trained, history) = train_phase(model.clone(), &data, Phase::Initial, &cfg(), &mut |r| {
        losses.push(r.mean_loss)
    })
    .unwrap();
    assert_eq!(history.len(), 3);
    assert!(losses.iter().all(|&l| l == 0.0), "{losses:?}");
    assert_eq!(trained.sampling_kernel.value, model.sampling_kernel.value);
    assert_eq!(trained.recon_kernel.value, model.recon_kernel.value);
}

#[test]
fn history_is_reproducible_and_phases_inherit_weights() {
    let data = extract_patches(tiny_dir(), &cfg()).unwrap();
    let sampling = SamplingConfig::new(2, 0.25).unwrap();
    let run = || train_all_on(&data, sampling, small_net(), &cfg(), &mut |_| {}).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.history, y.history);
        assert_eq!(x.model, y.model);
        assert_eq!(x.model.phase, x.phase);
    }
    assert!(a[0].model.enhance1.is_none() && a[1].model.enhance2.is_none());

    // Before any phase-2 step the grown model reproduces phase 1 exactly,
    // and every phase-1 parameter is carried over bit for bit.
    let mut grown = a[0].model.clone();
    grown.ensure_subnets(Phase::Refine);
    for p in a[0].model.params() {
        let q = grown.params().into_iter().find(|q| q.name == p.name).unwrap();
        assert_eq!(q.value, p.value);
    }
    let x = data.patches[0].data.clone();
    let y1 = network::forward(&x, &a[0].model, Phase::Initial).unwrap();
    let y2 = network::forward(&x, &grown, Phase::Refine).unwrap();
    assert_eq!(y1, y2);
}

#[test]
fn non_finite_loss_aborts_with_batch_index() {
    let data = extract_patches(tiny_dir(), &cfg()).unwrap();
    let mut model = init_params(SamplingConfig::new(2, 0.25).unwrap(), small_net(), 1).unwrap();
    model.truncate_to(Phase::Initial);
    model.recon_kernel.value.data_mut()[0] = f32::NAN;
    let err = train_phase(model, &data, Phase::Initial, &cfg(), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Divergence { phase: 1, batch: 0 }), "{err}");
}

#[test]
fn phase_cannot_go_backwards() {
    let data = extract_patches(tiny_dir(), &cfg()).unwrap();
    let mut model = init_params(SamplingConfig::new(2, 0.25).unwrap(), small_net(), 1).unwrap();
    model.phase = Phase::Refine;
    assert!(train_phase(model, &data, Phase::Initial, &cfg(), &mut |_| {}).is_err());
}
