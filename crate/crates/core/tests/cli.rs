use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msdcs::format::{load_packet, save_model};
use msdcs::image::{load_image, save_image};
use msdcs::network::{init_params, ModelParams, NetConfig, SamplingConfig};
use msdcs::GrayImage;
use tempfile::TempDir;

fn msdcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msdcs")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn textured(width: usize, height: usize) -> GrayImage {
    let px = (0..width * height)
        .map(|i| ((i % width) * 9 + (i / width) * 5) as u8)
        .collect();
    GrayImage::new(width, height, px).unwrap()
}

fn identity_model(dir: &Path) -> PathBuf {
    let path = dir.join("identity.msdc");
    save_model(
        &ModelParams::full_rate_identity(4, NetConfig::default()).unwrap(),
        &path,
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_2_naming_path() {
    let out = msdcs(&["train", "--config", "/no/such/run.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/no/such/run.cfg"));
}

#[test]
fn bad_config_values_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "image_dir = x\nblock_size = 4\npatch_size = 30\n").unwrap();
    assert_eq!(code(&msdcs(&["train", "--config", s(&cfg)])), 2);
    fs::write(&cfg, "volume = 11\n").unwrap();
    let out = msdcs(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown key"));
    fs::write(&cfg, "block_size = 4\n").unwrap();
    assert_eq!(
        code(&msdcs(&["train", "--config", s(&cfg)])),
        2,
        "image_dir is required"
    );
}

#[test]
fn missing_or_empty_image_dir_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::create_dir(dir.path().join("empty")).unwrap();
    fs::write(
        &cfg,
        "image_dir = empty\nblock_size = 2\nsubrate = 0.5\npatch_size = 8\n",
    )
    .unwrap();
    let out = msdcs(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn smoke_run_writes_one_model_and_history() {
    let dir = TempDir::new().unwrap();
    let cfg = testdata().join("tiny.cfg");
    let out = msdcs(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--deterministic"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["history_phase1.csv", "model_phase1.msdc"]);
    let history = fs::read_to_string(dir.path().join("history_phase1.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,lr,mean_loss,holdout_psnr"));
    assert_eq!(lines.count(), 3, "one epoch per learning rate");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("phase=1 epoch=")).count(), 3);
}

#[test]
fn divergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = testdata().join("tiny.cfg");
    let out = msdcs(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "--set",
        "lr_ladder=1e30",
    ]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("phase 1 at batch"));
}

#[test]
fn same_seed_gives_identical_model_files_and_overrides_apply() {
    let dir = TempDir::new().unwrap();
    let cfg = testdata().join("tiny.cfg");
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec![
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&out_dir),
            "--deterministic",
            "--set",
            "phases=1,2",
        ];
        args.extend_from_slice(extra);
        let out = msdcs(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(out_dir.join("model_phase2.msdc")).unwrap()
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--seed", "8"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn identity_model_round_trip_is_bit_exact_with_crop() {
    let dir = TempDir::new().unwrap();
    let model = identity_model(dir.path());
    let img = textured(37, 29);
    let img_path = dir.path().join("in.pgm");
    save_image(&img, &img_path).unwrap();
    let packet = dir.path().join("in.msdm");
    let out = msdcs(&["compress", s(&model), s(&img_path), "--out", s(&packet)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let p = load_packet(&packet).unwrap();
    assert_eq!((p.crop_height, p.crop_width), (24, 32));
    assert_eq!((p.crop_top, p.crop_left), (2, 2));
    assert_eq!(p.payload_len(), 64 * 3 * 4);
    assert_eq!(
        p.payload_len(),
        p.crop_height * p.crop_width,
        "full rate: one float per pixel"
    );

    let recon = dir.path().join("out.pgm");
    let out = msdcs(&["decompress", s(&model), s(&packet), "--out", s(&recon)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(load_image(&recon).unwrap(), img.crop(2, 2, 24, 32).unwrap());
}

#[test]
fn wrong_model_exits_5_unless_overridden() {
    let dir = TempDir::new().unwrap();
    let model = identity_model(dir.path());
    let other = dir.path().join("other.msdc");
    save_model(
        &init_params(SamplingConfig::new(4, 1.0).unwrap(), NetConfig::default(), 1).unwrap(),
        &other,
    )
    .unwrap();
    let img_path = dir.path().join("in.pgm");
    save_image(&textured(16, 16), &img_path).unwrap();
    let packet = dir.path().join("p.msdm");
    assert_eq!(
        code(&msdcs(&["compress", s(&model), s(&img_path), "--out", s(&packet)])),
        0
    );
    let out_img = dir.path().join("o.pgm");
    let out = msdcs(&["decompress", s(&other), s(&packet), "--out", s(&out_img)]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("model"));
    let out = msdcs(&[
        "decompress",
        s(&other),
        s(&packet),
        "--out",
        s(&out_img),
        "--ignore-model-checksum",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn corrupted_files_exit_5_and_6() {
    let dir = TempDir::new().unwrap();
    let model = identity_model(dir.path());
    let img_path = dir.path().join("in.pgm");
    save_image(&textured(16, 16), &img_path).unwrap();
    let packet = dir.path().join("p.msdm");
    assert_eq!(
        code(&msdcs(&["compress", s(&model), s(&img_path), "--out", s(&packet)])),
        0
    );
    let out_img = dir.path().join("o.pgm");

    let mut bytes = fs::read(&packet).unwrap();
    bytes[20] ^= 0x40;
    let bad_packet = dir.path().join("bad.msdm");
    fs::write(&bad_packet, &bytes).unwrap();
    let out = msdcs(&["decompress", s(&model), s(&bad_packet), "--out", s(&out_img)]);
    assert_eq!(code(&out), 6);
    assert!(stderr(&out).contains("checksum"));

    let mut bytes = fs::read(&model).unwrap();
    bytes[30] ^= 0x01;
    let bad_model = dir.path().join("bad.msdc");
    fs::write(&bad_model, &bytes).unwrap();
    assert_eq!(
        code(&msdcs(&["decompress", s(&bad_model), s(&packet), "--out", s(&out_img)])),
        5
    );
    assert_eq!(
        code(&msdcs(&["compress", s(&bad_model), s(&img_path), "--out", s(&packet)])),
        5
    );
}

#[test]
fn unsupported_image_exits_3_and_names_format() {
    let dir = TempDir::new().unwrap();
    let model = identity_model(dir.path());
    let png = dir.path().join("x.pgm");
    fs::write(&png, b"\x89PNG\r\n\x1a\n0000").unwrap();
    let out = msdcs(&["compress", s(&model), s(&png), "--out", s(&dir.path().join("p"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("P5"));
}

#[test]
fn eval_reports_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let model = identity_model(dir.path());
    let images = dir.path().join("imgs");
    fs::create_dir(&images).unwrap();
    let report = dir.path().join("report.csv");

    let out = msdcs(&["eval", s(&model), s(&images), "--out", s(&report)]);
    assert_eq!(code(&out), 3, "empty directory");

    save_image(&textured(24, 24), images.join("a.pgm")).unwrap();
    save_image(&textured(40, 32), images.join("b.pgm")).unwrap();
    let out = msdcs(&["eval", s(&model), s(&images), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "name,subrate_target,subrate_realized,psnr_db,ssim");
    assert_eq!(lines[1], "a.pgm,1,1,99,1");
    assert_eq!(lines[2], "b.pgm,1,1,99,1");
    assert_eq!(lines[3], "average,1,1,99,1");

    fs::write(images.join("c.pgm"), b"P5\n4 4\n255\n").unwrap();
    let out = msdcs(&["eval", s(&model), s(&images), "--out", s(&report)]);
    assert_eq!(code(&out), 7);
    assert!(stderr(&out).contains("c.pgm"));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(
        csv.contains("average,1,1,99,1"),
        "failed rows are excluded from averages"
    );
}

#[test]
fn gradcheck_passes_and_fault_exits_1_naming_layer() {
    let out = msdcs(&["gradcheck", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("conv2d_3x3_pad1_bias") && stdout.contains("phase1_end_to_end"));
    assert!(!stdout.contains("FAIL"));

    let out = msdcs(&["gradcheck", "--seed", "2", "--inject-fault", "dwt2"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dwt2"));
}

#[test]
fn synth_writes_requested_scenes() {
    let dir = TempDir::new().unwrap();
    let out = msdcs(&[
        "synth",
        "--out",
        s(dir.path()),
        "--count",
        "3",
        "--width",
        "20",
        "--height",
        "12",
    ]);
    assert_eq!(code(&out), 0);
    let img = load_image(dir.path().join("scene_002.pgm")).unwrap();
    assert_eq!((img.width, img.height), (20, 12));
}
