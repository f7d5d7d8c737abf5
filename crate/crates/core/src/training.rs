//! Patch extraction, the Euclidean loss, and multi-phase Adam training.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{self, GrayImage};
use crate::metrics;
use crate::network::{self, ModelParams, NetConfig, Phase, SamplingConfig};
use crate::optim::{adam_step, AdamHyper};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phases: Vec<Phase>,
    pub epochs_per_lr: usize,
    pub lr_ladder: Vec<f32>,
    pub batch_size: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub patches_per_image: usize,
    /// Fraction of source images (not patches) held out for validation.
    pub holdout_fraction: f64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        TrainConfig {
            phases: Phase::ALL.to_vec(),
            epochs_per_lr: 2,
            lr_ladder: vec![0.001, 0.0001, 0.00005],
            batch_size: 8,
            seed: 0,
            patch_size: 64,
            patches_per_image: 16,
            holdout_fraction: 0.1,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sampling: &SamplingConfig, net: &NetConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.phases.is_empty() {
            return bad("phase list is empty".into());
        }
        if self.phases.windows(2).any(|w| w[0] >= w[1]) {
            return bad("phases must be strictly increasing".into());
        }
        if self.lr_ladder.is_empty() || self.lr_ladder.iter().any(|&lr| lr.is_nan() || lr <= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.lr_ladder.windows(2).any(|w| w[0] <= w[1]) {
            return bad("learning-rate ladder must be strictly decreasing".into());
        }
        if self.batch_size == 0 || self.epochs_per_lr == 0 || self.patches_per_image == 0 {
            return bad("batch_size, epochs_per_lr and patches_per_image must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction {} outside [0, 1)", self.holdout_fraction));
        }
        let tile = sampling.tile();
        let levels = 1usize << net.mwcnn_levels;
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(tile) || !self.patch_size.is_multiple_of(levels) {
            return bad(format!(
                "patch_size {} must be a positive multiple of 2·block_size = {tile} and 2^mwcnn_levels = {levels}",
                self.patch_size
            ));
        }
        Ok(())
    }

    pub fn adam(&self, lr: f32) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub source: String,
    pub top: usize,
    pub left: usize,
    pub split: Split,
    /// `(1, 1, p, p)` with values in `[0, 1]`.
    pub data: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchDataset {
    pub patches: Vec<Patch>,
}

impl PatchDataset {
    pub fn train(&self) -> impl Iterator<Item = &Patch> {
        self.patches.iter().filter(|p| p.split == Split::Train)
    }

    pub fn holdout(&self) -> impl Iterator<Item = &Patch> {
        self.patches.iter().filter(|p| p.split == Split::Holdout)
    }

    /// One `source,top,left,split` line per patch.
    pub fn manifest(&self) -> Vec<String> {
        self.patches
            .iter()
            .map(|p| {
                let split = match p.split {
                    Split::Train => "train",
                    Split::Holdout => "holdout",
                };
                format!("{},{},{},{}", p.source, p.top, p.left, split)
            })
            .collect()
    }
}

/// Sorted `.pgm` files in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if is_pgm && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Number of images held out out of `n`: none for a single image,
/// otherwise at least one.
fn holdout_count(n: usize, fraction: f64) -> usize {
    if n < 2 || fraction <= 0.0 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

pub fn extract_patches(image_dir: &Path, cfg: &TrainConfig) -> Result<PatchDataset> {
    let files = list_images(image_dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no .pgm images in {}", image_dir.display())));
    }
    let mut images = Vec::with_capacity(files.len());
    let mut offenders = Vec::new();
    for path in &files {
        match image::load_image(path) {
            Ok(img) if img.width >= cfg.patch_size && img.height >= cfg.patch_size => {
                images.push((file_name(path), img))
            }
            Ok(img) => offenders.push(format!(
                "{} ({}x{} < patch {})",
                path.display(),
                img.width,
                img.height,
                cfg.patch_size
            )),
            Err(e) => offenders.push(format!("{} ({e})", path.display())),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Data(format!(
            "unusable training images: {}",
            offenders.join("; ")
        )));
    }
    Ok(patches_from_images(&images, cfg))
}

/// Seeded patch sampling over already-loaded images.
pub fn patches_from_images(images: &[(String, GrayImage)], cfg: &TrainConfig) -> PatchDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng);
    let held = holdout_count(images.len(), cfg.holdout_fraction);
    let mut is_holdout = vec![false; images.len()];
    for &i in &order[..held] {
        is_holdout[i] = true;
    }
    let p = cfg.patch_size;
    let mut patches = Vec::with_capacity(images.len() * cfg.patches_per_image);
    for (i, (name, img)) in images.iter().enumerate() {
        for _ in 0..cfg.patches_per_image {
            let top = rng.random_range(0..=img.height - p);
            let left = rng.random_range(0..=img.width - p);
            let crop = img.crop(top, left, p, p).expect("offsets within bounds");
            patches.push(Patch {
                source: name.clone(),
                top,
                left,
                split: if is_holdout[i] { Split::Holdout } else { Split::Train },
                data: crop.to_tensor(),
            });
        }
    }
    PatchDataset { patches }
}

/// `(1 / 2N) Σᵢ ‖reconᵢ − targetᵢ‖²` over the `N` batch items, with its
/// gradient `(recon − target) / N`.
pub fn mse_loss(recon: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if recon.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("recon {} vs target {}", recon.shape(), target.shape()),
        ));
    }
    let n = recon.shape().n.max(1) as f64;
    let mut grad = recon.sub(target)?;
    let sq: f64 = grad.data().iter().map(|&d| d as f64 * d as f64).sum();
    grad.scale((1.0 / n) as f32);
    Ok((sq / (2.0 * n), grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based, counted within the phase.
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f64,
    /// NaN when the dataset has no holdout split.
    pub holdout_psnr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.epoch, self.lr, self.mean_loss, self.holdout_psnr)
    }
}

pub const HISTORY_HEADER: &str = "epoch,lr,mean_loss,holdout_psnr";

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

fn stack(patches: &[&Patch]) -> Tensor {
    let s = patches[0].data.shape();
    let mut data = Vec::with_capacity(patches.len() * s.item_len());
    for p in patches {
        data.extend_from_slice(p.data.data());
    }
    Tensor::from_vec([patches.len(), 1, s.h, s.w], data).expect("uniform patch size")
}

/// Mean PSNR of clamped reconstructions over the holdout patches.
pub fn holdout_psnr(params: &ModelParams, data: &PatchDataset, phase: Phase, batch: usize) -> Result<f64> {
    let holdout: Vec<&Patch> = data.holdout().collect();
    if holdout.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in holdout.chunks(batch.max(1)) {
        let x = stack(chunk);
        let mut y = network::forward(&x, params, phase)?;
        y.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        for (i, patch) in chunk.iter().enumerate() {
            let yi = Tensor::from_vec(patch.data.shape(), y.item(i).to_vec())?;
            total += metrics::psnr_tensor(&yi, &patch.data)?;
        }
    }
    Ok(total / holdout.len() as f64)
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(params: &mut ModelParams, batch: &Tensor, phase: Phase, hyper: &AdamHyper) -> Result<f64> {
    let (recon, cache) = network::forward_cached(batch, params, phase)?;
    let (loss, grad) = mse_loss(&recon, batch)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    network::backward(params, &cache, &grad)?;
    for p in params.active_params_mut(phase) {
        adam_step(p, hyper)?;
    }
    Ok(loss)
}

const SHUFFLE_STREAM: u64 = 16;

/// Trains every parameter active in `phase` (earlier phases' weights
/// included) through the whole learning-rate ladder. Optimizer moments
/// start fresh at the beginning of each phase.
pub fn train_phase(
    params: ModelParams,
    data: &PatchDataset,
    phase: Phase,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    let mut params = params;
    if params.phase > phase {
        return Err(Error::InvalidArgument(format!(
            "model is already at phase {}, cannot train phase {phase}",
            params.phase
        )));
    }
    let train: Vec<&Patch> = data.train().collect();
    if train.is_empty() {
        return Err(Error::Data("no training patches".into()));
    }
    params.ensure_subnets(phase);
    for p in params.active_params_mut(phase) {
        p.reset_optimizer();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM + phase.number() as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut batch_index = 0;
    let mut epoch = 0;
    for &lr in &cfg.lr_ladder {
        let hyper = cfg.adam(lr);
        for _ in 0..cfg.epochs_per_lr {
            epoch += 1;
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for idx in order.chunks(cfg.batch_size) {
                let batch: Vec<&Patch> = idx.iter().map(|&i| train[i]).collect();
                let x = stack(&batch);
                let loss = train_step(&mut params, &x, phase, &hyper)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        phase: phase.number(),
                        batch: batch_index,
                    });
                }
                loss_sum += loss * batch.len() as f64;
                batch_index += 1;
            }
            let record = EpochRecord {
                phase,
                epoch,
                lr,
                mean_loss: loss_sum / train.len() as f64,
                holdout_psnr: holdout_psnr(&params, data, phase, cfg.batch_size)?,
            };
            on_epoch(&record);
            history.push(record);
        }
    }
    params.phase = phase;
    Ok((params, history))
}

/// Model and history produced by one training phase.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub phase: Phase,
    pub model: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Runs the configured phases in order on an extracted dataset, each phase
/// starting from the previous phase's weights.
pub fn train_all_on(
    data: &PatchDataset,
    sampling: SamplingConfig,
    net: NetConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<PhaseOutcome>> {
    cfg.validate(&sampling, &net)?;
    let mut model = network::init_params(sampling, net, cfg.seed)?;
    model.truncate_to(Phase::Initial);
    let mut outcomes = Vec::with_capacity(cfg.phases.len());
    for &phase in &cfg.phases {
        let (trained, history) = train_phase(model, data, phase, cfg, on_epoch)?;
        let mut snapshot = trained.clone();
        snapshot.truncate_to(phase);
        outcomes.push(PhaseOutcome {
            phase,
            model: snapshot,
            history,
        });
        model = trained;
    }
    Ok(outcomes)
}

pub fn train_all(
    image_dir: &Path,
    sampling: SamplingConfig,
    net: NetConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<PhaseOutcome>> {
    cfg.validate(&sampling, &net)?;
    let data = extract_patches(image_dir, cfg)?;
    train_all_on(&data, sampling, net, cfg, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_of_exact_reconstruction_is_zero() {
        let t = Tensor::full([2, 1, 4, 4], 0.3);
        let (loss, grad) = mse_loss(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_of_unit_residual() {
        let target = Tensor::zeros([1, 1, 2, 2]);
        let recon = Tensor::full([1, 1, 2, 2], 1.0);
        let (loss, grad) = mse_loss(&recon, &target).unwrap();
        assert_eq!(loss, 2.0);
        assert!(grad.data().iter().all(|&g| g == 1.0));
        let (loss2, _) = mse_loss(&Tensor::full([1, 1, 2, 2], 2.0), &target).unwrap();
        assert_eq!(loss2, 4.0 * loss);
    }

    #[test]
    fn loss_normalizes_by_batch() {
        let target = Tensor::zeros([4, 1, 2, 2]);
        let recon = Tensor::full([4, 1, 2, 2], 1.0);
        let (loss, grad) = mse_loss(&recon, &target).unwrap();
        assert_eq!(loss, 2.0);
        assert!(grad.data().iter().all(|&g| g == 0.25));
        assert!(mse_loss(&recon, &Tensor::zeros([4, 1, 2, 3])).is_err());
    }

    #[test]
    fn holdout_split_counts() {
        assert_eq!(holdout_count(1, 0.1), 0);
        assert_eq!(holdout_count(2, 0.1), 1);
        assert_eq!(holdout_count(20, 0.1), 2);
        assert_eq!(holdout_count(20, 0.0), 0);
    }

    #[test]
    fn single_offset_for_patch_sized_image() {
        let img = GrayImage::new(64, 64, (0..64 * 64).map(|i| (i % 251) as u8).collect()).unwrap();
        let cfg = TrainConfig {
            patches_per_image: 5,
            ..TrainConfig::default()
        };
        let data = patches_from_images(&[("a.pgm".into(), img)], &cfg);
        assert_eq!(data.patches.len(), 5);
        assert!(data.patches.iter().all(|p| p.top == 0 && p.left == 0));
        assert!(data.patches.iter().all(|p| p.split == Split::Train));
    }

    #[test]
    fn config_validation() {
        let s = SamplingConfig::new(16, 0.1).unwrap();
        let n = NetConfig::default();
        assert!(TrainConfig::default().validate(&s, &n).is_ok());
        let bad_lr = TrainConfig {
            lr_ladder: vec![0.001, 0.001],
            ..TrainConfig::default()
        };
        assert!(bad_lr.validate(&s, &n).is_err());
        let bad_patch = TrainConfig {
            patch_size: 48,
            ..TrainConfig::default()
        };
        assert!(bad_patch.validate(&s, &n).is_err());
        let bad_phases = TrainConfig {
            phases: vec![Phase::Refine, Phase::Initial],
            ..TrainConfig::default()
        };
        assert!(bad_phases.validate(&s, &n).is_err());
    }
}
