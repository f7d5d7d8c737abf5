//! Evaluation over an image set, reported in the PSNR/SSIM table layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::codec::crop_for_model;
use crate::error::{Error, Result};
use crate::format::load_model;
use crate::image::{self, GrayImage};
use crate::metrics;
use crate::network::{self, ModelParams};
use crate::training::list_images;

pub const REPORT_HEADER: &str = "name,subrate_target,subrate_realized,psnr_db,ssim";
pub const AVERAGE_ROW: &str = "average";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub subrate_target: f64,
    pub subrate_realized: f64,
    /// `(psnr_db, ssim)`, or the reason the image failed.
    pub outcome: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub sample_seconds: f64,
    pub reconstruct_seconds: f64,
}

impl EvalReport {
    /// Arithmetic means of PSNR and SSIM over successful rows.
    pub fn averages(&self) -> Option<(f64, f64)> {
        let ok: Vec<(f64, f64)> = self.rows.iter().filter_map(|r| r.outcome.clone().ok()).collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        Some((
            ok.iter().map(|r| r.0).sum::<f64>() / n,
            ok.iter().map(|r| r.1).sum::<f64>() / n,
        ))
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Header, one row per image, the averages row, then `#` lines with
    /// timings and failure reasons.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        let (target, realized) = self
            .rows
            .first()
            .map(|r| (r.subrate_target, r.subrate_realized))
            .unwrap_or((f64::NAN, f64::NAN));
        for r in &self.rows {
            let (p, s) = r.outcome.clone().unwrap_or((f64::NAN, f64::NAN));
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.name, r.subrate_target, r.subrate_realized, p, s
            );
        }
        let (p, s) = self.averages().unwrap_or((f64::NAN, f64::NAN));
        let _ = writeln!(out, "{AVERAGE_ROW},{target},{realized},{p},{s}");
        let _ = writeln!(out, "# sample_seconds={}", self.sample_seconds);
        let _ = writeln!(out, "# reconstruct_seconds={}", self.reconstruct_seconds);
        for r in &self.rows {
            if let Err(e) = &r.outcome {
                let _ = writeln!(out, "# failed {}: {}", r.name, e.replace('\n', " "));
            }
        }
        out
    }
}

struct Timings {
    sample: f64,
    reconstruct: f64,
}

fn evaluate_one(model: &ModelParams, img: &GrayImage, t: &mut Timings) -> Result<(f64, f64)> {
    let (top, left, h, w) = crop_for_model(model, img.height, img.width)?;
    let truth = img.crop(top, left, h, w)?;
    let x = truth.to_tensor();
    let start = Instant::now();
    let y = network::sample(&x, model)?;
    t.sample += start.elapsed().as_secs_f64();
    let start = Instant::now();
    let recon = network::reconstruct(&y, model, model.phase)?;
    t.reconstruct += start.elapsed().as_secs_f64();
    let out = GrayImage::from_tensor(&recon)?;
    Ok((metrics::psnr(&out, &truth)?, metrics::ssim(&out, &truth)?))
}

/// Evaluates named images; per-image failures are recorded, not raised.
pub fn evaluate_images(model: &ModelParams, images: &[(String, Result<GrayImage>)]) -> EvalReport {
    let mut t = Timings {
        sample: 0.0,
        reconstruct: 0.0,
    };
    let rows = images
        .iter()
        .map(|(name, img)| {
            let outcome = match img {
                Ok(img) => evaluate_one(model, img, &mut t).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            EvalRow {
                name: name.clone(),
                subrate_target: model.sampling.subrate as f64,
                subrate_realized: model.sampling.realized_subrate(),
                outcome,
            }
        })
        .collect();
    EvalReport {
        rows,
        sample_seconds: t.sample,
        reconstruct_seconds: t.reconstruct,
    }
}

pub fn evaluate_set(model_path: &Path, image_dir: &Path, out_path: &Path) -> Result<EvalReport> {
    let model = load_model(model_path)?;
    let files = list_images(image_dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no .pgm images in {}", image_dir.display())));
    }
    let images: Vec<(String, Result<GrayImage>)> = files
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            (name, image::load_image(p))
        })
        .collect();
    let report = evaluate_images(&model, &images);
    fs::write(out_path, report.to_csv()).map_err(|e| Error::io(out_path, e))?;
    Ok(report)
}
