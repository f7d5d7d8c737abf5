use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msdcs::config::RunConfig;
use msdcs::error::Error;
use msdcs::training::{self, EpochRecord};
use msdcs::{codec, eval, format, gradcheck, image, synth};

const EXIT_GRADCHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_MODEL: u8 = 5;
const EXIT_PACKET: u8 = 6;
const EXIT_EVAL_ROW: u8 = 7;

#[derive(Parser)]
#[command(
    name = "msdcs",
    version,
    about = "Multi-scale learned compressive sensing codec for grayscale images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured phases and write one model file per phase.
    Train(TrainArgs),
    /// Sample an image into a measurement file.
    Compress {
        model: PathBuf,
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from a measurement file.
    Decompress {
        model: PathBuf,
        packet: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Decode even if the packet was produced by a different model.
        #[arg(long)]
        ignore_model_checksum: bool,
    },
    /// Score a model on every .pgm image in a directory.
    Eval {
        model: PathBuf,
        image_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every backward pass with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the analytic gradient of one check (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write procedurally generated grayscale scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for scripting; training is always single-threaded and
    /// reproducible.
    #[arg(long)]
    deterministic: bool,
    /// Output directory for model and history files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

/// Maps an error to its exit code; errors without a fixed code get `fallback`.
fn fail(fallback: u8) -> impl Fn(Error) -> Failure {
    move |err| {
        let code = match err {
            Error::Config(_) => EXIT_CONFIG,
            Error::Data(_) => EXIT_DATA,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::ModelMismatch { .. } => EXIT_MODEL,
            _ => fallback,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(fail(EXIT_CONFIG))?;
    let base = args.config.parent();
    for kv in &args.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| Failure {
            code: EXIT_CONFIG,
            message: format!("--set expects KEY=VALUE, got {kv:?}"),
        })?;
        cfg.set(key.trim(), value.trim(), base).map_err(fail(EXIT_CONFIG))?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let sampling = cfg.validate().map_err(fail(EXIT_CONFIG))?;
    let image_dir = cfg.image_dir.clone().ok_or_else(|| Failure {
        code: EXIT_CONFIG,
        message: format!("config error: {} does not set image_dir", args.config.display()),
    })?;
    fs::create_dir_all(&args.out).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot create {}: {e}", args.out.display()),
    })?;
    println!(
        "training block_size={} measurements={} realized_subrate={:.6} phases={:?}",
        sampling.block_size,
        sampling.measurements,
        sampling.realized_subrate(),
        cfg.train.phases.iter().map(|p| p.number()).collect::<Vec<_>>()
    );
    let mut report = |r: &EpochRecord| {
        println!(
            "phase={} epoch={} lr={} mean_loss={:.6e} holdout_psnr={:.4}",
            r.phase.number(),
            r.epoch,
            r.lr,
            r.mean_loss,
            r.holdout_psnr
        );
    };
    let outcomes =
        training::train_all(&image_dir, sampling, cfg.net.clone(), &cfg.train, &mut report).map_err(fail(EXIT_DATA))?;
    for o in &outcomes {
        let k = o.phase.number();
        let model_path = args.out.join(format!("model_phase{k}.msdc"));
        format::save_model(&o.model, &model_path).map_err(fail(EXIT_DATA))?;
        let history_path = args.out.join(format!("history_phase{k}.csv"));
        fs::write(&history_path, training::history_csv(&o.history)).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", history_path.display()),
        })?;
        println!("wrote {} and {}", model_path.display(), history_path.display());
    }
    Ok(())
}

fn compress(model: &Path, image_path: &Path, out: &Path) -> Result<(), Failure> {
    let model = format::load_model(model).map_err(fail(EXIT_MODEL))?;
    let img = image::load_image(image_path).map_err(fail(EXIT_DATA))?;
    let packet = codec::compress(&model, &img).map_err(fail(EXIT_DATA))?;
    format::save_packet(&packet, out).map_err(fail(EXIT_DATA))?;
    println!(
        "{}x{} crop at ({}, {}) of {}x{}: {} floats for {} pixels",
        packet.crop_width,
        packet.crop_height,
        packet.crop_top,
        packet.crop_left,
        packet.width,
        packet.height,
        packet.payload_len(),
        packet.crop_width * packet.crop_height
    );
    Ok(())
}

fn decompress(model: &Path, packet: &Path, out: &Path, ignore_model_checksum: bool) -> Result<(), Failure> {
    let model = format::load_model(model).map_err(fail(EXIT_MODEL))?;
    let packet = format::load_packet(packet).map_err(fail(EXIT_PACKET))?;
    let img = codec::decompress(&model, &packet, ignore_model_checksum).map_err(fail(EXIT_PACKET))?;
    image::save_image(&img, out).map_err(fail(EXIT_DATA))?;
    Ok(())
}

fn evaluate(model: &Path, image_dir: &Path, out: &Path) -> Result<(), Failure> {
    format::load_model(model).map_err(fail(EXIT_MODEL))?;
    let report = eval::evaluate_set(model, image_dir, out).map_err(fail(EXIT_DATA))?;
    if let Some((psnr, ssim)) = report.averages() {
        println!(
            "average psnr_db={psnr:.4} ssim={ssim:.6} over {} images",
            report.rows.len() - report.failures()
        );
    }
    if report.failures() > 0 {
        let names: Vec<&str> = report
            .rows
            .iter()
            .filter(|r| r.outcome.is_err())
            .map(|r| r.name.as_str())
            .collect();
        return Err(Failure {
            code: EXIT_EVAL_ROW,
            message: format!("{} image(s) failed: {}", names.len(), names.join(", ")),
        });
    }
    Ok(())
}

fn check_gradients(seed: u64, fault: Option<&str>) -> Result<(), Failure> {
    if let Some(name) = fault {
        if !gradcheck::CHECK_NAMES.contains(&name) {
            return Err(Failure {
                code: EXIT_CONFIG,
                message: format!(
                    "unknown check {name:?}; expected one of {}",
                    gradcheck::CHECK_NAMES.join(", ")
                ),
            });
        }
    }
    let report = gradcheck::run(seed, fault).map_err(fail(EXIT_GRADCHECK))?;
    for c in &report.checks {
        println!(
            "{:<24} max_rel_error={:.3e} compared={} skipped={} {}",
            c.name,
            c.max_rel_error,
            c.compared,
            c.skipped,
            if c.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GRADCHECK,
            message: format!("gradient check failed for: {}", failed.join(", ")),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Compress { model, image, out } => compress(&model, &image, &out),
        Command::Decompress {
            model,
            packet,
            out,
            ignore_model_checksum,
        } => decompress(&model, &packet, &out, ignore_model_checksum),
        Command::Eval { model, image_dir, out } => evaluate(&model, &image_dir, &out),
        Command::Gradcheck { seed, inject_fault } => check_gradients(seed, inject_fault.as_deref()),
        Command::Synth {
            out,
            count,
            width,
            height,
            seed,
        } => synth::write_dataset(&out, count, width, height, seed)
            .map(|paths| println!("wrote {} scenes to {}", paths.len(), out.display()))
            .map_err(fail(EXIT_DATA)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("msdcs: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
