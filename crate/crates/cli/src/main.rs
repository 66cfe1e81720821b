//! `fusionnet`: synthesize data, train, fuse, export alpha maps and evaluate.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use fusionnet_core::data::{build_manifest, load_image, resize_bilinear, rgb_to_luminance, save_image, ImagePair};
use fusionnet_core::metrics::MetricReport;
use fusionnet_core::model::{infer, ForwardArtifacts, ForwardOptions};
use fusionnet_core::synthgen::{write_dataset, SynthSpec};
use fusionnet_core::trainer::{evaluate, load_checkpoint, train, Checkpoint, TrainConfig, FINAL_CHECKPOINT};
use fusionnet_core::Tensor;

#[derive(Debug, Parser)]
#[command(name = "fusionnet", version, about = "Infrared/visible image fusion with learned alpha blending")]
struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset in the ir/ vis/ ann/ layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        /// Image size as HxW.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
    },
    /// Train from a config file on a dataset root.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse one IR/VIS pair into a grayscale PNG.
    Fuse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the alpha map (brighter = more IR).
        #[arg(long)]
        alpha: Option<PathBuf>,
        /// Resize both inputs to HxW first.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        /// Debug: replace the learned alpha map by a constant in [0, 1].
        #[arg(long)]
        force_alpha: Option<f64>,
    },
    /// Write only the alpha map of a pair.
    ExportAlpha {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
    },
    /// Evaluate a checkpoint on a dataset and write a metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only evaluate the ids listed in this file.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Debug: replace the learned alpha map by a constant in [0, 1].
        #[arg(long)]
        force_alpha: Option<f64>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("invalid dimension {v:?} in {s:?}")),
    };
    Ok((dim(h)?, dim(w)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, count, seed, size } => cmd_synth(&out, count, seed, size),
        Command::Train { config, data, out } => cmd_train(&config, &data, &out),
        Command::Fuse {
            ckpt,
            ir,
            vis,
            out,
            alpha,
            size,
            force_alpha,
        } => {
            let options = ForwardOptions { alpha_override: force_alpha };
            let result = fuse_files(&ckpt, &ir, &vis, size, options)?;
            save_image(&result.fused, &out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = alpha {
                save_image(&result.alpha, &path).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::ExportAlpha { ckpt, ir, vis, out, size } => {
            let result = fuse_files(&ckpt, &ir, &vis, size, ForwardOptions::default())?;
            save_image(&result.alpha, &out).with_context(|| format!("writing {}", out.display()))
        }
        Command::Eval {
            ckpt,
            data,
            out,
            split,
            force_alpha,
        } => cmd_eval(&ckpt, &data, &out, split.as_deref(), ForwardOptions { alpha_override: force_alpha }),
    }
}

fn cmd_synth(out: &Path, count: usize, seed: u64, size: Option<(usize, usize)>) -> Result<()> {
    let mut spec = SynthSpec::default().with_seed(seed);
    if let Some((h, w)) = size {
        spec = spec.scaled_to(h, w);
    }
    let manifest = write_dataset(&spec, out, count).with_context(|| format!("writing dataset to {}", out.display()))?;
    info!("wrote {} pairs to {}", manifest.len(), out.display());
    Ok(())
}

fn cmd_train(config_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut config = TrainConfig::load(config_path)?;
    config.out_dir = Some(out.to_path_buf());
    let manifest = build_manifest(data).with_context(|| format!("reading dataset {}", data.display()))?;
    if manifest.is_empty() {
        bail!("dataset {} has no IR/VIS pairs", data.display());
    }
    let outcome = train(&config, &manifest)?;
    info!("final checkpoint: {}", out.join(FINAL_CHECKPOINT).display());
    match outcome.log.last() {
        Some(last) => {
            let l = last.loss;
            println!(
                "step {}: mse={} grad={} entropy={} roi={} total={}",
                last.step, l.mse, l.grad, l.entropy, l.roi, l.total
            );
        }
        None => println!("no training steps run"),
    }
    Ok(())
}

/// Loads an image as a single plane; RGB input is converted to luminance.
fn load_plane(path: &Path) -> Result<Tensor<f32>> {
    let img = load_image(path)?;
    Ok(if img.chw()?.0 == 3 { rgb_to_luminance(&img)? } else { img })
}

fn load_pair(ir_path: &Path, vis_path: &Path, size: Option<(usize, usize)>) -> Result<ImagePair<f32>> {
    let mut ir = load_plane(ir_path)?;
    let mut vis = load_image(vis_path)?;
    if let Some((h, w)) = size {
        ir = resize_bilinear(&ir, h, w)?;
        vis = resize_bilinear(&vis, h, w)?;
    }
    let (_, ih, iw) = ir.chw()?;
    let (_, vh, vw) = vis.chw()?;
    if (ih, iw) != (vh, vw) {
        bail!(
            "size mismatch: IR {} is {ih}x{iw} but VIS {} is {vh}x{vw}; pass --size HxW to resize both",
            ir_path.display(),
            vis_path.display()
        );
    }
    let id = ir_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ImagePair::new(id, ir, vis)?)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn fuse_files(
    ckpt: &Path,
    ir: &Path,
    vis: &Path,
    size: Option<(usize, usize)>,
    options: ForwardOptions,
) -> Result<ForwardArtifacts<f32>> {
    let ckpt = load_ckpt(ckpt)?;
    let pair = load_pair(ir, vis, size)?;
    Ok(infer(&ckpt.params, &pair, options)?)
}

fn cmd_eval(ckpt: &Path, data: &Path, out: &Path, split: Option<&Path>, options: ForwardOptions) -> Result<()> {
    let ckpt = load_ckpt(ckpt)?;
    let mut manifest = build_manifest(data).with_context(|| format!("reading dataset {}", data.display()))?;
    if let Some(split) = split {
        manifest = manifest.restrict_to_split(split)?;
    }
    if manifest.is_empty() {
        bail!("dataset {} has no IR/VIS pairs to evaluate", data.display());
    }
    let report: MetricReport = evaluate(&ckpt, &manifest, options)?;
    fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", MetricReport::csv_header());
    println!("{}", report.mean_row());
    Ok(())
}
