use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use dcan_cli as cli;
use dcan_core::metrics::HausdorffMode;
use dcan_core::net::DcanConfig;

#[derive(Parser)]
#[command(name = "dcan", version, about = "Contour-aware gland instance segmentation pipeline")]
struct Args {
    /// Run configuration (`section.key = value` lines); defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset: scene_NNN.ppm, scene_NNN.imask and manifest.txt.
    GenData { out_dir: PathBuf },
    /// Derive contour labels from an instance mask.
    MakeLabels {
        mask_in: PathBuf,
        contour_out: PathBuf,
        /// Disk radius; defaults to labels.contour_radius.
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Train a model on a dataset directory and write a checkpoint.
    Train { data_dir: PathBuf, ckpt_out: PathBuf },
    /// Overlap-tile inference; writes object and contour probability maps.
    Infer {
        ckpt: PathBuf,
        image_in: PathBuf,
        maps_out: PathBuf,
        /// Tile size; defaults to net.input_size.
        #[arg(long)]
        tile: Option<usize>,
        /// Tile stride; defaults to infer.stride.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Fuse probability maps into a labelled instance mask.
    Fuse {
        maps_in: PathBuf,
        instances_out: PathBuf,
        #[arg(long = "to")]
        t_o: Option<f64>,
        #[arg(long = "tc")]
        t_c: Option<f64>,
        #[arg(long)]
        min_area: Option<usize>,
        /// Ignore the contour map and threshold objects alone.
        #[arg(long)]
        objects_only: bool,
    },
    /// Score segmentations against annotations of the same file name.
    Eval {
        seg_dir: PathBuf,
        gt_dir: PathBuf,
        report_csv: PathBuf,
        /// Hausdorff over object boundaries instead of full pixel sets.
        #[arg(long)]
        boundary_hausdorff: bool,
    },
    /// Rank teams by summed per-criterion ranks.
    Rank { scores_csv: PathBuf, ranking_csv: PathBuf },
    /// Finite-difference check of every backward pass and the full loss.
    Gradcheck {
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Sampled coordinates per check.
        #[arg(long, default_value_t = 20)]
        samples: usize,
        /// Check the configured network instead of the miniature one.
        #[arg(long)]
        config_net: bool,
    },
    /// Print the configuration key reference (markdown).
    ConfigReference,
    /// Print the effective configuration.
    ShowConfig,
}

fn run(args: Args) -> Result<bool> {
    let config = cli::load_config(args.config.as_deref())?;
    match args.command {
        Command::GenData { out_dir } => {
            let n = cli::gen_data(&config, &out_dir)?;
            eprintln!("wrote {n} scenes to {}", out_dir.display());
        }
        Command::MakeLabels {
            mask_in,
            contour_out,
            radius,
        } => cli::make_labels(&mask_in, &contour_out, radius.unwrap_or(config.contour_radius))?,
        Command::Train { data_dir, ckpt_out } => {
            let report = cli::train(&config, &data_dir, &ckpt_out, |line| eprintln!("{line}"))?;
            eprintln!(
                "trained {} iterations, final loss {:.3}",
                report.losses.len(),
                report.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Infer {
            ckpt,
            image_in,
            maps_out,
            tile,
            stride,
        } => cli::infer(
            &ckpt,
            &image_in,
            &maps_out,
            tile.unwrap_or(config.net.input_size),
            stride.unwrap_or(config.infer_stride),
        )?,
        Command::Fuse {
            maps_in,
            instances_out,
            t_o,
            t_c,
            min_area,
            objects_only,
        } => {
            let mut params = config.fusion.clone();
            params.t_o = t_o.unwrap_or(params.t_o);
            params.t_c = t_c.unwrap_or(params.t_c);
            params.min_area = min_area.unwrap_or(params.min_area);
            params.validate()?;
            let n = cli::fuse(&maps_in, &instances_out, &params, objects_only)?;
            eprintln!("{n} objects");
        }
        Command::Eval {
            seg_dir,
            gt_dir,
            report_csv,
            boundary_hausdorff,
        } => {
            let mode = if boundary_hausdorff {
                HausdorffMode::Boundary
            } else {
                HausdorffMode::FullSet
            };
            let r = cli::eval(&seg_dir, &gt_dir, &report_csv, mode)?;
            eprintln!(
                "F1 {:.4}  object Dice {:.4}  object Hausdorff {:.3}",
                r.all.f1, r.all.object_dice, r.all.object_hausdorff
            );
        }
        Command::Rank {
            scores_csv,
            ranking_csv,
        } => {
            cli::rank(&scores_csv, &ranking_csv)?;
        }
        Command::Gradcheck {
            seeds,
            samples,
            config_net,
        } => {
            let mut config = config;
            if !config_net {
                config.net = DcanConfig::miniature();
            }
            let checks = cli::gradcheck(&config, &seeds, samples)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} seed {} samples {}: max rel error {:.2e} (tolerance {:e}) {}",
                    c.name,
                    c.seed,
                    c.samples,
                    c.max_rel_error,
                    c.tolerance,
                    if c.passed() { "ok" } else { "FAILED" }
                );
                ok &= c.passed();
            }
            return Ok(ok);
        }
        Command::ConfigReference => print!("{}", cli::reference_page()),
        Command::ShowConfig => print!("{}", config.to_text()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
