//! Command line front end. Every command echoes its fully resolved
//! configuration before doing work, and exit codes follow one scheme:
//! 0 success, 2 usage error, 3 data error, 4 numerical failure.

mod cmds;
mod config;

use clap::{Parser, Subcommand};
use gpgmnet_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gpgmnet", version, about = "Joint super-resolution and inverse tone mapping", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate paired synthetic SDR/HDR data plus a manifest
    GenData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        scenes: usize,
        /// HDR scene size as WxH, e.g. 160x160
        #[arg(long, value_name = "WxH", value_parser = config::parse_size)]
        size: (usize, usize),
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["2", "4"]))]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a manifest of paired frames
    Train {
        /// key=value config file ('#' comments); model and training keys share one file
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "MANIFEST")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// checkpoint to resume from
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Run the network on one YUV frame
    Infer {
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        #[arg(long = "in", value_name = "YUV")]
        input: PathBuf,
        #[arg(long, value_name = "YUV")]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Compare two YUV files with the metric suite
    Eval {
        #[arg(long, value_name = "YUV")]
        pred: PathBuf,
        #[arg(long = "ref", value_name = "YUV")]
        reference: PathBuf,
        /// comma list of psnr,ssim,ms-ssim,mpsnr,lab-mse,lab-mse-l or "all"
        #[arg(long, value_name = "LIST", default_value = "all")]
        metrics: String,
        /// dump 128-bin per-channel histograms of both files as TSV
        #[arg(long, value_name = "FILE")]
        histogram: Option<PathBuf>,
        /// write the metric report as JSON
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
    /// Finite-difference checks for every layer and the full network
    GradCheck,
    /// Parameter totals with per-module breakdown, checked against the
    /// expected bands for the default configs
    ParamCount {
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Color-transition test: synthesize the bar, run the model, score
    /// transition smoothness against the exact mapping
    ColorBar {
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// bar size as WxH
        #[arg(long, value_name = "WxH", default_value = "96x98", value_parser = config::parse_size)]
        size: (usize, usize),
    },
    /// Train every variant in a grid file under one seed and budget
    Ablate {
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        #[arg(long, value_name = "MANIFEST")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// 2 usage, 3 data, 4 numerical.
fn classify(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite { .. } | Error::UninitializedStats => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> gpgmnet_core::Result<u8> {
        match cli.command {
            Command::GenData {
                out,
                scenes,
                size,
                scale,
                seed,
            } => cmds::gen_data(&out, scenes, size, scale.parse().unwrap(), seed),
            Command::Train {
                config,
                data,
                out,
                resume,
            } => cmds::train(config.as_deref(), &data, &out, resume.as_deref()),
            Command::Infer {
                weights,
                input,
                out,
                config,
            } => cmds::infer(&weights, &input, &out, config.as_deref()),
            Command::Eval {
                pred,
                reference,
                metrics,
                histogram,
                json,
            } => cmds::eval(&pred, &reference, &metrics, histogram.as_deref(), json.as_deref()),
            Command::GradCheck => cmds::grad_check(),
            Command::ParamCount { config } => cmds::param_count_cmd(config.as_deref()),
            Command::ColorBar {
                weights,
                out,
                config,
                size,
            } => cmds::color_bar_cmd(&weights, &out, config.as_deref(), size),
            Command::Ablate { grid, data, out } => cmds::ablate(&grid, &data, &out),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}
