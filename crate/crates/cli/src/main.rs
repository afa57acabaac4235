use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use alphaveil::blend::BlendConfig;
use alphaveil::compositor::{render, AttackImage, ViewerModel};
use alphaveil::detector::{scan, ScanThresholds};
use alphaveil::imgio::{
    decode_attack_png, encode_attack_png, encode_gray_png, gray_to_rgb, load_grayscale,
    load_raster, PixelGrid,
};
use alphaveil::metrics::evaluate;
use alphaveil::poison::{craft, run_job, PoisonJob, PoisonMode, MANIFEST_FILE};
use alphaveil::{blend::AlphaLayer, Error};
use clap::{Args, Parser, Subcommand};

const EXIT_REPORT_FAILURE: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_IO: u8 = 74;

/// Craft, evaluate, batch-deploy and detect alpha-channel transparency attacks.
#[derive(Parser, Debug)]
#[command(name = "alphaveil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Craft one attack image from a target and a hidden background.
    Craft {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        background: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        blend: BlendArgs,
    },
    /// Craft attacks for every image in a directory and write a manifest.
    Poison {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        backgrounds: Vec<PathBuf>,
        /// single | random
        #[arg(long, value_parser = parse_mode)]
        mode: PoisonMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "_blended")]
        tag: String,
        /// Manifest timestamp in Unix seconds; defaults to SOURCE_DATE_EPOCH, then the clock.
        #[arg(long)]
        timestamp: Option<u64>,
        #[command(flatten)]
        blend: BlendArgs,
    },
    /// Render an image the way a given viewer sees it and save it as grayscale.
    Flatten {
        #[arg(long = "in")]
        input: PathBuf,
        /// light | dark | drop | b=<luminance>
        #[arg(long, value_parser = parse_viewer)]
        viewer: ViewerModel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan an image for signs of a transparency attack.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        v_alpha: f64,
        #[arg(long, default_value_t = 1e-2)]
        v_div: f64,
    },
    /// Score an attack image against its target and background.
    Report {
        #[arg(long)]
        attack: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        background: PathBuf,
        /// Resize target and background to WxH before scoring.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
    },
}

#[derive(Args, Debug)]
struct BlendArgs {
    /// Working size as WxH.
    #[arg(long, value_parser = parse_size, default_value = "150x150")]
    size: (usize, usize),
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    #[arg(long, default_value_t = 100)]
    log_interval: usize,
}

impl BlendArgs {
    fn config(&self) -> BlendConfig {
        BlendConfig {
            size: self.size,
            steps: self.steps,
            learning_rate: self.lr,
            background_scale: self.scale,
            log_interval: self.log_interval,
            ..BlendConfig::default()
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad dimension {v:?} in {s:?}"))
    };
    Ok((dim(w)?, dim(h)?))
}

fn parse_mode(s: &str) -> Result<PoisonMode, String> {
    PoisonMode::parse(s).ok_or_else(|| format!("unknown mode {s:?}, expected single or random"))
}

fn parse_viewer(s: &str) -> Result<ViewerModel, String> {
    match s {
        "light" => Ok(ViewerModel::LIGHT),
        "dark" => Ok(ViewerModel::DARK),
        "drop" => Ok(ViewerModel::DropAlpha),
        _ => {
            let lum = s
                .strip_prefix("b=")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    format!("unknown viewer {s:?}, expected light, dark, drop or b=<lum>")
                })?;
            ViewerModel::flatten(lum).map_err(|e| e.to_string())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Argument(_) | Error::Numeric(_) | Error::Domain(_) => EXIT_USAGE,
    }
}

fn default_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

fn load_gray(path: &Path, size: Option<(usize, usize)>) -> alphaveil::Result<PixelGrid> {
    match size {
        Some(size) => load_grayscale(path, size),
        None => Ok(load_raster(path)?.0.luminance()),
    }
}

fn run(command: Command) -> alphaveil::Result<u8> {
    match command {
        Command::Craft {
            target,
            background,
            out,
            blend,
        } => {
            let cfg = blend.config();
            cfg.validate()?;
            let target = load_grayscale(&target, cfg.size)?;
            let background = load_grayscale(&background, cfg.size)?;
            let (attack, trace) = craft(&target, &background, &cfg)?;
            encode_attack_png(attack.rgb(), attack.alpha(), &out)?;
            for e in trace.entries() {
                println!("step={} loss={:?}", e.step, e.loss);
            }
            let report = evaluate(&attack.quantized(), &target, &background, &cfg)?;
            print!("{}", report.to_kv());
            Ok(0)
        }
        Command::Poison {
            targets,
            backgrounds,
            mode,
            out,
            seed,
            tag,
            timestamp,
            blend,
        } => {
            let mut job = PoisonJob::new(targets, backgrounds, mode, &out);
            job.cfg = BlendConfig {
                filename_tag: tag,
                rng_seed: seed,
                ..blend.config()
            };
            job.created_at = timestamp.unwrap_or_else(default_timestamp);
            let manifest = run_job(&job)?;
            let summary = manifest.summary();
            println!("processed={}", summary.processed);
            println!("failed={}", summary.failed);
            println!("skipped={}", summary.skipped);
            match summary.mean_final_loss {
                Some(l) => println!("mean_final_loss={l:?}"),
                None => println!("mean_final_loss=none"),
            }
            println!("manifest={}", out.join(MANIFEST_FILE).display());
            Ok(0)
        }
        Command::Flatten { input, viewer, out } => {
            let (rgb, alpha) = load_raster(&input)?;
            let (w, h) = rgb.dims();
            let img = AttackImage::new(
                gray_to_rgb(&rgb.luminance()),
                alpha.unwrap_or_else(|| AlphaLayer::ones(w, h)),
            )?;
            encode_gray_png(&render(&img, viewer), &out)?;
            Ok(0)
        }
        Command::Inspect {
            input,
            v_alpha,
            v_div,
        } => {
            if !(v_alpha > 0.0 && v_div > 0.0) {
                return Err(Error::Argument("thresholds must be positive".into()));
            }
            let result = scan(
                &input,
                ScanThresholds {
                    alpha_variance: v_alpha,
                    view_divergence: v_div,
                },
            )?;
            print!("{}", result.to_kv());
            Ok(result.verdict.exit_code() as u8)
        }
        Command::Report {
            attack,
            target,
            background,
            size,
            scale,
        } => {
            let (rgb, alpha) = decode_attack_png(&attack)?;
            let img = AttackImage::new(rgb, alpha)?;
            let target = load_gray(&target, size)?;
            let background = load_gray(&background, size)?;
            let cfg = BlendConfig {
                background_scale: scale,
                ..BlendConfig::default()
            };
            cfg.validate()?;
            let report = evaluate(&img, &target, &background, &cfg)?;
            print!("{}", report.to_kv());
            Ok(if report.success {
                0
            } else {
                EXIT_REPORT_FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
