//! `panfuse`: fuse panchromatic/multispectral image pairs, train the
//! gradient-prior network, and run reduced-scale evaluation experiments.
//!
//! Rasters are addressed by stem: `--ms scene_ms` names the pair
//! `scene_ms.json` (header) and `scene_ms.bsq` (little-endian f32 samples,
//! band-sequential). Network weights follow the same convention with
//! `.gnet.json`/`.gnet.bin`.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use panfuse::baselines::{fuse_glp_mtf, fuse_naive};
use panfuse::gradnet::{load_weights, make_training_pairs, save_weights, train, TrainConfig};
use panfuse::harness::{
    fuse_proposed_with, run_experiment, wald_degrade, ExperimentConfig, Method, SolverChoice,
};
use panfuse::metrics::quality_report;
use panfuse::operators::{mtf_gaussian_kernel, DegradationSpec};
use panfuse::raster::{read_image_stem, write_image_stem, MultiBandImage};
use panfuse::solver::FusionParams;
use panfuse::synth::synth_scene;
use panfuse::{Error, Result};

#[derive(Parser)]
#[command(
    name = "panfuse",
    version,
    about = "Pansharpening toolkit: variational fusion with a learned gradient prior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a panchromatic/multispectral pair into a high-resolution image
    Fuse(FuseArgs),
    /// Train the gradient-prior network on full-resolution scenes
    Train(TrainArgs),
    /// Degrade a pan/ms pair to reduced scale for evaluation
    Degrade(DegradeArgs),
    /// Score a fused image against a reference
    Metrics(MetricsArgs),
    /// Print the modeled sensor blur kernel
    Kernel(KernelArgs),
    /// Run a configured multi-scene, multi-method experiment
    Experiment(ExperimentArgs),
    /// Generate a seeded synthetic scene pair
    Synth(SynthArgs),
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_str(s).map_err(|e| e.to_string())
}

fn parse_solver(s: &str) -> std::result::Result<SolverChoice, String> {
    SolverChoice::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct FuseArgs {
    /// Panchromatic raster stem (1 band); unused by --method naive
    #[arg(long)]
    pan: Option<PathBuf>,
    /// Multispectral raster stem
    #[arg(long)]
    ms: PathBuf,
    /// Fusion method: naive, glp, or proposed
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Network weights stem; required by --method proposed
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Resolution ratio between panchromatic and multispectral pixels
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    /// Sensor amplitude at the Nyquist frequency, shaping the blur model
    #[arg(long, default_value_t = 0.3)]
    gnyq: f64,
    /// Weight of the gradient-prior term
    #[arg(long, default_value_t = 0.5)]
    lambda1: f64,
    /// Weight of the Laplacian smoothness term
    #[arg(long, default_value_t = 0.01)]
    lambda2: f64,
    /// ADMM penalty; defaults to twice lambda1
    #[arg(long)]
    rho: Option<f64>,
    /// Minimizer for the proposed method: admm or cg
    #[arg(long, default_value = "admm", value_parser = parse_solver)]
    solver: SolverChoice,
    /// Output raster stem
    #[arg(long, default_value = "fused")]
    out: PathBuf,
    /// Write the solver iteration log to this JSON file (proposed only)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Full-resolution panchromatic stem; repeat for more scenes
    #[arg(long, required = true)]
    pan: Vec<PathBuf>,
    /// Full-resolution multispectral stem; repeat to match --pan
    #[arg(long, required = true)]
    ms: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    #[arg(long, default_value_t = 0.3)]
    gnyq: f64,
    /// Number of convolution blocks
    #[arg(long, default_value_t = 17)]
    depth: usize,
    /// Feature channels per hidden block
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Square patch edge for training crops
    #[arg(long, default_value_t = 40)]
    patch_size: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Fraction of patches held out for a per-epoch validation loss
    #[arg(long, default_value_t = 0.0)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output weights stem
    #[arg(long, default_value = "weights")]
    out: PathBuf,
    /// Write the loss trace to this JSON file
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    pan: PathBuf,
    #[arg(long)]
    ms: PathBuf,
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    #[arg(long, default_value_t = 0.3)]
    gnyq: f64,
    /// Directory receiving pan_low and ms_low rasters
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Image under test, raster stem
    #[arg(long)]
    test: PathBuf,
    /// Reference image, raster stem
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    /// Also write the report to this JSON file
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    #[arg(long, default_value_t = 0.3)]
    gnyq: f64,
    /// Write the kernel description to this JSON file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment description, JSON
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    bands: usize,
    #[arg(long, default_value_t = 4)]
    ratio: usize,
    #[arg(long, default_value_t = 0.3)]
    gnyq: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving pan, ms, and truth rasters
    #[arg(long, default_value = "synth_out")]
    out: PathBuf,
}

/// Prints one line to stdout, exiting quietly when the reading end of a
/// pipe has closed (so `panfuse kernel | head` is not an error).
fn emit(text: std::fmt::Arguments) {
    use std::io::Write;
    if let Err(err) = writeln!(std::io::stdout(), "{text}") {
        if err.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

macro_rules! out {
    ($($arg:tt)*) => { emit(format_args!($($arg)*)) };
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fuse(args) => run_fuse(args),
        Command::Train(args) => run_train(args),
        Command::Degrade(args) => run_degrade(args),
        Command::Metrics(args) => run_metrics(args),
        Command::Kernel(args) => run_kernel(args),
        Command::Experiment(args) => run_experiment_cmd(args),
        Command::Synth(args) => run_synth(args),
    }
}

fn require<T>(value: Option<T>, flag: &str, context: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidInput(format!("{flag} is required {context}")))
}

fn describe(image: &MultiBandImage) -> String {
    format!("{}x{}x{}", image.width(), image.height(), image.bands())
}

fn run_fuse(args: FuseArgs) -> Result<()> {
    let ms = read_image_stem(&args.ms)?;
    let spec = DegradationSpec::mtf(args.ratio, args.gnyq)?;
    let fused = match args.method {
        Method::Naive => fuse_naive(&ms, args.ratio),
        Method::Glp => {
            let pan = read_image_stem(&require(args.pan, "--pan", "for --method glp")?)?;
            fuse_glp_mtf(&ms, &pan, &spec)?
        }
        Method::Proposed => {
            let pan = read_image_stem(&require(args.pan, "--pan", "for --method proposed")?)?;
            let weights = load_weights(&require(
                args.weights,
                "--weights",
                "for --method proposed",
            )?)?;
            let mut params = FusionParams::new(spec);
            params.lambda1 = args.lambda1;
            params.lambda2 = args.lambda2;
            params.rho = args
                .rho
                .unwrap_or(if args.lambda1 > 0.0 { 2.0 * args.lambda1 } else { 1.0 });
            let (fused, report) = fuse_proposed_with(&pan, &ms, &weights, &params, args.solver)?;
            if let Some(path) = &args.report {
                fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            out!(
                "solver ran {} iterations, converged: {}",
                report.iterations, report.converged
            );
            fused
        }
    };
    write_image_stem(&fused, &args.out)?;
    out!("wrote {} ({})", args.out.display(), describe(&fused));
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    if args.pan.len() != args.ms.len() {
        return Err(Error::InvalidInput(format!(
            "{} --pan stems but {} --ms stems",
            args.pan.len(),
            args.ms.len()
        )));
    }
    let spec = DegradationSpec::mtf(args.ratio, args.gnyq)?;
    let config = TrainConfig {
        depth: args.depth,
        width: args.width,
        patch_size: args.patch_size,
        batch_size: args.batch_size,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        seed: args.seed,
        validation_fraction: args.validation_fraction,
    };
    let mut pairs = Vec::new();
    for (pan_path, ms_path) in args.pan.iter().zip(&args.ms) {
        let pan = read_image_stem(pan_path)?;
        let ms = read_image_stem(ms_path)?;
        pairs.extend(make_training_pairs(&pan, &ms, &spec, &config)?);
    }
    out!("training on {} patch pairs", pairs.len());
    let run = train(&pairs, &config)?;
    save_weights(&run.weights, &args.out)?;
    let final_loss = run.loss_trace.last().copied().unwrap_or(f64::NAN);
    out!(
        "wrote {} after {} epochs, final loss {final_loss:.6e}",
        args.out.display(),
        run.loss_trace.len()
    );
    if let Some(path) = &args.report {
        let trace = serde_json::json!({
            "loss_trace": run.loss_trace,
            "validation_trace": run.validation_trace,
        });
        fs::write(path, serde_json::to_string_pretty(&trace)?)?;
    }
    Ok(())
}

fn run_degrade(args: DegradeArgs) -> Result<()> {
    let pan = read_image_stem(&args.pan)?;
    let ms = read_image_stem(&args.ms)?;
    let spec = DegradationSpec::mtf(args.ratio, args.gnyq)?;
    let (pan_low, ms_low) = wald_degrade(&pan, &ms, &spec)?;
    fs::create_dir_all(&args.out)?;
    let pan_out = args.out.join("pan_low");
    let ms_out = args.out.join("ms_low");
    write_image_stem(&pan_low, &pan_out)?;
    write_image_stem(&ms_low, &ms_out)?;
    out!("wrote {} ({})", pan_out.display(), describe(&pan_low));
    out!("wrote {} ({})", ms_out.display(), describe(&ms_low));
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<()> {
    let test = read_image_stem(&args.test)?;
    let reference = read_image_stem(&args.reference)?;
    let report = quality_report(&test, &reference, args.ratio)?;
    let text = serde_json::to_string_pretty(&report)?;
    out!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, text)?;
    }
    Ok(())
}

fn run_kernel(args: KernelArgs) -> Result<()> {
    let kernel = mtf_gaussian_kernel(args.ratio, args.gnyq)?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "ratio": args.ratio,
        "gnyq": kernel.gnyq(),
        "size": kernel.size(),
        "sigma": kernel.sigma(),
        "taps": kernel.taps_1d(),
    }))?;
    match &args.out {
        Some(path) => {
            fs::write(path, text)?;
            out!("wrote {}", path.display());
        }
        None => out!("{text}"),
    }
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    let report = run_experiment(&config)?;
    out!(
        "{:<10} {:>10} {:>10} {:>10} {:>10}",
        "method", "ERGAS", "SAM", "Q", "PSNR"
    );
    for (method, row) in &report.mean {
        out!(
            "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            method.to_string(),
            row.ergas,
            row.sam_degrees,
            row.q,
            row.psnr_db
        );
    }
    let failures: usize = report.scenes.iter().map(|s| s.failures.len()).sum();
    if failures > 0 {
        out!("{failures} scene/method failures; see report.json");
    }
    out!("wrote {}", config.out_dir.join("report.json").display());
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec = DegradationSpec::mtf(args.ratio, args.gnyq)?;
    let scene = synth_scene(args.width, args.height, args.bands, &spec, args.seed)?;
    fs::create_dir_all(&args.out)?;
    for (name, image) in [
        ("pan", &scene.pan),
        ("ms", &scene.ms),
        ("truth", &scene.truth),
    ] {
        let stem = args.out.join(name);
        write_image_stem(image, &stem)?;
        out!("wrote {} ({})", stem.display(), describe(image));
    }
    Ok(())
}
