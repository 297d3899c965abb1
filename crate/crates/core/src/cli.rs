//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal failure (kernel fault or broken
//! determinism), 2 file, parse or usage errors, 3 oracle tolerance breach.
//! Results go to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::mnist::{self, MnistImages, MnistLabels};
use crate::model::{self, generate_random_model, ModelSpec, Topology, DEFAULT_TOPOLOGY};
use crate::numerics::Grid2D;
use crate::pipeline::{self, ForwardError};

#[derive(Debug, Parser)]
#[command(
    name = "tgcnn",
    version,
    about = "CNN inference on a simulated GPU threadgroup"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify IDX images with a model.
    Classify(ClassifyArgs),
    /// Compare the threadgroup forward pass against the sequential oracle.
    OracleDiff(OracleDiffArgs),
    /// Time forward passes for several worker counts.
    Bench(BenchArgs),
    /// Check a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write a seeded random model.
    GenModel {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_TOPOLOGY)]
        topology: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Process at most N images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// One JSON object per line instead of tab-separated text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct OracleDiffArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f32,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    workers: Vec<usize>,
}

/// A failed command: exit code plus message for stderr.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn internal(message: impl Display) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

impl From<ForwardError> for Failure {
    fn from(e: ForwardError) -> Self {
        if e.is_fault() {
            internal(e)
        } else {
            usage(e)
        }
    }
}

fn read_file(path: &Path, what: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {what} `{}`: {e}", path.display())))
}

fn load_model_file(path: &Path) -> Result<ModelSpec, Failure> {
    let bytes = read_file(path, "model file")?;
    let text = String::from_utf8(bytes)
        .map_err(|e| usage(format!("{}: not UTF-8: {e}", path.display())))?;
    model::load_model(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_images(path: &Path) -> Result<MnistImages, Failure> {
    let bytes = read_file(path, "image file")?;
    mnist::read_idx_images(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_labels(path: &Path) -> Result<MnistLabels, Failure> {
    let bytes = read_file(path, "label file")?;
    mnist::read_idx_labels(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn resolve_workers(w: Option<usize>) -> Result<usize, Failure> {
    match w {
        Some(0) => Err(usage("--workers must be at least 1")),
        Some(w) => Ok(w),
        None => Ok(default_workers()),
    }
}

impl Inputs {
    fn load(&self) -> Result<(ModelSpec, Vec<Grid2D>), Failure> {
        let model = load_model_file(&self.model)?;
        let mut images = load_images(&self.images)?.images;
        if let Some(limit) = self.limit {
            images.truncate(limit);
        }
        Ok((model, images))
    }
}

fn out_err(e: std::io::Error) -> Failure {
    internal(format!("cannot write output: {e}"))
}

fn classify(args: &ClassifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (model, images) = args.inputs.load()?;
    let workers = resolve_workers(args.workers)?;
    let labels = match &args.labels {
        Some(path) => {
            let labels = load_labels(path)?;
            if labels.labels.len() < images.len() {
                return Err(usage(format!(
                    "{}: {} labels for {} images",
                    path.display(),
                    labels.labels.len(),
                    images.len()
                )));
            }
            Some(labels.labels)
        }
        None => None,
    };

    let mut correct = 0usize;
    for (i, image) in images.iter().enumerate() {
        let p = pipeline::classify(&model, image, workers)?;
        let expected = labels.as_ref().map(|l| usize::from(l[i]));
        if expected == Some(p.label) {
            correct += 1;
        }
        if args.json {
            let mut obj = json!({ "index": i, "label": p.label, "confidence": p.confidence });
            if let Some(e) = expected {
                obj["expected"] = json!(e);
            }
            writeln!(out, "{obj}").map_err(out_err)?;
        } else {
            write!(out, "{i}\t{}\t{:.6}", p.label, p.confidence).map_err(out_err)?;
            if let Some(e) = expected {
                write!(out, "\t{e}").map_err(out_err)?;
            }
            writeln!(out).map_err(out_err)?;
        }
    }

    if labels.is_some() {
        let total = images.len();
        let accuracy = if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        };
        if args.json {
            writeln!(
                out,
                "{}",
                json!({ "accuracy": accuracy, "correct": correct, "total": total })
            )
            .map_err(out_err)?;
        } else {
            writeln!(out, "accuracy\t{correct}/{total}\t{:.2}%", accuracy * 100.0)
                .map_err(out_err)?;
        }
    }
    Ok(())
}

fn oracle_diff(args: &OracleDiffArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (model, images) = args.inputs.load()?;
    let workers = resolve_workers(args.workers)?;
    let mut worst: Option<(usize, f32)> = None;
    for (i, image) in images.iter().enumerate() {
        let (parallel, _) = pipeline::forward(&model, image, workers)?;
        let reference = pipeline::forward_oracle(&model, image)?;
        let deviation = parallel
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        writeln!(out, "{i}\t{deviation:e}").map_err(out_err)?;
        if worst.is_none_or(|(_, d)| deviation > d) {
            worst = Some((i, deviation));
        }
    }
    match worst {
        None => {
            writeln!(out, "max deviation 0 over 0 images").map_err(out_err)?;
            Ok(())
        }
        Some((i, d)) => {
            writeln!(out, "max deviation {d:e} at image {i}").map_err(out_err)?;
            if d > args.tolerance {
                Err(Failure {
                    code: 3,
                    message: format!(
                        "tolerance breach: image {i} deviates by {d:e} (tolerance {:e})",
                        args.tolerance
                    ),
                })
            } else {
                Ok(())
            }
        }
    }
}

fn bench(args: &BenchArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (model, images) = args.inputs.load()?;
    if images.is_empty() {
        return Err(usage("no images to benchmark"));
    }
    if args.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    if args.workers.contains(&0) {
        return Err(usage("--workers entries must be at least 1"));
    }

    let mut baseline: Option<Vec<Vec<f32>>> = None;
    writeln!(out, "workers\tmean_us\tmin_us").map_err(out_err)?;
    for &workers in &args.workers {
        let mut per_image = Vec::with_capacity(args.repeat);
        let mut probs = Vec::with_capacity(images.len());
        for _ in 0..args.repeat {
            probs.clear();
            let start = Instant::now();
            for image in &images {
                probs.push(pipeline::forward(&model, image, workers)?.0);
            }
            per_image.push(start.elapsed().as_secs_f64() * 1e6 / images.len() as f64);
        }
        match &baseline {
            None => baseline = Some(probs),
            Some(b) if *b != probs => {
                return Err(internal(format!(
                    "probabilities with {workers} workers differ from {} workers",
                    args.workers[0]
                )))
            }
            Some(_) => {}
        }
        let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
        let min = per_image.iter().copied().fold(f64::INFINITY, f64::min);
        writeln!(out, "{workers}\t{mean:.1}\t{min:.1}").map_err(out_err)?;
    }
    Ok(())
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model_file(path)?;
    writeln!(
        out,
        "OK: {} ({} layers, input {}x{}, {} classes)",
        model.name,
        model.layers.len(),
        model.input.height,
        model.input.width,
        model.classes()
    )
    .map_err(out_err)
}

fn gen_model(seed: u64, topology: &str, path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let topology: Topology = topology.parse().map_err(usage)?;
    let model = generate_random_model(seed, &topology)
        .map_err(|e| usage(format!("topology {topology}: {e}")))?;
    std::fs::write(path, model::save_model(&model))
        .map_err(|e| usage(format!("cannot write `{}`: {e}", path.display())))?;
    writeln!(out, "wrote {} ({topology}, seed {seed})", path.display()).map_err(out_err)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Classify(a) => classify(a, out),
        Command::OracleDiff(a) => oracle_diff(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Validate { model } => validate(model, out),
        Command::GenModel {
            seed,
            topology,
            out: path,
        } => gen_model(*seed, topology, path, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
