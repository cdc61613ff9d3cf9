//! `sddql` command-line interface.
//!
//! Subcommands: `despeckle`, `simulate`, `evaluate`, `sweep`, `bench`.
//! Single runs emit JSON reports, grids emit CSV tables. Every command
//! records a [`RunManifest`].

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{parse_epsilon_grid, parse_lambda_grid, BenchRow, SweepRow};
pub use manifest::{RunManifest, SCHEMA_VERSION};

use crate::despeckle::DespeckleParams;
use crate::error::{Error, Result};
use crate::image::{pgm_format_of, ImageFormat};
use crate::simulate::PhantomKind;
use crate::solver::SolverConfig;

#[derive(Debug, Parser)]
#[command(
    name = "sddql",
    version,
    about = "Variational SAR despeckling (quadratic-linear l1 TV)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Despeckle one or more images.
    Despeckle(DespeckleArgs),
    /// Generate a phantom and a speckled observation of it.
    Simulate(SimulateArgs),
    /// SNR and SSIM of an estimate against a clean reference.
    Evaluate(EvaluateArgs),
    /// Quality over a lambda grid for both methods (CSV).
    Sweep(SweepArgs),
    /// Run time and PCG work over an epsilon grid for both methods (CSV).
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pgm8,
    Pgm16,
    Raw32,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pgm8 => ImageFormat::Pgm8,
            FormatArg::Pgm16 => ImageFormat::Pgm16,
            FormatArg::Raw32 => ImageFormat::Raw32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Quadratic reweighting only (alpha = 0).
    Sdd,
    /// Quadratic-linear approximation (alpha from --alpha).
    SddQl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sdd => "sdd",
            Method::SddQl => "sdd-ql",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhantomArg {
    Shapes,
    Checker,
    TextLike,
}

impl From<PhantomArg> for PhantomKind {
    fn from(p: PhantomArg) -> Self {
        match p {
            PhantomArg::Shapes => PhantomKind::Shapes,
            PhantomArg::Checker => PhantomKind::Checker,
            PhantomArg::TextLike => PhantomKind::TextLike,
        }
    }
}

/// File format and raw dimensions.
#[derive(Debug, Clone, Args)]
pub struct ImageArgs {
    /// Image format; inferred from the extension when omitted (.pgm, .raw/.f32).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Width for raw32 input.
    #[arg(long)]
    pub width: Option<usize>,
    /// Height for raw32 input.
    #[arg(long)]
    pub height: Option<usize>,
}

impl ImageArgs {
    fn dims(&self) -> Option<(usize, usize)> {
        self.width.zip(self.height)
    }

    fn format_for(&self, path: &Path) -> Result<ImageFormat> {
        if let Some(f) = self.format {
            return Ok(f.into());
        }
        infer_format(path)
    }
}

pub fn infer_format(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => {
            if path.exists() {
                pgm_format_of(path)
            } else {
                Ok(ImageFormat::Pgm8)
            }
        }
        Some("raw") | Some("f32") | Some("bin") => Ok(ImageFormat::Raw32),
        _ => Err(Error::InvalidParameter(format!(
            "cannot infer image format of {}; pass --format",
            path.display()
        ))),
    }
}

/// Despeckling parameters. lambda scales with the data's dynamic range:
/// 100 suits 16-bit amplitudes, 8-bit data usually wants a retuned value
/// (see `sweep`).
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    /// Quadratic/linear blend in [0, 1]; defaults to 0.5 (0 with --method sdd).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Outer iterations.
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub pcg_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub pcg_max_iters: usize,
    /// `sdd` is shorthand for `--alpha 0`.
    #[arg(long, value_enum, default_value_t = Method::SddQl)]
    pub method: Method,
}

impl ParamArgs {
    pub fn params(&self) -> Result<DespeckleParams> {
        let alpha = match (self.method, self.alpha) {
            (Method::Sdd, Some(a)) if a != 0.0 => {
                return Err(Error::InvalidParameter(format!(
                    "--method sdd implies alpha 0, got --alpha {a}"
                )))
            }
            (Method::Sdd, _) => 0.0,
            (Method::SddQl, a) => a.unwrap_or(0.5),
        };
        let p = DespeckleParams {
            lambda: self.lambda,
            epsilon: self.epsilon,
            alpha,
            n_max: self.iters,
            solver: SolverConfig {
                tol: self.pcg_tol,
                max_iters: self.pcg_max_iters,
                ..SolverConfig::default()
            },
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DespeckleArgs {
    /// Input image; repeat for a batch.
    #[arg(long, required = true, num_args = 1)]
    pub input: Vec<PathBuf>,
    /// Output image, or a directory when several inputs are given.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Workers for batch processing.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    /// JSON report path (single input only; defaults to <output>.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {s}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = PhantomArg::Shapes)]
    pub phantom: PhantomArg,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Number of looks.
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub looks: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Comma-separated region levels, background first.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Output directory; receives clean.<ext>, speckled.<ext> and manifest.json.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Raw32)]
    pub format: FormatArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Clean reference image.
    #[arg(long)]
    pub clean: PathBuf,
    /// Image under test.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    /// Fixed SSIM dynamic range (default: max - min of the clean image).
    #[arg(long)]
    pub dynamic_range: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub clean: PathBuf,
    /// Speckled observation.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    /// `lo:hi:count`, inclusive linear spacing.
    #[arg(long, default_value = "10:400:20")]
    pub lambda_grid: String,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Alpha used for the sdd-ql rows.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub pcg_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub pcg_max_iters: usize,
    /// CSV output.
    #[arg(long)]
    pub output: PathBuf,
    /// Print the argmax-SNR and argmax-SSIM rows of each method to stdout.
    #[arg(long)]
    pub best: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Input image; a speckled phantom is generated when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long, value_enum, default_value_t = PhantomArg::Shapes)]
    pub phantom: PhantomArg,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub looks: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Comma-separated epsilon values.
    #[arg(long, default_value = "1e-1,1e-2,1e-3,1e-4,1e-5")]
    pub epsilon_grid: String,
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    /// Alpha used for the sdd-ql rows.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub pcg_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub pcg_max_iters: usize,
    /// Timed repetitions per row; the fastest is reported.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Recorded in the manifest; benchmark runs are sequential.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    /// CSV output.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run. Returns the process
/// exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let result = match &cli.command {
        Command::Despeckle(a) => commands::despeckle(a, &argv),
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Evaluate(a) => commands::evaluate(a, &argv),
        Command::Sweep(a) => commands::sweep(a, &argv),
        Command::Bench(a) => commands::bench(a, &argv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter(_) => 2,
                _ => 1,
            }
        }
    }
}
