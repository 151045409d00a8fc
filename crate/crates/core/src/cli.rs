//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::denoise::{
    add_noise, denoise_image, psnr, CodingMethod, DenoiseSettings, DEFAULT_PATCH_SIZE,
    DEFAULT_REFIT_TAU, DEFAULT_STRIDE,
};
use crate::error::Error;
use crate::io::{read_matrix_csv, read_pgm, tile_basis, write_matrix_csv, write_pgm};
use crate::oracles::OracleKind;
use crate::regularizer::RegParams;
use crate::solvers::{alternating_optimization, boosted_coding, SolverOptions, WeightSolver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dictboost",
    version,
    about = "Convex boosted coding and patch-based denoising"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Denoise a PGM image by coding its patches
    Denoise(DenoiseArgs),
    /// Add seeded Gaussian noise to a PGM image
    Noise(NoiseArgs),
    /// Print the PSNR between two PGM images
    Psnr(PsnrArgs),
    /// Learn a basis for a CSV matrix (rows are dimensions, columns examples)
    Train(TrainArgs),
}

#[derive(Debug, Args)]
struct CodingArgs {
    #[arg(long, default_value = "boosted")]
    method: CodingMethod,
    /// Basis-vector oracle for the boosted method: l1, l21, heuristic or exemplar
    #[arg(long, default_value = "heuristic")]
    oracle: OracleKind,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Basis budget
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Seed for the alternating method's initial basis
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight optimizer for the boosted method: proximal or subgradient
    #[arg(long, default_value = "proximal")]
    weight_solver: WeightSolver,
    #[arg(long, default_value_t = 2000)]
    w_max_iters: usize,
    /// Alternations of the alternating method
    #[arg(long, default_value_t = 20)]
    alt_iters: usize,
}

impl CodingArgs {
    fn params(&self) -> Result<RegParams, Error> {
        RegParams::new(self.lambda, self.gamma)
    }

    fn options(&self) -> Result<SolverOptions, Error> {
        let opts = SolverOptions {
            max_basis: self.d,
            w_max_iters: self.w_max_iters,
            weight_solver: self.weight_solver,
            alt_iters: self.alt_iters,
            seed: self.seed,
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Clean reference; enables PSNR fields in the report
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON report path
    #[arg(long)]
    report: Option<PathBuf>,
    /// Tiled basis image path
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    #[command(flatten)]
    coding: CodingArgs,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PsnrArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Basis CSV path
    #[arg(long)]
    out: PathBuf,
    /// Optional weights CSV path
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    coding: CodingArgs,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) => EXIT_USAGE,
        _ => EXIT_IO,
    }
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Denoise(args) => denoise(args),
        Command::Noise(args) => noise(args),
        Command::Psnr(args) => psnr_cmd(args),
        Command::Train(args) => train(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn denoise(args: DenoiseArgs) -> Result<(), Error> {
    let params = args.coding.params()?;
    let opts = args.coding.options()?;
    let settings = DenoiseSettings {
        method: args.coding.method,
        oracle: args.coding.oracle,
        patch_size: args.patch_size,
        stride: args.stride,
        refit_tau: DEFAULT_REFIT_TAU,
    };
    let noisy = read_pgm(&args.input)?;
    let clean = args.clean.as_deref().map(read_pgm).transpose()?;
    let out = denoise_image(&noisy, clean.as_ref(), &settings, &params, &opts)?;
    write_pgm(&args.out, &out.image)?;
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
        std::fs::write(path, json + "\n")?;
    }
    if let Some(path) = &args.basis {
        write_pgm(path, &tile_basis(&out.coding.basis, args.patch_size)?)?;
    }
    let r = &out.report;
    match (r.psnr_noisy, r.psnr_patch_avg, r.psnr_denoised) {
        (Some(n), Some(p), Some(d)) => println!(
            "basis {} | psnr noisy {n:.2} dB, patch average {p:.2} dB, denoised {d:.2} dB",
            r.basis_size
        ),
        _ => println!("basis {}", r.basis_size),
    }
    Ok(())
}

fn noise(args: NoiseArgs) -> Result<(), Error> {
    let img = read_pgm(&args.input)?;
    write_pgm(&args.out, &add_noise(&img, args.sigma, args.seed)?)
}

fn psnr_cmd(args: PsnrArgs) -> Result<(), Error> {
    let a = read_pgm(&args.a)?;
    let b = read_pgm(&args.b)?;
    println!("{:.2}", psnr(&a, &b)?);
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let params = args.coding.params()?;
    let opts = args.coding.options()?;
    let x = read_matrix_csv(&args.input)?;
    if opts.max_basis >= x.rows() * x.cols() {
        eprintln!(
            "warning: basis budget {} is not smaller than the data size {}x{}",
            opts.max_basis,
            x.rows(),
            x.cols()
        );
    }
    let result = match args.coding.method {
        CodingMethod::Boosted => boosted_coding(&x, &params, args.coding.oracle, &opts)?,
        CodingMethod::Alternating => {
            alternating_optimization(&x, opts.max_basis, params.lambda, &opts)?
        }
    };
    write_matrix_csv(&args.out, &result.basis)?;
    if let Some(path) = &args.weights {
        write_matrix_csv(path, &result.weights)?;
    }
    println!(
        "basis {} | objective {} | stopped early {}",
        result.basis_size(),
        result
            .objective_trace
            .last()
            .map_or("n/a".to_string(), |v| format!("{v:.6e}")),
        result.stopped_early
    );
    Ok(())
}
