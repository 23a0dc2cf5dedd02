//! Command-line front end: synthesize, corrupt, learn, denoise, evaluate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cdict::basis::{read_dictionary_file, write_dictionary_file, BasisSpec, Dictionary};
use cdict::cloud_io::{
    add_noise, read_cloud, synth_cloud, write_cloud, CloudFormat, NoiseSpec, PointCloud, Shape,
};
use cdict::dictlearn::{extract_training_set, learn, LearnParams};
use cdict::geometry::CenterStrategy;
use cdict::pipeline::{chamfer_distance, denoise, rmse_to_surface, DenoiseParams};
use cdict::pursuit::{PursuitParams, SolverKind};
use cdict::{Error, Result};

fn parse_shape(s: &str) -> Result<Shape> {
    Shape::from_str(s)
}

fn parse_strategy(s: &str) -> Result<CenterStrategy> {
    CenterStrategy::from_str(s)
}

fn parse_solver(s: &str) -> Result<SolverKind> {
    SolverKind::from_str(s)
}

#[derive(Parser)]
#[command(
    name = "cdict",
    version,
    about = "Sparse coding over continuous dictionaries for point-cloud denoising"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic surface (plane, sphere or saddle).
    Synth(SynthArgs),
    /// Add seeded isotropic Gaussian noise to a cloud.
    Noise(NoiseArgs),
    /// Learn a continuous dictionary from a training cloud.
    Learn(LearnArgs),
    /// Denoise a cloud against a dictionary.
    Denoise(DenoiseArgs),
    /// Evaluate clouds: Chamfer distance and/or RMSE to an analytic surface.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Surface to sample: plane, sphere or saddle.
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    /// Number of points.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (.ply for ASCII PLY, anything else XYZ).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Per-coordinate Gaussian standard deviation, world units.
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LearnArgs {
    /// Training cloud.
    #[arg(long)]
    input: PathBuf,
    /// Patch ball radius, world units.
    #[arg(long)]
    radius: f64,
    /// Patch center selection: all or poisson_stride.
    #[arg(long, default_value = "poisson_stride", value_parser = parse_strategy)]
    strategy: CenterStrategy,
    /// Basis frequency limit along u.
    #[arg(long, default_value_t = 5)]
    max_freq_u: usize,
    /// Basis frequency limit along v.
    #[arg(long, default_value_t = 5)]
    max_freq_v: usize,
    /// Dictionary size M.
    #[arg(long, default_value_t = 36)]
    n_atoms: usize,
    /// Sparsity cap L for the coding stage.
    #[arg(long = "sparsity-L", default_value_t = 2)]
    sparsity_l: usize,
    #[arg(long, default_value_t = 20)]
    outer_iters: usize,
    /// Early-stop threshold on the mean per-sample squared residual.
    #[arg(long, default_value_t = 0.0)]
    error_threshold: f64,
    /// Relative ridge for the atom update.
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip patches with fewer members than this.
    #[arg(long, default_value_t = 8)]
    min_patch_points: usize,
    /// Worker threads (0 = all cores). Results are thread-count independent.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output dictionary file (CDICT v1).
    #[arg(long)]
    dict_out: PathBuf,
    /// Output per-iteration error trace (CSV).
    #[arg(long)]
    trace_out: PathBuf,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy cloud.
    #[arg(long)]
    input: PathBuf,
    /// Dictionary file; omit to use the unlearned cosine dictionary defined
    /// by --max-freq-u/--max-freq-v/--n-atoms.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value = "poisson_stride", value_parser = parse_strategy)]
    strategy: CenterStrategy,
    /// Pursuit solver: omp or relaxed.
    #[arg(long, default_value = "relaxed", value_parser = parse_solver)]
    solver: SolverKind,
    /// Sparsity cap L (omp solver).
    #[arg(long = "sparsity-L", default_value_t = 4)]
    sparsity_l: usize,
    /// Fixed l1 weight (relaxed solver). Ignored when --noise-sigma is set.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Noise estimate in world units; derives a per-patch lambda.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// OMP early-stop residual norm.
    #[arg(long, default_value_t = 0.0)]
    residual_tol: f64,
    /// Iteration cap for the relaxed solver.
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 8)]
    min_patch_points: usize,
    /// Basis frequency limit along u (unlearned dictionary).
    #[arg(long, default_value_t = 5)]
    max_freq_u: usize,
    /// Basis frequency limit along v (unlearned dictionary).
    #[arg(long, default_value_t = 5)]
    max_freq_v: usize,
    /// Atom count (unlearned dictionary).
    #[arg(long, default_value_t = 36)]
    n_atoms: usize,
    /// Worker threads (0 = all cores). Results are thread-count independent.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Optional path for the run report (key-value text).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cloud_a: PathBuf,
    /// Second cloud for the Chamfer distance.
    #[arg(long)]
    cloud_b: Option<PathBuf>,
    /// Analytic surface for RMSE of cloud A.
    #[arg(long, value_parser = parse_shape)]
    shape: Option<Shape>,
}

fn read(path: &Path) -> Result<PointCloud> {
    read_cloud(path, CloudFormat::from_path(path))
}

fn write(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_cloud(cloud, path, CloudFormat::from_path(path))
}

fn with_thread_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParam(format!("failed to build thread pool: {e}")))?;
    pool.install(f)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cloud = synth_cloud(args.shape, args.n, args.seed)?;
    write(&cloud, &args.out)?;
    println!("points {}", cloud.len());
    Ok(())
}

fn cmd_noise(args: NoiseArgs) -> Result<()> {
    let cloud = read(&args.input)?;
    let noisy = add_noise(
        &cloud,
        &NoiseSpec {
            sigma: args.sigma,
            seed: args.seed,
        },
    )?;
    write(&noisy, &args.output)?;
    println!("points {}", noisy.len());
    Ok(())
}

fn cmd_learn(args: LearnArgs) -> Result<()> {
    let cloud = read(&args.input)?;
    let params = LearnParams {
        n_atoms: args.n_atoms,
        basis: BasisSpec::new(args.max_freq_u, args.max_freq_v),
        sparsity_l: args.sparsity_l,
        outer_iters: args.outer_iters,
        error_threshold: args.error_threshold,
        seed: args.seed,
        inner_ls_ridge: args.ridge,
    };
    let (dict, trace) = with_thread_pool(args.threads, || {
        let (train, skipped) =
            extract_training_set(&cloud, args.radius, args.strategy, args.min_patch_points)?;
        if train.is_empty() {
            return Err(Error::InvalidParam(format!(
                "no usable training patches: all {skipped} candidate neighborhoods were too small or degenerate (radius {}, min {} points)",
                args.radius, args.min_patch_points
            )));
        }
        eprintln!("training on {} patches ({} skipped)", train.len(), skipped);
        learn(&train, &params)
    })?;

    write_dictionary_file(&dict, &args.dict_out)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&args.trace_out)?);
    trace.write_csv(&mut csv)?;
    std::io::Write::flush(&mut csv)?;
    println!("iterations {}", trace.len());
    if let Some(err) = trace.per_iteration_error.last() {
        println!("final_error {err}");
    }
    Ok(())
}

fn cmd_denoise(args: DenoiseArgs) -> Result<()> {
    let cloud = read(&args.input)?;
    let dict = match &args.dict {
        Some(path) => read_dictionary_file(path)?,
        None => Dictionary::identity_init(
            BasisSpec::new(args.max_freq_u, args.max_freq_v),
            args.n_atoms,
        )?,
    };
    let params = DenoiseParams {
        radius: args.radius,
        center_strategy: args.strategy,
        pursuit: PursuitParams {
            sparsity_l: args.sparsity_l,
            residual_tol: args.residual_tol,
            lambda: args.lambda,
            max_iters: args.max_iters,
        },
        solver: args.solver,
        min_patch_points: args.min_patch_points,
        noise_sigma: args.noise_sigma,
    };
    let (denoised, report) = with_thread_pool(args.threads, || denoise(&cloud, &dict, &params))?;
    write(&denoised, &args.output)?;
    let text = report.to_text();
    if let Some(path) = &args.report {
        std::fs::write(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.cloud_b.is_none() && args.shape.is_none() {
        return Err(Error::InvalidParam(
            "eval needs --cloud-b and/or --shape".into(),
        ));
    }
    let a = read(&args.cloud_a)?;
    if let Some(path) = &args.cloud_b {
        let b = read(path)?;
        println!("chamfer {}", chamfer_distance(&a, &b)?);
    }
    if let Some(shape) = args.shape {
        if a.is_empty() {
            return Err(Error::EmptyCloud);
        }
        println!("rmse {}", rmse_to_surface(&a, shape));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Noise(args) => cmd_noise(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Denoise(args) => cmd_denoise(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
