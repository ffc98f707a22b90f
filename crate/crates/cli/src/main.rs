use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use flipflow::experiment::{run_experiment, write_outputs, ExperimentKind, ExperimentSpec};
use flipflow::relunet::{format_dims, validate_dims};
use flipflow::{Error, NetworkWeights, Result, RngState};

#[derive(Parser)]
#[command(name = "flipflow", version, about = "Gradient-flow sign-flip attacks on random ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack random normalized networks across input dimensions.
    Scaling(RunArgs),
    /// Surjectivity constants of Gaussian submatrices.
    Surjectivity(RunArgs),
    /// Monte-Carlo tail-sum statistics of squared Gaussians.
    Tailsum(RunArgs),
    /// Typical-example pass rates of random networks.
    Typicality(RunArgs),
    /// Train parity classifiers on MNIST (or synthetic data) and attack them.
    Mnist(MnistArgs),
    /// Attack a single network.
    Attack(RunArgs),
    /// Write a normalized random network as JSON.
    GenNet(GenNetArgs),
    /// Compare exact input gradients against central differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (must not already hold a run).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MnistArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory with the four IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Fall back to a synthetic separable dataset when the IDX files are absent.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Args)]
struct GenNetArgs {
    /// Layer widths, e.g. 512-64-8-1.
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckGradArgs {
    /// Network JSON; a random network with --dims is used otherwise.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long, default_value = "50-20-5-1")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 1e-6)]
    fd_step: f64,
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims = s
        .split(['-', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|e| Error::Spec(format!("bad width {p:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    validate_dims(&dims).map_err(|e| Error::Spec(e.to_string()))?;
    Ok(dims)
}

fn load_spec(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentSpec> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
            ExperimentSpec::from_json(&text)?
        }
        None => ExperimentSpec::default_for(kind),
    };
    if spec.kind != kind {
        return Err(Error::Spec(format!(
            "spec kind {} does not match subcommand {}",
            spec.kind.as_str(),
            kind.as_str()
        )));
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if let Some(out) = &args.out {
        spec.output = Some(out.clone());
    }
    Ok(spec)
}

fn run(kind: ExperimentKind, args: &RunArgs, edit: impl FnOnce(&mut ExperimentSpec)) -> Result<()> {
    let mut spec = load_spec(kind, args)?;
    edit(&mut spec);
    spec.validate()?;
    let dir = spec
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", kind.as_str(), spec.seed)));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Spec(e.to_string()))?;
    let start = Instant::now();
    let output = pool.install(|| run_experiment(&spec))?;
    write_outputs(&dir, &spec, &output, start.elapsed().as_secs_f64())?;
    print!("{}", output.aggregates.to_csv()?);
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn gen_net(args: &GenNetArgs) -> Result<()> {
    let dims = parse_dims(&args.dims)?;
    let net = NetworkWeights::random_normalized(&dims, RngState::new(args.seed, args.stream))?;
    net.save(&args.out)?;
    eprintln!("wrote {} network to {}", format_dims(&dims), args.out.display());
    Ok(())
}

fn check_grad(args: &CheckGradArgs) -> Result<()> {
    let net = match &args.net {
        Some(path) => NetworkWeights::load(path)?,
        None => NetworkWeights::random_normalized(&parse_dims(&args.dims)?, RngState::new(args.seed, 0))?,
    };
    let d = net.input_dim();
    let mut errors = Vec::new();
    let mut skipped = 0usize;
    let mut index = 0u64;
    while errors.len() < args.points {
        if skipped > 100 * args.points.max(1) {
            return Err(Error::SamplingFailure { attempts: skipped });
        }
        let x = flipflow::attack::sphere_start(d, RngState::new(args.seed, 1).derive(index));
        index += 1;
        match net.gradient_check(&x, args.fd_step) {
            Ok(err) => errors.push(err),
            Err(Error::KinkProximity { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let max = errors.iter().copied().fold(0.0f64, f64::max);
    println!(
        "{}",
        serde_json::json!({
            "dims": net.dims(),
            "points": errors.len(),
            "skipped_near_kink": skipped,
            "max_scaled_error": max,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Scaling(a) => run(ExperimentKind::Scaling, a, |_| {}),
        Command::Surjectivity(a) => run(ExperimentKind::Surjectivity, a, |_| {}),
        Command::Tailsum(a) => run(ExperimentKind::Tailsum, a, |_| {}),
        Command::Typicality(a) => run(ExperimentKind::Typicality, a, |_| {}),
        Command::Attack(a) => run(ExperimentKind::AttackSingle, a, |_| {}),
        Command::Mnist(a) => run(ExperimentKind::Mnist, &a.run, |s| {
            if let Some(dir) = &a.data_dir {
                s.mnist.data_dir = Some(dir.clone());
            }
            if a.synthetic {
                s.mnist.synthetic_fallback = true;
            }
        }),
        Command::GenNet(a) => gen_net(a),
        Command::CheckGrad(a) => check_grad(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_spec_error() {
                ExitCode::from(2)
            } else if e.is_data_error() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
