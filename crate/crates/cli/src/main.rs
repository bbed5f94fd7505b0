use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quantrack::bench::{
    self, mixture_baseline, run_tracking_with, write_grid_csv, write_trace_row, GridResult, Replicates,
    RunOptions, TRACE_HEADER,
};
use quantrack::controllers::{log_spaced_grid, GridExtension, HilConfig, OracleConfig};
use quantrack::mse_tracking::{default_q_tilde, rule_of_thumb, SmoothingParams};
use quantrack::streams::{
    ingest_timestamps, read_samples, read_timestamps, ChiSqSineSpec, DataStream, NormalSineSpec, Regimes,
    SampleStream, SyntheticStream,
};
use quantrack::{ControllerSpec, EstimatorKind, FrugalRule, StreamSpec, Target};

/// Adaptive quantile tracking with online MSE-guided step sizes.
#[derive(Parser, Debug)]
#[command(name = "quantrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track a quantile over a synthetic stream or an input file and write a trace CSV.
    Track(TrackArgs),
    /// Observed MSE of constant step sizes over a grid.
    Grid(GridArgs),
    /// Write synthetic samples with their true quantiles.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StreamKind {
    /// Normal with sinusoidal location
    NormalSine,
    /// Chi-square with sinusoidal degrees of freedom
    ChisqSine,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EstimatorArg {
    Dumiqe,
    Frugal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ControllerArg {
    Oracle,
    Hil,
    Fixed,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Transform {
    /// Lines are timestamps; track reciprocal inter-arrival times
    Rate,
    /// Lines are the samples themselves
    None,
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// Synthetic stream family
    #[arg(long, value_enum, default_value_t = StreamKind::NormalSine)]
    stream: StreamKind,
    /// Normal stream location mu
    #[arg(long, default_value_t = 8.0)]
    mu: f64,
    /// Sine amplitude b (both families)
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    amplitude: f64,
    /// Normal stream scale sigma
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Chi-square base degrees of freedom nu
    #[arg(long, default_value_t = 6.0)]
    nu: f64,
    /// Sine period of the fast regime
    #[arg(long, default_value_t = 500)]
    tau1: u64,
    /// Sine period of the slow regime
    #[arg(long, default_value_t = 10_000)]
    tau2: u64,
    /// Length T of each regime segment; regimes alternate with period 2T
    #[arg(long, default_value_t = 10_000)]
    t_switch: u64,
}

impl StreamArgs {
    fn spec(&self) -> Result<StreamSpec> {
        let regimes = Regimes {
            tau1: self.tau1,
            tau2: self.tau2,
            t_switch: self.t_switch,
        };
        let spec = match self.stream {
            StreamKind::NormalSine => StreamSpec::NormalSine(NormalSineSpec {
                mu: self.mu,
                amplitude: self.amplitude,
                sigma: self.sigma,
                regimes,
            }),
            StreamKind::ChisqSine => StreamSpec::ChiSqSine(ChiSqSineSpec {
                nu: self.nu,
                amplitude: self.amplitude,
                regimes,
            }),
        };
        spec.validate().context("invalid stream parameters")?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct EstimatorArgs {
    /// Incremental estimator
    #[arg(long, value_enum, default_value_t = EstimatorArg::Dumiqe)]
    estimator: EstimatorArg,
    /// Use the Frugal indicator conditions exactly as first published (they
    /// drift away from the target; kept for comparison)
    #[arg(long)]
    frugal_literal: bool,
    /// Quantile probability q
    #[arg(long, default_value_t = 0.7)]
    q: f64,
}

impl EstimatorArgs {
    fn kind(&self) -> Result<EstimatorKind> {
        match (self.estimator, self.frugal_literal) {
            (EstimatorArg::Dumiqe, true) => bail!("--frugal-literal only applies to --estimator frugal"),
            (EstimatorArg::Dumiqe, false) => Ok(EstimatorKind::Dumiqe),
            (EstimatorArg::Frugal, false) => Ok(EstimatorKind::Frugal(FrugalRule::Converging)),
            (EstimatorArg::Frugal, true) => Ok(EstimatorKind::Frugal(FrugalRule::Literal)),
        }
    }
}

#[derive(Args, Debug)]
struct SmoothingArgs {
    /// Auxiliary probability for the slope estimate [default: q+0.1 if q <= 0.5, else q-0.1]
    #[arg(long)]
    q_tilde: Option<f64>,
    /// Horizon M for the rule-of-thumb weight 1 - 0.01^(1/M) used by beta, gamma, kappa and eta
    #[arg(long, default_value_t = 1500)]
    horizon: u32,
    /// Weight of the running mean of the estimate
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Variance weight [default: from --horizon]
    #[arg(long)]
    beta: Option<f64>,
    /// Portion-below weight [default: from --horizon]
    #[arg(long)]
    gamma: Option<f64>,
    /// Squared-bias weight [default: from --horizon]
    #[arg(long)]
    kappa: Option<f64>,
    /// Slope weight [default: from --horizon]
    #[arg(long)]
    eta: Option<f64>,
}

impl SmoothingArgs {
    fn target(&self, kind: EstimatorKind, q: f64) -> Result<Target> {
        let w = rule_of_thumb(self.horizon)?;
        let smoothing = SmoothingParams {
            alpha: self.alpha,
            beta: self.beta.unwrap_or(w),
            gamma: self.gamma.unwrap_or(w),
            kappa: self.kappa.unwrap_or(w),
            eta: self.eta.unwrap_or(w),
        };
        let target = Target {
            kind,
            q,
            q_tilde: self.q_tilde.unwrap_or_else(|| default_q_tilde(q)),
            smoothing,
        };
        target.validate().context("invalid quantile or smoothing settings")?;
        Ok(target)
    }
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    grid: LambdaGridArgs,
    /// Number of samples per step size
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    /// Seeds; one grid is run per seed (comma separated or repeated)
    #[arg(long = "seed", env = "QUANTRACK_SEED", value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Also run the fast-only and slow-only streams and report 0.5 * best_fast + 0.5 * best_slow
    #[arg(long)]
    mixture: bool,
    /// Output CSV path [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LambdaGridArgs {
    /// Natural log of the smallest grid step size
    #[arg(long, default_value_t = -7.0, allow_negative_numbers = true)]
    grid_log_min: f64,
    /// Natural log of the largest grid step size
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    grid_log_max: f64,
    /// Number of log-spaced grid points (141 gives spacing 0.05)
    #[arg(long, default_value_t = 141)]
    grid_points: usize,
}

impl LambdaGridArgs {
    fn grid(&self) -> Result<Vec<f64>> {
        Ok(log_spaced_grid(self.grid_log_min, self.grid_log_max, self.grid_points)?)
    }
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Read samples or timestamps from a file ('-' for stdin) instead of a synthetic stream
    #[arg(long)]
    input: Option<PathBuf>,
    /// How input lines are turned into samples
    #[arg(long, value_enum, default_value_t = Transform::None, requires = "input")]
    transform: Transform,
    /// Timestamp resolution in seconds; each timestamp gets Uniform(0, resolution) added
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Step-size controller
    #[arg(long, value_enum, default_value_t = ControllerArg::Oracle)]
    controller: ControllerArg,
    /// Step size of the fixed controller
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[command(flatten)]
    grid: LambdaGridArgs,
    /// Let the oracle's selected index move at most one grid step per sample
    #[arg(long)]
    friction: bool,
    /// Grow the oracle grid when the selection sits at its edge
    #[arg(long)]
    extend: bool,
    /// Index distance from the edge that triggers growth
    #[arg(long, default_value_t = 1)]
    extend_margin: usize,
    /// Ratio between a new grid point and the old edge [default: the edge spacing]
    #[arg(long)]
    extend_factor: Option<f64>,
    /// HIL ratio a between neighbouring step sizes
    #[arg(long, default_value_t = 1.5)]
    a: f64,
    /// HIL base rebalance period M
    #[arg(long, default_value_t = 1000)]
    m: u64,
    /// HIL period jitter: each period is M + U with U uniform on 0..=jitter
    #[arg(long, default_value_t = 1000)]
    jitter: u64,
    /// HIL starting center step size
    #[arg(long, default_value_t = 0.01)]
    initial_lambda: f64,
    /// Initial estimate [default: first sample]
    #[arg(long, allow_negative_numbers = true)]
    initial: Option<f64>,
    /// Number of samples to process (input files stop earlier when exhausted)
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    #[arg(long, env = "QUANTRACK_SEED", default_value_t = 1)]
    seed: u64,
    /// Keep every k-th step in the trace
    #[arg(long, default_value_t = 1)]
    thinning: u64,
    /// Output CSV path [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Probability of the reported true quantile
    #[arg(long, default_value_t = 0.7)]
    q: f64,
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    #[arg(long, env = "QUANTRACK_SEED", default_value_t = 1)]
    seed: u64,
    /// Output CSV path [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_input(path: &PathBuf) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdin().lock()));
    }
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

/// Summary lines go to stdout unless the CSV does.
fn summary(to_file: bool, line: &str) {
    if to_file {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn controller_spec(args: &TrackArgs, target: Target) -> Result<ControllerSpec> {
    let spec = match args.controller {
        ControllerArg::Fixed => ControllerSpec::Fixed {
            target,
            lambda: args.lambda,
        },
        ControllerArg::Oracle => ControllerSpec::Oracle(OracleConfig {
            target,
            lambda_grid: args.grid.grid()?,
            friction: args.friction,
            extension: args.extend.then(|| GridExtension {
                margin: args.extend_margin,
                factor: args.extend_factor,
                ..GridExtension::default()
            }),
        }),
        ControllerArg::Hil => ControllerSpec::Hil(HilConfig {
            target,
            ratio: args.a,
            period: args.m,
            jitter: args.jitter,
            initial_lambda: args.initial_lambda,
        }),
    };
    spec.validate().context("invalid controller settings")?;
    Ok(spec)
}

fn input_stream(args: &TrackArgs, path: &PathBuf, kind: EstimatorKind) -> Result<SampleStream> {
    let reader = open_input(path)?;
    let samples = match args.transform {
        Transform::None => read_samples(reader)?,
        Transform::Rate => {
            let stamps = read_timestamps(reader)?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            rng.set_stream(2);
            let series = ingest_timestamps(&stamps, args.resolution, &mut rng)?;
            if series.dropped_ties > 0 {
                eprintln!("note: {} coincident timestamps produced no rate", series.dropped_ties);
            }
            series.rates
        }
    };
    if samples.is_empty() {
        bail!("{} contains no samples", path.display());
    }
    if kind.is_dumiqe() && samples.iter().any(|&x| x <= 0.0) {
        bail!("DUMIQE needs positive samples; use --estimator frugal for this input");
    }
    Ok(SampleStream::new(samples))
}

fn cmd_track(args: TrackArgs) -> Result<()> {
    let kind = args.estimator.kind()?;
    let target = args.smoothing.target(kind, args.estimator.q)?;
    let ctrl = controller_spec(&args, target)?;
    if args.thinning == 0 {
        bail!("--thinning must be at least 1");
    }
    if args.n == 0 {
        bail!("--n must be at least 1");
    }

    let mut stream: Box<dyn DataStream> = match &args.input {
        Some(path) => Box::new(input_stream(&args, path, kind)?),
        None => {
            let spec = args.stream.spec()?;
            bench::check_compatible(&spec, kind)?;
            Box::new(SyntheticStream::new(spec, args.seed)?)
        }
    };

    let mut out = open_output(args.output.as_ref())?;
    writeln!(out, "{TRACE_HEADER}")?;
    let opts = RunOptions {
        n_steps: args.n,
        thinning: args.thinning,
        seed: args.seed,
        initial: args.initial,
    };
    let start = Instant::now();
    let mut io_error = None;
    let mut final_lambda = f64::NAN;
    let (steps, mse) = run_tracking_with(stream.as_mut(), &ctrl, &opts, |r| {
        final_lambda = r.lambda;
        if io_error.is_none() && r.n % args.thinning == 0 {
            io_error = write_trace_row(&mut out, r).err();
        }
    })?;
    if let Some(e) = io_error {
        return Err(e).context("writing trace");
    }
    out.flush().context("writing trace")?;
    drop(out);
    let secs = start.elapsed().as_secs_f64();

    let mse = mse.map_or_else(|| "n/a".to_string(), |m| format!("{m:.6e}"));
    summary(
        args.output.is_some(),
        &format!(
            "steps={steps} observed_mse={mse} final_lambda={final_lambda:.6e} runtime_s={secs:.3} samples_per_s={:.0}",
            steps as f64 / secs.max(1e-9)
        ),
    );
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let kind = args.estimator.kind()?;
    let spec = args.stream.spec()?;
    let grid = args.grid.grid()?;
    let q = args.estimator.q;
    if args.n == 0 {
        bail!("--n must be at least 1");
    }

    let results = args
        .seeds
        .iter()
        .map(|&seed| Ok(bench::grid_search_constant_lambda(&spec, kind, q, &grid, args.n, seed)?))
        .collect::<Result<Vec<GridResult>>>()?;

    let mut out = open_output(args.output.as_ref())?;
    write_grid_csv(&mut out, &results).context("writing grid")?;
    out.flush().context("writing grid")?;
    drop(out);

    let to_file = args.output.is_some();
    for r in &results {
        let best = r.best();
        summary(
            to_file,
            &format!("seed={} argmin_lambda={:.6e} mse={:.6e}", r.seed, best.lambda, best.mse),
        );
    }
    if results.len() > 1 {
        let best: Vec<f64> = results.iter().map(|r| r.best().mse).collect();
        let rep = Replicates::from_values(&best).expect("at least one seed");
        summary(
            to_file,
            &format!("replicates={} best_mse_mean={:.6e} min={:.6e} max={:.6e}", rep.count, rep.mean, rep.min, rep.max),
        );
    }
    if args.mixture {
        let mut values = Vec::new();
        for &seed in &args.seeds {
            let mix = mixture_baseline(&spec, kind, q, &grid, args.n, seed)?;
            summary(
                to_file,
                &format!(
                    "seed={seed} mixture_mse={:.6e} fast_lambda={:.6e} fast_mse={:.6e} slow_lambda={:.6e} slow_mse={:.6e}",
                    mix.value,
                    mix.fast.best().lambda,
                    mix.fast.best().mse,
                    mix.slow.best().lambda,
                    mix.slow.best().mse
                ),
            );
            values.push(mix.value);
        }
        if values.len() > 1 {
            let rep = Replicates::from_values(&values).expect("at least one seed");
            summary(
                to_file,
                &format!("mixture_mean={:.6e} min={:.6e} max={:.6e}", rep.mean, rep.min, rep.max),
            );
        }
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = args.stream.spec()?;
    let mut out = open_output(args.output.as_ref())?;
    bench::write_samples_csv(&mut out, &spec, args.q, args.n, args.seed)?;
    out.flush().context("writing samples")?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
