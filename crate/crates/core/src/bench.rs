//! Experiment harness: observed tracking MSE, controller runs with traces,
//! constant step-size grid search and CSV output.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controllers::{ControllerSpec, StepOutput};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorKind};
use crate::streams::{DataStream, Regimes, StreamSpec, SyntheticStream, TruthTable};

/// Fraction of leading steps left out of every reported MSE.
pub const WARMUP_FRACTION: f64 = 0.01;

/// Number of leading steps excluded from the MSE of an `n_steps` run.
pub fn warmup_steps(n_steps: u64) -> u64 {
    (n_steps as f64 * WARMUP_FRACTION).floor() as u64
}

/// Running mean of squared errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMse {
    count: u64,
    mean: f64,
}

impl RunningMse {
    #[inline]
    pub fn push(&mut self, error: f64) {
        self.count += 1;
        self.mean += (error * error - self.mean) / self.count as f64;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `None` until at least one error was pushed.
    pub fn value(&self) -> Option<f64> {
        (self.count > 0).then_some(self.mean)
    }
}

/// Mean squared difference between estimates and true quantiles.
pub fn observed_mse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch {
            estimates: estimates.len(),
            truths: truths.len(),
        });
    }
    let mut acc = RunningMse::default();
    for (e, t) in estimates.iter().zip(truths) {
        acc.push(e - t);
    }
    acc.value().ok_or(Error::Empty("no estimates"))
}

/// Equal-weight mix of the fast-regime and slow-regime optima.
pub fn theoretical_mix(mse_fast: f64, mse_slow: f64) -> f64 {
    0.5 * mse_fast + 0.5 * mse_slow
}

/// Rejects DUMIQE on streams that can produce non-positive samples.
pub fn check_compatible(spec: &StreamSpec, kind: EstimatorKind) -> Result<()> {
    spec.validate()?;
    if kind.is_dumiqe() && !spec.is_positive() {
        return Err(Error::InvalidStream(
            "DUMIQE needs a positive stream; use the Frugal estimator or shift the stream".into(),
        ));
    }
    Ok(())
}

/// One step of a tracking run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub n: u64,
    pub x: f64,
    pub estimate: f64,
    pub lambda: f64,
    pub mse_hat: f64,
    pub true_q: Option<f64>,
}

impl TraceRecord {
    pub fn sq_err(&self) -> Option<f64> {
        self.true_q.map(|t| (self.estimate - t).powi(2))
    }
}

#[derive(Debug, Clone)]
pub struct TrackingTrace {
    /// Every `thinning`-th step, starting at step 0.
    pub records: Vec<TraceRecord>,
    pub thinning: u64,
    pub n_steps: u64,
    /// Observed MSE after the warm-up exclusion, when truths are known.
    pub observed_mse: Option<f64>,
    pub final_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub n_steps: u64,
    pub thinning: u64,
    /// Seeds the controller's randomness (Frugal draws, HIL jitter).
    pub seed: u64,
    /// Initial estimate; the first sample when absent.
    pub initial: Option<f64>,
}

impl RunOptions {
    pub fn new(n_steps: u64, seed: u64) -> Self {
        Self {
            n_steps,
            thinning: 1,
            seed,
            initial: None,
        }
    }
}

/// Controller randomness, kept on a separate ChaCha stream from the data.
pub fn controller_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Feeds up to `n_steps` samples to a freshly built controller and calls
/// `visit` on every step. Returns the number of steps taken and the observed
/// MSE when the stream knows its quantiles.
pub fn run_tracking_with<S, F>(
    stream: &mut S,
    spec: &ControllerSpec,
    opts: &RunOptions,
    mut visit: F,
) -> Result<(u64, Option<f64>)>
where
    S: DataStream + ?Sized,
    F: FnMut(&TraceRecord),
{
    if opts.n_steps == 0 {
        return Err(Error::Empty("number of steps must be at least 1"));
    }
    if opts.thinning == 0 {
        return Err(Error::Empty("thinning must be at least 1"));
    }
    spec.validate()?;
    let q = spec.target().q;
    let truths: Option<TruthTable> = stream.truth_table(q).transpose()?;
    let mut rng = controller_rng(opts.seed);

    let Some(first) = stream.next_sample() else {
        return Err(Error::Empty("stream produced no samples"));
    };
    let initial = opts.initial.unwrap_or(first);
    let mut controller = spec.build(initial, &mut rng)?;

    let skip = warmup_steps(opts.n_steps);
    let mut acc = RunningMse::default();
    let mut x = first;
    let mut n = 0u64;
    loop {
        let StepOutput {
            estimate,
            lambda,
            mse_hat,
        } = controller.step(x, &mut rng);
        let true_q = truths.as_ref().map(|t| t.at(n));
        if let Some(t) = true_q {
            if n >= skip {
                acc.push(estimate - t);
            }
        }
        visit(&TraceRecord {
            n,
            x,
            estimate,
            lambda,
            mse_hat,
            true_q,
        });
        n += 1;
        if n == opts.n_steps {
            break;
        }
        match stream.next_sample() {
            Some(next) => x = next,
            None => break,
        }
    }
    Ok((n, acc.value()))
}

/// Runs a controller over a stream and keeps every `thinning`-th step.
pub fn run_tracking<S: DataStream + ?Sized>(
    stream: &mut S,
    spec: &ControllerSpec,
    opts: &RunOptions,
) -> Result<TrackingTrace> {
    let thinning = opts.thinning.max(1);
    let mut records = Vec::with_capacity(opts.n_steps.div_ceil(thinning).min(1 << 20) as usize);
    let mut final_lambda = f64::NAN;
    let (n_steps, observed_mse) = run_tracking_with(stream, spec, opts, |r| {
        if r.n % thinning == 0 {
            records.push(*r);
        }
        final_lambda = r.lambda;
    })?;
    Ok(TrackingTrace {
        records,
        thinning,
        n_steps,
        observed_mse,
        final_lambda,
    })
}

/// Observed MSE of a plain estimator at one constant step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub lambda: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub argmin: usize,
    pub n_steps: u64,
    pub seed: u64,
}

impl GridResult {
    pub fn best(&self) -> GridRow {
        self.rows[self.argmin]
    }
}

/// Grid search run separately on the fast-only and slow-only versions of a
/// stream, combined with [`theoretical_mix`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureBaseline {
    pub fast: GridResult,
    pub slow: GridResult,
    pub value: f64,
}

/// A sampled stream held in memory together with its true quantiles.
#[derive(Debug, Clone)]
pub struct Realisation {
    pub samples: Vec<f64>,
    pub truths: Vec<f64>,
}

impl Realisation {
    pub fn draw(spec: &StreamSpec, q: f64, n_steps: u64, seed: u64) -> Result<Self> {
        let table = spec.truth_table(q)?;
        let mut stream = SyntheticStream::new(*spec, seed)?;
        let n = n_steps as usize;
        let mut samples = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for _ in 0..n {
            let (i, x) = stream.next_indexed();
            samples.push(x);
            truths.push(table.at(i));
        }
        Ok(Self { samples, truths })
    }

    /// Observed MSE (after warm-up exclusion) of a plain estimator with a
    /// constant step size, started at the first sample.
    pub fn constant_lambda_mse(&self, kind: EstimatorKind, q: f64, lambda: f64, seed: u64) -> Result<f64> {
        let first = *self.samples.first().ok_or(Error::Empty("no samples"))?;
        let mut est = Estimator::new(kind, q, lambda, first)?;
        let mut rng = controller_rng(seed);
        let skip = warmup_steps(self.samples.len() as u64) as usize;
        let mut acc = RunningMse::default();
        for (i, (&x, &t)) in self.samples.iter().zip(&self.truths).enumerate() {
            est.update(x, &mut rng);
            if i >= skip {
                acc.push(est.estimate() - t);
            }
        }
        acc.value().ok_or(Error::Empty("no samples after warm-up"))
    }

    pub fn grid_search(&self, kind: EstimatorKind, q: f64, grid: &[f64], seed: u64) -> Result<GridResult> {
        if grid.is_empty() {
            return Err(Error::InvalidGrid("empty grid".into()));
        }
        let rows = grid
            .iter()
            .map(|&lambda| {
                Ok(GridRow {
                    lambda,
                    mse: self.constant_lambda_mse(kind, q, lambda, seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let argmin = argmin(rows.iter().map(|r| r.mse));
        Ok(GridResult {
            rows,
            argmin,
            n_steps: self.samples.len() as u64,
            seed,
        })
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Runs a plain estimator for every step size in `grid` on the same stream
/// realisation and reports the observed MSE of each (first 1% of steps
/// excluded).
pub fn grid_search_constant_lambda(
    spec: &StreamSpec,
    kind: EstimatorKind,
    q: f64,
    grid: &[f64],
    n_steps: u64,
    seed: u64,
) -> Result<GridResult> {
    check_compatible(spec, kind)?;
    if n_steps == 0 {
        return Err(Error::Empty("number of steps must be at least 1"));
    }
    Realisation::draw(spec, q, n_steps, seed)?.grid_search(kind, q, grid, seed)
}

/// Best constant-step MSE of the fast-only and slow-only streams, mixed half
/// and half.
pub fn mixture_baseline(
    spec: &StreamSpec,
    kind: EstimatorKind,
    q: f64,
    grid: &[f64],
    n_steps: u64,
    seed: u64,
) -> Result<MixtureBaseline> {
    let regimes = spec.regimes();
    let fast_spec = spec.with_regimes(Regimes::single(regimes.tau1));
    let slow_spec = spec.with_regimes(Regimes::single(regimes.tau2));
    let fast = grid_search_constant_lambda(&fast_spec, kind, q, grid, n_steps, seed)?;
    let slow = grid_search_constant_lambda(&slow_spec, kind, q, grid, n_steps, seed)?;
    let value = theoretical_mix(fast.best().mse, slow.best().mse);
    Ok(MixtureBaseline { fast, slow, value })
}

/// Mean, minimum and maximum over replicate runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicates {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Replicates {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min,
            max,
            count: values.len(),
        })
    }
}

/// Writes a float with 17 significant digits.
pub fn write_float<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    write!(w, "{v:.16e}")
}

pub const TRACE_HEADER: &str = "n,x,estimate,lambda,mse_hat,true_q,sq_err";
pub const GRID_HEADER: &str = "lambda,mse,n_steps,seed";
pub const SAMPLES_HEADER: &str = "n,x,true_q";

pub fn write_trace_row<W: Write>(w: &mut W, r: &TraceRecord) -> std::io::Result<()> {
    write!(w, "{},", r.n)?;
    for v in [r.x, r.estimate, r.lambda, r.mse_hat] {
        write_float(w, v)?;
        w.write_all(b",")?;
    }
    if let Some(t) = r.true_q {
        write_float(w, t)?;
    }
    w.write_all(b",")?;
    if let Some(e) = r.sq_err() {
        write_float(w, e)?;
    }
    w.write_all(b"\n")
}

pub fn write_trace_csv<W: Write>(w: &mut W, trace: &TrackingTrace) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        write_trace_row(w, r)?;
    }
    Ok(())
}

pub fn write_grid_csv<'a, W: Write>(
    w: &mut W,
    results: impl IntoIterator<Item = &'a GridResult>,
) -> std::io::Result<()> {
    writeln!(w, "{GRID_HEADER}")?;
    for result in results {
        for row in &result.rows {
            write_float(w, row.lambda)?;
            w.write_all(b",")?;
            write_float(w, row.mse)?;
            writeln!(w, ",{},{}", result.n_steps, result.seed)?;
        }
    }
    Ok(())
}

/// Writes `n,x,true_q` rows for the first `n_steps` samples of a stream.
pub fn write_samples_csv<W: Write>(
    w: &mut W,
    spec: &StreamSpec,
    q: f64,
    n_steps: u64,
    seed: u64,
) -> Result<()> {
    let table = spec.truth_table(q)?;
    let mut stream = SyntheticStream::new(*spec, seed)?;
    writeln!(w, "{SAMPLES_HEADER}")?;
    for _ in 0..n_steps {
        let (n, x) = stream.next_indexed();
        write!(w, "{n},")?;
        write_float(w, x)?;
        w.write_all(b",")?;
        write_float(w, table.at(n))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
