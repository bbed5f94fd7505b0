//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any criterion fails.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quantrack::bench::{
    controller_rng, grid_search_constant_lambda, run_tracking, run_tracking_with, write_grid_csv,
    write_trace_csv, GridResult, RunOptions,
};
use quantrack::controllers::{
    default_lambda_grid, ControllerSpec, Hil, HilConfig, Oracle, OracleConfig, Target,
};
use quantrack::mse_tracking::{
    MseTracker, SmoothingParams, TrackedQuantile, STATE_SCALARS,
};
use quantrack::streams::{
    generate_timestamps, ingest_timestamps, ArrivalProfile, ChiSqSineSpec, NormalSineSpec, RateEvent,
    Regimes, SampleStream, StreamSpec, SyntheticStream,
};
use quantrack::{Estimator, EstimatorKind};

struct CountingAlloc;

static ALLOCATIONS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCATIONS.fetch_add(1, Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCATIONS.fetch_add(1, Ordering::Relaxed);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

// Tolerances.
const C1_BAND: f64 = 0.02;
const C1_MAX_TIME: Duration = Duration::from_secs(5);
const C2_REL_TOL: f64 = 1e-12;
const C3_MIN_RANK_CORR: f64 = 0.8;
const C3_MAX_ARGMIN_GAP: usize = 2;
const C3_MAX_TIME: Duration = Duration::from_secs(180);
const C4_MAX_RATIO: f64 = 2.0;
const C4_MAX_TIME: Duration = Duration::from_secs(600);
const C5_MAX_RATIO: f64 = 3.0;
const C7_SHIFT_WINDOW: usize = 2_000;
const C9_PERIODS: u64 = 3;

const N_MIXED: u64 = 1_000_000;
const QUANTILES: [f64; 3] = [0.5, 0.7, 0.9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_stationary_convergence() -> Outcome {
    let start = Instant::now();
    let spec = StreamSpec::NormalSine(NormalSineSpec {
        amplitude: 0.0,
        ..NormalSineSpec::default()
    });
    let mut stream = SyntheticStream::new(spec, 1).unwrap();
    let mut rng = controller_rng(1);
    let (_, x0) = stream.next_indexed();
    let mut est = Estimator::new(EstimatorKind::Dumiqe, 0.7, 0.001, x0).unwrap();
    for _ in 0..100_000 {
        est.update(stream.next_indexed().1, &mut rng);
    }
    let mut below = 0u32;
    for _ in 0..100_000 {
        let x = stream.next_indexed().1;
        if x <= est.estimate() {
            below += 1;
        }
        est.update(x, &mut rng);
    }
    let frac = f64::from(below) / 1e5;
    let elapsed = start.elapsed();
    outcome(
        (frac - 0.7).abs() <= C1_BAND && elapsed < C1_MAX_TIME,
        format!("fraction below {frac:.4} (target 0.7 +/- {C1_BAND}), {elapsed:.2?}"),
    )
}

/// Exponentially weighted mean and variance of `x0, x1, .., xn` with weight
/// `(1-a)^n` on the seed and `a (1-a)^(n-k)` on `xk`, evaluated directly.
fn weighted_moments(seed: f64, xs: &[f64], a: f64) -> (f64, f64) {
    let n = xs.len() as i32;
    let mut weights = vec![(1.0 - a).powi(n)];
    weights.extend((1..=n).map(|k| a * (1.0 - a).powi(n - k)));
    let values: Vec<f64> = std::iter::once(seed).chain(xs.iter().copied()).collect();
    let mean: f64 = weights.iter().zip(&values).map(|(w, v)| w * v).sum();
    let var: f64 = weights.iter().zip(&values).map(|(w, v)| w * (v - mean).powi(2)).sum();
    (mean, var)
}

fn c2_weighted_moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<f64> = (0..1000).map(|_| 8.0 + 4.0 * (rng.random::<f64>() - 0.5)).collect();
    let mut worst: f64 = 0.0;
    for a in [0.5, 0.1, 0.01] {
        let params = SmoothingParams {
            alpha: a,
            beta: a,
            ..SmoothingParams::default()
        };
        let mut t = MseTracker::new(xs[0], 0.5);
        for n in 1..xs.len() {
            t.update_mean_var(&params, xs[n]);
            let (mean, var) = weighted_moments(xs[0], &xs[1..=n], a);
            worst = worst
                .max(((t.mu - mean) / mean).abs())
                .max(((t.sigma2 - var) / var).abs());
        }
    }
    outcome(
        worst <= C2_REL_TOL,
        format!("max relative error {worst:.2e} (tolerance {C2_REL_TOL:.0e})"),
    )
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap()
}

fn c3_mse_estimate_fidelity() -> Outcome {
    let start = Instant::now();
    let grid: Vec<f64> = default_lambda_grid().into_iter().step_by(10).collect();
    let n = 500_000u64;
    let skip = n / 100;
    let mut pass = true;
    let mut parts = Vec::new();
    for tau in [500u64, 10_000] {
        let spec = StreamSpec::NormalSine(NormalSineSpec {
            regimes: Regimes::single(tau),
            ..NormalSineSpec::default()
        });
        let mut estimated = Vec::new();
        let mut empirical = Vec::new();
        for &lambda in &grid {
            let ctrl = ControllerSpec::Fixed {
                target: Target::new(EstimatorKind::Dumiqe, 0.7),
                lambda,
            };
            let mut stream = SyntheticStream::new(spec, 3).unwrap();
            let mut sum = 0.0;
            let (_, mse) = run_tracking_with(&mut stream, &ctrl, &RunOptions::new(n, 3), |r| {
                if r.n >= skip {
                    sum += r.mse_hat;
                }
            })
            .unwrap();
            estimated.push(sum / (n - skip) as f64);
            empirical.push(mse.unwrap());
        }
        let rho = common::spearman(&estimated, &empirical);
        let gap = argmin(&estimated).abs_diff(argmin(&empirical));
        pass &= rho >= C3_MIN_RANK_CORR && gap <= C3_MAX_ARGMIN_GAP;
        parts.push(format!("tau {tau}: rank corr {rho:.3}, argmin gap {gap}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < C3_MAX_TIME;
    outcome(pass, format!("{}; {elapsed:.1?}", parts.join("; ")))
}

fn hil_config(kind: EstimatorKind, q: f64) -> HilConfig {
    let mut target = Target::new(kind, q);
    target.smoothing = SmoothingParams::with_horizon(1500).unwrap();
    HilConfig {
        ratio: 1.5,
        period: 1000,
        jitter: 1000,
        initial_lambda: 0.01,
        ..HilConfig::new(target)
    }
}

struct MixedResult {
    q: f64,
    grid: GridResult,
    oracle: f64,
    hil: f64,
}

fn mixed_stream_runs(spec: StreamSpec) -> Vec<MixedResult> {
    let kind = EstimatorKind::Dumiqe;
    QUANTILES
        .iter()
        .map(|&q| {
            let grid = grid_search_constant_lambda(&spec, kind, q, &default_lambda_grid(), N_MIXED, 1).unwrap();
            let opts = RunOptions::new(N_MIXED, 1);
            let oracle = ControllerSpec::Oracle(OracleConfig::new(Target::new(kind, q)));
            let oracle = run_tracking(&mut SyntheticStream::new(spec, 1).unwrap(), &oracle, &opts)
                .unwrap()
                .observed_mse
                .unwrap();
            let hil = ControllerSpec::Hil(hil_config(kind, q));
            let hil = run_tracking(&mut SyntheticStream::new(spec, 1).unwrap(), &hil, &opts)
                .unwrap()
                .observed_mse
                .unwrap();
            MixedResult { q, grid, oracle, hil }
        })
        .collect()
}

fn oracle_outcome(runs: &[MixedResult], elapsed: Duration) -> Outcome {
    let mut pass = elapsed < C4_MAX_TIME;
    let mut parts = Vec::new();
    for r in runs {
        let ratio = r.oracle / r.grid.best().mse;
        pass &= ratio <= C4_MAX_RATIO;
        parts.push(format!("q {}: {:.4}/{:.4} = {ratio:.2}", r.q, r.oracle, r.grid.best().mse));
    }
    outcome(pass, format!("oracle/best-constant {}; {elapsed:.1?}", parts.join(", ")))
}

fn hil_outcome(runs: &[MixedResult]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let ratio = r.hil / r.grid.best().mse;
        pass &= r.hil >= r.oracle && ratio <= C5_MAX_RATIO;
        parts.push(format!("q {}: hil {:.4} vs oracle {:.4}, ratio {ratio:.2}", r.q, r.hil, r.oracle));
    }
    outcome(pass, parts.join(", "))
}

fn c7_adaptation_direction() -> Outcome {
    let spec = StreamSpec::NormalSine(NormalSineSpec::default());
    let ctrl = ControllerSpec::Oracle(OracleConfig::new(Target::new(EstimatorKind::Dumiqe, 0.7)));
    let mut lambdas = Vec::new();
    let n = 200_000usize;
    run_tracking_with(&mut SyntheticStream::new(spec, 7).unwrap(), &ctrl, &RunOptions::new(n as u64, 7), |r| {
        lambdas.push(r.lambda)
    })
    .unwrap();
    let regimes = Regimes::default();
    let (mut fast, mut slow) = (Vec::new(), Vec::new());
    for (i, &l) in lambdas.iter().enumerate() {
        if regimes.in_first(i as u64) { &mut fast } else { &mut slow }.push(l);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mean_fast, mean_slow) = (mean(&fast), mean(&slow));

    let half = C7_SHIFT_WINDOW / 2;
    let t = regimes.t_switch as usize;
    let mut switches = 0;
    let mut shifted = 0;
    for s in (t..n - C7_SHIFT_WINDOW).step_by(t) {
        let before = mean(&lambdas[s - half..s]);
        let after = mean(&lambdas[s + half..s + C7_SHIFT_WINDOW]);
        let into_fast = regimes.in_first(s as u64);
        switches += 1;
        if (into_fast && after > before) || (!into_fast && after < before) {
            shifted += 1;
        }
    }
    outcome(
        mean_fast > mean_slow && shifted == switches,
        format!(
            "mean lambda fast {mean_fast:.4} vs slow {mean_slow:.4}; {shifted}/{switches} switches shifted within {C7_SHIFT_WINDOW} steps"
        ),
    )
}

fn c8_footprint() -> Outcome {
    let spec = StreamSpec::NormalSine(NormalSineSpec::default());
    let target = Target::new(EstimatorKind::FRUGAL, 0.7);
    let mut stream = SyntheticStream::new(spec, 8).unwrap();
    let mut rng = controller_rng(8);
    let x0 = stream.next_indexed().1;

    let mut tq = TrackedQuantile::new(EstimatorKind::Dumiqe, 0.7, 0.6, 0.02, x0).unwrap();
    let params = SmoothingParams::default();
    for _ in 0..100 {
        tq.step(stream.next_indexed().1, &params, &mut rng);
    }
    let scalars = tq.state_scalars();
    let mut copy =
        TrackedQuantile::from_scalars(EstimatorKind::Dumiqe, 0.7, 0.6, scalars, tq.tracker.n_updates).unwrap();
    for _ in 0..1000 {
        let x = stream.next_indexed().1;
        tq.step(x, &params, &mut rng);
        copy.step(x, &params, &mut rng);
    }
    let state_ok = STATE_SCALARS == 8 && scalars.len() == 8 && copy.state_scalars() == tq.state_scalars();

    let mut oracle = Oracle::new(OracleConfig::new(target), x0).unwrap();
    let mut hil = Hil::new(HilConfig::new(target), x0, &mut rng).unwrap();
    let mut dispatched = ControllerSpec::Hil(HilConfig::new(target)).build(x0, &mut rng).unwrap();
    let warm: Vec<f64> = (0..20_000).map(|_| stream.next_indexed().1).collect();
    let steady: Vec<f64> = (0..200_000).map(|_| stream.next_indexed().1).collect();
    for &x in &warm {
        oracle.step(x, &mut rng);
        hil.step(x, &mut rng);
        dispatched.step(x, &mut rng);
    }
    let before_updates: u64 = oracle.members().iter().map(|m| m.tracker.n_updates).sum();
    let allocs_before = ALLOCATIONS.load(Ordering::Relaxed);
    let mut sink = 0.0;
    for &x in &steady {
        sink += oracle.step(x, &mut rng);
        sink += hil.step(x, &mut rng);
        sink += dispatched.step(x, &mut rng).estimate;
    }
    let allocs = ALLOCATIONS.load(Ordering::Relaxed) - allocs_before;
    let after_updates: u64 = oracle.members().iter().map(|m| m.tracker.n_updates).sum();
    let l = oracle.members().len() as u64;
    let per_sample = (after_updates - before_updates) as f64 / steady.len() as f64;
    let hil_members = hil.members().len();

    // Per-member cost should not depend on the ensemble size.
    let mut per_member_ns = |points: usize| {
        let grid = quantrack::controllers::log_spaced_grid(-7.0, 0.0, points).unwrap();
        let mut o = Oracle::new(
            OracleConfig {
                lambda_grid: grid,
                ..OracleConfig::new(target)
            },
            x0,
        )
        .unwrap();
        let start = Instant::now();
        for &x in &steady[..50_000] {
            sink += o.step(x, &mut rng);
        }
        start.elapsed().as_nanos() as f64 / (50_000.0 * points as f64)
    };
    let small = per_member_ns(15);
    let large = per_member_ns(141);
    let cost_ratio = large / small;
    let linear = (1.0 / 3.0..=3.0).contains(&cost_ratio);

    outcome(
        state_ok && allocs == 0 && per_sample == l as f64 && hil_members == 3 && linear && sink.is_finite(),
        format!(
            "state {} scalars, restore exact {}; {allocs} allocations over {} steady steps; {per_sample} member updates per sample for L = {l}; HIL members {hil_members}; ns per member update {small:.1} (L=15) vs {large:.1} (L=141)",
            scalars.len(),
            copy.state_scalars() == tq.state_scalars(),
            steady.len()
        ),
    )
}

fn c9_rate_step() -> Outcome {
    let mut rng = controller_rng(9);
    let step_at = 20_000.0;
    let profile = ArrivalProfile {
        event: Some(RateEvent {
            at: step_at,
            factor: 10.0,
        }),
        ..ArrivalProfile::constant(0.5)
    };
    let stamps = generate_timestamps(&profile, 30_000.0, 1.0, &mut rng).unwrap();
    let series = ingest_timestamps(&stamps, 1.0, &mut rng).unwrap();
    let rates = series.rates;
    // rates[i] comes from the gap ending at jittered stamp i + 1
    let k = stamps.iter().position(|&t| t >= step_at).unwrap();

    let period = 1000u64;
    let mut target = Target::new(EstimatorKind::FRUGAL, 0.7);
    target.smoothing = SmoothingParams::uniform(0.005);
    let cfg = HilConfig {
        ratio: 1.5,
        period,
        jitter: 0,
        initial_lambda: 0.01,
        ..HilConfig::new(target)
    };
    let mut lambdas = Vec::new();
    let mut estimates = Vec::new();
    run_tracking_with(
        &mut SampleStream::new(rates.clone()),
        &ControllerSpec::Hil(cfg),
        &RunOptions::new(u64::MAX, 9),
        |r| {
            lambdas.push(r.lambda);
            estimates.push(r.estimate);
        },
    )
    .unwrap();

    let mut pre = lambdas[k / 2..k].to_vec();
    pre.sort_by(f64::total_cmp);
    let pre_median = pre[pre.len() / 2];
    let window = (C9_PERIODS * period) as usize;
    let peak = lambdas[k..k + window].iter().copied().fold(f64::MIN, f64::max);
    let raised = peak > lambdas[k] && peak > pre_median;

    let settle = k + 5 * period as usize;
    let mut post = rates[settle..].to_vec();
    post.sort_by(f64::total_cmp);
    let (q1, q3) = (post[post.len() / 4], post[3 * post.len() / 4]);
    let tail = &estimates[settle..];
    let inside = tail.iter().filter(|&&e| e >= q1 && e <= q3).count() as f64 / tail.len() as f64;
    let mean_est = tail.iter().sum::<f64>() / tail.len() as f64;

    outcome(
        raised && mean_est >= q1 && mean_est <= q3 && inside >= 0.95,
        format!(
            "lambda {:.4} at step, median before {pre_median:.4}, peak within {C9_PERIODS} periods {peak:.4}; settled estimate mean {mean_est:.3} in IQR [{q1:.3}, {q3:.3}] for {:.1}% of steps",
            lambdas[k],
            100.0 * inside
        ),
    )
}

fn c10_determinism() -> Outcome {
    let specs = [
        StreamSpec::NormalSine(NormalSineSpec::default()),
        StreamSpec::ChiSqSine(ChiSqSineSpec::default()),
    ];
    let mut all_equal = true;
    let mut files = 0;
    for spec in specs {
        for ctrl in [
            ControllerSpec::Oracle(OracleConfig::new(Target::new(EstimatorKind::FRUGAL, 0.7))),
            ControllerSpec::Hil(hil_config(EstimatorKind::FRUGAL, 0.9)),
            ControllerSpec::Fixed {
                target: Target::new(EstimatorKind::Dumiqe, 0.5),
                lambda: 0.02,
            },
        ] {
            let run = || {
                let mut out = Vec::new();
                let opts = RunOptions {
                    thinning: 3,
                    ..RunOptions::new(30_000, 10)
                };
                let trace = run_tracking(&mut SyntheticStream::new(spec, 10).unwrap(), &ctrl, &opts).unwrap();
                write_trace_csv(&mut out, &trace).unwrap();
                out
            };
            all_equal &= run() == run();
            files += 1;
        }
        let grid = || {
            let r = grid_search_constant_lambda(&spec, EstimatorKind::FRUGAL, 0.7, &default_lambda_grid(), 20_000, 10)
                .unwrap();
            let mut out = Vec::new();
            write_grid_csv(&mut out, [&r]).unwrap();
            out
        };
        all_equal &= grid() == grid();
        files += 1;
    }
    outcome(all_equal, format!("{files} CSV outputs regenerated byte-identical: {all_equal}"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("criterion {id:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "stationary convergence", c1_stationary_convergence());
    report(2, "weighted moment equivalence", c2_weighted_moments());
    report(3, "MSE estimate fidelity", c3_mse_estimate_fidelity());

    let start = Instant::now();
    let normal = mixed_stream_runs(StreamSpec::NormalSine(NormalSineSpec::default()));
    let normal_time = start.elapsed();
    report(4, "oracle near-optimality", oracle_outcome(&normal, normal_time));
    report(5, "HIL ordering", hil_outcome(&normal));

    let start = Instant::now();
    let chisq = mixed_stream_runs(StreamSpec::ChiSqSine(ChiSqSineSpec::default()));
    let chisq_time = start.elapsed();
    let o4 = oracle_outcome(&chisq, chisq_time);
    let o5 = hil_outcome(&chisq);
    report(
        6,
        "chi-square stream",
        outcome(o4.pass && o5.pass, format!("{}; {}", o4.detail, o5.detail)),
    );

    report(7, "step-size adaptation direction", c7_adaptation_direction());
    report(8, "footprint and complexity", c8_footprint());
    report(9, "rate step pipeline", c9_rate_step());
    report(10, "determinism", c10_determinism());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
