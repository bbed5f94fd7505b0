//! Data streams: sinusoidal synthetic generators with exact quantiles, plain
//! sample sequences, and event timestamps turned into arrival rates.

use std::f64::consts::PI;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{check_probability, Error, Result};
pub use crate::special::{inv_chisq_cdf, inv_norm_cdf};

/// Alternation between a fast and a slow sinusoid period.
///
/// Steps with `n mod 2T < T` use `tau1`, the rest use `tau2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regimes {
    pub tau1: u64,
    pub tau2: u64,
    pub t_switch: u64,
}

impl Default for Regimes {
    fn default() -> Self {
        Self {
            tau1: 500,
            tau2: 10_000,
            t_switch: 10_000,
        }
    }
}

impl Regimes {
    /// One period throughout.
    pub fn single(tau: u64) -> Self {
        Self {
            tau1: tau,
            tau2: tau,
            t_switch: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau1 == 0 || self.tau2 == 0 || self.t_switch == 0 {
            return Err(Error::InvalidStream(
                "periods and segment length must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// True for steps in a `tau1` segment.
    #[inline]
    pub fn in_first(&self, n: u64) -> bool {
        n % (2 * self.t_switch) < self.t_switch
    }

    #[inline]
    pub fn tau(&self, n: u64) -> u64 {
        if self.in_first(n) {
            self.tau1
        } else {
            self.tau2
        }
    }

    /// `sin(2 pi n / tau(n))`, evaluated on `n mod tau(n)`.
    #[inline]
    pub fn wave(&self, n: u64) -> f64 {
        let tau = self.tau(n);
        (2.0 * PI * (n % tau) as f64 / tau as f64).sin()
    }
}

/// Normal stream with sinusoidal location `mu + b sin(2 pi n / tau(n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSineSpec {
    pub mu: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub regimes: Regimes,
}

impl Default for NormalSineSpec {
    fn default() -> Self {
        Self {
            mu: 8.0,
            amplitude: 2.0,
            sigma: 1.0,
            regimes: Regimes::default(),
        }
    }
}

/// Chi-square stream with sinusoidal degrees of freedom `nu + b sin(2 pi n / tau(n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSqSineSpec {
    pub nu: f64,
    pub amplitude: f64,
    pub regimes: Regimes,
}

impl Default for ChiSqSineSpec {
    fn default() -> Self {
        Self {
            nu: 6.0,
            amplitude: 2.0,
            regimes: Regimes::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamSpec {
    NormalSine(NormalSineSpec),
    ChiSqSine(ChiSqSineSpec),
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            StreamSpec::NormalSine(s) => {
                s.regimes.validate()?;
                if !(s.sigma > 0.0 && s.sigma.is_finite()) {
                    return Err(Error::InvalidStream(format!(
                        "sigma must be positive, got {}",
                        s.sigma
                    )));
                }
                if !(s.mu.is_finite() && s.amplitude.is_finite()) {
                    return Err(Error::InvalidStream("mu and amplitude must be finite".into()));
                }
            }
            StreamSpec::ChiSqSine(s) => {
                s.regimes.validate()?;
                if !(s.nu - s.amplitude.abs() > 0.0 && s.nu.is_finite()) {
                    return Err(Error::InvalidStream(format!(
                        "degrees of freedom nu - |b| must stay positive, got nu = {}, b = {}",
                        s.nu, s.amplitude
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn regimes(&self) -> Regimes {
        match self {
            StreamSpec::NormalSine(s) => s.regimes,
            StreamSpec::ChiSqSine(s) => s.regimes,
        }
    }

    /// Same stream with the regimes replaced.
    pub fn with_regimes(mut self, regimes: Regimes) -> Self {
        match &mut self {
            StreamSpec::NormalSine(s) => s.regimes = regimes,
            StreamSpec::ChiSqSine(s) => s.regimes = regimes,
        }
        self
    }

    /// Whether every sample is positive with overwhelming probability, which
    /// DUMIQE requires. Normal streams need `mu - |b| > 5 sigma`.
    pub fn is_positive(&self) -> bool {
        match self {
            StreamSpec::NormalSine(s) => s.mu - s.amplitude.abs() > 5.0 * s.sigma,
            StreamSpec::ChiSqSine(_) => true,
        }
    }

    /// Distribution parameter at step `n`: the normal location or the
    /// chi-square degrees of freedom.
    #[inline]
    pub fn parameter(&self, n: u64) -> f64 {
        let tau = self.regimes().tau(n);
        self.parameter_at_phase(tau, n % tau)
    }

    /// Exact q-quantile of the distribution at step `n`.
    pub fn true_quantile(&self, n: u64, q: f64) -> Result<f64> {
        check_probability(q)?;
        self.quantile_for(self.parameter(n), q)
    }

    fn quantile_for(&self, parameter: f64, q: f64) -> Result<f64> {
        match self {
            StreamSpec::NormalSine(s) => Ok(parameter + s.sigma * inv_norm_cdf(q)?),
            StreamSpec::ChiSqSine(_) => inv_chisq_cdf(q, parameter),
        }
    }

    fn parameter_at_phase(&self, tau: u64, phase: u64) -> f64 {
        let wave = (2.0 * PI * phase as f64 / tau as f64).sin();
        match self {
            StreamSpec::NormalSine(s) => s.mu + s.amplitude * wave,
            StreamSpec::ChiSqSine(s) => s.nu + s.amplitude * wave,
        }
    }

    /// Precomputes the q-quantile for every phase of both regimes.
    pub fn truth_table(&self, q: f64) -> Result<TruthTable> {
        self.validate()?;
        check_probability(q)?;
        let regimes = self.regimes();
        let phases = |tau: u64| -> Result<Vec<f64>> {
            (0..tau)
                .map(|phase| self.quantile_for(self.parameter_at_phase(tau, phase), q))
                .collect()
        };
        Ok(TruthTable {
            regimes,
            fast: phases(regimes.tau1)?,
            slow: phases(regimes.tau2)?,
        })
    }
}

/// Exact quantiles of a sinusoidal stream, looked up by regime and phase.
#[derive(Debug, Clone)]
pub struct TruthTable {
    regimes: Regimes,
    fast: Vec<f64>,
    slow: Vec<f64>,
}

impl TruthTable {
    #[inline]
    pub fn at(&self, n: u64) -> f64 {
        if self.regimes.in_first(n) {
            self.fast[(n % self.regimes.tau1) as usize]
        } else {
            self.slow[(n % self.regimes.tau2) as usize]
        }
    }
}

/// Something that yields one sample per step, optionally with known quantiles.
pub trait DataStream {
    fn next_sample(&mut self) -> Option<f64>;

    /// Exact quantiles for this stream, when they are known.
    fn truth_table(&self, _q: f64) -> Option<Result<TruthTable>> {
        None
    }
}

/// Seeded realisation of a [`StreamSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    spec: StreamSpec,
    n: u64,
    rng: ChaCha8Rng,
}

impl SyntheticStream {
    pub fn new(spec: StreamSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            n: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    /// Index of the next sample.
    pub fn position(&self) -> u64 {
        self.n
    }

    /// Draws the sample for the current step and advances. Returns `(n, x)`.
    #[inline]
    pub fn next_indexed(&mut self) -> (u64, f64) {
        let n = self.n;
        let param = self.spec.parameter(n);
        let x = match &self.spec {
            StreamSpec::NormalSine(s) => {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                param + s.sigma * z
            }
            StreamSpec::ChiSqSine(_) => Gamma::new(0.5 * param, 2.0)
                .expect("validated degrees of freedom")
                .sample(&mut self.rng),
        };
        self.n += 1;
        (n, x)
    }

    /// Draws `count` samples from step `n` without advancing the stream.
    pub fn sample_at(&mut self, n: u64, count: usize) -> Vec<f64> {
        let saved = self.n;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            self.n = n;
            out.push(self.next_indexed().1);
        }
        self.n = saved;
        out
    }
}

impl DataStream for SyntheticStream {
    fn next_sample(&mut self) -> Option<f64> {
        Some(self.next_indexed().1)
    }

    fn truth_table(&self, q: f64) -> Option<Result<TruthTable>> {
        Some(self.spec.truth_table(q))
    }
}

/// A finite, in-memory sequence of samples.
#[derive(Debug, Clone)]
pub struct SampleStream {
    values: Vec<f64>,
    pos: usize,
}

impl SampleStream {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl DataStream for SampleStream {
    fn next_sample(&mut self) -> Option<f64> {
        let x = self.values.get(self.pos).copied();
        self.pos += 1;
        x
    }
}

fn parse_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let value: f64 = text.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("not a number: {text:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("non-finite value: {text:?}"),
            });
        }
        out.push((line_no, value));
    }
    Ok(out)
}

/// Reads one sample per line. Blank lines and lines starting with `#` are skipped.
pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    Ok(parse_lines(reader)?.into_iter().map(|(_, v)| v).collect())
}

/// Reads one timestamp (seconds, integer or decimal) per line and checks that
/// they never decrease.
pub fn read_timestamps<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let parsed = parse_lines(reader)?;
    for w in parsed.windows(2) {
        if w[1].1 < w[0].1 {
            return Err(Error::DecreasingTimestamp {
                prev: w[0].1,
                next: w[1].1,
                line: w[1].0,
            });
        }
    }
    Ok(parsed.into_iter().map(|(_, v)| v).collect())
}

/// Arrival rates derived from timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    pub rates: Vec<f64>,
    /// Consecutive timestamps that coincided exactly and produced no rate.
    pub dropped_ties: usize,
}

/// `1 / (T_t - T_{t-1})` for consecutive sorted timestamps; zero gaps are dropped.
pub fn rates_from_sorted(timestamps: &[f64]) -> RateSeries {
    let mut rates = Vec::with_capacity(timestamps.len().saturating_sub(1));
    let mut dropped_ties = 0;
    for w in timestamps.windows(2) {
        let gap = w[1] - w[0];
        if gap > 0.0 {
            rates.push(1.0 / gap);
        } else {
            dropped_ties += 1;
        }
    }
    RateSeries {
        rates,
        dropped_ties,
    }
}

/// Adds `Uniform(0, resolution)` to every timestamp and re-sorts.
pub fn jitter_timestamps<R: Rng + ?Sized>(timestamps: &[f64], resolution: f64, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = timestamps
        .iter()
        .map(|&t| t + resolution * rng.random::<f64>())
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Jitters timestamps recorded at a fixed resolution and converts them to
/// arrival rates.
pub fn ingest_timestamps<R: Rng + ?Sized>(
    timestamps: &[f64],
    resolution: f64,
    rng: &mut R,
) -> Result<RateSeries> {
    if !(resolution >= 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidStream(format!(
            "jitter resolution must be nonnegative, got {resolution}"
        )));
    }
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(Error::DecreasingTimestamp {
                prev: w[0],
                next: w[1],
                line: i + 2,
            });
        }
    }
    let jittered = jitter_timestamps(timestamps, resolution, rng);
    Ok(rates_from_sorted(&jittered))
}

/// A multiplicative change of the arrival rate from time `at` onwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEvent {
    pub at: f64,
    pub factor: f64,
}

/// Piecewise-constant arrival intensity with a day/night cycle and an optional
/// step change. Times are seconds; the day runs from `day_start` to `day_end`
/// (seconds after midnight).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalProfile {
    pub day_rate: f64,
    pub night_rate: f64,
    pub day_start: f64,
    pub day_end: f64,
    pub event: Option<RateEvent>,
}

impl Default for ArrivalProfile {
    fn default() -> Self {
        Self {
            day_rate: 1.0,
            night_rate: 0.2,
            day_start: 7.0 * 3600.0,
            day_end: 23.0 * 3600.0,
            event: None,
        }
    }
}

impl ArrivalProfile {
    /// Same rate around the clock.
    pub fn constant(rate: f64) -> Self {
        Self {
            day_rate: rate,
            night_rate: rate,
            ..Self::default()
        }
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let tod = t.rem_euclid(86_400.0);
        let base = if tod >= self.day_start && tod < self.day_end {
            self.day_rate
        } else {
            self.night_rate
        };
        match self.event {
            Some(e) if t >= e.at => base * e.factor,
            _ => base,
        }
    }

    fn max_rate(&self) -> f64 {
        let base = self.day_rate.max(self.night_rate);
        base * self.event.map_or(1.0, |e| e.factor.max(1.0))
    }

    fn validate(&self) -> Result<()> {
        let ok = self.day_rate > 0.0
            && self.night_rate > 0.0
            && self.max_rate().is_finite()
            && self.event.is_none_or(|e| e.factor > 0.0 && e.at.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidStream("arrival rates must be positive and finite".into()))
        }
    }
}

/// Inhomogeneous Poisson arrivals on `[0, duration)` by thinning, with each
/// arrival time floored to a multiple of `resolution` (0 keeps full precision).
pub fn generate_timestamps<R: Rng + ?Sized>(
    profile: &ArrivalProfile,
    duration: f64,
    resolution: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    profile.validate()?;
    if !(duration > 0.0 && duration.is_finite()) || resolution.is_nan() || resolution < 0.0 {
        return Err(Error::InvalidStream("duration must be positive and resolution nonnegative".into()));
    }
    let max_rate = profile.max_rate();
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / max_rate;
        if t >= duration {
            break;
        }
        if rng.random::<f64>() * max_rate <= profile.rate_at(t) {
            let stamp = if resolution > 0.0 {
                (t / resolution).floor() * resolution
            } else {
                t
            };
            out.push(stamp);
        }
    }
    Ok(out)
}
