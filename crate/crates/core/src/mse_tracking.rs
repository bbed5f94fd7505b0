//! Online estimate of the tracking MSE of an incremental quantile estimator.
//!
//! The MSE is split into squared bias plus variance. Variance is tracked with a
//! two-weight exponentially weighted recursion on the estimate itself. Squared
//! bias is tracked as `G'^2 * H`, where `H` smooths the squared deviation of the
//! portion of samples at or below the estimate from the target probability and
//! `G'` (slope of the quantile function) comes from the spread between the main
//! estimate and an auxiliary estimate at a nearby probability.

use rand::Rng;

use crate::error::{check_probability, Error, Result};
use crate::estimators::{Estimator, EstimatorKind};

/// `1 - 0.01^(1/M)`: the weight under which the M-th term of an exponentially
/// weighted sum carries weight 0.01.
pub fn rule_of_thumb(horizon: u32) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    Ok(1.0 - 0.01f64.powf(1.0 / f64::from(horizon)))
}

/// Default auxiliary probability: `q + 0.1` for `q <= 0.5`, otherwise `q - 0.1`.
pub fn default_q_tilde(q: f64) -> f64 {
    if q <= 0.5 {
        q + 0.1
    } else {
        q - 0.1
    }
}

/// Smoothing weights for the five recursions.
///
/// `alpha` drives the running mean of the estimate, `beta` its variance,
/// `gamma` the portion below the estimate, `kappa` the squared bias proxy and
/// `eta` the quantile-function slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub eta: f64,
}

impl SmoothingParams {
    /// `alpha = 0.5`, every other weight from [`rule_of_thumb`] with horizon `m`.
    pub fn with_horizon(horizon: u32) -> Result<Self> {
        Ok(Self::uniform(rule_of_thumb(horizon)?))
    }

    /// `alpha = 0.5`, every other weight equal to `w`.
    pub fn uniform(w: f64) -> Self {
        Self {
            alpha: 0.5,
            beta: w,
            gamma: w,
            kappa: w,
            eta: w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("eta", self.eta),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::InvalidWeight { name, value });
            }
        }
        Ok(())
    }

    /// Number of updates after which the MSE estimate is considered reliable:
    /// `ceil(1 / min(beta, kappa, eta))`.
    pub fn warmup_len(&self) -> u64 {
        let w = self.beta.min(self.kappa).min(self.eta);
        // absorb representation error, e.g. 1 / 0.005 = 200.00000000000003
        (1.0 / w - 1e-9).ceil().max(1.0) as u64
    }
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self::with_horizon(1000).expect("nonzero horizon")
    }
}

/// State of the five recursions for one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseTracker {
    /// Running mean of the estimate.
    pub mu: f64,
    /// Running variance of the estimate.
    pub sigma2: f64,
    /// Running portion of samples at or below the estimate.
    pub portion: f64,
    /// Running squared deviation of `portion` from `q`.
    pub h: f64,
    /// Running slope of the quantile function.
    pub gprime: f64,
    pub n_updates: u64,
    /// False until the slope has received its first increment.
    pub gprime_seeded: bool,
}

impl MseTracker {
    /// Neutral start: mean at the initial estimate, zero variance, portion at
    /// `q`, zero bias proxy, slope seeded on the first update.
    pub fn new(initial_estimate: f64, q: f64) -> Self {
        Self {
            mu: initial_estimate,
            sigma2: 0.0,
            portion: q,
            h: 0.0,
            gprime: 0.0,
            n_updates: 0,
            gprime_seeded: false,
        }
    }

    /// Resets everything except the slope, which keeps its current value.
    pub fn restart(&mut self, initial_estimate: f64, q: f64) {
        let gprime = self.gprime;
        let seeded = self.gprime_seeded;
        *self = Self::new(initial_estimate, q);
        self.gprime = gprime;
        self.gprime_seeded = seeded;
    }

    /// Mean and cross-product variance recursion on the freshly updated estimate.
    #[inline]
    pub fn update_mean_var(&mut self, params: &SmoothingParams, estimate: f64) {
        let prev_mu = self.mu;
        self.mu = (1.0 - params.alpha) * prev_mu + params.alpha * estimate;
        let sigma2 = (1.0 - params.beta) * self.sigma2
            + params.beta * (estimate - self.mu) * (estimate - prev_mu);
        self.sigma2 = sigma2.max(0.0);
    }

    /// Two-stage bias recursion. `estimate` must be the value `x` was compared
    /// against, i.e. the estimate before this sample's update.
    #[inline]
    pub fn update_bias(&mut self, params: &SmoothingParams, x: f64, estimate: f64, q: f64) {
        let below = if x <= estimate { 1.0 } else { 0.0 };
        self.portion = (1.0 - params.gamma) * self.portion + params.gamma * below;
        let dev = self.portion - q;
        self.h = (1.0 - params.kappa) * self.h + params.kappa * dev * dev;
    }

    /// Slope recursion from the main and auxiliary estimates.
    #[inline]
    pub fn update_gprime(
        &mut self,
        params: &SmoothingParams,
        estimate_q: f64,
        estimate_q_tilde: f64,
        q: f64,
        q_tilde: f64,
    ) {
        let increment = (estimate_q - estimate_q_tilde) / (q - q_tilde);
        if self.gprime_seeded {
            self.gprime = (1.0 - params.eta) * self.gprime + params.eta * increment;
        } else {
            self.gprime = increment;
            self.gprime_seeded = true;
        }
    }

    #[inline]
    pub fn bias2_estimate(&self) -> f64 {
        self.gprime * self.gprime * self.h
    }

    #[inline]
    pub fn variance_estimate(&self) -> f64 {
        self.sigma2
    }

    /// `G'^2 * H + sigma^2`.
    #[inline]
    pub fn mse_estimate(&self) -> f64 {
        self.bias2_estimate() + self.sigma2
    }

    #[inline]
    pub fn is_warm(&self, params: &SmoothingParams) -> bool {
        self.n_updates >= params.warmup_len()
    }
}

/// Number of per-sample scalars a [`TrackedQuantile`] carries.
pub const STATE_SCALARS: usize = 8;

/// Main estimator, auxiliary estimator at `q_tilde` and their MSE tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedQuantile {
    pub main: Estimator,
    pub aux: Estimator,
    pub tracker: MseTracker,
}

impl TrackedQuantile {
    pub fn new(kind: EstimatorKind, q: f64, q_tilde: f64, lambda: f64, initial: f64) -> Result<Self> {
        check_probability(q)?;
        check_probability(q_tilde)?;
        if q == q_tilde {
            return Err(Error::DegenerateAuxiliary(q));
        }
        Ok(Self {
            main: Estimator::new(kind, q, lambda, initial)?,
            aux: Estimator::new(kind, q_tilde, lambda, initial)?,
            tracker: MseTracker::new(initial, q),
        })
    }

    /// Rebuilds a tracked quantile from its eight per-sample scalars (as
    /// returned by [`Self::state_scalars`]) plus the update counter.
    pub fn from_scalars(
        kind: EstimatorKind,
        q: f64,
        q_tilde: f64,
        scalars: [f64; STATE_SCALARS],
        n_updates: u64,
    ) -> Result<Self> {
        let [main, aux, mu, sigma2, portion, h, gprime, lambda] = scalars;
        let mut tq = Self::new(kind, q, q_tilde, lambda, main)?;
        tq.aux = Estimator::new(kind, q_tilde, lambda, aux)?;
        tq.tracker = MseTracker {
            mu,
            sigma2,
            portion,
            h,
            gprime,
            n_updates,
            gprime_seeded: n_updates > 0,
        };
        Ok(tq)
    }

    /// `[main, aux, mu, sigma2, portion, h, gprime, lambda]`.
    pub fn state_scalars(&self) -> [f64; STATE_SCALARS] {
        let t = &self.tracker;
        [
            self.main.estimate(),
            self.aux.estimate(),
            t.mu,
            t.sigma2,
            t.portion,
            t.h,
            t.gprime,
            self.main.lambda(),
        ]
    }

    pub fn lambda(&self) -> f64 {
        self.main.lambda()
    }

    pub fn estimate(&self) -> f64 {
        self.main.estimate()
    }

    pub fn mse_estimate(&self) -> f64 {
        self.tracker.mse_estimate()
    }

    pub fn is_warm(&self, params: &SmoothingParams) -> bool {
        self.tracker.is_warm(params)
    }

    /// Processes one sample: bias recursion against the estimate `x` was
    /// compared to, then both estimator updates, then the variance and slope
    /// recursions on the new estimates.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, x: f64, params: &SmoothingParams, rng: &mut R) {
        let q = self.main.q();
        self.tracker.update_bias(params, x, self.main.estimate(), q);
        self.main.update(x, rng);
        self.aux.update(x, rng);
        self.tracker.update_mean_var(params, self.main.estimate());
        self.tracker.update_gprime(
            params,
            self.main.estimate(),
            self.aux.estimate(),
            q,
            self.aux.q(),
        );
        self.tracker.n_updates += 1;
    }

    /// Moves both estimators to a new step size and restarts them from the given
    /// estimates. The slope is kept; the other recursions start over.
    pub(crate) fn restart(&mut self, lambda: f64, main: f64, aux: f64) -> Result<()> {
        self.main.reset(lambda, main)?;
        self.aux.reset(lambda, aux)?;
        self.tracker.restart(main, self.main.q());
        Ok(())
    }

    pub(crate) fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Ok(Self {
            main: self.main.with_lambda(lambda)?,
            aux: self.aux.with_lambda(lambda)?,
            tracker: self.tracker,
        })
    }
}
