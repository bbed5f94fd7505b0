//! Incremental quantile estimators.
//!
//! Both estimators share the same update skeleton: when a sample lands at or
//! above the current estimate the estimate moves up by `lambda * D1`, otherwise
//! it moves down by `lambda * D2`. They differ only in the step factors:
//!
//! * DUMIQE uses `D1 = q * Q`, `D2 = (1 - q) * Q`, so steps scale with the
//!   estimate itself and the estimator is scale-equivariant on positive data.
//! * Frugal uses Bernoulli step factors driven by a uniform draw `u`, so the
//!   step magnitude is `lambda` or zero regardless of the data scale.

use rand::Rng;

use crate::error::{check_probability, Error, Result};

/// Indicator convention for the Frugal step factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrugalRule {
    /// `D1 = I(u <= q)`, `D2 = I(u <= 1 - q)`. Fixed point is the q-quantile.
    #[default]
    Converging,
    /// `D1 = I(q < u)`, `D2 = I(1 - q < u)`. Fixed point is the (1 - q)-quantile;
    /// kept for side-by-side comparison.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Dumiqe,
    Frugal(FrugalRule),
}

impl EstimatorKind {
    pub const FRUGAL: EstimatorKind = EstimatorKind::Frugal(FrugalRule::Converging);

    pub fn is_dumiqe(self) -> bool {
        matches!(self, EstimatorKind::Dumiqe)
    }

    /// Largest admissible step size for a target probability `q`.
    ///
    /// DUMIQE needs `lambda * max(q, 1 - q) < 1` to keep the estimate positive;
    /// Frugal has no upper bound.
    pub fn lambda_limit(self, q: f64) -> f64 {
        match self {
            EstimatorKind::Dumiqe => 1.0 / q.max(1.0 - q),
            EstimatorKind::Frugal(_) => f64::INFINITY,
        }
    }
}

/// One incremental quantile estimator: target probability, step size and the
/// running estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    kind: EstimatorKind,
    q: f64,
    lambda: f64,
    estimate: f64,
}

impl Estimator {
    /// Builds an estimator starting from `initial`.
    ///
    /// A zero step size is accepted and yields a frozen estimator.
    pub fn new(kind: EstimatorKind, q: f64, lambda: f64, initial: f64) -> Result<Self> {
        check_probability(q)?;
        check_lambda(kind, q, lambda)?;
        check_initial(kind, initial)?;
        Ok(Self {
            kind,
            q,
            lambda,
            estimate: initial,
        })
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// DUMIQE step. Ties `x == estimate` take the upward branch.
    #[inline]
    pub fn dumique_update(&mut self, x: f64) {
        debug_assert!(self.kind.is_dumiqe());
        if x >= self.estimate {
            self.estimate += self.lambda * self.q * self.estimate;
        } else {
            self.estimate -= self.lambda * (1.0 - self.q) * self.estimate;
        }
    }

    /// Frugal step with an externally supplied uniform draw `u` in `[0, 1]`.
    #[inline]
    pub fn frugal_update(&mut self, x: f64, u: f64) {
        let rule = match self.kind {
            EstimatorKind::Frugal(rule) => rule,
            EstimatorKind::Dumiqe => FrugalRule::Converging,
        };
        let (up, down) = match rule {
            FrugalRule::Converging => (u <= self.q, u <= 1.0 - self.q),
            FrugalRule::Literal => (self.q < u, 1.0 - self.q < u),
        };
        if x >= self.estimate {
            if up {
                self.estimate += self.lambda;
            }
        } else if down {
            self.estimate -= self.lambda;
        }
    }

    /// Dispatches on the estimator kind. Exactly one uniform draw is consumed
    /// for Frugal and none for DUMIQE.
    #[inline]
    pub fn update<R: Rng + ?Sized>(&mut self, x: f64, rng: &mut R) {
        match self.kind {
            EstimatorKind::Dumiqe => self.dumique_update(x),
            EstimatorKind::Frugal(_) => {
                let u: f64 = rng.random();
                self.frugal_update(x, u);
            }
        }
    }

    /// Replaces the step size and the estimate in one go (used on restarts).
    pub(crate) fn reset(&mut self, lambda: f64, estimate: f64) -> Result<()> {
        check_lambda(self.kind, self.q, lambda)?;
        check_initial(self.kind, estimate)?;
        self.lambda = lambda;
        self.estimate = estimate;
        Ok(())
    }

    pub(crate) fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        check_lambda(self.kind, self.q, lambda)?;
        self.lambda = lambda;
        Ok(self)
    }
}

pub(crate) fn check_lambda(kind: EstimatorKind, q: f64, lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidStepSize(lambda));
    }
    if lambda >= kind.lambda_limit(q) {
        return Err(Error::StepTooLarge { lambda, q });
    }
    Ok(())
}

fn check_initial(kind: EstimatorKind, initial: f64) -> Result<()> {
    if !initial.is_finite() {
        return Err(Error::NonFiniteEstimate(initial));
    }
    if kind.is_dumiqe() && initial <= 0.0 {
        return Err(Error::NonPositiveEstimate(initial));
    }
    Ok(())
}
