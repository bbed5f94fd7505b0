//! Step-size controllers built on [`TrackedQuantile`].
//!
//! [`Oracle`] runs one tracked quantile per step size on a fixed grid and, on
//! every sample, reports the estimate whose estimated MSE is smallest. Selection
//! only reads member state, so the members evolve exactly as they would alone.
//!
//! [`Hil`] runs three tracked quantiles at `lambda / a`, `lambda` and
//! `a * lambda`. Every `M` samples (plus optional jitter) the center moves
//! toward the member with the smallest estimated MSE and all three restart from
//! the winner's estimates.

use rand::Rng;

use crate::error::{check_probability, Error, Result};
use crate::estimators::{check_lambda, EstimatorKind};
use crate::mse_tracking::{default_q_tilde, SmoothingParams, TrackedQuantile};

/// What is being tracked and how the MSE recursions are smoothed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub kind: EstimatorKind,
    pub q: f64,
    pub q_tilde: f64,
    pub smoothing: SmoothingParams,
}

impl Target {
    /// Default auxiliary probability and default smoothing.
    pub fn new(kind: EstimatorKind, q: f64) -> Self {
        Self {
            kind,
            q,
            q_tilde: default_q_tilde(q),
            smoothing: SmoothingParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability(self.q)?;
        check_probability(self.q_tilde)?;
        if self.q == self.q_tilde {
            return Err(Error::DegenerateAuxiliary(self.q));
        }
        self.smoothing.validate()
    }

    fn member(&self, lambda: f64, initial: f64) -> Result<TrackedQuantile> {
        TrackedQuantile::new(self.kind, self.q, self.q_tilde, lambda, initial)
    }
}

/// `exp(-7), exp(-6.95), ..., exp(0)`: 141 points.
pub fn default_lambda_grid() -> Vec<f64> {
    log_spaced_grid(-7.0, 0.0, 141).expect("valid default grid")
}

/// `points` values whose natural logs are evenly spaced on `[log_min, log_max]`.
/// A single point sits at `log_min`.
pub fn log_spaced_grid(log_min: f64, log_max: f64, points: usize) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::InvalidGrid("grid needs at least one point".into()));
    }
    if !(log_min.is_finite() && log_max.is_finite()) || (points > 1 && log_max <= log_min) {
        return Err(Error::InvalidGrid(format!(
            "bad log bounds [{log_min}, {log_max}]"
        )));
    }
    if points == 1 {
        return Ok(vec![log_min.exp()]);
    }
    let step = (log_max - log_min) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| (log_min + step * i as f64).exp())
        .collect())
}

/// Growth of the Oracle grid when the selection sits near one of its ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridExtension {
    /// Extend when the selected index is within this many positions of an end.
    pub margin: usize,
    /// Ratio between the new and the boundary step size. `None` reuses the
    /// ratio of the two outermost grid points at that end.
    pub factor: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for GridExtension {
    fn default() -> Self {
        Self {
            margin: 1,
            factor: None,
            lambda_min: 1e-12,
            lambda_max: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub target: Target,
    pub lambda_grid: Vec<f64>,
    pub friction: bool,
    pub extension: Option<GridExtension>,
}

impl OracleConfig {
    pub fn new(target: Target) -> Self {
        Self {
            target,
            lambda_grid: default_lambda_grid(),
            friction: false,
            extension: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        let grid = &self.lambda_grid;
        if grid.len() < 2 {
            return Err(Error::InvalidGrid("oracle needs at least two step sizes".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("step sizes must be strictly increasing".into()));
        }
        if grid[0] <= 0.0 {
            return Err(Error::InvalidGrid("step sizes must be positive".into()));
        }
        for &lambda in grid {
            check_lambda(self.target.kind, self.target.q, lambda)?;
        }
        if let Some(ext) = &self.extension {
            if let Some(f) = ext.factor {
                if !(f > 1.0 && f.is_finite()) {
                    return Err(Error::InvalidGrid(format!("extension factor must exceed 1, got {f}")));
                }
            }
            if !(ext.lambda_min > 0.0 && ext.lambda_min < ext.lambda_max) {
                return Err(Error::InvalidGrid("extension bounds must satisfy 0 < min < max".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of a grid-extension check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridChange {
    Unchanged,
    Prepended(f64),
    Appended(f64),
    /// Extension was due but the new step size would leave the allowed range.
    AtBound,
}

/// Ensemble over a step-size grid with MSE-guided selection.
#[derive(Debug, Clone)]
pub struct Oracle {
    config: OracleConfig,
    warmup: u64,
    members: Vec<TrackedQuantile>,
    current: usize,
}

impl Oracle {
    pub fn new(config: OracleConfig, initial: f64) -> Result<Self> {
        config.validate()?;
        let members = config
            .lambda_grid
            .iter()
            .map(|&lambda| config.target.member(lambda, initial))
            .collect::<Result<Vec<_>>>()?;
        let current = (members.len() - 1) / 2;
        Ok(Self {
            warmup: config.target.smoothing.warmup_len(),
            config,
            members,
            current,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn members(&self) -> &[TrackedQuantile] {
        &self.members
    }

    /// Mutable member access, for seeding specific states.
    pub fn members_mut(&mut self) -> &mut [TrackedQuantile] {
        &mut self.members
    }

    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        self.members.iter().map(TrackedQuantile::lambda)
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn estimate(&self) -> f64 {
        self.members[self.current].estimate()
    }

    pub fn selected_lambda(&self) -> f64 {
        self.members[self.current].lambda()
    }

    pub fn selected_mse(&self) -> f64 {
        self.members[self.current].mse_estimate()
    }

    /// Advances every member on `x`, reselects and returns the selected estimate.
    pub fn step<R: Rng + ?Sized>(&mut self, x: f64, rng: &mut R) -> f64 {
        let params = self.config.target.smoothing;
        for member in &mut self.members {
            member.step(x, &params, rng);
        }
        self.current = self.select();
        if self.config.extension.is_some() {
            self.extend();
        }
        self.estimate()
    }

    /// Index of the warm member with the smallest estimated MSE.
    ///
    /// Ties go to the smaller step size. With friction the result moves at most
    /// one position from the current index. Before any member is warm the
    /// middle of the grid is used.
    pub fn select(&self) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (i, member) in self.members.iter().enumerate() {
            if member.tracker.n_updates < self.warmup {
                continue;
            }
            let mse = member.mse_estimate();
            if mse.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| mse < b) {
                best = Some((i, mse));
            }
        }
        match best {
            None => (self.members.len() - 1) / 2,
            Some((i, _)) if self.config.friction => {
                i.clamp(self.current.saturating_sub(1), self.current + 1)
            }
            Some((i, _)) => i,
        }
    }

    /// Adds one step size beyond the grid end nearest to the selection when the
    /// selection is within the configured margin of that end. The new member is
    /// a copy of the boundary member with the new step size.
    pub fn extend(&mut self) -> GridChange {
        let Some(ext) = self.config.extension else {
            return GridChange::Unchanged;
        };
        let last = self.members.len() - 1;
        let kind = self.config.target.kind;
        let q = self.config.target.q;
        if self.current <= ext.margin {
            let factor = ext
                .factor
                .unwrap_or_else(|| self.members[1].lambda() / self.members[0].lambda());
            let lambda = self.members[0].lambda() / factor;
            if lambda < ext.lambda_min {
                return GridChange::AtBound;
            }
            let Ok(member) = self.members[0].with_lambda(lambda) else {
                return GridChange::AtBound;
            };
            self.members.insert(0, member);
            self.config.lambda_grid.insert(0, lambda);
            self.current += 1;
            GridChange::Prepended(lambda)
        } else if self.current + ext.margin >= last {
            let factor = ext
                .factor
                .unwrap_or_else(|| self.members[last].lambda() / self.members[last - 1].lambda());
            let lambda = self.members[last].lambda() * factor;
            if lambda > ext.lambda_max || check_lambda(kind, q, lambda).is_err() {
                return GridChange::AtBound;
            }
            let Ok(member) = self.members[last].with_lambda(lambda) else {
                return GridChange::AtBound;
            };
            self.members.push(member);
            self.config.lambda_grid.push(lambda);
            GridChange::Appended(lambda)
        } else {
            GridChange::Unchanged
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HilConfig {
    pub target: Target,
    /// Ratio `a > 1` between neighbouring step sizes.
    pub ratio: f64,
    /// Base rebalance period `M`.
    pub period: u64,
    /// Each period is `period + U` with `U` uniform on `0..=jitter`.
    pub jitter: u64,
    pub initial_lambda: f64,
}

impl HilConfig {
    /// Library defaults: `a = 2`, `M = 1000`, no jitter, starting at `lambda = 1`.
    pub fn new(target: Target) -> Self {
        Self {
            target,
            ratio: 2.0,
            period: 1000,
            jitter: 0,
            initial_lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if !(self.ratio > 1.0 && self.ratio.is_finite()) {
            return Err(Error::InvalidController(format!(
                "ratio a must exceed 1, got {}",
                self.ratio
            )));
        }
        if self.period == 0 {
            return Err(Error::InvalidController("rebalance period must be at least 1".into()));
        }
        if self.initial_lambda.is_nan() || self.initial_lambda <= 0.0 {
            return Err(Error::InvalidStepSize(self.initial_lambda));
        }
        check_lambda(
            self.target.kind,
            self.target.q,
            self.initial_lambda * self.ratio,
        )
    }
}

/// Outcome of a scheduled rebalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rebalance {
    /// Too few samples since the last restart for the MSE estimates to be warm.
    Skipped,
    /// The middle member won; nothing changes.
    Kept,
    Lowered,
    Raised,
    /// The high member won but raising would exceed the estimator's step limit.
    AtBound,
}

pub const LOW: usize = 0;
pub const MID: usize = 1;
pub const HIGH: usize = 2;

/// Three-member controller with periodic recentering.
#[derive(Debug, Clone)]
pub struct Hil {
    config: HilConfig,
    warmup: u64,
    members: [TrackedQuantile; 3],
    center: f64,
    steps_since_rebalance: u64,
    next_rebalance_at: u64,
    steps_since_restart: u64,
    rebalanced: bool,
    output: usize,
}

impl Hil {
    pub fn new<R: Rng + ?Sized>(config: HilConfig, initial: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let center = config.initial_lambda;
        let a = config.ratio;
        let members = [
            config.target.member(center / a, initial)?,
            config.target.member(center, initial)?,
            config.target.member(center * a, initial)?,
        ];
        let next_rebalance_at = draw_period(&config, rng);
        Ok(Self {
            warmup: config.target.smoothing.warmup_len(),
            config,
            members,
            center,
            steps_since_rebalance: 0,
            next_rebalance_at,
            steps_since_restart: 0,
            rebalanced: false,
            output: MID,
        })
    }

    pub fn config(&self) -> &HilConfig {
        &self.config
    }

    /// Members in `[low, mid, high]` order.
    pub fn members(&self) -> &[TrackedQuantile; 3] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [TrackedQuantile; 3] {
        &mut self.members
    }

    pub fn center_lambda(&self) -> f64 {
        self.center
    }

    pub fn steps_since_rebalance(&self) -> u64 {
        self.steps_since_rebalance
    }

    pub fn next_rebalance_at(&self) -> u64 {
        self.next_rebalance_at
    }

    pub fn output_index(&self) -> usize {
        self.output
    }

    pub fn estimate(&self) -> f64 {
        self.members[self.output].estimate()
    }

    pub fn output_mse(&self) -> f64 {
        self.members[self.output].mse_estimate()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, x: f64, rng: &mut R) -> f64 {
        let params = self.config.target.smoothing;
        for member in &mut self.members {
            member.step(x, &params, rng);
        }
        self.steps_since_rebalance += 1;
        self.steps_since_restart += 1;
        if self.steps_since_rebalance >= self.next_rebalance_at {
            self.rebalance();
            self.rebalanced = true;
            self.steps_since_rebalance = 0;
            self.next_rebalance_at = draw_period(&self.config, rng);
        }
        self.output = self.pick_output();
        self.estimate()
    }

    fn pick_output(&self) -> usize {
        if !self.rebalanced {
            return MID;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, member) in self.members.iter().enumerate() {
            if member.tracker.n_updates < self.warmup {
                continue;
            }
            let mse = member.mse_estimate();
            if best.is_none_or(|(_, b)| mse < b) {
                best = Some((i, mse));
            }
        }
        best.map_or(MID, |(i, _)| i)
    }

    /// Moves the center toward the member with the smallest estimated MSE and
    /// restarts all three members from its estimates. The slope estimate is
    /// carried over from the winner.
    pub fn rebalance(&mut self) -> Rebalance {
        if self.steps_since_restart < self.warmup {
            return Rebalance::Skipped;
        }
        let mse = self.members.map(|m| m.mse_estimate());
        let winner = if mse[LOW] < mse[MID] && mse[LOW] <= mse[HIGH] {
            LOW
        } else if mse[HIGH] < mse[MID] && mse[HIGH] < mse[LOW] {
            HIGH
        } else {
            return Rebalance::Kept;
        };

        let a = self.config.ratio;
        let (center, outcome) = if winner == LOW {
            (self.center / a, Rebalance::Lowered)
        } else {
            (self.center * a, Rebalance::Raised)
        };
        if check_lambda(self.config.target.kind, self.config.target.q, center * a).is_err()
            || center / a <= 0.0
        {
            return Rebalance::AtBound;
        }

        let best = self.members[winner];
        let lambdas = [center / a, center, center * a];
        for (member, lambda) in self.members.iter_mut().zip(lambdas) {
            member
                .restart(lambda, best.main.estimate(), best.aux.estimate())
                .expect("restart values were validated");
            member.tracker.gprime = best.tracker.gprime;
            member.tracker.gprime_seeded = best.tracker.gprime_seeded;
        }
        self.center = center;
        self.steps_since_restart = 0;
        outcome
    }
}

fn draw_period<R: Rng + ?Sized>(config: &HilConfig, rng: &mut R) -> u64 {
    if config.jitter == 0 {
        config.period
    } else {
        config.period + rng.random_range(0..=config.jitter)
    }
}

/// Fixed step size with MSE tracking, as a baseline controller.
#[derive(Debug, Clone)]
pub struct Fixed {
    target: Target,
    member: TrackedQuantile,
}

impl Fixed {
    pub fn new(target: Target, lambda: f64, initial: f64) -> Result<Self> {
        target.validate()?;
        Ok(Self {
            member: target.member(lambda, initial)?,
            target,
        })
    }

    pub fn member(&self) -> &TrackedQuantile {
        &self.member
    }

    pub fn step<R: Rng + ?Sized>(&mut self, x: f64, rng: &mut R) -> f64 {
        self.member.step(x, &self.target.smoothing, rng);
        self.member.estimate()
    }
}

/// Controller choice with everything needed to build it once the initial
/// estimate is known.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    Fixed { target: Target, lambda: f64 },
    Oracle(OracleConfig),
    Hil(HilConfig),
}

impl ControllerSpec {
    pub fn target(&self) -> &Target {
        match self {
            ControllerSpec::Fixed { target, .. } => target,
            ControllerSpec::Oracle(c) => &c.target,
            ControllerSpec::Hil(c) => &c.target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControllerSpec::Fixed { target, lambda } => {
                target.validate()?;
                check_lambda(target.kind, target.q, *lambda)
            }
            ControllerSpec::Oracle(c) => c.validate(),
            ControllerSpec::Hil(c) => c.validate(),
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, initial: f64, rng: &mut R) -> Result<Controller> {
        Ok(match self {
            ControllerSpec::Fixed { target, lambda } => {
                Controller::Fixed(Fixed::new(*target, *lambda, initial)?)
            }
            ControllerSpec::Oracle(c) => Controller::Oracle(Oracle::new(c.clone(), initial)?),
            ControllerSpec::Hil(c) => Controller::Hil(Hil::new(*c, initial, rng)?),
        })
    }
}

/// Per-sample controller output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub estimate: f64,
    /// Selected step size (Oracle), center step size (HIL) or the fixed value.
    pub lambda: f64,
    /// Estimated MSE of the reported estimate.
    pub mse_hat: f64,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // stepped per sample; avoid the indirection
pub enum Controller {
    Fixed(Fixed),
    Oracle(Oracle),
    Hil(Hil),
}

impl Controller {
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, x: f64, rng: &mut R) -> StepOutput {
        match self {
            Controller::Fixed(c) => {
                let estimate = c.step(x, rng);
                StepOutput {
                    estimate,
                    lambda: c.member.lambda(),
                    mse_hat: c.member.mse_estimate(),
                }
            }
            Controller::Oracle(c) => {
                let estimate = c.step(x, rng);
                StepOutput {
                    estimate,
                    lambda: c.selected_lambda(),
                    mse_hat: c.selected_mse(),
                }
            }
            Controller::Hil(c) => {
                let estimate = c.step(x, rng);
                StepOutput {
                    estimate,
                    lambda: c.center_lambda(),
                    mse_hat: c.output_mse(),
                }
            }
        }
    }
}
