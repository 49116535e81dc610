//! OPSA and the two baselines it is compared against.
//!
//! One iteration of every method reads `(L_t, R_t)`, forms the subgradient
//! `S_t = A*(sign(A(L_tR_tᵀ) − y))`, and updates both factors from the same
//! incoming iterate:
//!
//! * OPSA: `L' = L − η S R (RᵀR + λI)⁻¹`, `R' = R − η Sᵀ L (LᵀL + λI)⁻¹`
//! * ScaledSM: the same with `λ = 0` and eigen pseudo-inverses
//! * VanillaSubGD: `L' = L − η S R`, `R' = R − η Sᵀ L`
//!
//! [`Solver`] exposes the iteration as a state machine that asks for one
//! forward and one adjoint application per step. That lets callers batch
//! the sensing work of many runs that share an ensemble (see
//! [`run_lockstep`]) while each run stays bitwise identical to [`run`].

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::metrics::{dist_upper, relative_error};
use crate::model::{truncated_svd_factors, FactorPair, GroundTruth};
use crate::objective::{loss_and_signs, optimal_value, LossContext};
use crate::sensing::{GaussianEnsemble, Measurements};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OPSA")]
    Opsa,
    #[serde(rename = "ScaledSM")]
    ScaledSm,
    #[serde(rename = "VanillaSubGD")]
    VanillaSubGd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Opsa, Method::ScaledSm, Method::VanillaSubGd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Opsa => "OPSA",
            Method::ScaledSm => "ScaledSM",
            Method::VanillaSubGd => "VanillaSubGD",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method {s:?} (expected OPSA, ScaledSM or VanillaSubGD)"
                ))
            })
    }
}

pub const DEFAULT_ETA0: f64 = 0.1;
pub const DEFAULT_DECAY: f64 = 0.97;
pub const DEFAULT_PINV_CUTOFF: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepPolicy {
    /// `η_t = (𝓛_t − 𝓛⋆)/γ_t`. `None` takes `𝓛⋆ = ‖s‖₁` from planted
    /// measurements.
    Polyak {
        #[serde(default)]
        opt_value: Option<f64>,
    },
    /// `η_t = eta0·qᵗ`.
    Geometric { eta0: f64, q: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Polyak { opt_value: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `None` picks [`default_truncation_quantile`].
    Spectral {
        truncation_quantile: Option<f64>,
    },
    FromFactors(FactorPair),
}

impl Default for Init {
    fn default() -> Self {
        Init::Spectral {
            truncation_quantile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub method: Method,
    pub step_policy: StepPolicy,
    pub init: Init,
    pub max_iters: usize,
    /// Stop once the relative error is at or below this.
    pub rel_err_stop: f64,
    /// Carried into the trace; the iteration itself draws no randomness.
    pub seed: u64,
    /// Evaluate the distance upper bound every this many iterations; 0 is off.
    pub dist_every: usize,
    pub pinv_cutoff: f64,
    /// Fill `wall_ms`. Off by default so traces are reproducible.
    pub record_wall_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            method: Method::Opsa,
            step_policy: StepPolicy::default(),
            init: Init::default(),
            max_iters: DEFAULT_MAX_ITERS,
            rel_err_stop: 0.0,
            seed: 0,
            dist_every: 0,
            pinv_cutoff: DEFAULT_PINV_CUTOFF,
            record_wall_time: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda = {} must be finite and >= 0",
                self.lambda
            )));
        }
        if self.method == Method::Opsa && self.lambda == 0.0 {
            return Err(Error::InvalidParameter("OPSA requires lambda > 0".into()));
        }
        if let StepPolicy::Geometric { eta0, q } = self.step_policy {
            if !(eta0 > 0.0) || !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "geometric steps need eta0 > 0 and 0 < q < 1; got {eta0}, {q}"
                )));
            }
        }
        if let StepPolicy::Polyak { opt_value: Some(v) } = self.step_policy {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "optimal value {v} must be finite"
                )));
            }
        }
        if let Init::Spectral {
            truncation_quantile: Some(q),
        } = self.init
        {
            check_quantile(q)?;
        }
        if !(self.rel_err_stop >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_err_stop = {} must be >= 0",
                self.rel_err_stop
            )));
        }
        if !(self.pinv_cutoff >= 0.0 && self.pinv_cutoff < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pinv_cutoff = {} must lie in [0, 1)",
                self.pinv_cutoff
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub loss: f64,
    pub step_size: f64,
    pub rel_error: f64,
    pub dist_estimate: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    /// Relative error reached the stop tolerance.
    Converged,
    /// The step policy returned zero (loss at its optimum).
    ZeroStep,
    /// Polyak denominator vanished with a positive loss gap.
    Stalled,
    /// Non-finite loss or iterate.
    Diverged,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::MaxIters => "max_iters",
            Termination::Converged => "converged",
            Termination::ZeroStep => "zero_step",
            Termination::Stalled => "stalled",
            Termination::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub config: SolverConfig,
    pub records: Vec<IterationRecord>,
    pub factors: FactorPair,
    pub termination: Termination,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn last(&self) -> &IterationRecord {
        self.records
            .last()
            .expect("a trace always holds the initial record")
    }

    /// Number of updates applied.
    pub fn iterations(&self) -> usize {
        self.last().t
    }

    /// First iteration whose relative error is at or below `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_error <= threshold)
            .map(|r| r.t)
    }
}

pub fn geometric_stepsize(t: usize, eta0: f64, q: f64) -> f64 {
    eta0 * q.powi(t.min(i32::MAX as usize) as i32)
}

/// Truncation quantile used when none is configured: `1 − 1.5·fraction`
/// for planted corruption, otherwise 1 (no truncation).
pub fn default_truncation_quantile(meas: &Measurements) -> f64 {
    if meas.planted && meas.outlier_fraction > 0.0 {
        (1.0 - 1.5 * meas.outlier_fraction).clamp(f64::MIN_POSITIVE, 1.0)
    } else {
        1.0
    }
}

fn check_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "truncation quantile {q} outside (0, 1]"
        )))
    }
}

/// Zeroes every measurement whose magnitude exceeds the nearest-rank
/// `quantile` of `{|y_i|}`.
pub fn truncate_measurements(y: &[f64], quantile: f64) -> Result<Vec<f64>> {
    check_quantile(quantile)?;
    if quantile == 1.0 || y.is_empty() {
        return Ok(y.to_vec());
    }
    let mut mags: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(f64::total_cmp);
    let rank = ((quantile * y.len() as f64).ceil() as usize).clamp(1, y.len());
    let threshold = mags[rank - 1];
    Ok(y.iter()
        .map(|&v| if v.abs() > threshold { 0.0 } else { v })
        .collect())
}

/// Top-`d` factors of `M = p·A*(ỹ)`, where `ỹ` drops measurements above
/// the truncation quantile. In the noiseless case `E[M] = X⋆`.
pub fn spectral_init(
    ctx: &LossContext<'_>,
    d: usize,
    truncation_quantile: f64,
) -> Result<FactorPair> {
    let (m, n) = (ctx.ensemble.m(), ctx.ensemble.n());
    if d == 0 || d > m.min(n) {
        return Err(Error::Dimension(format!(
            "d = {d} must lie in 1..={}",
            m.min(n)
        )));
    }
    let y = truncate_measurements(&ctx.meas.y, truncation_quantile)?;
    let backprojected = ctx.ensemble.adjoint(&y)? * ctx.p() as f64;
    truncated_svd_factors(&backprojected, d)
}

/// Factor-space search directions and the Polyak denominator of one step.
struct Directions {
    l: Matrix,
    r: Matrix,
    gamma: f64,
}

fn check_step_shapes(f: &FactorPair, s: &Matrix) -> Result<()> {
    if s.nrows() != f.l.nrows() || s.ncols() != f.r.nrows() {
        return Err(Error::shape(
            format!("{}x{} subgradient", f.l.nrows(), f.r.nrows()),
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    Ok(())
}

/// `B G⁻¹` for SPD `G`, via Cholesky.
fn right_solve_spd(b: &Matrix, g: Matrix) -> Result<Matrix> {
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("preconditioner is not positive definite".into()))?;
    Ok(chol.solve(&b.transpose()).transpose())
}

fn directions(
    method: Method,
    f: &FactorPair,
    s: &Matrix,
    lambda: f64,
    pinv_cutoff: f64,
) -> Result<Directions> {
    check_step_shapes(f, s)?;
    let sr = s * &f.r;
    let sl = s.transpose() * &f.l;
    match method {
        Method::Opsa => {
            if !(lambda > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "OPSA requires lambda > 0, got {lambda}"
                )));
            }
            let d = f.rank();
            let ridge = Matrix::identity(d, d) * lambda;
            let gram_r = f.r.transpose() * &f.r + &ridge;
            let gram_l = f.l.transpose() * &f.l + &ridge;
            let gamma = (&sr * linalg::spd_inv_sqrt(&gram_r)).norm_squared()
                + (&sl * linalg::spd_inv_sqrt(&gram_l)).norm_squared();
            Ok(Directions {
                l: right_solve_spd(&sr, gram_r)?,
                r: right_solve_spd(&sl, gram_l)?,
                gamma,
            })
        }
        Method::ScaledSm => {
            let gram_r = f.r.transpose() * &f.r;
            let gram_l = f.l.transpose() * &f.l;
            let inv = |x: f64| 1.0 / x;
            let inv_sqrt = |x: f64| 1.0 / x.sqrt();
            let gamma = (&sr * linalg::psd_pinv_apply(&gram_r, pinv_cutoff, inv_sqrt))
                .norm_squared()
                + (&sl * linalg::psd_pinv_apply(&gram_l, pinv_cutoff, inv_sqrt)).norm_squared();
            Ok(Directions {
                l: &sr * linalg::psd_pinv_apply(&gram_r, pinv_cutoff, inv),
                r: &sl * linalg::psd_pinv_apply(&gram_l, pinv_cutoff, inv),
                gamma,
            })
        }
        Method::VanillaSubGd => {
            let gamma = sr.norm_squared() + sl.norm_squared();
            Ok(Directions {
                l: sr,
                r: sl,
                gamma,
            })
        }
    }
}

fn apply(f: &FactorPair, dir: &Directions, eta: f64) -> FactorPair {
    FactorPair {
        l: &f.l - &dir.l * eta,
        r: &f.r - &dir.r * eta,
    }
}

/// One simultaneous OPSA update of both factors.
pub fn opsa_step(f: &FactorPair, s: &Matrix, lambda: f64, eta: f64) -> Result<FactorPair> {
    let dir = directions(Method::Opsa, f, s, lambda, 0.0)?;
    Ok(apply(f, &dir, eta))
}

/// One ScaledSM or VanillaSubGD update.
pub fn baseline_step(
    f: &FactorPair,
    s: &Matrix,
    method: Method,
    eta: f64,
    pinv_cutoff: f64,
) -> Result<FactorPair> {
    if method == Method::Opsa {
        return Err(Error::InvalidParameter(
            "baseline_step takes ScaledSM or VanillaSubGD".into(),
        ));
    }
    let dir = directions(method, f, s, 0.0, pinv_cutoff)?;
    Ok(apply(f, &dir, eta))
}

fn polyak_from_gamma(gap: f64, gamma: f64) -> f64 {
    if gap <= 0.0 || gamma == 0.0 {
        0.0
    } else {
        gap / gamma
    }
}

/// OPSA's Polyak step `(loss − opt)/γ` with
/// `γ = ‖S R (RᵀR+λI)^{-1/2}‖²_F + ‖Sᵀ L (LᵀL+λI)^{-1/2}‖²_F`.
pub fn polyak_stepsize(
    f: &FactorPair,
    s: &Matrix,
    loss: f64,
    opt_value: f64,
    lambda: f64,
) -> Result<f64> {
    let dir = directions(Method::Opsa, f, s, lambda, 0.0)?;
    Ok(polyak_from_gamma(loss - opt_value, dir.gamma))
}

/// Resolves the configured initialization against the observations.
pub fn initial_factors(ctx: &LossContext<'_>, d: usize, init: &Init) -> Result<FactorPair> {
    match init {
        Init::Spectral {
            truncation_quantile,
        } => {
            let q = truncation_quantile.unwrap_or_else(|| default_truncation_quantile(ctx.meas));
            spectral_init(ctx, d, q)
        }
        Init::FromFactors(f) => {
            if f.l.nrows() != ctx.ensemble.m() || f.r.nrows() != ctx.ensemble.n() || f.rank() != d {
                return Err(Error::shape(
                    format!(
                        "{}x{d} and {}x{d} factors",
                        ctx.ensemble.m(),
                        ctx.ensemble.n()
                    ),
                    format!(
                        "{}x{} and {}x{}",
                        f.l.nrows(),
                        f.l.ncols(),
                        f.r.nrows(),
                        f.r.ncols()
                    ),
                ));
            }
            Ok(f.clone())
        }
    }
}

/// What a [`Solver`] needs next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Feed `A(X)` for [`Solver::current`].
    Forward,
    /// Feed `A*(signs)` for the signs returned by [`Solver::observe_forward`].
    Adjoint,
    Done,
}

/// One run of a method, driven one sensing application at a time.
pub struct Solver<'a> {
    gt: &'a GroundTruth,
    y: &'a [f64],
    config: SolverConfig,
    opt_value: Option<f64>,
    factors: FactorPair,
    x: Matrix,
    t: usize,
    pending: Option<(f64, f64, Option<f64>)>,
    phase: Phase,
    records: Vec<IterationRecord>,
    termination: Option<Termination>,
    warnings: Vec<String>,
    clock: Instant,
}

impl<'a> Solver<'a> {
    /// Starts a run at `init`. The ensemble is only used for shape checks;
    /// sensing results are supplied by the caller.
    pub fn new(
        gt: &'a GroundTruth,
        ctx: &LossContext<'a>,
        config: SolverConfig,
        init: FactorPair,
    ) -> Result<Self> {
        config.validate()?;
        init.check_against(gt)?;
        if ctx.ensemble.m() != gt.m || ctx.ensemble.n() != gt.n {
            return Err(Error::shape(
                format!("{}x{} ensemble", gt.m, gt.n),
                format!("{}x{}", ctx.ensemble.m(), ctx.ensemble.n()),
            ));
        }
        let opt_value = match config.step_policy {
            StepPolicy::Polyak { opt_value: Some(v) } => Some(v),
            StepPolicy::Polyak { opt_value: None } => Some(optimal_value(ctx)?),
            StepPolicy::Geometric { .. } => None,
        };
        let x = init.product();
        Ok(Solver {
            gt,
            y: &ctx.meas.y,
            config,
            opt_value,
            factors: init,
            x,
            t: 0,
            pending: None,
            phase: Phase::Forward,
            records: Vec::new(),
            termination: None,
            warnings: Vec::new(),
            clock: Instant::now(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// The current iterate `L_t R_tᵀ`.
    pub fn current(&self) -> &Matrix {
        &self.x
    }

    pub fn factors(&self) -> &FactorPair {
        &self.factors
    }

    fn wall(&self) -> Option<f64> {
        self.config
            .record_wall_time
            .then(|| self.clock.elapsed().as_secs_f64() * 1e3)
    }

    fn finish(&mut self, loss: f64, rel_error: f64, dist: Option<f64>, why: Termination) {
        let wall_ms = self.wall();
        self.records.push(IterationRecord {
            t: self.t,
            loss,
            step_size: 0.0,
            rel_error,
            dist_estimate: dist,
            wall_ms,
        });
        self.termination = Some(why);
        self.phase = Phase::Done;
    }

    fn dist_now(&self) -> Result<Option<f64>> {
        let k = self.config.dist_every;
        if k == 0 || self.t % k != 0 || self.config.lambda == 0.0 || !self.factors.is_finite() {
            return Ok(None);
        }
        Ok(Some(
            dist_upper(&self.factors, self.gt, self.config.lambda, 1, 1e-10)?.dist_estimate(),
        ))
    }

    /// Consumes `A(X_t)`. Returns the residual signs whose adjoint is needed
    /// next, or `None` when the run has terminated.
    pub fn observe_forward(&mut self, ax: &[f64]) -> Result<Option<Vec<f64>>> {
        if self.phase != Phase::Forward {
            return Err(Error::InvalidParameter(format!(
                "solver expected {:?}, got a forward result",
                self.phase
            )));
        }
        if ax.len() != self.y.len() {
            return Err(Error::shape(
                format!("{} values", self.y.len()),
                format!("{}", ax.len()),
            ));
        }
        let (loss, signs) = loss_and_signs(ax, self.y);
        let rel_error = if self.factors.is_finite() {
            relative_error(&self.factors, self.gt)?
        } else {
            f64::NAN
        };
        if !loss.is_finite() || !rel_error.is_finite() {
            self.finish(loss, rel_error, None, Termination::Diverged);
            return Ok(None);
        }
        let dist = self.dist_now()?;
        if rel_error <= self.config.rel_err_stop {
            self.finish(loss, rel_error, dist, Termination::Converged);
            return Ok(None);
        }
        if self.t >= self.config.max_iters {
            self.finish(loss, rel_error, dist, Termination::MaxIters);
            return Ok(None);
        }
        if let Some(opt) = self.opt_value {
            if loss - opt <= 0.0 {
                self.finish(loss, rel_error, dist, Termination::ZeroStep);
                return Ok(None);
            }
        }
        self.pending = Some((loss, rel_error, dist));
        self.phase = Phase::Adjoint;
        Ok(Some(signs))
    }

    /// Consumes the subgradient `S_t` and applies the update.
    pub fn observe_subgradient(&mut self, s: &Matrix) -> Result<()> {
        let Some((loss, rel_error, dist)) =
            self.pending.take().filter(|_| self.phase == Phase::Adjoint)
        else {
            return Err(Error::InvalidParameter(format!(
                "solver expected {:?}, got a subgradient",
                self.phase
            )));
        };
        let dir = directions(
            self.config.method,
            &self.factors,
            s,
            self.config.lambda,
            self.config.pinv_cutoff,
        )?;
        let eta = match (self.config.step_policy, self.opt_value) {
            (StepPolicy::Geometric { eta0, q }, _) => geometric_stepsize(self.t, eta0, q),
            (StepPolicy::Polyak { .. }, Some(opt)) => polyak_from_gamma(loss - opt, dir.gamma),
            (StepPolicy::Polyak { .. }, None) => {
                unreachable!("Polyak runs resolve their optimum up front")
            }
        };
        if eta == 0.0 {
            let why = if dir.gamma == 0.0 {
                self.warnings.push(format!(
                    "t = {}: Polyak denominator is zero with loss gap > 0",
                    self.t
                ));
                Termination::Stalled
            } else {
                Termination::ZeroStep
            };
            self.finish(loss, rel_error, dist, why);
            return Ok(());
        }
        let wall_ms = self.wall();
        self.records.push(IterationRecord {
            t: self.t,
            loss,
            step_size: eta,
            rel_error,
            dist_estimate: dist,
            wall_ms,
        });
        self.factors = apply(&self.factors, &dir, eta);
        self.x = self.factors.product();
        self.t += 1;
        self.phase = Phase::Forward;
        Ok(())
    }

    /// The finished trace; `None` while the run is still in progress.
    pub fn into_trace(self) -> Option<Trace> {
        let termination = self.termination?;
        Some(Trace {
            config: self.config,
            records: self.records,
            factors: self.factors,
            termination,
            warnings: self.warnings,
        })
    }
}

/// Runs one configuration to termination.
pub fn run(gt: &GroundTruth, ctx: &LossContext<'_>, config: &SolverConfig) -> Result<Trace> {
    let init = initial_factors(ctx, gt.d, &config.init)?;
    let mut solver = Solver::new(gt, ctx, config.clone(), init)?;
    while !solver.is_done() {
        let ax = ctx.ensemble.forward(solver.current())?;
        if let Some(signs) = solver.observe_forward(&ax)? {
            let s = ctx.ensemble.adjoint(&signs)?;
            solver.observe_subgradient(&s)?;
        }
    }
    Ok(solver.into_trace().expect("loop exits only when done"))
}

/// One run inside a [`run_lockstep`] batch.
pub struct LockstepJob<'a> {
    pub gt: &'a GroundTruth,
    pub meas: &'a Measurements,
    pub config: SolverConfig,
}

/// Runs several jobs over one shared ensemble, batching their forward and
/// adjoint applications. Each trace is bitwise identical to what [`run`]
/// returns for the same job. A failing job yields its error without
/// stopping the others.
pub fn run_lockstep(ensemble: &GaussianEnsemble, jobs: &[LockstepJob<'_>]) -> Vec<Result<Trace>> {
    let mut slots: Vec<Option<Result<Solver<'_>>>> = jobs
        .iter()
        .map(|job| {
            let ctx = LossContext::new(ensemble, job.meas)?;
            let init = initial_factors(&ctx, job.gt.d, &job.config.init)?;
            Solver::new(job.gt, &ctx, job.config.clone(), init)
        })
        .map(Some)
        .collect();

    loop {
        let active: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Some(Ok(solver)) if !solver.is_done()))
            .map(|(i, _)| i)
            .collect();
        if active.is_empty() {
            break;
        }
        let outcome = (|| -> Result<Vec<(usize, Vec<f64>)>> {
            let xs: Vec<&Matrix> = active.iter().map(|&i| live(&slots[i]).current()).collect();
            let axs = ensemble.forward_batch(&xs)?;
            let mut wanted = Vec::new();
            for (&i, ax) in active.iter().zip(axs) {
                if let Some(signs) = live_mut(&mut slots[i]).observe_forward(&ax)? {
                    wanted.push((i, signs));
                }
            }
            Ok(wanted)
        })();
        let wanted = match outcome {
            Ok(w) => w,
            Err(e) => {
                fail_all(&mut slots, &active, &e);
                break;
            }
        };
        if wanted.is_empty() {
            continue;
        }
        let vs: Vec<&[f64]> = wanted.iter().map(|(_, v)| v.as_slice()).collect();
        match ensemble.adjoint_batch(&vs) {
            Ok(subgrads) => {
                for ((i, _), s) in wanted.iter().zip(subgrads) {
                    if let Err(e) = live_mut(&mut slots[*i]).observe_subgradient(&s) {
                        slots[*i] = Some(Err(e));
                    }
                }
            }
            Err(e) => {
                let ids: Vec<usize> = wanted.iter().map(|(i, _)| *i).collect();
                fail_all(&mut slots, &ids, &e);
                break;
            }
        }
    }

    slots
        .into_iter()
        .map(|slot| match slot.expect("every slot is filled") {
            Ok(solver) => solver
                .into_trace()
                .ok_or_else(|| Error::InvalidParameter("run stopped before terminating".into())),
            Err(e) => Err(e),
        })
        .collect()
}

fn live<'s, 'a>(slot: &'s Option<Result<Solver<'a>>>) -> &'s Solver<'a> {
    match slot {
        Some(Ok(s)) => s,
        _ => unreachable!("only live solvers are scheduled"),
    }
}

fn live_mut<'s, 'a>(slot: &'s mut Option<Result<Solver<'a>>>) -> &'s mut Solver<'a> {
    match slot {
        Some(Ok(s)) => s,
        _ => unreachable!("only live solvers are scheduled"),
    }
}

fn fail_all(slots: &mut [Option<Result<Solver<'_>>>], ids: &[usize], e: &Error) {
    for &i in ids {
        slots[i] = Some(Err(Error::InvalidParameter(format!(
            "batched sensing failed: {e}"
        ))));
    }
}
