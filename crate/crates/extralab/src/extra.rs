//! The EXTRA iteration in primal-dual form, its parameter presets, and the
//! two-stage regularized scheme for objectives without strong convexity.
//!
//! State is the pair (X, V): X stacks the per-agent primal copies, V is the
//! communicable dual surrogate. One step is
//!
//! ```text
//! X+ = X - alpha (grad f(X) + V + (beta/2)(I - W) X)
//! V+ = V + (beta/2)(I - W) X+
//! ```
//!
//! Each step applies `(I - W)` twice (two communication rounds) and
//! evaluates every agent's gradient once (one gradient round). V stays in
//! the row space of `I - W` for all time, so its columns keep summing to
//! zero; this is what lets the dual multiplier be recovered afterwards by
//! diagnostics without the agents ever forming it.

use crate::objective::SmoothObjective;
use crate::topology::WeightMatrix;
use nalgebra::DMatrix;

/// Divergence guard: relative Frobenius blow-up factor versus the initial
/// iterate.
const DIVERGENCE_FACTOR: f64 = 1e12;

/// Tolerance scale for the dual column-sum conservation check.
const DUAL_SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ExtraError {
    #[error("step sizes must be positive: alpha = {alpha}, beta = {beta}")]
    BadStepSizes { alpha: f64, beta: f64 },
    #[error("averaging window must start at step 1 or later")]
    BadWindow,
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error(
        "initial dual variable lies outside the mixing range: column-sum norm {residual:.3e}"
    )]
    DualInitOutOfRange { residual: f64 },
    #[error(
        "strongly convex preset requires mu > 0; use the nonstrongly convex preset for merely convex objectives"
    )]
    NeedsStrongConvexity,
    #[error("small-step variants are undefined for mu = 0")]
    SmallStepNeedsMu,
    #[error("weight matrix has no spectral gap (sigma2 = {sigma2}); presets are undefined")]
    NoSpectralGap { sigma2: f64 },
    #[error("divergence at step {k}: ||X||_F = {x_norm:.3e}")]
    Divergence { k: u64, x_norm: f64 },
    #[error("two-stage scheme requires a merely convex objective, got mu = {mu}")]
    TwoStageNeedsMuZero { mu: f64 },
    #[error("sizing constants must be positive: R1 = {r1}, R2 = {r2} (R2 may be zero)")]
    BadSizing { r1: f64, r2: f64 },
    #[error("target accuracy must be positive, got {eps}")]
    BadAccuracy { eps: f64 },
}

/// Which iterates enter the running average `x_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageWindow {
    /// No averaging; the final iterate is the output.
    None,
    /// Average every iterate produced at step index >= `start` (1-based:
    /// step 1 produces the first new iterate; the initial point is never
    /// averaged).
    FromStep(u64),
}

/// EXTRA parameters. `k_max` follows the loop convention `k = 0..=k_max`,
/// so a run performs `k_max + 1` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtraConfig {
    pub alpha: f64,
    pub beta: f64,
    pub k_max: u64,
    pub window: AverageWindow,
}

impl ExtraConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ExtraError> {
        if !(alpha > 0.0) || !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(ExtraError::BadStepSizes { alpha, beta });
        }
        Ok(Self {
            alpha,
            beta,
            k_max: 0,
            window: AverageWindow::None,
        })
    }

    pub fn with_k_max(mut self, k_max: u64) -> Self {
        self.k_max = k_max;
        self
    }

    pub fn with_window(mut self, window: AverageWindow) -> Result<Self, ExtraError> {
        if let AverageWindow::FromStep(start) = window {
            if start < 1 {
                return Err(ExtraError::BadWindow);
            }
        }
        self.window = window;
        Ok(self)
    }
}

/// Running sum of iterates inside an averaging window.
#[derive(Debug, Clone)]
pub struct RunningAverage {
    start: u64,
    count: u64,
    sum: DMatrix<f64>,
}

impl RunningAverage {
    fn new(start: u64, m: usize, n: usize) -> Self {
        Self {
            start,
            count: 0,
            sum: DMatrix::zeros(m, n),
        }
    }

    fn absorb(&mut self, step: u64, x: &DMatrix<f64>) {
        if step >= self.start {
            self.sum += x;
            self.count += 1;
        }
    }

    /// Current average, once at least one iterate has been absorbed.
    pub fn current(&self) -> Option<DMatrix<f64>> {
        (self.count > 0).then(|| &self.sum / self.count as f64)
    }

    /// Number of iterates absorbed so far.
    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Primal/dual iterate pair plus the step counter and optional averaging
/// accumulator. The divergence guard remembers the Frobenius norm of the
/// state's very first primal iterate.
#[derive(Debug, Clone)]
pub struct ExtraState {
    x: DMatrix<f64>,
    v: DMatrix<f64>,
    k: u64,
    average: Option<RunningAverage>,
    x0_norm: f64,
}

impl ExtraState {
    /// Fresh state with `V = 0` (always a valid dual initializer).
    pub fn new(x0: DMatrix<f64>) -> Self {
        let v = DMatrix::zeros(x0.nrows(), x0.ncols());
        let x0_norm = x0.norm();
        Self {
            x: x0,
            v,
            k: 0,
            average: None,
            x0_norm,
        }
    }

    /// State with an explicit dual surrogate; `v0` must have zero column
    /// sums (lie in the range of `I - W` for a connected network).
    pub fn with_dual(x0: DMatrix<f64>, v0: DMatrix<f64>) -> Result<Self, ExtraError> {
        if v0.shape() != x0.shape() {
            return Err(ExtraError::DimensionMismatch {
                context: format!("X is {:?}, V is {:?}", x0.shape(), v0.shape()),
            });
        }
        let residual = v0.row_sum().norm();
        if residual > DUAL_SUM_TOL * (1.0 + v0.norm()) {
            return Err(ExtraError::DualInitOutOfRange { residual });
        }
        let x0_norm = x0.norm();
        Ok(Self {
            x: x0,
            v: v0,
            k: 0,
            average: None,
            x0_norm,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Steps applied to this state over its lifetime (warm starts carry it
    /// across runs).
    pub fn steps_completed(&self) -> u64 {
        self.k
    }

    pub fn average(&self) -> Option<&RunningAverage> {
        self.average.as_ref()
    }
}

/// Cumulative cost counters, shared across warm-started runs so outer
/// schemes report totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostCounters {
    pub comm_rounds: u64,
    pub grad_rounds: u64,
}

/// The `(I - W)` product cached for a run.
#[derive(Debug, Clone)]
pub struct Mixing {
    i_minus_w: DMatrix<f64>,
}

impl Mixing {
    pub fn from_weights(w: &WeightMatrix) -> Self {
        let m = w.agents();
        let i_minus_w = DMatrix::identity(m, m) - w.matrix();
        Self { i_minus_w }
    }

    /// One communication round: every agent combines its neighbors' rows.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.i_minus_w * x
    }

    pub fn agents(&self) -> usize {
        self.i_minus_w.nrows()
    }
}

/// Everything an observer may inspect after one completed step.
pub struct StepInfo<'a> {
    /// Lifetime step count of the state after this step.
    pub steps_completed: u64,
    /// Cumulative communication rounds including this step.
    pub comm_rounds: u64,
    /// Cumulative gradient rounds including this step.
    pub grad_rounds: u64,
    pub x: &'a DMatrix<f64>,
    pub v: &'a DMatrix<f64>,
    /// Running average of iterates when a window is active and populated.
    pub averaged: Option<DMatrix<f64>>,
}

/// Per-step callback; return `false` to stop the run early (budget or
/// target reached). Implemented by the metrics recorder, by closures in
/// tests, and by [`Quiet`] for silent runs.
pub trait StepObserver {
    fn on_step(&mut self, info: &StepInfo<'_>) -> bool;
}

/// Observer that records nothing and never stops a run.
pub struct Quiet;

impl StepObserver for Quiet {
    fn on_step(&mut self, _info: &StepInfo<'_>) -> bool {
        true
    }
}

impl<F: FnMut(&StepInfo<'_>) -> bool> StepObserver for F {
    fn on_step(&mut self, info: &StepInfo<'_>) -> bool {
        self(info)
    }
}

/// Applies one EXTRA step in place and bumps the counters: +1 gradient
/// round, +2 communication rounds.
pub fn extra_step<O: SmoothObjective>(
    state: &mut ExtraState,
    obj: &O,
    mixing: &Mixing,
    cfg: &ExtraConfig,
    counters: &mut CostCounters,
) -> Result<(), ExtraError> {
    let grad = obj.stacked_gradient(&state.x);
    let mixed = mixing.apply(&state.x);
    let x_next = &state.x - (grad + &state.v + mixed * (cfg.beta / 2.0)) * cfg.alpha;
    let x_norm = x_next.norm();
    if !x_norm.is_finite() || x_norm > DIVERGENCE_FACTOR * (1.0 + state.x0_norm) {
        return Err(ExtraError::Divergence {
            k: state.k,
            x_norm,
        });
    }
    let v_next = &state.v + mixing.apply(&x_next) * (cfg.beta / 2.0);
    state.x = x_next;
    state.v = v_next;
    state.k += 1;
    counters.grad_rounds += 1;
    counters.comm_rounds += 2;
    Ok(())
}

/// Result of a completed (or observer-stopped) run.
#[derive(Debug, Clone)]
pub struct ExtraOutput {
    pub state: ExtraState,
    /// Final windowed average when averaging was enabled and populated.
    pub averaged: Option<DMatrix<f64>>,
    /// True when the observer requested an early stop.
    pub stopped_early: bool,
}

/// Runs `cfg.k_max + 1` EXTRA steps (loop `k = 0..=k_max`), maintaining the
/// configured averaging window and reporting each step to the observer.
pub fn run_extra<O: SmoothObjective, Obs: StepObserver + ?Sized>(
    obj: &O,
    w: &WeightMatrix,
    cfg: &ExtraConfig,
    state: ExtraState,
    counters: &mut CostCounters,
    observer: &mut Obs,
) -> Result<ExtraOutput, ExtraError> {
    let mixing = Mixing::from_weights(w);
    run_extra_with_mixing(obj, &mixing, cfg, state, counters, observer)
}

/// As [`run_extra`] with a caller-supplied cached mixing operator, for
/// outer loops that launch many inner runs over the same network.
pub fn run_extra_with_mixing<O: SmoothObjective, Obs: StepObserver + ?Sized>(
    obj: &O,
    mixing: &Mixing,
    cfg: &ExtraConfig,
    mut state: ExtraState,
    counters: &mut CostCounters,
    observer: &mut Obs,
) -> Result<ExtraOutput, ExtraError> {
    validate_run(obj, mixing, cfg, &state)?;
    if let AverageWindow::FromStep(start) = cfg.window {
        if start < 1 {
            return Err(ExtraError::BadWindow);
        }
        let reset = match &state.average {
            Some(avg) => avg.start != start,
            None => true,
        };
        if reset {
            state.average = Some(RunningAverage::new(start, state.x.nrows(), state.x.ncols()));
        }
    } else {
        state.average = None;
    }
    let run_start = state.k;
    let mut stopped_early = false;
    for _ in 0..=cfg.k_max {
        extra_step(&mut state, obj, mixing, cfg, counters)?;
        let run_step = state.k - run_start;
        if let Some(avg) = state.average.as_mut() {
            avg.absorb(run_step, &state.x);
        }
        let info = StepInfo {
            steps_completed: state.k,
            comm_rounds: counters.comm_rounds,
            grad_rounds: counters.grad_rounds,
            x: &state.x,
            v: &state.v,
            averaged: state.average.as_ref().and_then(RunningAverage::current),
        };
        if !observer.on_step(&info) {
            stopped_early = true;
            break;
        }
    }
    let averaged = state.average.as_ref().and_then(RunningAverage::current);
    Ok(ExtraOutput {
        state,
        averaged,
        stopped_early,
    })
}

fn validate_run<O: SmoothObjective>(
    obj: &O,
    mixing: &Mixing,
    cfg: &ExtraConfig,
    state: &ExtraState,
) -> Result<(), ExtraError> {
    if !(cfg.alpha > 0.0) || !(cfg.beta > 0.0) {
        return Err(ExtraError::BadStepSizes {
            alpha: cfg.alpha,
            beta: cfg.beta,
        });
    }
    let (m, n) = (obj.agents(), obj.dim());
    if state.x.nrows() != m || state.x.ncols() != n || mixing.agents() != m {
        return Err(ExtraError::DimensionMismatch {
            context: format!(
                "objective is {}x{}, state is {}x{}, network has {} agents",
                m,
                n,
                state.x.nrows(),
                state.x.ncols(),
                mixing.agents()
            ),
        });
    }
    let residual = state.v.row_sum().norm();
    if residual > DUAL_SUM_TOL * (1.0 + state.v.norm()) {
        return Err(ExtraError::DualInitOutOfRange { residual });
    }
    Ok(())
}

/// Linear-rate preset for mu-strongly convex objectives: `beta = L`,
/// `alpha = 1/(2(L + beta)) = 1/(4L)`.
pub fn preset_strongly_convex<O: SmoothObjective>(
    obj: &O,
    w: &WeightMatrix,
) -> Result<ExtraConfig, ExtraError> {
    if obj.strong_convexity() <= 0.0 {
        return Err(ExtraError::NeedsStrongConvexity);
    }
    require_gap(w)?;
    let l = obj.smoothness();
    ExtraConfig::new(1.0 / (4.0 * l), l)
}

/// Aggressive tuning that performs best in practice on strongly convex
/// instances: `alpha = 1/L`, `beta = L`.
pub fn preset_strongly_convex_practical<O: SmoothObjective>(
    obj: &O,
    w: &WeightMatrix,
) -> Result<ExtraConfig, ExtraError> {
    if obj.strong_convexity() <= 0.0 {
        return Err(ExtraError::NeedsStrongConvexity);
    }
    require_gap(w)?;
    let l = obj.smoothness();
    ExtraConfig::new(1.0 / l, l)
}

/// Sublinear-rate preset for merely convex objectives:
/// `beta = L / sqrt(1 - sigma2)`, `alpha = 1/(2(L + beta))`, with the
/// running average taken over every iterate from step 1.
pub fn preset_nonstrongly_convex<O: SmoothObjective>(
    obj: &O,
    w: &WeightMatrix,
) -> Result<ExtraConfig, ExtraError> {
    if obj.strong_convexity() > 0.0 {
        log::warn!(
            "nonstrongly convex preset applied to a {}-strongly convex objective",
            obj.strong_convexity()
        );
    }
    require_gap(w)?;
    let l = obj.smoothness();
    let beta = l / w.spectral_gap().sqrt();
    ExtraConfig::new(1.0 / (2.0 * (l + beta)), beta)?
        .with_window(AverageWindow::FromStep(1))
}

/// The classic single-matrix EXTRA setting `alpha = 1/beta = 1/L`, the
/// standard baseline configuration.
pub fn preset_original<O: SmoothObjective>(obj: &O) -> Result<ExtraConfig, ExtraError> {
    let l = obj.smoothness();
    ExtraConfig::new(1.0 / l, l)
}

/// Conservative small-step variant of the classic setting with
/// `alpha = 1/beta = mu^2 / L`. One of two step-size readings quoted for
/// the classic method's linear-rate theory; exposed for comparison, never
/// used by default.
pub fn preset_original_small_mu_sq_over_l<O: SmoothObjective>(
    obj: &O,
) -> Result<ExtraConfig, ExtraError> {
    let mu = obj.strong_convexity();
    if mu <= 0.0 {
        return Err(ExtraError::SmallStepNeedsMu);
    }
    let alpha = mu * mu / obj.smoothness();
    ExtraConfig::new(alpha, 1.0 / alpha)
}

/// Conservative small-step variant with `alpha = 1/beta = mu / L^2`, the
/// other reading of the same theory. Exposed for comparison.
pub fn preset_original_small_mu_over_l_sq<O: SmoothObjective>(
    obj: &O,
) -> Result<ExtraConfig, ExtraError> {
    let mu = obj.strong_convexity();
    if mu <= 0.0 {
        return Err(ExtraError::SmallStepNeedsMu);
    }
    let l = obj.smoothness();
    let alpha = mu / (l * l);
    ExtraConfig::new(alpha, 1.0 / alpha)
}

fn require_gap(w: &WeightMatrix) -> Result<(), ExtraError> {
    let sigma2 = w.second_largest_eigenvalue();
    if sigma2 >= 1.0 {
        return Err(ExtraError::NoSpectralGap { sigma2 });
    }
    Ok(())
}

/// Size estimates standing in for the unknown distance and gradient
/// constants when planning a two-stage run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageSizing {
    /// Bound on both `max_i ||x0_i - x*||^2` and `||x*||^2`.
    pub r1_hat: f64,
    /// Bound on `max_i ||grad f_i(x*)||^2`.
    pub r2_hat: f64,
}

impl TwoStageSizing {
    pub fn new(r1_hat: f64, r2_hat: f64) -> Result<Self, ExtraError> {
        if !(r1_hat > 0.0) || r2_hat < 0.0 {
            return Err(ExtraError::BadSizing {
                r1: r1_hat,
                r2: r2_hat,
            });
        }
        Ok(Self { r1_hat, r2_hat })
    }

    /// Oracle-free surrogate documented as a heuristic: takes the initial
    /// iterate's own magnitude for the distance constant (floored at 1)
    /// and its own gradients for the gradient constant.
    pub fn heuristic<O: SmoothObjective>(obj: &O, x0: &DMatrix<f64>) -> Self {
        let r1 = x0
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(1.0f64, f64::max);
        let grad = obj.stacked_gradient(x0);
        let r2 = grad
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0f64, f64::max);
        Self {
            r1_hat: r1,
            r2_hat: r2,
        }
    }
}

/// The derived shape of a two-stage run: a burn-in of `k0` steps under the
/// regularized objective, then `k_avg` further steps whose iterates are
/// averaged into the output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStagePlan {
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k0: u64,
    pub k_avg: u64,
}

impl TwoStagePlan {
    /// Derives the plan for accuracy `eps` on an `l`-smooth convex
    /// objective over a network with spectral values `sigma2`.
    ///
    /// The burn-in length comes from the regularized problem's linear
    /// contraction: with per-step factor `1 - delta`,
    /// `delta = 1/(39 (L_eps/eps + 1/(1 - sigma2)))`, and the conservative
    /// initialization bound `rho_0 <= 2 m (L_eps R1 + R2/L_eps)/(1 - sigma2)`,
    /// `k0` is the smallest count driving the bound below
    /// `m (1 - sigma2)(L_eps R1 + R2/L_eps)`, i.e. the smallest `k0` with
    /// `(1 - delta)^{k0} <= (1 - sigma2)^2 / 2`. The averaged stage runs
    /// `k_avg = ceil((L_eps R1 + R2/L_eps)/eps)` steps.
    pub fn derive(
        l: f64,
        eps: f64,
        sigma2: f64,
        sizing: &TwoStageSizing,
    ) -> Result<Self, ExtraError> {
        if !(eps > 0.0) {
            return Err(ExtraError::BadAccuracy { eps });
        }
        if sigma2 >= 1.0 {
            return Err(ExtraError::NoSpectralGap { sigma2 });
        }
        let gap = 1.0 - sigma2;
        let l_eps = l + eps;
        let delta = 1.0 / (39.0 * (l_eps / eps + 1.0 / gap));
        let shrink_needed = (2.0 / (gap * gap)).ln();
        let k0 = (shrink_needed / -(1.0 - delta).ln()).ceil().max(1.0) as u64;
        let size = l_eps * sizing.r1_hat + sizing.r2_hat / l_eps;
        let k_avg = (size / eps).ceil().max(1.0) as u64;
        Ok(Self {
            eps,
            alpha: 1.0 / (4.0 * l_eps),
            beta: l_eps,
            k0,
            k_avg,
        })
    }

    /// Total steps the plan executes.
    pub fn total_steps(&self) -> u64 {
        self.k0 + self.k_avg
    }
}

/// Output of the two-stage scheme: the averaged iterate is the answer.
#[derive(Debug, Clone)]
pub struct TwoStageOutput {
    pub state: ExtraState,
    pub averaged: DMatrix<f64>,
    pub plan: TwoStagePlan,
    pub stopped_early: bool,
}

/// Lifts a merely convex objective to an `eps`-strongly convex one, runs a
/// single EXTRA loop of `k0 + k_avg` steps with the linear-rate preset of
/// the lifted problem, and averages only the last `k_avg` iterates.
pub fn run_two_stage_regularized<O: SmoothObjective, Obs: StepObserver + ?Sized>(
    obj: &O,
    w: &WeightMatrix,
    eps: f64,
    sizing: &TwoStageSizing,
    x0: DMatrix<f64>,
    counters: &mut CostCounters,
    observer: &mut Obs,
) -> Result<TwoStageOutput, ExtraError> {
    let mu = obj.strong_convexity();
    if mu != 0.0 {
        return Err(ExtraError::TwoStageNeedsMuZero { mu });
    }
    let lifted = crate::objective::Regularized::new(obj, eps)
        .map_err(|_| ExtraError::BadAccuracy { eps })?;
    let plan = TwoStagePlan::derive(
        obj.smoothness(),
        eps,
        w.second_largest_eigenvalue(),
        sizing,
    )?;
    let cfg = ExtraConfig::new(plan.alpha, plan.beta)?
        .with_k_max(plan.total_steps() - 1)
        .with_window(AverageWindow::FromStep(plan.k0 + 1))?;
    let out = run_extra(&lifted, w, &cfg, ExtraState::new(x0), counters, observer)?;
    let averaged = out
        .averaged
        .unwrap_or_else(|| out.state.x().clone());
    Ok(TwoStageOutput {
        state: out.state,
        averaged,
        plan,
        stopped_early: out.stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{LeastSquares, ReferenceSolution, SmoothObjective};
    use crate::topology::{gen_erdos_renyi, ConsensusOperators, WeightMatrix};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_setup(seed: u64, mu: f64) -> (LeastSquares, WeightMatrix) {
        let inst = LeastSquares::generate(5, 3, 6, mu, seed).unwrap();
        let g = gen_erdos_renyi(6, 0.6, seed + 500).unwrap();
        (inst, WeightMatrix::metropolis_lazy(&g).unwrap())
    }

    #[test]
    fn stationary_point_is_fixed() {
        let (inst, w) = desk_setup(1, 0.1);
        let ops = ConsensusOperators::from_weights(&w).unwrap();
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let x = reference.x_star_stack(inst.agents());
        let v = -reference.grad_at_star().clone();
        let mut state = ExtraState::with_dual(x.clone(), v.clone()).unwrap();
        let cfg = preset_strongly_convex(&inst, &w).unwrap();
        let mixing = Mixing::from_weights(&w);
        let mut counters = CostCounters::default();
        extra_step(&mut state, &inst, &mixing, &cfg, &mut counters).unwrap();
        assert!((state.x() - &x).norm() < 1e-12);
        assert!((state.v() - &v).norm() < 1e-12);
    }

    #[test]
    fn single_agent_network_reduces_to_gradient_descent() {
        let inst = LeastSquares::generate(4, 2, 1, 0.2, 3).unwrap();
        let w = WeightMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let cfg = ExtraConfig::new(0.05, 1.0).unwrap().with_k_max(24);
        let x0 = DMatrix::from_fn(1, 4, |_, j| j as f64 * 0.3 - 0.4);
        let mut counters = CostCounters::default();
        let out = run_extra(&inst, &w, &cfg, ExtraState::new(x0.clone()), &mut counters, &mut Quiet)
            .unwrap();
        // manual gradient descent on the same data
        let mut x = x0.row(0).transpose();
        for _ in 0..25 {
            x -= inst.local_gradient(0, &x) * 0.05;
        }
        assert_eq!(out.state.x().row(0).transpose(), x);
        assert_eq!(out.state.v().norm(), 0.0);
    }

    #[test]
    fn matches_two_term_recurrence_when_alpha_is_inverse_beta() {
        // independent implementation: with alpha = 1/beta and V0 = 0,
        // x1 = ((I+W)/2) x0 - alpha grad(x0), then
        // x_{k+2} = (I+W) x_{k+1} - ((I+W)/2) x_k - alpha (grad_{k+1} - grad_k)
        let (inst, w) = desk_setup(7, 0.05);
        let m = inst.agents();
        let n = inst.dim();
        let cfg = preset_original(&inst).unwrap().with_k_max(99);
        let x0 = DMatrix::from_fn(m, n, |i, j| ((i * n + j) as f64 * 0.7).sin());

        let mut trajectory = Vec::with_capacity(100);
        let mut counters = CostCounters::default();
        let mut capture = |info: &StepInfo<'_>| {
            trajectory.push(info.x.clone());
            true
        };
        run_extra(&inst, &w, &cfg, ExtraState::new(x0.clone()), &mut counters, &mut capture)
            .unwrap();

        let eye = DMatrix::<f64>::identity(m, m);
        let w_tilde = (&eye + w.matrix()) * 0.5;
        let mut prev = x0.clone();
        let mut cur = &w_tilde * &x0 - inst.stacked_gradient(&x0) * cfg.alpha;
        let mut reference_traj = vec![cur.clone()];
        for _ in 0..99 {
            let next = (&eye + w.matrix()) * &cur
                - &w_tilde * &prev
                - (inst.stacked_gradient(&cur) - inst.stacked_gradient(&prev)) * cfg.alpha;
            prev = cur;
            cur = next;
            reference_traj.push(cur.clone());
        }
        for (a, b) in trajectory.iter().zip(&reference_traj) {
            let rel = (a - b).norm() / (1.0 + b.norm());
            assert!(rel < 1e-10, "trajectories drift apart: {rel}");
        }
    }

    #[test]
    fn k_max_zero_runs_exactly_one_step() {
        let (inst, w) = desk_setup(11, 0.1);
        let cfg = preset_strongly_convex(&inst, &w).unwrap();
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let mut counters = CostCounters::default();
        let out =
            run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut Quiet).unwrap();
        assert_eq!(out.state.steps_completed(), 1);
        assert_eq!(counters.grad_rounds, 1);
        assert_eq!(counters.comm_rounds, 2);
    }

    #[test]
    fn counters_track_two_comms_one_grad_per_step() {
        let (inst, w) = desk_setup(13, 0.1);
        let cfg = preset_strongly_convex(&inst, &w).unwrap().with_k_max(49);
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let mut counters = CostCounters::default();
        let mut per_step_ok = true;
        let mut observer = |info: &StepInfo<'_>| {
            per_step_ok &= info.comm_rounds == 2 * info.grad_rounds;
            true
        };
        run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut observer).unwrap();
        assert!(per_step_ok);
        assert_eq!(counters.grad_rounds, 50);
        assert_eq!(counters.comm_rounds, 100);
    }

    #[test]
    fn dual_columns_conserve_zero_sums() {
        let (inst, w) = desk_setup(17, 0.01);
        let cfg = preset_strongly_convex(&inst, &w).unwrap().with_k_max(99);
        let x0 = DMatrix::from_fn(inst.agents(), inst.dim(), |i, j| (i + j) as f64 * 0.1);
        let mut counters = CostCounters::default();
        let mut worst: f64 = 0.0;
        let mut observer = |info: &StepInfo<'_>| {
            let rel = info.v.row_sum().norm() / (1.0 + info.v.norm());
            worst = worst.max(rel);
            true
        };
        run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut observer).unwrap();
        assert!(worst <= 1e-9, "dual column sums drifted: {worst}");
    }

    #[test]
    fn divergence_is_detected_and_reported() {
        let (inst, w) = desk_setup(19, 0.1);
        let cfg = ExtraConfig::new(1e8, inst.smoothness())
            .unwrap()
            .with_k_max(500);
        let x0 = DMatrix::from_element(inst.agents(), inst.dim(), 1.0);
        let mut counters = CostCounters::default();
        match run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut Quiet) {
            Err(ExtraError::Divergence { x_norm, .. }) => {
                assert!(!x_norm.is_finite() || x_norm > 1e12);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_dual_initializer_is_rejected() {
        let (inst, w) = desk_setup(23, 0.1);
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let v0 = DMatrix::from_element(inst.agents(), inst.dim(), 1.0);
        let state = ExtraState::with_dual(x0.clone(), v0);
        assert!(matches!(state, Err(ExtraError::DualInitOutOfRange { .. })));
        // same check at run time for states assembled elsewhere
        let mut state = ExtraState::new(x0);
        state.v[(0, 0)] = 5.0;
        let cfg = preset_strongly_convex(&inst, &w).unwrap();
        let mut counters = CostCounters::default();
        let got = run_extra(&inst, &w, &cfg, state, &mut counters, &mut Quiet);
        assert!(matches!(got, Err(ExtraError::DualInitOutOfRange { .. })));
    }

    #[test]
    fn presets_match_formula_arithmetic() {
        let (inst, w) = desk_setup(29, 0.1);
        let l = inst.smoothness();
        let sc = preset_strongly_convex(&inst, &w).unwrap();
        assert_abs_diff_eq!(sc.alpha, 1.0 / (4.0 * l), epsilon = 1e-15);
        assert_abs_diff_eq!(sc.beta, l, epsilon = 1e-15);
        let practical = preset_strongly_convex_practical(&inst, &w).unwrap();
        assert_abs_diff_eq!(practical.alpha, 1.0 / l, epsilon = 1e-15);
        let orig = preset_original(&inst).unwrap();
        assert_abs_diff_eq!(orig.alpha, 1.0 / l, epsilon = 1e-15);
        assert_abs_diff_eq!(orig.beta, l, epsilon = 1e-15);
        let small_a = preset_original_small_mu_sq_over_l(&inst).unwrap();
        assert_abs_diff_eq!(small_a.alpha, 0.01 / l, epsilon = 1e-15);
        assert_abs_diff_eq!(small_a.alpha * small_a.beta, 1.0, epsilon = 1e-12);
        let small_b = preset_original_small_mu_over_l_sq(&inst).unwrap();
        assert_abs_diff_eq!(small_b.alpha, 0.1 / (l * l), epsilon = 1e-15);

        let (convex, w2) = desk_setup(31, 0.0);
        assert!(matches!(
            preset_strongly_convex(&convex, &w2),
            Err(ExtraError::NeedsStrongConvexity)
        ));
        assert!(matches!(
            preset_original_small_mu_sq_over_l(&convex),
            Err(ExtraError::SmallStepNeedsMu)
        ));
        let nsc = preset_nonstrongly_convex(&convex, &w2).unwrap();
        let l2 = convex.smoothness();
        let beta = l2 / w2.spectral_gap().sqrt();
        assert_abs_diff_eq!(nsc.beta, beta, epsilon = 1e-12);
        assert_abs_diff_eq!(nsc.alpha, 1.0 / (2.0 * (l2 + beta)), epsilon = 1e-12);
        assert_eq!(nsc.window, AverageWindow::FromStep(1));
    }

    #[test]
    fn nonstrongly_convex_preset_arithmetic_on_synthetic_gaps() {
        // L = 1, sigma2 = 3/4 -> beta = 2, alpha = 1/6
        let beta = 1.0 / (1.0f64 - 0.75).sqrt();
        assert_abs_diff_eq!(beta, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(1.0 / (2.0 * (1.0 + beta)), 1.0 / 6.0, epsilon = 1e-15);
        // sigma2 = 0 degenerates to the strongly convex preset values
        let beta0 = 1.0 / (1.0f64 - 0.0).sqrt();
        assert_abs_diff_eq!(1.0 / (2.0 * (1.0 + beta0)), 0.25, epsilon = 1e-15);
        // 1/(1 - sigma2) = 400 -> beta = 20, alpha = 1/42
        let beta400 = 1.0 / (1.0f64 - 0.9975).sqrt();
        assert_abs_diff_eq!(beta400, 20.0, epsilon = 1e-10);
        assert_abs_diff_eq!(1.0 / (2.0 * (1.0 + beta400)), 1.0 / 42.0, epsilon = 1e-12);
    }

    #[test]
    fn averaging_window_tracks_manual_accumulation() {
        let (inst, w) = desk_setup(37, 0.0);
        let cfg = preset_nonstrongly_convex(&inst, &w)
            .unwrap()
            .with_k_max(19);
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let mut counters = CostCounters::default();
        let mut manual_sum = DMatrix::<f64>::zeros(inst.agents(), inst.dim());
        let mut manual_count = 0u64;
        let mut observer = |info: &StepInfo<'_>| {
            manual_sum += info.x;
            manual_count += 1;
            let avg = info.averaged.as_ref().expect("window is active");
            assert!((avg - &manual_sum / manual_count as f64).norm() < 1e-13);
            true
        };
        let out = run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut observer)
            .unwrap();
        assert_eq!(out.state.average().unwrap().count(), 20);
        let avg = out.averaged.unwrap();
        assert!((avg - manual_sum / manual_count as f64).norm() < 1e-13);
    }

    #[test]
    fn observer_stop_halts_run_early() {
        let (inst, w) = desk_setup(41, 0.1);
        let cfg = preset_strongly_convex(&inst, &w).unwrap().with_k_max(999);
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let mut counters = CostCounters::default();
        let mut observer = |info: &StepInfo<'_>| info.grad_rounds < 7;
        let out = run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut observer)
            .unwrap();
        assert!(out.stopped_early);
        assert_eq!(counters.grad_rounds, 7);
        assert_eq!(out.state.steps_completed(), 7);
    }

    #[test]
    fn two_stage_plan_shapes_follow_formulas() {
        let sizing = TwoStageSizing::new(1.0, 0.5).unwrap();
        let plan = TwoStagePlan::derive(2.0, 1e-3, 0.5, &sizing).unwrap();
        let l_eps = 2.0 + 1e-3;
        assert_abs_diff_eq!(plan.beta, l_eps, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.alpha, 1.0 / (4.0 * l_eps), epsilon = 1e-15);
        let expect_k = ((l_eps * 1.0 + 0.5 / l_eps) / 1e-3).ceil() as u64;
        assert_eq!(plan.k_avg, expect_k);
        let delta = 1.0 / (39.0 * (l_eps / 1e-3 + 2.0));
        let expect_k0 = ((2.0f64 / 0.25).ln() / -(1.0 - delta).ln()).ceil() as u64;
        assert_eq!(plan.k0, expect_k0);
        // coarser accuracy shrinks both stages
        let loose = TwoStagePlan::derive(2.0, 1e-1, 0.5, &sizing).unwrap();
        assert!(loose.k0 < plan.k0 && loose.k_avg < plan.k_avg);
    }

    #[test]
    fn two_stage_requires_merely_convex_objective() {
        let (inst, w) = desk_setup(43, 0.1);
        let sizing = TwoStageSizing::new(1.0, 1.0).unwrap();
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let mut counters = CostCounters::default();
        let got = run_two_stage_regularized(
            &inst,
            &w,
            1e-2,
            &sizing,
            x0,
            &mut counters,
            &mut Quiet,
        );
        assert!(matches!(got, Err(ExtraError::TwoStageNeedsMuZero { .. })));
    }

    #[test]
    fn two_stage_with_loose_accuracy_finishes_quickly_below_target() {
        let (inst, w) = desk_setup(47, 0.0);
        let ops = ConsensusOperators::from_weights(&w).unwrap();
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let sizing = TwoStageSizing::new(
            reference
                .x_star()
                .norm_squared()
                .max(1e-2),
            reference.max_local_grad_sq(),
        )
        .unwrap();
        let eps = 2.0 * (inst.global_value(&DVector::zeros(inst.dim())) - reference.f_star());
        let mut counters = CostCounters::default();
        let out = run_two_stage_regularized(&inst, &w, eps, &sizing, x0, &mut counters, &mut Quiet)
            .unwrap();
        assert!(!out.stopped_early);
        assert_eq!(
            out.state.steps_completed(),
            out.plan.total_steps()
        );
        let mean = out.averaged.row_mean().transpose();
        let gap = inst.global_value(&mean) - reference.f_star();
        assert!(gap <= eps, "loose target missed: {gap} > {eps}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn step_commutes_with_agent_relabeling(seed in 0u64..200) {
            let (inst, w) = desk_setup(seed, 0.05);
            let m = inst.agents();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let mut perm: Vec<usize> = (0..m).collect();
            // Fisher-Yates
            for i in (1..m).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let p = DMatrix::<f64>::from_fn(m, m, |i, j| if perm[i] == j { 1.0 } else { 0.0 });

            // permuted problem: rows of data and anchors relabeled
            let a_p: Vec<_> = (0..m).map(|i| inst.data(perm[i]).clone()).collect();
            let b_p: Vec<_> = (0..m).map(|i| inst.target(perm[i]).clone()).collect();
            let inst_p = LeastSquares::from_parts(a_p, b_p, inst.mu()).unwrap();
            let w_p = WeightMatrix::from_matrix(&p * w.matrix() * p.transpose()).unwrap();

            let x0 = DMatrix::from_fn(m, inst.dim(), |i, j| ((i * 13 + j * 5 + seed as usize) as f64 * 0.37).sin());
            let cfg = ExtraConfig::new(0.1 / inst.smoothness(), inst.smoothness()).unwrap();
            let mixing = Mixing::from_weights(&w);
            let mixing_p = Mixing::from_weights(&w_p);

            let mut state = ExtraState::new(x0.clone());
            let mut state_p = ExtraState::new(&p * &x0);
            let mut c1 = CostCounters::default();
            let mut c2 = CostCounters::default();
            for _ in 0..5 {
                extra_step(&mut state, &inst, &mixing, &cfg, &mut c1).unwrap();
                extra_step(&mut state_p, &inst_p, &mixing_p, &cfg, &mut c2).unwrap();
            }
            // equal up to permutation; summation order differs, so allow
            // a few ulps of drift
            let dx = (&p * state.x() - state_p.x()).norm() / (1.0 + state.x().norm());
            let dv = (&p * state.v() - state_p.v()).norm() / (1.0 + state.v().norm());
            prop_assert!(dx < 1e-13, "primal relabeling drift {dx}");
            prop_assert!(dv < 1e-13, "dual relabeling drift {dv}");
        }
    }
}
