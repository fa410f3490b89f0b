//! Convergence diagnostics: objective gap and consensus violation of an
//! iterate stack, the primal-dual Lyapunov function with its contraction
//! factor, the averaged-iterate guarantees, and the trace machinery that
//! records a run into a deterministic CSV.

use crate::extra::{StepInfo, StepObserver};
use crate::objective::{ReferenceSolution, SmoothObjective};
use crate::topology::ConsensusOperators;
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::Instant;

/// Relative residual above which a dual surrogate is declared to be
/// outside the recoverable range.
const DUAL_RECOVERY_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(
        "dual recovery failed: V is not in the mixing range (residual {residual:.3e} vs tolerance {tolerance:.3e})"
    )]
    DualRecoveryFailed { residual: f64, tolerance: f64 },
    #[error("contraction factor is undefined for mu = {mu}")]
    DeltaNeedsStrongConvexity { mu: f64 },
    #[error("weight matrix has no spectral gap (sigma2 = {sigma2})")]
    NoSpectralGap { sigma2: f64 },
    #[error("averaged-iterate bounds need k >= {min}, got {k}")]
    AveragedBoundsNeedMoreSteps { k: u64, min: u64 },
    #[error("bad trace data at line {line}: {reason}")]
    BadTrace { line: usize, reason: String },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
}

/// `F(mean row of X) - F*`: how far the network average is from optimal.
pub fn objective_gap<O: SmoothObjective>(obj: &O, f_star: f64, x: &DMatrix<f64>) -> f64 {
    let mean = x.row_mean().transpose();
    obj.global_value(&mean) - f_star
}

/// `(1/m) ||X - 1 mean(X)||_F^2`: average squared distance of the agents
/// from their own mean.
pub fn consensus_violation(x: &DMatrix<f64>) -> f64 {
    let mean = x.row_mean();
    let mut total = 0.0;
    for i in 0..x.nrows() {
        total += (x.row(i) - &mean).norm_squared();
    }
    total / x.nrows() as f64
}

/// Per-step shrink factor of the Lyapunov function under the linear-rate
/// preset: `delta = 1/(39 (L/mu + 1/(1 - sigma2)))`.
pub fn contraction_delta(l: f64, mu: f64, sigma2: f64) -> Result<f64, MetricsError> {
    if mu <= 0.0 {
        return Err(MetricsError::DeltaNeedsStrongConvexity { mu });
    }
    if sigma2 >= 1.0 {
        return Err(MetricsError::NoSpectralGap { sigma2 });
    }
    Ok(1.0 / (39.0 * (l / mu + 1.0 / (1.0 - sigma2))))
}

/// The two problem-size constants the sublinear guarantees are stated in:
/// `r1` bounds both the worst initial squared distance and `||x*||^2`,
/// `r2` bounds the worst local gradient at the solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub r1: f64,
    pub r2: f64,
}

impl RateConstants {
    /// Exact constants from a reference solution and the initial stack.
    pub fn from_reference(
        reference: &ReferenceSolution,
        x0: &DMatrix<f64>,
    ) -> Result<Self, MetricsError> {
        if x0.ncols() != reference.x_star().len() {
            return Err(MetricsError::DimensionMismatch {
                context: format!(
                    "initial stack has {} columns, x* has {}",
                    x0.ncols(),
                    reference.x_star().len()
                ),
            });
        }
        let xs = reference.x_star().transpose();
        let worst_start = x0
            .row_iter()
            .map(|r| (r - &xs).norm_squared())
            .fold(0.0f64, f64::max);
        let r1 = worst_start.max(reference.x_star().norm_squared());
        Ok(Self {
            r1,
            r2: reference.max_local_grad_sq(),
        })
    }
}

/// Guarantees for the running average after `k` steps of the sublinear
/// preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedBounds {
    pub objective_gap: f64,
    pub consensus_violation: f64,
}

/// Bounds valid once `k >= ceil(1/sqrt(1 - sigma2))`:
/// gap `<= 34 (L r1 + r2/L) / (k sqrt(1 - sigma2))` and consensus
/// violation `<= 16 (r1 + r2/L^2) / (k^2 (1 - sigma2))`.
pub fn averaged_iterate_bounds(
    l: f64,
    sigma2: f64,
    constants: &RateConstants,
    k: u64,
) -> Result<AveragedBounds, MetricsError> {
    if sigma2 >= 1.0 {
        return Err(MetricsError::NoSpectralGap { sigma2 });
    }
    let gap = 1.0 - sigma2;
    let min = (1.0 / gap.sqrt()).ceil() as u64;
    if k < min {
        return Err(MetricsError::AveragedBoundsNeedMoreSteps { k, min });
    }
    let kf = k as f64;
    Ok(AveragedBounds {
        objective_gap: 34.0 * (l * constants.r1 + constants.r2 / l) / (kf * gap.sqrt()),
        consensus_violation: 16.0 * (constants.r1 + constants.r2 / (l * l))
            / (kf * kf * gap),
    })
}

/// Evaluates the primal-dual Lyapunov function
/// `rho(X, V) = (L + beta) ||X - X*||_F^2 + ||lambda - lambda*||_F^2 / (2 beta)`
/// where `lambda = U^+ V` is recovered exactly whenever V lies in the
/// mixing range (it does for every iterate started at V = 0).
pub struct LyapunovOracle<'a> {
    ops: &'a ConsensusOperators,
    x_star_stack: DMatrix<f64>,
    lambda_star: &'a DMatrix<f64>,
    l: f64,
    beta: f64,
}

impl<'a> LyapunovOracle<'a> {
    pub fn new(
        reference: &'a ReferenceSolution,
        ops: &'a ConsensusOperators,
        l: f64,
        beta: f64,
    ) -> Self {
        Self {
            ops,
            x_star_stack: reference.x_star_stack(ops.agents()),
            lambda_star: reference.lambda_star(),
            l,
            beta,
        }
    }

    /// `rho` at the given state; errors when V has drifted out of range.
    pub fn rho(&self, x: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64, MetricsError> {
        let lambda = self.ops.u_pinv() * v;
        let residual = (self.ops.u_sqrt() * &lambda - v).norm();
        let tolerance = DUAL_RECOVERY_TOL * (1.0 + v.norm());
        if residual > tolerance {
            return Err(MetricsError::DualRecoveryFailed {
                residual,
                tolerance,
            });
        }
        let primal = (x - &self.x_star_stack).norm_squared();
        let dual = (&lambda - self.lambda_star).norm_squared();
        Ok((self.l + self.beta) * primal + dual / (2.0 * self.beta))
    }
}

/// One recorded step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: u64,
    pub comm_rounds: u64,
    pub grad_rounds: u64,
    pub objective_gap: f64,
    pub consensus_violation: f64,
    pub rho: Option<f64>,
    pub wall_time: f64,
}

/// A full run history plus the fingerprint identifying its exact setup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub fingerprint: String,
    pub records: Vec<IterationRecord>,
}

const CSV_HEADER: &str =
    "iter,comm_rounds,grad_rounds,objective_gap,consensus_violation,rho,wall_time";

impl Trace {
    pub fn new(fingerprint: String) -> Self {
        Self {
            fingerprint,
            records: Vec::new(),
        }
    }

    /// Deterministic CSV: identical inputs produce identical bytes except
    /// for the wall_time column. Floats carry 17 significant digits so
    /// parsing them back is lossless.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.fingerprint.is_empty() {
            let _ = writeln!(out, "# fingerprint={}", self.fingerprint);
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let rho = r
                .rho
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{},{:.16e}",
                r.iter, r.comm_rounds, r.grad_rounds, r.objective_gap,
                r.consensus_violation, rho, r.wall_time
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut fingerprint = String::new();
        let mut records = Vec::new();
        let mut seen_header = false;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(fp) = line.strip_prefix("# fingerprint=") {
                fingerprint = fp.to_string();
                continue;
            }
            if !seen_header {
                if line != CSV_HEADER {
                    return Err(MetricsError::BadTrace {
                        line: lineno,
                        reason: format!("expected header, found {line:?}"),
                    });
                }
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(MetricsError::BadTrace {
                    line: lineno,
                    reason: format!("expected 7 fields, found {}", fields.len()),
                });
            }
            let bad = |what: &str| MetricsError::BadTrace {
                line: lineno,
                reason: format!("could not parse {what}"),
            };
            records.push(IterationRecord {
                iter: fields[0].parse().map_err(|_| bad("iter"))?,
                comm_rounds: fields[1].parse().map_err(|_| bad("comm_rounds"))?,
                grad_rounds: fields[2].parse().map_err(|_| bad("grad_rounds"))?,
                objective_gap: fields[3].parse().map_err(|_| bad("objective_gap"))?,
                consensus_violation: fields[4]
                    .parse()
                    .map_err(|_| bad("consensus_violation"))?,
                rho: if fields[5].is_empty() {
                    None
                } else {
                    Some(fields[5].parse().map_err(|_| bad("rho"))?)
                },
                wall_time: fields[6].parse().map_err(|_| bad("wall_time"))?,
            });
        }
        if !seen_header {
            return Err(MetricsError::BadTrace {
                line: 1,
                reason: "no header line".into(),
            });
        }
        Ok(Self {
            fingerprint,
            records,
        })
    }
}

/// SHA-256 hex digest over `key=value` lines; the identity of a run setup.
pub fn fingerprint(parts: &[(&str, String)]) -> String {
    let mut hasher = Sha256::new();
    for (key, value) in parts {
        hasher.update(key.as_bytes());
        hasher.update(b"=");
        hasher.update(value.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Stopping rules enforced by the recorder.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Budget {
    pub max_grad_rounds: Option<u64>,
    pub max_comm_rounds: Option<u64>,
    pub target_gap: Option<f64>,
}

impl Budget {
    fn exhausted(&self, grad: u64, comm: u64, gap: f64) -> bool {
        self.max_grad_rounds.is_some_and(|cap| grad >= cap)
            || self.max_comm_rounds.is_some_and(|cap| comm >= cap)
            || self.target_gap.is_some_and(|t| gap <= t)
    }
}

/// Step observer that appends one [`IterationRecord`] per step, evaluating
/// the gap and consensus on the averaged iterate when one is maintained
/// and on the current iterate otherwise. The Lyapunov column is filled
/// when an oracle is attached; it always evaluates the raw state pair,
/// never the average.
pub struct TraceRecorder<'a, O: SmoothObjective> {
    obj: &'a O,
    f_star: f64,
    lyapunov: Option<LyapunovOracle<'a>>,
    budget: Budget,
    start: Instant,
    trace: Trace,
    recovery_warned: bool,
}

impl<'a, O: SmoothObjective> TraceRecorder<'a, O> {
    pub fn new(obj: &'a O, f_star: f64, fingerprint: String, budget: Budget) -> Self {
        Self {
            obj,
            f_star,
            lyapunov: None,
            budget,
            start: Instant::now(),
            trace: Trace::new(fingerprint),
            recovery_warned: false,
        }
    }

    pub fn with_lyapunov(mut self, oracle: LyapunovOracle<'a>) -> Self {
        self.lyapunov = Some(oracle);
        self
    }

    /// Records the starting point as iteration 0 with zero cost.
    pub fn record_initial(&mut self, x: &DMatrix<f64>, v: &DMatrix<f64>) {
        let record = self.build_record(0, 0, 0, x, v, None);
        self.trace.records.push(record);
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    fn build_record(
        &mut self,
        iter: u64,
        comm: u64,
        grad: u64,
        x: &DMatrix<f64>,
        v: &DMatrix<f64>,
        averaged: Option<&DMatrix<f64>>,
    ) -> IterationRecord {
        let eval = averaged.unwrap_or(x);
        let rho = match &self.lyapunov {
            Some(oracle) => match oracle.rho(x, v) {
                Ok(val) => Some(val),
                Err(err) => {
                    if !self.recovery_warned {
                        log::warn!("lyapunov column dropped: {err}");
                        self.recovery_warned = true;
                    }
                    None
                }
            },
            None => None,
        };
        IterationRecord {
            iter,
            comm_rounds: comm,
            grad_rounds: grad,
            objective_gap: objective_gap(self.obj, self.f_star, eval),
            consensus_violation: consensus_violation(eval),
            rho,
            wall_time: self.start.elapsed().as_secs_f64(),
        }
    }
}

impl<O: SmoothObjective> StepObserver for TraceRecorder<'_, O> {
    fn on_step(&mut self, info: &StepInfo<'_>) -> bool {
        let record = self.build_record(
            info.steps_completed,
            info.comm_rounds,
            info.grad_rounds,
            info.x,
            info.v,
            info.averaged.as_ref(),
        );
        let gap = record.objective_gap;
        self.trace.records.push(record);
        !self
            .budget
            .exhausted(info.grad_rounds, info.comm_rounds, gap)
    }
}

/// Consensus mean as a column vector; the iterate a trace evaluates.
pub fn network_average(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extra::{
        preset_strongly_convex, run_extra, CostCounters, ExtraState, StepInfo,
    };
    use crate::objective::LeastSquares;
    use crate::topology::{gen_erdos_renyi, WeightMatrix};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk(seed: u64, mu: f64) -> (LeastSquares, WeightMatrix, ConsensusOperators) {
        let inst = LeastSquares::generate(5, 3, 6, mu, seed).unwrap();
        let g = gen_erdos_renyi(6, 0.6, seed + 900).unwrap();
        let w = WeightMatrix::metropolis_lazy(&g).unwrap();
        let ops = ConsensusOperators::from_weights(&w).unwrap();
        (inst, w, ops)
    }

    #[test]
    fn gap_vanishes_on_consensus_at_the_solution() {
        let (inst, _, ops) = desk(3, 0.1);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let stack = reference.x_star_stack(inst.agents());
        let gap = objective_gap(&inst, reference.f_star(), &stack);
        assert!(gap.abs() < 1e-14, "gap at the solution: {gap}");
    }

    #[test]
    fn gap_equals_direct_evaluation_at_the_mean() {
        let (inst, _, ops) = desk(5, 0.1);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(inst.agents(), inst.dim(), |_, _| rng.random::<f64>());
        let mean = network_average(&x);
        let direct = inst.global_value(&mean) - reference.f_star();
        assert_abs_diff_eq!(
            objective_gap(&inst, reference.f_star(), &x),
            direct,
            epsilon = 1e-15
        );
    }

    #[test]
    fn consensus_of_opposite_rows_is_the_squared_norm() {
        let x_row = [1.5, -2.0, 0.5];
        let x = DMatrix::from_fn(2, 3, |i, j| if i == 0 { x_row[j] } else { -x_row[j] });
        let expected: f64 = x_row.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(consensus_violation(&x), expected, epsilon = 1e-15);
    }

    #[test]
    fn consensus_matches_centering_projector_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = rng.random_range(2..9);
            let n = rng.random_range(1..6);
            let x = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let ones = DMatrix::from_element(m, m, 1.0 / m as f64);
            let centered = &x - ones * &x;
            let expected = centered.norm_squared() / m as f64;
            assert_abs_diff_eq!(consensus_violation(&x), expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn consensus_is_invariant_under_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>());
        let mut rows: Vec<usize> = (0..6).collect();
        rows.reverse();
        rows.swap(1, 4);
        let permuted = DMatrix::from_fn(6, 4, |i, j| x[(rows[i], j)]);
        assert_abs_diff_eq!(
            consensus_violation(&x),
            consensus_violation(&permuted),
            epsilon = 1e-15
        );
    }

    #[test]
    fn delta_matches_hand_arithmetic_and_monotonicity() {
        // L/mu = 10, 1/(1 - sigma2) = 2
        assert_abs_diff_eq!(
            contraction_delta(10.0, 1.0, 0.5).unwrap(),
            1.0 / 468.0,
            epsilon = 1e-18
        );
        // L/mu = 1, sigma2 = 0
        assert_abs_diff_eq!(
            contraction_delta(2.0, 2.0, 0.0).unwrap(),
            1.0 / 78.0,
            epsilon = 1e-18
        );
        let base = contraction_delta(10.0, 1.0, 0.5).unwrap();
        assert!(contraction_delta(20.0, 1.0, 0.5).unwrap() < base);
        assert!(contraction_delta(10.0, 1.0, 0.9).unwrap() < base);
        assert!(matches!(
            contraction_delta(1.0, 0.0, 0.5),
            Err(MetricsError::DeltaNeedsStrongConvexity { .. })
        ));
        assert!(matches!(
            contraction_delta(1.0, 1.0, 1.0),
            Err(MetricsError::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn lyapunov_vanishes_at_the_saddle_point() {
        let (inst, _, ops) = desk(17, 0.05);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let beta = inst.smoothness();
        let oracle = LyapunovOracle::new(&reference, &ops, inst.smoothness(), beta);
        let x = reference.x_star_stack(inst.agents());
        let v = -reference.grad_at_star().clone();
        let rho = oracle.rho(&x, &v).unwrap();
        assert!(rho < 1e-16, "rho at the saddle: {rho}");
    }

    #[test]
    fn lyapunov_at_zero_dual_is_the_certificate_norm() {
        let (inst, _, ops) = desk(19, 0.05);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let beta = 2.5;
        let oracle = LyapunovOracle::new(&reference, &ops, inst.smoothness(), beta);
        let x = reference.x_star_stack(inst.agents());
        let v = DMatrix::zeros(inst.agents(), inst.dim());
        let rho = oracle.rho(&x, &v).unwrap();
        let expected = reference.lambda_star().norm_squared() / (2.0 * beta);
        assert_abs_diff_eq!(rho, expected, epsilon = 1e-12 * (1.0 + expected));
    }

    #[test]
    fn lyapunov_rejects_dual_outside_the_mixing_range() {
        let (inst, _, ops) = desk(23, 0.05);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let oracle =
            LyapunovOracle::new(&reference, &ops, inst.smoothness(), inst.smoothness());
        let x = DMatrix::zeros(inst.agents(), inst.dim());
        // constant columns live in the consensus null space, unreachable by V
        let v = DMatrix::from_element(inst.agents(), inst.dim(), 1.0);
        assert!(matches!(
            oracle.rho(&x, &v),
            Err(MetricsError::DualRecoveryFailed { .. })
        ));
    }

    #[test]
    fn rate_constants_match_hand_computation() {
        let (inst, _, ops) = desk(29, 0.0);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let m = inst.agents();
        let x0 = DMatrix::zeros(m, inst.dim());
        let rc = RateConstants::from_reference(&reference, &x0).unwrap();
        // from the zero stack the worst start distance is ||x*||^2 itself
        assert_abs_diff_eq!(rc.r1, reference.x_star().norm_squared(), epsilon = 1e-14);
        let worst_grad = (0..m)
            .map(|i| {
                inst.local_gradient(i, reference.x_star())
                    .norm_squared()
            })
            .fold(0.0f64, f64::max);
        assert_abs_diff_eq!(rc.r2, worst_grad, epsilon = 1e-14 * (1.0 + worst_grad));
    }

    #[test]
    fn averaged_bounds_follow_the_formulas_and_scaling() {
        let rc = RateConstants { r1: 1.0, r2: 0.0 };
        // sigma2 = 0, L = 1, k = 34: gap bound is exactly 1
        let b = averaged_iterate_bounds(1.0, 0.0, &rc, 34).unwrap();
        assert_abs_diff_eq!(b.objective_gap, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.consensus_violation, 16.0 / (34.0 * 34.0), epsilon = 1e-15);
        // doubling k halves the gap bound and quarters the consensus bound
        let b2 = averaged_iterate_bounds(1.0, 0.0, &rc, 68).unwrap();
        assert_abs_diff_eq!(b2.objective_gap, b.objective_gap / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            b2.consensus_violation,
            b.consensus_violation / 4.0,
            epsilon = 1e-15
        );
        // general arithmetic at sigma2 = 0.75, L = 2
        let rc2 = RateConstants { r1: 3.0, r2: 8.0 };
        let b3 = averaged_iterate_bounds(2.0, 0.75, &rc2, 10).unwrap();
        assert_abs_diff_eq!(
            b3.objective_gap,
            34.0 * (2.0 * 3.0 + 8.0 / 2.0) / (10.0 * 0.5),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            b3.consensus_violation,
            16.0 * (3.0 + 2.0) / (100.0 * 0.25),
            epsilon = 1e-12
        );
    }

    #[test]
    fn averaged_bounds_reject_short_horizons() {
        let rc = RateConstants { r1: 1.0, r2: 1.0 };
        // sigma2 = 0.99 needs k >= 10
        assert!(matches!(
            averaged_iterate_bounds(1.0, 0.99, &rc, 9),
            Err(MetricsError::AveragedBoundsNeedMoreSteps { min: 10, .. })
        ));
        assert!(averaged_iterate_bounds(1.0, 0.99, &rc, 10).is_ok());
    }

    #[test]
    fn trace_csv_round_trips_and_is_deterministic() {
        let mut trace = Trace::new("abc123".into());
        trace.records.push(IterationRecord {
            iter: 0,
            comm_rounds: 0,
            grad_rounds: 0,
            objective_gap: 1.234567890123456e-3,
            consensus_violation: 0.5,
            rho: None,
            wall_time: 0.0,
        });
        trace.records.push(IterationRecord {
            iter: 1,
            comm_rounds: 2,
            grad_rounds: 1,
            objective_gap: 9.87e-7,
            consensus_violation: 1.0 / 3.0,
            rho: Some(0.125),
            wall_time: 0.0031,
        });
        let csv = trace.to_csv();
        assert_eq!(csv, trace.to_csv());
        let back = Trace::from_csv(&csv).unwrap();
        assert_eq!(back, trace);
        assert!(csv.starts_with("# fingerprint=abc123\n"));
        assert!(csv.contains(",,")); // empty rho field on the first row
    }

    #[test]
    fn trace_csv_rejects_malformed_input() {
        assert!(matches!(
            Trace::from_csv("not,a,header\n"),
            Err(MetricsError::BadTrace { line: 1, .. })
        ));
        let bad_fields = format!("{CSV_HEADER}\n1,2\n");
        assert!(matches!(
            Trace::from_csv(&bad_fields),
            Err(MetricsError::BadTrace { line: 2, .. })
        ));
        let bad_float = format!("{CSV_HEADER}\n1,2,3,zap,0.0,,0.0\n");
        assert!(matches!(
            Trace::from_csv(&bad_float),
            Err(MetricsError::BadTrace { line: 2, .. })
        ));
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let parts = [
            ("problem_seed", "7".to_string()),
            ("graph_seed", "9".to_string()),
            ("algorithm", "extra_sc".to_string()),
            ("alpha", format!("{:.16e}", 0.25)),
        ];
        let a = fingerprint(&parts);
        let b = fingerprint(&parts);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        let mut other = parts.clone();
        other[0].1 = "8".to_string();
        assert_ne!(a, fingerprint(&other));
    }

    #[test]
    fn recorder_fills_rows_and_stops_at_target() {
        let (inst, w, ops) = desk(31, 0.1);
        let reference = ReferenceSolution::solve_least_squares(&inst, &ops).unwrap();
        let cfg = preset_strongly_convex(&inst, &w).unwrap().with_k_max(100_000);
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let oracle = LyapunovOracle::new(&reference, &ops, inst.smoothness(), cfg.beta);
        let budget = Budget {
            max_grad_rounds: Some(50_000),
            max_comm_rounds: None,
            target_gap: Some(1e-6),
        };
        let mut recorder = TraceRecorder::new(
            &inst,
            reference.f_star(),
            fingerprint(&[("case", "recorder-test".into())]),
            budget,
        )
        .with_lyapunov(oracle);
        let state = ExtraState::new(x0.clone());
        recorder.record_initial(state.x(), state.v());
        let mut counters = CostCounters::default();
        let out = run_extra(&inst, &w, &cfg, state, &mut counters, &mut recorder).unwrap();
        assert!(out.stopped_early, "target gap should fire before k_max");
        let trace = recorder.into_trace();
        let last = trace.records.last().unwrap();
        assert!(last.objective_gap <= 1e-6);
        assert_eq!(trace.records[0].iter, 0);
        assert_eq!(trace.records[0].grad_rounds, 0);
        // counters in the rows are cumulative and match the row index
        for (idx, rec) in trace.records.iter().enumerate() {
            assert_eq!(rec.iter, idx as u64);
            assert_eq!(rec.grad_rounds, rec.iter);
            assert_eq!(rec.comm_rounds, 2 * rec.iter);
            assert!(rec.rho.is_some());
        }
        // rho decreases along the run on this strongly convex instance
        let rhos: Vec<f64> = trace.records.iter().filter_map(|r| r.rho).collect();
        assert!(rhos.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn recorder_stops_on_gradient_budget() {
        let (inst, w, _) = desk(37, 0.1);
        let cfg = preset_strongly_convex(&inst, &w).unwrap().with_k_max(10_000);
        let budget = Budget {
            max_grad_rounds: Some(25),
            max_comm_rounds: None,
            target_gap: None,
        };
        let mut recorder = TraceRecorder::new(&inst, 0.0, String::new(), budget);
        let x0 = DMatrix::zeros(inst.agents(), inst.dim());
        let mut counters = CostCounters::default();
        let out = run_extra(
            &inst,
            &w,
            &cfg,
            ExtraState::new(x0),
            &mut counters,
            &mut recorder,
        )
        .unwrap();
        assert!(out.stopped_early);
        assert_eq!(counters.grad_rounds, 25);
        assert_eq!(recorder.trace().records.len(), 25);
    }

    #[test]
    fn live_iterates_obey_the_disagreement_bound() {
        let (inst, w, ops) = desk(41, 0.05);
        let cfg = preset_strongly_convex(&inst, &w).unwrap().with_k_max(199);
        let x0 = DMatrix::from_fn(inst.agents(), inst.dim(), |i, j| {
            ((i * 7 + j * 3) as f64).cos()
        });
        let scale = (2.0 / (1.0 - ops.sigma2())).sqrt();
        let mut counters = CostCounters::default();
        let mut observer = |info: &StepInfo<'_>| {
            let lhs = ops.project_disagreement(info.x).norm();
            let rhs = scale * (ops.u_sqrt() * info.x).norm();
            assert!(lhs <= rhs + 1e-9, "disagreement bound broken: {lhs} > {rhs}");
            true
        };
        run_extra(
            &inst,
            &w,
            &cfg,
            ExtraState::new(x0),
            &mut counters,
            &mut observer,
        )
        .unwrap();
    }
}
