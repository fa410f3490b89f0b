//! Per-agent smooth objectives, the synthetic least-squares family, and
//! high-accuracy reference solutions.
//!
//! An objective is a collection of `m` private functions `f_i` on a shared
//! n-dimensional variable; the global target is their average
//! `F(x) = (1/m) sum_i f_i(x)`. Algorithms only touch objectives through
//! per-agent value/gradient oracles plus declared smoothness and
//! strong-convexity constants; everything else here (reference minimizers,
//! dual certificates, ridge helpers) exists for metrics and tests and is
//! never consulted by the iterations themselves.

use crate::topology::ConsensusOperators;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("instance sizes must be at least 1 (n = {n}, s = {s}, m = {m})")]
    EmptyInstance { n: usize, s: usize, m: usize },
    #[error("ridge coefficient must be nonnegative, got {mu}")]
    NegativeRidge { mu: f64 },
    #[error("regularization weight must be positive, got {eps}")]
    BadRegularization { eps: f64 },
    #[error("proximal weight must be positive, got {tau}")]
    BadProximalWeight { tau: f64 },
    #[error(
        "reference solve failed: gradient residual {residual:.3e} after {iterations} iterations"
    )]
    ReferenceSolveFailed { residual: f64, iterations: u64 },
    #[error(
        "reference solution violates {what}: residual {residual:.3e} exceeds tolerance {tolerance:.3e}"
    )]
    ReferenceInvariant {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },
    #[error("instance serialization failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("instance deserialization failed: {reason}")]
    BadInstanceData { reason: String },
}

/// A collection of `m` smooth convex functions sharing one variable.
///
/// `smoothness` and `strong_convexity` are the declared constants `L` and
/// `mu` valid for every agent; presets and schedules trust them, so a type
/// implementing this trait must not under-report `L` or over-report `mu`.
pub trait SmoothObjective {
    /// Number of agents `m`.
    fn agents(&self) -> usize;

    /// Variable dimension `n`.
    fn dim(&self) -> usize;

    /// Value of agent `i`'s private function at `x`.
    fn local_value(&self, i: usize, x: &DVector<f64>) -> f64;

    /// Gradient of agent `i`'s private function at `x`.
    fn local_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64>;

    /// Common smoothness constant `L` (Lipschitz constant of every local
    /// gradient).
    fn smoothness(&self) -> f64;

    /// Common strong-convexity modulus `mu >= 0`.
    fn strong_convexity(&self) -> f64;

    /// Average objective `F(x) = (1/m) sum_i f_i(x)`.
    fn global_value(&self, x: &DVector<f64>) -> f64 {
        let m = self.agents();
        (0..m).map(|i| self.local_value(i, x)).sum::<f64>() / m as f64
    }

    /// Gradient of the average objective at a common point.
    fn global_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.agents();
        let mut g = DVector::zeros(self.dim());
        for i in 0..m {
            g += self.local_gradient(i, x);
        }
        g / m as f64
    }

    /// Row-stacked gradient: row `i` of the result is agent `i`'s gradient
    /// evaluated at row `i` of `x_stack`.
    fn stacked_gradient(&self, x_stack: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = (self.agents(), self.dim());
        assert_eq!(
            (x_stack.nrows(), x_stack.ncols()),
            (m, n),
            "stacked iterate must be m-by-n"
        );
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            let xi = x_stack.row(i).transpose();
            out.set_row(i, &self.local_gradient(i, &xi).transpose());
        }
        out
    }
}

impl<T: SmoothObjective + ?Sized> SmoothObjective for &T {
    fn agents(&self) -> usize {
        (**self).agents()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn local_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        (**self).local_value(i, x)
    }
    fn local_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        (**self).local_gradient(i, x)
    }
    fn smoothness(&self) -> f64 {
        (**self).smoothness()
    }
    fn strong_convexity(&self) -> f64 {
        (**self).strong_convexity()
    }
}

/// Synthetic ridge-regularized least squares:
/// `f_i(x) = (1/2) ||A_i' x - b_i||^2 + (mu/2) ||x||^2`
/// with per-agent data `A_i` (n-by-s, unit-norm columns) and targets `b_i`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    mu: f64,
    seed: u64,
    /// Present only for generated instances: the vector the targets were
    /// built from, so `b_i = A_i' planted` exactly.
    planted: Option<DVector<f64>>,
    smoothness: f64,
}

impl LeastSquares {
    /// Draws an instance: `A_i` entries iid uniform on `[0,1]` with each
    /// column then normalized to unit Euclidean norm, a standard-normal
    /// planted vector, and consistent targets `b_i = A_i' planted`.
    /// `L = max_i lambda_max(A_i A_i') + mu`, computed exactly from the
    /// per-agent Gram spectra.
    pub fn generate(
        n: usize,
        s: usize,
        m: usize,
        mu: f64,
        seed: u64,
    ) -> Result<Self, ObjectiveError> {
        if n < 1 || s < 1 || m < 1 {
            return Err(ObjectiveError::EmptyInstance { n, s, m });
        }
        if mu < 0.0 {
            return Err(ObjectiveError::NegativeRidge { mu });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(m);
        for _ in 0..m {
            let mut ai = DMatrix::<f64>::zeros(n, s);
            for j in 0..s {
                let mut col = DVector::from_fn(n, |_, _| rng.random::<f64>());
                let norm = col.norm();
                // entries are in [0,1); an all-zero column has probability 0
                col /= norm;
                ai.set_column(j, &col);
            }
            a.push(ai);
        }
        let planted = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let b: Vec<DVector<f64>> = a.iter().map(|ai| ai.transpose() * &planted).collect();
        let smoothness = max_gram_eigenvalue(&a) + mu;
        Ok(Self {
            a,
            b,
            mu,
            seed,
            planted: Some(planted),
            smoothness,
        })
    }

    /// Wraps explicit data. Columns need not be normalized here; `L` is
    /// still computed exactly from the Gram spectra.
    pub fn from_parts(
        a: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
        mu: f64,
    ) -> Result<Self, ObjectiveError> {
        if a.is_empty() || a.len() != b.len() {
            return Err(ObjectiveError::DimensionMismatch {
                context: format!("{} data matrices vs {} target vectors", a.len(), b.len()),
            });
        }
        if mu < 0.0 {
            return Err(ObjectiveError::NegativeRidge { mu });
        }
        let (n, s) = (a[0].nrows(), a[0].ncols());
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.nrows() != n || ai.ncols() != s || bi.len() != s {
                return Err(ObjectiveError::DimensionMismatch {
                    context: format!("agent {i} data is not {n}x{s} with an {s}-target"),
                });
            }
        }
        let smoothness = max_gram_eigenvalue(&a) + mu;
        Ok(Self {
            a,
            b,
            mu,
            seed: 0,
            planted: None,
            smoothness,
        })
    }

    /// Samples per agent.
    pub fn samples_per_agent(&self) -> usize {
        self.a[0].ncols()
    }

    /// Agent `i`'s data matrix.
    pub fn data(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    /// Agent `i`'s target vector.
    pub fn target(&self, i: usize) -> &DVector<f64> {
        &self.b[i]
    }

    /// Ridge coefficient.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Generator seed (0 for hand-assembled instances).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Planted vector, when the instance was generated.
    pub fn planted(&self) -> Option<&DVector<f64>> {
        self.planted.as_ref()
    }

    /// Average Gram matrix `(1/m) sum_i A_i A_i'` and average projected
    /// target `(1/m) sum_i A_i b_i`: the normal-equation data of `F`.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (ai, bi) in self.a.iter().zip(&self.b) {
            gram += ai * ai.transpose();
            rhs += ai * bi;
        }
        let m = self.agents() as f64;
        (gram / m, rhs / m)
    }

    /// Exact minimizer of `F(x) + (tau/2) ||x - anchor||^2` by a direct
    /// ridge solve of its normal equations. This is the oracle used to
    /// score inexact proximal subproblem solutions.
    pub fn ridge_prox_minimizer(
        &self,
        tau: f64,
        anchor: &DVector<f64>,
    ) -> Result<DVector<f64>, ObjectiveError> {
        if anchor.len() != self.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                context: format!(
                    "anchor has {} entries, variable dimension is {}",
                    anchor.len(),
                    self.dim()
                ),
            });
        }
        let (mut gram, mut rhs) = self.normal_equations();
        let shift = self.mu + tau;
        for d in 0..self.dim() {
            gram[(d, d)] += shift;
        }
        rhs += anchor * tau;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or(ObjectiveError::ReferenceSolveFailed {
                residual: f64::INFINITY,
                iterations: 0,
            })?;
        let mut x = chol.solve(&rhs);
        // one round of iterative refinement keeps the residual near
        // machine precision even for small tau
        let r = &rhs - &gram * &x;
        x += chol.solve(&r);
        Ok(x)
    }

    /// Writes the instance to `dir`: one `A_i.csv` (n rows, s columns) and
    /// one `b_i.csv` (s lines) per agent, plus `metadata.txt` with
    /// `key=value` lines for n, s, m, mu, seed.
    pub fn save_dir(&self, dir: &Path) -> Result<(), ObjectiveError> {
        std::fs::create_dir_all(dir)?;
        let (n, s, m) = (self.dim(), self.samples_per_agent(), self.agents());
        let mut meta = String::new();
        let _ = writeln!(meta, "n={n}");
        let _ = writeln!(meta, "s={s}");
        let _ = writeln!(meta, "m={m}");
        let _ = writeln!(meta, "mu={:.16e}", self.mu);
        let _ = writeln!(meta, "seed={}", self.seed);
        std::fs::write(dir.join("metadata.txt"), meta)?;
        for i in 0..m {
            let mut acsv = String::new();
            for r in 0..n {
                for c in 0..s {
                    if c > 0 {
                        acsv.push(',');
                    }
                    let _ = write!(acsv, "{:.16e}", self.a[i][(r, c)]);
                }
                acsv.push('\n');
            }
            std::fs::write(dir.join(format!("A_{i}.csv")), acsv)?;
            let mut bcsv = String::new();
            for c in 0..s {
                let _ = writeln!(bcsv, "{:.16e}", self.b[i][c]);
            }
            std::fs::write(dir.join(format!("b_{i}.csv")), bcsv)?;
        }
        Ok(())
    }

    /// Reads an instance directory written by [`LeastSquares::save_dir`].
    /// The planted vector is not part of the format, so the loaded instance
    /// reports `planted() == None`.
    pub fn load_dir(dir: &Path) -> Result<Self, ObjectiveError> {
        let meta = std::fs::read_to_string(dir.join("metadata.txt"))?;
        let mut n = None;
        let mut s = None;
        let mut m = None;
        let mut mu = None;
        let mut seed = None;
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ObjectiveError::BadInstanceData {
                    reason: format!("metadata line without `=`: {line:?}"),
                })?;
            let bad = |e: &dyn std::fmt::Display| ObjectiveError::BadInstanceData {
                reason: format!("bad metadata value for {key}: {e}"),
            };
            match key.trim() {
                "n" => n = Some(value.trim().parse::<usize>().map_err(|e| bad(&e))?),
                "s" => s = Some(value.trim().parse::<usize>().map_err(|e| bad(&e))?),
                "m" => m = Some(value.trim().parse::<usize>().map_err(|e| bad(&e))?),
                "mu" => mu = Some(value.trim().parse::<f64>().map_err(|e| bad(&e))?),
                "seed" => seed = Some(value.trim().parse::<u64>().map_err(|e| bad(&e))?),
                other => {
                    return Err(ObjectiveError::BadInstanceData {
                        reason: format!("unknown metadata key {other:?}"),
                    })
                }
            }
        }
        let missing = |what: &str| ObjectiveError::BadInstanceData {
            reason: format!("metadata is missing {what}"),
        };
        let n = n.ok_or_else(|| missing("n"))?;
        let s = s.ok_or_else(|| missing("s"))?;
        let m = m.ok_or_else(|| missing("m"))?;
        let mu = mu.ok_or_else(|| missing("mu"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let parse_matrix = |text: &str, rows: usize, cols: usize, name: &str| {
            let mut out = DMatrix::<f64>::zeros(rows, cols);
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            if lines.len() != rows {
                return Err(ObjectiveError::BadInstanceData {
                    reason: format!("{name}: expected {rows} rows, found {}", lines.len()),
                });
            }
            for (r, line) in lines.iter().enumerate() {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != cols {
                    return Err(ObjectiveError::BadInstanceData {
                        reason: format!("{name} row {r}: expected {cols} columns"),
                    });
                }
                for (c, f) in fields.iter().enumerate() {
                    out[(r, c)] =
                        f.trim()
                            .parse::<f64>()
                            .map_err(|e| ObjectiveError::BadInstanceData {
                                reason: format!("{name} entry ({r},{c}): {e}"),
                            })?;
                }
            }
            Ok(out)
        };
        let mut a = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for i in 0..m {
            let atext = std::fs::read_to_string(dir.join(format!("A_{i}.csv")))?;
            a.push(parse_matrix(&atext, n, s, &format!("A_{i}"))?);
            let btext = std::fs::read_to_string(dir.join(format!("b_{i}.csv")))?;
            let bm = parse_matrix(&btext, s, 1, &format!("b_{i}"))?;
            b.push(DVector::from_column_slice(bm.as_slice()));
        }
        let mut inst = Self::from_parts(a, b, mu)?;
        inst.seed = seed;
        Ok(inst)
    }
}

fn max_gram_eigenvalue(a: &[DMatrix<f64>]) -> f64 {
    // lambda_max(A A') = lambda_max(A' A); the s-by-s side is cheaper
    a.iter()
        .map(|ai| {
            let gram = ai.transpose() * ai;
            gram.symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

impl SmoothObjective for LeastSquares {
    fn agents(&self) -> usize {
        self.a.len()
    }

    fn dim(&self) -> usize {
        self.a[0].nrows()
    }

    fn local_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        let r = self.a[i].transpose() * x - &self.b[i];
        0.5 * r.norm_squared() + 0.5 * self.mu * x.norm_squared()
    }

    fn local_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let r = self.a[i].transpose() * x - &self.b[i];
        &self.a[i] * r + x * self.mu
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }
}

/// `f_i(x) + (eps/2) ||x||^2` for every agent: lifts a merely convex
/// objective to an eps-strongly convex one. `L` grows by `eps` and the
/// declared modulus becomes `max(mu, 0) + eps`.
#[derive(Debug, Clone)]
pub struct Regularized<O> {
    inner: O,
    eps: f64,
}

impl<O: SmoothObjective> Regularized<O> {
    pub fn new(inner: O, eps: f64) -> Result<Self, ObjectiveError> {
        if !(eps > 0.0) {
            return Err(ObjectiveError::BadRegularization { eps });
        }
        if inner.strong_convexity() > 0.0 {
            log::warn!(
                "regularizing an objective that is already {}-strongly convex",
                inner.strong_convexity()
            );
        }
        Ok(Self { inner, eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: SmoothObjective> SmoothObjective for Regularized<O> {
    fn agents(&self) -> usize {
        self.inner.agents()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn local_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.inner.local_value(i, x) + 0.5 * self.eps * x.norm_squared()
    }

    fn local_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.inner.local_gradient(i, x) + x * self.eps
    }

    fn smoothness(&self) -> f64 {
        self.inner.smoothness() + self.eps
    }

    fn strong_convexity(&self) -> f64 {
        self.inner.strong_convexity() + self.eps
    }
}

/// Per-agent proximal shift `g_i(x) = f_i(x) + (tau/2) ||x - y_i||^2`,
/// anchored at row `i` of an m-by-n matrix. Each subproblem in the
/// accelerated outer loop is one of these.
#[derive(Debug, Clone)]
pub struct ProxShifted<O> {
    inner: O,
    tau: f64,
    anchors: DMatrix<f64>,
}

impl<O: SmoothObjective> ProxShifted<O> {
    pub fn new(inner: O, tau: f64, anchors: DMatrix<f64>) -> Result<Self, ObjectiveError> {
        if !(tau > 0.0) {
            return Err(ObjectiveError::BadProximalWeight { tau });
        }
        if anchors.nrows() != inner.agents() || anchors.ncols() != inner.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                context: format!(
                    "anchor matrix is {}x{}, objective needs {}x{}",
                    anchors.nrows(),
                    anchors.ncols(),
                    inner.agents(),
                    inner.dim()
                ),
            });
        }
        Ok(Self { inner, tau, anchors })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }
}

impl<O: SmoothObjective> SmoothObjective for ProxShifted<O> {
    fn agents(&self) -> usize {
        self.inner.agents()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn local_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        let d = x - self.anchors.row(i).transpose();
        self.inner.local_value(i, x) + 0.5 * self.tau * d.norm_squared()
    }

    fn local_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let d = x - self.anchors.row(i).transpose();
        self.inner.local_gradient(i, x) + d * self.tau
    }

    fn smoothness(&self) -> f64 {
        self.inner.smoothness() + self.tau
    }

    fn strong_convexity(&self) -> f64 {
        self.inner.strong_convexity() + self.tau
    }
}

/// Ground truth for one (objective, network) pair: the minimizer of `F`,
/// its value, the stacked gradients there, and the dual certificate of the
/// consensus-constrained formulation.
///
/// Everything downstream treats this as an oracle; the solvers under test
/// never see it.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    x_star: DVector<f64>,
    f_star: f64,
    grad_at_star: DMatrix<f64>,
    lambda_star: DMatrix<f64>,
}

/// Iteration cap for the gradient-descent fallback solver.
const FALLBACK_CAP: u64 = 20_000_000;

impl ReferenceSolution {
    /// Direct solve for least squares: `x*` from the normal equations
    /// `(avg Gram + mu I) x = avg A b`, with the minimum-norm
    /// pseudo-inverse solution when `mu = 0` leaves the system rank
    /// deficient. The dual certificate is `lambda* = -U^+ grad_stack(x*)`.
    pub fn solve_least_squares(
        obj: &LeastSquares,
        ops: &ConsensusOperators,
    ) -> Result<Self, ObjectiveError> {
        let (mut gram, rhs) = obj.normal_equations();
        let n = obj.dim();
        for d in 0..n {
            gram[(d, d)] += obj.mu();
        }
        let x_star = if obj.mu() > 0.0 {
            match gram.clone().cholesky() {
                Some(chol) => {
                    let mut x = chol.solve(&rhs);
                    let r = &rhs - &gram * &x;
                    x += chol.solve(&r);
                    x
                }
                None => pinv_solve(&gram, &rhs),
            }
        } else {
            pinv_solve(&gram, &rhs)
        };
        Self::finish(obj, ops, x_star)
    }

    /// Plain gradient descent with step `1/L`, run to near machine
    /// precision. Slow but objective-agnostic; the least-squares path
    /// should be preferred whenever the structure is known.
    pub fn solve_gradient_descent<O: SmoothObjective>(
        obj: &O,
        ops: &ConsensusOperators,
    ) -> Result<Self, ObjectiveError> {
        let n = obj.dim();
        let x0 = DVector::zeros(n);
        let target = 1e-12 * obj.global_gradient(&x0).norm().max(1.0);
        let step = 1.0 / obj.smoothness();
        let mut x = x0;
        let mut iterations = 0u64;
        loop {
            let g = obj.global_gradient(&x);
            let res = g.norm();
            if res <= target {
                break;
            }
            if iterations >= FALLBACK_CAP {
                return Err(ObjectiveError::ReferenceSolveFailed {
                    residual: res,
                    iterations,
                });
            }
            x -= g * step;
            iterations += 1;
        }
        Self::finish(obj, ops, x)
    }

    fn finish<O: SmoothObjective>(
        obj: &O,
        ops: &ConsensusOperators,
        x_star: DVector<f64>,
    ) -> Result<Self, ObjectiveError> {
        let m = obj.agents();
        if ops.agents() != m {
            return Err(ObjectiveError::DimensionMismatch {
                context: format!(
                    "operators are for {} agents, objective has {}",
                    ops.agents(),
                    m
                ),
            });
        }
        let f_star = obj.global_value(&x_star);
        let mut grad_at_star = DMatrix::zeros(m, obj.dim());
        for i in 0..m {
            grad_at_star.set_row(i, &obj.local_gradient(i, &x_star).transpose());
        }
        let lambda_star = -(ops.u_pinv() * &grad_at_star);

        // first-order optimality of the solve itself
        let x0 = DVector::zeros(obj.dim());
        let gtol = 1e-10 * obj.global_gradient(&x0).norm().max(1.0);
        let gres = obj.global_gradient(&x_star).norm();
        if gres > gtol {
            return Err(ObjectiveError::ReferenceInvariant {
                what: "first-order optimality",
                residual: gres,
                tolerance: gtol,
            });
        }
        // stationarity of the constrained formulation: U lambda* must
        // cancel the stacked gradient
        let kkt = (ops.u_sqrt() * &lambda_star + &grad_at_star).norm();
        let ktol = 1e-9 * grad_at_star.norm().max(1.0);
        if kkt > ktol {
            return Err(ObjectiveError::ReferenceInvariant {
                what: "dual stationarity",
                residual: kkt,
                tolerance: ktol,
            });
        }
        // the dual certificate obeys the spectral norm bound
        let gap = 1.0 - ops.sigma2();
        if gap > 0.0 {
            let cap = 2f64.sqrt() * grad_at_star.norm() / gap.sqrt() + 1e-9;
            let lnorm = lambda_star.norm();
            if lnorm > cap {
                return Err(ObjectiveError::ReferenceInvariant {
                    what: "dual norm bound",
                    residual: lnorm,
                    tolerance: cap,
                });
            }
        }
        Ok(Self {
            x_star,
            f_star,
            grad_at_star,
            lambda_star,
        })
    }

    /// Minimizer of `F`.
    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    /// Optimal value `F(x*)`.
    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// Row `i` is agent `i`'s gradient at `x*`.
    pub fn grad_at_star(&self) -> &DMatrix<f64> {
        &self.grad_at_star
    }

    /// Dual certificate with `U lambda* = -grad_at_star`, in the row space
    /// of `U`.
    pub fn lambda_star(&self) -> &DMatrix<f64> {
        &self.lambda_star
    }

    /// `x*` broadcast to all agents as an m-by-n stack.
    pub fn x_star_stack(&self, m: usize) -> DMatrix<f64> {
        let n = self.x_star.len();
        DMatrix::from_fn(m, n, |_, j| self.x_star[j])
    }

    /// Largest per-agent squared gradient norm at the optimum; the
    /// gradient-size constant in the sublinear rate bounds.
    pub fn max_local_grad_sq(&self) -> f64 {
        self.grad_at_star
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0, f64::max)
    }
}

/// Minimum-norm solution of a consistent symmetric PSD system via
/// eigendecomposition, with eigenvalues below `1e-12 * lambda_max`
/// treated as zero.
fn pinv_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let eig = gram.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = 1e-12 * lam_max.max(1e-300);
    let qt_rhs = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        qt_rhs.len(),
        qt_rhs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(&c, &l)| if l > cut { c / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}
