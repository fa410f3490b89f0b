//! Runs every algorithm variant of a configuration against one shared
//! instance/graph/reference build and writes one CSV trace per variant.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use extralab::catalyst::{default_tau, run_acc_extra, CatalystConfig, CatalystError, TkSchedule};
use extralab::extra::{
    preset_nonstrongly_convex, preset_original, preset_strongly_convex, run_extra,
    run_two_stage_regularized, CostCounters, ExtraConfig, ExtraError, ExtraState, TwoStageSizing,
};
use extralab::metrics::{fingerprint, Budget, LyapunovOracle, Trace, TraceRecorder};
use extralab::objective::{LeastSquares, ObjectiveError, ReferenceSolution, SmoothObjective};
use extralab::topology::{
    gen_erdos_renyi, gen_geometric, gen_line, gen_ring, ConsensusOperators, Graph, TopologyError,
    WeightMatrix,
};
use nalgebra::DMatrix;

use crate::config::{
    AlgorithmName, AlgorithmSpec, ExperimentConfig, GraphConfig, GraphFamily, ScheduleConfig,
};

/// Everything built once and shared read-only by all variants.
pub struct SuiteContext {
    pub graph: Graph,
    pub weights: WeightMatrix,
    pub operators: ConsensusOperators,
    pub instance: LeastSquares,
    pub reference: ReferenceSolution,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("graph generation failed: {0}")]
    Graph(#[from] TopologyError),
    #[error("instance generation failed: {0}")]
    Instance(#[from] ObjectiveError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One successfully completed variant.
pub struct VariantOutcome {
    pub name: String,
    pub trace: Trace,
    pub csv_path: PathBuf,
}

/// One variant that errored; the rest of the suite keeps running.
pub struct VariantFailure {
    pub name: String,
    pub message: String,
    pub diverged: bool,
}

pub struct SuiteReport {
    /// Successful variants, in configuration order.
    pub outcomes: Vec<VariantOutcome>,
    /// Failed variants, in configuration order.
    pub failures: Vec<VariantFailure>,
    /// Plot files written (empty unless SVG output was requested).
    pub plots: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn any_divergence(&self) -> bool {
        self.failures.iter().any(|f| f.diverged)
    }
}

/// Builds the graph named by the config at `m` agents.
pub fn build_graph(cfg: &GraphConfig, m: usize) -> Result<Graph, TopologyError> {
    match cfg.family {
        GraphFamily::ErdosRenyi => {
            gen_erdos_renyi(m, cfg.effective_param().unwrap(), cfg.seed)
        }
        GraphFamily::Geometric => gen_geometric(m, cfg.effective_param().unwrap(), cfg.seed),
        GraphFamily::Ring => gen_ring(m),
        GraphFamily::Line => gen_line(m),
    }
}

impl SuiteContext {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, SuiteError> {
        let p = &cfg.problem;
        let graph = build_graph(&cfg.graph, p.m)?;
        let weights = WeightMatrix::metropolis_lazy(&graph)?;
        let operators = ConsensusOperators::from_weights(&weights)?;
        let instance = LeastSquares::generate(p.n, p.s, p.m, p.mu, p.seed)?;
        let reference = ReferenceSolution::solve_least_squares(&instance, &operators)?;
        Ok(Self {
            graph,
            weights,
            operators,
            instance,
            reference,
        })
    }
}

/// Number of variants allowed to run at once: `EXTRALAB_THREADS` when set
/// to a positive integer, the machine's parallelism otherwise.
fn thread_cap() -> usize {
    std::env::var("EXTRALAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1)
        })
}

/// Runs all configured variants (in parallel up to the thread cap), writes
/// `<variant>.csv` files into `out_dir`, and renders plots when requested.
/// Per-variant errors are collected, not propagated; setup and output
/// errors abort the suite.
pub fn run_suite(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SuiteReport, SuiteError> {
    let ctx = SuiteContext::build(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|source| SuiteError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let n = cfg.algorithms.len();
    let results: Vec<Mutex<Option<Result<VariantOutcome, VariantFailure>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = thread_cap().min(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = run_variant(cfg, &ctx, &cfg.algorithms[i], out_dir);
                *results[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for slot in results {
        match slot.into_inner().unwrap().expect("worker filled every slot") {
            Ok(outcome) => outcomes.push(outcome),
            Err(failure) => failures.push(failure),
        }
    }

    let mut plots = Vec::new();
    if cfg.output.svg && !outcomes.is_empty() {
        let series: Vec<(&str, &Trace)> = outcomes
            .iter()
            .map(|o| (o.name.as_str(), &o.trace))
            .collect();
        let mut jobs = vec![
            ("gap.svg", crate::svg::XAxis::GradRounds, crate::svg::YAxis::ObjectiveGap),
            (
                "consensus.svg",
                crate::svg::XAxis::CommRounds,
                crate::svg::YAxis::ConsensusViolation,
            ),
        ];
        let any_rho = outcomes
            .iter()
            .any(|o| o.trace.records.iter().any(|r| r.rho.is_some()));
        if any_rho {
            jobs.push(("rho.svg", crate::svg::XAxis::GradRounds, crate::svg::YAxis::Rho));
        }
        for (file, x, y) in jobs {
            let path = out_dir.join(file);
            crate::svg::emit_svg(&series, x, y, &path).map_err(|source| SuiteError::Io {
                path: path.clone(),
                source,
            })?;
            plots.push(path);
        }
    }

    Ok(SuiteReport {
        outcomes,
        failures,
        plots,
    })
}

enum RunError {
    Extra(ExtraError),
    Catalyst(CatalystError),
    Io(PathBuf, std::io::Error),
}

impl RunError {
    fn diverged(&self) -> bool {
        matches!(
            self,
            RunError::Extra(ExtraError::Divergence { .. })
                | RunError::Catalyst(CatalystError::InnerDivergence { .. })
                | RunError::Catalyst(CatalystError::Inner(ExtraError::Divergence { .. }))
        )
    }

    fn message(&self) -> String {
        match self {
            RunError::Extra(e) => e.to_string(),
            RunError::Catalyst(e) => e.to_string(),
            RunError::Io(path, e) => format!("cannot write {}: {e}", path.display()),
        }
    }
}

impl From<ExtraError> for RunError {
    fn from(e: ExtraError) -> Self {
        RunError::Extra(e)
    }
}

impl From<CatalystError> for RunError {
    fn from(e: CatalystError) -> Self {
        RunError::Catalyst(e)
    }
}

impl From<ScheduleConfig> for TkSchedule {
    fn from(s: ScheduleConfig) -> Self {
        match s {
            ScheduleConfig::Experimental => TkSchedule::Experimental,
            ScheduleConfig::TheoremForm => TkSchedule::TheoremForm,
            ScheduleConfig::Fixed(t) => TkSchedule::Fixed(t),
        }
    }
}

/// The fingerprint covers exactly the inputs that determine the numbers:
/// problem, graph, the variant's own spec, and the budget. Output paths
/// are excluded so re-running into a different directory stays
/// byte-identical.
fn variant_fingerprint(cfg: &ExperimentConfig, spec: &AlgorithmSpec) -> String {
    // serialization of these plain structs cannot fail
    fingerprint(&[
        ("problem", serde_json::to_string(&cfg.problem).unwrap()),
        ("graph", serde_json::to_string(&cfg.graph).unwrap()),
        ("algorithm", serde_json::to_string(spec).unwrap()),
        ("budget", serde_json::to_string(&cfg.budget).unwrap()),
    ])
}

fn run_variant(
    cfg: &ExperimentConfig,
    ctx: &SuiteContext,
    spec: &AlgorithmSpec,
    out_dir: &Path,
) -> Result<VariantOutcome, VariantFailure> {
    let name = spec.name.to_string();
    execute_variant(cfg, ctx, spec, out_dir).map_err(|e| VariantFailure {
        name: name.clone(),
        message: format!("{name}: {}", e.message()),
        diverged: e.diverged(),
    })
}

fn execute_variant(
    cfg: &ExperimentConfig,
    ctx: &SuiteContext,
    spec: &AlgorithmSpec,
    out_dir: &Path,
) -> Result<VariantOutcome, RunError> {
    let inst = &ctx.instance;
    let w = &ctx.weights;
    let b = &cfg.budget;
    let budget = Budget {
        max_grad_rounds: Some(b.max_grad_rounds),
        max_comm_rounds: Some(b.max_comm_rounds),
        target_gap: Some(b.target_gap),
    };
    let x0 = DMatrix::zeros(inst.agents(), inst.dim());
    let v0 = DMatrix::zeros(inst.agents(), inst.dim());
    let o = &spec.overrides;

    let mut recorder = TraceRecorder::new(
        inst,
        ctx.reference.f_star(),
        variant_fingerprint(cfg, spec),
        budget,
    );

    match spec.name {
        AlgorithmName::ExtraSc | AlgorithmName::ExtraNsc | AlgorithmName::ExtraOriginal => {
            let preset = match spec.name {
                AlgorithmName::ExtraSc => preset_strongly_convex(inst, w)?,
                AlgorithmName::ExtraNsc => preset_nonstrongly_convex(inst, w)?,
                _ => preset_original(inst)?,
            };
            let run_cfg = ExtraConfig::new(
                o.alpha.unwrap_or(preset.alpha),
                o.beta.unwrap_or(preset.beta),
            )?
            .with_window(preset.window)?
            .with_k_max(b.max_grad_rounds);
            recorder = recorder.with_lyapunov(LyapunovOracle::new(
                &ctx.reference,
                &ctx.operators,
                inst.smoothness(),
                run_cfg.beta,
            ));
            recorder.record_initial(&x0, &v0);
            let mut counters = CostCounters::default();
            run_extra(
                inst,
                w,
                &run_cfg,
                ExtraState::new(x0),
                &mut counters,
                &mut recorder,
            )?;
        }
        AlgorithmName::ExtraTwoStage => {
            let eps = o.epsilon.unwrap_or(1e-4);
            let sizing = match (o.r1_hat, o.r2_hat) {
                (Some(r1), Some(r2)) => TwoStageSizing::new(r1, r2)?,
                _ => TwoStageSizing::heuristic(inst, &x0),
            };
            recorder.record_initial(&x0, &v0);
            let mut counters = CostCounters::default();
            run_two_stage_regularized(inst, w, eps, &sizing, x0, &mut counters, &mut recorder)?;
        }
        AlgorithmName::AccExtra => {
            let tau = match o.tau {
                Some(t) => t,
                None => default_tau(
                    inst.smoothness(),
                    inst.strong_convexity(),
                    w.second_largest_eigenvalue(),
                )?,
            };
            let schedule = o
                .t_schedule
                .map(TkSchedule::from)
                .unwrap_or(TkSchedule::Experimental);
            let mut acc_cfg = CatalystConfig::new(tau, schedule, b.max_grad_rounds)?;
            if let Some(xi) = o.xi {
                acc_cfg = acc_cfg.with_xi(xi)?;
            }
            recorder.record_initial(&x0, &v0);
            let mut counters = CostCounters::default();
            run_acc_extra(inst, w, &acc_cfg, x0, &mut counters, &mut recorder)?;
        }
    }

    let trace = recorder.into_trace();
    let csv_path = out_dir.join(format!("{}.csv", spec.name));
    std::fs::write(&csv_path, trace.to_csv()).map_err(|e| RunError::Io(csv_path.clone(), e))?;
    Ok(VariantOutcome {
        name: spec.name.to_string(),
        trace,
        csv_path,
    })
}
