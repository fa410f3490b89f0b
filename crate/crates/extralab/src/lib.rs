//! Decentralized smooth convex optimization over undirected gossip networks.
//!
//! The crate provides the pieces needed to benchmark consensus-based
//! first-order methods at desk scale:
//!
//! * [`topology`]: graph generation, Metropolis mixing weights, and the
//!   spectral operators built from a weight matrix.
//! * [`objective`]: per-agent smooth objectives, the synthetic least-squares
//!   family, and high-accuracy reference solutions.
//! * [`extra`]: the EXTRA iteration in primal-dual form, its parameter
//!   presets, and the two-stage regularized variant for problems without
//!   strong convexity.
//! * [`catalyst`]: outer-loop acceleration wrapping EXTRA in inexact
//!   proximal-point steps with extrapolation.
//! * [`metrics`]: convergence diagnostics, rate-bound oracles, and CSV
//!   trace emission.
//!
//! All array work is dense `f64` via [`nalgebra`]; iterates live in m-by-n
//! matrices whose i-th row is agent i's local vector.

pub mod catalyst;
pub mod extra;
pub mod metrics;
pub mod objective;
pub mod topology;

pub use catalyst::{
    run_acc_extra, AccExtraOutput, CatalystConfig, CatalystError, ThetaSequence, TkSchedule,
};
pub use extra::{
    preset_nonstrongly_convex, preset_original, preset_strongly_convex,
    preset_strongly_convex_practical, run_extra, run_two_stage_regularized, AverageWindow,
    CostCounters, ExtraConfig, ExtraError, ExtraOutput, ExtraState, Mixing, Quiet, StepInfo,
    StepObserver, TwoStageOutput, TwoStagePlan, TwoStageSizing,
};
pub use metrics::{
    consensus_violation, objective_gap, Budget, IterationRecord, LyapunovOracle, MetricsError,
    RateConstants, Trace, TraceRecorder,
};
pub use objective::{LeastSquares, ObjectiveError, ReferenceSolution, SmoothObjective};
pub use topology::{
    gen_erdos_renyi, gen_geometric, gen_line, gen_ring, ConsensusOperators, Graph, TopologyError,
    WeightMatrix,
};
