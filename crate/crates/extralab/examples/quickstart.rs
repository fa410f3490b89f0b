//! Minimal end-to-end run: a ring of ten agents solving a seeded
//! least-squares problem under the linear-rate preset.

use extralab::{
    gen_ring, preset_strongly_convex, run_extra, CostCounters, ExtraState, LeastSquares, Quiet,
    WeightMatrix,
};
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inst = LeastSquares::generate(5, 3, 10, 1e-2, 42)?;
    let w = WeightMatrix::metropolis_lazy(&gen_ring(10)?)?;
    let cfg = preset_strongly_convex(&inst, &w)?.with_k_max(500);
    let x0 = DMatrix::zeros(10, 5);
    let mut counters = CostCounters::default();
    let out = run_extra(&inst, &w, &cfg, ExtraState::new(x0), &mut counters, &mut Quiet)?;
    println!(
        "{} steps, {} gradient rounds, {} communication rounds",
        out.state.steps_completed(),
        counters.grad_rounds,
        counters.comm_rounds
    );
    Ok(())
}
