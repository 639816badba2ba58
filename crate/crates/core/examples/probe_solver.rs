use meltpinn_core::physics::NondimParams;
use meltpinn_core::refsolver::*;
use std::time::Instant;
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args[1].parse().unwrap();
    let re: f64 = args[2].parse().unwrap();
    let pe: f64 = args[3].parse().unwrap();
    let s = Solver::new(MaskedGrid::half_disk(n).unwrap(), NondimParams::new(re, pe).unwrap(), BoundaryConditions::default());
    let t = Instant::now();
    let run = s.run_until_steady(&RunConfig::default()).unwrap();
    println!("n={n} steps={} dt={:.3e} t*={:.3} div={:.2e} T=({:.3e},{:.6}) cg={} secs={:.1}",
        run.steps, run.dt, run.state.t_star, run.max_divergence, run.temp_range.0, run.temp_range.1, run.state.cg_iterations, t.elapsed().as_secs_f64());
}
