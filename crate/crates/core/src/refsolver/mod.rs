//! Reference CFD solver producing the ground-truth melt-pool fields.
//!
//! Nondimensional incompressible Navier-Stokes with a passive temperature
//! on a staircase-masked half disk: lid at y* = 0 moving with u* = 1 at
//! T* = 1, no-slip curved wall at T* = 0, start from rest with T* = 0.

mod grid;
mod io;
mod solver;

pub use grid::{CellKind, Domain, MaskedGrid, MIN_RESOLUTION};
pub use io::{SnapshotHeader, SnapshotSet, SNAPSHOT_FORMAT_VERSION};
pub use solver::{BoundaryConditions, Solver, SolverState};

use crate::error::{Error, Result};
use crate::physics::NondimParams;

/// Cell-centered fields at one instant, over interior cells in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub t_star: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Zero mean over interior cells.
    pub p: Vec<f64>,
    pub temp: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    /// Fraction of the stability bound used as the fixed time step.
    pub dt_factor: f64,
    /// Steady once max(|Δu|, |Δv|, |ΔT|) / dt falls to this.
    pub steady_tol: f64,
    pub max_steps: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { dt_factor: 0.4, steady_tol: 1e-4, max_steps: 5_000_000 }
    }
}

/// Result of integrating to steady state.
#[derive(Debug, Clone)]
pub struct SteadyRun {
    pub state: SolverState,
    pub dt: f64,
    pub steps: u64,
    /// Change rate sampled every 100 steps.
    pub rate_history: Vec<f64>,
    /// Largest divergence max-norm seen after any projection.
    pub max_divergence: f64,
    /// Temperature range over the whole run.
    pub temp_range: (f64, f64),
}

impl Solver {
    /// Fixed time step used by the steady runs: the stability bound at
    /// unit speed, scaled by `dt_factor`.
    pub fn run_dt(&self, cfg: &RunConfig) -> f64 {
        cfg.dt_factor * self.stable_dt(self.boundary().lid_velocity.abs().max(1.0))
    }

    /// Integrates from rest until the steadiness criterion holds.
    pub fn run_until_steady(&self, cfg: &RunConfig) -> Result<SteadyRun> {
        self.run_inner(cfg, self.run_dt(cfg), None, |_, _| {})
    }

    fn run_inner(
        &self,
        cfg: &RunConfig,
        dt: f64,
        stop_at: Option<u64>,
        mut on_step: impl FnMut(u64, &SolverState),
    ) -> Result<SteadyRun> {
        let mut state = self.initial_state();
        let mut prev = state.clone();
        let mut scratch = solver::Scratch::default();
        let mut history = Vec::new();
        let mut max_div = 0.0f64;
        let mut trange = (f64::INFINITY, f64::NEG_INFINITY);
        on_step(0, &state);
        loop {
            prev.clone_from(&state);
            self.advance(&mut state, dt, &mut scratch)?;
            max_div = max_div.max(state.divergence);
            for &c in self.grid().interior_cells() {
                trange.0 = trange.0.min(state.temp[c]);
                trange.1 = trange.1.max(state.temp[c]);
            }
            on_step(state.steps, &state);
            let rate = self.change_rate(&state, &prev, dt);
            if state.steps % 100 == 0 {
                history.push(rate);
            }
            if !rate.is_finite() {
                return Err(Error::Divergence { steps: state.steps as usize, last_rate: rate, history });
            }
            let done = match stop_at {
                Some(k) => state.steps >= k,
                None => rate <= cfg.steady_tol,
            };
            if done {
                let steps = state.steps;
                return Ok(SteadyRun {
                    state,
                    dt,
                    steps,
                    rate_history: history,
                    max_divergence: max_div,
                    temp_range: trange,
                });
            }
            if state.steps >= cfg.max_steps {
                return Err(Error::Divergence {
                    steps: state.steps as usize,
                    last_rate: rate,
                    history,
                });
            }
        }
    }

    /// Integrates to steady state, then replays the (deterministic) run to
    /// emit `snapshot_count` snapshots evenly spaced from t* = 0 to the
    /// steady time, the last one steady.
    pub fn run_to_steady_with(
        &self,
        snapshot_count: usize,
        cfg: &RunConfig,
    ) -> Result<(Vec<FieldSnapshot>, SteadyRun)> {
        if snapshot_count < 2 {
            return Err(Error::Usage("need at least two snapshots".into()));
        }
        let first = self.run_until_steady(cfg)?;
        let total = first.steps;
        let targets: Vec<u64> = (0..snapshot_count)
            .map(|k| ((k as f64) * total as f64 / (snapshot_count - 1) as f64).round() as u64)
            .collect();
        let mut snaps = Vec::with_capacity(snapshot_count);
        let mut next = 0;
        let replay = self.run_inner(cfg, first.dt, Some(total), |step, state| {
            while next < targets.len() && targets[next] == step {
                snaps.push(self.snapshot(state));
                next += 1;
            }
        })?;
        debug_assert_eq!(replay.state, first.state);
        Ok((snaps, first))
    }
}

/// Ground truth on the half disk: `snapshot_count` snapshots from rest to steady state.
pub fn run_to_steady(
    grid: MaskedGrid,
    nd: NondimParams,
    snapshot_count: usize,
) -> Result<SnapshotSet> {
    let solver = Solver::new(grid.clone(), nd, BoundaryConditions::default());
    let (snaps, run) = solver.run_to_steady_with(snapshot_count, &RunConfig::default())?;
    Ok(SnapshotSet::new(&grid, nd, run.dt, run.steps, snaps))
}

/// Profiles and observed order from the square-cavity convergence check.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub resolutions: Vec<usize>,
    /// Centerline u sampled at the coarsest grid's cell-center heights.
    pub profiles: Vec<Vec<f64>>,
    /// Euclidean-norm differences between consecutive resolutions.
    pub differences: Vec<f64>,
    /// Richardson orders log2(d_k / d_{k+1}), one per consecutive triple.
    pub orders: Vec<f64>,
    pub steps: Vec<u64>,
    pub max_divergence: f64,
}

/// Centerline u (x* = 0) of a steady state, averaged onto the heights of
/// `coarse` cell centers. Requires `fine.n` to be a multiple of `coarse_n`.
pub fn centerline_on_coarse(solver: &Solver, state: &SolverState, coarse_n: usize) -> Vec<f64> {
    let g = solver.grid();
    let ratio = g.n / coarse_n;
    let line = solver.centerline_u(state);
    let ny_fine = g.ny;
    let ny_coarse = ny_fine / ratio;
    let by_row: std::collections::HashMap<usize, f64> = line
        .iter()
        .map(|&(y, u)| (((y - g.y0) / g.h - 0.5).round() as usize, u))
        .collect();
    (0..ny_coarse)
        .filter_map(|jc| {
            // coarse center = midpoint of fine rows ratio*jc + ratio/2 - 1 and ratio*jc + ratio/2
            if ratio == 1 {
                return by_row.get(&jc).copied();
            }
            let a = by_row.get(&(ratio * jc + ratio / 2 - 1))?;
            let b = by_row.get(&(ratio * jc + ratio / 2))?;
            Some(0.5 * (a + b))
        })
        .collect()
}

/// Lid-driven square cavity at Re = 100 on each resolution; observed
/// convergence order of the vertical-centerline u profile.
pub fn cavity_selfcheck(resolutions: &[usize], cfg: &RunConfig) -> Result<ConvergenceReport> {
    if resolutions.len() < 3 {
        return Err(Error::Usage("cavity self-check needs at least three resolutions".into()));
    }
    let coarse = resolutions[0];
    let nd = NondimParams::new(100.0, 100.0)?;
    let mut profiles = Vec::new();
    let mut steps = Vec::new();
    let mut max_div = 0.0f64;
    for &n in resolutions {
        if n % coarse != 0 {
            return Err(Error::Usage(format!("resolution {n} is not a multiple of {coarse}")));
        }
        let solver = Solver::new(MaskedGrid::square_cavity(n)?, nd, BoundaryConditions::default());
        let run = solver.run_until_steady(cfg)?;
        max_div = max_div.max(run.max_divergence);
        profiles.push(centerline_on_coarse(&solver, &run.state, coarse));
        steps.push(run.steps);
    }
    let differences: Vec<f64> = profiles
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    let orders = differences
        .windows(2)
        .zip(resolutions.windows(3))
        .map(|(d, r)| (d[0] / d[1]).ln() / ((r[1] as f64 / r[0] as f64).ln()))
        .collect();
    Ok(ConvergenceReport {
        resolutions: resolutions.to_vec(),
        profiles,
        differences,
        orders,
        steps,
        max_divergence: max_div,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver(n: usize, re: f64, pe: f64, bc: BoundaryConditions) -> Solver {
        Solver::new(MaskedGrid::half_disk(n).unwrap(), NondimParams::new(re, pe).unwrap(), bc)
    }

    #[test]
    fn zero_forcing_is_a_fixed_point() {
        let bc = BoundaryConditions { lid_velocity: 0.0, lid_temperature: 0.3, wall_temperature: 0.3 };
        let s = solver(32, 100.0, 20.0, bc);
        let mut st = s.initial_state();
        for &c in s.grid().interior_cells() {
            st.temp[c] = 0.3;
        }
        let dt = 0.5 * s.stable_dt(1.0);
        for _ in 0..20 {
            st = s.step(&st, dt).unwrap();
        }
        assert!(st.u.iter().chain(&st.v).all(|&x| x == 0.0));
        for &c in s.grid().interior_cells() {
            assert!((st.temp[c] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_removes_divergence() {
        let s = solver(32, 100.0, 20.0, BoundaryConditions::default());
        let mut st = s.initial_state();
        let dt = s.run_dt(&RunConfig::default());
        for _ in 0..200 {
            st = s.step(&st, dt).unwrap();
            assert!(st.divergence <= 1e-8, "divergence {}", st.divergence);
            assert!(s.divergence_max(&st) <= 1e-8);
        }
    }

    #[test]
    fn step_size_violation_is_reported() {
        let s = solver(32, 100.0, 20.0, BoundaryConditions::default());
        let st = s.initial_state();
        let bound = s.stable_dt(1.0);
        assert!(matches!(s.step(&st, 1.01 * bound), Err(Error::StepSize { .. })));
        assert!(s.step(&st, -1.0).is_err());
    }

    #[test]
    fn first_step_only_moves_fluid_near_the_lid() {
        // Explicit stencils reach one cell per step. Heat has no pressure
        // coupling, so it stays strictly in the lid row; velocity below the
        // lid row is only the projection's weak return flow.
        let s = solver(48, 100.0, 20.0, BoundaryConditions::default());
        let dt = s.run_dt(&RunConfig::default());
        let st = s.step(&s.initial_state(), dt).unwrap();
        let g = s.grid();
        let su = g.nx + 1;
        let top = g.ny - 1;
        let lid_row_max =
            (0..=g.nx).map(|i| st.u[top * su + i].abs()).fold(0.0, f64::max);
        assert!(lid_row_max > 0.0);
        // return flow from the projection: present everywhere but weak
        for j in 0..top {
            let m = (0..=g.nx).map(|i| st.u[j * su + i].abs()).fold(0.0, f64::max);
            let cap = if j + 4 < top { 0.1 } else { 0.3 };
            assert!(m <= cap * lid_row_max, "row {j}: {m}");
        }
        for &c in g.interior_cells() {
            let j = c / g.nx;
            if j < top {
                assert_eq!(st.temp[c], 0.0, "heat reached row {j}");
            }
        }
    }

    #[test]
    fn short_run_snapshots() {
        let s = solver(16, 20.0, 5.0, BoundaryConditions::default());
        let cfg = RunConfig { steady_tol: 1e-2, ..Default::default() };
        let (snaps, run) = s.run_to_steady_with(14, &cfg).unwrap();
        assert_eq!(snaps.len(), 14);
        assert!(snaps[0].u.iter().chain(&snaps[0].v).all(|&x| x == 0.0));
        assert_eq!(snaps[0].t_star, 0.0);
        assert!((snaps[13].t_star - run.steps as f64 * run.dt).abs() < 1e-9);
        for w in snaps.windows(2) {
            assert!(w[1].t_star > w[0].t_star);
        }
        let last = &snaps[13];
        let mean_p = last.p.iter().sum::<f64>() / last.p.len() as f64;
        assert!(mean_p.abs() < 1e-12);
        assert!(run.max_divergence <= 1e-8);
        assert!(run.temp_range.0 >= -1e-6 && run.temp_range.1 <= 1.0 + 1e-6);
        assert!(s.run_to_steady_with(1, &cfg).is_err());
    }
}
