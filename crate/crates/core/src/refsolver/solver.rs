//! Chorin projection on a staggered (MAC) grid: explicit upwind advection
//! (van Leer limited, second order away from extrema) and explicit
//! diffusion for u, v and T, then a pressure Poisson solve by
//! Jacobi-preconditioned conjugate gradients.
//!
//! u lives on vertical faces (`(nx + 1) × ny`), v on horizontal faces
//! (`nx × (ny + 1)`), T and the pressure potential at cell centers. A face
//! carries an unknown only when both adjacent cells are interior; every
//! other face is a wall with zero normal velocity.

use crate::error::{Error, Result};
use crate::physics::NondimParams;

use super::grid::MaskedGrid;
use super::FieldSnapshot;

/// Boundary data and linear-solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConditions {
    /// Tangential velocity of the lid (u* = 1 for the Argon shear).
    pub lid_velocity: f64,
    pub lid_temperature: f64,
    pub wall_temperature: f64,
}

impl Default for BoundaryConditions {
    fn default() -> Self {
        BoundaryConditions { lid_velocity: 1.0, lid_temperature: 1.0, wall_temperature: 0.0 }
    }
}

/// Full solver state, including the staggered velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t_star: f64,
    pub steps: u64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Cell-centered temperature over the whole `nx × ny` box (zero outside).
    pub temp: Vec<f64>,
    /// Pressure potential per interior cell from the last projection (`p = phi / dt`).
    pub phi: Vec<f64>,
    pub last_dt: f64,
    /// Max-norm of the discrete divergence after the last projection.
    pub divergence: f64,
    /// CG iterations used by the last projection.
    pub cg_iterations: usize,
}

pub struct Solver {
    grid: MaskedGrid,
    nd: NondimParams,
    bc: BoundaryConditions,
    u_active: Vec<bool>,
    v_active: Vec<bool>,
    /// Interior neighbour slots per interior cell (E, W, N, S), `usize::MAX` if none.
    nbr: Vec<[usize; 4]>,
    cg_tol: f64,
    cg_max_iter: usize,
}

const NONE: usize = usize::MAX;

impl Solver {
    pub fn new(grid: MaskedGrid, nd: NondimParams, bc: BoundaryConditions) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut u_active = vec![false; (nx + 1) * ny];
        for j in 0..ny {
            for i in 0..=nx {
                u_active[j * (nx + 1) + i] =
                    grid.is_interior(i as i64 - 1, j as i64) && grid.is_interior(i as i64, j as i64);
            }
        }
        let mut v_active = vec![false; nx * (ny + 1)];
        for j in 0..=ny {
            for i in 0..nx {
                v_active[j * nx + i] =
                    grid.is_interior(i as i64, j as i64 - 1) && grid.is_interior(i as i64, j as i64);
            }
        }
        let nbr = grid
            .interior_cells()
            .iter()
            .map(|&c| {
                let (i, j) = ((c % nx) as i64, (c / nx) as i64);
                let s = |ii: i64, jj: i64| {
                    if grid.is_interior(ii, jj) {
                        grid.slot(ii as usize, jj as usize).unwrap()
                    } else {
                        NONE
                    }
                };
                [s(i + 1, j), s(i - 1, j), s(i, j + 1), s(i, j - 1)]
            })
            .collect();
        let cg_max_iter = 20 * grid.interior_count() + 100;
        Solver { grid, nd, bc, u_active, v_active, nbr, cg_tol: 1e-10, cg_max_iter }
    }

    pub fn grid(&self) -> &MaskedGrid {
        &self.grid
    }

    pub fn nd(&self) -> &NondimParams {
        &self.nd
    }

    pub fn boundary(&self) -> &BoundaryConditions {
        &self.bc
    }

    /// Rest state, interior temperature zero.
    pub fn initial_state(&self) -> SolverState {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        SolverState {
            t_star: 0.0,
            steps: 0,
            u: vec![0.0; (nx + 1) * ny],
            v: vec![0.0; nx * (ny + 1)],
            temp: vec![0.0; nx * ny],
            phi: vec![0.0; self.grid.interior_count()],
            last_dt: 0.0,
            divergence: 0.0,
            cg_iterations: 0,
        }
    }

    pub fn max_speed(&self, state: &SolverState) -> f64 {
        state
            .u
            .iter()
            .chain(&state.v)
            .fold(self.bc.lid_velocity.abs(), |m, x| m.max(x.abs()))
    }

    /// dt ≤ min(0.5 h / |u|max, 0.25 h² min(Re, Pe))
    pub fn stable_dt(&self, max_speed: f64) -> f64 {
        let h = self.grid.h;
        let diff = 0.25 * h * h * self.nd.re.min(self.nd.pe);
        if max_speed > 0.0 {
            diff.min(0.5 * h / max_speed)
        } else {
            diff
        }
    }

    /// One projection step, returning the new state.
    pub fn step(&self, state: &SolverState, dt: f64) -> Result<SolverState> {
        let mut next = state.clone();
        self.advance(&mut next, dt, &mut Scratch::default())?;
        Ok(next)
    }

    pub(crate) fn advance(&self, s: &mut SolverState, dt: f64, w: &mut Scratch) -> Result<()> {
        let bound = self.stable_dt(self.max_speed(s));
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::StepSize { dt, bound });
        }
        let g = &self.grid;
        let (nx, ny, h) = (g.nx, g.ny, g.h);
        let inv_h = 1.0 / h;
        let inv_h2 = inv_h * inv_h;
        let nu = 1.0 / self.nd.re;
        let kappa = 1.0 / self.nd.pe;
        let su = nx + 1;
        let (u, v) = (&s.u, &s.v);

        let lid = self.bc.lid_velocity;
        let u_at = |i: i64, j: i64| -> Option<f64> {
            if i < 0 || j < 0 || i > nx as i64 || j >= ny as i64 {
                return None;
            }
            let k = j as usize * su + i as usize;
            self.u_active[k].then(|| u[k])
        };
        let v_at = |i: i64, j: i64| -> Option<f64> {
            if i < 0 || j < 0 || i >= nx as i64 || j > ny as i64 {
                return None;
            }
            let k = j as usize * nx + i as usize;
            self.v_active[k].then(|| v[k])
        };
        // tangential wall speed seen from a u row: the lid above the top row
        let u_wall = |j: i64| if j == ny as i64 { lid } else { 0.0 };

        // momentum predictor
        w.u_star.clear();
        w.u_star.extend_from_slice(u);
        for j in 0..ny {
            for i in 1..nx {
                let k = j * su + i;
                if !self.u_active[k] {
                    continue;
                }
                let (ii, jj) = (i as i64, j as i64);
                let uc = u[k];
                // normal direction: inactive faces are walls with u = 0
                let along_x = |d: i64| {
                    let near = u_at(ii + d, jj);
                    let far = near.and(u_at(ii + 2 * d, jj)).unwrap_or(0.0);
                    (near.unwrap_or(0.0), far)
                };
                // tangential direction: mirror ghosts through the wall
                let along_y = |d: i64| match u_at(ii, jj + d) {
                    Some(near) => (near, u_at(ii, jj + 2 * d).unwrap_or(2.0 * u_wall(jj + 2 * d) - near)),
                    None => {
                        let ghost = 2.0 * u_wall(jj + d) - uc;
                        (ghost, ghost)
                    }
                };
                let ((ue, uee), (uw, uww)) = (along_x(1), along_x(-1));
                let ((un, unn), (us, uss)) = (along_y(1), along_y(-1));
                let vb = 0.25
                    * (v[j * nx + i - 1] + v[j * nx + i] + v[(j + 1) * nx + i - 1] + v[(j + 1) * nx + i]);
                let adv = uc * upwind_slope(uc, [uww, uw, uc, ue, uee]) + vb * upwind_slope(vb, [uss, us, uc, un, unn]);
                let lap = (ue + uw + un + us - 4.0 * uc) * inv_h2;
                w.u_star[k] = uc + dt * (nu * lap - adv * inv_h);
            }
        }
        w.v_star.clear();
        w.v_star.extend_from_slice(v);
        for j in 1..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if !self.v_active[k] {
                    continue;
                }
                let (ii, jj) = (i as i64, j as i64);
                let vc = v[k];
                let along_y = |d: i64| {
                    let near = v_at(ii, jj + d);
                    let far = near.and(v_at(ii, jj + 2 * d)).unwrap_or(0.0);
                    (near.unwrap_or(0.0), far)
                };
                let along_x = |d: i64| match v_at(ii + d, jj) {
                    Some(near) => (near, v_at(ii + 2 * d, jj).unwrap_or(-near)),
                    None => (-vc, -vc),
                };
                let ((vn, vnn), (vs, vss)) = (along_y(1), along_y(-1));
                let ((ve, vee), (vw, vww)) = (along_x(1), along_x(-1));
                let ub = 0.25
                    * (u[(j - 1) * su + i] + u[(j - 1) * su + i + 1] + u[j * su + i] + u[j * su + i + 1]);
                let adv = ub * upwind_slope(ub, [vww, vw, vc, ve, vee]) + vc * upwind_slope(vc, [vss, vs, vc, vn, vnn]);
                let lap = (ve + vw + vn + vs - 4.0 * vc) * inv_h2;
                w.v_star[k] = vc + dt * (nu * lap - adv * inv_h);
            }
        }

        // temperature: conservative limited upwind fluxes with the old velocities
        w.t_new.clear();
        w.t_new.extend_from_slice(&s.temp);
        let temp = &s.temp;
        let t_wall = |j: i64| if j == ny as i64 { self.bc.lid_temperature } else { self.bc.wall_temperature };
        let t_at = |i: i64, j: i64| g.is_interior(i, j).then(|| temp[j as usize * nx + i as usize]);
        // value beyond `from` at (i, j): interior cell or a ghost mirrored through the wall
        let t_or_ghost = |i: i64, j: i64, from: f64| t_at(i, j).unwrap_or(2.0 * t_wall(j) - from);
        // face value between cells a (upwind) and b (downwind), `back` one further upwind
        let face = |back: f64, a: f64, b: f64| a + 0.5 * van_leer(a - back, b - a);
        for &c in g.interior_cells() {
            let (i, j) = (c % nx, c / nx);
            let (ii, jj) = (i as i64, j as i64);
            let tc = temp[c];
            let te = t_or_ghost(ii + 1, jj, tc);
            let tw = t_or_ghost(ii - 1, jj, tc);
            let tn = t_or_ghost(ii, jj + 1, tc);
            let ts = t_or_ghost(ii, jj - 1, tc);
            // flux in the +axis direction through a face with velocity `vel`,
            // cells `m` (minus side) and `p` (plus side) and their outer neighbours
            let flux = |vel: f64, mm: f64, m: f64, p: f64, pp: f64| {
                if vel > 0.0 {
                    vel * face(mm, m, p)
                } else if vel < 0.0 {
                    vel * face(pp, p, m)
                } else {
                    0.0
                }
            };
            let fe = u[j * su + i + 1];
            let fw = u[j * su + i];
            let fn_ = v[(j + 1) * nx + i];
            let fs = v[j * nx + i];
            // a face carries velocity only between two interior cells
            let div_flux = flux(fe, tw, tc, te, if fe < 0.0 { t_or_ghost(ii + 2, jj, te) } else { 0.0 })
                - flux(fw, if fw > 0.0 { t_or_ghost(ii - 2, jj, tw) } else { 0.0 }, tw, tc, te)
                + flux(fn_, ts, tc, tn, if fn_ < 0.0 { t_or_ghost(ii, jj + 2, tn) } else { 0.0 })
                - flux(fs, if fs > 0.0 { t_or_ghost(ii, jj - 2, ts) } else { 0.0 }, ts, tc, tn);
            let lap = (te + tw + tn + ts - 4.0 * tc) * inv_h2;
            w.t_new[c] = tc + dt * (kappa * lap - div_flux * inv_h);
        }

        // projection
        let n_int = g.interior_count();
        w.rhs.resize(n_int, 0.0);
        for (slot, &c) in g.interior_cells().iter().enumerate() {
            let (i, j) = (c % nx, c / nx);
            let div = w.u_star[j * su + i + 1] - w.u_star[j * su + i] + w.v_star[(j + 1) * nx + i]
                - w.v_star[j * nx + i];
            // A phi = -h² div with A the positive semi-definite (negated) Laplacian scaled by h²
            w.rhs[slot] = -h * div;
        }
        let mean = w.rhs.iter().sum::<f64>() / n_int as f64;
        for r in &mut w.rhs {
            *r -= mean;
        }
        // warm start from the previous potential, rescaled for dt changes
        let mut phi = std::mem::take(&mut s.phi);
        if s.last_dt > 0.0 && s.last_dt != dt {
            let r = dt / s.last_dt;
            phi.iter_mut().for_each(|p| *p *= r);
        }
        let iters = self.pcg(&mut phi, w, self.cg_tol * h * h)?;

        for j in 0..ny {
            for i in 1..nx {
                let k = j * su + i;
                if self.u_active[k] {
                    let (a, b) = (g.slot(i - 1, j).unwrap(), g.slot(i, j).unwrap());
                    w.u_star[k] -= (phi[b] - phi[a]) * inv_h;
                }
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if self.v_active[k] {
                    let (a, b) = (g.slot(i, j - 1).unwrap(), g.slot(i, j).unwrap());
                    w.v_star[k] -= (phi[b] - phi[a]) * inv_h;
                }
            }
        }
        std::mem::swap(&mut s.u, &mut w.u_star);
        std::mem::swap(&mut s.v, &mut w.v_star);
        std::mem::swap(&mut s.temp, &mut w.t_new);
        s.phi = phi;
        s.last_dt = dt;
        s.cg_iterations = iters;
        s.divergence = self.divergence_max(s);
        s.t_star += dt;
        s.steps += 1;
        Ok(())
    }

    /// Applies the scaled operator: (A x)_c = Σ_nb (x_c - x_nb).
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (slot, nb) in self.nbr.iter().enumerate() {
            let xc = x[slot];
            let mut acc = 0.0;
            for &o in nb {
                if o != NONE {
                    acc += xc - x[o];
                }
            }
            out[slot] = acc;
        }
    }

    fn pcg(&self, x: &mut [f64], w: &mut Scratch, tol: f64) -> Result<usize> {
        let n = x.len();
        let b = &w.rhs;
        w.r.resize(n, 0.0);
        w.z.resize(n, 0.0);
        w.p.resize(n, 0.0);
        w.ap.resize(n, 0.0);
        self.apply(x, &mut w.ap);
        for k in 0..n {
            w.r[k] = b[k] - w.ap[k];
        }
        let inf = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if inf(&w.r) <= tol {
            return Ok(0);
        }
        let diag: Vec<f64> =
            self.nbr.iter().map(|nb| nb.iter().filter(|&&o| o != NONE).count() as f64).collect();
        for k in 0..n {
            w.z[k] = w.r[k] / diag[k];
        }
        w.p.copy_from_slice(&w.z);
        let mut rz: f64 = w.r.iter().zip(&w.z).map(|(a, b)| a * b).sum();
        for it in 1..=self.cg_max_iter {
            self.apply(&w.p, &mut w.ap);
            let pap: f64 = w.p.iter().zip(&w.ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * w.p[k];
                w.r[k] -= alpha * w.ap[k];
            }
            if inf(&w.r) <= tol {
                // confirm against the true residual
                self.apply(x, &mut w.ap);
                let true_res = (0..n).fold(0.0f64, |m, k| m.max((b[k] - w.ap[k]).abs()));
                if true_res <= tol * 10.0 {
                    return Ok(it);
                }
                for k in 0..n {
                    w.r[k] = b[k] - w.ap[k];
                }
            }
            for k in 0..n {
                w.z[k] = w.r[k] / diag[k];
            }
            let rz_new: f64 = w.r.iter().zip(&w.z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                w.p[k] = w.z[k] + beta * w.p[k];
            }
        }
        Err(Error::Solver { residual: inf(&w.r), iterations: self.cg_max_iter })
    }

    /// Max-norm of the MAC divergence over interior cells.
    pub fn divergence_max(&self, s: &SolverState) -> f64 {
        let g = &self.grid;
        let (nx, su) = (g.nx, g.nx + 1);
        g.interior_cells()
            .iter()
            .map(|&c| {
                let (i, j) = (c % nx, c / nx);
                ((s.u[j * su + i + 1] - s.u[j * su + i] + s.v[(j + 1) * nx + i] - s.v[j * nx + i])
                    / g.h)
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest per-unit-time change between two states.
    pub fn change_rate(&self, a: &SolverState, b: &SolverState, dt: f64) -> f64 {
        let m = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        m(&a.u, &b.u).max(m(&a.v, &b.v)).max(m(&a.temp, &b.temp)) / dt
    }

    /// u on the vertical faces at x* = 0, bottom to top, for rows whose
    /// face is active. Returns `(y*, u)` pairs.
    pub fn centerline_u(&self, s: &SolverState) -> Vec<(f64, f64)> {
        let g = &self.grid;
        let i = g.nx / 2;
        (0..g.ny)
            .filter(|&j| self.u_active[j * (g.nx + 1) + i])
            .map(|j| (g.y0 + (j as f64 + 0.5) * g.h, s.u[j * (g.nx + 1) + i]))
            .collect()
    }

    /// Cell-centered export of `s` with zero-mean pressure.
    pub fn snapshot(&self, s: &SolverState) -> FieldSnapshot {
        let g = &self.grid;
        let (nx, su) = (g.nx, g.nx + 1);
        let n = g.interior_count();
        let mut snap = FieldSnapshot {
            t_star: s.t_star,
            u: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            temp: Vec::with_capacity(n),
        };
        let scale = if s.last_dt > 0.0 { 1.0 / s.last_dt } else { 0.0 };
        for (slot, &c) in g.interior_cells().iter().enumerate() {
            let (i, j) = (c % nx, c / nx);
            snap.u.push(0.5 * (s.u[j * su + i] + s.u[j * su + i + 1]));
            snap.v.push(0.5 * (s.v[j * nx + i] + s.v[(j + 1) * nx + i]));
            snap.p.push(s.phi[slot] * scale);
            snap.temp.push(s.temp[c]);
        }
        let mean = snap.p.iter().sum::<f64>() / n as f64;
        snap.p.iter_mut().for_each(|p| *p -= mean);
        snap
    }
}

/// Van Leer limited slope: harmonic mean of same-signed differences, else 0.
fn van_leer(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// h · ∂q/∂x at the middle of `q = [q₋₂, q₋₁, q₀, q₁, q₂]` from limited
/// upwind face reconstructions, upwind side chosen by the sign of `a`.
fn upwind_slope(a: f64, q: [f64; 5]) -> f64 {
    let d = [q[1] - q[0], q[2] - q[1], q[3] - q[2], q[4] - q[3]];
    if a > 0.0 {
        (q[2] + 0.5 * van_leer(d[1], d[2])) - (q[1] + 0.5 * van_leer(d[0], d[1]))
    } else {
        (q[3] - 0.5 * van_leer(d[3], d[2])) - (q[2] - 0.5 * van_leer(d[2], d[1]))
    }
}

#[derive(Debug, Default)]
pub(crate) struct Scratch {
    u_star: Vec<f64>,
    v_star: Vec<f64>,
    t_new: Vec<f64>,
    rhs: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
}
