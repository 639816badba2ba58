//! Composite PINN objective.
//!
//! The free functions evaluate single terms point by point through the
//! scalar network path. [`LossEngine`] evaluates every term and its
//! parameter gradient on the batched path; the two are tested against each
//! other.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CollocationSet;
use crate::difftape::Jet2;
use crate::error::{Error, Result};
use crate::network::batch::{BatchPass, Mode, DT, DX, DXX, DY, DYY, V};
use crate::network::{MlpParams, NetOutputJet, OUTPUTS};
use crate::physics::{residuals_with, Float, NondimParams};

/// Points per evaluation chunk. Chunking is fixed so the reduction order,
/// and therefore every bit of the result, does not depend on thread count.
pub const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    Forward,
    Inverse,
}

/// Which terms enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub mode: LossMode,
    /// Lid and wall terms (forward mode).
    pub boundary: bool,
    /// Temperature data term.
    pub data_t: bool,
}

impl Objective {
    pub fn forward() -> Self {
        Objective { mode: LossMode::Forward, boundary: true, data_t: true }
    }

    pub fn forward_without_bc() -> Self {
        Objective { boundary: false, ..Self::forward() }
    }

    pub fn inverse() -> Self {
        Objective { mode: LossMode::Inverse, boundary: false, data_t: true }
    }

    fn ic_active(&self) -> bool {
        self.mode == LossMode::Forward
    }

    fn bc_active(&self) -> bool {
        self.mode == LossMode::Forward && self.boundary
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_t: f64,
    pub ic_u: f64,
    pub ic_v: f64,
    pub bc_u_top: f64,
    pub bc_v_top: f64,
    pub bc_u_bottom: f64,
    pub bc_v_bottom: f64,
    pub residual: f64,
    pub inverse_data_uv: f64,
    pub total: f64,
}

pub const COMPONENT_NAMES: [&str; 9] = [
    "data_T",
    "ic_u",
    "ic_v",
    "bc_u_top",
    "bc_v_top",
    "bc_u_bottom",
    "bc_v_bottom",
    "residual",
    "inverse_data_uv",
];

impl LossBreakdown {
    pub fn components(&self) -> [f64; 9] {
        [
            self.data_t,
            self.ic_u,
            self.ic_v,
            self.bc_u_top,
            self.bc_v_top,
            self.bc_u_bottom,
            self.bc_v_bottom,
            self.residual,
            self.inverse_data_uv,
        ]
    }

    fn from_components(c: [f64; 9]) -> Self {
        LossBreakdown {
            data_t: c[0],
            ic_u: c[1],
            ic_v: c[2],
            bc_u_top: c[3],
            bc_v_top: c[4],
            bc_u_bottom: c[5],
            bc_v_bottom: c[6],
            residual: c[7],
            inverse_data_uv: c[8],
            total: 0.0,
        }
    }

    /// Name of the first non-finite component, checking the total last.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        COMPONENT_NAMES
            .iter()
            .zip(self.components())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
            .or((!self.total.is_finite()).then_some("total"))
    }
}

/// Unweighted sum of the components active under `obj`.
///
/// Components that the mode never produces must be zero.
pub fn total_loss(c: &LossBreakdown, obj: &Objective) -> Result<f64> {
    match obj.mode {
        LossMode::Forward => {
            if c.inverse_data_uv != 0.0 {
                return Err(Error::Usage("forward objective given an inverse data term".into()));
            }
            let mut t = c.residual + c.ic_u + c.ic_v;
            if obj.data_t {
                t += c.data_t;
            }
            if obj.boundary {
                t += c.bc_u_top + c.bc_v_top + c.bc_u_bottom + c.bc_v_bottom;
            }
            Ok(t)
        }
        LossMode::Inverse => {
            let forward_only = [c.ic_u, c.ic_v, c.bc_u_top, c.bc_v_top, c.bc_u_bottom, c.bc_v_bottom];
            if forward_only.iter().any(|&v| v != 0.0) {
                return Err(Error::Usage("inverse objective given initial or boundary terms".into()));
            }
            let mut t = c.inverse_data_uv + c.residual;
            if obj.data_t {
                t += c.data_t;
            }
            Ok(t)
        }
    }
}

fn nonempty<T>(points: &[T], what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Usage(format!("empty {what} set")));
    }
    Ok(())
}

/// Mean of (T_pred - T_label)² over (t, x, y, T) rows.
pub fn data_loss(params: &MlpParams, points: &[[f64; 4]]) -> Result<f64> {
    nonempty(points, "interior")?;
    let mut s = 0.0;
    for p in points {
        let out = params.forward([p[0], p[1], p[2]])?;
        s += (out[0] - p[3]).powi(2);
    }
    Ok(s / points.len() as f64)
}

/// Mean squared (u, v) error over (t, x, y, u, v) rows.
fn velocity_mse(params: &MlpParams, points: &[[f64; 5]]) -> Result<(f64, f64)> {
    let (mut su, mut sv) = (0.0, 0.0);
    for p in points {
        let out = params.forward([p[0], p[1], p[2]])?;
        su += (out[1] - p[3]).powi(2);
        sv += (out[2] - p[4]).powi(2);
    }
    let n = points.len() as f64;
    Ok((su / n, sv / n))
}

pub fn ic_loss(params: &MlpParams, initial: &[[f64; 5]]) -> Result<(f64, f64)> {
    nonempty(initial, "initial")?;
    velocity_mse(params, initial)
}

/// (u_top, v_top, u_bottom, v_bottom)
pub fn bc_loss(params: &MlpParams, top: &[[f64; 5]], bottom: &[[f64; 5]]) -> Result<[f64; 4]> {
    nonempty(top, "lid")?;
    nonempty(bottom, "wall")?;
    let (ut, vt) = velocity_mse(params, top)?;
    let (ub, vb) = velocity_mse(params, bottom)?;
    Ok([ut, vt, ub, vb])
}

pub fn residual_loss(params: &MlpParams, nd: &NondimParams, points: &[[f64; 3]]) -> Result<f64> {
    nonempty(points, "residual")?;
    let mut s = 0.0;
    for p in points {
        let jet = params.forward_jet(*p)?;
        s += crate::physics::residuals(&jet, nd).sum_sq();
    }
    Ok(s / points.len() as f64)
}

/// Mean of (u - u_label)² + (v - v_label)² over interior points.
pub fn inverse_data_loss(params: &MlpParams, points: &[[f64; 4]], labels: Option<&[[f64; 2]]>) -> Result<f64> {
    let labels = labels.ok_or_else(|| Error::Usage("set carries no velocity labels".into()))?;
    nonempty(points, "interior")?;
    if labels.len() != points.len() {
        return Err(Error::Shape(format!("{} labels for {} points", labels.len(), points.len())));
    }
    let mut s = 0.0;
    for (p, l) in points.iter().zip(labels) {
        let out = params.forward([p[0], p[1], p[2]])?;
        s += (out[1] - l[0]).powi(2) + (out[2] - l[1]).powi(2);
    }
    Ok(s / points.len() as f64)
}

/// Points for one loss evaluation. `velocity` is either empty or aligned
/// with `interior`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub interior: Vec<[f64; 4]>,
    pub velocity: Vec<[f64; 2]>,
    pub initial: Vec<[f64; 5]>,
    pub top: Vec<[f64; 5]>,
    pub bottom: Vec<[f64; 5]>,
    pub residual: Vec<[f64; 3]>,
}

impl Batch {
    /// Every point of the set. Velocity labels are copied only for the
    /// inverse objective.
    pub fn full(set: &CollocationSet, obj: &Objective) -> Self {
        let velocity = match (&set.velocity, obj.mode) {
            (Some(v), LossMode::Inverse) => v.clone(),
            _ => Vec::new(),
        };
        Batch {
            interior: set.interior.clone(),
            velocity,
            initial: set.initial.clone(),
            top: set.top.clone(),
            bottom: set.bottom.clone(),
            residual: set.residual.clone(),
        }
    }
}

/// Equation coefficients as trained quantities: `ln Re`, `ln Pe`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogParams {
    pub log_re: f64,
    pub log_pe: f64,
}

impl LogParams {
    pub fn from_nd(nd: &NondimParams) -> Self {
        LogParams { log_re: nd.re.ln(), log_pe: nd.pe.ln() }
    }

    pub fn re(&self) -> f64 {
        self.log_re.exp()
    }

    pub fn pe(&self) -> f64 {
        self.log_pe.exp()
    }
}

/// Gradient of the active total.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub log_re: f64,
    pub log_pe: f64,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients { params: vec![0.0; n], log_re: 0.0, log_pe: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Interior,
    Initial,
    Top,
    Bottom,
    Residual,
}

#[derive(Debug, Clone, Copy)]
struct Item {
    term: Term,
    start: usize,
    end: usize,
}

#[derive(Default)]
struct Workspace {
    pass: BatchPass,
    points: Vec<[f64; 3]>,
    d_out: Vec<f64>,
    grad: Vec<f64>,
    /// Per-component sums of squares (unnormalized).
    sums: [f64; 9],
    dlog: [f64; 2],
}

/// Batched loss and gradient evaluator with reusable buffers.
#[derive(Default)]
pub struct LossEngine {
    work: Vec<Workspace>,
}

struct Ctx<'a> {
    params: &'a MlpParams,
    batch: &'a Batch,
    obj: Objective,
    inv_re: f64,
    inv_pe: f64,
    want_grad: bool,
    inverse_uv: bool,
}

impl LossEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluates every component present in `batch` and, when `grad` is
    /// given, accumulates the gradient of the active total into it.
    pub fn evaluate(
        &mut self,
        params: &MlpParams,
        batch: &Batch,
        obj: &Objective,
        coeffs: LogParams,
        grad: Option<&mut Gradients>,
    ) -> Result<LossBreakdown> {
        nonempty(&batch.residual, "residual")?;
        let inverse_uv = obj.mode == LossMode::Inverse;
        if inverse_uv && batch.velocity.len() != batch.interior.len() {
            return Err(Error::Usage("inverse objective needs velocity labels on every interior point".into()));
        }
        if (obj.data_t || inverse_uv) && batch.interior.is_empty() {
            return Err(Error::Usage("empty interior set".into()));
        }
        if obj.ic_active() {
            nonempty(&batch.initial, "initial")?;
        }
        if obj.bc_active() {
            nonempty(&batch.top, "lid")?;
            nonempty(&batch.bottom, "wall")?;
        }
        let mut items = Vec::new();
        for (term, len) in [
            (Term::Residual, batch.residual.len()),
            (Term::Interior, batch.interior.len()),
            (Term::Initial, batch.initial.len()),
            (Term::Top, batch.top.len()),
            (Term::Bottom, batch.bottom.len()),
        ] {
            let mut start = 0;
            while start < len {
                let end = (start + CHUNK).min(len);
                items.push(Item { term, start, end });
                start = end;
            }
        }
        if self.work.len() < items.len() {
            self.work.resize_with(items.len(), Workspace::default);
        }
        let ctx = Ctx {
            params,
            batch,
            obj: *obj,
            inv_re: (-coeffs.log_re).exp(),
            inv_pe: (-coeffs.log_pe).exp(),
            want_grad: grad.is_some(),
            inverse_uv,
        };
        let run = |(item, ws): (&Item, &mut Workspace)| run_item(&ctx, item, ws);
        let results: Vec<Result<()>> = if items.len() > 1 {
            items.par_iter().zip(self.work.par_iter_mut()).map(run).collect()
        } else {
            items.iter().zip(self.work.iter_mut()).map(run).collect()
        };
        results.into_iter().collect::<Result<Vec<()>>>()?;

        let mut sums = [0.0; 9];
        for ws in &self.work[..items.len()] {
            for (s, w) in sums.iter_mut().zip(ws.sums) {
                *s += w;
            }
        }
        let counts = [
            batch.interior.len(),
            batch.initial.len(),
            batch.initial.len(),
            batch.top.len(),
            batch.top.len(),
            batch.bottom.len(),
            batch.bottom.len(),
            batch.residual.len(),
            if inverse_uv { batch.interior.len() } else { 0 },
        ];
        let mut comps = [0.0; 9];
        for k in 0..9 {
            if counts[k] > 0 {
                comps[k] = sums[k] / counts[k] as f64;
            }
        }
        if obj.mode == LossMode::Inverse {
            // forward-only terms do not belong to this objective
            comps[1..7].fill(0.0);
        }
        let mut out = LossBreakdown::from_components(comps);
        out.total = total_loss(&out, obj)?;

        if let Some(g) = grad {
            if g.params.len() != params.n_params() {
                return Err(Error::Shape("gradient buffer size".into()));
            }
            for ws in &self.work[..items.len()] {
                for (a, b) in g.params.iter_mut().zip(&ws.grad) {
                    *a += b;
                }
                g.log_re += ws.dlog[0];
                g.log_pe += ws.dlog[1];
            }
        }
        Ok(out)
    }
}

fn run_item(ctx: &Ctx, item: &Item, ws: &mut Workspace) -> Result<()> {
    ws.sums = [0.0; 9];
    ws.dlog = [0.0; 2];
    let b = ctx.batch;
    let n = item.end - item.start;
    ws.points.clear();
    match item.term {
        Term::Residual => ws.points.extend_from_slice(&b.residual[item.start..item.end]),
        Term::Interior => ws.points.extend(b.interior[item.start..item.end].iter().map(|p| [p[0], p[1], p[2]])),
        Term::Initial => ws.points.extend(b.initial[item.start..item.end].iter().map(|p| [p[0], p[1], p[2]])),
        Term::Top => ws.points.extend(b.top[item.start..item.end].iter().map(|p| [p[0], p[1], p[2]])),
        Term::Bottom => ws.points.extend(b.bottom[item.start..item.end].iter().map(|p| [p[0], p[1], p[2]])),
    }
    if ws.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::RejectedInput("non-finite collocation point".into()));
    }
    let mode = if item.term == Term::Residual { Mode::Jets } else { Mode::Values };
    ws.pass.forward(ctx.params, &ws.points, mode);
    let c = mode.components() * n;
    ws.d_out.clear();
    ws.d_out.resize(OUTPUTS * c, 0.0);
    let active;
    let out = |ch: usize, comp: usize| ws.pass.output(ch, comp);

    match item.term {
        Term::Residual => {
            active = true;
            let w = 2.0 / b.residual.len() as f64;
            let get = |ch: usize| -> [&[f64]; 6] {
                [out(ch, V), out(ch, DT), out(ch, DX), out(ch, DY), out(ch, DXX), out(ch, DYY)]
            };
            let (tj, uj, vj, pj) = (get(0), get(1), get(2), get(3));
            let jet = |c: &[&[f64]; 6], i: usize| Jet2::from_components([c[0][i], c[1][i], c[2][i], c[3][i], c[4][i], c[5][i]]);
            let (mut s, mut dre, mut dpe) = (0.0, 0.0, 0.0);
            let d = &mut ws.d_out;
            for i in 0..n {
                let net = NetOutputJet { temp: jet(&tj, i), u: jet(&uj, i), v: jet(&vj, i), p: jet(&pj, i) };
                let [ft, fu, fv, fm] = residuals_with(&mut Float, &net, ctx.inv_re, ctx.inv_pe)?;
                s += ft * ft + fu * fu + fv * fv + fm * fm;
                if !ctx.want_grad {
                    continue;
                }
                let (u, v) = (net.u.v, net.v.v);
                let lap_t = net.temp.d_xx + net.temp.d_yy;
                let lap_u = net.u.d_xx + net.u.d_yy;
                let lap_v = net.v.d_xx + net.v.d_yy;
                dpe += w * ft * lap_t * ctx.inv_pe;
                dre += w * (fu * lap_u + fv * lap_v) * ctx.inv_re;
                let (ft, fu, fv, fm) = (w * ft, w * fu, w * fv, w * fm);
                let at = |ch: usize, comp: usize| ch * c + comp * n + i;
                d[at(0, DT)] = ft;
                d[at(0, DX)] = ft * u;
                d[at(0, DY)] = ft * v;
                d[at(0, DXX)] = -ft * ctx.inv_pe;
                d[at(0, DYY)] = -ft * ctx.inv_pe;
                d[at(1, V)] = ft * net.temp.d_x + fu * net.u.d_x + fv * net.v.d_x;
                d[at(1, DT)] = fu;
                d[at(1, DX)] = fu * u + fm;
                d[at(1, DY)] = fu * v;
                d[at(1, DXX)] = -fu * ctx.inv_re;
                d[at(1, DYY)] = -fu * ctx.inv_re;
                d[at(2, V)] = ft * net.temp.d_y + fu * net.u.d_y + fv * net.v.d_y;
                d[at(2, DT)] = fv;
                d[at(2, DX)] = fv * u;
                d[at(2, DY)] = fv * v + fm;
                d[at(2, DXX)] = -fv * ctx.inv_re;
                d[at(2, DYY)] = -fv * ctx.inv_re;
                d[at(3, DX)] = fu;
                d[at(3, DY)] = fv;
            }
            ws.sums[7] = s;
            ws.dlog = [dre, dpe];
        }
        Term::Interior => {
            let (t, u, v) = (out(0, V), out(1, V), out(2, V));
            let wt = if ctx.obj.data_t { 2.0 / b.interior.len() as f64 } else { 0.0 };
            let wuv = 2.0 / b.interior.len() as f64;
            let (mut st, mut suv) = (0.0, 0.0);
            let d = &mut ws.d_out;
            for i in 0..n {
                let k = item.start + i;
                let et = t[i] - b.interior[k][3];
                st += et * et;
                d[i] = wt * et;
                if ctx.inverse_uv {
                    let [lu, lv] = b.velocity[k];
                    let (eu, ev) = (u[i] - lu, v[i] - lv);
                    suv += eu * eu + ev * ev;
                    d[n + i] = wuv * eu;
                    d[2 * n + i] = wuv * ev;
                }
            }
            ws.sums[0] = st;
            ws.sums[8] = suv;
            active = ctx.obj.data_t || ctx.inverse_uv;
        }
        Term::Initial | Term::Top | Term::Bottom => {
            let (rows, slot, on) = match item.term {
                Term::Initial => (&b.initial, 1, ctx.obj.ic_active()),
                Term::Top => (&b.top, 3, ctx.obj.bc_active()),
                _ => (&b.bottom, 5, ctx.obj.bc_active()),
            };
            let (u, v) = (out(1, V), out(2, V));
            let w = if on { 2.0 / rows.len() as f64 } else { 0.0 };
            let (mut su, mut sv) = (0.0, 0.0);
            let d = &mut ws.d_out;
            for i in 0..n {
                let r = &rows[item.start + i];
                let (eu, ev) = (u[i] - r[3], v[i] - r[4]);
                su += eu * eu;
                sv += ev * ev;
                d[n + i] = w * eu;
                d[2 * n + i] = w * ev;
            }
            ws.sums[slot] = su;
            ws.sums[slot + 1] = sv;
            active = on;
        }
    }

    ws.grad.clear();
    ws.grad.resize(ctx.params.n_params(), 0.0);
    if ctx.want_grad && active {
        ws.pass.backward(ctx.params, &ws.d_out, &mut ws.grad);
    }
    Ok(())
}

/// Append-only loss history log.
pub struct HistoryLog {
    file: std::fs::File,
    path: std::path::PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub re: f64,
    pub pe: f64,
    pub wall_seconds: f64,
}

impl HistoryLog {
    pub const HEADER: &'static str = "iteration,data_T,ic_u,ic_v,bc_u_top,bc_v_top,bc_u_bottom,bc_v_bottom,residual,inverse_data_uv,total,re,pe,wall_seconds";

    /// Opens `path` for appending, writing the header if the file is new.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        if empty {
            writeln!(file, "{}", Self::HEADER).map_err(|e| Error::io(path, e))?;
        }
        Ok(HistoryLog { file, path: path.to_owned() })
    }

    pub fn append(&mut self, row: &HistoryRow) -> Result<()> {
        let mut line = row.iteration.to_string();
        for v in row.loss.components().iter().chain([&row.loss.total, &row.re, &row.pe, &row.wall_seconds]) {
            line.push(',');
            line.push_str(&format!("{v:e}"));
        }
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn read(path: &Path) -> Result<Vec<HistoryRow>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != 14 {
                return Err(Error::Format(format!("history line {}: {} fields", ln + 1, vals.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("history line {}: {e}", ln + 1)));
            let iteration = vals[0].parse().map_err(|e| Error::Format(format!("history line {}: {e}", ln + 1)))?;
            let mut c = [0.0; 9];
            for k in 0..9 {
                c[k] = num(vals[k + 1])?;
            }
            let mut loss = LossBreakdown::from_components(c);
            loss.total = num(vals[10])?;
            rows.push(HistoryRow { iteration, loss, re: num(vals[11])?, pe: num(vals[12])?, wall_seconds: num(vals[13])? });
        }
        Ok(rows)
    }
}
