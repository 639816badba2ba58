//! Error metrics against solver snapshots, profile extraction and the
//! resolution sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CollocationSet, SampleConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::network::batch::{BatchPass, Mode, V};
use crate::network::MlpParams;
use crate::physics::NondimParams;
use crate::refsolver::{FieldSnapshot, SnapshotSet};
use crate::training::{train_forward, NoObserver, TrainConfig};

/// Mean squared error over the population variance of `exact`.
///
/// Not symmetric: the denominator uses `exact` only.
pub fn relative_l2(pred: &[f64], exact: &[f64]) -> Result<f64> {
    if pred.len() != exact.len() || exact.is_empty() {
        return Err(Error::Shape(format!("fields of length {} and {}", pred.len(), exact.len())));
    }
    let n = exact.len() as f64;
    let mean = exact.iter().sum::<f64>() / n;
    let var = exact.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    let mse = pred.iter().zip(exact).map(|(p, f)| (p - f).powi(2)).sum::<f64>() / n;
    Ok(mse / var)
}

fn demean(f: &[f64]) -> Vec<f64> {
    let m = f.iter().sum::<f64>() / f.len().max(1) as f64;
    f.iter().map(|v| v - m).collect()
}

/// [`relative_l2`] after removing each field's mean.
pub fn compare_pressure(pred: &[f64], exact: &[f64]) -> Result<f64> {
    if pred.len() != exact.len() || exact.is_empty() {
        return Err(Error::Shape(format!("fields of length {} and {}", pred.len(), exact.len())));
    }
    relative_l2(&demean(pred), &demean(exact))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub epsilon_t: f64,
    pub epsilon_u: f64,
    pub epsilon_v: f64,
    pub epsilon_p_shifted: f64,
    pub t_star: f64,
    pub points: usize,
}

/// One sample of a line profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// "vertical" (x* = 0) or "top" (first row below the lid).
    pub line: &'static str,
    pub field: &'static str,
    pub position: f64,
    pub exact: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: ErrorReport,
    pub profiles: Vec<ProfilePoint>,
}

const FIELDS: [&str; 4] = ["T", "u", "v", "p"];

fn predict(params: &MlpParams, points: &[[f64; 3]]) -> [Vec<f64>; 4] {
    let mut pass = BatchPass::new();
    pass.forward(params, points, Mode::Values);
    std::array::from_fn(|ch| pass.output(ch, V).to_vec())
}

fn snapshot_fields(s: &FieldSnapshot) -> [&[f64]; 4] {
    [&s.temp, &s.u, &s.v, &s.p]
}

/// Errors of `params` on the last (steady) snapshot, plus profiles along
/// the vertical centerline and the row under the lid.
pub fn evaluate_model(params: &MlpParams, snapshots: &SnapshotSet, nd: &NondimParams) -> Result<Evaluation> {
    let h = &snapshots.header.nd;
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    if !rel(nd.re, h.re) || !rel(nd.pe, h.pe) {
        return Err(Error::Provenance(format!(
            "model parameters Re = {}, Pe = {} differ from the snapshot set's {}, {}",
            nd.re, nd.pe, h.re, h.pe
        )));
    }
    let grid = snapshots.grid()?;
    let snap = snapshots.last();
    let t = snap.t_star;
    let centers = grid.interior_centers();
    let points: Vec<[f64; 3]> = centers.iter().map(|&(x, y)| [t, x, y]).collect();
    let pred = predict(params, &points);
    if pred.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { iteration: 0, component: "prediction" });
    }
    let exact = snapshot_fields(snap);
    let report = ErrorReport {
        epsilon_t: relative_l2(&pred[0], exact[0])?,
        epsilon_u: relative_l2(&pred[1], exact[1])?,
        epsilon_v: relative_l2(&pred[2], exact[2])?,
        epsilon_p_shifted: compare_pressure(&pred[3], exact[3])?,
        t_star: t,
        points: points.len(),
    };

    // x* = 0 falls on a face: average the two straddling columns
    let mut profiles = Vec::new();
    let (il, ir) = (grid.nx / 2 - 1, grid.nx / 2);
    let mut vertical = Vec::new();
    for j in 0..grid.ny {
        if let (Some(a), Some(b)) = (grid.slot(il, j), grid.slot(ir, j)) {
            vertical.push((grid.cell_center(il, j).1, a, b));
        }
    }
    let vpts: Vec<[f64; 3]> = vertical.iter().map(|&(y, _, _)| [t, 0.0, y]).collect();
    let vpred = predict(params, &vpts);
    for (k, &(y, a, b)) in vertical.iter().enumerate() {
        for (ch, name) in FIELDS.iter().enumerate() {
            profiles.push(ProfilePoint {
                line: "vertical",
                field: name,
                position: y,
                exact: 0.5 * (exact[ch][a] + exact[ch][b]),
                predicted: vpred[ch][k],
            });
        }
    }
    let top = grid.ny - 1;
    for i in 0..grid.nx {
        if let Some(s) = grid.slot(i, top) {
            for (ch, name) in FIELDS.iter().enumerate() {
                profiles.push(ProfilePoint {
                    line: "top",
                    field: name,
                    position: grid.cell_center(i, top).0,
                    exact: exact[ch][s],
                    predicted: pred[ch][s],
                });
            }
        }
    }
    Ok(Evaluation { report, profiles })
}

/// One cell of the resolution sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub points_per_time: usize,
    pub time_count: usize,
    /// Training or evaluation failure message when the cell failed.
    pub outcome: std::result::Result<ErrorReport, String>,
}

/// Trains one forward model per (points, times) pair. Point counts above
/// the grid's interior cell count are capped to it. Every cell uses the
/// same sampling seed, so smaller sets nest in larger ones.
pub fn resolution_study(
    snapshots: &SnapshotSet,
    nd: &NondimParams,
    points: &[usize],
    times: &[usize],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&SweepCell),
) -> Result<Vec<SweepCell>> {
    if points.is_empty() || times.is_empty() {
        return Err(Error::Usage("resolution study needs point and time lists".into()));
    }
    let cap = snapshots.header.interior_count;
    let mut rows = Vec::with_capacity(points.len() * times.len());
    for &p in points {
        for &tc in times {
            let ppt = p.min(cap);
            let outcome = (|| -> Result<ErrorReport> {
                let set = CollocationSet::sample(snapshots, &SampleConfig::new(ppt, tc, cfg.seed))?;
                let out = train_forward(&set, nd, cfg, &mut NoObserver)?;
                Ok(evaluate_model(&out.params, snapshots, nd)?.report)
            })()
            .map_err(|e| e.to_string());
            let cell = SweepCell { points_per_time: ppt, time_count: tc, outcome };
            progress(&cell);
            rows.push(cell);
        }
    }
    Ok(rows)
}

fn finish_csv(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_report_csv(path: &Path, report: &ErrorReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(report)?;
    finish_csv(w, path)
}

pub fn read_report_csv(path: &Path) -> Result<ErrorReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize().next().ok_or_else(|| Error::Format("empty report".into()))?.map_err(Error::from)
}

pub fn write_profiles_csv(path: &Path, profiles: &[ProfilePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["line", "field", "position", "exact", "predicted"])?;
    for p in profiles {
        w.serialize((p.line, p.field, p.position, p.exact, p.predicted))?;
    }
    finish_csv(w, path)
}

pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["points_per_time", "time_count", "epsilon_T", "epsilon_u", "epsilon_v", "epsilon_p_shifted", "error"])?;
    for c in cells {
        let (p, t) = (c.points_per_time.to_string(), c.time_count.to_string());
        match &c.outcome {
            Ok(r) => w.write_record([
                p,
                t,
                r.epsilon_t.to_string(),
                r.epsilon_u.to_string(),
                r.epsilon_v.to_string(),
                r.epsilon_p_shifted.to_string(),
                String::new(),
            ])?,
            Err(e) => w.write_record([p, t, String::new(), String::new(), String::new(), String::new(), e.clone()])?,
        }
    }
    finish_csv(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{architecture, count_params};
    use crate::refsolver::MaskedGrid;

    #[test]
    fn relative_l2_examples() {
        assert_eq!(relative_l2(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 0.0);
        assert_eq!(relative_l2(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(relative_l2(&[1.0, 1.0], &[3.0, 3.0]), Err(Error::DegenerateDenominator)));
        assert!(relative_l2(&[1.0], &[1.0, 2.0]).is_err());
        assert!(relative_l2(&[], &[]).is_err());
    }

    #[test]
    fn relative_l2_is_not_symmetric() {
        let a = [0.0, 1.0, 2.0];
        let b = [0.0, 2.0, 4.0];
        assert_ne!(relative_l2(&a, &b).unwrap(), relative_l2(&b, &a).unwrap());
    }

    #[test]
    fn pressure_examples() {
        let f = [-1.0, 0.5, 0.5];
        let shifted: Vec<f64> = f.iter().map(|v| v + 1.0).collect();
        assert!(compare_pressure(&shifted, &f).unwrap() < 1e-30);
        let doubled: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert!((compare_pressure(&doubled, &f).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(compare_pressure(&f, &f).unwrap(), 0.0);
    }

    fn set_with(temp: impl Fn(f64, f64) -> f64) -> SnapshotSet {
        let grid = MaskedGrid::half_disk(16).unwrap();
        let c = grid.interior_centers();
        let n = c.len();
        let snap = FieldSnapshot {
            t_star: 2.0,
            u: c.iter().map(|&(_, y)| 1.0 + 2.0 * y).collect(),
            v: c.iter().map(|&(x, _)| x).collect(),
            p: c.iter().map(|&(x, y)| x * y).collect(),
            temp: c.iter().map(|&(x, y)| temp(x, y)).collect(),
        };
        let zero = FieldSnapshot { t_star: 0.0, u: vec![0.0; n], v: vec![0.0; n], p: vec![0.0; n], temp: vec![0.0; n] };
        SnapshotSet::new(&grid, NondimParams::new(100.0, 20.0).unwrap(), 0.01, 200, vec![zero, snap])
    }

    #[test]
    fn zero_network_scores_mean_square_over_variance() {
        let set = set_with(|x, y| 0.3 + x * x - y);
        let sizes = architecture(2, 4);
        let zero = MlpParams::from_flat(&sizes, vec![0.0; count_params(&sizes)]).unwrap();
        let nd = NondimParams::new(100.0, 20.0).unwrap();
        let ev = evaluate_model(&zero, &set, &nd).unwrap();
        let t = &set.last().temp;
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let ms = t.iter().map(|v| v * v).sum::<f64>() / n;
        assert!((ev.report.epsilon_t - ms / var).abs() < 1e-12 * (ms / var));
        assert_eq!(ev.report.points, set.header.interior_count);
        assert_eq!(evaluate_model(&zero, &set, &nd).unwrap(), ev);
        assert!(ev.profiles.iter().any(|p| p.line == "vertical"));
        assert!(ev.profiles.iter().any(|p| p.line == "top"));

        let wrong = NondimParams::new(541.0, 20.0).unwrap();
        assert!(matches!(evaluate_model(&zero, &set, &wrong), Err(Error::Provenance(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = ErrorReport { epsilon_t: 0.01, epsilon_u: 0.05, epsilon_v: 0.07, epsilon_p_shifted: 0.1, t_star: 12.5, points: 3600 };
        let p = dir.path().join("r.csv");
        write_report_csv(&p, &r).unwrap();
        assert_eq!(read_report_csv(&p).unwrap(), r);
        let cells = vec![
            SweepCell { points_per_time: 50, time_count: 3, outcome: Ok(r) },
            SweepCell { points_per_time: 850, time_count: 3, outcome: Err("diverged".into()) },
        ];
        write_sweep_csv(&dir.path().join("s.csv"), &cells).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("diverged"));
    }
}
