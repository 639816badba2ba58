//! Scattered training sets drawn from solver snapshots.
//!
//! Points are snapshot cell centers, so every label is an exact copy of a
//! snapshot value. Each (seed, snapshot) pair owns one random permutation of
//! the interior cells and one stream of boundary positions; a set with more
//! points per time takes a longer prefix of the same sequences, which makes
//! sets of increasing size nest inside each other.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::refsolver::{Domain, SnapshotSet};

pub const DATASET_MAGIC: &[u8; 4] = b"MPDS";
pub const DATASET_VERSION: u32 = 1;

/// Boundary points per selected time never drop below this.
pub const MIN_BOUNDARY_PER_TIME: usize = 32;

/// Tolerance for the domain check applied on load.
const DOMAIN_TOL: f64 = 1e-9;

const STREAM_INTERIOR: u64 = 0;
const STREAM_TOP: u64 = 1;
const STREAM_WALL: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub points_per_time: usize,
    pub time_count: usize,
    pub seed: u64,
    /// Lid and wall points per time; default `max(points_per_time / 4, 32)`.
    pub boundary_per_time: Option<usize>,
    /// Residual points per time; default reuses the labeled interior points.
    pub residual_per_time: Option<usize>,
}

impl SampleConfig {
    pub fn new(points_per_time: usize, time_count: usize, seed: u64) -> Self {
        SampleConfig { points_per_time, time_count, seed, boundary_per_time: None, residual_per_time: None }
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_per_time.unwrap_or((self.points_per_time / 4).max(MIN_BOUNDARY_PER_TIME))
    }
}

/// Labeled point sets for one training run.
///
/// `interior` rows are (t, x, y, T); `initial`, `top` and `bottom` rows are
/// (t, x, y, u, v); `residual` rows are (t, x, y).
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub domain: Domain,
    pub config: SampleConfig,
    /// Snapshot indices used, ascending.
    pub time_indices: Vec<usize>,
    /// Time range of the source snapshot set.
    pub time_range: (f64, f64),
    pub provenance: String,
    pub interior: Vec<[f64; 4]>,
    /// (snapshot index, interior slot) each interior point was copied from.
    pub interior_source: Vec<(usize, usize)>,
    /// (u, v) at the interior points; present only on inverse-capable sets.
    pub velocity: Option<Vec<[f64; 2]>>,
    pub initial: Vec<[f64; 5]>,
    pub top: Vec<[f64; 5]>,
    pub bottom: Vec<[f64; 5]>,
    pub residual: Vec<[f64; 3]>,
}

/// Snapshot indices `round(k (S-1) / (c-1))`, rounding halves up.
pub fn subsample_times(available: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > available {
        return Err(Error::Sampling(format!("cannot pick {count} of {available} snapshots")));
    }
    if count == 1 {
        return Ok(vec![available - 1]);
    }
    let (s, c) = (available - 1, count - 1);
    let mut out: Vec<usize> = (0..count).map(|k| (2 * k * s + c) / (2 * c)).collect();
    out.dedup();
    debug_assert_eq!(out.len(), count);
    Ok(out)
}

fn stream(seed: u64, snapshot: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(snapshot as u64 * 4 + role);
    rng
}

/// Both domains share the lid segment y* = 0, |x*| <= 1/2.
fn lid_point(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen::<f64>() - 0.5, 0.0)
}

fn wall_point(domain: Domain, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match domain {
        Domain::HalfDisk => {
            let theta = PI * (1.0 + rng.gen::<f64>());
            (0.5 * theta.cos(), 0.5 * theta.sin())
        }
        Domain::SquareCavity => {
            // arc length along left, bottom, right sides
            let s = 3.0 * rng.gen::<f64>();
            if s < 1.0 {
                (-0.5, -s)
            } else if s < 2.0 {
                (s - 1.5, -1.0)
            } else {
                (0.5, s - 3.0)
            }
        }
    }
}

impl CollocationSet {
    pub fn sample(snapshots: &SnapshotSet, cfg: &SampleConfig) -> Result<Self> {
        let grid = snapshots.grid()?;
        let cells = grid.interior_count();
        if cfg.points_per_time == 0 {
            return Err(Error::Sampling("points_per_time must be at least 1".into()));
        }
        if cfg.points_per_time > cells {
            return Err(Error::Sampling(format!(
                "{} points per time requested, grid has {cells} interior cells",
                cfg.points_per_time
            )));
        }
        let residual_count = cfg.residual_per_time.unwrap_or(cfg.points_per_time);
        if residual_count == 0 || residual_count > cells {
            return Err(Error::Sampling(format!("bad residual point count {residual_count}")));
        }
        let boundary = cfg.boundary_count();
        if boundary == 0 {
            return Err(Error::Sampling("boundary point count must be positive".into()));
        }
        let time_indices = subsample_times(snapshots.snapshots.len(), cfg.time_count)?;
        let centers = grid.interior_centers();

        let mut set = CollocationSet {
            domain: grid.domain,
            config: cfg.clone(),
            time_range: (snapshots.snapshots[0].t_star, snapshots.last().t_star),
            provenance: snapshots.provenance_hash(),
            time_indices: time_indices.clone(),
            interior: Vec::with_capacity(cfg.points_per_time * time_indices.len()),
            interior_source: Vec::new(),
            velocity: None,
            initial: Vec::new(),
            top: Vec::new(),
            bottom: Vec::new(),
            residual: Vec::new(),
        };
        for &k in &time_indices {
            let snap = &snapshots.snapshots[k];
            let t = snap.t_star;
            let mut order: Vec<usize> = (0..cells).collect();
            order.shuffle(&mut stream(cfg.seed, k, STREAM_INTERIOR));
            for &slot in &order[..cfg.points_per_time] {
                let (x, y) = centers[slot];
                set.interior.push([t, x, y, snap.temp[slot]]);
                set.interior_source.push((k, slot));
                if k == time_indices[0] {
                    set.initial.push([t, x, y, snap.u[slot], snap.v[slot]]);
                }
            }
            for &slot in &order[..residual_count] {
                let (x, y) = centers[slot];
                set.residual.push([t, x, y]);
            }
            let mut rng = stream(cfg.seed, k, STREAM_TOP);
            for _ in 0..boundary {
                let (x, y) = lid_point(&mut rng);
                set.top.push([t, x, y, 1.0, 0.0]);
            }
            let mut rng = stream(cfg.seed, k, STREAM_WALL);
            for _ in 0..boundary {
                let (x, y) = wall_point(grid.domain, &mut rng);
                set.bottom.push([t, x, y, 0.0, 0.0]);
            }
        }
        Ok(set)
    }

    /// Copies (u, v) labels onto the interior points. Calling it again with
    /// the same snapshots leaves the set unchanged.
    pub fn attach_velocity_labels(mut self, snapshots: &SnapshotSet) -> Result<Self> {
        if snapshots.provenance_hash() != self.provenance {
            return Err(Error::Provenance("snapshot set differs from the one sampled".into()));
        }
        let grid = snapshots.grid()?;
        let centers = grid.interior_centers();
        let mut labels = Vec::with_capacity(self.interior.len());
        for (p, &(k, slot)) in self.interior.iter().zip(&self.interior_source) {
            let snap = snapshots
                .snapshots
                .get(k)
                .ok_or_else(|| Error::Provenance(format!("snapshot {k} missing")))?;
            let c = centers.get(slot).copied();
            if snap.t_star != p[0] || c != Some((p[1], p[2])) || snap.temp[slot] != p[3] {
                return Err(Error::Provenance(format!(
                    "point ({}, {}, {}) does not match snapshot {k} cell {slot}",
                    p[0], p[1], p[2]
                )));
            }
            labels.push([snap.u[slot], snap.v[slot]]);
        }
        self.velocity = Some(labels);
        Ok(self)
    }

    pub fn is_inverse_capable(&self) -> bool {
        self.velocity.is_some()
    }

    /// Copy with interior velocity labels stripped.
    pub fn without_velocity(&self) -> Self {
        CollocationSet { velocity: None, ..self.clone() }
    }

    /// (N, Q, P_top, P_bot, M)
    pub fn counts(&self) -> [usize; 5] {
        [self.interior.len(), self.initial.len(), self.top.len(), self.bottom.len(), self.residual.len()]
    }

    /// Bounding box of the space-time domain, as (lo, hi) over (t, x, y).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (t0, t1) = self.time_range;
        let t1 = if t1 > t0 { t1 } else { t0 + 1.0 };
        match self.domain {
            Domain::HalfDisk => ([t0, -0.5, -0.5], [t1, 0.5, 0.0]),
            Domain::SquareCavity => ([t0, -0.5, -1.0], [t1, 0.5, 0.0]),
        }
    }

    fn validate(&self) -> Result<()> {
        let (t0, t1) = self.time_range;
        let rows = self
            .interior
            .iter()
            .map(|r| &r[..3])
            .chain(self.initial.iter().map(|r| &r[..3]))
            .chain(self.top.iter().map(|r| &r[..3]))
            .chain(self.bottom.iter().map(|r| &r[..3]))
            .chain(self.residual.iter().map(|r| &r[..]));
        for r in rows {
            if !r.iter().all(|v| v.is_finite()) {
                return Err(Error::Format("non-finite point coordinate".into()));
            }
            if !self.domain.contains(r[1], r[2], DOMAIN_TOL) {
                return Err(Error::Domain(format!("point ({}, {}) lies outside the domain", r[1], r[2])));
            }
            if r[0] < t0 || r[0] > t1 {
                return Err(Error::Domain(format!("time {} outside [{t0}, {t1}]", r[0])));
            }
        }
        if self.interior_source.len() != self.interior.len() {
            return Err(Error::Format("interior source list has the wrong length".into()));
        }
        if let Some(v) = &self.velocity {
            if v.len() != self.interior.len() {
                return Err(Error::Format("velocity label count does not match interior".into()));
            }
        }
        for r in &self.top {
            if r[3] != 1.0 || r[4] != 0.0 {
                return Err(Error::Format("lid label differs from (1, 0)".into()));
            }
        }
        for r in &self.bottom {
            if r[3] != 0.0 || r[4] != 0.0 {
                return Err(Error::Format("wall label differs from (0, 0)".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = FileHeader {
            domain: self.domain,
            config: self.config.clone(),
            time_indices: self.time_indices.clone(),
            time_range: self.time_range,
            provenance: self.provenance.clone(),
            counts: self.counts(),
        };
        let source: Vec<f64> =
            self.interior_source.iter().flat_map(|&(k, s)| [k as f64, s as f64]).collect();
        let interior = self.interior.concat();
        let initial = self.initial.concat();
        let top = self.top.concat();
        let bottom = self.bottom.concat();
        let residual = self.residual.concat();
        let velocity = self.velocity.as_ref().map(|v| v.concat());
        let mut sections: Vec<(&str, &[f64])> = vec![
            ("interior", &interior),
            ("interior_source", &source),
            ("initial", &initial),
            ("top", &top),
            ("bottom", &bottom),
            ("residual", &residual),
        ];
        if let Some(v) = &velocity {
            sections.push(("velocity", v));
        }
        io::write_container(path, DATASET_MAGIC, DATASET_VERSION, &header, &sections)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = io::read_container::<FileHeader>(path, DATASET_MAGIC, DATASET_VERSION)?;
        let h = c.header.clone();
        let [n, q, pt, pb, m] = h.counts;
        let interior = rows::<4>(c.take("interior")?, n, "interior")?;
        let interior_source = rows::<2>(c.take("interior_source")?, n, "interior_source")?
            .into_iter()
            .map(|[k, s]| (k as usize, s as usize))
            .collect();
        let velocity = if c.has("velocity") { Some(rows::<2>(c.take("velocity")?, n, "velocity")?) } else { None };
        let set = CollocationSet {
            domain: h.domain,
            config: h.config,
            time_indices: h.time_indices,
            time_range: h.time_range,
            provenance: h.provenance,
            interior,
            interior_source,
            velocity,
            initial: rows::<5>(c.take("initial")?, q, "initial")?,
            top: rows::<5>(c.take("top")?, pt, "top")?,
            bottom: rows::<5>(c.take("bottom")?, pb, "bottom")?,
            residual: rows::<3>(c.take("residual")?, m, "residual")?,
        };
        set.validate()?;
        Ok(set)
    }

    /// Columns: role, t, x, y, u, v, p, T (unknown entries left blank).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["role", "t", "x", "y", "u", "v", "p", "T"])?;
        let f = |v: f64| v.to_string();
        for (i, r) in self.interior.iter().enumerate() {
            let (u, v) = match &self.velocity {
                Some(l) => (f(l[i][0]), f(l[i][1])),
                None => (String::new(), String::new()),
            };
            w.write_record(["interior".into(), f(r[0]), f(r[1]), f(r[2]), u, v, String::new(), f(r[3])])?;
        }
        for (role, set) in [("initial", &self.initial), ("top", &self.top), ("bottom", &self.bottom)] {
            for r in set.iter() {
                w.write_record([role.into(), f(r[0]), f(r[1]), f(r[2]), f(r[3]), f(r[4]), String::new(), String::new()])?;
            }
        }
        for r in &self.residual {
            w.write_record(["residual".into(), f(r[0]), f(r[1]), f(r[2]), String::new(), String::new(), String::new(), String::new()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        io::write_atomic(path, &bytes)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileHeader {
    domain: Domain,
    config: SampleConfig,
    time_indices: Vec<usize>,
    time_range: (f64, f64),
    provenance: String,
    counts: [usize; 5],
}

fn rows<const K: usize>(flat: Vec<f64>, count: usize, name: &str) -> Result<Vec<[f64; K]>> {
    if flat.len() != count * K {
        return Err(Error::Format(format!("section '{name}' holds {} values, expected {}", flat.len(), count * K)));
    }
    Ok(flat.chunks_exact(K).map(|c| c.try_into().unwrap()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::NondimParams;
    use crate::refsolver::{FieldSnapshot, MaskedGrid};

    /// Synthetic snapshots whose labels encode their own cell and time.
    fn synthetic(count: usize) -> SnapshotSet {
        let grid = MaskedGrid::half_disk(16).unwrap();
        let n = grid.interior_count();
        let snaps = (0..count)
            .map(|k| FieldSnapshot {
                t_star: k as f64 * 0.25,
                u: (0..n).map(|i| if k == 0 { 0.0 } else { 1e-3 * i as f64 + k as f64 }).collect(),
                v: (0..n).map(|i| if k == 0 { 0.0 } else { -1e-3 * i as f64 }).collect(),
                p: vec![0.0; n],
                temp: (0..n).map(|i| (i as f64 / n as f64) * (k as f64 / count as f64)).collect(),
            })
            .collect();
        SnapshotSet::new(&grid, NondimParams::new(100.0, 20.0).unwrap(), 0.01, 10, snaps)
    }

    #[test]
    fn subsampling_keeps_endpoints_and_nests() {
        assert_eq!(subsample_times(14, 3).unwrap(), vec![0, 7, 13]);
        assert_eq!(subsample_times(14, 7).unwrap(), vec![0, 2, 4, 7, 9, 11, 13]);
        let t13 = subsample_times(14, 13).unwrap();
        assert_eq!(t13.len(), 13);
        for k in subsample_times(14, 7).unwrap() {
            assert!(t13.contains(&k));
        }
        assert_eq!(subsample_times(14, 14).unwrap(), (0..14).collect::<Vec<_>>());
        assert!(subsample_times(5, 6).is_err());
    }

    #[test]
    fn counts_follow_config() {
        let snaps = synthetic(14);
        let set = CollocationSet::sample(&snaps, &SampleConfig::new(40, 7, 3)).unwrap();
        assert_eq!(set.counts(), [280, 40, 7 * 32, 7 * 32, 280]);
        let cfg = SampleConfig { boundary_per_time: Some(5), residual_per_time: Some(60), ..SampleConfig::new(40, 3, 3) };
        let set = CollocationSet::sample(&snaps, &cfg).unwrap();
        assert_eq!(set.counts(), [120, 40, 15, 15, 180]);
        assert_eq!(SampleConfig::new(850, 7, 0).boundary_count(), 212);
    }

    #[test]
    fn oversampling_is_rejected() {
        let snaps = synthetic(3);
        let cells = snaps.header.interior_count;
        assert!(matches!(
            CollocationSet::sample(&snaps, &SampleConfig::new(cells + 1, 2, 0)),
            Err(Error::Sampling(_))
        ));
        assert!(CollocationSet::sample(&snaps, &SampleConfig::new(cells, 3, 0)).is_ok());
    }

    #[test]
    fn same_seed_same_set_and_labels_are_exact() {
        let snaps = synthetic(5);
        let a = CollocationSet::sample(&snaps, &SampleConfig::new(30, 3, 11)).unwrap();
        let b = CollocationSet::sample(&snaps, &SampleConfig::new(30, 3, 11)).unwrap();
        let c = CollocationSet::sample(&snaps, &SampleConfig::new(30, 3, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.interior, c.interior);
        for (p, &(k, s)) in a.interior.iter().zip(&a.interior_source) {
            assert_eq!(p[3], snaps.snapshots[k].temp[s]);
        }
        // no repeated cell within one time
        for chunk in a.interior_source.chunks(30) {
            let mut slots: Vec<usize> = chunk.iter().map(|x| x.1).collect();
            slots.sort_unstable();
            slots.dedup();
            assert_eq!(slots.len(), 30);
        }
    }

    #[test]
    fn larger_sets_contain_smaller_ones() {
        let snaps = synthetic(14);
        let small = CollocationSet::sample(&snaps, &SampleConfig::new(20, 3, 5)).unwrap();
        let big = CollocationSet::sample(&snaps, &SampleConfig::new(80, 7, 5)).unwrap();
        for p in &small.interior {
            assert!(big.interior.contains(p));
        }
        for p in small.top.iter().chain(&small.bottom) {
            assert!(big.top.contains(p) || big.bottom.contains(p));
        }
    }

    #[test]
    fn boundary_points_sit_on_the_boundary() {
        let snaps = synthetic(4);
        let set = CollocationSet::sample(&snaps, &SampleConfig::new(10, 4, 0)).unwrap();
        for r in &set.top {
            assert_eq!(r[2], 0.0);
            assert!(r[1].abs() <= 0.5);
            assert_eq!((r[3], r[4]), (1.0, 0.0));
        }
        for r in &set.bottom {
            assert!(((r[1] * r[1] + r[2] * r[2]).sqrt() - 0.5).abs() < 1e-12);
            assert!(r[2] <= 0.0);
        }
        for r in &set.initial {
            assert_eq!(r[0], 0.0);
            assert_eq!((r[3], r[4]), (0.0, 0.0));
        }
    }

    #[test]
    fn velocity_labels_attach_idempotently() {
        let snaps = synthetic(4);
        let set = CollocationSet::sample(&snaps, &SampleConfig::new(10, 4, 0)).unwrap();
        assert!(!set.is_inverse_capable());
        let once = set.attach_velocity_labels(&snaps).unwrap();
        let twice = once.clone().attach_velocity_labels(&snaps).unwrap();
        assert_eq!(once, twice);
        let v = once.velocity.as_ref().unwrap();
        for (p, l) in once.interior.iter().zip(v) {
            if p[0] == 0.0 {
                assert_eq!(*l, [0.0, 0.0]);
            }
        }
        let mut other = synthetic(4);
        other.snapshots[2].temp[0] += 1.0;
        assert!(matches!(once.attach_velocity_labels(&other), Err(Error::Provenance(_))));
    }

    #[test]
    fn save_load_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let snaps = synthetic(4);
        let set = CollocationSet::sample(&snaps, &SampleConfig::new(10, 3, 0))
            .unwrap()
            .attach_velocity_labels(&snaps)
            .unwrap();
        let path = dir.path().join("set.mpds");
        set.save(&path).unwrap();
        assert_eq!(CollocationSet::load(&path).unwrap(), set);

        set.write_csv(&dir.path().join("set.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("set.csv")).unwrap();
        let [n, q, pt, pb, m] = set.counts();
        assert_eq!(text.lines().count(), 1 + n + q + pt + pb + m);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] = b'#';
        let bad = dir.path().join("bad.mpds");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(CollocationSet::load(&bad), Err(Error::Format(_))));

        let mut outside = set.clone();
        outside.residual[0][1] = 0.45;
        outside.residual[0][2] = -0.3;
        outside.save(&bad).unwrap();
        assert!(matches!(CollocationSet::load(&bad), Err(Error::Domain(_))));
    }
}
