//! Snapshot file set: `header.json` plus one raw block per snapshot
//! (`snapshot_NNNN.bin`: u, v, p, T as little-endian f64 over interior
//! cells in row-major order), with an optional CSV export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Domain, FieldSnapshot, MaskedGrid};
use crate::error::{Error, Result};
use crate::io::{hash_f64s, sha256_hex, write_atomic};
use crate::physics::NondimParams;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub domain: Domain,
    pub n: usize,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub interior_count: usize,
    pub nd: NondimParams,
    pub dt: f64,
    pub steady_steps: u64,
    pub times: Vec<f64>,
    pub files: Vec<String>,
    /// SHA-256 of each block's bytes.
    pub block_hashes: Vec<String>,
}

/// Snapshots with the metadata needed to rebuild their grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub header: SnapshotHeader,
    pub snapshots: Vec<FieldSnapshot>,
}

fn block_bytes(s: &FieldSnapshot) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 * s.u.len());
    for field in [&s.u, &s.v, &s.p, &s.temp] {
        for v in field.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl SnapshotSet {
    pub fn new(
        grid: &MaskedGrid,
        nd: NondimParams,
        dt: f64,
        steady_steps: u64,
        snapshots: Vec<FieldSnapshot>,
    ) -> Self {
        let files = (0..snapshots.len()).map(|k| format!("snapshot_{k:04}.bin")).collect();
        let block_hashes = snapshots.iter().map(|s| sha256_hex(&block_bytes(s))).collect();
        SnapshotSet {
            header: SnapshotHeader {
                format_version: SNAPSHOT_FORMAT_VERSION,
                domain: grid.domain,
                n: grid.n,
                nx: grid.nx,
                ny: grid.ny,
                h: grid.h,
                interior_count: grid.interior_count(),
                nd,
                dt,
                steady_steps,
                times: snapshots.iter().map(|s| s.t_star).collect(),
                files,
                block_hashes,
            },
            snapshots,
        }
    }

    pub fn grid(&self) -> Result<MaskedGrid> {
        let g = MaskedGrid::build(self.header.domain, self.header.n)?;
        if g.interior_count() != self.header.interior_count {
            return Err(Error::Format("interior count does not match grid".into()));
        }
        Ok(g)
    }

    /// Hash over all field values, used as dataset provenance.
    pub fn provenance_hash(&self) -> String {
        let mut chunks: Vec<&[f64]> = Vec::new();
        for s in &self.snapshots {
            chunks.extend([s.u.as_slice(), &s.v, &s.p, &s.temp]);
        }
        let times = self.header.times.clone();
        let h = hash_f64s(chunks.into_iter().chain(std::iter::once(times.as_slice())));
        h
    }

    pub fn last(&self) -> &FieldSnapshot {
        self.snapshots.last().expect("snapshot set is never empty")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (s, name) in self.snapshots.iter().zip(&self.header.files) {
            write_atomic(&dir.join(name), &block_bytes(s))?;
        }
        // header last: its presence marks a complete set
        let json = serde_json::to_vec_pretty(&self.header)?;
        write_atomic(&dir.join("header.json"), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let hpath = dir.join("header.json");
        let text = fs::read(&hpath).map_err(|e| Error::io(&hpath, e))?;
        let header: SnapshotHeader = serde_json::from_slice(&text)
            .map_err(|e| Error::Format(format!("snapshot header: {e}")))?;
        if header.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "snapshot format version {}, expected {SNAPSHOT_FORMAT_VERSION}",
                header.format_version
            )));
        }
        if header.files.len() != header.times.len() || header.files.len() != header.block_hashes.len() {
            return Err(Error::Format("snapshot header lists are inconsistent".into()));
        }
        let n = header.interior_count;
        let mut snapshots = Vec::with_capacity(header.files.len());
        for ((name, &t), hash) in header.files.iter().zip(&header.times).zip(&header.block_hashes) {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != 32 * n {
                return Err(Error::Format(format!("{name}: {} bytes, expected {}", bytes.len(), 32 * n)));
            }
            if &sha256_hex(&bytes) != hash {
                return Err(Error::Format(format!("{name}: content hash mismatch")));
            }
            let vals: Vec<f64> =
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            snapshots.push(FieldSnapshot {
                t_star: t,
                u: vals[..n].to_vec(),
                v: vals[n..2 * n].to_vec(),
                p: vals[2 * n..3 * n].to_vec(),
                temp: vals[3 * n..].to_vec(),
            });
        }
        if snapshots.is_empty() {
            return Err(Error::Format("snapshot set is empty".into()));
        }
        let set = SnapshotSet { header, snapshots };
        set.grid()?;
        Ok(set)
    }

    /// One row per (snapshot, interior cell): t*, x*, y*, u, v, p, T.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let grid = self.grid()?;
        let centers = grid.interior_centers();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "x", "y", "u", "v", "p", "T"])?;
        for s in &self.snapshots {
            for (k, (x, y)) in centers.iter().enumerate() {
                w.serialize((s.t_star, x, y, s.u[k], s.v[k], s.p[k], s.temp[k]))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> SnapshotSet {
        let grid = MaskedGrid::half_disk(16).unwrap();
        let n = grid.interior_count();
        let snaps = (0..3)
            .map(|k| FieldSnapshot {
                t_star: k as f64 * 0.5,
                u: (0..n).map(|i| i as f64 * 0.01 + k as f64).collect(),
                v: vec![-0.25; n],
                p: vec![0.0; n],
                temp: vec![0.5; n],
            })
            .collect();
        SnapshotSet::new(&grid, NondimParams::new(100.0, 20.0).unwrap(), 0.01, 100, snaps)
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny_set();
        set.save(dir.path()).unwrap();
        let back = SnapshotSet::load(dir.path()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.provenance_hash(), set.provenance_hash());
        set.write_csv(&dir.path().join("s.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * set.header.interior_count);
    }

    #[test]
    fn tampered_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny_set();
        set.save(dir.path()).unwrap();
        let p = dir.path().join(&set.header.files[1]);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[3] ^= 0x55;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(SnapshotSet::load(dir.path()), Err(Error::Format(_))));
    }
}
