use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a masked Cartesian grid. Both shapes have the driven lid on
/// y* = 0 and span x* ∈ [-1/2, 1/2].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// {x*² + y*² ≤ 1/4, y* ≤ 0}
    HalfDisk,
    /// [-1/2, 1/2] × [-1, 0], the classic lid-driven cavity.
    SquareCavity,
}

impl Domain {
    /// Whether a point lies in the continuous domain (with tolerance).
    pub fn contains(self, x: f64, y: f64, tol: f64) -> bool {
        match self {
            Domain::HalfDisk => x * x + y * y <= 0.25 + tol && y <= tol,
            Domain::SquareCavity => x.abs() <= 0.5 + tol && y <= tol && y >= -1.0 - tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Interior,
    /// Ghost cell above the lid (y* = 0).
    TopLid,
    /// Non-interior cell touching the interior away from the lid.
    CurvedWall,
    Exterior,
}

/// Uniform grid with a staircase mask. Cell (i, j) has its center at
/// `(x0 + (i + 1/2) h, y0 + (j + 1/2) h)`; row j = ny - 1 touches the lid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid {
    pub domain: Domain,
    pub n: usize,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub x0: f64,
    pub y0: f64,
    interior: Vec<bool>,
    /// Interior cell linear indices `j * nx + i`, ascending (row-major).
    cells: Vec<usize>,
    /// Position of each cell in `cells`, or `usize::MAX`.
    slot: Vec<usize>,
}

pub const MIN_RESOLUTION: usize = 16;

impl MaskedGrid {
    /// Half-disk of diameter 1 with `h = 1/n`.
    pub fn half_disk(n: usize) -> Result<Self> {
        Self::build(Domain::HalfDisk, n)
    }

    pub fn square_cavity(n: usize) -> Result<Self> {
        Self::build(Domain::SquareCavity, n)
    }

    pub fn build(domain: Domain, n: usize) -> Result<Self> {
        if n < MIN_RESOLUTION {
            return Err(Error::Resolution(n));
        }
        if n % 2 != 0 {
            return Err(Error::Usage(format!("grid resolution must be even, got {n}")));
        }
        let h = 1.0 / n as f64;
        let (nx, ny, y0) = match domain {
            Domain::HalfDisk => (n, n / 2, -0.5),
            Domain::SquareCavity => (n, n, -1.0),
        };
        let x0 = -0.5;
        let mut interior = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let x = x0 + (i as f64 + 0.5) * h;
                let y = y0 + (j as f64 + 0.5) * h;
                interior[j * nx + i] = match domain {
                    Domain::HalfDisk => x * x + y * y < 0.25,
                    Domain::SquareCavity => true,
                };
            }
        }
        let cells: Vec<usize> = (0..nx * ny).filter(|&c| interior[c]).collect();
        let mut slot = vec![usize::MAX; nx * ny];
        for (k, &c) in cells.iter().enumerate() {
            slot[c] = k;
        }
        let grid = MaskedGrid { domain, n, nx, ny, h, x0, y0, interior, cells, slot };
        if grid.cells.is_empty() || !grid.is_connected() {
            return Err(Error::Domain("mask has no connected interior".into()));
        }
        Ok(grid)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nx * self.ny];
        let mut queue = VecDeque::from([self.cells[0]]);
        seen[self.cells[0]] = true;
        let mut count = 0;
        while let Some(c) = queue.pop_front() {
            count += 1;
            let (i, j) = (c % self.nx, c / self.nx);
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if self.is_interior(ni, nj) {
                    let nc = nj as usize * self.nx + ni as usize;
                    if !seen[nc] {
                        seen[nc] = true;
                        queue.push_back(nc);
                    }
                }
            }
        }
        count == self.cells.len()
    }

    /// Interior test that accepts out-of-range indices.
    #[inline]
    pub fn is_interior(&self, i: i64, j: i64) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.nx
            && (j as usize) < self.ny
            && self.interior[j as usize * self.nx + i as usize]
    }

    /// Classification including the ghost ring around the grid.
    pub fn kind(&self, i: i64, j: i64) -> CellKind {
        if self.is_interior(i, j) {
            return CellKind::Interior;
        }
        let touches = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
            .iter()
            .any(|(di, dj)| self.is_interior(i + di, j + dj));
        if !touches {
            CellKind::Exterior
        } else if j == self.ny as i64 {
            CellKind::TopLid
        } else {
            CellKind::CurvedWall
        }
    }

    pub fn interior_count(&self) -> usize {
        self.cells.len()
    }

    /// Interior cells as `j * nx + i`, in row-major order.
    pub fn interior_cells(&self) -> &[usize] {
        &self.cells
    }

    /// Position of cell `(i, j)` in the interior ordering.
    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let s = self.slot[j * self.nx + i];
        (s != usize::MAX).then_some(s)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h)
    }

    /// Centers of the interior cells in interior order.
    pub fn interior_centers(&self) -> Vec<(f64, f64)> {
        self.cells.iter().map(|&c| self.cell_center(c % self.nx, c / self.nx)).collect()
    }

    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        self.domain.contains(x, y, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_count_tracks_half_disk_area() {
        let g = MaskedGrid::half_disk(64).unwrap();
        let expected = (std::f64::consts::PI / 8.0) / (g.h * g.h);
        let got = g.interior_count() as f64;
        assert!((got - expected).abs() / expected < 0.03, "{got} vs {expected}");
    }

    #[test]
    fn mask_is_mirror_symmetric() {
        let g = MaskedGrid::half_disk(48).unwrap();
        for j in 0..g.ny as i64 {
            for i in 0..g.nx as i64 {
                assert_eq!(g.is_interior(i, j), g.is_interior(g.nx as i64 - 1 - i, j));
            }
        }
    }

    #[test]
    fn too_coarse_is_rejected() {
        assert!(matches!(MaskedGrid::half_disk(8), Err(Error::Resolution(8))));
    }

    #[test]
    fn boundary_classification() {
        let g = MaskedGrid::half_disk(32).unwrap();
        let mid = (g.nx / 2) as i64;
        assert_eq!(g.kind(mid, g.ny as i64), CellKind::TopLid);
        assert_eq!(g.kind(mid, -1), CellKind::CurvedWall);
        assert_eq!(g.kind(0, 0), CellKind::Exterior);
        assert_eq!(g.kind(mid, g.ny as i64 - 1), CellKind::Interior);
        // lid cells sit above y* = 0 within |x*| ≤ 1/2
        for i in 0..g.nx {
            if g.kind(i as i64, g.ny as i64) == CellKind::TopLid {
                assert!(g.cell_center(i, 0).0.abs() <= 0.5);
            }
        }
        // curved-wall cells hug the circle
        for j in -1..g.ny as i64 {
            for i in -1..=g.nx as i64 {
                if g.kind(i, j) == CellKind::CurvedWall {
                    let x = g.x0 + (i as f64 + 0.5) * g.h;
                    let y = g.y0 + (j as f64 + 0.5) * g.h;
                    let r = (x * x + y * y).sqrt();
                    assert!((r - 0.5).abs() <= 1.5 * g.h, "r = {r}");
                }
            }
        }
    }

    #[test]
    fn square_cavity_is_full() {
        let g = MaskedGrid::square_cavity(16).unwrap();
        assert_eq!(g.interior_count(), 256);
        assert_eq!(g.slot(3, 2), Some(2 * 16 + 3));
    }
}
