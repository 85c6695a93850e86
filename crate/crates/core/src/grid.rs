//! Regular cell-centred grids and the regions evaluated on them.
//!
//! Cells are ordered lexicographically with axis 0 varying fastest. Every
//! sample sits at a cell centre, so a singularity placed on a cell face or
//! corner is never evaluated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which part of the bounding box belongs to the domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Box,
    /// Cells whose centre lies strictly inside the ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Explicit per-cell fraction in [0, 1]; produced by block coarsening.
    Fraction { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    domain: Domain,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != cells.len() {
            return Err(Error::InvalidGrid("lo, hi and cells must share a positive length".into()));
        }
        for a in 0..lo.len() {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(Error::InvalidGrid(format!("axis {a}: need lo < hi")));
            }
            if cells[a] < 2 {
                return Err(Error::InvalidGrid(format!("axis {a}: need at least 2 cells")));
            }
        }
        Ok(Grid { lo, hi, cells, domain: Domain::Box })
    }

    /// `[lo, hi]^dim` with `n` cells per axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(vec![lo; dim], vec![hi; dim], vec![n; dim])
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Grid::cube(2, 0.0, 1.0, n)
    }

    pub fn unit_interval(n: usize) -> Result<Self> {
        Grid::cube(1, 0.0, 1.0, n)
    }

    /// Restrict the domain to the open ball; cells outside get weight 0.
    pub fn with_ball_domain(mut self, center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() != self.n() || !(radius > 0.0) {
            return Err(Error::InvalidGrid("ball domain needs matching dimension and radius > 0".into()));
        }
        self.domain = Domain::Ball { center, radius };
        if (0..self.len()).all(|i| self.weight(i) == 0.0) {
            return Err(Error::InvalidGrid("ball domain contains no cell centers".into()));
        }
        Ok(self)
    }

    pub fn with_fractions(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::InvalidGrid("fraction vector length".into()));
        }
        self.domain = Domain::Fraction { values };
        Ok(self)
    }

    /// Same extent and domain at another resolution. Coarse working grids
    /// may have a single cell per axis, so the public invariant is not
    /// enforced here. Fraction domains fall back to the full box.
    pub(crate) fn resized(&self, cells: Vec<usize>) -> Grid {
        let domain = match &self.domain {
            Domain::Fraction { .. } => Domain::Box,
            d => d.clone(),
        };
        Grid { lo: self.lo.clone(), hi: self.hi.clone(), cells, domain }
    }

    pub(crate) fn with_domain_unchecked(mut self, domain: Domain) -> Grid {
        self.domain = domain;
        self
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }
    pub fn min_h(&self) -> f64 {
        (0..self.n()).map(|a| self.h(a)).fold(f64::INFINITY, f64::min)
    }
    pub fn cell_volume(&self) -> f64 {
        (0..self.n()).map(|a| self.h(a)).product()
    }
    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + (i as f64 + 0.5) * self.h(axis)
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n()];
        self.center_into(idx, &mut x);
        x
    }

    pub fn center_into(&self, mut idx: usize, x: &mut [f64]) {
        for a in 0..self.n() {
            let i = idx % self.cells[a];
            idx /= self.cells[a];
            x[a] = self.coord(a, i);
        }
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for a in (0..self.n()).rev() {
            idx = idx * self.cells[a] + multi[a];
        }
        idx
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.n()];
        for a in 0..self.n() {
            m[a] = idx % self.cells[a];
            idx /= self.cells[a];
        }
        m
    }

    /// Stride of `axis` in the flat ordering.
    pub fn stride(&self, axis: usize) -> usize {
        self.cells[..axis].iter().product()
    }

    /// Fraction of the cell that belongs to the domain (0 or 1 except for
    /// coarsened fraction domains).
    pub fn weight(&self, idx: usize) -> f64 {
        match &self.domain {
            Domain::Box => 1.0,
            Domain::Ball { center, radius } => {
                let mut r2 = 0.0;
                let mut rest = idx;
                for a in 0..self.n() {
                    let i = rest % self.cells[a];
                    rest /= self.cells[a];
                    let d = self.coord(a, i) - center[a];
                    r2 += d * d;
                }
                if r2 < radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            Domain::Fraction { values } => values[idx],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.weight(idx) > 0.0
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.cells == other.cells && self.lo == other.lo && self.hi == other.hi
    }

    /// Half-open index range of cells whose centre lies in `[a, b)`.
    pub fn index_range(&self, axis: usize, a: f64, b: f64) -> (usize, usize) {
        let h = self.h(axis);
        let n = self.cells[axis] as f64;
        let f = |t: f64| ((t - self.lo[axis]) / h - 0.5 - 1e-9).ceil().clamp(0.0, n) as usize;
        let (i0, i1) = (f(a), f(b));
        (i0, i1.max(i0))
    }

    /// Visit every cell of an index box in lexicographic order.
    pub fn for_each_in_box(&self, ranges: &[(usize, usize)], mut f: impl FnMut(usize)) {
        let n = self.n();
        if ranges.iter().any(|&(a, b)| a >= b) {
            return;
        }
        let mut m: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        let s0 = ranges[0];
        loop {
            let base = self.index(&m);
            for k in 0..(s0.1 - s0.0) {
                f(base + k);
            }
            let mut a = 1;
            loop {
                if a >= n {
                    return;
                }
                m[a] += 1;
                if m[a] < ranges[a].1 {
                    break;
                }
                m[a] = ranges[a].0;
                a += 1;
            }
        }
    }

    /// Distance from a point to the boundary of the bounding box.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..self.n() {
            d = d.min(x[a] - self.lo[a]).min(self.hi[a] - x[a]);
        }
        if let Domain::Ball { center, radius } = &self.domain {
            let r = dist(x, center);
            d = d.min(radius - r);
        }
        d
    }

    pub fn domain_center(&self) -> Vec<f64> {
        match &self.domain {
            Domain::Ball { center, .. } => center.clone(),
            _ => (0..self.n()).map(|a| 0.5 * (self.lo[a] + self.hi[a])).collect(),
        }
    }
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
    pub level: usize,
}

impl Cube {
    pub fn contains(&self, x: &[f64]) -> bool {
        let h = 0.5 * self.side;
        x.iter().zip(&self.center).all(|(xi, ci)| *xi >= ci - h && *xi < ci + h)
    }

    /// Index box of the cells whose centres the cube contains.
    pub fn ranges(&self, grid: &Grid) -> Vec<(usize, usize)> {
        (0..grid.n())
            .map(|a| grid.index_range(a, self.center[a] - 0.5 * self.side, self.center[a] + 0.5 * self.side))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Ball { center, radius }
    }
    pub fn contains(&self, x: &[f64]) -> bool {
        dist(x, &self.center) < self.radius
    }
    pub fn scaled(&self, r: f64) -> Ball {
        Ball { center: self.center.clone(), radius: self.radius * r }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Cube(Cube),
    Ball(Ball),
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
    Domain,
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Cube(c) => c.contains(x),
            Region::Ball(b) => b.contains(x),
            Region::Annulus { center, inner, outer } => {
                let r = dist(x, center);
                r > *inner && r < *outer
            }
            Region::Domain => true,
        }
    }

    /// Index box enclosing the region.
    pub fn ranges(&self, grid: &Grid) -> Vec<(usize, usize)> {
        let around = |c: &[f64], r: f64| -> Vec<(usize, usize)> {
            (0..grid.n()).map(|a| grid.index_range(a, c[a] - r, c[a] + r + grid.h(a))).collect()
        };
        match self {
            Region::Cube(c) => c.ranges(grid),
            Region::Ball(b) => around(&b.center, b.radius),
            Region::Annulus { center, outer, .. } => around(center, *outer),
            Region::Domain => grid.cells().iter().map(|&n| (0, n)).collect(),
        }
    }

    /// Visit the domain cells whose centre lies in the region.
    pub fn for_each_cell(&self, grid: &Grid, mut f: impl FnMut(usize)) {
        let ranges = self.ranges(grid);
        let mut x = vec![0.0; grid.n()];
        let exact_box = matches!(self, Region::Cube(_) | Region::Domain);
        grid.for_each_in_box(&ranges, |i| {
            if grid.weight(i) <= 0.0 {
                return;
            }
            if !exact_box {
                grid.center_into(i, &mut x);
                if !self.contains(&x) {
                    return;
                }
            }
            f(i)
        });
    }

    pub fn cells(&self, grid: &Grid) -> Vec<usize> {
        let mut v = Vec::new();
        self.for_each_cell(grid, |i| v.push(i));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(vec![0.0], vec![0.0], vec![4]).is_err());
        assert!(Grid::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(Grid::new(vec![0.0, 0.0], vec![1.0], vec![4]).is_err());
    }

    #[test]
    fn centers_avoid_faces() {
        let g = Grid::unit_square(4).unwrap();
        assert_eq!(g.center(0), vec![0.125, 0.125]);
        assert_eq!(g.center(5), vec![0.375, 0.375]);
        assert_eq!(g.index(&[1, 2]), 9);
        assert_eq!(g.multi(9), vec![1, 2]);
    }

    #[test]
    fn box_iteration_is_lexicographic() {
        let g = Grid::unit_square(4).unwrap();
        let mut seen = vec![];
        g.for_each_in_box(&[(1, 3), (2, 4)], |i| seen.push(i));
        assert_eq!(seen, vec![9, 10, 13, 14]);
    }

    #[test]
    fn dyadic_cube_ranges_tile() {
        let g = Grid::unit_square(8).unwrap();
        let c = Cube { center: vec![0.25, 0.75], side: 0.5, level: 1 };
        assert_eq!(c.ranges(&g), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn ball_domain_masks_cells() {
        let g = Grid::cube(2, -1.0, 1.0, 8).unwrap().with_ball_domain(vec![0.0, 0.0], 1.0).unwrap();
        let active = (0..g.len()).filter(|&i| g.is_active(i)).count();
        assert_eq!(active, 52);
        assert_eq!(g.weight(0), 0.0);
    }

    #[test]
    fn annulus_membership() {
        let g = Grid::cube(2, -1.0, 1.0, 16).unwrap();
        let r = Region::Annulus { center: vec![0.0, 0.0], inner: 0.3, outer: 0.7 };
        for i in r.cells(&g) {
            let x = g.center(i);
            let d = dist(&x, &[0.0, 0.0]);
            assert!(d > 0.3 && d < 0.7);
        }
    }
}
