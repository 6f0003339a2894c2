use std::f64::consts::TAU;

use nalgebra::DVector;
use serde::Serialize;

use crate::algebra::Element;
use crate::error::{Error, Result};
use crate::group::{wrap_angle, SemidirectGroup, SemidirectPoint};

/// Upper limit on the number of grid cells.
pub const MAX_NODES: u64 = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axis {
    /// Angles with centers `k 2pi / cells`.
    Periodic { cells: usize },
    /// `[lo, hi]` with centers `lo + (k + 1/2) (hi - lo) / cells`.
    Interval { lo: f64, hi: f64, cells: usize },
}

impl Axis {
    pub fn cells(&self) -> usize {
        match *self {
            Axis::Periodic { cells } | Axis::Interval { cells, .. } => cells,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            Axis::Periodic { cells } => TAU / cells as f64,
            Axis::Interval { lo, hi, cells } => (hi - lo) / cells as f64,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Axis::Periodic { .. })
    }

    pub fn center(&self, k: usize) -> f64 {
        match *self {
            Axis::Periodic { .. } => k as f64 * self.width(),
            Axis::Interval { lo, .. } => lo + (k as f64 + 0.5) * self.width(),
        }
    }

    /// Cell containing `v`; `None` outside an interval axis.
    pub fn locate(&self, v: f64) -> Option<usize> {
        let w = self.width();
        match *self {
            Axis::Periodic { cells } => {
                let k = (wrap_angle(v + w / 2.0) / w).floor() as usize;
                Some(k.min(cells - 1))
            }
            Axis::Interval { lo, hi, cells } => {
                if v < lo || v > hi || v.is_nan() {
                    None
                } else {
                    Some((((v - lo) / w).floor() as usize).min(cells - 1))
                }
            }
        }
    }

    /// Indices of cells whose center lies in `[a, b]` (wrapping on periodic
    /// axes), ascending and without repeats.
    pub fn centers_within(&self, a: f64, b: f64) -> Vec<usize> {
        let w = self.width();
        match *self {
            Axis::Periodic { cells } => {
                if b - a >= TAU {
                    return (0..cells).collect();
                }
                let k0 = (a / w).ceil() as i64;
                let k1 = (b / w).floor() as i64;
                let mut out: Vec<usize> = (k0..=k1).map(|k| k.rem_euclid(cells as i64) as usize).collect();
                out.sort_unstable();
                out.dedup();
                out
            }
            Axis::Interval { lo, cells, .. } => {
                let k0 = ((a - lo) / w - 0.5).ceil().max(0.0);
                let k1 = ((b - lo) / w - 0.5).floor().min(cells as f64 - 1.0);
                if k1 < k0 {
                    return Vec::new();
                }
                (k0 as usize..=k1 as usize).collect()
            }
        }
    }
}

/// Product grid over torus angles followed by nilpotent coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct GridWindow {
    axes: Vec<Axis>,
    torus_dim: usize,
    delta: f64,
    #[serde(skip)]
    strides: Vec<u64>,
}

impl GridWindow {
    /// `lo`/`hi` give the box for the nilpotent coordinates; entries for
    /// periodic coordinates are ignored. Interval axes get
    /// `ceil((hi - lo) / delta)` cells.
    pub fn new(group: &SemidirectGroup, torus_cells: usize, lo: &[f64], hi: &[f64], delta: f64) -> Result<Self> {
        let n = group.dim();
        if lo.len() != n || hi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: lo.len().min(hi.len()),
            });
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("cell size delta must be positive".into()));
        }
        let mut axes = Vec::with_capacity(group.torus_dim() + n);
        let needs_torus = group.torus_dim() > 0 || !group.periodic().is_empty();
        if needs_torus && torus_cells == 0 {
            return Err(Error::EmptyWindow);
        }
        for _ in 0..group.torus_dim() {
            axes.push(Axis::Periodic { cells: torus_cells });
        }
        for k in 0..n {
            if group.is_periodic(k) {
                axes.push(Axis::Periodic { cells: torus_cells });
            } else {
                if !(hi[k] > lo[k]) {
                    return Err(Error::EmptyWindow);
                }
                let cells = (((hi[k] - lo[k]) / delta) - 1e-9).ceil().max(1.0) as usize;
                axes.push(Axis::Interval {
                    lo: lo[k],
                    hi: hi[k],
                    cells,
                });
            }
        }
        Self::from_axes(axes, group.torus_dim(), delta)
    }

    /// Box `[-w_k, w_k]` widened so every interval axis has an odd number of
    /// cells of size exactly `delta` (so 0 is a cell center).
    pub fn symmetric(group: &SemidirectGroup, torus_cells: usize, half_widths: &[f64], delta: f64) -> Result<Self> {
        let n = group.dim();
        if half_widths.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: half_widths.len(),
            });
        }
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for k in 0..n {
            let half_cells = (half_widths[k] / delta - 0.5).ceil().max(0.0);
            let w = (2.0 * half_cells + 1.0) * delta / 2.0;
            lo[k] = -w;
            hi[k] = w;
        }
        Self::new(group, torus_cells, &lo, &hi, delta)
    }

    fn from_axes(axes: Vec<Axis>, torus_dim: usize, delta: f64) -> Result<Self> {
        let mut strides = Vec::with_capacity(axes.len());
        let mut total: u64 = 1;
        for a in &axes {
            strides.push(total);
            total = total
                .checked_mul(a.cells() as u64)
                .filter(|t| *t <= MAX_NODES)
                .ok_or_else(|| Error::InvalidArgument(format!("grid exceeds {MAX_NODES} cells")))?;
        }
        Ok(GridWindow {
            axes,
            torus_dim,
            delta,
            strides,
        })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn torus_dim(&self) -> usize {
        self.torus_dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn node_count(&self) -> u64 {
        self.axes.iter().map(|a| a.cells() as u64).product()
    }

    pub fn index_of(&self, idx: &[usize]) -> u64 {
        idx.iter().zip(&self.strides).map(|(i, s)| *i as u64 * s).sum()
    }

    pub fn multi_index(&self, id: u64) -> Vec<usize> {
        let mut rem = id;
        self.axes
            .iter()
            .map(|a| {
                let c = a.cells() as u64;
                let k = rem % c;
                rem /= c;
                k as usize
            })
            .collect()
    }

    /// Coordinates (torus angles then nilpotent coordinates) of a center.
    pub fn center_coords(&self, id: u64) -> Vec<f64> {
        self.multi_index(id)
            .iter()
            .zip(&self.axes)
            .map(|(k, a)| a.center(*k))
            .collect()
    }

    pub fn center(&self, id: u64) -> SemidirectPoint {
        let c = self.center_coords(id);
        let m = self.torus_dim;
        SemidirectPoint::new(DVector::from_row_slice(&c[..m]), Element::from_row_slice(&c[m..]))
    }

    pub fn coords_of(&self, p: &SemidirectPoint) -> Vec<f64> {
        p.h.iter().chain(p.x.iter()).copied().collect()
    }

    pub fn locate(&self, p: &SemidirectPoint) -> Option<u64> {
        let c = self.coords_of(p);
        let mut idx = Vec::with_capacity(c.len());
        for (v, a) in c.iter().zip(&self.axes) {
            idx.push(a.locate(*v)?);
        }
        Some(self.index_of(&idx))
    }

    /// Per-axis margin for the inflated window.
    pub fn margins(&self, eps: f64) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| match *a {
                Axis::Periodic { .. } => f64::INFINITY,
                Axis::Interval { lo, hi, .. } => (eps + self.delta).max(0.1 * (hi - lo) / 2.0),
            })
            .collect()
    }

    /// Whether the nilpotent coordinates lie inside the window widened by
    /// `margins` (periodic axes always pass).
    pub fn inside_inflated(&self, x: &[f64], margins: &[f64]) -> bool {
        let m = self.torus_dim;
        for (k, v) in x.iter().enumerate() {
            if let Axis::Interval { lo, hi, .. } = self.axes[m + k] {
                let g = margins[m + k];
                if *v < lo - g || *v > hi + g {
                    return false;
                }
            }
        }
        true
    }

    /// Interval axes along which the cell lies in the outer layer.
    pub fn boundary_axes(&self, id: u64) -> Vec<usize> {
        self.multi_index(id)
            .iter()
            .zip(&self.axes)
            .enumerate()
            .filter_map(|(ax, (k, a))| match a {
                Axis::Interval { cells, .. } if *k == 0 || *k + 1 == *cells => Some(ax),
                _ => None,
            })
            .collect()
    }

    /// Torus fiber over the identity: every periodic combination with the
    /// cell containing 0 on each interval axis.
    pub fn central_fiber(&self) -> Vec<u64> {
        let mut zero_idx = Vec::with_capacity(self.axes.len());
        let mut free = Vec::new();
        for (ax, a) in self.axes.iter().enumerate() {
            if a.is_periodic() {
                free.push(ax);
                zero_idx.push(0);
            } else {
                match a.locate(0.0) {
                    Some(k) => zero_idx.push(k),
                    None => return Vec::new(),
                }
            }
        }
        let mut out = Vec::new();
        let total: usize = free.iter().map(|&ax| self.axes[ax].cells()).product();
        for combo in 0..total {
            let mut rem = combo;
            let mut idx = zero_idx.clone();
            for &ax in &free {
                let c = self.axes[ax].cells();
                idx[ax] = rem % c;
                rem /= c;
            }
            out.push(self.index_of(&idx));
        }
        out.sort_unstable();
        out
    }

    /// Identifier of the cell containing the identity, if inside.
    pub fn identity_cell(&self) -> Option<u64> {
        let idx: Option<Vec<usize>> = self.axes.iter().map(|a| a.locate(0.0)).collect();
        idx.map(|i| self.index_of(&i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::NilpotentAlgebra;
    use nalgebra::DMatrix;

    fn plane() -> SemidirectGroup {
        SemidirectGroup::nilpotent(NilpotentAlgebra::preset("abelian:2").unwrap())
    }

    #[test]
    fn interval_axis_layout() {
        let a = Axis::Interval { lo: -2.0, hi: 2.0, cells: 80 };
        assert!((a.width() - 0.05).abs() < 1e-15);
        assert!((a.center(0) + 1.975).abs() < 1e-12);
        assert_eq!(a.locate(-2.0), Some(0));
        assert_eq!(a.locate(2.0), Some(79));
        assert_eq!(a.locate(2.1), None);
        assert_eq!(a.centers_within(-0.06, 0.06), vec![39, 40]);
    }

    #[test]
    fn periodic_axis_wraps() {
        let a = Axis::Periodic { cells: 8 };
        assert_eq!(a.locate(-0.1), Some(0));
        assert_eq!(a.locate(TAU - 0.5), Some(7));
        assert_eq!(a.centers_within(-0.9, 0.9), vec![0, 1, 7]);
        assert_eq!(a.centers_within(0.0, 7.0).len(), 8);
    }

    #[test]
    fn ids_round_trip() {
        let g = plane();
        let w = GridWindow::new(&g, 0, &[-1.0, -2.0], &[1.0, 2.0], 0.5).unwrap();
        assert_eq!(w.node_count(), 4 * 8);
        for id in 0..w.node_count() {
            assert_eq!(w.locate(&w.center(id)), Some(id));
        }
    }

    #[test]
    fn symmetric_window_centers_zero() {
        let g = plane();
        let w = GridWindow::symmetric(&g, 0, &[1.6, 0.2], 0.1).unwrap();
        assert_eq!(w.axes()[0].cells(), 33);
        let id = w.identity_cell().unwrap();
        assert!(w.center(id).x.amax() < 1e-12);
        assert_eq!(w.central_fiber(), vec![id]);
    }

    #[test]
    fn fiber_covers_torus() {
        let alg = NilpotentAlgebra::preset("abelian:2").unwrap();
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let g = SemidirectGroup::new(alg, 1, vec![r], vec![]).unwrap();
        let w = GridWindow::symmetric(&g, 16, &[1.0, 1.0], 0.25).unwrap();
        let fiber = w.central_fiber();
        assert_eq!(fiber.len(), 16);
        for id in fiber {
            assert!(w.center(id).x.amax() < 1e-12);
        }
        assert!(matches!(GridWindow::new(&g, 0, &[-1.0; 2], &[1.0; 2], 0.1), Err(Error::EmptyWindow)));
    }

    #[test]
    fn node_limit() {
        let g = plane();
        assert!(GridWindow::new(&g, 0, &[-1e4, -1e4], &[1e4, 1e4], 1e-3).is_err());
    }
}
