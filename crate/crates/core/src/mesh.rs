//! Uniform periodic tensor grids in one and two dimensions.
//!
//! Nodes are numbered with the first axis fastest. Cell `c` has the same
//! multi-index as its lower-left node, so there are as many cells as nodes.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    dim: usize,
    lower: [f64; 2],
    length: [f64; 2],
    n_cells: [usize; 2],
    spacing: [f64; 2],
}

impl PeriodicGrid {
    pub fn new(dim: usize, lower: &[f64], length: &[f64], n_cells: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        if lower.len() != dim || length.len() != dim || n_cells.len() != dim {
            return Err(Error::Dimension(format!("grid description does not have {dim} axes")));
        }
        let mut g = Self { dim, lower: [0.0; 2], length: [1.0; 2], n_cells: [1; 2], spacing: [1.0; 2] };
        for a in 0..dim {
            if n_cells[a] < 2 {
                return Err(Error::InvalidArgument(format!(
                    "cell count along axis {a} must be at least 2, got {}",
                    n_cells[a]
                )));
            }
            if !(length[a] > 0.0) || !length[a].is_finite() {
                return Err(Error::InvalidArgument(format!("axis {a} has non-positive length")));
            }
            g.lower[a] = lower[a];
            g.length[a] = length[a];
            g.n_cells[a] = n_cells[a];
            g.spacing[a] = length[a] / n_cells[a] as f64;
        }
        Ok(g)
    }

    /// Grid on `[-π, π)^dim` with `n` cells per axis.
    pub fn periodic_pi(dim: usize, n: usize) -> Result<Self> {
        let pi = std::f64::consts::PI;
        Self::new(dim, &vec![-pi; dim], &vec![2.0 * pi; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self, axis: usize) -> usize {
        self.n_cells[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.length[axis]
    }

    pub fn num_nodes(&self) -> usize {
        self.n_cells[..self.dim].iter().product()
    }

    pub fn num_cells(&self) -> usize {
        self.num_nodes()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.length[..self.dim].iter().product()
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.n_cells[0], idx / self.n_cells[0]]
        }
    }

    /// Flat index of a possibly out-of-range multi-index, wrapped periodically.
    pub fn wrap_index(&self, multi: [i64; 2]) -> usize {
        let i0 = multi[0].rem_euclid(self.n_cells[0] as i64) as usize;
        if self.dim == 1 {
            i0
        } else {
            let i1 = multi[1].rem_euclid(self.n_cells[1] as i64) as usize;
            i0 + self.n_cells[0] * i1
        }
    }

    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = self.lower[a] + m[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Node coordinates along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.n_cells[axis]).map(|i| self.lower[axis] + i as f64 * self.spacing[axis]).collect()
    }

    /// Nodes of cell `c` in local order (first axis fastest).
    pub fn cell_nodes(&self, c: usize) -> ([usize; 4], usize) {
        let m = self.multi_index(c);
        let (i, j) = (m[0] as i64, m[1] as i64);
        if self.dim == 1 {
            ([self.wrap_index([i, 0]), self.wrap_index([i + 1, 0]), 0, 0], 2)
        } else {
            (
                [
                    self.wrap_index([i, j]),
                    self.wrap_index([i + 1, j]),
                    self.wrap_index([i, j + 1]),
                    self.wrap_index([i + 1, j + 1]),
                ],
                4,
            )
        }
    }

    /// Evaluates `f` at every node.
    pub fn eval<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.num_nodes()).map(|i| f(self.coord(i))).collect()
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self == other
    }
}

/// Nested coarse and fine grids over the same domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseFineMap {
    pub coarse: PeriodicGrid,
    pub fine: PeriodicGrid,
    refinement: [usize; 2],
}

/// Nested fine-node sets of the patches around a coarse node, `layers[ℓ]`
/// being `D_ℓ`. Each set is sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFamily {
    pub center_node: usize,
    pub layers: Vec<Vec<usize>>,
}

impl CoarseFineMap {
    pub fn new(coarse: PeriodicGrid, fine: PeriodicGrid) -> Result<Self> {
        if coarse.dim != fine.dim {
            return Err(Error::Dimension("coarse and fine grids differ in dimension".into()));
        }
        let mut refinement = [1; 2];
        for a in 0..coarse.dim {
            let (nc, nf) = (coarse.n_cells[a], fine.n_cells[a]);
            if nf % nc != 0 || coarse.lower[a] != fine.lower[a] || coarse.length[a] != fine.length[a] {
                return Err(Error::InvalidArgument(format!(
                    "fine grid ({nf} cells) is not nested in coarse grid ({nc} cells) along axis {a}"
                )));
            }
            refinement[a] = nf / nc;
        }
        Ok(Self { coarse, fine, refinement })
    }

    pub fn refinement(&self, axis: usize) -> usize {
        self.refinement[axis]
    }

    fn dim(&self) -> usize {
        self.coarse.dim
    }

    fn check_node(&self, k: usize) -> Result<()> {
        if k >= self.coarse.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "coarse node {k} out of range (grid has {})",
                self.coarse.num_nodes()
            )));
        }
        Ok(())
    }

    /// Fine-grid index of a coarse node.
    pub fn fine_index_of(&self, k: usize) -> usize {
        let m = self.coarse.multi_index(k);
        self.fine.wrap_index([(m[0] * self.refinement[0]) as i64, (m[1] * self.refinement[1]) as i64])
    }

    /// Nonzero values of the coarse hat at `k` on the fine nodes, as
    /// `(fine index, weight)` pairs sorted by index.
    pub fn nodal_basis_on_fine(&self, k: usize) -> Result<Vec<(usize, f64)>> {
        self.check_node(k)?;
        let m = self.coarse.multi_index(k);
        let mut axis_weights: [Vec<(i64, f64)>; 2] = [vec![(0, 1.0)], vec![(0, 1.0)]];
        for a in 0..self.dim() {
            let r = self.refinement[a] as i64;
            let c = (m[a] as i64) * r;
            axis_weights[a] = (-(r - 1)..=(r - 1))
                .map(|o| (c + o, 1.0 - (o.abs() as f64) / r as f64))
                .collect();
        }
        let mut out = Vec::new();
        for &(j, wy) in &axis_weights[1] {
            for &(i, wx) in &axis_weights[0] {
                out.push((self.fine.wrap_index([i, j]), wx * wy));
            }
        }
        out.sort_by_key(|e| e.0);
        // With two coarse cells per axis the same fine node can be reached
        // from both sides; merge those.
        out.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        Ok(out)
    }

    pub fn nodal_basis_dense(&self, k: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.fine.num_nodes()];
        for (i, w) in self.nodal_basis_on_fine(k)? {
            v[i] = w;
        }
        Ok(v)
    }

    /// Coarse cells of `D_ℓ` along one axis, or `None` when the patch wraps
    /// around the whole axis.
    fn patch_cell_range(&self, k: usize, layer: usize, axis: usize) -> Option<(i64, i64)> {
        let nc = self.coarse.n_cells[axis];
        if 2 + 2 * layer >= nc {
            return None;
        }
        let m = self.coarse.multi_index(k)[axis] as i64;
        Some((m - 1 - layer as i64, m + layer as i64))
    }

    fn collect_nodes(&self, k: usize, layer: usize, interior: bool) -> Vec<usize> {
        let mut axis_nodes: [Vec<i64>; 2] = [vec![0], vec![0]];
        for a in 0..self.dim() {
            let r = self.refinement[a] as i64;
            axis_nodes[a] = match self.patch_cell_range(k, layer, a) {
                None => (0..self.fine.n_cells[a] as i64).collect(),
                Some((c0, c1)) => {
                    let (lo, hi) = (c0 * r, (c1 + 1) * r);
                    if interior {
                        (lo + 1..hi).collect()
                    } else {
                        (lo..=hi).collect()
                    }
                }
            };
        }
        let mut out = Vec::with_capacity(axis_nodes[0].len() * axis_nodes[1].len());
        for &j in &axis_nodes[1] {
            for &i in &axis_nodes[0] {
                out.push(self.fine.wrap_index([i, j]));
            }
        }
        out.sort_unstable();
        out
    }

    /// Closed patches `D_0 ⊂ … ⊂ D_{ℓ_max}` (all fine nodes of the covered
    /// coarse cells).
    pub fn patch_layers(&self, k: usize, l_max: usize) -> Result<PatchFamily> {
        self.check_node(k)?;
        let layers = (0..=l_max).map(|l| self.collect_nodes(k, l, false)).collect();
        Ok(PatchFamily { center_node: k, layers })
    }

    /// Fine nodes strictly inside `D_ℓ`; functions supported there vanish on
    /// the patch boundary. Equals every node once the patch saturates.
    pub fn patch_interior(&self, k: usize, layer: usize) -> Result<Vec<usize>> {
        self.check_node(k)?;
        Ok(self.collect_nodes(k, layer, true))
    }

    /// Whether `D_ℓ` covers the whole domain.
    pub fn patch_saturated(&self, layer: usize) -> bool {
        (0..self.dim()).all(|a| 2 + 2 * layer >= self.coarse.n_cells[a])
    }

    /// For each fine cell, whether it lies inside the coarse cells of `D_ℓ`.
    pub fn patch_cell_mask(&self, k: usize, layer: usize) -> Result<Vec<bool>> {
        self.check_node(k)?;
        let ranges: Vec<Option<(i64, i64)>> =
            (0..self.dim()).map(|a| self.patch_cell_range(k, layer, a)).collect();
        let mut mask = vec![true; self.fine.num_cells()];
        for (c, slot) in mask.iter_mut().enumerate() {
            let m = self.fine.multi_index(c);
            for a in 0..self.dim() {
                if let Some((c0, c1)) = ranges[a] {
                    let nc = self.coarse.n_cells[a] as i64;
                    let cc = (m[a] / self.refinement[a]) as i64;
                    let rel = (cc - c0).rem_euclid(nc);
                    if rel > c1 - c0 {
                        *slot = false;
                    }
                }
            }
        }
        Ok(mask)
    }

    /// Coarse-to-fine interpolation matrix `P` (N_h × N_H); column `k` holds
    /// the coarse hat at `k`.
    pub fn prolongation(&self) -> crate::linalg::CsrMatrix<f64> {
        let mut trip = Vec::new();
        for k in 0..self.coarse.num_nodes() {
            for (i, w) in self.nodal_basis_on_fine(k).expect("node in range") {
                trip.push((i, k, w));
            }
        }
        crate::linalg::CsrMatrix::from_triplets(self.fine.num_nodes(), self.coarse.num_nodes(), &trip)
    }
}

/// Default localization depth `⌈log₂(L/H)⌉`, using the coarsest axis.
pub fn default_l_star(coarse: &PeriodicGrid) -> usize {
    let n = (0..coarse.dim()).map(|a| coarse.n_cells(a)).max().unwrap_or(2);
    (n as f64).log2().ceil() as usize
}

/// `√V0·H/ε` and whether it is at most `threshold`.
pub fn resolution_check(eps: f64, h_coarse: f64, v0: f64, threshold: f64) -> (bool, f64) {
    let ratio = v0.max(0.0).sqrt() * h_coarse / eps;
    (ratio <= threshold, ratio)
}
