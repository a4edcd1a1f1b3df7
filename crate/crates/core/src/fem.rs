//! Finite element matrices on periodic tensor grids: P1 in 1D, bilinear Q1
//! in 2D. Every matrix assembled here on a given grid has the same sparsity
//! pattern, so they can be combined entrywise.

use crate::linalg::CsrMatrix;
use crate::mesh::{CoarseFineMap, PeriodicGrid};
use crate::{Error, Result};

/// 1D reference matrices on a cell of unit length.
const K1: [[f64; 2]; 2] = [[1.0, -1.0], [-1.0, 1.0]];
const M1: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];

/// ∫₀¹ φ_a φ_b φ_c for the two linear shape functions.
fn triple1(a: usize, b: usize, c: usize) -> f64 {
    if a == b && b == c {
        0.25
    } else {
        1.0 / 12.0
    }
}

fn assemble_with<F>(grid: &PeriodicGrid, local: F) -> CsrMatrix<f64>
where
    F: Fn(usize, &[usize], &mut [[f64; 4]; 4]),
{
    let mut trip = Vec::with_capacity(grid.num_cells() * if grid.dim() == 1 { 4 } else { 16 });
    let mut ke = [[0.0; 4]; 4];
    for c in 0..grid.num_cells() {
        let (nodes, nloc) = grid.cell_nodes(c);
        local(c, &nodes[..nloc], &mut ke);
        for a in 0..nloc {
            for b in 0..nloc {
                trip.push((nodes[a], nodes[b], ke[a][b]));
            }
        }
    }
    let n = grid.num_nodes();
    CsrMatrix::from_triplets(n, n, &trip)
}

/// Element stiffness matrix, local node order of [`PeriodicGrid::cell_nodes`].
pub fn element_stiffness(grid: &PeriodicGrid) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    if grid.dim() == 1 {
        let h = grid.spacing(0);
        for a in 0..2 {
            for b in 0..2 {
                k[a][b] = K1[a][b] / h;
            }
        }
    } else {
        let (hx, hy) = (grid.spacing(0), grid.spacing(1));
        for a in 0..4 {
            for b in 0..4 {
                let (ax, ay, bx, by) = (a % 2, a / 2, b % 2, b / 2);
                k[a][b] = K1[ax][bx] / hx * M1[ay][by] * hy + M1[ax][bx] * hx * K1[ay][by] / hy;
            }
        }
    }
    k
}

fn element_mass(grid: &PeriodicGrid) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    if grid.dim() == 1 {
        let h = grid.spacing(0);
        for a in 0..2 {
            for b in 0..2 {
                m[a][b] = M1[a][b] * h;
            }
        }
    } else {
        let (hx, hy) = (grid.spacing(0), grid.spacing(1));
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] = M1[a % 2][b % 2] * hx * M1[a / 2][b / 2] * hy;
            }
        }
    }
    m
}

pub fn assemble_stiffness(grid: &PeriodicGrid) -> CsrMatrix<f64> {
    let k = element_stiffness(grid);
    assemble_with(grid, |_, _, ke| *ke = k)
}

pub fn assemble_mass(grid: &PeriodicGrid) -> CsrMatrix<f64> {
    let m = element_mass(grid);
    assemble_with(grid, |_, _, me| *me = m)
}

/// `V_ij = ∫ v φ_i φ_j` with `v` the piecewise (bi)linear interpolant of the
/// nodal values; integrated exactly.
pub fn assemble_potential(grid: &PeriodicGrid, values: &[f64]) -> Result<CsrMatrix<f64>> {
    if values.len() != grid.num_nodes() {
        return Err(Error::Dimension(format!(
            "potential has {} values, grid has {} nodes",
            values.len(),
            grid.num_nodes()
        )));
    }
    let dim = grid.dim();
    let vol = grid.cell_volume();
    Ok(assemble_with(grid, |_, nodes, ve| {
        let n = nodes.len();
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    let w = if dim == 1 {
                        triple1(a, b, c)
                    } else {
                        triple1(a % 2, b % 2, c % 2) * triple1(a / 2, b / 2, c / 2)
                    };
                    s += w * values[nodes[c]];
                }
                ve[a][b] = s * vol;
            }
        }
    }))
}

/// `Q = (ε²/2) S + V + shift·M`.
pub fn assemble_q(s: &CsrMatrix<f64>, v: &CsrMatrix<f64>, m: &CsrMatrix<f64>, eps: f64, shift: f64) -> CsrMatrix<f64> {
    let q = s.lin_comb(0.5 * eps * eps, v, 1.0);
    if shift != 0.0 {
        q.lin_comb(1.0, m, shift)
    } else {
        q
    }
}

/// Constraint matrix `A = Pᵀ M` (N_H × N_h): row `k` is the fine mass matrix
/// applied to the coarse hat at `k`.
pub fn assemble_constraints(map: &CoarseFineMap, m: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    map.prolongation().transpose().matmul(m)
}

/// Stiffness energy `cᵀ K_e c` of each fine cell.
pub fn cell_energies(grid: &PeriodicGrid, c: &[f64]) -> Vec<f64> {
    let k = element_stiffness(grid);
    (0..grid.num_cells())
        .map(|cell| {
            let (nodes, n) = grid.cell_nodes(cell);
            let mut e = 0.0;
            for a in 0..n {
                for b in 0..n {
                    e += c[nodes[a]] * k[a][b] * c[nodes[b]];
                }
            }
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn grid(dim: usize, n: usize) -> PeriodicGrid {
        PeriodicGrid::periodic_pi(dim, n).unwrap()
    }

    /// Brute-force assembly with a tensor Gauss rule on each cell, evaluating
    /// the global hat functions directly from their definition.
    fn dense_oracle(g: &PeriodicGrid, v: &dyn Fn(usize) -> f64, which: u8) -> DMatrix<f64> {
        let n = g.num_nodes();
        let gp = [
            0.5 - 0.5 * (3.0f64 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt(),
            0.5 - 0.5 * (3.0f64 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt(),
            0.5 + 0.5 * (3.0f64 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt(),
            0.5 + 0.5 * (3.0f64 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt(),
        ];
        let w1 = (18.0 - 30f64.sqrt()) / 72.0;
        let w2 = (18.0 + 30f64.sqrt()) / 72.0;
        let gw = [w1, w2, w2, w1];
        let mut out = DMatrix::zeros(n, n);
        let pts: Vec<(f64, f64, f64)> = if g.dim() == 1 {
            (0..4).map(|i| (gp[i], 0.0, gw[i])).collect()
        } else {
            (0..16).map(|i| (gp[i % 4], gp[i / 4], gw[i % 4] * gw[i / 4])).collect()
        };
        for c in 0..g.num_cells() {
            let (nodes, nl) = g.cell_nodes(c);
            for &(s, t, w) in &pts {
                // shape values and reference gradients
                let mut phi = [0.0; 4];
                let mut dx = [0.0; 4];
                let mut dy = [0.0; 4];
                for a in 0..nl {
                    let (fx, gx) = if a % 2 == 0 { (1.0 - s, -1.0) } else { (s, 1.0) };
                    let (fy, gy) = if a / 2 == 0 { (1.0 - t, -1.0) } else { (t, 1.0) };
                    if g.dim() == 1 {
                        phi[a] = fx;
                        dx[a] = gx / g.spacing(0);
                    } else {
                        phi[a] = fx * fy;
                        dx[a] = gx * fy / g.spacing(0);
                        dy[a] = fx * gy / g.spacing(1);
                    }
                }
                let vq: f64 = (0..nl).map(|a| phi[a] * v(nodes[a])).sum();
                for a in 0..nl {
                    for b in 0..nl {
                        let val = match which {
                            0 => dx[a] * dx[b] + dy[a] * dy[b],
                            1 => phi[a] * phi[b],
                            _ => vq * phi[a] * phi[b],
                        };
                        out[(nodes[a], nodes[b])] += w * g.cell_volume() * val;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn stencils_1d() {
        let g = grid(1, 16);
        let h = g.spacing(0);
        let s = assemble_stiffness(&g);
        let m = assemble_mass(&g);
        assert!((s.get(3, 3) - 2.0 / h).abs() < 1e-12);
        assert!((s.get(3, 4) + 1.0 / h).abs() < 1e-12);
        assert!((s.get(0, 15) + 1.0 / h).abs() < 1e-12);
        assert!((m.get(3, 3) - 2.0 * h / 3.0).abs() < 1e-14);
        assert!((m.get(3, 2) - h / 6.0).abs() < 1e-14);
        for i in 0..16 {
            assert!(s.row(i).map(|e| e.1).sum::<f64>().abs() < 1e-12);
        }
        let total: f64 = m.values().iter().sum();
        assert!((total - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn matches_quadrature_oracle() {
        for (dim, n) in [(1, 12), (2, 6)] {
            let g = grid(dim, n);
            let vals: Vec<f64> = (0..g.num_nodes()).map(|i| ((i * 7 % 5) as f64 - 1.3).sin()).collect();
            let v = |i: usize| vals[i];
            let pairs = [
                (assemble_stiffness(&g), 0u8),
                (assemble_mass(&g), 1),
                (assemble_potential(&g, &vals).unwrap(), 2),
            ];
            for (mat, which) in pairs {
                let oracle = dense_oracle(&g, &v, which);
                let diff = (mat.to_dense() - oracle).abs().max();
                assert!(diff < 1e-12, "dim {dim} kind {which}: {diff}");
                assert!(mat.asymmetry() < 1e-14);
            }
        }
    }

    #[test]
    fn stiffness_2d_has_one_zero_mode() {
        let g = grid(2, 4);
        let s = assemble_stiffness(&g).to_dense();
        let e = s.symmetric_eigenvalues();
        let zeros = e.iter().filter(|x| x.abs() < 1e-10).count();
        assert_eq!(zeros, 1);
        assert!(e.iter().all(|&x| x > -1e-10));
    }

    #[test]
    fn constant_potential_is_scaled_mass() {
        for dim in [1, 2] {
            let g = grid(dim, 8);
            let v = assemble_potential(&g, &vec![2.5; g.num_nodes()]).unwrap();
            let m = assemble_mass(&g);
            assert!(v.same_pattern(&m));
            let d = v.lin_comb(1.0, &m, -2.5);
            assert!(d.values().iter().all(|x| x.abs() < 1e-13));
        }
    }

    #[test]
    fn nonnegative_potential_gives_psd_matrix() {
        let g = grid(1, 20);
        let vals: Vec<f64> = (0..20).map(|i| (i as f64).cos().abs()).collect();
        let e = assemble_potential(&g, &vals).unwrap().to_dense().symmetric_eigenvalues();
        assert!(e.iter().all(|&x| x > -1e-13));
    }

    #[test]
    fn shift_moves_generalized_spectrum() {
        let g = grid(1, 10);
        let s = assemble_stiffness(&g);
        let m = assemble_mass(&g);
        let v = assemble_potential(&g, &g.eval(|x| x[0].sin())).unwrap();
        let eps = 0.3;
        let spec = |q: &CsrMatrix<f64>| {
            let md = m.to_dense();
            let l = md.clone().cholesky().unwrap().l();
            let li = l.clone().try_inverse().unwrap();
            let c = &li * q.to_dense() * li.transpose();
            let mut e: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            e.sort_by(|a, b| a.partial_cmp(b).unwrap());
            e
        };
        let e0 = spec(&assemble_q(&s, &v, &m, eps, 0.0));
        let e1 = spec(&assemble_q(&s, &v, &m, eps, 1.7));
        for (a, b) in e0.iter().zip(&e1) {
            assert!((b - a - 1.7).abs() < 1e-10);
        }
        let q = assemble_q(&s, &CsrMatrix::from_triplets(10, 10, &[]), &m, 2f64.sqrt(), 0.0);
        for i in 0..10 {
            for (j, x) in q.row(i) {
                assert!((x - s.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constraint_matrix_properties() {
        let c = grid(1, 8);
        let f = grid(1, 32);
        let map = CoarseFineMap::new(c.clone(), f.clone()).unwrap();
        let m = assemble_mass(&f);
        let a = assemble_constraints(&map, &m);
        assert_eq!((a.nrows(), a.ncols()), (8, 32));
        let hc = c.spacing(0);
        for k in 0..8 {
            let sum: f64 = a.row(k).map(|e| e.1).sum();
            assert!((sum - hc).abs() < 1e-12);
        }
        let sv = a.to_dense().singular_values();
        assert!(sv.iter().all(|&x| x > 1e-8));
        let same = CoarseFineMap::new(f.clone(), f.clone()).unwrap();
        let a1 = assemble_constraints(&same, &m);
        assert!((a1.to_dense() - m.to_dense()).abs().max() < 1e-15);
    }
}
