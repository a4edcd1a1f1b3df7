//! Proper orthogonal decomposition of per-node snapshot fluctuations by the
//! method of snapshots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::CsrMatrix;
use crate::ms_basis::{BasisContext, SnapshotSet};
use crate::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIG_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerProduct {
    L2,
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PodCriterion {
    Fixed(usize),
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasisSet {
    pub node: usize,
    pub support: Vec<usize>,
    pub zeta0: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    /// All positive Gram eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub inner_product: InnerProduct,
}

impl ReducedBasisSet {
    pub fn m_k(&self) -> usize {
        self.modes.len()
    }
}

/// Gram weight restricted to `support`: `M` for L², `S + M` for H¹.
pub fn weight_matrix(ctx: &BasisContext, support: &[usize], inner: InnerProduct) -> CsrMatrix<f64> {
    let m = ctx.mass.principal_submatrix(support);
    match inner {
        InnerProduct::L2 => m,
        InnerProduct::H1 => ctx.stiffness.principal_submatrix(support).lin_comb(1.0, &m, 1.0),
    }
}

/// `Σ_{s≤m_k} λ_s / Σ_s λ_s`.
pub fn energy_ratio(eigenvalues: &[f64], m_k: usize) -> f64 {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    let head: f64 = eigenvalues[..m_k.min(eigenvalues.len())].iter().sum();
    head / total
}

pub fn compute_pod(
    snapshots: &SnapshotSet,
    weight: &CsrMatrix<f64>,
    criterion: PodCriterion,
    inner_product: InnerProduct,
) -> Result<ReducedBasisSet> {
    let q = snapshots.fluctuations.len();
    if q < 2 {
        return Err(Error::InvalidArgument("POD needs at least two snapshots".into()));
    }
    match criterion {
        PodCriterion::Energy(rho) if !(rho > 0.0 && rho <= 1.0) => {
            return Err(Error::InvalidArgument(format!("energy ratio must lie in (0, 1], got {rho}")))
        }
        PodCriterion::Fixed(m) if m == 0 || m > q => {
            return Err(Error::InvalidArgument(format!("mode count must lie in 1..={q}, got {m}")))
        }
        _ => {}
    }
    let f = &snapshots.fluctuations;
    let wf: Vec<Vec<f64>> = f.iter().map(|x| weight.matvec(x)).collect();
    let mut gram = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..=i {
            let g: f64 = f[i].iter().zip(&wf[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > EIG_CUTOFF * lmax && lmax > 0.0).collect();
    let eigenvalues: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();

    let m_k = match criterion {
        PodCriterion::Fixed(m) => {
            if m > eigenvalues.len() {
                log::warn!(
                    "node {}: only {} nonzero POD eigenvalues, using that many modes instead of {m}",
                    snapshots.node,
                    eigenvalues.len()
                );
            }
            m.min(eigenvalues.len())
        }
        PodCriterion::Energy(rho) => {
            (0..=eigenvalues.len()).find(|&m| energy_ratio(&eigenvalues, m) >= rho - 1e-12).unwrap_or(eigenvalues.len())
        }
    };

    let n = snapshots.support.len();
    let modes = kept[..m_k]
        .iter()
        .map(|&s| {
            let scale = 1.0 / eig.eigenvalues[s].sqrt();
            let mut z = vec![0.0; n];
            for (qi, fq) in f.iter().enumerate() {
                let c = eig.eigenvectors[(qi, s)] * scale;
                for (zi, &x) in z.iter_mut().zip(fq) {
                    *zi += c * x;
                }
            }
            z
        })
        .collect();
    Ok(ReducedBasisSet {
        node: snapshots.node,
        support: snapshots.support.clone(),
        zeta0: snapshots.mean.clone(),
        modes,
        eigenvalues,
        inner_product,
    })
}

/// `Σ_q ‖f_q − Π f_q‖²_W / Σ_q ‖f_q‖²_W` with `Π` the W-orthogonal
/// projection onto the retained modes.
pub fn reconstruction_error_ratio(snapshots: &SnapshotSet, set: &ReducedBasisSet, weight: &CsrMatrix<f64>) -> f64 {
    let wz: Vec<Vec<f64>> = set.modes.iter().map(|z| weight.matvec(z)).collect();
    let (mut err, mut total) = (0.0, 0.0);
    for f in &snapshots.fluctuations {
        let mut r = f.clone();
        for (z, wzi) in set.modes.iter().zip(&wz) {
            let c: f64 = wzi.iter().zip(f).map(|(a, b)| a * b).sum();
            for (ri, &zi) in r.iter_mut().zip(z) {
                *ri -= c * zi;
            }
        }
        err += weight.quad_form(&r);
        total += weight.quad_form(f);
    }
    if total == 0.0 {
        0.0
    } else {
        err / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tri_weight(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 / 6.0));
            if i + 1 < n {
                t.push((i, i + 1, 1.0 / 6.0));
                t.push((i + 1, i, 1.0 / 6.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    fn set_from(samples: Vec<Vec<f64>>) -> SnapshotSet {
        let n = samples[0].len();
        let q = samples.len();
        SnapshotSet::from_samples(0, (0..n).collect(), vec![vec![]; q], samples, vec![0.0; q])
    }

    #[test]
    fn antipodal_pair_gives_one_mode() {
        let s: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let snap = set_from(vec![s.clone(), neg]);
        let w = CsrMatrix::identity(10);
        let set = compute_pod(&snap, &w, PodCriterion::Energy(0.99), InnerProduct::L2).unwrap();
        assert!(snap.mean.iter().all(|x| x.abs() < 1e-15));
        assert_eq!(set.m_k(), 1);
        assert!((energy_ratio(&set.eigenvalues, 1) - 1.0).abs() < 1e-15);
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dot: f64 = set.modes[0].iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / norm;
        assert!((dot.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_ratio_arithmetic() {
        assert_eq!(energy_ratio(&[3.0, 1.0], 1), 0.75);
        assert_eq!(energy_ratio(&[3.0, 1.0], 2), 1.0);
        let e = [5.0, 2.0, 1.0, 0.5];
        assert!((1..=4).all(|m| energy_ratio(&e, m) >= energy_ratio(&e, m - 1)));
    }

    #[test]
    fn zero_fluctuations_give_no_modes() {
        let snap = set_from(vec![vec![1.0, 2.0]; 3]);
        let set = compute_pod(&snap, &CsrMatrix::identity(2), PodCriterion::Fixed(2), InnerProduct::L2).unwrap();
        assert_eq!(set.m_k(), 0);
        assert!(set.eigenvalues.is_empty());
    }

    #[test]
    fn invalid_criteria() {
        let snap = set_from(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = CsrMatrix::identity(2);
        assert!(compute_pod(&snap, &w, PodCriterion::Fixed(0), InnerProduct::L2).is_err());
        assert!(compute_pod(&snap, &w, PodCriterion::Fixed(3), InnerProduct::L2).is_err());
        assert!(compute_pod(&snap, &w, PodCriterion::Energy(1.5), InnerProduct::L2).is_err());
        assert!(compute_pod(&set_from(vec![vec![1.0]]), &CsrMatrix::identity(1), PodCriterion::Fixed(1), InnerProduct::L2)
            .is_err());
    }

    #[test]
    fn orthonormal_modes_and_tail_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let n = 40 + 10 * trial;
            let q = 12;
            let samples: Vec<Vec<f64>> = (0..q)
                .map(|k| (0..n).map(|i| rng.gen::<f64>() / (1.0 + k as f64) + (i as f64 * 0.1).cos()).collect())
                .collect();
            let snap = set_from(samples);
            let w = tri_weight(n);
            for m in 1..q - 1 {
                let set = compute_pod(&snap, &w, PodCriterion::Fixed(m), InnerProduct::L2).unwrap();
                for a in 0..m {
                    for b in 0..m {
                        let wz = w.matvec(&set.modes[b]);
                        let d: f64 = set.modes[a].iter().zip(&wz).map(|(x, y)| x * y).sum();
                        assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
                    }
                }
                let tail = 1.0 - energy_ratio(&set.eigenvalues, m);
                let ratio = reconstruction_error_ratio(&snap, &set, &w);
                assert!((ratio - tail).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pod_beats_random_subspaces() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let q = 8;
        let samples: Vec<Vec<f64>> = (0..q).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect();
        let snap = set_from(samples);
        let w = CsrMatrix::identity(n);
        let m = 3;
        let set = compute_pod(&snap, &w, PodCriterion::Fixed(m), InnerProduct::L2).unwrap();
        let best = reconstruction_error_ratio(&snap, &set, &w);
        for _ in 0..50 {
            // random rank-m subspace of the snapshot span, orthonormalized
            let mut basis: Vec<Vec<f64>> = Vec::new();
            for _ in 0..m {
                let mut v = vec![0.0; n];
                for f in &snap.fluctuations {
                    let c: f64 = rng.gen::<f64>() - 0.5;
                    for (vi, &x) in v.iter_mut().zip(f) {
                        *vi += c * x;
                    }
                }
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (vi, &bi) in v.iter_mut().zip(b) {
                        *vi -= d * bi;
                    }
                }
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                basis.push(v.into_iter().map(|x| x / nv).collect());
            }
            let other = ReducedBasisSet { modes: basis, ..set.clone() };
            assert!(reconstruction_error_ratio(&snap, &other, &w) >= best - 1e-12);
        }
    }
}
