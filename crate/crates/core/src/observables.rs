//! Post-processing: relative errors of expected wavefunctions, the second
//! moment `A(t)`, and log-log rate fits.

use num_complex::Complex64;

use crate::linalg::CsrMatrix;
use crate::mesh::PeriodicGrid;
use crate::sampling::qmc_mean;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub error_l2: f64,
    pub error_h1: f64,
}

/// `Re ψᴴ W ψ`.
pub fn energy(w: &CsrMatrix<f64>, psi: &[Complex64]) -> f64 {
    let wp = w.matvec(psi);
    psi.iter().zip(&wp).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
}

pub fn l2_norm(mass: &CsrMatrix<f64>, psi: &[Complex64]) -> f64 {
    energy(mass, psi).max(0.0).sqrt()
}

pub fn expected_wavefunction(samples: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
    qmc_mean(samples)
}

/// Relative L² (mass form) and H¹ (stiffness + mass form) errors.
pub fn relative_errors(
    numerical: &[Complex64],
    reference: &[Complex64],
    stiffness: &CsrMatrix<f64>,
    mass: &CsrMatrix<f64>,
) -> Result<ErrorReport> {
    if numerical.len() != reference.len() || reference.len() != mass.nrows() {
        return Err(Error::Dimension("error norms need vectors on the same grid".into()));
    }
    let diff: Vec<Complex64> = numerical.iter().zip(reference).map(|(a, b)| a - b).collect();
    let h1 = stiffness.lin_comb(1.0, mass, 1.0);
    let ref_l2 = energy(mass, reference);
    let ref_h1 = energy(&h1, reference);
    if !(ref_l2 > 0.0) {
        return Err(Error::InvalidArgument("reference has zero norm".into()));
    }
    Ok(ErrorReport {
        error_l2: (energy(mass, &diff).max(0.0) / ref_l2).sqrt(),
        error_h1: (energy(&h1, &diff).max(0.0) / ref_h1).sqrt(),
    })
}

/// Samples a fine-grid vector at the nodes of a nested coarser grid.
pub fn restrict_to(fine: &PeriodicGrid, coarse: &PeriodicGrid, psi: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut ratio = [1usize; 2];
    for a in 0..fine.dim() {
        if fine.n_cells(a) % coarse.n_cells(a) != 0 || coarse.dim() != fine.dim() {
            return Err(Error::Dimension("grids are not nested".into()));
        }
        ratio[a] = fine.n_cells(a) / coarse.n_cells(a);
    }
    Ok((0..coarse.num_nodes())
        .map(|k| {
            let m = coarse.multi_index(k);
            psi[fine.wrap_index([(m[0] * ratio[0]) as i64, (m[1] * ratio[1]) as i64])]
        })
        .collect())
}

/// `∫ |x|² |ψ|² dx` by the nodal trapezoid rule on `[-π, π)^d`.
pub fn position_moment(grid: &PeriodicGrid, psi: &[Complex64]) -> f64 {
    let w = grid.cell_volume();
    (0..grid.num_nodes())
        .map(|i| {
            let x = grid.coord(i);
            let r2: f64 = x[..grid.dim()].iter().map(|v| v * v).sum();
            r2 * psi[i].norm_sqr()
        })
        .sum::<f64>()
        * w
}

/// `A(t)`: sample mean of the position moment.
pub fn second_moment(grid: &PeriodicGrid, samples: &[Vec<Complex64>]) -> Result<f64> {
    let vals: Vec<Vec<f64>> = samples.iter().map(|p| vec![position_moment(grid, p)]).collect();
    Ok(qmc_mean(&vals)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("a fit needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn convergence_rate_fit(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument("a rate fit needs at least three points".into()));
    }
    if points.iter().any(|&(n, e)| !(n > 0.0) || !(e > 0.0)) {
        return Err(Error::InvalidArgument("rate fit needs positive data".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(linear_fit(&x, &y)?.slope)
}

/// `log₂(e_{k-1}/e_k)` for successive halvings; `None` for the first entry.
pub fn halving_orders(errors: &[f64]) -> Vec<Option<f64>> {
    (0..errors.len()).map(|k| if k == 0 { None } else { Some((errors[k - 1] / errors[k]).log2()) }).collect()
}
