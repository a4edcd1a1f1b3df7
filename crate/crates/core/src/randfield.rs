//! Random potentials in truncated Karhunen–Loève form
//! `v(x, ξ) = v̄(x) + Σ_j ξ_j · mode_j(x)` with `ξ_j` uniform on `[-√3, √3]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::mesh::PeriodicGrid;
use crate::{Error, Result};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `1 + σ Σ_{j≤3} sin(j x²) sin(x / E_j) ξ_j`
    ThreeScale,
    /// `1 + σ Σ_j j^{-β} sin(j x) ξ_j`
    #[serde(rename = "decay-1d")]
    Decay1d,
    /// `σ Σ_j j^{-β} sin(j x) ξ_j`
    #[serde(rename = "anderson-1d")]
    Anderson1d,
    /// `σ Σ_j j^{-β} sin(j x₁) sin(j x₂) ξ_j`
    #[serde(rename = "anderson-2d")]
    Anderson2d,
    /// Truncated KL expansion of a Gaussian covariance kernel.
    GaussianKernel,
}

impl PotentialKind {
    pub fn dim(self) -> usize {
        match self {
            PotentialKind::Anderson2d => 2,
            _ => 1,
        }
    }
}

/// Default oscillation scales `E_j` of the three-mode multiscale example.
pub const THREE_SCALE_E: [f64; 3] = [1.0 / 9.0, 1.0 / 13.0, 1.0 / 11.0];

/// Declarative description of a potential; also the cache key component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub beta: f64,
    pub m: usize,
    /// Oscillation scales `E_j` of the multiscale example.
    #[serde(default)]
    pub e: Vec<f64>,
    /// Correlation lengths per axis of the Gaussian kernel.
    #[serde(default)]
    pub correlation_length: Vec<f64>,
    /// Constant mean of the kernel-based potential.
    #[serde(default)]
    pub mean: f64,
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, sigma: f64, beta: f64, m: usize) -> Self {
        let e = if kind == PotentialKind::ThreeScale { THREE_SCALE_E.to_vec() } else { vec![] };
        Self { kind, sigma, beta, m, e, correlation_length: vec![], mean: 0.0 }
    }

    /// Canonical text used in cache keys and manifests.
    pub fn canonical(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        format!(
            "kind={:?};sigma={:e};beta={:e};m={};e=[{}];corr=[{}];mean={:e}",
            self.kind,
            self.sigma,
            self.beta,
            self.m,
            list(&self.e),
            list(&self.correlation_length),
            self.mean
        )
    }

    pub fn build(&self, grid: &PeriodicGrid) -> Result<KlPotential> {
        match self.kind {
            PotentialKind::GaussianKernel => {
                let kernel = GaussianKernel { sigma: self.sigma, lengths: self.correlation_length.clone() };
                kl_from_kernel(&kernel, grid, self.m, self.mean)
            }
            kind => make_example(grid, kind, self.sigma, self.beta, self.m, &self.e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlPotential {
    pub mean_field: Vec<f64>,
    /// Mode values including their amplitude.
    pub modes: Vec<Vec<f64>>,
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSample {
    pub values: Vec<f64>,
    pub xi: Vec<f64>,
}

impl KlPotential {
    pub fn m(&self) -> usize {
        self.modes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.mean_field.len()
    }

    pub fn sample(&self, xi: &[f64]) -> Result<PotentialSample> {
        if xi.len() != self.m() {
            return Err(Error::Dimension(format!("expected {} random variables, got {}", self.m(), xi.len())));
        }
        if xi.iter().any(|x| x.abs() > SQRT3 * (1.0 + 1e-12)) {
            log::warn!("random variable outside [-√3, √3]: {xi:?}");
        }
        let mut values = self.mean_field.clone();
        for (mode, &x) in self.modes.iter().zip(xi) {
            if x != 0.0 {
                for (v, &p) in values.iter_mut().zip(mode) {
                    *v += x * p;
                }
            }
        }
        Ok(PotentialSample { values, xi: xi.to_vec() })
    }

    /// Keeps the first `m` modes.
    pub fn truncate(&self, m: usize) -> KlPotential {
        let m = m.min(self.m());
        KlPotential {
            mean_field: self.mean_field.clone(),
            modes: self.modes[..m].to_vec(),
            amplitudes: self.amplitudes[..m].to_vec(),
        }
    }

    /// Pointwise bounds over all `ξ ∈ [-√3, √3]^m`.
    pub fn bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.num_nodes() {
            let spread: f64 = self.modes.iter().map(|m| m[i].abs()).sum::<f64>() * SQRT3;
            lo = lo.min(self.mean_field[i] - spread);
            hi = hi.max(self.mean_field[i] + spread);
        }
        (lo, hi)
    }

    /// `max_x |mode_j(x)|` (amplitude included).
    pub fn mode_sup(&self, j: usize) -> f64 {
        self.modes[j].iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Builds one of the analytic example potentials on `grid`.
pub fn make_example(
    grid: &PeriodicGrid,
    kind: PotentialKind,
    sigma: f64,
    beta: f64,
    m: usize,
    e: &[f64],
) -> Result<KlPotential> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("σ must be non-negative, got {sigma}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("random dimension m must be at least 1".into()));
    }
    if grid.dim() != kind.dim() {
        return Err(Error::Dimension(format!("{kind:?} needs a {}D grid", kind.dim())));
    }
    let n = grid.num_nodes();
    let (mean, amps, shapes): (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) = match kind {
        PotentialKind::ThreeScale => {
            if e.len() != m {
                return Err(Error::Dimension(format!("E has {} entries but m = {m}", e.len())));
            }
            let shapes = e
                .iter()
                .enumerate()
                .map(|(j, &ej)| {
                    let jf = (j + 1) as f64;
                    grid.eval(|x| (jf * x[0] * x[0]).sin() * (x[0] / ej).sin())
                })
                .collect();
            (vec![1.0; n], vec![sigma; m], shapes)
        }
        PotentialKind::Decay1d | PotentialKind::Anderson1d => {
            let mean = if kind == PotentialKind::Decay1d { 1.0 } else { 0.0 };
            let shapes = (1..=m).map(|j| grid.eval(|x| (j as f64 * x[0]).sin())).collect();
            (vec![mean; n], (1..=m).map(|j| sigma * (j as f64).powf(-beta)).collect(), shapes)
        }
        PotentialKind::Anderson2d => {
            let shapes = (1..=m)
                .map(|j| grid.eval(|x| (j as f64 * x[0]).sin() * (j as f64 * x[1]).sin()))
                .collect();
            (vec![0.0; n], (1..=m).map(|j| sigma * (j as f64).powf(-beta)).collect(), shapes)
        }
        PotentialKind::GaussianKernel => {
            return Err(Error::InvalidArgument("the Gaussian kernel potential is built by kl_from_kernel".into()))
        }
    };
    let modes = shapes
        .into_iter()
        .zip(&amps)
        .map(|(s, &a)| s.into_iter().map(|v| a * v).collect())
        .collect();
    Ok(KlPotential { mean_field: mean, modes, amplitudes: amps })
}

/// `C(x, y) = σ² exp(-Σ_i |x_i - y_i|² / (2 l_i²))` with periodic
/// (minimum-image) distances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub lengths: Vec<f64>,
}

impl GaussianKernel {
    fn eval(&self, grid: &PeriodicGrid, x: [f64; 2], y: [f64; 2]) -> f64 {
        let mut s = 0.0;
        for a in 0..grid.dim() {
            let l = grid.length(a);
            let mut d = (x[a] - y[a]).abs() % l;
            d = d.min(l - d);
            s += d * d / (2.0 * self.lengths[a] * self.lengths[a]);
        }
        self.sigma * self.sigma * (-s).exp()
    }
}

/// Leading `m` eigenpairs of the discretized covariance operator,
/// `h^d · C v = λ v`, as KL modes `√λ_j v_j` with `v_j` L²-normalized on the
/// grid. Eigenvalues are sorted in descending order; `m` is reduced (with a
/// warning) when the positive spectrum is shorter.
pub fn kl_from_kernel(kernel: &GaussianKernel, grid: &PeriodicGrid, m: usize, mean: f64) -> Result<KlPotential> {
    if kernel.lengths.len() != grid.dim() || kernel.lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("kernel needs one positive correlation length per axis".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("random dimension m must be at least 1".into()));
    }
    let (lams, vecs) = kernel_eigenpairs(grid, |x, y| kernel.eval(grid, x, y));
    let tol = 1e-12 * lams.first().copied().unwrap_or(0.0).max(0.0);
    let positive = lams.iter().take_while(|&&l| l > tol).count();
    let keep = if m > positive {
        log::warn!("requested {m} KL modes but only {positive} eigenvalues are positive; truncating");
        positive
    } else {
        m
    };
    if keep == 0 {
        return Err(Error::InvalidArgument("covariance kernel has no positive spectrum".into()));
    }
    let modes = (0..keep).map(|j| vecs[j].iter().map(|v| lams[j].sqrt() * v).collect()).collect();
    Ok(KlPotential {
        mean_field: vec![mean; grid.num_nodes()],
        modes,
        amplitudes: lams[..keep].iter().map(|l| l.sqrt()).collect(),
    })
}

/// Eigenpairs of `h^d C` sorted descending; vectors scaled to unit grid L² norm.
pub fn kernel_eigenpairs<F: Fn([f64; 2], [f64; 2]) -> f64>(grid: &PeriodicGrid, c: F) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = grid.num_nodes();
    let w = grid.cell_volume();
    let coords: Vec<[f64; 2]> = (0..n).map(|i| grid.coord(i)).collect();
    let k = DMatrix::from_fn(n, n, |i, j| w * c(coords[i], coords[j]));
    let eig = k.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lams = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().map(|v| v / w.sqrt()).collect())
        .collect();
    (lams, vecs)
}
