//! Galerkin systems `iε M ċ = ((ε²/2) S + V(ξ)) c` in a reduced or fine
//! basis, integrated with Crank–Nicolson.

use num_complex::Complex64;

use crate::fem;
use crate::linalg::{cocg, profile_size_with, rcm_ordering, CsrMatrix, LdlFactor, LinalgError};
use crate::mesh::PeriodicGrid;
use crate::pod::ReducedBasisSet;
use crate::randfield::KlPotential;
use crate::{Error, Result};

/// Profile entries above which the complex CN system is solved iteratively.
const DIRECT_PROFILE_LIMIT: usize = 4_000_000;
const COCG_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Reduced,
    Fine,
}

#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub eps: f64,
    pub kind: BasisKind,
    /// Fine-grid values of the basis functions (N_h × N); `None` for the fine
    /// basis.
    z: Option<CsrMatrix<f64>>,
    pub s: CsrMatrix<f64>,
    pub m: CsrMatrix<f64>,
    /// Potential matrices of the mean field followed by each KL mode.
    v_affine: Vec<CsrMatrix<f64>>,
    pub fine_grid: PeriodicGrid,
    pub fine_mass: CsrMatrix<f64>,
    pub fine_stiffness: CsrMatrix<f64>,
    m_factor: Option<LdlFactor<f64>>,
    /// Coarse node owning each reduced basis function.
    column_nodes: Vec<usize>,
    /// Fill-reducing ordering shared by every CN matrix, and its profile.
    ordering: Vec<usize>,
    profile: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub c: Vec<Complex64>,
}

fn affine_potential(grid: &PeriodicGrid, potential: &KlPotential) -> Result<Vec<CsrMatrix<f64>>> {
    if potential.num_nodes() != grid.num_nodes() {
        return Err(Error::Dimension("potential and grid sizes differ".into()));
    }
    std::iter::once(&potential.mean_field)
        .chain(potential.modes.iter())
        .map(|values| fem::assemble_potential(grid, values))
        .collect()
}

impl GalerkinSystem {
    /// Fine-grid finite element system (the reference solver).
    pub fn fine(grid: &PeriodicGrid, potential: &KlPotential, eps: f64) -> Result<Self> {
        let s = fem::assemble_stiffness(grid);
        let m = fem::assemble_mass(grid);
        let v_affine = affine_potential(grid, potential)?;
        Ok(Self {
            eps,
            kind: BasisKind::Fine,
            z: None,
            s: s.clone(),
            m: m.clone(),
            v_affine,
            fine_grid: grid.clone(),
            fine_mass: m,
            fine_stiffness: s,
            m_factor: None,
            column_nodes: Vec::new(),
            ordering: Vec::new(),
            profile: 0,
        }
        .with_ordering())
    }

    /// Reduced system with `Z = [ζ₀^1, ζ₁^1, …, ζ₀^2, …]` (node-major).
    pub fn reduced(sets: &[ReducedBasisSet], grid: &PeriodicGrid, potential: &KlPotential, eps: f64) -> Result<Self> {
        let n_fine = grid.num_nodes();
        let mut trip = Vec::new();
        let mut column_nodes = Vec::new();
        for set in sets {
            if set.support.iter().any(|&i| i >= n_fine) {
                return Err(Error::Dimension(format!("reduced set of node {} does not fit the fine grid", set.node)));
            }
            for f in std::iter::once(&set.zeta0).chain(set.modes.iter()) {
                let col = column_nodes.len();
                for (&i, &v) in set.support.iter().zip(f) {
                    trip.push((i, col, v));
                }
                column_nodes.push(set.node);
            }
        }
        let z = CsrMatrix::from_triplets(n_fine, column_nodes.len(), &trip);
        let fs = fem::assemble_stiffness(grid);
        let fm = fem::assemble_mass(grid);
        let s = fs.congruence(&z);
        let m = fm.congruence(&z);
        let v_affine = affine_potential(grid, potential)?.iter().map(|v| v.congruence(&z)).collect();
        let m_factor = match LdlFactor::new(&m, 1e-12) {
            Ok(f) if f.negative_pivots() == 0 => f,
            Ok(f) => {
                let bad: Vec<usize> = (0..f.dim()).filter(|&k| f.pivots()[k] < 0.0).map(|k| column_nodes[f.pivot_row(k)]).collect();
                return Err(Error::RankDeficient { nodes: dedup(bad) });
            }
            Err(LinalgError::ZeroPivot { index, .. }) => {
                return Err(Error::RankDeficient { nodes: vec![column_nodes[index]] })
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            eps,
            kind: BasisKind::Reduced,
            z: Some(z),
            s,
            m,
            v_affine,
            fine_grid: grid.clone(),
            fine_mass: fm,
            fine_stiffness: fs,
            m_factor: Some(m_factor),
            column_nodes,
            ordering: Vec::new(),
            profile: 0,
        }
        .with_ordering())
    }

    fn with_ordering(mut self) -> Self {
        self.ordering = rcm_ordering(&self.m);
        self.profile = profile_size_with(&self.m, &self.ordering);
        log::debug!("galerkin system: dim {}, profile {}", self.s.nrows(), self.profile);
        self
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Envelope size of the CN matrices under the cached ordering.
    pub fn profile(&self) -> usize {
        self.profile
    }

    pub fn random_dim(&self) -> usize {
        self.v_affine.len() - 1
    }

    pub fn basis_matrix(&self) -> Option<&CsrMatrix<f64>> {
        self.z.as_ref()
    }

    /// `(ε²/2) S + V(ξ)` in this basis.
    pub fn hamiltonian(&self, xi: &[f64]) -> Result<CsrMatrix<f64>> {
        if xi.len() != self.random_dim() {
            return Err(Error::Dimension(format!("expected {} random variables, got {}", self.random_dim(), xi.len())));
        }
        let half = 0.5 * self.eps * self.eps;
        let mut values: Vec<f64> =
            self.s.values().iter().zip(self.v_affine[0].values()).map(|(&s, &v)| half * s + v).collect();
        for (vj, &x) in self.v_affine[1..].iter().zip(xi) {
            if x != 0.0 {
                for (a, &b) in values.iter_mut().zip(vj.values()) {
                    *a += x * b;
                }
            }
        }
        Ok(CsrMatrix::from_parts(
            self.s.nrows(),
            self.s.ncols(),
            self.s.row_ptr().to_vec(),
            self.s.col_idx().to_vec(),
            values,
        ))
    }

    /// Hamiltonian for arbitrary nodal potential values.
    pub fn hamiltonian_from_values(&self, values: &[f64]) -> Result<CsrMatrix<f64>> {
        let v = fem::assemble_potential(&self.fine_grid, values)?;
        let v = match &self.z {
            Some(z) => v.congruence(z),
            None => v,
        };
        Ok(self.s.lin_comb(0.5 * self.eps * self.eps, &v, 1.0))
    }

    /// L² projection of fine nodal values.
    pub fn project_initial(&self, psi: &[Complex64]) -> Result<WaveState> {
        if psi.len() != self.fine_grid.num_nodes() {
            return Err(Error::Dimension("initial state does not match the fine grid".into()));
        }
        let c = match (&self.z, &self.m_factor) {
            (Some(z), Some(f)) => {
                let mpsi = self.fine_mass.matvec(psi);
                let rhs = z.transpose().matvec(&mpsi);
                f.solve_complex(&rhs)
            }
            _ => psi.to_vec(),
        };
        Ok(WaveState { t: 0.0, c })
    }

    pub fn reconstruct(&self, c: &[Complex64]) -> Vec<Complex64> {
        match &self.z {
            Some(z) => z.matvec(c),
            None => c.to_vec(),
        }
    }

    /// `cᴴ M c`.
    pub fn mass_norm_sq(&self, c: &[Complex64]) -> f64 {
        let mc = self.m.matvec(c);
        c.iter().zip(&mc).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn column_node(&self, col: usize) -> usize {
        self.column_nodes.get(col).copied().unwrap_or(col)
    }

    pub fn propagator(&self, xi: &[f64]) -> Result<CnPropagator<'_>> {
        Ok(CnPropagator { sys: self, h: self.hamiltonian(xi)?, cache: Vec::new(), work: Vec::new() })
    }

    pub fn propagator_for(&self, h: CsrMatrix<f64>) -> CnPropagator<'_> {
        CnPropagator { sys: self, h, cache: Vec::new(), work: Vec::new() }
    }
}

fn dedup(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

enum CnSolver {
    Direct(LdlFactor<Complex64>),
    Iterative { inv_diag: Vec<Complex64> },
}

struct CnStep {
    dt: f64,
    lhs: CsrMatrix<Complex64>,
    rhs: CsrMatrix<Complex64>,
    solver: CnSolver,
}

/// Crank–Nicolson stepping for one potential sample; factorizations are
/// cached per step size.
pub struct CnPropagator<'a> {
    sys: &'a GalerkinSystem,
    h: CsrMatrix<f64>,
    cache: Vec<CnStep>,
    work: Vec<Complex64>,
}

impl<'a> CnPropagator<'a> {
    fn prepare(&mut self, dt: f64) -> Result<usize> {
        if let Some(k) = self.cache.iter().position(|s| s.dt == dt) {
            return Ok(k);
        }
        let alpha = dt / (2.0 * self.sys.eps);
        let lhs = self.sys.m.complex_comb(1.0, &self.h, alpha);
        let rhs = self.sys.m.complex_comb(1.0, &self.h, -alpha);
        let solver = if self.sys.profile <= DIRECT_PROFILE_LIMIT {
            CnSolver::Direct(LdlFactor::with_ordering(&lhs, self.sys.ordering.clone(), 1e-14)?)
        } else {
            let inv_diag = lhs.diagonal().iter().map(|d| Complex64::new(1.0, 0.0) / d).collect();
            CnSolver::Iterative { inv_diag }
        };
        // a handful of distinct step sizes occur; keep the cache small
        if self.cache.len() >= 4 {
            self.cache.remove(0);
        }
        self.cache.push(CnStep { dt, lhs, rhs, solver });
        Ok(self.cache.len() - 1)
    }

    /// One step `(M + iαH) c⁺ = (M − iαH) c`, `α = Δt/(2ε)`. Negative `Δt`
    /// steps backward in time.
    pub fn step(&mut self, c: &mut [Complex64], dt: f64) -> Result<()> {
        let k = self.prepare(dt)?;
        let st = &self.cache[k];
        let b = st.rhs.matvec(c);
        match &st.solver {
            CnSolver::Direct(f) => {
                c.copy_from_slice(&b);
                f.solve_in_place(c, &mut self.work);
            }
            CnSolver::Iterative { inv_diag } => {
                cocg(&st.lhs, inv_diag, &b, c, COCG_TOL, 10 * c.len() + 100)?;
            }
        }
        Ok(())
    }

    /// Advances `state` to each requested time (sorted ascending, ≥ state.t)
    /// and returns the states there. Within each interval full steps of `dt`
    /// are taken and a shortened final step lands exactly on the target.
    pub fn evolve(&mut self, state: &WaveState, times: &[f64], dt: f64) -> Result<Vec<WaveState>> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let mut c = state.c.clone();
        let mut t = state.t;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            if target < t - 1e-12 * dt.max(1.0) {
                return Err(Error::InvalidArgument(format!("output time {target} precedes current time {t}")));
            }
            let span = target - t;
            let full = ((span / dt) * (1.0 + 1e-12)).floor() as usize;
            for _ in 0..full {
                self.step(&mut c, dt)?;
            }
            let rest = span - full as f64 * dt;
            if rest > 1e-9 * dt {
                self.step(&mut c, rest)?;
            }
            t = target;
            out.push(WaveState { t, c: c.clone() });
        }
        Ok(out)
    }
}

/// Evolves from `psi_in` to time `t_final`, returning the state there.
pub fn evolve(
    sys: &GalerkinSystem,
    xi: &[f64],
    psi_in: &[Complex64],
    t_final: f64,
    dt: f64,
) -> Result<WaveState> {
    if t_final < 0.0 {
        return Err(Error::InvalidArgument("final time must be non-negative".into()));
    }
    let s0 = sys.project_initial(psi_in)?;
    if t_final == 0.0 {
        return Ok(s0);
    }
    let mut p = sys.propagator(xi)?;
    Ok(p.evolve(&s0, &[t_final], dt)?.remove(0))
}

/// Central-difference estimate of `‖∂ψ(T)/∂ξ_j‖_{L²}`.
pub fn sensitivity_check(
    sys: &GalerkinSystem,
    xi: &[f64],
    j: usize,
    delta: f64,
    psi_in: &[Complex64],
    t_final: f64,
    dt: f64,
) -> Result<f64> {
    if j >= xi.len() {
        return Err(Error::InvalidArgument(format!("direction {j} out of range")));
    }
    let mut plus = xi.to_vec();
    let mut minus = xi.to_vec();
    plus[j] += delta;
    minus[j] -= delta;
    let a = sys.reconstruct(&evolve(sys, &plus, psi_in, t_final, dt)?.c);
    let b = sys.reconstruct(&evolve(sys, &minus, psi_in, t_final, dt)?.c);
    let d: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * delta)).collect();
    Ok(crate::observables::l2_norm(&sys.fine_mass, &d))
}

/// `(10/π)^{1/4} e^{-20 x²}` on the grid (product over axes in 2D).
pub fn gaussian_initial(grid: &PeriodicGrid) -> Vec<Complex64> {
    let c = (10.0 / std::f64::consts::PI).powf(0.25);
    grid.eval(|x| (0..grid.dim()).map(|a| c * (-20.0 * x[a] * x[a]).exp()).product())
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randfield::{make_example, PotentialKind};

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::periodic_pi(1, n).unwrap()
    }

    fn const_potential(g: &PeriodicGrid, c: f64) -> KlPotential {
        let mut p = make_example(g, PotentialKind::Decay1d, 0.0, 2.0, 1, &[]).unwrap();
        p.mean_field = vec![c; g.num_nodes()];
        p
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_norm() {
        let g = grid(1024);
        let psi = gaussian_initial(&g);
        let sys = GalerkinSystem::fine(&g, &const_potential(&g, 0.0), 0.1).unwrap();
        let n2 = sys.mass_norm_sq(&psi);
        // ∫ (10/π)^{1/2} e^{-40x²} dx = (10/π)^{1/2} (π/40)^{1/2} = 1/2
        assert!((n2 - 0.5).abs() < 1e-4);
        assert_eq!(sys.project_initial(&psi).unwrap().c, psi);
    }

    #[test]
    fn constant_state_is_stationary_without_potential() {
        let g = grid(64);
        let sys = GalerkinSystem::fine(&g, &const_potential(&g, 0.0), 0.25).unwrap();
        let c0 = vec![Complex64::new(0.3, -0.1); 64];
        let s = sys.propagator(&[0.0]).unwrap().evolve(&WaveState { t: 0.0, c: c0.clone() }, &[1.0], 0.01).unwrap();
        assert!(max_diff(&s[0].c, &c0) < 1e-13);
    }

    #[test]
    fn norm_conservation_and_reversibility() {
        let g = grid(256);
        let eps = 1.0 / 16.0;
        let pot = make_example(&g, PotentialKind::ThreeScale, 1.0, 0.0, 3, &[1.0 / 9.0, 1.0 / 13.0, 1.0 / 11.0]).unwrap();
        let sys = GalerkinSystem::fine(&g, &pot, eps).unwrap();
        let xi = [0.4, -1.1, 1.6];
        let mut p = sys.propagator(&xi).unwrap();
        let mut c = gaussian_initial(&g);
        let c0 = c.clone();
        let n0 = sys.mass_norm_sq(&c);
        let dt = eps / 100.0;
        for _ in 0..1000 {
            p.step(&mut c, dt).unwrap();
        }
        assert!((sys.mass_norm_sq(&c) - n0).abs() < 1e-11);
        for _ in 0..1000 {
            p.step(&mut c, -dt).unwrap();
        }
        assert!(max_diff(&c, &c0) < 1e-11);
    }

    #[test]
    fn constant_potential_phase_is_second_order() {
        let g = grid(32);
        let eps = 0.25;
        let kappa = 1.3;
        let sys = GalerkinSystem::fine(&g, &const_potential(&g, kappa), eps).unwrap();
        let c0 = vec![Complex64::new(1.0, 0.0); 32];
        let err = |dt: f64| {
            let s = sys.propagator(&[0.0]).unwrap().evolve(&WaveState { t: 0.0, c: c0.clone() }, &[1.0], dt).unwrap();
            let exact = Complex64::new(0.0, -kappa / eps).exp();
            (s[0].c[5] - exact).norm()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!((e1 / e2 - 4.0).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn final_time_is_hit_exactly() {
        let g = grid(16);
        let sys = GalerkinSystem::fine(&g, &const_potential(&g, 1.0), 0.5).unwrap();
        let psi = gaussian_initial(&g);
        let s = evolve(&sys, &[0.0], &psi, 0.35, 0.1).unwrap();
        assert_eq!(s.t, 0.35);
        let s0 = evolve(&sys, &[0.0], &psi, 0.0, 0.1).unwrap();
        assert_eq!(s0.c, psi);
        // the shortened step agrees with an exact constant-phase rotation
        let c1 = vec![Complex64::new(1.0, 0.0); 16];
        let out = sys.propagator(&[0.0]).unwrap().evolve(&WaveState { t: 0.0, c: c1 }, &[0.35], 0.1).unwrap();
        let a = 0.1 / (2.0 * 0.5);
        let b = 0.05 / (2.0 * 0.5);
        let cn = |a: f64| Complex64::new(1.0, -a) / Complex64::new(1.0, a);
        let expect = cn(a).powu(3) * cn(b);
        assert!((out[0].c[3] - expect).norm() < 1e-14);
    }

    #[test]
    fn identity_basis_reduces_to_fine_system() {
        use crate::pod::{InnerProduct, ReducedBasisSet};
        let g = grid(24);
        let pot = make_example(&g, PotentialKind::Decay1d, 1.0, 2.0, 2, &[]).unwrap();
        let sets: Vec<ReducedBasisSet> = (0..24)
            .map(|k| {
                let mut e = vec![0.0; 24];
                e[k] = 1.0;
                ReducedBasisSet {
                    node: k,
                    support: (0..24).collect(),
                    zeta0: e,
                    modes: vec![],
                    eigenvalues: vec![],
                    inner_product: InnerProduct::L2,
                }
            })
            .collect();
        let red = GalerkinSystem::reduced(&sets, &g, &pot, 0.3).unwrap();
        let fine = GalerkinSystem::fine(&g, &pot, 0.3).unwrap();
        let hr = red.hamiltonian(&[0.5, -0.2]).unwrap().to_dense();
        let hf = fine.hamiltonian(&[0.5, -0.2]).unwrap().to_dense();
        assert!((hr - hf).abs().max() < 1e-14);
        assert!(red.s.asymmetry() < 1e-12 && red.m.asymmetry() < 1e-12);
        let psi = gaussian_initial(&g);
        let c = red.project_initial(&psi).unwrap().c;
        assert!(max_diff(&c, &psi) < 1e-12);
    }

    #[test]
    fn projection_is_orthogonal_and_idempotent_on_span() {
        use crate::pod::{InnerProduct, ReducedBasisSet};
        let g = grid(40);
        let pot = const_potential(&g, 1.0);
        // hat-like functions on 8 overlapping supports
        let sets: Vec<ReducedBasisSet> = (0..8)
            .map(|k| {
                let support: Vec<usize> = (0..9).map(|o| (5 * k + o + 38) % 40).collect();
                let mut order: Vec<usize> = (0..9).collect();
                order.sort_by_key(|&o| support[o]);
                let zeta0: Vec<f64> = order.iter().map(|&o| 1.0 - (o as f64 - 4.0).abs() / 5.0).collect();
                let mode: Vec<f64> = order.iter().map(|&o| (o as f64 - 4.0) / 4.0).collect();
                let mut sup: Vec<usize> = support.clone();
                sup.sort_unstable();
                ReducedBasisSet {
                    node: k,
                    support: sup,
                    zeta0,
                    modes: vec![mode],
                    eigenvalues: vec![1.0],
                    inner_product: InnerProduct::L2,
                }
            })
            .collect();
        let sys = GalerkinSystem::reduced(&sets, &g, &pot, 0.5).unwrap();
        assert_eq!(sys.dim(), 16);
        let c: Vec<Complex64> = (0..16).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let psi = sys.reconstruct(&c);
        let back = sys.project_initial(&psi).unwrap().c;
        assert!(max_diff(&back, &c) < 1e-10);
        let other: Vec<Complex64> = gaussian_initial(&g);
        let c0 = sys.project_initial(&other).unwrap().c;
        let r: Vec<Complex64> = other.iter().zip(sys.reconstruct(&c0)).map(|(a, b)| a - b).collect();
        let mr = sys.fine_mass.matvec(&r);
        let zt = sys.basis_matrix().unwrap().transpose();
        let resid = zt.matvec(&mr);
        assert!(resid.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn collinear_basis_is_rejected() {
        use crate::pod::{InnerProduct, ReducedBasisSet};
        let g = grid(16);
        let pot = const_potential(&g, 1.0);
        let f: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let sets: Vec<ReducedBasisSet> = (0..2)
            .map(|k| ReducedBasisSet {
                node: k,
                support: (0..16).collect(),
                zeta0: f.clone(),
                modes: vec![],
                eigenvalues: vec![],
                inner_product: InnerProduct::L2,
            })
            .collect();
        assert!(matches!(GalerkinSystem::reduced(&sets, &g, &pot, 0.5), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn deterministic_potential_has_zero_sensitivity() {
        let g = grid(64);
        let pot = make_example(&g, PotentialKind::Decay1d, 0.0, 2.0, 2, &[]).unwrap();
        let sys = GalerkinSystem::fine(&g, &pot, 0.25).unwrap();
        let s = sensitivity_check(&sys, &[0.1, 0.2], 0, 1e-3, &gaussian_initial(&g), 0.5, 0.01).unwrap();
        assert_eq!(s, 0.0);
    }
}
