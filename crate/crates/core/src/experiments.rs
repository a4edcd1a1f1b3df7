//! Offline/online pipelines and the experiment drivers behind the CLI.

use std::path::PathBuf;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::cache::{self, CacheKey};
use crate::config::{Config, Experiment, Solver};
use crate::evolve::{gaussian_initial, GalerkinSystem, WaveState};
use crate::fem;
use crate::mesh::{resolution_check, CoarseFineMap, PeriodicGrid};
use crate::ms_basis::{
    decay_profile, default_localization, generate_snapshots, node_snapshots, sample_potentials, BasisContext,
    SnapshotSet,
};
use crate::observables::{
    convergence_rate_fit, halving_orders, linear_fit, position_moment, relative_errors, restrict_to, ErrorReport,
    LinearFit,
};
use crate::pod::{compute_pod, energy_ratio, weight_matrix, InnerProduct, PodCriterion, ReducedBasisSet};
use crate::randfield::{KlPotential, PotentialSpec};
use crate::sampling::{generate, parse_generating_vector, to_xi, CascadeMean, SampleMethod, SamplePlan};
use crate::{Error, Result};

/// Samples evolved concurrently before their results are folded into the
/// running means.
const CHUNK: usize = 64;

/// POD of precomputed snapshot sets, one per coarse node.
pub fn compress(
    ctx: &BasisContext,
    snapshots: &[SnapshotSet],
    criterion: PodCriterion,
    inner: InnerProduct,
) -> Result<Vec<ReducedBasisSet>> {
    snapshots
        .par_iter()
        .map(|snap| compute_pod(snap, &weight_matrix(ctx, &snap.support, inner), criterion, inner))
        .collect()
}

/// Offline stage without keeping the snapshots: each node's snapshot set is
/// compressed as soon as it is built.
pub fn reduced_bases(
    ctx: &BasisContext,
    potential: &KlPotential,
    xis: &[Vec<f64>],
    eps: f64,
    l_star: usize,
    criterion: PodCriterion,
    inner: InnerProduct,
) -> Result<Vec<ReducedBasisSet>> {
    if xis.len() < 2 {
        return Err(Error::InvalidArgument("at least two offline samples are needed".into()));
    }
    let vs = sample_potentials(ctx, potential, xis)?;
    let (v_min, _) = potential.bounds();
    (0..ctx.n_coarse())
        .into_par_iter()
        .map(|k| {
            let problem = ctx.localized_problem(k, l_star)?;
            let snap = node_snapshots(&problem, &vs, xis, eps, v_min)?;
            compute_pod(&snap, &weight_matrix(ctx, &problem.support, inner), criterion, inner)
        })
        .collect()
}

fn evolve_sample(
    sys: &GalerkinSystem,
    start: &WaveState,
    xi: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<Vec<WaveState>> {
    let mut p = sys.propagator(xi)?;
    p.evolve(start, times, dt)
}

/// Sample means of the fine-grid wavefunction at `t_final`, taken over the
/// first `counts[i]` samples of `xis` (counts ascending).
pub fn online_means(
    sys: &GalerkinSystem,
    xis: &[Vec<f64>],
    psi_in: &[Complex64],
    t_final: f64,
    dt: f64,
    counts: &[usize],
) -> Result<Vec<Vec<Complex64>>> {
    if counts.is_empty() || counts.windows(2).any(|w| w[0] > w[1]) || counts[counts.len() - 1] > xis.len() {
        return Err(Error::InvalidArgument("sample counts must ascend and not exceed the sample list".into()));
    }
    if counts[0] == 0 {
        return Err(Error::InvalidArgument("sample counts must be positive".into()));
    }
    let start = sys.project_initial(psi_in)?;
    let total = counts[counts.len() - 1];
    let mut acc = CascadeMean::new();
    let mut out = Vec::with_capacity(counts.len());
    let mut next = 0;
    for (chunk_id, chunk) in xis[..total].chunks(CHUNK).enumerate() {
        let finals: Vec<Vec<Complex64>> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, xi)| {
                evolve_sample(sys, &start, xi, &[t_final], dt)
                    .map(|mut s| s.remove(0).c)
                    .map_err(|e| Error::Sample { sample: chunk_id * CHUNK + i, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        for c in finals {
            acc.push(c)?;
            while next < counts.len() && acc.count() == counts[next] {
                out.push(sys.reconstruct(&acc.mean()?));
                next += 1;
            }
        }
    }
    Ok(out)
}

/// `A(t)` at each of `times` (ascending, starting at or after 0).
pub fn moment_series(
    sys: &GalerkinSystem,
    xis: &[Vec<f64>],
    psi_in: &[Complex64],
    times: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if xis.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let start = sys.project_initial(psi_in)?;
    let mut acc = CascadeMean::new();
    for (chunk_id, chunk) in xis.chunks(CHUNK).enumerate() {
        let rows: Vec<Vec<f64>> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, xi)| {
                let states = evolve_sample(sys, &start, xi, times, dt)
                    .map_err(|e| Error::Sample { sample: chunk_id * CHUNK + i, source: Box::new(e) })?;
                Ok(states.iter().map(|s| position_moment(&sys.fine_grid, &sys.reconstruct(&s.c))).collect())
            })
            .collect::<Result<_>>()?;
        for r in rows {
            acc.push(r)?;
        }
    }
    acc.mean()
}

/// A numeric result table; written as CSV by the CLI. `NaN` marks an empty
/// cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// CSV text; `manifest` becomes a leading `#` comment line.
    pub fn to_csv(&self, manifest: &str) -> String {
        let mut s = format!("# {manifest}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.iter().map(|&v| format_value(v)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

/// Integers print plainly, other reals in shortest round-trip exponent form.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

/// Seeds of the stages derived from the base seed.
fn offline_seed(base: u64) -> u64 {
    base
}
fn online_seed(base: u64) -> u64 {
    base.wrapping_add(1)
}
fn reference_seed(base: u64) -> u64 {
    base.wrapping_add(2)
}
fn replicate_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(1000 * (r as u64 + 1))
}

/// Runs a configured experiment, optionally reusing reduced bases stored in
/// `cache_dir`.
pub struct Runner<'a> {
    pub cfg: &'a Config,
    pub cache_dir: Option<PathBuf>,
}

/// Expected wavefunction of the reference run on its own grid.
struct Reference {
    grid: PeriodicGrid,
    means: Vec<Vec<Complex64>>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        Self { cfg, cache_dir: None }
    }

    pub fn with_cache(cfg: &'a Config, dir: PathBuf) -> Self {
        Self { cfg, cache_dir: Some(dir) }
    }

    pub fn run(&self) -> Result<Vec<Table>> {
        match self.cfg.experiment {
            Experiment::ConvergeH => self.converge_h(),
            Experiment::ConvergePod => self.converge_pod(),
            Experiment::ConvergeQmc => self.converge_qmc(),
            Experiment::OfflineQ => self.offline_q(),
            Experiment::QmcEpsScaling => self.qmc_scaling(Scaling::Epsilon),
            Experiment::QmcDimScaling => self.qmc_scaling(Scaling::Dimension),
            Experiment::Anderson1d | Experiment::Anderson2d => self.anderson(),
            Experiment::DecayDiagnostic => self.decay_diagnostic(),
        }
    }

    fn grid(&self, cells: usize) -> Result<PeriodicGrid> {
        PeriodicGrid::periodic_pi(self.cfg.problem.dim, cells)
    }

    fn fine_grid(&self) -> Result<PeriodicGrid> {
        self.grid(self.cfg.problem.fine_cells)
    }

    fn points(&self, method: SampleMethod, n: usize, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut plan = SamplePlan::new(method, n, m, seed);
        if method == SampleMethod::ShiftedLattice {
            let path = self.cfg.online.generating_vector.as_ref().ok_or_else(|| {
                Error::Config("online.generating_vector: required for shifted-lattice sampling".into())
            })?;
            plan.generating_vector = Some(parse_generating_vector(&std::fs::read_to_string(path)?)?);
        }
        Ok(to_xi(&generate(&plan)?))
    }

    /// Means over the first `counts[i]` online samples. Lattice rules are
    /// not extensible, so each count gets its own point set.
    fn means(
        &self,
        sys: &GalerkinSystem,
        method: SampleMethod,
        seed: u64,
        m: usize,
        eps: f64,
        counts: &[usize],
    ) -> Result<Vec<Vec<Complex64>>> {
        let psi = gaussian_initial(&sys.fine_grid);
        let (t, dt) = (self.cfg.problem.t_final, self.dt(eps));
        if method == SampleMethod::ShiftedLattice {
            return counts
                .iter()
                .map(|&n| Ok(online_means(sys, &self.points(method, n, m, seed)?, &psi, t, dt, &[n])?.remove(0)))
                .collect();
        }
        let n_max = *counts.last().expect("non-empty counts");
        online_means(sys, &self.points(method, n_max, m, seed)?, &psi, t, dt, counts)
    }

    fn dt(&self, eps: f64) -> f64 {
        self.cfg.dt_for(eps)
    }

    fn reference(&self, spec: &PotentialSpec, eps: f64, counts: &[usize]) -> Result<Reference> {
        let cells = self.cfg.reference.fine_cells.unwrap_or(self.cfg.problem.fine_cells);
        let grid = self.grid(cells)?;
        let potential = spec.build(&grid)?;
        let sys = GalerkinSystem::fine(&grid, &potential, eps)?;
        log::info!("reference: {} samples on {} fine cells", counts.last().unwrap_or(&0), cells);
        let means =
            self.means(&sys, self.cfg.reference.method, reference_seed(self.cfg.seed), spec.m, eps, counts)?;
        Ok(Reference { grid, means })
    }

    /// Relative errors evaluated at the nodes shared by both grids.
    fn compare(&self, grid: &PeriodicGrid, num: &[Complex64], rgrid: &PeriodicGrid, reference: &[Complex64]) -> Result<ErrorReport> {
        let (g, a, b) = if rgrid.num_nodes() >= grid.num_nodes() {
            (grid, num.to_vec(), restrict_to(rgrid, grid, reference)?)
        } else {
            (rgrid, restrict_to(grid, rgrid, num)?, reference.to_vec())
        };
        relative_errors(&a, &b, &fem::assemble_stiffness(g), &fem::assemble_mass(g))
    }

    fn context(&self, coarse_cells: usize) -> Result<BasisContext> {
        let map = CoarseFineMap::new(self.grid(coarse_cells)?, self.fine_grid()?)?;
        Ok(BasisContext::new(map))
    }

    fn l_star(&self, ctx: &BasisContext) -> usize {
        self.cfg.offline.l_star.unwrap_or_else(|| default_localization(&ctx.map))
    }

    fn offline_points(&self, m: usize, q: usize) -> Result<Vec<Vec<f64>>> {
        self.points(self.cfg.offline.method, q, m, offline_seed(self.cfg.seed))
    }

    fn snapshot_key(&self, spec: &PotentialSpec, eps: f64, ctx: &BasisContext, q: usize) -> CacheKey {
        cache::snapshot_key(
            spec,
            eps,
            ctx.map.coarse.n_cells(0),
            ctx.map.fine.n_cells(0),
            self.cfg.problem.dim,
            self.l_star(ctx),
            q,
            self.cfg.offline.method,
            offline_seed(self.cfg.seed),
        )
    }

    /// Offline stage (POD per node), reusing a cached result when present.
    fn reduced(
        &self,
        spec: &PotentialSpec,
        eps: f64,
        ctx: &BasisContext,
        q: usize,
        criterion: PodCriterion,
    ) -> Result<Vec<ReducedBasisSet>> {
        let inner = self.cfg.offline.inner_product;
        let key = cache::reduced_key(&self.snapshot_key(spec, eps, ctx, q), criterion, inner);
        let path = self.cache_dir.as_ref().map(|d| d.join(format!("reduced-{}.bin", &key.hex()[..16])));
        if let Some(p) = &path {
            if p.exists() {
                match cache::load_reduced(p, &key) {
                    Ok(sets) => {
                        log::info!("offline cache hit: {}", p.display());
                        return Ok(sets);
                    }
                    Err(e) => log::warn!("ignoring cache file {}: {e}", p.display()),
                }
            }
        }
        let potential = spec.build(&ctx.map.fine)?;
        let xis = self.offline_points(spec.m, q)?;
        let l_star = self.l_star(ctx);
        let (ok, ratio) = resolution_check(eps, ctx.map.coarse.spacing(0), potential.bounds().1.abs().max(potential.bounds().0.abs()), 1.0);
        if !ok {
            log::warn!("coarse mesh under-resolves the problem: sqrt(V0) H / eps = {ratio:.3}");
        }
        log::info!("offline: {} nodes x {q} samples, l* = {l_star}", ctx.n_coarse());
        let sets = reduced_bases(ctx, &potential, &xis, eps, l_star, criterion, inner)?;
        if let Some(p) = &path {
            cache::write_atomic(p, &cache::encode_reduced(&key, ctx.n_fine(), &sets))?;
        }
        Ok(sets)
    }

    /// Online system for `spec` in the requested space.
    fn system(&self, spec: &PotentialSpec, eps: f64, solver: Solver, sets: Option<&[ReducedBasisSet]>) -> Result<GalerkinSystem> {
        let grid = self.fine_grid()?;
        let potential = spec.build(&grid)?;
        match (solver, sets) {
            (Solver::Reduced, Some(s)) => GalerkinSystem::reduced(s, &grid, &potential, eps),
            (Solver::Reduced, None) => Err(Error::InvalidArgument("reduced solver needs basis sets".into())),
            (Solver::Fine, _) => GalerkinSystem::fine(&grid, &potential, eps),
        }
    }

    fn method_system(&self, spec: &PotentialSpec, eps: f64, coarse: usize, q: usize, criterion: PodCriterion) -> Result<GalerkinSystem> {
        let ctx = self.context(coarse)?;
        let sets = self.reduced(spec, eps, &ctx, q, criterion)?;
        self.system(spec, eps, Solver::Reduced, Some(&sets))
    }

    fn converge_h(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let cells = or_default(&cfg.sweep.coarse_cells, &[32, 64, 128, 256]);
        let reference = self.reference(&cfg.potential, eps, &[cfg.reference.samples])?;
        let mut t = Table::new("converge-h", &["coarse_cells", "H", "error_l2", "order_l2", "error_h1", "order_h1"]);
        let mut reports = Vec::new();
        for &c in &cells {
            let sys = self.method_system(&cfg.potential, eps, c, cfg.offline.samples, cfg.offline.criterion())?;
            let mean = self.means(&sys, cfg.online.method, online_seed(cfg.seed), cfg.potential.m, eps, &[cfg.online.samples])?;
            let r = self.compare(&sys.fine_grid, &mean[0], &reference.grid, &reference.means[0])?;
            log::info!("H = 2pi/{c}: L2 {:.3e}, H1 {:.3e}", r.error_l2, r.error_h1);
            reports.push(r);
        }
        let o2 = halving_orders(&reports.iter().map(|r| r.error_l2).collect::<Vec<_>>());
        let o1 = halving_orders(&reports.iter().map(|r| r.error_h1).collect::<Vec<_>>());
        for (i, &c) in cells.iter().enumerate() {
            let h = 2.0 * std::f64::consts::PI / c as f64;
            t.push(vec![
                c as f64,
                h,
                reports[i].error_l2,
                o2[i].unwrap_or(f64::NAN),
                reports[i].error_h1,
                o1[i].unwrap_or(f64::NAN),
            ]);
        }
        Ok(vec![t])
    }

    fn converge_pod(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let modes = or_default(&cfg.sweep.pod_modes, &[1, 2, 3, 4, 5]);
        let reference = self.reference(&cfg.potential, eps, &[cfg.reference.samples])?;
        let ctx = self.context(cfg.offline.coarse_cells)?;
        let potential = cfg.potential.build(&ctx.map.fine)?;
        let xis = self.offline_points(cfg.potential.m, cfg.offline.samples)?;
        let snaps = generate_snapshots(&ctx, &potential, &xis, eps, self.l_star(&ctx))?;
        let mut t = Table::new("converge-pod", &["m_k", "energy_ratio", "error_l2", "error_h1"]);
        for &mk in &modes {
            let sets = compress(&ctx, &snaps, PodCriterion::Fixed(mk), cfg.offline.inner_product)?;
            let ratio = sets.iter().map(|s| energy_ratio(&s.eigenvalues, s.m_k())).fold(1.0, f64::min);
            let sys = self.system(&cfg.potential, eps, Solver::Reduced, Some(&sets))?;
            let mean = self.means(&sys, cfg.online.method, online_seed(cfg.seed), cfg.potential.m, eps, &[cfg.online.samples])?;
            let r = self.compare(&sys.fine_grid, &mean[0], &reference.grid, &reference.means[0])?;
            log::info!("m_k = {mk}: L2 {:.3e}, H1 {:.3e}", r.error_l2, r.error_h1);
            t.push(vec![mk as f64, ratio, r.error_l2, r.error_h1]);
        }
        Ok(vec![t])
    }

    fn online_system(&self, spec: &PotentialSpec, eps: f64, default: Solver) -> Result<GalerkinSystem> {
        match self.cfg.online_solver(default) {
            Solver::Fine => self.system(spec, eps, Solver::Fine, None),
            Solver::Reduced => {
                let o = &self.cfg.offline;
                self.method_system(spec, eps, o.coarse_cells, o.samples, o.criterion())
            }
        }
    }

    fn converge_qmc(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let m = cfg.potential.m;
        let counts = or_default(&cfg.sweep.online_samples, &[160, 320, 640, 1280, 2560]);
        let reference = self.reference(&cfg.potential, eps, &[cfg.reference.samples])?;
        let sys = self.online_system(&cfg.potential, eps, Solver::Reduced)?;
        let err = |means: Vec<Vec<Complex64>>| -> Result<Vec<ErrorReport>> {
            means.iter().map(|mu| self.compare(&sys.fine_grid, mu, &reference.grid, &reference.means[0])).collect()
        };
        let qmc = err(self.means(&sys, cfg.online.method, online_seed(cfg.seed), m, eps, &counts)?)?;
        let reps = cfg.sweep.mc_replicates.unwrap_or(1);
        let mut mc_sq = vec![(0.0, 0.0); counts.len()];
        for r in 0..reps {
            let e = err(self.means(&sys, SampleMethod::Mc, replicate_seed(cfg.seed, r), m, eps, &counts)?)?;
            for (acc, x) in mc_sq.iter_mut().zip(&e) {
                acc.0 += x.error_l2 * x.error_l2 / reps as f64;
                acc.1 += x.error_h1 * x.error_h1 / reps as f64;
            }
        }
        let mut t = Table::new("converge-qmc", &["n", "error_l2_qmc", "error_h1_qmc", "error_l2_mc", "error_h1_mc"]);
        for (i, &n) in counts.iter().enumerate() {
            t.push(vec![n as f64, qmc[i].error_l2, qmc[i].error_h1, mc_sq[i].0.sqrt(), mc_sq[i].1.sqrt()]);
        }
        let mut rates = Table::new("converge-qmc-rates", &["rate_qmc", "rate_mc", "mc_replicates"]);
        let fit = |e: Vec<f64>| {
            let pts: Vec<(f64, f64)> = counts.iter().map(|&n| n as f64).zip(e).collect();
            convergence_rate_fit(&pts).unwrap_or(f64::NAN)
        };
        rates.push(vec![
            fit(qmc.iter().map(|r| r.error_l2).collect()),
            fit(mc_sq.iter().map(|r| r.0.sqrt()).collect()),
            reps as f64,
        ]);
        Ok(vec![t, rates])
    }

    fn offline_q(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let qs = or_default(&cfg.sweep.offline_samples, &[10, 100, 200, 400]);
        let reference = self.reference(&cfg.potential, eps, &[cfg.reference.samples])?;
        let mut t = Table::new("offline-q", &["Q", "error_l2", "error_h1"]);
        for &q in &qs {
            let sys = self.method_system(&cfg.potential, eps, cfg.offline.coarse_cells, q, cfg.offline.criterion())?;
            let mean = self.means(&sys, cfg.online.method, online_seed(cfg.seed), cfg.potential.m, eps, &[cfg.online.samples])?;
            let r = self.compare(&sys.fine_grid, &mean[0], &reference.grid, &reference.means[0])?;
            log::info!("Q = {q}: L2 {:.3e}, H1 {:.3e}", r.error_l2, r.error_h1);
            t.push(vec![q as f64, r.error_l2, r.error_h1]);
        }
        Ok(vec![t])
    }

    /// Smallest qMC sample count meeting the error target, per ε or per m.
    fn qmc_scaling(&self, what: Scaling) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let target = cfg.sweep.target_error.unwrap_or(4.5e-3);
        let ladder = if cfg.sweep.online_samples.is_empty() {
            (1..=cfg.online.samples / 40).map(|k| 40 * k).collect()
        } else {
            cfg.sweep.online_samples.clone()
        };
        if ladder.is_empty() {
            return Err(Error::Config("online.samples: the sample ladder is empty (need at least 40)".into()));
        }
        let params: Vec<(f64, PotentialSpec)> = match what {
            Scaling::Epsilon => or_default(&cfg.sweep.epsilons, &[0.25, 0.125, 0.0625])
                .into_iter()
                .map(|e| (e, cfg.potential.clone()))
                .collect(),
            Scaling::Dimension => or_default(&cfg.sweep.m_values, &[1, 2, 4, 8])
                .into_iter()
                .map(|m| {
                    let mut s = cfg.potential.clone();
                    s.m = m;
                    (m as f64, s)
                })
                .collect(),
        };
        let label = match what {
            Scaling::Epsilon => "epsilon",
            Scaling::Dimension => "m",
        };
        let mut summary = Table::new(
            &format!("{}-required", cfg.experiment.name()),
            &[label, "required_n", "error_l2", "error_h1", "target"],
        );
        let mut series = Table::new(&format!("{}-ladder", cfg.experiment.name()), &[label, "n", "error_l2", "error_h1"]);
        for (value, spec) in params {
            let eps = if what == Scaling::Epsilon { value } else { cfg.problem.epsilon };
            let reference = self.reference(&spec, eps, &[cfg.reference.samples])?;
            let sys = self.online_system(&spec, eps, Solver::Fine)?;
            let means = self.means(&sys, cfg.online.method, online_seed(cfg.seed), spec.m, eps, &ladder)?;
            let reports: Vec<ErrorReport> = means
                .iter()
                .map(|mu| self.compare(&sys.fine_grid, mu, &reference.grid, &reference.means[0]))
                .collect::<Result<_>>()?;
            for (n, r) in ladder.iter().zip(&reports) {
                series.push(vec![value, *n as f64, r.error_l2, r.error_h1]);
            }
            let l2: Vec<f64> = reports.iter().map(|r| r.error_l2).collect();
            match required_index(&l2, target) {
                Some(i) => {
                    log::info!("{label} = {value}: n = {} reaches L2 {:.3e}", ladder[i], l2[i]);
                    summary.push(vec![value, ladder[i] as f64, reports[i].error_l2, reports[i].error_h1, target]);
                }
                None => {
                    log::warn!("{label} = {value}: target {target:e} not reached within {} samples", ladder[ladder.len() - 1]);
                    summary.push(vec![value, f64::NAN, f64::NAN, f64::NAN, target]);
                }
            }
        }
        Ok(vec![summary, series])
    }

    fn anderson(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let times = self.output_times();
        let sigmas = or_default(&cfg.sweep.sigmas, &[cfg.potential.sigma]);
        let betas = or_default(&cfg.sweep.betas, &[cfg.potential.beta]);
        let ms = or_default(&cfg.sweep.m_values, &[cfg.potential.m]);
        let name = cfg.experiment.name();
        let mut series = Table::new(&format!("{name}-moments"), &["sigma", "beta", "m", "t", "A"]);
        let mut plateau = Table::new(&format!("{name}-plateau"), &["sigma", "beta", "m", "relative_change"]);
        for &sigma in &sigmas {
            for &beta in &betas {
                for &m in &ms {
                    let mut spec = cfg.potential.clone();
                    spec.sigma = sigma;
                    spec.beta = beta;
                    spec.m = m;
                    let sys = self.online_system(&spec, eps, Solver::Reduced)?;
                    let xis = self.points(cfg.online.method, cfg.online.samples, m, online_seed(cfg.seed))?;
                    let a = moment_series(&sys, &xis, &gaussian_initial(&sys.fine_grid), &times, self.dt(eps))?;
                    for (&t, &v) in times.iter().zip(&a) {
                        series.push(vec![sigma, beta, m as f64, t, v]);
                    }
                    let change = final_quarter_change(&times, &a, cfg.problem.t_final);
                    log::info!("sigma = {sigma}, beta = {beta}, m = {m}: A(T) = {:.4}, final-quarter change {change:.3}", a[a.len() - 1]);
                    plateau.push(vec![sigma, beta, m as f64, change]);
                }
            }
        }
        Ok(vec![series, plateau])
    }

    fn output_times(&self) -> Vec<f64> {
        self.cfg.output_times()
    }

    fn decay_diagnostic(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let ctx = self.context(cfg.offline.coarse_cells)?;
        let potential = cfg.potential.build(&ctx.map.fine)?;
        let r = cfg.sweep.realizations.unwrap_or(4);
        let xis = self.offline_points(cfg.potential.m, r.max(2))?;
        let center = centre_node(&ctx.map.coarse);
        let layers = cfg.sweep.decay_layers.unwrap_or(ctx.map.coarse.n_cells(0) / 2);
        let problem = ctx.local_problem(center, None)?;
        let (v_min, _) = potential.bounds();
        let mut profile = Table::new("decay-profile", &["realization", "layer", "fraction"]);
        let mut fits = Table::new("decay-fit", &["realization", "slope", "r_squared", "layers_fitted"]);
        for (i, xi) in xis.iter().take(r).enumerate() {
            let v = fem::assemble_potential(&ctx.map.fine, &potential.sample(xi)?.values)?;
            let basis = problem.solve_with_shift(&v, eps, v_min)?;
            let prof = decay_profile(&ctx.map, &basis, layers)?;
            for &(l, f) in &prof {
                profile.push(vec![i as f64, l as f64, f]);
            }
            let fit = decay_fit(&prof);
            match fit {
                Some((f, n)) => fits.push(vec![i as f64, f.slope, f.r_squared, n as f64]),
                None => fits.push(vec![i as f64, f64::NAN, f64::NAN, 0.0]),
            }
        }
        Ok(vec![profile, fits])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scaling {
    Epsilon,
    Dimension,
}

fn or_default<T: Clone>(list: &[T], default: &[T]) -> Vec<T> {
    if list.is_empty() {
        default.to_vec()
    } else {
        list.to_vec()
    }
}

/// Fractions below this are dominated by round-off and excluded from the
/// decay fit.
pub const DECAY_FLOOR: f64 = 1e-6;

/// Least-squares fit of `ln(fraction)` against the layer over the layers
/// above [`DECAY_FLOOR`]; `None` with fewer than three such layers.
pub fn decay_fit(profile: &[(usize, f64)]) -> Option<(LinearFit, usize)> {
    let pts: Vec<(f64, f64)> =
        profile.iter().take_while(|p| p.1 > DECAY_FLOOR).map(|&(l, f)| (l as f64, f.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&x, &y).ok().map(|f| (f, x.len()))
}

/// Index of the first entry after which every error is at most `target`.
pub fn required_index(errors: &[f64], target: f64) -> Option<usize> {
    let mut idx = None;
    for (i, &e) in errors.iter().enumerate().rev() {
        if e <= target {
            idx = Some(i);
        } else {
            break;
        }
    }
    idx
}

/// `(max − min) / A(3T/4)` over the output times in `[3T/4, T]`.
pub fn final_quarter_change(times: &[f64], a: &[f64], t_final: f64) -> f64 {
    let start = 0.75 * t_final - 1e-12;
    let window: Vec<f64> = times.iter().zip(a).filter(|(&t, _)| t >= start).map(|(_, &v)| v).collect();
    if window.is_empty() {
        return f64::NAN;
    }
    let max = window.iter().cloned().fold(f64::MIN, f64::max);
    let min = window.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / window[0]
}

/// Coarse node at the origin of `[-π, π)^d`.
pub fn centre_node(coarse: &PeriodicGrid) -> usize {
    let half = |a: usize| (coarse.n_cells(a) / 2) as i64;
    if coarse.dim() == 1 {
        coarse.wrap_index([half(0), 0])
    } else {
        coarse.wrap_index([half(0), half(1)])
    }
}

/// One-line reproducibility record written at the top of every CSV.
pub fn manifest(cfg: &Config, timestamp: Option<String>) -> String {
    let mut s = format!(
        "experiment={} config_sha256={} seed={} dt={:e} params={}",
        cfg.experiment.name(),
        cfg.content_hash(),
        cfg.seed,
        cfg.dt(),
        cfg.canonical().lines().filter(|l| !l.trim().is_empty()).collect::<Vec<_>>().join(" ")
    );
    if let Some(t) = timestamp {
        s.push_str(&format!(" timestamp={t}"));
    }
    s
}

/// Result of a cached stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Hit,
    Built,
}

impl<'a> Runner<'a> {
    fn cache_path(&self, name: &str) -> Result<PathBuf> {
        let dir = self
            .cache_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("stage commands need a cache directory".into()))?;
        std::fs::create_dir_all(dir)?;
        Ok(dir.join(name))
    }

    fn stage_key(&self) -> Result<(BasisContext, CacheKey)> {
        let cfg = self.cfg;
        let ctx = self.context(cfg.offline.coarse_cells)?;
        let key = self.snapshot_key(&cfg.potential, cfg.problem.epsilon, &ctx, cfg.offline.samples);
        Ok((ctx, key))
    }

    /// Checks a stage file against `key`: `Ok(true)` on a hit, `Ok(false)`
    /// when absent or when `force` discards a stale file.
    fn check_cache(path: &std::path::Path, key: &CacheKey, force: bool) -> Result<bool> {
        if !path.exists() {
            return Ok(false);
        }
        let found = cache::stored_digest(path)?;
        if found == key.digest() {
            return Ok(true);
        }
        if force {
            log::warn!("overwriting stale cache {}", path.display());
            return Ok(false);
        }
        Err(Error::CacheMismatch { expected: key.hex(), found: hex::encode(found) })
    }

    /// Snapshot stage: solves the local QPs for every node and offline sample.
    pub fn basis_build(&self, force: bool) -> Result<StageOutcome> {
        let cfg = self.cfg;
        let (ctx, key) = self.stage_key()?;
        let path = self.cache_path("snapshots.bin")?;
        if Self::check_cache(&path, &key, force)? {
            log::info!("snapshot cache hit: {}", path.display());
            return Ok(StageOutcome::Hit);
        }
        let potential = cfg.potential.build(&ctx.map.fine)?;
        let xis = self.offline_points(cfg.potential.m, cfg.offline.samples)?;
        let l_star = self.l_star(&ctx);
        log::info!("building snapshots: {} nodes x {} samples, l* = {l_star}", ctx.n_coarse(), xis.len());
        let snaps = generate_snapshots(&ctx, &potential, &xis, cfg.problem.epsilon, l_star)?;
        cache::write_atomic(&path, &cache::encode_snapshots(&key, ctx.n_fine(), &snaps))?;
        Ok(StageOutcome::Built)
    }

    /// POD stage: compresses the cached snapshots and reports the retained
    /// mode count per node.
    pub fn pod(&self, force: bool) -> Result<(StageOutcome, Table)> {
        let cfg = self.cfg;
        let (ctx, snap_key) = self.stage_key()?;
        let criterion = cfg.offline.criterion();
        let inner = cfg.offline.inner_product;
        let key = cache::reduced_key(&snap_key, criterion, inner);
        let path = self.cache_path("reduced.bin")?;
        let (outcome, sets) = if Self::check_cache(&path, &key, force)? {
            (StageOutcome::Hit, cache::load_reduced(&path, &key)?)
        } else {
            let snap_path = self.cache_path("snapshots.bin")?;
            if !snap_path.exists() {
                return Err(Error::Cache(format!("{} not found; run basis-build first", snap_path.display())));
            }
            let snaps = cache::load_snapshots(&snap_path, &snap_key)?;
            let sets = compress(&ctx, &snaps, criterion, inner)?;
            cache::write_atomic(&path, &cache::encode_reduced(&key, ctx.n_fine(), &sets))?;
            (StageOutcome::Built, sets)
        };
        let mut t = Table::new("pod-modes", &["node", "m_k", "energy_ratio"]);
        for s in &sets {
            t.push(vec![s.node as f64, s.m_k() as f64, energy_ratio(&s.eigenvalues, s.m_k())]);
        }
        Ok((outcome, t))
    }

    /// Online stage: expected wavefunction at the final time from the cached
    /// reduced bases (or the fine solver when configured).
    pub fn solve(&self) -> Result<Vec<Table>> {
        let cfg = self.cfg;
        let eps = cfg.problem.epsilon;
        let sys = match cfg.online_solver(Solver::Reduced) {
            Solver::Fine => self.system(&cfg.potential, eps, Solver::Fine, None)?,
            Solver::Reduced => {
                let (_, snap_key) = self.stage_key()?;
                let key = cache::reduced_key(&snap_key, cfg.offline.criterion(), cfg.offline.inner_product);
                let path = self.cache_path("reduced.bin")?;
                if !path.exists() {
                    return Err(Error::Cache(format!("{} not found; run pod first", path.display())));
                }
                let sets = cache::load_reduced(&path, &key)?;
                self.system(&cfg.potential, eps, Solver::Reduced, Some(&sets))?
            }
        };
        let n = cfg.online.samples;
        let mean = self.means(&sys, cfg.online.method, online_seed(cfg.seed), cfg.potential.m, eps, &[n])?.remove(0);
        let grid = &sys.fine_grid;
        let mut field = Table::new("solve-mean", &["x", "y", "re", "im"]);
        for (i, z) in mean.iter().enumerate() {
            let c = grid.coord(i);
            let y = if grid.dim() == 2 { c[1] } else { f64::NAN };
            field.push(vec![c[0], y, z.re, z.im]);
        }
        let mut summary = Table::new("solve-summary", &["samples", "t", "l2_norm", "second_moment"]);
        summary.push(vec![
            n as f64,
            cfg.problem.t_final,
            crate::observables::l2_norm(&sys.fine_mass, &mean),
            position_moment(grid, &mean),
        ]);
        Ok(vec![summary, field])
    }
}
