//! Experiment configuration: a TOML document with one section per stage,
//! plus command-line overrides of the common scalars.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pod::{InnerProduct, PodCriterion};
use crate::randfield::{PotentialKind, PotentialSpec, THREE_SCALE_E};
use crate::sampling::SampleMethod;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ConvergeH,
    ConvergePod,
    ConvergeQmc,
    OfflineQ,
    QmcEpsScaling,
    QmcDimScaling,
    #[serde(rename = "anderson-1d")]
    Anderson1d,
    #[serde(rename = "anderson-2d")]
    Anderson2d,
    DecayDiagnostic,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::ConvergeH => "converge-h",
            Experiment::ConvergePod => "converge-pod",
            Experiment::ConvergeQmc => "converge-qmc",
            Experiment::OfflineQ => "offline-q",
            Experiment::QmcEpsScaling => "qmc-eps-scaling",
            Experiment::QmcDimScaling => "qmc-dim-scaling",
            Experiment::Anderson1d => "anderson-1d",
            Experiment::Anderson2d => "anderson-2d",
            Experiment::DecayDiagnostic => "decay-diagnostic",
        }
    }
}

/// Which Galerkin space the online stage evolves in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Reduced,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Experiment,
    /// Base seed; the stages derive their own seeds from it.
    #[serde(default)]
    pub seed: u64,
    pub problem: Problem,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub offline: Offline,
    #[serde(default)]
    pub online: Online,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    #[serde(default = "one_usize")]
    pub dim: usize,
    pub epsilon: f64,
    #[serde(rename = "T", alias = "t_final")]
    pub t_final: f64,
    /// Time step; `dt_ratio · ε` when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Time step relative to ε, applied per ε in sweeps.
    #[serde(default = "d_dt_ratio")]
    pub dt_ratio: f64,
    pub fine_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Offline {
    #[serde(default = "d_coarse")]
    pub coarse_cells: usize,
    /// Localization layers; `ceil(log₂(L/H))` when absent.
    #[serde(default)]
    pub l_star: Option<usize>,
    #[serde(default = "d_offline_samples")]
    pub samples: usize,
    #[serde(default = "d_sobol")]
    pub method: SampleMethod,
    /// Fixed number of POD modes per node.
    #[serde(default)]
    pub pod_modes: Option<usize>,
    /// Energy ratio ρ; used when `pod_modes` is absent.
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default = "d_inner")]
    pub inner_product: InnerProduct,
}

impl Default for Offline {
    fn default() -> Self {
        Self {
            coarse_cells: d_coarse(),
            l_star: None,
            samples: d_offline_samples(),
            method: d_sobol(),
            pod_modes: None,
            energy: None,
            inner_product: d_inner(),
        }
    }
}

impl Offline {
    pub fn criterion(&self) -> PodCriterion {
        match (self.pod_modes, self.energy) {
            (Some(m), _) => PodCriterion::Fixed(m),
            (None, Some(rho)) => PodCriterion::Energy(rho),
            (None, None) => PodCriterion::Fixed(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Online {
    #[serde(default = "d_online_samples")]
    pub samples: usize,
    #[serde(default = "d_sobol")]
    pub method: SampleMethod,
    /// Online solver; the reduced basis unless an experiment needs otherwise.
    #[serde(default)]
    pub solver: Option<Solver>,
    /// Generating-vector file for shifted-lattice sampling.
    #[serde(default)]
    pub generating_vector: Option<PathBuf>,
    /// Output times of `A(t)` series; `output_steps + 1` equispaced times
    /// on `[0, T]` when empty.
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default = "d_output_steps")]
    pub output_steps: usize,
}

impl Default for Online {
    fn default() -> Self {
        Self {
            samples: d_online_samples(),
            method: d_sobol(),
            solver: None,
            generating_vector: None,
            output_times: Vec::new(),
            output_steps: d_output_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    /// Fine cells of the reference run; the problem's fine grid when absent.
    #[serde(default)]
    pub fine_cells: Option<usize>,
    #[serde(default = "d_reference_samples")]
    pub samples: usize,
    #[serde(default = "d_sobol")]
    pub method: SampleMethod,
}

impl Default for Reference {
    fn default() -> Self {
        Self { fine_cells: None, samples: d_reference_samples(), method: d_sobol() }
    }
}

/// Parameter lists swept by the experiments; empty lists take the
/// experiment's default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub coarse_cells: Vec<usize>,
    #[serde(default)]
    pub pod_modes: Vec<usize>,
    #[serde(default)]
    pub offline_samples: Vec<usize>,
    #[serde(default)]
    pub online_samples: Vec<usize>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub m_values: Vec<usize>,
    #[serde(default)]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    /// Target L² error of the sample-count searches.
    #[serde(default)]
    pub target_error: Option<f64>,
    /// Independent Monte Carlo replicates averaged in the MC error.
    #[serde(default)]
    pub mc_replicates: Option<usize>,
    /// Potential realizations of the decay diagnostic.
    #[serde(default)]
    pub realizations: Option<usize>,
    #[serde(default)]
    pub decay_layers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
    /// Adds a wall-clock timestamp to manifests (breaks bit-identical
    /// reruns).
    #[serde(default)]
    pub timestamp: bool,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: d_out(), timestamp: false }
    }
}

fn d_dt_ratio() -> f64 {
    0.01
}
fn one_usize() -> usize {
    1
}
fn d_coarse() -> usize {
    128
}
fn d_offline_samples() -> usize {
    200
}
fn d_online_samples() -> usize {
    2560
}
fn d_reference_samples() -> usize {
    4000
}
fn d_output_steps() -> usize {
    40
}
fn d_sobol() -> SampleMethod {
    SampleMethod::Sobol
}
fn d_inner() -> InnerProduct {
    InnerProduct::L2
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides; `None` leaves the config value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub sigma: Option<f64>,
    pub beta: Option<f64>,
    pub m: Option<usize>,
    pub coarse_cells: Option<usize>,
    pub fine_cells: Option<usize>,
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub samples: Option<usize>,
    pub offline_samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

impl Config {
    /// Parses and validates a TOML document. Errors name the offending
    /// field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let mut cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim().to_string();
            let line = inner.span().map(|s| 1 + text[..s.start.min(text.len())].matches('\n').count());
            match line {
                Some(l) => Error::Config(format!("{path}: {msg} (line {l})")),
                None => Error::Config(format!("{path}: {msg}")),
            }
        })?;
        let p = &mut cfg.potential;
        if p.kind == PotentialKind::ThreeScale && p.e.is_empty() && p.m == THREE_SCALE_E.len() {
            p.e = THREE_SCALE_E.to_vec();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies `o`; on a validation error the config is left unchanged.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let mut next = self.clone();
        next.apply_unchecked(o);
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn apply_unchecked(&mut self, o: &Overrides) {
        if let Some(v) = o.epsilon {
            self.problem.epsilon = v;
        }
        if let Some(v) = o.sigma {
            self.potential.sigma = v;
        }
        if let Some(v) = o.beta {
            self.potential.beta = v;
        }
        if let Some(v) = o.m {
            self.potential.m = v;
        }
        if let Some(v) = o.coarse_cells {
            self.offline.coarse_cells = v;
        }
        if let Some(v) = o.fine_cells {
            self.problem.fine_cells = v;
        }
        if let Some(v) = o.t_final {
            self.problem.t_final = v;
        }
        if let Some(v) = o.dt {
            self.problem.dt = Some(v);
        }
        if let Some(v) = o.samples {
            self.online.samples = v;
        }
        if let Some(v) = o.offline_samples {
            self.offline.samples = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.output.dir = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if !(p.dim == 1 || p.dim == 2) {
            return Err(invalid("problem.dim", format!("must be 1 or 2, got {}", p.dim)));
        }
        if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            return Err(invalid("problem.epsilon", "must be positive"));
        }
        if !(p.t_final >= 0.0 && p.t_final.is_finite()) {
            return Err(invalid("problem.T", "must be non-negative"));
        }
        if !(p.dt_ratio > 0.0 && p.dt_ratio.is_finite()) {
            return Err(invalid("problem.dt_ratio", "must be positive"));
        }
        if let Some(dt) = p.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("problem.dt", "must be positive"));
            }
        }
        if p.fine_cells < 2 {
            return Err(invalid("problem.fine_cells", "must be at least 2"));
        }
        if self.potential.kind.dim() != p.dim && self.potential.kind != PotentialKind::GaussianKernel {
            return Err(invalid("potential.kind", format!("{:?} does not live in {}D", self.potential.kind, p.dim)));
        }
        if self.potential.m == 0 {
            return Err(invalid("potential.m", "must be at least 1"));
        }
        if !(self.potential.sigma >= 0.0) {
            return Err(invalid("potential.sigma", "must be non-negative"));
        }
        if self.potential.kind == PotentialKind::ThreeScale && self.potential.e.len() != self.potential.m {
            return Err(invalid(
                "potential.e",
                format!("needs one scale per mode ({} given, m = {})", self.potential.e.len(), self.potential.m),
            ));
        }
        let o = &self.offline;
        let nested = |c: usize| c >= 2 && p.fine_cells.is_multiple_of(c) && p.fine_cells / c >= 2;
        if !nested(o.coarse_cells) {
            return Err(invalid("offline.coarse_cells", "must be at least 2 and divide problem.fine_cells at least twice"));
        }
        if o.samples < 2 {
            return Err(invalid("offline.samples", "must be at least 2"));
        }
        if o.l_star == Some(0) {
            return Err(invalid("offline.l_star", "must be at least 1"));
        }
        if let Some(m) = o.pod_modes {
            if m == 0 || m > o.samples {
                return Err(invalid("offline.pod_modes", format!("must lie in 1..={}", o.samples)));
            }
        }
        if let Some(r) = o.energy {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid("offline.energy", "must lie in (0, 1]"));
            }
        }
        if self.online.samples == 0 {
            return Err(invalid("online.samples", "must be positive"));
        }
        if self.online.method == SampleMethod::ShiftedLattice && self.online.generating_vector.is_none() {
            return Err(invalid("online.generating_vector", "required for shifted-lattice sampling"));
        }
        if self.online.output_steps == 0 {
            return Err(invalid("online.output_steps", "must be positive"));
        }
        if self.online.output_times.windows(2).any(|w| w[0] > w[1]) || self.online.output_times.iter().any(|&t| t < 0.0) {
            return Err(invalid("online.output_times", "must be non-negative and ascending"));
        }
        if self.reference.samples == 0 {
            return Err(invalid("reference.samples", "must be positive"));
        }
        if let Some(rf) = self.reference.fine_cells {
            let (a, b) = (rf.max(p.fine_cells), rf.min(p.fine_cells));
            if b < 2 || a % b != 0 {
                return Err(invalid("reference.fine_cells", "must be nested with problem.fine_cells"));
            }
        }
        let s = &self.sweep;
        if !s.coarse_cells.iter().all(|&c| nested(c)) {
            return Err(invalid("sweep.coarse_cells", "every entry must divide problem.fine_cells at least twice"));
        }
        if s.pod_modes.contains(&0) {
            return Err(invalid("sweep.pod_modes", "entries must be positive"));
        }
        if s.offline_samples.iter().any(|&q| q < 2) {
            return Err(invalid("sweep.offline_samples", "entries must be at least 2"));
        }
        if s.online_samples.contains(&0) || s.online_samples.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sweep.online_samples", "entries must be positive and strictly ascending"));
        }
        if s.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(invalid("sweep.epsilons", "entries must be positive"));
        }
        if s.m_values.contains(&0) {
            return Err(invalid("sweep.m_values", "entries must be positive"));
        }
        if s.sigmas.iter().any(|&x| !(x >= 0.0)) {
            return Err(invalid("sweep.sigmas", "entries must be non-negative"));
        }
        if let Some(t) = s.target_error {
            if !(t > 0.0) {
                return Err(invalid("sweep.target_error", "must be positive"));
            }
        }
        if s.mc_replicates == Some(0) {
            return Err(invalid("sweep.mc_replicates", "must be positive"));
        }
        if s.realizations == Some(0) {
            return Err(invalid("sweep.realizations", "must be positive"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt_for(self.problem.epsilon)
    }

    /// Time step used at semiclassical parameter `eps`.
    pub fn dt_for(&self, eps: f64) -> f64 {
        self.problem.dt.unwrap_or(eps * self.problem.dt_ratio)
    }

    pub fn online_solver(&self, default: Solver) -> Solver {
        self.online.solver.unwrap_or(default)
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Output times of `A(t)` series.
    pub fn output_times(&self) -> Vec<f64> {
        if !self.online.output_times.is_empty() {
            return self.online.output_times.clone();
        }
        let n = self.online.output_steps;
        (0..=n).map(|k| self.problem.t_final * k as f64 / n as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "converge-h"

[problem]
epsilon = 0.0625
T = 1.0
fine_cells = 256

[potential]
kind = "three-scale"
m = 3
e = [0.1111111111111111, 0.07692307692307693, 0.09090909090909091]
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(c.experiment, Experiment::ConvergeH);
        assert_eq!(c.offline.samples, 200);
        assert_eq!(c.online.samples, 2560);
        assert_eq!(c.offline.criterion(), PodCriterion::Fixed(3));
        assert_eq!(c.dt(), 0.0625 / 100.0);
        assert_eq!(c.potential.sigma, 1.0);
        assert_eq!(c.output_times().len(), 41);
    }

    #[test]
    fn unknown_field_is_reported_with_path() {
        let text = MINIMAL.replace("fine_cells = 256", "fine_cells = 256\nfine_cell = 3");
        let err = Config::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("problem"), "{err}");
        assert!(err.contains("fine_cell"), "{err}");
    }

    #[test]
    fn semantic_errors_name_fields() {
        let text = MINIMAL.replace("epsilon = 0.0625", "epsilon = -1.0");
        assert!(Config::from_toml(&text).unwrap_err().to_string().contains("problem.epsilon"));
        let text = format!("{MINIMAL}\n[offline]\ncoarse_cells = 100\n");
        assert!(Config::from_toml(&text).unwrap_err().to_string().contains("offline.coarse_cells"));
        let text = MINIMAL.replace("m = 3", "m = 2");
        assert!(Config::from_toml(&text).unwrap_err().to_string().contains("potential.e"));
        let text = MINIMAL.replace("converge-h", "converge-x");
        assert!(Config::from_toml(&text).unwrap_err().to_string().contains("experiment"));
    }

    #[test]
    fn overrides_and_hash() {
        let mut c = Config::from_toml(MINIMAL).unwrap();
        let h0 = c.content_hash();
        assert_eq!(h0, Config::from_toml(MINIMAL).unwrap().content_hash());
        c.apply(&Overrides { epsilon: Some(0.125), samples: Some(16), seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!((c.problem.epsilon, c.online.samples, c.seed), (0.125, 16, 9));
        assert_ne!(c.content_hash(), h0);
        assert!(c.apply(&Overrides { coarse_cells: Some(7), ..Default::default() }).is_err());
        let back = Config::from_toml(&c.canonical()).unwrap();
        assert_eq!(back, c);
    }
}
