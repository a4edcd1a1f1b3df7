//! Point sets in `[0,1]^m` (Monte Carlo, Sobol, randomly shifted lattice),
//! the map to the random variables `ξ`, and order-deterministic means.

mod sobol_table;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Scalar;
use crate::randfield::SQRT3;
use crate::{Error, Result};
use sobol_table::SOBOL_TABLE;

pub const MAX_SOBOL_DIM: usize = 64;
const BITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    Mc,
    Sobol,
    ShiftedLattice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub method: SampleMethod,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub generating_vector: Option<Vec<u64>>,
    pub shift: Option<Vec<f64>>,
}

impl SamplePlan {
    pub fn new(method: SampleMethod, n: usize, m: usize, seed: u64) -> Self {
        Self { method, n, m, seed, generating_vector: None, shift: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("sample plan needs n ≥ 1 and m ≥ 1".into()));
        }
        match self.method {
            SampleMethod::Sobol if self.m > MAX_SOBOL_DIM => Err(Error::InvalidArgument(format!(
                "Sobol points are available up to dimension {MAX_SOBOL_DIM}, requested {}",
                self.m
            ))),
            SampleMethod::ShiftedLattice => {
                match &self.generating_vector {
                    Some(z) if z.len() == self.m => {}
                    Some(z) => {
                        return Err(Error::Dimension(format!(
                            "generating vector has length {}, expected {}",
                            z.len(),
                            self.m
                        )))
                    }
                    None => return Err(Error::InvalidArgument("shifted lattice needs a generating vector".into())),
                }
                if let Some(s) = &self.shift {
                    if s.len() != self.m || s.iter().any(|x| !(0.0..=1.0).contains(x)) {
                        return Err(Error::InvalidArgument("lattice shift must be a vector in [0,1]^m".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Gray-code Sobol generator. The all-zero point at index 0 is skipped, so
/// the first point returned is `(0.5, …, 0.5)`.
#[derive(Debug, Clone)]
pub struct Sobol {
    dim: usize,
    v: Vec<[u32; BITS]>,
    x: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_SOBOL_DIM {
            return Err(Error::InvalidArgument(format!("Sobol dimension must be in 1..={MAX_SOBOL_DIM}")));
        }
        let mut v = vec![[0u32; BITS]; dim];
        for k in 0..BITS {
            v[0][k] = 1 << (BITS - 1 - k);
        }
        for j in 1..dim {
            let (poly, init) = SOBOL_TABLE[j - 1];
            let s = init.len();
            for k in 0..BITS {
                v[j][k] = if k < s {
                    init[k] << (BITS - 1 - k)
                } else {
                    let mut x = v[j][k - s] ^ (v[j][k - s] >> s);
                    for l in 1..s {
                        if (poly >> (s - l)) & 1 == 1 {
                            x ^= v[j][k - l];
                        }
                    }
                    x
                };
            }
        }
        let mut g = Self { dim, v, x: vec![0; dim], index: 0 };
        g.advance();
        Ok(g)
    }

    fn advance(&mut self) {
        let c = (!self.index).trailing_zeros() as usize;
        for j in 0..self.dim {
            self.x[j] ^= self.v[j][c];
        }
        self.index += 1;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let p = self.x.iter().map(|&x| x as f64 * scale).collect();
        self.advance();
        p
    }
}

pub fn generate(plan: &SamplePlan) -> Result<Vec<Vec<f64>>> {
    plan.validate()?;
    let (n, m) = (plan.n, plan.m);
    Ok(match plan.method {
        SampleMethod::Mc => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            (0..n).map(|_| (0..m).map(|_| rng.gen::<f64>()).collect()).collect()
        }
        SampleMethod::Sobol => {
            let mut s = Sobol::new(m)?;
            (0..n).map(|_| s.next_point()).collect()
        }
        SampleMethod::ShiftedLattice => {
            let z = plan.generating_vector.as_ref().expect("validated");
            let shift = match &plan.shift {
                Some(s) => s.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
                    (0..m).map(|_| rng.gen::<f64>()).collect()
                }
            };
            let nn = n as u128;
            (1..=n)
                .map(|i| {
                    (0..m)
                        .map(|j| {
                            let r = ((i as u128 * z[j] as u128) % nn) as f64 / n as f64;
                            let u = r + shift[j];
                            u - u.floor()
                        })
                        .collect()
                })
                .collect()
        }
    })
}

/// `ξ = √3 (2u − 1)` componentwise.
pub fn to_xi(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.iter().map(|&u| SQRT3 * (2.0 * u - 1.0)).collect()).collect()
}

/// Parses a generating vector: one positive integer per line. Blank lines
/// and `#` comments are ignored.
pub fn parse_generating_vector(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let z: u64 = line
            .parse()
            .map_err(|e| Error::Parse { line: i + 1, msg: format!("{line:?}: {e}") })?;
        if z == 0 {
            return Err(Error::Parse { line: i + 1, msg: "generating vector entries must be positive".into() });
        }
        out.push(z);
    }
    if out.is_empty() {
        return Err(Error::Parse { line: 0, msg: "empty generating vector".into() });
    }
    Ok(out)
}

/// Running mean with a fixed pairwise summation tree: after pushing `n`
/// values the result depends only on those values and their order.
#[derive(Debug, Clone)]
pub struct CascadeMean<T> {
    stack: Vec<(usize, Vec<T>)>,
    count: usize,
}

impl<T: Scalar> Default for CascadeMean<T> {
    fn default() -> Self {
        Self { stack: Vec::new(), count: 0 }
    }
}

impl<T: Scalar> CascadeMean<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, v: Vec<T>) -> Result<()> {
        if let Some((_, first)) = self.stack.first() {
            if first.len() != v.len() {
                return Err(Error::Dimension(format!("mean of vectors of lengths {} and {}", first.len(), v.len())));
            }
        }
        self.count += 1;
        self.stack.push((1, v));
        while self.stack.len() >= 2 {
            let k = self.stack.len();
            if self.stack[k - 1].0 != self.stack[k - 2].0 {
                break;
            }
            let (c, top) = self.stack.pop().unwrap();
            let below = self.stack.last_mut().unwrap();
            for (a, b) in below.1.iter_mut().zip(top) {
                *a += b;
            }
            below.0 += c;
        }
        Ok(())
    }

    pub fn mean(&self) -> Result<Vec<T>> {
        let mut it = self.stack.iter();
        let (_, first) = it.next().ok_or_else(|| Error::InvalidArgument("mean of an empty set".into()))?;
        let mut acc = first.clone();
        for (_, part) in it {
            for (a, &b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
        let inv = 1.0 / self.count as f64;
        Ok(acc.into_iter().map(|a| a * inv).collect())
    }
}

/// Mean of equal-length vectors with pairwise summation.
pub fn qmc_mean<T: Scalar>(values: &[Vec<T>]) -> Result<Vec<T>> {
    let mut acc = CascadeMean::new();
    for v in values {
        acc.push(v.clone())?;
    }
    acc.mean()
}

/// Squared L2 star discrepancy (Warnock's formula).
pub fn l2_star_discrepancy_sq(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points.first().map_or(0, |p| p.len()) as i32;
    let mut single = 0.0;
    for p in points {
        single += p.iter().map(|&x| 1.0 - x * x).product::<f64>();
    }
    let mut pair = 0.0;
    for p in points {
        for q in points {
            pair += p.iter().zip(q).map(|(&a, &b)| 1.0 - a.max(b)).product::<f64>();
        }
    }
    3f64.powi(-d) - 2f64.powi(1 - d) / n * single + pair / (n * n)
}
