//! Sparse linear algebra used throughout the solver: CSR storage, reverse
//! Cuthill–McKee ordering, a profile (skyline) LDLᵀ factorization that works
//! for real symmetric and complex symmetric matrices, and a COCG iteration
//! for complex symmetric systems too large to factor.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A pivot fell below the tolerance. `index` refers to the original
    /// (unpermuted) row.
    #[error("near-zero pivot {value:e} at row {index}")]
    ZeroPivot { index: usize, value: f64 },
    #[error("iterative solver stalled after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Field element the factorizations are generic over. Complex symmetric
/// matrices are handled with the plain transpose, never the conjugate.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn modulus(self) -> f64;
    fn real(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn real(self) -> f64 {
        self
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn real(self) -> f64 {
        self.re
    }
}

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed in input order, so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) outside {nrows}x{ncols}");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut buckets: Vec<(usize, T)> = vec![(0, T::zero()); triplets.len()];
        for &(i, j, v) in triplets {
            buckets[fill[i]] = (j, v);
            fill[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut buckets[counts[i]..counts[i + 1]];
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut acc = row[k].1;
                k += 1;
                while k < row.len() && row[k].0 == j {
                    acc += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                values.push(acc);
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Self {
        assert_eq!(row_ptr.len(), nrows + 1);
        assert_eq!(col_idx.len(), values.len());
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::from_real(1.0); n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// y = A x for any vector type that can be scaled by the matrix entries.
    pub fn matvec_into<U>(&self, x: &[U], y: &mut [U])
    where
        U: Scalar + Mul<T, Output = U>,
    {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = U::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.col_idx[k]] * self.values[k];
            }
            *yi = acc;
        }
    }

    pub fn matvec<U>(&self, x: &[U]) -> Vec<U>
    where
        U: Scalar + Mul<T, Output = U>,
    {
        let mut y = vec![U::zero(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// xᵀ A x (no conjugation).
    pub fn quad_form(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.nrows {
            let mut row = T::zero();
            for (j, v) in self.row(i) {
                row += v * x[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut fill = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                col_idx[fill[j]] = i;
                values[fill[j]] = self.values[k];
                fill[j] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, row_ptr: counts, col_idx, values }
    }

    /// Entrywise `alpha * self + beta * other` for matrices sharing a pattern;
    /// falls back to a merge when the patterns differ.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        if self.same_pattern(other) {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a * alpha + b * beta)
                .collect();
            return Self { values, ..self.clone() };
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            trip.extend(self.row(i).map(|(j, v)| (i, j, v * alpha)));
            trip.extend(other.row(i).map(|(j, v)| (i, j, v * beta)));
        }
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { values: self.values.iter().map(|&v| v * alpha).collect(), ..self.clone() }
    }

    /// Principal submatrix on `idx` (rows and columns), in the order given.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Self {
        self.submatrix(idx, idx)
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            map[old] = new;
        }
        let mut trip = Vec::new();
        for (ni, &oi) in rows.iter().enumerate() {
            for (j, v) in self.row(oi) {
                let nj = map[j];
                if nj != usize::MAX {
                    trip.push((ni, nj, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &trip)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<T>
    where
        T: nalgebra::Scalar,
    {
        let mut d = nalgebra::DMatrix::from_element(self.nrows, self.ncols, T::zero());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Largest |a_ij - a_ji| relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().map(|v| v.modulus()).fold(0.0, f64::max).max(1e-300);
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).modulus());
            }
        }
        worst / scale
    }
}

impl CsrMatrix<f64> {
    /// Sparse product `self * rhs` (Gustavson). Structural entries are kept
    /// even when they cancel numerically, so products of matrices with equal
    /// patterns also have equal patterns.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.ncols, rhs.nrows);
        let mut marker = vec![usize::MAX; rhs.ncols];
        let mut acc = vec![0.0; rhs.ncols];
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows: self.nrows, ncols: rhs.ncols, row_ptr, col_idx, values }
    }

    /// Zᵀ A Z, symmetrized entrywise.
    pub fn congruence(&self, z: &Self) -> Self {
        let zt = z.transpose();
        let r = zt.matmul(&self.matmul(z));
        let rt = r.transpose();
        r.lin_comb(0.5, &rt, 0.5)
    }

    /// `re_scale * self + i * im_scale * other` as a complex matrix; patterns
    /// must agree.
    pub fn complex_comb(&self, re_scale: f64, other: &Self, im_scale: f64) -> CsrMatrix<Complex64> {
        assert!(self.same_pattern(other), "complex_comb requires a shared pattern");
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| Complex64::new(re_scale * a, im_scale * b))
                .collect(),
        }
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering<T: Scalar>(a: &CsrMatrix<T>) -> Vec<usize> {
    let n = a.nrows();
    let adj = |i: usize| a.col_idx[a.row_ptr[i]..a.row_ptr[i + 1]].iter().copied().filter(move |&j| j != i);
    let degree: Vec<usize> = (0..n).map(|i| adj(i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut level = vec![usize::MAX; n];

    // Breadth-first level structure from `root`; returns the last level.
    let bfs_levels = |root: usize, level: &mut Vec<usize>, visited: &Vec<bool>| -> (usize, Vec<usize>) {
        let mut frontier = vec![root];
        let mut seen = vec![root];
        level[root] = 0;
        let mut depth = 0;
        let mut last = frontier.clone();
        while !frontier.is_empty() {
            last = frontier.clone();
            let mut next = Vec::new();
            for &u in &frontier {
                for v in adj(u) {
                    if !visited[v] && level[v] == usize::MAX {
                        level[v] = depth + 1;
                        next.push(v);
                        seen.push(v);
                    }
                }
            }
            if !next.is_empty() {
                depth += 1;
            }
            frontier = next;
        }
        for &s in &seen {
            level[s] = usize::MAX;
        }
        (depth, last)
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start node.
        let mut root = seed;
        let (mut ecc, mut last) = bfs_levels(root, &mut level, &visited);
        loop {
            let cand = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
            let (e2, l2) = bfs_levels(cand, &mut level, &visited);
            if e2 > ecc {
                root = cand;
                ecc = e2;
                last = l2;
            } else {
                break;
            }
        }
        let start = order.len();
        visited[root] = true;
        order.push(root);
        let mut head = start;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = adj(u).filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            nbrs.dedup();
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    order.push(v);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Profile LDLᵀ factorization of a symmetric matrix (no pivoting).
#[derive(Debug, Clone)]
pub struct LdlFactor<T> {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<T>,
    d: Vec<T>,
}

/// Number of stored profile entries for `a` under RCM ordering, without
/// factoring. Used to choose between direct and iterative solvers.
pub fn profile_size<T: Scalar>(a: &CsrMatrix<T>) -> usize {
    profile_size_with(a, &rcm_ordering(a))
}

/// Profile entries of `a` under the ordering `perm`.
pub fn profile_size_with<T: Scalar>(a: &CsrMatrix<T>, perm: &[usize]) -> usize {
    let (first, _) = profile_layout(a, perm);
    first.iter().enumerate().map(|(i, &f)| i - f).sum()
}

fn profile_layout<T: Scalar>(a: &CsrMatrix<T>, perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = a.nrows();
    let mut iperm = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        iperm[old] = new;
    }
    let mut first: Vec<usize> = (0..n).collect();
    for old in 0..n {
        let i = iperm[old];
        for &oj in &a.col_idx[a.row_ptr[old]..a.row_ptr[old + 1]] {
            let j = iperm[oj];
            if j < i {
                first[i] = first[i].min(j);
            } else if i < j {
                first[j] = first[j].min(i);
            }
        }
    }
    (first, iperm)
}

impl<T: Scalar> LdlFactor<T> {
    /// Factors `a` (full symmetric storage) under RCM ordering. Fails with
    /// `ZeroPivot` when |d_i| <= `rel_tol * max|a_ii|`.
    pub fn new(a: &CsrMatrix<T>, rel_tol: f64) -> Result<Self, LinalgError> {
        let perm = rcm_ordering(a);
        Self::with_ordering(a, perm, rel_tol)
    }

    pub fn with_ordering(a: &CsrMatrix<T>, perm: Vec<usize>, rel_tol: f64) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n || perm.len() != n {
            return Err(LinalgError::Dimension(format!(
                "cannot factor {}x{} with ordering of length {}",
                a.nrows(),
                a.ncols(),
                perm.len()
            )));
        }
        let (first, iperm) = profile_layout(a, &perm);
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i]));
        }
        let mut l = vec![T::zero(); start[n]];
        let mut d = vec![T::zero(); n];
        for old in 0..n {
            let i = iperm[old];
            for (oj, v) in a.row(old) {
                let j = iperm[oj];
                if j < i {
                    l[start[i] + (j - first[i])] = v;
                } else if j == i {
                    d[i] = v;
                }
            }
        }
        let scale = d.iter().map(|v| v.modulus()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let tol = rel_tol * scale;

        for i in 0..n {
            let fi = first[i];
            let (done, rest) = l.split_at_mut(start[i]);
            let row_i = &mut rest[..i - fi];
            // row_i holds w_ij = l_ij d_j once processed.
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &done[start[j]..start[j] + (j - fj)];
                let mut s = row_i[j - fi];
                for k in k0..j {
                    s -= row_i[k - fi] * row_j[k - fj];
                }
                row_i[j - fi] = s;
            }
            let mut di = d[i];
            for j in fi..i {
                let w = row_i[j - fi];
                let lij = w / d[j];
                di -= w * lij;
                row_i[j - fi] = lij;
            }
            if di.modulus() <= tol || !di.modulus().is_finite() {
                return Err(LinalgError::ZeroPivot { index: perm[i], value: di.real() });
            }
            d[i] = di;
        }
        Ok(Self { perm, first, start, l, d })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn pivots(&self) -> &[T] {
        &self.d
    }

    pub fn profile_len(&self) -> usize {
        self.l.len()
    }

    /// Original row index of the pivot at position `k` of the elimination.
    pub fn pivot_row(&self, k: usize) -> usize {
        self.perm[k]
    }

    pub fn solve_in_place(&self, b: &mut [T], work: &mut Vec<T>) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        work.clear();
        work.extend(self.perm.iter().map(|&old| b[old]));
        let y = work.as_mut_slice();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (k, &lik) in row.iter().enumerate() {
                s -= lik * y[fi + k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] = y[i] / self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            for (k, &lik) in row.iter().enumerate() {
                y[fi + k] -= lik * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        let mut work = Vec::with_capacity(b.len());
        self.solve_in_place(&mut x, &mut work);
        x
    }
}

impl LdlFactor<f64> {
    /// Number of negative pivots, i.e. negative eigenvalues (Sylvester).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    /// Pivot of smallest value (most negative, or smallest positive).
    pub fn smallest_pivot(&self) -> f64 {
        self.d.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Solves with a complex right-hand side by treating real and imaginary
    /// parts separately.
    pub fn solve_complex(&self, b: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.iter().map(|z| z.im).collect();
        let xr = self.solve(&re);
        let xi = self.solve(&im);
        xr.into_iter().zip(xi).map(|(r, i)| Complex64::new(r, i)).collect()
    }
}

/// Unconjugated dot product xᵀy.
pub fn dotu<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

pub fn norm2_c(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned conjugate orthogonal CG for complex symmetric
/// systems. `x` holds the initial guess on entry and the solution on exit.
pub fn cocg(
    a: &CsrMatrix<Complex64>,
    inv_diag: &[Complex64],
    b: &[Complex64],
    x: &mut [Complex64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, LinalgError> {
    let n = b.len();
    let bnorm = norm2_c(b).max(f64::MIN_POSITIVE);
    let mut r = vec![Complex64::new(0.0, 0.0); n];
    a.matvec_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = norm2_c(&r) / bnorm;
    if res <= rel_tol {
        return Ok(0);
    }
    let mut z: Vec<Complex64> = r.iter().zip(inv_diag).map(|(&ri, &di)| ri * di).collect();
    let mut p = z.clone();
    let mut rho = dotu(&r, &z);
    let mut q = vec![Complex64::new(0.0, 0.0); n];
    for it in 1..=max_iter {
        a.matvec_into(&p, &mut q);
        let pq = dotu(&p, &q);
        if pq.norm() == 0.0 {
            break;
        }
        let alpha = rho / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm2_c(&r) / bnorm;
        if res <= rel_tol {
            return Ok(it);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rho_new = dotu(&r, &z);
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinalgError::NoConvergence { iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn periodic_laplacian(n: usize, shift: f64) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            t.push((i, (i + 1) % n, -1.0));
            t.push((i, (i + n - 1) % n, -1.0));
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn rcm_is_permutation_and_narrows_cyclic_band() {
        let a = periodic_laplacian(50, 0.1);
        let mut p = rcm_ordering(&a);
        let f = LdlFactor::new(&a, 1e-14).unwrap();
        // a cyclic tridiagonal matrix reorders to bandwidth 2
        assert!(f.profile_len() <= 2 * 50);
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn ldl_solves_real_system() {
        let a = periodic_laplacian(40, 0.5);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec(&x);
        let f = LdlFactor::new(&a, 1e-14).unwrap();
        let y = f.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(f.negative_pivots(), 0);
    }

    #[test]
    fn ldl_counts_inertia_of_indefinite_matrix() {
        // eigenvalues of the shifted periodic Laplacian are 2 - 2cos(2πk/n) + shift
        let n = 16;
        let a = periodic_laplacian(n, -0.7);
        let f = LdlFactor::new(&a, 1e-12).unwrap();
        let dense = a.to_dense();
        let eig = dense.symmetric_eigenvalues();
        let neg = eig.iter().filter(|&&e| e < 0.0).count();
        assert_eq!(f.negative_pivots(), neg);
    }

    #[test]
    fn singular_matrix_reports_zero_pivot() {
        let a = periodic_laplacian(12, 0.0);
        match LdlFactor::new(&a, 1e-12) {
            Err(LinalgError::ZeroPivot { .. }) => {}
            other => panic!("expected zero pivot, got {other:?}"),
        }
    }

    #[test]
    fn complex_symmetric_ldl_and_cocg_agree() {
        let n = 30;
        let m = periodic_laplacian(n, 3.0);
        let k = periodic_laplacian(n, 0.2);
        let a = m.complex_comb(1.0, &k, 0.7);
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64 * 0.1)).collect();
        let f = LdlFactor::new(&a, 1e-14).unwrap();
        let x = f.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).norm() < 1e-10);
        }
        let inv: Vec<Complex64> = a.diagonal().iter().map(|d| Complex64::new(1.0, 0.0) / d).collect();
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        cocg(&a, &inv, &b, &mut y, 1e-13, 500).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-9);
        }
    }

    #[test]
    fn matmul_and_congruence_match_dense() {
        let a = periodic_laplacian(10, 1.0);
        let z = CsrMatrix::from_triplets(
            10,
            3,
            &[(0, 0, 1.0), (1, 0, 0.5), (4, 1, 2.0), (5, 1, -1.0), (9, 2, 1.0), (0, 2, 0.3)],
        );
        let r = a.congruence(&z);
        let dz: DMatrix<f64> = z.to_dense();
        let expect = dz.transpose() * a.to_dense() * &dz;
        let got = r.to_dense();
        assert!((expect - got).abs().max() < 1e-14);
        assert!(r.asymmetry() == 0.0);
    }
}
