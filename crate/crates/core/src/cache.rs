//! Binary cache of offline results.
//!
//! Layout (little endian): magic `MSRBCACH`, format version `u32`, payload
//! kind `u8`, the 32-byte SHA-256 of the cache key text, then the payload.
//! Integers are `u64`, reals `f64`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::ms_basis::SnapshotSet;
use crate::pod::{InnerProduct, PodCriterion, ReducedBasisSet};
use crate::randfield::PotentialSpec;
use crate::sampling::SampleMethod;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MSRBCACH";
const VERSION: u32 = 1;
const KIND_SNAPSHOTS: u8 = 1;
const KIND_REDUCED: u8 = 2;

/// Text identifying an offline computation; files store its digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.0.as_bytes()).into()
    }

    pub fn hex(&self) -> String {
        hex::encode(self.digest())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn snapshot_key(
    potential: &PotentialSpec,
    eps: f64,
    coarse_cells: usize,
    fine_cells: usize,
    dim: usize,
    l_star: usize,
    q: usize,
    method: SampleMethod,
    seed: u64,
) -> CacheKey {
    CacheKey(format!(
        "snapshots;potential={};eps={eps:e};H=2pi/{coarse_cells};h=2pi/{fine_cells};dim={dim};l*={l_star};Q={q};method={method:?};seed={seed}",
        potential.canonical()
    ))
}

pub fn reduced_key(snapshots: &CacheKey, criterion: PodCriterion, inner: InnerProduct) -> CacheKey {
    let c = match criterion {
        PodCriterion::Fixed(m) => format!("fixed:{m}"),
        PodCriterion::Energy(r) => format!("energy:{r:e}"),
    };
    CacheKey(format!("reduced;{};pod={c};inner={inner:?}", snapshots.0))
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(kind: u8, key: &CacheKey) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.0.push(kind);
        w.0.extend_from_slice(&key.digest());
        w
    }

    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn indices(&mut self, v: &[usize]) {
        for &x in v {
            self.u64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Cache(format!("truncated at byte {} (need {n} more)", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count of items of `item_bytes` each, checked against the bytes left.
    fn len(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(item_bytes.max(1) as u64).is_none_or(|b| b > left) {
            return Err(Error::Cache(format!("length {n} at byte {} exceeds the remaining data", self.pos - 8)));
        }
        Ok(n as usize)
    }

    fn index(&mut self, bound: usize) -> Result<usize> {
        let v = self.u64()?;
        if v >= bound as u64 {
            return Err(Error::Cache(format!("index {v} out of range (< {bound})")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Cache("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn support(&mut self, n_fine: usize) -> Result<Vec<usize>> {
        let len = self.len(8)?;
        let s: Vec<usize> = (0..len).map(|_| self.index(n_fine)).collect::<Result<_>>()?;
        if s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Cache("support indices are not strictly increasing".into()));
        }
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Cache(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn header<'a>(bytes: &'a [u8], kind: u8) -> Result<([u8; 32], Reader<'a>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Cache("not a cache file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported format version {version}")));
    }
    let k = r.u8()?;
    if k != kind {
        return Err(Error::Cache(format!("payload kind {k}, expected {kind}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    Ok((digest, r))
}

pub fn encode_snapshots(key: &CacheKey, n_fine: usize, sets: &[SnapshotSet]) -> Vec<u8> {
    let mut w = Writer::new(KIND_SNAPSHOTS, key);
    w.u64(n_fine);
    w.u64(sets.len());
    for s in sets {
        w.u64(s.node);
        w.u64(s.support.len());
        w.indices(&s.support);
        let m = s.xis.first().map_or(0, Vec::len);
        w.u64(s.samples.len());
        w.u64(m);
        for x in &s.xis {
            w.f64s(x);
        }
        for c in &s.samples {
            w.f64s(c);
        }
        w.f64s(&s.shifts);
    }
    w.0
}

/// Decodes a snapshot cache, returning the stored key digest and the sets.
pub fn decode_snapshots(bytes: &[u8]) -> Result<([u8; 32], Vec<SnapshotSet>)> {
    let (digest, mut r) = header(bytes, KIND_SNAPSHOTS)?;
    let n_fine = r.u64()? as usize;
    let count = r.len(24)?;
    let mut sets = Vec::with_capacity(count);
    for _ in 0..count {
        let node = r.u64()? as usize;
        let support = r.support(n_fine)?;
        let q = r.len(8)?;
        let m = r.len(0)?;
        let need = q.checked_mul(m + support.len() + 1).and_then(|x| x.checked_mul(8));
        if need.is_none_or(|b| b > bytes.len() - r.pos) {
            return Err(Error::Cache("snapshot block exceeds the remaining data".into()));
        }
        let xis = (0..q).map(|_| r.f64s(m)).collect::<Result<Vec<_>>>()?;
        let samples = (0..q).map(|_| r.f64s(support.len())).collect::<Result<Vec<_>>>()?;
        let shifts = r.f64s(q)?;
        sets.push(SnapshotSet::from_samples(node, support, xis, samples, shifts));
    }
    r.finish()?;
    Ok((digest, sets))
}

pub fn encode_reduced(key: &CacheKey, n_fine: usize, sets: &[ReducedBasisSet]) -> Vec<u8> {
    let mut w = Writer::new(KIND_REDUCED, key);
    w.u64(n_fine);
    w.u64(sets.len());
    for s in sets {
        w.u64(s.node);
        w.u64(s.support.len());
        w.indices(&s.support);
        w.0.push(match s.inner_product {
            InnerProduct::L2 => 0,
            InnerProduct::H1 => 1,
        });
        w.f64s(&s.zeta0);
        w.u64(s.modes.len());
        for z in &s.modes {
            w.f64s(z);
        }
        w.u64(s.eigenvalues.len());
        w.f64s(&s.eigenvalues);
    }
    w.0
}

pub fn decode_reduced(bytes: &[u8]) -> Result<([u8; 32], Vec<ReducedBasisSet>)> {
    let (digest, mut r) = header(bytes, KIND_REDUCED)?;
    let n_fine = r.u64()? as usize;
    let count = r.len(33)?;
    let mut sets = Vec::with_capacity(count);
    for _ in 0..count {
        let node = r.u64()? as usize;
        let support = r.support(n_fine)?;
        let inner_product = match r.u8()? {
            0 => InnerProduct::L2,
            1 => InnerProduct::H1,
            b => return Err(Error::Cache(format!("unknown inner product tag {b}"))),
        };
        let zeta0 = r.f64s(support.len())?;
        let m_k = r.len(8 * support.len())?;
        let modes = (0..m_k).map(|_| r.f64s(support.len())).collect::<Result<Vec<_>>>()?;
        let n_eig = r.len(8)?;
        let eigenvalues = r.f64s(n_eig)?;
        sets.push(ReducedBasisSet { node, support, zeta0, modes, eigenvalues, inner_product });
    }
    r.finish()?;
    Ok((digest, sets))
}

fn check_key(found: [u8; 32], expected: &CacheKey) -> Result<()> {
    if found != expected.digest() {
        return Err(Error::CacheMismatch { expected: expected.hex(), found: hex::encode(found) });
    }
    Ok(())
}

/// Writes through a temporary file so readers never see partial data.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads snapshots, failing with `CacheMismatch` when the file belongs to a
/// different configuration.
pub fn load_snapshots(path: &Path, key: &CacheKey) -> Result<Vec<SnapshotSet>> {
    let (digest, sets) = decode_snapshots(&std::fs::read(path)?)?;
    check_key(digest, key)?;
    Ok(sets)
}

pub fn load_reduced(path: &Path, key: &CacheKey) -> Result<Vec<ReducedBasisSet>> {
    let (digest, sets) = decode_reduced(&std::fs::read(path)?)?;
    check_key(digest, key)?;
    Ok(sets)
}

/// Key digest stored in a cache file, without decoding the payload.
pub fn stored_digest(path: &Path) -> Result<[u8; 32]> {
    let bytes = std::fs::read(path)?;
    let kind = *bytes.get(12).ok_or_else(|| Error::Cache("truncated header".into()))?;
    Ok(header(&bytes, kind)?.0)
}
