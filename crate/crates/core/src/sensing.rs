//! Gaussian measurement ensemble `A(X)_i = (1/p)⟨A_i, X⟩`, its adjoint,
//! sparse outlier corruption, and the binary ensemble dump format.
//!
//! Entry `(j, k)` of `A_i` is the `(j·n + k)`-th standard normal drawn from
//! stream `i` of the ensemble seed, so dense and regenerate storage hold
//! the same matrices and produce bitwise-identical results. The kernels are
//! single-threaded blocked matrix products with a fixed summation order:
//! results do not depend on the thread count or on how many inputs are
//! batched together.

use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    /// All `p·m·n` entries held in memory.
    Dense,
    /// Only the seed is held; each `A_i` is redrawn when needed.
    Regenerate,
}

#[derive(Debug, Clone)]
enum Storage {
    Dense(Vec<f64>),
    Regenerate,
}

#[derive(Debug, Clone)]
pub struct GaussianEnsemble {
    m: usize,
    n: usize,
    p: usize,
    seed: u64,
    storage: Storage,
}

pub fn make_gaussian_ensemble(
    m: usize,
    n: usize,
    p: usize,
    seed: u64,
    mode: StorageMode,
) -> Result<GaussianEnsemble> {
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::Dimension(format!(
            "m, n, p must be positive; got {m}, {n}, {p}"
        )));
    }
    let mn = m.checked_mul(n).ok_or(Error::Resource {
        values: m as u128 * n as u128,
    })?;
    let storage = match mode {
        StorageMode::Regenerate => Storage::Regenerate,
        StorageMode::Dense => {
            let total = mn.checked_mul(p).ok_or(Error::Resource {
                values: mn as u128 * p as u128,
            })?;
            let mut data = Vec::new();
            data.try_reserve_exact(total).map_err(|_| Error::Resource {
                values: total as u128,
            })?;
            data.resize(total, 0.0);
            for (i, block) in data.chunks_exact_mut(mn).enumerate() {
                fill_matrix(seed, i, block);
            }
            Storage::Dense(data)
        }
    };
    Ok(GaussianEnsemble {
        m,
        n,
        p,
        seed,
        storage,
    })
}

fn fill_matrix(seed: u64, i: usize, out: &mut [f64]) {
    let mut rng = stream(seed, Domain::Ensemble, i as u64);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Rows of the ensemble processed per kernel call. Dense and regenerate
/// storage walk the same chunks, so both produce bitwise-equal results.
const CHUNK_ROWS: usize = 256;

/// Shape and element strides of a matrix stored inside a slice.
#[derive(Debug, Clone, Copy)]
struct Layout {
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl Layout {
    fn span(self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c ← a·b` (`accumulate = false`) or `c ← c + a·b`. The blocked kernel
/// sums every output in the same order whatever the number of columns of
/// `b`; keeping the scalars at one keeps full and edge tiles bitwise equal.
fn gemm(a: &[f64], la: Layout, b: &[f64], lb: Layout, accumulate: bool, c: &mut [f64], lc: Layout) {
    assert!(
        la.cols == lb.rows && la.rows == lc.rows && lb.cols == lc.cols,
        "gemm shape mismatch"
    );
    assert!(
        la.span() <= a.len() && lb.span() <= b.len() && lc.span() <= c.len(),
        "gemm out of bounds"
    );
    // SAFETY: every index the kernel touches lies within the spans checked
    // above, and `c` is an exclusive borrow distinct from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            la.rows,
            la.cols,
            lb.cols,
            1.0,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

impl GaussianEnsemble {
    /// Ensemble from explicit measurement matrices (dense storage, seed 0).
    pub fn from_matrices(matrices: &[Matrix]) -> Result<Self> {
        let first = matrices.first().ok_or_else(|| {
            Error::Dimension("at least one measurement matrix is required".into())
        })?;
        let (m, n) = first.shape();
        if m == 0 || n == 0 {
            return Err(Error::Dimension(
                "measurement matrices must be nonempty".into(),
            ));
        }
        let mut data = Vec::with_capacity(m * n * matrices.len());
        for a in matrices {
            if a.shape() != (m, n) {
                return Err(Error::shape(
                    format!("{m}x{n}"),
                    format!("{}x{}", a.nrows(), a.ncols()),
                ));
            }
            data.extend(linalg::to_row_major(a));
        }
        Ok(GaussianEnsemble {
            m,
            n,
            p: matrices.len(),
            seed: 0,
            storage: Storage::Dense(data),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> StorageMode {
        match self.storage {
            Storage::Dense(_) => StorageMode::Dense,
            Storage::Regenerate => StorageMode::Regenerate,
        }
    }

    /// The `i`-th measurement matrix (0-based).
    pub fn matrix(&self, i: usize) -> Matrix {
        assert!(i < self.p, "measurement index {i} out of range");
        let mut buf = self.scratch();
        let row = self.load_row(i, &mut buf);
        linalg::from_row_major(self.m, self.n, row)
    }

    fn load_row<'a>(&'a self, i: usize, buf: &'a mut [f64]) -> &'a [f64] {
        let mn = self.m * self.n;
        match &self.storage {
            Storage::Dense(data) => &data[i * mn..(i + 1) * mn],
            Storage::Regenerate => {
                fill_matrix(self.seed, i, buf);
                buf
            }
        }
    }

    fn check_matrix(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.m, self.n) {
            return Err(Error::shape(
                format!("{}x{}", self.m, self.n),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        Ok(())
    }

    fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.p {
            return Err(Error::shape(
                format!("length {}", self.p),
                format!("length {}", v.len()),
            ));
        }
        Ok(())
    }

    /// `A(X)_i = (1/p)·tr(A_iᵀ X)`.
    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[x])?.pop().expect("one input"))
    }

    /// Applies the forward map to several matrices in a single pass over
    /// the ensemble. Each output is bitwise equal to [`Self::forward`].
    pub fn forward_batch(&self, xs: &[&Matrix]) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            self.check_matrix(x)?;
        }
        let (mn, p, k) = (self.m * self.n, self.p, xs.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let flat: Vec<f64> = xs.iter().flat_map(|x| linalg::to_row_major(x)).collect();
        let lx = Layout {
            rows: mn,
            cols: k,
            rs: 1,
            cs: mn,
        };
        let mut out = vec![0.0; p * k];
        let inv = 1.0 / p as f64;
        self.for_each_chunk(|r0, block| {
            let rows = block.len() / mn;
            let la = Layout {
                rows,
                cols: mn,
                rs: mn,
                cs: 1,
            };
            let lc = Layout {
                rows,
                cols: k,
                rs: 1,
                cs: p,
            };
            gemm(block, la, &flat, lx, false, &mut out[r0..], lc);
        });
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out.chunks_exact(p).map(<[f64]>::to_vec).collect())
    }

    /// `A*(v) = (1/p)·Σ_i v_i A_i`.
    pub fn adjoint(&self, v: &[f64]) -> Result<Matrix> {
        Ok(self.adjoint_batch(&[v])?.pop().expect("one input"))
    }

    /// Adjoint of several vectors in a single pass over the ensemble. Each
    /// output is bitwise equal to [`Self::adjoint`].
    pub fn adjoint_batch(&self, vs: &[&[f64]]) -> Result<Vec<Matrix>> {
        for v in vs {
            self.check_vector(v)?;
        }
        let (mn, p, k) = (self.m * self.n, self.p, vs.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let flat: Vec<f64> = vs.iter().flat_map(|v| v.iter().copied()).collect();
        let lc = Layout {
            rows: mn,
            cols: k,
            rs: 1,
            cs: mn,
        };
        let mut acc = vec![0.0; mn * k];
        let inv = 1.0 / p as f64;
        self.for_each_chunk(|r0, block| {
            let rows = block.len() / mn;
            let la = Layout {
                rows: mn,
                cols: rows,
                rs: 1,
                cs: mn,
            };
            let lb = Layout {
                rows,
                cols: k,
                rs: 1,
                cs: p,
            };
            gemm(block, la, &flat[r0..], lb, r0 > 0, &mut acc, lc);
        });
        acc.iter_mut().for_each(|v| *v *= inv);
        Ok(acc
            .chunks_exact(mn)
            .map(|a| linalg::from_row_major(self.m, self.n, a))
            .collect())
    }

    /// Visits the ensemble in fixed chunks of consecutive rows, each a
    /// row-major `rows × mn` block.
    fn for_each_chunk(&self, mut f: impl FnMut(usize, &[f64])) {
        let mn = self.m * self.n;
        let mut buf = Vec::new();
        for r0 in (0..self.p).step_by(CHUNK_ROWS) {
            let r1 = (r0 + CHUNK_ROWS).min(self.p);
            match &self.storage {
                Storage::Dense(data) => f(r0, &data[r0 * mn..r1 * mn]),
                Storage::Regenerate => {
                    buf.resize((r1 - r0) * mn, 0.0);
                    for (k, row) in buf.chunks_exact_mut(mn).enumerate() {
                        fill_matrix(self.seed, r0 + k, row);
                    }
                    f(r0, &buf);
                }
            }
        }
    }

    fn scratch(&self) -> Vec<f64> {
        match self.storage {
            Storage::Dense(_) => Vec::new(),
            Storage::Regenerate => vec![0.0; self.m * self.n],
        }
    }

    /// Writes the dump format: `"OPSA-ENS"`, `u32` version, `u64` m, n, p,
    /// seed (all little-endian), then `p·m·n` row-major `f64` values.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        for v in [self.m as u64, self.n as u64, self.p as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = self.scratch();
        let mut bytes = Vec::with_capacity(self.m * self.n * 8);
        for i in 0..self.p {
            bytes.clear();
            for v in self.load_row(i, &mut buf) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_dump(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        decode_dump(&bytes)
    }
}

pub const DUMP_MAGIC: &[u8; 8] = b"OPSA-ENS";
pub const DUMP_VERSION: u32 = 1;
const DUMP_HEADER_LEN: usize = 8 + 4 + 4 * 8;

/// Parses a dense ensemble dump. Rejects truncated or oversized bodies,
/// zero dimensions, unknown versions and non-finite entries.
pub fn decode_dump(bytes: &[u8]) -> Result<GaussianEnsemble> {
    if bytes.len() < DUMP_HEADER_LEN {
        return Err(Error::Decode(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..8] != DUMP_MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != DUMP_VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let word =
        |k: usize| u64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().expect("8 bytes"));
    let (m, n, p, seed) = (word(0), word(1), word(2), word(3));
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::Decode(format!(
            "zero dimension in header ({m}, {n}, {p})"
        )));
    }
    let body = &bytes[DUMP_HEADER_LEN..];
    let body_len = (m as u128)
        .checked_mul(n as u128)
        .and_then(|c| c.checked_mul(p as u128))
        .and_then(|c| c.checked_mul(8));
    if body_len != Some(body.len() as u128) {
        return Err(Error::Decode(format!(
            "header dimensions ({m}, {n}, {p}) disagree with a {}-byte body",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decode("non-finite entry".into()));
    }
    Ok(GaussianEnsemble {
        m: m as usize,
        n: n as usize,
        p: p as usize,
        seed,
        storage: Storage::Dense(data),
    })
}

/// Observations `y = A(X⋆) + s` with the planted corruption recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    /// Sorted 0-based indices of corrupted measurements.
    pub support: Vec<usize>,
    pub outlier_fraction: f64,
    /// Whether `s` is the known planted corruption. Observations of unknown
    /// provenance carry `false`, and the optimal loss is then unavailable.
    pub planted: bool,
}

impl Measurements {
    pub fn clean(y: Vec<f64>) -> Self {
        let p = y.len();
        Measurements {
            y,
            s: vec![0.0; p],
            support: Vec::new(),
            outlier_fraction: 0.0,
            planted: true,
        }
    }

    /// Observations with no knowledge of the corruption.
    pub fn blind(y: Vec<f64>) -> Self {
        Measurements {
            planted: false,
            ..Measurements::clean(y)
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub const DEFAULT_AMPLITUDE: f64 = 10.0;

fn draw_support(rng: &mut crate::rng::Rng, p: usize, fraction: f64) -> Vec<usize> {
    let count = (fraction * p as f64).round() as usize;
    let mut support = index::sample(rng, p, count).into_vec();
    support.sort_unstable();
    support
}

/// The support [`corrupt`] picks for the same `p`, `fraction` and `seed`.
pub fn outlier_support(p: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "outlier fraction {fraction} outside [0, 0.5)"
        )));
    }
    Ok(draw_support(
        &mut stream(seed, Domain::Corruption, 0),
        p,
        fraction,
    ))
}

/// Replaces `round(fraction·p)` uniformly chosen measurements by draws from
/// `U[−amplitude·a, amplitude·a]`, `a = ‖y_clean‖_∞`, and records
/// `s = y − y_clean`.
pub fn corrupt(y_clean: &[f64], fraction: f64, amplitude: f64, seed: u64) -> Result<Measurements> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "outlier fraction {fraction} outside [0, 0.5)"
        )));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "amplitude {amplitude} must be finite and >= 0"
        )));
    }
    let p = y_clean.len();
    let mut rng = stream(seed, Domain::Corruption, 0);
    let support = draw_support(&mut rng, p, fraction);

    let a = y_clean.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let half_width = amplitude * a;
    let mut y = y_clean.to_vec();
    let mut s = vec![0.0; p];
    if half_width > 0.0 {
        let dist = Uniform::new_inclusive(-half_width, half_width);
        for &i in &support {
            y[i] = rng.sample(dist);
        }
    } else {
        for &i in &support {
            y[i] = 0.0;
        }
    }
    for &i in &support {
        s[i] = y[i] - y_clean[i];
    }
    Ok(Measurements {
        y,
        s,
        support,
        outlier_fraction: fraction,
        planted: true,
    })
}
