//! Data-oblivious random row embeddings for ℓ2 and ℓ1 problems.
//!
//! A [`SketchOperator`] compresses an `m x n` matrix to `s x n` in one
//! streaming pass. Every random entry is addressed by its absolute position
//! (derived stream per output row or per input row), so the result is
//! independent of how the input is blocked for a fixed `block_rows`, and the
//! first `s'` output rows of a dense Gaussian/Rademacher/Cauchy sketch equal
//! the rows of the same-seed operator with smaller `s'` up to the global
//! scale factor.

use crate::error::{Error, Result};
use crate::linalg::gemm::gemm_acc;
use crate::linalg::simdops;
use crate::matrix::DenseMatrix;
use crate::passio::{fold_blocks, CostLedger, MatrixSource};
use crate::randstream::{derive_stream, RandomStream, SeedSpec};
use std::fmt;
use std::str::FromStr;

/// Default leading constant for the heavy-tailed (Cauchy-type) embedding
/// dimension `c1 * n * ln n`.
pub const DEFAULT_CT_CONSTANT: f64 = 4.0;

/// Output-row tile height for the dense generate-and-multiply variants;
/// bounds generator scratch to `TILE_S * block_rows` doubles.
const TILE_S: usize = 1024;

/// The embedding family. Dense variants (Gaussian, Rademacher, Cauchy,
/// SRDHT) generate an `s x m` coefficient matrix on the fly and multiply;
/// hashed variants (CountSketch, SparseCauchy, ReciprocalExp) route each
/// input row to one output row; FastCauchy combines per-block orthogonal
/// mixing with Cauchy scaling and hashing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SketchVariant {
    /// i.i.d. standard normal entries scaled by `s^{-1/2}`.
    Gaussian,
    /// i.i.d. `±1` entries scaled by `s^{-1/2}`.
    Rademacher,
    /// Subsampled randomized discrete Hartley transform:
    /// `sqrt(m/s) * (uniform row sample) * (Hartley transform) * (sign diagonal)`.
    Srdht,
    /// Each input row lands, with a random sign, in exactly one output row.
    CountSketch,
    /// i.i.d. standard Cauchy entries scaled by `scale_c / s`.
    Cauchy { scale_c: f64 },
    /// CountSketch routing with an extra i.i.d. Cauchy diagonal.
    SparseCauchy,
    /// CountSketch routing with a `1/u_i` diagonal, `u_i` unit-rate
    /// exponential.
    ReciprocalExp,
    /// `4 B C H` with per-block `(Hadamard; identity)` mixing of width `t`
    /// (a power of two), a Cauchy diagonal `C`, and CountSketch-style `B`.
    /// `t = 0` requests the default `max(16, next power of two >= s)`.
    FastCauchy { t: usize },
}

impl SketchVariant {
    /// Canonical lowercase name (also the `FromStr` spelling).
    pub fn name(&self) -> &'static str {
        match self {
            SketchVariant::Gaussian => "gaussian",
            SketchVariant::Rademacher => "rademacher",
            SketchVariant::Srdht => "srdht",
            SketchVariant::CountSketch => "countsketch",
            SketchVariant::Cauchy { .. } => "cauchy",
            SketchVariant::SparseCauchy => "sparse-cauchy",
            SketchVariant::ReciprocalExp => "recip-exp",
            SketchVariant::FastCauchy { .. } => "fast-cauchy",
        }
    }
}

impl fmt::Display for SketchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SketchVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "gaussian" => SketchVariant::Gaussian,
            "rademacher" => SketchVariant::Rademacher,
            "srdht" | "srht" => SketchVariant::Srdht,
            "countsketch" | "cw" => SketchVariant::CountSketch,
            "cauchy" | "ct" => SketchVariant::Cauchy { scale_c: 1.0 },
            "sparse-cauchy" | "spct" => SketchVariant::SparseCauchy,
            "recip-exp" | "ret" => SketchVariant::ReciprocalExp,
            "fast-cauchy" | "fct" => SketchVariant::FastCauchy { t: 0 },
            other => {
                return Err(Error::invalid_arg(format!(
                    "unknown sketch variant '{other}' (expected gaussian, rademacher, \
                     srdht, countsketch, cauchy, sparse-cauchy, recip-exp, or fast-cauchy)"
                )))
            }
        })
    }
}

/// Default Hadamard block width for [`SketchVariant::FastCauchy`].
pub fn fct_default_t(s: usize) -> usize {
    16.max(s.next_power_of_two())
}

/// A seeded `s x m` random embedding. Immutable; applying it twice to the
/// same input yields identical output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchOperator {
    pub variant: SketchVariant,
    /// Embedding dimension (output rows).
    pub s: usize,
    /// Input dimension (rows the operator accepts).
    pub m: usize,
    pub seed: SeedSpec,
}

impl SketchOperator {
    /// Validates dimensions and resolves the FastCauchy `t = 0` default.
    pub fn new(variant: SketchVariant, s: usize, m: usize, seed: SeedSpec) -> Result<Self> {
        if s == 0 {
            return Err(Error::invalid_arg("sketch dimension s must be >= 1"));
        }
        if m == 0 {
            return Err(Error::invalid_arg("sketch input dimension m must be >= 1"));
        }
        let variant = match variant {
            SketchVariant::Srdht => {
                if s > m {
                    return Err(Error::invalid_arg(format!(
                        "srdht needs s <= m, got s={s}, m={m}"
                    )));
                }
                variant
            }
            SketchVariant::FastCauchy { t: 0 } => SketchVariant::FastCauchy {
                t: fct_default_t(s),
            },
            SketchVariant::FastCauchy { t } => {
                if !t.is_power_of_two() {
                    return Err(Error::invalid_arg(format!(
                        "fast-cauchy block width t must be a power of two, got {t}"
                    )));
                }
                variant
            }
            other => other,
        };
        Ok(SketchOperator { variant, s, m, seed })
    }

    /// Streaming application `Φ·A`: one pass over the source, recorded on
    /// the ledger. For a fixed `block_rows` the output is bitwise identical
    /// whether the source is in memory or on disk.
    pub fn apply(
        &self,
        source: &MatrixSource,
        block_rows: usize,
        ledger: &mut CostLedger,
    ) -> Result<DenseMatrix> {
        if source.rows() != self.m {
            return Err(Error::dim(
                "sketch apply",
                format!("{} input rows", self.m),
                format!("{}", source.rows()),
            ));
        }
        let n = source.cols();
        let mut out = DenseMatrix::zeros(self.s, n);
        let s = self.s;
        let sf = s as f64;
        match self.variant {
            SketchVariant::Gaussian => {
                let seed = self.seed;
                self.dense_apply(source, block_rows, ledger, &mut out, 1.0 / sf.sqrt(), move |row, k0, buf| {
                    RandomStream::new(derive_stream(seed, row)).fill_normals(k0, buf);
                })?;
            }
            SketchVariant::Rademacher => {
                let seed = self.seed;
                self.dense_apply(source, block_rows, ledger, &mut out, 1.0 / sf.sqrt(), move |row, k0, buf| {
                    let st = RandomStream::new(derive_stream(seed, row));
                    for (i, v) in buf.iter_mut().enumerate() {
                        *v = sign_of(st.raw_at(k0 + i as u64));
                    }
                })?;
            }
            SketchVariant::Cauchy { scale_c } => {
                let seed = self.seed;
                self.dense_apply(source, block_rows, ledger, &mut out, scale_c / sf, move |row, k0, buf| {
                    let st = RandomStream::new(derive_stream(seed, row));
                    for (i, v) in buf.iter_mut().enumerate() {
                        *v = st.cauchy_at(k0 + i as u64);
                    }
                })?;
            }
            SketchVariant::Srdht => {
                let (rows, signs) = self.srdht_structure();
                let m = self.m;
                let scale = (m as f64 / sf).sqrt() / (m as f64).sqrt();
                let two_pi_over_m = std::f64::consts::TAU / m as f64;
                self.dense_apply(source, block_rows, ledger, &mut out, scale, move |row, k0, buf| {
                    let t_i = rows[row as usize] as u128;
                    for (i, v) in buf.iter_mut().enumerate() {
                        let j = k0 as usize + i;
                        let r = (t_i * j as u128 % m as u128) as f64;
                        let angle = two_pi_over_m * r;
                        *v = (angle.sin() + angle.cos()) * signs[j];
                    }
                })?;
            }
            SketchVariant::CountSketch => {
                self.hashed_apply(source, block_rows, ledger, &mut out, |_, _| 1.0)?;
            }
            SketchVariant::SparseCauchy => {
                let ws = RandomStream::new(derive_stream(self.seed, 2));
                self.hashed_apply(source, block_rows, ledger, &mut out, move |_, j| ws.cauchy_at(j))?;
            }
            SketchVariant::ReciprocalExp => {
                let ws = RandomStream::new(derive_stream(self.seed, 2));
                self.hashed_apply(source, block_rows, ledger, &mut out, move |_, j| {
                    1.0 / ws.exponential_at(j)
                })?;
            }
            SketchVariant::FastCauchy { t } => {
                self.fct_apply(source, block_rows, ledger, &mut out, t)?;
            }
        }
        Ok(out)
    }

    /// Convenience wrapper over [`SketchOperator::apply`] for in-memory
    /// inputs (copies `a` into a source; hot paths should hold a
    /// [`MatrixSource`] and call `apply` directly).
    pub fn apply_dense(&self, a: &DenseMatrix, ledger: &mut CostLedger) -> Result<DenseMatrix> {
        let src = MatrixSource::from(a.clone());
        self.apply(&src, crate::passio::DEFAULT_BLOCK_ROWS, ledger)
    }

    /// Generate-and-multiply path: output-row tiles of an implicit `s x m`
    /// coefficient matrix are materialized per input block and folded in
    /// through GEMM with the given global scale.
    fn dense_apply(
        &self,
        source: &MatrixSource,
        block_rows: usize,
        ledger: &mut CostLedger,
        out: &mut DenseMatrix,
        alpha: f64,
        fill_row: impl Fn(u64, u64, &mut [f64]),
    ) -> Result<()> {
        let s = self.s;
        let n = source.cols();
        let mut gbuf = vec![0.0f64; TILE_S.min(s) * block_rows.min(self.m)];
        fold_blocks(source, block_rows, ledger, out, |out, blk| {
            let bw = blk.rows;
            let obuf = out.as_mut_slice();
            for i0 in (0..s).step_by(TILE_S) {
                let ts = (s - i0).min(TILE_S);
                for ii in 0..ts {
                    fill_row(
                        (i0 + ii) as u64,
                        blk.row_offset as u64,
                        &mut gbuf[ii * bw..(ii + 1) * bw],
                    );
                }
                gemm_acc(
                    ts,
                    n,
                    bw,
                    alpha,
                    &gbuf[..ts * bw],
                    bw,
                    blk.data,
                    n,
                    &mut obuf[i0 * n..],
                    n,
                );
            }
            Ok(())
        })?;
        ledger.add_flops(2.0 * s as f64 * self.m as f64 * n as f64);
        Ok(())
    }

    /// Hashed path: input row `j` is scaled by `sign(j) * weight(j)` and
    /// added into output row `bucket(j)`.
    fn hashed_apply(
        &self,
        source: &MatrixSource,
        block_rows: usize,
        ledger: &mut CostLedger,
        out: &mut DenseMatrix,
        weight: impl Fn(&SketchOperator, u64) -> f64,
    ) -> Result<()> {
        let s = self.s;
        let n = source.cols();
        let buckets = RandomStream::new(derive_stream(self.seed, 0));
        let signs = RandomStream::new(derive_stream(self.seed, 1));
        fold_blocks(source, block_rows, ledger, out, |out, blk| {
            for r in 0..blk.rows {
                let j = (blk.row_offset + r) as u64;
                let dst = bounded_index(buckets.raw_at(j), s);
                let w = sign_of(signs.raw_at(j)) * weight(self, j);
                simdops::axpy(w, blk.row(r), out.row_mut(dst));
            }
            Ok(())
        })?;
        ledger.add_flops(2.0 * self.m as f64 * n as f64);
        Ok(())
    }

    /// Uniform without-replacement row sample and sign diagonal for SRDHT.
    pub(crate) fn srdht_structure(&self) -> (Vec<usize>, Vec<f64>) {
        let mut sampler = RandomStream::new(derive_stream(self.seed, 0));
        let mut idx: Vec<usize> = (0..self.m).collect();
        for i in 0..self.s {
            let j = i + sampler.next_index(self.m - i);
            idx.swap(i, j);
        }
        idx.truncate(self.s);
        let signs_stream = RandomStream::new(derive_stream(self.seed, 1));
        let signs: Vec<f64> = (0..self.m)
            .map(|j| sign_of(signs_stream.raw_at(j as u64)))
            .collect();
        (idx, signs)
    }

    /// FastCauchy: buffer `t` input rows, mix them with an orthogonal
    /// Hadamard block plus an identity copy, then hash the `2t` mixed rows
    /// into the output with Cauchy weights and a factor 4.
    fn fct_apply(
        &self,
        source: &MatrixSource,
        block_rows: usize,
        ledger: &mut CostLedger,
        out: &mut DenseMatrix,
        t: usize,
    ) -> Result<()> {
        let s = self.s;
        let n = source.cols();
        let cauchys = RandomStream::new(derive_stream(self.seed, 0));
        let buckets = RandomStream::new(derive_stream(self.seed, 1));
        let signs = RandomStream::new(derive_stream(self.seed, 2));
        let inv_sqrt_t = 1.0 / (t as f64).sqrt();

        let mut pending = vec![0.0f64; t * n];
        let mut scratch = vec![0.0f64; t * n];
        let mut filled = 0usize;
        let mut gblock = 0u64;

        let mut flush = |pending: &mut [f64], out: &mut DenseMatrix, gblock: &mut u64| {
            scratch.copy_from_slice(pending);
            fwht_rows(&mut scratch, t, n);
            let base = 2 * t as u64 * *gblock;
            // Mixed (Hadamard) rows first, identity copies second: global
            // output-contribution order is by the row index `k`, independent
            // of input blocking.
            for r in 0..t {
                let k = base + r as u64;
                let w = 4.0 * cauchys.cauchy_at(k) * sign_of(signs.raw_at(k)) * inv_sqrt_t;
                let dst = bounded_index(buckets.raw_at(k), s);
                simdops::axpy(w, &scratch[r * n..(r + 1) * n], out.row_mut(dst));
            }
            for o in 0..t {
                let k = base + (t + o) as u64;
                let w = 4.0 * cauchys.cauchy_at(k) * sign_of(signs.raw_at(k));
                let dst = bounded_index(buckets.raw_at(k), s);
                simdops::axpy(w, &pending[o * n..(o + 1) * n], out.row_mut(dst));
            }
            *gblock += 1;
        };

        fold_blocks(source, block_rows, ledger, out, |out, blk| {
            for r in 0..blk.rows {
                pending[filled * n..(filled + 1) * n].copy_from_slice(blk.row(r));
                filled += 1;
                if filled == t {
                    flush(&mut pending, out, &mut gblock);
                    filled = 0;
                }
            }
            Ok(())
        })?;
        if filled > 0 {
            pending[filled * n..].fill(0.0);
            flush(&mut pending, out, &mut gblock);
        }
        let mp = (self.m.div_ceil(t) * t) as f64;
        ledger.add_flops(mp * n as f64 * (t as f64).log2() + 4.0 * mp * n as f64);
        Ok(())
    }
}

/// `raw -> {+1.0, -1.0}` from the top bit.
#[inline]
fn sign_of(raw: u64) -> f64 {
    if raw >> 63 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Map a raw draw to `[0, bound)` by multiply-shift (bias `O(bound/2^64)`).
#[inline]
fn bounded_index(raw: u64, bound: usize) -> usize {
    ((raw as u128 * bound as u128) >> 64) as usize
}

/// In-place fast Walsh–Hadamard transform over the row dimension of a
/// `t x n` row-major buffer (`t` a power of two), unnormalized.
fn fwht_rows(buf: &mut [f64], t: usize, n: usize) {
    let mut len = 1;
    while len < t {
        let mut r0 = 0;
        while r0 < t {
            for r in r0..r0 + len {
                let (lo, hi) = buf.split_at_mut((r + len) * n);
                let a = &mut lo[r * n..(r + 1) * n];
                let b = &mut hi[..n];
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let (xa, yb) = (*x, *y);
                    *x = xa + yb;
                    *y = xa - yb;
                }
            }
            r0 += 2 * len;
        }
        len <<= 1;
    }
}

/// Default embedding dimension for a variant at target distortion `eps` and
/// failure probability `delta` over `n` columns and `m` input rows:
/// Gaussian/Rademacher `ceil((sqrt(n) + sqrt(2 ln(2/delta)))^2 / eps^2)`;
/// SRDHT `ceil(14 n ln(40 m n) / eps^2)`; CountSketch
/// `ceil((n^2 + n) / (eps^2 delta))`; Cauchy and FastCauchy
/// `ceil(c1 n ln n)` with `c1 = 4` (no useful `eps` dependence in the
/// heavy-tailed regime); SparseCauchy/ReciprocalExp the CountSketch value
/// capped at `100 n` (their theoretical dimensions are impractically large).
pub fn embedding_dim_default(
    variant: &SketchVariant,
    n: usize,
    m: usize,
    eps: f64,
    delta: f64,
) -> usize {
    assert!(n >= 1, "embedding_dim_default needs n >= 1");
    assert!(eps > 0.0 && eps < 1.0, "embedding_dim_default needs eps in (0,1)");
    assert!(delta > 0.0 && delta < 1.0, "embedding_dim_default needs delta in (0,1)");
    let nf = n as f64;
    match variant {
        SketchVariant::Gaussian | SketchVariant::Rademacher => {
            let root = nf.sqrt() + (2.0 * (2.0 / delta).ln()).sqrt();
            (root * root / (eps * eps)).ceil() as usize
        }
        SketchVariant::Srdht => {
            (14.0 * nf * (40.0 * m as f64 * nf).ln() / (eps * eps)).ceil() as usize
        }
        SketchVariant::CountSketch => ((nf * nf + nf) / (eps * eps * delta)).ceil() as usize,
        SketchVariant::Cauchy { .. } | SketchVariant::FastCauchy { .. } => {
            ct_embedding_dim(n, DEFAULT_CT_CONSTANT)
        }
        SketchVariant::SparseCauchy | SketchVariant::ReciprocalExp => {
            (((nf * nf + nf) / (eps * eps * delta)).ceil() as usize).min(100 * n)
        }
    }
}

/// `ceil(c1 * n * ln(max(n, 2)))` — the heavy-tailed embedding dimension
/// with an explicit leading constant.
pub fn ct_embedding_dim(n: usize, c1: f64) -> usize {
    let nf = n as f64;
    (c1 * nf * nf.max(2.0).ln()).ceil() as usize
}
