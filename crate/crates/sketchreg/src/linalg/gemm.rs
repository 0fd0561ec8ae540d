//! Dense matrix multiplication with packed panels and runtime-dispatched
//! SIMD microkernels (AVX-512F, AVX2+FMA, portable scalar).
//!
//! Determinism contract: for fixed inputs the result is bitwise identical for
//! any rayon thread count, because threads split only disjoint row slabs of C
//! and the per-element accumulation order over `k` is fixed by the packing
//! loop structure. Results can differ across *kernel families* (FMA vs
//! non-FMA rounding); the `SKETCHREG_FORCE_SCALAR` environment variable pins
//! the portable kernel when cross-machine bitwise reproducibility matters
//! more than speed.

use crate::matrix::DenseMatrix;
use std::sync::OnceLock;

/// Cache-blocking parameters (tuned for a ~1 MiB L2 / server-class x86).
const KC: usize = 384;
const MC: usize = 128;
const NC: usize = 4096;

/// Microkernel shape plus the kernel function itself. The kernel computes a
/// full `mr x nr` tile product over `kc` packed columns and overwrites the
/// caller-provided tile buffer.
#[derive(Clone, Copy)]
struct Kernel {
    mr: usize,
    nr: usize,
    /// `kern(kc, a_panel, b_panel, tile)`; `a_panel` is `mr`-interleaved,
    /// `b_panel` is `nr`-interleaved, `tile` holds `mr*nr` doubles.
    kern: unsafe fn(usize, *const f64, *const f64, *mut f64),
    name: &'static str,
}

fn select_kernel() -> Kernel {
    if std::env::var_os("SKETCHREG_FORCE_SCALAR").is_some() {
        return Kernel {
            mr: 4,
            nr: 4,
            kern: kern_scalar_4x4,
            name: "scalar",
        };
    }
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            return Kernel {
                mr: 8,
                nr: 16,
                kern: kern_avx512_8x16,
                name: "avx512",
            };
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return Kernel {
                mr: 4,
                nr: 8,
                kern: kern_avx2_4x8,
                name: "avx2",
            };
        }
    }
    Kernel {
        mr: 4,
        nr: 4,
        kern: kern_scalar_4x4,
        name: "scalar",
    }
}

fn kernel() -> Kernel {
    static KERNEL: OnceLock<Kernel> = OnceLock::new();
    *KERNEL.get_or_init(select_kernel)
}

/// Name of the active microkernel family ("avx512", "avx2", or "scalar").
pub fn kernel_name() -> &'static str {
    kernel().name
}

/// `C += alpha * A * B` on raw row-major buffers with leading dimensions.
///
/// `a` is `m x k` (stride `lda`), `b` is `k x n` (stride `ldb`), `c` is
/// `m x n` (stride `ldc`). Panics on out-of-range strides.
pub fn gemm_acc(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    gemm_driver(m, n, k, alpha, PackSrc::Normal { data: a, ld: lda }, b, ldb, c, ldc);
}

/// `C += alpha * A^T * B` where `a` is stored `k x m` (stride `lda`).
///
/// The transpose happens during panel packing; no explicit transposed copy of
/// `A` is formed.
pub fn gemm_acc_tn(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    gemm_driver(m, n, k, alpha, PackSrc::Transposed { data: a, ld: lda }, b, ldb, c, ldc);
}

/// `A * B` as a fresh matrix.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimensions");
    let mut c = DenseMatrix::zeros(a.rows(), b.cols());
    let (m, n, k) = (a.rows(), b.cols(), a.cols());
    let ldc = c.cols();
    parallel_rows(m, n, k, 1.0, a.as_slice(), a.cols(), b.as_slice(), b.cols(), c.as_mut_slice(), ldc);
    c
}

/// `A^T * B` as a fresh matrix (`a` is `k x m`, result `m x n`).
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.rows(), b.rows(), "matmul_tn inner dimensions");
    let (m, n, k) = (a.cols(), b.cols(), a.rows());
    let mut c = DenseMatrix::zeros(m, n);
    let ldc = c.cols();
    gemm_acc_tn(m, n, k, 1.0, a.as_slice(), a.cols(), b.as_slice(), b.cols(), c.as_mut_slice(), ldc);
    c
}

/// Gram matrix `A^T A` (symmetric `n x n`, computed fully).
pub fn gram(a: &DenseMatrix) -> DenseMatrix {
    matmul_tn(a, a)
}

/// Split C's rows into one contiguous slab per rayon thread and run the
/// serial driver on each slab. Row-slab splitting never changes the
/// per-element accumulation order, so any thread count gives bitwise
/// identical results.
fn parallel_rows(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    let threads = rayon::current_num_threads();
    // Fine-grained slabs are pointless below a few MFLOP per slab.
    let min_rows = 64.max(m / threads.max(1) / 4);
    if threads <= 1 || m < 2 * min_rows {
        gemm_driver(m, n, k, alpha, PackSrc::Normal { data: a, ld: lda }, b, ldb, c, ldc);
        return;
    }
    let slab = m.div_ceil(threads).max(min_rows);
    use rayon::prelude::*;
    c.par_chunks_mut(slab * ldc)
        .enumerate()
        .for_each(|(si, cslab)| {
            let row0 = si * slab;
            let rows = (m - row0).min(slab);
            gemm_driver(
                rows,
                n,
                k,
                alpha,
                PackSrc::Normal { data: &a[row0 * lda..], ld: lda },
                b,
                ldb,
                cslab,
                ldc,
            );
        });
}

/// Where the A-operand panels come from: a normal `m x k` layout or a
/// `k x m` layout read transposed.
#[derive(Clone, Copy)]
enum PackSrc<'a> {
    Normal { data: &'a [f64], ld: usize },
    Transposed { data: &'a [f64], ld: usize },
}

fn gemm_driver(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: PackSrc<'_>,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 || k == 0 || alpha == 0.0 {
        return;
    }
    assert!(ldb >= n && ldc >= n, "gemm leading dimensions");
    let kr = kernel();
    let (mr, nr) = (kr.mr, kr.nr);

    let mut bpack = vec![0.0f64; KC * NC.min(n.next_multiple_of(nr))];
    let mut apack = vec![0.0f64; MC.next_multiple_of(mr) * KC];
    let mut tile = vec![0.0f64; mr * nr];

    for jc in (0..n).step_by(NC) {
        let ncb = (n - jc).min(NC);
        let n_tiles = ncb.div_ceil(nr);
        for pc in (0..k).step_by(KC) {
            let kcb = (k - pc).min(KC);
            pack_b(&mut bpack, b, ldb, pc, jc, kcb, ncb, nr);
            for ic in (0..m).step_by(MC) {
                let mcb = (m - ic).min(MC);
                let m_tiles = mcb.div_ceil(mr);
                pack_a(&mut apack, a, ic, pc, mcb, kcb, mr);
                for jt in 0..n_tiles {
                    let nrb = (ncb - jt * nr).min(nr);
                    let bp = &bpack[jt * nr * kcb..];
                    for it in 0..m_tiles {
                        let mrb = (mcb - it * mr).min(mr);
                        let ap = &apack[it * mr * kcb..];
                        unsafe {
                            (kr.kern)(kcb, ap.as_ptr(), bp.as_ptr(), tile.as_mut_ptr());
                        }
                        // Accumulate the valid part of the tile into C.
                        let c_row0 = ic + it * mr;
                        let c_col0 = jc + jt * nr;
                        for r in 0..mrb {
                            let crow = &mut c[(c_row0 + r) * ldc + c_col0..][..nrb];
                            let trow = &tile[r * nr..][..nrb];
                            if alpha == 1.0 {
                                for (cv, tv) in crow.iter_mut().zip(trow) {
                                    *cv += tv;
                                }
                            } else {
                                for (cv, tv) in crow.iter_mut().zip(trow) {
                                    *cv += alpha * tv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Pack `kcb x ncb` of B starting at `(pc, jc)` into `nr`-wide interleaved
/// micropanels, zero-padding the last panel's columns.
fn pack_b(bpack: &mut [f64], b: &[f64], ldb: usize, pc: usize, jc: usize, kcb: usize, ncb: usize, nr: usize) {
    let n_tiles = ncb.div_ceil(nr);
    for jt in 0..n_tiles {
        let col0 = jc + jt * nr;
        let w = (jc + ncb - col0).min(nr);
        let dst = &mut bpack[jt * nr * kcb..(jt + 1) * nr * kcb];
        for kk in 0..kcb {
            let src = &b[(pc + kk) * ldb + col0..][..w];
            let d = &mut dst[kk * nr..kk * nr + nr];
            d[..w].copy_from_slice(src);
            for v in &mut d[w..] {
                *v = 0.0;
            }
        }
    }
}

/// Pack `mcb x kcb` of A starting at `(ic, pc)` into `mr`-tall interleaved
/// micropanels, zero-padding the last panel's rows. Handles the transposed
/// source layout for `A^T B` products.
fn pack_a(apack: &mut [f64], a: PackSrc<'_>, ic: usize, pc: usize, mcb: usize, kcb: usize, mr: usize) {
    let m_tiles = mcb.div_ceil(mr);
    for it in 0..m_tiles {
        let row0 = ic + it * mr;
        let h = (ic + mcb - row0).min(mr);
        let dst = &mut apack[it * mr * kcb..(it + 1) * mr * kcb];
        match a {
            PackSrc::Normal { data, ld } => {
                for kk in 0..kcb {
                    let d = &mut dst[kk * mr..(kk + 1) * mr];
                    for r in 0..h {
                        d[r] = data[(row0 + r) * ld + pc + kk];
                    }
                    for v in &mut d[h..] {
                        *v = 0.0;
                    }
                }
            }
            PackSrc::Transposed { data, ld } => {
                // Element (row0+r, pc+kk) of A^T is data[(pc+kk)*ld + row0+r].
                for kk in 0..kcb {
                    let src = &data[(pc + kk) * ld + row0..][..h];
                    let d = &mut dst[kk * mr..(kk + 1) * mr];
                    d[..h].copy_from_slice(src);
                    for v in &mut d[h..] {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Microkernels
// ---------------------------------------------------------------------------

/// Portable fallback: 4x4 tile, scalar FMA-free arithmetic.
unsafe fn kern_scalar_4x4(kc: usize, ap: *const f64, bp: *const f64, tile: *mut f64) {
    let mut acc = [[0.0f64; 4]; 4];
    let mut a = ap;
    let mut b = bp;
    unsafe {
        for _ in 0..kc {
            let av = [*a, *a.add(1), *a.add(2), *a.add(3)];
            let bv = [*b, *b.add(1), *b.add(2), *b.add(3)];
            for r in 0..4 {
                for cidx in 0..4 {
                    acc[r][cidx] += av[r] * bv[cidx];
                }
            }
            a = a.add(4);
            b = b.add(4);
        }
        for r in 0..4 {
            for cidx in 0..4 {
                *tile.add(r * 4 + cidx) = acc[r][cidx];
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn kern_avx2_4x8(kc: usize, ap: *const f64, bp: *const f64, tile: *mut f64) {
    use std::arch::x86_64::*;
    unsafe {
        let mut acc = [_mm256_setzero_pd(); 8];
        let mut a = ap;
        let mut b = bp;
        for _ in 0..kc {
            let b0 = _mm256_loadu_pd(b);
            let b1 = _mm256_loadu_pd(b.add(4));
            let a0 = _mm256_set1_pd(*a);
            acc[0] = _mm256_fmadd_pd(a0, b0, acc[0]);
            acc[1] = _mm256_fmadd_pd(a0, b1, acc[1]);
            let a1 = _mm256_set1_pd(*a.add(1));
            acc[2] = _mm256_fmadd_pd(a1, b0, acc[2]);
            acc[3] = _mm256_fmadd_pd(a1, b1, acc[3]);
            let a2 = _mm256_set1_pd(*a.add(2));
            acc[4] = _mm256_fmadd_pd(a2, b0, acc[4]);
            acc[5] = _mm256_fmadd_pd(a2, b1, acc[5]);
            let a3 = _mm256_set1_pd(*a.add(3));
            acc[6] = _mm256_fmadd_pd(a3, b0, acc[6]);
            acc[7] = _mm256_fmadd_pd(a3, b1, acc[7]);
            a = a.add(4);
            b = b.add(8);
        }
        for r in 0..4 {
            _mm256_storeu_pd(tile.add(r * 8), acc[2 * r]);
            _mm256_storeu_pd(tile.add(r * 8 + 4), acc[2 * r + 1]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn kern_avx512_8x16(kc: usize, ap: *const f64, bp: *const f64, tile: *mut f64) {
    use std::arch::x86_64::*;
    unsafe {
        let mut acc = [_mm512_setzero_pd(); 16];
        let mut a = ap;
        let mut b = bp;
        for _ in 0..kc {
            let b0 = _mm512_loadu_pd(b);
            let b1 = _mm512_loadu_pd(b.add(8));
            // Eight broadcast+FMA pairs; fixed unroll keeps all sixteen
            // accumulators in zmm registers.
            let a0 = _mm512_set1_pd(*a);
            acc[0] = _mm512_fmadd_pd(a0, b0, acc[0]);
            acc[1] = _mm512_fmadd_pd(a0, b1, acc[1]);
            let a1 = _mm512_set1_pd(*a.add(1));
            acc[2] = _mm512_fmadd_pd(a1, b0, acc[2]);
            acc[3] = _mm512_fmadd_pd(a1, b1, acc[3]);
            let a2 = _mm512_set1_pd(*a.add(2));
            acc[4] = _mm512_fmadd_pd(a2, b0, acc[4]);
            acc[5] = _mm512_fmadd_pd(a2, b1, acc[5]);
            let a3 = _mm512_set1_pd(*a.add(3));
            acc[6] = _mm512_fmadd_pd(a3, b0, acc[6]);
            acc[7] = _mm512_fmadd_pd(a3, b1, acc[7]);
            let a4 = _mm512_set1_pd(*a.add(4));
            acc[8] = _mm512_fmadd_pd(a4, b0, acc[8]);
            acc[9] = _mm512_fmadd_pd(a4, b1, acc[9]);
            let a5 = _mm512_set1_pd(*a.add(5));
            acc[10] = _mm512_fmadd_pd(a5, b0, acc[10]);
            acc[11] = _mm512_fmadd_pd(a5, b1, acc[11]);
            let a6 = _mm512_set1_pd(*a.add(6));
            acc[12] = _mm512_fmadd_pd(a6, b0, acc[12]);
            acc[13] = _mm512_fmadd_pd(a6, b1, acc[13]);
            let a7 = _mm512_set1_pd(*a.add(7));
            acc[14] = _mm512_fmadd_pd(a7, b0, acc[14]);
            acc[15] = _mm512_fmadd_pd(a7, b1, acc[15]);
            a = a.add(8);
            b = b.add(16);
        }
        for r in 0..8 {
            _mm512_storeu_pd(tile.add(r * 16), acc[2 * r]);
            _mm512_storeu_pd(tile.add(r * 16 + 8), acc[2 * r + 1]);
        }
    }
}
