//! Shared level-1 vector kernels (dot product, axpy) with runtime AVX-512
//! dispatch and portable scalar fallbacks.
//!
//! All callers go through the safe dispatchers; the `SKETCHREG_FORCE_SCALAR`
//! environment variable (checked once in [`crate::cpu`]) pins the scalar
//! path when cross-machine bitwise reproducibility matters more than speed.

/// Inner product of two equal-length slices.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if crate::cpu::avx512_fma() {
        // SAFETY: gated on runtime feature detection.
        return unsafe { dot_avx512(a, b) };
    }
    crate::matrix::dot(a, b)
}

/// `y += alpha * x` element-wise.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(target_arch = "x86_64")]
    if crate::cpu::avx512_fma() {
        // SAFETY: gated on runtime feature detection.
        unsafe { axpy_avx512(alpha, x, y) };
        return;
    }
    axpy_scalar(alpha, x, y);
}

#[inline]
pub(crate) fn axpy_scalar(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn dot_avx512(a: &[f64], b: &[f64]) -> f64 {
    use std::arch::x86_64::*;
    let n = a.len();
    unsafe {
        let mut acc0 = _mm512_setzero_pd();
        let mut acc1 = _mm512_setzero_pd();
        let mut k = 0usize;
        while k + 16 <= n {
            let a0 = _mm512_loadu_pd(a.as_ptr().add(k));
            let b0 = _mm512_loadu_pd(b.as_ptr().add(k));
            acc0 = _mm512_fmadd_pd(a0, b0, acc0);
            let a1 = _mm512_loadu_pd(a.as_ptr().add(k + 8));
            let b1 = _mm512_loadu_pd(b.as_ptr().add(k + 8));
            acc1 = _mm512_fmadd_pd(a1, b1, acc1);
            k += 16;
        }
        if k + 8 <= n {
            let a0 = _mm512_loadu_pd(a.as_ptr().add(k));
            let b0 = _mm512_loadu_pd(b.as_ptr().add(k));
            acc0 = _mm512_fmadd_pd(a0, b0, acc0);
            k += 8;
        }
        if k < n {
            let m: __mmask8 = (1u8 << (n - k)) - 1;
            let a0 = _mm512_maskz_loadu_pd(m, a.as_ptr().add(k));
            let b0 = _mm512_maskz_loadu_pd(m, b.as_ptr().add(k));
            acc1 = _mm512_fmadd_pd(a0, b0, acc1);
        }
        _mm512_reduce_add_pd(_mm512_add_pd(acc0, acc1))
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn axpy_avx512(alpha: f64, x: &[f64], y: &mut [f64]) {
    use std::arch::x86_64::*;
    let n = x.len();
    unsafe {
        let av = _mm512_set1_pd(alpha);
        let mut k = 0usize;
        while k + 8 <= n {
            let xv = _mm512_loadu_pd(x.as_ptr().add(k));
            let yv = _mm512_loadu_pd(y.as_ptr().add(k));
            _mm512_storeu_pd(y.as_mut_ptr().add(k), _mm512_fmadd_pd(av, xv, yv));
            k += 8;
        }
        if k < n {
            let m: __mmask8 = (1u8 << (n - k)) - 1;
            let xv = _mm512_maskz_loadu_pd(m, x.as_ptr().add(k));
            let yv = _mm512_maskz_loadu_pd(m, y.as_ptr().add(k));
            _mm512_mask_storeu_pd(y.as_mut_ptr().add(k), m, _mm512_fmadd_pd(av, xv, yv));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn dispatched_kernels_match_scalar() {
        for n in [0usize, 1, 7, 8, 9, 15, 16, 17, 100, 501] {
            let x = fill(n, n as u64 + 1);
            let y0 = fill(n, n as u64 + 31);

            let d_fast = dot(&x, &y0);
            let d_ref = crate::matrix::dot(&x, &y0);
            assert!((d_fast - d_ref).abs() <= 1e-13 * (1.0 + d_ref.abs()));

            let mut y1 = y0.clone();
            let mut y2 = y0.clone();
            axpy(0.37, &x, &mut y1);
            axpy_scalar(0.37, &x, &mut y2);
            for (a, b) in y1.iter().zip(&y2) {
                assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
            }
        }
    }
}
