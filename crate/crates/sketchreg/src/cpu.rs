//! Runtime CPU-feature gates shared by the vectorized kernels.
//!
//! Setting the environment variable `SKETCHREG_FORCE_SCALAR` pins every
//! kernel to its portable scalar variant, which is the escape hatch for
//! reproducing results bit for bit across machines with different vector
//! units.

use std::sync::OnceLock;

/// AVX-512F + FMA available and not overridden.
pub(crate) fn avx512_fma() -> bool {
    static F: OnceLock<bool> = OnceLock::new();
    *F.get_or_init(|| {
        if std::env::var_os("SKETCHREG_FORCE_SCALAR").is_some() {
            return false;
        }
        #[cfg(target_arch = "x86_64")]
        {
            is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}
