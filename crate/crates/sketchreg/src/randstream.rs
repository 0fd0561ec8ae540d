//! Counter-based splittable random streams.
//!
//! Every random quantity in this crate is addressed, not drawn: the value of
//! stream `S` at counter `k` is a pure function `finalize(key(S) + k*GOLDEN)`
//! (SplitMix64-style). Random access is what makes fused, block-streamed
//! sketch generation independent of block sizes and thread schedules — any
//! worker can ask for "column j, rows i0..i1" and get the same bits.
//!
//! Distributions are all single-draw transforms of one uniform (inverse-CDF
//! normal, quantile Cauchy/exponential), so counters advance by exactly one
//! per variate and never depend on rejection.

use std::sync::OnceLock;

/// Weyl-sequence increment (golden-ratio multiplier).
pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: bijective avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one logical random stream: a master seed plus a derived
/// stream id. Derivation is hierarchical — any stream can spawn indexed
/// children with no coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    /// Root stream for a master seed.
    pub fn new(master_seed: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_id: 0,
        }
    }

    /// Child stream `index` of this stream.
    pub fn derive(self, index: u64) -> Self {
        SeedSpec {
            master_seed: self.master_seed,
            stream_id: mix64(
                self.stream_id
                    .rotate_left(17)
                    .wrapping_add(GOLDEN)
                    ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)),
            ),
        }
    }
}

/// Child stream `index` of `spec` (free-function form of [`SeedSpec::derive`]).
pub fn derive_stream(spec: SeedSpec, index: u64) -> SeedSpec {
    spec.derive(index)
}

/// A positioned view of one stream: supports both sequential draws and
/// random access by counter.
#[derive(Debug, Clone)]
pub struct RandomStream {
    key: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(spec: SeedSpec) -> Self {
        RandomStream {
            key: mix64(spec.master_seed ^ mix64(spec.stream_id ^ 0xD1B5_4A32_D192_ED03)),
            counter: 0,
        }
    }

    /// Raw 64 bits at counter `k` (does not move the cursor).
    #[inline]
    pub fn raw_at(&self, k: u64) -> u64 {
        mix64(self.key.wrapping_add(k.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1) at counter `k`.
    #[inline]
    pub fn unit_at(&self, k: u64) -> f64 {
        unit_from_bits(self.raw_at(k))
    }

    /// Standard normal at counter `k` (inverse-CDF transform).
    #[inline]
    pub fn normal_at(&self, k: u64) -> f64 {
        if use_fma() {
            // SAFETY: gated on runtime FMA detection.
            unsafe { ppnd16_fma(self.unit_at(k)) }
        } else {
            ppnd16_portable(self.unit_at(k))
        }
    }

    /// Standard Cauchy at counter `k`: `tan(pi*(u - 1/2))`.
    #[inline]
    pub fn cauchy_at(&self, k: u64) -> f64 {
        (std::f64::consts::PI * (self.unit_at(k) - 0.5)).tan()
    }

    /// Exponential(1) at counter `k`: `-ln(u)`.
    #[inline]
    pub fn exponential_at(&self, k: u64) -> f64 {
        -self.unit_at(k).ln()
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    fn bump(&mut self) -> u64 {
        let k = self.counter;
        self.counter += 1;
        k
    }

    pub fn next_u64(&mut self) -> u64 {
        let k = self.bump();
        self.raw_at(k)
    }

    pub fn next_unit(&mut self) -> f64 {
        let k = self.bump();
        self.unit_at(k)
    }

    pub fn next_normal(&mut self) -> f64 {
        let k = self.bump();
        self.normal_at(k)
    }

    pub fn next_cauchy(&mut self) -> f64 {
        let k = self.bump();
        self.cauchy_at(k)
    }

    pub fn next_exponential(&mut self) -> f64 {
        let k = self.bump();
        self.exponential_at(k)
    }

    /// Uniform index in `[0, bound)`, unbiased via rejection.
    pub fn next_index(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "next_index bound must be positive");
        let b = bound as u64;
        let limit = (u64::MAX / b) * b; // multiples of b representable below 2^64
        loop {
            let x = self.next_u64();
            if x < limit {
                return (x % b) as usize;
            }
        }
    }

    /// Fill `out[t] = normal_at(k0 + t)`. Uses a vectorized central branch
    /// when AVX-512 is available; bitwise identical to per-value calls on the
    /// same machine.
    pub fn fill_normals(&self, k0: u64, out: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if use_avx512() {
            // SAFETY: gated on runtime AVX-512F detection.
            unsafe { fill_normals_avx512(self.key, k0, out) };
            return;
        }
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.normal_at(k0 + t as u64);
        }
    }
}

/// Map 64 random bits to (0, 1): take the top 53 bits and center within the
/// spacing so 0.0 and 1.0 are unreachable.
#[inline]
fn unit_from_bits(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn use_fma() -> bool {
    static F: OnceLock<bool> = OnceLock::new();
    *F.get_or_init(|| {
        if std::env::var_os("SKETCHREG_FORCE_SCALAR").is_some() {
            return false;
        }
        #[cfg(target_arch = "x86_64")]
        {
            is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

fn use_avx512() -> bool {
    static F: OnceLock<bool> = OnceLock::new();
    *F.get_or_init(|| {
        if std::env::var_os("SKETCHREG_FORCE_SCALAR").is_some() {
            return false;
        }
        #[cfg(target_arch = "x86_64")]
        {
            // DQ is needed for 64-bit integer multiply and u64->f64 conversion
            // in the vector path.
            is_x86_feature_detected!("avx512f")
                && is_x86_feature_detected!("avx512dq")
                && is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

// ---------------------------------------------------------------------------
// Inverse normal CDF (rational approximations, |error| ~ 1e-16 over (0,1)).
// Central branch |p - 1/2| <= 0.425 uses a degree-7/7 rational in
// r = 0.180625 - q^2; tails use rationals in sqrt(-ln(min(p,1-p))).
// ---------------------------------------------------------------------------

const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

const PPND_CENTRAL: f64 = 0.425;
const PPND_R0: f64 = 0.180625;

/// Degree-7 Horner evaluation with plain multiply/add.
#[inline]
fn horner_plain(c: &[f64; 8], r: f64) -> f64 {
    let mut acc = c[7];
    for k in (0..7).rev() {
        acc = acc * r + c[k];
    }
    acc
}

/// Degree-7 Horner evaluation with fused multiply-add. Caller must ensure
/// hardware FMA, otherwise this falls back to (slow, same-result) soft FMA.
#[inline]
fn horner_fma(c: &[f64; 8], r: f64) -> f64 {
    let mut acc = c[7];
    for k in (0..7).rev() {
        acc = acc.mul_add(r, c[k]);
    }
    acc
}

/// Tail computation (|q| > 0.425) with plain arithmetic, used by the portable
/// variant. The polynomial degree is low enough that plain Horner holds full
/// precision here.
#[inline]
fn ppnd16_tail(p: f64, q: f64) -> f64 {
    let r = if q < 0.0 { p } else { 1.0 - p };
    // r in (0, 0.075]; -ln(r) >= 2.59
    let mut t = (-r.ln()).sqrt();
    let x = if t <= 5.0 {
        t -= 1.6;
        horner_plain(&PPND_C, t) / horner_plain(&PPND_D, t)
    } else {
        t -= 5.0;
        horner_plain(&PPND_E, t) / horner_plain(&PPND_F, t)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Degree-7 evaluation split into even/odd halves (two short FMA chains that
/// run in parallel), halving the dependency latency versus serial Horner.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "fma")]
unsafe fn horner2_fma(c: &[f64; 8], t: f64) -> f64 {
    let u = t * t;
    let even = c[6].mul_add(u, c[4]).mul_add(u, c[2]).mul_add(u, c[0]);
    let odd = c[7].mul_add(u, c[5]).mul_add(u, c[3]).mul_add(u, c[1]);
    odd.mul_add(t, even)
}

/// Tail computation for the FMA variant. Only ever compared against itself
/// (the batch fill patches tail lanes through the same function), so it may
/// use a different evaluation order than the portable tail.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "fma")]
unsafe fn ppnd16_tail_fma(p: f64, q: f64) -> f64 {
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut t = (-r.ln()).sqrt();
    let x = if t <= 5.0 {
        t -= 1.6;
        unsafe { horner2_fma(&PPND_C, t) / horner2_fma(&PPND_D, t) }
    } else {
        t -= 5.0;
        unsafe { horner2_fma(&PPND_E, t) / horner2_fma(&PPND_F, t) }
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Inverse standard normal CDF — portable arithmetic (no FMA anywhere).
pub fn ppnd16_portable(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= PPND_CENTRAL {
        let r = PPND_R0 - q * q;
        q * horner_plain(&PPND_A, r) / horner_plain(&PPND_B, r)
    } else {
        ppnd16_tail(p, q)
    }
}

/// Inverse standard normal CDF with an FMA central branch; bitwise matches
/// the AVX-512 vector lanes.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "fma")]
unsafe fn ppnd16_fma(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= PPND_CENTRAL {
        let r = PPND_R0 - q * q;
        q * horner_fma(&PPND_A, r) / horner_fma(&PPND_B, r)
    } else {
        unsafe { ppnd16_tail_fma(p, q) }
    }
}

#[cfg(not(target_arch = "x86_64"))]
unsafe fn ppnd16_fma(p: f64) -> f64 {
    ppnd16_portable(p)
}

/// Vectorized batch: 8 counters per iteration. The counter mix, the bits-to-
/// uniform conversion, and the central inverse-CDF branch all run in AVX-512
/// lanes; tail lanes are patched by the scalar FMA variant. Every operation
/// mirrors the scalar path step for step (integer ops are exact; the float
/// ops are the same IEEE operations in the same order), so the result is
/// bitwise identical to per-value `normal_at` calls on the same machine.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,fma")]
unsafe fn fill_normals_avx512(key: u64, k0: u64, out: &mut [f64]) {
    use std::arch::x86_64::*;
    const MIX_M1: i64 = 0xBF58_476D_1CE4_E5B9u64 as i64;
    const MIX_M2: i64 = 0x94D0_49BB_1331_11EBu64 as i64;
    let n = out.len();
    let chunks = n / 8;
    unsafe {
        let half = _mm512_set1_pd(0.5);
        let scale = _mm512_set1_pd(1.0 / (1u64 << 53) as f64);
        let r0 = _mm512_set1_pd(PPND_R0);
        let central = _mm512_set1_pd(PPND_CENTRAL);
        let keyv = _mm512_set1_epi64(key as i64);
        let golden = _mm512_set1_epi64(GOLDEN as i64);
        let m1 = _mm512_set1_epi64(MIX_M1);
        let m2 = _mm512_set1_epi64(MIX_M2);
        let lanes = _mm512_set_epi64(7, 6, 5, 4, 3, 2, 1, 0);
        let mut ubuf = [0.0f64; 8];
        for c in 0..chunks {
            let base = k0.wrapping_add((8 * c) as u64);
            // z = mix64(key + k*GOLDEN) for k = base..base+8, all in-register.
            let k = _mm512_add_epi64(_mm512_set1_epi64(base as i64), lanes);
            let mut z = _mm512_add_epi64(keyv, _mm512_mullo_epi64(k, golden));
            z = _mm512_mullo_epi64(_mm512_xor_si512(z, _mm512_srli_epi64(z, 30)), m1);
            z = _mm512_mullo_epi64(_mm512_xor_si512(z, _mm512_srli_epi64(z, 27)), m2);
            z = _mm512_xor_si512(z, _mm512_srli_epi64(z, 31));
            // u = ((z >> 11) + 0.5) * 2^-53, same add-then-multiply as scalar.
            let top = _mm512_cvtepu64_pd(_mm512_srli_epi64(z, 11));
            let up = _mm512_mul_pd(_mm512_add_pd(top, half), scale);
            let q = _mm512_sub_pd(up, half);
            let qa = _mm512_abs_pd(q);
            let tail_mask = _mm512_cmp_pd_mask::<_CMP_GT_OQ>(qa, central);
            // Central evaluation on all lanes (tail lanes overwritten below).
            let r = _mm512_sub_pd(r0, _mm512_mul_pd(q, q));
            let mut num = _mm512_set1_pd(PPND_A[7]);
            let mut den = _mm512_set1_pd(PPND_B[7]);
            for j in (0..7).rev() {
                num = _mm512_fmadd_pd(num, r, _mm512_set1_pd(PPND_A[j]));
                den = _mm512_fmadd_pd(den, r, _mm512_set1_pd(PPND_B[j]));
            }
            let x = _mm512_div_pd(_mm512_mul_pd(q, num), den);
            let dst = out.as_mut_ptr().add(8 * c);
            _mm512_storeu_pd(dst, x);
            if tail_mask != 0 {
                _mm512_storeu_pd(ubuf.as_mut_ptr(), up);
                for lane in 0..8usize {
                    if tail_mask & (1 << lane) != 0 {
                        *dst.add(lane) = ppnd16_fma(ubuf[lane]);
                    }
                }
            }
        }
        for t in 8 * chunks..n {
            let u = unit_from_bits(mix64(
                key.wrapping_add((k0 + t as u64).wrapping_mul(GOLDEN)),
            ));
            out[t] = ppnd16_fma(u);
        }
    }
}
