//! Scalar special functions, Gaussian partial moments and adaptive 1-D
//! quadrature.
//!
//! Everything in the crate that integrates against a Gaussian weight ends up
//! here. The error function is the classic fdlibm rational approximation
//! (accurate to a few ulps), so the normal CDF and its complement are
//! computed without cancellation in either tail.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// √(2π)
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
/// 1/√(2π)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Infinite endpoints are replaced by ±`TRUNCATION` in [`integrate_1d`].
/// e^{-72} < 1e-31, far below any tolerance used in the crate.
pub const TRUNCATION: f64 = 12.0;

/// Default absolute tolerance for internal quadratures.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest monomial power accepted by [`gaussian_partial_moment`].
pub const MAX_MOMENT_ORDER: usize = 24;

// ---------------------------------------------------------------------------
// error function (fdlibm s_erf.c)
// ---------------------------------------------------------------------------

const ERX: f64 = 8.450_629_115_104_675_292_97e-1;
const EFX: f64 = 1.283_791_670_955_125_863_16e-1;
const PP: [f64; 5] = [
    1.283_791_670_955_125_585_61e-1,
    -3.250_421_072_470_014_993_70e-1,
    -2.848_174_957_559_851_047_66e-2,
    -5.770_270_296_489_441_591_57e-3,
    -2.376_301_665_665_016_260_84e-5,
];
const QQ: [f64; 5] = [
    3.979_172_239_591_553_528_19e-1,
    6.502_224_998_876_729_444_85e-2,
    5.081_306_281_875_765_627_76e-3,
    1.324_947_380_043_216_445_26e-4,
    -3.960_228_278_775_368_123_20e-6,
];
const PA: [f64; 7] = [
    -2.362_118_560_752_659_440_77e-3,
    4.148_561_186_837_483_316_66e-1,
    -3.722_078_760_357_013_238_47e-1,
    3.183_466_199_011_617_536_74e-1,
    -1.108_946_942_823_966_774_76e-1,
    3.547_830_432_561_823_593_71e-2,
    -2.166_375_594_868_790_843_00e-3,
];
const QA: [f64; 6] = [
    1.064_208_804_008_442_282_86e-1,
    5.403_979_177_021_710_489_37e-1,
    7.182_865_441_419_626_628_68e-2,
    1.261_712_198_087_616_421_12e-1,
    1.363_708_391_202_905_073_62e-2,
    1.198_449_984_679_910_741_70e-2,
];
const RA: [f64; 8] = [
    -9.864_944_034_847_148_227_05e-3,
    -6.938_585_727_071_817_643_72e-1,
    -1.055_862_622_532_329_098_14e1,
    -6.237_533_245_032_600_603_96e1,
    -1.623_966_694_625_734_703_55e2,
    -1.846_050_929_067_110_359_94e2,
    -8.128_743_550_630_659_342_46e1,
    -9.814_329_344_169_145_485_92,
];
const SA: [f64; 8] = [
    1.965_127_166_743_925_712_92e1,
    1.376_577_541_435_190_426_00e2,
    4.345_658_774_752_292_288_21e2,
    6.453_872_717_332_678_803_36e2,
    4.290_081_400_275_678_333_86e2,
    1.086_350_055_417_794_351_34e2,
    6.570_249_770_319_281_701_35,
    -6.042_441_521_485_809_874_38e-2,
];
const RB: [f64; 7] = [
    -9.864_942_924_700_099_285_97e-3,
    -7.992_832_376_805_230_065_74e-1,
    -1.775_795_491_775_475_198_89e1,
    -1.606_363_848_558_219_160_62e2,
    -6.375_664_433_683_896_277_22e2,
    -1.025_095_131_611_077_249_54e3,
    -4.835_191_916_086_513_970_19e2,
];
const SB: [f64; 7] = [
    3.033_806_074_348_245_829_24e1,
    3.257_925_129_965_739_188_26e2,
    1.536_729_586_084_436_959_94e3,
    3.199_858_219_508_595_539_08e3,
    2.553_050_406_433_164_425_83e3,
    4.745_285_412_069_553_672_15e2,
    -2.244_095_244_658_581_833_62e1,
];

#[inline]
fn horner(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * z + v)
}

/// erfc(x) for x ≥ 1.25 via exp(-x² - 0.5625 + R/S)/x.
fn erfc_tail(x: f64) -> f64 {
    let s = 1.0 / (x * x);
    let (r, q) = if x < 1.0 / 0.35 {
        (horner(&RA, s), 1.0 + s * horner(&SA, s))
    } else {
        (horner(&RB, s), 1.0 + s * horner(&SB, s))
    };
    // split x so that x*x is exact in the leading part
    let z = f64::from_bits(x.to_bits() & 0xffff_ffff_0000_0000);
    (-z * z - 0.5625).exp() * ((z - x) * (z + x) + r / q).exp() / x
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < 0.84375 {
        if ax < 3.725_290_298_461_914e-9 {
            ax + EFX * ax
        } else {
            let z = ax * ax;
            ax + ax * (horner(&PP, z) / (1.0 + z * horner(&QQ, z)))
        }
    } else if ax < 1.25 {
        let s = ax - 1.0;
        ERX + horner(&PA, s) / (1.0 + s * horner(&QA, s))
    } else if ax >= 6.0 {
        1.0
    } else {
        1.0 - erfc_tail(ax)
    };
    v.copysign(x)
}

/// Complementary error function, accurate in the upper tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    if ax < 0.84375 {
        let z = ax * ax;
        let y = horner(&PP, z) / (1.0 + z * horner(&QQ, z));
        if x < 0.25 {
            return 1.0 - (x + x * y);
        }
        return 0.5 - (x * y + (x - 0.5));
    }
    if ax < 1.25 {
        let s = ax - 1.0;
        let p = horner(&PA, s) / (1.0 + s * horner(&QA, s));
        return if x >= 0.0 { 1.0 - ERX - p } else { 1.0 + ERX + p };
    }
    if ax >= 28.0 {
        return if x > 0.0 { 0.0 } else { 2.0 };
    }
    if x < -6.0 {
        return 2.0;
    }
    let t = erfc_tail(ax);
    if x > 0.0 {
        t
    } else {
        2.0 - t
    }
}

/// Standard normal density φ(x).
#[inline]
pub fn gaussian_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function Φ(x).
#[inline]
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail Φ̄(x) = 1 − Φ(x), without cancellation for large x.
#[inline]
pub fn gaussian_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Γ(n/2) for a positive integer n.
pub fn gamma_half_integer(n: u32) -> f64 {
    assert!(n > 0, "Γ(0) is not defined");
    let mut g = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut m = if n.is_multiple_of(2) { 2 } else { 1 };
    while m < n {
        g *= m as f64 / 2.0;
        m += 2;
    }
    g
}

// ---------------------------------------------------------------------------
// intervals and partial moments
// ---------------------------------------------------------------------------

/// A closed interval of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidArgument(format!("interval ({lo}, {hi}) has lo > hi")));
        }
        Ok(Interval { lo, hi })
    }

    pub const fn real_line() -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub const fn below(x: f64) -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: x }
    }

    pub const fn above(x: f64) -> Self {
        Interval { lo: x, hi: f64::INFINITY }
    }

    /// Intersection, collapsing to an empty (lo == hi) interval when disjoint.
    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo >= hi {
            Interval { lo, hi: lo }
        } else {
            Interval { lo, hi }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    /// The interval with infinite ends replaced by ±[`TRUNCATION`].
    pub fn truncated(&self) -> Interval {
        let lo = self.lo.max(-TRUNCATION);
        let hi = self.hi.min(TRUNCATION);
        if lo >= hi {
            Interval { lo, hi: lo }
        } else {
            Interval { lo, hi }
        }
    }
}

/// x^{k} e^{-x²/2}, with the limit 0 at ±∞.
#[inline]
fn boundary_term(x: f64, k: usize) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x.powi(k as i32) * (-0.5 * x * x).exp()
    }
}

/// √(2π)·P(lo < Z < hi) for standard normal Z, computed on whichever side
/// avoids cancellation.
fn mass(iv: &Interval) -> f64 {
    if iv.is_empty() {
        return 0.0;
    }
    let p = if iv.lo >= 0.0 {
        gaussian_sf(iv.lo) - gaussian_sf(iv.hi)
    } else if iv.hi <= 0.0 {
        gaussian_cdf(iv.hi) - gaussian_cdf(iv.lo)
    } else {
        1.0 - gaussian_cdf(iv.lo) - gaussian_sf(iv.hi)
    };
    SQRT_2PI * p
}

/// All partial moments M_0..=M_kmax where M_k = ∫_iv x^k e^{-x²/2} dx.
///
/// Uses the integration-by-parts recurrence
/// M_k = [-x^{k-1} e^{-x²/2}]_lo^hi + (k-1) M_{k-2}.
pub fn gaussian_partial_moments(kmax: usize, iv: Interval) -> Result<Vec<f64>> {
    if kmax > MAX_MOMENT_ORDER {
        return Err(Error::Unsupported(format!("partial moment of order {kmax} (max {MAX_MOMENT_ORDER})")));
    }
    let mut m = vec![0.0; kmax + 1];
    if iv.is_empty() {
        return Ok(m);
    }
    m[0] = mass(&iv);
    if kmax >= 1 {
        m[1] = boundary_term(iv.lo, 0) - boundary_term(iv.hi, 0);
    }
    for k in 2..=kmax {
        m[k] = boundary_term(iv.lo, k - 1) - boundary_term(iv.hi, k - 1) + (k - 1) as f64 * m[k - 2];
    }
    Ok(m)
}

/// ∫_iv x^k e^{-x²/2} dx.
pub fn gaussian_partial_moment(k: usize, iv: Interval) -> Result<f64> {
    Ok(gaussian_partial_moments(k, iv)?[k])
}

// ---------------------------------------------------------------------------
// adaptive Gauss–Kronrod quadrature
// ---------------------------------------------------------------------------

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Maximum number of subintervals kept by the adaptive driver.
const MAX_SEGMENTS: usize = 4000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub segments: usize,
}

/// Globally adaptive 15-point Gauss–Kronrod quadrature over a finite range,
/// returning the best estimate even when the tolerance was not reached.
pub fn integrate_finite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> QuadEstimate {
    if !(b > a) {
        return QuadEstimate { value: 0.0, error: 0.0, segments: 0 };
    }
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    let mut err = e;
    while err > tol && heap.len() < MAX_SEGMENTS {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // cannot split any further
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // totals are re-summed from the segments
    let (value, error) = heap.iter().fold((0.0, 0.0), |(s, e), seg| (s + seg.value, e + seg.error));
    QuadEstimate { value, error, segments: heap.len() }
}

/// Integrates `f` over `iv` to absolute tolerance `tol`.
///
/// Infinite endpoints are truncated at ±[`TRUNCATION`]; only use this for
/// integrands carrying a Gaussian weight.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, iv: Interval, tol: f64) -> Result<f64> {
    let t = iv.truncated();
    let est = integrate_finite(f, t.lo, t.hi, tol);
    if !est.value.is_finite() || est.error > tol {
        return Err(Error::Quadrature { estimate: est.value, error_bound: est.error });
    }
    Ok(est.value)
}
