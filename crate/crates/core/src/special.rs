//! Error functions and Gaussian tail arithmetic in log space.
//!
//! `erf`/`erfc`/`erfcx` follow W. J. Cody's rational Chebyshev approximations
//! (Netlib SPECFUN `CALERF`). The `exp(-x^2)` factor is split as
//! `exp(-ysq^2) * exp(-del)` with `ysq = trunc(16 x) / 16`, which keeps the
//! relative error near machine precision deep in the tail. `ln_erfc` reuses the
//! same split without ever forming the exponential, so it stays finite long
//! after `erfc` underflows.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};
use std::sync::OnceLock;

/// `ln(sqrt(2 pi))`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

const THRESH: f64 = 0.46875;
const XSMALL: f64 = 1.11e-16;
const XHUGE: f64 = 6.71e7;

const A: [f64; 5] = [
    3.161_123_743_870_565_6,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const C: [f64; 9] = [
    5.641_884_969_886_701e-1,
    8.883_149_794_388_376,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_4,
    1.872_952_849_923_460_5,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

/// `erf(x)` for `|x| <= 0.46875`.
fn erf_small(x: f64) -> f64 {
    let y = x.abs();
    let ysq = if y > XSMALL { y * y } else { 0.0 };
    let mut xnum = A[4] * ysq;
    let mut xden = ysq;
    for i in 0..3 {
        xnum = (xnum + A[i]) * ysq;
        xden = (xden + B[i]) * ysq;
    }
    x * (xnum + A[3]) / (xden + B[3])
}

/// Rational factor `R(y)` with `erfc(y) = exp(-y^2) R(y)` for `y > 0.46875`.
fn erfc_rational(y: f64) -> f64 {
    if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        (xnum + C[7]) / (xden + D[7])
    } else if y >= XHUGE {
        FRAC_1_SQRT_PI / y
    } else {
        let ysq = 1.0 / (y * y);
        let mut xnum = P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * ysq;
            xden = (xden + Q[i]) * ysq;
        }
        let r = ysq * (xnum + P[4]) / (xden + Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    }
}

/// `-y^2` split as `(-ysq^2, -del)` so the sum is exact to working precision.
fn neg_square_split(y: f64) -> (f64, f64) {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq, -del)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    let upper = if y <= THRESH {
        return 1.0 - erf_small(x);
    } else if y.is_infinite() {
        0.0
    } else {
        let (a, b) = neg_square_split(y);
        a.exp() * b.exp() * erfc_rational(y)
    };
    if x < 0.0 {
        2.0 - upper
    } else {
        upper
    }
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.abs() <= THRESH {
        return erf_small(x);
    }
    let r = (0.5 - erfc(x.abs())) + 0.5;
    if x < 0.0 {
        -r
    } else {
        r
    }
}

/// Scaled complementary error function `exp(x^2) erfc(x)`, for `x >= 0`.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= THRESH {
        (x * x).exp() * (1.0 - erf_small(x))
    } else if x.is_infinite() {
        0.0
    } else {
        erfc_rational(x)
    }
}

/// `ln(erfc(x))`, finite for every finite `x`.
pub fn ln_erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x <= THRESH {
        // erfc(x) in [0.5, 2): no underflow possible
        return erfc(x).ln();
    }
    let (a, b) = neg_square_split(x);
    a + b + erfc_rational(x).ln()
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// `ln` of the standard normal density.
pub fn ln_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `ln P(Z > z)` for a standard normal `Z`.
pub fn ln_normal_sf(z: f64) -> f64 {
    ln_erfc(z * FRAC_1_SQRT_2) - LN_2
}

/// `ln P(Z < z)` for a standard normal `Z`.
pub fn ln_normal_cdf(z: f64) -> f64 {
    ln_normal_sf(-z)
}

/// Inverse Mills ratio `phi(z) / (1 - Phi(z))`, stable for large `z`.
pub fn inverse_mills(z: f64) -> f64 {
    if z == f64::INFINITY {
        return f64::INFINITY;
    }
    (ln_normal_pdf(z) - ln_normal_sf(z)).exp()
}

/// `ln(1 - exp(x))` for `x <= 0`.
pub fn ln1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(exp(a) + exp(b))`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum exp(x_i))` over a slice.
pub fn ln_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(Phi(hi) - Phi(lo))` for standardized endpoints `lo <= hi`.
///
/// Returns `-inf` for empty or degenerate intervals.
pub fn ln_std_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo.is_nan() || hi.is_nan() || hi <= lo {
        return f64::NEG_INFINITY;
    }
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        return 0.0;
    }
    // reflect so that the bulk of the interval sits on the upper side
    let (lo, hi) = if lo == f64::NEG_INFINITY || (hi != f64::INFINITY && lo + hi < 0.0) {
        (-hi, -lo)
    } else {
        (lo, hi)
    };
    if lo <= 0.0 {
        let m = 0.5 * (erf(hi * FRAC_1_SQRT_2) + erf(-lo * FRAC_1_SQRT_2));
        return m.ln();
    }
    let la = ln_normal_sf(lo);
    let lb = ln_normal_sf(hi);
    let d = lb - la;
    if d < -0.5 {
        la + ln1m_exp(d)
    } else {
        // narrow slab: Q(lo) - Q(hi) = phi(lo) * int_0^w exp(-lo t - t^2/2) dt
        let w = hi - lo;
        let integral = gauss_legendre_integrate(|t| (-lo * t - 0.5 * t * t).exp(), 0.0, w);
        ln_normal_pdf(lo) + integral.ln()
    }
}

const GL_ORDER: usize = 24;

fn gauss_legendre_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| legendre_nodes(GL_ORDER))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Fixed-order Gauss-Legendre quadrature on a finite interval.
pub fn gauss_legendre_integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre_rule()
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

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

/// Adaptive Gauss-Kronrod (7/15) quadrature on a finite interval.
///
/// Returns `None` when the error estimate does not reach
/// `max(abs_tol, rel_tol * |I|)` within the subdivision budget.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Option<f64> {
    if a == b {
        return Some(0.0);
    }
    let mut pending = vec![(a, b, gk15(&f, a, b))];
    let mut done_val = 0.0;
    let mut done_err = 0.0;
    for _ in 0..2000 {
        let total: f64 = done_val + pending.iter().map(|p| p.2 .0).sum::<f64>();
        let err: f64 = done_err + pending.iter().map(|p| p.2 .1).sum::<f64>();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Some(total);
        }
        // bisect the worst segment
        let (idx, _) = pending
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))?;
        let (lo, hi, (v, e)) = pending.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            done_val += v;
            done_err += e;
            continue;
        }
        pending.push((lo, mid, gk15(&f, lo, mid)));
        pending.push((mid, hi, gk15(&f, mid, hi)));
    }
    None
}
