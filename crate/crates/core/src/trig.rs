//! Branch-light `sin`/`cos` for the feature loops. Cody-Waite reduction by
//! `π/2` followed by minimax polynomials on `[-π/4, π/4]`; absolute error
//! stays near 1e-16 for `|x| ≤ REDUCTION_LIMIT` and larger arguments fall
//! back to the standard library.

const REDUCTION_LIMIT: f64 = 1.0e5;
const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52

const SIN: [f64; 6] = [
    1.589_623_015_765_465_680_60e-10,
    -2.505_074_776_285_780_728_66e-8,
    2.755_731_362_138_572_452_13e-6,
    -1.984_126_982_958_953_859_96e-4,
    8.333_333_333_322_118_588_78e-3,
    -1.666_666_666_666_663_072_95e-1,
];
const COS: [f64; 6] = [
    -1.135_853_652_138_768_173_00e-11,
    2.087_570_084_197_473_167_78e-9,
    -2.755_731_417_929_673_881_12e-7,
    2.480_158_728_885_170_453_48e-5,
    -1.388_888_888_887_305_641_16e-3,
    4.166_666_666_666_659_292_18e-2,
];

#[inline(always)]
fn horner(c: &[f64; 6], z: f64) -> f64 {
    ((((c[0] * z + c[1]) * z + c[2]) * z + c[3]) * z + c[4]) * z + c[5]
}

/// Reduced argument and quadrant.
#[inline(always)]
fn reduce(x: f64) -> (f64, u64) {
    let t = x * FRAC_2_PI + ROUND_MAGIC;
    let quadrant = t.to_bits() & 3;
    let q = t - ROUND_MAGIC;
    (((x - q * PIO2_1) - q * PIO2_2) - q * PIO2_3, quadrant)
}

#[inline(always)]
fn kernels(r: f64) -> (f64, f64) {
    let z = r * r;
    let s = r + r * z * horner(&SIN, z);
    let c = 1.0 - 0.5 * z + z * z * horner(&COS, z);
    (s, c)
}

/// Quadrant-corrected `(sin x, cos x)` without branches, valid for
/// `|x| ≤ REDUCTION_LIMIT`.
#[inline(always)]
fn sin_cos_in_range(x: f64) -> (f64, f64) {
    let (r, quadrant) = reduce(x);
    let (s, c) = kernels(r);
    let swap = 0u64.wrapping_sub(quadrant & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let a = (sb & !swap) | (cb & swap);
    let b = (cb & !swap) | (sb & swap);
    let sin = f64::from_bits(a ^ ((quadrant & 2) << 62));
    let cos = f64::from_bits(b ^ (((quadrant + 1) & 2) << 62));
    (sin, cos)
}

fn in_range(x: &[f64]) -> bool {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= REDUCTION_LIMIT
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    if x.abs() > REDUCTION_LIMIT || !x.is_finite() {
        return x.cos();
    }
    sin_cos_in_range(x).1
}

/// `(sin x, cos x)`.
#[inline]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() > REDUCTION_LIMIT || !x.is_finite() {
        return x.sin_cos();
    }
    sin_cos_in_range(x)
}

/// Overwrites `x` with `cos x`.
pub(crate) fn cos_in_place(x: &mut [f64]) {
    if in_range(x) {
        for v in x.iter_mut() {
            *v = sin_cos_in_range(*v).1;
        }
    } else {
        x.iter_mut().for_each(|v| *v = cos(*v));
    }
}

/// Overwrites `x` with `cos x` and writes `sin x` to `sin`.
pub(crate) fn sin_cos_in_place(x: &mut [f64], sin: &mut [f64]) {
    if in_range(x) {
        for (v, s) in x.iter_mut().zip(sin.iter_mut()) {
            let (a, b) = sin_cos_in_range(*v);
            *s = a;
            *v = b;
        }
    } else {
        for (v, s) in x.iter_mut().zip(sin.iter_mut()) {
            let (a, b) = sin_cos(*v);
            *s = a;
            *v = b;
        }
    }
}
