//! Branch-free `exp`, `sigmoid` and `tanh` that the compiler can vectorize.
//! Scalar and slice versions share one body, so they agree bit for bit.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
// 1.5·2^52: adding it rounds to the nearest integer and leaves that integer
// in the low mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

// 1/(k+1)! for k = 0..=12.
const EXPM1_COEF: [f64; 13] = [
    1.0,
    0.5,
    1.666_666_666_666_666_6e-1,
    4.166_666_666_666_666_4e-2,
    8.333_333_333_333_333e-3,
    1.388_888_888_888_888_9e-3,
    1.984_126_984_126_984e-4,
    2.480_158_730_158_730_2e-5,
    2.755_731_922_398_589e-6,
    2.755_731_922_398_589_3e-7,
    2.505_210_838_544_172e-8,
    2.087_675_698_786_81e-9,
    1.605_904_383_682_161_3e-10,
];

/// `(e^r − 1)/r` for `|r| ≤ ln2/2`, by Estrin's scheme (short dependency
/// chains vectorize better than Horner).
#[inline(always)]
fn expm1_ratio(r: f64) -> f64 {
    let c = &EXPM1_COEF;
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q0 = (c[0] + c[1] * r) + (c[2] + c[3] * r) * r2;
    let q1 = (c[4] + c[5] * r) + (c[6] + c[7] * r) * r2;
    let q2 = (c[8] + c[9] * r) + (c[10] + c[11] * r) * r2;
    (q0 + q1 * r4) + (q2 + c[12] * r4) * r8
}

/// Returns `(e^r − 1, 2^k, k)` with `x = k·ln2 + r`.
#[inline(always)]
fn reduce(x: f64) -> (f64, f64, f64) {
    let x = x.clamp(-708.0, 709.0);
    let shifted = x * LOG2E + ROUND_MAGIC;
    let k = shifted - ROUND_MAGIC;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let scale = f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52);
    (r * expm1_ratio(r), scale, k)
}

#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let (em, scale, _) = reduce(x);
    (1.0 + em) * scale
}

#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// `tanh|x| = −u/(2 + u)` with `u = e^{−2|x|} − 1`; when no range reduction
/// happens `u` comes straight from the series, avoiding cancellation.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let (em, scale, k) = reduce(-2.0 * x.abs());
    let u = if k == 0.0 {
        em
    } else {
        (1.0 + em) * scale - 1.0
    };
    (-u / (2.0 + u)).copysign(x)
}

macro_rules! slice_op {
    ($name:ident, $f:ident, $v512:ident, $v2:ident) => {
        #[inline(always)]
        fn $v2(xs: &mut [f64]) {
            for x in xs {
                *x = $f(*x);
            }
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f")]
        unsafe fn $v512(xs: &mut [f64]) {
            for x in xs {
                *x = $f(*x);
            }
        }

        pub fn $name(xs: &mut [f64]) {
            #[cfg(target_arch = "x86_64")]
            if super::kernels::has_avx512() {
                // SAFETY: the feature was detected at runtime.
                unsafe { $v512(xs) };
                return;
            }
            $v2(xs)
        }
    };
}

slice_op!(sigmoid_in_place, sigmoid, sigmoid_avx512, sigmoid_plain);
slice_op!(tanh_in_place, tanh, tanh_avx512, tanh_plain);
