//! Joint `sin`/`cos` for the training hot path.
//!
//! `f64::sin_cos` calls `sin` and `cos` separately, reducing the argument
//! twice. Training evaluates both for every hidden activation, so this
//! version shares one Cody–Waite reduction by π/2 and then evaluates the
//! fdlibm minimax kernels on `[-π/4, π/4]`. Error stays within about one
//! ulp for `|x| < 2^20`; larger arguments fall back to the standard library.

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
// π/2 split into three parts; the first two have trailing zero bits so
// `q * PIO2_*` is exact for the quotients handled here.
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e+00;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;

const S1: f64 = -1.666_666_666_666_663_243_48e-01;
const S2: f64 = 8.333_333_333_322_489_461_24e-03;
const S3: f64 = -1.984_126_982_985_794_931_34e-04;
const S4: f64 = 2.755_731_370_707_006_767_89e-06;
const S5: f64 = -2.505_076_025_340_686_341_95e-08;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-02;
const C2: f64 = -1.388_888_888_887_410_957_49e-03;
const C3: f64 = 2.480_158_728_947_672_941_78e-05;
const C4: f64 = -2.755_731_435_139_066_330_35e-07;
const C5: f64 = 2.087_572_321_298_174_827_90e-09;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const REDUCE_LIMIT: f64 = 1_048_576.0;

#[inline]
fn kernel_sin(r: f64, z: f64) -> f64 {
    let p = S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)));
    r + r * z * (S1 + z * p)
}

#[inline]
fn kernel_cos(z: f64) -> f64 {
    let p = z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    w + (((1.0 - w) - hz) + z * p)
}

/// `(sin x, cos x)`.
#[inline]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    if !(x.abs() < REDUCE_LIMIT) {
        return x.sin_cos();
    }
    // Adding 1.5·2^52 rounds to the nearest integer and leaves it in the
    // low mantissa bits.
    let shifted = x * FRAC_2_PI + ROUND_MAGIC;
    let qi = shifted.to_bits() as i64;
    let q = shifted - ROUND_MAGIC;
    let r = ((x - q * PIO2_1) - q * PIO2_2) - q * PIO2_3;
    let z = r * r;
    let (s, c) = (kernel_sin(r, z), kernel_cos(z));
    // Rotate by the quadrant without branches: odd quadrants swap sin and
    // cos, and bit 1 of `q` (of `q + 1` for cos) flips the sign.
    let (s, c) = if qi & 1 != 0 { (c, s) } else { (s, c) };
    let flip = |v: f64, bit: i64| f64::from_bits(v.to_bits() ^ (((bit as u64 >> 1) & 1) << 63));
    (flip(s, qi), flip(c, qi + 1))
}
