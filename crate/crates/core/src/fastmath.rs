//! Vectorizable `exp` and `tanh` for the hot loops.
//!
//! Both kernels share one range reduction `y = k ln2 + r` with a degree-13
//! polynomial for `expm1(r)`. They avoid branches and library calls so the
//! compiler vectorizes them; AVX2 is used when the CPU has it. No FMA
//! contraction is involved, so both code paths produce identical bits.

const LANES: usize = 32;

const INV_FACTORIALS: [f64; 13] = {
    let mut c = [0.0; 13];
    let mut f = 1.0;
    let mut k = 1;
    while k <= 13 {
        f *= k as f64;
        c[k - 1] = 1.0 / f;
        k += 1;
    }
    c
};

/// Returns `(2^k, expm1(r))` with `2^k (1 + expm1(r)) = exp(y)`, valid for
/// `-1000 < y < 700`.
#[inline(always)]
fn reduce(y: f64) -> (f64, f64) {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to the nearest integer and leaves it in the low bits
    const ROUNDER: f64 = 6_755_399_441_055_744.0;
    let c = &INV_FACTORIALS;
    let t = y * LOG2E + ROUNDER;
    let k = t - ROUNDER;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let mut p = c[12];
    p = p * r + c[11];
    p = p * r + c[10];
    p = p * r + c[9];
    p = p * r + c[8];
    p = p * r + c[7];
    p = p * r + c[6];
    p = p * r + c[5];
    p = p * r + c[4];
    p = p * r + c[3];
    p = p * r + c[2];
    p = p * r + c[1];
    let em1_r = r + r * (r * p);
    let bits = ((t.to_bits() as i64).wrapping_add(1023) << 52) as u64;
    (f64::from_bits(bits), em1_r)
}

#[inline(always)]
fn tanh_lanes(x: &mut [f64; LANES]) {
    for v in x.iter_mut() {
        let y = -2.0 * v.abs();
        let y = if y < -60.0 { -60.0 } else { y };
        let (scale, em1_r) = reduce(y);
        // exact for k = 0, so small arguments keep full relative precision
        let em1 = scale * em1_r + (scale - 1.0);
        let mag = -em1 / (2.0 + em1);
        *v = mag.copysign(*v);
    }
}

#[inline(always)]
fn exp_lanes(x: &mut [f64; LANES]) {
    for v in x.iter_mut() {
        let y = *v;
        let yc = if y < -700.0 { -700.0 } else if y > 700.0 { 700.0 } else { y };
        let (scale, em1_r) = reduce(yc);
        let e = scale + scale * em1_r;
        *v = if y < -700.0 { 0.0 } else { e };
    }
}

macro_rules! dispatch {
    ($name:ident, $avx:ident, $generic:ident, $lanes:ident) => {
        #[inline(always)]
        fn $generic(v: &mut [f64]) {
            let mut chunks = v.chunks_exact_mut(LANES);
            for chunk in &mut chunks {
                $lanes(chunk.try_into().expect("exact chunk"));
            }
            let rest = chunks.into_remainder();
            if !rest.is_empty() {
                let mut buf = [0.0; LANES];
                buf[..rest.len()].copy_from_slice(rest);
                $lanes(&mut buf);
                let n = rest.len();
                rest.copy_from_slice(&buf[..n]);
            }
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx(v: &mut [f64]) {
            $generic(v);
        }

        pub fn $name(v: &mut [f64]) {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the required CPU feature was detected above.
                    unsafe { $avx(v) };
                    return;
                }
            }
            $generic(v);
        }
    };
}

dispatch!(tanh_in_place, tanh_avx2, tanh_generic, tanh_lanes);
dispatch!(exp_in_place, exp_avx2, exp_generic, exp_lanes);
