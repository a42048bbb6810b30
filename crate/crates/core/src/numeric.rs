//! Scalar root bracketing and adaptive quadrature.

/// Bisection on `[lo, hi]` for an increasing-or-decreasing `f` with a sign
/// change. Stops when `|f| <= ftol`, when the bracket collapses to adjacent
/// floats, or after `max_iter` halvings. Returns the midpoint estimate and
/// the number of iterations used.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, ftol: f64, max_iter: usize) -> (f64, usize) {
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return (lo, 0);
    }
    let f_hi = f(hi);
    if f_hi == 0.0 {
        return (hi, 0);
    }
    debug_assert!(f_lo.signum() != f_hi.signum(), "bracket without sign change");
    let mut mid = 0.5 * (lo + hi);
    for it in 0..max_iter {
        mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return (mid, it);
        }
        let f_mid = f(mid);
        if f_mid.abs() <= ftol {
            return (mid, it + 1);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    (mid, max_iter)
}

// Gauss–Kronrod 7/15 nodes on [-1, 1].
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

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        // Gauss nodes sit at the odd Kronrod indices.
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]` to relative
/// tolerance `rel_tol` (with a tiny absolute floor).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Max-error-first refinement over a flat list of intervals.
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    for _ in 0..2000 {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= rel_tol * total.abs() || err <= 1e-300 {
            return total;
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    parts.iter().map(|p| p.2).sum()
}

/// `∫₀^∞ e^{-t} g(t) dt` for `g` of at most polynomial growth, integrated
/// over doubling segments until the remainder is negligible.
pub fn integrate_exp_weighted<F: Fn(f64) -> f64>(g: F, rel_tol: f64) -> f64 {
    let w = |t: f64| (-t).exp() * g(t);
    let mut total = integrate(&w, 0.0, 1.0, rel_tol);
    let (mut lo, mut hi) = (1.0, 2.0);
    while hi < 4096.0 {
        let piece = integrate(&w, lo, hi, rel_tol);
        total += piece;
        if piece.abs() <= 1e-17 * total.abs() && hi > 64.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    total
}
