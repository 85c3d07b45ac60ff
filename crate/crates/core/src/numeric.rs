//! Numerical building blocks: adaptive Gauss–Kronrod quadrature, bracketing
//! root finders, golden-section search and normal tail probabilities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1] (QUADPACK qk15).
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
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-18,
            max_intervals: 4000,
        }
    }
}

impl QuadConfig {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
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

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    (value, error)
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`, splitting first at
/// every breakpoint that lies strictly inside the interval.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    cfg: QuadConfig,
) -> Quadrature {
    if b <= a {
        return Quadrature {
            value: 0.0,
            abs_error: 0.0,
            intervals: 0,
        };
    }
    let mut edges = vec![a];
    let mut inner: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > a && x < b && x.is_finite())
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in edges.windows(2) {
        let (value, error) = gk15(&f, w[0], w[1]);
        total += value;
        total_err += error;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }

    while total_err > cfg.abs_tol.max(cfg.rel_tol * total.abs()) && heap.len() < cfg.max_intervals
    {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval cannot be split further in f64
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }

    // re-sum to shed the drift of the running totals
    let (value, abs_error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Quadrature {
        value,
        abs_error,
        intervals: heap.len(),
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, stopping once the
/// bracket is narrower than `x_tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::NoBracket { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= x_tol || mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Boundary of a monotone predicate: given `pred(lo) == false` and
/// `pred(hi) == true`, returns `(last_false, first_true)` with
/// `first_true - last_false <= x_tol`.
pub fn bisect_predicate<P: Fn(f64) -> bool>(
    pred: P,
    mut lo: f64,
    mut hi: f64,
    x_tol: f64,
) -> (f64, f64) {
    debug_assert!(!pred(lo) && pred(hi));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= x_tol || mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Ties move the bracket right. Returns `(argmax, max)`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > x_tol {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    [(x1, f1), (x2, f2), (x, fx)]
        .into_iter()
        .fold((x, fx), |best, c| if c.1 > best.1 { c } else { best })
}

/// Upper tail of the standard normal, `P(Z > z)`, accurate deep into both tails.
pub fn normal_sf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 1.0;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadrature_polynomial_is_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, &[], QuadConfig::default());
        // [x^6/6 - x^3] from -1 to 2
        assert_relative_eq!(q.value, (64.0 / 6.0 - 8.0) - (1.0 / 6.0 + 1.0), epsilon = 1e-13);
    }

    #[test]
    fn quadrature_handles_kink_at_breakpoint() {
        let f = |x: f64| (x - 0.3).max(0.0);
        let q = integrate(f, 0.0, 1.0, &[0.3], QuadConfig::with_rel_tol(1e-12));
        assert_relative_eq!(q.value, 0.5 * 0.7 * 0.7, max_relative = 1e-13);
        let q = integrate(f, 0.0, 1.0, &[], QuadConfig::with_rel_tol(1e-12));
        assert_relative_eq!(q.value, 0.5 * 0.7 * 0.7, max_relative = 1e-10);
    }

    #[test]
    fn quadrature_gaussian_mass() {
        let q = integrate(normal_pdf, -40.0, 40.0, &[0.0], QuadConfig::default());
        assert_relative_eq!(q.value, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn empty_interval() {
        let q = integrate(|_| 1.0, 1.0, 1.0, &[], QuadConfig::default());
        assert_eq!(q.value, 0.0);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-14);
        assert!(matches!(
            bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-9),
            Err(Error::NoBracket { .. })
        ));
    }

    #[test]
    fn predicate_boundary() {
        let (lo, hi) = bisect_predicate(|x| x > 0.123, 0.0, 1.0, 1e-14);
        assert!(lo <= 0.123 && hi > 0.123 && hi - lo <= 1e-14);
    }

    #[test]
    fn golden_section_parabola() {
        let (x, fx) = golden_max(|x| -(x - 0.7).powi(2) + 2.0, 0.0, 3.0, 1e-10);
        assert!((x - 0.7).abs() < 1e-7);
        assert_relative_eq!(fx, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn normal_tails() {
        assert_relative_eq!(normal_sf(0.0), 0.5, epsilon = 1e-16);
        // P(Z > 10) = 7.619853024160527e-24
        assert_relative_eq!(normal_sf(10.0), 7.619_853_024_160_527e-24, max_relative = 1e-12);
        assert_relative_eq!(normal_sf(-3.0) + normal_sf(3.0), 1.0, epsilon = 1e-15);
    }
}
