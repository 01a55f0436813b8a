//! Empirical quantile functions, shifted Legendre polynomials and exact
//! L-moments.
//!
//! The empirical quantile function of a sample is a step function, so every
//! integral of the form `∫ Q(u) P*_r(u) du` reduces to a finite sum of
//! polynomial antiderivatives evaluated at the step boundaries. Nothing in
//! this module uses numerical quadrature.
//!
//! Antiderivatives are evaluated through the Legendre three-term recurrence
//! and the identity `(2r+1) P_r = P'_{r+1} - P'_{r-1}` rather than through
//! the monomial expansion: the monomial coefficients grow like `C(r,k)C(r+k,k)`
//! and lose all precision to cancellation once `r` passes ~12. The monomial
//! table is still built (exactly) and kept on [`LegendreBasis`].

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{GmlmError, Result};

/// Largest supported number of L-moments.
pub const MAX_ORDER: usize = 64;

/// A batch of scalar outcomes, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    /// Builds a sample, sorting the input. Empty input or non-finite values
    /// are rejected.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(GmlmError::InvalidState("empty sample".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(GmlmError::invalid(format!("non-finite observation {bad}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// Wraps values that are already in the order their quantile steps
    /// should take (typically a monotone image of a sorted sample).
    pub(crate) fn from_sorted_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unbiased (n - 1) variance; zero for a single observation.
    pub fn variance(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Applies `f` to every observation and re-sorts.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Sample> {
        Sample::new(self.values.iter().map(|&v| f(v)).collect())
    }

    /// True when every observation inside the trimmed probability range
    /// carries the same value.
    pub fn is_constant_on(&self, trim: TrimRange) -> bool {
        let n = self.values.len();
        let first = ((n as f64 * trim.lo()).floor() as usize).min(n - 1);
        let hi = empirical_quantile_unchecked(&self.values, trim.hi());
        self.values[first] == hi
    }
}

/// Integration range `[p_lo, p_hi]` in probability space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrim")]
pub struct TrimRange {
    lo: f64,
    hi: f64,
}

#[derive(Deserialize)]
struct RawTrim {
    lo: f64,
    hi: f64,
}

impl TryFrom<RawTrim> for TrimRange {
    type Error = GmlmError;
    fn try_from(r: RawTrim) -> Result<Self> {
        TrimRange::new(r.lo, r.hi)
    }
}

impl TrimRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lo) || !(hi > 0.0 && hi <= 1.0) || lo >= hi {
            return Err(GmlmError::invalid(format!(
                "trim range ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// No trimming.
    pub const fn full() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_full(&self) -> bool {
        self.lo == 0.0 && self.hi == 1.0
    }
}

impl Default for TrimRange {
    fn default() -> Self {
        Self::full()
    }
}

/// Shifted Legendre polynomials `P*_0 .. P*_{R-1}` on `[0, 1]`.
///
/// `coeffs[r][k]` is the coefficient of `u^k` in
/// `P*_r(u) = Σ_k (-1)^{r-k} C(r,k) C(r+k,k) u^k`. Entries are exact in
/// `f64` for `r <= 20`; [`LegendreBasis::exact_coefficients`] gives the
/// exact integers for every order.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis {
    order: usize,
    coeffs: Vec<Vec<f64>>,
}

impl LegendreBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self, r: usize) -> &[f64] {
        &self.coeffs[r]
    }

    /// Exact integer coefficients of `P*_r`.
    pub fn exact_coefficients(&self, r: usize) -> Vec<BigInt> {
        exact_coefficients(r)
    }

    /// `P*_r(u)` by the three-term recurrence.
    pub fn eval(&self, r: usize, u: f64) -> f64 {
        let x = 2.0 * u - 1.0;
        let (mut prev, mut cur) = (1.0, x);
        if r == 0 {
            return prev;
        }
        for k in 1..r {
            let kf = k as f64;
            let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
            prev = cur;
            cur = next;
        }
        cur
    }

    /// Writes `∫_0^u P*_r(t) dt` for `r = 0..out.len()` into `out`.
    ///
    /// `out.len()` may not exceed the basis order.
    pub fn antiderivatives(&self, u: f64, out: &mut [f64]) {
        debug_assert!(out.len() <= self.order);
        antiderivatives(u, out);
    }

    /// Exact `∫_a^b P*_r(u) du`.
    pub fn integral(&self, r: usize, a: f64, b: f64) -> f64 {
        let mut fa = vec![0.0; r + 1];
        let mut fb = vec![0.0; r + 1];
        antiderivatives(a, &mut fa);
        antiderivatives(b, &mut fb);
        fb[r] - fa[r]
    }

    /// `(∫_lo^hi P*_r)_r`, the constant column of the GLS design.
    pub fn trim_integrals(&self, trim: TrimRange) -> Vec<f64> {
        let mut fa = vec![0.0; self.order];
        let mut fb = vec![0.0; self.order];
        antiderivatives(trim.lo, &mut fa);
        antiderivatives(trim.hi, &mut fb);
        fb.iter().zip(&fa).map(|(b, a)| b - a).collect()
    }
}

struct RecurrenceCoefficients {
    /// (2r+1)/(r+1)
    a: [f64; MAX_ORDER + 1],
    /// r/(r+1)
    b: [f64; MAX_ORDER + 1],
    /// 1/(2(2r+1))
    c: [f64; MAX_ORDER + 1],
}

const RECURRENCE: RecurrenceCoefficients = {
    let mut a = [0.0; MAX_ORDER + 1];
    let mut b = [0.0; MAX_ORDER + 1];
    let mut c = [0.0; MAX_ORDER + 1];
    let mut r = 0;
    while r <= MAX_ORDER {
        let rf = r as f64;
        a[r] = (2.0 * rf + 1.0) / (rf + 1.0);
        b[r] = rf / (rf + 1.0);
        c[r] = 1.0 / (2.0 * (2.0 * rf + 1.0));
        r += 1;
    }
    RecurrenceCoefficients { a, b, c }
};

/// `F_r(u) = ∫_0^u P*_r` via `F_r = (P_{r+1}(x) - P_{r-1}(x)) / (2(2r+1))`,
/// `x = 2u - 1`, and `F_0(u) = u`.
#[inline]
fn antiderivatives(u: f64, out: &mut [f64]) {
    let order = out.len();
    if order == 0 {
        return;
    }
    out[0] = u;
    let x = 2.0 * u - 1.0;
    let mut p_prev = 1.0;
    let mut p_cur = x;
    for (r, slot) in out.iter_mut().enumerate().take(order).skip(1) {
        let p_next = RECURRENCE.a[r] * x * p_cur - RECURRENCE.b[r] * p_prev;
        *slot = (p_next - p_prev) * RECURRENCE.c[r];
        p_prev = p_cur;
        p_cur = p_next;
    }
}

fn binomial(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::from(1u32);
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn exact_coefficients(r: usize) -> Vec<BigInt> {
    let r64 = r as u64;
    (0..=r64)
        .map(|k| {
            let c = binomial(r64, k) * binomial(r64 + k, k);
            if (r64 - k) % 2 == 1 {
                -c
            } else {
                c
            }
        })
        .collect()
}

fn bigint_to_f64(v: &BigInt) -> f64 {
    // Decimal round trip is correctly rounded and avoids a num-traits dependency.
    v.to_string().parse().expect("integer literal parses as f64")
}

/// Builds the shifted Legendre basis of order `R` (polynomials `0..R-1`).
pub fn build_basis(order: usize) -> Result<LegendreBasis> {
    if order == 0 || order > MAX_ORDER {
        return Err(GmlmError::invalid(format!(
            "basis order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let coeffs = (0..order)
        .map(|r| exact_coefficients(r).iter().map(bigint_to_f64).collect())
        .collect();
    Ok(LegendreBasis { order, coeffs })
}

fn empirical_quantile_unchecked(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let idx = (n as f64 * u).ceil() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// `Q(u) = inf{x : F(x) >= u}`, i.e. the order statistic `y_(ceil(n u))`.
/// `u = 0` maps to the minimum.
pub fn empirical_quantile(s: &Sample, u: f64) -> Result<f64> {
    if s.values.is_empty() {
        return Err(GmlmError::InvalidState("empty sample".into()));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(GmlmError::invalid(format!("probability {u} outside [0, 1]")));
    }
    Ok(empirical_quantile_unchecked(&s.values, u))
}

/// Exact `∫_a^b P*_r(u) du`.
pub fn poly_integral(basis: &LegendreBasis, r: usize, a: f64, b: f64) -> Result<f64> {
    if r >= basis.order {
        return Err(GmlmError::invalid(format!(
            "polynomial index {r} outside basis of order {}",
            basis.order
        )));
    }
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return Err(GmlmError::invalid(format!(
            "integration bounds ({a}, {b}) must satisfy 0 <= a <= b <= 1"
        )));
    }
    Ok(basis.integral(r, a, b))
}

/// First `R` L-moments over the trim range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMomentVector {
    pub order: usize,
    pub trim: TrimRange,
    pub values: Vec<f64>,
}

/// Integrates a left-continuous step function against `P*_0..P*_{R-1}` over
/// the trim range.
///
/// The step function takes `values[k]` on `(ends[k-1], ends[k]]` with an
/// implicit `ends[-1] = 0`; `ends` must be non-decreasing and end at 1.
/// Summation by parts keeps the result accurate when the values share a
/// large common offset.
pub(crate) fn integrate_step_function(
    ends: &[f64],
    values: &[f64],
    trim: TrimRange,
    out: &mut [f64],
) {
    debug_assert_eq!(ends.len(), values.len());
    let order = out.len();
    let m = values.len();
    let mut f_lo = vec![0.0; order];
    let mut f_hi = vec![0.0; order];
    antiderivatives(trim.lo, &mut f_lo);
    antiderivatives(trim.hi, &mut f_hi);
    let mut f = vec![0.0; order];

    // v_m F(hi) - v_1 F(lo)
    for r in 0..order {
        out[r] = values[m - 1] * f_hi[r] - values[0] * f_lo[r];
    }
    for k in 0..m - 1 {
        let jump = values[k] - values[k + 1];
        if jump == 0.0 {
            continue;
        }
        let c = ends[k];
        let fk: &[f64] = if c <= trim.lo {
            &f_lo
        } else if c >= trim.hi {
            &f_hi
        } else {
            antiderivatives(c, &mut f);
            &f
        };
        for r in 0..order {
            out[r] += fk[r] * jump;
        }
    }
}

/// Exact trimmed L-moments `∫_{p_lo}^{p_hi} Q(u) P*_{r-1}(u) du`, `r = 1..R`.
pub fn lmoments(s: &Sample, order: usize, trim: TrimRange) -> Result<LMomentVector> {
    if order == 0 || order > MAX_ORDER {
        return Err(GmlmError::invalid(format!(
            "L-moment order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let mut values = vec![0.0; order];
    sample_integrals(s, trim, &mut values);
    Ok(LMomentVector {
        order,
        trim,
        values,
    })
}

/// `∫ Q(u) P*_r(u) du` for `r = 0..out.len()`, writing into `out`.
pub(crate) fn sample_integrals(s: &Sample, trim: TrimRange, out: &mut [f64]) {
    let n = s.len();
    let ends: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
    integrate_step_function(&ends, &s.values, trim, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    /// Gauss-Legendre nodes and weights on [0, 1] by Newton iteration.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        (1..=n)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 1..n {
                        let kf = k as f64;
                        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                ((x + 1.0) / 2.0, w / 2.0)
            })
            .collect()
    }

    #[test]
    fn basis_r3_coefficients() {
        let b = build_basis(3).unwrap();
        assert_eq!(b.coefficients(0), &[1.0]);
        assert_eq!(b.coefficients(1), &[-1.0, 2.0]);
        assert_eq!(b.coefficients(2), &[1.0, -6.0, 6.0]);
    }

    #[test]
    fn basis_order_bounds() {
        assert!(build_basis(0).is_err());
        assert!(build_basis(65).is_err());
        assert_eq!(build_basis(64).unwrap().order(), 64);
    }

    #[test]
    fn basis_unit_at_one() {
        let b = build_basis(64).unwrap();
        for r in 0..64 {
            assert_abs_diff_eq!(b.eval(r, 1.0), 1.0, epsilon = 1e-12);
            // Exact coefficients sum to one.
            let s: BigInt = b.exact_coefficients(r).iter().sum();
            assert_eq!(s, BigInt::from(1));
        }
    }

    #[test]
    fn coefficients_exact_through_order_20() {
        let b = build_basis(21).unwrap();
        for r in 0..=20 {
            for (c, e) in b.coefficients(r).iter().zip(b.exact_coefficients(r)) {
                assert_eq!(BigInt::from(*c as i64), e);
            }
        }
    }

    #[test]
    fn recurrence_matches_monomials_low_order() {
        let b = build_basis(10).unwrap();
        for r in 0..10 {
            for &u in &[0.0f64, 0.13, 0.5, 0.77, 1.0] {
                let mono: f64 = b
                    .coefficients(r)
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * u.powi(k as i32))
                    .sum();
                assert_abs_diff_eq!(b.eval(r, u), mono, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn orthogonality_to_1e12() {
        let b = build_basis(20).unwrap();
        let nodes = gauss_legendre(24);
        for r in 0..20 {
            for s in 0..20 {
                let ip: f64 = nodes
                    .iter()
                    .map(|&(u, w)| w * b.eval(r, u) * b.eval(s, u))
                    .sum();
                let expect = if r == s { 1.0 / (2.0 * r as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn poly_integral_examples() {
        let b = build_basis(4).unwrap();
        assert_abs_diff_eq!(poly_integral(&b, 1, 0.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(poly_integral(&b, 1, 0.5, 1.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(poly_integral(&b, 0, 0.2, 0.7).unwrap(), 0.5, epsilon = 1e-15);
        assert!(poly_integral(&b, 4, 0.0, 1.0).is_err());
        assert!(poly_integral(&b, 0, 0.7, 0.2).is_err());
        assert!(poly_integral(&b, 0, -0.1, 0.2).is_err());
    }

    #[test]
    fn empirical_quantile_examples() {
        let s = sample(&[3.0, 1.0, 2.0]);
        assert_eq!(empirical_quantile(&s, 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&s, 1.0 / 3.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&s, 1.0).unwrap(), 3.0);
        let c = sample(&[4.5; 7]);
        for u in [0.0, 0.01, 0.3, 0.99, 1.0] {
            assert_eq!(empirical_quantile(&c, u).unwrap(), 4.5);
        }
        assert!(empirical_quantile(&s, 1.5).is_err());
    }

    #[test]
    fn empty_sample_is_invalid_state() {
        assert!(matches!(Sample::new(vec![]), Err(GmlmError::InvalidState(_))));
        assert!(Sample::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn lmoments_two_point() {
        let l = lmoments(&sample(&[0.0, 1.0]), 2, TrimRange::full()).unwrap();
        assert_abs_diff_eq!(l.values[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(l.values[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn lmoments_constant_sample() {
        let l = lmoments(&sample(&[2.5]), 6, TrimRange::full()).unwrap();
        assert_abs_diff_eq!(l.values[0], 2.5, epsilon = 1e-15);
        for v in &l.values[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn trimmed_constant_sample_uses_trim_integrals() {
        let b = build_basis(5).unwrap();
        let trim = TrimRange::new(0.1, 0.9).unwrap();
        let l = lmoments(&sample(&[3.0, 3.0, 3.0]), 5, trim).unwrap();
        for (v, p) in l.values.iter().zip(b.trim_integrals(trim)) {
            assert_abs_diff_eq!(*v, 3.0 * p, epsilon = 1e-14);
        }
    }

    #[test]
    fn trim_range_validation() {
        assert!(TrimRange::new(0.5, 0.5).is_err());
        assert!(TrimRange::new(-0.1, 0.5).is_err());
        assert!(TrimRange::new(0.0, 1.1).is_err());
        assert!(TrimRange::default().is_full());
    }

    #[test]
    fn constant_on_trim() {
        let s = sample(&[0.0, 0.0, 0.0, 0.0, 5.0]);
        assert!(!s.is_constant_on(TrimRange::full()));
        assert!(s.is_constant_on(TrimRange::new(0.0, 0.8).unwrap()));
    }

    mod props {
        use super::*;
        use num_bigint::BigInt;
        use num_rational::BigRational;
        use proptest::prelude::*;

        fn arb_sample() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(
                prop_oneof![(-50i32..50).prop_map(|v| v as f64), -100.0f64..100.0],
                1..50,
            )
        }

        proptest! {
            #[test]
            fn second_lmoment_is_half_gini_mean_difference(v in arb_sample()) {
                let n = v.len() as f64;
                let l = lmoments(&Sample::new(v.clone()).unwrap(), 2, TrimRange::full()).unwrap();
                let gmd: f64 = v.iter().flat_map(|a| v.iter().map(move |b| (a - b).abs())).sum();
                prop_assert!((l.values[1] - gmd / (2.0 * n * n)).abs() < 1e-10);
                let mean = v.iter().sum::<f64>() / n;
                prop_assert!((l.values[0] - mean).abs() < 1e-12);
            }

            #[test]
            fn shift_equivariance(v in arb_sample(), c in -1e3f64..1e3, lo in 0.0f64..0.3, hi in 0.7f64..1.0) {
                let trim = TrimRange::new(lo, hi).unwrap();
                let b = build_basis(8).unwrap();
                let s = Sample::new(v.clone()).unwrap();
                let base = lmoments(&s, 8, trim).unwrap();
                let shifted = lmoments(&s.map(|x| x + c).unwrap(), 8, trim).unwrap();
                for (r, p) in b.trim_integrals(trim).iter().enumerate() {
                    prop_assert!((shifted.values[r] - base.values[r] - c * p).abs() < 1e-9 * (1.0 + c.abs()));
                }
            }

            #[test]
            fn scale_equivariance(v in arb_sample(), c in 0.01f64..100.0) {
                let s = Sample::new(v.clone()).unwrap();
                let base = lmoments(&s, 10, TrimRange::full()).unwrap();
                let scaled = lmoments(&s.map(|x| x * c).unwrap(), 10, TrimRange::full()).unwrap();
                for r in 0..10 {
                    prop_assert!((scaled.values[r] - c * base.values[r]).abs() < 1e-10 * c * 100.0);
                }
            }

            #[test]
            fn duplication_leaves_lmoments_unchanged(v in arb_sample(), k in 2usize..5) {
                let dup: Vec<f64> = v.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
                let a = lmoments(&Sample::new(v).unwrap(), 12, TrimRange::full()).unwrap();
                let b = lmoments(&Sample::new(dup).unwrap(), 12, TrimRange::full()).unwrap();
                prop_assert_eq!(a.values, b.values);
            }

            #[test]
            fn stable_integral_matches_exact_rational(r in 0usize..20, an in 0u32..=1000, bn in 0u32..=1000) {
                let (an, bn) = (an.min(bn), an.max(bn));
                let basis = build_basis(20).unwrap();
                let got = poly_integral(&basis, r, an as f64 / 1000.0, bn as f64 / 1000.0).unwrap();
                // Exact antiderivative of the monomial expansion in rationals.
                let prim = |num: u32| -> BigRational {
                    let u = BigRational::new(BigInt::from(num), BigInt::from(1000));
                    let mut pow = u.clone();
                    let mut acc = BigRational::from_integer(BigInt::from(0));
                    for (k, c) in basis.exact_coefficients(r).into_iter().enumerate() {
                        acc += BigRational::new(c, BigInt::from(k + 1)) * pow.clone();
                        pow *= u.clone();
                    }
                    acc
                };
                let exact = prim(bn) - prim(an);
                let exact: f64 = exact.numer().to_string().parse::<f64>().unwrap()
                    / exact.denom().to_string().parse::<f64>().unwrap();
                prop_assert!((got - exact).abs() < 1e-12, "r={} got={} exact={}", r, got, exact);
            }
        }
    }
}
