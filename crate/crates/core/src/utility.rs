//! Normalized user utility curves over the total allocated rate.
//!
//! Two families are supported: a sigmoidal-like curve for inelastic
//! (real-time) traffic and a normalized logarithm for elastic traffic. Both
//! satisfy `U(0) = 0`, are strictly increasing, and have a strictly concave
//! natural logarithm on the positive axis, which is what the allocation
//! machinery relies on.
//!
//! Everything here is evaluated through `ln U` and its derivative in forms
//! that stay finite for steep curves (`a * b` of 50 or more), because the
//! raw normalization constants `c` and `d` lose all precision there.

use core::fmt;

/// Shrink factor used when bracketing the demand from above.
const BRACKET_SHRINK: f64 = 0.5;
/// Iteration budget shared by the bracket search and the bisection.
const MAX_BISECTION_ITERS: usize = 200;
/// Relative width of the final bisection bracket.
const RATE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityError {
    /// A rate argument was outside the domain of the operation.
    RateOutOfDomain(f64),
    /// A price argument was not strictly positive and finite.
    PriceOutOfDomain(f64),
    /// A constructor parameter violated its invariant.
    InvalidParameter { name: &'static str, value: f64 },
    /// Bisection ran out of iterations before reaching the tolerance.
    NoConvergence { price: f64, lo: f64, hi: f64 },
}

impl fmt::Display for UtilityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityError::RateOutOfDomain(r) => write!(f, "rate {r} is outside the utility domain"),
            UtilityError::PriceOutOfDomain(p) => write!(f, "price {p} must be positive and finite"),
            UtilityError::InvalidParameter { name, value } => {
                write!(f, "utility parameter `{name}` = {value} is invalid")
            }
            UtilityError::NoConvergence { price, lo, hi } => write!(
                f,
                "demand search at price {price} did not converge (bracket [{lo}, {hi}])"
            ),
        }
    }
}

impl core::error::Error for UtilityError {}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `ln(1 - e^-x)` for `x > 0`, accurate at both ends.
fn log1mexp(x: f64) -> f64 {
    if x > core::f64::consts::LN_2 {
        libm::log1p(-libm::exp(-x))
    } else {
        libm::log(-libm::expm1(-x))
    }
}

/// Logistic function, split on the sign of `x` so neither branch overflows.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn check_param(name: &'static str, value: f64) -> Result<f64, UtilityError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(UtilityError::InvalidParameter { name, value })
    }
}

/// `U(r) = c * (1 / (1 + e^{-a (r - b)}) - d)` with `c` and `d` chosen so
/// that `U(0) = 0` and `U(inf) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidalUtility {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl SigmoidalUtility {
    pub fn new(a: f64, b: f64) -> Result<Self, UtilityError> {
        let a = check_param("a", a)?;
        let b = check_param("b", b)?;
        let eab = libm::exp(a * b);
        // For a*b beyond ~709 e^{ab} is infinite; the limits are c = 1, d = 0.
        let (c, d) = if eab.is_finite() {
            ((1.0 + eab) / eab, 1.0 / (1.0 + eab))
        } else {
            (1.0, 0.0)
        };
        Ok(Self { a, b, c, d })
    }

    /// Steepness.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Inflection rate.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Normalization scale `(1 + e^{ab}) / e^{ab}`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Normalization offset `1 / (1 + e^{ab})`.
    pub fn d(&self) -> f64 {
        self.d
    }

    // U(r) = sigma(a (r - b)) * (1 - e^{-a r}), an exact rewrite of the
    // c/d form that never subtracts two nearly equal numbers.
    fn value(&self, r: f64) -> f64 {
        logistic(self.a * (r - self.b)) * -libm::expm1(-self.a * r)
    }

    fn ln_value(&self, r: f64) -> f64 {
        -softplus(-self.a * (r - self.b)) + log1mexp(self.a * r)
    }

    fn ln_derivative(&self, r: f64) -> f64 {
        let a = self.a;
        a * logistic(-a * (r - self.b)) + a / libm::expm1(a * r)
    }

    fn ln_second_derivative(&self, r: f64) -> f64 {
        let a = self.a;
        let z = a * (r - self.b);
        let e = libm::expm1(-a * r);
        -a * a * (logistic(z) * logistic(-z) + libm::exp(-a * r) / (e * e))
    }
}

/// `U(r) = ln(1 + k r) / ln(1 + k r_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogarithmicUtility {
    k: f64,
    r_max: f64,
}

impl LogarithmicUtility {
    pub fn new(k: f64, r_max: f64) -> Result<Self, UtilityError> {
        Ok(Self {
            k: check_param("k", k)?,
            r_max: check_param("r_max", r_max)?,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Rate at which the user reaches full satisfaction.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    fn value(&self, r: f64) -> f64 {
        libm::log1p(self.k * r) / libm::log1p(self.k * self.r_max)
    }

    fn ln_value(&self, r: f64) -> f64 {
        libm::log(libm::log1p(self.k * r)) - libm::log(libm::log1p(self.k * self.r_max))
    }

    fn ln_derivative(&self, r: f64) -> f64 {
        let kr = self.k * r;
        self.k / ((1.0 + kr) * libm::log1p(kr))
    }

    fn ln_second_derivative(&self, r: f64) -> f64 {
        let kr = self.k * r;
        let l = libm::log1p(kr);
        -self.k * self.k * (l + 1.0) / ((1.0 + kr) * (1.0 + kr) * l * l)
    }
}

/// A user's satisfaction as a function of its total rate across carriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFunction {
    Sigmoidal(SigmoidalUtility),
    Logarithmic(LogarithmicUtility),
}

impl From<SigmoidalUtility> for UtilityFunction {
    fn from(u: SigmoidalUtility) -> Self {
        UtilityFunction::Sigmoidal(u)
    }
}

impl From<LogarithmicUtility> for UtilityFunction {
    fn from(u: LogarithmicUtility) -> Self {
        UtilityFunction::Logarithmic(u)
    }
}

fn check_rate(r: f64) -> Result<f64, UtilityError> {
    if r.is_finite() && r >= 0.0 {
        Ok(r)
    } else {
        Err(UtilityError::RateOutOfDomain(r))
    }
}

impl UtilityFunction {
    pub fn sigmoidal(a: f64, b: f64) -> Result<Self, UtilityError> {
        SigmoidalUtility::new(a, b).map(Into::into)
    }

    pub fn logarithmic(k: f64, r_max: f64) -> Result<Self, UtilityError> {
        LogarithmicUtility::new(k, r_max).map(Into::into)
    }

    /// `U(r_total)`.
    pub fn evaluate(&self, r_total: f64) -> Result<f64, UtilityError> {
        let r = check_rate(r_total)?;
        Ok(match self {
            UtilityFunction::Sigmoidal(s) => s.value(r),
            UtilityFunction::Logarithmic(l) => l.value(r),
        })
    }

    /// `ln U(r_total)`; negative infinity at zero rate.
    pub fn log_utility(&self, r_total: f64) -> Result<f64, UtilityError> {
        let r = check_rate(r_total)?;
        if r == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match self {
            UtilityFunction::Sigmoidal(s) => s.ln_value(r),
            UtilityFunction::Logarithmic(l) => l.ln_value(r),
        })
    }

    /// `d/dr ln U(r)`, the price a user is willing to pay per unit of rate
    /// at total rate `r_total`. Strictly positive and strictly decreasing.
    pub fn marginal(&self, r_total: f64) -> Result<f64, UtilityError> {
        if !(r_total.is_finite() && r_total > 0.0) {
            return Err(UtilityError::RateOutOfDomain(r_total));
        }
        Ok(self.marginal_unchecked(r_total))
    }

    pub(crate) fn marginal_unchecked(&self, r: f64) -> f64 {
        match self {
            UtilityFunction::Sigmoidal(s) => s.ln_derivative(r),
            UtilityFunction::Logarithmic(l) => l.ln_derivative(r),
        }
    }

    /// `d/dr` of [`marginal`](Self::marginal); strictly negative.
    pub fn marginal_slope(&self, r_total: f64) -> Result<f64, UtilityError> {
        if !(r_total.is_finite() && r_total > 0.0) {
            return Err(UtilityError::RateOutOfDomain(r_total));
        }
        Ok(match self {
            UtilityFunction::Sigmoidal(s) => s.ln_second_derivative(r_total),
            UtilityFunction::Logarithmic(l) => l.ln_second_derivative(r_total),
        })
    }

    /// Price elasticity of demand at total rate `r_total`:
    /// `-marginal / (r * marginal_slope)`. Large where the marginal is flat.
    pub fn demand_elasticity(&self, r_total: f64) -> Result<f64, UtilityError> {
        let slope = self.marginal_slope(r_total)?;
        Ok(-self.marginal_unchecked(r_total) / (r_total * slope))
    }

    /// Total rate demanded at `price`: the unique `r` in `(0, r_cap]` with
    /// `marginal(r) = price`, or `r_cap` when the marginal is still above
    /// the price there.
    ///
    /// The marginal is strictly decreasing and unbounded near zero, so the
    /// demand is strictly positive for every finite price.
    pub fn solve_rate_for_price(&self, price: f64, r_cap: f64) -> Result<f64, UtilityError> {
        if !(price.is_finite() && price > 0.0) {
            return Err(UtilityError::PriceOutOfDomain(price));
        }
        if !(r_cap.is_finite() && r_cap > 0.0) {
            return Err(UtilityError::RateOutOfDomain(r_cap));
        }
        if self.marginal_unchecked(r_cap) > price {
            return Ok(r_cap);
        }

        // Walk down from the ceiling until the marginal exceeds the price.
        let mut hi = r_cap;
        let mut lo = r_cap * BRACKET_SHRINK;
        let mut iters = 0;
        while self.marginal_unchecked(lo) <= price {
            hi = lo;
            lo *= BRACKET_SHRINK;
            iters += 1;
            if iters >= MAX_BISECTION_ITERS || lo == 0.0 {
                return Err(UtilityError::NoConvergence { price, lo, hi });
            }
        }

        // Invariant: marginal(lo) > price >= marginal(hi).
        for _ in iters..MAX_BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= RATE_RTOL * lo || mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if self.marginal_unchecked(mid) > price {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(UtilityError::NoConvergence { price, lo, hi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(a: f64, b: f64) -> UtilityFunction {
        UtilityFunction::sigmoidal(a, b).unwrap()
    }

    fn log(k: f64, r_max: f64) -> UtilityFunction {
        UtilityFunction::logarithmic(k, r_max).unwrap()
    }

    fn central_diff(u: &UtilityFunction, r: f64) -> f64 {
        let h = 1e-6 * r.max(1.0);
        (u.log_utility(r + h).unwrap() - u.log_utility(r - h).unwrap()) / (2.0 * h)
    }

    #[test]
    fn log_utility_keeps_precision_near_saturation() {
        // ln U = -ln(1 + e^-z) + ln(1 - e^-ar), both terms tiny here.
        let u = UtilityFunction::sigmoidal(0.5, 5.0).unwrap();
        let r = 61.0;
        let expect = -libm::log1p(libm::exp(-0.5 * (r - 5.0))) + libm::log1p(-libm::exp(-0.5 * r));
        let got = u.log_utility(r).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn marginal_slope_matches_finite_difference() {
        for (u, r) in [(sig(5.0, 10.0), 9.0), (sig(1.0, 30.0), 17.6), (sig(3.0, 20.0), 0.5), (log(15.0, 100.0), 2.0)] {
            let h = 1e-6 * r;
            let fd = (u.marginal(r + h).unwrap() - u.marginal(r - h).unwrap()) / (2.0 * h);
            let slope = u.marginal_slope(r).unwrap();
            assert!(slope < 0.0);
            assert!((fd - slope).abs() <= 1e-5 * slope.abs(), "{fd} vs {slope}");
        }
        // Flat stretch of a shallow sigmoid: demand is extremely price sensitive.
        assert!(sig(1.0, 30.0).demand_elasticity(17.6).unwrap() > 1e4);
        assert!(log(3.0, 100.0).demand_elasticity(10.0).unwrap() < 2.0);
    }

    #[test]
    fn normalization_constants_match_definition() {
        let s = SigmoidalUtility::new(1.0, 30.0).unwrap();
        let eab = libm::exp(30.0);
        assert_eq!(s.c(), (1.0 + eab) / eab);
        assert_eq!(s.d(), 1.0 / (1.0 + eab));
    }

    #[test]
    fn stable_form_agrees_with_textbook_form() {
        for &(a, b) in &[(1.0, 3.0), (0.5, 5.0), (2.0, 4.0)] {
            let s = SigmoidalUtility::new(a, b).unwrap();
            for i in 1..50 {
                let r = i as f64 * 0.3;
                let direct = s.c() * (1.0 / (1.0 + libm::exp(-a * (r - b))) - s.d());
                assert!((s.value(r) - direct).abs() < 1e-12, "a={a} b={b} r={r}");
            }
        }
    }

    #[test]
    fn reference_curve_points() {
        assert!((sig(1.0, 30.0).evaluate(30.2).unwrap() - 0.549834).abs() < 1e-6);
        assert!((log(3.0, 100.0).evaluate(10.1).unwrap() - 0.603391).abs() < 1e-6);
        // Two more points of the a = 5, b = 10 curve.
        assert!((sig(5.0, 10.0).evaluate(9.9).unwrap() - 0.377541).abs() < 1e-6);
        assert!((sig(5.0, 10.0).evaluate(10.5).unwrap() - 0.924142).abs() < 1e-6);
    }

    #[test]
    fn endpoints() {
        assert_eq!(log(15.0, 100.0).evaluate(0.0).unwrap(), 0.0);
        assert!((log(0.5, 100.0).evaluate(100.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(sig(5.0, 10.0).evaluate(0.0).unwrap().abs() < 1e-12);
        assert!(sig(5.0, 10.0).evaluate(1e3).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn log_utility_values() {
        assert!(log(0.5, 100.0).log_utility(100.0).unwrap().abs() < 1e-12);
        let v = sig(1.0, 30.0).log_utility(30.2).unwrap();
        assert!((v - libm::log(0.549834)).abs() < 2e-6);
        assert_eq!(sig(1.0, 30.0).log_utility(0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log(3.0, 100.0).log_utility(0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn steep_curve_log_is_finite_far_below_knee() {
        // a*b = 600: e^{-a(r-b)} and e^{ab} both overflow in a naive form.
        let u = sig(20.0, 30.0);
        let v = u.log_utility(0.5).unwrap();
        assert!(v.is_finite());
        assert!(u.marginal(0.5).unwrap().is_finite());
    }

    #[test]
    fn log_marginal_closed_form() {
        let (k, r) = (3.0, 10.1);
        let expected = k / ((1.0 + k * r) * libm::log(1.0 + k * r));
        assert!((log(k, 100.0).marginal(r).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_marginal_matches_finite_difference() {
        let u = sig(5.0, 10.0);
        let m = u.marginal(10.0).unwrap();
        let fd = central_diff(&u, 10.0);
        assert!(((m - fd) / fd).abs() < 1e-5, "m={m} fd={fd}");
    }

    #[test]
    fn marginal_strictly_decreasing_example() {
        let u = log(3.0, 100.0);
        assert!(u.marginal(10.1).unwrap() > u.marginal(20.0).unwrap());
    }

    #[test]
    fn domain_errors() {
        let u = sig(5.0, 10.0);
        assert!(matches!(u.evaluate(-1.0), Err(UtilityError::RateOutOfDomain(_))));
        assert!(matches!(u.log_utility(-1e-9), Err(UtilityError::RateOutOfDomain(_))));
        assert!(matches!(u.marginal(0.0), Err(UtilityError::RateOutOfDomain(_))));
        assert!(matches!(
            u.solve_rate_for_price(0.0, 10.0),
            Err(UtilityError::PriceOutOfDomain(_))
        ));
        assert!(matches!(
            u.solve_rate_for_price(-2.0, 10.0),
            Err(UtilityError::PriceOutOfDomain(_))
        ));
        assert!(UtilityFunction::sigmoidal(0.0, 10.0).is_err());
        assert!(UtilityFunction::logarithmic(1.0, -5.0).is_err());
        assert!(UtilityFunction::logarithmic(f64::NAN, 5.0).is_err());
    }

    #[test]
    fn demand_logarithmic_reference() {
        // Bisection oracle on (1 + 0.5 r) ln(1 + 0.5 r) = 10.
        let g = |r: f64| (1.0 + 0.5 * r) * libm::log(1.0 + 0.5 * r) - 10.0;
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let u = log(0.5, 100.0);
        let r = u.solve_rate_for_price(0.05, 200.0).unwrap();
        assert!((r - lo).abs() < 1e-9, "r={r} oracle={lo}");
        assert!((r - 9.46).abs() < 0.01);
        assert!((u.marginal(r).unwrap() - 0.05).abs() <= 1e-9 * 0.05);
    }

    #[test]
    fn demand_sigmoid_near_inflection() {
        let u = sig(5.0, 10.0);
        let r = u.solve_rate_for_price(2.5, 200.0).unwrap();
        // d ~ e^{-50}, so the closed form of the plain logistic applies.
        let closed = 10.0 - libm::log(2.5 / (5.0 - 2.5)) / 5.0;
        assert!((r - closed).abs() < 1e-9);
        assert!((r - 10.0).abs() < 1e-9);
    }

    #[test]
    fn demand_capped_at_ceiling() {
        let u = log(0.5, 100.0);
        assert_eq!(u.solve_rate_for_price(1e-6, 50.0).unwrap(), 50.0);
    }

    #[test]
    fn demand_shrinks_with_price() {
        let u = sig(3.0, 20.0);
        let mut last = f64::INFINITY;
        for &p in &[0.01, 0.5, 2.9, 3.1, 10.0, 1e3, 1e9] {
            let r = u.solve_rate_for_price(p, 400.0).unwrap();
            assert!(r > 0.0 && r < last, "p={p} r={r}");
            last = r;
        }
        assert!(last < 1e-8);
    }
}
