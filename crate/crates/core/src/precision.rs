//! Scalar precision modes.
//!
//! Amplitudes on a super-exponential ladder span hundreds of decades, so the
//! derived sequences are evaluated in double-double arithmetic when
//! [`Precision::Compensated`] is selected, and the integrator carries a
//! running rounding-error term for every state component.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    Double,
    Compensated,
}

#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: 6.931_471_805_599_453e-1,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    fn scale_pow2(self, m: i32) -> Self {
        // exact as long as the result stays normal
        let mut out = self;
        let mut m = m;
        while m != 0 {
            let step = m.clamp(-1000, 1000);
            let f = 2f64.powi(step);
            out = Self {
                hi: out.hi * f,
                lo: out.lo * f,
            };
            m -= step;
        }
        out
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.8 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return Self::ZERO;
        }
        let m = (self.hi / LN2.hi).round();
        let r = self - LN2 * Self::new(m);
        let r = Self {
            hi: r.hi / 1024.0,
            lo: r.lo / 1024.0,
        };
        // expm1 of the reduced argument by Taylor series
        let mut term = r;
        let mut sum = r;
        for n in 2..=16 {
            term = term * r / Self::new(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = 2s + s^2, applied 10 times undoes the 1/1024
        for _ in 0..10 {
            sum = sum * Self::new(2.0) + sum * sum;
        }
        (sum + Self::ONE).scale_pow2(m as i32)
    }

    pub fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(f64::NAN);
        }
        if self.hi < 1.0 {
            // keeps exp(y) away from the subnormal range in the Newton step
            return -(Self::ONE / self).ln();
        }
        let mut y = Self::new(self.hi.ln());
        for _ in 0..2 {
            let e = y.exp();
            y = y + (self - e) / e;
        }
        y
    }

    /// `self^p` for positive `self`, evaluated as `exp(p ln self)`.
    pub fn powf(self, p: Self) -> Self {
        (p * self.ln()).exp()
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self::new(x)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (p, e) = two_prod(self.hi, rhs.hi);
        let e = e + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        let r = self - rhs * Self::new(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Self::new(q2);
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::new(q3)
    }
}

/// Running sum with a carried rounding-error term (Kahan-Babuska-Neumaier).
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new(start: f64) -> Self {
        Self {
            sum: start,
            comp: 0.0,
        }
    }

    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.sum, x);
        self.sum = s;
        self.comp += e;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd_rel(a: DoubleDouble, exact_hi: f64, exact_lo: f64) -> f64 {
        let diff = (a - DoubleDouble {
            hi: exact_hi,
            lo: exact_lo,
        })
        .to_f64();
        (diff / exact_hi).abs()
    }

    #[test]
    fn exp_of_one_is_e_to_double_double_accuracy() {
        // e = 2.718281828459045 + 1.4456468917292502e-16
        let e = DoubleDouble::ONE.exp();
        assert!(dd_rel(e, 2.718_281_828_459_045, 1.445_646_891_729_250_2e-16) < 1e-30);
    }

    #[test]
    fn ln_inverts_exp() {
        for &x in &[1e-280, 1e-5, 0.3, 1.0, 7.25, 1e10, 1e300] {
            let d = DoubleDouble::new(x);
            let back = d.ln().exp();
            assert!(((back - d).to_f64() / x).abs() < 1e-29, "x = {x}");
        }
    }

    #[test]
    fn ln2_constant() {
        let two = DoubleDouble::new(2.0);
        let l = two.ln();
        assert!(((l - LN2).to_f64()).abs() < 1e-31);
    }

    #[test]
    fn division_is_accurate() {
        let third = DoubleDouble::ONE / DoubleDouble::new(3.0);
        let back = third * DoubleDouble::new(3.0);
        assert!((back - DoubleDouble::ONE).to_f64().abs() < 1e-31);
    }

    #[test]
    fn compensated_sum_recovers_small_increments() {
        let mut s = CompensatedSum::new(1.0);
        for _ in 0..10_000 {
            s.add(1e-17);
        }
        assert!((s.value() - (1.0 + 1e-13)).abs() < 1e-16);
    }

    #[test]
    fn exp_saturates() {
        assert_eq!(DoubleDouble::new(-800.0).exp().to_f64(), 0.0);
        assert!(DoubleDouble::new(800.0).exp().to_f64().is_infinite());
    }
}
