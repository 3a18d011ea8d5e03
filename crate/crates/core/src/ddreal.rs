//! Double-double scalars.
//!
//! A [`DDReal`] stores a value as the unevaluated sum `hi + lo` of two
//! binary64 numbers with `|lo| <= ulp(hi) / 2`, giving roughly a 106-bit
//! significand. Every operation is assembled from error-free transforms
//! (two-sum and two-product), following the classic double-double
//! algorithms of Dekker and of Hida, Li and Bailey.
//!
//! Overflow and NaN are not trapped: a non-finite `hi` is carried with
//! `lo = 0` so that callers can detect it with [`DDReal::is_finite`].

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use thiserror::Error;

/// Square root of a negative double-double.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("square root of negative value {0:e}")]
pub struct DomainError(pub f64);

/// `s + e == a + b` exactly.
#[inline(always)]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    let e = (a - (s - v)) + (b - v);
    (s, e)
}

/// Two-sum assuming `|a| >= |b|` (or `a == 0`).
#[inline(always)]
pub fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

/// `p + e == a * b` exactly (barring overflow/underflow).
#[inline(always)]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    if cfg!(target_feature = "fma") {
        let p = a * b;
        (p, a.mul_add(b, -p))
    } else {
        two_prod_dekker(a, b)
    }
}

const SPLITTER: f64 = 134_217_729.0; // 2^27 + 1

#[inline(always)]
fn split(a: f64) -> (f64, f64) {
    let t = SPLITTER * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// Dekker's two-product, used when the target has no fused multiply-add.
#[inline(always)]
pub fn two_prod_dekker(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    let e = ((ah * bh - p) + ah * bl + al * bh) + al * bl;
    (p, e)
}

/// Double-double real number `hi + lo`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DDReal {
    pub hi: f64,
    pub lo: f64,
}

impl DDReal {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    #[inline]
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    /// Renormalizes an arbitrary pair so that `hi` is the binary64 nearest to
    /// `hi + lo`.
    #[inline]
    pub fn normalized(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Self::finite_or_hi(hi, lo)
    }

    #[inline(always)]
    fn finite_or_hi(hi: f64, lo: f64) -> Self {
        if hi.is_finite() {
            Self { hi, lo }
        } else {
            Self { hi, lo: 0.0 }
        }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    #[inline]
    pub fn is_sign_negative(self) -> bool {
        self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0)
    }

    #[inline]
    pub fn abs(self) -> Self {
        if self.is_sign_negative() {
            -self
        } else {
            self
        }
    }

    /// Sum of a double-double and a binary64.
    #[inline]
    pub fn add_f64(self, b: f64) -> Self {
        let (s1, s2) = two_sum(self.hi, b);
        if !s1.is_finite() {
            return Self::from(s1);
        }
        let s2 = s2 + self.lo;
        let (hi, lo) = quick_two_sum(s1, s2);
        Self::finite_or_hi(hi, lo)
    }

    #[inline]
    pub fn mul_f64(self, b: f64) -> Self {
        let (p1, p2) = two_prod(self.hi, b);
        if !p1.is_finite() {
            return Self::from(p1);
        }
        let p2 = p2 + self.lo * b;
        let (hi, lo) = quick_two_sum(p1, p2);
        Self::finite_or_hi(hi, lo)
    }

    /// Exact product of two binary64 values as a double-double.
    #[inline]
    pub fn from_prod(a: f64, b: f64) -> Self {
        let (hi, lo) = two_prod(a, b);
        Self::finite_or_hi(hi, lo)
    }

    /// Exact sum of two binary64 values as a double-double.
    #[inline]
    pub fn from_sum(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        Self::finite_or_hi(hi, lo)
    }

    #[inline]
    pub fn sqr(self) -> Self {
        let (p1, p2) = two_prod(self.hi, self.hi);
        let p2 = p2 + 2.0 * self.hi * self.lo + self.lo * self.lo;
        let (hi, lo) = quick_two_sum(p1, p2);
        Self::finite_or_hi(hi, lo)
    }

    #[inline]
    pub fn recip(self) -> Self {
        Self::ONE / self
    }

    /// Square root; negative input is a domain error, `-0` and `0` map to `0`.
    pub fn sqrt(self) -> Result<Self, DomainError> {
        if self.hi == 0.0 {
            return Ok(Self::ZERO);
        }
        if self.is_sign_negative() || self.hi.is_nan() {
            return Err(DomainError(self.hi));
        }
        if self.hi.is_infinite() {
            return Ok(self);
        }
        // One Newton step on the binary64 reciprocal square root.
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let corr = (self - Self::from_prod(ax, ax)).hi * (x * 0.5);
        Ok(Self::from(ax).add_f64(corr))
    }

    /// `n / d` rounded to double-double precision.
    pub fn from_ratio(n: i64, d: i64) -> Self {
        Self::from(n as f64) / Self::from(d as f64)
    }

    /// Integer power by repeated squaring.
    pub fn powi(self, mut e: i32) -> Self {
        let invert = e < 0;
        let mut base = self;
        let mut acc = Self::ONE;
        e = e.abs();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base.sqr();
            e >>= 1;
        }
        if invert {
            acc.recip()
        } else {
            acc
        }
    }

    /// Scientific decimal representation with `digits` significant digits.
    pub fn to_sci_string(self, digits: usize) -> String {
        let digits = digits.max(1);
        if !self.is_finite() {
            return format!("{}", self.hi);
        }
        if self.hi == 0.0 {
            return format!("{:.*}e0", digits - 1, 0.0);
        }
        let negative = self.is_sign_negative();
        let mut x = self.abs();
        let mut exp = x.hi.log10().floor() as i32;
        let ten = Self::from(10.0);
        x *= ten.powi(-exp);
        // log10 of hi may be off by one near powers of ten.
        if x.hi >= 10.0 {
            x = x / ten;
            exp += 1;
        } else if x.hi < 1.0 {
            x *= ten;
            exp -= 1;
        }
        let mut ds: Vec<u8> = Vec::with_capacity(digits + 1);
        for _ in 0..=digits {
            let mut dgt = x.hi.floor();
            if x.hi == dgt && x.lo < 0.0 {
                dgt -= 1.0;
            }
            let dgt = dgt.clamp(0.0, 9.0);
            ds.push(dgt as u8);
            x = (x - Self::from(dgt)) * ten;
        }
        // round on the guard digit
        if ds[digits] >= 5 {
            let mut i = digits;
            loop {
                if i == 0 {
                    ds.insert(0, 1);
                    exp += 1;
                    break;
                }
                i -= 1;
                if ds[i] == 9 {
                    ds[i] = 0;
                } else {
                    ds[i] += 1;
                    break;
                }
            }
        }
        ds.truncate(digits);
        let mut s = String::with_capacity(digits + 8);
        if negative {
            s.push('-');
        }
        s.push((b'0' + ds[0]) as char);
        if digits > 1 {
            s.push('.');
            for &d in &ds[1..] {
                s.push((b'0' + d) as char);
            }
        }
        s.push('e');
        s.push_str(&exp.to_string());
        s
    }
}

impl From<f64> for DDReal {
    #[inline]
    fn from(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }
}

impl Neg for DDReal {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DDReal {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        if !s1.is_finite() {
            return Self::from(s1);
        }
        let (t1, t2) = two_sum(self.lo, b.lo);
        let s2 = s2 + t1;
        let (s1, s2) = quick_two_sum(s1, s2);
        let s2 = s2 + t2;
        let (hi, lo) = quick_two_sum(s1, s2);
        Self::finite_or_hi(hi, lo)
    }
}

impl Sub for DDReal {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DDReal {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let (p1, p2) = two_prod(self.hi, b.hi);
        if !p1.is_finite() {
            return Self::from(p1);
        }
        let p2 = p2 + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p1, p2);
        Self::finite_or_hi(hi, lo)
    }
}

impl Div for DDReal {
    type Output = Self;
    #[inline]
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() {
            return Self::from(q1);
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Self { hi: q1, lo: q2 }.add_f64(q3)
    }
}

impl AddAssign for DDReal {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for DDReal {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for DDReal {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Sum for DDReal {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, b| a + b)
    }
}

impl PartialOrd for DDReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl fmt::Display for DDReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = f.precision().unwrap_or(32);
        f.pad(&self.to_sci_string(digits))
    }
}

/// Complex number with double-double components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DDComplex {
    pub re: DDReal,
    pub im: DDReal,
}

impl DDComplex {
    pub const ZERO: Self = Self {
        re: DDReal::ZERO,
        im: DDReal::ZERO,
    };
    pub const ONE: Self = Self {
        re: DDReal::ONE,
        im: DDReal::ZERO,
    };

    #[inline]
    pub const fn new(re: DDReal, im: DDReal) -> Self {
        Self { re, im }
    }

    #[inline]
    pub fn from_f64(re: f64, im: f64) -> Self {
        Self {
            re: DDReal::from(re),
            im: DDReal::from(im),
        }
    }

    #[inline]
    pub fn conj(self) -> Self {
        Self {
            re: self.re,
            im: -self.im,
        }
    }

    /// `re^2 + im^2`, never negative.
    #[inline]
    pub fn abs2(self) -> DDReal {
        self.re.sqr() + self.im.sqr()
    }

    #[inline]
    pub fn scale(self, r: DDReal) -> Self {
        Self {
            re: self.re * r,
            im: self.im * r,
        }
    }

    #[inline]
    pub fn div_real(self, r: DDReal) -> Self {
        Self {
            re: self.re / r,
            im: self.im / r,
        }
    }

    /// `self * conj(b)`.
    #[inline]
    pub fn mul_conj(self, b: Self) -> Self {
        Self {
            re: self.re * b.re + self.im * b.im,
            im: self.im * b.re - self.re * b.im,
        }
    }

    /// Principal square root.
    pub fn sqrt(self) -> Result<Self, DomainError> {
        if self.im.hi == 0.0 && self.im.lo == 0.0 {
            return if self.re.is_sign_negative() {
                Ok(Self {
                    re: DDReal::ZERO,
                    im: (-self.re).sqrt()?,
                })
            } else {
                Ok(Self {
                    re: self.re.sqrt()?,
                    im: DDReal::ZERO,
                })
            };
        }
        let r = self.abs2().sqrt()?;
        let half = DDReal::from(0.5);
        if !self.re.is_sign_negative() {
            let t = ((r + self.re) * half).sqrt()?;
            Ok(Self {
                re: t,
                im: self.im / t.mul_f64(2.0),
            })
        } else {
            let t = ((r - self.re) * half).sqrt()?;
            let re = self.im.abs() / t.mul_f64(2.0);
            let im = if self.im.is_sign_negative() { -t } else { t };
            Ok(Self { re, im })
        }
    }
}

impl From<DDReal> for DDComplex {
    fn from(re: DDReal) -> Self {
        Self {
            re,
            im: DDReal::ZERO,
        }
    }
}

impl Neg for DDComplex {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            im: -self.im,
        }
    }
}

impl Add for DDComplex {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        Self {
            re: self.re + b.re,
            im: self.im + b.im,
        }
    }
}

impl Sub for DDComplex {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        Self {
            re: self.re - b.re,
            im: self.im - b.im,
        }
    }
}

impl Mul for DDComplex {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        Self {
            re: self.re * b.re - self.im * b.im,
            im: self.re * b.im + self.im * b.re,
        }
    }
}

impl Div for DDComplex {
    type Output = Self;
    #[inline]
    fn div(self, b: Self) -> Self {
        self.mul_conj(b).div_real(b.abs2())
    }
}
