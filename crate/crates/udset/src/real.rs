//! Scalar abstraction shared by the `f64` fast path and the arbitrary
//! precision path used once widths drop below the range of `f64`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rug::float::Constant;
use rug::ops::Pow;
use rug::{Float, Integer};

pub trait Real:
    Clone
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant carrying the same precision as `self`.
    fn lit(&self, x: f64) -> Self;
    fn from_int(&self, i: &Integer) -> Self;
    fn to_f64(&self) -> f64;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    fn ln(&self) -> Self;
    fn powi(&self, n: i64) -> Self;
    fn pi(&self) -> Self;
    fn sin_cos(&self) -> (Self, Self);
    fn floor_int(&self) -> Integer;
    fn is_finite(&self) -> bool;
    /// Bits of mantissa; 53 for `f64`.
    fn precision(&self) -> u32;
    /// Lossless textual form, parsed back by [`Real::parse_like`].
    fn repr(&self) -> String;
    fn parse_like(&self, s: &str) -> Option<Self>;

    fn zero(&self) -> Self {
        self.lit(0.0)
    }
    fn one(&self) -> Self {
        self.lit(1.0)
    }
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
    fn mul_f(&self, x: f64) -> Self {
        self.clone() * self.lit(x)
    }
}

impl Real for f64 {
    fn lit(&self, x: f64) -> Self {
        x
    }
    fn from_int(&self, i: &Integer) -> Self {
        i.to_f64()
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powi(&self, n: i64) -> Self {
        match i32::try_from(n) {
            Ok(n) => f64::powi(*self, n),
            Err(_) => f64::powf(*self, n as f64),
        }
    }
    fn pi(&self) -> Self {
        std::f64::consts::PI
    }
    fn sin_cos(&self) -> (Self, Self) {
        f64::sin_cos(*self)
    }
    fn floor_int(&self) -> Integer {
        Integer::from_f64(self.floor()).unwrap_or_default()
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn precision(&self) -> u32 {
        53
    }
    fn repr(&self) -> String {
        format!("{self:e}")
    }
    fn parse_like(&self, s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

/// MPFR float with the precision fixed at construction; every binary
/// operation keeps the precision of its left operand.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct Hp(pub Float);

impl Hp {
    pub fn new(prec: u32, x: f64) -> Self {
        Hp(Float::with_val(prec, x))
    }
}

macro_rules! hp_binop {
    ($tr:ident, $f:ident) => {
        impl $tr for Hp {
            type Output = Hp;
            fn $f(self, rhs: Hp) -> Hp {
                Hp($tr::$f(self.0, rhs.0))
            }
        }
    };
}
hp_binop!(Add, add);
hp_binop!(Sub, sub);
hp_binop!(Mul, mul);
hp_binop!(Div, div);

impl Neg for Hp {
    type Output = Hp;
    fn neg(self) -> Hp {
        Hp(-self.0)
    }
}

impl Real for Hp {
    fn lit(&self, x: f64) -> Self {
        Hp(Float::with_val(self.0.prec(), x))
    }
    fn from_int(&self, i: &Integer) -> Self {
        Hp(Float::with_val(self.0.prec(), i))
    }
    fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }
    fn sqrt(&self) -> Self {
        Hp(self.0.clone().sqrt())
    }
    fn abs(&self) -> Self {
        Hp(self.0.clone().abs())
    }
    fn ln(&self) -> Self {
        Hp(self.0.clone().ln())
    }
    fn powi(&self, n: i64) -> Self {
        let n = i32::try_from(n).expect("exponent out of i32 range");
        Hp(self.0.clone().pow(n))
    }
    fn pi(&self) -> Self {
        Hp(Float::with_val(self.0.prec(), Constant::Pi))
    }
    fn sin_cos(&self) -> (Self, Self) {
        let (s, c) = self.0.clone().sin_cos(Float::new(self.0.prec()));
        (Hp(s), Hp(c))
    }
    fn floor_int(&self) -> Integer {
        self.0.clone().floor().to_integer().unwrap_or_default()
    }
    fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
    fn precision(&self) -> u32 {
        self.0.prec()
    }
    fn repr(&self) -> String {
        self.0.to_string_radix(16, None)
    }
    fn parse_like(&self, s: &str) -> Option<Self> {
        let v = Float::parse_radix(s, 16).ok()?;
        Some(Hp(Float::with_val(self.0.prec(), v)))
    }
}

/// Floor of `x` that snaps values within a relative `1e-9` of the next
/// integer up, so exact ratios computed through rounding land correctly.
pub fn snapped_floor<R: Real>(x: &R) -> Integer {
    let f = x.floor_int();
    let up = Integer::from(&f + 1);
    let gap = x.from_int(&up) - x.clone();
    let scale = x.abs().max_of(x.one());
    if gap <= scale * x.lit(1e-9) {
        up
    } else {
        f
    }
}

/// Ceiling counterpart of [`snapped_floor`].
pub fn snapped_ceil<R: Real>(x: &R) -> Integer {
    let f = x.floor_int();
    let gap = x.clone() - x.from_int(&f);
    let scale = x.abs().max_of(x.one());
    if gap <= scale.clone() * x.lit(1e-9) {
        f
    } else {
        f + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapping() {
        assert_eq!(snapped_floor(&13.499999999999), Integer::from(13));
        assert_eq!(snapped_floor(&13.9999999999999), Integer::from(14));
        assert_eq!(snapped_ceil(&2.0000000000001), Integer::from(2));
        assert_eq!(snapped_ceil(&2.01), Integer::from(3));
    }

    #[test]
    fn hp_roundtrip_is_exact() {
        let x = Hp::new(300, 1.1).powi(-400) + Hp::new(300, 0.3);
        let back = x.parse_like(&x.repr()).unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn hp_keeps_tiny_offsets() {
        let w = Hp::new(2000, 1.5).powi(-2000);
        let a = Hp::new(2000, 0.25) + w.clone();
        let diff = a - Hp::new(2000, 0.25);
        assert!(((diff / w).to_f64() - 1.0).abs() < 1e-30);
    }
}
