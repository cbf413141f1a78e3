//! Extended-precision scalars and compensated accumulation.
//!
//! Real values are MPFR floats ([`ExtReal`]); complex values are a pair of
//! them ([`ExtComplex`]). Every averaging computation in the crate runs on
//! these types at a [`Precision`] given in decimal digits.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rug::ops::Pow;
use rug::float::Constant;
use rug::ops::CompleteRound;
use rug::Float;

use crate::error::NumericError;

/// Extended-precision real scalar.
pub type ExtReal = Float;

/// Guard bits added on top of the requested decimal digits.
const GUARD_BITS: u32 = 16;

/// Working precision, expressed in significant decimal digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Precision {
    digits: u32,
}

impl Precision {
    pub const fn new(digits: u32) -> Self {
        Precision { digits }
    }

    pub fn digits(self) -> u32 {
        self.digits
    }

    /// Binary mantissa size used for every float created at this precision.
    pub fn bits(self) -> u32 {
        (f64::from(self.digits) * std::f64::consts::LOG2_10).ceil() as u32 + GUARD_BITS
    }

    pub fn doubled(self) -> Self {
        Precision::new(self.digits * 2)
    }

    pub fn with_extra_digits(self, extra: u32) -> Self {
        Precision::new(self.digits + extra)
    }

    /// `10^-digits` as an extended real.
    pub fn epsilon(self) -> ExtReal {
        pow10(-(self.digits as i32), self)
    }

    pub fn zero(self) -> ExtReal {
        Float::new(self.bits())
    }

    pub fn real<T>(self, v: T) -> ExtReal
    where
        Float: rug::Assign<T>,
    {
        Float::with_val(self.bits(), v)
    }

    pub fn pi(self) -> ExtReal {
        Float::with_val(self.bits(), Constant::Pi)
    }

    pub fn two_pi(self) -> ExtReal {
        self.pi() * 2u32
    }
}

impl Default for Precision {
    fn default() -> Self {
        Precision::new(50)
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} digits", self.digits)
    }
}

/// `10^e` at the given precision.
pub fn pow10(e: i32, prec: Precision) -> ExtReal {
    let ten = Float::with_val(prec.bits(), 10u32);
    ten.pow(e)
}

/// Parses a decimal literal (`"0.5"`, `"-1e-3"`, `"1/3"`) into an extended real.
pub fn parse_real(text: &str, prec: Precision) -> Result<ExtReal, NumericError> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let n = parse_real(num, prec)?;
        let d = parse_real(den, prec)?;
        if d.is_zero() {
            return Err(NumericError::Parse(text.to_string()));
        }
        return Ok(n / d);
    }
    Float::parse(text)
        .map(|p| p.complete(prec.bits()))
        .map_err(|_| NumericError::Parse(text.to_string()))
}

/// Formats a real in scientific notation with `digits` significant digits.
pub fn format_sci(x: &ExtReal, digits: usize) -> String {
    if x.is_zero() {
        return "0".to_string();
    }
    let s = x.to_string_radix(10, Some(digits));
    // MPFR prints e.g. "1.2345e-7"; keep it as-is, it parses back exactly.
    s
}

/// Reduces `x` into `[0, 1)`.
pub fn frac(x: &ExtReal) -> ExtReal {
    let f = x.clone().floor();
    let mut r = x.clone() - f;
    if r >= 1u32 {
        r -= 1u32;
    }
    r
}

/// Distance from `x` to the nearest integer, in `[0, 1/2]`.
pub fn dist_to_int(x: &ExtReal) -> ExtReal {
    let r = x.clone().round();
    (x.clone() - r).abs()
}

/// Error-free sum: returns `(s, e)` with `s = fl(a + b)` and `a + b = s + e` exactly.
pub fn two_sum(a: &ExtReal, b: &ExtReal) -> (ExtReal, ExtReal) {
    let s = Float::with_val(a.prec(), a + b);
    let bb = Float::with_val(a.prec(), &s - a);
    let aa = Float::with_val(a.prec(), &s - &bb);
    let db = Float::with_val(a.prec(), b - &bb);
    let da = Float::with_val(a.prec(), a - &aa);
    (s, da + db)
}

/// Neumaier-compensated accumulator over extended reals.
#[derive(Clone, Debug)]
pub struct CompensatedSum {
    sum: ExtReal,
    comp: ExtReal,
}

impl CompensatedSum {
    pub fn new(prec: Precision) -> Self {
        CompensatedSum {
            sum: prec.zero(),
            comp: prec.zero(),
        }
    }

    pub fn add(&mut self, v: &ExtReal) {
        let t = Float::with_val(self.sum.prec(), &self.sum + v);
        if self.sum.clone().abs() >= v.clone().abs() {
            let d = Float::with_val(self.sum.prec(), &self.sum - &t);
            self.comp += d + v;
        } else {
            let d = Float::with_val(self.sum.prec(), v - &t);
            self.comp += d + &self.sum;
        }
        self.sum = t;
    }

    /// Magnitude of the running compensation term.
    pub fn compensation(&self) -> &ExtReal {
        &self.comp
    }

    pub fn total(&self) -> ExtReal {
        Float::with_val(self.sum.prec(), &self.sum + &self.comp)
    }
}

/// Extended-precision complex scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtComplex {
    pub re: ExtReal,
    pub im: ExtReal,
}

impl ExtComplex {
    pub fn new(re: ExtReal, im: ExtReal) -> Self {
        ExtComplex { re, im }
    }

    pub fn zero(prec: Precision) -> Self {
        ExtComplex::new(prec.zero(), prec.zero())
    }

    pub fn one(prec: Precision) -> Self {
        ExtComplex::new(prec.real(1u32), prec.zero())
    }

    pub fn from_real(re: ExtReal) -> Self {
        let im = Float::new(re.prec());
        ExtComplex { re, im }
    }

    /// `exp(2πi t)` for a real `t` measured in turns.
    pub fn cis_turns(t: &ExtReal, prec: Precision) -> Self {
        let angle = prec.two_pi() * t;
        let (s, c) = angle.sin_cos(prec.zero());
        ExtComplex::new(c, s)
    }

    /// `r · exp(2πi t)`.
    pub fn polar_turns(r: &ExtReal, t: &ExtReal, prec: Precision) -> Self {
        let mut z = ExtComplex::cis_turns(t, prec);
        z.scale(r);
        z
    }

    pub fn conj(&self) -> Self {
        ExtComplex::new(self.re.clone(), -self.im.clone())
    }

    pub fn abs(&self) -> ExtReal {
        self.re.clone().hypot(&self.im)
    }

    pub fn norm_sqr(&self) -> ExtReal {
        Float::with_val(self.re.prec(), self.re.clone().square() + self.im.clone().square())
    }

    pub fn scale(&mut self, r: &ExtReal) {
        self.re *= r;
        self.im *= r;
    }

    pub fn scaled(&self, r: &ExtReal) -> Self {
        let mut z = self.clone();
        z.scale(r);
        z
    }

    pub fn div_real(&self, r: &ExtReal) -> Self {
        ExtComplex::new(
            Float::with_val(self.re.prec(), &self.re / r),
            Float::with_val(self.im.prec(), &self.im / r),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    /// Integer power by repeated squaring; negative exponents use the inverse.
    pub fn powi(&self, mut e: i64) -> Self {
        let prec_bits = self.re.prec();
        let mut base = if e < 0 {
            let n = self.norm_sqr();
            e = -e;
            ExtComplex::new(
                Float::with_val(prec_bits, &self.re / &n),
                Float::with_val(prec_bits, -(&self.im / &n).complete(prec_bits)),
            )
        } else {
            self.clone()
        };
        let mut acc = ExtComplex::new(Float::with_val(prec_bits, 1u32), Float::new(prec_bits));
        while e > 0 {
            if e & 1 == 1 {
                acc *= &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    pub fn to_f64_pair(&self) -> (f64, f64) {
        (self.re.to_f64(), self.im.to_f64())
    }
}

impl Add<&ExtComplex> for &ExtComplex {
    type Output = ExtComplex;
    fn add(self, o: &ExtComplex) -> ExtComplex {
        ExtComplex::new(self.re.clone() + &o.re, self.im.clone() + &o.im)
    }
}

impl Sub<&ExtComplex> for &ExtComplex {
    type Output = ExtComplex;
    fn sub(self, o: &ExtComplex) -> ExtComplex {
        ExtComplex::new(self.re.clone() - &o.re, self.im.clone() - &o.im)
    }
}

impl Mul<&ExtComplex> for &ExtComplex {
    type Output = ExtComplex;
    fn mul(self, o: &ExtComplex) -> ExtComplex {
        let p = self.re.prec();
        let ac = Float::with_val(p, &self.re * &o.re);
        let bd = Float::with_val(p, &self.im * &o.im);
        let ad = Float::with_val(p, &self.re * &o.im);
        let bc = Float::with_val(p, &self.im * &o.re);
        ExtComplex::new(ac - bd, ad + bc)
    }
}

impl AddAssign<&ExtComplex> for ExtComplex {
    fn add_assign(&mut self, o: &ExtComplex) {
        self.re += &o.re;
        self.im += &o.im;
    }
}

impl SubAssign<&ExtComplex> for ExtComplex {
    fn sub_assign(&mut self, o: &ExtComplex) {
        self.re -= &o.re;
        self.im -= &o.im;
    }
}

impl MulAssign<&ExtComplex> for ExtComplex {
    fn mul_assign(&mut self, o: &ExtComplex) {
        *self = &*self * o;
    }
}

impl Neg for ExtComplex {
    type Output = ExtComplex;
    fn neg(self) -> ExtComplex {
        ExtComplex::new(-self.re, -self.im)
    }
}

/// Compensated accumulator for complex sums (componentwise Neumaier).
#[derive(Clone, Debug)]
pub struct CompensatedComplexSum {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl CompensatedComplexSum {
    pub fn new(prec: Precision) -> Self {
        CompensatedComplexSum {
            re: CompensatedSum::new(prec),
            im: CompensatedSum::new(prec),
        }
    }

    pub fn add(&mut self, z: &ExtComplex) {
        self.re.add(&z.re);
        self.im.add(&z.im);
    }

    pub fn total(&self) -> ExtComplex {
        ExtComplex::new(self.re.total(), self.im.total())
    }

    /// Largest compensation magnitude seen on either component.
    pub fn compensation_size(&self) -> ExtReal {
        let a = self.re.compensation().clone().abs();
        let b = self.im.compensation().clone().abs();
        if a > b {
            a
        } else {
            b
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_grow_with_digits() {
        assert!(Precision::new(60).bits() > Precision::new(30).bits());
        assert_eq!(Precision::new(30).doubled().digits(), 60);
    }

    #[test]
    fn parse_fraction_and_decimal() {
        let p = Precision::new(40);
        let third = parse_real("1/3", p).unwrap();
        let expect = p.real(1u32) / 3u32;
        assert_eq!(third, expect);
        assert!(parse_real("abc", p).is_err());
        assert!(parse_real("1/0", p).is_err());
        let x = parse_real("-2.5e-3", p).unwrap();
        assert!((x.to_f64() + 0.0025).abs() < 1e-18);
    }

    #[test]
    fn frac_and_distance() {
        let p = Precision::new(40);
        let x = parse_real("-0.25", p).unwrap();
        assert_eq!(frac(&x).to_f64(), 0.75);
        let y = parse_real("2.7", p).unwrap();
        assert!((dist_to_int(&y).to_f64() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_sum_is_error_free() {
        let p = Precision::new(30);
        let a = p.real(1u32);
        let b = p.epsilon() * p.epsilon();
        let (s, e) = two_sum(&a, &b);
        let wide = Precision::new(200);
        let exact = wide.real(&a) + &b;
        let recon = wide.real(&s) + &e;
        assert_eq!(exact, recon);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let p = Precision::new(30);
        let mut acc = CompensatedSum::new(p);
        let big = p.real(1u32);
        let tiny = p.epsilon() * p.epsilon();
        acc.add(&big);
        for _ in 0..1000 {
            acc.add(&tiny);
        }
        acc.add(&(-big.clone()));
        let got = acc.total();
        let want = tiny * 1000u32;
        let rel = ((got - &want) / want).abs().to_f64();
        assert!(rel < 1e-20, "rel = {rel}");
    }

    #[test]
    fn complex_powers_match_cis() {
        let p = Precision::new(50);
        let t = parse_real("0.1234567", p).unwrap();
        let z = ExtComplex::cis_turns(&t, p);
        let z7 = z.powi(7);
        let direct = ExtComplex::cis_turns(&(t.clone() * 7u32), p);
        assert!((&z7 - &direct).abs() < p.epsilon());
        let zinv = z.powi(-3);
        let direct = ExtComplex::cis_turns(&(-(t * 3u32)), p);
        assert!((&zinv - &direct).abs() < p.epsilon());
    }
}
