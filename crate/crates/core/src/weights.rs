//! Weighting functions on `[0, 1]`: the `C₀^∞` family
//! `exp(-x^{-p}(1-x)^{-q})`, its symmetric member `w̄` (`p = q = 1`),
//! finite-smoothness polynomial bumps and the flat weight.
//!
//! Also hosts the exact derivative machinery for `w̄`: integer coefficient
//! tables for the derivatives of `e^{-1/x}` and `L¹` norms of `w̄⁽ⁿ⁾`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rug::ops::Pow;
use rug::{Float, Integer};
use serde::Serialize;

use crate::error::{NumericError, Result};
use crate::numeric::{CompensatedSum, ExtReal, Precision};
use crate::quad::{adaptive_gl, QuadOptions};

/// Shape of a weighting function.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightKind {
    /// `exp(-x^{-p}(1-x)^{-q})`, normalised.
    BumpPQ { p: f64, q: f64 },
    /// `w̄(x) = C★ exp(-1/(x(1-x)))`.
    ExpBump,
    /// `(x(1-x))^s`, normalised; lies in `C₀^{s-1}`.
    PolyBump { s: u32 },
    /// `w ≡ 1`: the plain Birkhoff average.
    TrivialFlat,
}

/// Number of continuous derivatives vanishing at the endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Smoothness {
    Finite(u32),
    Infinite,
}

impl WeightKind {
    pub fn smoothness(&self) -> Smoothness {
        match self {
            WeightKind::BumpPQ { .. } | WeightKind::ExpBump => Smoothness::Infinite,
            WeightKind::PolyBump { s } => Smoothness::Finite(s - 1),
            WeightKind::TrivialFlat => Smoothness::Finite(0),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            WeightKind::BumpPQ { p, q } => p == q,
            _ => true,
        }
    }

    /// Whether the weight and all its derivatives vanish at both endpoints.
    pub fn is_flat_at_endpoints(&self) -> bool {
        self.smoothness() == Smoothness::Infinite
    }

    fn cache_key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightKind::BumpPQ { p, q } => write!(f, "bump:p={p},q={q}"),
            WeightKind::ExpBump => write!(f, "exp"),
            WeightKind::PolyBump { s } => write!(f, "poly:s={s}"),
            WeightKind::TrivialFlat => write!(f, "flat"),
        }
    }
}

/// Splits `name:k=v,k=v` into the name and its parameters.
pub(crate) fn split_spec(spec: &str) -> (String, Vec<(String, String)>) {
    let spec = spec.trim();
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, r),
        None => (spec, ""),
    };
    let params = rest
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
            None => (kv.trim().to_string(), String::new()),
        })
        .collect();
    (name.trim().to_string(), params)
}

pub(crate) fn param<T: FromStr>(spec: &str, params: &[(String, String)], key: &str) -> Result<T> {
    let raw = params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| NumericError::Parse(format!("{spec}: missing `{key}`")))?;
    raw.parse()
        .map_err(|_| NumericError::Parse(format!("{spec}: bad value for `{key}`")))
}

pub(crate) fn check_known(spec: &str, params: &[(String, String)], known: &[&str]) -> Result<()> {
    for (k, _) in params {
        if !known.contains(&k.as_str()) {
            return Err(NumericError::Parse(format!("{spec}: unknown parameter `{k}`")));
        }
    }
    Ok(())
}

impl FromStr for WeightKind {
    type Err = NumericError;

    /// Grammar: `exp | bump:p=<r>,q=<r> | poly:s=<int> | flat`.
    fn from_str(spec: &str) -> Result<Self> {
        let (name, params) = split_spec(spec);
        let kind = match name.as_str() {
            "exp" => {
                check_known(spec, &params, &[])?;
                WeightKind::ExpBump
            }
            "flat" => {
                check_known(spec, &params, &[])?;
                WeightKind::TrivialFlat
            }
            "bump" => {
                check_known(spec, &params, &["p", "q"])?;
                let p: f64 = param(spec, &params, "p")?;
                let q: f64 = param(spec, &params, "q")?;
                if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
                    return Err(NumericError::Parse(format!("{spec}: p and q must be positive")));
                }
                WeightKind::BumpPQ { p, q }
            }
            "poly" => {
                check_known(spec, &params, &["s"])?;
                let s: u32 = param(spec, &params, "s")?;
                if s < 3 {
                    return Err(NumericError::Parse(format!("{spec}: s must be at least 3")));
                }
                WeightKind::PolyBump { s }
            }
            _ => return Err(NumericError::Parse(format!("unknown weight `{spec}`"))),
        };
        Ok(kind)
    }
}

/// A normalised weighting function at a fixed working precision.
#[derive(Clone, Debug)]
pub struct WeightFunction {
    kind: WeightKind,
    prec: Precision,
    normalizer: ExtReal,
    p: ExtReal,
    q: ExtReal,
    /// Exponents above this value give weights below the working resolution.
    knee: ExtReal,
}

impl WeightFunction {
    /// Builds the weight and computes its normaliser by adaptive quadrature.
    pub fn new(kind: WeightKind, prec: Precision) -> Result<Self> {
        let (p, q) = match &kind {
            WeightKind::BumpPQ { p, q } => (prec.real(*p), prec.real(*q)),
            _ => (prec.real(1u32), prec.real(1u32)),
        };
        let knee = {
            let ln10 = prec.real(10u32).ln();
            let e_min = match &kind {
                WeightKind::BumpPQ { .. } => {
                    let s = Float::with_val(prec.bits(), &p + &q);
                    let xs = Float::with_val(prec.bits(), &p / &s);
                    let one_m = Float::with_val(prec.bits(), 1u32) - &xs;
                    bump_exponent(&xs, &one_m, &p, &q)
                }
                _ => prec.real(4u32),
            };
            e_min + ln10 * (prec.digits() + 10)
        };
        let mut w = WeightFunction {
            kind,
            prec,
            normalizer: prec.real(1u32),
            p,
            q,
            knee,
        };
        w.normalizer = w.compute_normalizer()?;
        Ok(w)
    }

    pub fn parse(spec: &str, prec: Precision) -> Result<Self> {
        WeightFunction::new(spec.parse()?, prec)
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn normalizer(&self) -> &ExtReal {
        &self.normalizer
    }

    pub fn smoothness(&self) -> Smoothness {
        self.kind.smoothness()
    }

    fn compute_normalizer(&self) -> Result<ExtReal> {
        static CACHE: OnceLock<Mutex<HashMap<(String, u32), ExtReal>>> = OnceLock::new();
        let key = (self.kind.cache_key(), self.prec.digits());
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(v) = cache.lock().expect("normaliser cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let value = match &self.kind {
            WeightKind::TrivialFlat => self.prec.real(1u32),
            _ => {
                let work = self.prec.with_extra_digits(10);
                let zero = work.zero();
                let one = work.real(1u32);
                let mut opts = QuadOptions::relative(10f64.powi(-(self.prec.digits() as i32) - 3), work);
                opts.initial_panels = 8;
                let r = adaptive_gl(|x| self.raw(x, work), &zero, &one, opts, work)?;
                let rel = (r.error.clone() / &r.value).abs().to_f64();
                if !(rel <= 10f64.powi(-(self.prec.digits() as i32))) || r.value <= 0u32 {
                    return Err(NumericError::PrecisionExhausted(format!(
                        "normaliser of {} not certified (relative error {rel:e})",
                        self.kind
                    )));
                }
                Float::with_val(self.prec.bits(), 1u32 / r.value)
            }
        };
        cache
            .lock()
            .expect("normaliser cache poisoned")
            .insert(key, value.clone());
        Ok(value)
    }

    /// Unnormalised weight at working precision `work`.
    fn raw(&self, x: &ExtReal, work: Precision) -> ExtReal {
        if *x <= 0u32 || *x >= 1u32 {
            return match self.kind {
                WeightKind::TrivialFlat => work.real(1u32),
                _ => work.zero(),
            };
        }
        let one_m = Float::with_val(work.bits(), 1u32) - x;
        match &self.kind {
            WeightKind::TrivialFlat => work.real(1u32),
            WeightKind::PolyBump { s } => Float::with_val(work.bits(), x * &one_m).pow(*s),
            WeightKind::ExpBump => {
                let e = Float::with_val(work.bits(), 1u32) / Float::with_val(work.bits(), x * &one_m);
                if e > self.knee {
                    work.zero()
                } else {
                    (-e).exp()
                }
            }
            WeightKind::BumpPQ { .. } => {
                let e = bump_exponent(x, &one_m, &self.p, &self.q);
                if e > self.knee {
                    work.zero()
                } else {
                    (-e).exp()
                }
            }
        }
    }

    /// Normalised weight `w(x)` for `x ∈ [0, 1]`.
    pub fn eval(&self, x: &ExtReal) -> Result<ExtReal> {
        if x.is_nan() || *x < 0u32 || *x > 1u32 {
            return Err(NumericError::Domain(format!(
                "weight argument {} outside [0, 1]",
                x.to_f64()
            )));
        }
        Ok(self.raw(x, self.prec) * &self.normalizer)
    }

    /// `w(n/N)` for `n = 0..N-1`, together with their compensated sum `A_N`.
    pub fn samples(&self, n: u64) -> Result<WeightSamples> {
        if n == 0 {
            return Err(NumericError::Domain("N must be positive".into()));
        }
        let len = n as usize;
        let mut values = vec![self.prec.zero(); len];
        let symmetric = self.kind.is_symmetric();
        for i in 0..len {
            if symmetric && i > 0 && 2 * i > len {
                values[i] = values[len - i].clone();
                continue;
            }
            let x = self.prec.real(i as u64) / n;
            values[i] = self.eval(&x)?;
        }
        let mut acc = CompensatedSum::new(self.prec);
        for v in &values {
            acc.add(v);
        }
        let a_n = acc.total();
        if a_n.is_zero() {
            return Err(NumericError::DegenerateWindow(n));
        }
        Ok(WeightSamples { n, values, a_n })
    }

    /// `A_N = Σ_{n<N} w(n/N)` by compensated summation.
    pub fn normalization_a_n(&self, n: u64) -> Result<ExtReal> {
        Ok(self.samples(n)?.a_n)
    }
}

fn bump_exponent(x: &ExtReal, one_m: &ExtReal, p: &ExtReal, q: &ExtReal) -> ExtReal {
    let a = x.clone().pow(&(-p.clone()));
    let b = one_m.clone().pow(&(-q.clone()));
    a * b
}

/// Precomputed weight values on the grid `n/N`.
#[derive(Clone, Debug)]
pub struct WeightSamples {
    pub n: u64,
    pub values: Vec<ExtReal>,
    pub a_n: ExtReal,
}

/// Integer coefficients of `dⁿ/dxⁿ e^{-1/x} = (Σ_j a_j x^{-j}) e^{-1/x}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivCoeffTable {
    pub order: u32,
    /// `coeffs[j] = a_j`, for `j = 0..=2n`.
    pub coeffs: Vec<Integer>,
    /// `max_j |a_j|`.
    pub b: Integer,
}

impl DerivCoeffTable {
    fn base() -> Self {
        DerivCoeffTable {
            order: 0,
            coeffs: vec![Integer::from(1)],
            b: Integer::from(1),
        }
    }

    /// Differentiates once: `a_j x^{-j}` contributes `-j a_j x^{-j-1} + a_j x^{-j-2}`.
    pub fn next(&self) -> Self {
        let n = self.order + 1;
        let mut coeffs = vec![Integer::new(); 2 * n as usize + 1];
        for (j, a) in self.coeffs.iter().enumerate() {
            if *a == 0 {
                continue;
            }
            coeffs[j + 1] -= Integer::from(a * j as u64);
            coeffs[j + 2] += a;
        }
        let b = coeffs.iter().map(|c| c.clone().abs()).max().unwrap_or_default();
        DerivCoeffTable { order: n, coeffs, b }
    }

    pub fn coefficient(&self, j: usize) -> Integer {
        self.coeffs.get(j).cloned().unwrap_or_default()
    }

    /// `Σ_j a_j u^j` at `u = 1/x`.
    pub fn eval_poly(&self, u: &ExtReal) -> ExtReal {
        let mut acc = Float::new(u.prec());
        for c in self.coeffs.iter().rev() {
            acc *= u;
            acc += c;
        }
        acc
    }
}

/// Coefficient table of the `n`-th derivative of `e^{-1/x}`.
pub fn deriv_coeff_table(n: u32) -> Result<DerivCoeffTable> {
    if n == 0 {
        return Err(NumericError::Domain("derivative order must be at least 1".into()));
    }
    Ok(deriv_coeff_tables(n).pop().expect("non-empty"))
}

/// Tables for orders `0..=n`.
pub fn deriv_coeff_tables(n: u32) -> Vec<DerivCoeffTable> {
    let mut out = vec![DerivCoeffTable::base()];
    for _ in 0..n {
        let next = out.last().expect("non-empty").next();
        out.push(next);
    }
    out
}

/// `w̄⁽ⁿ⁾` assembled from the coefficient tables by the Leibniz rule.
#[derive(Clone, Debug)]
pub struct ExpBumpDerivative {
    order: u32,
    tables: Vec<DerivCoeffTable>,
    binom: Vec<Integer>,
    c_star: ExtReal,
    prec: Precision,
}

impl ExpBumpDerivative {
    pub fn new(order: u32, prec: Precision) -> Result<Self> {
        let w = WeightFunction::new(WeightKind::ExpBump, prec)?;
        let binom = (0..=order).map(|i| Integer::from(Integer::binomial_u(order, i))).collect();
        Ok(ExpBumpDerivative {
            order,
            tables: deriv_coeff_tables(order),
            binom,
            c_star: w.normalizer().clone(),
            prec,
        })
    }

    /// Polynomial factor `Σ_i C(n,i)(-1)^{n-i} Q_i(1/x) Q_{n-i}(1/(1-x))`.
    pub fn poly_factor(&self, x: &ExtReal) -> ExtReal {
        let bits = self.prec.bits();
        let u = Float::with_val(bits, 1u32) / x;
        let v = Float::with_val(bits, 1u32) / (Float::with_val(bits, 1u32) - x);
        let qu: Vec<ExtReal> = self.tables.iter().map(|t| t.eval_poly(&u)).collect();
        let qv: Vec<ExtReal> = self.tables.iter().map(|t| t.eval_poly(&v)).collect();
        let n = self.order as usize;
        let mut acc = CompensatedSum::new(self.prec);
        for i in 0..=n {
            let mut term = Float::with_val(bits, &qu[i] * &qv[n - i]) * &self.binom[i];
            if (n - i) % 2 == 1 {
                term = -term;
            }
            acc.add(&term);
        }
        acc.total()
    }

    /// `w̄⁽ⁿ⁾(x)`, exactly zero at the endpoints.
    pub fn eval(&self, x: &ExtReal) -> ExtReal {
        if *x <= 0u32 || *x >= 1u32 {
            return self.prec.zero();
        }
        let bits = self.prec.bits();
        let one_m = Float::with_val(bits, 1u32) - x;
        let e = Float::with_val(bits, 1u32) / Float::with_val(bits, x * &one_m);
        self.poly_factor(x) * (-e).exp() * &self.c_star
    }
}

/// `∫₀¹ |w̄⁽ⁿ⁾(x)| dx`.
#[derive(Clone, Debug)]
pub struct L1Norm {
    pub order: u32,
    pub value: ExtReal,
    pub error: ExtReal,
    /// Sign changes of `w̄⁽ⁿ⁾` in `(0, 1)`.
    pub roots: Vec<ExtReal>,
}

/// Computes `‖w̄⁽ⁿ⁾‖_{L¹}` to relative accuracy `10^{-digits/2}`.
///
/// The integral is split at the sign changes of the polynomial factor on
/// `(0, 1/2]` and doubled by the symmetry `w̄⁽ⁿ⁾(1-x) = (-1)ⁿ w̄⁽ⁿ⁾(x)`.
pub fn l1_derivative_norm(n: u32, digits: u32) -> Result<L1Norm> {
    if n < 2 {
        return Err(NumericError::Domain("L1 norm order must be at least 2".into()));
    }
    let prec = Precision::new(digits);
    let work = prec.with_extra_digits(2 * n + 10);
    let d = ExpBumpDerivative::new(n, work)?;
    let half = work.real(1u32) / 2u32;
    let left_roots = sign_changes(&d, work, &half);
    let mut cuts = vec![work.zero()];
    cuts.extend(left_roots.iter().cloned());
    cuts.push(half.clone());
    let rel = 10f64.powi(-(digits as i32 / 2) - 2);
    let mut total = CompensatedSum::new(work);
    let mut err = work.zero();
    for pair in cuts.windows(2) {
        let mut opts = QuadOptions::relative(rel, work);
        opts.initial_panels = 2;
        let r = adaptive_gl(|x| d.eval(x), &pair[0], &pair[1], opts, work)?;
        total.add(&r.value.abs());
        err += r.error;
    }
    let value = total.total() * 2u32;
    let err = err * 2u32;
    let got = (err.clone() / &value).to_f64();
    if !(got <= 10f64.powi(-(digits as i32 / 2))) {
        return Err(NumericError::PrecisionExhausted(format!(
            "L1 norm of order {n}: relative error {got:e}"
        )));
    }
    let mut roots: Vec<ExtReal> = left_roots.clone();
    if n % 2 == 1 {
        roots.push(half.clone());
    }
    for r in left_roots.iter().rev() {
        roots.push(work.real(1u32) - r);
    }
    Ok(L1Norm {
        order: n,
        value: Float::with_val(prec.bits(), &value),
        error: Float::with_val(prec.bits(), &err),
        roots: roots.into_iter().map(|r| Float::with_val(prec.bits(), r)).collect(),
    })
}

/// Sign changes of the polynomial factor on `(0, 1/2)`, refined by bisection.
fn sign_changes(d: &ExpBumpDerivative, work: Precision, half: &ExtReal) -> Vec<ExtReal> {
    let n = d.order as usize;
    let mut grid: Vec<ExtReal> = Vec::new();
    // Geometric near the origin, where the outermost roots cluster, then uniform.
    let geo = 120;
    for i in 0..geo {
        let t = -6.0 + (i as f64) * (6.0 - 1.3) / geo as f64;
        grid.push(work.real(10f64.powf(t)));
    }
    let start = 10f64.powf(-1.3);
    let uni = 200 * n;
    for i in 0..uni {
        let x = start + (0.5 - start) * i as f64 / uni as f64;
        grid.push(work.real(x));
    }
    let signs: Vec<i32> = grid.iter().map(|x| sign_of(&d.poly_factor(x))).collect();
    let mut roots = Vec::new();
    for i in 0..grid.len() - 1 {
        if signs[i] != 0 && signs[i + 1] != 0 && signs[i] != signs[i + 1] {
            roots.push(bisect(d, grid[i].clone(), grid[i + 1].clone(), signs[i], work));
        } else if signs[i + 1] == 0 && i + 1 < grid.len() - 1 {
            roots.push(grid[i + 1].clone());
        }
    }
    let _ = half;
    roots
}

fn sign_of(x: &ExtReal) -> i32 {
    if x.is_zero() {
        0
    } else if x.is_sign_negative() {
        -1
    } else {
        1
    }
}

fn bisect(d: &ExpBumpDerivative, mut lo: ExtReal, mut hi: ExtReal, lo_sign: i32, work: Precision) -> ExtReal {
    let steps = work.bits() - 8;
    for _ in 0..steps {
        let mid = Float::with_val(work.bits(), &lo + &hi) / 2u32;
        if mid <= lo || mid >= hi {
            break;
        }
        let s = sign_of(&d.poly_factor(&mid));
        if s == 0 {
            return mid;
        }
        if s == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Float::with_val(work.bits(), &lo + &hi) / 2u32
}

/// Growth constants read off a table of `L¹` norms.
#[derive(Clone, Debug, Serialize)]
pub struct L1Growth {
    /// `C★ = 1/∫ exp(-1/(s(1-s))) ds`.
    pub c_star: f64,
    /// `(n, ‖w̄⁽ⁿ⁾‖_{L¹})` pairs.
    pub norms: Vec<(u32, f64)>,
    /// `max_n ln(L1ₙ)/(n ln n)`.
    pub exponent_raw: f64,
    /// Smallest `β` with `L1ₙ ≤ C★ n^{βn}` over the table.
    pub beta: f64,
}

impl L1Growth {
    pub fn from_norms(norms: Vec<(u32, f64)>, c_star: f64) -> Self {
        let mut raw = f64::NEG_INFINITY;
        let mut beta = f64::NEG_INFINITY;
        for &(n, v) in &norms {
            let nl = n as f64 * (n as f64).ln();
            raw = raw.max(v.ln() / nl);
            beta = beta.max((v / c_star).ln() / nl);
        }
        L1Growth {
            c_star,
            norms,
            exponent_raw: raw,
            beta,
        }
    }

    /// `β★ = 1/(2β)`.
    pub fn beta_star(&self) -> f64 {
        1.0 / (2.0 * self.beta)
    }

    pub fn norm(&self, n: u32) -> Option<f64> {
        self.norms.iter().find(|(m, _)| *m == n).map(|(_, v)| *v)
    }

    pub fn max_order(&self) -> u32 {
        self.norms.iter().map(|(n, _)| *n).max().unwrap_or(0)
    }
}

/// Computes the norms for `n = 2..=n_max` at the given digit count.
pub fn l1_growth(n_max: u32, digits: u32) -> Result<L1Growth> {
    let mut norms = Vec::new();
    for n in 2..=n_max {
        norms.push((n, l1_derivative_norm(n, digits)?.value.to_f64()));
    }
    let c = WeightFunction::new(WeightKind::ExpBump, Precision::new(digits))?;
    Ok(L1Growth::from_norms(norms, c.normalizer().to_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::parse_real;

    fn p40() -> Precision {
        Precision::new(40)
    }

    #[test]
    fn parse_round_trips() {
        for s in ["exp", "flat", "poly:s=4", "bump:p=2,q=2", "bump:p=0.5,q=3"] {
            let k: WeightKind = s.parse().unwrap();
            let again: WeightKind = k.to_string().parse().unwrap();
            assert_eq!(k, again);
        }
        for bad in ["", "gauss", "poly:s=2", "bump:p=1", "bump:p=-1,q=1", "exp:p=1"] {
            assert!(bad.parse::<WeightKind>().is_err(), "{bad}");
        }
    }

    #[test]
    fn exp_bump_constants() {
        let p = p40();
        let w = WeightFunction::new(WeightKind::ExpBump, p).unwrap();
        // C★ from an independent 60-digit evaluation.
        let c = parse_real("142.25037577709586813", p).unwrap();
        assert!(((w.normalizer().clone() - &c) / &c).abs().to_f64() < 1e-18);
        let half = p.real(1u32) / 2u32;
        let v = w.eval(&half).unwrap();
        let want = c * (-p.real(4u32)).exp();
        assert!(((v - &want) / want).abs().to_f64() < 1e-18);
        assert!(w.eval(&p.zero()).unwrap().is_zero());
        assert!(w.eval(&p.real(1u32)).unwrap().is_zero());
        assert!(w.eval(&p.real(1.5)).is_err());
        assert!(w.eval(&p.real(-0.1)).is_err());
    }

    #[test]
    fn poly_normaliser_matches_closed_form() {
        let p = p40();
        for s in 3..=6u32 {
            let w = WeightFunction::new(WeightKind::PolyBump { s }, p).unwrap();
            let fact = |k: u32| Integer::from(Integer::factorial(k));
            let want = Float::with_val(p.bits(), fact(2 * s + 1)) / Float::with_val(p.bits(), fact(s).square());
            let rel = ((w.normalizer().clone() - &want) / want).abs().to_f64();
            assert!(rel < 1e-35, "s = {s}: {rel}");
        }
    }

    #[test]
    fn symmetric_bump_is_symmetric() {
        let p = p40();
        let w = WeightFunction::new(WeightKind::BumpPQ { p: 2.0, q: 2.0 }, p).unwrap();
        let a = w.eval(&p.real(0.3)).unwrap();
        let b = w.eval(&(p.real(1u32) - p.real(0.3))).unwrap();
        assert!(((a.clone() - b) / a).abs().to_f64() < 1e-35);
    }

    #[test]
    fn a_n_small_cases() {
        let p = p40();
        let flat = WeightFunction::new(WeightKind::TrivialFlat, p).unwrap();
        assert_eq!(flat.normalization_a_n(10).unwrap(), 10u32);
        let w = WeightFunction::new(WeightKind::ExpBump, p).unwrap();
        let a2 = w.normalization_a_n(2).unwrap();
        assert_eq!(a2, w.eval(&(p.real(1u32) / 2u32)).unwrap());
        assert!(matches!(w.normalization_a_n(1), Err(NumericError::DegenerateWindow(1))));
    }

    #[test]
    fn a_n_over_n_converges_fast() {
        let p = Precision::new(50);
        let w = WeightFunction::new(WeightKind::ExpBump, p).unwrap();
        let a = w.normalization_a_n(256).unwrap();
        let dev = (a / 256u32 - 1u32).abs().to_f64();
        assert!(dev <= 1e-8, "dev = {dev:e}");
    }

    #[test]
    fn weight_is_derivative_of_its_integral() {
        let p = p40();
        let w = WeightFunction::new(WeightKind::BumpPQ { p: 1.0, q: 2.0 }, p).unwrap();
        let prim = |x: &ExtReal| {
            adaptive_gl(|t| w.eval(t).unwrap(), &p.zero(), x, QuadOptions::relative(1e-30, p), p)
                .unwrap()
                .value
        };
        let x = p.real(0.37);
        let h = p.real(1e-8);
        let fd = (prim(&(x.clone() + &h)) - prim(&(x.clone() - &h))) / (h * 2u32);
        let v = w.eval(&x).unwrap();
        assert!(((fd - &v) / v).abs().to_f64() < 1e-14);
    }

    #[test]
    fn small_coefficient_tables() {
        let t1 = deriv_coeff_table(1).unwrap();
        assert_eq!(t1.coefficient(2), 1);
        assert_eq!(t1.coefficient(1), 0);
        assert_eq!(t1.b, 1);
        let t2 = deriv_coeff_table(2).unwrap();
        assert_eq!(
            (t2.coefficient(1), t2.coefficient(2), t2.coefficient(3), t2.coefficient(4)),
            (Integer::from(0), Integer::from(0), Integer::from(-2), Integer::from(1))
        );
        assert_eq!(t2.b, 2);
        let t5 = deriv_coeff_table(5).unwrap();
        let want = [0, 0, 0, 0, 0, 0, 120, -240, 120, -20, 1];
        for (j, w) in want.iter().enumerate() {
            assert_eq!(t5.coefficient(j), *w, "j = {j}");
        }
        assert!(deriv_coeff_table(0).is_err());
    }

    #[test]
    fn table_bounds_hold() {
        let tables = deriv_coeff_tables(20);
        for n in 1..=20usize {
            let t = &tables[n];
            assert_eq!(t.coefficient(2 * n), 1);
            let fact = Integer::from(Integer::factorial(n as u32));
            let bound = Integer::from(Integer::u_pow_u(8, n as u32)) * fact.square();
            assert!(t.b <= bound);
            if n < 20 {
                let nn = Integer::from(8 * n * n);
                assert!(tables[n + 1].b <= nn * &t.b);
            }
        }
    }

    #[test]
    fn derivative_symmetry() {
        let p = p40();
        for n in [2u32, 3, 6] {
            let d = ExpBumpDerivative::new(n, p).unwrap();
            let x = p.real(0.23);
            let a = d.eval(&x);
            let b = d.eval(&(p.real(1u32) - &x));
            let sign: i32 = if n % 2 == 0 { 1 } else { -1 };
            assert!(((a.clone() - b * sign) / &a).abs().to_f64() < 1e-30);
        }
        let d3 = ExpBumpDerivative::new(3, p).unwrap();
        assert!(d3.eval(&(p.real(1u32) / 2u32)).abs().to_f64() < 1e-35);
    }

    #[test]
    fn l1_norm_order_two() {
        let r = l1_derivative_norm(2, 40).unwrap();
        let want = parse_real("44.142260595978392012", Precision::new(40)).unwrap();
        let rel = ((r.value.clone() - &want) / want).abs().to_f64();
        assert!(rel < 1e-18, "rel = {rel:e}");
        assert_eq!(r.roots.len(), 2);
    }

    #[test]
    fn l1_norm_counts_roots() {
        // Left-half sign changes located by an independent dense scan of the
        // derivative computed by numerical differentiation.
        let left: [&[f64]; 6] = [
            &[0.30325],
            &[0.1835],
            &[0.12175, 0.27175],
            &[0.0885, 0.166, 0.36625],
            &[0.06875, 0.11575, 0.207, 0.41725],
            &[0.056, 0.0875, 0.14075, 0.24675],
        ];
        for (i, want) in left.iter().enumerate() {
            let n = i as u32 + 2;
            let r = l1_derivative_norm(n, 24).unwrap();
            let count = 2 * want.len() + (n as usize % 2);
            assert_eq!(r.roots.len(), count, "n = {n}");
            for (got, w) in r.roots.iter().zip(want.iter()) {
                assert!((got.to_f64() - w).abs() < 3e-4, "n = {n}: {} vs {w}", got.to_f64());
            }
        }
    }

    #[test]
    fn growth_exponents() {
        let g = L1Growth::from_norms(vec![(2, 44.14), (4, 8408.8)], 142.25);
        assert!((g.exponent_raw - 44.14f64.ln() / (2.0 * 2f64.ln())).abs() < 1e-12);
        assert!(g.beta < g.exponent_raw);
        assert!((g.beta_star() - 0.5 / g.beta).abs() < 1e-15);
    }
}
