//! Hypothesis checks, convergence-rate fits and the truncation error budget.
//!
//! Every checker returns a plain serialisable report. Checks are numerical
//! evidence only: "inconclusive" is a legitimate outcome, not an error.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{NumericError, Result};
use crate::lattice::{eta_weights, shell_log_sums};
use crate::observables::ModeTable;
use crate::quad::integrate_f64;
use crate::rotations::{dioph_factor_ln, ApproxKind, ApproximationFunction, DivisorMode, Regime, RotationVector};
use crate::weights::{check_known, param, split_spec, L1Growth};

/// Nondecreasing, unbounded, sublinear scale function splitting modes into
/// principal and remainder sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdaptiveFunction {
    /// `log^u(1 + x)`.
    LogPow { u: f64 },
    /// `x^v`, `0 < v < 1`.
    Pow { v: f64 },
}

impl AdaptiveFunction {
    pub fn log_pow(u: f64) -> Result<Self> {
        if u > 0.0 && u.is_finite() {
            Ok(AdaptiveFunction::LogPow { u })
        } else {
            Err(NumericError::Parse(format!("log exponent must be positive, got {u}")))
        }
    }

    pub fn pow(v: f64) -> Result<Self> {
        if v > 0.0 && v < 1.0 {
            Ok(AdaptiveFunction::Pow { v })
        } else {
            Err(NumericError::Parse(format!("power exponent must lie in (0, 1), got {v}")))
        }
    }

    pub fn sqrt() -> Self {
        AdaptiveFunction::Pow { v: 0.5 }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.ln_value(x).exp()
    }

    pub fn ln_value(&self, x: f64) -> f64 {
        match *self {
            AdaptiveFunction::LogPow { u } => u * x.ln_1p().ln(),
            AdaptiveFunction::Pow { v } => v * x.ln(),
        }
    }
}

impl fmt::Display for AdaptiveFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdaptiveFunction::LogPow { u } => write!(f, "log:u={u}"),
            AdaptiveFunction::Pow { v } => write!(f, "pow:v={v}"),
        }
    }
}

/// Grammar: `log:u=<r>` | `pow:v=<r>` | `sqrt`.
impl FromStr for AdaptiveFunction {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, params) = split_spec(s);
        match head.as_str() {
            "log" => {
                check_known(s, &params, &["u"])?;
                AdaptiveFunction::log_pow(param(s, &params, "u")?)
            }
            "pow" => {
                check_known(s, &params, &["v"])?;
                AdaptiveFunction::pow(param(s, &params, "v")?)
            }
            "sqrt" => {
                check_known(s, &params, &[])?;
                Ok(AdaptiveFunction::sqrt())
            }
            _ => Err(NumericError::Parse(format!("unknown adaptive function '{s}'"))),
        }
    }
}

impl Serialize for AdaptiveFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Outcome of a hypothesis check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converges,
    Diverges,
    Holds,
    Fails,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Converges => "converges",
            Verdict::Diverges => "diverges",
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// Ordinary least-squares line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub r2: f64,
}

/// Fits `y = slope·x + intercept`; `None` for fewer than two distinct abscissae.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let stderr = if n > 2 { (ss_res / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Some(LineFit {
        slope,
        intercept,
        stderr,
        r2,
    })
}

// ---------------------------------------------------------------------------
// Rate fits
// ---------------------------------------------------------------------------

/// One point of a convergence sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    /// `N` or `T`.
    pub t: f64,
    /// `ln |error|`.
    pub ln_err: f64,
    /// Whether the error sits at the precision floor.
    pub saturated: bool,
}

/// Which law to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ModelHint {
    /// `err ≈ C N^{-m}`.
    PolySlope,
    /// `err ≈ exp(-c N^ξ)`.
    StretchedExp,
}

impl FromStr for ModelHint {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poly" => Ok(ModelHint::PolySlope),
            "sexp" => Ok(ModelHint::StretchedExp),
            _ => Err(NumericError::Parse(format!("unknown fit model '{s}' (expected poly or sexp)"))),
        }
    }
}

/// Fitted law with its quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "model")]
pub enum FitModel {
    PolySlope { m: f64, stderr: f64, r2: f64 },
    StretchedExp { c: f64, xi: f64, stderr: f64, r2: f64 },
}

impl FitModel {
    pub fn r2(&self) -> f64 {
        match *self {
            FitModel::PolySlope { r2, .. } | FitModel::StretchedExp { r2, .. } => r2,
        }
    }
}

/// Result of [`fit_rate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub model: FitModel,
    /// Abscissae that entered the regression.
    pub used: Vec<f64>,
    /// Abscissae left out: saturated, non-finite, or not usable by the model.
    pub excluded: Vec<f64>,
}

/// Minimum number of usable points.
pub const MIN_FIT_POINTS: usize = 6;

/// Least-squares rate fit on the tail half of the usable points.
///
/// Usable points are unsaturated with finite `ln_err`; the stretched law also
/// needs `err < 1`.
pub fn fit_rate(grid: &[GridPoint], hint: ModelHint) -> Result<RateFit> {
    let mut usable = Vec::new();
    let mut excluded = Vec::new();
    for p in grid {
        let ok = !p.saturated
            && p.ln_err.is_finite()
            && p.t > 0.0
            && (hint == ModelHint::PolySlope || p.ln_err < 0.0);
        if ok {
            usable.push(*p);
        } else {
            excluded.push(p.t);
        }
    }
    if usable.len() < MIN_FIT_POINTS {
        return Err(NumericError::InsufficientData(format!(
            "{} usable points, need {MIN_FIT_POINTS}",
            usable.len()
        )));
    }
    usable.sort_by(|a, b| a.t.total_cmp(&b.t));
    let half = usable.len().div_ceil(2).max(3);
    let tail = &usable[usable.len() - half..];
    excluded.extend(usable[..usable.len() - half].iter().map(|p| p.t));
    excluded.sort_by(f64::total_cmp);
    let xs: Vec<f64> = tail.iter().map(|p| p.t.ln()).collect();
    let model = match hint {
        ModelHint::PolySlope => {
            let ys: Vec<f64> = tail.iter().map(|p| p.ln_err).collect();
            let f = line_fit(&xs, &ys).ok_or_else(|| NumericError::InsufficientData("degenerate abscissae".into()))?;
            FitModel::PolySlope {
                m: -f.slope,
                stderr: f.stderr,
                r2: f.r2,
            }
        }
        ModelHint::StretchedExp => {
            let ys: Vec<f64> = tail.iter().map(|p| (-p.ln_err).ln()).collect();
            let f = line_fit(&xs, &ys).ok_or_else(|| NumericError::InsufficientData("degenerate abscissae".into()))?;
            FitModel::StretchedExp {
                c: f.intercept.exp(),
                xi: f.slope,
                stderr: f.stderr,
                r2: f.r2,
            }
        }
    };
    Ok(RateFit {
        model,
        used: tail.iter().map(|p| p.t).collect(),
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Log-space integration
// ---------------------------------------------------------------------------

/// Below this log-ratio to the maximum, integrand mass is dropped.
const LN_NEGLIGIBLE: f64 = -750.0;

/// `ln ∫_a^∞ exp(g(r)) dr` for an eventually decreasing log-integrand.
///
/// The half-line is cut into geometrically growing panels starting at a
/// width tied to the local decay rate, each panel integrated after shifting by
/// the running maximum. Far out, a power-law remainder `r^σ` with `σ < -1` is
/// closed analytically. Returns `+∞` when the integrand does not decay.
pub fn ln_integral_to_infinity<G: Fn(f64) -> f64>(g: G, a: f64) -> f64 {
    let scale = a.abs().max(1.0);
    let g0 = g(a);
    if g0.is_nan() {
        return f64::NAN;
    }
    let step = scale * 1e-6;
    let slope = (g(a + step) - g0) / step;
    let mut h = scale * 1e-3;
    if slope.is_finite() && slope.abs() > 0.0 {
        h = h.min(0.01 / slope.abs());
    }
    // Sample points s_0 = 0 < s_1 < ... with s_{i+1} = 1.25 s_i.
    let mut knots = vec![0.0f64];
    let mut vals = vec![g0];
    let mut gmax = g0;
    let mut s = h;
    let far = scale * 1e15;
    let mut remainder_ln = f64::NEG_INFINITY;
    loop {
        let r = a + s;
        let v = g(r);
        if v.is_nan() {
            return f64::NAN;
        }
        knots.push(s);
        vals.push(v);
        if v > gmax {
            gmax = v;
        }
        if v == f64::INFINITY {
            return f64::INFINITY;
        }
        if v < gmax + LN_NEGLIGIBLE {
            break;
        }
        if s > far {
            let sigma = (g(r * 1.5) - v) / 1.5f64.ln();
            if sigma < -1.001 {
                remainder_ln = v + r.ln() - (-sigma - 1.0).ln();
                break;
            }
            return f64::INFINITY;
        }
        if !r.is_finite() {
            return f64::INFINITY;
        }
        s *= 1.25;
    }
    if gmax == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (v, _) = integrate_f64(
            |t| {
                let e = g(a + t) - gmax;
                if e < LN_NEGLIGIBLE {
                    0.0
                } else {
                    e.exp()
                }
            },
            lo,
            hi,
            1e-12,
            64,
        );
        total += v;
    }
    let ln_main = gmax + total.ln();
    log_add(ln_main, remainder_ln)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    terms.into_iter().fold(f64::NEG_INFINITY, log_add)
}

// ---------------------------------------------------------------------------
// (H1): integrability
// ---------------------------------------------------------------------------

/// Growth tier of a log-integrand term, ordered by dominance.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Tier {
    Log,
    Stretch(f64),
    DoubleExp(f64),
}

impl Tier {
    fn rank(&self) -> (u8, f64) {
        match *self {
            Tier::Log => (0, 0.0),
            Tier::Stretch(nu) => (1, nu),
            Tier::DoubleExp(mu) => (2, mu),
        }
    }
}

/// Asymptotic form of `ln f(r)` as a list of `(tier, coefficient)`, or `None`
/// for kinds without a closed form.
fn tiers(f: &ApproximationFunction) -> Option<Vec<(Tier, f64)>> {
    match f.kind() {
        ApproxKind::Power { tau } => Some(vec![(Tier::Log, *tau)]),
        ApproxKind::StretchedExp { mu, nu } => Some(vec![(Tier::Stretch(*nu), *mu)]),
        ApproxKind::DoubleExp { mu } => Some(vec![(Tier::DoubleExp(*mu), 1.0)]),
        ApproxKind::DiophProduct { .. } | ApproxKind::Tabulated { .. } => None,
    }
}

/// Comparison criterion on the dominant term of `ln` of the integrand.
fn analytic_h1(delta: &ApproximationFunction, delta_tilde: &ApproximationFunction, m: u32, d: u32) -> Option<Verdict> {
    let mut terms = vec![(Tier::Log, (d as f64) - 1.0)];
    terms.extend(tiers(delta)?.into_iter().map(|(t, c)| (t, c * m as f64)));
    terms.extend(tiers(delta_tilde)?.into_iter().map(|(t, c)| (t, -c)));
    let mut merged: Vec<(Tier, f64)> = Vec::new();
    for (t, c) in terms {
        let (k, x) = t.rank();
        match merged.iter_mut().find(|(u, _)| {
            let (k2, x2) = u.rank();
            k == k2 && (x - x2).abs() <= 1e-12 * x.abs().max(1.0)
        }) {
            Some(slot) => slot.1 += c,
            None => merged.push((t, c)),
        }
    }
    merged.sort_by(|a, b| {
        let (ka, xa) = a.0.rank();
        let (kb, xb) = b.0.rank();
        kb.cmp(&ka).then(xb.total_cmp(&xa))
    });
    for (t, c) in merged {
        match t {
            Tier::Log => {
                // ∫ r^a dr converges iff a < -1; a = -1 is the harmonic borderline.
                return Some(if c < -1.0 - 1e-9 { Verdict::Converges } else { Verdict::Diverges });
            }
            _ if c.abs() <= 1e-12 => continue,
            _ => return Some(if c < 0.0 { Verdict::Converges } else { Verdict::Diverges }),
        }
    }
    Some(Verdict::Diverges)
}

/// Report of the integrability check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct H1Report {
    pub hypothesis: &'static str,
    pub verdict: Verdict,
    /// Verdict of the comparison criterion, when the kinds admit one.
    pub analytic: Option<Verdict>,
    /// Verdict read off the far-field log-log slope.
    pub numeric: Verdict,
    /// `d ln g / d ln r` between `r = 10⁶` and `10⁷`.
    pub tail_slope: f64,
    /// `ln ∫₁^∞ r^{d-1}Δᵐ/Δ̃ dr` when the integral converges.
    pub ln_integral: Option<f64>,
    pub delta: String,
    pub delta_tilde: String,
    pub m: u32,
    pub d: u32,
}

/// Checks `∫₁^∞ r^{d-1} Δᵐ(r)/Δ̃(r) dr < ∞`.
pub fn check_h1(delta: &ApproximationFunction, delta_tilde: &ApproximationFunction, m: u32, d: u32) -> H1Report {
    let g = |r: f64| (d as f64 - 1.0) * r.ln() + m as f64 * delta.ln_value(r) - delta_tilde.ln_value(r);
    let tail_slope = (g(1e7) - g(1e6)) / 10f64.ln();
    let numeric = if tail_slope.is_nan() {
        Verdict::Inconclusive
    } else if tail_slope < -1.01 {
        Verdict::Converges
    } else if tail_slope > -0.99 {
        Verdict::Diverges
    } else {
        Verdict::Inconclusive
    };
    let analytic = analytic_h1(delta, delta_tilde, m, d);
    let verdict = match (analytic, numeric) {
        (Some(a), Verdict::Inconclusive) => a,
        (None, n) => n,
        (Some(a), n) if a == n => a,
        _ => Verdict::Inconclusive,
    };
    let ln_integral = if verdict == Verdict::Converges {
        Some(ln_integral_to_infinity(g, 1.0)).filter(|v| v.is_finite())
    } else {
        None
    };
    H1Report {
        hypothesis: "H1",
        verdict,
        analytic,
        numeric,
        tail_slope,
        ln_integral,
        delta: delta.to_string(),
        delta_tilde: delta_tilde.to_string(),
        m,
        d,
    }
}

// ---------------------------------------------------------------------------
// Shell sums on the infinite lattice
// ---------------------------------------------------------------------------

/// `ln Σ_{|k|_η = ν} 𝚍ᵐ(k) / Δ̃∞(ν)` for `ν = 0..=nu_max`; entry 0 is `-∞`.
///
/// The product kind is evaluated per index; other kinds as functions of the norm.
pub fn shell_terms(
    small: &ApproximationFunction,
    class: &ApproximationFunction,
    m: u32,
    eta: u32,
    nu_max: u64,
) -> Vec<f64> {
    let weights = eta_weights(eta, nu_max, None);
    let mf = m as f64;
    let sums = match small.kind() {
        ApproxKind::DiophProduct { mu, .. } => {
            let mu = *mu;
            shell_log_sums(&weights, nu_max, |j, v| mf * dioph_factor_ln(j, v, mu))
        }
        _ => {
            let counts = shell_log_sums(&weights, nu_max, |_, _| 0.0);
            counts
                .iter()
                .enumerate()
                .map(|(nu, c)| c + mf * small.ln_value(nu as f64))
                .collect()
        }
    };
    sums.iter()
        .enumerate()
        .map(|(nu, s)| {
            if nu == 0 {
                f64::NEG_INFINITY
            } else {
                s - class.ln_value(nu as f64)
            }
        })
        .collect()
}

/// One shell of the (H2) series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShellTerm {
    pub nu: u64,
    pub ln_term: f64,
    pub ln_partial: f64,
}

/// Report of the boundedness check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct H2Report {
    pub hypothesis: &'static str,
    pub verdict: Verdict,
    pub shells: Vec<ShellTerm>,
    /// Slope of `ln term` against `ν` over the tail half.
    pub tail_slope: f64,
    /// Largest ratio of consecutive shell terms over the tail half.
    pub max_ratio: f64,
    pub small_divisor: String,
    pub class: String,
    pub m: u32,
    pub eta: u32,
}

/// Fewest shells the (H2) series is judged on.
pub const MIN_SHELLS: u64 = 8;

/// Checks `Σ_{k≠0} 𝚍ᵐ(|k|_η)/Δ̃∞(|k|_η) < ∞` from the shell partial sums.
pub fn check_h2(small: &ApproximationFunction, class: &ApproximationFunction, m: u32, eta: u32, nu_max: u64) -> H2Report {
    let terms = shell_terms(small, class, m, eta, nu_max);
    let mut shells = Vec::new();
    let mut partial = f64::NEG_INFINITY;
    for (nu, &t) in terms.iter().enumerate().skip(1) {
        partial = log_add(partial, t);
        shells.push(ShellTerm {
            nu: nu as u64,
            ln_term: t,
            ln_partial: partial,
        });
    }
    let finite: Vec<&ShellTerm> = shells.iter().filter(|s| s.ln_term.is_finite()).collect();
    let tail = &finite[finite.len() / 2..];
    let xs: Vec<f64> = tail.iter().map(|s| s.nu as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|s| s.ln_term).collect();
    let tail_slope = line_fit(&xs, &ys).map_or(f64::NAN, |f| f.slope);
    let max_ratio = tail
        .windows(2)
        .map(|w| (w[1].ln_term - w[0].ln_term).exp())
        .fold(f64::NEG_INFINITY, f64::max);
    let all_vanish = shells.iter().all(|s| s.ln_term == f64::NEG_INFINITY);
    let verdict = if nu_max < MIN_SHELLS {
        Verdict::Inconclusive
    } else if all_vanish {
        Verdict::Converges
    } else if tail_slope.is_nan() {
        Verdict::Inconclusive
    } else if tail_slope >= 0.0 {
        Verdict::Diverges
    } else if max_ratio < 1.0 {
        Verdict::Converges
    } else {
        Verdict::Inconclusive
    };
    H2Report {
        hypothesis: "H2",
        verdict,
        shells,
        tail_slope,
        max_ratio,
        small_divisor: small.to_string(),
        class: class.to_string(),
        m,
        eta,
    }
}

// ---------------------------------------------------------------------------
// (H3)/(H4): smallness of the remainder
// ---------------------------------------------------------------------------

/// Geometric grid `start·factor^i`, `i < count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct XGrid {
    pub start: f64,
    pub factor: f64,
    pub count: usize,
}

impl XGrid {
    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start * self.factor.powi(i as i32)).collect()
    }
}

impl Default for XGrid {
    /// `10¹ … 10¹⁶` at four points per decade.
    fn default() -> Self {
        XGrid {
            start: 10.0,
            factor: 10f64.powf(0.25),
            count: 61,
        }
    }
}

/// One x-grid point of a tail check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailPoint {
    pub x: f64,
    /// Lower limit of the tail (radius or shell index).
    pub threshold: f64,
    pub ln_tail: f64,
}

/// Report of a remainder-smallness check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailReport {
    pub hypothesis: &'static str,
    pub verdict: Verdict,
    pub grid: Vec<TailPoint>,
    /// Linear fit of `ln tail` against `x`.
    pub fit: Option<LineFit>,
    /// `-slope` of that fit.
    pub decay_constant: f64,
    /// Slope of `ln(-ln tail)` against `ln x` over the tail half: the `ξ`
    /// in `tail ≈ exp(-c x^ξ)`.
    pub shape_exponent: f64,
    /// Inputs, echoed as `(name, value)` pairs.
    pub parameters: Vec<(String, String)>,
}

fn pair(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Verdict rule shared by the (H3) and (H4) checks.
fn judge_tail(grid: &[TailPoint]) -> (Verdict, Option<LineFit>, f64) {
    if grid.iter().any(|p| p.ln_tail == f64::INFINITY) {
        return (Verdict::Fails, None, f64::NAN);
    }
    let pts: Vec<&TailPoint> = grid.iter().filter(|p| p.ln_tail.is_finite()).collect();
    if pts.len() < 4 {
        return (Verdict::Inconclusive, None, f64::NAN);
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.ln_tail).collect();
    let fit = line_fit(&xs, &ys);
    let tail: Vec<&&TailPoint> = pts[pts.len() / 2..].iter().filter(|p| p.ln_tail < 0.0).collect();
    let shape = if tail.len() >= 2 {
        let lx: Vec<f64> = tail.iter().map(|p| p.x.ln()).collect();
        let ly: Vec<f64> = tail.iter().map(|p| (-p.ln_tail).ln()).collect();
        line_fit(&lx, &ly).map_or(f64::NAN, |f| f.slope)
    } else {
        f64::NAN
    };
    let verdict = match fit {
        None => Verdict::Inconclusive,
        Some(f) if f.slope < 0.0 && (f.r2 >= 0.99 || shape >= 1.0) => Verdict::Holds,
        Some(_) => Verdict::Fails,
    };
    (verdict, fit, shape)
}

/// `ln Δ^{-1}`-side threshold `2π·c·x/φ(x)` in log form.
fn ln_split(constant: f64, phi: AdaptiveFunction, x: f64) -> f64 {
    (2.0 * PI * constant).ln() + x.ln() - phi.ln_value(x)
}

/// Parameters of the finite-dimensional remainder integral.
#[derive(Clone, Debug)]
pub struct H3Params {
    pub delta: ApproximationFunction,
    pub delta_tilde: ApproximationFunction,
    pub phi: AdaptiveFunction,
    pub alpha: f64,
    pub d: u32,
}

impl H3Params {
    /// `Δ^{-1}(2παx/φ(x))`, clamped to at least 1.
    pub fn threshold(&self, x: f64) -> f64 {
        self.delta.inverse_ln(ln_split(self.alpha, self.phi, x)).max(1.0)
    }

    /// `(threshold, ln ∫_{threshold}^∞ r^{d-1}Δ²(r)/Δ̃(r) dr)`.
    pub fn ln_tail(&self, x: f64) -> (f64, f64) {
        let r0 = self.threshold(x);
        let d = self.d as f64;
        let g = |r: f64| (d - 1.0) * r.ln() + 2.0 * self.delta.ln_value(r) - self.delta_tilde.ln_value(r);
        (r0, ln_integral_to_infinity(g, r0))
    }
}

/// Checks `∫_{Δ^{-1}(2παx/φ(x))}^∞ r^{d-1}Δ²/Δ̃ dr = O(e^{-cx})` on an x-grid.
pub fn check_h3(params: &H3Params, grid: XGrid) -> TailReport {
    let pts: Vec<TailPoint> = grid
        .points()
        .into_iter()
        .map(|x| {
            let (threshold, ln_tail) = params.ln_tail(x);
            TailPoint { x, threshold, ln_tail }
        })
        .collect();
    let (verdict, fit, shape) = judge_tail(&pts);
    TailReport {
        hypothesis: "H3",
        verdict,
        grid: pts,
        fit,
        decay_constant: fit.map_or(f64::NAN, |f| -f.slope),
        shape_exponent: shape,
        parameters: vec![
            pair("delta", &params.delta),
            pair("delta_tilde", &params.delta_tilde),
            pair("phi", params.phi),
            pair("alpha", params.alpha),
            pair("d", params.d),
        ],
    }
}

/// Parameters of the infinite-dimensional remainder series.
#[derive(Clone, Debug)]
pub struct H4Params {
    pub small: ApproximationFunction,
    pub class: ApproximationFunction,
    pub phi: AdaptiveFunction,
    pub gamma: f64,
    pub eta: u32,
}

/// Largest shell index the (H4) series is summed to.
pub const MAX_SHELL: u64 = 4096;

/// Shells past the threshold included in each tail sum.
const SHELL_MARGIN: u64 = 64;

impl H4Params {
    /// First summed shell: `⌈𝚍^{-1}(2πγx/φ(x))⌉`, at least 1.
    pub fn threshold(&self, x: f64) -> f64 {
        self.small.inverse_ln(ln_split(self.gamma, self.phi, x)).ceil().max(1.0)
    }
}

/// Checks `Σ_{|k|_η ≥ 𝚍^{-1}(2πγx/φ(x))} 𝚍²/Δ̃∞ = O(e^{-cx})` on an x-grid.
pub fn check_h4(params: &H4Params, grid: XGrid) -> TailReport {
    let xs = grid.points();
    let thresholds: Vec<f64> = xs.iter().map(|&x| params.threshold(x)).collect();
    let top = thresholds
        .iter()
        .filter(|t| t.is_finite() && **t <= MAX_SHELL as f64)
        .fold(1.0f64, |a, &b| a.max(b)) as u64
        + SHELL_MARGIN;
    let terms = shell_terms(&params.small, &params.class, 2, params.eta, top);
    let pts: Vec<TailPoint> = xs
        .iter()
        .zip(&thresholds)
        .map(|(&x, &threshold)| {
            let ln_tail = if !threshold.is_finite() || threshold > MAX_SHELL as f64 {
                f64::NAN
            } else {
                let lo = threshold as usize;
                let tail = log_sum(terms[lo..].iter().copied());
                // A sum still growing at the cut-off is not a tail.
                let last = terms[terms.len() - 1];
                if last.is_finite() && last >= terms[lo] {
                    f64::INFINITY
                } else {
                    tail
                }
            };
            TailPoint { x, threshold, ln_tail }
        })
        .collect();
    let (verdict, fit, shape) = judge_tail(&pts);
    TailReport {
        hypothesis: "H4",
        verdict,
        grid: pts,
        fit,
        decay_constant: fit.map_or(f64::NAN, |f| -f.slope),
        shape_exponent: shape,
        parameters: vec![
            pair("small_divisor", &params.small),
            pair("class", &params.class),
            pair("phi", params.phi),
            pair("gamma", params.gamma),
            pair("eta", params.eta),
        ],
    }
}

// ---------------------------------------------------------------------------
// Error budget
// ---------------------------------------------------------------------------

/// Inputs of [`error_budget`] besides `N` and the modes.
#[derive(Clone, Debug)]
pub struct BudgetParams<'a> {
    /// Nonresonance function and constant: `‖k·ρ‖ ≥ α/Δ(‖k‖)`.
    pub h3: H3Params,
    /// `L¹` norms of `w̄⁽ⁿ⁾` and the growth exponent `β`.
    pub growth: &'a L1Growth,
}

/// Per-mode line of the budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetEntry {
    pub k: String,
    pub norm: u64,
    /// `‖k·ρ‖`.
    pub divisor: f64,
    /// `1` for principal modes, `2` for the remainder.
    pub set: u8,
    /// `L₁(k, N)` before capping by the norm table.
    pub l1_order: u64,
    /// Integration-by-parts order attaining the bound.
    pub order: u32,
    /// Bound on `|S_N(k·ρ)|`.
    pub kernel_bound: f64,
}

/// Upper bound on the weighted-average error at one `N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub n: u64,
    /// `Δ^{-1}(2παN/φ(N))`.
    pub threshold: f64,
    /// Bound on the principal sum.
    pub lambda1_bound: f64,
    /// Bound on the remainder sum, including modes beyond the table radius.
    pub lambda2_bound: f64,
    pub total: f64,
    /// `ln` of the remainder integral at `x = N`, as in the (H3) check.
    pub lambda2_integral_ln: f64,
    pub beta: f64,
    pub beta_star: f64,
    pub table: Vec<BudgetEntry>,
}

fn zeta(s: u32) -> f64 {
    let s = s as f64;
    let n = 64.0f64;
    // Euler–Maclaurin: partial sum plus integral and half-term corrections.
    (1..64).map(|k| (k as f64).powf(-s)).sum::<f64>() + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s)
}

/// `ln` bound on `|S_N(x)|` from `L` integrations by parts, with
/// `δ = ‖x‖`; `None` when the normalisation estimate is vacuous.
fn ln_kernel_bound(order: u32, l1: f64, delta: f64, n: f64) -> Option<f64> {
    let l = order as f64;
    let eps = 2.0 * l1 * zeta(order) / (2.0 * PI * n).powf(l);
    if !(eps < 1.0) {
        return None;
    }
    let near = -l * (2.0 * PI * n * delta).ln();
    let far = (PI * PI / 3.0).ln() - l * (PI * n).ln();
    Some(-(1.0 - eps).ln() + l1.ln() + log_add(near, far))
}

/// The principal/remainder split of the weighted-average error at `N`,
/// bounded mode by mode with the variable-order kernel estimate.
///
/// Principal modes (`‖k‖ ≤ threshold`) use the best order in
/// `2..=min(L₁(k,N), n_max)`, remainder modes order 2. The bound uses the
/// actual small divisors of `rotation`, so it is an upper bound for this
/// orbit and not only for the class.
pub fn error_budget(n: u64, table: &ModeTable, rotation: &RotationVector, params: &BudgetParams) -> Result<ErrorBudget> {
    if !matches!(rotation.regime(), Regime::Finite { .. }) {
        return Err(NumericError::Domain("the error budget covers finite tori only".into()));
    }
    let growth = params.growth;
    let beta = growth.beta;
    if !(beta > 0.0) {
        return Err(NumericError::Domain("growth exponent must be positive".into()));
    }
    let h3 = &params.h3;
    let nf = n as f64;
    let threshold = h3.delta.inverse_ln(ln_split(h3.alpha, h3.phi, nf));
    let n_max = growth.max_order();
    let ln_scale = (2.0 * PI * h3.alpha * nf).ln();
    let mut entries = Vec::with_capacity(table.modes.len());
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    for mode in &table.modes {
        let norm = mode.k.l1();
        let divisor = rotation.small_divisor(&mode.k, DivisorMode::Discrete)?.to_f64();
        let principal = (norm as f64) <= threshold;
        // L₁ = ⌊e^{-1}(Δ(‖k‖)/(2παN))^{-1/β}⌋.
        let ln_l1 = -1.0 - (h3.delta.ln_value(norm as f64) - ln_scale) / beta;
        let l1_order = if ln_l1 > 60.0 { u64::MAX } else { ln_l1.exp().floor() as u64 };
        let max_order = if principal {
            if l1_order < 2 {
                return Err(NumericError::BudgetDegenerate(format!("L1 order {l1_order} < 2 for k = {} at N = {n}", mode.k)));
            }
            l1_order.min(n_max as u64) as u32
        } else {
            2
        };
        let mut best = (0.0f64, 2u32);
        for order in 2..=max_order {
            let Some(l1) = growth.norm(order) else { continue };
            if let Some(b) = ln_kernel_bound(order, l1, divisor, nf) {
                if b < best.0 {
                    best = (b, order);
                }
            }
        }
        let ln_coeff = mode.coeff.abs().to_f64().ln() + std::f64::consts::LN_2;
        if principal {
            s1.push(ln_coeff + best.0);
        } else {
            s2.push(ln_coeff + best.0);
        }
        entries.push(BudgetEntry {
            k: mode.k.to_string(),
            norm,
            divisor,
            set: if principal { 1 } else { 2 },
            l1_order,
            order: best.1,
            kernel_bound: best.0.exp(),
        });
    }
    // Modes beyond the table radius are bounded with |S_N| ≤ 1.
    s2.push(table.ln_tail);
    let lambda1_bound = log_sum(s1).exp();
    let lambda2_bound = log_sum(s2).exp();
    Ok(ErrorBudget {
        n,
        threshold,
        lambda1_bound,
        lambda2_bound,
        total: lambda1_bound + lambda2_bound,
        lambda2_integral_ln: h3.ln_tail(nf).1,
        beta,
        beta_star: growth.beta_star(),
        table: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(f: impl Fn(f64) -> f64, ts: &[f64]) -> Vec<GridPoint> {
        ts.iter()
            .map(|&t| GridPoint {
                t,
                ln_err: f(t),
                saturated: false,
            })
            .collect()
    }

    fn pow2(a: u32, b: u32) -> Vec<f64> {
        (a..=b).map(|j| 2f64.powi(j as i32)).collect()
    }

    #[test]
    fn adaptive_grammar() {
        for s in ["log:u=2", "pow:v=0.5", "sqrt"] {
            let f: AdaptiveFunction = s.parse().unwrap();
            let again: AdaptiveFunction = f.to_string().parse().unwrap();
            assert_eq!(f, again);
        }
        for bad in ["pow:v=1", "pow:v=0", "log:u=-1", "exp", "pow:w=0.5"] {
            assert!(bad.parse::<AdaptiveFunction>().is_err(), "{bad}");
        }
        let f = AdaptiveFunction::sqrt();
        assert!((f.value(16.0) - 4.0).abs() < 1e-12);
        let g = AdaptiveFunction::log_pow(2.0).unwrap();
        assert!((g.value(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planted_power_law() {
        let g = grid_from(|t| -3.0 * t.ln(), &pow2(4, 13));
        let fit = fit_rate(&g, ModelHint::PolySlope).unwrap();
        match fit.model {
            FitModel::PolySlope { m, r2, .. } => {
                assert!((m - 3.0).abs() < 1e-12);
                assert!((r2 - 1.0).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        assert_eq!(fit.used.len(), 5);
    }

    #[test]
    fn planted_stretched_law() {
        let g = grid_from(|t| -2.0 * t.sqrt(), &pow2(4, 13));
        match fit_rate(&g, ModelHint::StretchedExp).unwrap().model {
            FitModel::StretchedExp { c, xi, .. } => {
                assert!((xi - 0.5).abs() < 1e-12);
                assert!((c - 2.0).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn saturated_points_are_excluded() {
        let mut g = grid_from(|t| -3.0 * t.ln(), &pow2(4, 13));
        for p in g.iter_mut().skip(5) {
            p.saturated = true;
        }
        assert!(matches!(
            fit_rate(&g, ModelHint::PolySlope),
            Err(NumericError::InsufficientData(_))
        ));
        g[5].saturated = false;
        let fit = fit_rate(&g, ModelHint::PolySlope).unwrap();
        assert!(!fit.used.contains(&g[6].t));
        assert!(fit.excluded.contains(&g[6].t));
    }

    #[test]
    fn log_integral_matches_closed_forms() {
        // ∫_a^∞ e^{-r} = e^{-a}.
        let v = ln_integral_to_infinity(|r| -r, 3.0);
        assert!((v + 3.0).abs() < 1e-10);
        // ∫_a^∞ e^{-r²} at a = 40: erfc asymptotics, ln ≈ -a² - ln(2a) - 1/(2a²)·...
        let a: f64 = 40.0;
        let v = ln_integral_to_infinity(|r| -r * r, a);
        let expect = -a * a - (2.0 * a).ln() + (1.0 - 1.0 / (2.0 * a * a) + 3.0 / (4.0 * a.powi(4))).ln();
        assert!((v - expect).abs() < 1e-8, "{v} vs {expect}");
        // ∫_1^∞ r^{-3} = 1/2.
        let v = ln_integral_to_infinity(|r| -3.0 * r.ln(), 1.0);
        assert!((v - 0.5f64.ln()).abs() < 1e-6, "{v}");
        // ∫_1^∞ r^{-1} diverges.
        assert_eq!(ln_integral_to_infinity(|r| -r.ln(), 1.0), f64::INFINITY);
    }

    #[test]
    fn h1_examples() {
        let pow = ApproximationFunction::power;
        assert_eq!(check_h1(&pow(1.2), &pow(4.0), 2, 1).verdict, Verdict::Converges);
        assert_eq!(check_h1(&pow(1.2), &pow(3.0), 2, 1).verdict, Verdict::Diverges);
        let sexp = ApproximationFunction::stretched_exp;
        let r = check_h1(&sexp(0.3, 0.5), &sexp(1.0, 0.5), 2, 3);
        assert_eq!(r.verdict, Verdict::Converges);
        assert_eq!(check_h1(&sexp(0.6, 0.5), &sexp(1.0, 0.5), 2, 3).verdict, Verdict::Diverges);
    }

    #[test]
    fn h1_integral_value() {
        // ∫₁^∞ r^{2·1.2 - 4} dr = 1/0.6 for d = 1.
        let r = check_h1(&ApproximationFunction::power(1.2), &ApproximationFunction::power(4.0), 2, 1);
        let v = r.ln_integral.unwrap().exp();
        assert!((v - 1.0 / 0.6).abs() < 1e-5, "{v}");
    }

    #[test]
    fn h1_borderline_is_divergent() {
        let pow = ApproximationFunction::power;
        // d + mτ = 1 + 2 = 3 exactly.
        let r = check_h1(&pow(1.0), &pow(3.0), 2, 1);
        assert_eq!(r.verdict, Verdict::Diverges);
    }

    #[test]
    fn h2_examples() {
        let dio = ApproximationFunction::dioph_product(2.0, 2);
        let e_x = ApproximationFunction::stretched_exp(1.0, 1.0);
        let r = check_h2(&dio, &e_x, 2, 2, 48);
        assert_eq!(r.verdict, Verdict::Converges, "{r:?}");
        assert!(r.max_ratio < 1.0);
        let r = check_h2(&dio, &ApproximationFunction::power(2.0), 2, 2, 48);
        assert_eq!(r.verdict, Verdict::Diverges);
        let r = check_h2(&dio, &e_x, 2, 2, 5);
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn h2_shell_terms_match_enumeration() {
        use crate::lattice::enumerate_ball_eta;
        use crate::rotations::dioph_product_ln;
        let terms = shell_terms(
            &ApproximationFunction::dioph_product(2.0, 2),
            &ApproximationFunction::stretched_exp(1.0, 1.0),
            2,
            2,
            12,
        );
        let mut brute = [0.0f64; 13];
        for k in enumerate_ball_eta(2, 12) {
            let nu = k.eta_norm(2) as usize;
            brute[nu] += (2.0 * dioph_product_ln(&k, 2.0) - nu as f64).exp();
        }
        for nu in 1..=12 {
            assert!((terms[nu].exp() / brute[nu] - 1.0).abs() < 1e-12, "shell {nu}");
        }
    }

    #[test]
    fn h3_polynomial_class_fails() {
        let p = H3Params {
            delta: ApproximationFunction::power(1.2),
            delta_tilde: ApproximationFunction::power(8.0),
            phi: AdaptiveFunction::sqrt(),
            alpha: 0.4,
            d: 1,
        };
        let r = check_h3(&p, XGrid::default());
        assert_eq!(r.verdict, Verdict::Fails);
    }

    #[test]
    fn verdicts_serialise_lowercase() {
        let r = check_h1(&ApproximationFunction::power(1.2), &ApproximationFunction::power(4.0), 2, 1);
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"verdict\":\"converges\""), "{s}");
    }
}
