//! Rotation vectors, approximation functions and small divisors.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rug::ops::Pow;
use rug::{Float, Integer};
use serde::Serialize;

use crate::error::{NumericError, Result};
use crate::lattice::{bracket_pow, enumerate_ball_finite, eta_weights, shell_log_max, BallIter, Dim, MultiIndex};
use crate::numeric::{dist_to_int, frac, parse_real, ExtReal, Precision};
use crate::weights::{check_known, param, split_spec};

/// Whether the average runs over an orbit (`n ∈ Z`) or a flow (`t ∈ R`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DivisorMode {
    /// `dist(k·ρ, Z)`.
    Discrete,
    /// `|k·ρ|`.
    Continuous,
}

/// Family of an approximation function.
#[derive(Clone, Debug, PartialEq)]
pub enum ApproxKind {
    /// `x^τ`.
    Power { tau: f64 },
    /// `e^{μ x^ν}`.
    StretchedExp { mu: f64, nu: f64 },
    /// `e^{e^{μ x}}`.
    DoubleExp { mu: f64 },
    /// `Π_j (1 + |k_j|^μ ⟨j⟩^μ)`; as a function of the norm, the largest
    /// product over the shell `|k|_η = ν`.
    DiophProduct { mu: f64, eta: u32 },
    /// Piecewise log-linear interpolation of strictly increasing samples.
    Tabulated { xs: Vec<f64>, ln_ys: Vec<f64> },
}

/// A continuous, strictly increasing, unbounded function used to bound small
/// divisors from below or Fourier coefficients from above.
#[derive(Clone, Debug)]
pub struct ApproximationFunction {
    kind: ApproxKind,
    /// Lazily grown table of `ln max_{|k|_η = ν} 𝚍(k)` for the product kind.
    envelope: Arc<Mutex<Vec<f64>>>,
}

impl PartialEq for ApproximationFunction {
    fn eq(&self, o: &Self) -> bool {
        self.kind == o.kind
    }
}

impl ApproximationFunction {
    pub fn new(kind: ApproxKind) -> Result<Self> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let ok = match &kind {
            ApproxKind::Power { tau } => positive(*tau),
            ApproxKind::StretchedExp { mu, nu } => positive(*mu) && positive(*nu),
            ApproxKind::DoubleExp { mu } => positive(*mu),
            ApproxKind::DiophProduct { mu, eta } => positive(*mu) && *eta >= 1,
            ApproxKind::Tabulated { xs, ln_ys } => {
                xs.len() >= 2
                    && xs.len() == ln_ys.len()
                    && xs.windows(2).all(|w| w[1] > w[0])
                    && ln_ys.windows(2).all(|w| w[1] > w[0])
            }
        };
        if !ok {
            return Err(NumericError::Parse(format!("invalid approximation function {kind:?}")));
        }
        Ok(ApproximationFunction {
            kind,
            envelope: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn power(tau: f64) -> Self {
        ApproximationFunction::new(ApproxKind::Power { tau }).expect("positive exponent")
    }

    pub fn stretched_exp(mu: f64, nu: f64) -> Self {
        ApproximationFunction::new(ApproxKind::StretchedExp { mu, nu }).expect("positive parameters")
    }

    pub fn double_exp(mu: f64) -> Self {
        ApproximationFunction::new(ApproxKind::DoubleExp { mu }).expect("positive parameter")
    }

    pub fn dioph_product(mu: f64, eta: u32) -> Self {
        ApproximationFunction::new(ApproxKind::DiophProduct { mu, eta }).expect("positive parameters")
    }

    pub fn kind(&self) -> &ApproxKind {
        &self.kind
    }

    /// Natural log of the function value.
    pub fn ln_value(&self, x: f64) -> f64 {
        match &self.kind {
            ApproxKind::Power { tau } => tau * x.ln(),
            ApproxKind::StretchedExp { mu, nu } => mu * x.powf(*nu),
            ApproxKind::DoubleExp { mu } => (mu * x).exp(),
            ApproxKind::DiophProduct { .. } => {
                let nu = x.round().max(0.0) as u64;
                self.envelope_ln(nu)
            }
            ApproxKind::Tabulated { xs, ln_ys } => {
                let i = match xs.iter().position(|&t| t > x) {
                    Some(0) => 0,
                    Some(i) => i - 1,
                    None => xs.len() - 2,
                };
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ln_ys[i] + t * (ln_ys[i + 1] - ln_ys[i])
            }
        }
    }

    /// Shift making the function equal to 1 at `x = 1`.
    fn unit_shift(&self) -> f64 {
        self.ln_value(1.0)
    }

    /// Log of the rescaled function `Δ(x)/Δ(1)`, used where the small-divisor
    /// estimates require `Δ(1) = 1`.
    pub fn ln_value_unit(&self, x: f64) -> f64 {
        self.ln_value(x) - self.unit_shift()
    }

    pub fn value(&self, x: f64) -> f64 {
        self.ln_value(x).exp()
    }

    /// Extended-precision value of the unit-normalised function.
    pub fn value_unit_ext(&self, x: &ExtReal, prec: Precision) -> ExtReal {
        match &self.kind {
            ApproxKind::Power { tau } => x.clone().pow(&prec.real(*tau)),
            ApproxKind::StretchedExp { mu, nu } => {
                let t = x.clone().pow(&prec.real(*nu)) - 1u32;
                (t * prec.real(*mu)).exp()
            }
            ApproxKind::DoubleExp { mu } => {
                let a = (x.clone() * prec.real(*mu)).exp();
                let b = prec.real(*mu).exp();
                (a - b).exp()
            }
            _ => prec.real(self.ln_value_unit(x.to_f64())).exp(),
        }
    }

    /// Smallest `x` with `ln f(x) ≥ ln_y`.
    pub fn inverse_ln(&self, ln_y: f64) -> f64 {
        match &self.kind {
            ApproxKind::Power { tau } => (ln_y / tau).exp(),
            ApproxKind::StretchedExp { mu, nu } => (ln_y.max(0.0) / mu).powf(1.0 / nu),
            ApproxKind::DoubleExp { mu } => {
                if ln_y <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    ln_y.ln() / mu
                }
            }
            ApproxKind::DiophProduct { .. } => {
                let nu;
                let mut hi = 64u64;
                loop {
                    self.envelope_ln(hi);
                    let table = self.envelope.lock().expect("envelope cache poisoned");
                    if let Some(pos) = table.iter().position(|&v| v >= ln_y) {
                        nu = pos as u64;
                        break;
                    }
                    drop(table);
                    if hi > 1 << 14 {
                        nu = u64::MAX;
                        break;
                    }
                    hi *= 2;
                }
                nu as f64
            }
            ApproxKind::Tabulated { xs, ln_ys } => {
                let i = match ln_ys.iter().position(|&t| t > ln_y) {
                    Some(0) => 0,
                    Some(i) => i - 1,
                    None => ln_ys.len() - 2,
                };
                let t = (ln_y - ln_ys[i]) / (ln_ys[i + 1] - ln_ys[i]);
                xs[i] + t * (xs[i + 1] - xs[i])
            }
        }
    }

    /// Inverse of the unit-normalised function.
    pub fn inverse_unit_ln(&self, ln_y: f64) -> f64 {
        self.inverse_ln(ln_y + self.unit_shift())
    }

    /// `ln max_{|k|_η = ν} Π_j(1 + |k_j|^μ⟨j⟩^μ)`, grown on demand.
    fn envelope_ln(&self, nu: u64) -> f64 {
        let (mu, eta) = match &self.kind {
            ApproxKind::DiophProduct { mu, eta } => (*mu, *eta),
            _ => return f64::NAN,
        };
        let mut table = self.envelope.lock().expect("envelope cache poisoned");
        if (nu as usize) >= table.len() {
            let bound = (nu + 1).max(2 * table.len() as u64).max(32);
            let weights = eta_weights(eta, bound, None);
            *table = shell_log_max(&weights, bound, |j, v| dioph_factor_ln(j, v, mu));
            // The empty shell `ν = 0` is the zero index with product 1.
            table[0] = 0.0;
        }
        table[nu as usize]
    }

    /// Whether evaluation depends on the full multi-index rather than its norm.
    pub fn is_per_index(&self) -> bool {
        matches!(self.kind, ApproxKind::DiophProduct { .. })
    }

    /// `ln 𝚍(k)` for the product kind; `ln f(‖k‖)` otherwise.
    pub fn ln_value_index(&self, k: &MultiIndex) -> f64 {
        match &self.kind {
            ApproxKind::DiophProduct { mu, .. } => dioph_product_ln(k, *mu),
            _ => self.ln_value(k.l1() as f64),
        }
    }
}

/// `ln(1 + v^μ ⟨j⟩^μ)`.
pub fn dioph_factor_ln(j: usize, v: u64, mu: f64) -> f64 {
    ((v as f64).powf(mu) * (bracket_pow(j, 1) as f64).powf(mu)).ln_1p()
}

/// `ln Π_j (1 + |k_j|^μ ⟨j⟩^μ)`.
pub fn dioph_product_ln(k: &MultiIndex, mu: f64) -> f64 {
    k.entries()
        .iter()
        .map(|&(j, v)| dioph_factor_ln(j, v.unsigned_abs(), mu))
        .sum()
}

impl fmt::Display for ApproximationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ApproxKind::Power { tau } => write!(f, "pow:tau={tau}"),
            ApproxKind::StretchedExp { mu, nu } => write!(f, "sexp:mu={mu},nu={nu}"),
            ApproxKind::DoubleExp { mu } => write!(f, "dexp:mu={mu}"),
            ApproxKind::DiophProduct { mu, eta } => write!(f, "dioprod:mu={mu},eta={eta}"),
            ApproxKind::Tabulated { xs, ln_ys } => {
                let parts: Vec<String> = xs
                    .iter()
                    .zip(ln_ys)
                    .map(|(x, l)| format!("{x}={}", l.exp()))
                    .collect();
                write!(f, "table:{}", parts.join(";"))
            }
        }
    }
}

impl FromStr for ApproximationFunction {
    type Err = NumericError;

    /// Grammar: `pow:tau=<r> | sexp:mu=<r>,nu=<r> | dexp:mu=<r> |
    /// dioprod:mu=<r>,eta=<int> | table:<x>=<y>;<x>=<y>;...`.
    fn from_str(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if let Some(rest) = spec.strip_prefix("table:") {
            let mut xs = Vec::new();
            let mut ln_ys = Vec::new();
            for pair in rest.split(';').filter(|s| !s.trim().is_empty()) {
                let (x, y) = pair
                    .split_once('=')
                    .ok_or_else(|| NumericError::Parse(format!("{spec}: expected x=y")))?;
                let x: f64 = x.trim().parse().map_err(|_| NumericError::Parse(spec.into()))?;
                let y: f64 = y.trim().parse().map_err(|_| NumericError::Parse(spec.into()))?;
                if y <= 0.0 {
                    return Err(NumericError::Parse(format!("{spec}: values must be positive")));
                }
                xs.push(x);
                ln_ys.push(y.ln());
            }
            return ApproximationFunction::new(ApproxKind::Tabulated { xs, ln_ys });
        }
        let (name, params) = split_spec(spec);
        let kind = match name.as_str() {
            "pow" => {
                check_known(spec, &params, &["tau"])?;
                ApproxKind::Power {
                    tau: param(spec, &params, "tau")?,
                }
            }
            "sexp" => {
                check_known(spec, &params, &["mu", "nu"])?;
                ApproxKind::StretchedExp {
                    mu: param(spec, &params, "mu")?,
                    nu: param(spec, &params, "nu")?,
                }
            }
            "dexp" => {
                check_known(spec, &params, &["mu"])?;
                let mu = if params.is_empty() { 1.0 } else { param(spec, &params, "mu")? };
                ApproxKind::DoubleExp { mu }
            }
            "dioprod" => {
                check_known(spec, &params, &["mu", "eta"])?;
                ApproxKind::DiophProduct {
                    mu: param(spec, &params, "mu")?,
                    eta: param(spec, &params, "eta")?,
                }
            }
            _ => return Err(NumericError::Parse(format!("unknown approximation function `{spec}`"))),
        };
        ApproximationFunction::new(kind).map_err(|_| NumericError::Parse(format!("{spec}: parameters out of range")))
    }
}

/// Finite torus or a finite truncation of the infinite torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    Finite { d: usize },
    InfiniteTruncated { dims: usize, eta: u32 },
}

impl Regime {
    pub fn coordinates(&self) -> usize {
        match *self {
            Regime::Finite { d } => d,
            Regime::InfiniteTruncated { dims, .. } => dims,
        }
    }

    /// Lattice dimension tag for multi-indices on this torus.
    pub fn lattice_dim(&self) -> Dim {
        match *self {
            Regime::Finite { d } => Dim::Finite(d),
            Regime::InfiniteTruncated { .. } => Dim::Infinite,
        }
    }
}

/// Scan-verified nonresonance constant attached to a rotation.
#[derive(Clone, Debug)]
pub struct NonresMeta {
    pub constant: ExtReal,
    pub approx: ApproximationFunction,
    pub radius: u64,
    pub mode: DivisorMode,
}

/// A rotation vector on `T^d` (coordinates in `[0,1)`) or on a truncation of
/// `T^∞` (coordinates in `[1,2]`).
#[derive(Clone, Debug)]
pub struct RotationVector {
    coords: Vec<ExtReal>,
    regime: Regime,
    prec: Precision,
    label: String,
    meta: Option<NonresMeta>,
}

impl RotationVector {
    pub fn new(coords: Vec<ExtReal>, regime: Regime, prec: Precision, label: impl Into<String>) -> Result<Self> {
        if coords.is_empty() || coords.len() != regime.coordinates() {
            return Err(NumericError::Dimension(format!(
                "{} coordinates for regime {regime:?}",
                coords.len()
            )));
        }
        let coords: Vec<ExtReal> = match regime {
            Regime::Finite { .. } => coords.iter().map(frac).collect(),
            Regime::InfiniteTruncated { .. } => {
                for c in &coords {
                    if *c < 1u32 || *c > 2u32 {
                        return Err(NumericError::Domain(format!(
                            "infinite-torus coordinate {} outside [1, 2]",
                            c.to_f64()
                        )));
                    }
                }
                coords
            }
        };
        Ok(RotationVector {
            coords: coords.into_iter().map(|c| Float::with_val(prec.bits(), c)).collect(),
            regime,
            prec,
            label: label.into(),
            meta: None,
        })
    }

    pub fn coords(&self) -> &[ExtReal] {
        &self.coords
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn meta(&self) -> Option<&NonresMeta> {
        self.meta.as_ref()
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }

    /// Records a scan result as the rotation's nonresonance claim.
    pub fn attach_scan(&mut self, scan: &ScanResult, approx: ApproximationFunction) {
        self.meta = Some(NonresMeta {
            constant: scan.constant.clone(),
            approx,
            radius: scan.radius,
            mode: scan.mode,
        });
    }

    fn check_support(&self, k: &MultiIndex) -> Result<()> {
        if let Some(j) = k.max_index() {
            if j >= self.coords.len() {
                return Err(NumericError::SupportMismatch {
                    index: j,
                    dim: self.coords.len(),
                });
            }
        }
        Ok(())
    }

    /// Exact `k·ρ` (the integer products are exact at the widened precision).
    pub fn dot(&self, k: &MultiIndex) -> Result<ExtReal> {
        self.check_support(k)?;
        let wide = self.prec.bits() + 96;
        let mut acc = Float::new(wide);
        for &(j, v) in k.entries() {
            acc += Float::with_val(wide, &self.coords[j] * v);
        }
        Ok(acc)
    }

    /// `dist(k·ρ, Z)` or `|k·ρ|`.
    pub fn small_divisor(&self, k: &MultiIndex, mode: DivisorMode) -> Result<ExtReal> {
        let dot = self.dot(k)?;
        let r = match mode {
            DivisorMode::Discrete => dist_to_int(&dot),
            DivisorMode::Continuous => dot.abs(),
        };
        Ok(Float::with_val(self.prec.bits(), r))
    }

    /// Indices enumerated by a scan of radius `K` for the given approximation function.
    pub fn scan_indices(&self, approx: &ApproximationFunction, k_max: u64) -> BallIter {
        let n = self.coords.len();
        match approx.kind() {
            ApproxKind::DiophProduct { eta, .. } => {
                BallIter::new(eta_weights(*eta, k_max, Some(n)), k_max, self.regime.lattice_dim())
            }
            _ => match self.regime {
                Regime::Finite { d } => enumerate_ball_finite(d, k_max),
                Regime::InfiniteTruncated { .. } => BallIter::new(vec![1; n], k_max, Dim::Infinite),
            },
        }
    }
}

/// Empirical nonresonance constant over a finite radius.
#[derive(Clone, Debug)]
pub struct ScanResult {
    /// `min_k Δ(k)·small_divisor(ρ, k)` over the scanned indices.
    pub constant: ExtReal,
    pub argmin: MultiIndex,
    pub radius: u64,
    pub mode: DivisorMode,
    pub scanned: u64,
}

/// Minimises `Δ(‖k‖)·dist(k·ρ, Z)` (or the continuous analogue) over
/// `0 ≠ k` with `‖k‖ ≤ K`; for the product function the weight is `𝚍(k)` and
/// the ball is `|k|_η ≤ K`.
pub fn nonresonance_scan(
    rho: &RotationVector,
    approx: &ApproximationFunction,
    k_max: u64,
    mode: DivisorMode,
) -> Result<ScanResult> {
    if k_max == 0 {
        return Err(NumericError::Domain("scan radius must be at least 1".into()));
    }
    let prec = rho.precision();
    let mut best: Option<(ExtReal, MultiIndex)> = None;
    let mut scanned = 0u64;
    for k in rho.scan_indices(approx, k_max) {
        scanned += 1;
        let sd = rho.small_divisor(&k, mode)?;
        let factor = if approx.is_per_index() {
            prec.real(approx.ln_value_index(&k)).exp()
        } else {
            approx.value_unit_ext(&prec.real(k.l1()), prec)
        };
        let v = sd * factor;
        let better = match &best {
            None => true,
            Some((b, _)) => v < *b,
        };
        if better {
            best = Some((v, k));
        }
    }
    let (constant, argmin) = best.ok_or_else(|| NumericError::Domain("empty scan".into()))?;
    Ok(ScanResult {
        constant,
        argmin,
        radius: k_max,
        mode,
        scanned,
    })
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// `(√5 - 1)/2`.
pub fn golden(prec: Precision) -> ExtReal {
    (prec.real(5u32).sqrt() - 1u32) / 2u32
}

const MAX_DIMS: usize = 4096;

fn parse_dims(spec: &str, params: &[(String, String)], key: &str) -> Result<usize> {
    let n: usize = param(spec, params, key)?;
    if n == 0 || n > MAX_DIMS {
        return Err(NumericError::Dimension(format!("{spec}: {key} must be in 1..={MAX_DIMS}")));
    }
    Ok(n)
}

/// 256 random bits from the stream as a dyadic fraction in `[0, 1)`.
fn uniform_unit(rng: &mut ChaCha8Rng, prec: Precision) -> ExtReal {
    let mut acc = Integer::new();
    for _ in 0..4 {
        acc <<= 64;
        acc += rng.next_u64();
    }
    Float::with_val(prec.bits(), acc) >> 256
}

/// Builds a rotation from its spec string.
///
/// Grammar: `golden | sqrtprimes:d=<int> | sqrtprimes:D=<int>[,eta=<int>] |
/// list:<r>,<r>,... | uniform:D=<int>,seed=<int>[,eta=<int>]`.
///
/// `uniform` draws each coordinate as `1 + u` with `u` formed from four
/// consecutive 64-bit outputs of ChaCha8 seeded by `seed` (most significant
/// word first), so the sample is a 256-bit dyadic rational.
pub fn make_rotation(spec: &str, prec: Precision) -> Result<RotationVector> {
    let spec = spec.trim();
    if spec == "golden" {
        return RotationVector::new(vec![golden(prec)], Regime::Finite { d: 1 }, prec, spec);
    }
    if let Some(rest) = spec.strip_prefix("list:") {
        let coords = rest
            .split(',')
            .map(|s| parse_real(s, prec))
            .collect::<Result<Vec<_>>>()?;
        if coords.is_empty() {
            return Err(NumericError::Dimension(format!("{spec}: empty list")));
        }
        let d = coords.len();
        return RotationVector::new(coords, Regime::Finite { d }, prec, spec);
    }
    let (name, params) = split_spec(spec);
    match name.as_str() {
        "sqrtprimes" => {
            check_known(spec, &params, &["d", "D", "eta"])?;
            let has = |k: &str| params.iter().any(|(p, _)| p == k);
            if has("d") == has("D") {
                return Err(NumericError::Parse(format!("{spec}: give exactly one of d= or D=")));
            }
            if has("d") {
                if has("eta") {
                    return Err(NumericError::Parse(format!("{spec}: eta applies to D= only")));
                }
                let d = parse_dims(spec, &params, "d")?;
                let coords = primes(d).into_iter().map(|p| frac(&prec.real(p).sqrt())).collect();
                RotationVector::new(coords, Regime::Finite { d }, prec, spec)
            } else {
                let dims = parse_dims(spec, &params, "D")?;
                let eta = if has("eta") { param(spec, &params, "eta")? } else { 2 };
                let coords = primes(dims)
                    .into_iter()
                    .map(|p| frac(&prec.real(p).sqrt()) + 1u32)
                    .collect();
                RotationVector::new(coords, Regime::InfiniteTruncated { dims, eta }, prec, spec)
            }
        }
        "uniform" => {
            check_known(spec, &params, &["D", "seed", "eta"])?;
            let dims = parse_dims(spec, &params, "D")?;
            let seed: u64 = param(spec, &params, "seed")?;
            let eta = if params.iter().any(|(k, _)| k == "eta") {
                param(spec, &params, "eta")?
            } else {
                2
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coords = (0..dims).map(|_| uniform_unit(&mut rng, prec) + 1u32).collect();
            RotationVector::new(coords, Regime::InfiniteTruncated { dims, eta }, prec, spec)
        }
        _ => Err(NumericError::Parse(format!("unknown rotation `{spec}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> Precision {
        Precision::new(40)
    }

    #[test]
    fn named_rotations() {
        let g = make_rotation("golden", p()).unwrap();
        assert!((g.coords()[0].to_f64() - 0.618_033_988_749_895).abs() < 1e-15);
        let s = make_rotation("sqrtprimes:d=2", p()).unwrap();
        assert!((s.coords()[0].to_f64() - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((s.coords()[1].to_f64() - (3f64.sqrt() - 1.0)).abs() < 1e-15);
        let inf = make_rotation("sqrtprimes:D=3", p()).unwrap();
        assert_eq!(inf.regime(), Regime::InfiniteTruncated { dims: 3, eta: 2 });
        assert!((inf.coords()[2].to_f64() - (5f64.sqrt() - 1.0)).abs() < 1e-15);
        let l = make_rotation("list:1.25,-0.25", p()).unwrap();
        assert_eq!(l.coords()[0].to_f64(), 0.25);
        assert_eq!(l.coords()[1].to_f64(), 0.75);
    }

    #[test]
    fn uniform_is_deterministic() {
        let a = make_rotation("uniform:D=6,seed=42", p()).unwrap();
        let b = make_rotation("uniform:D=6,seed=42", p()).unwrap();
        let c = make_rotation("uniform:D=6,seed=43", p()).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_ne!(a.coords(), c.coords());
        for x in a.coords() {
            assert!(*x >= 1u32 && *x <= 2u32);
        }
    }

    #[test]
    fn bad_rotation_specs() {
        for bad in ["", "silver", "sqrtprimes:d=0", "sqrtprimes:d=2,D=3", "uniform:D=3", "list:", "list:a"] {
            assert!(make_rotation(bad, p()).is_err(), "{bad}");
        }
        assert!(matches!(
            make_rotation("sqrtprimes:d=0", p()),
            Err(NumericError::Dimension(_))
        ));
    }

    #[test]
    fn small_divisor_examples() {
        let half = make_rotation("list:0.5", p()).unwrap();
        let k2 = MultiIndex::from_dense(&[2]);
        assert!(half.small_divisor(&k2, DivisorMode::Discrete).unwrap().is_zero());
        let g = make_rotation("golden", p()).unwrap();
        let k1 = MultiIndex::from_dense(&[1]);
        let sd = g.small_divisor(&k1, DivisorMode::Discrete).unwrap();
        assert!((sd.to_f64() - 0.381_966_011_250_105_1).abs() < 1e-15);
        let zero = MultiIndex::zero(Dim::Finite(1));
        assert!(g.small_divisor(&zero, DivisorMode::Continuous).unwrap().is_zero());
        let far = MultiIndex::from_dense(&[0, 1]);
        assert!(matches!(
            g.small_divisor(&far, DivisorMode::Discrete),
            Err(NumericError::SupportMismatch { .. })
        ));
    }

    #[test]
    fn approximation_grammar() {
        for s in ["pow:tau=1.2", "sexp:mu=1,nu=0.5", "dexp:mu=1", "dioprod:mu=2,eta=2", "table:1=1;2=4;3=9"] {
            let a: ApproximationFunction = s.parse().unwrap();
            let b: ApproximationFunction = a.to_string().parse().unwrap();
            assert_eq!(a, b, "{s}");
        }
        for bad in ["pow", "pow:tau=-1", "sexp:mu=1", "table:1=2;1=3", "foo:x=1"] {
            assert!(bad.parse::<ApproximationFunction>().is_err(), "{bad}");
        }
    }

    #[test]
    fn inverses_invert() {
        for s in ["pow:tau=1.2", "sexp:mu=0.7,nu=0.5", "dexp:mu=1", "table:1=1;2=4;3=9"] {
            let a: ApproximationFunction = s.parse().unwrap();
            for x in [1.5, 2.0, 2.5] {
                let back = a.inverse_ln(a.ln_value(x));
                assert!((back - x).abs() < 1e-9, "{s} at {x}: {back}");
                let back = a.inverse_unit_ln(a.ln_value_unit(x));
                assert!((back - x).abs() < 1e-9, "{s} unit at {x}: {back}");
            }
        }
        let d = ApproximationFunction::dioph_product(2.0, 2);
        for nu in [1u64, 5, 17, 40] {
            let y = d.ln_value(nu as f64);
            assert_eq!(d.inverse_ln(y), nu as f64);
        }
    }

    #[test]
    fn unit_normalisation() {
        let s = ApproximationFunction::stretched_exp(2.0, 0.5);
        assert!(s.ln_value_unit(1.0).abs() < 1e-15);
        let v = s.value_unit_ext(&p().real(1u32), p());
        assert!((v.to_f64() - 1.0).abs() < 1e-30);
    }

    #[test]
    fn golden_scan_minimum_is_first_convergent() {
        let g = make_rotation("golden", Precision::new(30)).unwrap();
        let r = nonresonance_scan(&g, &ApproximationFunction::power(1.0), 100, DivisorMode::Discrete).unwrap();
        assert!((r.constant.to_f64() - 0.381_966_011_250_105).abs() < 1e-14);
        assert_eq!(r.argmin.get(0).abs(), 1);
        let half = make_rotation("list:0.5", Precision::new(30)).unwrap();
        let r = nonresonance_scan(&half, &ApproximationFunction::power(1.0), 3, DivisorMode::Discrete).unwrap();
        assert!(r.constant.is_zero());
    }

    #[test]
    fn scan_is_monotone_in_radius() {
        let s = make_rotation("sqrtprimes:d=2", Precision::new(30)).unwrap();
        let a = ApproximationFunction::power(1.5);
        let mut last = f64::INFINITY;
        for k in [1u64, 2, 4, 8, 16, 32] {
            let r = nonresonance_scan(&s, &a, k, DivisorMode::Discrete).unwrap();
            let v = r.constant.to_f64();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn product_envelope_is_increasing_and_subexponential() {
        let d = ApproximationFunction::dioph_product(2.0, 2);
        let mut prev = 0.0;
        for nu in 1..=200u64 {
            let v = d.ln_value(nu as f64);
            assert!(v > prev);
            prev = v;
        }
        // ln 𝚍(ν) − ρ★ν is bounded above for each ρ★ > 0 and eventually decreasing.
        for rho_star in [0.5, 1.0] {
            let g: Vec<f64> = (1..=200u64).map(|nu| d.ln_value(nu as f64) - rho_star * nu as f64).collect();
            let peak = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let at = g.iter().position(|&v| v == peak).unwrap();
            assert!(at < 150, "peak at {at} for {rho_star}");
            assert!(g[199] < peak);
        }
    }
}
