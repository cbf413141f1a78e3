//! Observables defined by explicit Fourier coefficient rules.
//!
//! Every rule observable has mean `f̂₀ = 1` and coefficients
//! `f̂_k = |f̂_k| e^{2πiσ(k)}` for canonical `k` (first nonzero entry
//! positive), with `f̂_{-k} = conj(f̂_k)` so the function is real. The phase
//! `σ(k)` is a SplitMix64 hash of the entries of the canonical index,
//! truncated to a 53-bit dyadic fraction; `phase=unit` sets it to zero.

use std::fmt;

use rand::{Rng, SeedableRng};
use rug::ops::Pow;
use rand_chacha::ChaCha8Rng;
use rug::Float;
use serde::Serialize;

use crate::error::{NumericError, Result};
use crate::lattice::{bracket_pow, shell_counts, BallIter, MultiIndex};
use crate::numeric::{parse_real, ExtComplex, ExtReal, Precision};
use crate::rotations::{ApproximationFunction, Regime};
use crate::weights::{check_known, param, split_spec};

/// Largest number of canonical modes an evaluation may hold.
pub const MAX_MODES: f64 = 4.0e6;

/// Decay rule for the coefficient moduli.
#[derive(Clone, Debug, PartialEq)]
pub enum DecayRule {
    /// Explicit Hermitian coefficient list.
    TrigPoly,
    /// `‖k‖^{-M}`.
    PolyDecay { m: f64 },
    /// `e^{-μ‖k‖}`.
    Analytic { mu: f64 },
    /// `e^{-μ‖k‖^ν}`.
    Gevrey { mu: f64, nu: f64 },
    /// `e^{-μ|k|_η}`.
    EtaAnalytic { mu: f64 },
    /// `e^{-e^{|k|_η}}`.
    DoubleExp,
}

impl DecayRule {
    fn uses_eta(&self) -> bool {
        matches!(self, DecayRule::EtaAnalytic { .. } | DecayRule::DoubleExp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PhaseRule {
    Hashed,
    Unit,
}

/// A Fourier mode with canonical index.
#[derive(Clone, Debug)]
pub struct Mode {
    pub k: MultiIndex,
    pub coeff: ExtComplex,
}

/// Canonical modes up to a radius plus a bound on everything beyond it.
#[derive(Clone, Debug)]
pub struct ModeTable {
    pub modes: Vec<Mode>,
    pub mean: ExtComplex,
    pub radius: u64,
    /// Upper bound on `ln Σ_{norm > radius} |f̂_k|`; `-∞` for finite support.
    pub ln_tail: f64,
}

impl ModeTable {
    /// `Σ_{k≠0} |f̂_k|` over the stored modes (both signs).
    pub fn abs_sum(&self) -> f64 {
        2.0 * self.modes.iter().map(|m| m.coeff.abs().to_f64()).sum::<f64>()
    }

    /// `Σ_{k≠0} |f̂_k| ‖k‖₁` over the stored modes (both signs).
    pub fn weighted_abs_sum(&self) -> f64 {
        2.0 * self
            .modes
            .iter()
            .map(|m| m.coeff.abs().to_f64() * m.k.l1() as f64)
            .sum::<f64>()
    }

    /// Largest `|k_j|` per coordinate, for power tables.
    pub fn max_entries(&self, coords: usize) -> Vec<u64> {
        let mut out = vec![0u64; coords];
        for m in &self.modes {
            for &(j, v) in m.k.entries() {
                out[j] = out[j].max(v.unsigned_abs());
            }
        }
        out
    }
}

/// `e(θ_j)^v` for `0 ≤ v ≤ max_j`, per coordinate.
pub struct PowerTable {
    pows: Vec<Vec<ExtComplex>>,
}

impl PowerTable {
    pub fn new(theta: &[ExtReal], max_entries: &[u64], prec: Precision) -> Self {
        let pows = theta
            .iter()
            .zip(max_entries)
            .map(|(t, &m)| {
                let base = ExtComplex::cis_turns(t, prec);
                let mut row = Vec::with_capacity(m as usize + 1);
                row.push(ExtComplex::one(prec));
                for v in 1..=m as usize {
                    let next = &row[v - 1] * &base;
                    row.push(next);
                }
                row
            })
            .collect();
        PowerTable { pows }
    }

    /// `e(k·θ)`.
    pub fn character(&self, k: &MultiIndex, prec: Precision) -> ExtComplex {
        let mut acc: Option<ExtComplex> = None;
        for &(j, v) in k.entries() {
            let p = &self.pows[j][v.unsigned_abs() as usize];
            let p = if v < 0 { p.conj() } else { p.clone() };
            acc = Some(match acc {
                None => p,
                Some(a) => &a * &p,
            });
        }
        acc.unwrap_or_else(|| ExtComplex::one(prec))
    }
}

/// A real-valued function on the torus given by its Fourier coefficients.
#[derive(Clone, Debug)]
pub struct Observable {
    rule: DecayRule,
    phase: PhaseRule,
    regime: Regime,
    eta: u32,
    prec: Precision,
    mean: ExtComplex,
    /// Canonical explicit modes (trigonometric polynomials only).
    explicit: Vec<Mode>,
    label: String,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `σ(k) ∈ [0,1)` for a canonical index, as an exact multiple of `2^{-53}`.
pub fn phase_hash(k: &MultiIndex) -> f64 {
    let mut h = 0x5EED_u64;
    for &(j, v) in k.entries() {
        h = splitmix64(h ^ j as u64);
        h = splitmix64(h ^ v as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// `ln(1 + e^{-x}) - ln(1 - e^{-x})`, the log of `Σ_{v∈Z} e^{-x|v|}`.
fn ln_two_sided_geometric(x: f64) -> f64 {
    (-x).exp().ln_1p() - (-(-x).exp_m1()).ln()
}

/// Chernoff bound `ln Σ_{Σ w_j|k_j| ≥ R} e^{-μ Σ w_j |k_j|}`, minimised over
/// the tilt `s ∈ (0, μ)`.
fn ln_chernoff_tail(weights: &[u64], mu: f64, r: f64) -> f64 {
    let f = |s: f64| {
        -s * r
            + weights
                .iter()
                .map(|&w| ln_two_sided_geometric((mu - s) * w as f64))
                .sum::<f64>()
    };
    // The objective is convex in s; golden-section search on (0, μ).
    let (mut a, mut b) = (0.0, mu);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let s = 0.5 * (a + b);
    f(s).min(f(mu * 0.5))
}

/// `ln ∫_R^∞ h(x) dx` for a log-density `ln_h` decreasing on `[R, ∞)`.
fn ln_integral_tail<F: Fn(f64) -> f64>(ln_h: F, r: f64) -> f64 {
    let base = ln_h(r);
    let (v, _) = crate::quad::integrate_f64_to_infinity(|x| (ln_h(x) - base).exp(), r, 1e-10);
    // Quadrature error margin.
    base + (v * (1.0 + 1e-6)).ln()
}

impl Observable {
    fn new(rule: DecayRule, phase: PhaseRule, regime: Regime, prec: Precision, label: String) -> Result<Self> {
        let eta = match regime {
            Regime::InfiniteTruncated { eta, .. } => eta,
            Regime::Finite { .. } => 2,
        };
        let ok = match &rule {
            DecayRule::TrigPoly | DecayRule::DoubleExp => true,
            DecayRule::PolyDecay { m } => *m > 0.0 && m.is_finite(),
            DecayRule::Analytic { mu } | DecayRule::EtaAnalytic { mu } => *mu > 0.0 && mu.is_finite(),
            DecayRule::Gevrey { mu, nu } => *mu > 0.0 && *nu > 0.0 && mu.is_finite() && nu.is_finite(),
        };
        if !ok {
            return Err(NumericError::Parse(format!("{label}: parameters out of range")));
        }
        Ok(Observable {
            rule,
            phase,
            regime,
            eta,
            prec,
            mean: ExtComplex::one(prec),
            explicit: Vec::new(),
            label,
        })
    }

    /// A rule observable on the given torus.
    pub fn rule(rule: DecayRule, phase: PhaseRule, regime: Regime, prec: Precision) -> Result<Self> {
        let label = format!("{rule:?}");
        Observable::new(rule, phase, regime, prec, label)
    }

    /// A trigonometric polynomial from a coefficient list; the list must be
    /// Hermitian (`f̂_{-k} = conj f̂_k`) and lie inside the torus.
    pub fn trig_poly(terms: Vec<(MultiIndex, ExtComplex)>, regime: Regime, prec: Precision) -> Result<Self> {
        let n = regime.coordinates();
        let dim = regime.lattice_dim();
        let mut merged: Vec<(MultiIndex, ExtComplex)> = Vec::new();
        for (k, c) in terms {
            if let Some(j) = k.max_index() {
                if j >= n {
                    return Err(NumericError::SupportMismatch { index: j, dim: n });
                }
            }
            let k = k.with_dim(dim)?;
            match merged.iter_mut().find(|(m, _)| *m == k) {
                Some((_, acc)) => *acc += &c,
                None => merged.push((k, c)),
            }
        }
        let mut obs = Observable::new(DecayRule::TrigPoly, PhaseRule::Unit, regime, prec, "trig".into())?;
        obs.mean = ExtComplex::zero(prec);
        for (k, c) in &merged {
            let c = ExtComplex::new(Float::with_val(prec.bits(), &c.re), Float::with_val(prec.bits(), &c.im));
            if k.is_zero() {
                if !c.im.is_zero() {
                    return Err(NumericError::Domain("constant term of a real observable must be real".into()));
                }
                obs.mean = c;
                continue;
            }
            let partner = merged
                .iter()
                .find(|(m, _)| *m == k.neg())
                .map(|(_, c)| c.conj())
                .unwrap_or_else(|| ExtComplex::zero(prec));
            let same = Float::with_val(prec.bits(), &partner.re - &c.re).is_zero()
                && Float::with_val(prec.bits(), &partner.im - &c.im).is_zero();
            if !same {
                return Err(NumericError::Domain(format!(
                    "coefficients at {k} and its negative are not conjugate"
                )));
            }
            if k.is_canonical() && !c.is_zero() {
                obs.explicit.push(Mode { k: k.clone(), coeff: c });
            }
        }
        obs.explicit.sort_by_key(|a| a.k.l1());
        obs.label = trig_label(&obs);
        Ok(obs)
    }

    /// A random real trigonometric polynomial with `terms` canonical modes of
    /// ℓ¹ norm at most `radius`, coefficients uniform in the unit square,
    /// and a random real mean; fully determined by `seed`.
    pub fn random_trig(seed: u64, regime: Regime, radius: u64, terms: usize, prec: Precision) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = regime.coordinates();
        let dim = regime.lattice_dim();
        let mut list = Vec::new();
        let mut seen: Vec<MultiIndex> = Vec::new();
        let mut guard = 0;
        while seen.len() < terms && guard < 100 * terms {
            guard += 1;
            let mut entries = Vec::new();
            let mut left = rng.gen_range(1..=radius) as i64;
            for j in 0..n {
                if left == 0 {
                    break;
                }
                let v = if j + 1 == n { left } else { rng.gen_range(0..=left) };
                left -= v;
                let s = if rng.gen_bool(0.5) { v } else { -v };
                entries.push((j, s));
            }
            let k = MultiIndex::new(dim, entries)?;
            if k.is_zero() {
                continue;
            }
            let k = if k.is_canonical() { k } else { k.neg() };
            if seen.contains(&k) {
                continue;
            }
            seen.push(k.clone());
            let re = prec.real(rng.gen_range(-1.0..1.0f64));
            let im = prec.real(rng.gen_range(-1.0..1.0f64));
            let c = ExtComplex::new(re, im);
            list.push((k.neg(), c.conj()));
            list.push((k, c));
        }
        let mean = prec.real(rng.gen_range(-1.0..1.0f64));
        list.push((MultiIndex::zero(dim), ExtComplex::from_real(mean)));
        Observable::trig_poly(list, regime, prec)
    }

    pub fn parse(spec: &str, regime: Regime, prec: Precision) -> Result<Self> {
        let spec = spec.trim();
        if let Some(rest) = spec.strip_prefix("trig:") {
            return parse_trig(spec, rest, regime, prec);
        }
        let (name, params) = split_spec(spec);
        let phase = match params.iter().find(|(k, _)| k == "phase").map(|(_, v)| v.as_str()) {
            None | Some("hash") => PhaseRule::Hashed,
            Some("unit") => PhaseRule::Unit,
            Some(other) => return Err(NumericError::Parse(format!("{spec}: unknown phase `{other}`"))),
        };
        let rule = match name.as_str() {
            "poly" => {
                check_known(spec, &params, &["M", "phase"])?;
                DecayRule::PolyDecay {
                    m: param(spec, &params, "M")?,
                }
            }
            "analytic" => {
                check_known(spec, &params, &["mu", "phase"])?;
                DecayRule::Analytic {
                    mu: param(spec, &params, "mu")?,
                }
            }
            "gevrey" => {
                check_known(spec, &params, &["mu", "nu", "phase"])?;
                DecayRule::Gevrey {
                    mu: param(spec, &params, "mu")?,
                    nu: param(spec, &params, "nu")?,
                }
            }
            "eta-analytic" => {
                check_known(spec, &params, &["mu", "phase"])?;
                DecayRule::EtaAnalytic {
                    mu: param(spec, &params, "mu")?,
                }
            }
            "double-exp" => {
                check_known(spec, &params, &["phase"])?;
                DecayRule::DoubleExp
            }
            _ => return Err(NumericError::Parse(format!("unknown observable `{spec}`"))),
        };
        Observable::new(rule, phase, regime, prec, spec.to_string())
    }

    pub fn decay(&self) -> &DecayRule {
        &self.rule
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

    /// `f̂₀`.
    pub fn mean(&self) -> &ExtComplex {
        &self.mean
    }

    pub fn is_finite_support(&self) -> bool {
        self.rule == DecayRule::TrigPoly
    }

    /// Norm that the decay rule is stated in.
    pub fn norm(&self, k: &MultiIndex) -> u64 {
        if self.rule.uses_eta() {
            k.eta_norm(self.eta)
        } else {
            k.l1()
        }
    }

    /// Coordinate weights of [`Observable::norm`] on this torus.
    fn norm_weights(&self) -> Vec<u64> {
        let n = self.regime.coordinates();
        if self.rule.uses_eta() {
            (0..n).map(|j| bracket_pow(j, self.eta)).collect()
        } else {
            vec![1; n]
        }
    }

    /// `ln |f̂_k|` as a function of the norm.
    pub fn ln_modulus(&self, norm: f64) -> f64 {
        match &self.rule {
            DecayRule::TrigPoly => f64::NAN,
            DecayRule::PolyDecay { m } => -m * norm.ln(),
            DecayRule::Analytic { mu } | DecayRule::EtaAnalytic { mu } => -mu * norm,
            DecayRule::Gevrey { mu, nu } => -mu * norm.powf(*nu),
            DecayRule::DoubleExp => -norm.exp(),
        }
    }

    fn check_support(&self, k: &MultiIndex) -> Result<()> {
        let n = self.regime.coordinates();
        match k.max_index() {
            Some(j) if j >= n => Err(NumericError::SupportMismatch { index: j, dim: n }),
            _ => Ok(()),
        }
    }

    fn rule_coefficient(&self, k: &MultiIndex) -> ExtComplex {
        let p = self.prec;
        let norm = self.norm(k);
        let modulus = match &self.rule {
            DecayRule::PolyDecay { m } => p.real(norm).pow(&p.real(-*m)),
            DecayRule::Analytic { mu } | DecayRule::EtaAnalytic { mu } => (p.real(norm) * p.real(-*mu)).exp(),
            DecayRule::Gevrey { mu, nu } => (p.real(norm).pow(&p.real(*nu)) * p.real(-*mu)).exp(),
            DecayRule::DoubleExp => (-p.real(norm).exp()).exp(),
            DecayRule::TrigPoly => unreachable!("explicit coefficients"),
        };
        let canonical = if k.is_canonical() { k.clone() } else { k.neg() };
        let c = match self.phase {
            PhaseRule::Unit => ExtComplex::from_real(modulus),
            PhaseRule::Hashed => ExtComplex::polar_turns(&modulus, &p.real(phase_hash(&canonical)), p),
        };
        if k.is_canonical() {
            c
        } else {
            c.conj()
        }
    }

    /// `f̂_k`.
    pub fn coefficient(&self, k: &MultiIndex) -> Result<ExtComplex> {
        self.check_support(k)?;
        if k.is_zero() {
            return Ok(self.mean.clone());
        }
        if self.rule == DecayRule::TrigPoly {
            let (canonical, flip) = if k.is_canonical() { (k.clone(), false) } else { (k.neg(), true) };
            let c = self
                .explicit
                .iter()
                .find(|m| m.k.entries() == canonical.entries())
                .map(|m| m.coeff.clone())
                .unwrap_or_else(|| ExtComplex::zero(self.prec));
            return Ok(if flip { c.conj() } else { c });
        }
        Ok(self.rule_coefficient(k))
    }

    /// Upper bound on `ln Σ_{norm(k) > R} |f̂_k|`.
    pub fn ln_tail_bound(&self, r: u64) -> Result<f64> {
        let n = self.regime.coordinates();
        let rf = r as f64;
        let unavailable = |why: &str| Err(NumericError::TailBoundUnavailable(format!("{}: {why}", self.label)));
        match &self.rule {
            DecayRule::TrigPoly => {
                let top = self.explicit.iter().map(|m| self.norm(&m.k)).max().unwrap_or(0);
                Ok(if r >= top { f64::NEG_INFINITY } else { f64::INFINITY })
            }
            DecayRule::Analytic { mu } | DecayRule::EtaAnalytic { mu } => {
                Ok(ln_chernoff_tail(&self.norm_weights(), *mu, rf + 1.0))
            }
            DecayRule::DoubleExp => {
                // Norms are integers, so the tail starts at R+1, and there
                // e^ν ≥ e^{R+1}(ν − R) reduces it to a geometric tail.
                let er = (rf + 1.0).exp();
                Ok(er * rf + ln_chernoff_tail(&self.norm_weights(), er, rf + 1.0))
            }
            DecayRule::PolyDecay { m } => {
                let d = n as f64;
                if *m <= d {
                    return unavailable("coefficients not summable (M ≤ dimension)");
                }
                if r == 0 {
                    return Ok(f64::INFINITY);
                }
                // count(ν) ≤ 2^d (ν+d−1)^{d−1}/(d−1)! ≤ 2^d (1+(d−1)/R)^{d−1} ν^{d−1}/(d−1)!
                let c = d * std::f64::consts::LN_2 + (d - 1.0) * (1.0 + (d - 1.0) / rf).ln() - ln_factorial(n - 1);
                Ok(c + (d - m) * rf.ln() - (m - d).ln())
            }
            DecayRule::Gevrey { mu, nu } => {
                if r == 0 {
                    return Ok(f64::INFINITY);
                }
                let d = n as f64;
                let x_star = if *nu < 1.0 { (d - 1.0) * (1.0 - nu) / nu } else { 0.0 };
                let decreasing = mu * nu * (rf.powf(*nu) + (d - 1.0) * rf.powf(nu - 1.0)) >= d - 1.0;
                if rf < x_star || !decreasing {
                    return Ok(f64::INFINITY);
                }
                let lf = ln_factorial(n - 1);
                let ln_h = |x: f64| d * std::f64::consts::LN_2 + (d - 1.0) * (x + d - 1.0).ln() - lf - mu * x.powf(*nu);
                Ok(ln_integral_tail(ln_h, rf))
            }
        }
    }

    /// Number of canonical modes with norm at most `r`.
    fn canonical_count(&self, r: u64) -> f64 {
        let counts = shell_counts(&self.norm_weights(), r);
        counts.iter().skip(1).map(|&c| c as f64).sum::<f64>() / 2.0
    }

    /// Smallest radius whose tail bound is below `tail_tol`.
    pub fn radius_for(&self, tail_tol: &ExtReal) -> Result<u64> {
        if self.rule == DecayRule::TrigPoly {
            return Ok(self.explicit.iter().map(|m| self.norm(&m.k)).max().unwrap_or(0));
        }
        let target = if tail_tol.is_zero() {
            return Err(NumericError::TailBoundUnavailable(format!(
                "{}: zero tail tolerance needs finite support",
                self.label
            )));
        } else {
            tail_tol.clone().ln().to_f64()
        };
        let mut hi = 1u64;
        while self.ln_tail_bound(hi)? >= target {
            hi *= 2;
            if hi > 1 << 24 || self.canonical_count(hi.min(1 << 16)) > MAX_MODES {
                return Err(NumericError::TailBoundUnavailable(format!(
                    "{}: tail below {:.3e} needs too many modes",
                    self.label,
                    tail_tol.to_f64()
                )));
            }
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.ln_tail_bound(mid)? < target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if self.canonical_count(hi) > MAX_MODES {
            return Err(NumericError::TailBoundUnavailable(format!(
                "{}: radius {hi} exceeds the mode budget",
                self.label
            )));
        }
        Ok(hi)
    }

    /// Canonical modes with norm at most `r`, in graded order.
    pub fn modes(&self, r: u64) -> Result<ModeTable> {
        let ln_tail = self.ln_tail_bound(r)?;
        let modes = if self.rule == DecayRule::TrigPoly {
            self.explicit.iter().filter(|m| self.norm(&m.k) <= r).cloned().collect()
        } else {
            let dim = self.regime.lattice_dim();
            BallIter::new(self.norm_weights(), r, dim)
                .filter(|k| k.is_canonical())
                .map(|k| {
                    let coeff = self.rule_coefficient(&k);
                    Mode { k, coeff }
                })
                .collect()
        };
        Ok(ModeTable {
            modes,
            mean: self.mean.clone(),
            radius: r,
            ln_tail,
        })
    }

    /// Mode table whose tail is below `tail_tol`.
    pub fn mode_table(&self, tail_tol: &ExtReal) -> Result<ModeTable> {
        self.modes(self.radius_for(tail_tol)?)
    }

    /// `f(θ)` truncated so that the neglected tail is below `tail_tol`.
    pub fn evaluate(&self, theta: &[ExtReal], tail_tol: &ExtReal) -> Result<ExtComplex> {
        let table = self.mode_table(tail_tol)?;
        self.evaluate_with(&table, theta)
    }

    /// `f̂₀ + 2 Re Σ f̂_k e(k·θ)` over a precomputed table.
    pub fn evaluate_with(&self, table: &ModeTable, theta: &[ExtReal]) -> Result<ExtComplex> {
        let n = self.regime.coordinates();
        if theta.len() != n {
            return Err(NumericError::Dimension(format!("point has {} coordinates, torus {n}", theta.len())));
        }
        let p = self.prec;
        let pows = PowerTable::new(theta, &table.max_entries(n), p);
        Ok(evaluate_table(table, &pows, p))
    }

    /// Membership test `sup_{norm ≤ K} Δ̃(norm)|f̂_k| < ∞`: reports the sup and
    /// whether it is attained in the inner half of the radius (a sup still
    /// growing at the edge of the scan is taken as unbounded).
    pub fn class_certificate(&self, class: &ApproximationFunction, k_max: u64) -> Result<ClassCertificate> {
        if k_max == 0 {
            return Err(NumericError::Domain("certificate radius must be at least 1".into()));
        }
        let mut best = f64::NEG_INFINITY;
        let mut at = 0u64;
        let mut consider = |norm: u64, ln_abs: f64| {
            let v = class.ln_value(norm as f64) + ln_abs;
            if best == f64::NEG_INFINITY || v > best + 1e-12 * best.abs().max(1.0) {
                best = v;
                at = norm;
            }
        };
        if self.rule == DecayRule::TrigPoly {
            for m in &self.explicit {
                let norm = self.norm(&m.k);
                if norm <= k_max {
                    consider(norm, m.coeff.abs().ln().to_f64());
                }
            }
        } else {
            let weights = self.norm_weights();
            let counts = shell_counts(&weights, k_max);
            for (norm, &c) in counts.iter().enumerate().skip(1) {
                if c > 0 {
                    consider(norm as u64, self.ln_modulus(norm as f64));
                }
            }
        }
        Ok(ClassCertificate {
            ln_sup: best,
            sup: best.exp(),
            attained_at: at,
            radius: k_max,
            member: best.is_finite() && 2 * at <= k_max,
        })
    }
}

/// Evaluates a mode table against a power table.
pub fn evaluate_table(table: &ModeTable, pows: &PowerTable, p: Precision) -> ExtComplex {
    let mut acc = crate::numeric::CompensatedSum::new(p);
    for m in &table.modes {
        let e = pows.character(&m.k, p);
        let prod = &m.coeff * &e;
        acc.add(&prod.re);
    }
    let re = Float::with_val(p.bits(), acc.total() * 2u32 + &table.mean.re);
    ExtComplex::new(re, table.mean.im.clone())
}

/// Result of [`Observable::class_certificate`].
#[derive(Clone, Debug, Serialize)]
pub struct ClassCertificate {
    pub ln_sup: f64,
    pub sup: f64,
    pub attained_at: u64,
    pub radius: u64,
    pub member: bool,
}

fn trig_label(obs: &Observable) -> String {
    let fmt_k = |k: &MultiIndex| {
        (0..obs.regime.coordinates())
            .map(|j| k.get(j).to_string())
            .collect::<Vec<_>>()
            .join("/")
    };
    let mut parts = Vec::new();
    for m in &obs.explicit {
        let (re, im) = m.coeff.to_f64_pair();
        parts.push(format!("{}:{re:e},{im:e}", fmt_k(&m.k)));
        parts.push(format!("{}:{re:e},{:e}", fmt_k(&m.k.neg()), -im));
    }
    format!("trig:{}", parts.join(";"))
}

/// `trig:<k>:<re>,<im>;...` where `<k>` lists the dense entries separated by `/`.
fn parse_trig(spec: &str, rest: &str, regime: Regime, prec: Precision) -> Result<Observable> {
    let dim = regime.lattice_dim();
    let mut terms = Vec::new();
    for term in rest.split(';').filter(|t| !t.trim().is_empty()) {
        let (k, c) = term
            .split_once(':')
            .ok_or_else(|| NumericError::Parse(format!("{spec}: term `{term}` needs <k>:<re>,<im>")))?;
        let entries = k
            .split('/')
            .map(|v| {
                v.trim()
                    .parse::<i64>()
                    .map_err(|_| NumericError::Parse(format!("{spec}: bad index `{k}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (re, im) = match c.split_once(',') {
            Some((re, im)) => (parse_real(re, prec)?, parse_real(im, prec)?),
            None => (parse_real(c, prec)?, prec.zero()),
        };
        let k = MultiIndex::new(dim, entries.into_iter().enumerate())?;
        terms.push((k, ExtComplex::new(re, im)));
    }
    if terms.is_empty() {
        return Err(NumericError::Parse(format!("{spec}: no terms")));
    }
    let mut obs = Observable::trig_poly(terms, regime, prec)?;
    obs.label = spec.to_string();
    Ok(obs)
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{enumerate_ball_eta_truncated, Dim};
    use crate::numeric::pow10;

    fn p() -> Precision {
        Precision::new(40)
    }

    const T1: Regime = Regime::Finite { d: 1 };

    #[test]
    fn cosine_terms() {
        let obs = Observable::parse("trig:1:0.5,0;-1:0.5,0", T1, p()).unwrap();
        let c = obs.coefficient(&MultiIndex::from_dense(&[1])).unwrap();
        assert_eq!(c.re.to_f64(), 0.5);
        assert!(obs.mean().is_zero());
        let v = obs.evaluate(&[p().zero()], &p().zero()).unwrap();
        assert_eq!(v.re, 1u32);
        let q = obs.evaluate(&[p().real(0.25)], &p().zero()).unwrap();
        assert!(q.re.to_f64().abs() < 1e-38);
    }

    #[test]
    fn trig_rejects_bad_input() {
        assert!(matches!(
            Observable::parse("trig:1:0.5,0", T1, p()),
            Err(NumericError::Domain(_))
        ));
        assert!(matches!(
            Observable::parse("trig:0/1:0.5,0;0/-1:0.5,0", T1, p()),
            Err(NumericError::SupportMismatch { .. })
        ));
        assert!(Observable::parse("trig:", T1, p()).is_err());
        assert!(Observable::parse("trig:x:1", T1, p()).is_err());
        assert!(Observable::parse("analytic:mu=-1", T1, p()).is_err());
        assert!(Observable::parse("analytic:mu=1,phase=odd", T1, p()).is_err());
        assert!(Observable::parse("wavelet", T1, p()).is_err());
    }

    #[test]
    fn rule_moduli_and_hermitian_pairs() {
        let obs = Observable::parse("analytic:mu=1", T1, p()).unwrap();
        let k = MultiIndex::from_dense(&[3]);
        let c = obs.coefficient(&k).unwrap();
        assert!((c.abs().to_f64() - (-3f64).exp()).abs() < 1e-17);
        let cm = obs.coefficient(&k.neg()).unwrap();
        assert_eq!(cm, c.conj());
        let zero = MultiIndex::zero(Dim::Finite(1));
        assert_eq!(obs.coefficient(&zero).unwrap().re, 1u32);
    }

    #[test]
    fn analytic_matches_geometric_series() {
        let obs = Observable::parse("analytic:mu=2,phase=unit", T1, p()).unwrap();
        let tol = pow10(-35, p());
        let v = obs.evaluate(&[p().zero()], &tol).unwrap();
        let q = (p().real(-2)).exp();
        let want = q.clone() * 2u32 / (p().real(1u32) - q) + 1u32;
        assert!((v.re - want).abs() < tol);
    }

    #[test]
    fn tail_bounds_dominate_true_tails() {
        // Compare the bound with the exact tail sum over a long range.
        let cases = [
            ("analytic:mu=0.7", Regime::Finite { d: 2 }),
            ("gevrey:mu=1,nu=0.5", Regime::Finite { d: 1 }),
            ("poly:M=4", Regime::Finite { d: 2 }),
            ("eta-analytic:mu=1", Regime::InfiniteTruncated { dims: 4, eta: 2 }),
            ("double-exp", Regime::InfiniteTruncated { dims: 4, eta: 2 }),
        ];
        for (spec, regime) in cases {
            let obs = Observable::parse(spec, regime, Precision::new(30)).unwrap();
            let (r, far) = if spec == "double-exp" { (2u64, 7u64) } else { (6, 220) };
            let bound = obs.ln_tail_bound(r).unwrap();
            let counts = shell_counts(&obs.norm_weights(), far);
            let terms: Vec<f64> = counts
                .iter()
                .enumerate()
                .skip(r as usize + 1)
                .filter(|(_, &c)| c > 0)
                .map(|(norm, &c)| (c as f64).ln() + obs.ln_modulus(norm as f64))
                .collect();
            let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tail = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
            assert!(tail <= bound + 1e-12, "{spec}: {tail} > {bound}");
            // The bound should not be absurdly loose.
            assert!(bound - tail < 8.0, "{spec}: slack {}", bound - tail);
        }
    }

    #[test]
    fn poly_decay_needs_summability() {
        let obs = Observable::parse("poly:M=2", Regime::Finite { d: 2 }, p()).unwrap();
        assert!(matches!(obs.ln_tail_bound(10), Err(NumericError::TailBoundUnavailable(_))));
    }

    #[test]
    fn tail_honesty_under_doubling() {
        let obs = Observable::parse("gevrey:mu=1.5,nu=0.7", Regime::Finite { d: 2 }, p()).unwrap();
        let tol = pow10(-12, p());
        let theta = [p().real(0.123), p().real(0.456)];
        let r = obs.radius_for(&tol).unwrap();
        let a = obs.evaluate_with(&obs.modes(r).unwrap(), &theta).unwrap();
        let b = obs.evaluate_with(&obs.modes(2 * r).unwrap(), &theta).unwrap();
        assert!((a.re - b.re).abs() < tol);
    }

    #[test]
    fn eta_analytic_matches_brute_force() {
        let regime = Regime::InfiniteTruncated { dims: 4, eta: 2 };
        let obs = Observable::parse("eta-analytic:mu=1", regime, p()).unwrap();
        let tol = pow10(-6, p());
        let theta: Vec<ExtReal> = [1.1, 1.7, 1.3, 1.9].iter().map(|&t| p().real(t)).collect();
        let got = obs.evaluate(&theta, &tol).unwrap();
        let r = obs.radius_for(&tol).unwrap();
        let mut want = ExtComplex::one(p());
        for k in enumerate_ball_eta_truncated(2, 2 * r, 4) {
            let c = obs.coefficient(&k).unwrap();
            let mut phase = p().zero();
            for &(j, v) in k.entries() {
                phase += theta[j].clone() * v;
            }
            want += &(&c * &ExtComplex::cis_turns(&phase, p()));
        }
        assert!((got.re - &want.re).abs() < tol);
        assert!(want.im.abs() < 1e-30);
    }

    #[test]
    fn trapezoid_mean_of_trig_poly() {
        let obs = Observable::random_trig(7, T1, 6, 5, p()).unwrap();
        let m = 64u32;
        let mut acc = p().zero();
        for i in 0..m {
            let t = p().real(i) / m;
            acc += obs.evaluate(&[t], &p().zero()).unwrap().re;
        }
        acc /= m;
        assert!((acc - &obs.mean().re).abs() < 1e-20);
    }

    #[test]
    fn real_valued_at_random_points() {
        let obs = Observable::parse("analytic:mu=1", Regime::Finite { d: 2 }, p()).unwrap();
        let tol = pow10(-20, p());
        let table = obs.mode_table(&tol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let th = [p().real(rng.gen::<f64>()), p().real(rng.gen::<f64>())];
            let v = obs.evaluate_with(&table, &th).unwrap();
            assert!(v.im.to_f64().abs() <= tol.to_f64());
        }
    }

    #[test]
    fn class_certificates() {
        let a = Observable::parse("analytic:mu=1", T1, p()).unwrap();
        let c = a.class_certificate(&ApproximationFunction::stretched_exp(1.0, 1.0), 30).unwrap();
        assert!(c.member);
        assert!((c.sup - 1.0).abs() < 1e-12);
        let c = a.class_certificate(&ApproximationFunction::stretched_exp(2.0, 1.0), 30).unwrap();
        assert!(!c.member);
        assert!((c.ln_sup - 30.0).abs() < 1e-9);
        let pd = Observable::parse("poly:M=4", T1, p()).unwrap();
        let c = pd.class_certificate(&ApproximationFunction::power(4.0), 30).unwrap();
        assert!(c.member);
        assert!((c.sup - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_hash_is_stable() {
        let k = MultiIndex::from_dense(&[2, -1]);
        let a = phase_hash(&k);
        assert_eq!(a, phase_hash(&MultiIndex::from_dense(&[2, -1])));
        assert!((0.0..1.0).contains(&a));
        assert_ne!(a, phase_hash(&MultiIndex::from_dense(&[1, 2])));
    }
}
