//! Orbit averages, the kernel `S_N`, the Fourier-side error oracle and the
//! continuous-time average.
//!
//! Orbit points are generated in fixed chunks. Each chunk starts from a
//! directly computed point `frac(θ₀ + n₀ρ)` and advances by compensated
//! cumulative addition; the drift against the direct point at the end of the
//! chunk is reported as the orbit residual. Sums run in ascending `n` with
//! compensation, so results do not depend on scheduling.

use std::time::Instant;

use rug::Float;
use serde::Serialize;

use crate::error::{NumericError, Result};
use crate::lattice::MultiIndex;
use crate::numeric::{frac, two_sum, CompensatedComplexSum, CompensatedSum, ExtComplex, ExtReal, Precision};
use crate::observables::{evaluate_table, ModeTable, Observable, PowerTable};
use crate::quad::{gl_rule, panel_order};
use crate::rotations::RotationVector;
use crate::weights::{WeightFunction, WeightKind, WeightSamples};

/// Orbit points per chunk.
pub const CHUNK: u64 = 4096;
/// Phasor recurrences are resynchronised with a direct evaluation this often.
const RESYNC: usize = 128;
/// Largest node count the continuous-mode quadrature may use per level.
pub const MAX_NODES: usize = 1 << 22;

/// Discrete orbit of `N` steps or a flow of duration `T`.
#[derive(Clone, Debug, PartialEq)]
pub enum RunMode {
    Discrete { n: u64 },
    Continuous { t: f64, quad_tol: Option<f64> },
}

/// Everything that determines one average.
#[derive(Clone, Debug)]
pub struct AveragingRun<'a> {
    pub observable: &'a Observable,
    pub rotation: &'a RotationVector,
    pub weight: &'a WeightFunction,
    pub theta0: Vec<ExtReal>,
    pub mode: RunMode,
    pub precision: Precision,
    /// Truncation tolerance for rule observables; defaults to `10^{-P}`.
    pub tail_tol: Option<ExtReal>,
}

/// Side information about a run.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    /// `A_N` for discrete runs.
    pub a_n: Option<f64>,
    /// Largest drift of the cumulative orbit from direct evaluation.
    pub orbit_residual: Option<f64>,
    /// Quadrature error estimate for continuous runs.
    pub quad_error: Option<f64>,
    pub modes: usize,
    pub radius: u64,
    pub ln_tail: f64,
}

/// Outcome of one average.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub value: ExtComplex,
    /// `|value − f̂₀|`.
    pub abs_error: ExtReal,
    /// `N` or `T`.
    pub horizon: f64,
    pub precision_floor: ExtReal,
    pub wall_ms: f64,
    pub diagnostics: Diagnostics,
}

impl RunResult {
    /// `ln abs_error`, finite far below the `f64` range; `-∞` for an exact zero.
    pub fn ln_abs_error(&self) -> f64 {
        ln_ext(&self.abs_error)
    }

    /// Whether the error is within the precision floor.
    pub fn saturated(&self) -> bool {
        self.abs_error <= Float::with_val(self.precision_floor.prec(), &self.precision_floor * 10u32)
    }
}

/// Natural log as `f64`, keeping magnitudes below `f64::MIN_POSITIVE`.
pub fn ln_ext(x: &ExtReal) -> f64 {
    if x.is_zero() {
        f64::NEG_INFINITY
    } else {
        x.clone().abs().ln().to_f64()
    }
}

impl<'a> AveragingRun<'a> {
    pub fn discrete(
        observable: &'a Observable,
        rotation: &'a RotationVector,
        weight: &'a WeightFunction,
        n: u64,
        precision: Precision,
    ) -> Self {
        let theta0 = vec![precision.zero(); rotation.dimension()];
        AveragingRun {
            observable,
            rotation,
            weight,
            theta0,
            mode: RunMode::Discrete { n },
            precision,
            tail_tol: None,
        }
    }

    pub fn continuous(
        observable: &'a Observable,
        rotation: &'a RotationVector,
        weight: &'a WeightFunction,
        t: f64,
        precision: Precision,
    ) -> Self {
        let mut run = AveragingRun::discrete(observable, rotation, weight, 2, precision);
        run.mode = RunMode::Continuous { t, quad_tol: None };
        run
    }

    pub fn with_theta0(mut self, theta0: Vec<ExtReal>) -> Self {
        self.theta0 = theta0;
        self
    }

    fn validate(&self) -> Result<()> {
        let p = self.precision;
        if p.digits() < 30 {
            return Err(NumericError::Domain(format!("precision {} below 30 digits", p.digits())));
        }
        for (what, q) in [
            ("weight", self.weight.precision()),
            ("rotation", self.rotation.precision()),
            ("observable", self.observable.precision()),
        ] {
            if q.digits() < p.digits() {
                return Err(NumericError::Domain(format!(
                    "{what} built at {} digits, run needs {}",
                    q.digits(),
                    p.digits()
                )));
            }
        }
        let d = self.rotation.dimension();
        if self.theta0.len() != d {
            return Err(NumericError::Dimension(format!("θ₀ has {} coordinates, rotation {d}", self.theta0.len())));
        }
        if self.observable.regime() != self.rotation.regime() {
            return Err(NumericError::Dimension(format!(
                "observable lives on {:?}, rotation on {:?}",
                self.observable.regime(),
                self.rotation.regime()
            )));
        }
        match self.mode {
            RunMode::Discrete { n } if n == 0 => Err(NumericError::Domain("N must be at least 1".into())),
            RunMode::Continuous { t, .. } if !(t >= 1.0 && t.is_finite()) => {
                Err(NumericError::Domain(format!("T = {t} must be at least 1")))
            }
            _ => Ok(()),
        }
    }

    fn tail_tol(&self) -> ExtReal {
        self.tail_tol
            .clone()
            .unwrap_or_else(|| crate::numeric::pow10(-(self.precision.digits() as i32), self.precision))
    }

    fn mode_table(&self) -> Result<ModeTable> {
        if self.observable.is_finite_support() {
            self.observable.modes(u64::MAX / 4)
        } else {
            self.observable.mode_table(&self.tail_tol())
        }
    }
}

/// Floor below which rounding, not the method, dominates.
fn precision_floor(table: &ModeTable, p: Precision, extra: f64) -> ExtReal {
    let tail = if table.ln_tail.is_finite() { p.real(table.ln_tail).exp() } else { p.zero() };
    let scale = table.mean.abs().to_f64() + table.abs_sum() + table.weighted_abs_sum();
    tail + p.epsilon() * (10.0 * scale) + extra
}

fn horizon(run: &AveragingRun) -> f64 {
    match run.mode {
        RunMode::Discrete { n } => n as f64,
        RunMode::Continuous { t, .. } => t,
    }
}

fn finish(
    run: &AveragingRun,
    value: ExtComplex,
    table: &ModeTable,
    extra_floor: f64,
    start: Instant,
    mut diagnostics: Diagnostics,
) -> RunResult {
    let p = run.precision;
    let diff = &value - run.observable.mean();
    diagnostics.modes = table.modes.len();
    diagnostics.radius = table.radius;
    diagnostics.ln_tail = table.ln_tail;
    RunResult {
        abs_error: Float::with_val(p.bits(), diff.abs()),
        value,
        horizon: horizon(run),
        precision_floor: precision_floor(table, p, extra_floor),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        diagnostics,
    }
}

/// `frac(θ₀ + nρ)` (finite torus) or `θ₀ + nρ` (truncated infinite torus,
/// where coordinates are reduced mod 1 as well since characters only see
/// the fractional part), computed from an exact product.
fn direct_point(run: &AveragingRun, n: u64, bits: u32) -> Vec<ExtReal> {
    let wide = bits + 96;
    run.rotation
        .coords()
        .iter()
        .zip(&run.theta0)
        .map(|(r, t)| {
            let x = Float::with_val(wide, r * n) + t;
            Float::with_val(bits, frac(&x))
        })
        .collect()
}

/// Compensated cumulative orbit within one chunk.
struct OrbitCursor {
    hi: Vec<ExtReal>,
    lo: Vec<ExtReal>,
    step: Vec<ExtReal>,
}

impl OrbitCursor {
    fn new(start: Vec<ExtReal>, rho: &[ExtReal], bits: u32) -> Self {
        let lo = vec![Float::new(bits); start.len()];
        let step = rho.iter().map(|r| Float::with_val(bits, frac(r))).collect();
        OrbitCursor { hi: start, lo, step }
    }

    fn point(&self) -> Vec<ExtReal> {
        self.hi
            .iter()
            .zip(&self.lo)
            .map(|(h, l)| Float::with_val(h.prec(), h + l))
            .collect()
    }

    fn advance(&mut self) {
        for j in 0..self.hi.len() {
            let (s, e) = two_sum(&self.hi[j], &self.step[j]);
            self.lo[j] += e;
            // s ∈ [0, 2): subtracting 1 is exact.
            self.hi[j] = if s >= 1u32 { s - 1u32 } else { s };
            let (h, l) = two_sum(&self.hi[j], &self.lo[j]);
            self.hi[j] = h;
            self.lo[j] = l;
        }
    }
}

fn residual(a: &[ExtReal], b: &[ExtReal]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let shifted = Float::with_val(x.prec(), x - y) + 0.5f64;
            let d = frac(&shifted) - 0.5f64;
            d.abs().to_f64()
        })
        .fold(0.0, f64::max)
}

/// `(1/A_N) Σ_{n<N} w(n/N) f(θ₀ + nρ)` by orbit evaluation; with the flat
/// weight this is the plain Birkhoff average.
pub fn birkhoff_discrete(run: &AveragingRun) -> Result<RunResult> {
    run.validate()?;
    let n = match run.mode {
        RunMode::Discrete { n } => n,
        _ => return Err(NumericError::Domain("discrete average needs RunMode::Discrete".into())),
    };
    let start = Instant::now();
    let p = run.precision;
    let table = run.mode_table()?;
    let samples = weight_samples(run.weight, n)?;
    let d = run.rotation.dimension();
    let maxes = table.max_entries(d);
    let mut sum = CompensatedSum::new(p);
    let mut worst = 0.0f64;
    let mut n0 = 0u64;
    while n0 < n {
        let n1 = (n0 + CHUNK).min(n);
        let mut cursor = OrbitCursor::new(direct_point(run, n0, p.bits()), run.rotation.coords(), p.bits());
        for i in n0..n1 {
            let w = &samples.values[i as usize];
            if !w.is_zero() {
                let theta = cursor.point();
                let pows = PowerTable::new(&theta, &maxes, p);
                let f = evaluate_table(&table, &pows, p);
                sum.add(&Float::with_val(p.bits(), &f.re * w));
            }
            if i + 1 < n1 {
                cursor.advance();
            }
        }
        let check = direct_point(run, n1 - 1, p.doubled().bits());
        worst = worst.max(residual(&cursor.point(), &check));
        n0 = n1;
    }
    let value = ExtComplex::new(
        Float::with_val(p.bits(), sum.total() / &samples.a_n),
        Float::with_val(p.bits(), &table.mean.im),
    );
    let drift = worst * std::f64::consts::TAU * table.weighted_abs_sum();
    let diagnostics = Diagnostics {
        a_n: Some(samples.a_n.to_f64()),
        orbit_residual: Some(worst),
        quad_error: None,
        modes: 0,
        radius: 0,
        ln_tail: 0.0,
    };
    Ok(finish(run, value, &table, drift, start, diagnostics))
}

/// The plain average `(1/N) Σ_{n<N} f(θ₀ + nρ)`.
pub fn birkhoff_unweighted(
    observable: &Observable,
    rotation: &RotationVector,
    theta0: Vec<ExtReal>,
    n: u64,
    precision: Precision,
) -> Result<RunResult> {
    let flat = WeightFunction::new(WeightKind::TrivialFlat, precision)?;
    let run = AveragingRun::discrete(observable, rotation, &flat, n, precision).with_theta0(theta0);
    birkhoff_discrete(&run)
}

fn weight_samples(w: &WeightFunction, n: u64) -> Result<WeightSamples> {
    if n > (1 << 28) {
        return Err(NumericError::Domain(format!("N = {n} exceeds the supported window")));
    }
    w.samples(n)
}

/// `Σ_j c_j e(φ (offset + j·step))` by a phasor recurrence, resynchronised
/// every few terms against a direct evaluation.
fn phasor_sum(coeffs: &[ExtReal], phi: &ExtReal, offset: &ExtReal, step: &ExtReal, p: Precision) -> ExtComplex {
    let wide = p.bits() + 64;
    let turn = |j: usize| {
        let y = Float::with_val(wide, step * j as u64) + offset;
        frac(&Float::with_val(wide, phi * &y))
    };
    let z = ExtComplex::cis_turns(&frac(&Float::with_val(wide, phi * step)), p);
    let mut acc = CompensatedComplexSum::new(p);
    let mut cur = ExtComplex::one(p);
    for (j, c) in coeffs.iter().enumerate() {
        if j % RESYNC == 0 {
            cur = ExtComplex::cis_turns(&turn(j), p);
        } else {
            cur = &cur * &z;
        }
        if !c.is_zero() {
            acc.add(&cur.scaled(c));
        }
    }
    acc.total()
}

/// `S_N(x) = (1/A_N) Σ_{n<N} w(n/N) e(nx)`.
pub fn kernel_s_n(w: &WeightFunction, n: u64, x: &ExtReal) -> Result<ExtComplex> {
    let samples = weight_samples(w, n)?;
    Ok(kernel_with_samples(&samples, x, w.precision()))
}

/// [`kernel_s_n`] from precomputed samples.
pub fn kernel_with_samples(samples: &WeightSamples, x: &ExtReal, p: Precision) -> ExtComplex {
    let x = frac(x);
    if x.is_zero() {
        return ExtComplex::one(p);
    }
    let s = phasor_sum(&samples.values, &x, &p.zero(), &p.real(1u32), p);
    s.div_real(&samples.a_n)
}

/// Error computed in Fourier space.
#[derive(Clone, Debug)]
pub struct OracleResult {
    /// `Σ_{k≠0} f̂_k e(k·θ₀) S_N(k·ρ)` (or `I_T(k·ρ)` in continuous mode).
    pub error: ExtComplex,
    pub abs_error: ExtReal,
    /// Upper bound on the neglected modes; `-∞` for finite support.
    pub ln_tail: f64,
    pub modes: usize,
}

/// Error `WB_N(f)(θ₀) − f̂₀` computed mode by mode, independent of the orbit.
/// `radius` overrides the truncation chosen from the tail tolerance.
pub fn fourier_error_oracle(run: &AveragingRun, radius: Option<u64>) -> Result<OracleResult> {
    run.validate()?;
    let p = run.precision;
    let table = match radius {
        Some(r) => run.observable.modes(r)?,
        None => run.mode_table()?,
    };
    if !table.ln_tail.is_finite() && table.ln_tail > 0.0 {
        return Err(NumericError::TailBoundUnavailable(format!(
            "radius {} does not cover {}",
            table.radius,
            run.observable.label()
        )));
    }
    let mut acc = CompensatedSum::new(p);
    match run.mode {
        RunMode::Discrete { n } => {
            let samples = weight_samples(run.weight, n)?;
            for m in &table.modes {
                let x = frac(&run.rotation.dot(&m.k)?);
                let s = kernel_with_samples(&samples, &x, p);
                let term = &(&m.coeff * &character(&m.k, &run.theta0, p)) * &s;
                acc.add(&term.re);
            }
        }
        RunMode::Continuous { t, quad_tol } => {
            let tol = quad_tol.map(|q| p.real(q)).unwrap_or_else(|| run.tail_tol());
            let omegas = table
                .modes
                .iter()
                .map(|m| run.rotation.dot(&m.k))
                .collect::<Result<Vec<_>>>()?;
            let kernels = continuous_kernels(run.weight, t, &omegas, &tol, p)?;
            for (m, k) in table.modes.iter().zip(&kernels.values) {
                let term = &(&m.coeff * &character(&m.k, &run.theta0, p)) * k;
                acc.add(&term.re);
            }
        }
    }
    let err = Float::with_val(p.bits(), acc.total() * 2u32);
    Ok(OracleResult {
        abs_error: err.clone().abs(),
        error: ExtComplex::from_real(err),
        ln_tail: table.ln_tail,
        modes: table.modes.len(),
    })
}

/// `e(k·θ)` computed directly.
fn character(k: &MultiIndex, theta: &[ExtReal], p: Precision) -> ExtComplex {
    let wide = p.bits() + 64;
    let mut t = Float::new(wide);
    for &(j, v) in k.entries() {
        t += Float::with_val(wide, &theta[j] * v);
    }
    ExtComplex::cis_turns(&frac(&t), p)
}

/// Values of `I_T(ω) = ∫₀¹ w(y) e(Tωy) dy` for several frequencies.
#[derive(Clone, Debug)]
pub struct ContinuousKernels {
    pub values: Vec<ExtComplex>,
    /// Largest certified change between the last two refinement levels.
    pub error: f64,
    pub nodes: usize,
}

/// Node set of a quadrature level: `∫₀¹ w(y) g(y) dy ≈ Σ c_j g(y_j)`.
enum Level {
    /// Trapezoid nodes `y_j = j/M` (`w` vanishes to all orders at the ends).
    Trapezoid { m: usize, coeffs: Vec<ExtReal> },
    /// Composite Gauss–Legendre nodes.
    Panels { ys: Vec<ExtReal>, coeffs: Vec<ExtReal> },
}

fn trapezoid_level(w: &WeightFunction, m: usize, prev: Option<&[ExtReal]>, p: Precision) -> Result<Vec<ExtReal>> {
    // Coefficients are w(j/M)/M for j = 0..M; with a previous level of M/2
    // nodes the even ones are reused.
    let mut out = Vec::with_capacity(m);
    let inv = p.real(1u32) / m as u64;
    for j in 0..m {
        let v = match prev {
            Some(old) if j % 2 == 0 => Float::with_val(p.bits(), &old[j / 2] / 2u32),
            _ => {
                let y = p.real(j as u64) / m as u64;
                w.eval(&y)? * &inv
            }
        };
        out.push(v);
    }
    Ok(out)
}

fn panel_level(w: &WeightFunction, panels: usize, p: Precision) -> Result<(Vec<ExtReal>, Vec<ExtReal>)> {
    let rule = gl_rule(panel_order(p), p.bits());
    let h = p.real(1u32) / panels as u64;
    let half = Float::with_val(p.bits(), &h / 2u32);
    let mut ys = Vec::with_capacity(panels * rule.nodes.len());
    let mut cs = Vec::with_capacity(ys.capacity());
    for i in 0..panels {
        let mid = Float::with_val(p.bits(), &h * i as u64) + &half;
        for (x, g) in rule.nodes.iter().zip(&rule.weights) {
            let y = Float::with_val(p.bits(), &half * x) + &mid;
            let c = w.eval(&y)? * g * &half;
            ys.push(y);
            cs.push(c);
        }
    }
    Ok((ys, cs))
}

fn level_sum(level: &Level, phi: &ExtReal, p: Precision) -> ExtComplex {
    match level {
        Level::Trapezoid { m, coeffs } => {
            let step = p.real(1u32) / *m as u64;
            phasor_sum(coeffs, phi, &p.zero(), &step, p)
        }
        Level::Panels { ys, coeffs } => {
            let wide = p.bits() + 64;
            let mut acc = CompensatedComplexSum::new(p);
            for (y, c) in ys.iter().zip(coeffs) {
                let t = frac(&Float::with_val(wide, phi * y));
                acc.add(&ExtComplex::cis_turns(&t, p).scaled(c));
            }
            acc.total()
        }
    }
}

/// Builds successive quadrature levels and calls `eval` on each until two
/// consecutive levels agree to `tol` in every output.
fn refine<F>(w: &WeightFunction, bandwidth: f64, tol: &ExtReal, p: Precision, mut eval: F) -> Result<(Vec<ExtComplex>, f64, usize)>
where
    F: FnMut(&Level) -> Result<Vec<ExtComplex>>,
{
    let flat = w.kind().is_flat_at_endpoints();
    let tol_f = tol.to_f64();
    // Enough resolution for the oscillation plus a margin growing with the digit count.
    let base = (2.0 * bandwidth + 16.0 * p.digits() as f64).ceil() as usize;
    let mut size = base.next_power_of_two().max(64);
    if !flat {
        size = (size / panel_order(p)).max(4);
    }
    let build = |size: usize, prev: Option<&Level>| -> Result<Level> {
        if flat {
            let prev_coeffs = match prev {
                Some(Level::Trapezoid { coeffs, .. }) => Some(coeffs.as_slice()),
                _ => None,
            };
            Ok(Level::Trapezoid {
                m: size,
                coeffs: trapezoid_level(w, size, prev_coeffs, p)?,
            })
        } else {
            let (ys, coeffs) = panel_level(w, size, p)?;
            Ok(Level::Panels { ys, coeffs })
        }
    };
    let mut level = build(size, None)?;
    let mut values = eval(&level)?;
    loop {
        let nodes = size * if flat { 2 } else { 2 * panel_order(p) };
        if nodes > MAX_NODES {
            return Err(NumericError::QuadratureBudgetExceeded(format!(
                "continuous average at bandwidth {bandwidth:.3e} needs more than {MAX_NODES} nodes"
            )));
        }
        size *= 2;
        let next = build(size, Some(&level))?;
        let next_values = eval(&next)?;
        let change = values
            .iter()
            .zip(&next_values)
            .map(|(a, b)| (a - b).abs())
            .fold(p.zero(), |m, d| if d > m { d } else { m });
        level = next;
        values = next_values;
        if change <= tol_f || change.is_zero() {
            return Ok((values, change.to_f64(), nodes));
        }
    }
}

/// `I_T(ω)` for each `ω`, certified by node doubling to `tol`.
pub fn continuous_kernels(
    w: &WeightFunction,
    t: f64,
    omegas: &[ExtReal],
    tol: &ExtReal,
    p: Precision,
) -> Result<ContinuousKernels> {
    let tt = p.real(t);
    let phis: Vec<ExtReal> = omegas.iter().map(|o| Float::with_val(p.bits() + 64, o * &tt)).collect();
    if *w.kind() == WeightKind::TrivialFlat {
        // ∫₀¹ e(φy) dy in closed form.
        let values = phis
            .iter()
            .map(|phi| {
                if phi.is_zero() {
                    return ExtComplex::one(p);
                }
                let e = ExtComplex::cis_turns(&frac(phi), p);
                let num = &e - &ExtComplex::one(p);
                let den = Float::with_val(p.bits(), phi * p.two_pi());
                // (e − 1)/(2πiφ) = −i(e − 1)/(2πφ)
                ExtComplex::new(
                    Float::with_val(p.bits(), &num.im / &den),
                    Float::with_val(p.bits(), -(num.re / &den)),
                )
            })
            .collect();
        return Ok(ContinuousKernels {
            values,
            error: 0.0,
            nodes: 0,
        });
    }
    let band = phis.iter().map(|x| x.to_f64().abs()).fold(1.0, f64::max);
    let (values, error, nodes) = refine(w, band, tol, p, |level| {
        Ok(phis.iter().map(|phi| level_sum(level, phi, p)).collect())
    })?;
    Ok(ContinuousKernels { values, error, nodes })
}

/// `(1/T)∫₀^T w(t/T) f(θ₀ + ρt) dt` computed per mode.
pub fn birkhoff_continuous(run: &AveragingRun) -> Result<RunResult> {
    run.validate()?;
    let (t, quad_tol) = match run.mode {
        RunMode::Continuous { t, quad_tol } => (t, quad_tol),
        _ => return Err(NumericError::Domain("continuous average needs RunMode::Continuous".into())),
    };
    let start = Instant::now();
    let p = run.precision;
    let table = run.mode_table()?;
    let tol = quad_tol.map(|q| p.real(q)).unwrap_or_else(|| run.tail_tol());
    let omegas = table
        .modes
        .iter()
        .map(|m| run.rotation.dot(&m.k))
        .collect::<Result<Vec<_>>>()?;
    let kernels = continuous_kernels(run.weight, t, &omegas, &tol, p)?;
    let mut acc = CompensatedSum::new(p);
    for (m, k) in table.modes.iter().zip(&kernels.values) {
        let term = &(&m.coeff * &character(&m.k, &run.theta0, p)) * k;
        acc.add(&term.re);
    }
    let re = Float::with_val(p.bits(), acc.total() * 2u32 + &table.mean.re);
    let value = ExtComplex::new(re, table.mean.im.clone());
    let diagnostics = Diagnostics {
        a_n: None,
        orbit_residual: None,
        quad_error: Some(kernels.error),
        modes: 0,
        radius: 0,
        ln_tail: 0.0,
    };
    Ok(finish(run, value, &table, kernels.error * table.abs_sum(), start, diagnostics))
}

/// The continuous average by quadrature of `y ↦ w(y) f(θ₀ + ρTy)` directly,
/// for cross-checking the per-mode path.
pub fn birkhoff_continuous_time_domain(run: &AveragingRun) -> Result<RunResult> {
    run.validate()?;
    let (t, quad_tol) = match run.mode {
        RunMode::Continuous { t, quad_tol } => (t, quad_tol),
        _ => return Err(NumericError::Domain("continuous average needs RunMode::Continuous".into())),
    };
    let start = Instant::now();
    let p = run.precision;
    let table = run.mode_table()?;
    let d = run.rotation.dimension();
    let maxes = table.max_entries(d);
    let tol = quad_tol.map(|q| p.real(q)).unwrap_or_else(|| run.tail_tol());
    let wide = p.bits() + 96;
    let tt = p.real(t);
    let point = |y: &ExtReal| -> Vec<ExtReal> {
        let s = Float::with_val(wide, &tt * y);
        run.rotation
            .coords()
            .iter()
            .zip(&run.theta0)
            .map(|(r, th)| Float::with_val(p.bits(), frac(&(Float::with_val(wide, r * &s) + th))))
            .collect()
    };
    let f_at = |y: &ExtReal| -> ExtReal {
        let pows = PowerTable::new(&point(y), &maxes, p);
        evaluate_table(&table, &pows, p).re
    };
    let band = {
        let mut b = 1.0f64;
        for m in &table.modes {
            b = b.max(run.rotation.dot(&m.k)?.to_f64().abs() * t);
        }
        b
    };
    let (values, error, _) = refine(run.weight, band, &tol, p, |level| {
        let mut acc = CompensatedSum::new(p);
        match level {
            Level::Trapezoid { m, coeffs } => {
                for (j, c) in coeffs.iter().enumerate() {
                    if !c.is_zero() {
                        let y = p.real(j as u64) / *m as u64;
                        acc.add(&(f_at(&y) * c));
                    }
                }
            }
            Level::Panels { ys, coeffs } => {
                for (y, c) in ys.iter().zip(coeffs) {
                    acc.add(&(f_at(y) * c));
                }
            }
        }
        Ok(vec![ExtComplex::from_real(acc.total())])
    })?;
    let value = ExtComplex::new(values[0].re.clone(), table.mean.im.clone());
    let diagnostics = Diagnostics {
        a_n: None,
        orbit_residual: None,
        quad_error: Some(error),
        modes: 0,
        radius: 0,
        ln_tail: 0.0,
    };
    Ok(finish(run, value, &table, error, start, diagnostics))
}

/// Dispatches on the run mode.
pub fn run_average(run: &AveragingRun) -> Result<RunResult> {
    match run.mode {
        RunMode::Discrete { .. } => birkhoff_discrete(run),
        RunMode::Continuous { .. } => birkhoff_continuous(run),
    }
}
