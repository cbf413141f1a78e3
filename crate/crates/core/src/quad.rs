//! Quadrature: extended-precision Gauss–Legendre panels and an `f64`
//! Gauss–Kronrod integrator for the hypothesis checks.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use rug::Float;

use crate::error::{NumericError, Result};
use crate::numeric::{CompensatedSum, ExtReal, Precision};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct GlRule {
    pub nodes: Vec<ExtReal>,
    pub weights: Vec<ExtReal>,
}

impl GlRule {
    fn compute(n: usize, bits: u32) -> GlRule {
        let work = bits + 32;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let tol = Float::with_val(work, Float::i_exp(1, -(bits as i32) - 8));
        for i in 0..n {
            let guess = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut x = Float::with_val(work, guess);
            let mut dp = Float::new(work);
            for _ in 0..200 {
                let (p, d) = legendre(n, &x, work);
                let dx = Float::with_val(work, &p / &d);
                x -= &dx;
                dp = d;
                if dx.abs() < tol {
                    let (_, d) = legendre(n, &x, work);
                    dp = d;
                    break;
                }
            }
            let one_minus = Float::with_val(work, 1u32) - Float::with_val(work, x.clone().square());
            let w = Float::with_val(work, 2u32) / (one_minus * dp.square());
            nodes.push(Float::with_val(bits, &x));
            weights.push(Float::with_val(bits, &w));
        }
        GlRule { nodes, weights }
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: &Float, bits: u32) -> (Float, Float) {
    let mut p0 = Float::with_val(bits, 1u32);
    let mut p1 = x.clone();
    for k in 2..=n {
        let kf = k as u32;
        let t = Float::with_val(bits, x * &p1) * (2 * kf - 1) - Float::with_val(bits, &p0 * (kf - 1));
        p0 = p1;
        p1 = t / kf;
    }
    let num = Float::with_val(bits, &p0 - Float::with_val(bits, x * &p1)) * n as u32;
    let den = Float::with_val(bits, 1u32) - Float::with_val(bits, x * x);
    (p1, num / den)
}

/// Cached Gauss–Legendre rule for `n` points at `bits` of mantissa.
pub fn gl_rule(n: usize, bits: u32) -> Arc<GlRule> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u32), Arc<GlRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("rule cache poisoned").get(&(n, bits)) {
        return Arc::clone(r);
    }
    let rule = Arc::new(GlRule::compute(n, bits));
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert((n, bits), Arc::clone(&rule));
    rule
}

/// Number of Gauss–Legendre points used per panel at a given precision.
pub fn panel_order(prec: Precision) -> usize {
    (prec.digits() as usize / 3).clamp(12, 64)
}

/// Applies an `n`-point rule to `f` on `[a, b]`.
pub fn gl_panel<F>(f: &mut F, a: &ExtReal, b: &ExtReal, rule: &GlRule, prec: Precision) -> ExtReal
where
    F: FnMut(&ExtReal) -> ExtReal,
{
    let half = Float::with_val(prec.bits(), b - a) / 2u32;
    let mid = Float::with_val(prec.bits(), a + b) / 2u32;
    let mut acc = CompensatedSum::new(prec);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let t = Float::with_val(prec.bits(), &half * x) + &mid;
        let v = f(&t);
        acc.add(&(v * w));
    }
    acc.total() * half
}

/// Outcome of an adaptive integration.
#[derive(Clone, Debug)]
pub struct QuadResult {
    pub value: ExtReal,
    pub error: ExtReal,
    pub panels: usize,
}

/// Limits for [`adaptive_gl`].
#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub rel_tol: f64,
    /// Absolute floor expressed as a power of ten: accept once the error is below `10^abs_exp10`.
    pub abs_exp10: i32,
    pub max_panels: usize,
    pub initial_panels: usize,
}

impl QuadOptions {
    pub fn relative(rel_tol: f64, prec: Precision) -> Self {
        QuadOptions {
            rel_tol,
            abs_exp10: -(prec.digits() as i32) - 20,
            max_panels: 20_000,
            initial_panels: 4,
        }
    }
}

struct Panel {
    a: ExtReal,
    b: ExtReal,
    fine: ExtReal,
    err: ExtReal,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.partial_cmp(&o.err).unwrap_or(Ordering::Equal)
    }
}

fn make_panel<F>(f: &mut F, a: ExtReal, b: ExtReal, rule: &GlRule, prec: Precision) -> Panel
where
    F: FnMut(&ExtReal) -> ExtReal,
{
    let m = Float::with_val(prec.bits(), &a + &b) / 2u32;
    let coarse = gl_panel(f, &a, &b, rule, prec);
    let fine = gl_panel(f, &a, &m, rule, prec) + gl_panel(f, &m, &b, rule, prec);
    let err = Float::with_val(prec.bits(), &fine - &coarse).abs();
    Panel { a, b, fine, err }
}

/// Globally adaptive Gauss–Legendre integration of `f` over `[a, b]`.
///
/// Each panel is estimated by the rule on the panel and on its two halves;
/// the panel with the largest discrepancy is bisected until the summed
/// discrepancy is below `rel_tol · |I|` (or the absolute floor).
pub fn adaptive_gl<F>(mut f: F, a: &ExtReal, b: &ExtReal, opts: QuadOptions, prec: Precision) -> Result<QuadResult>
where
    F: FnMut(&ExtReal) -> ExtReal,
{
    let eps = 10f64.powi(-(prec.digits() as i32));
    if opts.rel_tol < 10.0 * eps {
        return Err(NumericError::PrecisionExhausted(format!(
            "relative tolerance {:e} below working precision {}",
            opts.rel_tol, prec
        )));
    }
    let rule = gl_rule(panel_order(prec), prec.bits());
    let width = Float::with_val(prec.bits(), b - a);
    let mut heap = BinaryHeap::new();
    let n0 = opts.initial_panels.max(1);
    for i in 0..n0 {
        let lo = Float::with_val(prec.bits(), &width * i as u32) / n0 as u32 + a;
        let hi = if i + 1 == n0 {
            b.clone()
        } else {
            Float::with_val(prec.bits(), &width * (i + 1) as u32) / n0 as u32 + a
        };
        heap.push(make_panel(&mut f, lo, hi, &rule, prec));
    }
    let abs_floor = crate::numeric::pow10(opts.abs_exp10, prec);
    let rel = prec.real(opts.rel_tol);
    let mut iter = 0usize;
    let (mut value, mut err) = sum_panels(&heap, prec);
    loop {
        // Running sums drift under repeated subtraction; refresh them periodically.
        if iter.is_multiple_of(64) {
            (value, err) = sum_panels(&heap, prec);
        }
        iter += 1;
        let target = {
            let r = Float::with_val(prec.bits(), &value * &rel).abs();
            if r > abs_floor {
                r
            } else {
                abs_floor.clone()
            }
        };
        if err <= target {
            let (value, err) = sum_panels(&heap, prec);
            if err <= target {
                return Ok(QuadResult {
                    value,
                    error: err,
                    panels: heap.len(),
                });
            }
        }
        if heap.len() >= opts.max_panels {
            return Err(NumericError::QuadratureBudgetExceeded(format!(
                "{} panels, error estimate {:.3e}",
                heap.len(),
                err.to_f64()
            )));
        }
        let worst = heap.pop().expect("non-empty panel heap");
        let m = Float::with_val(prec.bits(), &worst.a + &worst.b) / 2u32;
        if m <= worst.a || m >= worst.b {
            return Err(NumericError::PrecisionExhausted(
                "panel width reached working resolution".into(),
            ));
        }
        value -= &worst.fine;
        err -= &worst.err;
        for p in [
            make_panel(&mut f, worst.a.clone(), m.clone(), &rule, prec),
            make_panel(&mut f, m, worst.b, &rule, prec),
        ] {
            value += &p.fine;
            err += &p.err;
            heap.push(p);
        }
    }
}

fn sum_panels(heap: &BinaryHeap<Panel>, prec: Precision) -> (ExtReal, ExtReal) {
    let mut total = CompensatedSum::new(prec);
    let mut err = prec.zero();
    for p in heap.iter() {
        total.add(&p.fine);
        err += &p.err;
    }
    (total.total(), err)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration in double precision.
pub fn integrate_f64<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64, max_panels: usize) -> (f64, f64) {
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(&mut f, a, b);
    panels.push((a, b, v, e));
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 || panels.len() >= max_panels {
            return (total, err);
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap_or(Ordering::Equal))
            .expect("non-empty");
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let m = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&mut f, pa, m);
        let (v2, e2) = gk15(&mut f, m, pb);
        panels.push((pa, m, v1, e1));
        panels.push((m, pb, v2, e2));
    }
}

/// `∫_a^∞ f` through the map `r = a + t / (1 - t)`.
pub fn integrate_f64_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, rel_tol: f64) -> (f64, f64) {
    integrate_f64(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let v = f(a + t / s);
            if v == 0.0 {
                0.0
            } else {
                v / (s * s)
            }
        },
        0.0,
        1.0,
        rel_tol,
        4000,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_weights_sum_to_two() {
        let p = Precision::new(60);
        let r = gl_rule(20, p.bits());
        let mut s = p.zero();
        for w in &r.weights {
            s += w;
        }
        assert!((s - 2u32).abs() < p.epsilon());
    }

    #[test]
    fn gl_is_exact_for_polynomials() {
        let p = Precision::new(50);
        let r = gl_rule(12, p.bits());
        let a = p.zero();
        let b = p.real(1u32);
        let v = gl_panel(&mut |x: &ExtReal| rug::ops::Pow::pow(x.clone(), 23u32), &a, &b, &r, p);
        let want = p.real(1u32) / 24u32;
        assert!((v - want).abs() < p.epsilon());
    }

    #[test]
    fn adaptive_gl_handles_endpoint_flatness() {
        let p = Precision::new(40);
        let a = p.zero();
        let b = p.real(1u32);
        // ∫ exp(-1/x) on (0,1] = e^{-1} - E1(1)
        let r = adaptive_gl(
            |x: &ExtReal| {
                if x.is_zero() {
                    p.zero()
                } else {
                    (-(p.real(1u32) / x)).exp()
                }
            },
            &a,
            &b,
            QuadOptions::relative(1e-30, p),
            p,
        )
        .unwrap();
        // e^{-1} - E1(1) = e^{-1} + Ei(-1)
        let want = (-p.real(1u32)).exp() + rug::Float::with_val(p.bits(), -1i32).eint();
        let rel = ((r.value - &want) / want).abs().to_f64();
        assert!(rel < 1e-29, "rel = {rel}");
    }

    #[test]
    fn tolerance_below_precision_is_reported() {
        let p = Precision::new(30);
        let a = p.zero();
        let b = p.real(1u32);
        let e = adaptive_gl(|x: &ExtReal| x.clone(), &a, &b, QuadOptions::relative(1e-40, p), p);
        assert!(matches!(e, Err(NumericError::PrecisionExhausted(_))));
    }

    #[test]
    fn gk_matches_closed_forms() {
        let (v, _) = integrate_f64(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 100);
        assert!((v - 2.0).abs() < 1e-12);
        let (v, _) = integrate_f64_to_infinity(|x| (-x).exp(), 1.0, 1e-12);
        assert!((v - (-1f64).exp()).abs() < 1e-12);
    }
}
