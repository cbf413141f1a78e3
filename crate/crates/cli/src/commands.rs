//! The subcommands, written against `io::Write` so tests can capture output.

use std::io::Write;
use std::time::Instant;

use birkhoff_core::analysis::{
    check_h1, check_h2, check_h3, check_h4, fit_rate, GridPoint, H3Params, H4Params, ModelHint, RateFit,
};
use birkhoff_core::engine::{fourier_error_oracle, ln_ext, run_average, AveragingRun, RunMode, RunResult};
use birkhoff_core::numeric::{format_sci, parse_real, pow10};
use birkhoff_core::observables::Observable;
use birkhoff_core::rotations::{make_rotation, nonresonance_scan, ApproximationFunction, DivisorMode, RotationVector};
use birkhoff_core::weights::{l1_growth, Smoothness, WeightFunction};
use birkhoff_core::{ExtReal, Precision};
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, Hypothesis, Mode};
use crate::sweep::{FitFooter, SweepRow, SweepWriter};
use crate::CliError;

/// Version tag carried by every JSON document.
pub const VERDICT_SCHEMA: &str = "birkhoff-verdict v1";
pub const SCAN_SCHEMA: &str = "birkhoff-scan v1";

/// Objects built from a config, shared by every grid point.
pub struct Setup {
    pub observable: Observable,
    pub rotation: RotationVector,
    pub weight: WeightFunction,
    pub theta0: Vec<ExtReal>,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let p = cfg.precision;
        let rot_spec = cfg.require("rotation", &cfg.rotation)?;
        let rotation = make_rotation(rot_spec, p).map_err(|e| CliError::from(e).in_field("rotation"))?;
        let obs_spec = cfg.require("observable", &cfg.observable)?;
        let observable =
            Observable::parse(obs_spec, rotation.regime(), p).map_err(|e| CliError::from(e).in_field("observable"))?;
        let weight_spec = cfg.require("weight", &cfg.weight)?;
        let weight = WeightFunction::parse(weight_spec, p).map_err(|e| CliError::from(e).in_field("weight"))?;
        let dim = rotation.dimension();
        let theta0 = match &cfg.theta0 {
            None => vec![p.zero(); dim],
            Some(parts) => {
                if parts.len() != dim {
                    return Err(CliError::Parse(format!(
                        "theta0: {} coordinates given, rotation has {dim}",
                        parts.len()
                    )));
                }
                parts
                    .iter()
                    .map(|s| parse_real(s, p))
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::from(e).in_field("theta0"))?
            }
        };
        Ok(Setup {
            observable,
            rotation,
            weight,
            theta0,
        })
    }

    /// The run at one grid point.
    pub fn run_at<'a>(&'a self, cfg: &ExperimentConfig, horizon: f64) -> AveragingRun<'a> {
        let p = cfg.precision;
        let mut run = match cfg.mode {
            Mode::Discrete => AveragingRun::discrete(&self.observable, &self.rotation, &self.weight, horizon as u64, p),
            Mode::Continuous => {
                let mut r = AveragingRun::continuous(&self.observable, &self.rotation, &self.weight, horizon, p);
                r.mode = RunMode::Continuous {
                    t: horizon,
                    quad_tol: cfg.quad_tol,
                };
                r
            }
        };
        run.theta0 = self.theta0.clone();
        run.tail_tol = cfg.tail_tol.map(|t| p.real(t));
        run
    }
}

fn grid_points(cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    cfg.grid
        .ok_or_else(|| CliError::Parse("missing required key `grid.start`".into()))?
        .points(cfg.mode)
}

/// Law to fit: stretched exponential for infinitely smooth weights unless
/// the config says otherwise.
pub fn fit_hint(cfg: &ExperimentConfig, weight: &WeightFunction) -> ModelHint {
    cfg.fit.unwrap_or(match weight.smoothness() {
        Smoothness::Infinite => ModelHint::StretchedExp,
        _ => ModelHint::PolySlope,
    })
}

/// What a sweep produced, besides the file.
#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<GridPoint>,
    pub fit: Option<RateFit>,
}

/// Runs every grid point in order, streaming rows to `out`.
///
/// On a failing point the rows so far stay written, an `# error:` line is
/// appended and the error is returned.
pub fn run_sweep<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<SweepOutcome, CliError> {
    let setup = Setup::build(cfg)?;
    let points = grid_points(cfg)?;
    let mut writer = SweepWriter::start(out, &cfg.entries)?;
    let mut grid = Vec::with_capacity(points.len());
    for &h in &points {
        let start = Instant::now();
        let res = match run_average(&setup.run_at(cfg, h)) {
            Ok(r) => r,
            Err(e) => {
                let err = CliError::from(e).in_field(&format!("grid point {h}"));
                writer.error(&err.to_string())?;
                return Err(err);
            }
        };
        let wall_ms = if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        writer.row(&SweepRow::new(h, &res.value, &res.abs_error, &res.precision_floor, wall_ms))?;
        grid.push(GridPoint {
            t: h,
            ln_err: res.ln_abs_error(),
            saturated: res.saturated(),
        });
    }
    let (fit, footer) = match fit_rate(&grid, fit_hint(cfg, &setup.weight)) {
        Ok(f) => {
            let footer = FitFooter::from_fit(&f);
            (Some(f), footer)
        }
        Err(e) => (None, FitFooter::None { reason: e.to_string() }),
    };
    writer.finish(&footer)?;
    Ok(SweepOutcome { points: grid, fit })
}

/// Runs a single grid point; what a sweep row can be checked against.
pub fn run_point(cfg: &ExperimentConfig, horizon: f64) -> Result<RunResult, CliError> {
    let setup = Setup::build(cfg)?;
    Ok(run_average(&setup.run_at(cfg, horizon))?)
}

fn config_echo(cfg: &ExperimentConfig) -> Value {
    Value::Object(cfg.entries.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
}

/// Evaluates the hypothesis block; the report's fields sit at top level next
/// to `schema` and `config`.
pub fn run_check(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let block = cfg
        .check
        .as_ref()
        .ok_or_else(|| CliError::Parse("check: no hypothesis block in config".into()))?;
    let report = match block.hypothesis {
        Hypothesis::H1 => serde_json::to_value(check_h1(&block.delta, &block.delta_tilde, block.m, block.d)),
        Hypothesis::H2 => serde_json::to_value(check_h2(
            &block.delta,
            &block.delta_tilde,
            block.m,
            block.eta,
            block.nu_max,
        )),
        Hypothesis::H3 => serde_json::to_value(check_h3(
            &H3Params {
                delta: block.delta.clone(),
                delta_tilde: block.delta_tilde.clone(),
                phi: block.phi,
                alpha: block.alpha.unwrap_or_default(),
                d: block.d,
            },
            block.x_grid,
        )),
        Hypothesis::H4 => serde_json::to_value(check_h4(
            &H4Params {
                small: block.delta.clone(),
                class: block.delta_tilde.clone(),
                phi: block.phi,
                gamma: block.gamma.unwrap_or_default(),
                eta: block.eta,
            },
            block.x_grid,
        )),
    }
    .map_err(|e| CliError::Numeric(format!("serializing report: {e}")))?;
    let mut doc = Map::new();
    doc.insert("schema".into(), json!(VERDICT_SCHEMA));
    doc.insert("config".into(), config_echo(cfg));
    if let Value::Object(fields) = report {
        doc.extend(fields);
    }
    Ok(Value::Object(doc))
}

/// Nonresonance constant of a rotation over the ball of radius `k_max`.
pub fn run_scan(
    rotation: &str,
    approx: &str,
    k_max: u64,
    continuous: bool,
    precision: Precision,
) -> Result<Value, CliError> {
    let rot = make_rotation(rotation, precision).map_err(|e| CliError::from(e).in_field("rotation"))?;
    let approx: ApproximationFunction = approx.parse().map_err(|e| CliError::from(e).in_field("approx"))?;
    if k_max == 0 {
        return Err(CliError::Parse("K: must be at least 1".into()));
    }
    let mode = if continuous {
        DivisorMode::Continuous
    } else {
        DivisorMode::Discrete
    };
    let scan = nonresonance_scan(&rot, &approx, k_max, mode)?;
    Ok(json!({
        "schema": SCAN_SCHEMA,
        "rotation": rotation,
        "approx": approx.to_string(),
        "K": k_max,
        "mode": if continuous { "continuous" } else { "discrete" },
        "constant": format_sci(&scan.constant, 12),
        "ln_constant": ln_ext(&scan.constant),
        "argmin": scan.argmin.to_string(),
        "radius": scan.radius,
        "scanned": scan.scanned,
    }))
}

/// CSV of `‖w̄⁽ⁿ⁾‖_{L¹}` followed by the growth summary.
pub fn run_weight_norms<W: Write>(n_max: u32, digits: u32, mut out: W) -> Result<(), CliError> {
    if n_max < 2 {
        return Err(CliError::Parse("n-max: must be at least 2".into()));
    }
    let g = l1_growth(n_max, digits)?;
    writeln!(out, "# birkhoff-weight-norms v1")?;
    writeln!(out, "n,l1_norm")?;
    for (n, v) in &g.norms {
        writeln!(out, "{n},{v:e}")?;
    }
    writeln!(
        out,
        "# growth: c_star={} beta={} beta_star={} exponent_raw={}",
        g.c_star,
        g.beta,
        g.beta_star(),
        g.exponent_raw
    )?;
    out.flush()?;
    Ok(())
}

/// Compares the orbit average with the Fourier-space oracle at every grid
/// point; tolerance is `10^{-2P/3}`.
pub fn run_oracle_check<W: Write>(cfg: &ExperimentConfig, mut out: W) -> Result<(), CliError> {
    let setup = Setup::build(cfg)?;
    let points = grid_points(cfg)?;
    let p = cfg.precision;
    let tol = pow10(-(2 * p.digits() as i32) / 3, p);
    writeln!(out, "# birkhoff-oracle-check v1")?;
    writeln!(out, "# tolerance: {}", format_sci(&tol, 6))?;
    writeln!(out, "N_or_T,orbit_abs_error,oracle_abs_error,difference,ok")?;
    let mut failures = Vec::new();
    for &h in &points {
        let run = setup.run_at(cfg, h);
        let res = run_average(&run)?;
        let oracle = fourier_error_oracle(&run, None)?;
        let mean = setup.observable.mean();
        let dre = ExtReal::with_val(p.bits(), &res.value.re - &mean.re) - &oracle.error.re;
        let dim = ExtReal::with_val(p.bits(), &res.value.im - &mean.im) - &oracle.error.im;
        let diff = ExtReal::with_val(p.bits(), dre.hypot(&dim));
        let ok = diff <= tol;
        if !ok {
            failures.push(h);
        }
        writeln!(
            out,
            "{h},{},{},{},{ok}",
            format_sci(&res.abs_error, 12),
            format_sci(&oracle.abs_error, 12),
            format_sci(&diff, 6)
        )?;
        out.flush()?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Mismatch(format!("grid points {failures:?} exceed tolerance")))
    }
}
