//! The plain-text experiment document.
//!
//! One `key = value` pair per line; `#` starts a comment. A `[check]` line
//! puts the following keys in the hypothesis block, which can also be
//! written with a `check.` prefix.

use std::path::PathBuf;

use birkhoff_core::analysis::{AdaptiveFunction, ModelHint, XGrid};
use birkhoff_core::rotations::ApproximationFunction;
use birkhoff_core::Precision;

use crate::CliError;

/// Environment variable giving the precision when the document has none.
pub const PRECISION_ENV: &str = "BIRKHOFF_PRECISION";

/// Precision used when neither the document nor the environment sets one.
pub const DEFAULT_DIGITS: u32 = 50;

/// Smallest accepted precision in decimal digits.
pub const MIN_DIGITS: u32 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Discrete,
    Continuous,
}

/// Geometric grid `start·factor^i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub factor: f64,
    pub count: usize,
}

impl Grid {
    /// Grid points; in discrete mode they are rounded to integers and must
    /// stay strictly increasing.
    pub fn points(&self, mode: Mode) -> Result<Vec<f64>, CliError> {
        let raw = (0..self.count).map(|i| self.start * self.factor.powi(i as i32));
        let pts: Vec<f64> = match mode {
            Mode::Discrete => raw.map(f64::round).collect(),
            Mode::Continuous => raw.collect(),
        };
        if pts.windows(2).any(|w| w[1] <= w[0]) || pts.first().is_some_and(|&p| p < 1.0) {
            return Err(CliError::Parse("grid: points must be at least 1 and strictly increasing".into()));
        }
        Ok(pts)
    }
}

/// Which hypothesis a check block asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hypothesis {
    H1,
    H2,
    H3,
    H4,
}

/// The optional `[check]` section.
#[derive(Clone, Debug)]
pub struct CheckBlock {
    pub hypothesis: Hypothesis,
    /// Δ, or 𝚍 for the infinite-dimensional checks.
    pub delta: ApproximationFunction,
    /// Δ̃, or Δ̃∞.
    pub delta_tilde: ApproximationFunction,
    pub m: u32,
    pub d: u32,
    pub eta: u32,
    pub nu_max: u64,
    pub phi: AdaptiveFunction,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub x_grid: XGrid,
}

/// A parsed experiment document.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub observable: Option<String>,
    pub rotation: Option<String>,
    pub weight: Option<String>,
    pub theta0: Option<Vec<String>>,
    pub mode: Mode,
    pub grid: Option<Grid>,
    pub precision: Precision,
    pub output: Option<PathBuf>,
    pub fit: Option<ModelHint>,
    pub tail_tol: Option<f64>,
    pub quad_tol: Option<f64>,
    /// Record wall-clock times; off by default so output is byte-stable.
    pub timing: bool,
    pub check: Option<CheckBlock>,
    /// Every `(key, value)` in document order, for echoing.
    pub entries: Vec<(String, String)>,
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn located(e: &Entry, msg: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("line {} ({}): {msg}", e.line, e.key))
}

fn number<T: std::str::FromStr>(e: &Entry) -> Result<T, CliError> {
    e.value
        .parse()
        .map_err(|_| located(e, format!("cannot parse `{}`", e.value)))
}

const MAIN_KEYS: &[&str] = &[
    "observable",
    "rotation",
    "weight",
    "theta0",
    "mode",
    "grid.start",
    "grid.factor",
    "grid.count",
    "precision",
    "output",
    "fit",
    "tail_tol",
    "quad_tol",
    "timing",
];

const CHECK_KEYS: &[&str] = &[
    "hypothesis",
    "delta",
    "delta_tilde",
    "m",
    "d",
    "eta",
    "nu_max",
    "phi",
    "alpha",
    "gamma",
    "x_start",
    "x_factor",
    "x_count",
];

impl ExperimentConfig {
    /// Parses a document, taking the default precision from the environment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let digits = match std::env::var(PRECISION_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Parse(format!("{PRECISION_ENV}: cannot parse `{v}`")))?,
            Err(_) => DEFAULT_DIGITS,
        };
        Self::parse_with_default(text, digits)
    }

    pub fn parse_with_default(text: &str, default_digits: u32) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        let mut in_check = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                in_check = match line {
                    "[check]" => true,
                    "[experiment]" => false,
                    _ => return Err(CliError::Parse(format!("line {}: unknown section `{line}`", i + 1))),
                };
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Parse(format!("line {}: expected `key = value`", i + 1)));
            };
            let mut key = k.trim().to_string();
            if in_check && !key.starts_with("check.") {
                key = format!("check.{key}");
            }
            let value = v.trim().to_string();
            let known = match key.strip_prefix("check.") {
                Some(rest) => CHECK_KEYS.contains(&rest),
                None => MAIN_KEYS.contains(&key.as_str()),
            };
            let entry = Entry {
                line: i + 1,
                key,
                value,
            };
            if !known {
                return Err(located(&entry, "unknown key"));
            }
            if entries.iter().any(|e: &Entry| e.key == entry.key) {
                return Err(located(&entry, "duplicate key"));
            }
            entries.push(entry);
        }
        Self::from_entries(entries, default_digits)
    }

    fn from_entries(entries: Vec<Entry>, default_digits: u32) -> Result<Self, CliError> {
        let get = |k: &str| entries.iter().find(|e| e.key == k);
        let digits = match get("precision") {
            Some(e) => number::<u32>(e)?,
            None => default_digits,
        };
        if digits < MIN_DIGITS {
            return Err(CliError::Parse(format!("precision: {digits} digits is below the minimum of {MIN_DIGITS}")));
        }
        let mode = match get("mode") {
            None => Mode::Discrete,
            Some(e) => match e.value.as_str() {
                "discrete" => Mode::Discrete,
                "continuous" => Mode::Continuous,
                _ => return Err(located(e, "expected `discrete` or `continuous`")),
            },
        };
        let grid_keys = [get("grid.start"), get("grid.factor"), get("grid.count")];
        let grid = match grid_keys {
            [None, None, None] => None,
            [Some(s), f, Some(c)] => {
                let g = Grid {
                    start: number(s)?,
                    factor: match f {
                        Some(f) => number(f)?,
                        None => 2.0,
                    },
                    count: number(c)?,
                };
                if !(g.start > 0.0) || !(g.factor > 1.0) || g.count == 0 {
                    return Err(CliError::Parse(
                        "grid: need start > 0, factor > 1 and count >= 1".into(),
                    ));
                }
                g.points(mode)?;
                Some(g)
            }
            _ => return Err(CliError::Parse("grid: grid.start and grid.count are both required".into())),
        };
        let fit = match get("fit") {
            Some(e) => Some(e.value.parse::<ModelHint>().map_err(|x| located(e, x))?),
            None => None,
        };
        let timing = match get("timing") {
            None => false,
            Some(e) => match e.value.as_str() {
                "on" => true,
                "off" => false,
                _ => return Err(located(e, "expected `on` or `off`")),
            },
        };
        let opt_f64 = |k: &str| -> Result<Option<f64>, CliError> {
            match get(k) {
                Some(e) => {
                    let v: f64 = number(e)?;
                    if !(v > 0.0) {
                        return Err(located(e, "must be positive"));
                    }
                    Ok(Some(v))
                }
                None => Ok(None),
            }
        };
        let check = if entries.iter().any(|e| e.key.starts_with("check.")) {
            Some(parse_check(&entries)?)
        } else {
            None
        };
        let text = |k: &str| get(k).map(|e| e.value.clone());
        Ok(ExperimentConfig {
            observable: text("observable"),
            rotation: text("rotation"),
            weight: text("weight"),
            theta0: get("theta0").map(|e| e.value.split(',').map(|s| s.trim().to_string()).collect()),
            mode,
            grid,
            precision: Precision::new(digits),
            output: text("output").map(PathBuf::from),
            fit,
            tail_tol: opt_f64("tail_tol")?,
            quad_tol: opt_f64("quad_tol")?,
            timing,
            check,
            entries: entries.iter().map(|e| (e.key.clone(), e.value.clone())).collect(),
        })
    }

    /// The named main-section value, or a parse error naming the field.
    pub fn require<'a>(&self, field: &'a str, value: &'a Option<String>) -> Result<&'a str, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Parse(format!("missing required key `{field}`")))
    }
}

fn parse_check(entries: &[Entry]) -> Result<CheckBlock, CliError> {
    let get = |k: &str| entries.iter().find(|e| e.key == format!("check.{k}"));
    let need = |k: &str| get(k).ok_or_else(|| CliError::Parse(format!("check: missing key `{k}`")));
    let hyp = need("hypothesis")?;
    let hypothesis = match hyp.value.to_ascii_uppercase().as_str() {
        "H1" => Hypothesis::H1,
        "H2" => Hypothesis::H2,
        "H3" => Hypothesis::H3,
        "H4" => Hypothesis::H4,
        _ => return Err(located(hyp, "expected H1, H2, H3 or H4")),
    };
    let approx = |k: &str| -> Result<ApproximationFunction, CliError> {
        let e = need(k)?;
        e.value.parse().map_err(|x| located(e, x))
    };
    let or = |k: &str, default: u64| -> Result<u64, CliError> {
        match get(k) {
            Some(e) => number(e),
            None => Ok(default),
        }
    };
    let positive = |k: &str| -> Result<Option<f64>, CliError> {
        match get(k) {
            Some(e) => {
                let v: f64 = number(e)?;
                if !(v > 0.0) {
                    return Err(located(e, "must be positive"));
                }
                Ok(Some(v))
            }
            None => Ok(None),
        }
    };
    let phi = match get("phi") {
        Some(e) => e.value.parse().map_err(|x| located(e, x))?,
        None => AdaptiveFunction::sqrt(),
    };
    let defaults = XGrid::default();
    let x_grid = XGrid {
        start: positive("x_start")?.unwrap_or(defaults.start),
        factor: positive("x_factor")?.unwrap_or(defaults.factor),
        count: or("x_count", defaults.count as u64)? as usize,
    };
    if x_grid.factor <= 1.0 || x_grid.count < 4 {
        return Err(CliError::Parse("check: x grid needs factor > 1 and at least 4 points".into()));
    }
    let block = CheckBlock {
        hypothesis,
        delta: approx("delta")?,
        delta_tilde: approx("delta_tilde")?,
        m: or("m", 2)? as u32,
        d: or("d", 1)? as u32,
        eta: or("eta", 2)? as u32,
        nu_max: or("nu_max", 48)?,
        phi,
        alpha: positive("alpha")?,
        gamma: positive("gamma")?,
        x_grid,
    };
    if block.m < 1 || block.d < 1 || block.eta < 1 {
        return Err(CliError::Parse("check: m, d and eta must be at least 1".into()));
    }
    match hypothesis {
        Hypothesis::H3 if block.alpha.is_none() => Err(CliError::Parse("check: H3 needs `alpha`".into())),
        Hypothesis::H4 if block.gamma.is_none() => Err(CliError::Parse("check: H4 needs `gamma`".into())),
        _ => Ok(block),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = "\
# golden rotation, analytic observable
observable = analytic:mu=1
rotation = golden
weight = exp
mode = discrete
grid.start = 128
grid.factor = 2
grid.count = 8
precision = 60
";

    #[test]
    fn parses_a_sweep_document() {
        let c = ExperimentConfig::parse_with_default(SWEEP, 50).unwrap();
        assert_eq!(c.precision.digits(), 60);
        assert_eq!(c.mode, Mode::Discrete);
        let pts = c.grid.unwrap().points(c.mode).unwrap();
        assert_eq!(pts.first(), Some(&128.0));
        assert_eq!(pts.last(), Some(&16384.0));
        assert!(c.check.is_none());
        assert_eq!(c.entries.len(), 8);
    }

    #[test]
    fn default_precision_applies() {
        let c = ExperimentConfig::parse_with_default("weight = exp", 45).unwrap();
        assert_eq!(c.precision.digits(), 45);
    }

    #[test]
    fn rejects_bad_documents() {
        for bad in [
            "precision = 20",
            "colour = blue",
            "weight",
            "mode = sideways",
            "grid.start = 4\ngrid.factor = 1.0\ngrid.count = 3",
            "grid.start = 1\ngrid.factor = 1.2\ngrid.count = 5",
            "grid.start = 8",
            "weight = exp\nweight = flat",
            "[other]\nx = 1",
        ] {
            assert!(
                matches!(ExperimentConfig::parse_with_default(bad, 50), Err(CliError::Parse(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn check_section_and_prefix_agree() {
        let a = "[check]\nhypothesis = H1\ndelta = pow:tau=1.2\ndelta_tilde = pow:tau=4\nm = 2\nd = 1";
        let b = "check.hypothesis = H1\ncheck.delta = pow:tau=1.2\ncheck.delta_tilde = pow:tau=4";
        let ca = ExperimentConfig::parse_with_default(a, 50).unwrap().check.unwrap();
        let cb = ExperimentConfig::parse_with_default(b, 50).unwrap().check.unwrap();
        assert_eq!(ca.hypothesis, Hypothesis::H1);
        assert_eq!(ca.delta, cb.delta);
        assert_eq!(ca.m, cb.m);
    }

    #[test]
    fn check_errors_name_the_field() {
        let e = ExperimentConfig::parse_with_default("[check]\nhypothesis = H1\ndelta = bogus\ndelta_tilde = pow:tau=4", 50)
            .unwrap_err();
        assert!(e.to_string().contains("delta"), "{e}");
        let e = ExperimentConfig::parse_with_default("[check]\nhypothesis = H3\ndelta = pow:tau=1\ndelta_tilde = pow:tau=4", 50)
            .unwrap_err();
        assert!(e.to_string().contains("alpha"), "{e}");
    }
}
