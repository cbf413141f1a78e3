//! The versioned sweep CSV: writer side and a reader for downstream tools.
//!
//! Layout, one item per line:
//!
//! ```text
//! # birkhoff-sweep v1
//! # config: key=value; key=value; ...
//! N_or_T,value_re,value_im,abs_error,precision_floor,wall_ms
//! <row>...
//! # fit: model=StretchedExp c=... xi=... stderr=... r2=... used=... excluded=...
//! ```
//!
//! The footer is `# fit: none reason=...` when no law could be fitted, and a
//! run that fails part way ends with `# error: ...` instead. Extended-range
//! numbers are written in MPFR scientific notation so magnitudes below the
//! `f64` range survive; [`log10_text`] reads them back in log form.

use std::collections::BTreeMap;
use std::io::Write;

use birkhoff_core::analysis::{FitModel, RateFit};
use birkhoff_core::numeric::format_sci;
use birkhoff_core::ExtComplex;

use crate::CliError;

pub const SCHEMA_LINE: &str = "# birkhoff-sweep v1";
pub const COLUMNS: &str = "N_or_T,value_re,value_im,abs_error,precision_floor,wall_ms";

/// Significant digits written for extended-precision columns.
pub const SIG_DIGITS: usize = 20;

/// One grid point as written.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub horizon: f64,
    pub value_re: String,
    pub value_im: String,
    pub abs_error: String,
    pub precision_floor: String,
    pub wall_ms: f64,
}

impl SweepRow {
    pub fn new(horizon: f64, value: &ExtComplex, abs_error: &birkhoff_core::ExtReal, floor: &birkhoff_core::ExtReal, wall_ms: f64) -> Self {
        SweepRow {
            horizon,
            value_re: format_sci(&value.re, SIG_DIGITS),
            value_im: format_sci(&value.im, SIG_DIGITS),
            abs_error: format_sci(abs_error, SIG_DIGITS),
            precision_floor: format_sci(floor, SIG_DIGITS),
            wall_ms,
        }
    }

    pub fn log10_abs_error(&self) -> f64 {
        log10_text(&self.abs_error)
    }

    pub fn log10_precision_floor(&self) -> f64 {
        log10_text(&self.precision_floor)
    }

    /// Same rule as the engine: within ten times the floor.
    pub fn saturated(&self) -> bool {
        self.log10_abs_error() <= self.log10_precision_floor() + 1.0
    }

    fn line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.horizon, self.value_re, self.value_im, self.abs_error, self.precision_floor, self.wall_ms
        )
    }
}

/// The trailing summary line.
#[derive(Clone, Debug, PartialEq)]
pub enum FitFooter {
    Fit {
        /// `PolySlope` or `StretchedExp`.
        model: String,
        params: BTreeMap<String, f64>,
    },
    None {
        reason: String,
    },
}

impl FitFooter {
    pub fn from_fit(fit: &RateFit) -> Self {
        let (model, pairs): (&str, Vec<(&str, f64)>) = match fit.model {
            FitModel::PolySlope { m, stderr, r2 } => ("PolySlope", vec![("m", m), ("stderr", stderr), ("r2", r2)]),
            FitModel::StretchedExp { c, xi, stderr, r2 } => {
                ("StretchedExp", vec![("c", c), ("xi", xi), ("stderr", stderr), ("r2", r2)])
            }
        };
        let mut params: BTreeMap<String, f64> = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        params.insert("used".into(), fit.used.len() as f64);
        params.insert("excluded".into(), fit.excluded.len() as f64);
        FitFooter::Fit {
            model: model.to_string(),
            params,
        }
    }

    fn line(&self) -> String {
        match self {
            FitFooter::Fit { model, params } => {
                let order = ["m", "c", "xi", "stderr", "r2", "used", "excluded"];
                let mut s = format!("# fit: model={model}");
                for k in order {
                    if let Some(v) = params.get(k) {
                        s.push_str(&format!(" {k}={v}"));
                    }
                }
                s
            }
            // Spaces would break the key=value split, so they become underscores.
            FitFooter::None { reason } => format!("# fit: none reason={}", reason.replace(char::is_whitespace, "_")),
        }
    }
}

/// Streams a sweep file, flushing every line so partial runs stay readable.
pub struct SweepWriter<W: Write> {
    out: W,
}

impl<W: Write> SweepWriter<W> {
    pub fn start(mut out: W, config_echo: &[(String, String)]) -> Result<Self, CliError> {
        let echo: Vec<String> = config_echo.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "{SCHEMA_LINE}")?;
        writeln!(out, "# config: {}", echo.join("; "))?;
        writeln!(out, "{COLUMNS}")?;
        out.flush()?;
        Ok(SweepWriter { out })
    }

    pub fn row(&mut self, row: &SweepRow) -> Result<(), CliError> {
        writeln!(self.out, "{}", row.line())?;
        self.out.flush()?;
        Ok(())
    }

    pub fn error(&mut self, message: &str) -> Result<(), CliError> {
        writeln!(self.out, "# error: {}", message.replace('\n', " "))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self, footer: &FitFooter) -> Result<W, CliError> {
        writeln!(self.out, "{}", footer.line())?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A sweep file read back.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepFrame {
    pub config: Vec<(String, String)>,
    pub rows: Vec<SweepRow>,
    pub footer: Option<FitFooter>,
    pub error: Option<String>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("sweep csv line {line}: {msg}"))
}

impl SweepFrame {
    /// Parses a sweep file, rejecting anything that does not match the schema.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == SCHEMA_LINE => {}
            _ => return Err(bad(1, format!("expected `{SCHEMA_LINE}`"))),
        }
        let mut frame = SweepFrame {
            config: Vec::new(),
            rows: Vec::new(),
            footer: None,
            error: None,
        };
        let mut seen_columns = false;
        for (n, line) in lines {
            if let Some(rest) = line.strip_prefix("# config:") {
                frame.config = rest
                    .split(';')
                    .filter_map(|kv| kv.trim().split_once('='))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect();
            } else if let Some(rest) = line.strip_prefix("# fit:") {
                frame.footer = Some(parse_footer(rest.trim()).map_err(|m| bad(n, m))?);
            } else if let Some(rest) = line.strip_prefix("# error:") {
                frame.error = Some(rest.trim().to_string());
            } else if line.starts_with('#') {
                continue;
            } else if line == COLUMNS {
                seen_columns = true;
            } else {
                if !seen_columns || frame.footer.is_some() {
                    return Err(bad(n, "row outside the data section"));
                }
                frame.rows.push(parse_row(line).map_err(|m| bad(n, m))?);
            }
        }
        if !seen_columns {
            return Err(bad(1, "missing column header"));
        }
        Ok(frame)
    }
}

fn parse_row(line: &str) -> Result<SweepRow, String> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != 6 {
        return Err(format!("expected 6 columns, found {}", cells.len()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`"));
    for c in &cells[1..5] {
        num(c)?;
    }
    Ok(SweepRow {
        horizon: num(cells[0])?,
        value_re: cells[1].to_string(),
        value_im: cells[2].to_string(),
        abs_error: cells[3].to_string(),
        precision_floor: cells[4].to_string(),
        wall_ms: num(cells[5])?,
    })
}

fn parse_footer(rest: &str) -> Result<FitFooter, String> {
    if let Some(reason) = rest.strip_prefix("none") {
        let reason = reason.trim().strip_prefix("reason=").unwrap_or(reason.trim());
        return Ok(FitFooter::None {
            reason: reason.to_string(),
        });
    }
    let mut model = None;
    let mut params = BTreeMap::new();
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad footer field `{kv}`"))?;
        if k == "model" {
            model = Some(v.to_string());
        } else {
            let x = v.parse().map_err(|_| format!("bad footer value `{kv}`"))?;
            params.insert(k.to_string(), x);
        }
    }
    match model.as_deref() {
        Some("PolySlope" | "StretchedExp") => Ok(FitFooter::Fit {
            model: model.unwrap(),
            params,
        }),
        _ => Err("footer without a known model".into()),
    }
}

/// `log₁₀|x|` of a decimal string, exact in the exponent so values far
/// outside the `f64` range keep their magnitude. Zero gives `-∞`.
pub fn log10_text(s: &str) -> f64 {
    let s = s.trim();
    let (mant, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i64>().unwrap_or(0)),
        None => (s, 0),
    };
    let m: f64 = mant.parse().unwrap_or(f64::NAN);
    if m == 0.0 {
        return f64::NEG_INFINITY;
    }
    m.abs().log10() + exp as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: f64, err: &str) -> SweepRow {
        SweepRow {
            horizon: n,
            value_re: "1.5".into(),
            value_im: "0".into(),
            abs_error: err.into(),
            precision_floor: "1.0e-60".into(),
            wall_ms: 0.0,
        }
    }

    #[test]
    fn round_trip() {
        let cfg = vec![("weight".to_string(), "exp".to_string())];
        let mut w = SweepWriter::start(Vec::new(), &cfg).unwrap();
        w.row(&row(128.0, "3.25e-9")).unwrap();
        w.row(&row(256.0, "1.0e-400")).unwrap();
        let mut params = BTreeMap::new();
        params.insert("m".to_string(), 2.5);
        params.insert("r2".to_string(), 0.99);
        let footer = FitFooter::Fit {
            model: "PolySlope".into(),
            params,
        };
        let bytes = w.finish(&footer).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let frame = SweepFrame::parse(&text).unwrap();
        assert_eq!(frame.config, cfg);
        assert_eq!(frame.rows, vec![row(128.0, "3.25e-9"), row(256.0, "1.0e-400")]);
        assert_eq!(frame.footer, Some(footer));
        assert!((frame.rows[1].log10_abs_error() + 400.0).abs() < 1e-12);
        assert!(!frame.rows[1].saturated() || frame.rows[1].log10_precision_floor() > -401.0);
    }

    #[test]
    fn none_footer_and_error_line() {
        let text = format!("{SCHEMA_LINE}\n{COLUMNS}\n# error: N=8 boom\n# fit: none reason=too_few_points\n");
        let frame = SweepFrame::parse(&text).unwrap();
        assert_eq!(frame.error.as_deref(), Some("N=8 boom"));
        assert_eq!(
            frame.footer,
            Some(FitFooter::None {
                reason: "too_few_points".into()
            })
        );
    }

    #[test]
    fn schema_violations_are_rejected() {
        for text in [
            "# other v9\n",
            "# birkhoff-sweep v1\n1,2,3,4,5,6\n",
            &format!("{SCHEMA_LINE}\n{COLUMNS}\n1,2,3\n"),
            &format!("{SCHEMA_LINE}\n{COLUMNS}\n1,x,3,4,5,6\n"),
            &format!("{SCHEMA_LINE}\n{COLUMNS}\n# fit: model=Banana\n"),
        ] {
            assert!(SweepFrame::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn log10_of_text() {
        assert_eq!(log10_text("0"), f64::NEG_INFINITY);
        assert!((log10_text("1.0e3") - 3.0).abs() < 1e-12);
        assert!((log10_text("-2.5e-1000") - (2.5f64.log10() - 1000.0)).abs() < 1e-12);
        assert!((log10_text("0.01") + 2.0).abs() < 1e-12);
    }
}
