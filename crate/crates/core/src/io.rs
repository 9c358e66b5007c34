//! Text formats: oscilloscope traces, Bode tables, spectra, polarization
//! series and transfer functions.
//!
//! Traces come either with a header row `t_s,<unit>` or headerless with a
//! JSON sidecar giving `dt_s` and `unit`. Lines starting with `#` are skipped.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{FrequencyResponsePoint, RationalTransferFunction};
use crate::magnetometer::PolarizationSeries;
use crate::spectral::{Sidedness, SpectralDensity, TimeTrace, Unit};

/// Relative tolerance on time-column spacing.
pub const UNIFORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSidecar {
    pub dt_s: f64,
    pub unit: Unit,
    #[serde(default)]
    pub note: String,
}

pub fn parse_trace_sidecar(text: &str) -> Result<TraceSidecar> {
    let sc: TraceSidecar = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if !(sc.dt_s > 0.0 && sc.dt_s.is_finite()) {
        return Err(Error::invalid(format!("sidecar dt_s must be positive, got {}", sc.dt_s)));
    }
    Ok(sc)
}

struct Table {
    header: Option<Vec<String>>,
    /// `(line, fields)`
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_float(field: &str, line: usize, col: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column {}: '{}' is not a number", col + 1, field.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("column {}: value is not finite", col + 1),
        });
    }
    Ok(v)
}

fn read_table(text: &str, min_cols: usize, max_cols: usize) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() < min_cols || rec.len() > max_cols {
            return Err(Error::Parse {
                line,
                msg: format!("expected {min_cols} to {max_cols} columns, found {}", rec.len()),
            });
        }
        let first_is_text = rec.get(0).is_some_and(|f| f.parse::<f64>().is_err());
        if header.is_none() && rows.is_empty() && first_is_text {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| parse_float(f, line, c))
            .collect::<Result<Vec<_>>>()?;
        if let Some((_, first)) = rows.first() {
            if first.len() != vals.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} columns like the first row, found {}", first.len(), vals.len()),
                });
            }
        }
        rows.push((line, vals));
    }
    Ok(Table { header, rows })
}

fn unit_from_header(name: &str, line: usize) -> Result<Unit> {
    let base = name.trim().trim_end_matches("/sqrt(Hz)");
    Unit::parse(base).ok_or_else(|| Error::Parse {
        line,
        msg: format!("unknown unit '{name}'"),
    })
}

/// Reads a two-column oscilloscope export.
///
/// With a header `t_s,<unit>` the sample interval comes from the time column.
/// Without one, `sidecar` must supply it; if both exist they must agree.
pub fn read_trace_csv(text: &str, sidecar: Option<&TraceSidecar>) -> Result<TimeTrace> {
    let table = read_table(text, 2, 2)?;
    let header_unit = match &table.header {
        Some(h) => {
            if h[0] != "t_s" {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("first column must be t_s, found '{}'", h[0]),
                });
            }
            Some(unit_from_header(&h[1], 1)?)
        }
        None => None,
    };
    let unit = match (header_unit, sidecar) {
        (Some(h), Some(sc)) if h != sc.unit => {
            return Err(Error::UnitMismatch {
                expected: sc.unit.to_string(),
                found: h.to_string(),
            })
        }
        (Some(h), _) => h,
        (None, Some(sc)) => sc.unit,
        (None, None) => {
            return Err(Error::invalid("headerless trace needs a sidecar with dt_s and unit"));
        }
    };
    if table.rows.len() < 2 {
        return Err(Error::invalid("trace needs at least two samples"));
    }
    let t: Vec<f64> = table.rows.iter().map(|(_, r)| r[0]).collect();
    let span = t[t.len() - 1] - t[0];
    let dt_col = span / (t.len() - 1) as f64;
    let dt = match sidecar {
        Some(sc) => sc.dt_s,
        None => dt_col,
    };
    if !(dt > 0.0) {
        return Err(Error::invalid("time column must increase"));
    }
    for (k, (line, row)) in table.rows.iter().enumerate() {
        let expected = t[0] + k as f64 * dt;
        if (row[0] - expected).abs() > UNIFORM_TOLERANCE * dt.max(expected.abs()) + 1e-3 * dt {
            return Err(Error::Parse {
                line: *line,
                msg: format!("time {} breaks uniform spacing {dt:e} s", row[0]),
            });
        }
    }
    TimeTrace::new(table.rows.into_iter().map(|(_, r)| r[1]).collect(), dt, unit)
}

pub fn write_trace_csv(trace: &TimeTrace) -> String {
    let mut s = format!("t_s,{}\n", trace.unit());
    for (i, v) in trace.samples().iter().enumerate() {
        let _ = writeln!(s, "{:e},{:e}", trace.time(i), v);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodeTable {
    pub points: Vec<FrequencyResponsePoint>,
    /// False when the file had no phase column; phases are then zero.
    pub has_phase: bool,
}

/// Reads `frequency_hz,magnitude[,phase_rad]`.
pub fn read_bode_csv(text: &str) -> Result<BodeTable> {
    let table = read_table(text, 2, 3)?;
    if let Some(h) = &table.header {
        let expected = ["frequency_hz", "magnitude", "phase_rad"];
        if h.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header must be frequency_hz,magnitude[,phase_rad], found {}", h.join(",")),
            });
        }
    }
    let has_phase = table.rows.first().map_or(false, |(_, r)| r.len() == 3);
    let mut points = Vec::with_capacity(table.rows.len());
    let mut last = 0.0;
    for (line, r) in table.rows {
        if !(r[0] > last) {
            return Err(Error::Parse {
                line,
                msg: "frequencies must be positive and ascending".into(),
            });
        }
        if !(r[1] > 0.0) {
            return Err(Error::Parse {
                line,
                msg: "magnitude must be positive".into(),
            });
        }
        last = r[0];
        points.push(FrequencyResponsePoint {
            frequency_hz: r[0],
            magnitude: r[1],
            phase_rad: if has_phase { r[2] } else { 0.0 },
        });
    }
    if points.is_empty() {
        return Err(Error::invalid("Bode table has no rows"));
    }
    Ok(BodeTable { points, has_phase })
}

pub fn write_bode_csv(points: &[FrequencyResponsePoint]) -> String {
    let mut s = String::from("frequency_hz,magnitude,phase_rad\n");
    for p in points {
        let _ = writeln!(s, "{:e},{:e},{:e}", p.frequency_hz, p.magnitude, p.phase_rad);
    }
    s
}

/// `frequency_hz,asd,unit` with the unit column reading `<unit>/sqrt(Hz)`.
pub fn write_spectral_csv(sd: &SpectralDensity) -> String {
    let unit = format!("{}/sqrt(Hz)", sd.unit);
    let mut s = String::from("frequency_hz,asd,unit\n");
    for (f, a) in sd.frequencies_hz.iter().zip(&sd.asd) {
        let _ = writeln!(s, "{f:e},{a:e},{unit}");
    }
    s
}

/// Inverse of [`write_spectral_csv`]; sidedness and averages come from the sidecar.
pub fn read_spectral_csv(text: &str, sidedness: Sidedness, n_averages: usize) -> Result<SpectralDensity> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["frequency_hz", "asd", "unit"] {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be frequency_hz,asd,unit".into(),
        });
    }
    let (mut f, mut a, mut unit) = (Vec::new(), Vec::new(), None);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        f.push(parse_float(&rec[0], line, 0)?);
        a.push(parse_float(&rec[1], line, 1)?);
        let u = unit_from_header(&rec[2], line)?;
        if unit.is_some_and(|v| v != u) {
            return Err(Error::Parse {
                line,
                msg: "unit changes between rows".into(),
            });
        }
        unit = Some(u);
    }
    let unit = unit.ok_or_else(|| Error::invalid("spectrum has no rows"))?;
    SpectralDensity::new(f, a, sidedness, n_averages, unit)
}

pub fn write_polarization_csv(series: &PolarizationSeries) -> String {
    let mut s = String::from("t_s,px,py,pz\n");
    for (i, p) in series.points.iter().enumerate() {
        let _ = writeln!(s, "{:e},{:e},{:e},{:e}", series.time(i), p.px, p.py, p.pz);
    }
    s
}

/// `{"num": [...], "den": [...], "unit": "..."}` with ascending coefficients.
pub fn tf_from_json(text: &str) -> Result<RationalTransferFunction> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn tf_to_json(tf: &RationalTransferFunction) -> String {
    serde_json::to_string_pretty(tf).expect("transfer functions always serialize")
}
