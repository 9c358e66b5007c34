//! Linear time-invariant blocks as rational transfer functions in `s`.
//!
//! Coefficients are stored with ascending powers of `s` and the denominator is
//! kept monic, so two transfer functions built the same way compare equal. No
//! pole/zero cancellation is ever performed on the stored representation.

pub mod poly;
mod expm;
mod state_space;

pub use expm::expm;
pub use state_space::{balance, simulate_lti, to_state_space, zoh_discretize, DiscreteModel, StateSpaceModel};

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio of two real polynomials in the Laplace variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TfRecord", into = "TfRecord")]
pub struct RationalTransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
    unit: String,
}

/// On-disk shape: `{"num":[...],"den":[...],"unit":"..."}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TfRecord {
    num: Vec<f64>,
    den: Vec<f64>,
    #[serde(default)]
    unit: String,
}

impl TryFrom<TfRecord> for RationalTransferFunction {
    type Error = Error;
    fn try_from(r: TfRecord) -> Result<Self> {
        RationalTransferFunction::new(r.num, r.den, r.unit)
    }
}

impl From<RationalTransferFunction> for TfRecord {
    fn from(tf: RationalTransferFunction) -> Self {
        TfRecord {
            num: tf.num,
            den: tf.den,
            unit: tf.unit,
        }
    }
}

impl RationalTransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>, unit: impl Into<String>) -> Result<Self> {
        if num.is_empty() || den.is_empty() {
            return Err(Error::invalid("polynomials need at least one coefficient"));
        }
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        let den = poly::trim(den);
        if poly::is_zero(&den) {
            return Err(Error::invalid("denominator is identically zero"));
        }
        let lead = *den.last().unwrap();
        let den: Vec<f64> = den.iter().map(|c| c / lead).collect();
        let num = poly::trim(num.iter().map(|c| c / lead).collect());
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficients overflow after normalization"));
        }
        Ok(Self {
            num,
            den,
            unit: unit.into(),
        })
    }

    pub fn gain(k: f64) -> Self {
        Self::new(vec![k], vec![1.0], "").expect("finite gain")
    }

    /// `k / (1 + tau s)`
    pub fn first_order(k: f64, tau: f64) -> Result<Self> {
        Self::new(vec![k], vec![1.0, tau], "")
    }

    /// Second-order band-pass `2 d w s / (w^2 + 2 d w s + s^2)`, unity gain at `s = i w`.
    pub fn band_pass(damping: f64, omega: f64) -> Result<Self> {
        let a = 2.0 * damping * omega;
        Self::new(vec![0.0, a], vec![omega * omega, a, 1.0], "")
    }

    pub fn integrator() -> Self {
        Self::new(vec![1.0], vec![0.0, 1.0], "").expect("valid")
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn num_degree(&self) -> usize {
        poly::degree(&self.num)
    }

    pub fn den_degree(&self) -> usize {
        poly::degree(&self.den)
    }

    pub fn is_proper(&self) -> bool {
        poly::is_zero(&self.num) || self.num_degree() <= self.den_degree()
    }

    pub fn evaluate(&self, s: Complex64) -> Result<Complex64> {
        let d = poly::eval(&self.den, s);
        if d.norm() < 1e-300 {
            return Err(Error::PoleAtEvaluationPoint { re: s.re, im: s.im });
        }
        Ok(poly::eval(&self.num, s) / d)
    }

    /// Frequency response at `f` Hz, i.e. evaluation at `s = i 2 pi f`.
    pub fn at_hz(&self, f: f64) -> Result<Complex64> {
        self.evaluate(Complex64::new(0.0, 2.0 * PI * f))
    }

    pub fn series(&self, other: &Self) -> Self {
        Self::new(
            poly::mul(&self.num, &other.num),
            poly::mul(&self.den, &other.den),
            join_units(&self.unit, &other.unit),
        )
        .expect("product of valid transfer functions")
    }

    /// Sum of two blocks driven by the same input.
    pub fn parallel(&self, other: &Self) -> Self {
        let num = poly::add(
            &poly::mul(&self.num, &other.den),
            &poly::mul(&other.num, &self.den),
        );
        Self::new(num, poly::mul(&self.den, &other.den), self.unit.clone())
            .expect("sum of valid transfer functions")
    }

    /// Poles, as complex roots of the denominator.
    pub fn poles(&self) -> Vec<Complex64> {
        poly::roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        if poly::is_zero(&self.num) {
            return Vec::new();
        }
        poly::roots(&self.num)
    }

    /// Poles left after removing roots shared with the numerator.
    ///
    /// Factors of `s` are removed exactly; other shared roots are matched with a
    /// relative tolerance. Used for stability analysis only.
    pub fn effective_poles(&self) -> Vec<Complex64> {
        let shared_origin = poly::zero_root_multiplicity(&self.num)
            .min(poly::zero_root_multiplicity(&self.den));
        let mut poles = poly::roots(&self.den[shared_origin..]);
        if poly::is_zero(&self.num) {
            return poles;
        }
        let mut zeros = poly::roots(&self.num[shared_origin..]);
        poles.retain(|p| {
            let tol = 1e-6 * p.norm().max(1e-12);
            if let Some(k) = zeros.iter().position(|z| (z - p).norm() <= tol) {
                zeros.swap_remove(k);
                false
            } else {
                true
            }
        });
        poles
    }
}

fn join_units(a: &str, b: &str) -> String {
    match (a.is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a}*{b}"),
    }
}

/// Closed-loop responses of a forward path with a sensor in the return path.
///
/// Returns `(forward / (1 + sensor*forward), 1 / (1 + sensor*forward))`.
pub fn feedback(
    forward: &RationalTransferFunction,
    sensor: &RationalTransferFunction,
) -> Result<(RationalTransferFunction, RationalTransferFunction)> {
    let dd = poly::mul(&forward.den, &sensor.den);
    let nn = poly::mul(&forward.num, &sensor.num);
    let char_poly = poly::add(&dd, &nn);
    if poly::is_zero(&char_poly) {
        return Err(Error::DegenerateLoop);
    }
    let g_x = RationalTransferFunction::new(
        poly::mul(&forward.num, &sensor.den),
        char_poly.clone(),
        forward.unit.clone(),
    )?;
    let g_d = RationalTransferFunction::new(dd, char_poly, "")?;
    Ok((g_x, g_d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponsePoint {
    pub frequency_hz: f64,
    /// Linear magnitude.
    pub magnitude: f64,
    pub phase_rad: f64,
}

impl FrequencyResponsePoint {
    pub fn magnitude_db(&self) -> f64 {
        db(self.magnitude)
    }

    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phase_rad)
    }
}

pub fn db(magnitude: f64) -> f64 {
    20.0 * magnitude.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

pub fn frequency_grid(f_min: f64, f_max: f64, n: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if !(f_min > 0.0 && f_max > f_min && f_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < f_min < f_max, got {f_min}..{f_max}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("a sweep needs at least two points"));
    }
    let last = (n - 1) as f64;
    Ok(match spacing {
        Spacing::Log => {
            let (a, b) = (f_min.ln(), f_max.ln());
            (0..n)
                .map(|k| {
                    if k == n - 1 {
                        f_max
                    } else {
                        (a + (b - a) * k as f64 / last).exp()
                    }
                })
                .collect()
        }
        Spacing::Linear => (0..n)
            .map(|k| f_min + (f_max - f_min) * k as f64 / last)
            .collect(),
    })
}

/// Evaluates `tf` along the imaginary axis. Phase is unwrapped along the sweep.
pub fn bode_sweep(
    tf: &RationalTransferFunction,
    f_min_hz: f64,
    f_max_hz: f64,
    n_points: usize,
    spacing: Spacing,
) -> Result<Vec<FrequencyResponsePoint>> {
    let grid = frequency_grid(f_min_hz, f_max_hz, n_points, spacing)?;
    bode_at(tf, &grid)
}

pub fn bode_at(tf: &RationalTransferFunction, freqs: &[f64]) -> Result<Vec<FrequencyResponsePoint>> {
    let mut out = Vec::with_capacity(freqs.len());
    let mut prev: Option<(Complex64, f64)> = None;
    for &f in freqs {
        let g = tf.at_hz(f)?;
        let phase = match prev {
            None => g.arg(),
            Some((gp, php)) if gp.norm() > 0.0 && g.norm() > 0.0 => php + (g / gp).arg(),
            Some(_) => g.arg(),
        };
        prev = Some((g, phase));
        out.push(FrequencyResponsePoint {
            frequency_hz: f,
            magnitude: g.norm(),
            phase_rad: phase,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffReference {
    /// Magnitude at the lowest swept frequency.
    DcPlateau,
    /// Largest magnitude in the sweep.
    BandMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

/// Frequency where the magnitude first falls to `reference / sqrt(2)`.
///
/// The search starts at the reference sample and walks up (or down) the sweep.
/// The crossing is interpolated linearly in (log f, dB).
pub fn cutoff_3db(
    points: &[FrequencyResponsePoint],
    reference: CutoffReference,
    side: Side,
) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("cutoff search needs at least two points"));
    }
    let (start, ref_mag) = match reference {
        CutoffReference::DcPlateau => (0, points[0].magnitude),
        CutoffReference::BandMax => points
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, p)| {
                if p.magnitude > bm {
                    (i, p.magnitude)
                } else {
                    (bi, bm)
                }
            }),
    };
    if !(ref_mag > 0.0) {
        return Err(Error::invalid("reference magnitude must be positive"));
    }
    let target_db = db(ref_mag / SQRT_2);
    let crossing = |a: &FrequencyResponsePoint, b: &FrequencyResponsePoint| {
        let (la, lb) = (a.frequency_hz.ln(), b.frequency_hz.ln());
        let (ma, mb) = (a.magnitude_db(), b.magnitude_db());
        let t = if mb.is_finite() && (mb - ma).abs() > 0.0 {
            (target_db - ma) / (mb - ma)
        } else {
            0.0
        };
        (la + t.clamp(0.0, 1.0) * (lb - la)).exp()
    };
    let below = |p: &FrequencyResponsePoint| p.magnitude_db() < target_db;
    match side {
        Side::Upper => {
            for i in start + 1..points.len() {
                if below(&points[i]) {
                    return Ok(crossing(&points[i - 1], &points[i]));
                }
            }
        }
        Side::Lower => {
            for i in (0..start).rev() {
                if below(&points[i]) {
                    return Ok(crossing(&points[i + 1], &points[i]));
                }
            }
        }
    }
    Err(Error::NoCrossing)
}
