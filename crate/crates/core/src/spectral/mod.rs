//! Sampled traces and amplitude spectral densities.

mod convert;
mod lockin;
mod periodogram;

pub use convert::{convert_noise, ein_from_output, Conversion};
pub use lockin::{lockin_asd, lockin_measure, noise_equivalent_bandwidth, sweep_lockin, LockInConfig, LockInReading};
pub use periodogram::{asd_periodogram, split_segments, PeriodogramAccumulator};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    V,
    A,
    T,
    #[serde(rename = "1")]
    Dimensionless,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::V => "V",
            Unit::A => "A",
            Unit::T => "T",
            Unit::Dimensionless => "1",
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        match s.trim() {
            "V" | "v" | "volts" | "volt" => Some(Unit::V),
            "A" | "a" | "amps" | "ampere" | "amperes" => Some(Unit::A),
            "T" | "t" | "tesla" => Some(Unit::T),
            "1" | "dimensionless" | "" => Some(Unit::Dimensionless),
            _ => None,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    samples: Vec<f64>,
    dt: f64,
    unit: Unit,
}

impl TimeTrace {
    pub fn new(samples: Vec<f64>, dt: f64, unit: Unit) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sample interval must be positive, got {dt}")));
        }
        if samples.len() < 2 {
            return Err(Error::invalid("a trace needs at least two samples"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, dt, unit })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn with_unit(mut self, unit: Unit) -> Self {
        self.unit = unit;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * k).collect(),
            dt: self.dt,
            unit: self.unit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    OneSided,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    #[default]
    None,
    Mean,
}

/// Amplitude spectral density on an ascending frequency grid, in `unit`/sqrt(Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub frequencies_hz: Vec<f64>,
    pub asd: Vec<f64>,
    pub sidedness: Sidedness,
    pub n_averages: usize,
    pub unit: Unit,
}

impl SpectralDensity {
    pub fn new(
        frequencies_hz: Vec<f64>,
        asd: Vec<f64>,
        sidedness: Sidedness,
        n_averages: usize,
        unit: Unit,
    ) -> Result<Self> {
        if frequencies_hz.len() != asd.len() {
            return Err(Error::GridMismatch(format!(
                "{} frequencies vs {} values",
                frequencies_hz.len(),
                asd.len()
            )));
        }
        if frequencies_hz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("frequency grid must be strictly ascending"));
        }
        if asd.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::invalid("ASD values must be finite and non-negative"));
        }
        Ok(Self {
            frequencies_hz,
            asd,
            sidedness,
            n_averages,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.asd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asd.is_empty()
    }

    pub fn psd(&self) -> Vec<f64> {
        self.asd.iter().map(|a| a * a).collect()
    }

    /// Re-expresses the density with the requested sidedness (amplitude factor sqrt(2)).
    pub fn to_sidedness(&self, target: Sidedness) -> Self {
        let factor = match (self.sidedness, target) {
            (Sidedness::OneSided, Sidedness::TwoSided) => std::f64::consts::FRAC_1_SQRT_2,
            (Sidedness::TwoSided, Sidedness::OneSided) => std::f64::consts::SQRT_2,
            _ => 1.0,
        };
        Self {
            asd: self.asd.iter().map(|a| a * factor).collect(),
            sidedness: target,
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.frequencies_hz.len() == other.frequencies_hz.len()
            && self
                .frequencies_hz
                .iter()
                .zip(&other.frequencies_hz)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()))
    }

    /// Averages the PSD over consecutive groups of bins whose edges are
    /// log-spaced with `per_decade` bands per decade. Empty bands are skipped.
    pub fn log_banded(&self, per_decade: usize) -> Self {
        let mut freqs = Vec::new();
        let mut asd = Vec::new();
        if self.is_empty() {
            return self.clone();
        }
        let f0 = self.frequencies_hz[0];
        let step = 10f64.powf(1.0 / per_decade as f64);
        let mut edge = f0 * step;
        let (mut acc, mut fsum, mut count) = (0.0, 0.0, 0usize);
        for (&f, &a) in self.frequencies_hz.iter().zip(&self.asd) {
            while f >= edge {
                if count > 0 {
                    freqs.push(fsum / count as f64);
                    asd.push((acc / count as f64).sqrt());
                }
                acc = 0.0;
                fsum = 0.0;
                count = 0;
                edge *= step;
            }
            acc += a * a;
            fsum += f;
            count += 1;
        }
        if count > 0 {
            freqs.push(fsum / count as f64);
            asd.push((acc / count as f64).sqrt());
        }
        Self {
            frequencies_hz: freqs,
            asd,
            ..self.clone()
        }
    }
}

/// RMS of a trace after optional mean removal.
pub fn rms_from_trace(trace: &TimeTrace, detrend: Detrend) -> f64 {
    let x = trace.samples();
    let n = x.len() as f64;
    let mean = match detrend {
        Detrend::None => 0.0,
        Detrend::Mean => x.iter().sum::<f64>() / n,
    };
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Band floor: square root of the mean PSD over the bins in `[f_lo, f_hi]`.
pub fn integrate_noise_floor(sd: &SpectralDensity, f_lo: f64, f_hi: f64) -> Result<f64> {
    let (sum, count) = sd
        .frequencies_hz
        .iter()
        .zip(&sd.asd)
        .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
        .fold((0.0, 0usize), |(s, c), (_, a)| (s + a * a, c + 1));
    if count == 0 {
        return Err(Error::EmptyBand { lo: f_lo, hi: f_hi });
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(a: f64, n: usize) -> SpectralDensity {
        let f = (1..=n).map(|k| k as f64).collect();
        SpectralDensity::new(f, vec![a; n], Sidedness::OneSided, 1, Unit::V).unwrap()
    }

    #[test]
    fn trace_invariants() {
        assert!(TimeTrace::new(vec![1.0], 1.0, Unit::V).is_err());
        assert!(TimeTrace::new(vec![1.0, 2.0], 0.0, Unit::V).is_err());
        assert!(TimeTrace::new(vec![1.0, f64::INFINITY], 1.0, Unit::V).is_err());
    }

    #[test]
    fn rms_of_constant_and_sine() {
        let c = TimeTrace::new(vec![3.0; 100], 1e-3, Unit::V).unwrap();
        assert_eq!(rms_from_trace(&c, Detrend::Mean), 0.0);
        assert!((rms_from_trace(&c, Detrend::None) - 3.0).abs() < 1e-12);
        let a = 2.0;
        let s: Vec<f64> = (0..1000)
            .map(|i| a * (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 1000.0).sin())
            .collect();
        let s = TimeTrace::new(s, 1e-3, Unit::V).unwrap();
        assert!((rms_from_trace(&s, Detrend::None) - a / 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn floor_of_flat_spectrum() {
        assert_eq!(integrate_noise_floor(&flat(3e-9, 100), 10.0, 50.0).unwrap(), 3e-9);
        assert!(matches!(
            integrate_noise_floor(&flat(1.0, 10), 20.0, 30.0),
            Err(Error::EmptyBand { .. })
        ));
    }

    #[test]
    fn floor_ignores_one_over_f_outside_band() {
        let f: Vec<f64> = (1..=10000).map(|k| k as f64).collect();
        let asd: Vec<f64> = f.iter().map(|f| (1e-18 * (1.0 + 100.0 / f)).sqrt()).collect();
        let sd = SpectralDensity::new(f, asd, Sidedness::OneSided, 1, Unit::A).unwrap();
        let floor = integrate_noise_floor(&sd, 5000.0, 10000.0).unwrap();
        assert!((floor / 1e-9 - 1.0).abs() < 0.02);
    }

    #[test]
    fn sidedness_round_trip() {
        let sd = flat(2.0, 5);
        let two = sd.to_sidedness(Sidedness::TwoSided);
        assert!((two.asd[0] - 2.0 / 2f64.sqrt()).abs() < 1e-15);
        let back = two.to_sidedness(Sidedness::OneSided);
        assert!(back.asd.iter().all(|a| (a - 2.0).abs() < 1e-15));
    }

    #[test]
    fn density_rejects_bad_grid() {
        assert!(SpectralDensity::new(vec![1.0, 1.0], vec![1.0, 1.0], Sidedness::OneSided, 1, Unit::V).is_err());
        assert!(SpectralDensity::new(vec![1.0], vec![-1.0], Sidedness::OneSided, 1, Unit::V).is_err());
    }
}
