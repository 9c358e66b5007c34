use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{TimeTrace, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// Per-sample standard deviation.
    TargetRms(f64),
    /// One-sided amplitude spectral density, unit/sqrt(Hz).
    AsdLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn white_rms(rms: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::White,
            level: NoiseLevel::TargetRms(rms),
            seed,
        }
    }

    pub fn white_asd(asd: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::White,
            level: NoiseLevel::AsdLevel(asd),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self.level {
            NoiseLevel::TargetRms(v) | NoiseLevel::AsdLevel(v) => v,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("noise level must be finite and non-negative, got {v}")))
        }
    }

    /// Per-sample standard deviation at sample interval `dt`.
    pub fn sigma(&self, dt: f64) -> f64 {
        match self.level {
            NoiseLevel::TargetRms(r) => r,
            NoiseLevel::AsdLevel(a) => a * (0.5 / dt).sqrt(),
        }
    }
}

/// Seeded Gaussian sample stream. Distinct `stream` values give independent
/// sequences from the same seed.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl NoiseSource {
    pub fn new(spec: &NoiseSpec, dt: f64, stream: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        Ok(Self {
            rng,
            sigma: spec.sigma(dt),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn sample(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.sigma * z
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.sample();
        }
    }
}

/// `n` samples of zero-mean white Gaussian noise.
pub fn make_noise(spec: &NoiseSpec, dt: f64, n: usize, unit: Unit) -> Result<TimeTrace> {
    if n < 2 {
        return Err(Error::invalid("noise trace needs at least two samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("sample interval must be positive"));
    }
    let mut src = NoiseSource::new(spec, dt, 0)?;
    let mut samples = vec![0.0; n];
    src.fill(&mut samples);
    TimeTrace::new(samples, dt, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{rms_from_trace, Detrend};

    #[test]
    fn deterministic_per_seed() {
        let spec = NoiseSpec::white_rms(1.0, 42);
        let a = make_noise(&spec, 1e-3, 1000, Unit::A).unwrap();
        let b = make_noise(&spec, 1e-3, 1000, Unit::A).unwrap();
        let bytes = |t: &TimeTrace| t.samples().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(&a), bytes(&b));
        let c = make_noise(&NoiseSpec::white_rms(1.0, 43), 1e-3, 1000, Unit::A).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rms_target() {
        let t = make_noise(&NoiseSpec::white_rms(47e-6, 7), 4e-6, 250_000, Unit::A).unwrap();
        assert!((rms_from_trace(&t, Detrend::None) / 47e-6 - 1.0).abs() < 0.02);
    }

    #[test]
    fn asd_sigma() {
        let s = NoiseSpec::white_asd(2e-9, 0).sigma(1.0 / 250e3);
        assert!((s - 2e-9 * (125e3f64).sqrt()).abs() < 1e-20);
    }

    #[test]
    fn streams_are_independent() {
        let spec = NoiseSpec::white_rms(1.0, 5);
        let mut a = NoiseSource::new(&spec, 1.0, 0).unwrap();
        let mut b = NoiseSource::new(&spec, 1.0, 1).unwrap();
        let (x, y): (Vec<f64>, Vec<f64>) = (0..8).map(|_| (a.sample(), b.sample())).unzip();
        assert_ne!(x, y);
    }
}
