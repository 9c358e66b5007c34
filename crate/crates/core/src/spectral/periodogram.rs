use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Sidedness, SpectralDensity, TimeTrace, Unit, Window};
use crate::error::{Error, Result};

fn window_coefficients(window: Window, n: usize) -> Vec<f64> {
    match window {
        Window::Rectangular => vec![1.0; n],
        // periodic form, so the window tiles exactly
        Window::Hann => (0..n)
            .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
            .collect(),
    }
}

/// Running average of one-sided periodograms of equal-length segments.
///
/// Each segment has its window-weighted mean removed, so the windowed segment
/// has no DC content to leak into bin 1. (A plain mean carries high-frequency
/// power through its sinc response and would leak through the window main
/// lobe.) Bins 1..N/2 (exclusive
/// of Nyquist for even N) are reported, so every bin carries the same
/// one-sided factor of 2.
pub struct PeriodogramAccumulator {
    n: usize,
    dt: f64,
    unit: Unit,
    window: Vec<f64>,
    window_sum: f64,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    sum_psd: Vec<f64>,
    count: usize,
}

impl PeriodogramAccumulator {
    pub fn new(segment_len: usize, dt: f64, unit: Unit, window: Window) -> Result<Self> {
        if segment_len < 4 {
            return Err(Error::invalid("periodogram segments need at least four samples"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("sample interval must be positive"));
        }
        let w = window_coefficients(window, segment_len);
        let window_sum = w.iter().sum();
        let window_power = w.iter().map(|x| x * x).sum();
        let fft = FftPlanner::new().plan_fft_forward(segment_len);
        Ok(Self {
            n: segment_len,
            dt,
            unit,
            window: w,
            window_sum,
            window_power,
            fft,
            buf: vec![Complex64::new(0.0, 0.0); segment_len],
            sum_psd: vec![0.0; Self::bins(segment_len)],
            count: 0,
        })
    }

    fn bins(n: usize) -> usize {
        (n - 1) / 2
    }

    pub fn segment_len(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, segment: &[f64]) -> Result<()> {
        if segment.len() != self.n {
            return Err(Error::GridMismatch(format!(
                "segment of {} samples, expected {}",
                segment.len(),
                self.n
            )));
        }
        let mean = segment.iter().zip(&self.window).map(|(x, w)| x * w).sum::<f64>() / self.window_sum;
        for ((b, x), w) in self.buf.iter_mut().zip(segment).zip(&self.window) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        self.fft.process(&mut self.buf);
        let scale = 2.0 * self.dt / self.window_power;
        for (k, acc) in self.sum_psd.iter_mut().enumerate() {
            *acc += self.buf[k + 1].norm_sqr() * scale;
        }
        self.count += 1;
        Ok(())
    }

    pub fn add_trace(&mut self, trace: &TimeTrace) -> Result<()> {
        if trace.unit() != self.unit {
            return Err(Error::UnitMismatch {
                expected: self.unit.to_string(),
                found: trace.unit().to_string(),
            });
        }
        if (trace.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::GridMismatch(format!(
                "trace dt {} differs from {}",
                trace.dt(),
                self.dt
            )));
        }
        self.add(trace.samples())
    }

    pub fn finish(&self, sidedness: Sidedness) -> Result<SpectralDensity> {
        if self.count == 0 {
            return Err(Error::invalid("no segments were accumulated"));
        }
        let df = 1.0 / (self.n as f64 * self.dt);
        let freqs = (1..=self.sum_psd.len()).map(|k| k as f64 * df).collect();
        let asd = self
            .sum_psd
            .iter()
            .map(|p| (p / self.count as f64).sqrt())
            .collect();
        let sd = SpectralDensity::new(freqs, asd, Sidedness::OneSided, self.count, self.unit)?;
        Ok(sd.to_sidedness(sidedness))
    }
}

/// Averaged periodogram of equal-length traces.
pub fn asd_periodogram(
    traces: &[TimeTrace],
    window: Window,
    sidedness: Sidedness,
) -> Result<SpectralDensity> {
    let first = traces
        .first()
        .ok_or_else(|| Error::invalid("at least one trace is required"))?;
    let mut acc = PeriodogramAccumulator::new(first.len(), first.dt(), first.unit(), window)?;
    for t in traces {
        if t.len() != first.len() {
            return Err(Error::GridMismatch(format!(
                "trace lengths differ: {} vs {}",
                t.len(),
                first.len()
            )));
        }
        acc.add_trace(t)?;
    }
    acc.finish(sidedness)
}

/// Splits a trace into consecutive non-overlapping segments; the remainder is dropped.
pub fn split_segments(trace: &TimeTrace, segment_len: usize) -> Result<Vec<TimeTrace>> {
    if segment_len < 2 || segment_len > trace.len() {
        return Err(Error::invalid(format!(
            "segment length {segment_len} incompatible with trace of {} samples",
            trace.len()
        )));
    }
    trace
        .samples()
        .chunks_exact(segment_len)
        .map(|c| TimeTrace::new(c.to_vec(), trace.dt(), trace.unit()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect::<Vec<f64>>()
    }

    #[test]
    fn tone_power_by_parseval() {
        let (fs, n, a) = (1000.0, 1000, 1.7);
        let f0 = 50.0;
        let x: Vec<f64> = (0..n).map(|i| a * (2.0 * PI * f0 * i as f64 / fs).sin()).collect();
        let t = TimeTrace::new(x, 1.0 / fs, Unit::V).unwrap();
        let sd = asd_periodogram(&[t], Window::Rectangular, Sidedness::OneSided).unwrap();
        let df = sd.frequencies_hz[1] - sd.frequencies_hz[0];
        let power: f64 = sd
            .frequencies_hz
            .iter()
            .zip(sd.psd())
            .filter(|(f, _)| (**f - f0).abs() <= 3.0)
            .map(|(_, p)| p * df)
            .sum();
        assert!((power / (a * a / 2.0) - 1.0).abs() < 1e-6, "{power}");
    }

    #[test]
    fn hann_tone_power() {
        let (fs, n, a) = (1000.0, 1000, 0.3);
        let f0 = 120.0;
        let x: Vec<f64> = (0..n).map(|i| a * (2.0 * PI * f0 * i as f64 / fs).cos()).collect();
        let t = TimeTrace::new(x, 1.0 / fs, Unit::V).unwrap();
        let sd = asd_periodogram(&[t], Window::Hann, Sidedness::OneSided).unwrap();
        let df = sd.frequencies_hz[1] - sd.frequencies_hz[0];
        // power normalization makes the leaked bins integrate to the tone power
        let power: f64 = sd.psd().iter().map(|p| p * df).sum();
        assert!((power / (a * a / 2.0) - 1.0).abs() < 1e-9, "{power}");
    }

    #[test]
    fn white_noise_level() {
        let (fs, n, sigma) = (1000.0, 1000, 0.5);
        let traces: Vec<TimeTrace> = (0..100)
            .map(|s| TimeTrace::new(noise(s, n, sigma), 1.0 / fs, Unit::A).unwrap())
            .collect();
        let sd = asd_periodogram(&traces, Window::Rectangular, Sidedness::OneSided).unwrap();
        let expected = sigma * (2.0 / fs as f64).sqrt();
        let mean_psd = sd.psd().iter().sum::<f64>() / sd.len() as f64;
        assert!((mean_psd.sqrt() / expected - 1.0).abs() < 0.05);
        assert_eq!(sd.n_averages, 100);
        let two = asd_periodogram(&traces, Window::Rectangular, Sidedness::TwoSided).unwrap();
        for (a, b) in sd.asd.iter().zip(&two.asd) {
            assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_traces_rejected() {
        let a = TimeTrace::new(vec![0.0; 16], 1e-3, Unit::V).unwrap();
        let b = TimeTrace::new(vec![0.0; 32], 1e-3, Unit::V).unwrap();
        let c = TimeTrace::new(vec![0.0; 16], 2e-3, Unit::V).unwrap();
        assert!(matches!(
            asd_periodogram(&[a.clone(), b], Window::Hann, Sidedness::OneSided),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            asd_periodogram(&[a, c], Window::Hann, Sidedness::OneSided),
            Err(Error::GridMismatch(_))
        ));
        assert!(asd_periodogram(&[], Window::Hann, Sidedness::OneSided).is_err());
    }

    #[test]
    fn segments_drop_remainder() {
        let t = TimeTrace::new((0..10).map(f64::from).collect(), 1.0, Unit::V).unwrap();
        let s = split_segments(&t, 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].samples(), &[6.0, 7.0, 8.0]);
    }
}
