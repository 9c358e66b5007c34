//! End-to-end measurement recipes built from the loop simulator and the
//! spectral estimators: paired open/closed noise suppression and the
//! lock-in sensitivity sweep.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopsim::{closed_loop_tf, InputSignal, LoopComponents, LoopMode, LoopSimulator, NoiseSource, NoiseSpec};
use crate::lti::frequency_grid;
use crate::lti::Spacing;
use crate::spectral::{
    integrate_noise_floor, sweep_lockin, LockInConfig, PeriodogramAccumulator, Sidedness, SpectralDensity,
    TimeTrace, Unit, Window,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionConfig {
    /// Per-sample RMS of the white current disturbance, A.
    pub disturbance_rms_a: f64,
    /// Sensor noise referred to coil current, A/sqrt(Hz); zero disables it.
    pub sensor_floor_a_per_rthz: f64,
    pub sample_rate_hz: f64,
    pub segment_s: f64,
    pub segments: usize,
    /// Discarded start-up interval, s.
    pub settle_s: f64,
    pub window: Window,
    pub band_hz: [f64; 2],
    /// Anti-alias cutoff applied to the recorded current, Hz.
    pub acquisition_cutoff_hz: f64,
    pub seed: u64,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            disturbance_rms_a: 47e-6,
            sensor_floor_a_per_rthz: 0.0,
            sample_rate_hz: 250e3,
            segment_s: 1.0,
            segments: 100,
            settle_s: 0.05,
            window: Window::Hann,
            band_hz: [1.0, 1e3],
            acquisition_cutoff_hz: 25e3,
            seed: 0,
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.disturbance_rms_a,
            self.sample_rate_hz,
            self.segment_s,
            self.acquisition_cutoff_hz,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("disturbance, sample rate and segment length must be positive"));
        }
        if !(self.sensor_floor_a_per_rthz >= 0.0 && self.settle_s >= 0.0) {
            return Err(Error::invalid("sensor floor and settle time must be non-negative"));
        }
        if self.segments == 0 {
            return Err(Error::invalid("at least one segment is required"));
        }
        let [lo, hi] = self.band_hz;
        if !(lo > 0.0 && hi > lo && hi < self.sample_rate_hz / 2.0) {
            return Err(Error::invalid(format!("band [{lo}, {hi}] Hz must lie below Nyquist")));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn segment_len(&self) -> usize {
        (self.segment_s * self.sample_rate_hz).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionOutcome {
    /// Source-current ASD with the controller bypassed.
    pub open: SpectralDensity,
    pub closed: SpectralDensity,
    /// `closed / open` per bin.
    pub ratio: SpectralDensity,
    /// `|g_d(i 2 pi f)|` on the ratio grid.
    pub analytic_ratio: Vec<f64>,
    pub open_rms_a: f64,
    pub closed_rms_a: f64,
    pub band_hz: [f64; 2],
    pub min_ratio_in_band: f64,
    /// Largest `|20 log10(ratio / |g_d|)|` over the band.
    pub max_shaping_error_db: f64,
    /// Log bands (10 per decade) in the band where the closed-loop ASD falls
    /// below 0.9 times the sensor floor.
    pub floor_violations: usize,
}

struct LoopSpectrum {
    sd: SpectralDensity,
    rms: f64,
}

fn run_loop(lc: &LoopComponents, cfg: &SuppressionConfig, mode: LoopMode) -> Result<LoopSpectrum> {
    let dt = cfg.dt();
    let mut sim = LoopSimulator::with_acquisition_filter(lc, mode, dt, cfg.acquisition_cutoff_hz)?
        .with_input(InputSignal::Zero)
        .with_disturbance(&NoiseSpec::white_rms(cfg.disturbance_rms_a, cfg.seed))?;
    if cfg.sensor_floor_a_per_rthz > 0.0 {
        sim = sim.with_sensor_noise(&NoiseSpec::white_asd(cfg.sensor_floor_a_per_rthz, cfg.seed))?;
    }
    let n = cfg.segment_len();
    let mut acc = PeriodogramAccumulator::new(n, dt, Unit::A, cfg.window)?;
    sim.run((cfg.settle_s / dt).round() as usize)?;
    let mut sum_sq = 0.0;
    for _ in 0..cfg.segments {
        let rec = sim.run(n)?;
        sum_sq += rec.current.iter().map(|v| v * v).sum::<f64>();
        acc.add(&rec.current)?;
    }
    Ok(LoopSpectrum {
        sd: acc.finish(Sidedness::OneSided)?,
        rms: (sum_sq / (n * cfg.segments) as f64).sqrt(),
    })
}

/// Paired open- and closed-loop runs driven by the same disturbance sequence.
pub fn noise_suppression(lc: &LoopComponents, cfg: &SuppressionConfig) -> Result<SuppressionOutcome> {
    cfg.validate()?;
    let (open, closed) = rayon::join(
        || run_loop(lc, cfg, LoopMode::OpenLoop),
        || run_loop(lc, cfg, LoopMode::ClosedLoop),
    );
    let (open, closed) = (open?, closed?);
    let ratio = crate::loopsim::suppression_ratio(&open.sd, &closed.sd)?;
    let (_, g_d) = closed_loop_tf(lc)?;
    let analytic_ratio = ratio
        .frequencies_hz
        .iter()
        .map(|&f| g_d.at_hz(f).map(|g| g.norm()))
        .collect::<Result<Vec<_>>>()?;
    let [lo, hi] = cfg.band_hz;
    let in_band = |f: f64| f >= lo && f <= hi;
    let mut min_ratio = f64::INFINITY;
    let mut worst_db = 0.0f64;
    for ((f, r), a) in ratio.frequencies_hz.iter().zip(&ratio.asd).zip(&analytic_ratio) {
        if in_band(*f) {
            min_ratio = min_ratio.min(*r);
            worst_db = worst_db.max((20.0 * (r / a).log10()).abs());
        }
    }
    if !min_ratio.is_finite() {
        return Err(Error::EmptyBand { lo, hi });
    }
    let floor_violations = if cfg.sensor_floor_a_per_rthz > 0.0 {
        let banded = closed.sd.log_banded(10);
        banded
            .frequencies_hz
            .iter()
            .zip(&banded.asd)
            .filter(|(f, a)| in_band(**f) && **a < 0.9 * cfg.sensor_floor_a_per_rthz)
            .count()
    } else {
        0
    };
    Ok(SuppressionOutcome {
        open: open.sd,
        closed: closed.sd,
        ratio,
        analytic_ratio,
        open_rms_a: open.rms,
        closed_rms_a: closed.rms,
        band_hz: cfg.band_hz,
        min_ratio_in_band: min_ratio,
        max_shaping_error_db: worst_db,
        floor_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Technical noise floor referred to the field, T/sqrt(Hz).
    pub technical_floor_t_per_rthz: f64,
    /// Fundamental floor added in quadrature, T/sqrt(Hz).
    pub quantum_floor_t_per_rthz: f64,
    /// Modulation amplitude of `B_y`, T.
    pub calibration_tone_t: f64,
    pub calibration_frequency_hz: f64,
    /// Magnetometer output per field at DC, V/T.
    pub output_gain_v_per_t: f64,
    /// Magnetometer time constant, s.
    pub t_m_s: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
    pub sample_rate_hz: f64,
    /// Trace length per reference frequency, s.
    pub trace_s: f64,
    pub lockin: LockInConfig,
    /// Coil constant, T/A.
    pub beta_y_t_per_a: f64,
    pub seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            technical_floor_t_per_rthz: 139e-15,
            quantum_floor_t_per_rthz: 0.0,
            calibration_tone_t: 80e-12,
            calibration_frequency_hz: 37.0,
            output_gain_v_per_t: 1e9,
            t_m_s: 1.1e-3,
            f_min_hz: 5.0,
            f_max_hz: 500.0,
            points: 120,
            sample_rate_hz: 2e3,
            trace_s: 40.0,
            lockin: LockInConfig {
                f_r: 37.0,
                nep_bandwidth: 0.28,
                filter_order: 4,
            },
            beta_y_t_per_a: 57.6e-9 / 1e-3,
            seed: 0,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.calibration_tone_t,
            self.calibration_frequency_hz,
            self.output_gain_v_per_t,
            self.t_m_s,
            self.f_min_hz,
            self.sample_rate_hz,
            self.trace_s,
            self.beta_y_t_per_a,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("sensitivity parameters must be positive"));
        }
        if !(self.technical_floor_t_per_rthz >= 0.0 && self.quantum_floor_t_per_rthz >= 0.0) {
            return Err(Error::invalid("noise floors must be non-negative"));
        }
        if self.points < 2 || !(self.f_max_hz > self.f_min_hz) {
            return Err(Error::invalid("need at least two points on an increasing range"));
        }
        if self.f_max_hz.max(self.calibration_frequency_hz) >= self.sample_rate_hz / 2.0 {
            return Err(Error::invalid("sweep must stay below Nyquist"));
        }
        self.lockin.validate()
    }

    pub fn total_floor(&self) -> f64 {
        self.technical_floor_t_per_rthz.hypot(self.quantum_floor_t_per_rthz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOutcome {
    /// Lock-in ASD of the raw output, V/sqrt(Hz).
    pub output: SpectralDensity,
    /// Field-referred via the calibration tone, T/sqrt(Hz).
    pub field: SpectralDensity,
    /// Current-referred via the coil constant, A/sqrt(Hz).
    pub current: SpectralDensity,
    /// Recovered tone amplitude over the injected one.
    pub calibration_ratio: f64,
    pub floor_t_per_rthz: f64,
    pub floor_a_per_rthz: f64,
    pub enbw_hz: f64,
    /// Reference frequencies closer than this to the tone are left out of the floor.
    pub tone_guard_hz: f64,
}

/// Lock-in sweep of a simulated magnetometer output carrying a calibration
/// tone and white readout noise. The readout noise is scaled so that,
/// referred to the field at the tone frequency, it equals the configured floor.
pub fn sensitivity_sweep(cfg: &SensitivityConfig) -> Result<SensitivityOutcome> {
    cfg.validate()?;
    let dt = 1.0 / cfg.sample_rate_hz;
    let n = (cfg.trace_s * cfg.sample_rate_hz).round() as usize;
    let response = |f: f64| cfg.output_gain_v_per_t / (1.0 + (2.0 * PI * f * cfg.t_m_s).powi(2)).sqrt();
    let phase = |f: f64| -(2.0 * PI * f * cfg.t_m_s).atan();
    let f_cal = cfg.calibration_frequency_hz;
    let tone_v = cfg.calibration_tone_t * response(f_cal);
    let noise_v = cfg.total_floor() * response(f_cal);
    let trace = |stream: u64| -> Result<TimeTrace> {
        let spec = NoiseSpec::white_asd(noise_v, cfg.seed);
        let mut src = NoiseSource::new(&spec, dt, stream)?;
        let w = 2.0 * PI * f_cal;
        let samples = (0..n)
            .map(|k| tone_v * (w * k as f64 * dt + phase(f_cal)).sin() + src.sample())
            .collect();
        TimeTrace::new(samples, dt, Unit::V)
    };

    let freqs = frequency_grid(cfg.f_min_hz, cfg.f_max_hz, cfg.points, Spacing::Log)?;
    let output = sweep_lockin(
        |f| {
            let k = freqs.iter().position(|x| *x == f).unwrap_or(0) as u64;
            trace(k + 1)
        },
        &freqs,
        &cfg.lockin,
    )?;
    let cal = crate::spectral::lockin_measure(&trace(0)?, &LockInConfig { f_r: f_cal, ..cfg.lockin })?;
    let measured_tone_v = (2.0 * cal.power).sqrt();
    let t_per_v = cfg.calibration_tone_t / measured_tone_v;
    let field = SpectralDensity {
        asd: output.asd.iter().map(|a| a * t_per_v).collect(),
        unit: Unit::T,
        ..output.clone()
    };
    let current = crate::spectral::convert_noise(&field, &[crate::spectral::Conversion::CurrentFromField(cfg.beta_y_t_per_a)])?;

    // Exclude reference frequencies whose filter skirts still pass the tone at
    // more than a thousandth of the noise power in the band.
    let order = f64::from(cfg.lockin.filter_order);
    let leak_limit = 1e-3 * noise_v * noise_v * cal.enbw_hz / (tone_v * tone_v / 2.0);
    let skirt = if leak_limit > 0.0 && leak_limit < 1.0 {
        cal.stage_cutoff_hz * (leak_limit.powf(-1.0 / order) - 1.0).sqrt()
    } else {
        0.0
    };
    let guard = (10.0 * cfg.lockin.nep_bandwidth).max(skirt);
    let (f_keep, a_keep): (Vec<f64>, Vec<f64>) = field
        .frequencies_hz
        .iter()
        .zip(&field.asd)
        .filter(|(f, _)| (**f - f_cal).abs() > guard)
        .map(|(f, a)| (*f, *a))
        .unzip();
    let off_tone = SpectralDensity::new(f_keep, a_keep, Sidedness::OneSided, 1, Unit::T)?;
    let floor_t = integrate_noise_floor(&off_tone, cfg.f_min_hz, cfg.f_max_hz)?;
    Ok(SensitivityOutcome {
        output,
        field,
        current,
        calibration_ratio: measured_tone_v / tone_v,
        floor_t_per_rthz: floor_t,
        floor_a_per_rthz: floor_t / cfg.beta_y_t_per_a,
        enbw_hz: cal.enbw_hz,
        tone_guard_hz: guard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_suppression_run() {
        let cfg = SuppressionConfig {
            sample_rate_hz: 50e3,
            segment_s: 0.5,
            segments: 8,
            band_hz: [10.0, 1e3],
            acquisition_cutoff_hz: 5e3,
            ..Default::default()
        };
        let out = noise_suppression(&LoopComponents::fitted(), &cfg).unwrap();
        assert!(out.open_rms_a > 0.0 && out.open_rms_a < 47e-6);
        assert!(out.max_shaping_error_db < 3.0, "{}", out.max_shaping_error_db);
        assert_eq!(out.floor_violations, 0);
    }

    #[test]
    fn sensor_floor_limits_suppression() {
        let cfg = SuppressionConfig {
            sample_rate_hz: 50e3,
            segment_s: 0.5,
            segments: 40,
            band_hz: [10.0, 1e3],
            sensor_floor_a_per_rthz: 2.4e-9,
            acquisition_cutoff_hz: 5e3,
            ..Default::default()
        };
        let out = noise_suppression(&LoopComponents::fitted(), &cfg).unwrap();
        let open_asd = 47e-6 / (0.5 * 50e3f64).sqrt();
        assert!((out.min_ratio_in_band / (2.4e-9 / open_asd) - 1.0).abs() < 0.5, "{}", out.min_ratio_in_band);
        assert_eq!(out.floor_violations, 0);
    }

    #[test]
    fn sweep_recovers_floor_and_tone() {
        let cfg = SensitivityConfig {
            points: 24,
            ..Default::default()
        };
        let out = sensitivity_sweep(&cfg).unwrap();
        assert!((out.calibration_ratio - 1.0).abs() < 0.05, "{}", out.calibration_ratio);
        assert!((out.floor_t_per_rthz / 139e-15 - 1.0).abs() < 0.1, "{}", out.floor_t_per_rthz);
        assert!((out.enbw_hz - 0.28).abs() < 1e-3);
    }
}
