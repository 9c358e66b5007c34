use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Sidedness, SpectralDensity, TimeTrace};
use crate::error::{Error, Result};

/// Lock-in amplifier settings. `nep_bandwidth` is the one-sided noise-equivalent
/// bandwidth of the whole output filter cascade, not the per-stage corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockInConfig {
    pub f_r: f64,
    pub nep_bandwidth: f64,
    #[serde(default = "default_order")]
    pub filter_order: u32,
}

fn default_order() -> u32 {
    4
}

impl LockInConfig {
    pub fn new(f_r: f64, nep_bandwidth: f64, filter_order: u32) -> Result<Self> {
        let cfg = Self {
            f_r,
            nep_bandwidth,
            filter_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nep_bandwidth > 0.0 && self.nep_bandwidth < self.f_r && self.f_r.is_finite()) {
            return Err(Error::invalid(format!(
                "lock-in needs 0 < nep_bandwidth < f_r, got {} and {}",
                self.nep_bandwidth, self.f_r
            )));
        }
        if self.filter_order == 0 {
            return Err(Error::invalid("lock-in filter order must be at least 1"));
        }
        Ok(())
    }

    pub fn min_duration(&self) -> f64 {
        10.0 / self.nep_bandwidth
    }

    pub fn settling_time(&self) -> f64 {
        5.0 / self.nep_bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockInReading {
    pub f_r: f64,
    /// Mean-square signal power in the band `[f_r - enbw, f_r + enbw]`.
    pub power: f64,
    /// One-sided PSD, `power / (2 enbw)`.
    pub psd: f64,
    pub asd: f64,
    pub enbw_hz: f64,
    pub stage_cutoff_hz: f64,
}

fn stage_alpha(stage_cutoff: f64, dt: f64) -> f64 {
    1.0 - (-2.0 * PI * stage_cutoff * dt).exp()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|k| {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            w * f(a + k as f64 * h)
        })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// One-sided noise-equivalent bandwidth of `order` cascaded discrete first-order
/// stages `y += alpha (x - y)`, by numerical integration of `|H|^2` up to Nyquist.
pub fn noise_equivalent_bandwidth(stage_cutoff: f64, order: u32, dt: f64) -> f64 {
    let nyquist = 0.5 / dt;
    let alpha = stage_alpha(stage_cutoff, dt);
    let a = 1.0 - alpha;
    let h2 = |f: f64| {
        let stage = alpha * alpha / (1.0 - 2.0 * a * (2.0 * PI * f * dt).cos() + a * a);
        stage.powi(order as i32)
    };
    let knee = stage_cutoff.min(nyquist);
    let low = simpson(h2, 0.0, knee, 400);
    if knee >= nyquist {
        return low;
    }
    // above the knee, integrate in log frequency where the tail is smooth
    let span = (nyquist / knee).ln();
    let intervals = 400.max((span * 200.0) as usize);
    let high = simpson(|u| {
        let f = knee * u.exp();
        h2(f) * f
    }, 0.0, span, intervals);
    low + high
}

/// Per-stage cutoff giving the requested cascade ENBW at this sample interval.
fn calibrate_stage_cutoff(target_enbw: f64, order: u32, dt: f64) -> (f64, f64) {
    // continuous-time ENBW of n identical poles: fc * int_0^inf (1+x^2)^-n dx
    let mut ratio = PI / 2.0;
    for k in 2..=order {
        ratio *= (2 * k - 3) as f64 / (2 * k - 2) as f64;
    }
    let mut fc = target_enbw / ratio;
    let mut enbw = noise_equivalent_bandwidth(fc, order, dt);
    for _ in 0..8 {
        fc *= target_enbw / enbw;
        enbw = noise_equivalent_bandwidth(fc, order, dt);
        if (enbw / target_enbw - 1.0).abs() < 1e-12 {
            break;
        }
    }
    (fc, enbw)
}

/// Demodulates `trace` at `cfg.f_r` and reports in-band power and spectral density.
pub fn lockin_measure(trace: &TimeTrace, cfg: &LockInConfig) -> Result<LockInReading> {
    cfg.validate()?;
    let dt = trace.dt();
    if cfg.f_r >= 0.5 / dt {
        return Err(Error::invalid(format!(
            "reference {} Hz is above Nyquist {} Hz",
            cfg.f_r,
            0.5 / dt
        )));
    }
    let need = cfg.min_duration();
    if trace.duration() < need {
        return Err(Error::TraceTooShort {
            have: trace.duration(),
            need,
        });
    }
    let (fc, enbw) = calibrate_stage_cutoff(cfg.nep_bandwidth, cfg.filter_order, dt);
    let alpha = stage_alpha(fc, dt);
    let order = cfg.filter_order as usize;
    let mut re = vec![0.0; order];
    let mut im = vec![0.0; order];
    let skip = (cfg.settling_time() / dt).ceil() as usize;
    let w = 2.0 * PI * cfg.f_r * dt;
    let (mut acc, mut count) = (0.0, 0usize);
    for (i, &x) in trace.samples().iter().enumerate() {
        let (s, c) = (w * i as f64).sin_cos();
        let (mut zr, mut zi) = (2.0 * x * c, -2.0 * x * s);
        for k in 0..order {
            re[k] += alpha * (zr - re[k]);
            im[k] += alpha * (zi - im[k]);
            zr = re[k];
            zi = im[k];
        }
        if i >= skip {
            acc += zr * zr + zi * zi;
            count += 1;
        }
    }
    let power = 0.5 * acc / count as f64;
    let psd = power / (2.0 * enbw);
    Ok(LockInReading {
        f_r: cfg.f_r,
        power,
        psd,
        asd: psd.sqrt(),
        enbw_hz: enbw,
        stage_cutoff_hz: fc,
    })
}

/// One-sided ASD at the reference frequency.
pub fn lockin_asd(trace: &TimeTrace, cfg: &LockInConfig) -> Result<f64> {
    lockin_measure(trace, cfg).map(|r| r.asd)
}

/// Runs one lock-in measurement per reference frequency, each on a fresh trace
/// from `source`. Points are evaluated in parallel and assembled in order.
pub fn sweep_lockin<F>(source: F, f_list: &[f64], template: &LockInConfig) -> Result<SpectralDensity>
where
    F: Fn(f64) -> Result<TimeTrace> + Sync,
{
    if f_list.is_empty() {
        return Err(Error::invalid("empty reference frequency list"));
    }
    if f_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("reference frequencies must be strictly ascending"));
    }
    let results: Vec<Result<(f64, super::Unit)>> = f_list
        .par_iter()
        .map(|&f| {
            let trace = source(f)?;
            let cfg = LockInConfig { f_r: f, ..*template };
            Ok((lockin_asd(&trace, &cfg)?, trace.unit()))
        })
        .collect();
    let mut asd = Vec::with_capacity(f_list.len());
    let mut unit = None;
    for r in results {
        let (a, u) = r?;
        match unit {
            None => unit = Some(u),
            Some(prev) if prev != u => {
                return Err(Error::UnitMismatch {
                    expected: prev.to_string(),
                    found: u.to_string(),
                })
            }
            _ => {}
        }
        asd.push(a);
    }
    SpectralDensity::new(f_list.to_vec(), asd, Sidedness::OneSided, 1, unit.expect("non-empty"))
}
