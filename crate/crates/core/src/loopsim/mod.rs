//! The current-noise suppression loop: VCCS, amplifier, injection transformer,
//! magnetometer and PID, in the frequency and time domains.

mod noise;
mod sim;
mod tune;

pub use noise::{make_noise, NoiseKind, NoiseLevel, NoiseSource, NoiseSpec};
pub use sim::{simulate_loop, InputSignal, LoopMode, LoopRecords, LoopSimulator, SimulationRun};
pub use tune::{is_closed_loop_stable, ziegler_nichols_tune, ZieglerNicholsTuning};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{
    bode_sweep, cutoff_3db, feedback, CutoffReference, RationalTransferFunction, Side, Spacing,
};
use crate::spectral::{SpectralDensity, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    pub k_pid: f64,
    pub t_i: f64,
    pub t_d: f64,
    /// Derivative low-pass time constant; zero means the ideal, improper form.
    pub derivative_filter_tau: f64,
}

impl PidParams {
    /// Ideal derivative, as fitted in the frequency domain.
    pub fn ideal(k_pid: f64, t_i: f64, t_d: f64) -> Self {
        Self {
            k_pid,
            t_i,
            t_d,
            derivative_filter_tau: 0.0,
        }
    }

    /// Derivative filtered at `t_d / 10`.
    pub fn filtered(k_pid: f64, t_i: f64, t_d: f64) -> Self {
        Self {
            derivative_filter_tau: t_d / 10.0,
            ..Self::ideal(k_pid, t_i, t_d)
        }
    }

    /// Gain-only controller used when the loop is "open".
    pub fn unity() -> Self {
        Self::ideal(1.0, f64::INFINITY, 0.0)
    }

    pub fn without_filter(self) -> Self {
        Self {
            derivative_filter_tau: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k_pid > 0.0
            && self.k_pid.is_finite()
            && self.t_i > 0.0
            && self.t_d >= 0.0
            && self.t_d.is_finite()
            && self.derivative_filter_tau >= 0.0
            && self.derivative_filter_tau.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inadmissible PID parameters {self:?}")))
        }
    }

    pub fn is_realizable(&self) -> bool {
        self.t_d == 0.0 || self.derivative_filter_tau > 0.0
    }
}

/// `K (1 + 1/(T_i s) + T_d s / (1 + tau s))`. An infinite `T_i` drops the integrator.
pub fn pid_tf(p: &PidParams) -> Result<RationalTransferFunction> {
    p.validate()?;
    let k = p.k_pid;
    let tau = p.derivative_filter_tau;
    if p.t_i.is_infinite() {
        // K (1 + (T_d + tau) s) / (1 + tau s)
        return RationalTransferFunction::new(vec![k, k * (p.t_d + tau)], vec![1.0, tau], "");
    }
    let ti = p.t_i;
    let num = vec![k, k * (ti + tau), k * ti * (tau + p.t_d)];
    let den = vec![0.0, ti, ti * tau];
    RationalTransferFunction::new(num, den, "")
}

/// Normalized loop plant as parameterized in the Bode fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// `K_vccs K_a K_m`
    pub k_total: f64,
    pub t_vccs: f64,
    pub t_a: f64,
    pub d_t: f64,
    pub omega_t: f64,
    pub t_m: f64,
}

impl PlantParams {
    pub fn fitted() -> Self {
        Self {
            k_total: 1.0,
            t_vccs: 1.0 / (2.0 * PI * 10.5e3),
            t_a: 1.0 / (2.0 * PI * 100e3),
            d_t: 110.9,
            omega_t: 27.8,
            t_m: 1.1e-3,
        }
    }

    pub fn components(&self, pid: PidParams) -> Result<LoopComponents> {
        Ok(LoopComponents {
            vccs: RationalTransferFunction::first_order(self.k_total, self.t_vccs)?,
            amplifier: RationalTransferFunction::first_order(1.0, self.t_a)?,
            transformer: RationalTransferFunction::band_pass(self.d_t, self.omega_t)?,
            magnetometer: RationalTransferFunction::first_order(1.0, self.t_m)?,
            pid,
            ..LoopComponents::fitted()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopComponents {
    pub vccs: RationalTransferFunction,
    pub amplifier: RationalTransferFunction,
    pub transformer: RationalTransferFunction,
    pub magnetometer: RationalTransferFunction,
    pub pid: PidParams,
    pub r1_ohm: f64,
    pub r2_ohm: f64,
    pub amp_gain_db: f64,
    /// Zeroing current superimposed on the coil; the loop is linearized around it.
    pub i0y: f64,
}

impl LoopComponents {
    /// Fitted plant with the tuned PID; derivative filtered at `T_d / 10`.
    pub fn fitted() -> Self {
        let p = PlantParams::fitted();
        Self {
            vccs: RationalTransferFunction::first_order(p.k_total, p.t_vccs).expect("valid"),
            amplifier: RationalTransferFunction::first_order(1.0, p.t_a).expect("valid"),
            transformer: RationalTransferFunction::band_pass(p.d_t, p.omega_t).expect("valid"),
            magnetometer: RationalTransferFunction::first_order(1.0, p.t_m).expect("valid"),
            pid: PidParams::filtered(162.0, 111e-6, 28e-6),
            r1_ohm: 10.0,
            r2_ohm: 0.0,
            amp_gain_db: 40.0,
            i0y: 0.0,
        }
    }

    pub fn with_pid(mut self, pid: PidParams) -> Self {
        self.pid = pid;
        self
    }

    pub fn with_ideal_pid(mut self) -> Self {
        self.pid = self.pid.without_filter();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pid.validate()?;
        if !(self.r1_ohm > 0.0) {
            return Err(Error::invalid("r1_ohm must be positive"));
        }
        for (name, b) in self.blocks() {
            if !b.is_proper() {
                return Err(Error::invalid(format!("{name} block is improper")));
            }
        }
        Ok(())
    }

    pub(crate) fn blocks(&self) -> [(&'static str, &RationalTransferFunction); 4] {
        [
            ("vccs", &self.vccs),
            ("amplifier", &self.amplifier),
            ("transformer", &self.transformer),
            ("magnetometer", &self.magnetometer),
        ]
    }

    /// Linear amplifier voltage gain.
    pub fn amp_gain_linear(&self) -> f64 {
        10f64.powf(self.amp_gain_db / 20.0)
    }

    /// Smallest time constant among the plant blocks, from the largest pole magnitude.
    pub fn fastest_time_constant(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.poles())
            .map(|p| p.norm())
            .filter(|r| *r > 0.0)
            .map(|r| 1.0 / r)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `G_vccs G_a G_t G_m`
pub fn open_loop_tf(lc: &LoopComponents) -> RationalTransferFunction {
    lc.vccs
        .series(&lc.amplifier)
        .series(&lc.transformer)
        .series(&lc.magnetometer)
}

/// `(L / (1 + L), 1 / (1 + L))` with `L = G_pid G_open`.
pub fn closed_loop_tf(lc: &LoopComponents) -> Result<(RationalTransferFunction, RationalTransferFunction)> {
    let forward = pid_tf(&lc.pid)?.series(&open_loop_tf(lc));
    feedback(&forward, &RationalTransferFunction::gain(1.0))
}

/// Sweep used for loop cutoffs: 0.01 Hz to 1 MHz.
pub const CUTOFF_SWEEP: (f64, f64, usize) = (0.01, 1e6, 1601);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    /// Open-loop upper cutoff against the band maximum.
    pub open_cutoff_hz: f64,
    /// Closed-loop upper cutoff against the low-frequency plateau.
    pub closed_cutoff_hz: f64,
    /// Closed-loop upper cutoff against the resonance maximum.
    pub closed_cutoff_band_max_hz: f64,
    /// `closed_cutoff_hz / open_cutoff_hz`
    pub ratio: f64,
    /// `closed_cutoff_band_max_hz / open_cutoff_hz`
    pub ratio_band_max: f64,
}

pub fn bandwidth_report(lc: &LoopComponents) -> Result<BandwidthReport> {
    let (lo, hi, n) = CUTOFF_SWEEP;
    let open = bode_sweep(&open_loop_tf(lc), lo, hi, n, Spacing::Log)?;
    let (g_r, _) = closed_loop_tf(lc)?;
    let closed = bode_sweep(&g_r, lo, hi, n, Spacing::Log)?;
    let open_cutoff_hz = cutoff_3db(&open, CutoffReference::BandMax, Side::Upper)?;
    let closed_cutoff_hz = cutoff_3db(&closed, CutoffReference::DcPlateau, Side::Upper)?;
    let closed_cutoff_band_max_hz = cutoff_3db(&closed, CutoffReference::BandMax, Side::Upper)?;
    Ok(BandwidthReport {
        open_cutoff_hz,
        closed_cutoff_hz,
        closed_cutoff_band_max_hz,
        ratio: closed_cutoff_hz / open_cutoff_hz,
        ratio_band_max: closed_cutoff_band_max_hz / open_cutoff_hz,
    })
}

/// Closed-loop over open-loop upper cutoff.
///
/// The open loop is a band-pass, so its cutoff is taken against the band
/// maximum. The closed loop is a low-pass with resonant peaking near the
/// crossover, so its cutoff is taken against the passband plateau.
pub fn bandwidth_enhancement(lc: &LoopComponents) -> Result<f64> {
    bandwidth_report(lc).map(|r| r.ratio)
}

/// Pointwise `closed / open` amplitude ratio.
pub fn suppression_ratio(open_asd: &SpectralDensity, closed_asd: &SpectralDensity) -> Result<SpectralDensity> {
    if !open_asd.same_grid(closed_asd) {
        return Err(Error::GridMismatch(format!(
            "{} open bins vs {} closed bins",
            open_asd.len(),
            closed_asd.len()
        )));
    }
    if open_asd.unit != closed_asd.unit {
        return Err(Error::UnitMismatch {
            expected: open_asd.unit.to_string(),
            found: closed_asd.unit.to_string(),
        });
    }
    if open_asd.sidedness != closed_asd.sidedness {
        return Err(Error::invalid("spectra differ in sidedness"));
    }
    let ratio = open_asd
        .asd
        .iter()
        .zip(&closed_asd.asd)
        .map(|(o, c)| if *o > 0.0 { c / o } else { f64::NAN })
        .collect::<Vec<_>>();
    if ratio.iter().any(|r| r.is_nan()) {
        return Err(Error::invalid("open-loop spectrum has empty bins"));
    }
    SpectralDensity::new(
        open_asd.frequencies_hz.clone(),
        ratio,
        open_asd.sidedness,
        open_asd.n_averages.min(closed_asd.n_averages),
        Unit::Dimensionless,
    )
}
