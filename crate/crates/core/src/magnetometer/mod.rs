//! Spin-polarization model of the magnetometer: steady state, Faraday readout,
//! small-signal transfer function, Bloch integration, coil calibration and the
//! projection-noise limit.

mod bloch;
mod vapor;

pub use bloch::{analytic_px, integrate_bloch, FieldDrive, PolarizationSeries};
pub use vapor::{sql_sensitivity, vapor_density, CellConditions, SqlReport, VaporPressureModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::RationalTransferFunction;

/// Electron gyromagnetic ratio, rad s^-1 T^-1.
pub const GAMMA_E: f64 = 1.76085963e11;
pub const CLASSICAL_ELECTRON_RADIUS: f64 = 2.8179403262e-15;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.66053906660e-27;
pub const CESIUM_MASS: f64 = 132.905451931 * ATOMIC_MASS_UNIT;
/// Cs D1 line at 894.953 nm (vacuum), Hz.
pub const CESIUM_D1_FREQUENCY: f64 = SPEED_OF_LIGHT / 894.953e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetometerParams {
    pub gamma_e: f64,
    pub q: f64,
    pub gamma_op: f64,
    pub gamma_rel: f64,
    pub zeta: f64,
}

impl Default for MagnetometerParams {
    /// Rates sum to 3.5e3 s^-1, split evenly.
    fn default() -> Self {
        Self {
            gamma_e: GAMMA_E,
            q: 8.0,
            gamma_op: 1750.0,
            gamma_rel: 1750.0,
            zeta: 1.0,
        }
    }
}

impl MagnetometerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma_e > 0.0
            && self.q >= 1.0
            && self.gamma_op >= 0.0
            && self.gamma_rel > 0.0
            && (0.0..=1.0).contains(&self.zeta)
            && [self.gamma_e, self.q, self.gamma_op, self.gamma_rel].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inadmissible magnetometer parameters {self:?}")))
        }
    }

    /// `gamma_op + gamma_rel`
    pub fn total_rate(&self) -> f64 {
        self.gamma_op + self.gamma_rel
    }

    /// Small-signal time constant `q / (gamma_op + gamma_rel)`.
    pub fn time_constant(&self) -> f64 {
        self.q / self.total_rate()
    }

    /// DC slope of `px` versus `B_y`, negative.
    pub fn dc_gain(&self) -> f64 {
        -self.gamma_e * self.gamma_op / self.total_rate().powi(2)
    }

    fn require_full_polarization(&self) -> Result<()> {
        if self.zeta != 1.0 {
            return Err(Error::UnsupportedPolarization(self.zeta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalParams {
    pub j_p: f64,
    pub r_e: f64,
    pub c: f64,
    pub f_osc: f64,
    pub nu: f64,
    pub nu0: f64,
    pub delta_nu: f64,
    pub n_density: f64,
    pub l_path: f64,
}

impl Default for OpticalParams {
    /// Probe 80 GHz blue of the Cs D1 line through a 25.4 mm cell. The photon
    /// flux is the one giving a 1750 s^-1 pumping rate on resonance.
    fn default() -> Self {
        let delta_nu = 8e9;
        let f_osc = 0.344;
        Self {
            j_p: 1750.0 * delta_nu / (2.0 * CLASSICAL_ELECTRON_RADIUS * SPEED_OF_LIGHT * f_osc),
            r_e: CLASSICAL_ELECTRON_RADIUS,
            c: SPEED_OF_LIGHT,
            f_osc,
            nu: CESIUM_D1_FREQUENCY + 80e9,
            nu0: CESIUM_D1_FREQUENCY,
            delta_nu,
            n_density: 2.8e19,
            l_path: 25.4e-3,
        }
    }
}

impl OpticalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.j_p,
            self.r_e,
            self.c,
            self.f_osc,
            self.nu,
            self.nu0,
            self.delta_nu,
            self.n_density,
            self.l_path,
        ];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("optical parameters must be positive, got {self:?}")))
        }
    }

    fn half_width(&self) -> f64 {
        0.5 * self.delta_nu
    }

    fn detuning(&self) -> f64 {
        self.nu - self.nu0
    }

    pub fn on_resonance(mut self) -> Self {
        self.nu = self.nu0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Polarization {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl Polarization {
    pub fn new(px: f64, py: f64, pz: f64) -> Self {
        Self { px, py, pz }
    }

    pub fn norm(&self) -> f64 {
        (self.px * self.px + self.py * self.py + self.pz * self.pz).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.px, self.py, self.pz]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Coil constants in nT/mA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilCalibration {
    pub beta_x_nt_per_ma: f64,
    pub beta_y_nt_per_ma: f64,
    pub beta_z_nt_per_ma: f64,
}

impl Default for CoilCalibration {
    fn default() -> Self {
        Self {
            beta_x_nt_per_ma: 57.6,
            beta_y_nt_per_ma: 57.6,
            beta_z_nt_per_ma: 105.0,
        }
    }
}

/// nT/mA to T/A.
const NT_PER_MA: f64 = 1e-6;

impl CoilCalibration {
    pub fn validate(&self) -> Result<()> {
        let b = [self.beta_x_nt_per_ma, self.beta_y_nt_per_ma, self.beta_z_nt_per_ma];
        if b.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("coil constants must be strictly positive"))
        }
    }

    /// Coil constants in T/A.
    pub fn si(&self) -> [f64; 3] {
        [
            self.beta_x_nt_per_ma * NT_PER_MA,
            self.beta_y_nt_per_ma * NT_PER_MA,
            self.beta_z_nt_per_ma * NT_PER_MA,
        ]
    }

    pub fn beta_y(&self) -> f64 {
        self.beta_y_nt_per_ma * NT_PER_MA
    }

    /// Currents needed to produce field `b` (T), in A.
    pub fn currents_for(&self, b: [f64; 3]) -> [f64; 3] {
        let s = self.si();
        [b[0] / s[0], b[1] / s[1], b[2] / s[2]]
    }
}

pub fn coil_field(cal: &CoilCalibration, i_x: f64, i_y: f64, i_z: f64) -> [f64; 3] {
    let s = cal.si();
    [s[0] * i_x, s[1] * i_y, s[2] * i_z]
}

/// Lorentzian pumping rate, s^-1.
pub fn pumping_rate(opt: &OpticalParams) -> Result<f64> {
    opt.validate()?;
    let hw = opt.half_width();
    let det = opt.detuning();
    Ok(opt.j_p * opt.r_e * opt.c * opt.f_osc * hw / (hw * hw + det * det))
}

/// Stationary polarization for a field along y with full pump polarization.
pub fn steady_state(params: &MagnetometerParams, b_y: f64) -> Result<Polarization> {
    params.validate()?;
    params.require_full_polarization()?;
    let g = params.total_rate();
    let wb = params.gamma_e * b_y;
    let den = g * g + wb * wb;
    Ok(Polarization {
        px: -wb * params.gamma_op / den,
        py: 0.0,
        pz: params.gamma_op * g / den,
    })
}

/// Field magnitude at which `|px|` of the steady state peaks.
pub fn dc_extremum(params: &MagnetometerParams) -> Result<f64> {
    params.validate()?;
    params.require_full_polarization()?;
    Ok(params.total_rate() / params.gamma_e)
}

/// Probe polarization rotation in rad; odd in detuning, zero on resonance.
pub fn faraday_rotation(opt: &OpticalParams, px: f64) -> f64 {
    let hw = opt.half_width();
    let det = opt.detuning();
    -0.5 * opt.r_e * opt.c * opt.f_osc * opt.l_path * opt.n_density * det / (hw * hw + det * det) * px
}

/// First-order low-pass `K_m / (1 + T_m s)` from `B_y` (T) to `px`.
pub fn magnetometer_tf(params: &MagnetometerParams) -> Result<RationalTransferFunction> {
    params.validate()?;
    Ok(RationalTransferFunction::first_order(params.dc_gain(), params.time_constant())?.with_unit("1/T"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcResponsePoint {
    pub b_y: f64,
    pub delta_phi: f64,
    /// False beyond 1.5 extremum fields, where the stationary model is not trusted.
    pub within_model_range: bool,
}

/// Faraday angle of the steady state over a sweep of `B_y`.
pub fn dc_response_curve(
    params: &MagnetometerParams,
    opt: &OpticalParams,
    b_range: &[f64],
) -> Result<Vec<DcResponsePoint>> {
    opt.validate()?;
    let limit = 1.5 * dc_extremum(params)?;
    b_range
        .iter()
        .map(|&b| {
            let p = steady_state(params, b)?;
            Ok(DcResponsePoint {
                b_y: b,
                delta_phi: faraday_rotation(opt, p.px),
                within_model_range: b.abs() <= limit,
            })
        })
        .collect()
}
