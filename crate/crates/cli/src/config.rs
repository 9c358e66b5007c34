//! Strict TOML experiment configuration. Every key carries its SI unit in the
//! name; unknown keys are rejected before anything is computed.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serfloop::loopsim::{LoopComponents, PidParams, PlantParams};
use serfloop::magnetometer::{CellConditions, CoilCalibration, MagnetometerParams, OpticalParams};
use serfloop::spectral::Window;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DcResponse,
    BodeOpen,
    BodeClosed,
    SensitivitySweep,
    SuppressNoise,
    Sql,
    Tune,
    Fit,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::DcResponse => "dc_response",
            Scenario::BodeOpen => "bode_open",
            Scenario::BodeClosed => "bode_closed",
            Scenario::SensitivitySweep => "sensitivity_sweep",
            Scenario::SuppressNoise => "suppress_noise",
            Scenario::Sql => "sql",
            Scenario::Tune => "tune",
            Scenario::Fit => "fit",
        }
    }

    fn required_blocks(self) -> &'static [&'static str] {
        match self {
            Scenario::DcResponse | Scenario::Sql => &["magnetometer"],
            Scenario::BodeOpen | Scenario::BodeClosed => &["loop"],
            Scenario::SensitivitySweep => &["magnetometer", "noise", "spectral"],
            Scenario::SuppressNoise => &["loop", "noise", "spectral"],
            Scenario::Tune => &["tune"],
            Scenario::Fit => &["loop", "sysid"],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub magnetometer: Option<MagnetometerBlock>,
    #[serde(rename = "loop")]
    pub loop_block: Option<LoopBlock>,
    pub noise: Option<NoiseBlock>,
    pub spectral: Option<SpectralBlock>,
    pub sysid: Option<SysidBlock>,
    pub tune: Option<TuneBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagnetometerBlock {
    pub gamma_op_per_s: f64,
    pub gamma_rel_per_s: f64,
    pub slowing_down_factor: f64,
    pub pump_polarization: f64,
    pub beta_x_nt_per_ma: f64,
    pub beta_y_nt_per_ma: f64,
    pub beta_z_nt_per_ma: f64,
    pub probe_detuning_hz: f64,
    /// Half-span of the `B_y` sweep.
    pub sweep_amplitude_t: f64,
    pub sweep_points: usize,
    pub temperature_k: f64,
    pub spin_destruction_cross_section_m2: f64,
    pub probe_volume_m3: f64,
    pub johnson_reference_a_per_rthz: f64,
}

impl Default for MagnetometerBlock {
    fn default() -> Self {
        let m = MagnetometerParams::default();
        let c = CoilCalibration::default();
        let cell = CellConditions::default();
        Self {
            gamma_op_per_s: m.gamma_op,
            gamma_rel_per_s: m.gamma_rel,
            slowing_down_factor: m.q,
            pump_polarization: m.zeta,
            beta_x_nt_per_ma: c.beta_x_nt_per_ma,
            beta_y_nt_per_ma: c.beta_y_nt_per_ma,
            beta_z_nt_per_ma: c.beta_z_nt_per_ma,
            probe_detuning_hz: 80e9,
            sweep_amplitude_t: 112.8e-9,
            sweep_points: 2001,
            temperature_k: cell.temperature_k,
            spin_destruction_cross_section_m2: cell.sigma_sd_m2,
            probe_volume_m3: cell.probe_volume_m3,
            johnson_reference_a_per_rthz: 55e-12,
        }
    }
}

impl MagnetometerBlock {
    pub fn params(&self) -> MagnetometerParams {
        MagnetometerParams {
            q: self.slowing_down_factor,
            gamma_op: self.gamma_op_per_s,
            gamma_rel: self.gamma_rel_per_s,
            zeta: self.pump_polarization,
            ..MagnetometerParams::default()
        }
    }

    pub fn coil(&self) -> CoilCalibration {
        CoilCalibration {
            beta_x_nt_per_ma: self.beta_x_nt_per_ma,
            beta_y_nt_per_ma: self.beta_y_nt_per_ma,
            beta_z_nt_per_ma: self.beta_z_nt_per_ma,
        }
    }

    pub fn optics(&self) -> OpticalParams {
        let o = OpticalParams::default();
        OpticalParams {
            nu: o.nu0 + self.probe_detuning_hz,
            ..o
        }
    }

    pub fn cell(&self) -> CellConditions {
        CellConditions {
            temperature_k: self.temperature_k,
            sigma_sd_m2: self.spin_destruction_cross_section_m2,
            probe_volume_m3: self.probe_volume_m3,
            ..CellConditions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopBlock {
    pub k_pid: f64,
    pub t_i_s: f64,
    pub t_d_s: f64,
    /// Derivative low-pass; defaults to `t_d_s / 10`. Zero gives the ideal form,
    /// which frequency-domain commands accept and time-domain ones refuse.
    pub derivative_filter_tau_s: Option<f64>,
    pub k_total: f64,
    pub vccs_corner_hz: f64,
    pub amplifier_corner_hz: f64,
    pub transformer_damping: f64,
    pub transformer_omega_rad_per_s: f64,
    pub t_m_s: f64,
    /// Evaluate Bode responses with the unfiltered derivative.
    pub bode_ideal_pid: bool,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
    /// Frequencies at which a time-domain sine run is overlaid on the model.
    pub sine_check_hz: Vec<f64>,
    pub sine_check_sample_rate_hz: f64,
    /// Discarded start-up interval of each sine run.
    pub sine_check_settle_s: f64,
    /// Whole periods analysed after settling.
    pub sine_check_periods: usize,
}

impl Default for LoopBlock {
    fn default() -> Self {
        let p = PlantParams::fitted();
        Self {
            k_pid: 162.0,
            t_i_s: 111e-6,
            t_d_s: 28e-6,
            derivative_filter_tau_s: None,
            k_total: p.k_total,
            vccs_corner_hz: 10.5e3,
            amplifier_corner_hz: 100e3,
            transformer_damping: p.d_t,
            transformer_omega_rad_per_s: p.omega_t,
            t_m_s: p.t_m,
            bode_ideal_pid: true,
            f_min_hz: 0.01,
            f_max_hz: 1e6,
            points: 1601,
            sine_check_hz: Vec::new(),
            sine_check_sample_rate_hz: 1e6,
            sine_check_settle_s: 0.2,
            sine_check_periods: 40,
        }
    }
}

impl LoopBlock {
    pub fn plant(&self) -> PlantParams {
        PlantParams {
            k_total: self.k_total,
            t_vccs: 1.0 / (2.0 * PI * self.vccs_corner_hz),
            t_a: 1.0 / (2.0 * PI * self.amplifier_corner_hz),
            d_t: self.transformer_damping,
            omega_t: self.transformer_omega_rad_per_s,
            t_m: self.t_m_s,
        }
    }

    pub fn pid(&self) -> PidParams {
        PidParams {
            k_pid: self.k_pid,
            t_i: self.t_i_s,
            t_d: self.t_d_s,
            derivative_filter_tau: self.derivative_filter_tau_s.unwrap_or(self.t_d_s / 10.0),
        }
    }

    pub fn components(&self) -> serfloop::Result<LoopComponents> {
        self.plant().components(self.pid())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBlock {
    /// Per-sample RMS of the white current disturbance.
    pub disturbance_rms_a: f64,
    /// Measurement-system floor referred to coil current; zero disables it.
    pub sensor_floor_a_per_rthz: f64,
    pub technical_floor_t_per_rthz: f64,
    /// Add the spin-projection floor in quadrature to the technical one.
    pub include_quantum_floor: bool,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        Self {
            disturbance_rms_a: 47e-6,
            sensor_floor_a_per_rthz: 0.0,
            technical_floor_t_per_rthz: 139e-15,
            include_quantum_floor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralBlock {
    pub sample_rate_hz: f64,
    pub segment_s: f64,
    pub segments: usize,
    pub settle_s: f64,
    pub window: Window,
    pub band_hz: [f64; 2],
    pub acquisition_cutoff_hz: f64,
    /// Spectra are written up to this frequency.
    pub report_f_max_hz: f64,
    pub nep_bandwidth_hz: f64,
    pub filter_order: u32,
    pub sweep_f_min_hz: f64,
    pub sweep_f_max_hz: f64,
    pub sweep_points: usize,
    pub lockin_sample_rate_hz: f64,
    pub trace_s: f64,
    pub calibration_tone_t: f64,
    pub calibration_frequency_hz: f64,
}

impl Default for SpectralBlock {
    fn default() -> Self {
        let s = serfloop::experiments::SuppressionConfig::default();
        let l = serfloop::experiments::SensitivityConfig::default();
        Self {
            sample_rate_hz: s.sample_rate_hz,
            segment_s: s.segment_s,
            segments: s.segments,
            settle_s: s.settle_s,
            window: s.window,
            band_hz: s.band_hz,
            acquisition_cutoff_hz: s.acquisition_cutoff_hz,
            report_f_max_hz: 10e3,
            nep_bandwidth_hz: l.lockin.nep_bandwidth,
            filter_order: l.lockin.filter_order,
            sweep_f_min_hz: l.f_min_hz,
            sweep_f_max_hz: l.f_max_hz,
            sweep_points: l.points,
            lockin_sample_rate_hz: l.sample_rate_hz,
            trace_s: l.trace_s,
            calibration_tone_t: l.calibration_tone_t,
            calibration_frequency_hz: l.calibration_frequency_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SysidBlock {
    /// Measured open-loop Bode CSV; relative paths resolve against the config file.
    pub open_csv: Option<PathBuf>,
    pub closed_csv: Option<PathBuf>,
    /// Without CSV files, data are synthesized from the `[loop]` block on this grid.
    pub synthetic_f_min_hz: f64,
    pub synthetic_f_max_hz: f64,
    pub synthetic_points: usize,
    pub open_weight: f64,
    pub closed_weight: f64,
    pub restarts: usize,
}

impl Default for SysidBlock {
    fn default() -> Self {
        Self {
            open_csv: None,
            closed_csv: None,
            synthetic_f_min_hz: 0.005,
            synthetic_f_max_hz: 2e5,
            synthetic_points: 120,
            open_weight: 1.0,
            closed_weight: 1.0,
            restarts: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunePlant {
    /// The open-loop cascade of the `[loop]` block.
    #[default]
    Loop,
    /// `num / den`, ascending powers of s.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneBlock {
    pub plant: TunePlant,
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl Default for TuneBlock {
    fn default() -> Self {
        Self {
            plant: TunePlant::Loop,
            num: Vec::new(),
            den: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check_blocks()?;
        Ok(cfg)
    }

    fn has_block(&self, name: &str) -> bool {
        match name {
            "magnetometer" => self.magnetometer.is_some(),
            "loop" => self.loop_block.is_some(),
            "noise" => self.noise.is_some(),
            "spectral" => self.spectral.is_some(),
            "sysid" => self.sysid.is_some(),
            "tune" => self.tune.is_some(),
            _ => false,
        }
    }

    fn check_blocks(&self) -> Result<(), CliError> {
        let missing: Vec<_> = self
            .scenario
            .required_blocks()
            .iter()
            .filter(|b| !self.has_block(b))
            .map(|b| format!("[{b}]"))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Config(format!(
                "scenario {} needs {}",
                self.scenario,
                missing.join(", ")
            )));
        }
        if let Some(t) = &self.tune {
            if t.plant == TunePlant::Custom && (t.num.is_empty() || t.den.is_empty()) {
                return Err(CliError::Config("[tune] plant = \"custom\" needs num and den".into()));
            }
            if t.plant == TunePlant::Loop && self.loop_block.is_none() {
                return Err(CliError::Config("[tune] plant = \"loop\" needs a [loop] block".into()));
            }
        }
        Ok(())
    }

    /// Canonical serialization used for the manifest digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Shipped configurations.
pub const PRESETS: &[(&str, &str)] = &[
    ("dc-response", include_str!("../presets/dc-response.toml")),
    ("bode-open", include_str!("../presets/bode-open.toml")),
    ("bode-closed", include_str!("../presets/bode-closed.toml")),
    ("sensitivity", include_str!("../presets/sensitivity.toml")),
    ("sensitivity-quantum", include_str!("../presets/sensitivity-quantum.toml")),
    ("suppress-high", include_str!("../presets/suppress-high.toml")),
    ("suppress-low", include_str!("../presets/suppress-low.toml")),
    ("sql", include_str!("../presets/sql.toml")),
    ("tune-third-order", include_str!("../presets/tune-third-order.toml")),
    ("tune-loop", include_str!("../presets/tune-loop.toml")),
    ("tune-first-order", include_str!("../presets/tune-first-order.toml")),
    ("fit-synthetic", include_str!("../presets/fit-synthetic.toml")),
];

pub fn preset(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })
}
