use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{CoilCalibration, MagnetometerParams, BOLTZMANN, CESIUM_MASS};
use crate::error::{Error, Result};

const PASCAL_PER_ATM: f64 = 101_325.0;

/// Saturated vapor pressure `log10(p / atm) = a - b / T` over the liquid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaporPressureModel {
    pub a_log10_atm: f64,
    pub b_kelvin: f64,
    pub t_min_k: f64,
    pub t_max_k: f64,
}

impl Default for VaporPressureModel {
    /// Cesium, liquid phase.
    fn default() -> Self {
        Self {
            a_log10_atm: 4.165,
            b_kelvin: 3830.0,
            t_min_k: 300.0,
            t_max_k: 500.0,
        }
    }
}

impl VaporPressureModel {
    pub fn pressure_pa(&self, temperature: f64) -> Result<f64> {
        if !(temperature >= self.t_min_k && temperature <= self.t_max_k) {
            return Err(Error::OutOfValidityRange {
                what: "temperature",
                value: temperature,
                lo: self.t_min_k,
                hi: self.t_max_k,
            });
        }
        Ok(PASCAL_PER_ATM * 10f64.powf(self.a_log10_atm - self.b_kelvin / temperature))
    }

    /// Number density `p / (k_B T)`, m^-3.
    pub fn density(&self, temperature: f64) -> Result<f64> {
        Ok(self.pressure_pa(temperature)? / (BOLTZMANN * temperature))
    }
}

/// Cesium number density with the default correlation.
pub fn vapor_density(temperature: f64) -> Result<f64> {
    VaporPressureModel::default().density(temperature)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConditions {
    pub temperature_k: f64,
    pub sigma_sd_m2: f64,
    pub probe_volume_m3: f64,
    pub atom_mass_kg: f64,
    #[serde(default)]
    pub vapor: VaporPressureModel,
}

impl Default for CellConditions {
    fn default() -> Self {
        Self {
            temperature_k: 383.0,
            sigma_sd_m2: 2e-20,
            probe_volume_m3: 1e-6,
            atom_mass_kg: CESIUM_MASS,
            vapor: VaporPressureModel::default(),
        }
    }
}

impl CellConditions {
    pub fn validate(&self) -> Result<()> {
        let v = [self.temperature_k, self.sigma_sd_m2, self.probe_volume_m3, self.atom_mass_kg];
        if v.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("cell conditions must be positive, got {self:?}")))
        }
    }

    /// Mean relative speed of two identical atoms, `sqrt(16 k_B T / (pi m))`.
    pub fn relative_speed(&self) -> f64 {
        (16.0 * BOLTZMANN * self.temperature_k / (PI * self.atom_mass_kg)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqlReport {
    /// T/sqrt(Hz)
    pub asd_tesla: f64,
    /// A/sqrt(Hz), referred through the y coil.
    pub asd_ampere: f64,
    pub gamma_rel_per_s: f64,
    pub density_per_m3: f64,
    pub relative_speed_m_per_s: f64,
    pub atom_count: f64,
}

/// Projection-noise limit `(q / gamma_e) sqrt(gamma_rel / N)`, with the
/// relaxation rate set by spin-destruction collisions at the cell temperature.
pub fn sql_sensitivity(
    cell: &CellConditions,
    params: &MagnetometerParams,
    coil: &CoilCalibration,
) -> Result<SqlReport> {
    cell.validate()?;
    params.validate()?;
    coil.validate()?;
    let n = cell.vapor.density(cell.temperature_k)?;
    let v = cell.relative_speed();
    let gamma_rel = n * v * cell.sigma_sd_m2;
    let atoms = n * cell.probe_volume_m3;
    if atoms < 1.0 {
        return Err(Error::invalid(format!("probe volume holds {atoms:e} atoms")));
    }
    let asd_tesla = params.q / params.gamma_e * (gamma_rel / atoms).sqrt();
    Ok(SqlReport {
        asd_tesla,
        asd_ampere: asd_tesla / coil.beta_y(),
        gamma_rel_per_s: gamma_rel,
        density_per_m3: n,
        relative_speed_m_per_s: v,
        atom_count: atoms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_is_monotonic_and_bounded() {
        assert!(vapor_density(390.0).unwrap() > vapor_density(383.0).unwrap());
        assert!(matches!(vapor_density(290.0), Err(Error::OutOfValidityRange { .. })));
        assert!(vapor_density(500.1).is_err());
    }

    #[test]
    fn relative_speed_at_cell_temperature() {
        let v = CellConditions::default().relative_speed();
        assert!((v / 349.3 - 1.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn sql_scalings() {
        let (p, c) = (MagnetometerParams::default(), CoilCalibration::default());
        let base = sql_sensitivity(&CellConditions::default(), &p, &c).unwrap();
        let big = CellConditions {
            probe_volume_m3: 4e-6,
            ..Default::default()
        };
        let r = sql_sensitivity(&big, &p, &c).unwrap();
        assert!((base.asd_tesla / r.asd_tesla - 2.0).abs() < 1e-12);
        let sticky = CellConditions {
            sigma_sd_m2: 4e-20,
            ..Default::default()
        };
        let r = sql_sensitivity(&sticky, &p, &c).unwrap();
        assert!((r.asd_tesla / base.asd_tesla - 2f64.sqrt()).abs() < 1e-12);
        assert!((base.asd_ampere * c.beta_y() / base.asd_tesla - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_volume_rejected() {
        let cell = CellConditions {
            probe_volume_m3: 1e-25,
            ..Default::default()
        };
        assert!(sql_sensitivity(&cell, &MagnetometerParams::default(), &CoilCalibration::default()).is_err());
    }
}
