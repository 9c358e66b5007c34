use serde::{Deserialize, Serialize};

use super::{SpectralDensity, Unit};
use crate::error::{Error, Result};

/// One scaling step in a noise-referral chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conversion {
    /// Refers an amplified signal back to the amplifier input. Unit preserved.
    DivideByGain(f64),
    /// Voltage across a shunt to current through it. V -> A.
    DivideByResistance(f64),
    /// Coil current to field, `beta` in T/A. A -> T.
    FieldFromCurrent(f64),
    /// Field to the coil current producing it, `beta` in T/A. T -> A.
    CurrentFromField(f64),
}

impl Conversion {
    fn apply(self, unit: Unit) -> Result<(f64, Unit)> {
        let require = |expected: Unit| {
            if unit == expected {
                Ok(())
            } else {
                Err(Error::UnitMismatch {
                    expected: expected.to_string(),
                    found: unit.to_string(),
                })
            }
        };
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::invalid(format!("{what} must be positive and finite, got {v}")))
            }
        };
        match self {
            Conversion::DivideByGain(g) => Ok((1.0 / positive(g, "gain")?, unit)),
            Conversion::DivideByResistance(r) => {
                require(Unit::V)?;
                Ok((1.0 / positive(r, "resistance")?, Unit::A))
            }
            Conversion::FieldFromCurrent(b) => {
                require(Unit::A)?;
                Ok((positive(b, "coil constant")?, Unit::T))
            }
            Conversion::CurrentFromField(b) => {
                require(Unit::T)?;
                Ok((1.0 / positive(b, "coil constant")?, Unit::A))
            }
        }
    }
}

/// Applies the conversions in order, checking the unit chain before scaling.
pub fn convert_noise(sd: &SpectralDensity, conversions: &[Conversion]) -> Result<SpectralDensity> {
    let mut unit = sd.unit;
    let mut factor = 1.0;
    for c in conversions {
        let (k, next) = c.apply(unit)?;
        factor *= k;
        unit = next;
    }
    Ok(SpectralDensity {
        asd: sd.asd.iter().map(|a| a * factor).collect(),
        unit,
        ..sd.clone()
    })
}

/// Output noise referred to the amplifier input.
pub fn ein_from_output(sd_output: &SpectralDensity, gain_linear: f64) -> Result<SpectralDensity> {
    convert_noise(sd_output, &[Conversion::DivideByGain(gain_linear)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Sidedness;

    fn flat(a: f64, unit: Unit) -> SpectralDensity {
        SpectralDensity::new(vec![1.0, 2.0, 3.0], vec![a; 3], Sidedness::OneSided, 1, unit).unwrap()
    }

    #[test]
    fn voltage_to_current_chain() {
        let sd = flat(1e-6, Unit::V);
        let out = convert_noise(&sd, &[Conversion::DivideByGain(100.0), Conversion::DivideByResistance(10.0)])
            .unwrap();
        assert_eq!(out.unit, Unit::A);
        assert!((out.asd[0] / 1e-9 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_chain() {
        let sd = flat(3.0, Unit::T);
        assert_eq!(convert_noise(&sd, &[]).unwrap(), sd);
    }

    #[test]
    fn unit_chain_enforced() {
        let sd = flat(1.0, Unit::A);
        assert!(matches!(
            convert_noise(&sd, &[Conversion::DivideByResistance(10.0)]),
            Err(Error::UnitMismatch { .. })
        ));
        assert!(convert_noise(&sd, &[Conversion::DivideByGain(0.0)]).is_err());
    }

    #[test]
    fn ein_divides_by_gain() {
        let out = ein_from_output(&flat(1e-6, Unit::V), 100.0).unwrap();
        assert!((out.asd[1] - 1e-8).abs() < 1e-20);
        assert_eq!(out.unit, Unit::V);
    }
}
