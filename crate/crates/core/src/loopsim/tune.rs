use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{closed_loop_tf, PidParams, LoopComponents};
use crate::error::{Error, Result};
use crate::lti::{bode_sweep, RationalTransferFunction, Spacing};

const SWEEP: (f64, f64, usize) = (0.01, 1e7, 4001);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZieglerNicholsTuning {
    /// Classic rule with the derivative filtered at `T_d / 10`.
    pub pid: PidParams,
    /// Ultimate gain `1 / |G(j w_180)|`.
    pub k_u: f64,
    /// Ultimate period `2 pi / w_180`, s.
    pub t_u: f64,
    /// Phase crossover, rad/s.
    pub omega_180: f64,
}

/// Classic Ziegler-Nichols rule from the phase crossover of `plant`.
///
/// The crossover is the first frequency where the unwrapped phase reaches
/// `-pi`, refined by bisection.
pub fn ziegler_nichols_tune(plant: &RationalTransferFunction) -> Result<ZieglerNicholsTuning> {
    let (lo, hi, n) = SWEEP;
    let pts = bode_sweep(plant, lo, hi, n, Spacing::Log)?;
    let k = pts
        .windows(2)
        .position(|w| w[0].phase_rad > -PI && w[1].phase_rad <= -PI)
        .ok_or(Error::NoPhaseCrossover)?;
    let (f0, ph0) = (pts[k].frequency_hz, pts[k].phase_rad);
    let g0 = plant.at_hz(f0)?;
    let phase = |f: f64| -> Result<f64> { Ok(ph0 + (plant.at_hz(f)? / g0).arg()) };
    let (mut a, mut b) = (f0, pts[k + 1].frequency_hz);
    for _ in 0..200 {
        let m = (a * b).sqrt();
        if phase(m)? > -PI {
            a = m;
        } else {
            b = m;
        }
        if b / a - 1.0 < 1e-14 {
            break;
        }
    }
    let f180 = (a * b).sqrt();
    let mag = plant.at_hz(f180)?.norm();
    if !(mag > 0.0 && mag.is_finite()) {
        return Err(Error::NoPhaseCrossover);
    }
    let k_u = 1.0 / mag;
    let omega_180 = 2.0 * PI * f180;
    let t_u = 2.0 * PI / omega_180;
    Ok(ZieglerNicholsTuning {
        pid: PidParams::filtered(0.6 * k_u, t_u / 2.0, t_u / 8.0),
        k_u,
        t_u,
        omega_180,
    })
}

/// True when every pole of the disturbance response lies in the open left half-plane.
///
/// Roots shared with the numerator, including the integrator pole at the
/// origin, are cancelled first.
pub fn is_closed_loop_stable(lc: &LoopComponents) -> Result<bool> {
    let (_, g_d) = closed_loop_tf(lc)?;
    Ok(g_d.effective_poles().iter().all(|p| p.re < 0.0))
}
