use log::warn;

use super::{MagnetometerParams, Polarization};
use crate::error::{Error, Result};
use crate::spectral::{TimeTrace, Unit};

/// Magnetic field (T) seen by the atoms as a function of time.
pub enum FieldDrive<'a> {
    Constant([f64; 3]),
    Function(&'a (dyn Fn(f64) -> [f64; 3] + Sync)),
    /// Per-axis traces, linearly interpolated and held past their ends.
    Sampled([&'a TimeTrace; 3]),
}

fn interpolate(trace: &TimeTrace, t: f64) -> f64 {
    let x = trace.samples();
    let pos = t / trace.dt();
    if pos <= 0.0 {
        return x[0];
    }
    let i = pos.floor() as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let frac = pos - i as f64;
    x[i] + frac * (x[i + 1] - x[i])
}

fn norm3(b: [f64; 3]) -> f64 {
    (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
}

impl FieldDrive<'_> {
    pub fn at(&self, t: f64) -> [f64; 3] {
        match self {
            FieldDrive::Constant(b) => *b,
            FieldDrive::Function(f) => f(t),
            FieldDrive::Sampled(tr) => [interpolate(tr[0], t), interpolate(tr[1], t), interpolate(tr[2], t)],
        }
    }

    fn max_magnitude(&self, duration: f64, dt: f64) -> Result<f64> {
        match self {
            FieldDrive::Constant(b) => Ok(norm3(*b)),
            FieldDrive::Function(f) => {
                let steps = (2.0 * duration / dt).ceil() as usize;
                Ok((0..=steps).map(|k| norm3(f(k as f64 * dt * 0.5))).fold(0.0, f64::max))
            }
            FieldDrive::Sampled(tr) => {
                if tr.iter().any(|t| t.unit() != Unit::T) {
                    return Err(Error::UnitMismatch {
                        expected: "T".into(),
                        found: tr.iter().map(|t| t.unit().to_string()).collect::<Vec<_>>().join(","),
                    });
                }
                let n = tr.iter().map(|t| t.len()).max().unwrap_or(0);
                let at = |t: &TimeTrace, i: usize| t.samples()[i.min(t.len() - 1)];
                Ok((0..n)
                    .map(|i| norm3([at(tr[0], i), at(tr[1], i), at(tr[2], i)]))
                    .fold(0.0, f64::max))
            }
        }
    }
}

/// Polarization sampled every `dt`, starting with the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationSeries {
    pub dt: f64,
    pub points: Vec<Polarization>,
}

impl PolarizationSeries {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn px_trace(&self) -> Result<TimeTrace> {
        TimeTrace::new(self.points.iter().map(|p| p.px).collect(), self.dt, Unit::Dimensionless)
    }

    pub fn last(&self) -> Polarization {
        *self.points.last().expect("series is never empty")
    }
}

fn rhs(p: &MagnetometerParams, pol: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let g = p.gamma_e;
    let cross = [
        pol[1] * b[2] - pol[2] * b[1],
        pol[2] * b[0] - pol[0] * b[2],
        pol[0] * b[1] - pol[1] * b[0],
    ];
    let pump = [0.0, 0.0, p.zeta];
    let inv_q = 1.0 / p.q;
    std::array::from_fn(|k| {
        inv_q * (g * cross[k] + p.gamma_op * (pump[k] - pol[k]) - p.gamma_rel * pol[k])
    })
}

/// Fixed-step RK4 integration of the Bloch equation.
///
/// Refuses `dt` above a twentieth of the fastest relaxation or precession time.
pub fn integrate_bloch(
    params: &MagnetometerParams,
    drive: &FieldDrive<'_>,
    p0: Polarization,
    dt: f64,
    duration: f64,
) -> Result<PolarizationSeries> {
    params.validate()?;
    if !(dt > 0.0 && duration >= 0.0 && duration.is_finite()) {
        return Err(Error::invalid(format!("need dt > 0 and duration >= 0, got {dt}, {duration}")));
    }
    let b_max = drive.max_magnitude(duration, dt)?;
    let relax = params.q / params.total_rate();
    let precess = if b_max > 0.0 {
        params.q / (params.gamma_e * b_max)
    } else {
        f64::INFINITY
    };
    let max = relax.min(precess) / 20.0;
    if dt > max {
        return Err(Error::StepTooLarge { dt, max });
    }
    let steps = (duration / dt).round() as usize;
    let mut points = Vec::with_capacity(steps + 1);
    let mut x = p0.as_array();
    points.push(p0);
    let add = |a: [f64; 3], k: [f64; 3], s: f64| -> [f64; 3] { std::array::from_fn(|i| a[i] + s * k[i]) };
    for n in 0..steps {
        let t = n as f64 * dt;
        let b0 = drive.at(t);
        let bh = drive.at(t + 0.5 * dt);
        let b1 = drive.at(t + dt);
        let k1 = rhs(params, x, b0);
        let k2 = rhs(params, add(x, k1, 0.5 * dt), bh);
        let k3 = rhs(params, add(x, k2, 0.5 * dt), bh);
        let k4 = rhs(params, add(x, k3, dt), b1);
        x = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        points.push(Polarization::from_array(x));
    }
    Ok(PolarizationSeries { dt, points })
}

/// Linear-response `px` for a field along y, starting from the zero-field steady state.
///
/// `px(t) = -(xi/eta) * int_0^t Omega(tau) exp(-eta (t - tau)) dtau` with
/// `Omega = gamma_e B_y / q`, `xi = gamma_op / q`, `eta = (gamma_op + gamma_rel) / q`.
/// The kernel is integrated exactly for `B_y` linear between samples.
pub fn analytic_px(params: &MagnetometerParams, b_y: &TimeTrace) -> Result<TimeTrace> {
    params.validate()?;
    if b_y.unit() != Unit::T {
        return Err(Error::UnitMismatch {
            expected: "T".into(),
            found: b_y.unit().to_string(),
        });
    }
    let h = b_y.dt();
    let eta = params.total_rate() / params.q;
    let xi = params.gamma_op / params.q;
    let omega: Vec<f64> = b_y.samples().iter().map(|b| params.gamma_e * b / params.q).collect();

    let mut phase = 0.0f64;
    let mut peak = 0.0f64;
    for w in omega.windows(2) {
        phase += 0.5 * h * (w[0] + w[1]);
        peak = peak.max(phase.abs());
    }
    if peak > 0.1 {
        warn!("accumulated precession angle {peak:.3} rad exceeds the small-signal regime");
    }

    let e = (-eta * h).exp();
    let c0 = -(-eta * h).exp_m1() / eta;
    let c1 = h / eta - c0 / eta;
    let mut y = 0.0;
    let mut out = Vec::with_capacity(omega.len());
    out.push(0.0);
    for w in omega.windows(2) {
        y = e * y + w[0] * c0 + (w[1] - w[0]) * c1 / h;
        out.push(-(xi / eta) * y);
    }
    TimeTrace::new(out, h, Unit::Dimensionless)
}
