use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{pid_tf, LoopComponents, NoiseSource, NoiseSpec};
use crate::error::{Error, Result};
use crate::lti::{balance, RationalTransferFunction, to_state_space, DiscreteModel, StateSpaceModel};
use crate::spectral::{TimeTrace, Unit};

/// Largest number of samples a single run may request.
pub const MAX_SAMPLES: f64 = 5e7;
const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    /// PID bypassed by a unit-gain path, no feedback.
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    #[default]
    Zero,
    Constant {
        level: f64,
    },
    Ramp {
        slope_per_s: f64,
    },
    Sine {
        amplitude: f64,
        frequency_hz: f64,
    },
}

impl InputSignal {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            InputSignal::Zero => 0.0,
            InputSignal::Constant { level } => level,
            InputSignal::Ramp { slope_per_s } => slope_per_s * t,
            InputSignal::Sine {
                amplitude,
                frequency_hz,
            } => amplitude * (2.0 * PI * frequency_hz * t).sin(),
        }
    }
}

/// Recorded loop signals, one value per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopRecords {
    /// Source current after the disturbance, A.
    pub current: Vec<f64>,
    /// Magnetometer output R.
    pub magnetometer: Vec<f64>,
    /// `E = X - R`
    pub error: Vec<f64>,
    /// VCCS control input.
    pub control: Vec<f64>,
}

impl LoopRecords {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }
}

const OUT_CURRENT: usize = 0;
const OUT_MAG: usize = 1;
const OUT_ERROR: usize = 2;
const OUT_CONTROL: usize = 3;
const N_OUT: usize = 4;
/// External inputs: command X, disturbance D at the source output, sensor noise N at the magnetometer input.
const N_EXT: usize = 3;

/// Streaming time-domain model of the whole loop, discretized exactly
/// (zero-order hold) as one multi-input multi-output system.
pub struct LoopSimulator {
    model: DiscreteModel,
    continuous_poles: Vec<num_complex::Complex64>,
    x: Vec<f64>,
    scratch: Vec<f64>,
    step: u64,
    dt: f64,
    input: InputSignal,
    disturbance: Option<NoiseSource>,
    sensor: Option<NoiseSource>,
}

fn block_diag(models: &[StateSpaceModel]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n: usize = models.iter().map(|m| m.order()).sum();
    let nb = models.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, nb);
    let mut c = DMatrix::zeros(nb, n);
    let mut d = DMatrix::zeros(nb, nb);
    let mut off = 0;
    for (k, m) in models.iter().enumerate() {
        let o = m.order();
        a.view_mut((off, off), (o, o)).copy_from(&m.a);
        for i in 0..o {
            b[(off + i, k)] = m.b[i];
            c[(k, off + i)] = m.c[i];
        }
        d[(k, k)] = m.d;
        off += o;
    }
    (a, b, c, d)
}

fn acquisition_tf(cutoff_hz: f64) -> Result<RationalTransferFunction> {
    let stage = RationalTransferFunction::first_order(1.0, 1.0 / (2.0 * PI * cutoff_hz))?;
    let two = stage.series(&stage);
    Ok(two.series(&two))
}

impl LoopSimulator {
    pub fn new(lc: &LoopComponents, mode: LoopMode, dt: f64) -> Result<Self> {
        Self::build(lc, mode, dt, None)
    }

    /// As [`LoopSimulator::new`], but the recorded current passes through a
    /// fourth-order real-pole low-pass at `cutoff_hz` before sampling. It
    /// keeps the images of the held disturbance from folding back onto the
    /// deeply suppressed low-frequency band.
    pub fn with_acquisition_filter(lc: &LoopComponents, mode: LoopMode, dt: f64, cutoff_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0 && cutoff_hz.is_finite()) {
            return Err(Error::invalid("acquisition cutoff must be positive"));
        }
        Self::build(lc, mode, dt, Some(cutoff_hz))
    }

    fn build(lc: &LoopComponents, mode: LoopMode, dt: f64, acquisition_hz: Option<f64>) -> Result<Self> {
        lc.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("time step must be positive"));
        }
        let mut models = Vec::new();
        let closed = mode == LoopMode::ClosedLoop;
        if closed {
            if !lc.pid.is_realizable() {
                return Err(Error::Unrealizable);
            }
            models.push(to_state_space(&pid_tf(&lc.pid)?)?);
        }
        for (_, b) in lc.blocks() {
            models.push(to_state_space(b)?);
        }
        if let Some(fc) = acquisition_hz {
            models.push(to_state_space(&acquisition_tf(fc)?)?);
        }
        let off = usize::from(closed);
        let (pid, vccs, amp, tr, mag) = (0, off, off + 1, off + 2, off + 3);
        let acq = mag + 1;
        let nb = models.len();
        let (a, b, c, d) = block_diag(&models);
        let n = a.nrows();

        // block inputs w = M z + Ne e
        let mut m = DMatrix::<f64>::zeros(nb, nb);
        let mut ne = DMatrix::<f64>::zeros(nb, N_EXT);
        if closed {
            ne[(pid, 0)] = 1.0;
            m[(pid, mag)] = -1.0;
            m[(vccs, pid)] = 1.0;
        } else {
            ne[(vccs, 0)] = 1.0;
        }
        m[(amp, vccs)] = 1.0;
        ne[(amp, 1)] = 1.0;
        m[(tr, amp)] = 1.0;
        m[(mag, tr)] = 1.0;
        ne[(mag, 2)] = 1.0;
        if acquisition_hz.is_some() {
            m[(acq, vccs)] = 1.0;
            ne[(acq, 1)] = 1.0;
        }

        let loop_matrix = DMatrix::<f64>::identity(nb, nb) - &d * &m;
        let inv = loop_matrix
            .try_inverse()
            .ok_or_else(|| Error::invalid("algebraic loop has no solution"))?;
        let zx = &inv * &c;
        let ze = &inv * &d * &ne;
        let ac = &a + &b * &m * &zx;
        let bc = &b * (&m * &ze + &ne);

        // outputs y = Py z + Qy e
        let mut py = DMatrix::<f64>::zeros(N_OUT, nb);
        let mut qy = DMatrix::<f64>::zeros(N_OUT, N_EXT);
        if acquisition_hz.is_some() {
            py[(OUT_CURRENT, acq)] = 1.0;
        } else {
            py[(OUT_CURRENT, vccs)] = 1.0;
            qy[(OUT_CURRENT, 1)] = 1.0;
        }
        py[(OUT_MAG, mag)] = 1.0;
        py[(OUT_ERROR, mag)] = -1.0;
        qy[(OUT_ERROR, 0)] = 1.0;
        py.row_mut(OUT_CONTROL).copy_from(&m.row(vccs));
        qy.row_mut(OUT_CONTROL).copy_from(&ne.row(vccs));
        let cc = &py * &zx;
        let dc = &py * &ze + &qy;

        let continuous_poles: Vec<_> = if n > 0 {
            balance(&ac).0.complex_eigenvalues().iter().copied().collect()
        } else {
            Vec::new()
        };
        let mag_tau = models[mag]
            .eigenvalues()
            .iter()
            .map(|p| 1.0 / p.norm())
            .fold(f64::INFINITY, f64::min);
        let max_im = continuous_poles.iter().map(|p| p.im.abs()).fold(0.0, f64::max);
        let max_dt = (mag_tau / 10.0).min(PI / 4.0 / max_im);
        if dt > max_dt {
            return Err(Error::StepTooLarge { dt, max: max_dt });
        }
        let fastest = lc.fastest_time_constant();
        if closed && lc.pid.derivative_filter_tau > 0.0 && dt > lc.pid.derivative_filter_tau / 10.0
            || dt > fastest / 10.0
        {
            warn!("dt = {dt:e} s is coarser than a tenth of the fastest block; the hold is exact but intersample detail is lost");
        }
        Ok(Self {
            model: DiscreteModel::from_continuous(&ac, &bc, &cc, &dc, dt),
            continuous_poles,
            x: vec![0.0; n],
            scratch: vec![0.0; n],
            step: 0,
            dt,
            input: InputSignal::Zero,
            disturbance: None,
            sensor: None,
        })
    }

    pub fn with_input(mut self, input: InputSignal) -> Self {
        self.input = input;
        self
    }

    /// White current noise added at the source output.
    pub fn with_disturbance(mut self, spec: &NoiseSpec) -> Result<Self> {
        self.disturbance = Some(NoiseSource::new(spec, self.dt, 0)?);
        Ok(self)
    }

    /// Sensor noise, referred to the magnetometer input current.
    pub fn with_sensor_noise(mut self, spec: &NoiseSpec) -> Result<Self> {
        self.sensor = Some(NoiseSource::new(spec, self.dt, 1)?);
        Ok(self)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> usize {
        self.model.states()
    }

    pub fn continuous_poles(&self) -> &[num_complex::Complex64] {
        &self.continuous_poles
    }

    pub fn discrete_poles(&self) -> Vec<num_complex::Complex64> {
        self.model.poles()
    }

    fn check_state(&self) -> Result<()> {
        if let Some(v) = self
            .x
            .iter()
            .find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::NumericalDivergence(*v, self.step as usize));
        }
        Ok(())
    }

    /// Advances `n` samples and returns the recorded signals.
    pub fn run(&mut self, n: usize) -> Result<LoopRecords> {
        let mut rec = LoopRecords {
            current: Vec::with_capacity(n),
            magnetometer: Vec::with_capacity(n),
            error: Vec::with_capacity(n),
            control: Vec::with_capacity(n),
        };
        let mut y = [0.0; N_OUT];
        for k in 0..n {
            let t = self.step as f64 * self.dt;
            let e = [
                self.input.at(t),
                self.disturbance.as_mut().map_or(0.0, |s| s.sample()),
                self.sensor.as_mut().map_or(0.0, |s| s.sample()),
            ];
            self.model.step(&mut self.x, &mut self.scratch, &e, &mut y);
            rec.current.push(y[OUT_CURRENT]);
            rec.magnetometer.push(y[OUT_MAG]);
            rec.error.push(y[OUT_ERROR]);
            rec.control.push(y[OUT_CONTROL]);
            self.step += 1;
            if k % 4096 == 4095 {
                self.check_state()?;
            }
        }
        self.check_state()?;
        Ok(rec)
    }
}

/// Run description and, after simulation, its recorded traces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub duration_s: f64,
    pub dt_s: f64,
    pub mode: LoopMode,
    pub input: InputSignal,
    /// `current` (A), `magnetometer`, `error` and `control` (V).
    pub records: BTreeMap<String, TimeTrace>,
}

impl SimulationRun {
    pub fn new(duration_s: f64, dt_s: f64, mode: LoopMode, input: InputSignal) -> Self {
        Self {
            duration_s,
            dt_s,
            mode,
            input,
            records: BTreeMap::new(),
        }
    }

    pub fn samples(&self) -> Result<usize> {
        if !(self.dt_s > 0.0 && self.duration_s > 0.0) {
            return Err(Error::invalid("duration and dt must be positive"));
        }
        let n = (self.duration_s / self.dt_s).round();
        if n > MAX_SAMPLES {
            return Err(Error::invalid(format!("{n} samples exceeds the {MAX_SAMPLES} sample limit")));
        }
        Ok(n as usize)
    }
}

/// Simulates `run` with white noise from `noise` injected at the source output.
pub fn simulate_loop(lc: &LoopComponents, run: &SimulationRun, noise: &NoiseSpec) -> Result<SimulationRun> {
    let n = run.samples()?;
    let mut sim = LoopSimulator::new(lc, run.mode, run.dt_s)?
        .with_input(run.input)
        .with_disturbance(noise)?;
    let rec = sim.run(n)?;
    let mut out = run.clone();
    let dt = run.dt_s;
    out.records.insert("current".into(), TimeTrace::new(rec.current, dt, Unit::A)?);
    out.records.insert("magnetometer".into(), TimeTrace::new(rec.magnetometer, dt, Unit::V)?);
    out.records.insert("error".into(), TimeTrace::new(rec.error, dt, Unit::V)?);
    out.records.insert("control".into(), TimeTrace::new(rec.control, dt, Unit::V)?);
    Ok(out)
}
