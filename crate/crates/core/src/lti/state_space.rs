use log::warn;
use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use super::{poly, RationalTransferFunction};
use crate::error::{Error, Result};
use crate::spectral::TimeTrace;

/// Single-input single-output realization `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpaceModel {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C (sI - A)^-1 B + D`
    pub fn evaluate(&self, s: Complex64) -> Result<Complex64> {
        let n = self.order();
        if n == 0 {
            return Ok(Complex64::new(self.d, 0.0));
        }
        let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let rhs = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or(Error::PoleAtEvaluationPoint { re: s.re, im: s.im })?;
        let y = (0..n).fold(Complex64::new(0.0, 0.0), |acc, i| acc + x[i] * self.c[i]);
        Ok(y + self.d)
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        if self.order() == 0 {
            return Vec::new();
        }
        balance(&self.a).0.complex_eigenvalues().iter().copied().collect()
    }
}

/// Controllable canonical realization of a proper transfer function.
pub fn to_state_space(tf: &RationalTransferFunction) -> Result<StateSpaceModel> {
    if !tf.is_proper() {
        return Err(Error::ImproperSystem {
            num: tf.num_degree(),
            den: tf.den_degree(),
        });
    }
    let den = tf.den();
    let n = poly::degree(den);
    let num = tf.num();
    let coeff = |p: &[f64], k: usize| p.get(k).copied().unwrap_or(0.0);
    let d = coeff(num, n);
    if n == 0 {
        return Ok(StateSpaceModel {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: RowDVector::zeros(0),
            d: d / den[0],
        });
    }
    // den is monic, so the strictly proper remainder is num - d*den.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -den[j];
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let c = RowDVector::from_fn(n, |_, j| coeff(num, j) - d * den[j]);
    Ok(StateSpaceModel { a, b, c, d })
}

/// Exact zero-order-hold discretization of `(A, B)` at step `dt`.
///
/// Exponentiates the augmented block `[[A, B], [0, 0]] * dt`.
pub fn zoh_discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = super::expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Diagonal similarity `D^-1 A D` with power-of-two entries that evens out
/// row and column norms. Returns the balanced matrix and the diagonal of `D`.
pub fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in (0..n).filter(|j| *j != i) {
                c += a[(j, i)].abs();
                r += a[(i, j)].abs();
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / 2.0 {
                f *= 2.0;
                c *= 4.0;
            }
            while c >= r * 2.0 {
                f /= 2.0;
                c /= 4.0;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    a[(j, i)] *= f;
                    a[(i, j)] /= f;
                }
            }
        }
    }
    (a, d)
}

/// Discrete-time multi-input multi-output model with dense matrices stored row-major.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    n: usize,
    m: usize,
    p: usize,
    ad: Vec<f64>,
    bd: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    pub dt: f64,
    ad_matrix: DMatrix<f64>,
}

impl DiscreteModel {
    pub fn from_continuous(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        d: &DMatrix<f64>,
        dt: f64,
    ) -> Self {
        // balancing keeps the exponential accurate for stiff, badly scaled loops
        let (a, scale) = balance(a);
        let mut b = b.clone();
        let mut c = c.clone();
        for (i, s) in scale.iter().enumerate() {
            b.row_mut(i).unscale_mut(*s);
            c.column_mut(i).scale_mut(*s);
        }
        let (ad, bd) = zoh_discretize(&a, &b, dt);
        let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
            (0..m.nrows())
                .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)])
                .collect()
        };
        Self {
            n: a.nrows(),
            m: b.ncols(),
            p: c.nrows(),
            ad: row_major(&ad),
            bd: row_major(&bd),
            c: row_major(&c),
            d: row_major(d),
            dt,
            ad_matrix: ad,
        }
    }

    pub fn states(&self) -> usize {
        self.n
    }

    pub fn inputs(&self) -> usize {
        self.m
    }

    pub fn outputs(&self) -> usize {
        self.p
    }

    pub fn poles(&self) -> Vec<Complex64> {
        if self.n == 0 {
            return Vec::new();
        }
        self.ad_matrix.complex_eigenvalues().iter().copied().collect()
    }

    /// Writes `y = C x + D u` into `y`, then advances `x` by one step.
    #[inline]
    pub fn step(&self, x: &mut [f64], scratch: &mut [f64], u: &[f64], y: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for (i, yi) in y.iter_mut().enumerate() {
            let crow = &self.c[i * n..(i + 1) * n];
            let drow = &self.d[i * m..(i + 1) * m];
            *yi = crow.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()
                + drow.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        for i in 0..n {
            let arow = &self.ad[i * n..(i + 1) * n];
            let brow = &self.bd[i * m..(i + 1) * m];
            scratch[i] = arow.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()
                + brow.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        x.copy_from_slice(&scratch[..n]);
    }
}

/// Drives a realization with a sampled input held constant between samples.
pub fn simulate_lti(model: &StateSpaceModel, input: &TimeTrace) -> Result<TimeTrace> {
    let dt = input.dt();
    let n = model.order();
    let continuous_poles = model.eigenvalues();
    if let Some(fastest) = continuous_poles.iter().map(|p| p.norm()).fold(None, |acc: Option<f64>, r| {
        Some(acc.map_or(r, |a| a.max(r)))
    }) {
        if fastest > 0.0 && dt > 0.1 / fastest {
            warn!(
                "dt = {dt:e} s exceeds a tenth of the smallest time constant ({:e} s)",
                1.0 / fastest
            );
        }
    }
    let b = DMatrix::from_column_slice(n, 1, model.b.as_slice());
    let c = DMatrix::from_row_slice(1, n, model.c.transpose().as_slice());
    let d = DMatrix::from_element(1, 1, model.d);
    let disc = DiscreteModel::from_continuous(&model.a, &b, &c, &d, dt);
    let stable = continuous_poles.iter().all(|p| p.re < 0.0);
    if stable {
        if let Some(worst) = disc.poles().iter().map(|z| z.norm()).reduce(f64::max) {
            if worst > 1.0 + 1e-9 {
                return Err(Error::UnstableDiscretization { magnitude: worst });
            }
        }
    }
    let mut x = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut y = [0.0];
    let out: Vec<f64> = input
        .samples()
        .iter()
        .map(|&u| {
            disc.step(&mut x, &mut scratch, &[u], &mut y);
            y[0]
        })
        .collect();
    TimeTrace::new(out, dt, input.unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Unit;
    use std::f64::consts::PI;

    #[test]
    fn static_gain_realization() {
        let ss = to_state_space(&RationalTransferFunction::gain(4.0)).unwrap();
        assert_eq!(ss.order(), 0);
        assert_eq!(ss.d, 4.0);
    }

    #[test]
    fn first_order_realization() {
        let (k, t) = (3.0, 0.02);
        let ss = to_state_space(&RationalTransferFunction::first_order(k, t).unwrap()).unwrap();
        assert_eq!(ss.order(), 1);
        assert!((ss.a[(0, 0)] + 1.0 / t).abs() < 1e-12);
        let s = Complex64::new(0.0, 2.0 * PI * 7.0);
        let direct = RationalTransferFunction::first_order(k, t).unwrap().evaluate(s).unwrap();
        assert!((ss.evaluate(s).unwrap() - direct).norm() < 1e-12 * direct.norm());
    }

    #[test]
    fn improper_rejected() {
        let tf = RationalTransferFunction::new(vec![0.0, 0.0, 1.0], vec![1.0, 1.0], "").unwrap();
        assert!(matches!(to_state_space(&tf), Err(Error::ImproperSystem { num: 2, den: 1 })));
    }

    #[test]
    fn step_response_of_lowpass() {
        let (k, t) = (2.0, 1e-3);
        let dt = t / 100.0;
        let ss = to_state_space(&RationalTransferFunction::first_order(k, t).unwrap()).unwrap();
        let input = TimeTrace::new(vec![1.0; 1001], dt, Unit::V).unwrap();
        let out = simulate_lti(&ss, &input).unwrap();
        // sample 500 is t = 5T
        let expected = k * (1.0 - (-5.0f64).exp());
        assert!((out.samples()[500] / expected - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sine_at_corner_is_attenuated_3db() {
        let (k, t) = (1.5, 1e-3);
        let f = 1.0 / (2.0 * PI * t);
        let dt = 1.0 / (f * 400.0);
        let n = 400 * 40;
        let input: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * (i as f64 + 0.5) * dt).sin()).collect();
        let ss = to_state_space(&RationalTransferFunction::first_order(k, t).unwrap()).unwrap();
        let out = simulate_lti(&ss, &TimeTrace::new(input, dt, Unit::V).unwrap()).unwrap();
        let tail = &out.samples()[n - 4000..];
        let peak = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak / (k / 2f64.sqrt()) - 1.0).abs() < 5e-3, "{peak}");
    }
}
