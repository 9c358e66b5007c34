//! Bode-data fitting of the loop plant with the controller held fixed.

mod simplex;

pub use simplex::{minimize, SimplexOptions, SimplexOutcome};

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::FrequencyResponsePoint;
use crate::loopsim::{LoopComponents, PidParams, PlantParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLabel {
    Open,
    Closed,
}

impl fmt::Display for DatasetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetLabel::Open => "open",
            DatasetLabel::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeDataset {
    pub label: DatasetLabel,
    pub points: Vec<FrequencyResponsePoint>,
    pub weight: f64,
}

impl BodeDataset {
    pub fn new(label: DatasetLabel, points: Vec<FrequencyResponsePoint>, weight: f64) -> Result<Self> {
        let ds = Self { label, points, weight };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::invalid(format!("{} dataset weight must be positive", self.label)));
        }
        if self.points.is_empty() {
            return Err(Error::invalid(format!("{} dataset has no points", self.label)));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.frequency_hz > 0.0 && p.frequency_hz.is_finite()) {
                return Err(Error::invalid(format!("{} point {i}: frequency must be positive", self.label)));
            }
            if !(p.magnitude > 0.0 && p.magnitude.is_finite()) {
                return Err(Error::invalid(format!("{} point {i}: magnitude must be positive", self.label)));
            }
        }
        if self.points.windows(2).any(|w| w[1].frequency_hz <= w[0].frequency_hz) {
            return Err(Error::invalid(format!("{} dataset frequencies must ascend", self.label)));
        }
        Ok(())
    }

    /// Noiseless samples of the model response on `freqs`.
    pub fn synthesize(label: DatasetLabel, lc: &PlantParams, pid: &PidParams, freqs: &[f64], weight: f64) -> Result<Self> {
        let points = freqs
            .iter()
            .map(|&f| {
                let g = model_response(lc, pid, label, f);
                FrequencyResponsePoint {
                    frequency_hz: f,
                    magnitude: g.norm(),
                    phase_rad: g.arg(),
                }
            })
            .collect();
        Self::new(label, points, weight)
    }
}

/// Plant parameters that a fit may vary or hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParameter {
    KTotal,
    TVccs,
    TA,
    DT,
    OmegaT,
    TM,
}

impl FitParameter {
    pub const ALL: [FitParameter; 6] = [
        FitParameter::KTotal,
        FitParameter::TVccs,
        FitParameter::TA,
        FitParameter::DT,
        FitParameter::OmegaT,
        FitParameter::TM,
    ];

    /// Parameters a fit is allowed to free.
    pub fn fittable(self) -> bool {
        !matches!(self, FitParameter::TVccs | FitParameter::TA)
    }

    pub fn name(self) -> &'static str {
        match self {
            FitParameter::KTotal => "k_total",
            FitParameter::TVccs => "t_vccs",
            FitParameter::TA => "t_a",
            FitParameter::DT => "d_t",
            FitParameter::OmegaT => "omega_t",
            FitParameter::TM => "t_m",
        }
    }

    pub fn get(self, p: &PlantParams) -> f64 {
        match self {
            FitParameter::KTotal => p.k_total,
            FitParameter::TVccs => p.t_vccs,
            FitParameter::TA => p.t_a,
            FitParameter::DT => p.d_t,
            FitParameter::OmegaT => p.omega_t,
            FitParameter::TM => p.t_m,
        }
    }

    pub fn set(self, p: &mut PlantParams, v: f64) {
        match self {
            FitParameter::KTotal => p.k_total = v,
            FitParameter::TVccs => p.t_vccs = v,
            FitParameter::TA => p.t_a = v,
            FitParameter::DT => p.d_t = v,
            FitParameter::OmegaT => p.omega_t = v,
            FitParameter::TM => p.t_m = v,
        }
    }
}

impl fmt::Display for FitParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    LogMagnitudeLeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedValue {
    pub value: f64,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub free_parameters: Vec<FitParameter>,
    pub fixed_parameters: BTreeMap<FitParameter, FixedValue>,
    /// `[lo, hi]` for every free parameter; both positive, searched in log scale.
    pub bounds: BTreeMap<FitParameter, [f64; 2]>,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Seeds the Latin-hypercube starts.
    #[serde(default)]
    pub seed: u64,
}

fn default_restarts() -> usize {
    20
}

impl FitSpec {
    /// Transformer and magnetometer free, everything else fixed at `plant`.
    pub fn loop_default(plant: &PlantParams) -> Self {
        let free = vec![FitParameter::DT, FitParameter::OmegaT, FitParameter::TM];
        let fixed = [
            (FitParameter::KTotal, "gain normalized to 1"),
            (FitParameter::TVccs, "source bandwidth from its datasheet"),
            (FitParameter::TA, "amplifier bandwidth from its datasheet"),
        ]
        .into_iter()
        .map(|(p, note)| {
            (
                p,
                FixedValue {
                    value: p.get(plant),
                    note: note.into(),
                },
            )
        })
        .collect();
        let bounds = [
            (FitParameter::DT, [5.0, 2000.0]),
            (FitParameter::OmegaT, [1.0, 500.0]),
            (FitParameter::TM, [1e-5, 1e-1]),
        ]
        .into_iter()
        .collect();
        Self {
            free_parameters: free,
            fixed_parameters: fixed,
            bounds,
            loss: Loss::LogMagnitudeLeastSquares,
            restarts: default_restarts(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("at least one restart is required"));
        }
        if self.free_parameters.is_empty() {
            return Err(Error::invalid("no free parameters"));
        }
        for (i, p) in self.free_parameters.iter().enumerate() {
            if self.free_parameters[..i].contains(p) {
                return Err(Error::invalid(format!("{p} listed twice")));
            }
            if !p.fittable() {
                return Err(Error::invalid(format!("{p} cannot be fitted")));
            }
            if self.fixed_parameters.contains_key(p) {
                return Err(Error::invalid(format!("{p} is both free and fixed")));
            }
            let [lo, hi] = *self
                .bounds
                .get(p)
                .ok_or_else(|| Error::BoundsViolation(format!("no bounds for {p}")))?;
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::BoundsViolation(format!("{p}: need 0 < lo < hi, got [{lo}, {hi}]")));
            }
        }
        for p in FitParameter::ALL {
            if !self.free_parameters.contains(&p) && !self.fixed_parameters.contains_key(&p) {
                return Err(Error::invalid(format!("{p} is neither free nor fixed")));
            }
        }
        for (p, v) in &self.fixed_parameters {
            if !(v.value > 0.0 && v.value.is_finite()) {
                return Err(Error::invalid(format!("fixed {p} must be positive")));
            }
        }
        if let Some(p) = self.bounds.keys().find(|p| !self.free_parameters.contains(p)) {
            return Err(Error::invalid(format!("bounds given for non-free {p}")));
        }
        Ok(())
    }

    fn base_params(&self) -> PlantParams {
        let mut p = PlantParams::fitted();
        for (k, v) in &self.fixed_parameters {
            k.set(&mut p, v.value);
        }
        p
    }

    fn params_at(&self, base: &PlantParams, u: &[f64]) -> PlantParams {
        let mut p = *base;
        for (k, ui) in self.free_parameters.iter().zip(u) {
            let [lo, hi] = self.bounds[k];
            k.set(&mut p, lo * (hi / lo).powf(*ui));
        }
        p
    }
}

/// Model response of the open cascade or the closed loop at `f`.
///
/// Evaluated factor by factor, which stays accurate where the expanded
/// polynomials would not.
pub fn model_response(p: &PlantParams, pid: &PidParams, label: DatasetLabel, f: f64) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
    let one = Complex64::new(1.0, 0.0);
    let a = 2.0 * p.d_t * p.omega_t;
    let open = p.k_total / (one + s * p.t_vccs) / (one + s * p.t_a) * (a * s)
        / (s * s + a * s + p.omega_t * p.omega_t)
        / (one + s * p.t_m);
    match label {
        DatasetLabel::Open => open,
        DatasetLabel::Closed => {
            let integral = if pid.t_i.is_infinite() {
                Complex64::new(0.0, 0.0)
            } else {
                one / (s * pid.t_i)
            };
            let c = pid.k_pid * (one + integral + s * pid.t_d / (one + s * pid.derivative_filter_tau));
            let l = c * open;
            l / (one + l)
        }
    }
}

fn loss(datasets: &[BodeDataset], p: &PlantParams, pid: &PidParams) -> f64 {
    datasets
        .iter()
        .map(|ds| {
            ds.weight
                * ds
                    .points
                    .iter()
                    .map(|pt| {
                        let m = model_response(p, pid, ds.label, pt.frequency_hz).norm();
                        (m.ln() - pt.magnitude.ln()).powi(2)
                    })
                    .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub restarts: Vec<RestartSummary>,
    pub best_restart: usize,
    /// Running minimum of the restart losses in index order.
    pub running_best: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResiduals {
    pub label: DatasetLabel,
    /// `20 log10(|model| / |data|)` per point.
    pub residuals_db: Vec<f64>,
    pub rms_db: f64,
    pub p05_db: f64,
    pub p50_db: f64,
    pub p95_db: f64,
    pub max_abs_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: PlantParams,
    pub free_parameters: Vec<FitParameter>,
    pub fixed_parameters: BTreeMap<FitParameter, FixedValue>,
    pub bounds: BTreeMap<FitParameter, [f64; 2]>,
    pub loss: f64,
    pub residuals: Vec<DatasetResiduals>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn components(&self, pid: PidParams) -> Result<LoopComponents> {
        self.parameters.components(pid)
    }
}

fn latin_hypercube(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (i, s) in strata.into_iter().enumerate() {
            starts[i][j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    starts
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Per-point dB residuals of `plant` with controller `pid` against each dataset.
pub fn residual_report(datasets: &[BodeDataset], plant: &PlantParams, pid: &PidParams) -> Vec<DatasetResiduals> {
    datasets
        .iter()
        .map(|ds| {
            let residuals_db: Vec<f64> = ds
                .points
                .iter()
                .map(|pt| 20.0 * (model_response(plant, pid, ds.label, pt.frequency_hz).norm() / pt.magnitude).log10())
                .collect();
            let mut sorted = residuals_db.clone();
            sorted.sort_by(f64::total_cmp);
            let n = residuals_db.len() as f64;
            DatasetResiduals {
                label: ds.label,
                rms_db: (residuals_db.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
                p05_db: percentile(&sorted, 0.05),
                p50_db: percentile(&sorted, 0.5),
                p95_db: percentile(&sorted, 0.95),
                max_abs_db: residuals_db.iter().map(|r| r.abs()).fold(0.0, f64::max),
                residuals_db,
            }
        })
        .collect()
}

/// Simultaneous amplitude fit of the plant to open- and closed-loop Bode data.
///
/// The controller is taken from `lc_template` and never varied. Free parameters
/// are searched in log scale inside their bounds by simplex descent from
/// Latin-hypercube starts; restarts run in parallel and the lowest loss wins,
/// ties going to the lower restart index.
pub fn fit_bode(datasets: &[BodeDataset], spec: &FitSpec, lc_template: &LoopComponents) -> Result<FitResult> {
    if datasets.is_empty() {
        return Err(Error::invalid("no datasets to fit"));
    }
    for ds in datasets {
        ds.validate()?;
    }
    spec.validate()?;
    let pid = lc_template.pid;
    pid.validate()?;
    let base = spec.base_params();
    let d = spec.free_parameters.len();

    let centre = vec![0.5; d];
    let l0 = loss(datasets, &spec.params_at(&base, &centre), &pid);
    for (j, p) in spec.free_parameters.iter().enumerate() {
        let mut u = centre.clone();
        u[j] = 0.6;
        let l1 = loss(datasets, &spec.params_at(&base, &u), &pid);
        if (l1 - l0).abs() <= 1e-12 * (1.0 + l0.abs()) {
            return Err(Error::invalid(format!("{p} does not influence any dataset")));
        }
    }

    let starts = latin_hypercube(spec.restarts, d, spec.seed);
    let opts = SimplexOptions::default();
    let outcomes: Vec<SimplexOutcome> = starts
        .par_iter()
        .map(|s| {
            let f = |u: &[f64]| loss(datasets, &spec.params_at(&base, u), &pid);
            let mut out = minimize(f, s, &opts);
            // one restart from the converged vertex guards against simplex collapse
            let again = minimize(f, &out.x, &opts);
            if again.value <= out.value {
                let iterations = out.iterations + again.iterations;
                out = SimplexOutcome { iterations, ..again };
            }
            out
        })
        .collect();

    let mut best = 0;
    let mut running_best = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.iter().enumerate() {
        if o.value < outcomes[best].value {
            best = i;
        }
        running_best.push(outcomes[best].value);
    }
    let winner = &outcomes[best];
    if !winner.converged && winner.recent_improvement > 1e-10 {
        return Err(Error::NoConvergence(format!(
            "best restart still improving by {:e} after {} iterations",
            winner.recent_improvement, winner.iterations
        )));
    }
    let parameters = spec.params_at(&base, &winner.x);
    Ok(FitResult {
        parameters,
        free_parameters: spec.free_parameters.clone(),
        fixed_parameters: spec.fixed_parameters.clone(),
        bounds: spec.bounds.clone(),
        loss: winner.value,
        residuals: residual_report(datasets, &parameters, &pid),
        diagnostics: FitDiagnostics {
            restarts: outcomes
                .iter()
                .enumerate()
                .map(|(index, o)| RestartSummary {
                    index,
                    loss: o.value,
                    iterations: o.iterations,
                    converged: o.converged,
                })
                .collect(),
            best_restart: best,
            running_best,
        },
    })
}
