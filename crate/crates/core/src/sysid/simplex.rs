//! Nelder-Mead simplex descent on the unit cube.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Initial edge length in cube coordinates.
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Window over which the best value must settle for convergence.
    pub stall_window: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 6000,
            initial_step: 0.1,
            f_tol: 1e-14,
            x_tol: 1e-10,
            stall_window: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best value at the start of the final stall window minus the final best value.
    pub recent_improvement: f64,
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Minimizes `f` over `[0, 1]^d`; trial points are projected onto the cube.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], opts: &SimplexOptions) -> SimplexOutcome {
    let d = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut x0 = start.to_vec();
    clamp_unit(&mut x0);
    pts.push(x0.clone());
    for i in 0..d {
        let mut x = x0.clone();
        x[i] += if x[i] + opts.initial_step <= 1.0 {
            opts.initial_step
        } else {
            -opts.initial_step
        };
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| eval(x)).collect();
    let mut history = Vec::with_capacity(opts.max_iterations);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|a, b| vals[*a].total_cmp(&vals[*b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        history.push(vals[0]);

        let spread = (vals[d] - vals[0]).abs();
        let size = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let flat = spread <= opts.f_tol * (1.0 + vals[0].abs()) && size <= 1e-6;
        if flat || size <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..d)
            .map(|j| pts[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..d).map(|j| centroid[j] + t * (pts[d][j] - centroid[j])).collect();
            clamp_unit(&mut x);
            x
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let x = along(-0.5);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = eval(&x);
            (x, v)
        };
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        for i in 1..=d {
            let x: Vec<f64> = (0..d).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
            vals[i] = eval(&x);
            pts[i] = x;
        }
    }
    let best = (0..=d).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).unwrap_or(0);
    let recent_improvement = if history.len() > opts.stall_window {
        history[history.len() - 1 - opts.stall_window] - vals[best]
    } else {
        history.first().copied().unwrap_or(vals[best]) - vals[best]
    };
    SimplexOutcome {
        x: pts[best].clone(),
        value: vals[best],
        iterations,
        converged,
        recent_improvement,
    }
}
