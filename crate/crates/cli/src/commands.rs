//! One function per subcommand. Each reads its blocks from the configuration,
//! writes its tables and returns the JSON summary stored as `summary.json`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde_json::{json, Value};

use serfloop::experiments::{noise_suppression, sensitivity_sweep, SensitivityConfig, SuppressionConfig};
use serfloop::io::{read_bode_csv, write_bode_csv, write_spectral_csv};
use serfloop::loopsim::{
    bandwidth_report, closed_loop_tf, is_closed_loop_stable, open_loop_tf, pid_tf, ziegler_nichols_tune,
    InputSignal, LoopComponents, LoopMode, LoopSimulator, PidParams,
};
use serfloop::lti::{bode_at, feedback, frequency_grid, RationalTransferFunction, Spacing};
use serfloop::magnetometer::{dc_extremum, dc_response_curve, faraday_rotation, sql_sensitivity, steady_state};
use serfloop::spectral::{LockInConfig, SpectralDensity};
use serfloop::sysid::{fit_bode, BodeDataset, DatasetLabel, FitParameter, FitSpec};

use crate::config::{ExperimentConfig, LoopBlock, Scenario, TunePlant};
use crate::error::CliError;
use crate::output::{column, sha256_hex, FileDigest, OutputSet, Sidecar};

/// State shared by a command while it runs.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    /// Relative input paths resolve against this directory.
    pub base_dir: PathBuf,
    pub out: OutputSet,
    pub inputs: Vec<FileDigest>,
}

impl RunContext<'_> {
    fn read_input(&mut self, path: &Path) -> Result<String, CliError> {
        let full = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        };
        let bytes = std::fs::read(&full)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", full.display())))?;
        self.inputs.push(FileDigest {
            path: full.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        String::from_utf8(bytes).map_err(|_| CliError::Config(format!("{} is not UTF-8 text", full.display())))
    }
}

fn block<'a, T>(b: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    b.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] block")))
}

fn plant_constants(s: Sidecar, l: &LoopBlock) -> Sidecar {
    s.constant("k_pid", l.k_pid, "1", "configured controller gain")
        .constant("t_i_s", l.t_i_s, "s", "configured integral time")
        .constant("t_d_s", l.t_d_s, "s", "configured derivative time")
        .constant("vccs_corner_hz", l.vccs_corner_hz, "Hz", "fixed, source datasheet bandwidth")
        .constant("amplifier_corner_hz", l.amplifier_corner_hz, "Hz", "fixed, amplifier datasheet bandwidth")
        .constant("transformer_damping", l.transformer_damping, "1", "fitted to measured Bode data")
        .constant("transformer_omega_rad_per_s", l.transformer_omega_rad_per_s, "rad/s", "fitted to measured Bode data")
        .constant("t_m_s", l.t_m_s, "s", "fitted to measured Bode data")
}

fn bode_columns() -> Vec<crate::output::Column> {
    vec![column("frequency_hz", "Hz"), column("magnitude", "1"), column("phase_rad", "rad")]
}

pub fn dc_response(ctx: &mut RunContext) -> Result<Value, CliError> {
    let m = block(&ctx.cfg.magnetometer, "magnetometer")?;
    let (params, optics, coil) = (m.params(), m.optics(), m.coil());
    coil.validate()?;
    let a = m.sweep_amplitude_t;
    if !(a >= 0.0 && a.is_finite()) {
        return Err(CliError::Config(format!("sweep_amplitude_t must be non-negative, got {a}")));
    }
    if m.sweep_points == 0 {
        return Err(CliError::Config("sweep_points must be at least 1".into()));
    }
    let fields: Vec<f64> = if a == 0.0 || m.sweep_points == 1 {
        vec![0.0]
    } else {
        let last = (m.sweep_points - 1) as f64;
        (0..m.sweep_points).map(|k| -a + 2.0 * a * k as f64 / last).collect()
    };
    let curve = dc_response_curve(&params, &optics, &fields)?;
    let b_ext = dc_extremum(&params)?;
    let phi_at = |b: f64| -> Result<f64, CliError> { Ok(faraday_rotation(&optics, steady_state(&params, b)?.px)) };
    let extrema = json!([
        { "b_y_t": -b_ext, "i_y_a": -b_ext / coil.beta_y(), "delta_phi_rad": phi_at(-b_ext)? },
        { "b_y_t": b_ext, "i_y_a": b_ext / coil.beta_y(), "delta_phi_rad": phi_at(b_ext)? },
    ]);
    let by_phi = |a: &&serfloop::magnetometer::DcResponsePoint, b: &&serfloop::magnetometer::DcResponsePoint| {
        a.delta_phi.total_cmp(&b.delta_phi)
    };
    let sampled = json!({
        "max": curve.iter().max_by(by_phi).map(|p| json!({"b_y_t": p.b_y, "delta_phi_rad": p.delta_phi})),
        "min": curve.iter().min_by(by_phi).map(|p| json!({"b_y_t": p.b_y, "delta_phi_rad": p.delta_phi})),
    });

    let mut csv = String::from("i_y_a,b_y_t,delta_phi_rad,within_model_range\n");
    for p in &curve {
        let _ = writeln!(csv, "{:e},{:e},{:e},{}", p.b_y / coil.beta_y(), p.b_y, p.delta_phi, u8::from(p.within_model_range));
    }
    let sidecar = Sidecar::new(
        "Steady-state probe rotation over a sweep of the y field",
        vec![
            column("i_y_a", "A"),
            column("b_y_t", "T"),
            column("delta_phi_rad", "rad"),
            column("within_model_range", "bool"),
        ],
    )
    .constant("gamma_op_per_s", params.gamma_op, "1/s", "configured optical pumping rate")
    .constant("gamma_rel_per_s", params.gamma_rel, "1/s", "configured relaxation rate")
    .constant("slowing_down_factor", params.q, "1", "configured")
    .constant("beta_y_t_per_a", coil.beta_y(), "T/A", "coil calibration")
    .constant("probe_detuning_hz", m.probe_detuning_hz, "Hz", "configured")
    .meta("sweep_amplitude_t", a)
    .meta("extrema", &extrema)
    .meta("sampled_extrema", &sampled);
    ctx.out.write_csv("dc_response", &csv, sidecar)?;
    Ok(json!({
        "sweep_amplitude_t": a,
        "points": curve.len(),
        "extremum_field_t": b_ext,
        "extrema": extrema,
        "sampled_extrema": sampled,
    }))
}

/// Complex amplitude of the response to a unit sine from a simulated run.
///
/// Correlates over whole periods with a Hann weight, which suppresses slow
/// transients, then removes the half-sample delay and droop of the hold.
fn simulated_response(
    lc: &LoopComponents,
    mode: LoopMode,
    l: &LoopBlock,
    f: f64,
) -> Result<Complex64, CliError> {
    let fs = l.sine_check_sample_rate_hz;
    if !(f > 0.0 && f < fs / 4.0) {
        return Err(CliError::Config(format!("sine check at {f} Hz needs 0 < f < {} Hz", fs / 4.0)));
    }
    if l.sine_check_periods == 0 {
        return Err(CliError::Config("sine_check_periods must be at least 1".into()));
    }
    let dt = 1.0 / fs;
    let settle = (l.sine_check_settle_s / dt).round() as usize;
    let n = (l.sine_check_periods as f64 / f / dt).round() as usize;
    let mut sim = LoopSimulator::new(lc, mode, dt)?.with_input(InputSignal::Sine {
        amplitude: 1.0,
        frequency_hz: f,
    });
    sim.run(settle)?;
    let rec = sim.run(n)?;
    let w = 2.0 * PI * f;
    let (mut acc, mut wsum) = (Complex64::new(0.0, 0.0), 0.0);
    for (i, y) in rec.magnetometer.iter().enumerate() {
        let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
        let t = (settle + i) as f64 * dt;
        acc += hann * y * Complex64::new(0.0, w * t).exp().conj();
        wsum += hann;
    }
    // y = |G| sin(wt + phi) correlates to |G| e^{i phi} / (2i)
    let g = acc / wsum * Complex64::new(0.0, 2.0);
    let x = w * dt / 2.0;
    let hold = Complex64::from_polar(x.sin() / x, -x);
    Ok(g / hold)
}

fn wrap(phase: f64) -> f64 {
    (phase + PI).rem_euclid(2.0 * PI) - PI
}

pub fn bode(ctx: &mut RunContext) -> Result<Value, CliError> {
    let l = block(&ctx.cfg.loop_block, "loop")?;
    if l.points == 0 {
        return Err(CliError::Config("frequency list is empty: points must be positive".into()));
    }
    let freqs = frequency_grid(l.f_min_hz, l.f_max_hz, l.points, Spacing::Log)?;
    let filtered = l.components()?;
    let lc = if l.bode_ideal_pid {
        filtered.clone().with_ideal_pid()
    } else {
        filtered.clone()
    };
    lc.validate()?;
    let open_tf = open_loop_tf(&lc);
    let (g_x, g_d) = closed_loop_tf(&lc)?;
    let open = bode_at(&open_tf, &freqs)?;
    let closed = bode_at(&g_x, &freqs)?;
    let dist = bode_at(&g_d, &freqs)?;
    let bw = bandwidth_report(&lc)?;
    let stable = is_closed_loop_stable(&lc)?;

    // with a unit-gain controller the closed loop must equal G_open * g_d pointwise
    let unit = lc.clone().with_pid(PidParams::unity());
    let (gx_u, gd_u) = closed_loop_tf(&unit)?;
    let mut identity_err: f64 = 0.0;
    for &f in &freqs {
        let lhs = gx_u.at_hz(f)?;
        let rhs = open_tf.at_hz(f)? * gd_u.at_hz(f)?;
        if lhs.norm() > 0.0 {
            identity_err = identity_err.max((lhs - rhs).norm() / lhs.norm());
        }
    }

    let pid = lc.pid;
    let with_constants = |s: Sidecar| {
        plant_constants(s, l)
            .constant("derivative_filter_tau_s", pid.derivative_filter_tau, "s", "zero means ideal derivative")
            .meta("ideal_pid", l.bode_ideal_pid)
    };
    ctx.out.write_csv(
        "bode_open",
        &write_bode_csv(&open),
        with_constants(Sidecar::new("Open-loop cascade response", bode_columns())).meta("cutoff_hz", bw.open_cutoff_hz),
    )?;
    ctx.out.write_csv(
        "bode_closed",
        &write_bode_csv(&closed),
        with_constants(Sidecar::new("Closed-loop command response g_r", bode_columns()))
            .meta("cutoff_hz", bw.closed_cutoff_hz)
            .meta("unit_pid_identity_max_rel_error", identity_err),
    )?;
    ctx.out.write_csv(
        "bode_disturbance",
        &write_bode_csv(&dist),
        with_constants(Sidecar::new("Closed-loop disturbance response g_d", bode_columns())),
    )?;

    let mut checks = Vec::new();
    if !l.sine_check_hz.is_empty() {
        let (mode, model) = if ctx.cfg.scenario == Scenario::BodeOpen {
            (LoopMode::OpenLoop, open_loop_tf(&filtered))
        } else {
            (LoopMode::ClosedLoop, closed_loop_tf(&filtered)?.0)
        };
        let mut csv = String::from("frequency_hz,magnitude,phase_rad,model_magnitude,model_phase_rad,deviation_db\n");
        for &f in &l.sine_check_hz {
            let g = simulated_response(&filtered, mode, l, f)?;
            let m = model.at_hz(f)?;
            let dev = 20.0 * (g.norm() / m.norm()).log10();
            let dphase = wrap(g.arg() - m.arg());
            let _ = writeln!(csv, "{f:e},{:e},{:e},{:e},{:e},{dev:e}", g.norm(), g.arg(), m.norm(), m.arg());
            checks.push(json!({ "frequency_hz": f, "deviation_db": dev, "phase_error_rad": dphase }));
        }
        let stem = if mode == LoopMode::OpenLoop { "sine_check_open" } else { "sine_check_closed" };
        ctx.out.write_csv(
            stem,
            &csv,
            plant_constants(
                Sidecar::new(
                    "Time-domain sine response of the simulated loop against the model",
                    vec![
                        column("frequency_hz", "Hz"),
                        column("magnitude", "1"),
                        column("phase_rad", "rad"),
                        column("model_magnitude", "1"),
                        column("model_phase_rad", "rad"),
                        column("deviation_db", "dB"),
                    ],
                ),
                l,
            )
            .constant("sample_rate_hz", l.sine_check_sample_rate_hz, "Hz", "configured")
            .meta("derivative_filter_tau_s", filtered.pid.derivative_filter_tau),
        )?;
    }

    Ok(json!({
        "open_cutoff_hz": bw.open_cutoff_hz,
        "closed_cutoff_hz": bw.closed_cutoff_hz,
        "closed_cutoff_band_max_hz": bw.closed_cutoff_band_max_hz,
        "bandwidth_enhancement": bw.ratio,
        "bandwidth_enhancement_band_max": bw.ratio_band_max,
        "closed_loop_stable": stable,
        "ideal_pid": l.bode_ideal_pid,
        "unit_pid_identity_max_rel_error": identity_err,
        "unit_pid_identity_holds": identity_err < 1e-9,
        "sine_checks": checks,
    }))
}

fn truncate(sd: &SpectralDensity, f_max: f64) -> SpectralDensity {
    let n = sd.frequencies_hz.partition_point(|f| *f <= f_max);
    SpectralDensity {
        frequencies_hz: sd.frequencies_hz[..n].to_vec(),
        asd: sd.asd[..n].to_vec(),
        ..sd.clone()
    }
}

fn spectral_columns(unit: &str) -> Vec<crate::output::Column> {
    vec![column("frequency_hz", "Hz"), column("asd", unit), column("unit", "text")]
}

pub fn suppress(ctx: &mut RunContext) -> Result<Value, CliError> {
    let l = block(&ctx.cfg.loop_block, "loop")?;
    let n = block(&ctx.cfg.noise, "noise")?;
    let s = block(&ctx.cfg.spectral, "spectral")?;
    let lc = l.components()?;
    let sc = SuppressionConfig {
        disturbance_rms_a: n.disturbance_rms_a,
        sensor_floor_a_per_rthz: n.sensor_floor_a_per_rthz,
        sample_rate_hz: s.sample_rate_hz,
        segment_s: s.segment_s,
        segments: s.segments,
        settle_s: s.settle_s,
        window: s.window,
        band_hz: s.band_hz,
        acquisition_cutoff_hz: s.acquisition_cutoff_hz,
        seed: ctx.cfg.seed,
    };
    sc.validate()?;
    let o = noise_suppression(&lc, &sc)?;
    let base = |desc: &str, columns| {
        plant_constants(Sidecar::new(desc, columns), l)
            .constant("disturbance_rms_a", sc.disturbance_rms_a, "A", "configured injected noise")
            .constant("sensor_floor_a_per_rthz", sc.sensor_floor_a_per_rthz, "A/sqrt(Hz)", "configured measurement floor")
            .constant("sample_rate_hz", sc.sample_rate_hz, "Hz", "configured")
            .constant("segment_s", sc.segment_s, "s", "configured")
            .constant("acquisition_cutoff_hz", sc.acquisition_cutoff_hz, "Hz", "anti-alias filter on the recorded current")
            .meta("window", sc.window)
            .meta("seed", sc.seed)
    };
    let open = truncate(&o.open, s.report_f_max_hz);
    let closed = truncate(&o.closed, s.report_f_max_hz);
    ctx.out.write_csv(
        "asd_open",
        &write_spectral_csv(&open),
        base("Open-loop source current ASD", spectral_columns("A/sqrt(Hz)")).spectral(&open).meta("rms_a", o.open_rms_a),
    )?;
    ctx.out.write_csv(
        "asd_closed",
        &write_spectral_csv(&closed),
        base("Closed-loop source current ASD", spectral_columns("A/sqrt(Hz)")).spectral(&closed).meta("rms_a", o.closed_rms_a),
    )?;

    let keep = o.ratio.frequencies_hz.partition_point(|f| *f <= s.report_f_max_hz);
    let mut csv = String::from("frequency_hz,ratio,analytic_ratio\n");
    for i in 0..keep {
        let _ = writeln!(csv, "{:e},{:e},{:e}", o.ratio.frequencies_hz[i], o.ratio.asd[i], o.analytic_ratio[i]);
    }
    ctx.out.write_csv(
        "suppression_ratio",
        &csv,
        base(
            "Closed over open ASD and the analytic |g_d|",
            vec![column("frequency_hz", "Hz"), column("ratio", "1"), column("analytic_ratio", "1")],
        )
            .spectral(&o.ratio)
            .meta("band_hz", o.band_hz)
            .meta("min_ratio_in_band", o.min_ratio_in_band)
            .meta("max_shaping_error_db", o.max_shaping_error_db),
    )?;

    let floor = n.sensor_floor_a_per_rthz;
    if floor > 0.0 {
        let lo = open.frequencies_hz.iter().copied().find(|f| *f > 0.0).unwrap_or(s.band_hz[0]);
        let line = SpectralDensity {
            frequencies_hz: vec![lo, s.report_f_max_hz],
            asd: vec![floor, floor],
            n_averages: 1,
            ..open.clone()
        };
        ctx.out.write_csv(
            "sensor_floor",
            &write_spectral_csv(&line),
            base("Measurement-system floor referred to source current", spectral_columns("A/sqrt(Hz)")).spectral(&line),
        )?;
    }
    Ok(json!({
        "disturbance_rms_a": sc.disturbance_rms_a,
        "open_rms_a": o.open_rms_a,
        "closed_rms_a": o.closed_rms_a,
        "band_hz": o.band_hz,
        "segments": sc.segments,
        "segment_s": sc.segment_s,
        "min_ratio_in_band": o.min_ratio_in_band,
        "max_shaping_error_db": o.max_shaping_error_db,
        "sensor_floor_a_per_rthz": floor,
        "floor_violations": o.floor_violations,
        "floor_consistent": o.floor_violations == 0,
    }))
}

pub fn sensitivity(ctx: &mut RunContext) -> Result<Value, CliError> {
    let m = block(&ctx.cfg.magnetometer, "magnetometer")?;
    let n = block(&ctx.cfg.noise, "noise")?;
    let s = block(&ctx.cfg.spectral, "spectral")?;
    let (params, coil) = (m.params(), m.coil());
    params.validate()?;
    let sql = sql_sensitivity(&m.cell(), &params, &coil);
    let quantum = if n.include_quantum_floor {
        sql.clone()?.asd_tesla
    } else {
        0.0
    };
    let cfg = SensitivityConfig {
        technical_floor_t_per_rthz: n.technical_floor_t_per_rthz,
        quantum_floor_t_per_rthz: quantum,
        calibration_tone_t: s.calibration_tone_t,
        calibration_frequency_hz: s.calibration_frequency_hz,
        t_m_s: params.time_constant(),
        f_min_hz: s.sweep_f_min_hz,
        f_max_hz: s.sweep_f_max_hz,
        points: s.sweep_points,
        sample_rate_hz: s.lockin_sample_rate_hz,
        trace_s: s.trace_s,
        lockin: LockInConfig {
            f_r: s.calibration_frequency_hz,
            nep_bandwidth: s.nep_bandwidth_hz,
            filter_order: s.filter_order,
        },
        beta_y_t_per_a: coil.beta_y(),
        seed: ctx.cfg.seed,
        ..SensitivityConfig::default()
    };
    let o = sensitivity_sweep(&cfg)?;
    let base = |desc: &str, unit: &str, sd: &SpectralDensity| {
        Sidecar::new(desc, spectral_columns(unit))
            .spectral(sd)
            .constant("nep_bandwidth_hz", s.nep_bandwidth_hz, "Hz", "configured lock-in bandwidth")
            .constant("filter_order", f64::from(s.filter_order), "1", "configured lock-in filter order")
            .constant("calibration_tone_t", s.calibration_tone_t, "T", "configured reference amplitude")
            .constant("calibration_frequency_hz", s.calibration_frequency_hz, "Hz", "configured")
            .constant("beta_y_t_per_a", coil.beta_y(), "T/A", "coil calibration")
            .constant("technical_floor_t_per_rthz", n.technical_floor_t_per_rthz, "T/sqrt(Hz)", "configured")
            .constant("quantum_floor_t_per_rthz", quantum, "T/sqrt(Hz)", "projection-noise limit of the cell")
            .meta("enbw_hz", o.enbw_hz)
            .meta("trace_s", s.trace_s)
    };
    for (stem, desc, unit, sd) in [
        ("sensitivity_output", "Lock-in ASD of the magnetometer output", "V/sqrt(Hz)", &o.output),
        ("sensitivity_field", "Lock-in ASD referred to the field", "T/sqrt(Hz)", &o.field),
        ("sensitivity_current", "Lock-in ASD referred to coil current", "A/sqrt(Hz)", &o.current),
    ] {
        ctx.out.write_csv(stem, &write_spectral_csv(sd), base(desc, unit, sd))?;
    }
    let sql_json = match &sql {
        Ok(r) => json!({ "asd_tesla": r.asd_tesla, "asd_ampere": r.asd_ampere }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    Ok(json!({
        "floor_t_per_rthz": o.floor_t_per_rthz,
        "floor_a_per_rthz": o.floor_a_per_rthz,
        "nep_bandwidth_hz": s.nep_bandwidth_hz,
        "enbw_hz": o.enbw_hz,
        "tone_guard_hz": o.tone_guard_hz,
        "calibration_ratio": o.calibration_ratio,
        "technical_floor_t_per_rthz": n.technical_floor_t_per_rthz,
        "quantum_floor_t_per_rthz": quantum,
        "points": o.field.len(),
        "sql": sql_json,
        "floor_over_sql": sql.as_ref().map(|r| o.floor_t_per_rthz / r.asd_tesla).ok(),
    }))
}

pub fn sql(ctx: &mut RunContext) -> Result<Value, CliError> {
    let m = block(&ctx.cfg.magnetometer, "magnetometer")?;
    let (params, coil, cell) = (m.params(), m.coil(), m.cell());
    let r = sql_sensitivity(&cell, &params, &coil)?;
    let report = json!({
        "asd_tesla_per_rthz": r.asd_tesla,
        "asd_ampere_per_rthz": r.asd_ampere,
        "gamma_rel_per_s": r.gamma_rel_per_s,
        "density_per_m3": r.density_per_m3,
        "relative_speed_m_per_s": r.relative_speed_m_per_s,
        "atom_count": r.atom_count,
        "temperature_k": cell.temperature_k,
        "probe_volume_m3": cell.probe_volume_m3,
        "spin_destruction_cross_section_m2": cell.sigma_sd_m2,
        "beta_y_t_per_a": coil.beta_y(),
        "slowing_down_factor": params.q,
        "johnson_reference_a_per_rthz": m.johnson_reference_a_per_rthz,
        "johnson_over_sql": m.johnson_reference_a_per_rthz / r.asd_ampere,
    });
    ctx.out.write_json("sql.json", &report)?;
    Ok(report)
}

pub fn fit(ctx: &mut RunContext) -> Result<Value, CliError> {
    let l = block(&ctx.cfg.loop_block, "loop")?.clone();
    let y = block(&ctx.cfg.sysid, "sysid")?.clone();
    let truth = l.plant();
    let pid = if l.bode_ideal_pid { l.pid().without_filter() } else { l.pid() };
    let template = truth.components(pid)?;
    let mut datasets = Vec::new();
    let mut phase_present = Vec::new();
    let synthetic = y.open_csv.is_none() && y.closed_csv.is_none();
    if synthetic {
        let freqs = frequency_grid(y.synthetic_f_min_hz, y.synthetic_f_max_hz, y.synthetic_points, Spacing::Log)?;
        datasets.push(BodeDataset::synthesize(DatasetLabel::Open, &truth, &pid, &freqs, y.open_weight)?);
        datasets.push(BodeDataset::synthesize(DatasetLabel::Closed, &truth, &pid, &freqs, y.closed_weight)?);
    } else {
        for (label, path, weight) in [
            (DatasetLabel::Open, &y.open_csv, y.open_weight),
            (DatasetLabel::Closed, &y.closed_csv, y.closed_weight),
        ] {
            let Some(path) = path else { continue };
            let text = ctx.read_input(path)?;
            let table = read_bode_csv(&text).map_err(|e| CliError::in_input(&path.display().to_string(), e))?;
            phase_present.push(json!({ "dataset": label, "has_phase": table.has_phase }));
            datasets.push(BodeDataset::new(label, table.points, weight)?);
        }
    }
    let mut spec = FitSpec::loop_default(&truth);
    spec.restarts = y.restarts;
    spec.seed = ctx.cfg.seed;
    let r = fit_bode(&datasets, &spec, &template)?;

    for (ds, res) in datasets.iter().zip(&r.residuals) {
        let mut csv = String::from("frequency_hz,measured_magnitude,model_magnitude,residual_db\n");
        for (p, d) in ds.points.iter().zip(&res.residuals_db) {
            let model = p.magnitude * 10f64.powf(d / 20.0);
            let _ = writeln!(csv, "{:e},{:e},{model:e},{d:e}", p.frequency_hz, p.magnitude);
        }
        ctx.out.write_csv(
            &format!("fit_residuals_{}", ds.label),
            &csv,
            Sidecar::new(
                "Per-point magnitude residuals of the fitted model",
                vec![
                    column("frequency_hz", "Hz"),
                    column("measured_magnitude", "1"),
                    column("model_magnitude", "1"),
                    column("residual_db", "dB"),
                ],
            )
            .meta("fixed_parameters", &r.fixed_parameters)
            .meta("rms_db", res.rms_db),
        )?;
    }

    let recovery = synthetic.then(|| {
        r.free_parameters
            .iter()
            .map(|p| {
                let (got, want) = (p.get(&r.parameters), p.get(&truth));
                (p.name().to_string(), json!({ "fitted": got, "truth": want, "relative_error": (got / want - 1.0).abs() }))
            })
            .collect::<serde_json::Map<_, _>>()
    });
    let worst = recovery.as_ref().map(|m| {
        m.values()
            .filter_map(|v| v["relative_error"].as_f64())
            .fold(0.0, f64::max)
    });
    let residual_summary: Vec<Value> = r
        .residuals
        .iter()
        .map(|d| json!({ "dataset": d.label, "rms_db": d.rms_db, "p05_db": d.p05_db, "p50_db": d.p50_db, "p95_db": d.p95_db, "max_abs_db": d.max_abs_db }))
        .collect();
    let provenance: serde_json::Map<String, Value> = FitParameter::ALL
        .iter()
        .map(|p| {
            let v = if let Some(fx) = r.fixed_parameters.get(p) {
                json!({ "status": "fixed", "value": fx.value, "note": fx.note })
            } else {
                json!({ "status": "fitted", "value": p.get(&r.parameters), "bounds": r.bounds.get(p) })
            };
            (p.name().to_string(), v)
        })
        .collect();
    let report = json!({
        "source": if synthetic { "synthetic" } else { "files" },
        "parameters": r.parameters,
        "provenance": provenance,
        "controller": pid,
        "loss": r.loss,
        "residuals": residual_summary,
        "phase_columns": phase_present,
        "restarts": r.diagnostics.restarts.len(),
        "best_restart": r.diagnostics.best_restart,
        "recovery": recovery,
        "worst_relative_error": worst,
    });
    ctx.out.write_json("fit.json", &report)?;
    Ok(report)
}

pub fn tune(ctx: &mut RunContext) -> Result<Value, CliError> {
    let t = block(&ctx.cfg.tune, "tune")?;
    let (plant, lc) = match t.plant {
        TunePlant::Loop => {
            let lc = block(&ctx.cfg.loop_block, "loop")?.components()?;
            (open_loop_tf(&lc), Some(lc))
        }
        TunePlant::Custom => (RationalTransferFunction::new(t.num.clone(), t.den.clone(), "")?, None),
    };
    let zn = ziegler_nichols_tune(&plant)?;
    let stable = match lc {
        Some(lc) => is_closed_loop_stable(&lc.with_pid(zn.pid))?,
        None => {
            let forward = pid_tf(&zn.pid)?.series(&plant);
            let (_, g_d) = feedback(&forward, &RationalTransferFunction::gain(1.0))?;
            g_d.effective_poles().iter().all(|p| p.re < 0.0)
        }
    };
    let report = json!({
        "plant": { "kind": t.plant, "num": plant.num(), "den": plant.den() },
        "k_u": zn.k_u,
        "t_u_s": zn.t_u,
        "omega_180_rad_per_s": zn.omega_180,
        "pid": {
            "k_pid": zn.pid.k_pid,
            "t_i_s": zn.pid.t_i,
            "t_d_s": zn.pid.t_d,
            "derivative_filter_tau_s": zn.pid.derivative_filter_tau,
        },
        "closed_loop_stable": stable,
    });
    ctx.out.write_json("tune.json", &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serfloop::spectral::Unit;

    #[test]
    fn wrap_into_principal_range() {
        assert!((wrap(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap(-0.1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let sd = SpectralDensity::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4], Default::default(), 1, Unit::A).unwrap();
        assert_eq!(truncate(&sd, 2.0).frequencies_hz, vec![0.0, 1.0, 2.0]);
    }
}
