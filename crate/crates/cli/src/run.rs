//! Executes a validated [`RunConfig`].

use std::fs::File;
use std::io::{self, BufWriter, Write};

use pltrap::control::{
    estimate_constants_weighted, estimate_error_weighted, integrate_adaptive, AdaptiveOptions,
    LipschitzEstimates,
};
use pltrap::integrate::{integrate_fixed, FixedPointOptions, FixedStepConfig, Stats, Trajectory};
use pltrap::problems::{
    convergence_study, energy_study, geometric_steps, kink_step_study, leading_coefficient,
    KinkMethod, Problem,
};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{ConfigError, ProblemSource, RunConfig, StepControl, Task};
use crate::output::{Cell, Table};

/// Samples used to estimate the error estimator constants.
const CONSTANT_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("numerical failure: {0}")]
    Numerical(pltrap::Error),

    #[error("cannot write output: {0}")]
    Output(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Output(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Numerical(_) => "numerical",
            RunError::Output(_) => "output",
        }
    }

    /// One-line JSON record for standard error.
    pub fn record(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

impl From<pltrap::Error> for RunError {
    /// Bad inputs surfacing from the library count as configuration errors.
    fn from(e: pltrap::Error) -> Self {
        use pltrap::Error as E;
        match e {
            E::InvalidArgument(_) | E::MissingData(_) | E::Dimension { .. } | E::InvalidTape(_) => {
                RunError::Config(ConfigError::Problem(e))
            }
            _ => RunError::Numerical(e),
        }
    }
}

/// Runs the task and writes its table to `--out` or standard output.
pub fn run(config: &RunConfig) -> Result<Table, RunError> {
    let table = compute(config)?;
    match &config.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| {
                ConfigError::Invalid(format!("cannot create `{}`: {e}", path.display()))
            })?);
            table.write(config.format, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            table.write(config.format, &mut w)?;
        }
    }
    Ok(table)
}

/// Runs the task without writing anything.
pub fn compute(config: &RunConfig) -> Result<Table, RunError> {
    let mut table = match &config.task {
        Task::Integrate {
            control,
            extrapolate,
        } => integrate(config, *control, *extrapolate)?,
        Task::Converge {
            extrapolate,
            h0,
            levels,
        } => converge(config, *extrapolate, *h0, *levels)?,
        Task::Kinkstep {
            a,
            b,
            theta,
            h0,
            levels,
        } => kinkstep(config, *a, *b, *theta, *h0, *levels)?,
        Task::Energy { h, periods } => energy(config, *h, *periods)?,
        Task::Estimate { control } => estimate(config, *control)?,
    };
    let mut meta = Map::new();
    meta.insert("command".into(), Value::from(config.task.name()));
    meta.insert("config".into(), config_echo(config));
    meta.insert(
        "versions".into(),
        json!({ "pltrap": env!("CARGO_PKG_VERSION"), "format": 1 }),
    );
    meta.append(&mut table.metadata);
    table.metadata = meta;
    Ok(table)
}

fn config_echo(c: &RunConfig) -> Value {
    let problem = match &c.problem {
        None => Value::Null,
        Some(ProblemSource::Builtin(name)) => json!({ "builtin": name }),
        Some(ProblemSource::Expression(path)) => json!({ "expr": path.display().to_string() }),
    };
    let control = |s: &StepControl| match s {
        StepControl::Fixed { h } => json!({ "h": h }),
        StepControl::Adaptive { tol } => json!({ "tol": tol }),
    };
    let task = match &c.task {
        Task::Integrate {
            control: s,
            extrapolate,
        } => {
            json!({ "control": control(s), "extrapolate": extrapolate })
        }
        Task::Converge {
            extrapolate,
            h0,
            levels,
        } => json!({ "extrapolate": extrapolate, "h0": h0, "levels": levels }),
        Task::Kinkstep {
            a,
            b,
            theta,
            h0,
            levels,
        } => json!({ "a": a, "b": b, "theta": theta, "h0": h0, "levels": levels }),
        Task::Energy { h, periods } => json!({ "h": h, "periods": periods }),
        Task::Estimate { control: s } => json!({ "control": control(s) }),
    };
    json!({
        "problem": problem,
        "method": c.method.name(),
        "t_end": c.t_end,
        "abslinear": c.abslinear.map(|(a, b)| json!({ "a": a, "b": b })),
        "fp_atol": c.fp_atol,
        "fp_rtol": c.fp_rtol,
        "seed": c.seed,
        "task": task,
    })
}

fn stats_json(s: &Stats) -> Value {
    json!({
        "steps": s.steps,
        "rejected": s.rejected,
        "fp_iterations": s.fp_iterations,
        "fp_failures": s.fp_failures,
    })
}

/// Sampled constants over a box around a coarse pilot run, so that the box
/// covers the region the trajectory visits.
fn sampled_constants(p: &Problem, seed: u64) -> Result<LipschitzEstimates, RunError> {
    let n = p.x0.len();
    let pilot = integrate_fixed(
        &p.ivp(),
        (p.t_end - p.t0) / 256.0,
        &FixedStepConfig::new(pltrap::integrate::Method::Generalized).with_fp(p.fp.clone()),
    );
    let states = match &pilot {
        Ok(t) => &t.states,
        Err(e) => &e.partial.states,
    };
    let mut lo = p.x0.clone();
    let mut hi = p.x0.clone();
    for x in states {
        for i in 0..n {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let radius = 1.2 * p.weights.norm(&half) + 0.1;
    Ok(estimate_constants_weighted(
        &p.tape,
        &center,
        radius,
        CONSTANT_SAMPLES,
        seed,
        &p.weights,
    )?)
}

fn adaptive_options(p: &Problem, record: bool) -> AdaptiveOptions {
    AdaptiveOptions {
        fp: p.fp.clone(),
        weights: Some(p.weights.clone()),
        record_steps: record,
        ..Default::default()
    }
}

fn constants_json(c: &LipschitzEstimates) -> Value {
    json!({ "beta": c.beta, "gamma": c.gamma })
}

/// Fixed or adaptive run; returns the trajectory and constants if sampled.
fn trajectory(
    config: &RunConfig,
    p: &Problem,
    control: StepControl,
    extrapolate: bool,
    record: bool,
) -> Result<(Trajectory, Option<LipschitzEstimates>), RunError> {
    match control {
        StepControl::Fixed { h } => {
            let cfg = FixedStepConfig::new(config.method)
                .extrapolated(extrapolate)
                .with_fp(p.fp.clone())
                .recording(record);
            let traj = integrate_fixed(&p.ivp(), h, &cfg).map_err(|e| RunError::from(e.source))?;
            Ok((traj, None))
        }
        StepControl::Adaptive { tol } => {
            let consts = sampled_constants(p, config.seed)?;
            let traj = integrate_adaptive(&p.ivp(), tol, &consts, &adaptive_options(p, record))
                .map_err(|e| RunError::from(e.source))?;
            Ok((traj, Some(consts)))
        }
    }
}

fn integrate(
    config: &RunConfig,
    control: StepControl,
    extrapolate: bool,
) -> Result<Table, RunError> {
    let (p, names) = config.load_problem()?;
    let (traj, consts) = trajectory(config, &p, control, extrapolate, false)?;
    let mut table = Table::new(std::iter::once("t".to_string()).chain(names));
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![Cell::Real(*t)];
        row.extend(x.iter().map(|v| Cell::Real(*v)));
        table.push(row);
    }
    table
        .metadata
        .insert("problem".into(), Value::from(p.name.as_str()));
    table
        .metadata
        .insert("stats".into(), stats_json(&traj.stats));
    if let Some(c) = consts {
        table
            .metadata
            .insert("constants".into(), constants_json(&c));
    }
    Ok(table)
}

fn converge(
    config: &RunConfig,
    extrapolate: bool,
    h0: f64,
    levels: usize,
) -> Result<Table, RunError> {
    let (p, _) = config.load_problem()?;
    let hs = geometric_steps(h0, levels);
    let study = convergence_study(&p, config.method, extrapolate, &hs)?;
    let mut table = Table::new(["h", "error", "order"]);
    for r in &study.rows {
        table.push(vec![r.h.into(), r.error.into(), r.order.into()]);
    }
    table
        .metadata
        .insert("problem".into(), Value::from(p.name.as_str()));
    table
        .metadata
        .insert("fitted_order".into(), finite_or_null(study.fitted_order));
    Ok(table)
}

fn kinkstep(
    config: &RunConfig,
    a: f64,
    b: f64,
    theta: f64,
    h0: f64,
    levels: usize,
) -> Result<Table, RunError> {
    let fp = FixedPointOptions::with_tol(
        config.fp_atol.unwrap_or(1e-15),
        config.fp_rtol.unwrap_or(1e-15),
    );
    let hs = geometric_steps(h0, levels);
    let rows = kink_step_study(a, b, theta, &hs, &fp)?;
    let mut table = Table::new(["method", "h", "error", "err_h2", "err_h3"]);
    for r in &rows {
        table.push(vec![
            r.method.name().into(),
            r.h.into(),
            r.error.into(),
            r.err_h2.into(),
            r.err_h3.into(),
        ]);
    }
    let mut coeffs = Map::new();
    for (m, power) in [
        (KinkMethod::Classical, 2),
        (KinkMethod::ClassicalExtrapolated, 2),
        (KinkMethod::Generalized, 3),
        (KinkMethod::GeneralizedExtrapolated, 3),
    ] {
        let c = leading_coefficient(&rows, m, power).unwrap_or(f64::NAN);
        coeffs.insert(format!("{}_h{power}", m.name()), finite_or_null(c));
    }
    table
        .metadata
        .insert("leading_coefficients".into(), Value::Object(coeffs));
    Ok(table)
}

fn energy(config: &RunConfig, h: f64, periods: f64) -> Result<Table, RunError> {
    let (p, _) = config.load_problem()?;
    let report = energy_study(&p, config.method, h, periods, &p.fp)?;
    let mut table = Table::new(["step", "t", "energy", "deviation"]);
    let e0 = report.energies[0];
    for (i, (t, e)) in report.times.iter().zip(&report.energies).enumerate() {
        table.push(vec![i.into(), (*t).into(), (*e).into(), (e - e0).into()]);
    }
    table
        .metadata
        .insert("problem".into(), Value::from(p.name.as_str()));
    table
        .metadata
        .insert("metric".into(), finite_or_null(report.metric));
    table.metadata.insert(
        "max_step_change".into(),
        finite_or_null(report.max_step_change),
    );
    Ok(table)
}

fn estimate(config: &RunConfig, control: StepControl) -> Result<Table, RunError> {
    let (p, _) = config.load_problem()?;
    let (traj, consts) = trajectory(config, &p, control, false, true)?;
    let consts = match consts {
        Some(c) => c,
        None => sampled_constants(&p, config.seed)?,
    };
    let mut table = Table::new([
        "step",
        "t",
        "h",
        "kinks",
        "estimate",
        "term_curvature",
        "term_deviation",
        "fp_iterations",
    ]);
    for (i, (s, t)) in traj.steps.iter().zip(&traj.times).enumerate() {
        let est = estimate_error_weighted(s, &consts, &p.weights)?;
        table.push(vec![
            i.into(),
            (*t).into(),
            s.h.into(),
            s.kink_params.len().saturating_sub(2).into(),
            est.total.into(),
            est.term_curvature.into(),
            est.term_deviation.into(),
            s.fp_iterations.into(),
        ]);
    }
    table
        .metadata
        .insert("problem".into(), Value::from(p.name.as_str()));
    table
        .metadata
        .insert("stats".into(), stats_json(&traj.stats));
    table
        .metadata
        .insert("constants".into(), constants_json(&consts));
    Ok(table)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::Null
    }
}
