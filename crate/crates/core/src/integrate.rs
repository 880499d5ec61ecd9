//! One-step methods and fixed-step trajectory integration.
//!
//! All three methods solve an implicit step equation `x̂ = x̌ + h G(x̂)` by plain
//! fixed-point iteration started from the explicit Euler predictor:
//!
//! * classical trapezoidal rule: `G(x) = (F(x̌) + F(x)) / 2`;
//! * generalized trapezoidal rule: `G(x) = ∫₀¹ ◊_{x̌}^{x} F(x̌ + τ (x - x̌)) dτ`
//!   with the secant model anchored at `x̌` and `x`;
//! * generalized midpoint rule: the same integral over the tangent model at
//!   `(x̌ + x) / 2`.
//!
//! For the generalized methods the integral is taken exactly by
//! [`decompose_segment`], and the breakpoint data is kept with the step for
//! dense output and error estimation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::ad::{PLModel, Tape};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::norm::{dist_with, norm_with, NormWeights};
use crate::segment::{decompose_segment, SegmentDecomposition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Classical,
    Generalized,
    Midpoint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Generalized => "generalized",
            Method::Midpoint => "midpoint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Method::Classical),
            "generalized" => Ok(Method::Generalized),
            "midpoint" => Ok(Method::Midpoint),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

/// Stopping rule for the implicit solve.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_iter: usize,
    /// Number of consecutive non-improving iterations tolerated.
    pub patience: usize,
    /// Norm for the stopping test (plain max norm if absent).
    pub weights: Option<NormWeights>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            atol: 1e-12,
            rtol: 1e-12,
            max_iter: 50,
            patience: 5,
            weights: None,
        }
    }
}

impl FixedPointOptions {
    pub fn with_tol(atol: f64, rtol: f64) -> Self {
        FixedPointOptions {
            atol,
            rtol,
            ..Default::default()
        }
    }

    pub fn weighted(mut self, weights: NormWeights) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        norm_with(self.weights.as_ref(), x)
    }

    pub fn tolerance(&self, x: &[f64]) -> f64 {
        self.atol + self.rtol * self.norm(x)
    }
}

/// Autonomous initial value problem `ẋ = F(x)`, `x(t0) = x0`.
#[derive(Clone, Debug)]
pub struct Ivp {
    pub tape: Arc<Tape>,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
}

impl Ivp {
    pub fn new(tape: Arc<Tape>, x0: Vec<f64>, t0: f64, t_end: f64) -> Result<Ivp> {
        check_dim(tape.n_inputs(), tape.n_outputs())?;
        check_dim(tape.n_inputs(), x0.len())?;
        check_finite(&x0, "initial state")?;
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::InvalidArgument(format!(
                "time interval [{t0}, {t_end}] is empty"
            )));
        }
        Ok(Ivp {
            tape,
            x0,
            t0,
            t_end,
        })
    }
}

/// Data of one accepted step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub method: Method,
    pub x_check: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub h: f64,
    /// Breakpoints of the model along the chord (absent for the classical rule).
    pub decomposition: Option<SegmentDecomposition>,
    /// `τ_0 = 0 < ... < τ_{k+1} = 1`.
    pub kink_params: Vec<f64>,
    /// Trajectory states `x̌_{→i}` at each `τ_i`; first is `x̌`, last is `x̂`.
    pub kink_states: Vec<Vec<f64>>,
    /// Slopes `ẋ_{→i}` at each `τ_i` (model values by default).
    pub kink_slopes: Vec<Vec<f64>>,
    pub fp_iterations: usize,
    pub fp_residual: f64,
    /// Model used for the accepted iterate (absent for the classical rule).
    pub model: Option<PLModel>,
}

impl StepResult {
    /// Slopes `F(x̌_{→i})` of the true right hand side at the kink states.
    pub fn function_slopes(&self, tape: &Tape) -> Result<Vec<Vec<f64>>> {
        self.kink_states.iter().map(|x| tape.eval(x)).collect()
    }

    /// Replaces the model slopes by `F(x̌_{→i})`.
    pub fn with_function_slopes(mut self, tape: &Tape) -> Result<StepResult> {
        self.kink_slopes = self.function_slopes(tape)?;
        Ok(self)
    }
}

fn axpy(x: &[f64], h: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + h * b).collect()
}

struct Converged<T> {
    x_hat: Vec<f64>,
    extra: T,
    iterations: usize,
    residual: f64,
}

/// Iterates `x ← map(x)` until successive iterates agree to tolerance.
///
/// Also stops once the update is at the level of rounding, which the
/// tolerance cannot go below; `round_scale` is the magnitude of the terms
/// summed by `map` (typically `‖x̌‖ + |h| ‖F(x̌)‖`).
fn fixed_point<T>(
    start: Vec<f64>,
    fp: &FixedPointOptions,
    round_scale: f64,
    mut map: impl FnMut(&[f64]) -> Result<(Vec<f64>, T)>,
) -> Result<Converged<T>> {
    let mut x = start;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=fp.max_iter {
        let (next, extra) = map(&x)?;
        check_finite(&next, "fixed-point iterate")?;
        residual = dist_with(fp.weights.as_ref(), &next, &x);
        let floor = 8.0 * f64::EPSILON * (fp.norm(&next) + round_scale);
        if residual <= fp.tolerance(&next) || residual <= floor {
            return Ok(Converged {
                x_hat: next,
                extra,
                iterations: it,
                residual,
            });
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= fp.patience {
                return Err(Error::FixedPointDivergence {
                    iterations: it,
                    residual,
                });
            }
        }
        x = next;
    }
    Err(Error::FixedPointDivergence {
        iterations: fp.max_iter,
        residual,
    })
}

fn round_scale(fp: &FixedPointOptions, x: &[f64], h: f64, f: &[f64]) -> f64 {
    fp.norm(x) + h.abs() * fp.norm(f)
}

fn check_step(tape: &Tape, x: &[f64], h: f64, fp: &FixedPointOptions) -> Result<()> {
    check_dim(tape.n_inputs(), tape.n_outputs())?;
    check_dim(tape.n_inputs(), x.len())?;
    if let Some(w) = &fp.weights {
        check_dim(x.len(), w.len())?;
    }
    check_finite(x, "step start")?;
    if h == 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size {h} must be nonzero"
        )));
    }
    Ok(())
}

/// Classical trapezoidal rule `x̂ = x̌ + h (F(x̌) + F(x̂)) / 2`.
pub fn classical_trap_step(
    tape: &Arc<Tape>,
    x_check: &[f64],
    h: f64,
    fp: &FixedPointOptions,
) -> Result<StepResult> {
    check_step(tape, x_check, h, fp)?;
    let f0 = tape.eval(x_check)?;
    let sol = fixed_point(
        axpy(x_check, h, &f0),
        fp,
        round_scale(fp, x_check, h, &f0),
        |x| {
            let f = tape.eval(x)?;
            let next = x_check
                .iter()
                .zip(f0.iter().zip(&f))
                .map(|(a, (u, v))| a + 0.5 * h * (u + v))
                .collect();
            Ok((next, ()))
        },
    )?;
    let f1 = tape.eval(&sol.x_hat)?;
    Ok(StepResult {
        method: Method::Classical,
        x_check: x_check.to_vec(),
        x_hat: sol.x_hat.clone(),
        h,
        decomposition: None,
        kink_params: vec![0.0, 1.0],
        kink_states: vec![x_check.to_vec(), sol.x_hat],
        kink_slopes: vec![f0, f1],
        fp_iterations: sol.iterations,
        fp_residual: sol.residual,
        model: None,
    })
}

fn finish_generalized(
    method: Method,
    x_check: &[f64],
    h: f64,
    sol: Converged<(PLModel, SegmentDecomposition)>,
) -> StepResult {
    let (model, dec) = sol.extra;
    let mut kink_states: Vec<Vec<f64>> = dec
        .partial_integrals()
        .iter()
        .map(|g| axpy(x_check, h, g))
        .collect();
    if let Some(last) = kink_states.last_mut() {
        last.clone_from(&sol.x_hat);
    }
    StepResult {
        method,
        x_check: x_check.to_vec(),
        x_hat: sol.x_hat,
        h,
        kink_params: dec.params.clone(),
        kink_slopes: dec.values.clone(),
        kink_states,
        decomposition: Some(dec),
        fp_iterations: sol.iterations,
        fp_residual: sol.residual,
        model: Some(model),
    }
}

/// Generalized trapezoidal rule
/// `x̂ - x̌ = h ∫₀¹ [F̊ + ΔF(x̌, x̂; (x̂ - x̌)(t - 1/2))] dt`.
pub fn generalized_trap_step(
    tape: &Arc<Tape>,
    x_check: &[f64],
    h: f64,
    fp: &FixedPointOptions,
) -> Result<StepResult> {
    check_step(tape, x_check, h, fp)?;
    let lo = tape.evaluate(x_check)?;
    let f0 = lo.outputs();
    let mut hi_values = Vec::with_capacity(lo.values.len());
    let sol = fixed_point(
        axpy(x_check, h, &f0),
        fp,
        round_scale(fp, x_check, h, &f0),
        |x| {
            tape.evaluate_into(x, &mut hi_values)?;
            let model = PLModel::secant_from_evaluations(tape, x_check, &lo.values, x, &hi_values)?;
            let (p, q) = chord_increments(x_check, x, model.center());
            let dec = decompose_segment(&model, &p, &q)?;
            let next = axpy(x_check, h, &dec.integral());
            Ok((next, (model, dec)))
        },
    )?;
    Ok(finish_generalized(Method::Generalized, x_check, h, sol))
}

/// Generalized midpoint rule
/// `x̂ - x̌ = h ∫₀¹ [F(x̊) + ΔF(x̊; (x̂ - x̌)(t - 1/2))] dt` with `x̊ = (x̌ + x̂)/2`.
pub fn generalized_midpoint_step(
    tape: &Arc<Tape>,
    x_check: &[f64],
    h: f64,
    fp: &FixedPointOptions,
) -> Result<StepResult> {
    check_step(tape, x_check, h, fp)?;
    let f0 = tape.eval(x_check)?;
    let sol = fixed_point(
        axpy(x_check, h, &f0),
        fp,
        round_scale(fp, x_check, h, &f0),
        |x| {
            let center: Vec<f64> = x_check.iter().zip(x).map(|(a, b)| 0.5 * (a + b)).collect();
            let eval = tape.evaluate(&center)?;
            let model = PLModel::tangent_from_evaluation(tape, &center, &eval)?;
            let (p, q) = chord_increments(x_check, x, &center);
            let dec = decompose_segment(&model, &p, &q)?;
            let next = axpy(x_check, h, &dec.integral());
            Ok((next, (model, dec)))
        },
    )?;
    Ok(finish_generalized(Method::Midpoint, x_check, h, sol))
}

fn chord_increments(a: &[f64], b: &[f64], center: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = a.iter().zip(center).map(|(x, c)| x - c).collect();
    let q = b.iter().zip(center).map(|(x, c)| x - c).collect();
    (p, q)
}

/// One step of the selected method.
pub fn step(
    method: Method,
    tape: &Arc<Tape>,
    x_check: &[f64],
    h: f64,
    fp: &FixedPointOptions,
) -> Result<StepResult> {
    match method {
        Method::Classical => classical_trap_step(tape, x_check, h, fp),
        Method::Generalized => generalized_trap_step(tape, x_check, h, fp),
        Method::Midpoint => generalized_midpoint_step(tape, x_check, h, fp),
    }
}

/// Eliminates the `h²` error term of a symmetric second order method:
/// `(4 x_{h/2} - x_h) / 3`.
pub fn richardson_extrapolate(x_full: &[f64], x_two_halves: &[f64]) -> Vec<f64> {
    x_full
        .iter()
        .zip(x_two_halves)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: usize,
    pub rejected: usize,
    pub fp_iterations: usize,
    pub fp_failures: usize,
}

impl Stats {
    fn record(&mut self, step: &StepResult) {
        self.steps += 1;
        self.fp_iterations += step.fp_iterations;
    }
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Accepted steps, if recording was requested.
    pub steps: Vec<StepResult>,
    pub stats: Stats,
}

impl Trajectory {
    fn start(t0: f64, x0: &[f64]) -> Self {
        Trajectory {
            times: vec![t0],
            states: vec![x0.to_vec()],
            ..Default::default()
        }
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }
}

/// An integration run that stopped early. Carries what was computed so far.
#[derive(Debug, thiserror::Error)]
#[error("integration stopped at t = {}: {source}", partial.times.last().copied().unwrap_or(f64::NAN))]
pub struct IntegrationError {
    pub source: Error,
    pub partial: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedStepConfig {
    pub method: Method,
    /// Report Richardson extrapolated states.
    pub extrapolate: bool,
    pub fp: FixedPointOptions,
    /// Keep every [`StepResult`] in the trajectory.
    pub record_steps: bool,
}

impl FixedStepConfig {
    pub fn new(method: Method) -> Self {
        FixedStepConfig {
            method,
            extrapolate: false,
            fp: FixedPointOptions::default(),
            record_steps: false,
        }
    }

    pub fn extrapolated(mut self, yes: bool) -> Self {
        self.extrapolate = yes;
        self
    }

    pub fn with_fp(mut self, fp: FixedPointOptions) -> Self {
        self.fp = fp;
        self
    }

    pub fn recording(mut self, yes: bool) -> Self {
        self.record_steps = yes;
        self
    }
}

/// Number of uniform steps of size `h` covering `span`; the last step is
/// shortened when `h` does not divide `span`.
pub fn step_count(span: f64, h: f64) -> usize {
    let n = span / h;
    let r = n.round();
    if (n - r).abs() <= 1e-9 * r.max(1.0) {
        (r as usize).max(1)
    } else {
        n.ceil() as usize
    }
}

/// Grid `t0 + i h`, ending exactly at `t_end`.
pub fn uniform_grid(t0: f64, t_end: f64, h: f64) -> Vec<f64> {
    let n = step_count(t_end - t0, h);
    let mut times: Vec<f64> = (0..n).map(|i| t0 + i as f64 * h).collect();
    times.push(t_end);
    times
}

/// One step of size `h` combined with two steps of size `h/2`.
#[derive(Clone, Debug)]
pub struct ExtrapolatedStep {
    pub x_hat: Vec<f64>,
    pub full: StepResult,
    pub halves: [StepResult; 2],
}

/// Romberg step: `(4 x_{h/2,h/2} - x_h) / 3` from the common start `x_check`.
pub fn extrapolated_step(
    method: Method,
    tape: &Arc<Tape>,
    x_check: &[f64],
    h: f64,
    fp: &FixedPointOptions,
) -> Result<ExtrapolatedStep> {
    let full = step(method, tape, x_check, h, fp)?;
    let first = step(method, tape, x_check, 0.5 * h, fp)?;
    let second = step(method, tape, &first.x_hat, 0.5 * h, fp)?;
    Ok(ExtrapolatedStep {
        x_hat: richardson_extrapolate(&full.x_hat, &second.x_hat),
        full,
        halves: [first, second],
    })
}

fn run_grid(
    ivp: &Ivp,
    grid: &[f64],
    config: &FixedStepConfig,
) -> std::result::Result<Trajectory, Box<IntegrationError>> {
    let mut traj = Trajectory::start(grid[0], &ivp.x0);
    let mut x = ivp.x0.clone();
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let advanced = if config.extrapolate {
            extrapolated_step(config.method, &ivp.tape, &x, h, &config.fp).map(|e| {
                let ExtrapolatedStep {
                    x_hat,
                    full,
                    halves,
                } = e;
                traj.stats.record(&full);
                for s in halves {
                    traj.stats.record(&s);
                    if config.record_steps {
                        traj.steps.push(s);
                    }
                }
                x_hat
            })
        } else {
            step(config.method, &ivp.tape, &x, h, &config.fp).map(|s| {
                traj.stats.record(&s);
                let x_hat = s.x_hat.clone();
                if config.record_steps {
                    traj.steps.push(s);
                }
                x_hat
            })
        };
        match advanced {
            Ok(next) => x = next,
            Err(source) => {
                if matches!(source, Error::FixedPointDivergence { .. }) {
                    traj.stats.fp_failures += 1;
                }
                return Err(Box::new(IntegrationError {
                    source,
                    partial: traj,
                }));
            }
        }
        traj.times.push(w[1]);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

/// Integrates with uniform steps of size `h`.
///
/// With `extrapolate`, every step is an [`extrapolated_step`] and the
/// extrapolated state is carried forward. The recorded steps are the half
/// steps, which start from the extrapolated state of the previous step.
pub fn integrate_fixed(
    ivp: &Ivp,
    h: f64,
    config: &FixedStepConfig,
) -> std::result::Result<Trajectory, Box<IntegrationError>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Box::new(IntegrationError {
            source: Error::InvalidArgument(format!("step size {h} must be positive")),
            partial: Trajectory::start(ivp.t0, &ivp.x0),
        }));
    }
    let grid = uniform_grid(ivp.t0, ivp.t_end, h);
    run_grid(ivp, &grid, config)
}
