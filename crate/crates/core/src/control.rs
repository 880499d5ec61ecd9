//! Local error estimation and adaptive step-size control for the generalized
//! trapezoidal rule.
//!
//! The local error of an accepted step is bounded by
//!
//! ```text
//! h γ ‖x̂ - x̌‖² / 12 + β Σ_i ∫₀^{h(τ_{i+1}-τ_i)} ‖q_i(t)‖ dt
//! q_i(t) = a_i t² + (ẋ_{→i} - (x̂ - x̌)/h) t + x̌_{→i} - x̌ - τ_i (x̂ - x̌)
//! ```
//!
//! where `q_i` is the deviation of the dense output from the chord, `β` a
//! Lipschitz constant of `F` and `γ` bounds the curvature error of its secant
//! model. Norms are (optionally weighted) max norms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{PLModel, Tape};
use crate::dense::dense_from_step;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::integrate::{
    generalized_trap_step, FixedPointOptions, IntegrationError, Ivp, StepResult, Trajectory,
};
use crate::norm::NormWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantsSource {
    User,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimates {
    pub beta: f64,
    pub gamma: f64,
    pub source: ConstantsSource,
}

impl LipschitzEstimates {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta >= 0.0 && gamma >= 0.0 && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "constants must be finite and nonnegative, got beta={beta}, gamma={gamma}"
            )));
        }
        Ok(LipschitzEstimates {
            beta,
            gamma,
            source: ConstantsSource::User,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorEstimate {
    pub total: f64,
    pub term_curvature: f64,
    pub term_deviation: f64,
}

/// Real roots of `a t² + b t + c` strictly inside `(0, len)`.
fn roots_inside(a: f64, b: f64, c: f64, len: f64, out: &mut Vec<f64>) {
    let mut push = |r: f64| {
        if r > 0.0 && r < len && r.is_finite() {
            out.push(r);
        }
    };
    if a == 0.0 {
        if b != 0.0 {
            push(-c / b);
        }
        return;
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        // No sign change (a double root does not split the integrand).
        return;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if b == 0.0 {
        let r = (-c / a).sqrt();
        push(r);
        push(-r);
        return;
    }
    push(q / a);
    if q != 0.0 {
        push(c / q);
    }
}

fn poly_integral(a: f64, b: f64, c: f64, t0: f64, t1: f64) -> f64 {
    let p = |t: f64| ((a / 3.0 * t + b / 2.0) * t + c) * t;
    p(t1) - p(t0)
}

/// `∫₀ᴸ |a t² + b t + c| dt`, exactly up to rounding.
pub fn abs_quadratic_integral(a: f64, b: f64, c: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let mut cuts = vec![0.0];
    roots_inside(a, b, c, len, &mut cuts);
    cuts.push(len);
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .map(|w| poly_integral(a, b, c, w[0], w[1]).abs())
        .sum()
}

/// Componentwise quadratic `a t² + b t + c` on `[0, len]`.
#[derive(Clone, Debug)]
struct VectorQuadratic<'a> {
    a: &'a [f64],
    b: &'a [f64],
    c: &'a [f64],
}

impl VectorQuadratic<'_> {
    fn component(&self, j: usize, t: f64) -> f64 {
        (self.a[j] * t + self.b[j]) * t + self.c[j]
    }

    fn max_abs(&self, t: f64) -> f64 {
        (0..self.a.len()).fold(0.0, |m, j| m.max(self.component(j, t).abs()))
    }
}

/// Above this dimension the max-norm integral uses composite Simpson.
pub const EXACT_NORM_MAX_DIM: usize = 32;

/// `∫₀ᴸ max_j |a_j t² + b_j t + c_j| dt`.
///
/// The interval is cut at every root of each component and of every pairwise
/// sum and difference, so on each cut the maximizing component and its sign
/// are fixed and the integral is a polynomial one.
pub fn max_abs_quadratic_integral(a: &[f64], b: &[f64], c: &[f64], len: f64) -> f64 {
    let n = a.len();
    if len <= 0.0 || n == 0 {
        return 0.0;
    }
    let q = VectorQuadratic { a, b, c };
    if n == 1 {
        return abs_quadratic_integral(a[0], b[0], c[0], len);
    }
    if n > EXACT_NORM_MAX_DIM {
        let m = 32;
        let dt = len / m as f64;
        let mut s = q.max_abs(0.0) + q.max_abs(len);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * q.max_abs(i as f64 * dt);
        }
        return s * dt / 3.0;
    }
    let mut cuts = vec![0.0, len];
    for j in 0..n {
        roots_inside(a[j], b[j], c[j], len, &mut cuts);
        for k in j + 1..n {
            roots_inside(a[j] - a[k], b[j] - b[k], c[j] - c[k], len, &mut cuts);
            roots_inside(a[j] + a[k], b[j] + b[k], c[j] + c[k], len, &mut cuts);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let (j, _) =
                (0..n)
                    .map(|j| (j, q.component(j, mid).abs()))
                    .fold(
                        (0, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            poly_integral(a[j], b[j], c[j], w[0], w[1]).abs()
        })
        .sum()
}

/// Error estimate of a generalized trapezoidal step in the max norm.
pub fn estimate_error(step: &StepResult, consts: &LipschitzEstimates) -> Result<ErrorEstimate> {
    estimate_error_weighted(step, consts, &NormWeights::unit(step.x_hat.len()))
}

/// Error estimate in the weighted max norm.
pub fn estimate_error_weighted(
    step: &StepResult,
    consts: &LipschitzEstimates,
    weights: &NormWeights,
) -> Result<ErrorEstimate> {
    let n = step.x_hat.len();
    check_dim(n, weights.len())?;
    let dense = dense_from_step(step)?;
    let h = step.h;
    let dx: Vec<f64> = step
        .x_hat
        .iter()
        .zip(&step.x_check)
        .map(|(a, b)| a - b)
        .collect();
    let dxn = weights.norm(&dx);
    let term_curvature = h.abs() * consts.gamma * dxn * dxn / 12.0;
    let mut dev = 0.0;
    let (mut qa, mut qb, mut qc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for piece in dense.pieces() {
        for j in 0..n {
            let s = weights.scales()[j];
            qa[j] = piece.a[j] / s;
            qb[j] = (piece.b[j] - dx[j] / h) / s;
            qc[j] = (piece.c[j] - step.x_check[j] - piece.tau * dx[j]) / s;
        }
        // Time runs backwards for negative steps; the integral is over |length|.
        if h < 0.0 {
            qb.iter_mut().for_each(|v| *v = -*v);
        }
        dev += max_abs_quadratic_integral(&qa, &qb, &qc, piece.length.abs());
    }
    let term_deviation = consts.beta * dev;
    let est = ErrorEstimate {
        total: term_curvature + term_deviation,
        term_curvature,
        term_deviation,
    };
    check_finite(&[est.total], "error estimate")?;
    Ok(est)
}

/// Sampling safety factor applied to estimated constants.
pub const CONSTANTS_SAFETY: f64 = 2.0;

/// Samples `β` and `γ` in the max-norm ball of the given radius.
pub fn estimate_constants(
    tape: &std::sync::Arc<Tape>,
    center: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzEstimates> {
    estimate_constants_weighted(
        tape,
        center,
        radius,
        samples,
        seed,
        &NormWeights::unit(center.len()),
    )
}

/// As [`estimate_constants`] in a weighted norm; the ball has radius
/// `radius · s_i` in component `i`.
pub fn estimate_constants_weighted(
    tape: &std::sync::Arc<Tape>,
    center: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
    weights: &NormWeights,
) -> Result<LipschitzEstimates> {
    let n = tape.n_inputs();
    check_dim(n, center.len())?;
    check_dim(n, weights.len())?;
    if !(radius > 0.0 && radius.is_finite()) || samples < 2 {
        return Err(Error::InvalidArgument(
            "sampling needs a positive radius and at least two samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        center
            .iter()
            .zip(weights.scales())
            .map(|(c, s)| c + radius * s * rng.gen_range(-1.0..=1.0))
            .collect()
    };
    let points: Vec<Vec<f64>> = (0..samples).map(|_| draw(&mut rng)).collect();
    let values = points
        .iter()
        .map(|p| tape.eval(p))
        .collect::<Result<Vec<_>>>()?;
    let mut beta: f64 = 0.0;
    let mut any = false;
    for i in 0..samples {
        for j in i + 1..samples {
            let d = weights.dist(&points[i], &points[j]);
            if d > 0.0 {
                any = true;
                beta = beta.max(weights.dist(&values[i], &values[j]) / d);
            }
        }
    }
    if !any {
        return Err(Error::InvalidArgument("all sample points coincide".into()));
    }
    let mut gamma: f64 = 0.0;
    for _ in 0..samples {
        let (u, w, v) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let denom = weights.dist(&u, &w) * weights.dist(&u, &v);
        if denom == 0.0 {
            continue;
        }
        let model = match crate::ad::linearize_secant(tape, &w, &v) {
            Ok(m) => m,
            Err(Error::NotDifferentiable { .. }) => continue,
            Err(e) => return Err(e),
        };
        let fu = tape.eval(&u)?;
        let mu = PLModel::evaluate(&model, &u)?;
        gamma = gamma.max(2.0 * weights.dist(&fu, &mu) / denom);
    }
    let est = LipschitzEstimates {
        beta: CONSTANTS_SAFETY * beta,
        gamma: CONSTANTS_SAFETY * gamma,
        source: ConstantsSource::Sampled,
    };
    check_finite(&[est.beta, est.gamma], "sampled constants")?;
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerLimits {
    pub fac_min: f64,
    pub fac_max: f64,
    pub safety: f64,
}

impl Default for ControllerLimits {
    fn default() -> Self {
        ControllerLimits {
            fac_min: 0.2,
            fac_max: 5.0,
            safety: 0.9,
        }
    }
}

/// Accepts iff `est ≤ tol`; proposes `h · clamp(safety (tol/est)^{1/3})`.
pub fn propose_step(
    est: &ErrorEstimate,
    tol: f64,
    h: f64,
    limits: &ControllerLimits,
) -> (bool, f64) {
    let accept = est.total <= tol;
    let ratio = tol / est.total.max(f64::MIN_POSITIVE);
    let fac = (limits.safety * ratio.cbrt()).clamp(limits.fac_min, limits.fac_max);
    (accept, h * fac)
}

#[derive(Clone, Debug)]
pub struct AdaptiveOptions {
    pub fp: FixedPointOptions,
    pub limits: ControllerLimits,
    /// Initial step; defaults to 1% of the interval.
    pub h_init: Option<f64>,
    /// Smallest admissible step; defaults to `1e-12 (t_end - t0)`.
    pub h_min: Option<f64>,
    pub weights: Option<NormWeights>,
    /// Times the integrator must land on exactly.
    pub stop_times: Vec<f64>,
    pub record_steps: bool,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            fp: FixedPointOptions::default(),
            limits: ControllerLimits::default(),
            h_init: None,
            h_min: None,
            weights: None,
            stop_times: Vec::new(),
            record_steps: false,
            max_steps: 10_000_000,
        }
    }
}

/// Accept/reject integration with the generalized trapezoidal rule.
pub fn integrate_adaptive(
    ivp: &Ivp,
    tol: f64,
    consts: &LipschitzEstimates,
    opts: &AdaptiveOptions,
) -> std::result::Result<Trajectory, Box<IntegrationError>> {
    let mut traj = Trajectory {
        times: vec![ivp.t0],
        states: vec![ivp.x0.clone()],
        ..Default::default()
    };
    let fail = |source: Error, partial: Trajectory| Box::new(IntegrationError { source, partial });
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(fail(
            Error::InvalidArgument(format!("tolerance {tol} must be positive")),
            traj,
        ));
    }
    let span = ivp.t_end - ivp.t0;
    let h_min = opts.h_min.unwrap_or(1e-12 * span);
    let weights = opts
        .weights
        .clone()
        .unwrap_or_else(|| NormWeights::unit(ivp.x0.len()));
    let mut stops: Vec<f64> = opts
        .stop_times
        .iter()
        .copied()
        .filter(|&s| s > ivp.t0 && s < ivp.t_end)
        .collect();
    stops.push(ivp.t_end);
    stops.sort_by(f64::total_cmp);
    let mut next_stop = 0;

    let mut h = opts.h_init.unwrap_or(0.01 * span);
    let mut t = ivp.t0;
    let mut x = ivp.x0.clone();
    while t < ivp.t_end {
        if traj.stats.steps + traj.stats.rejected >= opts.max_steps {
            return Err(fail(
                Error::InvalidArgument(format!("step budget {} exhausted", opts.max_steps)),
                traj,
            ));
        }
        let target = stops[next_stop];
        let remaining = target - t;
        let clipped = h >= remaining;
        let h_try = if clipped { remaining } else { h };
        if !clipped && h_try < h_min {
            return Err(fail(Error::StepSizeUnderflow { t, h: h_try, h_min }, traj));
        }
        let step = match generalized_trap_step(&ivp.tape, &x, h_try, &opts.fp) {
            Ok(s) => s,
            Err(Error::FixedPointDivergence { .. }) => {
                traj.stats.rejected += 1;
                traj.stats.fp_failures += 1;
                h = 0.5 * h_try;
                if h < h_min {
                    return Err(fail(Error::StepSizeUnderflow { t, h, h_min }, traj));
                }
                continue;
            }
            Err(e) => return Err(fail(e, traj)),
        };
        let est = match estimate_error_weighted(&step, consts, &weights) {
            Ok(e) => e,
            Err(e) => return Err(fail(e, traj)),
        };
        let (accept, h_new) = propose_step(&est, tol, h_try, &opts.limits);
        if accept {
            t = if clipped { target } else { t + h_try };
            if clipped {
                next_stop += 1;
                // Do not let a short landing step shrink the next one.
                h = h_new.max(h.min(h_new / opts.limits.safety));
            } else {
                h = h_new;
            }
            traj.stats.steps += 1;
            traj.stats.fp_iterations += step.fp_iterations;
            x.clone_from(&step.x_hat);
            traj.times.push(t);
            traj.states.push(x.clone());
            if opts.record_steps {
                traj.steps.push(step);
            }
        } else {
            traj.stats.rejected += 1;
            h = h_new;
        }
    }
    Ok(traj)
}
