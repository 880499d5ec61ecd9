use std::fmt;

use rayon::prelude::*;

use super::{AbsLinear, Problem, Reference};
use crate::error::{Error, Result};
use crate::integrate::{
    classical_trap_step, generalized_trap_step, integrate_fixed, richardson_extrapolate,
    step_count, FixedPointOptions, FixedStepConfig, Method, StepResult, Trajectory,
};

/// `h0, h0/2, ..., h0/2^(levels-1)`.
pub fn geometric_steps(h0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| h0 / 2f64.powi(k as i32)).collect()
}

/// Least-squares slope of `log2(error)` against `log2(h)`.
pub fn fitted_order(hs: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(h, e)| (h.log2(), e.log2()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    /// Observed order against the previous (coarser) row.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub fitted_order: f64,
}

fn table(hs: &[f64], errors: Vec<f64>) -> ConvergenceTable {
    let rows = hs
        .iter()
        .zip(&errors)
        .enumerate()
        .map(|(i, (&h, &error))| ConvergenceRow {
            h,
            error,
            order: (i > 0).then(|| (errors[i - 1] / error).log2() / (hs[i - 1] / h).log2()),
        })
        .collect();
    ConvergenceTable {
        rows,
        fitted_order: fitted_order(hs, &errors),
    }
}

fn run(problem: &Problem, h: f64, method: Method, extrapolate: bool) -> Result<Trajectory> {
    let cfg = FixedStepConfig::new(method)
        .extrapolated(extrapolate)
        .with_fp(problem.fp.clone());
    integrate_fixed(&problem.ivp(), h, &cfg).map_err(|e| e.source)
}

/// Fine-step reference for problems without a closed-form solution: an
/// extrapolated generalized run with step `h_min / refinement`.
pub fn reference_trajectory(problem: &Problem, h_min: f64) -> Result<Trajectory> {
    let refinement = match problem.reference {
        Reference::FineStep { refinement } => refinement,
        Reference::Analytic => 16,
    };
    run(
        problem,
        h_min / refinement as f64,
        Method::Generalized,
        true,
    )
}

/// Global error `max_i ‖x_i - x(t_i)‖` over the grid for each step size, and
/// the fitted order.
pub fn convergence_study(
    problem: &Problem,
    method: Method,
    extrapolate: bool,
    h_list: &[f64],
) -> Result<ConvergenceTable> {
    let reference = match problem.reference {
        Reference::Analytic if problem.has_analytic() => None,
        Reference::Analytic => return Err(Error::MissingData("analytic solution")),
        Reference::FineStep { .. } => {
            let h_min = h_list.iter().copied().fold(f64::INFINITY, f64::min);
            Some(reference_trajectory(problem, h_min)?)
        }
    };
    convergence_study_against(problem, method, extrapolate, h_list, reference.as_ref())
}

/// As [`convergence_study`] with a precomputed reference trajectory, whose
/// grid must refine every grid in `h_list`. Without one the analytic solution
/// is used.
pub fn convergence_study_against(
    problem: &Problem,
    method: Method,
    extrapolate: bool,
    h_list: &[f64],
    reference: Option<&Trajectory>,
) -> Result<ConvergenceTable> {
    if h_list.is_empty() {
        return Err(Error::InvalidArgument("empty step size list".into()));
    }
    let span = problem.t_end - problem.t0;
    let errors = h_list
        .par_iter()
        .map(|&h| {
            let traj = run(problem, h, method, extrapolate)?;
            let mut err: f64 = 0.0;
            match reference {
                Some(r) => {
                    let n_ref = r.times.len() - 1;
                    let n = traj.times.len() - 1;
                    let ratio = n_ref / n;
                    if n * ratio != n_ref || step_count(span, h) != n {
                        return Err(Error::MissingData(
                            "reference grid does not refine the step grid",
                        ));
                    }
                    for (i, x) in traj.states.iter().enumerate() {
                        err = err.max(problem.weights.dist(x, &r.states[i * ratio]));
                    }
                }
                None => {
                    for (t, x) in traj.times.iter().zip(&traj.states) {
                        let exact = problem
                            .analytic(*t)
                            .ok_or(Error::MissingData("analytic solution"))?;
                        err = err.max(problem.weights.dist(x, &exact));
                    }
                }
            }
            Ok(err)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(table(h_list, errors))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KinkMethod {
    Classical,
    Generalized,
    ClassicalExtrapolated,
    GeneralizedExtrapolated,
}

impl KinkMethod {
    pub const ALL: [KinkMethod; 4] = [
        KinkMethod::Classical,
        KinkMethod::Generalized,
        KinkMethod::ClassicalExtrapolated,
        KinkMethod::GeneralizedExtrapolated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KinkMethod::Classical => "classical",
            KinkMethod::Generalized => "generalized",
            KinkMethod::ClassicalExtrapolated => "classical_extrapolated",
            KinkMethod::GeneralizedExtrapolated => "generalized_extrapolated",
        }
    }

    fn base(self) -> Method {
        match self {
            KinkMethod::Classical | KinkMethod::ClassicalExtrapolated => Method::Classical,
            _ => Method::Generalized,
        }
    }

    fn extrapolated(self) -> bool {
        matches!(
            self,
            KinkMethod::ClassicalExtrapolated | KinkMethod::GeneralizedExtrapolated
        )
    }
}

impl fmt::Display for KinkMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinkStepRow {
    pub method: KinkMethod,
    pub h: f64,
    pub error: f64,
    pub err_h2: f64,
    pub err_h3: f64,
}

fn one_step(method: Method, f: &AbsLinear, x: f64, h: f64, fp: &FixedPointOptions) -> Result<f64> {
    let tape = std::sync::Arc::new(f.tape());
    let s: StepResult = match method {
        Method::Classical => classical_trap_step(&tape, &[x], h, fp)?,
        _ => generalized_trap_step(&tape, &[x], h, fp)?,
    };
    Ok(s.x_hat[0])
}

/// Local error of single steps across the kink of `ẋ = a|x| + bx + 1`.
///
/// Each step starts on the exact solution at `-θh` and ends at `(1-θ)h`, so
/// the kink is met at fraction `θ` of the step. Extrapolated variants combine
/// one step of size `h` with two of size `h/2` from the same start.
pub fn kink_step_study(
    a: f64,
    b: f64,
    theta: f64,
    h_list: &[f64],
    fp: &FixedPointOptions,
) -> Result<Vec<KinkStepRow>> {
    let f = AbsLinear::new(a, b)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "crossing fraction {theta} not in (0, 1)"
        )));
    }
    let per_h = h_list
        .par_iter()
        .map(|&h| {
            let x0 = f.lower(-theta * h);
            let exact = f.upper((1.0 - theta) * h);
            KinkMethod::ALL
                .iter()
                .map(|&m| {
                    let full = one_step(m.base(), &f, x0, h, fp)?;
                    let x = if m.extrapolated() {
                        let mid = one_step(m.base(), &f, x0, 0.5 * h, fp)?;
                        let two = one_step(m.base(), &f, mid, 0.5 * h, fp)?;
                        richardson_extrapolate(&[full], &[two])[0]
                    } else {
                        full
                    };
                    if full <= 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "step of size {h} did not cross the kink"
                        )));
                    }
                    let error = (x - exact).abs();
                    Ok(KinkStepRow {
                        method: m,
                        h,
                        error,
                        err_h2: error / (h * h),
                        err_h3: error / (h * h * h),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(4 * h_list.len());
    for m in KinkMethod::ALL {
        rows.extend(per_h.iter().flatten().filter(|r| r.method == m));
    }
    Ok(rows)
}

/// Leading coefficient `C` of `error ≈ C h^p + D h^{p+1}` fitted from the two
/// smallest step sizes of `method` in the table.
pub fn leading_coefficient(rows: &[KinkStepRow], method: KinkMethod, power: i32) -> Option<f64> {
    let mut sel: Vec<&KinkStepRow> = rows.iter().filter(|r| r.method == method).collect();
    sel.sort_by(|x, y| x.h.total_cmp(&y.h));
    let [r1, r2] = [sel.first()?, sel.get(1)?];
    let c1 = r1.error / r1.h.powi(power);
    let c2 = r2.error / r2.h.powi(power);
    Some((r2.h * c1 - r1.h * c2) / (r2.h - r1.h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    /// `[Σ_i (E(x_i) - E(x_0))²]^{1/2}` over the steps.
    pub metric: f64,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// `E(x_i) - E(x_0)` for `i ≥ 1`.
    pub deviations: Vec<f64>,
    /// Largest `|E(x_i) - E(x_{i-1})|`.
    pub max_step_change: f64,
}

/// Root-sum-square energy deviation of a sequence of states from the first.
pub fn energy_metric(problem: &Problem, states: &[Vec<f64>]) -> Result<f64> {
    let e = states
        .iter()
        .map(|x| {
            problem
                .energy(x)
                .ok_or(Error::MissingData("energy functional"))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(e.iter()
        .skip(1)
        .map(|v| (v - e[0]).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Fixed-step run over `n_periods` periods tracking the energy.
pub fn energy_study(
    problem: &Problem,
    method: Method,
    h: f64,
    n_periods: f64,
    fp: &FixedPointOptions,
) -> Result<EnergyReport> {
    if !problem.has_energy() {
        return Err(Error::MissingData("energy functional"));
    }
    let period = problem.period.ok_or(Error::MissingData("problem period"))?;
    let ivp = problem.ivp_until(problem.t0 + n_periods * period)?;
    let cfg = FixedStepConfig::new(method).with_fp(fp.clone());
    let traj = integrate_fixed(&ivp, h, &cfg).map_err(|e| e.source)?;
    let energies: Vec<f64> = traj
        .states
        .iter()
        .map(|x| problem.energy(x).unwrap_or(f64::NAN))
        .collect();
    let deviations: Vec<f64> = energies[1..].iter().map(|e| e - energies[0]).collect();
    let metric = deviations.iter().map(|d| d * d).sum::<f64>().sqrt();
    let max_step_change = energies
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    Ok(EnergyReport {
        metric,
        times: traj.times,
        energies,
        deviations,
        max_step_change,
    })
}
