//! Benchmark problems with their exact solutions and energies, and the
//! experiment procedures run on them.

mod studies;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::ad::{Tape, TapeBuilder};
use crate::error::{Error, Result};
use crate::integrate::{FixedPointOptions, Ivp};
use crate::norm::NormWeights;

pub use studies::{
    convergence_study, convergence_study_against, energy_metric, energy_study, fitted_order,
    geometric_steps, kink_step_study, leading_coefficient, reference_trajectory, ConvergenceRow,
    ConvergenceTable, EnergyReport, KinkMethod, KinkStepRow,
};

pub type StateFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type EnergyFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// How reference values for error measurements are obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    Analytic,
    /// Extrapolated generalized run with step `h_min / refinement`.
    FineStep {
        refinement: usize,
    },
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub tape: Arc<Tape>,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub period: Option<f64>,
    /// Error norm scales.
    pub weights: NormWeights,
    /// Recommended implicit solver settings.
    pub fp: FixedPointOptions,
    pub reference: Reference,
    analytic: Option<StateFn>,
    energy: Option<EnergyFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("t0", &self.t0)
            .field("t_end", &self.t_end)
            .field("period", &self.period)
            .field("reference", &self.reference)
            .field("analytic", &self.analytic.is_some())
            .field("energy", &self.energy.is_some())
            .finish()
    }
}

impl Problem {
    /// A problem without oracles on `[0, t_end]`.
    pub fn new(name: impl Into<String>, tape: Arc<Tape>, x0: Vec<f64>, t_end: f64) -> Result<Self> {
        let n = x0.len();
        Ivp::new(Arc::clone(&tape), x0.clone(), 0.0, t_end)?;
        Ok(Problem {
            name: name.into(),
            tape,
            x0,
            t0: 0.0,
            t_end,
            period: None,
            weights: NormWeights::unit(n),
            fp: FixedPointOptions::default(),
            reference: Reference::FineStep { refinement: 64 },
            analytic: None,
            energy: None,
        })
    }

    pub fn with_analytic(mut self, f: StateFn) -> Self {
        self.analytic = Some(f);
        self.reference = Reference::Analytic;
        self
    }

    pub fn with_energy(mut self, f: EnergyFn) -> Self {
        self.energy = Some(f);
        self
    }

    pub fn analytic(&self, t: f64) -> Option<Vec<f64>> {
        self.analytic.as_ref().map(|f| f(t))
    }

    pub fn has_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    pub fn energy(&self, x: &[f64]) -> Option<f64> {
        self.energy.as_ref().map(|f| f(x))
    }

    pub fn has_energy(&self) -> bool {
        self.energy.is_some()
    }

    pub fn ivp(&self) -> Ivp {
        self.ivp_until(self.t_end)
            .expect("problem interval was validated on construction")
    }

    pub fn ivp_until(&self, t_end: f64) -> Result<Ivp> {
        Ivp::new(Arc::clone(&self.tape), self.x0.clone(), self.t0, t_end)
    }
}

pub const ROLLING_STONE_PERIOD: f64 = 2.0 * PI + 4.0;

/// Potential of the rolling stone: a parabola with a flat section on `[-1, 1]`.
pub fn rolling_stone_potential(x: f64) -> f64 {
    if x <= -1.0 {
        0.5 * (1.0 + x) * (1.0 + x)
    } else if x < 1.0 {
        0.0
    } else {
        0.5 * (1.0 - x) * (1.0 - x)
    }
}

/// Exact solution of the rolling stone from `(1, 1)`.
pub fn rolling_stone_exact(t: f64) -> Vec<f64> {
    let s = t.rem_euclid(ROLLING_STONE_PERIOD);
    if s <= PI {
        vec![1.0 + s.sin(), s.cos()]
    } else if s < PI + 2.0 {
        vec![1.0 - (s - PI), -1.0]
    } else if s < 2.0 * PI + 2.0 {
        vec![-1.0 - (2.0 - s).sin(), (2.0 - s).cos()]
    } else {
        vec![s - 3.0 - 2.0 * PI, 1.0]
    }
}

/// `ẋ1 = x2`, `ẋ2 = -x1 - |x1 - 1|/2 + |x1 + 1|/2`.
pub fn rolling_stone_tape() -> Tape {
    let mut b = TapeBuilder::new(2);
    let [x1, x2] = [b.input(0), b.input(1)];
    let one = b.constant(1.0);
    let lo = b.sub(x1, one);
    let lo = b.abs(lo);
    let lo = b.scale(lo, 0.5);
    let hi = b.add(x1, one);
    let hi = b.abs(hi);
    let hi = b.scale(hi, 0.5);
    let y = b.neg(x1);
    let y = b.sub(y, lo);
    let y = b.add(y, hi);
    b.finish(&[x2, y])
}

pub fn rolling_stone() -> Problem {
    let mut p = Problem::new(
        "rolling_stone",
        Arc::new(rolling_stone_tape()),
        vec![1.0, 1.0],
        ROLLING_STONE_PERIOD,
    )
    .expect("valid problem")
    .with_analytic(Arc::new(rolling_stone_exact))
    .with_energy(Arc::new(|x: &[f64]| {
        rolling_stone_potential(x[0]) + 0.5 * x[1] * x[1]
    }));
    p.period = Some(ROLLING_STONE_PERIOD);
    p
}

/// Constants of the forced LC circuit with a diode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiodeParams {
    pub inductance: f64,
    pub capacitance: f64,
    pub omega: f64,
    /// Forward conductance divisor.
    pub alpha: f64,
    /// Reverse conductance divisor.
    pub beta: f64,
}

impl Default for DiodeParams {
    fn default() -> Self {
        DiodeParams {
            inductance: 1e-6,
            capacitance: 1e-13,
            omega: 3e9,
            alpha: 2.0,
            beta: 1e-5,
        }
    }
}

impl DiodeParams {
    pub fn forcing_period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Piecewise linear diode characteristic.
    pub fn diode(&self, z: f64) -> f64 {
        (z + z.abs()) / (2.0 * self.alpha) + (z - z.abs()) / (2.0 * self.beta)
    }

    pub fn tape(&self) -> Tape {
        let DiodeParams {
            inductance: l,
            capacitance: c,
            omega,
            alpha,
            beta,
        } = *self;
        let mut b = TapeBuilder::new(3);
        let [t, q, i] = [b.input(0), b.input(1), b.input(2)];
        let one = b.constant(1.0);
        let wt = b.scale(t, omega);
        let forcing = b.sin(wt);
        let forcing = b.scale(forcing, c);
        let z = b.scale(i, c);
        let az = b.abs(z);
        let fwd = b.add(z, az);
        let fwd = b.scale(fwd, 1.0 / (2.0 * alpha));
        let rev = b.sub(z, az);
        let rev = b.scale(rev, 1.0 / (2.0 * beta));
        let g = b.add(fwd, rev);
        let s = b.sub(q, forcing);
        let s = b.add(s, g);
        let di = b.scale(s, -1.0 / (l * c));
        b.finish(&[one, i, di])
    }
}

/// State is (time, charge, current); runs over three forcing periods.
pub fn diode_circuit() -> Problem {
    diode_circuit_with(DiodeParams::default())
}

pub fn diode_circuit_with(params: DiodeParams) -> Problem {
    let period = params.forcing_period();
    let mut p = Problem::new("diode", Arc::new(params.tape()), vec![0.0; 3], 3.0 * period)
        .expect("valid problem");
    let scales = vec![
        1.0 / params.omega,
        params.capacitance,
        params.omega * params.capacitance,
    ];
    p.weights = NormWeights::new(scales).expect("positive scales");
    p.fp = FixedPointOptions::with_tol(1e-14, 1e-14).weighted(p.weights.clone());
    p.period = Some(period);
    p
}

/// `ẋ = a|x| + bx + 1`, with a kink at `x = 0`.
///
/// On `x ≥ 0` the field is `(b + a) x + 1`, on `x < 0` it is `(b - a) x + 1`.
/// Since `F(0) = 1`, solutions cross the kink upwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbsLinear {
    pub a: f64,
    pub b: f64,
}

impl Default for AbsLinear {
    fn default() -> Self {
        AbsLinear { a: 2.25, b: -1.25 }
    }
}

/// Solution of `ẋ = m x + 1`, `x(0) = 0`.
pub fn linear_branch(m: f64, t: f64) -> f64 {
    (m * t).exp_m1() / m
}

impl AbsLinear {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if b - a == 0.0 || b + a == 0.0 || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "degenerate branch slope for a={a}, b={b}"
            )));
        }
        Ok(AbsLinear { a, b })
    }

    pub fn slope_pos(&self) -> f64 {
        self.b + self.a
    }

    pub fn slope_neg(&self) -> f64 {
        self.b - self.a
    }

    /// Solution in `x ≥ 0` through `x(0) = 0`.
    pub fn upper(&self, t: f64) -> f64 {
        linear_branch(self.slope_pos(), t)
    }

    /// Solution in `x < 0` through `x(0) = 0`.
    pub fn lower(&self, t: f64) -> f64 {
        linear_branch(self.slope_neg(), t)
    }

    /// Solution crossing the kink at `t = 0`.
    pub fn exact(&self, t: f64) -> f64 {
        if t < 0.0 {
            self.lower(t)
        } else {
            self.upper(t)
        }
    }

    pub fn rhs(&self, x: f64) -> f64 {
        self.a * x.abs() + self.b * x + 1.0
    }

    pub fn tape(&self) -> Tape {
        let mut b = TapeBuilder::new(1);
        let x = b.input(0);
        let ax = b.abs(x);
        let ax = b.scale(ax, self.a);
        let bx = b.scale(x, self.b);
        let s = b.add(ax, bx);
        let one = b.constant(1.0);
        let y = b.add(s, one);
        b.finish(&[y])
    }
}

/// Scalar problem on `[-1, 1]` that crosses its kink at `t = 0`.
pub fn abslinear(a: f64, b: f64) -> Result<Problem> {
    let f = AbsLinear::new(a, b)?;
    let mut p = Problem::new("abslinear", Arc::new(f.tape()), vec![f.lower(-1.0)], 2.0)?
        .with_analytic(Arc::new(move |t| vec![f.exact(t)]));
    p.t0 = -1.0;
    p.t_end = 1.0;
    Ok(p)
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["rolling_stone", "diode", "abslinear"];

pub fn builtin(name: &str) -> Result<Problem> {
    match name {
        "rolling_stone" => Ok(rolling_stone()),
        "diode" => Ok(diode_circuit()),
        "abslinear" => {
            let d = AbsLinear::default();
            abslinear(d.a, d.b)
        }
        _ => Err(Error::InvalidArgument(format!(
            "unknown problem `{name}` (expected one of {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Checks `ẋ = F(x)` at `t` by central differences.
    fn residual(p: &Problem, t: f64, dt: f64) -> f64 {
        let fwd = p.analytic(t + dt).unwrap();
        let bwd = p.analytic(t - dt).unwrap();
        let f = p.tape.eval(&p.analytic(t).unwrap()).unwrap();
        fwd.iter()
            .zip(&bwd)
            .zip(&f)
            .map(|((u, v), f)| ((u - v) / (2.0 * dt) - f).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rolling_stone_values() {
        let p = rolling_stone();
        assert_eq!(p.tape.n_abs(), 2);
        assert_abs_diff_eq!(p.analytic(PI / 2.0).unwrap()[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.analytic(PI + 1.0).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_eq!(p.energy(&p.x0).unwrap(), 0.5);
        assert_eq!(p.analytic(0.0).unwrap(), p.x0);
    }

    #[test]
    fn rolling_stone_solves_ode_and_is_periodic() {
        let p = rolling_stone();
        let breaks = [0.0, PI, PI + 2.0, 2.0 * PI + 2.0, 2.0 * PI + 4.0];
        for k in 0..200 {
            let t = -3.0 + 0.0731 * k as f64;
            let s = t.rem_euclid(ROLLING_STONE_PERIOD);
            if breaks.iter().any(|b| (s - b).abs() < 1e-3) {
                continue;
            }
            assert!(residual(&p, t, 1e-5) < 1e-8, "t = {t}");
            let a = p.analytic(t).unwrap();
            let b = p.analytic(t + ROLLING_STONE_PERIOD).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(p.energy(&a).unwrap(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn diode_values() {
        let p = diode_circuit();
        assert_eq!(p.tape.eval(&[0.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(p.tape.n_abs(), 1);
        let d = DiodeParams::default();
        assert_eq!(d.diode(2e-13), 1e-13);
        assert_abs_diff_eq!(d.diode(-2e-13), -2e-8, epsilon = 1e-22);
        let x = [1e-10, 3e-14, -2e-4];
        let f = p.tape.eval(&x).unwrap();
        let expect = -(x[1] - d.capacitance * (d.omega * x[0]).sin()
            + d.diode(d.capacitance * x[2]))
            / (d.inductance * d.capacitance);
        assert_abs_diff_eq!(f[2], expect, epsilon = 1e-9 * expect.abs());
        assert_eq!(p.reference, Reference::FineStep { refinement: 64 });
    }

    #[test]
    fn abslinear_values() {
        let f = AbsLinear::default();
        assert_eq!((f.a, f.b), (2.25, -1.25));
        assert_abs_diff_eq!(
            linear_branch(f.b + f.a, 1.0),
            std::f64::consts::E - 1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(linear_branch(f.b - f.a, 0.075), 0.0659640, epsilon = 2e-7);
        assert_eq!(f.upper(0.0), 0.0);
        assert_eq!(f.lower(0.0), 0.0);
        assert!(f.lower(-0.5) < 0.0 && f.upper(0.5) > 0.0);
        assert_eq!(f.rhs(-2.0), -3.5 * -2.0 + 1.0);
        assert_eq!(f.rhs(2.0), 2.0 + 1.0);
        // Both branches leave the kink with slope F(0) = 1.
        let dt = 1e-7;
        assert_abs_diff_eq!(f.upper(dt) / dt, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.lower(-dt) / -dt, 1.0, epsilon = 1e-6);
        assert!(AbsLinear::new(1.0, 1.0).is_err());
        assert!(AbsLinear::new(1.0, -1.0).is_err());
    }

    #[test]
    fn abslinear_solves_ode() {
        let p = abslinear(2.25, -1.25).unwrap();
        for k in 1..40 {
            let t = -1.0 + 0.05 * k as f64 + 0.003;
            assert!(residual(&p, t, 1e-5) < 1e-8, "t = {t}");
        }
        assert_eq!(p.x0, vec![p.analytic(-1.0).unwrap()[0]]);
    }

    #[test]
    fn builtin_lookup() {
        for name in BUILTIN_NAMES {
            assert_eq!(builtin(name).unwrap().name, name);
        }
        assert!(builtin("pendulum").is_err());
    }
}
