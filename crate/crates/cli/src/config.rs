//! Command-line arguments and their validation into a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pltrap::integrate::Method;
use pltrap::problems::{self, AbsLinear, Problem};
use thiserror::Error;

use crate::expr::{self, ParseError};
use crate::output::Format;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),

    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("in `{path}`: {source}")]
    Expression { path: PathBuf, source: ParseError },

    #[error(transparent)]
    Problem(#[from] pltrap::Error),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "pltrap",
    version,
    about = "Generalized trapezoidal integration of piecewise smooth ODEs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one problem and write the trajectory.
    Integrate(IntegrateArgs),
    /// Global error and observed order over a sequence of halved steps.
    Converge(ConvergeArgs),
    /// Local error of single steps across the kink of a|x| + bx + 1.
    Kinkstep(KinkstepArgs),
    /// Energy along a fixed-step run.
    Energy(EnergyArgs),
    /// Per-step error estimator terms.
    Estimate(EstimateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ProblemArgs {
    /// Built-in problem: rolling_stone, diode or abslinear.
    #[arg(long, conflicts_with = "expr")]
    pub problem: Option<String>,
    /// Expression file with the right-hand side.
    #[arg(long, value_name = "FILE")]
    pub expr: Option<PathBuf>,
    /// End time (defaults to the problem's).
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// abslinear coefficient of |x|.
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    /// abslinear coefficient of x.
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct FpArgs {
    /// Absolute tolerance of the implicit solve.
    #[arg(long = "fp-atol")]
    pub fp_atol: Option<f64>,
    /// Relative tolerance of the implicit solve.
    #[arg(long = "fp-rtol")]
    pub fp_rtol: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct OutputArgs {
    /// Output file (standard output if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args, Clone)]
pub struct IntegrateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value = "generalized")]
    pub method: String,
    /// Fixed step size.
    #[arg(long)]
    pub h: Option<f64>,
    /// Error tolerance of the adaptive controller.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub adaptive: bool,
    /// Romberg extrapolation of every fixed step.
    #[arg(long)]
    pub extrapolate: bool,
    /// Seed for sampling the error estimator constants.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fp: FpArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Clone)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value = "generalized")]
    pub method: String,
    #[arg(long)]
    pub extrapolate: bool,
    /// Coarsest step size.
    #[arg(long)]
    pub h0: f64,
    /// Number of halvings, including `h0`.
    #[arg(long, default_value_t = 6)]
    pub levels: usize,
    #[command(flatten)]
    pub fp: FpArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Clone)]
pub struct KinkstepArgs {
    #[arg(long, default_value_t = 2.25, allow_negative_numbers = true)]
    pub a: f64,
    #[arg(long, default_value_t = -1.25, allow_negative_numbers = true)]
    pub b: f64,
    /// Fraction of the step before the kink.
    #[arg(long, default_value_t = 0.25)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.25)]
    pub h0: f64,
    #[arg(long, default_value_t = 8)]
    pub levels: usize,
    #[command(flatten)]
    pub fp: FpArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Clone)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value = "generalized")]
    pub method: String,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value_t = 10.0)]
    pub periods: f64,
    #[command(flatten)]
    pub fp: FpArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Clone)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value = "generalized")]
    pub method: String,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fp: FpArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Fixed steps or accept/reject control; never both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepControl {
    Fixed { h: f64 },
    Adaptive { tol: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    Builtin(String),
    Expression(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    Integrate {
        control: StepControl,
        extrapolate: bool,
    },
    Converge {
        extrapolate: bool,
        h0: f64,
        levels: usize,
    },
    Kinkstep {
        a: f64,
        b: f64,
        theta: f64,
        h0: f64,
        levels: usize,
    },
    Energy {
        h: f64,
        periods: f64,
    },
    Estimate {
        control: StepControl,
    },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Integrate { .. } => "integrate",
            Task::Converge { .. } => "converge",
            Task::Kinkstep { .. } => "kinkstep",
            Task::Energy { .. } => "energy",
            Task::Estimate { .. } => "estimate",
        }
    }
}

/// Everything a run needs, validated.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    /// Absent only for `kinkstep`.
    pub problem: Option<ProblemSource>,
    pub t_end: Option<f64>,
    pub abslinear: Option<(f64, f64)>,
    pub method: Method,
    pub fp_atol: Option<f64>,
    pub fp_rtol: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

fn positive(name: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(format!(
            "--{name} must be positive and finite, got {v}"
        )))
    }
}

fn method(s: &str) -> Result<Method, ConfigError> {
    s.parse().map_err(|_| {
        invalid(format!(
            "unknown method `{s}` (expected classical, generalized or midpoint)"
        ))
    })
}

fn control(h: Option<f64>, tol: Option<f64>, adaptive: bool) -> Result<StepControl, ConfigError> {
    match (h, tol) {
        (Some(_), Some(_)) => Err(invalid("give either --h or --tol, not both")),
        (Some(_), None) if adaptive => Err(invalid("--adaptive needs --tol instead of --h")),
        (Some(h), None) => Ok(StepControl::Fixed {
            h: positive("h", h)?,
        }),
        (None, Some(tol)) => Ok(StepControl::Adaptive {
            tol: positive("tol", tol)?,
        }),
        (None, None) => Err(invalid("one of --h or --tol is required")),
    }
}

fn format_for(output: &OutputArgs) -> Format {
    output.format.unwrap_or_else(|| match &output.out {
        Some(p) if p.extension().is_some_and(|e| e == "json") => Format::Json,
        _ => Format::Csv,
    })
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<RunConfig, ConfigError> {
        let base =
            |problem: Option<&ProblemArgs>, method_name: &str, fp: &FpArgs, output: &OutputArgs| {
                let source = match problem {
                    None => None,
                    Some(p) => Some(match (&p.problem, &p.expr) {
                        (Some(name), None) => ProblemSource::Builtin(name.clone()),
                        (None, Some(path)) => ProblemSource::Expression(path.clone()),
                        _ => return Err(invalid("exactly one of --problem or --expr is required")),
                    }),
                };
                let abslinear = match problem {
                    Some(p) if p.a.is_some() || p.b.is_some() => {
                        if p.problem.as_deref() != Some("abslinear") {
                            return Err(invalid("--a and --b apply to the abslinear problem only"));
                        }
                        let d = AbsLinear::default();
                        Some((p.a.unwrap_or(d.a), p.b.unwrap_or(d.b)))
                    }
                    _ => None,
                };
                let t_end = problem.and_then(|p| p.t_end);
                for (name, v) in [("fp-atol", fp.fp_atol), ("fp-rtol", fp.fp_rtol)] {
                    if let Some(v) = v {
                        if !(v.is_finite() && v >= 0.0) {
                            return Err(invalid(format!("--{name} must be nonnegative, got {v}")));
                        }
                    }
                }
                Ok(RunConfig {
                    task: Task::Energy {
                        h: 0.0,
                        periods: 0.0,
                    },
                    problem: source,
                    t_end,
                    abslinear,
                    method: method(method_name)?,
                    fp_atol: fp.fp_atol,
                    fp_rtol: fp.fp_rtol,
                    seed: 0,
                    out: output.out.clone(),
                    format: format_for(output),
                })
            };
        let levels = |n: usize| {
            if (1..=30).contains(&n) {
                Ok(n)
            } else {
                Err(invalid(format!("--levels must be in 1..=30, got {n}")))
            }
        };

        match &cli.command {
            Command::Integrate(a) => {
                let mut c = base(Some(&a.problem), &a.method, &a.fp, &a.output)?;
                let control = control(a.h, a.tol, a.adaptive)?;
                if a.extrapolate && matches!(control, StepControl::Adaptive { .. }) {
                    return Err(invalid("--extrapolate applies to fixed steps only"));
                }
                if matches!(control, StepControl::Adaptive { .. })
                    && c.method != Method::Generalized
                {
                    return Err(invalid("adaptive integration uses the generalized method"));
                }
                c.task = Task::Integrate {
                    control,
                    extrapolate: a.extrapolate,
                };
                c.seed = a.seed;
                Ok(c)
            }
            Command::Converge(a) => {
                let mut c = base(Some(&a.problem), &a.method, &a.fp, &a.output)?;
                c.task = Task::Converge {
                    extrapolate: a.extrapolate,
                    h0: positive("h0", a.h0)?,
                    levels: levels(a.levels)?,
                };
                Ok(c)
            }
            Command::Kinkstep(a) => {
                let mut c = base(None, "generalized", &a.fp, &a.output)?;
                AbsLinear::new(a.a, a.b)?;
                if !(a.theta > 0.0 && a.theta < 1.0) {
                    return Err(invalid(format!(
                        "--theta must be in (0, 1), got {}",
                        a.theta
                    )));
                }
                c.task = Task::Kinkstep {
                    a: a.a,
                    b: a.b,
                    theta: a.theta,
                    h0: positive("h0", a.h0)?,
                    levels: levels(a.levels)?,
                };
                Ok(c)
            }
            Command::Energy(a) => {
                let mut c = base(Some(&a.problem), &a.method, &a.fp, &a.output)?;
                if c.t_end.is_some() {
                    return Err(invalid(
                        "energy runs over --periods; --t-end does not apply",
                    ));
                }
                c.task = Task::Energy {
                    h: positive("h", a.h)?,
                    periods: positive("periods", a.periods)?,
                };
                Ok(c)
            }
            Command::Estimate(a) => {
                let mut c = base(Some(&a.problem), &a.method, &a.fp, &a.output)?;
                if c.method == Method::Classical {
                    return Err(invalid(
                        "the estimator needs the generalized or midpoint method",
                    ));
                }
                let control = control(a.h, a.tol, a.adaptive)?;
                if matches!(control, StepControl::Adaptive { .. })
                    && c.method != Method::Generalized
                {
                    return Err(invalid("adaptive integration uses the generalized method"));
                }
                c.task = Task::Estimate { control };
                c.seed = a.seed;
                Ok(c)
            }
        }
    }

    /// Loads the problem and applies `--t-end`, `--a`, `--b` and the
    /// fixed-point tolerances. Also returns the state variable names.
    pub fn load_problem(&self) -> Result<(Problem, Vec<String>), ConfigError> {
        let mut names = None;
        let mut p = match &self.problem {
            None => return Err(invalid("no problem selected")),
            Some(ProblemSource::Builtin(name)) => match (name.as_str(), self.abslinear) {
                ("abslinear", Some((a, b))) => problems::abslinear(a, b)?,
                _ => problems::builtin(name).map_err(|e| invalid(e.to_string()))?,
            },
            Some(ProblemSource::Expression(path)) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                let wrap = |source| ConfigError::Expression {
                    path: path.clone(),
                    source,
                };
                let prog = expr::parse_program(&text).map_err(wrap)?;
                let tape = prog.to_tape().map_err(wrap)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "expression".into());
                let t_end = self
                    .t_end
                    .ok_or_else(|| invalid("--t-end is required with --expr"))?;
                names = Some(prog.names);
                Problem::new(stem, std::sync::Arc::new(tape), prog.x0, t_end)?
            }
        };
        if let Some(t_end) = self.t_end {
            if !(t_end.is_finite() && t_end > p.t0) {
                return Err(invalid(format!(
                    "--t-end {t_end} must exceed the start time {}",
                    p.t0
                )));
            }
            p.t_end = t_end;
        }
        if let Some(atol) = self.fp_atol {
            p.fp.atol = atol;
        }
        if let Some(rtol) = self.fp_rtol {
            p.fp.rtol = rtol;
        }
        let names = names.unwrap_or_else(|| (1..=p.x0.len()).map(|i| format!("x{i}")).collect());
        Ok((p, names))
    }
}
