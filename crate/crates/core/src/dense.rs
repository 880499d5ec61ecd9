//! Piecewise quadratic continuous output over one step.
//!
//! Between consecutive breakpoints `τ_i < τ_{i+1}` of a step the interpolant is
//! `p_i(t) = a_i t² + b_i t + c_i` for local time `t ∈ [0, h (τ_{i+1} - τ_i)]`,
//! with `c_i = x̌_{→i}`, `b_i = ẋ_{→i}` and
//! `a_i = (ẋ_{→i+1} - ẋ_{→i}) / (2 h (τ_{i+1} - τ_i))`.

use crate::error::{Error, Result};
use crate::integrate::StepResult;

/// Breakpoint intervals shorter than this (in units of the step) are merged.
pub const MIN_INTERVAL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    /// Start of the piece as a fraction of the step.
    pub tau: f64,
    /// Length in time.
    pub length: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Piece {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .zip(&self.c)
            .map(|((a, b), c)| (a * t + b) * t + c)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseOutput {
    h: f64,
    pieces: Vec<Piece>,
    end: Vec<f64>,
}

/// Builds the interpolant from the breakpoint data of a step.
pub fn dense_from_step(step: &StepResult) -> Result<DenseOutput> {
    let tau = &step.kink_params;
    let k = tau.len();
    if k < 2 || step.kink_states.len() != k || step.kink_slopes.len() != k {
        return Err(Error::MissingData("breakpoint states and slopes"));
    }
    let mut kept = vec![0];
    for i in 1..k {
        let last = *kept.last().unwrap();
        if tau[i] - tau[last] >= MIN_INTERVAL {
            kept.push(i);
        } else if i == k - 1 && kept.len() > 1 {
            *kept.last_mut().unwrap() = i;
        }
    }
    if kept.len() < 2 {
        kept.push(k - 1);
    }
    let h = step.h;
    let pieces = kept
        .windows(2)
        .map(|w| {
            let (i, j) = (w[0], w[1]);
            let dtau = tau[j] - tau[i];
            let length = h * dtau;
            let a = step.kink_slopes[j]
                .iter()
                .zip(&step.kink_slopes[i])
                .map(|(u, v)| {
                    if length == 0.0 {
                        0.0
                    } else {
                        (u - v) / (2.0 * length)
                    }
                })
                .collect();
            Piece {
                tau: tau[i],
                length,
                a,
                b: step.kink_slopes[i].clone(),
                c: step.kink_states[i].clone(),
            }
        })
        .collect();
    Ok(DenseOutput {
        h,
        pieces,
        end: step.kink_states[k - 1].clone(),
    })
}

impl DenseOutput {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Breakpoint fractions, including 0 and 1.
    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.pieces.iter().map(|q| q.tau).collect();
        p.push(1.0);
        p
    }

    /// `p(t)` for `t` between 0 and `h`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let s = t / self.h;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!(
                "dense output time {t} outside [0, {}]",
                self.h
            )));
        }
        if s == 1.0 {
            let last = self.pieces.last().unwrap();
            return Ok(last.eval(last.length));
        }
        let i = self
            .pieces
            .partition_point(|p| p.tau <= s)
            .saturating_sub(1);
        let piece = &self.pieces[i];
        Ok(piece.eval(t - self.h * piece.tau))
    }

    /// State stored at the end of the step.
    pub fn end_state(&self) -> &[f64] {
        &self.end
    }
}

/// Alias of [`DenseOutput::eval`].
pub fn dense_eval(d: &DenseOutput, t: f64) -> Result<Vec<f64>> {
    d.eval(t)
}
