//! Tangent and secant piecewise linearizations of a tape.
//!
//! Both modes store, per node, a reference value `v̊_i` and, for smooth
//! elementals, a slope `c̊_ij`. Increments are propagated by
//!
//! ```text
//! Δv_i = Δv_j ± Δv_k                      (add / sub)
//! Δv_i = v̊_j Δv_k + Δv_j v̊_k              (mul)
//! Δv_i = c̊_ij Δv_j                        (smooth unary)
//! Δv_i = |v̊_j + Δv_j| - v̊_i               (abs)
//! ```
//!
//! In tangent mode `v̊_i` are the values at the development point and `c̊_ij`
//! are derivatives. In secant mode `v̊_i = (v̌_i + v̂_i)/2` are averages of the
//! values at both anchors and `c̊_ij` are divided differences. The abs rule
//! subtracts the *stored* `v̊_i`, which in secant mode is `(|v̌_j| + |v̂_j|)/2`;
//! with that choice the model reproduces `F` exactly at both anchors.

use std::sync::Arc;

use super::tape::{Evaluation, Node, Tape};
use crate::error::{check_dim, check_finite, Error, Result};

/// Relative threshold below which a secant slope is replaced by the derivative
/// at the midpoint.
pub const SECANT_DEGENERACY: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinearizationMode {
    Tangent,
    Secant,
}

/// Signs of the switching variables, one entry per `abs` node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<i8>);

impl Signature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A piecewise linear model `◊F` of a tape.
#[derive(Clone, Debug)]
pub struct PLModel {
    mode: LinearizationMode,
    tape: Arc<Tape>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    center: Vec<f64>,
    ref_value: Vec<f64>,
    node_values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Tangent-mode model at `x̊`.
pub fn linearize_tangent(tape: &Arc<Tape>, center: &[f64]) -> Result<PLModel> {
    let eval = tape.evaluate(center)?;
    PLModel::tangent_from_evaluation(tape, center, &eval)
}

/// Secant-mode model anchored at `x̌` and `x̂`.
pub fn linearize_secant(tape: &Arc<Tape>, lo: &[f64], hi: &[f64]) -> Result<PLModel> {
    let lo_eval = tape.evaluate(lo)?;
    let hi_eval = tape.evaluate(hi)?;
    PLModel::secant_from_evaluations(tape, lo, &lo_eval.values, hi, &hi_eval.values)
}

impl PLModel {
    pub(crate) fn tangent_from_evaluation(
        tape: &Arc<Tape>,
        center: &[f64],
        eval: &Evaluation,
    ) -> Result<PLModel> {
        let values = &eval.values;
        let mut slopes = vec![0.0; values.len()];
        for (i, node) in tape.nodes().iter().enumerate() {
            if let Node::Unary(op, j) = *node {
                let c = op.derivative(values[j], values[i]);
                if !c.is_finite() {
                    return Err(Error::NotDifferentiable {
                        node: i,
                        op: op.name(),
                        value: values[j],
                    });
                }
                slopes[i] = c;
            }
        }
        Ok(PLModel {
            mode: LinearizationMode::Tangent,
            tape: Arc::clone(tape),
            lo: center.to_vec(),
            hi: center.to_vec(),
            center: center.to_vec(),
            ref_value: tape.gather_outputs(values),
            node_values: values.clone(),
            slopes,
        })
    }

    /// Secant model from intermediate values already computed at both anchors.
    pub(crate) fn secant_from_evaluations(
        tape: &Arc<Tape>,
        lo: &[f64],
        lo_values: &[f64],
        hi: &[f64],
        hi_values: &[f64],
    ) -> Result<PLModel> {
        check_dim(tape.n_inputs(), lo.len())?;
        check_dim(tape.n_inputs(), hi.len())?;
        let n_nodes = tape.nodes().len();
        let mut node_values = Vec::with_capacity(n_nodes);
        let mut slopes = vec![0.0; n_nodes];
        for (i, node) in tape.nodes().iter().enumerate() {
            let mid = 0.5 * (lo_values[i] + hi_values[i]);
            node_values.push(mid);
            if let Node::Unary(op, j) = *node {
                let (vl, vh) = (lo_values[j], hi_values[j]);
                let diff = vh - vl;
                let c = if let super::tape::UnaryOp::Neg = op {
                    -1.0
                } else if diff.abs() > SECANT_DEGENERACY * vl.abs().max(vh.abs()).max(1.0) {
                    (hi_values[i] - lo_values[i]) / diff
                } else {
                    let arg = 0.5 * (vl + vh);
                    let val = op.apply(arg).ok_or(Error::Domain {
                        node: i,
                        op: op.name(),
                        value: arg,
                    })?;
                    op.derivative(arg, val)
                };
                if !c.is_finite() {
                    return Err(Error::NotDifferentiable {
                        node: i,
                        op: op.name(),
                        value: vl,
                    });
                }
                slopes[i] = c;
            }
        }
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        Ok(PLModel {
            mode: LinearizationMode::Secant,
            tape: Arc::clone(tape),
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            center,
            ref_value: tape.gather_outputs(&node_values),
            node_values,
            slopes,
        })
    }

    pub fn mode(&self) -> LinearizationMode {
        self.mode
    }

    pub fn tape(&self) -> &Arc<Tape> {
        &self.tape
    }

    /// `x̌` (equal to the center in tangent mode).
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    /// `x̂` (equal to the center in tangent mode).
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Development point `x̊`.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Reference value `F̊`.
    pub fn ref_value(&self) -> &[f64] {
        &self.ref_value
    }

    /// Stored reference values `v̊_i`, one per node.
    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    /// Slopes `c̊_ij` of the smooth unary nodes (zero elsewhere).
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Propagates an input increment through the tape, filling `dv` with one
    /// increment per node.
    pub fn propagate(&self, dx: &[f64], dv: &mut Vec<f64>) {
        let c = &self.node_values;
        dv.clear();
        for (i, node) in self.tape.nodes().iter().enumerate() {
            let d = match *node {
                Node::Input(k) => dx[k],
                Node::Const(_) => 0.0,
                Node::Add(j, k) => dv[j] + dv[k],
                Node::Sub(j, k) => dv[j] - dv[k],
                Node::Mul(j, k) => c[j] * dv[k] + dv[j] * c[k],
                Node::Unary(_, j) => self.slopes[i] * dv[j],
                Node::Abs(j) => (c[j] + dv[j]).abs() - c[i],
            };
            dv.push(d);
        }
    }

    /// `ΔF(Δx)`.
    pub fn increment(&self, dx: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.tape.n_inputs(), dx.len())?;
        check_finite(dx, "model increment")?;
        let mut dv = Vec::with_capacity(self.node_values.len());
        self.propagate(dx, &mut dv);
        Ok(self.tape.gather_outputs(&dv))
    }

    /// Nonincremental form `◊F(x) = F̊ + ΔF(x - x̊)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.tape.n_inputs(), x.len())?;
        let dx: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let dy = self.increment(&dx)?;
        Ok(self.ref_value.iter().zip(dy).map(|(f, d)| f + d).collect())
    }

    /// `◊F` at `x̊ + dx`, reusing a scratch buffer.
    pub(crate) fn value_at_increment(&self, dx: &[f64], dv: &mut Vec<f64>) -> Vec<f64> {
        self.propagate(dx, dv);
        self.tape
            .outputs()
            .iter()
            .zip(&self.ref_value)
            .map(|(&o, f)| f + dv[o])
            .collect()
    }

    /// Signs of the switching values `v̊_j + Δv_j` at the increment `dx`.
    pub fn signature_at(&self, dx: &[f64]) -> Result<Signature> {
        check_dim(self.tape.n_inputs(), dx.len())?;
        let mut dv = Vec::with_capacity(self.node_values.len());
        self.propagate(dx, &mut dv);
        Ok(self.signature_from_increments(&dv))
    }

    pub(crate) fn switching_value(&self, abs_node: usize, dv: &[f64]) -> f64 {
        match self.tape.nodes()[abs_node] {
            Node::Abs(j) => self.node_values[j] + dv[j],
            _ => unreachable!("switch index refers to a non-abs node"),
        }
    }

    pub(crate) fn signature_from_increments(&self, dv: &[f64]) -> Signature {
        Signature(
            self.tape
                .abs_nodes()
                .iter()
                .map(|&i| sign(self.switching_value(i, dv)))
                .collect(),
        )
    }
}

pub(crate) fn sign(z: f64) -> i8 {
    if z > 0.0 {
        1
    } else if z < 0.0 {
        -1
    } else {
        0
    }
}
