//! Exact integration of a piecewise linear model along a line segment.
//!
//! Along `Δx(τ) = (1-τ) p + τ q` every intermediate increment is affine in `τ`
//! as long as the signature does not change. The decomposition marches from
//! `τ = 0`: in the current region it computes each switching value
//! `z_s(τ) = v̊_j + Δv_j(τ)` and its slope (one tangent sweep with the `abs`
//! nodes frozen to the region's signs), jumps to the nearest root ahead, and
//! repeats. Since the model output is affine on every region, the trapezoid
//! rule per region integrates it without error.

use crate::ad::{sign, Node, PLModel, Signature};
use crate::error::{check_dim, check_finite, Error, Result};

/// Minimum advance between breakpoints. Roots closer than this to the current
/// position are treated as already crossed.
pub const ADVANCE_GUARD: f64 = 1e-14;

/// Breakpoints of a segment where the model's signature changes.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentDecomposition {
    /// `0 = τ_0 < τ_1 < ... < τ_{k+1} = 1`.
    pub params: Vec<f64>,
    /// Signature on each open subinterval `(τ_i, τ_{i+1})`.
    pub signatures: Vec<Signature>,
    /// Model output `◊F` at each `τ_i`.
    pub values: Vec<Vec<f64>>,
    /// Input-space point `x̊ + Δx(τ_i)` at each `τ_i`.
    pub kink_points: Vec<Vec<f64>>,
}

impl SegmentDecomposition {
    /// Number of interior breakpoints `k`.
    pub fn n_kinks(&self) -> usize {
        self.params.len().saturating_sub(2)
    }

    /// `∫₀^{τ_i} ◊F dτ` for every `i`; the last entry is the full integral.
    pub fn partial_integrals(&self) -> Vec<Vec<f64>> {
        let m = self.values.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; m];
        let mut out = Vec::with_capacity(self.params.len());
        out.push(acc.clone());
        for i in 0..self.params.len() - 1 {
            let w = 0.5 * (self.params[i + 1] - self.params[i]);
            for (a, (u, v)) in acc
                .iter_mut()
                .zip(self.values[i].iter().zip(&self.values[i + 1]))
            {
                *a += w * (u + v);
            }
            out.push(acc.clone());
        }
        out
    }

    /// `∫₀¹ ◊F dτ`.
    pub fn integral(&self) -> Vec<f64> {
        let m = self.values.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; m];
        for i in 0..self.params.len() - 1 {
            let w = 0.5 * (self.params[i + 1] - self.params[i]);
            for (a, (u, v)) in acc
                .iter_mut()
                .zip(self.values[i].iter().zip(&self.values[i + 1]))
            {
                *a += w * (u + v);
            }
        }
        acc
    }
}

/// Default breakpoint budget for a model with `n_abs` switches.
pub fn default_max_kinks(n_abs: usize) -> usize {
    10 * n_abs + 64
}

/// Splits the segment from increment `p` to increment `q` (both relative to
/// the model's center) into regions of constant signature.
pub fn decompose_segment(model: &PLModel, p: &[f64], q: &[f64]) -> Result<SegmentDecomposition> {
    decompose_segment_with_limit(model, p, q, default_max_kinks(model.tape().n_abs()))
}

pub fn decompose_segment_with_limit(
    model: &PLModel,
    p: &[f64],
    q: &[f64],
    max_kinks: usize,
) -> Result<SegmentDecomposition> {
    let tape = model.tape();
    let n = tape.n_inputs();
    check_dim(n, p.len())?;
    check_dim(n, q.len())?;
    check_finite(p, "segment start")?;
    check_finite(q, "segment end")?;

    let dir: Vec<f64> = q.iter().zip(p).map(|(b, a)| b - a).collect();
    let point = |tau: f64| -> Vec<f64> {
        if tau >= 1.0 {
            q.to_vec()
        } else {
            p.iter()
                .zip(q)
                .map(|(a, b)| (1.0 - tau) * a + tau * b)
                .collect()
        }
    };
    let to_input =
        |dx: &[f64]| -> Vec<f64> { dx.iter().zip(model.center()).map(|(d, c)| d + c).collect() };

    let mut dv = Vec::with_capacity(tape.nodes().len());
    let mut ddv = Vec::with_capacity(tape.nodes().len());
    let mut region = Vec::with_capacity(tape.n_abs());

    let mut tau = 0.0;
    let dx0 = point(0.0);
    let v0 = model.value_at_increment(&dx0, &mut dv);
    let mut out = SegmentDecomposition {
        params: vec![0.0],
        signatures: Vec::new(),
        values: vec![v0],
        kink_points: vec![to_input(&dx0)],
    };

    loop {
        let next = region_slopes(model, &dir, &dv, &mut ddv, &mut region, tau);
        let dx = point(next);
        let value = model.value_at_increment(&dx, &mut dv);
        let sig = Signature(region.clone());

        if out.signatures.last() == Some(&sig) {
            // Grazing breakpoint: the region continues.
            out.params.pop();
            out.values.pop();
            out.kink_points.pop();
        } else {
            out.signatures.push(sig);
        }
        out.params.push(next);
        out.values.push(value);
        out.kink_points.push(to_input(&dx));
        check_finite(out.values.last().unwrap(), "segment model value")?;

        if next >= 1.0 {
            break;
        }
        if out.params.len() - 1 > max_kinks {
            return Err(Error::TooManyKinks { limit: max_kinks });
        }
        tau = next;
    }
    Ok(out)
}

/// Determines the signs of the region entered at `tau` and returns the
/// parameter of the nearest breakpoint ahead (or 1).
///
/// `dv` holds the increments at `tau`. On return `ddv` holds the
/// τ-derivatives of all increments inside the region and `region` its signs.
fn region_slopes(
    model: &PLModel,
    dir: &[f64],
    dv: &[f64],
    ddv: &mut Vec<f64>,
    region: &mut Vec<i8>,
    tau: f64,
) -> f64 {
    let c = model.node_values();
    let slopes = model.slopes();
    ddv.clear();
    region.clear();
    let mut next = 1.0f64;
    for (i, node) in model.tape().nodes().iter().enumerate() {
        let d = match *node {
            Node::Input(k) => dir[k],
            Node::Const(_) => 0.0,
            Node::Add(j, k) => ddv[j] + ddv[k],
            Node::Sub(j, k) => ddv[j] - ddv[k],
            Node::Mul(j, k) => c[j] * ddv[k] + ddv[j] * c[k],
            Node::Unary(_, j) => slopes[i] * ddv[j],
            Node::Abs(j) => {
                let z = c[j] + dv[j];
                let zdot = ddv[j];
                let crossing = z * zdot < 0.0;
                let sigma = if z == 0.0 || (crossing && -z / zdot <= ADVANCE_GUARD) {
                    sign(zdot)
                } else {
                    if crossing {
                        next = next.min(tau - z / zdot);
                    }
                    sign(z)
                };
                region.push(sigma);
                f64::from(sigma) * zdot
            }
        };
        ddv.push(d);
    }
    next.min(1.0)
}

/// `∫₀¹ ◊F((1-τ) p + τ q) dτ`, exact for the piecewise linear model.
pub fn integrate_segment(model: &PLModel, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    Ok(decompose_segment(model, p, q)?.integral())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{linearize_secant, linearize_tangent, Tape, TapeBuilder};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn abs_tape() -> Arc<Tape> {
        let mut b = TapeBuilder::new(1);
        let x = b.input(0);
        let y = b.abs(x);
        Arc::new(b.finish(&[y]))
    }

    fn rolling_stone() -> Arc<Tape> {
        let mut b = TapeBuilder::new(2);
        let [x1, x2] = [b.input(0), b.input(1)];
        let one = b.constant(1.0);
        let l = b.sub(x1, one);
        let r = b.add(x1, one);
        let al = b.abs(l);
        let ar = b.abs(r);
        let nx = b.neg(x1);
        let hl = b.scale(al, 0.5);
        let hr = b.scale(ar, 0.5);
        let t = b.sub(nx, hl);
        let f2 = b.add(t, hr);
        Arc::new(b.finish(&[x2, f2]))
    }

    #[test]
    fn abs_segment_has_midpoint_kink() {
        let m = linearize_secant(&abs_tape(), &[-1.0], &[1.0]).unwrap();
        let d = decompose_segment(&m, &[-1.0], &[1.0]).unwrap();
        assert_eq!(d.params, vec![0.0, 0.5, 1.0]);
        assert_eq!(d.signatures, vec![Signature(vec![-1]), Signature(vec![1])]);
        assert_abs_diff_eq!(d.integral()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn smooth_tape_has_no_breakpoints() {
        let mut b = TapeBuilder::new(1);
        let x = b.input(0);
        let y = b.sin(x);
        let tape = Arc::new(b.finish(&[y]));
        let m = linearize_tangent(&tape, &[0.2]).unwrap();
        let d = decompose_segment(&m, &[-1.0], &[2.0]).unwrap();
        assert_eq!(d.params, vec![0.0, 1.0]);
        assert_eq!(d.n_kinks(), 0);
    }

    #[test]
    fn constant_model_integrates_to_constant() {
        let b = TapeBuilder::new(1);
        let mut b = b;
        let c = b.constant(3.5);
        let tape = Arc::new(b.finish(&[c]));
        let m = linearize_tangent(&tape, &[0.0]).unwrap();
        assert_eq!(integrate_segment(&m, &[-1.0], &[4.0]).unwrap(), vec![3.5]);
    }

    #[test]
    fn rolling_stone_kink_at_x1_equal_one() {
        let tape = rolling_stone();
        let (lo, hi) = ([0.5, 0.3], [1.5, 0.3]);
        let m = linearize_secant(&tape, &lo, &hi).unwrap();
        let p = [-0.5, 0.0];
        let q = [0.5, 0.0];
        let d = decompose_segment(&m, &p, &q).unwrap();
        assert_eq!(d.n_kinks(), 1);
        assert_abs_diff_eq!(d.params[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.kink_points[1][0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_segment() {
        let m = linearize_secant(&abs_tape(), &[-1.0], &[1.0]).unwrap();
        let d = decompose_segment(&m, &[0.0], &[0.0]).unwrap();
        assert_eq!(d.params, vec![0.0, 1.0]);
        assert_eq!(d.integral(), vec![0.0]);
    }

    #[test]
    fn segment_starting_on_kink() {
        let m = linearize_tangent(&abs_tape(), &[0.0]).unwrap();
        let d = decompose_segment(&m, &[0.0], &[2.0]).unwrap();
        assert_eq!(d.params, vec![0.0, 1.0]);
        assert_eq!(d.signatures, vec![Signature(vec![1])]);
        assert_abs_diff_eq!(d.integral()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn simultaneous_crossings_merge() {
        // |x| + |x| crosses twice at the same point; also |y - x| with y == x along the segment.
        let mut b = TapeBuilder::new(2);
        let [x, y] = [b.input(0), b.input(1)];
        let a1 = b.abs(x);
        let a2 = b.abs(y);
        let s = b.add(a1, a2);
        let tape = Arc::new(b.finish(&[s]));
        let m = linearize_tangent(&tape, &[0.0, 0.0]).unwrap();
        let d = decompose_segment(&m, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(d.params, vec![0.0, 0.5, 1.0]);
        assert_abs_diff_eq!(d.integral()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nested_abs_kinks() {
        // f(x) = ||x| - 1| has kinks at -1, 0, 1.
        let mut b = TapeBuilder::new(1);
        let x = b.input(0);
        let a = b.abs(x);
        let one = b.constant(1.0);
        let d = b.sub(a, one);
        let f = b.abs(d);
        let tape = Arc::new(b.finish(&[f]));
        let m = linearize_tangent(&tape, &[0.0]).unwrap();
        let d = decompose_segment(&m, &[-2.0], &[2.0]).unwrap();
        assert_eq!(d.params.len(), 5);
        for (t, e) in d.params.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert_abs_diff_eq!(*t, e, epsilon = 1e-15);
        }
        // ∫_{-2}^{2} ||x|-1| dx / 4 = 2 / 4
        assert_abs_diff_eq!(d.integral()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kink_budget_is_enforced() {
        let mut b = TapeBuilder::new(1);
        let x = b.input(0);
        let a = b.abs(x);
        let one = b.constant(1.0);
        let d = b.sub(a, one);
        let f = b.abs(d);
        let tape = Arc::new(b.finish(&[f]));
        let m = linearize_tangent(&tape, &[0.0]).unwrap();
        assert_eq!(
            decompose_segment_with_limit(&m, &[-2.0], &[2.0], 1),
            Err(Error::TooManyKinks { limit: 1 })
        );
    }
}
