//! Random tapes and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use pltrap::ad::{PLModel, Tape, TapeBuilder, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeKind {
    /// add, sub, scaling by constants and abs only.
    PiecewiseLinear,
    /// No abs nodes.
    Smooth,
    Mixed,
}

fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    // Bias towards recent nodes so that the tapes get deep.
    if rng.gen_bool(0.6) {
        rng.gen_range(n.saturating_sub(4)..n)
    } else {
        rng.gen_range(0..n)
    }
}

/// Pool of recorded variables with their values at the anchor point.
struct Pool {
    vars: Vec<Var>,
    vals: Vec<f64>,
}

fn pl_op(b: &mut TapeBuilder, rng: &mut ChaCha8Rng, pool: &Pool) -> (Var, f64) {
    let (i, j) = (pick(rng, pool.vars.len()), pick(rng, pool.vars.len()));
    let (u, v) = (pool.vars[i], pool.vars[j]);
    let (x, y) = (pool.vals[i], pool.vals[j]);
    match rng.gen_range(0..6) {
        0 => (b.add(u, v), x + y),
        1 => (b.sub(u, v), x - y),
        2 => {
            let c = rng.gen_range(-1.5..1.5);
            (b.scale(u, c), c * x)
        }
        3 => (b.abs(u), x.abs()),
        4 => {
            // Kink close to the anchor.
            let k = x + rng.gen_range(-0.03..0.03);
            let c = b.constant(k);
            let d = b.sub(u, c);
            (b.abs(d), (x - k).abs())
        }
        _ => {
            if rng.gen_bool(0.5) {
                (b.max(u, v), x.max(y))
            } else {
                (b.min(u, v), x.min(y))
            }
        }
    }
}

fn smooth_op(b: &mut TapeBuilder, rng: &mut ChaCha8Rng, pool: &Pool) -> (Var, f64) {
    let (i, j) = (pick(rng, pool.vars.len()), pick(rng, pool.vars.len()));
    let (u, v) = (pool.vars[i], pool.vars[j]);
    let (x, y) = (pool.vals[i], pool.vals[j]);
    match rng.gen_range(0..7) {
        0 => (b.add(u, v), x + y),
        1 => (b.sub(u, v), x - y),
        2 => {
            let m = b.mul(u, v);
            (b.scale(m, 0.5), 0.5 * x * y)
        }
        3 => (b.sin(u), x.sin()),
        4 => (b.cos(u), x.cos()),
        5 => {
            let s = b.sin(u);
            (b.exp(s), x.sin().exp())
        }
        _ => {
            let c = rng.gen_range(-1.5..1.5);
            (b.scale(u, c), c * x)
        }
    }
}

/// A random tape with `n` inputs, `m` outputs and about `ops` operations.
/// Shifted `abs` nodes get their kinks near `anchor`.
pub fn random_tape(
    rng: &mut ChaCha8Rng,
    anchor: &[f64],
    m: usize,
    ops: usize,
    kind: TapeKind,
) -> Tape {
    let mut b = TapeBuilder::new(anchor.len());
    let mut pool = Pool {
        vars: b.inputs(),
        vals: anchor.to_vec(),
    };
    for _ in 0..ops {
        let (v, val) = match kind {
            TapeKind::PiecewiseLinear => pl_op(&mut b, rng, &pool),
            TapeKind::Smooth => smooth_op(&mut b, rng, &pool),
            TapeKind::Mixed => {
                if rng.gen_bool(0.5) {
                    pl_op(&mut b, rng, &pool)
                } else {
                    smooth_op(&mut b, rng, &pool)
                }
            }
        };
        pool.vars.push(v);
        pool.vals.push(val);
    }
    let last = pool.vars.len() - 1;
    let outputs: Vec<Var> = (0..m)
        .map(|i| pool.vars[if i == 0 { last } else { pick(rng, last + 1) }])
        .collect();
    b.finish(&outputs)
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-radius..radius)).collect()
}

/// Uniform point in the box of half width `radius` around `center`.
pub fn near(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| c + rng.gen_range(-radius..radius))
        .collect()
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Composite trapezoid rule for `∫₀¹ ◊F((1-τ) p + τ q) dτ` with `panels`
/// panels; `p` and `q` are increments from the model center. Sums are
/// compensated.
pub fn segment_quadrature(model: &PLModel, p: &[f64], q: &[f64], panels: usize) -> Vec<f64> {
    let n = p.len();
    let outs = model.tape().outputs().to_vec();
    let base = model.ref_value().to_vec();
    let m = outs.len();
    let mut dx = vec![0.0; n];
    let mut dv = Vec::new();
    let mut sum = vec![0.0; m];
    let mut comp = vec![0.0; m];
    let w = 1.0 / panels as f64;
    for k in 0..=panels {
        let tau = k as f64 * w;
        for i in 0..n {
            dx[i] = p[i] + tau * (q[i] - p[i]);
        }
        model.propagate(&dx, &mut dv);
        let c = if k == 0 || k == panels { 0.5 * w } else { w };
        for j in 0..m {
            let y = c * (base[j] + dv[outs[j]]) - comp[j];
            let t = sum[j] + y;
            comp[j] = (t - sum[j]) - y;
            sum[j] = t;
        }
    }
    sum
}

/// Composite Simpson rule on `[0, len]` for a scalar function.
pub fn simpson(f: impl Fn(f64) -> f64, len: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let w = len / panels as f64;
    let mut s = f(0.0) + f(len);
    for k in 1..panels {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * w);
    }
    s * w / 3.0
}

/// `ẋ1 = x2`, `ẋ2 = -x1`.
pub fn oscillator() -> Arc<Tape> {
    let mut b = TapeBuilder::new(2);
    let x = b.inputs();
    let y = b.neg(x[0]);
    Arc::new(b.finish(&[x[1], y]))
}

/// One degree of freedom Hamiltonian `H = p²/2 + V(q)` with
/// `V'(q) = d q + Σ c_i |q - k_i|`, so that `F = (p, -V'(q))` is piecewise
/// linear.
pub struct PlHamiltonian {
    pub stiffness: f64,
    pub kinks: Vec<(f64, f64)>,
}

impl PlHamiltonian {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let count = rng.gen_range(1..4);
        let kinks = (0..count)
            .map(|_| (rng.gen_range(-0.4..0.4), rng.gen_range(-1.0..1.0)))
            .collect();
        PlHamiltonian {
            stiffness: rng.gen_range(1.5..3.0),
            kinks,
        }
    }

    pub fn tape(&self) -> Arc<Tape> {
        let mut b = TapeBuilder::new(2);
        let x = b.inputs();
        let mut force = b.scale(x[0], self.stiffness);
        for &(c, k) in &self.kinks {
            let kc = b.constant(k);
            let d = b.sub(x[0], kc);
            let a = b.abs(d);
            let a = b.scale(a, c);
            force = b.add(force, a);
        }
        let y = b.neg(force);
        Arc::new(b.finish(&[x[1], y]))
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        let (q, p) = (x[0], x[1]);
        let mut v = 0.5 * self.stiffness * q * q;
        for &(c, k) in &self.kinks {
            // ∫₀^q |s - k| ds
            v += c * 0.5 * ((q - k) * (q - k).abs() + k * k.abs());
        }
        0.5 * p * p + v
    }
}
