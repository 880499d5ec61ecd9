mod common;

use common::*;
use pltrap::control::{estimate_constants, integrate_adaptive, AdaptiveOptions};
use pltrap::dense::dense_from_step;
use pltrap::integrate::{
    generalized_midpoint_step, generalized_trap_step, integrate_fixed, FixedPointOptions,
    FixedStepConfig, Method,
};
use pltrap::problems::{abslinear, fitted_order, rolling_stone, AbsLinear};

/// Root of a monotone scalar function on `[lo, hi]` by bisection.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    assert!(f_lo * f(hi) <= 0.0, "no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Rolling-stone force `-x - |x-1|/2 + |x+1|/2`.
fn stone_force(x: f64) -> f64 {
    -x - 0.5 * (x - 1.0).abs() + 0.5 * (x + 1.0).abs()
}

/// Mean of the rolling-stone force along `x1` from `a` to `b`, exact: the
/// interval is cut at ±1 and Simpson's rule is exact on each linear piece.
fn mean_force(a: f64, b: f64) -> f64 {
    if a == b {
        return stone_force(a);
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut cuts = vec![lo];
    cuts.extend([-1.0, 1.0].into_iter().filter(|&k| k > lo && k < hi));
    cuts.push(hi);
    let total: f64 = cuts
        .windows(2)
        .map(|w| {
            (w[1] - w[0]) / 6.0
                * (stone_force(w[0]) + 4.0 * stone_force(0.5 * (w[0] + w[1])) + stone_force(w[1]))
        })
        .sum();
    total / (hi - lo)
}

/// `x̂ = x̌ + h ∫₀¹ F(x̌ + s(x̂ - x̌)) ds` for the rolling stone, by bisection
/// on `x̂2` after eliminating `x̂1 = x̌1 + h (x̌2 + x̂2)/2`.
fn stone_avf_step(x: [f64; 2], h: f64) -> [f64; 2] {
    let first = |p: f64| x[0] + 0.5 * h * (x[1] + p);
    let g = |p: f64| p - x[1] - h * mean_force(x[0], first(p));
    let p = bisect(g, x[1] - 10.0, x[1] + 10.0);
    [first(p), p]
}

#[test]
fn midpoint_step_matches_bisection_oracle() {
    let p = rolling_stone();
    let fp = FixedPointOptions::with_tol(1e-14, 1e-14);
    let s = generalized_midpoint_step(&p.tape, &[1.0, 1.0], 0.1, &fp).unwrap();
    let oracle = stone_avf_step([1.0, 1.0], 0.1);
    assert!(
        max_diff(&s.x_hat, &oracle) < 1e-8,
        "{:?} vs {:?}",
        s.x_hat,
        oracle
    );
}

#[test]
fn steps_satisfy_the_avf_equation_on_the_rolling_stone() {
    let p = rolling_stone();
    let fp = FixedPointOptions::with_tol(1e-14, 1e-14);
    let mut r = rng(5);
    for _ in 0..200 {
        let t = rand::Rng::gen_range(&mut r, 0.0..p.period.unwrap());
        let h = rand::Rng::gen_range(&mut r, 0.01..0.3);
        let x = p.analytic(t).unwrap();
        let oracle = stone_avf_step([x[0], x[1]], h);
        for method in [Method::Generalized, Method::Midpoint] {
            let s = pltrap::integrate::step(method, &p.tape, &x, h, &fp).unwrap();
            assert!(
                max_diff(&s.x_hat, &oracle) <= 1e-12,
                "{method} at t={t}, h={h}"
            );
        }
    }
}

#[test]
fn abslinear_kink_step_matches_avf_oracle() {
    let f = AbsLinear::default();
    let tape = std::sync::Arc::new(f.tape());
    let (h, theta) = (0.1, 0.25);
    let x0 = f.lower(-theta * h);
    // ∫ F dx in closed form on each side of 0.
    let prim = |x: f64| {
        let m = if x < 0.0 {
            f.slope_neg()
        } else {
            f.slope_pos()
        };
        0.5 * m * x * x + x
    };
    let g = |y: f64| y - x0 - h * (prim(y) - prim(x0)) / (y - x0);
    let oracle = bisect(g, x0 + 1e-9, 1.0);
    let s =
        generalized_trap_step(&tape, &[x0], h, &FixedPointOptions::with_tol(1e-15, 1e-15)).unwrap();
    assert!((s.x_hat[0] - oracle).abs() < 1e-14);
    let exact = f.upper((1.0 - theta) * h);
    // Local error is third order with a coefficient close to 637/12288.
    let c = (s.x_hat[0] - exact).abs() / h.powi(3);
    assert!(
        (c - 637.0 / 12288.0).abs() < 0.1 * 637.0 / 12288.0,
        "coefficient {c}"
    );
}

#[test]
fn classical_abslinear_coefficient_from_closed_form() {
    let f = AbsLinear::default();
    let tape = std::sync::Arc::new(f.tape());
    let mut errs = Vec::new();
    let hs: Vec<f64> = (6..=10).map(|k| 2f64.powi(-k)).collect();
    for &h in &hs {
        let x0 = f.lower(-0.25 * h);
        let s = pltrap::integrate::classical_trap_step(
            &tape,
            &[x0],
            h,
            &FixedPointOptions::with_tol(1e-15, 1e-15),
        )
        .unwrap();
        errs.push((s.x_hat[0] - f.upper(0.75 * h)).abs() / (h * h));
    }
    let c = *errs.last().unwrap();
    assert!((c - 27.0 / 64.0).abs() < 0.02 * 27.0 / 64.0, "{errs:?}");
}

#[test]
fn fixed_step_rolling_stone_is_second_order() {
    let p = rolling_stone();
    let per = p.period.unwrap();
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for k in 5..=8 {
        let h = per / 2f64.powi(k);
        let traj =
            integrate_fixed(&p.ivp(), h, &FixedStepConfig::new(Method::Generalized)).unwrap();
        let e = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| max_diff(x, &p.analytic(*t).unwrap()))
            .fold(0.0, f64::max);
        hs.push(h);
        errs.push(e);
    }
    let order = fitted_order(&hs, &errs);
    assert!((1.8..=2.2).contains(&order), "order {order}");
}

#[test]
fn dense_output_is_third_order_on_single_steps() {
    let p = rolling_stone();
    let per = p.period.unwrap();
    let fp = FixedPointOptions::with_tol(1e-14, 1e-14);
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for k in 3..=7 {
        let h = 2f64.powi(-k);
        let mut err: f64 = 0.0;
        for i in 0..40 {
            let t0 = per * (i as f64 + 0.37) / 40.0;
            let s = generalized_trap_step(&p.tape, &p.analytic(t0).unwrap(), h, &fp).unwrap();
            let d = dense_from_step(&s).unwrap();
            for j in 0..=32 {
                let t = h * j as f64 / 32.0;
                err = err.max(max_diff(&d.eval(t).unwrap(), &p.analytic(t0 + t).unwrap()));
            }
        }
        hs.push(h);
        errs.push(err);
    }
    assert!(fitted_order(&hs, &errs) >= 2.7);
}

#[test]
fn adaptive_rolling_stone_one_period() {
    let p = rolling_stone();
    let per = p.period.unwrap();
    let consts = estimate_constants(&p.tape, &[0.0, 0.0], 2.5, 1000, 1).unwrap();
    let stops: Vec<f64> = (1..32).map(|i| i as f64 * per / 32.0).collect();
    let mut last = f64::INFINITY;
    for tol in [1e-5, 1e-6, 1e-7] {
        let opts = AdaptiveOptions {
            stop_times: stops.clone(),
            record_steps: true,
            ..Default::default()
        };
        let traj = integrate_adaptive(&p.ivp(), tol, &consts, &opts).unwrap();
        assert_eq!(*traj.times.last().unwrap(), per);
        for s in &stops {
            assert!(traj.times.contains(s), "stop time {s} missed");
        }
        let err = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| max_diff(x, &p.analytic(*t).unwrap()))
            .fold(0.0, f64::max);
        // The flow does not expand errors, so the accumulated local estimates
        // bound the global error.
        let accumulated: f64 = traj
            .steps
            .iter()
            .map(|s| pltrap::control::estimate_error(s, &consts).unwrap().total)
            .sum();
        assert!(
            err <= accumulated,
            "tol {tol}: error {err} above {accumulated}"
        );
        assert!(err < last);
        last = err;
    }
}

#[test]
fn abslinear_problem_is_second_order_through_the_kink() {
    let p = abslinear(2.25, -1.25).unwrap();
    let errors: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&h| {
            let traj =
                integrate_fixed(&p.ivp(), h, &FixedStepConfig::new(Method::Generalized)).unwrap();
            assert!(traj.last_state()[0] > 0.0);
            traj.times
                .iter()
                .zip(&traj.states)
                .map(|(t, x)| (x[0] - p.analytic(*t).unwrap()[0]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..4.5).contains(&ratio), "{errors:?}");
    }
}
