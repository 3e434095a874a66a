//! Solver outputs against closed forms and independent numerical oracles
//! written here (quadrature, RK4, brute-force scans).

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use weakkam_core::action::fundamental_solution;
use weakkam_core::aubry::{Barrier, BarrierOptions};
use weakkam_core::semiflow::step_intrinsic;
use weakkam_core::superdiff::SuperdiffGrid;
use weakkam_core::twist::{minimal_periodic_config, GeneratingFunction};
use weakkam_core::weakkam::{compute_alpha, weak_kam_solution, ScalarField};
use weakkam_core::{SystemSpec, TorusGeometry, Vec2};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// α(c) of the pendulum for |c| above the transition: the energy level whose
/// rotational torus has mean momentum c.
fn pendulum_alpha_oracle(c: f64) -> f64 {
    let mean_p = |a: f64| simpson(|x| (2.0 * (a + 1.0 - (2.0 * PI * x).cos())).sqrt(), 0.0, 1.0, 4000);
    let (mut lo, mut hi) = (0.0, c * c);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < c.abs() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn pendulum_u(x: f64) -> f64 {
    let x = x - x.floor();
    let y = if x <= 0.5 { x } else { 1.0 - x };
    (2.0 / PI) * (1.0 - (PI * y).cos())
}

#[test]
fn transition_value_is_four_over_pi() {
    let lower = simpson(|x| (2.0 * (1.0 - (2.0 * PI * x).cos())).sqrt(), 0.0, 1.0, 4000);
    assert_abs_diff_eq!(lower, 4.0 / PI, epsilon = 1e-9);
}

#[test]
fn pendulum_alpha_above_transition() {
    let g = TorusGeometry::new(1, 256).unwrap();
    for c in [1.6, 2.0] {
        let spec = SystemSpec::pendulum().with_c(Vec2::new(c, 0.0));
        let a = compute_alpha(&spec, g).unwrap();
        let want = pendulum_alpha_oracle(c);
        assert!((a.value - want).abs() < 2e-3, "c={c}: {} vs {want}", a.value);
    }
}

#[test]
fn pendulum_alpha_vanishes_inside() {
    let g = TorusGeometry::new(1, 256).unwrap();
    for c in [0.0, 0.7, -1.1] {
        let spec = SystemSpec::pendulum().with_c(Vec2::new(c, 0.0));
        let a = compute_alpha(&spec, g).unwrap();
        assert!(a.value.abs() < 1e-3, "c={c}: {}", a.value);
    }
}

#[test]
fn pendulum_solution_matches_closed_form() {
    let p = SystemSpec::pendulum();
    let g = p.geometry(256).unwrap();
    let sol = weak_kam_solution(&p, g).unwrap();
    let diff: Vec<f64> = (0..g.len()).map(|i| sol.field.values[i] - pendulum_u(g.node_point(i)[0])).collect();
    let spread = diff.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - diff.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread / 2.0 < 2e-2, "sup error {}", spread / 2.0);
    assert!(sol.alpha.abs() < 1e-3);

    let sd = SuperdiffGrid::new(&sol.field, &p).unwrap();
    let h = g.spacing();
    let sing: Vec<f64> = (0..g.len()).filter(|&i| sd.singular[i]).map(|i| g.node_point(i)[0]).collect();
    assert!(!sing.is_empty() && sing.iter().all(|x| (x - 0.5).abs() <= h + 1e-12), "{sing:?}");
    let crit: Vec<f64> = sd.critical_points().iter().map(|c| c.x[0]).collect();
    assert!(crit.iter().any(|x| x.abs() <= h || (1.0 - x) <= h));
    assert!(crit.iter().any(|x| (x - 0.5).abs() <= h));
}

#[test]
fn free_action_is_quadratic() {
    let f = SystemSpec::free(2).unwrap();
    for (x, y, t) in [
        (Vec2::new(0.1, 0.2), Vec2::new(0.7, -0.4), 0.5),
        (Vec2::new(0.0, 0.0), Vec2::new(1.3, 0.2), 2.0),
        (Vec2::new(0.4, 0.9), Vec2::new(0.4, 0.9), 0.3),
    ] {
        let (a, _) = fundamental_solution(&f, x, y, t, 0.0).unwrap();
        assert_abs_diff_eq!(a, (y - x).norm_squared() / (2.0 * t), epsilon = 1e-6);
    }
}

#[test]
fn free_alpha_is_half_norm_squared() {
    let g = TorusGeometry::new(2, 32).unwrap();
    let c = Vec2::new(0.6, -0.8);
    let spec = SystemSpec::free(2).unwrap().with_c(c);
    let a = compute_alpha(&spec, g).unwrap();
    assert_abs_diff_eq!(a.value, 0.5 * c.norm_squared(), epsilon = 1e-3);
}

/// RK4 for ẋ = u'(x) = 2 sin πx, the characteristic through 0.25.
fn rk4_pendulum(x0: f64, t: f64, steps: usize) -> f64 {
    let f = |x: f64| 2.0 * (PI * x).sin();
    let dt = t / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(x + 0.5 * dt * k1);
        let k3 = f(x + 0.5 * dt * k2);
        let k4 = f(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn intrinsic_step_follows_characteristic() {
    let p = SystemSpec::pendulum();
    let g = p.geometry(512).unwrap();
    let u = ScalarField::from_fn(g, "closed form", |x| pendulum_u(x[0])).unwrap();
    let step = step_intrinsic(&p, &u, Vec2::new(0.25, 0.0), 0.01, 0.0).unwrap();
    let want = rk4_pendulum(0.25, 0.01, 1000);
    assert_abs_diff_eq!(want, 0.264457, epsilon = 1e-6);
    assert!((step.point[0] - want).abs() < 2e-4, "{} vs {want}", step.point[0]);
}

#[test]
fn pendulum_barrier_matches_mane_potential() {
    let p = SystemSpec::pendulum();
    let b = Barrier::new(&p, 0.0, BarrierOptions::default()).unwrap();
    assert!(b.value(Vec2::zeros(), Vec2::zeros()).abs() < 1e-3);
    // the cheapest loop through ½ runs the separatrix both ways: ∫ 2|sin πx| dx
    let half = Vec2::new(0.5, 0.0);
    assert_abs_diff_eq!(b.value(half, half), 4.0 / PI, epsilon = 2e-2);
}

fn brute_force_12(h: &GeneratingFunction) -> f64 {
    let act = |a: f64, b: f64| h.h(a, b) + h.h(b, a + 1.0);
    let n = 400;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let a = i as f64 / n as f64;
            let b = a + j as f64 / n as f64;
            let v = act(a, b);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }
    // coordinate descent on a shrinking step
    let (mut v, mut a, mut b) = best;
    let mut s = 1.0 / n as f64;
    while s > 1e-10 {
        let mut moved = false;
        for (da, db) in [(s, 0.0), (-s, 0.0), (0.0, s), (0.0, -s)] {
            let w = act(a + da, b + db);
            if w < v {
                (v, a, b) = (w, a + da, b + db);
                moved = true;
            }
        }
        if !moved {
            s *= 0.5;
        }
    }
    v
}

#[test]
fn standard_map_period_two_action() {
    let h = GeneratingFunction::standard(0.5);
    let conf = minimal_periodic_config(&h, 1, 2).unwrap();
    assert_abs_diff_eq!(conf.action, brute_force_12(&h), epsilon = 1e-4);
}

#[test]
fn integrable_map_action_and_rotation() {
    let h = GeneratingFunction::quadratic();
    for (p, q) in [(1, 3), (2, 5), (3, 7)] {
        let conf = minimal_periodic_config(&h, p, q).unwrap();
        let r = p as f64 / q as f64;
        assert_abs_diff_eq!(conf.rotation, r, epsilon = 1e-12);
        assert_abs_diff_eq!(conf.action, q as f64 * 0.5 * r * r, epsilon = 1e-9);
    }
}
