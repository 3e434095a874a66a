use weakkam_core::aubry::{aubry_set, calibration_residual, sing_to_aubry_distance, BarrierOptions};
use weakkam_core::semiflow::{default_step, Method, Semiflow};
use weakkam_core::weakkam::weak_kam_solution;
use weakkam_core::{SystemSpec, Vec2};

#[test]
fn free_system_aubry_set_is_everything() {
    let f = SystemSpec::free(1).unwrap().with_c(Vec2::new(1.0, 0.0));
    let opts = BarrierOptions { grid: 32, t_max: 10.0, ..Default::default() };
    let set = aubry_set(&f, 0.5, opts).unwrap();
    assert_eq!(set.points.len(), 32, "{:?}", set.diagonal);
}

#[test]
fn pendulum_aubry_set_is_the_maximum_of_v() {
    let p = SystemSpec::pendulum();
    let set = aubry_set(&p, 0.0, BarrierOptions::default()).unwrap();
    let cell = 1.0 / 64.0;
    assert!(!set.points.is_empty());
    for x in set.vectors() {
        assert!(x[0].min(1.0 - x[0]) <= cell + 1e-12, "{x:?}");
    }
}

#[test]
fn pendulum_solution_is_calibrated_on_smooth_arcs() {
    let p = SystemSpec::pendulum();
    let sol = weak_kam_solution(&p, p.geometry(512).unwrap()).unwrap();
    let smooth = |x: Vec2| (x[0].rem_euclid(1.0) - 0.5).abs() > 0.02;
    let r = calibration_residual(&p, &sol.field, &smooth, Vec2::new(0.3, 0.0), sol.alpha, 2.0).unwrap();
    assert!(r.residual < 1e-3, "{r:?}");
}

#[test]
fn pendulum_rest_point_sits_half_a_period_from_aubry() {
    let p = SystemSpec::pendulum();
    let sol = weak_kam_solution(&p, p.geometry(256).unwrap()).unwrap();
    let flow = Semiflow::new(&p, &sol.field, sol.alpha).unwrap();
    let rep = sing_to_aubry_distance(&flow, &[Vec2::zeros()], &[Vec2::new(0.5, 0.0)], 2.0, default_step(&p), Method::SelectionOde)
        .unwrap();
    assert!((rep.min - 0.5).abs() < 1e-2, "{rep:?}");
}
