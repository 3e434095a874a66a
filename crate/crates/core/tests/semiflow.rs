use weakkam_core::semiflow::{default_step, omega_limit, Method, OmegaKind, OmegaOptions, Semiflow};
use weakkam_core::weakkam::weak_kam_solution;
use weakkam_core::{SystemSpec, Vec2};

#[test]
fn pendulum_trajectory_climbs_to_the_hyperbolic_point() {
    let p = SystemSpec::pendulum();
    let g = p.geometry(256).unwrap();
    let sol = weak_kam_solution(&p, g).unwrap();
    let flow = Semiflow::new(&p, &sol.field, sol.alpha).unwrap();
    for method in [Method::Intrinsic, Method::SelectionOde] {
        let tr = flow.integrate(Vec2::new(0.1, 0.0), 4.0, default_step(&p), method).unwrap();
        assert!(tr.v_values.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{method:?}: v_c decreased");
        let last = tr.torus_points.last().unwrap()[0];
        assert!((last - 0.5).abs() < 2.0 * g.spacing(), "{method:?}: ended at {last}");
        let om = omega_limit(&tr, OmegaOptions::new(g.spacing())).unwrap();
        assert_eq!(om.kind, OmegaKind::Stationary);
    }
}

#[test]
fn free_flow_translates() {
    let c = Vec2::new(1.0, 0.0);
    let f = SystemSpec::free(1).unwrap().with_c(c);
    let g = f.geometry(128).unwrap();
    let sol = weak_kam_solution(&f, g).unwrap();
    let flow = Semiflow::new(&f, &sol.field, sol.alpha).unwrap();
    let tr = flow.integrate(Vec2::new(0.3, 0.0), 1.5, 0.01, Method::SelectionOde).unwrap();
    let end = tr.points.last().unwrap()[0];
    assert!((end - 1.8).abs() < 1e-6, "{end}");
    assert_eq!(tr.ambiguous_steps, 0);
}

#[test]
fn separable_pendulum_slides_along_the_singular_line() {
    let s = SystemSpec::separable_pendulum();
    let g = s.geometry(64).unwrap();
    let sol = weak_kam_solution(&s, g).unwrap();
    let flow = Semiflow::new(&s, &sol.field, sol.alpha).unwrap();
    let tr = flow.integrate(Vec2::new(0.5, 0.25), 4.0, default_step(&s), Method::SelectionOde).unwrap();
    let end = *tr.torus_points.last().unwrap();
    assert!(g.distance(end, Vec2::new(0.5, 0.5)) < 3.0 * g.spacing(), "{end:?}");
}
