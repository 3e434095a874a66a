use weakkam_core::conley::{
    build_chain_graph, cells_of_points, chain_recurrent_set, critical_values_histogram, preattractor_check,
    AnalysisWindow,
};
use weakkam_core::semiflow::{default_step, Method, Semiflow};
use weakkam_core::weakkam::weak_kam_solution;
use weakkam_core::{SystemSpec, Vec2};

#[test]
fn free_system_has_no_recurrent_cells() {
    let f = SystemSpec::free(1).unwrap().with_c(Vec2::new(1.0, 0.0));
    let sol = weak_kam_solution(&f, f.geometry(128).unwrap()).unwrap();
    let flow = Semiflow::new(&f, &sol.field, sol.alpha).unwrap();
    let win = AnalysisWindow::new(1, 32, 2).unwrap();
    let graph = build_chain_graph(&flow, win, 2.0 * win.diameter(), 1.0, 0.01, Method::SelectionOde).unwrap();
    assert!(chain_recurrent_set(&graph).is_empty());
    assert!(critical_values_histogram(&sol.field, &f).unwrap().is_empty());
}

#[test]
fn pendulum_recurrence_clusters_at_critical_points() {
    let p = SystemSpec::pendulum();
    let n = 256;
    let sol = weak_kam_solution(&p, p.geometry(n).unwrap()).unwrap();
    let flow = Semiflow::new(&p, &sol.field, sol.alpha).unwrap();
    let win = AnalysisWindow::new(1, n / 4, 1).unwrap();
    let graph = build_chain_graph(&flow, win, 2.0 * win.diameter(), 1.0, default_step(&p), Method::SelectionOde).unwrap();
    let rec = chain_recurrent_set(&graph);
    let crit_pts: Vec<Vec2> = flow.superdiff.critical_points().iter().map(|c| c.x).collect();
    let crit = cells_of_points(&win, &crit_pts);
    assert!(!rec.is_empty());
    for &k in &crit {
        assert!(rec.contains(&k), "critical cell {k} not recurrent");
    }
    // recurrence never appears away from the two rest points
    for &k in &rec {
        let x = win.center(k)[0].rem_euclid(1.0);
        let d = x.min(1.0 - x).min((x - 0.5).abs());
        assert!(d <= 3.0 * win.cell, "recurrent cell at {x}");
    }
}

#[test]
fn superlevel_sets_are_preattractors() {
    let p = SystemSpec::pendulum();
    let sol = weak_kam_solution(&p, p.geometry(256).unwrap()).unwrap();
    let flow = Semiflow::new(&p, &sol.field, sol.alpha).unwrap();
    let hist = critical_values_histogram(&sol.field, &p).unwrap();
    assert_eq!(hist.len(), 2);
    let r = 0.5 * (hist[0].0 + hist[1].0);
    let verdict = preattractor_check(&flow, r, &[0.5, 1.0], default_step(&p), Method::SelectionOde).unwrap();
    assert!(verdict.passed(), "{verdict:?}");
}
