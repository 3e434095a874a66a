use std::sync::OnceLock;

use proptest::prelude::*;
use weakkam_core::action::fundamental_solution;
use weakkam_core::io::{read_grid, write_grid, GridHeader, GridKind};
use weakkam_core::superdiff::convex_hull;
use weakkam_core::twist::{convergents, gcd, minimal_periodic_config, GeneratingFunction};
use weakkam_core::weakkam::{LaxOleinik, LaxOleinikOptions};
use weakkam_core::{SystemSpec, TorusGeometry, Vec2};

const N: usize = 32;

/// Monotone (unrefined) propagator of the pendulum, built once.
fn monotone_lo() -> &'static LaxOleinik {
    static LO: OnceLock<LaxOleinik> = OnceLock::new();
    LO.get_or_init(|| {
        let p = SystemSpec::pendulum();
        let g = TorusGeometry::new(1, N).unwrap();
        LaxOleinik::new(&p, g, 0.05, LaxOleinikOptions { refine: false, ..Default::default() }).unwrap()
    })
}

fn field() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, N)
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lax_oleinik_is_monotone(u in field(), bump in prop::collection::vec(0.0..0.5f64, N), c in -2.0..2.0f64) {
        let lo = monotone_lo();
        let w: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let c = Vec2::new(c, 0.0);
        let (tu, _) = lo.minus(&u, c, 0.0);
        let (tw, _) = lo.minus(&w, c, 0.0);
        for (a, b) in tu.iter().zip(&tw) {
            prop_assert!(a <= &(b + 1e-12));
        }
    }

    #[test]
    fn lax_oleinik_commutes_with_constants(u in field(), k in -5.0..5.0f64) {
        let lo = monotone_lo();
        let shifted: Vec<f64> = u.iter().map(|v| v + k).collect();
        let (a, _) = lo.minus(&u, Vec2::zeros(), 0.0);
        let (b, _) = lo.minus(&shifted, Vec2::zeros(), 0.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((y - x - k).abs() < 1e-9);
        }
    }

    #[test]
    fn lax_oleinik_is_sup_nonexpansive(u in field(), w in field()) {
        let lo = monotone_lo();
        let (tu, _) = lo.minus(&u, Vec2::zeros(), 0.0);
        let (tw, _) = lo.minus(&w, Vec2::zeros(), 0.0);
        prop_assert!(sup(&tu, &tw) <= sup(&u, &w) + 1e-12);
    }

    #[test]
    fn plus_and_minus_are_ordered(u in field()) {
        // T⁺ T⁻ u ≤ u ≤ T⁻ T⁺ u for the grid semigroups
        let lo = monotone_lo();
        let (m, _) = lo.minus(&u, Vec2::zeros(), 0.0);
        let (pm, _) = lo.plus(&m, Vec2::zeros(), 0.0);
        let (p, _) = lo.plus(&u, Vec2::zeros(), 0.0);
        let (mp, _) = lo.minus(&p, Vec2::zeros(), 0.0);
        for i in 0..N {
            prop_assert!(pm[i] <= u[i] + 1e-9);
            prop_assert!(mp[i] >= u[i] - 1e-9);
        }
    }

    #[test]
    fn free_action_triangle(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64, s in 0.1..1.0f64, t in 0.1..1.0f64) {
        let f = SystemSpec::free(1).unwrap();
        let p = |v: f64| Vec2::new(v, 0.0);
        let (xy, _) = fundamental_solution(&f, p(x), p(y), s, 0.0).unwrap();
        let (yz, _) = fundamental_solution(&f, p(y), p(z), t, 0.0).unwrap();
        let (xz, _) = fundamental_solution(&f, p(x), p(z), s + t, 0.0).unwrap();
        prop_assert!(xz <= xy + yz + 1e-9);
    }

    #[test]
    fn torus_wrap_lands_in_unit_square(x in -50.0..50.0f64, y in -50.0..50.0f64) {
        let g = TorusGeometry::new(2, 16).unwrap();
        let w = g.wrap(Vec2::new(x, y));
        prop_assert!((0.0..1.0).contains(&w[0]) && (0.0..1.0).contains(&w[1]));
        prop_assert!(g.distance(w, Vec2::new(x, y)) < 1e-9);
    }

    #[test]
    fn hull_contains_its_points(pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 3..30)) {
        let pts: Vec<Vec2> = pts.into_iter().map(|(a, b)| Vec2::new(a, b)).collect();
        let hull = convex_hull(&pts);
        prop_assume!(hull.len() >= 3);
        let cross = |a: Vec2, b: Vec2| a[0] * b[1] - a[1] * b[0];
        let n = hull.len();
        for q in &pts {
            for i in 0..n {
                prop_assert!(cross(hull[(i + 1) % n] - hull[i], q - hull[i]) >= -1e-12);
            }
        }
    }

    #[test]
    fn convergents_approximate(omega in 0.01..0.99f64) {
        for (p, q) in convergents(omega, 10_000) {
            prop_assert_eq!(gcd(p, q), 1);
            prop_assert!((omega - p as f64 / q as f64).abs() <= 1.0 / (q * q) as f64 + 1e-12);
        }
    }

    #[test]
    fn grid_round_trip(data in prop::collection::vec(-1e6..1e6f64, 16), param in -10.0..10.0f64, hash in any::<u64>()) {
        let header = GridHeader { kind: GridKind::Field, dim: 1, rows: 16, cols: 1, param, system_hash: hash, extra: 0 };
        let mut buf = Vec::new();
        write_grid(&mut buf, &header, &data).unwrap();
        let (h2, d2) = read_grid(buf.as_slice()).unwrap();
        prop_assert_eq!(h2, header);
        prop_assert_eq!(d2, data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn minimal_configurations_are_ordered(k in 0.0..1.5f64, q in 2i64..8, p_frac in 0.0..1.0f64) {
        let p = 1 + ((q - 1) as f64 * p_frac) as i64;
        prop_assume!(gcd(p, q) == 1);
        let conf = minimal_periodic_config(&GeneratingFunction::standard(k), p, q).unwrap();
        prop_assert!(conf.is_cyclically_ordered());
        prop_assert!((conf.rotation - p as f64 / q as f64).abs() < 1e-9);
    }
}
