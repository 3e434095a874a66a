use weakkam_core::twist::{
    distance_generating_function, gap_overlap, gap_sequence, minimal_periodic_config, rotation_number, DistanceOptions,
    GeneratingFunction,
};
use weakkam_core::Mat2;

#[test]
fn flat_distance_table_is_euclidean() {
    let opts = DistanceOptions { resolution: 64, ..Default::default() };
    let flat = distance_generating_function(&|_x| Mat2::identity(), opts).unwrap();
    let mut err: f64 = 0.0;
    for i in 0..10 {
        for d in [-0.8, -0.3, 0.0, 0.45, 0.9] {
            let x = i as f64 / 10.0;
            err = err.max((flat.h(x, x + d) - (1.0 + d * d).sqrt()).abs());
        }
    }
    assert!(err < 5e-2, "{err}");
}

#[test]
fn rotation_numbers_of_periodic_orbits_are_exact() {
    let h = GeneratingFunction::standard(0.8);
    for (p, q) in [(1, 2), (2, 5), (5, 8)] {
        let conf = minimal_periodic_config(&h, p, q).unwrap();
        assert_eq!(rotation_number(&conf).unwrap(), p as f64 / q as f64);
    }
}

#[test]
fn gap_partial_sums_stay_below_one() {
    let h = GeneratingFunction::standard(2.0);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let gaps = gap_sequence(&h, golden, (0.1, 0.12), 40).unwrap();
    let total: f64 = gaps.iter().map(|(a, b)| b - a).sum();
    assert!(total <= 1.0 + 1e-6, "{total}");
    assert!(gap_overlap(&gaps) <= 1e-6);
}
