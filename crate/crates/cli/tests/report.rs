use afford_cli::report::*;

#[test]
fn wilson_reference_values() {
    let (lo, hi) = wilson_interval(5, 10);
    assert!((lo - 0.236_593).abs() < 1e-5 && (hi - 0.763_407).abs() < 1e-5);
    assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    let (lo, _) = wilson_interval(0, 20);
    assert_eq!(lo, 0.0);
}

#[test]
fn hull_area_of_known_shapes() {
    let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5), (0.2, 0.9)];
    assert!((convex_hull_area(&square) - 1.0).abs() < 1e-12);
    let tri = [(0.0, 0.0), (2.0, 0.0), (0.0, 3.0)];
    assert!((convex_hull_area(&tri) - 3.0).abs() < 1e-12);
    assert_eq!(convex_hull_area(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]), 0.0);
    assert_eq!(convex_hull_area(&[]), 0.0);
}
