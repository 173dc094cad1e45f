use bonsai_core::bench::{make_benchmark, nominal_oracle, robust_oracle, OracleMethod};

fn within(value: f64, target: f64) -> bool {
    (value - target).abs() <= (0.02 * target.abs()).max(0.05)
}

fn check(name: &str, tol_x: f64) {
    let b = make_benchmark(name).unwrap();
    let r = robust_oracle(&b.problem, b.grid).unwrap();
    let (x_star, v_star) = b.reference_optimum.clone().unwrap();
    assert!(within(r.value, v_star), "{name}: value {} vs {v_star}", r.value);
    for (a, e) in r.x.iter().zip(&x_star) {
        assert!((a - e).abs() <= tol_x, "{name}: x {:?} vs {x_star:?}", r.x);
    }
    assert!(b.problem.bounds.contains(&r.x));
}

#[test]
fn modified_sine_optimum() {
    check("modified_sine", 0.05);
}

#[test]
fn rosenbrock_optimum() {
    check("rosenbrock", 0.02);
}

#[test]
fn cliff_optimum_by_coordinate_search() {
    let b = make_benchmark("cliff").unwrap();
    let r = robust_oracle(&b.problem, b.grid).unwrap();
    assert_eq!(r.method, OracleMethod::Coordinate);
    check("cliff", 0.02);
}

#[test]
fn vibration_absorber_optimum() {
    check("vibration_absorber", 0.01);
}

#[test]
fn polynomial_optimum() {
    check("polynomial", 0.02);
}

#[test]
fn literal_variants_miss_the_reference() {
    for name in ["rosenbrock_literal", "vibration_absorber_literal", "polynomial_literal"] {
        let b = make_benchmark(name).unwrap();
        let r = robust_oracle(&b.problem, 200).unwrap();
        let (_, v) = b.reference_optimum.unwrap();
        assert!(!within(r.value, v), "{name} unexpectedly reproduces: {}", r.value);
    }
}

#[test]
fn nominal_dominates_robust() {
    for name in ["modified_sine", "quartic_pair", "rosenbrock"] {
        let b = make_benchmark(name).unwrap();
        let robust = robust_oracle(&b.problem, 200).unwrap();
        let nominal = nominal_oracle(&b.problem, 200).unwrap();
        assert!(nominal.value >= robust.value, "{name}");
    }
}

#[test]
fn quartic_pair_robust_design() {
    let b = make_benchmark("quartic_pair").unwrap();
    let r = robust_oracle(&b.problem, 1000).unwrap();
    assert!((r.x[0] - 2.235).abs() < 0.01, "{:?}", r.x);
    assert!((r.value + 36.06).abs() < 0.1, "{}", r.value);
}
