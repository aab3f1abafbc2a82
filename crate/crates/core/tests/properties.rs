mod common;

use common::*;

const SYSTEMS: usize = 20;
const SEED: u64 = 2024;

#[test]
fn ladder_on_random_systems() {
    let r = ladder_properties(&random_systems(SYSTEMS, SEED), &[1, 2, 3]);
    for (name, c) in [
        ("sandwich", &r.sandwich),
        ("monotone", &r.monotone),
        ("mass", &r.mass),
        ("certificates", &r.certificates),
    ] {
        println!("{name}: {}", c.detail);
        assert!(c.pass, "{name}: {}", c.detail);
    }
}

#[test]
fn extraction_recovers_atomic_measures() {
    let c = extraction_round_trip(100, SEED);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn liouville_rows_vanish_on_exact_measures() {
    let c = liouville_residual();
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn rk4_is_fourth_order() {
    let c = rk4_order();
    assert!(c.pass, "{}", c.detail);
}
