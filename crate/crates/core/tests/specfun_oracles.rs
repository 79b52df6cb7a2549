//! Special functions against 150-digit series values (scripts/gen_oracles.py).

use airfl_core::specfun::{erf, erfc, exp_integral_e1, exp_integral_ei};
use proptest::prelude::*;

const ORACLES: &str = include_str!("data/specfun_oracles.csv");

fn table() -> Vec<(String, f64, f64)> {
    ORACLES
        .lines()
        .skip(1)
        .map(|line| {
            let mut f = line.split(',');
            let name = f.next().unwrap().to_string();
            let x = f.next().unwrap().parse().unwrap();
            let v = f.next().unwrap().parse().unwrap();
            (name, x, v)
        })
        .collect()
}

#[test]
fn oracle_table_within_1e12_relative() {
    let rows = table();
    assert!(rows.len() > 50);
    for (name, x, want) in rows {
        let got = match name.as_str() {
            "ei" => exp_integral_ei(x).unwrap(),
            "erf" => erf(x).unwrap(),
            "erfc" => erfc(x).unwrap(),
            other => panic!("unknown function {other}"),
        };
        let rel = ((got - want) / want).abs();
        assert!(rel <= 1e-12, "{name}({x}) = {got:e}, oracle {want:e}, rel {rel:e}");
    }
}

#[test]
fn ei_inequality_chain_holds_strictly() {
    // -Ei(-x) > ½·e^{-x}·ln(1 + 2/x) > e^{-x}/(x + 1)
    for i in 0..200 {
        let x = 1e-3 * (2e4f64).powf(i as f64 / 199.0);
        let lhs = -exp_integral_ei(-x).unwrap();
        let mid = 0.5 * (-x).exp() * (2.0 / x).ln_1p();
        let rhs = (-x).exp() / (x + 1.0);
        assert!(lhs > mid && mid > rhs, "x = {x}: {lhs} {mid} {rhs}");
    }
}

proptest! {
    #[test]
    fn erf_erfc_complement(x in -8.0f64..8.0) {
        let s = erf(x).unwrap() + erfc(x).unwrap();
        prop_assert!((s - 1.0).abs() < 2e-15);
        prop_assert_eq!(erf(-x).unwrap(), -erf(x).unwrap());
    }

    #[test]
    fn ei_of_negative_is_minus_e1(x in 1e-6f64..60.0) {
        prop_assert_eq!(exp_integral_ei(-x).unwrap(), -exp_integral_e1(x).unwrap());
    }

    #[test]
    fn ei_derivative_is_exp_over_x(x in prop_oneof![-30.0f64..-0.05, 0.05f64..30.0]) {
        let h = 1e-5 * x.abs();
        let fd = (exp_integral_ei(x + h).unwrap() - exp_integral_ei(x - h).unwrap()) / (2.0 * h);
        let exact = x.exp() / x;
        prop_assert!(((fd - exact) / exact).abs() < 1e-6, "x={} fd={} exact={}", x, fd, exact);
    }
}
