use bohl_core::linalg::{extreme_singular_values, Matrix};
use bohl_core::propagation::{
    brute_force_window_growth, extreme_window_growth, propagate_direction, window_log_ratio,
};
use bohl_core::systems::{load_system, shift, transform, MatrixSequence, SystemSpec, TransformSequence};
use proptest::prelude::*;

/// Periodic `d × d` system with diagonally dominant factors `s·I + E`.
fn periodic_system(d: usize) -> impl Strategy<Value = MatrixSequence> {
    let factor = (0.8f64..1.8, prop::collection::vec(-0.2f64..0.2, d * d));
    prop::collection::vec(factor, 1..5).prop_map(move |factors| {
        let mats: Vec<Vec<f64>> = factors
            .into_iter()
            .map(|(s, mut e)| {
                for i in 0..d {
                    e[i * d + i] += s;
                }
                e
            })
            .collect();
        load_system(&SystemSpec::periodic(d, &mats, 400)).unwrap()
    })
}

fn direction(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn window() -> impl Strategy<Value = (usize, usize)> {
    (0usize..60, 1usize..40).prop_map(|(m, len)| (m + len, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn window_growth_matches_explicit_product(seq in periodic_system(3), (n, m) in window()) {
        let (hi, lo) = extreme_window_growth(&seq, n, m).unwrap();
        let (bhi, blo) = brute_force_window_growth(&seq, n, m);
        prop_assert!((hi - bhi).abs() < 1e-9, "{hi} vs {bhi}");
        // the explicit product loses σ_min to rounding in proportion to its condition number
        let tol = 1e-9 + 1e-14 * (bhi - blo).exp();
        prop_assert!((lo - blo).abs() < tol, "{lo} vs {blo}");
    }

    #[test]
    fn direction_rate_lies_between_singular_values(
        seq in periodic_system(2),
        x0 in direction(2),
        (n, m) in window(),
    ) {
        let sol = propagate_direction(&seq, &x0, 100).unwrap();
        let rate = window_log_ratio(&sol, n, m).unwrap() * (n - m) as f64;
        let (hi, lo) = brute_force_window_growth(&seq, n, m);
        prop_assert!(rate <= hi + 1e-9 && rate >= lo - 1e-9, "{lo} <= {rate} <= {hi}");

        let (nb, ib) = seq.tabulate(100).unwrap().observed_bounds();
        let per_step = rate / (n - m) as f64;
        prop_assert!(per_step <= nb.ln() + 1e-12 && per_step >= -ib.ln() - 1e-12);
    }

    #[test]
    fn window_rates_chain(seq in periodic_system(3), x0 in direction(3), a in 0usize..30, b in 1usize..30, c in 1usize..30) {
        let sol = propagate_direction(&seq, &x0, 100).unwrap();
        let (m, k, n) = (a, a + b, a + b + c);
        let whole = window_log_ratio(&sol, n, m).unwrap() * (n - m) as f64;
        let left = window_log_ratio(&sol, k, m).unwrap() * (k - m) as f64;
        let right = window_log_ratio(&sol, n, k).unwrap() * (n - k) as f64;
        prop_assert!((whole - left - right).abs() < 1e-9);
    }

    #[test]
    fn shift_moves_every_rate(seq in periodic_system(2), x0 in direction(2), gamma in -2.0f64..2.0, (n, m) in window()) {
        let base = propagate_direction(&seq, &x0, 100).unwrap();
        let shifted = propagate_direction(&shift(&seq, gamma), &x0, 100).unwrap();
        let r0 = window_log_ratio(&base, n, m).unwrap();
        let r1 = window_log_ratio(&shifted, n, m).unwrap();
        prop_assert!((r1 - (r0 - gamma)).abs() < 1e-9, "{r0} {r1} {gamma}");
    }

    #[test]
    fn transform_round_trip(seq in periodic_system(2), t in prop::collection::vec(-0.5f64..0.5, 4), n in 0usize..50) {
        let mut tm = Matrix::from_row_slice(2, 2, &t);
        tm[(0, 0)] += 1.5;
        tm[(1, 1)] += 1.5;
        let ts = TransformSequence::constant(&tm).unwrap();
        let there = transform(&seq, &ts).unwrap();
        let back = transform(&there, &ts.inverse_sequence()).unwrap();
        let diff = (back.eval(n) - seq.eval(n)).abs().max();
        prop_assert!(diff < 1e-10, "{diff}");

        // conjugation moves each factor's norm by at most the condition number
        let (k_hi, k_lo) = extreme_singular_values(&tm);
        let cond = (k_hi / k_lo).ln();
        let (a_hi, _) = extreme_singular_values(&seq.eval(n));
        let (b_hi, _) = extreme_singular_values(&there.eval(n));
        prop_assert!((b_hi.ln() - a_hi.ln()).abs() <= cond + 1e-12);
    }
}
