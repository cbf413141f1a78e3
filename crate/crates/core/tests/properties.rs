//! Randomised invariants across the public API.

use std::collections::HashSet;

use birkhoff_core::analysis::{check_h1, fit_rate, AdaptiveFunction, FitModel, GridPoint, ModelHint, Verdict};
use birkhoff_core::engine::{fourier_error_oracle, kernel_s_n, run_average, AveragingRun};
use birkhoff_core::lattice::{enumerate_ball_finite, eta_weights, shell_counts, shell_log_sums};
use birkhoff_core::numeric::{dist_to_int, format_sci, frac, parse_real};
use birkhoff_core::observables::Observable;
use birkhoff_core::rotations::{make_rotation, ApproximationFunction, Regime};
use birkhoff_core::weights::WeightFunction;
use birkhoff_core::Precision;
use proptest::prelude::*;

const P: Precision = Precision::new(40);

fn weight_spec() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("exp"), Just("bump:p=1,q=2"), Just("poly:s=3"), Just("flat")]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn planted_power_law_is_recovered(m in 0.5f64..6.0, ln_c in -5.0f64..5.0, noise_seed in 0u64..1000) {
        let grid: Vec<GridPoint> = (6..18)
            .map(|j| {
                let t = f64::from(1u32 << j);
                // A deterministic wiggle far below the fit tolerance.
                let wiggle = 1e-12 * ((noise_seed + j as u64) as f64).sin();
                GridPoint { t, ln_err: ln_c - m * t.ln() + wiggle, saturated: false }
            })
            .collect();
        let fit = fit_rate(&grid, ModelHint::PolySlope).unwrap();
        match fit.model {
            FitModel::PolySlope { m: got, r2, .. } => {
                prop_assert!((got - m).abs() < 1e-9, "{got} vs {m}");
                prop_assert!(r2 > 1.0 - 1e-12);
            }
            other => prop_assert!(false, "wrong model {other:?}"),
        }
    }

    #[test]
    fn planted_stretched_law_is_recovered(xi in 0.1f64..0.9, c in 0.05f64..5.0, floor_at in 8usize..12) {
        let grid: Vec<GridPoint> = (0..12)
            .map(|j| {
                let t = 100.0 * 1.8f64.powi(j);
                GridPoint { t, ln_err: -c * t.powf(xi), saturated: j as usize >= floor_at }
            })
            .collect();
        let fit = fit_rate(&grid, ModelHint::StretchedExp).unwrap();
        prop_assert_eq!(fit.used.len() + fit.excluded.len(), 12);
        let first_saturated = 100.0 * 1.8f64.powi(floor_at as i32);
        prop_assert!(fit.used.iter().all(|&t| t < first_saturated));
        match fit.model {
            FitModel::StretchedExp { xi: got_xi, c: got_c, .. } => {
                prop_assert!((got_xi - xi).abs() < 1e-8, "{got_xi} vs {xi}");
                prop_assert!((got_c / c - 1.0).abs() < 1e-6);
            }
            other => prop_assert!(false, "wrong model {other:?}"),
        }
    }

    #[test]
    fn h1_power_criterion(tau in 1.0f64..3.0, m in 1u32..4, d in 1u32..4, gap in 0.05f64..3.0, above in any::<bool>()) {
        // With Δ = x^τ and Δ̃ = x^M the integral converges exactly when M > d + mτ.
        let edge = f64::from(d) + f64::from(m) * tau;
        let big_m = if above { edge + gap } else { (edge - gap).max(0.1) };
        let r = check_h1(&ApproximationFunction::power(tau), &ApproximationFunction::power(big_m), m, d);
        let expected = if big_m > edge { Verdict::Converges } else { Verdict::Diverges };
        prop_assert_eq!(r.verdict, expected);
    }

    #[test]
    fn approximation_inverse_round_trips(
        which in 0usize..3,
        a in 0.5f64..3.0,
        b in 0.3f64..2.0,
        x in 2.0f64..200.0,
    ) {
        let f = match which {
            0 => ApproximationFunction::power(a),
            1 => ApproximationFunction::stretched_exp(a, b),
            _ => ApproximationFunction::double_exp(b),
        };
        let back = f.inverse_ln(f.ln_value(x));
        prop_assert!((back / x - 1.0).abs() < 1e-8, "{f}: {x} -> {back}");
        let reparsed: ApproximationFunction = f.to_string().parse().unwrap();
        prop_assert_eq!(reparsed, f);
    }

    #[test]
    fn adaptive_spec_round_trips(u in 0.1f64..4.0, v in 0.05f64..0.95, which in 0usize..3) {
        let f = match which {
            0 => AdaptiveFunction::log_pow(u).unwrap(),
            1 => AdaptiveFunction::pow(v).unwrap(),
            _ => AdaptiveFunction::sqrt(),
        };
        let g: AdaptiveFunction = f.to_string().parse().unwrap();
        prop_assert_eq!(f, g);
    }

    #[test]
    fn shell_sums_of_unit_factors_are_counts(eta in 1u32..4, bound in 1u64..40) {
        let w = eta_weights(eta, bound, None);
        let counts = shell_counts(&w, bound);
        let sums = shell_log_sums(&w, bound, |_, _| 0.0);
        for (c, s) in counts.iter().zip(&sums) {
            let expected = (*c as f64).ln();
            prop_assert!((s - expected).abs() < 1e-9 * expected.abs().max(1.0) || (*c == 0 && s.is_infinite()));
        }
    }

    #[test]
    fn finite_ball_is_symmetric_and_distinct(d in 1usize..4, k in 1u64..6) {
        let all: Vec<Vec<i64>> = enumerate_ball_finite(d, k)
            .map(|m| (0..d).map(|j| m.get(j)).collect())
            .collect();
        let set: HashSet<Vec<i64>> = all.iter().cloned().collect();
        prop_assert_eq!(set.len(), all.len());
        for v in &all {
            let l1: u64 = v.iter().map(|x| x.unsigned_abs()).sum();
            prop_assert!(l1 >= 1 && l1 <= k);
            let neg: Vec<i64> = v.iter().map(|x| -x).collect();
            prop_assert!(set.contains(&neg));
        }
        // Shell sizes from the counting recurrence agree with the enumeration.
        let total: u128 = shell_counts(&vec![1; d], k).iter().skip(1).sum();
        prop_assert_eq!(total as usize, all.len());
    }

    #[test]
    fn reals_round_trip_through_text(mant in -1e6f64..1e6, exp in -300i32..300) {
        let text = format!("{mant}e{exp}");
        let x = parse_real(&text, P).unwrap();
        let back = parse_real(&format_sci(&x, 45), P).unwrap();
        prop_assert_eq!(&x, &back);
        let f = frac(&x);
        prop_assert!((0..1).contains(&f));
        let d = dist_to_int(&x);
        prop_assert!(d >= 0 && d <= 0.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_is_bounded_hermitian_and_one_at_integers(
        spec in weight_spec(),
        n in 2u64..300,
        x in -5.0f64..5.0,
        m in -7i32..7,
    ) {
        let w = WeightFunction::parse(spec, P).unwrap();
        let xv = P.real(x);
        let s = kernel_s_n(&w, n, &xv).unwrap();
        prop_assert!(s.abs() <= P.real(1) + P.real(1e-30));
        let neg = kernel_s_n(&w, n, &(-xv.clone())).unwrap();
        let d_re = (s.re.clone() - &neg.re).abs();
        let d_im = (s.im.clone() + &neg.im).abs();
        prop_assert!(d_re < 1e-30 && d_im < 1e-30);
        let one = kernel_s_n(&w, n, &P.real(m)).unwrap();
        prop_assert!((one.re - 1u32).abs() < 1e-30 && one.im.abs() < 1e-30);
    }

    #[test]
    fn random_real_polynomials_average_consistently(
        seed in 0u64..10_000,
        spec in weight_spec(),
        n in 16u64..400,
        theta in 0.0f64..1.0,
    ) {
        let rot = make_rotation("golden", P).unwrap();
        let obs = Observable::random_trig(seed, Regime::Finite { d: 1 }, 6, 4, P).unwrap();
        // Hermitian coefficients make the observable real everywhere.
        let val = obs.evaluate(&[P.real(theta)], &P.epsilon()).unwrap();
        prop_assert!(val.im.abs() < 1e-30);

        let w = WeightFunction::parse(spec, P).unwrap();
        let run = AveragingRun::discrete(&obs, &rot, &w, n, P).with_theta0(vec![P.real(theta)]);
        let res = run_average(&run).unwrap();
        prop_assert!(res.value.im.clone().abs() < 1e-30);
        let oracle = fourier_error_oracle(&run, None).unwrap();
        let diff = (res.abs_error.clone() - &oracle.abs_error).abs();
        prop_assert!(diff < 1e-25, "orbit {} oracle {}", res.abs_error, oracle.abs_error);
    }
}
