use obukhov_core::diagnostics::besov_norm;
use obukhov_core::ladder::{build_ladder, LadderParams};
use obukhov_core::model::{
    convert_vec, cutoff, evaluate_cutoff, rhs_l2, rhs_rescaled, ForcingSpec, Form, ShellState,
};
use obukhov_core::precision::{two_prod, two_sum, CompensatedSum};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = LadderParams> {
    (1.2f64..50.0, 1.05f64..1.6, 1.0f64..3.5, 0.5f64..3.0, 0.05f64..2.0, 1usize..14).prop_filter_map(
        "ladder overflows",
        |(n0, b, alpha, beta, c, k)| {
            let p = LadderParams {
                n0,
                b,
                alpha,
                beta,
                c,
                ..LadderParams::figure2(k)
            };
            // keep N_K^(2 alpha + 2) well inside the double range
            let top = b.powi(k as i32) * n0.ln() * (2.0 * alpha + 2.0);
            (top < 600.0 && build_ladder(p).is_ok()).then_some(p)
        },
    )
}

fn state(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #[test]
    fn log_frequencies_grow_geometrically(p in params()) {
        let lad = build_ladder(p).unwrap();
        for k in 0..lad.k_max() {
            let ratio = lad.n[k + 1].ln() / lad.n[k].ln();
            prop_assert!((ratio - p.b).abs() <= 1e-12 * p.b);
        }
    }

    #[test]
    fn amplitudes_increase_and_times_are_ordered(p in params()) {
        let lad = build_ladder(p).unwrap();
        for w in lad.amp.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        for w in lad.t_act.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        for &t in &lad.t_act {
            prop_assert!(t >= -lad.horizon && t < 0.0);
        }
    }

    #[test]
    fn delta_matches_frequency_ratio(p in params()) {
        let lad = build_ladder(p).unwrap();
        for k in 0..lad.k_max() {
            let expect = (lad.n[k] / lad.n[k + 1]).powf(2.0 * p.alpha);
            prop_assert!((lad.delta[k] - expect).abs() <= 1e-12 * expect);
            prop_assert!(lad.delta[k] < 1.0);
        }
    }

    #[test]
    fn conversions_round_trip(p in params(), seed in state(14)) {
        let lad = build_ladder(p).unwrap();
        let x: Vec<f64> = seed[..lad.modes()].to_vec();
        let y = convert_vec(&x, Form::L2, Form::Linf, &lad);
        let z = convert_vec(&y, Form::Linf, Form::Rescaled, &lad);
        let back = convert_vec(&z, Form::Rescaled, Form::L2, &lad);
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300) * 4.0);
        }
        prop_assert_eq!(convert_vec(&x, Form::L2, Form::L2, &lad), x);
    }

    #[test]
    fn transport_terms_conserve_energy(p in params(), seed in state(14)) {
        let lad = build_ladder(p.with_nu(0.0)).unwrap();
        let x = seed[..lad.modes()].to_vec();
        let st = ShellState::new(0.0, Form::L2, x.clone());
        let dx = rhs_l2(&st, &lad, &vec![0.0; lad.modes()]).unwrap();
        let terms: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a * b).collect();
        let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()))
            .max(x.iter().map(|v| v * v).sum::<f64>() * f64::EPSILON);
        let mut sum = CompensatedSum::new(0.0);
        for t in &terms {
            sum.add(*t);
        }
        prop_assert!(sum.value().abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn rescaled_derivative_is_linear_in_the_mask(p in params(), seed in state(14), m in 0.0f64..1.0) {
        let lad = build_ladder(p).unwrap();
        let n = lad.modes();
        let x = ShellState::new(0.0, Form::Rescaled, seed[..n].to_vec());
        let d0 = rhs_rescaled(&x, &lad, &vec![0.0; n]).unwrap();
        let d1 = rhs_rescaled(&x, &lad, &vec![1.0; n]).unwrap();
        let dm = rhs_rescaled(&x, &lad, &vec![m; n]).unwrap();
        for k in 0..n {
            let lerp = d0[k] + m * (d1[k] - d0[k]);
            prop_assert!((dm[k] - lerp).abs() <= 1e-9 * (d0[k].abs() + d1[k].abs() + 1.0));
        }
    }

    #[test]
    fn norm_is_homogeneous(p in params(), seed in state(14), c in -100.0f64..100.0, sigma in 0.0f64..4.0) {
        let lad = build_ladder(p).unwrap();
        let x = seed[..lad.modes()].to_vec();
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (a, _) = besov_norm(&ShellState::new(0.0, Form::L2, x), &lad, sigma).unwrap();
        let (b, _) = besov_norm(&ShellState::new(0.0, Form::L2, cx), &lad, sigma).unwrap();
        prop_assert!((b - c.abs() * a).abs() <= 4.0 * f64::EPSILON * b.max(1e-300));
    }

    #[test]
    fn norm_is_monotone_in_sigma(p in params(), seed in state(14), s1 in 0.0f64..4.0, ds in 0.0f64..2.0) {
        let lad = build_ladder(p).unwrap();
        let st = ShellState::new(0.0, Form::L2, seed[..lad.modes()].to_vec());
        let (a, _) = besov_norm(&st, &lad, s1).unwrap();
        let (b, _) = besov_norm(&st, &lad, s1 + ds).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn cutoff_stays_in_unit_interval(u in -1.0f64..2.0) {
        let v = cutoff(u);
        prop_assert!((0.0..=1.0).contains(&v));
        if u <= 0.5 {
            prop_assert_eq!(v, 1.0);
        }
        if u >= 1.0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn cutoff_is_exactly_one_on_late_half(p in params(), frac in 0.0f64..=1.0) {
        let lad = build_ladder(p).unwrap();
        let spec = ForcingSpec::from_ladder(&lad);
        for k in 0..lad.modes() {
            let t = frac * 0.5 * lad.t_act[k];
            prop_assert_eq!(evaluate_cutoff(&spec, k, t), 1.0);
        }
    }

    #[test]
    fn error_free_transforms(a in -1e10f64..1e10, b in -1e10f64..1e10) {
        let (s, e) = two_sum(a, b);
        prop_assert_eq!(s, a + b);
        let (p, q) = two_prod(a, b);
        prop_assert_eq!(p, a * b);
        // the error terms sit below half an ulp of the rounded results
        prop_assert!(e.abs() <= 0.5 * s.abs() * f64::EPSILON || s == 0.0);
        prop_assert!(q.abs() <= 0.5 * p.abs() * f64::EPSILON || p == 0.0);
    }
}
