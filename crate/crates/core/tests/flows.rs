use obukhov_core::diagnostics::{energy, truncated_energy};
use obukhov_core::integrator::{
    integrate, integrate_backward_galerkin, roundtrip, switching_times, BackwardOptions,
    GalerkinMode, IntegratorConfig, Method,
};
use obukhov_core::ladder::{build_ladder, Ladder, LadderParams};
use obukhov_core::model::{
    convert_vec, recorded_force, Dissipation, ForcingSpec, Form, L2System, LinfSystem,
    RescaledSystem,
};

fn figure2(k: usize) -> Ladder {
    build_ladder(LadderParams::figure2(k)).unwrap()
}

fn inviscid(params: LadderParams) -> Ladder {
    build_ladder(params.with_nu(0.0)).unwrap()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

#[test]
fn three_normalizations_generate_the_same_flow() {
    let lad = figure2(8);
    let cfg = IntegratorConfig::default();
    let t_end = -lad.horizon;
    let resc = integrate(
        &RescaledSystem::new(&lad, Dissipation::Full),
        Form::Rescaled,
        0.0,
        &lad.amp,
        t_end,
        &cfg,
    )
    .unwrap();
    let x0 = convert_vec(&lad.amp, Form::Rescaled, Form::L2, &lad);
    let l2 = integrate(&L2System::new(&lad), Form::L2, 0.0, &x0, t_end, &cfg).unwrap();
    let y0 = convert_vec(&lad.amp, Form::Rescaled, Form::Linf, &lad);
    let linf = integrate(&LinfSystem::new(&lad), Form::Linf, 0.0, &y0, t_end, &cfg).unwrap();

    let reference = resc.last().unwrap().1.to_vec();
    let from_l2 = convert_vec(l2.last().unwrap().1, Form::L2, Form::Rescaled, &lad);
    let from_linf = convert_vec(linf.last().unwrap().1, Form::Linf, Form::Rescaled, &lad);
    assert!(max_rel(&from_l2, &reference) <= 1e-8);
    assert!(max_rel(&from_linf, &reference) <= 1e-8);
}

#[test]
fn inviscid_energy_drift_is_small_up_to_sixteen_modes() {
    for k in [4, 12, 16] {
        let lad = inviscid(LadderParams::figure2(k));
        let tr = integrate_backward_galerkin(
            &lad,
            &lad.amp,
            &BackwardOptions::new(GalerkinMode::Inviscid),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let rep = energy(&tr, &lad, None).unwrap();
        assert!(rep.max_rel_drift <= 1e-8, "K={k}: {}", rep.max_rel_drift);
        let e0 = truncated_energy(&lad.amp, &lad);
        assert!((rep.energy[0] - e0).abs() <= 1e-14 * e0);
    }
}

#[test]
fn masked_energy_balances_with_the_recorded_force() {
    let lad = figure2(8);
    let spec = ForcingSpec::from_ladder(&lad);
    let sys = RescaledSystem::new(&lad, Dissipation::Cutoff(spec.clone()));
    let cfg = IntegratorConfig::default().with_events(switching_times(&lad));
    let start = integrate_backward_galerkin(
        &lad,
        &lad.amp,
        &BackwardOptions::new(GalerkinMode::ViscousMasked),
        &cfg,
    )
    .unwrap();
    let x0 = start.last().unwrap().1.to_vec();
    let fwd = integrate(&sys, Form::Rescaled, -lad.horizon, &x0, 0.0, &cfg).unwrap();
    let rep = energy(&fwd, &lad, Some(&spec)).unwrap();
    assert!(rep.max_rel_residual < 1e-6, "{}", rep.max_rel_residual);
    // the masked system only dissipates, at rate sum rho_k nu N_k^2 X_k^2
    for w in rep.energy.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
}

#[test]
fn two_mode_inviscid_run_matches_its_closed_form() {
    // X_0 = R tanh(s R (tau - t)), X_1 = R sech(s R (tau - t)) with s = N_0^alpha
    let lad = inviscid(LadderParams::figure2(1));
    let cfg = IntegratorConfig::default();
    let tr = integrate_backward_galerkin(&lad, &lad.amp, &BackwardOptions::new(GalerkinMode::Inviscid), &cfg)
        .unwrap();
    let x = convert_vec(&lad.amp, Form::Rescaled, Form::L2, &lad);
    let r = x[0].hypot(x[1]);
    let s = lad.n_pow(0, lad.params.alpha);
    let tau = (x[0] / r).atanh() / (s * r);
    for (&t, state) in tr.times.iter().zip(&tr.states) {
        let u = s * r * (tau - t);
        let exact = [r * u.tanh(), r / u.cosh()];
        let got = convert_vec(state, Form::Rescaled, Form::L2, &lad);
        for k in 0..2 {
            assert!((got[k] - exact[k]).abs() <= 10.0 * cfg.rel_tol * exact[k], "t={t} k={k}");
        }
    }
}

#[test]
fn single_inviscid_mode_is_stationary() {
    let lad = inviscid(LadderParams::figure2(0));
    let tr = integrate_backward_galerkin(
        &lad,
        &lad.amp,
        &BackwardOptions::new(GalerkinMode::Inviscid),
        &IntegratorConfig::default(),
    )
    .unwrap();
    assert!(tr.states.iter().all(|x| x[0] == lad.amp[0]));
    let rt = roundtrip(&lad, &BackwardOptions::new(GalerkinMode::Inviscid), &IntegratorConfig::default()).unwrap();
    assert_eq!(rt.max_error(), 0.0);
}

#[test]
fn switching_times_are_hit_exactly_and_solution_stays_positive() {
    let lad = figure2(12);
    let tr = integrate_backward_galerkin(
        &lad,
        &lad.amp,
        &BackwardOptions::new(GalerkinMode::ViscousMasked),
        &IntegratorConfig::default(),
    )
    .unwrap();
    assert_eq!(tr.states[0], lad.amp);
    assert_eq!(*tr.times.last().unwrap(), -lad.horizon);
    for t in switching_times(&lad) {
        assert!(tr.times.contains(&t), "missing {t}");
    }
    for w in tr.times.windows(2) {
        assert!(w[1] < w[0]);
    }
    let min = tr.states.iter().flatten().fold(f64::INFINITY, |a, b| a.min(*b));
    assert!(min > 0.0);
}

#[test]
fn backward_state_respects_the_uniform_bound() {
    let lad = figure2(12);
    let tr = integrate_backward_galerkin(
        &lad,
        &lad.amp,
        &BackwardOptions::new(GalerkinMode::ViscousMasked),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let x = tr.last().unwrap().1;
    for k in 3..=12 {
        let bound = 2.0 * lad.amp[k] * (0.5 * lad.amp[k - 1] * lad.t_act[k]).exp();
        assert!(x[k] <= bound, "k={k}");
    }
}

#[test]
fn roundtrip_error_shrinks_with_tolerance() {
    let lad = figure2(10);
    let opts = BackwardOptions::new(GalerkinMode::ViscousMasked);
    let errs: Vec<f64> = [1e-6, 1e-8, 1e-10]
        .iter()
        .map(|&tol| {
            roundtrip(&lad, &opts, &IntegratorConfig::default().with_rel_tol(tol))
                .unwrap()
                .max_error()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] <= 1e-3);
}

#[test]
fn inviscid_backward_forward_involution() {
    let lad = inviscid(LadderParams::figure2(6));
    let cfg = IntegratorConfig::default();
    let rt = roundtrip(&lad, &BackwardOptions::new(GalerkinMode::Inviscid), &cfg).unwrap();
    assert!(rt.max_error() <= 100.0 * cfg.rel_tol, "{}", rt.max_error());
}

#[test]
fn integrating_factor_agrees_with_explicit_pair() {
    let lad = figure2(10);
    let opts = BackwardOptions::new(GalerkinMode::ViscousMasked);
    let a = integrate_backward_galerkin(&lad, &lad.amp, &opts, &IntegratorConfig::default()).unwrap();
    let b = integrate_backward_galerkin(
        &lad,
        &lad.amp,
        &opts,
        &IntegratorConfig::default().with_method(Method::IntegratingFactor),
    )
    .unwrap();
    assert!(max_rel(a.last().unwrap().1, b.last().unwrap().1) < 1e-7);
}

#[test]
fn recorded_force_support_and_low_mode() {
    let lad = figure2(10);
    let spec = ForcingSpec::from_ladder(&lad);
    let tr = integrate_backward_galerkin(
        &lad,
        &lad.amp,
        &BackwardOptions::new(GalerkinMode::ViscousMasked),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let rec = recorded_force(&tr, &lad, &spec).unwrap();
    for (&t, g) in rec.times.iter().zip(&rec.g) {
        assert_eq!(g[0], 0.0);
        for k in 1..=10 {
            if t >= 0.5 * lad.t_act[k] {
                assert_eq!(g[k], 0.0);
            }
        }
    }
    let at_zero = rec.times.iter().position(|t| *t == 0.0).unwrap();
    assert!(rec.g[at_zero].iter().all(|v| *v == 0.0));
}
