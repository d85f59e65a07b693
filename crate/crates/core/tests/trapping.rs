use obukhov_core::barriers::{
    build_barriers, verify_lemma_bounds, BoundFamily, BOUND_TOLERANCE, DEFAULT_GRID,
};
use obukhov_core::integrator::{integrate_backward_galerkin, BackwardOptions, GalerkinMode, IntegratorConfig};
use obukhov_core::ladder::{build_ladder, validate_constraints, LadderParams, ValidationMode};

fn strict(mode: GalerkinMode) -> obukhov_core::Ladder {
    let p = LadderParams::strict_viscous(6);
    build_ladder(match mode {
        GalerkinMode::Inviscid => p.with_nu(0.0),
        GalerkinMode::ViscousMasked => p,
    })
    .unwrap()
}

#[test]
fn strict_set_satisfies_the_viscous_ranges() {
    let lad = strict(GalerkinMode::ViscousMasked);
    let rep = validate_constraints(&lad, ValidationMode::StrictViscous, 0.01);
    assert!(rep.ranges_pass());
    // scale separation at representable N_0 is far from what the ratio condition asks
    assert!(!rep.ratios_pass());
}

#[test]
fn barrier_families_hold_with_positive_margins() {
    let lad = strict(GalerkinMode::ViscousMasked);
    let env = build_barriers(&lad, &IntegratorConfig::default()).unwrap();
    let rep = verify_lemma_bounds(&env, DEFAULT_GRID).unwrap();
    for fam in [
        BoundFamily::UpperBand,
        BoundFamily::ZeroBand,
        BoundFamily::LowerQuarter,
        BoundFamily::LowerGlobal,
    ] {
        assert!(rep.family_passes(fam), "{fam:?}");
    }
    // the top barrier sits on the lower edge of its band by construction
    assert!(rep.lemma_min_margin() >= -BOUND_TOLERANCE);
    for &t in env.times() {
        let top = env.at(t).unwrap().zeta[6];
        let exact = env.top_closed_form(t);
        assert!((top - exact).abs() <= 1e-8 * exact, "t={t:e} {top:e} {exact:e}");
    }
}

#[test]
fn backward_runs_stay_in_the_region() {
    for mode in [GalerkinMode::Inviscid, GalerkinMode::ViscousMasked] {
        let lad = strict(mode);
        let tr = integrate_backward_galerkin(
            &lad,
            &lad.amp,
            &BackwardOptions::new(mode).monitored(),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let log = tr.membership.as_ref().unwrap();
        assert!(!log.escaped(), "{mode:?}: {:?}", log.first_escape);
        assert!(log.min_relative_margin() >= -1e-8);
        assert!(!tr.clamped);
    }
}

#[test]
fn clamped_runs_are_marked() {
    let lad = strict(GalerkinMode::Inviscid);
    let mut opts = BackwardOptions::new(GalerkinMode::Inviscid);
    opts.clamp = true;
    let tr = integrate_backward_galerkin(&lad, &lad.amp, &opts, &IntegratorConfig::default()).unwrap();
    assert!(tr.clamped);
}
