//! The named experiments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use obukhov_core::barriers::{
    build_barriers, verify_lemma_bounds, BoundFamily, BoundReport, BOUND_TOLERANCE, DEFAULT_GRID,
};
use obukhov_core::diagnostics::{
    arrival_times, besov_norm_with, blowup_indicator, energy, force_regularity,
    galerkin_convergence, peak_times, BLOWUP_FACTOR,
};
use obukhov_core::integrator::{
    integrate, integrate_backward_galerkin, integrate_until_failure, membership_for, roundtrip,
    switching_times,
    BackwardOptions, GalerkinMode, IntegratorConfig, Trajectory,
};
use obukhov_core::ladder::{
    build_ladder, validate_constraints, ConstraintReport, Ladder, LadderParams, ValidationMode,
};
use obukhov_core::model::{
    convert_vec, recorded_force, Dissipation, ForcingSpec, Form, KatzPavlovicSystem, L2System,
    LinfSystem, RescaledSystem,
};
use rayon::prelude::*;

use crate::config::{Scenario, ScenarioConfig};
use crate::error::{LabError, Result};
use crate::export::export_trajectory;
use crate::report::{
    BlowupResults, BlowupRun, Check, FileEntry, Figure2Results, ForceTable, LemmaResults,
    MembershipSummary, NormSample, Profile, RoundtripResults, ScenarioResults, VariantResults,
    VariantRun,
};
use crate::svg::{Plot, Series};

/// Relative tolerance for the closed-form top barrier.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-8;
/// Smallest admissible trapping margin relative to `A_k`.
pub const TRAPPING_TOLERANCE: f64 = 1e-8;
pub const ROUNDTRIP_TOLERANCE: f64 = 1e-3;
pub const CONJUGACY_TOLERANCE: f64 = 1e-8;
pub const DRIFT_TOLERANCE: f64 = 1e-8;
pub const BALANCE_TOLERANCE: f64 = 1e-6;
/// Galerkin differences on modes `k <= GALERKIN_MODES` must stay below this times `A_k`.
pub const GALERKIN_TOLERANCE: f64 = 1e-6;
pub const GALERKIN_MODES: usize = 4;
const GALERKIN_GRID: usize = 1024;
const FORCE_ORDERS: usize = 4;

/// Output directory, file manifest, and stage timings of one run.
pub struct Context<'a> {
    pub config: &'a ScenarioConfig,
    pub out_dir: PathBuf,
    pub force: bool,
    pub files: Vec<FileEntry>,
    pub timings: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

/// Everything a scenario contributes to the report.
pub struct Outcome {
    pub results: ScenarioResults,
    pub checks: Vec<Check>,
    pub constraints: Option<ConstraintReport>,
    pub bounds: Option<BoundReport>,
    pub membership: Vec<MembershipSummary>,
}

impl Outcome {
    fn new(results: ScenarioResults, checks: Vec<Check>) -> Self {
        Self {
            results,
            checks,
            constraints: None,
            bounds: None,
            membership: Vec::new(),
        }
    }
}

impl<'a> Context<'a> {
    pub fn new(config: &'a ScenarioConfig, out_dir: PathBuf, force: bool) -> Self {
        Self {
            config,
            out_dir,
            force,
            files: Vec::new(),
            timings: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, kind: &str, text: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
        self.files.push(FileEntry {
            path,
            kind: kind.into(),
            bytes: text.len() as u64,
        });
        Ok(())
    }

    fn trajectory(&mut self, stem: &str, traj: &Trajectory, params: &LadderParams) -> Result<()> {
        for &format in &self.config.formats {
            let ext = match format {
                crate::config::Format::Csv => "csv",
                crate::config::Format::Json => "json",
            };
            let path = self.out_dir.join(format!("{stem}.{ext}"));
            let bytes = export_trajectory(traj, params, Some(self.config), &path, format)?;
            self.files.push(FileEntry {
                path,
                kind: format!("trajectory-{ext}"),
                bytes,
            });
        }
        Ok(())
    }

    fn plot(&mut self, name: &str, plot: &Plot) -> Result<()> {
        if self.config.plots {
            self.write(name, "plot-svg", &plot.render())?;
        }
        Ok(())
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    fn backward_options(&self, mode: GalerkinMode) -> BackwardOptions {
        BackwardOptions {
            force: self.force || self.config.force,
            ..BackwardOptions::new(mode)
        }
    }
}

pub fn execute(ctx: &mut Context<'_>, params: LadderParams) -> Result<Outcome> {
    match ctx.config.scenario {
        Scenario::Figure2 => figure2(ctx, params),
        Scenario::InviscidBlowup => blowup(ctx, params, false),
        Scenario::ViscousBlowup => blowup(ctx, params, true),
        Scenario::LemmaVerify => lemma(ctx, params),
        Scenario::Roundtrip => roundtrip_scenario(ctx, params),
        Scenario::GalerkinStudy => galerkin(ctx, params),
        Scenario::VariantCompare => variants(ctx, params),
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn to_l2(traj: &Trajectory, ladder: &Ladder) -> Trajectory {
    let mut out = Trajectory::new(Form::L2);
    out.times = traj.times.clone();
    out.states = traj
        .states
        .iter()
        .map(|x| convert_vec(x, traj.form, Form::L2, ladder))
        .collect();
    out.stats = traj.stats;
    out
}

/// `{-T, t_3, t_5, ...} ∪ {0}`, increasing.
pub fn default_snapshots(ladder: &Ladder) -> Vec<f64> {
    let mut times = vec![-ladder.horizon];
    times.extend(
        (3..=ladder.k_max())
            .step_by(2)
            .map(|k| ladder.t_act[k])
            .filter(|&t| t > -ladder.horizon),
    );
    times.push(0.0);
    times
}

fn figure2(ctx: &mut Context<'_>, params: LadderParams) -> Result<Outcome> {
    let cfg = ctx.config;
    let lad = build_ladder(params)?;
    let kk = lad.k_max();
    let mode = cfg.galerkin_mode(&params);
    let (times, default_snapshots) = match &cfg.snapshot_times {
        Some(list) => {
            let mut t = list.clone();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t.dedup();
            if t.last() != Some(&0.0) {
                t.push(0.0);
            }
            if t[0] < -lad.horizon {
                return Err(LabError::Config(format!(
                    "snapshot time {:e} lies before -T = {:e}",
                    t[0], -lad.horizon
                )));
            }
            (t, false)
        }
        None => (default_snapshots(&lad), true),
    };
    if default_snapshots {
        ctx.notes.push(
            "snapshot times default to {-T, t_3, t_5, ...} and 0; the figure's own times and \
             truncation level are not given, so these are a choice of this tool"
                .into(),
        );
    }

    let opts = ctx.backward_options(mode);
    let icfg = cfg
        .integrator
        .clone()
        .with_events(times.iter().copied().filter(|&t| t > -lad.horizon && t < 0.0));
    let traj = ctx.timed("backward", || {
        integrate_backward_galerkin(&lad, &lad.amp, &opts, &icfg)
    })?;

    let profiles: Vec<Profile> = times
        .iter()
        .map(|&t| {
            let x = traj.state_at(t).expect("snapshot inside the run");
            Profile {
                t,
                y: convert_vec(&x, Form::Rescaled, Form::Linf, &lad),
            }
        })
        .collect();
    let terminal = profiles.last().expect("0 is always a snapshot");
    let expected: Vec<f64> = (0..=kk).map(|k| lad.n_pow(k, params.beta - 1.0)).collect();
    let s = params.s;
    let x0_l2 = convert_vec(&lad.amp, Form::Rescaled, Form::L2, &lad);
    let terminal_norm_by_truncation = (0..=kk)
        .map(|k| besov_norm_with(&x0_l2[..=k], &lad.n[..=k], s).map(|v| v.0))
        .collect::<obukhov_core::Result<Vec<f64>>>()?;

    let mut checks = Vec::new();
    let terminal_err = max_rel(&terminal.y, &expected);
    checks.push(Check::gated(
        "terminal-profile-exact",
        terminal.t == 0.0 && terminal_err <= 8.0 * f64::EPSILON,
        format!("max relative deviation from N_k^(beta-1): {terminal_err:.3e}"),
    ));
    let earlier = &profiles[..profiles.len() - 1];
    let top_ratios: Vec<f64> = earlier.iter().map(|p| p.y[kk] / terminal.y[kk]).collect();
    checks.push(Check::gated(
        "earlier-profiles-below-terminal-at-top-mode",
        top_ratios.iter().all(|r| *r < 1.0),
        format!(
            "largest Y_K(t)/Y_K(0) over earlier snapshots: {:.3e}",
            top_ratios.iter().copied().fold(0.0, f64::max)
        ),
    ));
    let (worst_ratio, worst_k, worst_t) = earlier
        .iter()
        .flat_map(|p| {
            p.y.iter()
                .zip(&terminal.y)
                .enumerate()
                .map(move |(k, (a, b))| (a / b, k, p.t))
        })
        .fold((0.0, 0, 0.0), |m, v| if v.0 > m.0 { v } else { m });
    checks.push(Check::info(
        "earlier-profiles-pointwise-below-terminal",
        worst_ratio < 1.0,
        format!("largest Y_k(t)/Y_k(0) = {worst_ratio:.3e} at k = {worst_k}, t = {worst_t:.4e}"),
    ));
    let mut tails_ok = true;
    let mut tail_detail = String::new();
    for p in earlier {
        let w: Vec<f64> = (0..=kk)
            .map(|k| lad.n_pow(k, 2.0) * p.y[k] * lad.n_pow(k, 1.0 - params.alpha))
            .collect();
        let crest = (1..=kk).rev().find(|&k| w[k - 1] <= w[k]).unwrap_or(0);
        let ok = crest < kk;
        tails_ok &= ok;
        let _ = write!(
            tail_detail,
            "t={:.3e}: falls from k={crest}{} ",
            p.t,
            if ok { "" } else { " (rising at K)" }
        );
    }
    checks.push(Check::gated(
        "weighted-profiles-bounded-in-k",
        tails_ok,
        format!("N_k^2 X_k decreases over the top of the ladder: {}", tail_detail.trim_end()),
    ));
    checks.push(Check::gated(
        "terminal-norm-grows-with-truncation",
        strictly_increasing(&terminal_norm_by_truncation),
        format!(
            "C^{s} norm of the terminal profile for K' = 0..{kk}: {:.4e} .. {:.4e}",
            terminal_norm_by_truncation[0], terminal_norm_by_truncation[kk]
        ),
    ));
    let mut membership = Vec::new();
    let monitored = ctx.timed("membership", || {
        membership_for(&traj, &lad, &mode.dissipation(&lad), &cfg.integrator)
    });
    match monitored {
        Ok(log) => {
            checks.push(Check::info(
                "stays-in-trapping-region",
                !log.escaped(),
                format!("min relative margin {:.3e}", log.min_relative_margin()),
            ));
            membership.push(MembershipSummary::new(format!("{mode:?}"), &log));
        }
        Err(e) => checks.push(Check::info(
            "stays-in-trapping-region",
            false,
            format!("barriers unavailable on [-T, 0]: {e}"),
        )),
    }

    ctx.trajectory("trajectory", &traj, &params)?;
    let mut table = String::from("k,N_k");
    for p in &profiles {
        let _ = write!(table, ",Y(t={:e})", p.t);
    }
    table.push('\n');
    for k in 0..=kk {
        let _ = write!(table, "{k},{:e}", lad.n[k]);
        for p in &profiles {
            let _ = write!(table, ",{:e}", p.y[k]);
        }
        table.push('\n');
    }
    ctx.write("profiles.csv", "table-csv", &table)?;
    let mut plot = Plot::new("Y_k(t) at snapshot times", "N_k", "Y_k").log_x().log_y();
    for p in earlier {
        plot.push(Series::new(
            format!("t = {:.4}", p.t),
            lad.n.iter().copied().zip(p.y.iter().copied()).collect(),
        ));
    }
    plot.push(
        Series::new(
            "t = 0 (profile)",
            lad.n.iter().copied().zip(terminal.y.iter().copied()).collect(),
        )
        .color("black")
        .width(2.5),
    );
    ctx.plot("profiles.svg", &plot)?;

    let mut out = Outcome::new(
        ScenarioResults::Figure2(Figure2Results {
            mode,
            snapshot_times: times,
            default_snapshots,
            frequencies: lad.n.clone(),
            profiles,
            terminal_norm_by_truncation,
            stats: traj.stats,
        }),
        checks,
    );
    out.membership = membership;
    Ok(out)
}

struct BlowupRunData {
    run: BlowupRun,
    forward: Trajectory,
    force: Option<ForceTable>,
}

fn blowup_run(
    lad: &Ladder,
    mode: GalerkinMode,
    opts: &BackwardOptions,
    icfg: &IntegratorConfig,
    sigmas: &[f64],
    with_force: bool,
) -> Result<BlowupRunData> {
    let backward = integrate_backward_galerkin(lad, &lad.amp, opts, icfg)?;
    let (_, start) = backward.last().ok_or(obukhov_core::Error::EmptyTrajectory)?;
    let dissipation = mode.dissipation(lad);
    let sys = RescaledSystem::new(lad, dissipation.clone());
    let t_end = 0.05 * lad.horizon;
    let mut cfg = icfg.clone().with_events(switching_times(lad));
    cfg.event_times.push(0.0);
    let (forward, failure) =
        integrate_until_failure(&sys, Form::Rescaled, -lad.horizon, start, t_end, &cfg);
    let reached = forward.times.last().copied().unwrap_or(-lad.horizon);
    let at_zero = match (forward.index_of(0.0), &failure) {
        (Some(i), _) => i,
        (None, Some(e)) => return Err(e.clone().into()),
        (None, None) => return Err(obukhov_core::Error::EmptyTrajectory.into()),
    };
    let l2 = to_l2(&forward, lad);
    let blowup = blowup_indicator(&l2, &lad.n, lad.params.s, BLOWUP_FACTOR, failure.as_ref())?;
    let (terminal_norm, _) = besov_norm_with(&l2.states[at_zero], &lad.n, lad.params.s)?;
    let norms = [0, at_zero, l2.len() - 1]
        .iter()
        .map(|&i| {
            let values = sigmas
                .iter()
                .map(|&s| besov_norm_with(&l2.states[i], &lad.n, s).map(|v| v.0))
                .collect::<obukhov_core::Result<Vec<f64>>>()?;
            Ok(NormSample {
                t: l2.times[i],
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = match &dissipation {
        Dissipation::Cutoff(spec) => Some(spec.clone()),
        _ => None,
    };
    let balance = energy(&forward, lad, spec.as_ref())?;
    let force = match (&spec, with_force) {
        (Some(spec), true) => {
            let record = recorded_force(&backward, lad, spec)?;
            let mut force_sigmas = sigmas.to_vec();
            force_sigmas.push(2.0);
            force_sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            force_sigmas.dedup();
            Some(ForceTable {
                weighted_sup: record.weighted_sup(lad, 2.0),
                regularity: force_regularity(&record, lad, &force_sigmas, FORCE_ORDERS)?,
            })
        }
        _ => None,
    };
    Ok(BlowupRunData {
        run: BlowupRun {
            k_max: lad.k_max(),
            t_end,
            reached,
            failure: failure.map(|e| e.to_string()),
            terminal_norm,
            blowup,
            norms,
            max_rel_drift: balance.max_rel_drift,
            max_rel_residual: balance.max_rel_residual,
            stats: forward.stats,
        },
        forward,
        force,
    })
}

fn blowup(ctx: &mut Context<'_>, params: LadderParams, viscous: bool) -> Result<Outcome> {
    let cfg = ctx.config;
    let params = if viscous {
        if params.nu <= 0.0 {
            return Err(LabError::Config("viscous-blowup needs nu > 0".into()));
        }
        params
    } else {
        if params.nu != 0.0 {
            ctx.notes.push(format!("nu = {} replaced by 0 for the inviscid run", params.nu));
        }
        params.with_nu(0.0)
    };
    let lad = build_ladder(params)?;
    let kk = lad.k_max();
    let mut ks = cfg
        .k_list
        .clone()
        .unwrap_or_else(|| [4, 8, 12].into_iter().filter(|&k| k < kk).chain([kk]).collect());
    ks.sort_unstable();
    ks.dedup();
    if let Some(&k) = ks.iter().find(|&&k| k > kk) {
        return Err(LabError::Config(format!("k_list entry {k} exceeds K = {kk}")));
    }
    let mode = if viscous {
        GalerkinMode::ViscousMasked
    } else {
        GalerkinMode::Inviscid
    };
    let opts = ctx.backward_options(mode);
    let sigmas = cfg.sigmas.clone();
    let icfg = cfg.integrator.clone();
    let top = *ks.last().expect("k_list is nonempty");
    let mut data = ctx.timed("runs", || {
        ks.par_iter()
            .map(|&k| {
                let sub = lad.retruncate(k)?;
                blowup_run(&sub, mode, &opts, &icfg, &sigmas, viscous && k == top)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    ctx.notes.push(
        "each truncation is a finite-dimensional system whose energy cannot grow without \
         forcing, so continuation past t = 0 stays finite; blow-up shows as growth of the \
         terminal C^s norm with K"
            .into(),
    );

    let mut checks = Vec::new();
    let norms: Vec<f64> = data.iter().map(|d| d.run.terminal_norm).collect();
    checks.push(Check::gated(
        "terminal-norm-grows-with-truncation",
        strictly_increasing(&norms),
        format!("C^{} norm at t = 0 for K in {ks:?}: {}", params.s, sci(&norms)),
    ));
    if viscous {
        let worst = data.iter().map(|d| d.run.max_rel_residual).fold(0.0, f64::max);
        checks.push(Check::gated(
            "energy-balance-with-recorded-force",
            worst <= BALANCE_TOLERANCE,
            format!("max relative residual {worst:.3e}"),
        ));
    } else {
        let worst = data.iter().map(|d| d.run.max_rel_drift).fold(0.0, f64::max);
        checks.push(Check::gated(
            "energy-conserved",
            worst <= DRIFT_TOLERANCE,
            format!("max relative drift {worst:.3e}"),
        ));
    }
    let any = data.iter().find(|d| d.run.blowup.blown_up);
    checks.push(Check::info(
        "blow-up-detected-past-zero",
        any.is_some(),
        match any {
            Some(d) => format!("K = {} at t = {:?}", d.run.k_max, d.run.blowup.t_detect),
            None => format!(
                "peak/start C^s ratio at K = {top}: {:.3e}",
                data.last().map_or(0.0, |d| d.run.blowup.peak_norm / d.run.blowup.start_norm)
            ),
        },
    ));

    let force = data.last_mut().and_then(|d| d.force.take());
    if let Some(ft) = &force {
        let support = ft.regularity.support_ok.iter().all(|b| *b);
        checks.push(Check::gated(
            "force-vanishes-after-half-activation",
            support,
            format!("exact zeros on [t_k/2, 0]: {:?}", ft.regularity.support_ok),
        ));
        let tail = &ft.weighted_sup[3.min(ft.weighted_sup.len())..];
        checks.push(Check::info(
            "force-decreasing-in-k",
            tail.windows(2).all(|w| w[1] < w[0]),
            format!("sup_t N_k^2 |f_k| for k >= 3: {}", sci(tail)),
        ));
        let mut table = String::from("k,sup_N2_f");
        for j in 0..=ft.regularity.max_order {
            for s in &ft.regularity.sigmas {
                let _ = write!(table, ",d{j}_sigma{s}");
            }
        }
        table.push('\n');
        for k in 0..ft.weighted_sup.len() {
            let _ = write!(table, "{k},{:e}", ft.weighted_sup[k]);
            for j in 0..=ft.regularity.max_order {
                for si in 0..ft.regularity.sigmas.len() {
                    let _ = write!(table, ",{:e}", ft.regularity.row(j, si)[k]);
                }
            }
            table.push('\n');
        }
        ctx.write("force.csv", "table-csv", &table)?;
    }

    let top_run = data.last().expect("k_list is nonempty");
    ctx.trajectory("trajectory", &top_run.forward, &params)?;
    let mut plot = Plot::new(format!("C^{} norm along the forward run", params.s), "t", "norm").log_y();
    for d in &data {
        let sub = lad.retruncate(d.run.k_max)?;
        let pts = d
            .forward
            .times
            .iter()
            .zip(&d.forward.states)
            .map(|(&t, x)| {
                let l2 = convert_vec(x, Form::Rescaled, Form::L2, &sub);
                besov_norm_with(&l2, &sub.n, params.s).map(|v| (t, v.0))
            })
            .collect::<obukhov_core::Result<Vec<_>>>()?;
        plot.push(Series::new(format!("K = {}", d.run.k_max), pts));
    }
    ctx.plot("norms.svg", &plot)?;

    Ok(Outcome::new(
        ScenarioResults::Blowup(BlowupResults {
            viscous,
            sigmas: cfg.sigmas.clone(),
            runs: data.into_iter().map(|d| d.run).collect(),
            force,
        }),
        checks,
    ))
}

fn lemma(ctx: &mut Context<'_>, params: LadderParams) -> Result<Outcome> {
    let cfg = ctx.config;
    let lad = build_ladder(params)?;
    let kk = lad.k_max();
    let vmode = cfg.validation_mode(&params);
    let constraints = validate_constraints(&lad, vmode, cfg.epsilon);
    let mut checks = vec![Check::gated(
        "parameter-ranges",
        constraints.ranges_pass(),
        failures_detail(constraints.ranges.iter()),
    )];
    if vmode != ValidationMode::Illustrative {
        checks.push(Check::info(
            "ratio-condition",
            constraints.ratios_pass(),
            failures_detail(constraints.ratios.iter()),
        ));
        checks.push(Check::info(
            "smallness-conditions",
            constraints.smallness_pass(),
            failures_detail(constraints.smallness.iter()),
        ));
    }

    let icfg = cfg.integrator.clone();
    let grid = cfg.grid_points.unwrap_or(DEFAULT_GRID);
    let (env, bounds) = ctx.timed("barriers", || -> Result<_> {
        let env = build_barriers(&lad, &icfg)?;
        let bounds = verify_lemma_bounds(&env, grid)?;
        Ok((env, bounds))
    })?;
    for family in [
        BoundFamily::UpperBand,
        BoundFamily::ZeroBand,
        BoundFamily::LowerQuarter,
        BoundFamily::LowerGlobal,
        BoundFamily::BoundarySlack,
        BoundFamily::ViscousBoundary,
    ] {
        let worst = bounds
            .checks
            .iter()
            .filter(|c| c.family == family)
            .map(|c| c.worst_margin)
            .fold(f64::INFINITY, f64::min);
        let name = format!("barrier-{}", family_name(family));
        let detail = format!("worst relative margin {worst:.3e}");
        let passed = bounds.family_passes(family);
        checks.push(if family.is_lemma_family() {
            Check::gated(&name, passed, detail)
        } else {
            Check::info(&name, passed, detail)
        });
    }
    let min_margin = bounds.lemma_min_margin();
    checks.push(Check::gated(
        "barrier-margins-nonnegative",
        min_margin >= -BOUND_TOLERANCE,
        format!("smallest margin over the four families {min_margin:.3e} (tolerance {BOUND_TOLERANCE:e})"),
    ));

    let mut top_err: f64 = 0.0;
    for &t in env.times() {
        let sample = env.at(t).expect("barrier sample at its own time");
        let exact = env.top_closed_form(t);
        top_err = top_err.max((sample.zeta[kk] - exact).abs() / exact);
    }
    checks.push(Check::gated(
        "top-barrier-closed-form",
        top_err <= CLOSED_FORM_TOLERANCE,
        format!("max relative error {top_err:.3e} over {} samples", env.times().len()),
    ));

    let force = ctx.force || cfg.force;
    let traps = ctx.timed("trapping", || {
        [GalerkinMode::Inviscid, GalerkinMode::ViscousMasked]
            .par_iter()
            .map(|&mode| {
                let sub = match mode {
                    GalerkinMode::Inviscid => build_ladder(params.with_nu(0.0))?,
                    GalerkinMode::ViscousMasked => lad.clone(),
                };
                let opts = BackwardOptions {
                    force,
                    ..BackwardOptions::new(mode).monitored()
                };
                let tr = integrate_backward_galerkin(&sub, &sub.amp, &opts, &icfg)?;
                Ok((mode, tr))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut membership = Vec::new();
    for (mode, tr) in &traps {
        let log = tr.membership.as_ref().expect("monitored run");
        let name = match mode {
            GalerkinMode::Inviscid => "trapping-inviscid",
            GalerkinMode::ViscousMasked => "trapping-viscous-masked",
        };
        checks.push(Check::gated(
            name,
            !log.escaped() && log.min_relative_margin() >= -TRAPPING_TOLERANCE,
            format!(
                "min relative margin {:.3e} over {} snapshots",
                log.min_relative_margin(),
                log.times.len()
            ),
        ));
        membership.push(MembershipSummary::new(name, log));
    }

    let mut table = String::from("t");
    for k in 0..=kk {
        let _ = write!(table, ",zeta_{k}");
    }
    for k in 0..=kk {
        let _ = write!(table, ",eta_{k}");
    }
    table.push('\n');
    let mut plot = Plot::new("barriers", "t", "zeta_k, eta_k").log_y();
    let mut zeta_pts = vec![Vec::new(); kk + 1];
    let mut eta_pts = vec![Vec::new(); kk + 1];
    for &t in env.times() {
        let s = env.at(t).expect("barrier sample at its own time");
        let _ = write!(table, "{t:e}");
        for v in s.zeta.iter().chain(&s.eta) {
            let _ = write!(table, ",{v:e}");
        }
        table.push('\n');
        for k in 0..=kk {
            zeta_pts[k].push((t, s.zeta[k]));
            eta_pts[k].push((t, s.eta[k]));
        }
    }
    ctx.write("barriers.csv", "table-csv", &table)?;
    for (k, (z, e)) in zeta_pts.into_iter().zip(eta_pts).enumerate() {
        plot.push(Series::new(format!("zeta_{k}"), z));
        plot.push(Series::new(format!("eta_{k}"), e).width(0.8));
    }
    ctx.plot("barriers.svg", &plot)?;
    for (mode, tr) in &traps {
        let stem = match mode {
            GalerkinMode::Inviscid => "backward_inviscid",
            GalerkinMode::ViscousMasked => "backward_viscous_masked",
        };
        ctx.trajectory(stem, tr, &params)?;
    }

    let mut out = Outcome::new(
        ScenarioResults::Lemma(LemmaResults {
            top_closed_form_max_rel_error: top_err,
            barrier_samples: env.times().len(),
        }),
        checks,
    );
    out.constraints = Some(constraints);
    out.bounds = Some(bounds);
    out.membership = membership;
    Ok(out)
}

fn family_name(f: BoundFamily) -> &'static str {
    match f {
        BoundFamily::UpperBand => "upper-band",
        BoundFamily::ZeroBand => "zero-band",
        BoundFamily::LowerQuarter => "lower-quarter",
        BoundFamily::LowerGlobal => "lower-global",
        BoundFamily::BoundarySlack => "boundary-slack",
        BoundFamily::ViscousBoundary => "viscous-boundary",
    }
}

fn failures_detail<'a>(
    checks: impl Iterator<Item = &'a obukhov_core::ladder::ConstraintCheck>,
) -> String {
    let failed: Vec<String> = checks
        .filter(|c| !c.passed)
        .map(|c| format!("{} (margin {:.3e})", c.name, c.margin))
        .collect();
    if failed.is_empty() {
        "all hold".into()
    } else {
        format!("failing: {}", failed.join("; "))
    }
}

/// Largest relative difference at `-T` between the energy-form and sup-form
/// runs and the rescaled run, all from the same terminal data.
pub fn form_conjugacy(params: LadderParams, config: &IntegratorConfig) -> Result<(f64, f64)> {
    let lad = build_ladder(params)?;
    let t_end = -lad.horizon;
    let run = |sys: &dyn obukhov_core::integrator::OdeSystem, form: Form| {
        let y0 = convert_vec(&lad.amp, Form::Rescaled, form, &lad);
        let tr = integrate(sys, form, 0.0, &y0, t_end, config)?;
        let (_, last) = tr.last().ok_or(obukhov_core::Error::EmptyTrajectory)?;
        Ok::<_, LabError>(convert_vec(last, form, Form::Rescaled, &lad))
    };
    let (reference, (l2, linf)) = rayon::join(
        || run(&RescaledSystem::new(&lad, Dissipation::Full), Form::Rescaled),
        || {
            rayon::join(
                || run(&L2System::new(&lad), Form::L2),
                || run(&LinfSystem::new(&lad), Form::Linf),
            )
        },
    );
    let reference = reference?;
    Ok((max_rel(&l2?, &reference), max_rel(&linf?, &reference)))
}

fn roundtrip_scenario(ctx: &mut Context<'_>, params: LadderParams) -> Result<Outcome> {
    let cfg = ctx.config;
    let lad = build_ladder(params)?;
    let mode = cfg.galerkin_mode(&params);
    let opts = ctx.backward_options(mode);
    let icfg = cfg.integrator.clone();
    let rt = ctx.timed("roundtrip", || roundtrip(&lad, &opts, &icfg))?;
    let conj_params = params.with_k_max(cfg.conjugacy_k);
    let (conj_l2, conj_linf) = ctx.timed("conjugacy", || form_conjugacy(conj_params, &icfg))?;
    let defect = match mode {
        GalerkinMode::Inviscid => energy(&rt.backward, &lad, None)?.max_rel_drift,
        GalerkinMode::ViscousMasked => {
            energy(&rt.backward, &lad, Some(&ForcingSpec::from_ladder(&lad)))?.max_rel_residual
        }
    };
    let max_err = rt.max_error();
    let checks = vec![
        Check::gated(
            "terminal-error",
            max_err <= ROUNDTRIP_TOLERANCE,
            format!("max_k |x_k(0) - A_k| / A_k = {max_err:.3e}"),
        ),
        Check::gated(
            "form-conjugacy",
            conj_l2.max(conj_linf) <= CONJUGACY_TOLERANCE,
            format!(
                "K = {}: energy form {conj_l2:.3e}, sup form {conj_linf:.3e} relative to the rescaled run",
                cfg.conjugacy_k
            ),
        ),
        Check::info(
            "backward-energy-balance",
            defect <= BALANCE_TOLERANCE,
            format!("{defect:.3e}"),
        ),
    ];
    ctx.trajectory("backward", &rt.backward, &params)?;
    ctx.trajectory("forward", &rt.forward, &params)?;
    let mut plot = Plot::new("round-trip terminal error", "k", "|x_k(0) - A_k| / A_k").log_y();
    plot.push(
        Series::new(
            "relative error",
            rt.terminal_error.iter().enumerate().map(|(k, e)| (k as f64, *e)).collect(),
        )
        .with_markers(),
    );
    ctx.plot("terminal_error.svg", &plot)?;
    Ok(Outcome::new(
        ScenarioResults::Roundtrip(RoundtripResults {
            mode,
            max_terminal_error: max_err,
            terminal_error: rt.terminal_error.clone(),
            backward_stats: rt.backward.stats,
            forward_stats: rt.forward.stats,
            backward_energy_defect: defect,
            conjugacy_k: cfg.conjugacy_k,
            conjugacy_l2: conj_l2,
            conjugacy_linf: conj_linf,
        }),
        checks,
    ))
}

fn galerkin(ctx: &mut Context<'_>, params: LadderParams) -> Result<Outcome> {
    let cfg = ctx.config;
    let lad = build_ladder(params)?;
    let ks = cfg.k_list.clone().unwrap_or_else(|| vec![8, 10, 12]);
    if let Some(&k) = ks.iter().find(|&&k| k > lad.k_max()) {
        return Err(LabError::Config(format!("k_list entry {k} exceeds K = {}", lad.k_max())));
    }
    let mode = cfg.galerkin_mode(&params);
    let opts = ctx.backward_options(mode);
    let icfg = cfg.integrator.clone();
    let grid = cfg.grid_points.unwrap_or(GALERKIN_GRID);
    let rep = ctx.timed("truncations", || galerkin_convergence(&lad, &ks, &opts, &icfg, grid))?;
    let low = (GALERKIN_MODES + 1).min(rep.compared_modes);
    let worst = rep
        .pairs
        .iter()
        .flat_map(|p| p.relative[..low].iter().copied())
        .fold(0.0, f64::max);
    let checks = vec![Check::gated(
        "low-modes-agree-across-truncations",
        worst <= GALERKIN_TOLERANCE,
        format!("max over pairs and k <= {} of sup_t |x_k^K - x_k^K'| / A_k = {worst:.3e}", low - 1),
    )];
    let mut table = String::from("k_low,k_high,k,sup_diff,relative\n");
    let mut plot = Plot::new("truncation differences", "k", "sup_t |x_k^K - x_k^K'| / A_k").log_y();
    for p in &rep.pairs {
        for k in 0..p.relative.len() {
            let _ = writeln!(table, "{},{},{k},{:e},{:e}", p.k_low, p.k_high, p.sup_diff[k], p.relative[k]);
        }
        plot.push(
            Series::new(
                format!("K = {} vs {}", p.k_low, p.k_high),
                p.relative.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect(),
            )
            .with_markers(),
        );
    }
    ctx.write("galerkin.csv", "table-csv", &table)?;
    ctx.plot("galerkin.svg", &plot)?;
    Ok(Outcome::new(ScenarioResults::Galerkin(rep), checks))
}

fn variants(ctx: &mut Context<'_>, params: LadderParams) -> Result<Outcome> {
    let cfg = ctx.config;
    let v = cfg.variant;
    let lad = build_ladder(params)?;
    let mode = cfg.galerkin_mode(&params);
    let opts = ctx.backward_options(mode);
    let icfg = cfg.integrator.clone();
    let n = v.k_max + 1;
    let mut x0 = vec![0.0; n];
    x0[0] = 1.0;
    let level = vec![1.0; n];

    let comparison = |sys: &dyn obukhov_core::integrator::OdeSystem| -> Result<Trajectory> {
        let (tr, failure) = integrate_until_failure(sys, Form::L2, 0.0, &x0, v.t_end, &icfg);
        match failure {
            Some(e) => Err(e.into()),
            None => Ok(tr),
        }
    };
    let (kp, (geo, sup)) = ctx.timed("runs", || {
        rayon::join(
            || {
                let sys = KatzPavlovicSystem::new(v.k_max, v.lambda, params.nu, params.alpha)?;
                comparison(&sys)
            },
            || {
                rayon::join(
                    || {
                        let freq: Vec<f64> = (0..n).map(|k| v.lambda.powi(k as i32)).collect();
                        comparison(&L2System::with_frequencies(&freq, params.nu, params.alpha))
                    },
                    || roundtrip(&lad, &opts, &icfg),
                )
            },
        )
    });
    let (kp, geo, sup) = (kp?, geo?, sup?);

    let kp_run = VariantRun {
        name: "katz-pavlovic".into(),
        arrival: arrival_times(&kp, &level, v.arrival_level),
        peaks: peak_times(&kp),
        stats: kp.stats,
    };
    let geo_change = geo
        .states
        .iter()
        .flat_map(|x| x.iter().zip(&x0).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let geo_run = VariantRun {
        name: "geometric-obukhov".into(),
        arrival: arrival_times(&geo, &level, v.arrival_level),
        peaks: peak_times(&geo),
        stats: geo.stats,
    };
    let (_, start) = sup.backward.last().ok_or(obukhov_core::Error::EmptyTrajectory)?;
    let late_modes: Vec<usize> = (0..lad.modes())
        .filter(|&k| start[k] < v.arrival_fraction * lad.amp[k])
        .collect();
    let sup_run = VariantRun {
        name: "super-exponential-obukhov".into(),
        arrival: arrival_times(&sup.forward, &lad.amp, v.arrival_fraction),
        peaks: peak_times(&sup.forward),
        stats: sup.forward.stats,
    };

    let mut checks = Vec::new();
    let kp_arrivals: Option<Vec<f64>> = kp_run.arrival.iter().copied().collect();
    checks.push(Check::gated(
        "katz-pavlovic-front-moves-upward",
        kp_arrivals.as_deref().is_some_and(strictly_increasing),
        format!("first times X_k >= {:e}: {:.4?}", v.arrival_level, kp_run.arrival),
    ));
    checks.push(Check::info(
        "katz-pavlovic-peaks-ordered",
        strictly_increasing(&kp_run.peaks[1..]),
        format!("peak times {:.4?}", kp_run.peaks),
    ));
    checks.push(Check::gated(
        "geometric-obukhov-stays-put",
        geo_change == 0.0,
        format!("largest change from the initial data {geo_change:e}"),
    ));
    let tail_ok = !late_modes.is_empty()
        && late_modes.windows(2).all(|w| w[1] == w[0] + 1)
        && late_modes.last() == Some(&lad.k_max());
    let late_arrivals: Option<Vec<f64>> = late_modes.iter().map(|&k| sup_run.arrival[k]).collect();
    let ordered = late_arrivals
        .as_deref()
        .is_some_and(|a| strictly_increasing(a) && a.iter().all(|&t| t > -lad.horizon));
    checks.push(Check::gated(
        "super-exponential-arrivals-ordered",
        tail_ok && ordered,
        format!(
            "modes {late_modes:?} start below {} A_k at -T and arrive at {:.4?}",
            v.arrival_fraction, late_arrivals
        ),
    ));

    ctx.trajectory("katz_pavlovic", &kp, &params)?;
    ctx.trajectory("super_exponential", &sup.forward, &params)?;
    let mut plot = Plot::new("arrival times", "k", "t");
    let pts = |run: &VariantRun, shift: f64| -> Vec<(f64, f64)> {
        run.arrival
            .iter()
            .enumerate()
            .filter_map(|(k, t)| t.map(|t| (k as f64, t - shift)))
            .collect()
    };
    plot.push(Series::new("KP (t)", pts(&kp_run, 0.0)).with_markers());
    plot.push(Series::new("super-exp (t + T)", pts(&sup_run, -lad.horizon)).with_markers());
    ctx.plot("arrivals.svg", &plot)?;

    Ok(Outcome::new(
        ScenarioResults::Variants(VariantResults {
            katz_pavlovic: kp_run,
            geometric_obukhov: geo_run,
            geometric_max_change: geo_change,
            super_exponential: sup_run,
            late_modes,
        }),
        checks,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_snapshots_start_at_minus_horizon_and_end_at_zero() {
        let lad = build_ladder(LadderParams::figure2(12)).unwrap();
        let t = default_snapshots(&lad);
        assert_eq!(t[0], -lad.horizon);
        assert_eq!(*t.last().unwrap(), 0.0);
        assert_eq!(t[1], lad.t_act[3]);
        assert!(strictly_increasing(&t));
        assert_eq!(t.len(), 2 + 5);
    }

    #[test]
    fn conjugacy_is_tight_on_a_small_ladder() {
        let (a, b) = form_conjugacy(LadderParams::figure2(4), &IntegratorConfig::default()).unwrap();
        assert!(a <= CONJUGACY_TOLERANCE && b <= CONJUGACY_TOLERANCE, "{a} {b}");
    }

    #[test]
    fn increasing_means_strictly() {
        assert!(strictly_increasing(&[1.0, 2.0]));
        assert!(!strictly_increasing(&[1.0, 1.0]));
        assert!(strictly_increasing(&[]));
    }
}
