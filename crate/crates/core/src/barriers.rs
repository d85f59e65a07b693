//! Upper and lower barrier functions of the trapping region, checks of their
//! analytic bounds, and trajectory membership monitoring.
//!
//! The upper barriers solve, backward from `zeta_k(0) = A_k`,
//! `zeta_k' = A_{k-1} zeta_k / 2 - delta_k zeta_{k+1}^2` on `[t_k, 0]` and
//! `zeta_k' = 0` before `t_k`, with `zeta_0' = -nu N_0^2 zeta_0 - delta_0 zeta_1^2`.
//! The lower barriers are `eta_k = A_k exp(-I_k)` with `I_k(t) = int_t^0 zeta_{k-1}`,
//! carried as extra state components so they share the stepper's accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorConfig, LinearSplit, Method, OdeSystem, Trajectory};
use crate::ladder::Ladder;
use crate::model::{evaluate_cutoff, Dissipation, ForcingSpec, Form, RescaledSystem};

/// Default number of Chebyshev samples for the bound verifier.
pub const DEFAULT_GRID: usize = 512;
/// Membership tolerance relative to `A_k`.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-8;
/// Relative slack allowed in the bound families.
pub const BOUND_TOLERANCE: f64 = 1e-9;

fn one_sided(t: f64, toward: f64, switch: f64) -> f64 {
    if t == switch {
        toward
    } else {
        t
    }
}

struct BarrierSystem {
    kk: usize,
    half_amp: Vec<f64>,
    delta: Vec<f64>,
    t_act: Vec<f64>,
    zero_rate: f64,
}

impl BarrierSystem {
    fn new(ladder: &Ladder) -> Self {
        let kk = ladder.k_max();
        Self {
            kk,
            half_amp: (0..=kk)
                .map(|k| if k == 0 { 0.0 } else { 0.5 * ladder.amp[k - 1] })
                .collect(),
            delta: ladder.delta.clone(),
            t_act: ladder.t_act.clone(),
            zero_rate: ladder.params.nu * ladder.n_pow(0, 2.0),
        }
    }
}

impl BarrierSystem {
    fn active(&self, k: usize, t: f64, toward: f64) -> bool {
        one_sided(t, toward, self.t_act[k]) >= self.t_act[k]
    }

    fn transport(&self, k: usize, z: &[f64]) -> f64 {
        if k < self.kk {
            self.delta[k] * z[k + 1] * z[k + 1]
        } else {
            0.0
        }
    }
}

impl OdeSystem for BarrierSystem {
    fn dim(&self) -> usize {
        2 * self.kk + 1
    }

    fn rhs(&self, t: f64, toward: f64, y: &[f64], dy: &mut [f64]) {
        self.nonlinear(t, toward, y, dy);
        for k in 0..=self.kk {
            dy[k] -= self.rate(k, t, toward) * y[k];
        }
    }

    fn linear_split(&self) -> Option<&dyn LinearSplit> {
        Some(self)
    }
}

impl LinearSplit for BarrierSystem {
    fn rate(&self, k: usize, t: f64, toward: f64) -> f64 {
        match k {
            0 => self.zero_rate,
            k if k <= self.kk && self.active(k, t, toward) => -self.half_amp[k],
            _ => 0.0,
        }
    }

    fn rate_integral(&self, k: usize, a: f64, b: f64) -> f64 {
        match k {
            0 => self.zero_rate * (b - a),
            k if k <= self.kk => {
                let tk = self.t_act[k];
                -self.half_amp[k] * (b.max(tk) - a.max(tk))
            }
            _ => 0.0,
        }
    }

    fn nonlinear(&self, t: f64, toward: f64, y: &[f64], dy: &mut [f64]) {
        let kk = self.kk;
        let z = &y[..=kk];
        dy[0] = -self.transport(0, z);
        for k in 1..=kk {
            dy[k] = if self.active(k, t, toward) {
                -self.transport(k, z)
            } else {
                0.0
            };
            dy[kk + k] = -z[k - 1];
        }
    }
}

/// Chebyshev-distributed samples on `[-T, 0]` together with every activation
/// time and its half, sorted from 0 down to `-T` without duplicates.
pub fn lemma_grid(ladder: &Ladder, points: usize) -> Vec<f64> {
    let big_t = ladder.horizon;
    let mut g: Vec<f64> = (0..points)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / (points.max(2) - 1) as f64;
            -0.5 * big_t * (1.0 - theta.cos())
        })
        .collect();
    g.push(0.0);
    g.push(-big_t);
    for &tk in &ladder.t_act[1..] {
        g.push(tk);
        g.push(0.5 * tk);
    }
    g.retain(|t| *t <= 0.0 && *t >= -big_t);
    g.sort_by(|a, b| b.partial_cmp(a).unwrap());
    g.dedup();
    g
}

/// Barrier functions sampled along their own backward integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierEnvelope {
    pub ladder: Ladder,
    /// Components `zeta_0..zeta_K` followed by `I_1..I_K`.
    pub trajectory: Trajectory,
}

pub fn build_barriers(ladder: &Ladder, config: &IntegratorConfig) -> Result<BarrierEnvelope> {
    let sys = BarrierSystem::new(ladder);
    let kk = ladder.k_max();
    let mut y0 = ladder.amp.clone();
    y0.extend(std::iter::repeat(0.0).take(kk));
    let mut cfg = config.clone();
    cfg.method = Method::IntegratingFactor;
    cfg.event_times.extend(lemma_grid(ladder, DEFAULT_GRID));
    let trajectory = integrate(&sys, Form::Rescaled, 0.0, &y0, -ladder.horizon, &cfg)?;
    Ok(BarrierEnvelope {
        ladder: ladder.clone(),
        trajectory,
    })
}

/// Values of both barrier families at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSample {
    pub zeta: Vec<f64>,
    /// `I_0 = 0`, then `I_1..I_K`.
    pub integral: Vec<f64>,
    pub eta: Vec<f64>,
}

impl BarrierEnvelope {
    pub fn k_max(&self) -> usize {
        self.ladder.k_max()
    }

    fn split(&self, y: &[f64]) -> BarrierSample {
        let kk = self.k_max();
        let zeta = y[..=kk].to_vec();
        let mut integral = vec![0.0];
        integral.extend_from_slice(&y[kk + 1..]);
        let eta = (0..=kk)
            .map(|k| self.ladder.amp[k] * (-integral[k]).exp())
            .collect();
        BarrierSample {
            zeta,
            integral,
            eta,
        }
    }

    /// Barrier values at `t`, exact at integration nodes and Hermite-interpolated elsewhere.
    pub fn at(&self, t: f64) -> Option<BarrierSample> {
        self.trajectory.state_at(t).map(|y| self.split(&y))
    }

    pub fn times(&self) -> &[f64] {
        &self.trajectory.times
    }

    /// Forward-time derivative of `zeta`, one-sided toward `toward`.
    pub fn zeta_derivative(&self, t: f64, toward: f64, sample: &BarrierSample) -> Vec<f64> {
        let sys = BarrierSystem::new(&self.ladder);
        let mut y = sample.zeta.clone();
        y.extend_from_slice(&sample.integral[1..]);
        let mut dy = vec![0.0; y.len()];
        sys.rhs(t, toward, &y, &mut dy);
        dy.truncate(self.k_max() + 1);
        dy
    }

    /// `zeta_K` from its explicit formula.
    pub fn top_closed_form(&self, t: f64) -> f64 {
        let kk = self.k_max();
        if kk == 0 {
            return f64::NAN;
        }
        let lad = &self.ladder;
        lad.amp[kk] * (0.5 * lad.amp[kk - 1] * t.max(lad.t_act[kk])).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundFamily {
    /// `A_k e^{A_{k-1} max(t, t_k) / 2} <= zeta_k <= 2 A_k e^{...}`, `k >= 1`.
    UpperBand,
    /// `A_0 <= zeta_0 <= 2 A_0`.
    ZeroBand,
    /// `eta_k >= 3 A_k / 4` on `[t_{k+1}, 0]`, `k <= K - 1`.
    LowerQuarter,
    /// `eta_k >= A_k exp(-5 A_{k-1} / A_{k-2})`, `k >= 2`.
    LowerGlobal,
    /// `eta_{k-1} zeta_k - delta_k zeta_{k+1}^2 - zeta_k' >= A_{k-1} zeta_k / 8` on `[t_k, 0]`.
    BoundarySlack,
    /// `eta_{k-1} - rho_k nu N_k^2 >= A_{k-1} / 2` on `[t_k, 0]`.
    ViscousBoundary,
}

impl BoundFamily {
    /// The four families stated for the barrier functions themselves.
    pub fn is_lemma_family(self) -> bool {
        matches!(
            self,
            BoundFamily::UpperBand
                | BoundFamily::ZeroBand
                | BoundFamily::LowerQuarter
                | BoundFamily::LowerGlobal
        )
    }
}

/// Worst relative margin of one bound family at one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub family: BoundFamily,
    pub k: usize,
    #[serde(with = "crate::nonfinite")]
    pub worst_margin: f64,
    #[serde(with = "crate::nonfinite")]
    pub worst_t: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub grid_points: usize,
    pub tolerance: f64,
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn family_passes(&self, family: BoundFamily) -> bool {
        self.checks
            .iter()
            .filter(|c| c.family == family)
            .all(|c| c.passed)
    }

    pub fn lemma_passes(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| c.family.is_lemma_family())
            .all(|c| c.passed)
    }

    /// Smallest margin over the four lemma families.
    pub fn lemma_min_margin(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.family.is_lemma_family())
            .map(|c| c.worst_margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Accumulator {
    family: BoundFamily,
    k: usize,
    worst: f64,
    worst_t: f64,
    samples: usize,
}

impl Accumulator {
    fn new(family: BoundFamily, k: usize) -> Self {
        Self {
            family,
            k,
            worst: f64::INFINITY,
            worst_t: f64::NAN,
            samples: 0,
        }
    }

    fn push(&mut self, t: f64, margin: f64) {
        self.samples += 1;
        // NaN margins count as failures
        if margin < self.worst || margin.is_nan() {
            self.worst = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
            self.worst_t = t;
        }
    }

    fn finish(self, tol: f64) -> Option<BoundCheck> {
        (self.samples > 0).then(|| BoundCheck {
            family: self.family,
            k: self.k,
            worst_margin: self.worst,
            worst_t: self.worst_t,
            samples: self.samples,
            passed: self.worst >= -tol,
        })
    }
}

/// Checks the barrier bounds on `grid` Chebyshev samples plus all switching times.
pub fn verify_lemma_bounds(env: &BarrierEnvelope, grid: usize) -> Result<BoundReport> {
    if grid < 100 {
        return Err(Error::InvalidConfig(format!(
            "bound verification needs at least 100 grid points, got {grid}"
        )));
    }
    let lad = &env.ladder;
    let kk = lad.k_max();
    let spec = ForcingSpec::from_ladder(lad);
    let nu = lad.params.nu;
    let times = lemma_grid(lad, grid);

    let mut upper: Vec<Accumulator> = (1..=kk).map(|k| Accumulator::new(BoundFamily::UpperBand, k)).collect();
    let mut zero = Accumulator::new(BoundFamily::ZeroBand, 0);
    let mut quarter: Vec<Accumulator> = (0..kk).map(|k| Accumulator::new(BoundFamily::LowerQuarter, k)).collect();
    let mut global: Vec<Accumulator> = (2..=kk).map(|k| Accumulator::new(BoundFamily::LowerGlobal, k)).collect();
    let mut slack: Vec<Accumulator> = (1..=kk).map(|k| Accumulator::new(BoundFamily::BoundarySlack, k)).collect();
    let mut viscous: Vec<Accumulator> = (1..=kk).map(|k| Accumulator::new(BoundFamily::ViscousBoundary, k)).collect();

    let ln2 = std::f64::consts::LN_2;
    for &t in &times {
        let s = env.at(t).ok_or_else(|| {
            Error::SpanMismatch(format!("barrier envelope does not cover t = {t:e}"))
        })?;
        // derivative one-sided toward the interior of [t_k, 0]
        let toward = if t < 0.0 { t * 0.5 } else { t };
        let dz = env.zeta_derivative(t, toward, &s);

        let r0 = s.zeta[0] / lad.amp[0];
        zero.push(t, (r0 - 1.0).min(2.0 - r0));

        for k in 1..=kk {
            let tk = lad.t_act[k];
            let expo = 0.5 * lad.amp[k - 1] * t.max(tk);
            let log_ratio = s.zeta[k].ln() - lad.amp[k].ln() - expo;
            upper[k - 1].push(t, log_ratio.min(ln2 - log_ratio));

            if t >= tk {
                let z = s.zeta[k];
                let next = if k < kk { lad.delta[k] * s.zeta[k + 1].powi(2) } else { 0.0 };
                let lhs = s.eta[k - 1] * z - next - dz[k] - 0.125 * lad.amp[k - 1] * z;
                slack[k - 1].push(t, lhs / (lad.amp[k - 1] * z));
                if nu > 0.0 {
                    let rho = evaluate_cutoff(&spec, k, t);
                    let v = s.eta[k - 1] - rho * nu * lad.n_pow(k, 2.0) - 0.5 * lad.amp[k - 1];
                    viscous[k - 1].push(t, v / lad.amp[k - 1]);
                }
            }
        }
        for k in 0..kk {
            if t >= lad.t_act[k + 1] {
                quarter[k].push(t, s.eta[k] / lad.amp[k] - 0.75);
            }
        }
        for k in 2..=kk {
            let cap = 5.0 * lad.amp[k - 1] / lad.amp[k - 2];
            global[k - 2].push(t, (cap - s.integral[k]) / cap);
        }
    }

    let tol = BOUND_TOLERANCE;
    let checks = std::iter::once(zero)
        .chain(upper)
        .chain(quarter)
        .chain(global)
        .chain(slack)
        .chain(viscous)
        .filter_map(|a| a.finish(tol))
        .collect();
    Ok(BoundReport {
        grid_points: times.len(),
        tolerance: tol,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Escape {
    pub t: f64,
    pub k: usize,
    /// Signed margin relative to `A_k`.
    pub margin: f64,
}

/// Differential inequalities checked where a component is within 1% of a barrier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryChecks {
    pub checked: usize,
    pub violations: usize,
    /// Most negative `x' - zeta'` (upper) or `eta' - x'` (lower), relative to `A_{k-1} A_k`.
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipLog {
    pub times: Vec<f64>,
    /// `margins[i][k] = min(x_k - eta_k, zeta_k - x_k)` at snapshot `i`.
    #[serde(skip)]
    pub margins: Vec<Vec<f64>>,
    /// Smallest margin per mode, relative to `A_k`.
    pub worst: Vec<f64>,
    pub worst_t: Vec<f64>,
    pub tolerance: f64,
    pub first_escape: Option<Escape>,
    pub boundary: BoundaryChecks,
}

impl MembershipLog {
    pub fn escaped(&self) -> bool {
        self.first_escape.is_some()
    }

    pub fn min_relative_margin(&self) -> f64 {
        self.worst.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Signed margins of a rescaled trajectory against the barriers, with the
/// boundary differential inequalities evaluated through `dissipation`.
pub fn monitor_membership(
    traj: &Trajectory,
    env: &BarrierEnvelope,
    dissipation: &Dissipation,
) -> Result<MembershipLog> {
    if traj.form != Form::Rescaled {
        return Err(Error::FormMismatch {
            expected: Form::Rescaled,
            got: traj.form,
        });
    }
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let lad = &env.ladder;
    let kk = lad.k_max();
    if traj.dim() != kk + 1 {
        return Err(Error::DimensionMismatch {
            expected: kk + 1,
            got: traj.dim(),
        });
    }
    let big_t = lad.horizon;
    if let Some(&bad) = traj
        .times
        .iter()
        .find(|&&t| !(t <= 0.0 && t >= -big_t * (1.0 + 1e-12)))
    {
        return Err(Error::SpanMismatch(format!(
            "snapshot at t = {bad:e} lies outside [-T, 0]"
        )));
    }

    let sys = RescaledSystem::new(lad, dissipation.clone());
    let tol = MEMBERSHIP_TOLERANCE;
    let mut margins = Vec::with_capacity(traj.len());
    let mut worst = vec![f64::INFINITY; kk + 1];
    let mut worst_t = vec![f64::NAN; kk + 1];
    let mut first_escape = None;
    let mut boundary = BoundaryChecks {
        worst: f64::INFINITY,
        ..Default::default()
    };
    let mut dx = vec![0.0; kk + 1];

    for (i, (&t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let t_env = t.max(-big_t);
        let s = env.at(t_env).ok_or_else(|| {
            Error::SpanMismatch(format!("barrier envelope does not cover t = {t:e}"))
        })?;
        let row: Vec<f64> = (0..=kk)
            .map(|k| (x[k] - s.eta[k]).min(s.zeta[k] - x[k]))
            .collect();
        for k in 0..=kk {
            let rel = row[k] / lad.amp[k];
            if rel < worst[k] || rel.is_nan() {
                worst[k] = if rel.is_nan() { f64::NEG_INFINITY } else { rel };
                worst_t[k] = t;
            }
            if first_escape.is_none() && !(rel >= -tol) {
                first_escape = Some(Escape { t, k, margin: rel });
            }
        }

        // boundary inequalities, forward-time form, at near-boundary snapshots
        let toward = if i + 1 < traj.len() { traj.times[i + 1] } else { t };
        let toward = 0.5 * (t + toward);
        sys.rhs(t, toward, x, &mut dx);
        let dz = env.zeta_derivative(t_env, toward, &s);
        for k in 1..=kk {
            let scale = lad.amp[k - 1] * lad.amp[k];
            if (x[k] - s.zeta[k]).abs() <= 0.01 * s.zeta[k] {
                boundary.checked += 1;
                let v = (dx[k] - dz[k]) / scale;
                boundary.worst = boundary.worst.min(v);
                if v < -BOUND_TOLERANCE {
                    boundary.violations += 1;
                }
            }
            if (x[k] - s.eta[k]).abs() <= 0.01 * s.eta[k] {
                boundary.checked += 1;
                let deta = s.eta[k] * s.zeta[k - 1];
                let v = (deta - dx[k]) / scale;
                boundary.worst = boundary.worst.min(v);
                if v < -BOUND_TOLERANCE {
                    boundary.violations += 1;
                }
            }
        }
        margins.push(row);
    }
    if boundary.checked == 0 {
        boundary.worst = 0.0;
    }
    Ok(MembershipLog {
        times: traj.times.clone(),
        margins,
        worst,
        worst_t,
        tolerance: tol,
        first_escape,
        boundary,
    })
}

/// Clamps `x` into `[eta_k(t), zeta_k(t)]`; returns true when anything moved.
pub fn project_into_region(env: &BarrierEnvelope, t: f64, x: &mut [f64]) -> bool {
    let Some(s) = env.at(t.max(-env.ladder.horizon)) else {
        return false;
    };
    let mut moved = false;
    for (k, v) in x.iter_mut().enumerate() {
        let c = v.clamp(s.eta[k].min(s.zeta[k]), s.zeta[k]);
        if c != *v {
            *v = c;
            moved = true;
        }
    }
    moved
}
