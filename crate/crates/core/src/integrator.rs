//! Adaptive time stepping in either time direction.
//!
//! The explicit method is the Dormand-Prince 5(4) pair with PI step-size
//! control. Backward runs use a negative step, which is the substitution
//! `tau = -t` with a negated right-hand side written out in place. Every
//! stage is evaluated "toward" the interior of its step, so right-hand sides
//! that switch at known times see the correct one-sided value at the
//! switching time itself.

use serde::{Deserialize, Serialize};

use crate::barriers::{build_barriers, monitor_membership, project_into_region, MembershipLog};
use crate::error::{Error, Result};
use crate::ladder::Ladder;
use crate::model::{Dissipation, ForcingSpec, Form, RescaledSystem};
use crate::precision::{two_sum, Precision};

/// A first-order system `y' = F(t, y)`.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;

    /// Evaluates `F(t, y)`. When `F` jumps at `t`, the value is the limit
    /// taken from the side of `toward`.
    fn rhs(&self, t: f64, toward: f64, y: &[f64], dy: &mut [f64]);

    /// Optional diagonal split `F_k = -rate_k(t) y_k + G_k(t, y)` used by the
    /// integrating-factor method.
    fn linear_split(&self) -> Option<&dyn LinearSplit> {
        None
    }
}

pub trait LinearSplit {
    /// Linear decay rate, one-sided toward `toward` where it switches.
    fn rate(&self, k: usize, t: f64, toward: f64) -> f64;
    /// `int_a^b rate_k(s) ds`; `b < a` gives the negated integral.
    fn rate_integral(&self, k: usize, a: f64, b: f64) -> f64;
    fn nonlinear(&self, t: f64, toward: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Dopri5,
    /// Lawson-type Dormand-Prince: the diagonal linear part is propagated exactly.
    IntegratingFactor,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotPolicy {
    #[default]
    EveryStep,
    /// Resample at these times by cubic Hermite interpolation between accepted steps.
    Grid(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    #[serde(with = "crate::nonfinite")]
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
    /// Times the stepper lands on exactly (any order; sorted internally).
    pub event_times: Vec<f64>,
    pub snapshots: SnapshotPolicy,
    pub precision: Precision,
    /// Accepted components with magnitude below this are set to exactly zero,
    /// so a decayed mode stops limiting the step size. Zero disables.
    pub flush_to_zero: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_step: f64::INFINITY,
            min_step: 1e-300,
            max_steps: 5_000_000,
            event_times: Vec::new(),
            snapshots: SnapshotPolicy::EveryStep,
            precision: Precision::Double,
            flush_to_zero: 1e-280,
        }
    }
}

impl IntegratorConfig {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_events(mut self, events: impl IntoIterator<Item = f64>) -> Self {
        self.event_times.extend(events);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.max_step) {
            return Err(Error::InvalidConfig(
                "step bounds must satisfy 0 < min_step <= max_step".into(),
            ));
        }
        if self.event_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("event times must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    #[serde(with = "crate::nonfinite")]
    pub min_step: f64,
    #[serde(with = "crate::nonfinite")]
    pub max_step: f64,
}

/// Ordered snapshots of a solution.
///
/// `d_depart[i]` is the derivative used when leaving snapshot `i` and
/// `d_arrive[i]` the one obtained when reaching it; they differ only at
/// switching times. Both may be empty for imported trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub form: Form,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(default)]
    pub d_depart: Vec<Vec<f64>>,
    #[serde(default)]
    pub d_arrive: Vec<Vec<f64>>,
    #[serde(default)]
    pub stats: StepStats,
    #[serde(default)]
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<MembershipLog>,
}

impl Trajectory {
    pub fn new(form: Form) -> Self {
        Self {
            form,
            times: Vec::new(),
            states: Vec::new(),
            d_depart: Vec::new(),
            d_arrive: Vec::new(),
            stats: StepStats::default(),
            clamped: false,
            membership: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn first(&self) -> Option<(f64, &[f64])> {
        Some((*self.times.first()?, self.states.first()?.as_slice()))
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        Some((*self.times.last()?, self.states.last()?.as_slice()))
    }

    pub fn is_forward(&self) -> bool {
        self.times.len() < 2 || self.times[1] > self.times[0]
    }

    pub fn has_derivatives(&self) -> bool {
        self.d_depart.len() == self.len() && self.d_arrive.len() == self.len()
    }

    /// Index of a snapshot at exactly `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// Index `i` of the step containing `t`, so that `t` lies between
    /// `times[i]` and `times[i + 1]`.
    fn bracket(&self, t: f64) -> Option<usize> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let fwd = self.is_forward();
        let key = |s: f64| if fwd { s } else { -s };
        let kt = key(t);
        if kt < key(self.times[0]) || kt > key(self.times[n - 1]) {
            return None;
        }
        let pos = self.times.partition_point(|&s| key(s) <= kt);
        Some(pos.clamp(1, n - 1) - 1)
    }

    /// State at `t`: exact at snapshot times, cubic Hermite in between
    /// (linear when derivatives are unavailable).
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        if let Some(i) = self.index_of(t) {
            return Some(self.states[i].clone());
        }
        let i = self.bracket(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        if !self.has_derivatives() {
            return Some(y0.iter().zip(y1).map(|(a, b)| a + s * (b - a)).collect());
        }
        let (f0, f1) = (&self.d_depart[i], &self.d_arrive[i + 1]);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Some(
            (0..y0.len())
                .map(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k])
                .collect(),
        )
    }

    fn hermite_derivative(&self, t: f64) -> Option<Vec<f64>> {
        let i = self.bracket(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        let (f0, f1) = (&self.d_depart[i], &self.d_arrive[i + 1]);
        let d00 = 6.0 * s * (s - 1.0) / h;
        let d10 = (1.0 - s) * (1.0 - 3.0 * s);
        let d01 = -d00;
        let d11 = s * (3.0 * s - 2.0);
        Some(
            (0..y0.len())
                .map(|k| d00 * y0[k] + d10 * f0[k] + d01 * y1[k] + d11 * f1[k])
                .collect(),
        )
    }

    /// Resamples onto `grid`, keeping derivative information.
    pub fn resample(&self, grid: &[f64]) -> Result<Trajectory> {
        let mut out = Trajectory::new(self.form);
        out.stats = self.stats;
        out.clamped = self.clamped;
        for &t in grid {
            let y = self.state_at(t).ok_or_else(|| {
                Error::SpanMismatch(format!("grid time {t:e} outside the trajectory span"))
            })?;
            let (dep, arr) = match self.index_of(t) {
                Some(i) if self.has_derivatives() => {
                    (self.d_depart[i].clone(), self.d_arrive[i].clone())
                }
                _ if self.has_derivatives() => {
                    let d = self.hermite_derivative(t).unwrap_or_else(|| vec![0.0; y.len()]);
                    (d.clone(), d)
                }
                _ => (Vec::new(), Vec::new()),
            };
            out.times.push(t);
            out.states.push(y);
            if !dep.is_empty() {
                out.d_depart.push(dep);
                out.d_arrive.push(arr);
            }
        }
        if !out.has_derivatives() {
            out.d_depart.clear();
            out.d_arrive.clear();
        }
        Ok(out)
    }

    /// Time series of one component.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[k]).collect()
    }
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// B - B_hat
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    cfg: &'a IntegratorConfig,
    split: Option<&'a dyn LinearSplit>,
    n: usize,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
    comp: Vec<f64>,
    comp_new: Vec<f64>,
    // integrating factor: phi[i][k] = int_{t}^{t + c_i h} rate_k
    phi: [Vec<f64>; 7],
    evals: usize,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    fn new(sys: &'a S, cfg: &'a IntegratorConfig) -> Result<Self> {
        let n = sys.dim();
        let split = match cfg.method {
            Method::Dopri5 => None,
            Method::IntegratingFactor => Some(sys.linear_split().ok_or_else(|| {
                Error::InvalidConfig("integrating-factor method needs a linear split".into())
            })?),
        };
        let v = || vec![0.0; n];
        Ok(Self {
            sys,
            cfg,
            split,
            n,
            k: [v(), v(), v(), v(), v(), v(), v()],
            ytmp: v(),
            ynew: v(),
            err: v(),
            comp: v(),
            comp_new: v(),
            phi: [v(), v(), v(), v(), v(), v(), v()],
            evals: 0,
        })
    }

    /// Stage derivative: full F for Dopri5, nonlinear part G for the IF variant.
    fn stage(&mut self, i: usize, t: f64, toward: f64) {
        let (ytmp, k) = (&self.ytmp, &mut self.k[i]);
        match self.split {
            None => self.sys.rhs(t, toward, ytmp, k),
            Some(sp) => sp.nonlinear(t, toward, ytmp, k),
        }
        self.evals += 1;
    }

    /// Full derivative at a node from the stage value stored in `k[i]`.
    fn full_derivative(&self, i: usize, t: f64, toward: f64, y: &[f64]) -> Vec<f64> {
        match self.split {
            None => self.k[i].clone(),
            Some(sp) => (0..self.n)
                .map(|j| -sp.rate(j, t, toward) * y[j] + self.k[i][j])
                .collect(),
        }
    }

    fn error_norm(&self, y: &[f64]) -> f64 {
        let ratios = (0..self.n).map(|j| {
            let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[j].abs().max(self.ynew[j].abs());
            self.err[j] / sc
        });
        rms(ratios)
    }

    /// One trial step from (t, y) with step h. Stage 0 must already be in `k[0]`.
    /// Fills `ynew`, `err`, and `k[6]` (derivative data at t + h).
    fn attempt(&mut self, t: f64, y: &[f64], h: f64) {
        let mid = t + 0.5 * h;
        if let Some(sp) = self.split {
            for i in 1..7 {
                for j in 0..self.n {
                    self.phi[i][j] = sp.rate_integral(j, t, t + C[i] * h);
                }
            }
            for j in 0..self.n {
                self.phi[0][j] = 0.0;
            }
        }
        for i in 1..7 {
            for j in 0..self.n {
                let mut acc = 0.0;
                for (m, a) in A[i].iter().enumerate().take(i) {
                    if *a != 0.0 {
                        let w = if self.split.is_some() {
                            self.phi[m][j].exp()
                        } else {
                            1.0
                        };
                        acc += a * w * self.k[m][j];
                    }
                }
                let base = y[j] + h * acc;
                self.ytmp[j] = if self.split.is_some() {
                    (-self.phi[i][j]).exp() * base
                } else {
                    base
                };
            }
            let ti = if i >= 5 { t + h } else { t + C[i] * h };
            self.stage(i, ti, mid);
        }
        // stage 6 was evaluated at the 5th-order solution (FSAL)
        self.ynew.copy_from_slice(&self.ytmp);
        for j in 0..self.n {
            let mut e = 0.0;
            for (m, coef) in E.iter().enumerate() {
                if *coef != 0.0 {
                    let w = if self.split.is_some() {
                        (self.phi[m][j] - self.phi[6][j]).exp()
                    } else {
                        1.0
                    };
                    e += coef * w * self.k[m][j];
                }
            }
            self.err[j] = h * e;
        }
        if self.split.is_none() && self.cfg.precision == Precision::Compensated {
            // recompute the update with a carried rounding error
            for j in 0..self.n {
                let mut incr = 0.0;
                for (m, b) in B.iter().enumerate() {
                    incr += b * self.k[m][j];
                }
                let (s, e) = two_sum(y[j], h * incr + self.comp[j]);
                self.ynew[j] = s;
                self.comp_new[j] = e;
            }
        }
    }

    fn initial_step(&mut self, t: f64, y: &[f64], dir: f64, span: f64) -> f64 {
        let scale = |v: f64| self.cfg.abs_tol + self.cfg.rel_tol * v.abs();
        let norm = |a: &[f64], ys: &[f64]| rms(a.iter().zip(ys).map(|(x, yy)| x / scale(*yy)));
        let d0 = norm(y, y);
        let f0 = self.full_derivative(0, t, t + dir * span * 1e-3, y);
        let d1 = norm(&f0, y);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 || !d1.is_finite() {
            1e-6 * span
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(span).min(self.cfg.max_step);
        // explicit Euler probe
        let y1: Vec<f64> = y.iter().zip(&f0).map(|(a, b)| a + dir * h0 * b).collect();
        let mut f1 = vec![0.0; self.n];
        self.sys.rhs(t + dir * h0, t + dir * h0, &y1, &mut f1);
        self.evals += 1;
        let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff, y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6 * span)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        let h = (100.0 * h0).min(h1).min(span).min(self.cfg.max_step);
        if h.is_finite() && h > 0.0 {
            h
        } else {
            // a component at exactly zero with a nonzero derivative defeats the estimate
            (1e-6 * span).min(self.cfg.max_step)
        }
    }
}

/// Root mean square that stays finite when the entries are near the overflow threshold.
fn rms(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut n = 0usize;
    let mut big = 0.0f64;
    for v in values.clone() {
        n += 1;
        big = big.max(v.abs());
        if v.is_nan() {
            return f64::NAN;
        }
    }
    if big == 0.0 || !big.is_finite() {
        return big;
    }
    let s: f64 = values.map(|v| (v / big).powi(2)).sum();
    big * (s / n as f64).sqrt()
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Integrates `sys` from `(t0, y0)` to `t_end`.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    form: Form,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_with_hook(sys, form, t0, y0, t_end, cfg, None)
}

/// Projection applied after each accepted step; returns true when it changed the state.
pub type StepHook<'a> = &'a dyn Fn(f64, &mut [f64]) -> bool;

pub fn integrate_with_hook<S: OdeSystem + ?Sized>(
    sys: &S,
    form: Form,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
    hook: Option<StepHook<'_>>,
) -> Result<Trajectory> {
    validate_request(sys, t0, y0, t_end, cfg)?;
    let mut traj = Trajectory::new(form);
    step_loop(sys, t0, y0, t_end, cfg, hook, &mut traj)?;
    match &cfg.snapshots {
        SnapshotPolicy::EveryStep => Ok(traj),
        SnapshotPolicy::Grid(grid) => traj.resample(grid),
    }
}

/// Like [`integrate`], but keeps the snapshots reached before a failure.
/// The snapshot policy is ignored; every accepted step is returned.
pub fn integrate_until_failure<S: OdeSystem + ?Sized>(
    sys: &S,
    form: Form,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> (Trajectory, Option<Error>) {
    let mut traj = Trajectory::new(form);
    let outcome = validate_request(sys, t0, y0, t_end, cfg)
        .and_then(|_| step_loop(sys, t0, y0, t_end, cfg, None, &mut traj));
    if traj.d_depart.len() + 1 == traj.len() {
        let last = traj.d_arrive.last().cloned().unwrap_or_default();
        traj.d_depart.push(last);
    }
    (traj, outcome.err())
}

fn validate_request<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<()> {
    cfg.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: y0.len(),
        });
    }
    if t_end == t0 || !t_end.is_finite() || !t0.is_finite() {
        return Err(Error::SpanMismatch(format!(
            "cannot integrate from {t0:e} to {t_end:e}"
        )));
    }
    check_finite(t0, y0)?;
    Ok(())
}

fn step_loop<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    cfg: &IntegratorConfig,
    hook: Option<StepHook<'_>>,
    traj: &mut Trajectory,
) -> Result<()> {
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let ahead = |a: f64, b: f64| dir * (b - a) > 0.0;

    // stopping points strictly inside the span, in integration order, then t_end
    let mut stops: Vec<f64> = cfg
        .event_times
        .iter()
        .copied()
        .filter(|&e| ahead(t0, e) && ahead(e, t_end))
        .collect();
    stops.sort_by(|a, b| (dir * a).partial_cmp(&(dir * b)).unwrap());
    stops.dedup();
    stops.push(t_end);

    let mut st = Stepper::new(sys, cfg)?;
    let n = st.n;
    let mut y = y0.to_vec();
    let mut t = t0;

    st.ytmp.copy_from_slice(&y);
    st.stage(0, t, t + dir * span * 1e-3);
    let mut h = dir * st.initial_step(t, &y, dir, span);
    // the probe above is evaluated toward the interior; redo stage 0 exactly
    st.ytmp.copy_from_slice(&y);
    st.stage(0, t, t + 0.5 * h);

    traj.times.push(t);
    traj.states.push(y.clone());
    traj.d_arrive.push(st.full_derivative(0, t, t + 0.5 * h, &y));
    let mut depart_pending = true;

    traj.stats = StepStats {
        min_step: f64::INFINITY,
        max_step: 0.0,
        ..Default::default()
    };
    let mut facold: f64 = 1e-4;
    let mut next_stop = 0;
    let mut fresh_stage0 = true;
    let mut last_rejected = false;

    while next_stop < stops.len() {
        if traj.stats.accepted + traj.stats.rejected >= cfg.max_steps {
            return Err(Error::MaxSteps {
                t,
                max_steps: cfg.max_steps,
            });
        }
        let target = stops[next_stop];
        let mut hit = false;
        if h.abs() > cfg.max_step {
            h = dir * cfg.max_step;
        }
        if dir * (t + 1.05 * h - target) >= 0.0 {
            h = target - t;
            hit = true;
        }
        if h.abs() < cfg.min_step || t + h == t {
            return Err(Error::StepSizeCollapse { t, step: h.abs() });
        }
        if !fresh_stage0 {
            // stage 0 must be the one-sided value toward this step's interior
            st.ytmp.copy_from_slice(&y);
            st.stage(0, t, t + 0.5 * h);
            fresh_stage0 = true;
        }
        if depart_pending {
            traj.d_depart.push(st.full_derivative(0, t, t + 0.5 * h, &y));
            depart_pending = false;
        }

        st.attempt(t, &y, h);
        let err = st.error_norm(&y);
        if !err.is_finite() {
            // treat as a failed step with maximal shrink
            traj.stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }
        let fac11 = err.powf(0.2 - 0.75 * PI_BETA);
        let mut fac = fac11 / facold.powf(PI_BETA) / SAFETY;
        fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let h_new = h / fac;

        if err <= 1.0 {
            facold = err.max(1e-4);
            traj.stats.accepted += 1;
            traj.stats.min_step = traj.stats.min_step.min(h.abs());
            traj.stats.max_step = traj.stats.max_step.max(h.abs());
            let t_new = if hit { target } else { t + h };
            y.copy_from_slice(&st.ynew);
            if cfg.precision == Precision::Compensated {
                st.comp.copy_from_slice(&st.comp_new);
            }
            check_finite(t_new, &y)?;
            let mut projected = false;
            if cfg.flush_to_zero > 0.0 {
                for v in y.iter_mut() {
                    if *v != 0.0 && v.abs() < cfg.flush_to_zero {
                        *v = 0.0;
                        projected = true;
                    }
                }
            }
            if let Some(hk) = hook {
                if hk(t_new, &mut y) {
                    projected = true;
                    traj.clamped = true;
                    st.comp.iter_mut().for_each(|c| *c = 0.0);
                }
            }
            let arrive = st.full_derivative(6, t_new, t_new - 0.5 * h, &st.ynew);
            t = t_new;
            traj.times.push(t);
            traj.states.push(y.clone());
            traj.d_arrive.push(arrive);
            depart_pending = true;

            // FSAL unless a stop or a projection intervenes
            if hit || projected {
                fresh_stage0 = false;
                next_stop += if hit { 1 } else { 0 };
            } else {
                st.k.swap(0, 6);
            }
            let mut h_next = h_new;
            if last_rejected && h_next.abs() > h.abs() {
                h_next = h;
            }
            last_rejected = false;
            if hit {
                // keep the pre-truncation estimate so short stops don't throttle the step
                h_next = dir * h_next.abs().max(h.abs());
            }
            h = h_next;
        } else {
            traj.stats.rejected += 1;
            let shrink = (fac11 / SAFETY).min(1.0 / FAC_MIN);
            h /= shrink;
            last_rejected = true;
        }
    }
    if depart_pending {
        let last = traj.d_arrive.last().cloned().unwrap_or_else(|| vec![0.0; n]);
        traj.d_depart.push(last);
    }
    traj.stats.rhs_evals = st.evals;
    if traj.stats.accepted == 0 {
        traj.stats.min_step = 0.0;
    }

    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GalerkinMode {
    /// Dissipation on mode `k` switched off before `t_k` by the cutoff.
    #[default]
    ViscousMasked,
    Inviscid,
}

impl GalerkinMode {
    pub fn dissipation(self, ladder: &Ladder) -> Dissipation {
        match self {
            GalerkinMode::ViscousMasked => Dissipation::Cutoff(ForcingSpec::from_ladder(ladder)),
            GalerkinMode::Inviscid => Dissipation::Inviscid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackwardOptions {
    pub mode: GalerkinMode,
    /// Run even when the amplification budget is exceeded.
    pub force: bool,
    /// Project onto the trapping region after every step.
    pub clamp: bool,
    /// Attach a barrier membership log to the trajectory.
    pub monitor: bool,
}

impl BackwardOptions {
    pub fn new(mode: GalerkinMode) -> Self {
        Self {
            mode,
            ..Default::default()
        }
    }

    pub fn monitored(mut self) -> Self {
        self.monitor = true;
        self
    }
}

/// Predicted growth of perturbations during a backward masked run, per mode, as logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationBudget {
    /// `nu N_k^2 int rho_k`: the anti-dissipation alone.
    pub ln_dissipative: Vec<f64>,
    /// Anti-dissipation net of the transport damping `3 A_{k-1} / 4` that
    /// the lower barrier guarantees on the support of `rho_k`.
    pub ln_net: Vec<f64>,
}

impl AmplificationBudget {
    pub fn from_ladder(ladder: &Ladder) -> Self {
        let spec = ForcingSpec::from_ladder(ladder);
        let nu = ladder.params.nu;
        let mut ln_dissipative = Vec::with_capacity(ladder.modes());
        let mut ln_net = Vec::with_capacity(ladder.modes());
        for k in 0..ladder.modes() {
            let rate = nu * ladder.n_pow(k, 2.0);
            let start = if k == 0 { -ladder.horizon } else { ladder.t_act[k] };
            let on = spec.integral(k, start, 0.0);
            ln_dissipative.push(rate * on);
            let credit = if k == 0 { 0.0 } else { 0.75 * ladder.amp[k - 1] };
            ln_net.push((rate - credit).max(0.0) * on);
        }
        Self {
            ln_dissipative,
            ln_net,
        }
    }

    /// First mode whose predicted relative error `amplification * rel_tol` exceeds `limit`.
    pub fn first_violation(&self, rel_tol: f64, limit: f64) -> Option<(usize, f64)> {
        let cap = (limit / rel_tol).ln();
        self.ln_net
            .iter()
            .enumerate()
            .find(|(_, l)| **l > cap)
            .map(|(k, l)| (k, *l))
    }
}

/// Relative error level above which a backward run is refused.
pub const AMPLIFICATION_LIMIT: f64 = 1e-2;

/// Activation times and their halves inside `(-T, 0)`.
pub fn switching_times(ladder: &Ladder) -> Vec<f64> {
    let big_t = ladder.horizon;
    let mut out: Vec<f64> = ladder.t_act[1..]
        .iter()
        .flat_map(|&t| [t, 0.5 * t])
        .filter(|&t| t > -big_t && t < 0.0)
        .collect();
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    out.dedup();
    out
}

/// Backward Galerkin solution of the rescaled system on `[-T, 0]` from terminal data at 0.
pub fn integrate_backward_galerkin(
    ladder: &Ladder,
    terminal: &[f64],
    options: &BackwardOptions,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    if terminal.len() != ladder.modes() {
        return Err(Error::DimensionMismatch {
            expected: ladder.modes(),
            got: terminal.len(),
        });
    }
    let dissipation = options.mode.dissipation(ladder);
    if options.mode == GalerkinMode::ViscousMasked && !options.force && ladder.params.nu > 0.0 {
        let budget = AmplificationBudget::from_ladder(ladder);
        if let Some((k, ln_amp)) = budget.first_violation(config.rel_tol, AMPLIFICATION_LIMIT) {
            let amplification = ln_amp.exp();
            return Err(Error::AmplificationBudgetExceeded {
                k,
                amplification,
                predicted: amplification * config.rel_tol,
            });
        }
    }
    let sys = RescaledSystem::new(ladder, dissipation.clone());
    let mut cfg = config.clone();
    cfg.event_times.extend(switching_times(ladder));

    let envelope = if options.clamp {
        Some(build_barriers(ladder, config)?)
    } else {
        None
    };
    let hook = |t: f64, y: &mut [f64]| match &envelope {
        Some(env) => project_into_region(env, t, y),
        None => false,
    };
    let mut traj = integrate_with_hook(
        &sys,
        Form::Rescaled,
        0.0,
        terminal,
        -ladder.horizon,
        &cfg,
        options.clamp.then_some(&hook as StepHook<'_>),
    )?;
    if options.monitor {
        traj.membership = Some(membership_for(&traj, ladder, &dissipation, config)?);
    }
    Ok(traj)
}

/// Builds barriers that land on every snapshot of `traj` and monitors it against them.
pub fn membership_for(
    traj: &Trajectory,
    ladder: &Ladder,
    dissipation: &Dissipation,
    config: &IntegratorConfig,
) -> Result<MembershipLog> {
    let mut cfg = config.clone();
    cfg.snapshots = SnapshotPolicy::EveryStep;
    cfg.event_times
        .extend(traj.times.iter().copied().filter(|t| *t < 0.0 && *t > -ladder.horizon));
    let env = build_barriers(ladder, &cfg)?;
    monitor_membership(traj, &env, dissipation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub backward: Trajectory,
    pub forward: Trajectory,
    /// `|x_k(0) - A_k| / A_k` after the forward pass.
    pub terminal_error: Vec<f64>,
}

impl RoundTrip {
    pub fn max_error(&self) -> f64 {
        self.terminal_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Backward from `A_k`, then forward through the same system from the state at `-T`.
pub fn roundtrip(ladder: &Ladder, options: &BackwardOptions, config: &IntegratorConfig) -> Result<RoundTrip> {
    let backward = integrate_backward_galerkin(ladder, &ladder.amp, options, config)?;
    let (_, start) = backward.last().ok_or(Error::EmptyTrajectory)?;
    let sys = RescaledSystem::new(ladder, options.mode.dissipation(ladder));
    let mut cfg = config.clone();
    cfg.event_times.extend(switching_times(ladder));
    let forward = integrate(&sys, Form::Rescaled, -ladder.horizon, start, 0.0, &cfg)?;
    let (_, end) = forward.last().ok_or(Error::EmptyTrajectory)?;
    let terminal_error = end
        .iter()
        .zip(&ladder.amp)
        .map(|(x, a)| ((x - a) / a).abs())
        .collect();
    Ok(RoundTrip {
        backward,
        forward,
        terminal_error,
    })
}
