//! Right-hand sides of the shell system in its three equivalent normalizations,
//! the smooth dissipation cutoff, and the comparison models.
//!
//! With frequencies `N_k` and Galerkin truncation at mode `K`:
//!
//! * energy form: `X_k' = -nu N_k^2 X_k + N_{k-1}^alpha X_{k-1} X_k - N_k^alpha X_{k+1}^2 + f_k`
//! * sup form: `Y_k = N_k^(alpha-1) X_k`
//! * rescaled form: `x_k = N_k^alpha X_k`, with
//!   `x_k' = -m_k nu N_k^2 x_k + x_{k-1} x_k - delta_k x_{k+1}^2`
//!
//! The quadratic term pointing past mode `K` is dropped.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{LinearSplit, OdeSystem, Trajectory};
use crate::ladder::Ladder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    L2,
    Linf,
    Rescaled,
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::L2 => "l2",
            Form::Linf => "linf",
            Form::Rescaled => "rescaled",
        }
    }

    /// Exponent `p` such that this form's amplitude is `N_k^p X_k`.
    fn weight(self, alpha: f64) -> f64 {
        match self {
            Form::L2 => 0.0,
            Form::Linf => alpha - 1.0,
            Form::Rescaled => alpha,
        }
    }
}

impl std::str::FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Form::L2),
            "linf" => Ok(Form::Linf),
            "rescaled" => Ok(Form::Rescaled),
            other => Err(Error::InvalidConfig(format!("unknown form '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellState {
    pub t: f64,
    pub form: Form,
    pub x: Vec<f64>,
}

impl ShellState {
    pub fn new(t: f64, form: Form, x: Vec<f64>) -> Self {
        Self { t, form, x }
    }

    fn expect(&self, form: Form, len: usize) -> Result<()> {
        if self.form != form {
            return Err(Error::FormMismatch {
                expected: form,
                got: self.form,
            });
        }
        check_len(len, self.x.len())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Smooth step: 1 on `u <= 1/2`, 0 on `u >= 1`, strictly decreasing in between.
pub fn cutoff(u: f64) -> f64 {
    if u <= 0.5 {
        return 1.0;
    }
    if u >= 1.0 {
        return 0.0;
    }
    let q = |v: f64| if v > 0.0 { (-1.0 / v).exp() } else { 0.0 };
    let a = q(2.0 - 2.0 * u);
    let b = q(2.0 * u - 1.0);
    a / (a + b)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 12;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

/// `int_u^1 cutoff(v) dv` for `u` in `[1/2, 1]`.
fn cutoff_tail(u: f64) -> f64 {
    if u >= 1.0 {
        return 0.0;
    }
    let u = u.max(0.5);
    let panels = 16;
    let width = (1.0 - u) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = u + (p as f64 + 0.5) * width;
        for &(x, w) in gauss_legendre() {
            acc += w * cutoff(mid + 0.5 * width * x);
        }
    }
    0.5 * width * acc
}

/// Per-mode dissipation switch `rho_k(t) = cutoff(t / t_k)`, with `rho_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub activation: Vec<f64>,
}

impl ForcingSpec {
    pub fn from_ladder(ladder: &Ladder) -> Self {
        Self {
            activation: ladder.t_act.clone(),
        }
    }

    pub fn modes(&self) -> usize {
        self.activation.len()
    }

    /// `int_{t_k}^t rho_k`, zero for `t <= t_k`.
    fn antiderivative(&self, k: usize, t: f64) -> f64 {
        let tk = self.activation[k];
        if t <= tk {
            return 0.0;
        }
        let half = 0.5 * tk;
        if t >= half {
            // the transition region contributes |t_k| / 4 by symmetry of the cutoff
            return -tk * 0.25 + (t - half);
        }
        -tk * cutoff_tail(t / tk)
    }

    /// `int_a^b rho_k(s) ds`, exact outside the transition region.
    pub fn integral(&self, k: usize, a: f64, b: f64) -> f64 {
        if k == 0 {
            return b - a;
        }
        let tk = self.activation[k];
        let half = 0.5 * tk;
        let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
        let value = if lo >= half || hi <= tk {
            // entirely in a constant piece
            if lo >= half {
                hi - lo
            } else {
                0.0
            }
        } else {
            self.antiderivative(k, hi) - self.antiderivative(k, lo)
        };
        sign * value
    }
}

pub fn evaluate_cutoff(spec: &ForcingSpec, k: usize, t: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        cutoff(t / spec.activation[k])
    }
}

/// Per-mode dissipation multiplier for the rescaled system.
#[derive(Debug, Clone, PartialEq)]
pub enum Dissipation {
    /// Unforced viscous system.
    Full,
    /// Dissipation on mode `k` switched by `rho_k(t)`.
    Cutoff(ForcingSpec),
    /// No dissipation.
    Inviscid,
}

impl Dissipation {
    pub fn mask(&self, k: usize, t: f64) -> f64 {
        match self {
            Dissipation::Full => 1.0,
            Dissipation::Cutoff(spec) => evaluate_cutoff(spec, k, t),
            Dissipation::Inviscid => 0.0,
        }
    }

    pub fn mask_integral(&self, k: usize, a: f64, b: f64) -> f64 {
        match self {
            Dissipation::Full => b - a,
            Dissipation::Cutoff(spec) => spec.integral(k, a, b),
            Dissipation::Inviscid => 0.0,
        }
    }
}

fn l2_kernel(diss: &[f64], n_alpha: &[f64], x: &[f64], f: &[f64], out: &mut [f64]) {
    let kk = x.len() - 1;
    for k in 0..=kk {
        let mut v = -diss[k] * x[k] + f[k];
        if k > 0 {
            v += n_alpha[k - 1] * x[k - 1] * x[k];
        }
        if k < kk {
            v -= n_alpha[k] * x[k + 1] * x[k + 1];
        }
        out[k] = v;
    }
}

fn rescaled_kernel(diss: &[f64], delta: &[f64], x: &[f64], out: &mut [f64]) {
    let kk = x.len() - 1;
    for k in 0..=kk {
        let mut v = -diss[k] * x[k];
        if k > 0 {
            v += x[k - 1] * x[k];
        }
        if k < kk {
            v -= delta[k] * x[k + 1] * x[k + 1];
        }
        out[k] = v;
    }
}

fn viscous_rates(ladder: &Ladder) -> Vec<f64> {
    let nu = ladder.params.nu;
    (0..ladder.modes()).map(|k| nu * ladder.n_pow(k, 2.0)).collect()
}

fn n_alpha(ladder: &Ladder) -> Vec<f64> {
    let a = ladder.params.alpha;
    (0..ladder.modes()).map(|k| ladder.n_pow(k, a)).collect()
}

pub fn rhs_l2(state: &ShellState, ladder: &Ladder, force: &[f64]) -> Result<Vec<f64>> {
    state.expect(Form::L2, ladder.modes())?;
    check_len(ladder.modes(), force.len())?;
    let mut out = vec![0.0; state.x.len()];
    l2_kernel(&viscous_rates(ladder), &n_alpha(ladder), &state.x, force, &mut out);
    Ok(out)
}

/// Energy-form right-hand side on an arbitrary frequency sequence.
pub fn rhs_l2_with_frequencies(
    x: &[f64],
    frequencies: &[f64],
    nu: f64,
    alpha: f64,
    force: &[f64],
) -> Result<Vec<f64>> {
    check_len(frequencies.len(), x.len())?;
    check_len(x.len(), force.len())?;
    let diss: Vec<f64> = frequencies.iter().map(|n| nu * n * n).collect();
    let na: Vec<f64> = frequencies.iter().map(|n| n.powf(alpha)).collect();
    let mut out = vec![0.0; x.len()];
    if !x.is_empty() {
        l2_kernel(&diss, &na, x, force, &mut out);
    }
    Ok(out)
}

pub fn rhs_rescaled(state: &ShellState, ladder: &Ladder, mask: &[f64]) -> Result<Vec<f64>> {
    state.expect(Form::Rescaled, ladder.modes())?;
    check_len(ladder.modes(), mask.len())?;
    let diss: Vec<f64> = viscous_rates(ladder)
        .iter()
        .zip(mask)
        .map(|(r, m)| r * m)
        .collect();
    let mut out = vec![0.0; state.x.len()];
    rescaled_kernel(&diss, &ladder.delta, &state.x, &mut out);
    Ok(out)
}

fn linf_coefficients(ladder: &Ladder) -> Vec<f64> {
    let a = ladder.params.alpha;
    (0..ladder.k_max())
        .map(|k| (2.0 * (a - 1.0) * (ladder.ln_n(k) - ladder.ln_n(k + 1)) + ladder.ln_n(k)).exp())
        .collect()
}

fn linf_kernel(diss: &[f64], n: &[f64], coef: &[f64], y: &[f64], h: &[f64], out: &mut [f64]) {
    let kk = y.len() - 1;
    for k in 0..=kk {
        let mut v = -diss[k] * y[k] + h[k];
        if k > 0 {
            v += n[k - 1] * y[k - 1] * y[k];
        }
        if k < kk {
            v -= coef[k] * y[k + 1] * y[k + 1];
        }
        out[k] = v;
    }
}

pub fn rhs_linf(state: &ShellState, ladder: &Ladder, force: &[f64]) -> Result<Vec<f64>> {
    state.expect(Form::Linf, ladder.modes())?;
    check_len(ladder.modes(), force.len())?;
    let mut out = vec![0.0; state.x.len()];
    linf_kernel(
        &viscous_rates(ladder),
        &ladder.n,
        &linf_coefficients(ladder),
        &state.x,
        force,
        &mut out,
    );
    Ok(out)
}

/// Changes normalization; the time is preserved.
pub fn convert(state: &ShellState, to: Form, ladder: &Ladder) -> ShellState {
    if state.form == to {
        return state.clone();
    }
    let a = ladder.params.alpha;
    let p = to.weight(a) - state.form.weight(a);
    let x = state
        .x
        .iter()
        .enumerate()
        .map(|(k, v)| v * ladder.n_pow(k, p))
        .collect();
    ShellState::new(state.t, to, x)
}

/// Converts a whole amplitude vector between forms.
pub fn convert_vec(x: &[f64], from: Form, to: Form, ladder: &Ladder) -> Vec<f64> {
    convert(&ShellState::new(0.0, from, x.to_vec()), to, ladder).x
}

/// Forces reconstructed along a solution of the switched rescaled system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceRecord {
    pub times: Vec<f64>,
    /// `g[i][k]`, rescaled normalization.
    pub g: Vec<Vec<f64>>,
    /// `f[i][k] = N_k^(-alpha) g[i][k]`, energy normalization.
    pub f: Vec<Vec<f64>>,
}

impl ForceRecord {
    /// `sup_t N_k^sigma |f_k(t)|` for every mode.
    pub fn weighted_sup(&self, ladder: &Ladder, sigma: f64) -> Vec<f64> {
        (0..ladder.modes())
            .map(|k| {
                let w = ladder.n_pow(k, sigma);
                self.f.iter().map(|row| w * row[k].abs()).fold(0.0, f64::max)
            })
            .collect()
    }
}

pub fn recorded_force(
    trajectory: &Trajectory,
    ladder: &Ladder,
    spec: &ForcingSpec,
) -> Result<ForceRecord> {
    if trajectory.form != Form::Rescaled {
        return Err(Error::FormMismatch {
            expected: Form::Rescaled,
            got: trajectory.form,
        });
    }
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    check_len(ladder.modes(), trajectory.dim())?;
    let rates = viscous_rates(ladder);
    let a = ladder.params.alpha;
    let mut g = Vec::with_capacity(trajectory.len());
    let mut f = Vec::with_capacity(trajectory.len());
    for (&t, x) in trajectory.times.iter().zip(&trajectory.states) {
        let gi: Vec<f64> = (0..x.len())
            .map(|k| (1.0 - evaluate_cutoff(spec, k, t)) * rates[k] * x[k])
            .collect();
        let fi = gi
            .iter()
            .enumerate()
            .map(|(k, v)| v * ladder.n_pow(k, -a))
            .collect();
        g.push(gi);
        f.push(fi);
    }
    Ok(ForceRecord {
        times: trajectory.times.clone(),
        g,
        f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelVariant {
    SuperExpObukhov,
    GeometricObukhov { lambda: f64 },
    KatzPavlovic { lambda: f64 },
}

impl ModelVariant {
    pub fn lambda(&self) -> Option<f64> {
        match *self {
            ModelVariant::SuperExpObukhov => None,
            ModelVariant::GeometricObukhov { lambda } | ModelVariant::KatzPavlovic { lambda } => {
                Some(lambda)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.lambda() {
            Some(l) if !(l > 1.0 && l.is_finite()) => Err(Error::ParameterOutOfRange(format!(
                "lambda must exceed 1, got {l}"
            ))),
            _ => Ok(()),
        }
    }
}

fn kp_kernel(diss: &[f64], lam_alpha: &[f64], x: &[f64], f: &[f64], out: &mut [f64]) {
    let kk = x.len() - 1;
    for k in 0..=kk {
        let mut v = -diss[k] * x[k] + f[k];
        if k > 0 {
            v += lam_alpha[k - 1] * x[k - 1] * x[k - 1];
        }
        if k < kk {
            v -= lam_alpha[k] * x[k] * x[k + 1];
        }
        out[k] = v;
    }
}

/// Energy-form derivative of a comparison model. The super-exponential
/// variant needs a ladder; use [`rhs_l2`] for it.
pub fn rhs_variant(
    x: &[f64],
    variant: ModelVariant,
    nu: f64,
    alpha: f64,
    force: &[f64],
) -> Result<Vec<f64>> {
    variant.validate()?;
    check_len(x.len(), force.len())?;
    let lambda = variant.lambda().ok_or_else(|| {
        Error::InvalidConfig("the super-exponential model is evaluated through its ladder".into())
    })?;
    let freq: Vec<f64> = (0..x.len()).map(|k| lambda.powi(k as i32)).collect();
    match variant {
        ModelVariant::GeometricObukhov { .. } => rhs_l2_with_frequencies(x, &freq, nu, alpha, force),
        ModelVariant::KatzPavlovic { .. } => {
            let mut out = vec![0.0; x.len()];
            if !x.is_empty() {
                let diss: Vec<f64> = freq.iter().map(|n| nu * n * n).collect();
                let la: Vec<f64> = freq.iter().map(|n| n.powf(alpha)).collect();
                kp_kernel(&diss, &la, x, force, &mut out);
            }
            Ok(out)
        }
        ModelVariant::SuperExpObukhov => unreachable!(),
    }
}

/// Rescaled system with a per-mode dissipation switch.
#[derive(Debug, Clone)]
pub struct RescaledSystem {
    rates: Vec<f64>,
    delta: Vec<f64>,
    dissipation: Dissipation,
}

impl RescaledSystem {
    pub fn new(ladder: &Ladder, dissipation: Dissipation) -> Self {
        Self {
            rates: viscous_rates(ladder),
            delta: ladder.delta.clone(),
            dissipation,
        }
    }

    pub fn dissipation(&self) -> &Dissipation {
        &self.dissipation
    }
}

impl OdeSystem for RescaledSystem {
    fn dim(&self) -> usize {
        self.rates.len()
    }

    fn rhs(&self, t: f64, _toward: f64, y: &[f64], dy: &mut [f64]) {
        let kk = y.len() - 1;
        for k in 0..=kk {
            let mut v = -self.dissipation.mask(k, t) * self.rates[k] * y[k];
            if k > 0 {
                v += y[k - 1] * y[k];
            }
            if k < kk {
                v -= self.delta[k] * y[k + 1] * y[k + 1];
            }
            dy[k] = v;
        }
    }

    fn linear_split(&self) -> Option<&dyn LinearSplit> {
        Some(self)
    }
}

impl LinearSplit for RescaledSystem {
    fn rate(&self, k: usize, t: f64, _toward: f64) -> f64 {
        self.dissipation.mask(k, t) * self.rates[k]
    }

    fn rate_integral(&self, k: usize, a: f64, b: f64) -> f64 {
        self.rates[k] * self.dissipation.mask_integral(k, a, b)
    }

    fn nonlinear(&self, _t: f64, _toward: f64, y: &[f64], dy: &mut [f64]) {
        let zeros = vec![0.0; y.len()];
        rescaled_kernel(&zeros, &self.delta, y, dy);
    }
}

/// Unforced energy-form system.
#[derive(Debug, Clone)]
pub struct L2System {
    rates: Vec<f64>,
    n_alpha: Vec<f64>,
}

impl L2System {
    pub fn new(ladder: &Ladder) -> Self {
        Self {
            rates: viscous_rates(ladder),
            n_alpha: n_alpha(ladder),
        }
    }

    pub fn with_frequencies(frequencies: &[f64], nu: f64, alpha: f64) -> Self {
        Self {
            rates: frequencies.iter().map(|n| nu * n * n).collect(),
            n_alpha: frequencies.iter().map(|n| n.powf(alpha)).collect(),
        }
    }
}

impl OdeSystem for L2System {
    fn dim(&self) -> usize {
        self.rates.len()
    }

    fn rhs(&self, _t: f64, _toward: f64, y: &[f64], dy: &mut [f64]) {
        let zeros = vec![0.0; y.len()];
        l2_kernel(&self.rates, &self.n_alpha, y, &zeros, dy);
    }
}

/// Unforced sup-form system.
#[derive(Debug, Clone)]
pub struct LinfSystem {
    rates: Vec<f64>,
    n: Vec<f64>,
    coef: Vec<f64>,
}

impl LinfSystem {
    pub fn new(ladder: &Ladder) -> Self {
        Self {
            rates: viscous_rates(ladder),
            n: ladder.n.clone(),
            coef: linf_coefficients(ladder),
        }
    }
}

impl OdeSystem for LinfSystem {
    fn dim(&self) -> usize {
        self.rates.len()
    }

    fn rhs(&self, _t: f64, _toward: f64, y: &[f64], dy: &mut [f64]) {
        let zeros = vec![0.0; y.len()];
        linf_kernel(&self.rates, &self.n, &self.coef, y, &zeros, dy);
    }
}

/// Katz-Pavlovic model on a geometric ladder, energy form, unforced.
#[derive(Debug, Clone)]
pub struct KatzPavlovicSystem {
    rates: Vec<f64>,
    lam_alpha: Vec<f64>,
}

impl KatzPavlovicSystem {
    pub fn new(k_max: usize, lambda: f64, nu: f64, alpha: f64) -> Result<Self> {
        ModelVariant::KatzPavlovic { lambda }.validate()?;
        let freq: Vec<f64> = (0..=k_max).map(|k| lambda.powi(k as i32)).collect();
        Ok(Self {
            rates: freq.iter().map(|n| nu * n * n).collect(),
            lam_alpha: freq.iter().map(|n| n.powf(alpha)).collect(),
        })
    }
}

impl OdeSystem for KatzPavlovicSystem {
    fn dim(&self) -> usize {
        self.rates.len()
    }

    fn rhs(&self, _t: f64, _toward: f64, y: &[f64], dy: &mut [f64]) {
        let zeros = vec![0.0; y.len()];
        kp_kernel(&self.rates, &self.lam_alpha, y, &zeros, dy);
    }
}
