//! Energy balance, sup-type Besov norms, blow-up detection, Galerkin
//! convergence, and regularity of the recorded force.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{
    integrate_backward_galerkin, BackwardOptions, IntegratorConfig, Trajectory,
};
use crate::ladder::Ladder;
use crate::model::{convert_vec, evaluate_cutoff, ForceRecord, ForcingSpec, Form, ShellState};

/// Energy `e(t) = sum X_k^2 / 2` and its balance along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// `int_{t0}^t sum nu N_k^2 X_k^2`.
    pub dissipation: Vec<f64>,
    /// `int_{t0}^t sum X_k f_k`.
    pub work: Vec<f64>,
    /// `e(t) + dissipation - e(t0) - work`.
    pub residual: Vec<f64>,
    pub max_abs_residual: f64,
    /// Largest `|residual| / e(t0)`.
    pub max_rel_residual: f64,
    /// Largest `|e(t) - e(t0)| / e(t0)`.
    pub max_rel_drift: f64,
}

const QUADRATURE_SUBDIVISIONS: usize = 16;

/// Energy balance of `traj`. With `force` set, the force reconstructed from
/// the dissipation cutoff enters the work term.
pub fn energy(traj: &Trajectory, ladder: &Ladder, force: Option<&ForcingSpec>) -> Result<EnergyReport> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if traj.dim() != ladder.modes() {
        return Err(Error::DimensionMismatch {
            expected: ladder.modes(),
            got: traj.dim(),
        });
    }
    let nu = ladder.params.nu;
    let rates: Vec<f64> = (0..ladder.modes()).map(|k| nu * ladder.n_pow(k, 2.0)).collect();
    let rates_ref = &rates;
    let densities = |t: f64, state: &[f64]| -> (f64, f64, f64) {
        let x = convert_vec(state, traj.form, Form::L2, ladder);
        let e: f64 = x.iter().map(|v| 0.5 * v * v).sum();
        let d: f64 = x.iter().zip(rates_ref).map(|(v, r)| r * v * v).sum();
        let w = match force {
            None => 0.0,
            Some(spec) => {
                // f_k = (1 - rho_k) nu N_k^2 X_k in energy normalization
                x.iter()
                    .enumerate()
                    .map(|(k, v)| (1.0 - evaluate_cutoff(spec, k, t)) * rates_ref[k] * v * v)
                    .sum()
            }
        };
        (e, d, w)
    };

    let n = traj.len();
    let mut energy = Vec::with_capacity(n);
    let mut dissipation = vec![0.0];
    let mut work = vec![0.0];
    let (e0, mut d_prev, mut w_prev) = densities(traj.times[0], &traj.states[0]);
    energy.push(e0);
    for i in 1..n {
        let (ta, tb) = (traj.times[i - 1], traj.times[i]);
        let mut d_acc = 0.0;
        let mut w_acc = 0.0;
        let h = (tb - ta) / QUADRATURE_SUBDIVISIONS as f64;
        for j in 1..=QUADRATURE_SUBDIVISIONS {
            let t = if j == QUADRATURE_SUBDIVISIONS { tb } else { ta + j as f64 * h };
            let state = if j == QUADRATURE_SUBDIVISIONS {
                traj.states[i].clone()
            } else {
                traj.state_at(t).unwrap_or_else(|| traj.states[i].clone())
            };
            let (_, d, w) = densities(t, &state);
            d_acc += 0.5 * h * (d + d_prev);
            w_acc += 0.5 * h * (w + w_prev);
            d_prev = d;
            w_prev = w;
        }
        let (e, _, _) = densities(tb, &traj.states[i]);
        energy.push(e);
        dissipation.push(dissipation[i - 1] + d_acc);
        work.push(work[i - 1] + w_acc);
    }
    let residual: Vec<f64> = (0..n)
        .map(|i| energy[i] + dissipation[i] - e0 - work[i])
        .collect();
    let max_abs_residual = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let scale = if e0 > 0.0 { e0 } else { 1.0 };
    let max_rel_drift = energy.iter().fold(0.0f64, |m, e| m.max((e - e0).abs())) / scale;
    Ok(EnergyReport {
        times: traj.times.clone(),
        energy,
        dissipation,
        work,
        residual,
        max_abs_residual,
        max_rel_residual: max_abs_residual / scale,
        max_rel_drift,
    })
}

/// Truncated energy of a rescaled amplitude vector, `sum N_k^(-2 alpha) x_k^2 / 2`.
pub fn truncated_energy(x: &[f64], ladder: &Ladder) -> f64 {
    let a = ladder.params.alpha;
    x.iter()
        .enumerate()
        .map(|(k, v)| 0.5 * ladder.n_pow(k, -2.0 * a) * v * v)
        .sum()
}

/// `sup_k N_k^sigma |X_k|` and the first index attaining it.
pub fn besov_norm_with(x: &[f64], frequencies: &[f64], sigma: f64) -> Result<(f64, usize)> {
    if !(sigma >= 0.0) {
        return Err(Error::ParameterOutOfRange(format!("sigma must be >= 0, got {sigma}")));
    }
    if x.len() != frequencies.len() {
        return Err(Error::DimensionMismatch {
            expected: frequencies.len(),
            got: x.len(),
        });
    }
    let mut best = (0.0, 0);
    for (k, (v, n)) in x.iter().zip(frequencies).enumerate() {
        let w = if sigma == 0.0 { v.abs() } else { n.powf(sigma) * v.abs() };
        if w > best.0 {
            best = (w, k);
        }
    }
    Ok(best)
}

pub fn besov_norm(state: &ShellState, ladder: &Ladder, sigma: f64) -> Result<(f64, usize)> {
    if state.form != Form::L2 {
        return Err(Error::FormMismatch {
            expected: Form::L2,
            got: state.form,
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::ParameterOutOfRange(format!("sigma must be >= 0, got {sigma}")));
    }
    if state.x.len() != ladder.modes() {
        return Err(Error::DimensionMismatch {
            expected: ladder.modes(),
            got: state.x.len(),
        });
    }
    let mut best = (0.0, 0);
    for (k, v) in state.x.iter().enumerate() {
        let w = ladder.n_pow(k, sigma) * v.abs();
        if w > best.0 {
            best = (w, k);
        }
    }
    Ok(best)
}

/// Norms along a trajectory for several exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub sigmas: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i][j]` at time `i` for exponent `j`.
    pub values: Vec<Vec<f64>>,
    pub argmax: Vec<Vec<usize>>,
}

pub fn norm_report(traj: &Trajectory, ladder: &Ladder, sigmas: &[f64]) -> Result<NormReport> {
    let mut values = Vec::with_capacity(traj.len());
    let mut argmax = Vec::with_capacity(traj.len());
    for (&t, s) in traj.times.iter().zip(&traj.states) {
        let x = ShellState::new(t, Form::L2, convert_vec(s, traj.form, Form::L2, ladder));
        let mut row = Vec::with_capacity(sigmas.len());
        let mut arg = Vec::with_capacity(sigmas.len());
        for &sigma in sigmas {
            let (v, k) = besov_norm(&x, ladder, sigma)?;
            row.push(v);
            arg.push(k);
        }
        values.push(row);
        argmax.push(arg);
    }
    Ok(NormReport {
        sigmas: sigmas.to_vec(),
        times: traj.times.clone(),
        values,
        argmax,
    })
}

/// Default blow-up threshold relative to the norm at the start of a forward run.
pub const BLOWUP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowupReason {
    Threshold,
    StepSizeCollapse,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupOutcome {
    pub blown_up: bool,
    pub t_detect: Option<f64>,
    pub reason: Option<BlowupReason>,
    pub start_norm: f64,
    pub peak_norm: f64,
    pub threshold: f64,
}

/// Flags blow-up when the `C^sigma` norm exceeds `factor` times its initial
/// value, or when the run ended in a step-size collapse or a non-finite state.
/// `frequencies` are the `N_k` of the trajectory's modes; the trajectory must
/// be in energy normalization.
pub fn blowup_indicator(
    traj: &Trajectory,
    frequencies: &[f64],
    sigma: f64,
    factor: f64,
    failure: Option<&Error>,
) -> Result<BlowupOutcome> {
    if traj.form != Form::L2 {
        return Err(Error::FormMismatch {
            expected: Form::L2,
            got: traj.form,
        });
    }
    let (_, first) = traj.first().ok_or(Error::EmptyTrajectory)?;
    let (start_norm, _) = besov_norm_with(first, frequencies, sigma)?;
    let threshold = factor * start_norm;
    let mut peak_norm = start_norm;
    let mut detect = None;
    for (&t, x) in traj.times.iter().zip(&traj.states) {
        let (v, _) = besov_norm_with(x, frequencies, sigma)?;
        peak_norm = peak_norm.max(v);
        if detect.is_none() && start_norm > 0.0 && v > threshold {
            detect = Some((t, BlowupReason::Threshold));
        }
    }
    if detect.is_none() {
        detect = match failure {
            Some(Error::StepSizeCollapse { t, .. }) => Some((*t, BlowupReason::StepSizeCollapse)),
            Some(Error::NonFiniteState { t }) => Some((*t, BlowupReason::NonFinite)),
            _ => None,
        };
    }
    Ok(BlowupOutcome {
        blown_up: detect.is_some(),
        t_detect: detect.map(|d| d.0),
        reason: detect.map(|d| d.1),
        start_norm,
        peak_norm,
        threshold,
    })
}

/// Pairwise sup-over-time differences between Galerkin truncations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinReport {
    pub k_list: Vec<usize>,
    pub compared_modes: usize,
    pub grid: Vec<f64>,
    pub pairs: Vec<GalerkinPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinPair {
    pub k_low: usize,
    pub k_high: usize,
    /// `sup_t |x_k^low - x_k^high|` for `k < compared_modes`.
    pub sup_diff: Vec<f64>,
    /// The same divided by `A_k`.
    pub relative: Vec<f64>,
}

impl GalerkinReport {
    pub fn max_relative(&self) -> f64 {
        self.pairs
            .iter()
            .flat_map(|p| p.relative.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// Backward runs at every truncation in `k_list` from `x_k(0) = A_k`, compared
/// on a shared time grid that every run lands on exactly.
pub fn galerkin_convergence(
    ladder: &Ladder,
    k_list: &[usize],
    options: &BackwardOptions,
    config: &IntegratorConfig,
    grid_points: usize,
) -> Result<GalerkinReport> {
    if k_list.len() < 2 {
        return Err(Error::InvalidConfig(
            "a Galerkin study needs at least two truncation levels".into(),
        ));
    }
    let k_min = *k_list.iter().min().unwrap();
    let compared_modes = k_min.saturating_sub(4) + 1;
    let base = ladder.retruncate(k_min)?;
    let grid = crate::barriers::lemma_grid(&base, grid_points);
    let mut cfg = config.clone();
    cfg.event_times.extend(grid.iter().copied());

    let runs: Vec<Result<(usize, Ladder, Trajectory)>> = k_list
        .par_iter()
        .map(|&kk| {
            let lad = ladder.retruncate(kk)?;
            let tr = integrate_backward_galerkin(&lad, &lad.amp, options, &cfg)?;
            Ok((kk, lad, tr))
        })
        .collect();
    let runs: Vec<(usize, Ladder, Trajectory)> = runs.into_iter().collect::<Result<_>>()?;

    let sample = |tr: &Trajectory| -> Result<Vec<Vec<f64>>> {
        grid.iter()
            .map(|&t| {
                tr.index_of(t)
                    .map(|i| tr.states[i].clone())
                    .ok_or_else(|| Error::SpanMismatch(format!("grid time {t:e} was not hit")))
            })
            .collect()
    };
    let sampled: Vec<Vec<Vec<f64>>> = runs.iter().map(|(_, _, tr)| sample(tr)).collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (&sampled[i], &sampled[j]);
            let sup_diff: Vec<f64> = (0..compared_modes)
                .map(|k| {
                    a.iter()
                        .zip(b)
                        .map(|(u, v)| (u[k] - v[k]).abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            let relative = sup_diff
                .iter()
                .enumerate()
                .map(|(k, d)| d / ladder.amp[k])
                .collect();
            let (lo, hi) = (runs[i].0.min(runs[j].0), runs[i].0.max(runs[j].0));
            pairs.push(GalerkinPair {
                k_low: lo,
                k_high: hi,
                sup_diff,
                relative,
            });
        }
    }
    Ok(GalerkinReport {
        k_list: k_list.to_vec(),
        compared_modes,
        grid,
        pairs,
    })
}

/// Finite-difference weights for the `order`-th derivative at `x0` on arbitrary nodes.
fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let m = order;
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Derivative of order `j` of the samples `(t_i, v_i)` at every node, from a
/// centered stencil of `j + 4` nodes (fourth-order accurate on smooth data).
pub fn sampled_derivative(times: &[f64], values: &[f64], order: usize) -> Vec<f64> {
    if order == 0 {
        return values.to_vec();
    }
    let n = times.len();
    let width = (order + 4).min(n);
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(width / 2).min(n - width);
            let nodes = &times[start..start + width];
            let w = fd_weights(times[i], nodes, order);
            w.iter().zip(&values[start..start + width]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub sigmas: Vec<f64>,
    pub max_order: usize,
    /// `table[j][s][k] = sup_t N_k^sigma_s |d^j f_k / dt^j|`.
    pub table: Vec<Vec<Vec<f64>>>,
    /// Whether `f_k` is exactly zero at every sample in `[t_k / 2, 0]`.
    pub support_ok: Vec<bool>,
}

impl RegularityReport {
    pub fn row(&self, order: usize, sigma_index: usize) -> &[f64] {
        &self.table[order][sigma_index]
    }
}

/// Sup norms of time derivatives of the recorded force. Derivatives are taken
/// on each mode's support `[-T, t_k / 2]` so the stencils never straddle the
/// switch-off.
pub fn force_regularity(
    record: &ForceRecord,
    ladder: &Ladder,
    sigmas: &[f64],
    max_order: usize,
) -> Result<RegularityReport> {
    if max_order > 4 {
        return Err(Error::ParameterOutOfRange(format!(
            "derivative order must be at most 4, got {max_order}"
        )));
    }
    if record.times.len() < max_order + 5 {
        return Err(Error::InvalidConfig("too few force samples for the requested order".into()));
    }
    let modes = ladder.modes();
    // samples in increasing time
    let mut order: Vec<usize> = (0..record.times.len()).collect();
    order.sort_by(|&a, &b| record.times[a].partial_cmp(&record.times[b]).unwrap());
    order.dedup_by(|a, b| record.times[*a] == record.times[*b]);
    let times: Vec<f64> = order.iter().map(|&i| record.times[i]).collect();

    let support_ok: Vec<bool> = (0..modes)
        .map(|k| {
            let half = if k == 0 { f64::NEG_INFINITY } else { 0.5 * ladder.t_act[k] };
            order
                .iter()
                .filter(|&&i| record.times[i] >= half)
                .all(|&i| record.f[i][k] == 0.0)
        })
        .collect();

    let per_mode: Vec<Vec<Vec<f64>>> = (0..modes)
        .into_par_iter()
        .map(|k| {
            let half = if k == 0 { 0.0 } else { 0.5 * ladder.t_act[k] };
            let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] <= half).collect();
            let ts: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            let vs: Vec<f64> = idx.iter().map(|&i| record.f[order[i]][k]).collect();
            (0..=max_order)
                .map(|j| {
                    if ts.len() < j + 4 {
                        return vec![0.0; sigmas.len()];
                    }
                    let d = sampled_derivative(&ts, &vs, j);
                    let sup = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    sigmas.iter().map(|&s| ladder.n_pow(k, s) * sup).collect()
                })
                .collect()
        })
        .collect();

    let table = (0..=max_order)
        .map(|j| {
            (0..sigmas.len())
                .map(|s| (0..modes).map(|k| per_mode[k][j][s]).collect())
                .collect()
        })
        .collect();
    Ok(RegularityReport {
        sigmas: sigmas.to_vec(),
        max_order,
        table,
        support_ok,
    })
}

/// First time each mode reaches `fraction` of `reference_k`, scanning the
/// trajectory in its own time order.
pub fn arrival_times(traj: &Trajectory, reference: &[f64], fraction: f64) -> Vec<Option<f64>> {
    (0..traj.dim())
        .map(|k| {
            traj.times
                .iter()
                .zip(&traj.states)
                .find(|(_, x)| x[k] >= fraction * reference[k])
                .map(|(t, _)| *t)
        })
        .collect()
}

/// Time at which each mode attains its maximum over the trajectory.
pub fn peak_times(traj: &Trajectory) -> Vec<f64> {
    (0..traj.dim())
        .map(|k| {
            let mut best = (f64::NEG_INFINITY, traj.times.first().copied().unwrap_or(0.0));
            for (&t, x) in traj.times.iter().zip(&traj.states) {
                if x[k] > best.0 {
                    best = (x[k], t);
                }
            }
            best.1
        })
        .collect()
}
