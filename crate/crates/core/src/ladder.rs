//! Model constants and the derived frequency/amplitude/time sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::{DoubleDouble, Precision};

/// Raw model constants. `k_max` is the truncation level (mode count minus one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderParams {
    pub nu: f64,
    pub alpha: f64,
    pub n0: f64,
    pub b: f64,
    pub beta: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    pub k_max: usize,
    /// Regularity exponent used for blow-up detection.
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_c() -> f64 {
    0.1
}

fn default_s() -> f64 {
    0.2
}

impl LadderParams {
    /// Ladder used for the blow-up profile figure: `nu = 1`, `alpha = 5/2`,
    /// `N_k = 1.5^(1.15^k)`, `beta = 2.4` so that `Y_k(0) = N_k^1.4`.
    pub fn figure2(k_max: usize) -> Self {
        Self {
            nu: 1.0,
            alpha: 2.5,
            n0: 1.5,
            b: 1.15,
            beta: 2.4,
            c: 1.0,
            k_max,
            s: default_s(),
            precision: Precision::Double,
        }
    }

    /// A parameter set satisfying the viscous range constraints with enough
    /// scale separation for the barrier estimates to hold at finite `N_0`.
    pub fn strict_viscous(k_max: usize) -> Self {
        Self {
            nu: 1.0,
            alpha: 3.3,
            n0: 3.0e3,
            b: 1.2,
            beta: 2.6,
            c: default_c(),
            k_max,
            s: 1.0,
            precision: Precision::Double,
        }
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = k_max;
        self
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    /// Basic invariants every ladder must satisfy regardless of validation mode.
    pub fn basic_checks(&self) -> Vec<ConstraintCheck> {
        vec![
            ConstraintCheck::greater("N0 > 1", self.n0, 1.0),
            ConstraintCheck::greater("b > 1", self.b, 1.0),
            ConstraintCheck::greater("c > 0", self.c, 0.0),
            ConstraintCheck::greater("s > 0", self.s, 0.0),
            ConstraintCheck::at_least("nu >= 0", self.nu, 0.0),
            ConstraintCheck::at_least("alpha >= 1", self.alpha, 1.0),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    StrictViscous,
    StrictInviscid,
    Illustrative,
}

/// One numeric constraint. `margin >= 0` (strictly `> 0` for strict
/// inequalities) means the constraint holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl ConstraintCheck {
    fn greater(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Self {
            name: name.into(),
            passed: margin > 0.0,
            margin,
            value: Some(lhs),
        }
    }

    fn at_least(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Self {
            name: name.into(),
            passed: margin >= 0.0,
            margin,
            value: Some(lhs),
        }
    }

    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        let margin = bound - value;
        Self {
            name: name.into(),
            passed: margin >= 0.0,
            margin,
            value: Some(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub mode: ValidationMode,
    pub epsilon: f64,
    pub ranges: Vec<ConstraintCheck>,
    pub ratios: Vec<ConstraintCheck>,
    pub smallness: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn ranges_pass(&self) -> bool {
        self.ranges.iter().all(|c| c.passed)
    }

    pub fn ratios_pass(&self) -> bool {
        self.ratios.iter().all(|c| c.passed)
    }

    pub fn smallness_pass(&self) -> bool {
        self.smallness.iter().all(|c| c.passed)
    }

    pub fn all_pass(&self) -> bool {
        self.ranges_pass() && self.ratios_pass() && self.smallness_pass()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.ranges
            .iter()
            .chain(&self.ratios)
            .chain(&self.smallness)
            .filter(|c| !c.passed)
    }
}

/// Immutable ladder: `N_k = N0^(b^k)`, `A_k = N_k^beta`,
/// `delta_k = (N_k / N_{k+1})^(2 alpha)`, activation times `t_k` and horizon `T = c / A_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub params: LadderParams,
    pub n: Vec<f64>,
    pub amp: Vec<f64>,
    pub delta: Vec<f64>,
    /// `t_k` for `k = 0..=K`. Entry 0 is set to `-T`; mode 0 is never switched.
    pub t_act: Vec<f64>,
    pub horizon: f64,
    ln_n: Vec<f64>,
}

pub fn build_ladder(params: LadderParams) -> Result<Ladder> {
    if let Some(bad) = params.basic_checks().into_iter().find(|c| !c.passed) {
        return Err(Error::ParameterOutOfRange(format!(
            "{} (value {})",
            bad.name,
            bad.value.unwrap_or(f64::NAN)
        )));
    }
    let kk = params.k_max;
    let max_ln = f64::MAX.ln();

    // ln N_k = b^k ln N0, kept in double-double when requested
    let ln_n_dd: Vec<DoubleDouble> = match params.precision {
        Precision::Double => (0..=kk)
            .map(|k| DoubleDouble::new(params.b.powi(k as i32) * params.n0.ln()))
            .collect(),
        Precision::Compensated => {
            let ln_n0 = DoubleDouble::new(params.n0).ln();
            let b = DoubleDouble::new(params.b);
            let mut acc = ln_n0;
            let mut out = Vec::with_capacity(kk + 1);
            for _ in 0..=kk {
                out.push(acc);
                acc = acc * b;
            }
            out
        }
    };

    for (k, l) in ln_n_dd.iter().enumerate() {
        if l.hi > max_ln {
            return Err(Error::Overflow { quantity: "N_k", k });
        }
        // A_k and the quadratic terms A_k^2 / N_k^(2 alpha) must stay finite
        if params.beta * l.hi > max_ln / 2.0 {
            return Err(Error::Overflow { quantity: "A_k", k });
        }
        if 2.0 * params.alpha * l.hi > max_ln {
            return Err(Error::Overflow {
                quantity: "N_k^(2 alpha)",
                k,
            });
        }
    }

    let (n, amp, delta) = match params.precision {
        Precision::Double => {
            let n: Vec<f64> = (0..=kk)
                .map(|k| params.n0.powf(params.b.powi(k as i32)))
                .collect();
            let amp: Vec<f64> = n.iter().map(|nk| nk.powf(params.beta)).collect();
            let delta: Vec<f64> = n
                .windows(2)
                .map(|w| (w[0] / w[1]).powf(2.0 * params.alpha))
                .collect();
            (n, amp, delta)
        }
        Precision::Compensated => {
            let beta = DoubleDouble::new(params.beta);
            let two_alpha = DoubleDouble::new(2.0 * params.alpha);
            let n = ln_n_dd.iter().map(|l| l.exp().to_f64()).collect();
            let amp = ln_n_dd.iter().map(|l| (beta * *l).exp().to_f64()).collect();
            let delta = ln_n_dd
                .windows(2)
                .map(|w| (two_alpha * (w[0] - w[1])).exp().to_f64())
                .collect();
            (n, amp, delta)
        }
    };

    if let Some(k) = amp.iter().position(|a: &f64| !a.is_finite() || *a <= 0.0) {
        return Err(Error::Overflow { quantity: "A_k", k });
    }

    let horizon = params.c / amp[0];
    let t_act = (0..=kk)
        .map(|k| {
            if k <= 2 {
                -horizon
            } else {
                -params.c / amp[k - 2]
            }
        })
        .collect();

    Ok(Ladder {
        params,
        n,
        amp,
        delta,
        t_act,
        horizon,
        ln_n: ln_n_dd.iter().map(|l| l.to_f64()).collect(),
    })
}

impl Ladder {
    pub fn k_max(&self) -> usize {
        self.params.k_max
    }

    pub fn modes(&self) -> usize {
        self.params.k_max + 1
    }

    pub fn ln_n(&self, k: usize) -> f64 {
        self.ln_n[k]
    }

    /// `N_k^p`, evaluated through `ln N_k` so that large exponents stay accurate.
    pub fn n_pow(&self, k: usize, p: f64) -> f64 {
        if p == 0.0 {
            1.0
        } else {
            (p * self.ln_n[k]).exp()
        }
    }

    /// `delta_k`, zero for `k = K` (the truncated term).
    pub fn delta_or_zero(&self, k: usize) -> f64 {
        self.delta.get(k).copied().unwrap_or(0.0)
    }

    /// A ladder with a different truncation level but identical constants.
    pub fn retruncate(&self, k_max: usize) -> Result<Ladder> {
        build_ladder(self.params.with_k_max(k_max))
    }

    /// Range constraints for the selected mode.
    fn range_checks(&self, mode: ValidationMode) -> Vec<ConstraintCheck> {
        let p = &self.params;
        let mut checks = p.basic_checks();
        match mode {
            ValidationMode::Illustrative => {}
            ValidationMode::StrictViscous => {
                checks.push(ConstraintCheck::greater("nu > 0", p.nu, 0.0));
                checks.push(ConstraintCheck::greater("alpha/2 > b", p.alpha / 2.0, p.b));
                checks.push(ConstraintCheck::greater("beta > 2b", p.beta, 2.0 * p.b));
                checks.push(ConstraintCheck::greater(
                    "beta > alpha - s",
                    p.beta,
                    p.alpha - p.s,
                ));
                checks.push(ConstraintCheck::greater("alpha > beta", p.alpha, p.beta));
            }
            ValidationMode::StrictInviscid => {
                checks.push(ConstraintCheck::at_most("nu = 0", p.nu, 0.0));
                checks.push(ConstraintCheck::greater("beta > 0", p.beta, 0.0));
                checks.push(ConstraintCheck::greater(
                    "beta > alpha - s",
                    p.beta,
                    p.alpha - p.s,
                ));
                checks.push(ConstraintCheck::greater("alpha > beta", p.alpha, p.beta));
            }
        }
        checks
    }

    fn ratio_checks(&self) -> Vec<ConstraintCheck> {
        let a = &self.amp;
        let c = self.params.c;
        (1..self.k_max())
            .map(|k| {
                ConstraintCheck::at_most(
                    format!("A_{k}/A_{} <= (c/100) A_{}/A_{k}", k - 1, k + 1),
                    a[k] / a[k - 1],
                    c / 100.0 * a[k + 1] / a[k],
                )
            })
            .collect()
    }

    /// The specific small quantities the barrier estimates rely on.
    fn smallness_checks(&self, epsilon: f64) -> Vec<ConstraintCheck> {
        let kk = self.k_max();
        let c = self.params.c;
        let ln_a: Vec<f64> = self.amp.iter().map(|a| a.ln()).collect();
        let ln_delta: Vec<f64> = self.delta.iter().map(|d| d.ln()).collect();
        let a = &self.amp;
        let mut out = Vec::new();

        for k in 2..kk {
            let ln_v = ln_delta[k] + 2.0 * ln_a[k + 1] - ln_a[k] - ln_a[k - 2] - c * a[k] / a[k - 1]
                + 0.5 * c * a[k - 1] / a[k - 2];
            out.push(ConstraintCheck::at_most(
                format!("(a) k={k}: delta_k A_(k+1)^2/(A_k A_(k-2)) exp(-c A_k/A_(k-1) + c/2 A_(k-1)/A_(k-2))"),
                ln_v.exp(),
                epsilon,
            ));
        }
        for k in 0..kk {
            let ln_v = ln_delta[k] + 2.0 * (ln_a[k + 1] - ln_a[k]);
            out.push(ConstraintCheck::at_most(
                format!("(b) k={k}: delta_k A_(k+1)^2/A_k^2"),
                ln_v.exp(),
                epsilon,
            ));
        }
        for k in 3..=kk {
            let ln_v = ln_a[k - 2] - ln_a[0] - 0.5 * c * a[k - 2] / a[k - 3];
            out.push(ConstraintCheck::at_most(
                format!("(c) k={k}: A_(k-2)/A_0 exp(-c/2 A_(k-2)/A_(k-3))"),
                ln_v.exp(),
                epsilon,
            ));
        }
        if kk >= 1 {
            let p = &self.params;
            let v = (p.nu * c * self.n[0] * self.n[0] / a[0]).exp()
                * (1.0 + 4.0 * (ln_delta[0] + 2.0 * (ln_a[1] - ln_a[0])).exp());
            out.push(ConstraintCheck::at_most(
                "(d) exp(nu c N_0^2/A_0)(1 + 4 delta_0 A_1^2/A_0^2) <= 2",
                v,
                2.0,
            ));
        }
        out
    }
}

/// Evaluates every parameter constraint. Failing constraints are data, not errors.
pub fn validate_constraints(ladder: &Ladder, mode: ValidationMode, epsilon: f64) -> ConstraintReport {
    let ranges = ladder.range_checks(mode);
    let (ratios, smallness) = match mode {
        ValidationMode::Illustrative => (Vec::new(), Vec::new()),
        _ => (ladder.ratio_checks(), ladder.smallness_checks(epsilon)),
    };
    ConstraintReport {
        mode,
        epsilon,
        ranges,
        ratios,
        smallness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_fig2() -> LadderParams {
        LadderParams::figure2(2)
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn figure2_ladder_values() {
        // reference values from a 40-digit evaluation of the closed formulas
        let l = build_ladder(small_fig2()).unwrap();
        assert!(rel(l.n[1], 1.594_061_041_735_204_3) < 1e-15);
        assert!(rel(l.n[2], 1.709_545_602_163_203_5) < 1e-15);
        assert!(rel(l.amp[0], 2.646_177_800_680_515_5) < 1e-15);
        assert!(rel(l.amp[2], 3.621_709_866_508_480_8) < 1e-14);
        assert!(rel(l.delta[0], 0.737_787_946_466_881_06) < 1e-14);
        assert!(rel(l.delta[1], 0.704_889_901_998_489_77) < 1e-14);
        assert!(rel(l.horizon, 0.377_903_555_740_975_06) < 1e-15);
        assert_eq!(l.t_act[1], -l.horizon);
        assert_eq!(l.t_act[2], -l.horizon);
    }

    #[test]
    fn compensated_mode_matches_reference() {
        let l = build_ladder(small_fig2().with_precision(Precision::Compensated)).unwrap();
        // 50-digit evaluation at the binary values of 1.15 and 2.4, rounded once
        assert_eq!(l.n[1], 1.594_061_041_735_204_4);
        assert_eq!(l.n[2], 1.709_545_602_163_203_4);
        assert_eq!(l.amp[1], 3.062_047_158_663_141);
        assert_eq!(l.amp[2], 3.621_709_866_508_479_7);
        assert_eq!(l.delta[0], 0.737_787_946_466_881_2);
        assert_eq!(l.delta[1], 0.704_889_901_998_489_9);
    }

    #[test]
    fn rejects_b_equal_one() {
        let p = LadderParams {
            n0: 2.0,
            b: 1.0,
            ..small_fig2()
        };
        match build_ladder(p) {
            Err(Error::ParameterOutOfRange(msg)) => assert!(msg.contains("b > 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_basics() {
        for p in [
            LadderParams { n0: 1.0, ..small_fig2() },
            LadderParams { c: 0.0, ..small_fig2() },
            LadderParams { nu: -1.0, ..small_fig2() },
            LadderParams { alpha: 0.5, ..small_fig2() },
            LadderParams { s: 0.0, ..small_fig2() },
        ] {
            assert!(matches!(build_ladder(p), Err(Error::ParameterOutOfRange(_))));
        }
    }

    #[test]
    fn overflow_reports_smallest_k() {
        let p = LadderParams {
            n0: 10.0,
            b: 2.0,
            k_max: 12,
            ..small_fig2()
        };
        // ln N_k = 2^k ln 10; N_k^(2 alpha) first exceeds f64::MAX at k = 6 (5 * 64 * 2.3026 > 709.78)
        match build_ladder(p) {
            Err(Error::Overflow { k, .. }) => assert_eq!(k, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn delta_recurrence_holds() {
        for prec in [Precision::Double, Precision::Compensated] {
            for p in [
                LadderParams::figure2(20),
                LadderParams::strict_viscous(8),
            ] {
                let l = build_ladder(p.with_precision(prec)).unwrap();
                let two_alpha = 2.0 * l.params.alpha;
                for k in 0..l.k_max() {
                    let lhs = l.delta[k] * l.n[k].powf(-two_alpha);
                    let rhs = l.n[k + 1].powf(-two_alpha);
                    assert!(rel(lhs, rhs) < 1e-13, "k={k} {lhs} {rhs}");
                    assert!(l.delta[k] > 0.0 && l.delta[k] < 1.0);
                }
            }
        }
    }

    #[test]
    fn double_exponential_law_and_ordering() {
        let l = build_ladder(LadderParams::figure2(16)).unwrap();
        for k in 1..=l.k_max() {
            let ratio = l.n[k].ln() / l.n[k - 1].ln();
            assert!(rel(ratio, l.params.b) < 1e-12);
            assert!(l.n[k] > l.n[k - 1]);
            assert!(l.amp[k] > l.amp[k - 1]);
        }
        for k in 3..=l.k_max() {
            assert!(l.t_act[k] > l.t_act[k - 1]);
            assert!(l.t_act[k] < 0.0);
        }
    }

    #[test]
    fn beta_equal_two_b_fails_with_zero_margin() {
        let p = LadderParams {
            beta: 2.3,
            ..LadderParams::figure2(4)
        };
        let l = build_ladder(p).unwrap();
        let r = validate_constraints(&l, ValidationMode::StrictViscous, 0.01);
        let c = r.ranges.iter().find(|c| c.name == "beta > 2b").unwrap();
        assert!(!c.passed);
        assert_eq!(c.margin, 0.0);
    }

    #[test]
    fn illustrative_mode_only_checks_ranges() {
        let l = build_ladder(LadderParams::figure2(6)).unwrap();
        let r = validate_constraints(&l, ValidationMode::Illustrative, 0.01);
        assert!(r.ratios.is_empty() && r.smallness.is_empty());
        assert!(r.all_pass());
    }

    #[test]
    fn inviscid_mode_requires_zero_viscosity() {
        let l = build_ladder(LadderParams::figure2(4)).unwrap();
        let r = validate_constraints(&l, ValidationMode::StrictInviscid, 0.01);
        assert!(!r.ranges_pass());
        let l = build_ladder(LadderParams::figure2(4).with_nu(0.0)).unwrap();
        let r = validate_constraints(&l, ValidationMode::StrictInviscid, 0.01);
        assert!(r.ranges_pass());
    }
}
