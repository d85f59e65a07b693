//! Python bindings: ladders, right-hand sides, form conversion, and the
//! backward construction with its round trip and energy check.

use obukhov_core::diagnostics::energy;
use obukhov_core::integrator::{
    integrate_backward_galerkin, roundtrip as core_roundtrip, BackwardOptions, GalerkinMode,
    IntegratorConfig,
};
use obukhov_core::ladder::{build_ladder, LadderParams};
use obukhov_core::model::{convert_vec, rhs_l2, rhs_linf, rhs_rescaled, Form, ShellState};
use obukhov_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(obukhov, NumericalError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::StepSizeCollapse { .. }
        | Error::NonFiniteState { .. }
        | Error::MaxSteps { .. }
        | Error::AmplificationBudgetExceeded { .. }
        | Error::EmptyTrajectory => NumericalError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_form(name: &str) -> PyResult<Form> {
    name.parse().map_err(to_py)
}

fn parse_mode(name: &str) -> PyResult<GalerkinMode> {
    match name {
        "viscous-masked" => Ok(GalerkinMode::ViscousMasked),
        "inviscid" => Ok(GalerkinMode::Inviscid),
        other => Err(PyValueError::new_err(format!(
            "unknown mode '{other}', expected 'viscous-masked' or 'inviscid'"
        ))),
    }
}

/// Frequencies `N_k`, amplitudes `A_k`, couplings, activation times and horizon.
#[pyclass(frozen, name = "Ladder")]
pub struct PyLadder {
    inner: obukhov_core::Ladder,
}

#[pymethods]
impl PyLadder {
    #[new]
    #[pyo3(signature = (nu, alpha, n0, b, beta, k_max, c = 0.1, s = 0.2))]
    #[allow(clippy::too_many_arguments)]
    fn new(nu: f64, alpha: f64, n0: f64, b: f64, beta: f64, k_max: usize, c: f64, s: f64) -> PyResult<Self> {
        let params = LadderParams {
            nu,
            alpha,
            n0,
            b,
            beta,
            c,
            k_max,
            s,
            ..LadderParams::figure2(k_max)
        };
        Ok(Self {
            inner: build_ladder(params).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn figure2(k_max: usize) -> PyResult<Self> {
        Ok(Self {
            inner: build_ladder(LadderParams::figure2(k_max)).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn strict_viscous(k_max: usize) -> PyResult<Self> {
        Ok(Self {
            inner: build_ladder(LadderParams::strict_viscous(k_max)).map_err(to_py)?,
        })
    }

    #[getter]
    fn k_max(&self) -> usize {
        self.inner.k_max()
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.params.nu
    }

    #[getter]
    fn n(&self) -> Vec<f64> {
        self.inner.n.clone()
    }

    #[getter]
    fn amp(&self) -> Vec<f64> {
        self.inner.amp.clone()
    }

    #[getter]
    fn delta(&self) -> Vec<f64> {
        self.inner.delta.clone()
    }

    #[getter]
    fn t_act(&self) -> Vec<f64> {
        self.inner.t_act.clone()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    fn __repr__(&self) -> String {
        let p = &self.inner.params;
        format!(
            "Ladder(nu={}, alpha={}, n0={}, b={}, beta={}, k_max={}, c={}, s={})",
            p.nu, p.alpha, p.n0, p.b, p.beta, p.k_max, p.c, p.s
        )
    }
}

/// Unforced right-hand side at `x`, with full dissipation, in the named form.
#[pyfunction]
#[pyo3(signature = (ladder, x, form = "rescaled"))]
fn rhs(ladder: &PyLadder, x: Vec<f64>, form: &str) -> PyResult<Vec<f64>> {
    let lad = &ladder.inner;
    let form = parse_form(form)?;
    let zeros = vec![0.0; lad.modes()];
    let state = ShellState::new(0.0, form, x);
    match form {
        Form::L2 => rhs_l2(&state, lad, &zeros),
        Form::Linf => rhs_linf(&state, lad, &zeros),
        Form::Rescaled => rhs_rescaled(&state, lad, &vec![1.0; lad.modes()]),
    }
    .map_err(to_py)
}

#[pyfunction]
fn convert(ladder: &PyLadder, x: Vec<f64>, source: &str, target: &str) -> PyResult<Vec<f64>> {
    if x.len() != ladder.inner.modes() {
        return Err(to_py(Error::DimensionMismatch {
            expected: ladder.inner.modes(),
            got: x.len(),
        }));
    }
    Ok(convert_vec(&x, parse_form(source)?, parse_form(target)?, &ladder.inner))
}

/// Backward run from `x_k(0) = A_k` to `-T`; returns `(times, states)` in rescaled form.
#[pyfunction]
#[pyo3(signature = (ladder, mode = "viscous-masked", rel_tol = 1e-10))]
fn backward(
    py: Python<'_>,
    ladder: &PyLadder,
    mode: &str,
    rel_tol: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let options = BackwardOptions::new(parse_mode(mode)?);
    let cfg = IntegratorConfig::default().with_rel_tol(rel_tol);
    let lad = &ladder.inner;
    let traj = py
        .detach(|| integrate_backward_galerkin(lad, &lad.amp, &options, &cfg))
        .map_err(to_py)?;
    Ok((traj.times, traj.states))
}

/// Per-mode relative error `|x_k(0) - A_k| / A_k` after going back to `-T` and forward again.
#[pyfunction]
#[pyo3(signature = (ladder, mode = "viscous-masked", rel_tol = 1e-10))]
fn roundtrip(py: Python<'_>, ladder: &PyLadder, mode: &str, rel_tol: f64) -> PyResult<Vec<f64>> {
    let options = BackwardOptions::new(parse_mode(mode)?);
    let cfg = IntegratorConfig::default().with_rel_tol(rel_tol);
    let lad = &ladder.inner;
    let rt = py
        .detach(|| core_roundtrip(lad, &options, &cfg))
        .map_err(to_py)?;
    Ok(rt.terminal_error)
}

/// Largest relative energy drift of the inviscid backward run on `[-T, 0]`.
#[pyfunction]
#[pyo3(signature = (ladder, rel_tol = 1e-10))]
fn energy_drift(py: Python<'_>, ladder: &PyLadder, rel_tol: f64) -> PyResult<f64> {
    let cfg = IntegratorConfig::default().with_rel_tol(rel_tol);
    py.detach(|| {
        let lad = build_ladder(ladder.inner.params.with_nu(0.0))?;
        let traj = integrate_backward_galerkin(
            &lad,
            &lad.amp,
            &BackwardOptions::new(GalerkinMode::Inviscid),
            &cfg,
        )?;
        Ok(energy(&traj, &lad, None)?.max_rel_drift)
    })
    .map_err(to_py)
}

#[pymodule]
fn obukhov(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLadder>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(rhs, m)?)?;
    m.add_function(wrap_pyfunction!(convert, m)?)?;
    m.add_function(wrap_pyfunction!(backward, m)?)?;
    m.add_function(wrap_pyfunction!(roundtrip, m)?)?;
    m.add_function(wrap_pyfunction!(energy_drift, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_and_form_names() {
        assert_eq!(parse_mode("inviscid").unwrap(), GalerkinMode::Inviscid);
        assert_eq!(parse_mode("viscous-masked").unwrap(), GalerkinMode::ViscousMasked);
        assert!(parse_mode("masked").is_err());
        assert_eq!(parse_form("linf").unwrap(), Form::Linf);
        assert!(parse_form("l3").is_err());
    }
}
