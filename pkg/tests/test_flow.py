"""Zonal spectral operator and the non-local flow integrator."""

import math

import numpy as np
import pytest

from qflowlab.flow import (FlowControls, FlowTrace, PositivityLossError,
                           TRACE_HEADER, ZonalState, compute_f_and_monitors,
                           constant_state, flow_run, flow_step,
                           lojasiewicz_fit, zonal_operator,
                           zonal_perturbed_state)


@pytest.fixture(scope="module")
def op5():
    return zonal_operator(5, 32)


def test_operator_rejects_bad_sizes():
    with pytest.raises(ValueError):
        zonal_operator(4, 32)
    with pytest.raises(ValueError):
        zonal_operator(5, 4)


def test_eigenvalue_polynomial_anchors(op5):
    # lam_k = mu_k^2 + (n^2-2n-4)/2 mu_k + n(n^2-4)(n-4)/16, mu_k = k(k+n-1)
    assert op5.lam[0] == 6.5625
    assert op5.lam[1] == 59.0625
    k = np.arange(op5.K)
    mu = k * (k + 4.0)
    expect = mu ** 2 + 5.5 * mu + 6.5625
    assert np.array_equal(op5.lam, expect)


def test_quadrature_integrates_constants(op5):
    vol = math.pi ** 3  # volume of the unit S^5
    assert abs(np.sum(op5.w) - vol) < 1e-12 * vol
    assert abs(np.sum(op5.w_pad) - vol) < 1e-12 * vol


def test_basis_orthonormal(op5):
    assert op5.gram_residual() < 1e-12


def test_transform_round_trip(op5):
    rng = np.random.default_rng(0)
    c = rng.normal(size=op5.K) / (1.0 + np.arange(op5.K)) ** 3
    vals = op5.to_values(c)
    back = op5.to_coeffs(vals)
    assert np.max(np.abs(back - c)) < 1e-12 * np.max(np.abs(c))


def test_constant_state_is_exact_in_coefficients(op5):
    st = constant_state(op5, 2.0)
    assert np.count_nonzero(st.coeffs) == 1
    assert np.max(np.abs(st.values(op5) - 2.0)) < 4e-16


def test_constant_state_volume_and_energy(op5):
    st = constant_state(op5)
    rec = compute_f_and_monitors(st, op5)
    vol = math.pi ** 3
    assert abs(rec["V"] - vol) < 1e-12 * vol
    assert abs(rec["E"] - 6.5625 * vol) < 1e-12 * abs(rec["E"])
    # constant is an extremal: the constrained gradient vanishes
    assert math.sqrt(rec["fH2"]) < 1e-13


def test_monitors_include_all_trace_columns(op5):
    rec = compute_f_and_monitors(constant_state(op5), op5)
    for key in TRACE_HEADER.split(","):
        if key != "dt":
            assert key in rec


def test_flow_step_requires_positive_dt(op5):
    with pytest.raises(ValueError):
        flow_step(constant_state(op5), op5, 0.0)


def test_flow_step_preserves_constant(op5):
    st = constant_state(op5)
    new = flow_step(st, op5, 1e-3)
    assert np.max(np.abs(new.values(op5) - 1.0)) < 1e-13
    assert new.t == pytest.approx(1e-3)


def test_positivity_loss_detected(op5):
    vals = 1.0 + 1.5 * op5.psi[2] / np.max(np.abs(op5.psi[2]))
    st = ZonalState(coeffs=op5.to_coeffs(vals))
    with pytest.raises(PositivityLossError):
        op5.volume(st.coeffs)


def test_flow_run_reaches_t_end_and_monotone(op5):
    st = zonal_perturbed_state(op5, 0.1, 2)
    tr, fin = flow_run(st, op5, FlowControls(t_end=0.5, dt0=1e-3))
    assert tr.termination == "t_end"
    a = tr.arrays()
    assert np.max(np.abs(a["E"] / a["E"][0] - 1.0)) < 1e-6
    assert np.min(np.diff(a["V"])) > -1e-8
    assert np.max(np.diff(a["mu"])) < 1e-8
    assert np.max(np.diff(a["F"])) < 1e-8
    assert fin.t == pytest.approx(0.5, abs=1e-12)


def test_flow_run_stationary_exit(op5):
    st = constant_state(op5)
    tr, fin = flow_run(st, op5, FlowControls(t_end=1.0, stop_tol=1e-8))
    assert tr.termination == "stationary"
    assert fin.t == 0.0


def test_flow_run_max_steps(op5):
    st = zonal_perturbed_state(op5, 0.1, 2)
    ctl = FlowControls(t_end=1.0, dt0=1e-4, max_steps=5)
    tr, _ = flow_run(st, op5, ctl)
    assert tr.termination == "max_steps"
    assert len(tr.t) == 6


def test_trace_csv_round_trip(op5):
    st = zonal_perturbed_state(op5, 0.05, 2)
    tr, _ = flow_run(st, op5, FlowControls(t_end=0.01, dt0=1e-3))
    text = tr.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == TRACE_HEADER
    parsed = np.array([[float(v) for v in ln.split(",")]
                       for ln in lines[1:]])
    a = tr.arrays()
    for j, key in enumerate(TRACE_HEADER.split(",")):
        assert np.array_equal(parsed[:, j], a[key]), key


def _synthetic_trace(exponent: float, sigma: float = 0.7,
                     f_inf: float = 100.0, nsteps: int = 3000) -> FlowTrace:
    t = np.arange(nsteps) * 1e-3
    fn = np.exp(-sigma * t)
    tr = FlowTrace()
    tr.t = list(t)
    tr.F = list(f_inf + fn ** exponent)
    tr.fH2 = list(fn ** 2)
    for key in ("E", "V", "mu", "fLp", "PfLq", "minu", "dt"):
        setattr(tr, key, list(np.zeros_like(t)))
    return tr


def test_lojasiewicz_synthetic_power_law():
    fit = lojasiewicz_fit(_synthetic_trace(1.5), tail=40)
    assert abs(fit["gamma"] - 0.5) < 1e-3
    assert fit["r2"] > 0.9999


def test_lojasiewicz_other_exponent():
    fit = lojasiewicz_fit(_synthetic_trace(2.0), tail=40)
    assert abs(fit["gamma"] - 1.0) < 1e-3


def test_lojasiewicz_short_trace_raises():
    with pytest.raises(ValueError):
        lojasiewicz_fit(_synthetic_trace(1.5, nsteps=20), tail=40)
