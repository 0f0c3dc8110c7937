"""Bubble-profile fitting, weighted spectral projectors, diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qflowlab.bubbles import ps_quotient, y4_constant
from qflowlab.decomposition import (BubbleParams, DecompositionReport,
                                    algebraic_inequality_check, fit_bubbles,
                                    interaction_integral, project_pi,
                                    quantization_and_orthogonality,
                                    separation_diagnostic,
                                    sphere_bubble_values, weighted_spectrum)
from qflowlab.flow import zonal_operator


@pytest.fixture(scope="module")
def op():
    return zonal_operator(5, 64)


def test_bubble_values_peak_and_decay(op):
    v = sphere_bubble_values(5, op.theta, 0.0, 0.05)
    # peak at the pole, value (1/eps)^{(n-4)/2} at distance 0
    assert np.argmax(v) == np.argmin(op.theta)
    assert abs(sphere_bubble_values(5, np.array([0.0]), 0.0, 0.05)[0]
               - (1.0 / 0.05) ** 0.5) < 1e-12
    # value at the antipode is eps^{(n-4)/2} / 2^{n-4}
    far = sphere_bubble_values(5, np.array([math.pi]), 0.0, 0.05)[0]
    assert abs(far - 0.05 ** 0.5 / 2.0) < 1e-12


def test_separation_diagnostic_formula():
    bi = BubbleParams(p=0.0, eps=0.1, alpha=1.0)
    bj = BubbleParams(p=1.0, eps=0.4, alpha=1.0)
    expect = 0.25 + 4.0 + 1.0 / 0.04
    assert separation_diagnostic(bi, bj) == pytest.approx(expect)


def test_weighted_spectrum_constant_weight(op):
    # u_inf = 1: the weight is 1 and the problem reduces to the plain
    # zonal eigenvalues
    spec = weighted_spectrum(op, np.ones(op.K), 6)
    assert np.max(np.abs(spec.eigs[:2] - [6.5625, 59.0625])) < 1e-9
    g = spec.psi @ (op.w[None, :] * spec.weight * spec.psi).T
    assert np.max(np.abs(g - np.eye(len(spec.eigs)))) < 1e-10


def test_weighted_spectrum_empty_for_zero_limit(op):
    spec = weighted_spectrum(op, np.zeros(op.K), 6)
    assert len(spec.eigs) == 0
    assert len(spec.low_set) == 0


def test_weighted_spectrum_rejects_sign_changes(op):
    u = np.ones(op.K)
    u[0] = -1.0
    with pytest.raises(ValueError):
        weighted_spectrum(op, u, 4)


def test_projector_idempotent_and_annihilating(op):
    spec = weighted_spectrum(op, np.ones(op.K), 6)
    rng = np.random.default_rng(1)
    phi = rng.normal(size=op.K)
    once = project_pi(phi, spec)
    twice = project_pi(once, spec)
    scale = np.max(np.abs(phi))
    assert np.max(np.abs(twice - once)) < 1e-12 * scale
    # projected field is weighted-orthogonal to every low mode
    for a in spec.low_set:
        pair = np.sum(op.w * spec.weight * spec.psi[a] * once)
        assert abs(pair) < 1e-12 * scale


def test_fit_exact_round_trip(op):
    truth = BubbleParams(p=0.0, eps=0.05, alpha=1.3)
    u = truth.alpha * sphere_bubble_values(5, op.theta, truth.p, truth.eps)
    rep = fit_bubbles(op, u, 1)
    b = rep.bubbles[0]
    assert abs(b.eps - truth.eps) < 1e-8
    assert abs(b.alpha - truth.alpha) < 1e-8
    assert rep.residual < 1e-8
    assert abs(rep.recompute_residual() - rep.residual) < 1e-10
    assert all(abs(s) < 1e-8 for s in rep.stationarity)


def test_fit_two_bubbles_at_poles(op):
    b1 = BubbleParams(p=0.0, eps=0.02, alpha=1.0)
    b2 = BubbleParams(p=math.pi, eps=2.0, alpha=1.0)
    u = (sphere_bubble_values(5, op.theta, b1.p, b1.eps)
         + sphere_bubble_values(5, op.theta, b2.p, b2.eps))
    init = [BubbleParams(p=0.1, eps=0.05, alpha=1.0),
            BubbleParams(p=3.0, eps=1.0, alpha=1.0)]
    rep = fit_bubbles(op, u, 2, init=init, budget=6000)
    eps = sorted(b.eps for b in rep.bubbles)
    assert abs(eps[0] - 0.02) < 1e-3
    assert abs(eps[1] - 2.0) < 0.05
    assert rep.worst_separation() > 50.0


def test_fit_with_limit_profile(op):
    u_inf = 1.0 + 0.05 * np.cos(op.theta) ** 2
    truth = BubbleParams(p=0.0, eps=0.03, alpha=1.0)
    u = u_inf + sphere_bubble_values(5, op.theta, truth.p, truth.eps)
    rep = fit_bubbles(op, u, 1, u_inf=u_inf)
    assert abs(rep.bubbles[0].eps - truth.eps) / truth.eps < 1e-4


def test_fit_m_zero_returns_plain_remainder(op):
    u = np.ones(op.K)
    rep = fit_bubbles(op, u, 0)
    assert rep.m == 0
    assert rep.residual < 1e-10


def test_report_as_dict_round_trip(op):
    truth = BubbleParams(p=0.0, eps=0.05, alpha=1.0)
    u = sphere_bubble_values(5, op.theta, truth.p, truth.eps)
    rep = fit_bubbles(op, u, 1)
    d = rep.as_dict()
    assert d["m"] == 1
    assert d["bubbles"][0]["eps"] == pytest.approx(truth.eps, rel=1e-6)
    assert d["has_u_inf"] is False


def test_interaction_integral_constant_band():
    # the normalized interaction is bounded above and below by constants
    # independent of the separation parameters
    base = BubbleParams(p=0.0, eps=0.01, alpha=1.0)
    ratios = []
    for other in (BubbleParams(p=0.0, eps=0.01, alpha=1.0),
                  BubbleParams(p=0.0, eps=0.1, alpha=1.0),
                  BubbleParams(p=0.0, eps=1.0, alpha=1.0),
                  BubbleParams(p=math.pi, eps=0.01, alpha=1.0)):
        out = interaction_integral(5, base, other)
        ratios.append(out["normalized"])
    assert max(ratios) < 5.0
    assert min(ratios) > 0.2


def test_quantization_exact_single_bubble(op):
    truth = BubbleParams(p=0.0, eps=0.05, alpha=1.0)
    u = sphere_bubble_values(5, op.theta, truth.p, truth.eps)
    rep = fit_bubbles(op, u, 1)
    q = ps_quotient(op, u)
    mu_inf = q["energy"] / q["volume"]
    diag = quantization_and_orthogonality(rep, mu_inf, q["quotient"])
    # F of a pure bubble equals Y4, so the m=1 quantization target matches
    assert diag["quant_residual"] < 1e-6
    assert diag["rho"] == 0.0 or diag["rho"] < 1e-6
    assert diag["coercive"]


def test_quantization_orthogonality_of_clean_remainder(op):
    truth = BubbleParams(p=0.0, eps=0.05, alpha=1.0)
    u = sphere_bubble_values(5, op.theta, truth.p, truth.eps)
    rep = fit_bubbles(op, u, 1)
    spec = weighted_spectrum(op, np.ones(op.K), 4)
    q = ps_quotient(op, u)
    diag = quantization_and_orthogonality(rep, q["energy"] / q["volume"],
                                          q["quotient"], spec=spec)
    for key in ("orth_b", "orth_c", "orth_d"):
        assert all(v < 1e-4 for v in diag[key]), key


def test_y4_quantization_target_scaling(op):
    # adding one bubble to a limit with quotient F raises the target to
    # (F^{n/4} + Y4^{n/4})^{4/n}
    y4 = y4_constant(5)
    u_inf = np.ones(op.K)
    rep = DecompositionReport(op, u_inf, u_inf,
                              [BubbleParams(p=0.0, eps=0.01, alpha=1.0)],
                              0.0, np.zeros(op.K), [0.0], {})
    diag = quantization_and_orthogonality(rep, 1.0, y4)
    # F[1] = Y4 as well, so the target is 2^{4/5} Y4
    assert diag["f_target"] == pytest.approx(2.0 ** 0.8 * y4, rel=1e-10)


def test_algebraic_inequalities_hold():
    out = algebraic_inequality_check(samples=10000, seed=0)
    assert out["violations"] == 0
    assert out["worst_margin"] > 0.0


@settings(max_examples=200, deadline=None)
@given(y=st.floats(1e-6, 1e6), factor=st.floats(1.0, 1e6),
       n=st.integers(5, 12))
def test_algebraic_inequalities_pointwise(y, factor, n):
    x = y * factor
    e = (n - 4.0) / n
    diff = y ** (-e) - x ** (-e)
    slack = 1e-11
    lhs1, rhs1 = 1.0 / y - 1.0 / x, n / (n - 4.0) * diff * y ** (-4.0 / n)
    lhs2, rhs2 = x ** (4.0 / n) - y ** (4.0 / n), 4.0 / (n - 4.0) * diff * x
    assert lhs1 <= rhs1 + slack * max(abs(rhs1), 1.0)
    assert lhs2 <= rhs2 + slack * max(abs(rhs2), 1.0)
