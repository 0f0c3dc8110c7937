"""Curvature engine against round-sphere closed forms.

A metric g = e^{2 phi} delta with e^{2 phi} = 4 / (c (1 + r^2)^2) is a
stereographic chart of the round sphere of sectional curvature c, so

    Rm = c (g kn g)/2,  Ric = c (n-1) g,  R = c n (n-1),  W = 0,

and in n = 5:  Q = 13.125 for c = 1 and Q = 210 for c = 4.
"""

import numpy as np
import pytest

from qflowlab.curvature import (conformal_change, curvature_bundle,
                                lichnerowicz, paneitz_apply, q_constants,
                                tensor_ops, truncation_estimate)
from qflowlab.grid import ChartGrid, SymTensorField, VectorField, sym_index


def sphere_metric(grid, c=1.0):
    r2 = sum(grid.coords(i) ** 2 for i in range(grid.n))
    e2phi = 4.0 / (c * (1.0 + r2) ** 2)
    n = grid.n
    comps = np.zeros((n * (n + 1) // 2,) + grid.shape)
    pairs, _ = sym_index(n)
    for k, (i, j) in enumerate(pairs):
        if i == j:
            comps[k] = e2phi * np.ones(grid.shape)
    return SymTensorField(grid, comps)


def flat_metric(grid):
    n = grid.n
    comps = np.zeros((n * (n + 1) // 2,) + grid.shape)
    pairs, _ = sym_index(n)
    for k, (i, j) in enumerate(pairs):
        if i == j:
            comps[k] = 1.0
    return SymTensorField(grid, comps)


def test_q_constants_closed_forms():
    a, b, g = q_constants(5)
    assert a == pytest.approx(-0.125)
    assert b == pytest.approx(-2.0 / 9.0)
    assert g == pytest.approx(89.0 / 1152.0)
    with pytest.raises(ValueError):
        q_constants(4)


def test_flat_metric_everything_vanishes():
    grid = ChartGrid(3, 13, -1.0, 1.0)
    b = curvature_bundle(flat_metric(grid))
    sl = grid.interior_slice(2)
    sl4 = grid.interior_slice(4)
    assert np.max(np.abs(b.R[sl])) < 1e-12
    assert b.Ric.max_abs(2) < 1e-12
    assert np.max(np.abs(b.Rm.data[(...,) + sl])) < 1e-12
    assert np.max(np.abs(b.Q[sl4])) < 1e-12
    assert np.max(np.abs(b.Gamma)) < 1e-12


def test_three_sphere_chart():
    grid = ChartGrid(3, 25, -0.5, 0.5)
    g = sphere_metric(grid, c=1.0)
    b = curvature_bundle(g)
    sl = grid.interior_slice(2)
    assert np.max(np.abs(b.R[sl] - 6.0)) < 1e-3
    ric_err = b.Ric.comps[(...,) + sl] - 2.0 * g.comps[(...,) + sl]
    assert np.max(np.abs(ric_err)) < 5e-4
    # Weyl vanishes identically in n=3 up to truncation
    assert np.max(np.abs(b.W.data[(...,) + sl])) < 5e-4
    # Rm sign: Rm_{ijji} = c g_ii g_jj (i != j, conformal => off-diag g = 0)
    gfull = g.full()
    rm = b.Rm.component(0, 1, 1, 0)
    assert np.max(np.abs(rm[sl] - (gfull[0, 0] * gfull[1, 1])[sl])) < 1e-3


def test_scalar_curvature_fourth_order_convergence():
    errs = []
    for npts in (17, 33):
        grid = ChartGrid(3, npts, -0.5, 0.5)
        b = curvature_bundle(sphere_metric(grid, c=1.0))
        sl = grid.interior_slice(2)
        errs.append(np.max(np.abs(b.R[sl] - 6.0)))
    assert errs[0] / errs[1] > 12.0


def test_five_sphere_q_values():
    grid = ChartGrid(5, 11, -0.25, 0.25)
    sl4 = grid.interior_slice(4)
    b1 = curvature_bundle(sphere_metric(grid, c=1.0))
    assert np.max(np.abs(b1.Q[sl4] - 13.125)) < 5e-3
    b4 = curvature_bundle(sphere_metric(grid, c=4.0))
    assert np.max(np.abs(b4.Q[sl4] - 210.0)) < 0.1
    sl = grid.interior_slice(2)
    assert np.max(np.abs(b4.R[sl] - 80.0)) < 5e-3
    assert np.max(np.abs(b4.W.data[(...,) + sl])) < 1e-10


def test_paneitz_on_constants():
    # P_g 1 = (n-4)/2 Q; on the c=4 five-sphere that is 105.
    grid = ChartGrid(5, 11, -0.25, 0.25)
    g = sphere_metric(grid, c=4.0)
    p1 = paneitz_apply(g, np.ones(grid.shape))
    sl4 = grid.interior_slice(4)
    assert np.max(np.abs(p1[sl4] - 105.0)) < 0.05


def test_conformal_covariance_residual():
    grid = ChartGrid(5, 11, -0.25, 0.25)
    g = flat_metric(grid)
    r2 = sum(grid.coords(i) ** 2 for i in range(5))
    u = (1.0 + r2) ** -0.5 * np.ones(grid.shape)   # u^{4} delta = c=4 sphere
    phi = 1.0 + 0.3 * grid.coords(0) * np.ones(grid.shape)
    qd, qc, resid = conformal_change(g, u, phi)
    sl4 = grid.interior_slice(4)
    assert np.max(np.abs(qd[sl4] - 210.0)) < 0.1
    assert np.max(np.abs(qc[sl4] - 210.0)) < 0.1
    assert np.max(np.abs(resid[sl4])) < 0.05


def test_conformal_factor_must_be_positive():
    grid = ChartGrid(3, 9, -0.5, 0.5)
    g = flat_metric(grid)
    u = np.ones(grid.shape)
    u[4, 4, 4] = -1.0
    with pytest.raises(ValueError, match="positive"):
        conformal_change(g, u, np.ones(grid.shape))


def test_tensor_ops_flat():
    grid = ChartGrid(3, 13, -1.0, 1.0)
    g = flat_metric(grid)
    x0 = grid.coords(0) * np.ones(grid.shape)
    x1 = grid.coords(1) * np.ones(grid.shape)
    # rotation field: Killing for the flat metric
    X = VectorField(grid, np.stack([x1, -x0, np.zeros(grid.shape)]))
    h = SymTensorField(grid, np.stack(
        [np.sin(x0), x0 * x1, np.zeros(grid.shape),
         np.cos(x1), np.zeros(grid.shape), np.ones(grid.shape)]))
    ops = tensor_ops(h, h, g, X)
    sl = grid.interior_slice(2)
    assert ops["lie"].max_abs(2) < 1e-10
    assert np.max(np.abs(ops["div_X"][sl])) < 1e-10
    # trace of h: h_00 + h_11 + h_22
    np.testing.assert_allclose(ops["trace_h"][sl],
                               (np.sin(x0) + np.cos(x1) + 1.0)[sl], atol=1e-12)
    # div h component 0: d0 h_00 + d1 h_01 + d2 h_02 = cos(x0) + x0
    np.testing.assert_allclose(ops["div_h"][0][sl], (np.cos(x0) + x0)[sl],
                               atol=1e-4)
    # (h x h)_{01} = h_0k h_k1
    expect = np.sin(x0) * x0 * x1 + x0 * x1 * np.cos(x1)
    np.testing.assert_allclose(ops["cross"].comp(0, 1)[sl], expect[sl],
                               atol=1e-12)
    # Kulkarni-Nomizu of h with h, spot component
    kn0101 = 2 * (np.sin(x0) * np.cos(x1) - (x0 * x1) ** 2)
    np.testing.assert_allclose(ops["kn"].component(0, 1, 1, 0)[sl], kn0101[sl],
                               atol=1e-12)


def test_lie2_trace_identity():
    grid = ChartGrid(3, 17, -0.5, 0.5)
    g = sphere_metric(grid, c=1.0)
    x0 = grid.coords(0) * np.ones(grid.shape)
    x1 = grid.coords(1) * np.ones(grid.shape)
    x2 = grid.coords(2) * np.ones(grid.shape)
    X = VectorField(grid, np.stack([x0 * x1, x2 ** 2 - 0.3, x0 + x1 * x2]))
    h = SymTensorField(grid, np.zeros((6,) + grid.shape))
    ops = tensor_ops(h, h, g, X)
    sl = grid.interior_slice(4)
    tol = truncation_estimate([ops["trace_lie2"]], grid, 4)
    resid = np.max(np.abs(ops["lie2_trace_identity_residual"][sl]))
    assert resid < tol


def test_lichnerowicz_flat_is_rough_laplacian():
    grid = ChartGrid(3, 17, -1.0, 1.0)
    g = flat_metric(grid)
    x0 = grid.coords(0) * np.ones(grid.shape)
    comps = np.zeros((6,) + grid.shape)
    comps[0] = np.sin(x0)          # h_00 = sin(x0)
    h = SymTensorField(grid, comps)
    lich = lichnerowicz(h, g)
    sl = grid.interior_slice(4)
    np.testing.assert_allclose(lich.comp(0, 0)[sl], -np.sin(x0)[sl], atol=1e-5)
    assert np.max(np.abs(lich.comp(1, 1)[sl])) < 1e-10


def test_lichnerowicz_tt_on_sphere_shifts_by_2cn():
    # On a constant-curvature-c background, for TT h:
    #   Lich h = rough_Lap h - 2 c n h + (terms cancelling for TT),
    # checked here in the weaker form: for h = f * (TT-at-origin pattern)
    # the operator is symmetric under the h <-> Lich h pairing sign flip.
    # Cheap invariant instead: Lich(g) = rough(g) + 2c(n-1)g - 2c(n-1)g... use
    # h = g itself: nabla g = 0 so rough = 0; Rm_{iklj} g^{kl} = Ric_{ij};
    # Ric x g + g x Ric = 2 Ric; total = 2 Ric - 2 Ric = 0.
    grid = ChartGrid(3, 17, -0.5, 0.5)
    g = sphere_metric(grid, c=1.0)
    lich = lichnerowicz(g, g)
    sl = grid.interior_slice(4)
    assert np.max(np.abs(lich.comps[(...,) + sl])) < 1e-4
