"""Chart grids, stencil orders, field containers, binary round-trip."""

import numpy as np
import pytest

from qflowlab.grid import (AlgCurvTensor, ChartGrid, DegenerateMetricError,
                           InsufficientGridError, SymTensorField, VectorField,
                           d1, d2, d4_scale, load_field, save_field,
                           sym_index, tensor_header)


def _flat_metric(grid):
    n = grid.n
    comps = np.zeros((n * (n + 1) // 2,) + grid.shape)
    pairs, _ = sym_index(n)
    for k, (i, j) in enumerate(pairs):
        if i == j:
            comps[k] = 1.0
    return SymTensorField(grid, comps)


def test_grid_validation():
    with pytest.raises(ValueError):
        ChartGrid(1, 11, 0, 1)
    with pytest.raises(InsufficientGridError):
        ChartGrid(2, 8, 0, 1)
    g = ChartGrid(2, 11, -1.0, 1.0)
    assert g.h == pytest.approx(0.2)
    assert g.shape == (11, 11)


def test_stencil_convergence_order():
    # error on exp(x) should drop ~16x when h halves
    errs = []
    for npts in (17, 33):
        grid = ChartGrid(2, npts, -1.0, 1.0)
        f = np.exp(grid.coords(0)) * np.ones(grid.shape)
        sl = grid.interior_slice(2)
        e1 = np.max(np.abs(d1(f, 0, grid.h)[sl] - f[sl]))
        e2 = np.max(np.abs(d2(f, 0, grid.h)[sl] - f[sl]))
        errs.append((e1, e2))
    assert errs[0][0] / errs[1][0] > 12
    assert errs[0][1] / errs[1][1] > 12


def test_d1_exact_on_cubics():
    grid = ChartGrid(2, 11, -1.0, 1.0)
    x = grid.coords(0) * np.ones(grid.shape)
    sl = grid.interior_slice(2)
    np.testing.assert_allclose(d1(x ** 3, 0, grid.h)[sl], (3 * x * x)[sl],
                               atol=1e-12)
    np.testing.assert_allclose(d2(x ** 3, 0, grid.h)[sl], (6 * x)[sl],
                               atol=1e-11)


def test_d4_scale():
    grid = ChartGrid(2, 17, -1.0, 1.0)
    x = grid.coords(0) * np.ones(grid.shape)
    s = d4_scale(x ** 4, grid, 0)
    assert s == pytest.approx(24.0, rel=1e-8)


def test_positive_definite_check_reports_first_failure():
    grid = ChartGrid(2, 11, -1.0, 1.0)
    g = _flat_metric(grid)
    g.comps[0, 3, 4] = -1.0  # g_00 < 0 at one node
    with pytest.raises(DegenerateMetricError, match=r"\(3, 4\)"):
        g.check_positive_definite()


def test_sym_full_roundtrip():
    grid = ChartGrid(3, 11, 0.0, 1.0)
    rng = np.random.default_rng(0)
    comps = rng.normal(size=(6,) + grid.shape)
    f = SymTensorField(grid, comps)
    full = f.full()
    assert full.shape == (3, 3) + grid.shape
    np.testing.assert_array_equal(full[0, 1], full[1, 0])
    g = SymTensorField.from_full(grid, full)
    np.testing.assert_array_equal(g.comps, comps)


def test_alg_curv_signs():
    grid = ChartGrid(3, 9, 0.0, 1.0)
    T = AlgCurvTensor.zeros(grid)
    v = np.ones(grid.shape)
    T.add_component(0, 1, 0, 2, v)
    np.testing.assert_array_equal(T.component(0, 1, 0, 2), v)
    np.testing.assert_array_equal(T.component(1, 0, 0, 2), -v)
    np.testing.assert_array_equal(T.component(0, 2, 0, 1), v)   # pair exchange
    np.testing.assert_array_equal(T.component(0, 0, 1, 2), 0 * v)


def test_serialization_roundtrip(tmp_path):
    grid = ChartGrid(2, 13, -2.0, 2.0)
    rng = np.random.default_rng(1)
    f = SymTensorField(grid, rng.normal(size=(3,) + grid.shape), margin=2)
    p = tmp_path / "field.qt"
    save_field(str(p), f)
    h = tensor_header(str(p))
    assert h["kind"] == "sym2" and h["dim"] == 2 and h["dtype"] == "<f8"
    assert h["points_per_axis"] == 13 and h["margin"] == 2
    g = load_field(str(p))
    assert g.grid == grid and g.margin == 2
    np.testing.assert_array_equal(g.comps, f.comps)

    v = VectorField(grid, rng.normal(size=(2,) + grid.shape))
    save_field(str(p), v)
    w = load_field(str(p))
    np.testing.assert_array_equal(w.comps, v.comps)

    s = rng.normal(size=grid.shape)
    save_field(str(p), s, kind="scalar", grid=grid)
    g2, s2 = load_field(str(p))
    assert g2 == grid
    np.testing.assert_array_equal(s2, s)


def test_serialization_deterministic(tmp_path):
    grid = ChartGrid(2, 9, 0.0, 1.0)
    f = _flat_metric(grid)
    p1, p2 = tmp_path / "a.qt", tmp_path / "b.qt"
    save_field(str(p1), f)
    save_field(str(p2), f)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "junk.qt"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_field(str(p))
