"""Exact rational fields: ring ops, derivatives, closure."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qflowlab.rational import RationalField, dot_grad, monomial, s_power

RNG = np.random.default_rng(7)


def _fd_partial(f, x, i, h=1e-6):
    xp, xm = x.copy(), x.copy()
    xp[:, i] += h
    xm[:, i] -= h
    return (f.eval(xp) - f.eval(xm)) / (2 * h)


def test_monomial_eval():
    f = monomial(3, (2, 0, 1), coeff=3.0, q=1, eps2=0.5)
    x = np.array([[1.0, 2.0, -1.0]])
    s = 0.5 + 1 + 4 + 1
    assert f.eval(x)[0] == pytest.approx(3.0 * 1.0 * (-1.0) / s)


def test_ring_ops_match_pointwise():
    f = monomial(2, (1, 1), 2.0, q=1) + s_power(2, -1, 0.5)
    g = monomial(2, (0, 2), -1.0, q=2) + 3.0
    x = RNG.normal(size=(20, 2))
    np.testing.assert_allclose((f * g).eval(x), f.eval(x) * g.eval(x), rtol=1e-13)
    np.testing.assert_allclose((f - g).eval(x), f.eval(x) - g.eval(x), rtol=1e-12)


def test_partial_exact_vs_fd():
    f = monomial(3, (2, 1, 0), 1.5, q=2, eps2=2.0) + s_power(3, -2, 0.3, eps2=2.0)
    x = RNG.normal(size=(15, 3))
    for i in range(3):
        np.testing.assert_allclose(f.partial(i).eval(x), _fd_partial(f, x, i),
                                   rtol=1e-7, atol=1e-9)


def test_laplacian_of_fundamental_solution():
    # |x|^{2-n} is harmonic away from 0 in R^n (eps2=0)
    n = 5
    f = monomial(n, (0,) * n, 1.0, q=0, eps2=0.0)
    # (0+|x|^2)^{-(n-2)/2}: need q = 3/2 — not integer, use n=4: |x|^{-2} = s^{-1}
    f = s_power(4, 1, 1.0, eps2=0.0)
    lap = f.laplacian().prune(1e-14)
    x = RNG.normal(size=(10, 4)) + 2.0
    np.testing.assert_allclose(lap.eval(x), 0.0, atol=1e-12)


def test_bubble_bilaplacian():
    # u = (eps/(eps^2+r^2))^{(n-4)/2}, n=6: u = eps/(eps^2+r^2);
    # Lap^2 u = c(n) u^{(n+4)/(n-4)} with c(6) = 2*4*6*8 = 384, u^5.
    eps = 0.7
    u = s_power(6, 1, eps, eps2=eps * eps)
    bilap = u.laplacian().laplacian()
    rhs = u * u * u * u * u * 384.0
    x = RNG.normal(size=(25, 6)) * 2.0
    np.testing.assert_allclose(bilap.eval(x), rhs.eval(x), rtol=1e-11)


def test_dot_grad():
    f = monomial(2, (3, 0), 1.0) + monomial(2, (0, 2), 1.0)
    X = [monomial(2, (0, 1), 1.0), monomial(2, (1, 0), -1.0)]  # rotation field
    g = dot_grad(X, f)
    x = RNG.normal(size=(10, 2))
    expect = x[:, 1] * 3 * x[:, 0] ** 2 - x[:, 0] * 2 * x[:, 1]
    np.testing.assert_allclose(g.eval(x), expect, rtol=1e-12)


def test_incompatible_eps2_raises():
    with pytest.raises(ValueError):
        s_power(2, 1, eps2=1.0) + s_power(2, 1, eps2=2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(-1, 2),
       st.floats(-2, 2, allow_nan=False), st.integers(0, 1))
def test_product_rule(a1, a2, q, c, i):
    f = monomial(2, (a1, 0), 1.0 + c, q=q)
    g = monomial(2, (0, a2), 2.0 - c, q=-q)
    lhs = (f * g).partial(i)
    rhs = f.partial(i) * g + f * g.partial(i)
    x = RNG.normal(size=(8, 2)) + 0.5
    np.testing.assert_allclose(lhs.eval(x), rhs.eval(x), rtol=1e-10, atol=1e-10)
