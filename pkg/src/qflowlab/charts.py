r"""Conformally flat charts with exact derivatives, and product quadratures.

Charts are metrics g = e^{2 phi} delta with e^{2 phi} a rational field, so the
full metric (and hence every curvature quantity through the jet pipeline) has
exact partial derivatives of any order:

    sphere_chart(n, c):  e^{2 phi} = 4 / (c (1 + r^2)^2)
                         round sphere of sectional curvature c; c = 4 gives
                         Ric = 4 (n-1) g (the unit-volume-normalized case used
                         by the second-variation identities),
    bubble_chart(n, eps): e^{2 phi} = eps^2 / (eps^2 + r^2)^2, the metric
                         u_eps^{4/(n-4)} delta of the standard bubble,
    flat_chart(n).

Quadratures: tensor-product Gauss rules, Gauss-Gegenbauer in each polar angle
(weight (1-t^2)^{alpha-1/2}) and trapezoid in the periodic angle, composed
with Gauss-Legendre radially.  Weights returned are for the flat Lebesgue
measure; metric volume factors are applied by the caller from the jet data.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as _gamma
from math import pi

import numpy as np
from scipy.special import roots_gegenbauer, roots_legendre

from .jets import Jet, jet_from_rational
from .rational import RationalField, monomial, s_power

__all__ = [
    "ConformalChart", "flat_chart", "sphere_chart", "bubble_chart",
    "sphere_area", "sphere_quadrature", "ball_quadrature",
    "shell_quadrature", "tt_rational_basis",
]


def sphere_area(m: int) -> float:
    """Area of the unit sphere S^m in R^{m+1}."""
    return 2.0 * pi ** ((m + 1) / 2.0) / _gamma((m + 1) / 2.0)


@dataclass
class ConformalChart:
    """g = e^{2 phi} delta with rational e^{2 phi}; exact jets on demand."""

    n: int
    e2phi: RationalField
    em2phi: RationalField          # e^{-2 phi}, also rational
    dphi: list                     # [d_i phi], rational
    curvature: float | None = None  # sectional curvature if constant

    def metric_fields(self) -> np.ndarray:
        zero = RationalField(self.n, self.e2phi.eps2)
        g = np.empty((self.n, self.n), dtype=object)
        for i in range(self.n):
            for j in range(self.n):
                g[i, j] = self.e2phi if i == j else zero
        return g

    def metric_jet(self, points: np.ndarray, order: int) -> Jet:
        return jet_from_rational(self.metric_fields(), points, order)

    def conformal_factor(self, points: np.ndarray) -> np.ndarray:
        """e^{phi} at points."""
        return np.sqrt(self.e2phi.eval(points))


def flat_chart(n: int) -> ConformalChart:
    one = monomial(n, (0,) * n, 1.0, eps2=1.0)
    zero = RationalField(n, 1.0)
    return ConformalChart(n, one, one.copy(),
                          [zero.copy() for _ in range(n)], curvature=0.0)


def sphere_chart(n: int, c: float = 1.0) -> ConformalChart:
    e2phi = s_power(n, 2, 4.0 / c, eps2=1.0)
    em2phi = s_power(n, -2, c / 4.0, eps2=1.0)
    dphi = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        dphi.append(monomial(n, tuple(e), -2.0, q=1, eps2=1.0))
    return ConformalChart(n, e2phi, em2phi, dphi, curvature=c)


def bubble_chart(n: int, eps: float) -> ConformalChart:
    e2 = eps * eps
    e2phi = s_power(n, 2, e2, eps2=e2)
    em2phi = s_power(n, -2, 1.0 / e2, eps2=e2)
    dphi = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        dphi.append(monomial(n, tuple(e), -2.0, q=1, eps2=e2))
    # u_eps^{4/(n-4)} delta is the round sphere of sectional curvature 4 for
    # every eps (substitute x = eps y to reduce to the eps = 1 chart).
    return ConformalChart(n, e2phi, em2phi, dphi, curvature=4.0)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def sphere_quadrature(n: int, deg: int = 8):
    """Nodes and weights on the unit sphere S^{n-1} in R^n.

    Recursive product rule: x = (cos th, sin th * y), y in S^{n-2}, with
    Gauss-Gegenbauer nodes in t = cos th (weight (1-t^2)^{(n-3)/2}) and a
    trapezoid rule on the final circle.  Exact for spherical polynomials of
    degree < deg (trapezoid direction: < 2*deg).  Weights sum to |S^{n-1}|.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if n == 2:
        m = max(2 * deg, 4)
        th = 2.0 * pi * np.arange(m) / m
        pts = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return pts, np.full(m, 2.0 * pi / m)
    sub_pts, sub_w = sphere_quadrature(n - 1, deg)
    alpha = (n - 2) / 2.0
    t, w = roots_gegenbauer(deg, alpha)
    # roots_gegenbauer integrates against (1-x^2)^(alpha-1/2) = sin^{n-3} th
    pts = np.empty((deg * len(sub_w), n))
    wts = np.empty(deg * len(sub_w))
    for k in range(deg):
        s = np.sqrt(max(1.0 - t[k] * t[k], 0.0))
        rows = slice(k * len(sub_w), (k + 1) * len(sub_w))
        pts[rows, 0] = t[k]
        pts[rows, 1:] = s * sub_pts
        wts[rows] = w[k] * sub_w
    return pts, wts


def ball_quadrature(n: int, r0: float, nr: int = 12, deg: int = 8,
                    r_in: float = 0.0):
    """Flat-measure quadrature on the ball (or annulus) r_in < r < r0."""
    sp, sw = sphere_quadrature(n, deg)
    x, w = roots_legendre(nr)
    r = 0.5 * (r0 - r_in) * (x + 1.0) + r_in
    rw = 0.5 * (r0 - r_in) * w * r ** (n - 1)
    pts = (r[:, None, None] * sp[None, :, :]).reshape(-1, n)
    wts = (rw[:, None] * sw[None, :]).ravel()
    return pts, wts


def shell_quadrature(n: int, r0: float, deg: int = 8):
    """Flat surface measure on the coordinate sphere r = r0.

    Returns (points, weights, unit radial directions).
    """
    sp, sw = sphere_quadrature(n, deg)
    return r0 * sp, sw * r0 ** (n - 1), sp


# ---------------------------------------------------------------------------
# transverse-traceless tensors on conformal charts, exactly
# ---------------------------------------------------------------------------

def _sym_monomial_basis(n: int, max_deg: int):
    """Monomials x^alpha with |alpha| <= max_deg."""
    from itertools import product as _prod
    out = []
    for alpha in _prod(range(max_deg + 1), repeat=n):
        if sum(alpha) <= max_deg:
            out.append(tuple(alpha))
    return sorted(out, key=lambda a: (sum(a), a))


def tt_rational_basis(chart: ConformalChart, max_deg: int = 2, p: int = 2,
                      npts: int | None = None, seed: int = 0,
                      tol: float = 1e-10):
    """Symmetric 2-tensors h = P(x)/(1+r^2)^p with tr_g h = 0, div_g h = 0.

    For a conformal chart, tr_g h = 0 is the pointwise delta-trace condition
    on P, and div_g h = 0 is equivalent to the rational identity

        d_j h_{ij} + (n-2) (d_j phi) h_{ij} = 0,

    which is imposed exactly: it is a polynomial identity after clearing the
    (eps2+r^2) powers, so collocation at enough random points plus an SVD
    null space pins it to machine precision.  Returns a list of component
    object-arrays (n, n) of RationalField.
    """
    n = chart.n
    eps2 = chart.e2phi.eps2
    monos = _sym_monomial_basis(n, max_deg)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    # delta-trace-free parametrization: free components are (i<j) plus the
    # first n-1 diagonal entries; h_{nn} = -(h_11+...+h_{n-1,n-1}).
    basis = []
    for alpha in monos:
        for (i, j) in pairs:
            if i == j == n - 1:
                continue
            basis.append((alpha, i, j))
    nb = len(basis)

    rng = np.random.default_rng(seed)
    if npts is None:
        npts = 4 * nb
    pts = rng.normal(size=(npts, n))

    def h_fields(alpha, i, j):
        """Component object array for one basis element."""
        f = np.empty((n, n), dtype=object)
        zero = RationalField(n, eps2)
        for a in range(n):
            for b in range(n):
                f[a, b] = zero
        m = monomial(n, alpha, 1.0, q=p, eps2=eps2)
        f[i, j] = f[i, j] + m
        if i != j:
            f[j, i] = f[j, i] + m
        else:
            f[n - 1, n - 1] = f[n - 1, n - 1] - m
        return f

    rows = np.empty((nb, npts * n))
    for b, (alpha, i, j) in enumerate(basis):
        f = h_fields(alpha, i, j)
        col = np.zeros((npts, n))
        for a in range(n):
            acc = RationalField(n, eps2)
            for c in range(n):
                acc = acc + f[a, c].partial(c)
                acc = acc + (n - 2) * 1.0 * (chart.dphi[c] * f[a, c])
            col[:, a] = acc.eval(pts)
        rows[b] = col.ravel()
    u, s, vt = np.linalg.svd(rows.T, full_matrices=True)
    null = [vt[k] for k in range(len(s)) if s[k] < tol * s[0]]
    null += [vt[k] for k in range(len(s), nb)]
    out = []
    for vec in null:
        f = np.empty((n, n), dtype=object)
        zero = RationalField(n, eps2)
        for a in range(n):
            for b2 in range(n):
                f[a, b2] = zero
        for coef, (alpha, i, j) in zip(vec, basis):
            if abs(coef) < 1e-14:
                continue
            m = monomial(n, alpha, float(coef), q=p, eps2=eps2)
            f[i, j] = f[i, j] + m
            if i != j:
                f[j, i] = f[j, i] + m
            else:
                f[n - 1, n - 1] = f[n - 1, n - 1] - m
        out.append(f)
    return out
