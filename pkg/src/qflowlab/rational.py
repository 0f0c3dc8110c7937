r"""Exact rational scalar fields on R^n.

A :class:`RationalField` is a finite sum

    f(x) = sum_t  c_t * x^{alpha_t} * (eps^2 + |x|^2)^{-q_t},

with multi-indices alpha_t and integer exponents q_t (q may be negative, so
polynomials and positive powers of (eps^2+|x|^2) are included).  The family is
closed under +, *, and partial differentiation:

    d/dx_i [ x^a s^{-q} ] = a_i x^{a-e_i} s^{-q} - 2 q x^{a+e_i} s^{-q-1},

s = eps^2 + |x|^2.  This gives machine-exact derivatives of any order for the
bubble profiles (eps/(eps^2+|x|^2))^{(n-4)/2} with integer (n-4)/2, conformal
factor gradients, and polynomial vector fields — the backbone of the analytic
identity checks, where finite differencing in space would dominate the error
budget.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RationalField", "monomial", "s_power", "dot_grad"]


class RationalField:
    """Finite sum of terms  c * x^alpha * (eps2 + |x|^2)^(-q)."""

    __slots__ = ("n", "eps2", "terms", "_pcache", "_packed")

    def __init__(self, n: int, eps2: float = 1.0, terms: dict | None = None):
        self.n = int(n)
        self.eps2 = float(eps2)
        # keys: (alpha tuple of length n, q int); values: float coefficients
        self.terms = dict(terms) if terms else {}
        self._pcache = {}     # memoized partial derivatives, keyed by axis
        self._packed = None   # (alphas, qs, coeffs) arrays for fast eval

    # -- construction -----------------------------------------------------
    def copy(self) -> "RationalField":
        return RationalField(self.n, self.eps2, self.terms)

    def _check(self, other: "RationalField"):
        if self.n != other.n or self.eps2 != other.eps2:
            raise ValueError("incompatible rational fields (n or eps2 differ)")

    # -- ring operations ---------------------------------------------------
    def __add__(self, other):
        if np.isscalar(other):
            other = monomial(self.n, (0,) * self.n, float(other), eps2=self.eps2)
        self._check(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return RationalField(self.n, self.eps2, out)

    __radd__ = __add__

    def __neg__(self):
        return RationalField(self.n, self.eps2, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        if np.isscalar(other):
            other = monomial(self.n, (0,) * self.n, float(other), eps2=self.eps2)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            c = float(other)
            if c == 0.0:
                return RationalField(self.n, self.eps2)
            return RationalField(self.n, self.eps2,
                                 {k: c * v for k, v in self.terms.items()})
        self._check(other)
        out: dict = {}
        for (a1, q1), c1 in self.terms.items():
            for (a2, q2), c2 in other.terms.items():
                key = (tuple(x + y for x, y in zip(a1, a2)), q1 + q2)
                out[key] = out.get(key, 0.0) + c1 * c2
        return RationalField(self.n, self.eps2, out)

    __rmul__ = __mul__

    # -- calculus ----------------------------------------------------------
    def partial(self, i: int) -> "RationalField":
        """d/dx_i, exact (memoized per axis)."""
        hit = self._pcache.get(i)
        if hit is not None:
            return hit
        out: dict = {}
        for (a, q), c in self.terms.items():
            if a[i] > 0:
                a1 = list(a)
                a1[i] -= 1
                key = (tuple(a1), q)
                out[key] = out.get(key, 0.0) + c * a[i]
            if q != 0:
                a2 = list(a)
                a2[i] += 1
                key = (tuple(a2), q + 1)
                out[key] = out.get(key, 0.0) - 2.0 * q * c
        res = RationalField(self.n, self.eps2, out)
        self._pcache[i] = res
        return res

    def grad(self) -> list:
        return [self.partial(i) for i in range(self.n)]

    def laplacian(self) -> "RationalField":
        out = RationalField(self.n, self.eps2)
        for i in range(self.n):
            out = out + self.partial(i).partial(i)
        return out

    def prune(self, tol: float = 0.0) -> "RationalField":
        scale = max((abs(v) for v in self.terms.values()), default=0.0)
        keep = {k: v for k, v in self.terms.items() if abs(v) > tol * scale}
        return RationalField(self.n, self.eps2, keep)

    # -- evaluation ----------------------------------------------------------
    def _pack(self):
        if self._packed is None:
            T = len(self.terms)
            alphas = np.zeros((T, self.n), dtype=np.int64)
            qs = np.zeros(T, dtype=np.int64)
            coeffs = np.zeros(T)
            for t, ((a, q), c) in enumerate(self.terms.items()):
                alphas[t] = a
                qs[t] = q
                coeffs[t] = c
            self._packed = (alphas, qs, coeffs)
        return self._packed

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at points x of shape (m, n) -> (m,)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if not self.terms:
            return np.zeros(x.shape[0])
        alphas, qs, coeffs = self._pack()
        s = self.eps2 + np.sum(x * x, axis=1)
        monos = np.prod(x[:, None, :] ** alphas[None, :, :], axis=2)
        return np.einsum("zt,t->z", monos * s[:, None] ** (-qs[None, :]),
                         coeffs)

    def __repr__(self):
        return f"RationalField(n={self.n}, eps2={self.eps2}, nterms={len(self.terms)})"


def monomial(n: int, alpha, coeff: float = 1.0, q: int = 0,
             eps2: float = 1.0) -> RationalField:
    """c * x^alpha * (eps2+|x|^2)^(-q)."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != n:
        raise ValueError("alpha length must equal n")
    return RationalField(n, eps2, {(alpha, int(q)): float(coeff)})


def s_power(n: int, q: int, coeff: float = 1.0, eps2: float = 1.0) -> RationalField:
    """c * (eps2+|x|^2)^(-q)."""
    return monomial(n, (0,) * n, coeff, q=q, eps2=eps2)


def dot_grad(X: list, f: RationalField) -> RationalField:
    """X^i d_i f for a list of RationalField components X."""
    out = RationalField(f.n, f.eps2)
    for i in range(f.n):
        out = out + X[i] * f.partial(i)
    return out
