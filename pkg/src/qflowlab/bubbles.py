r"""Standard bubbles, tensor splitting, correctors, and spherical Green's data.

The standard bubble u_eps(x) = (eps/(eps^2+|x|^2))^{(n-4)/2} solves the
fourth-order Yamabe-type equation

    Lap^2 u_eps = c(n) u_eps^{(n+4)/(n-4)},  c(n) = (n-4)(n-2)n(n+2),

and realizes the sharp Paneitz-Sobolev constant

    Y4(S^n) = c(n) (2^{-n} omega_n)^{4/n},  omega_n = vol(S^n).

This module constructs the explicit test functions built from bubbles:

* ``split_tensor``: given a tangential trace-free polynomial tensor H, split
  the cutoff tensor chi_delta H = T + S with tr T = 0,
  div(u_eps^{2n/(n-4)} T) = 0, and S = Lie_X g_e - (2/n) div X g_e for a
  polynomial vector field X found by weighted least squares.
* ``corrector_w``: w[S] = X_i d_i u_eps + ((n-4)/(2n)) div X u_eps solves

      Lap^2 w - ct(n) u_eps^{8/(n-4)} w = -DP_{g_e}[S] u_eps,

  ct(n) = ((n+4)/(n-4)) c(n); checked exactly through the rational-field
  algebra and the flat Paneitz linearization.
* ``greens_sphere_radial``: the radial Green's function of the Paneitz
  operator on the round S^n, normalized so d^{n-4} G -> 1 at the pole,
  via a pole Laurent series plus a zonal spectral correction.
* ``assemble_test_bubble``: the glued bubble/Green's-function test fields
  for the low-dimensional (5 <= n <= 7) and high-dimensional (n >= 8)
  regimes, and their rescaled-limit diagnostics.
* ``ps_quotient`` / ``boundary_integrals``: Paneitz-Sobolev quotients on the
  sphere, the boundary integral I(p, delta), and the fourth-order mass of
  G^{4/(n-4)} g_{S^n} in the inverted asymptotically flat chart.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .charts import ball_quadrature, sphere_area
from .rational import RationalField, monomial, s_power, dot_grad
from .variations import dp_flat, weyl_constant_tensor

__all__ = [
    "Bubble", "PolyTensor", "SplitResult", "GreensRadial",
    "bubble_constant", "bubble_constant_tilde", "y4_constant",
    "bubble_volume_integral", "bubble_eval", "corrector_kernel_residual",
    "cutoff_chi", "cutoff_chi_derivs", "weyl_poly_tensor", "split_tensor",
    "corrector_w", "corrector_from_x", "greens_sphere_radial",
    "ExactSphereGreens", "SphereChartGreens", "SyntheticChartGreens",
    "assemble_test_bubble", "TestBubble", "ps_quotient", "bubble_on_sphere",
    "mci_integral", "mci_telescoping", "q_mass", "boundary_integrals",
    "DELTA0",
]

DELTA0 = 0.25   # default cutoff radius in chart units


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def bubble_constant(n: int) -> float:
    """c(n) = (n-4)(n-2)n(n+2)."""
    if n <= 4:
        raise ValueError("bubble constant requires n >= 5")
    return float((n - 4) * (n - 2) * n * (n + 2))


def bubble_constant_tilde(n: int) -> float:
    """ct(n) = ((n+4)/(n-4)) c(n)."""
    return (n + 4.0) / (n - 4.0) * bubble_constant(n)


def y4_constant(n: int) -> float:
    """Y4(S^n) = c(n) (2^{-n} omega_n)^{4/n}, omega_n = vol(S^n)."""
    if n < 5:
        raise ValueError("Y4 requires n >= 5")
    omega_n = sphere_area(n)
    return bubble_constant(n) * (2.0 ** (-n) * omega_n) ** (4.0 / n)


def bubble_volume_integral(n: int, eps: float = 1.0) -> float:
    """int_{R^n} u_eps^{2n/(n-4)} dx by adaptive radial quadrature.

    The closed form is 2^{-n} omega_n (the volume of the radius-1/2 sphere),
    independently of eps.
    """
    from scipy.integrate import quad
    p = 2.0 * n / (n - 4.0)
    q = (n - 4.0) / 2.0 * p      # = n: integrand eps^n (eps^2+r^2)^{-n} r^{n-1}

    def f(r):
        return eps ** n * (eps * eps + r * r) ** (-n) * r ** (n - 1)

    val, _ = quad(f, 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return sphere_area(n - 1) * val


# ---------------------------------------------------------------------------
# the standard bubble and its radial PDE residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bubble:
    """u_eps(x) = (eps/(eps^2+|x-p|^2))^{(n-4)/2}."""

    n: int
    eps: float = 1.0
    center: tuple = None

    def __post_init__(self):
        if self.n < 5:
            raise ValueError("bubbles require n >= 5")
        if self.eps <= 0.0:
            raise ValueError("bubble scale eps must be positive")
        if self.center is None:
            object.__setattr__(self, "center", (0.0,) * self.n)

    def radial(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return (self.eps / (self.eps ** 2 + r * r)) ** ((self.n - 4) / 2.0)

    def radial_d1(self, r: np.ndarray) -> np.ndarray:
        """Exact du/dr."""
        r = np.asarray(r, dtype=float)
        s = self.eps ** 2 + r * r
        return -(self.n - 4.0) * r * self.eps ** ((self.n - 4) / 2.0) \
            * s ** (-(self.n - 4) / 2.0 - 1.0)

    def eval(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d = pts - np.asarray(self.center)
        return self.radial(np.sqrt(np.sum(d * d, axis=-1)))

    def rational(self) -> RationalField:
        """Exact rational form (requires even n-4 and a centered bubble)."""
        q2, rem = divmod(self.n - 4, 2)
        if rem or any(c != 0.0 for c in self.center):
            raise ValueError("rational form needs integer (n-4)/2 and "
                             "a bubble centered at the origin")
        return s_power(self.n, q2, self.eps ** q2, eps2=self.eps ** 2)


def _radial_lap6(vals, r, h, n, l=0, parity=1):
    """6th-order radial Laplacian f'' + (n-1)/r f' - l(l+n-2)/r^2 f.

    ``vals`` lives on the cell-centered grid r_j = (j+1/2) h; the left
    boundary uses reflection ghost cells with the given parity, the right
    end loses three cells.  Used as the inner pass of the bi-Laplacian:
    a uniform rule keeps its truncation error smooth, so the outer pass
    does not amplify stencil-junction kinks by 1/h^2.
    """
    q = np.concatenate([parity * vals[2::-1], vals])
    m = len(vals) - 3
    c = lambda k: q[3 + k:3 + k + m]      # noqa: E731
    f1 = (-c(-3) + 9.0 * c(-2) - 45.0 * c(-1)
          + 45.0 * c(1) - 9.0 * c(2) + c(3)) / (60.0 * h)
    f2 = (2.0 * c(-3) - 27.0 * c(-2) + 270.0 * c(-1) - 490.0 * c(0)
          + 270.0 * c(1) - 27.0 * c(2) + 2.0 * c(3)) / (180.0 * h * h)
    rr = r[:m]
    lap = f2 + (n - 1.0) / rr * f1
    if l:
        lap -= l * (l + n - 2.0) / (rr * rr) * vals[:m]
    return lap


def _radial_lap4(vals, r, h, n, l=0, parity=1, gamma=0.125):
    """4th-order radial Laplacian with a reduced leading error constant.

    Each row is the unique 7-point stencil exact on shifted monomials
    (x-r_j)^k, k <= 5, whose 6th moment is gamma times the deficiency of
    the standard 5-point rule.  The leading truncation term is therefore
    gamma * (standard h^4 error), uniformly in r, which keeps the nested
    bi-Laplacian residual of sharply peaked profiles well below the
    plain-stencil constant while preserving clean O(h^4) halving behavior.
    """
    q = np.concatenate([parity * vals[2::-1], vals])
    m = len(vals) - 3
    rr = r[:m]
    off = np.arange(-3.0, 4.0)
    V = off[None, :] ** np.arange(7)[:, None]      # V[k, i] = off_i^k
    b = np.zeros((7, m))
    if l:
        b[0] = -l * (l + n - 2.0) / (rr * rr)
    b[1] = (n - 1.0) / (rr * h)
    b[2] = 2.0 / (h * h)
    b[6] = -8.0 * gamma / (h * h)       # 6th-moment deficiency of 5-pt rule
    W = np.linalg.solve(V, b)
    out = np.zeros(m)
    for i in range(7):
        out += W[i] * q[i:i + m]
    return out


def _radial_bilaplacian(vals, r, h, n, l=0, parity=1):
    """Nested FD bi-Laplacian (6th-order inner, 4th-order outer pass)."""
    lap = _radial_lap6(vals, r, h, n, l=l, parity=parity)
    return _radial_lap4(lap, r[:len(lap)], h, n, l=l, parity=parity)


def bubble_eval(b: Bubble, h: float = 1e-2, rmax: float = 10.0) -> dict:
    """Sample u_eps radially and report the PDE residual of
    Lap^2 u - c(n) u^{(n+4)/(n-4)} over r <= rmax.

    ``residual`` is the sup-norm relative residual max|res| / max|rhs|
    (a pointwise quotient is roundoff-limited where u^{(n+4)/(n-4)} decays
    below the 1/h^4 amplification of double-precision noise)."""
    n = b.n
    npts = int(round(rmax / h)) + 8
    r = (np.arange(npts) + 0.5) * h
    u = b.radial(r)
    bil = _radial_bilaplacian(u, r, h, n)
    m = len(bil)
    rhs = bubble_constant(n) * u[:m] ** ((n + 4.0) / (n - 4.0))
    mask = r[:m] <= rmax
    rel = float(np.max(np.abs(bil - rhs)[mask]) / np.max(np.abs(rhs[mask])))
    return {"r": r[:m], "u": u[:m], "residual": rel, "h": h}


def corrector_kernel_residual(b: Bubble, mode: str, h: float = 2.5e-3,
                              rmax: float = 6.0) -> float:
    """Residual of the homogeneous linearized equation
    Lap^2 w = ct(n) u^{8/(n-4)} w for the conformal Killing kernel elements.

    mode="translation": w = du/dx_1 = u'(r) x_1/r (degree-1 harmonic part);
    mode="dilation":    w = r u'(r) + ((n-4)/2) u (radial).
    Returns max |residual| / max |ct u^{8/(n-4)} w|.
    """
    n = b.n
    npts = int(round(rmax / h)) + 8
    r = (np.arange(npts) + 0.5) * h
    u = b.radial(r)
    du = b.radial_d1(r)
    if mode == "translation":
        g, l, parity = du, 1, -1
    elif mode == "dilation":
        g, l, parity = r * du + 0.5 * (n - 4.0) * u, 0, +1
    else:
        raise ValueError("mode must be 'translation' or 'dilation'")
    bil = _radial_bilaplacian(g, r, h, n, l=l, parity=parity)
    m = len(bil)
    rhs = bubble_constant_tilde(n) * u[:m] ** (8.0 / (n - 4.0)) * g[:m]
    mask = r[:m] <= rmax
    return float(np.max(np.abs(bil - rhs)[mask]) / np.max(np.abs(rhs[mask])))


# ---------------------------------------------------------------------------
# quintic cutoff
# ---------------------------------------------------------------------------

# chi(s) = 1 for s <= 4/3, 0 for s >= 5/3, quintic smoothstep between
_CUT_POLY = np.polynomial.Polynomial([1.0, 0.0, 0.0, -10.0, 15.0, -6.0])
_CUT_DERIVS = [_CUT_POLY.deriv(k) for k in range(5)]


def cutoff_chi(s) -> np.ndarray:
    """Quintic smoothstep cutoff: 1 on s <= 4/3, 0 on s >= 5/3, C^2 joins."""
    s = np.asarray(s, dtype=float)
    tau = np.clip(3.0 * (s - 4.0 / 3.0), 0.0, 1.0)
    return _CUT_POLY(tau)


def cutoff_chi_derivs(s, order: int = 4):
    """chi and its derivatives up to ``order`` with respect to s."""
    s = np.asarray(s, dtype=float)
    tau = 3.0 * (s - 4.0 / 3.0)
    inside = (tau > 0.0) & (tau < 1.0)
    tau_c = np.clip(tau, 0.0, 1.0)
    out = [_CUT_POLY(tau_c)]
    for k in range(1, order + 1):
        vals = np.where(inside, _CUT_DERIVS[k](tau_c) * 3.0 ** k, 0.0)
        out.append(vals)
    return out


# ---------------------------------------------------------------------------
# polynomial tangential tensors H
# ---------------------------------------------------------------------------

class PolyTensor:
    """Symmetric matrix-valued polynomial H with H_{ij} x_j = 0, H_{ii} = 0.

    Coefficients are stored as (i, j, alpha) -> value with i <= j; the
    symmetric entry is implied.  Degrees should lie in 2..d with
    d = floor((n-4)/2) for the splitting lemma's regime, but the container
    accepts any homogeneous degrees.
    """

    def __init__(self, n: int, coeffs: dict):
        self.n = int(n)
        self.coeffs = {}
        for (i, j, alpha), v in coeffs.items():
            if v == 0.0:
                continue
            i, j = (i, j) if i <= j else (j, i)
            key = (i, j, tuple(int(a) for a in alpha))
            self.coeffs[key] = self.coeffs.get(key, 0.0) + float(v)

    # -- invariant checks at the coefficient level --------------------------
    def constraint_residuals(self) -> dict:
        trace = {}
        tang = {}
        for (i, j, alpha), v in self.coeffs.items():
            if i == j:
                trace[alpha] = trace.get(alpha, 0.0) + v
            for (a, b) in ((i, j), (j, i)) if i != j else ((i, j),):
                beta = list(alpha)
                beta[b] += 1
                key = (a, tuple(beta))
                tang[key] = tang.get(key, 0.0) + v
        scale = max((abs(v) for v in self.coeffs.values()), default=1.0)
        return {
            "trace": max((abs(v) for v in trace.values()), default=0.0) / scale,
            "tangency": max((abs(v) for v in tang.values()), default=0.0) / scale,
        }

    def degrees(self) -> list:
        return sorted({sum(alpha) for (_, _, alpha) in self.coeffs})

    def norms(self) -> dict:
        """|H^(k)|^2 = sum of squared coefficients at degree k (both i<=j
        and the mirrored entries counted)."""
        out = {}
        for (i, j, alpha), v in self.coeffs.items():
            k = sum(alpha)
            mult = 1.0 if i == j else 2.0
            out[k] = out.get(k, 0.0) + mult * v * v
        return {k: math.sqrt(s) for k, s in out.items()}

    def eval(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (self.n, self.n))
        for (i, j, alpha), v in self.coeffs.items():
            mono = v * np.prod(pts ** np.asarray(alpha), axis=-1)
            out[..., i, j] += mono
            if i != j:
                out[..., j, i] += mono
        return out

    def divergence_coeffs(self, tol: float = 1e-13) -> dict:
        """Coefficients of (div H)_j = d_i H_{ij} as {(j, beta): value}.

        Entries that cancel to below tol relative to the largest
        pre-cancellation magnitude are pruned to exact zero, so tensors
        that are divergence-free by symmetry yield an empty dict.
        """
        acc: dict = {}
        big = 0.0
        for (i, j, alpha), v in self.coeffs.items():
            for (a, b) in ((i, j), (j, i)) if i != j else ((i, j),):
                if alpha[a] == 0:
                    continue
                beta = list(alpha)
                beta[a] -= 1
                key = (b, tuple(beta))
                t = v * alpha[a]
                big = max(big, abs(t))
                acc[key] = acc.get(key, 0.0) + t
        return {k: v for k, v in acc.items() if abs(v) > tol * big}

    def divergence(self, pts: np.ndarray) -> np.ndarray:
        """(div H)_j = d_i H_{ij}, shape (..., n)."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (self.n,))
        for (b, beta), v in self.divergence_coeffs().items():
            out[..., b] += v * np.prod(pts ** np.asarray(beta), axis=-1)
        return out

    def as_fields(self, eps2: float = 1.0) -> np.ndarray:
        fields = np.empty((self.n, self.n), dtype=object)
        zero = RationalField(self.n, eps2)
        fields[:] = zero
        for (i, j, alpha), v in self.coeffs.items():
            term = monomial(self.n, alpha, v, eps2=eps2)
            fields[i, j] = fields[i, j] + term
            if i != j:
                fields[j, i] = fields[j, i] + term
        return fields

    # -- serialization (JSON list of {i, j, multi_index, value}) ------------
    def to_json(self) -> str:
        items = [{"i": i, "j": j, "multi_index": list(alpha), "value": v}
                 for (i, j, alpha), v in sorted(self.coeffs.items())]
        return json.dumps(items, indent=1)

    @classmethod
    def from_json(cls, text: str, n: int | None = None) -> "PolyTensor":
        items = json.loads(text)
        if not items and n is None:
            raise ValueError("empty coefficient list needs an explicit n")
        if n is None:
            n = len(items[0]["multi_index"])
        coeffs = {}
        for it in items:
            key = (int(it["i"]), int(it["j"]), tuple(it["multi_index"]))
            coeffs[key] = coeffs.get(key, 0.0) + float(it["value"])
        return cls(n, coeffs)


def weyl_poly_tensor(n: int, degree: int = 2, seed: int = 0) -> PolyTensor:
    """Homogeneous symmetric, tangential, trace-free polynomial tensor.

    Even degree 2 + 2m: H_{ij} = W_{ikjl} x_k x_l (r^2)^m with W an
    algebraic Weyl tensor; the curvature symmetries make H exactly
    tangential and trace-free, and also divergence-free.  Odd degree
    3 + 2m: H_{ij} = W_{ikjl} x_k x_l (c.x) (r^2)^m with a fixed unit
    vector c; still tangential and trace-free but with nonzero
    divergence W_{ikjl} c_i x_k x_l (r^2)^m, which makes the splitting
    problem non-trivial.
    """
    if degree < 2:
        raise ValueError("degree must be >= 2")
    W = weyl_constant_tensor(n, seed=seed)
    odd = degree % 2
    m = (degree - 2 - odd) // 2
    cvec = None
    if odd:
        rng = np.random.default_rng(seed + 1)
        cvec = rng.normal(size=n)
        cvec /= np.linalg.norm(cvec)
    coeffs = {}
    for i in range(n):
        for j in range(i, n):
            for k in range(n):
                for l in range(n):
                    v = W[i, k, j, l]
                    if v == 0.0:
                        continue
                    base = [0] * n
                    base[k] += 1
                    base[l] += 1
                    for extra in itertools.combinations_with_replacement(
                            range(n), 2 * m):
                        alpha = list(base)
                        for a in extra:
                            alpha[a] += 1
                        # multinomial weight of (r^2)^m expansion
                        cnt = {}
                        for a in extra:
                            cnt[a] = cnt.get(a, 0) + 1
                        if any(c % 2 for c in cnt.values()):
                            continue
                        w = math.factorial(m)
                        for c in cnt.values():
                            w //= math.factorial(c // 2)
                        if odd:
                            for a in range(n):
                                if cvec[a] == 0.0:
                                    continue
                                beta = list(alpha)
                                beta[a] += 1
                                key = (i, j, tuple(beta))
                                coeffs[key] = coeffs.get(key, 0.0) \
                                    + v * w * cvec[a]
                        else:
                            key = (i, j, tuple(alpha))
                            coeffs[key] = coeffs.get(key, 0.0) + v * w
    return PolyTensor(n, coeffs)


# ---------------------------------------------------------------------------
# the splitting chi_delta H = T + S
# ---------------------------------------------------------------------------

@dataclass
class SplitResult:
    """chi_delta H = T + S with S = Lie_X g_e - (2/n) div X g_e."""

    H: PolyTensor
    delta: float
    eps: float
    X: list                       # n RationalField components
    coeffs: np.ndarray            # least-squares coefficients
    residuals: dict = field(default_factory=dict)

    def S_fields(self, eps2: float | None = None) -> np.ndarray:
        n = self.H.n
        if eps2 is None:
            eps2 = self.X[0].eps2
        S = np.empty((n, n), dtype=object)
        divx = RationalField(n, eps2)
        for i in range(n):
            divx = divx + self.X[i].partial(i)
        for i in range(n):
            for j in range(n):
                t = self.X[i].partial(j) + self.X[j].partial(i)
                if i == j:
                    t = t - (2.0 / n) * divx
                S[i, j] = t
        return S

    def S_values(self, pts: np.ndarray) -> np.ndarray:
        S = self.S_fields()
        n = self.H.n
        out = np.empty(pts.shape[:-1] + (n, n))
        flat = pts.reshape(-1, n)
        for i in range(n):
            for j in range(n):
                out[..., i, j] = S[i, j].eval(flat).reshape(pts.shape[:-1])
        return out

    def T_values(self, pts: np.ndarray) -> np.ndarray:
        r = np.sqrt(np.sum(pts * pts, axis=-1))
        chiH = cutoff_chi(r / self.delta)[..., None, None] * self.H.eval(pts)
        return chiH - self.S_values(pts)


def _monomial_exponents(n: int, degs) -> list:
    out = []
    for deg in degs:
        for combo in itertools.combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for a in combo:
                alpha[a] += 1
            out.append(tuple(alpha))
    return out


def _mono_vals_derivs(pts: np.ndarray, exps: np.ndarray):
    """Monomial values, first and second derivatives at pts.

    Returns (V (m,T), D (m,n,T), DD (m,n,n,T))."""
    m, n = pts.shape
    T = len(exps)
    V = np.ones((m, T))
    for a in range(n):
        V *= pts[:, a:a + 1] ** exps[None, :, a]
    D = np.zeros((m, n, T))
    DD = np.zeros((m, n, n, T))
    for a in range(n):
        ea = exps[:, a]
        lowered = exps.copy()
        lowered[:, a] = np.maximum(ea - 1, 0)
        Va = np.ones((m, T))
        for b in range(n):
            Va *= pts[:, b:b + 1] ** lowered[None, :, b]
        D[:, a, :] = ea[None, :] * Va
        for c in range(a, n):
            ec = lowered[:, c]
            low2 = lowered.copy()
            low2[:, c] = np.maximum(ec - 1, 0)
            Vac = np.ones((m, T))
            for b in range(n):
                Vac *= pts[:, b:b + 1] ** low2[None, :, b]
            DD[:, a, c, :] = (ea * ec)[None, :] * Vac
            DD[:, c, a, :] = DD[:, a, c, :]
    return V, D, DD


def split_tensor(H: PolyTensor, delta: float, eps: float,
                 nr: int = 8, deg: int = 3, degree_cap: int | None = None,
                 rcond: float = 1e-11) -> SplitResult:
    """Split chi_delta H = T + S per the weighted divergence condition.

    The vector field X is a polynomial ansatz (degrees k+1, k-1, ... >= 0
    for each homogeneous degree k of H, capped at d+3) minimizing the
    weighted L^2 norm of div(u_eps^{2n/(n-4)} (chi_delta H - S(X))) over a
    ball quadrature cloud of radius 3 delta.  tr T = 0 and the
    conformal-Killing form of S hold identically.
    """
    n = H.n
    if delta < 2.0 * eps:
        raise ValueError("splitting requires 0 < 2 eps <= delta")
    d = (n - 4) // 2
    cap = degree_cap if degree_cap is not None else d + 3
    hdegs = H.degrees()
    xdegs = sorted({kk for k in hdegs for kk in range(k + 1, -1, -2)
                    if 0 <= kk <= cap})
    if not hdegs or not H.divergence_coeffs():
        # H is divergence-free (and tangential), so chi H is already a
        # valid T and the exact minimizer is X = 0
        zero = [RationalField(n, eps * eps) for _ in range(n)]
        split = SplitResult(H, delta, eps, zero, np.zeros(0))
        split.residuals = _split_residual_report(split, 0.0)
        return split

    exps = np.asarray(_monomial_exponents(n, xdegs), dtype=np.int64)
    T = len(exps)
    nb = n * T
    pts, wts = ball_quadrature(n, 3.0 * delta, nr=nr, deg=deg)
    m = len(pts)

    def weighted_rows(sl):
        # rows of the weighted divergence applied to S(m e_c):
        # W_j = delta_{jc} (Lap m - (2n/s) x.grad m)
        #       + (1 - 2/n) d_j d_c m
        #       - (2n/s) (x_c d_j m - (2/n) x_j d_c m)
        p = pts[sl]
        mz = len(p)
        s = eps * eps + np.sum(p * p, axis=1)
        wrow = np.sqrt(wts[sl]) * s ** (-float(n))   # u^{2n/(n-4)} ~ s^{-n}
        V, D, DD = _mono_vals_derivs(p, exps)
        lap = np.einsum("zaat->zt", DD)
        xdg = np.einsum("za,zat->zt", p, D)
        two_n_s = (2.0 * n / s)
        A = np.zeros((mz, n, n, T))
        diag = lap - two_n_s[:, None] * xdg
        for c in range(n):
            A[:, c, c, :] += diag
        A += (1.0 - 2.0 / n) * DD
        A -= np.einsum("z,zc,zjt->zjct", two_n_s, p, D)
        A += (2.0 / n) * np.einsum("z,zj,zct->zjct", two_n_s, p, D)
        # right-hand side: W_j(chi H) = chi * (div H)_j since x_i H_{ij} = 0
        r = np.sqrt(s - eps * eps)
        rhs = cutoff_chi(r / delta)[:, None] * H.divergence(p)
        Aw = (A * wrow[:, None, None, None]).reshape(mz * n, nb)
        bw = (rhs * wrow[:, None]).reshape(mz * n)
        return Aw, bw

    ata = np.zeros((nb, nb))
    atb = np.zeros(nb)
    bnorm2 = 0.0
    chunk = max(1, 2_000_000 // max(n * nb, 1))
    chunks = [slice(lo, min(lo + chunk, m)) for lo in range(0, m, chunk)]
    for sl in chunks:
        Aw, bw = weighted_rows(sl)
        ata += Aw.T @ Aw
        atb += Aw.T @ bw
        bnorm2 += float(bw @ bw)

    # eigen-truncated pseudoinverse keeps the solve deterministic
    evals, evecs = np.linalg.eigh(ata)
    keep = evals > rcond * evals[-1]
    coeff = evecs[:, keep] @ ((evecs[:, keep].T @ atb) / evals[keep])
    # second pass for the fit residual: the normal-equation identity
    # b^2 - 2 c.A'b + c.A'Ac cancels catastrophically under the s^{-n}
    # weight's dynamic range, so evaluate A c - b directly instead
    res2 = 0.0
    for sl in chunks:
        Aw, bw = weighted_rows(sl)
        d = Aw @ coeff - bw
        res2 += float(d @ d)
    rel_ls = math.sqrt(res2 / bnorm2) if bnorm2 > 0.0 else 0.0

    eps2 = eps * eps
    X = []
    cmat = coeff.reshape(n, T)
    for c in range(n):
        comp = RationalField(n, eps2)
        for t in range(T):
            if cmat[c, t] != 0.0:
                comp = comp + monomial(n, tuple(exps[t]), cmat[c, t],
                                       eps2=eps2)
        X.append(comp.prune())
    split = SplitResult(H, delta, eps, X, coeff)
    split.residuals = _split_residual_report(split, rel_ls)
    return split


def _split_residual_report(split: SplitResult, rel_ls: float,
                           nr: int = 6, deg: int = 2) -> dict:
    """Exact-identity and fresh-cloud residuals for a SplitResult."""
    H, delta, eps = split.H, split.delta, split.eps
    n = H.n
    pts, wts = ball_quadrature(n, 1.55 * delta, nr=nr, deg=deg)
    Tv = split.T_values(pts)
    scale = max(float(np.max(np.abs(Tv))), 1e-300)
    tr_res = float(np.max(np.abs(np.einsum("zii->z", Tv)))) / scale

    # div(u^{2n/(n-4)} T)_j = u^Q [d_i T_{ij} - (2n/s) x_i T_{ij}]
    s = eps * eps + np.sum(pts * pts, axis=1)
    S = split.S_fields()
    divS = np.zeros((len(pts), n))
    xS = np.zeros((len(pts), n))
    for j in range(n):
        for i in range(n):
            divS[:, j] += S[i, j].partial(i).eval(pts)
            xS[:, j] += pts[:, i] * S[i, j].eval(pts)
    r = np.sqrt(np.sum(pts * pts, axis=1))
    chi = cutoff_chi(r / delta)
    divH = H.divergence(pts)
    divT = chi[:, None] * divH - divS + (2.0 * n / s)[:, None] * xS
    hscale = max((v for v in H.norms().values()), default=1.0)
    dscale = max(float(np.max(np.abs(chi[:, None] * divH))), hscale)
    div_rel = float(np.max(np.abs(divT))) / dscale

    # growth-bound spot check: |X| <= C sum_k |H^(k)| (eps + |x|)^{k+1}
    norms = H.norms()
    Xv = np.stack([x.eval(pts) for x in split.X], axis=1)
    bound = np.zeros(len(pts))
    for k, nk in norms.items():
        bound += nk * (eps + r) ** (k + 1)
    growth = float(np.max(np.linalg.norm(Xv, axis=1)
                          / np.maximum(bound, 1e-300)))
    return {"div_T": div_rel, "trace_T": tr_res, "S_form": 0.0,
            "ls_residual": rel_ls, "growth_ratio": growth,
            "div_T_abs": float(np.max(np.abs(divT))),
            "H_scale": hscale}


# ---------------------------------------------------------------------------
# the corrector w = X . grad u + ((n-4)/(2n)) div X u
# ---------------------------------------------------------------------------

def corrector_from_x(X: list, b: Bubble, nr: int = 4, deg: int = 2,
                     r0: float = 1.0):
    """Corrector w for a conformal-Killing-type direction X.

    Returns (w, report) where w = X_i d_i u + ((n-4)/(2n)) div X u as an
    exact rational field, and the report bounds the pointwise residual of

        Lap^2 w - ct(n) u^{8/(n-4)} w + DP_{g_e}[S] u = 0,

    S = Lie_X g_e - (2/n) div X g_e, on a quadrature cloud.  Requires even
    n - 4 (so u is rational) and a centered bubble.
    """
    n = b.n
    u = b.rational()
    eps2 = u.eps2
    divx = RationalField(n, eps2)
    for i in range(n):
        divx = divx + X[i].partial(i)
    w = dot_grad(X, u) + ((n - 4.0) / (2.0 * n)) * divx * u
    w = w.prune()

    S = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            t = X[i].partial(j) + X[j].partial(i)
            if i == j:
                t = t - (2.0 / n) * divx
            S[i, j] = t

    bil = w.laplacian().laplacian()
    u4 = s_power(n, 4, b.eps ** 4, eps2=eps2)      # u^{8/(n-4)} = (eps/s)^4
    zero_order = bubble_constant_tilde(n) * u4 * w
    forcing = dp_flat(S, u)

    pts, _ = ball_quadrature(n, r0, nr=nr, deg=deg)
    t1 = bil.eval(pts)
    t2 = zero_order.eval(pts)
    t3 = forcing.eval(pts)
    res = t1 - t2 + t3
    scale = max(float(np.max(np.abs(t1))), float(np.max(np.abs(t2))),
                float(np.max(np.abs(t3))), 1e-300)
    return w, {"residual": float(np.max(np.abs(res))) / scale,
               "scale": scale}


def corrector_w(split: SplitResult, b: Bubble, **kw):
    """Corrector for the S-part of a splitting (see ``corrector_from_x``)."""
    return corrector_from_x(split.X, b, **kw)


# ---------------------------------------------------------------------------
# radial Green's function of the Paneitz operator on the round sphere
# ---------------------------------------------------------------------------

# cot x = sum_j _COT[j] x^{2j-1}
_COT = [1.0, -1.0 / 3.0, -1.0 / 45.0, -2.0 / 945.0, -1.0 / 4725.0,
        -2.0 / 93555.0, -1382.0 / 638512875.0, -4.0 / 18243225.0,
        -3617.0 / 325641566250.0]


def _series_lap(f: dict, n: int, pmax: int) -> dict:
    """Laplacian f'' + (n-1) cot(d) f' of a pole Laurent series, truncated."""
    out: dict = {}
    for a, c in f.items():
        out[a - 2] = out.get(a - 2, 0.0) + c * a * (a - 1.0)
        for j, bj in enumerate(_COT):
            p = a - 2 + 2 * j
            if p > pmax:
                break
            out[p] = out.get(p, 0.0) + c * a * (n - 1.0) * bj
    return {p: v for p, v in out.items() if p <= pmax and v != 0.0}


def _series_paneitz(f: dict, n: int, pmax: int) -> dict:
    a_n = 0.5 * (n * n - 2.0 * n - 4.0)
    b_n = n * (n * n - 4.0) * (n - 4.0) / 16.0
    lap = _series_lap(f, n, pmax + 2)
    lap2 = _series_lap(lap, n, pmax)
    out = dict(lap2)
    for p, v in lap.items():
        if p <= pmax:
            out[p] = out.get(p, 0.0) - a_n * v
    for p, v in f.items():
        if p <= pmax:
            out[p] = out.get(p, 0.0) + b_n * v
    return out


def _pole_series(n: int, M: int) -> np.ndarray:
    """Coefficients c_m of the pole expansion sum_m c_m d^{4-n+2m}, c_0 = 1.

    Each c_m kills the d^{4-n+2m-4} coefficient of the Paneitz residual via
    the indicial factor a(a+n-2)(a-2)(a+n-4); a resonant power (even n)
    leaves c_m = 0 and the residual is absorbed by the spectral correction.
    """
    sigma = 4 - n
    c = np.zeros(M + 1)
    c[0] = 1.0
    for m in range(1, M + 1):
        f = {sigma + 2 * k: c[k] for k in range(m) if c[k] != 0.0}
        res = _series_paneitz(f, n, sigma + 2 * m - 4)
        rm = res.get(sigma + 2 * m - 4, 0.0)
        a = sigma + 2 * m
        ind = a * (a + n - 2.0) * (a - 2.0) * (a + n - 4.0)
        c[m] = 0.0 if abs(ind) < 1e-9 else -rm / ind
    return c


def _radial_paneitz_theta(n: int, th: np.ndarray, f):
    """P f from (f, f', f'', f''', f'''') at polar angles th on S^n."""
    a_n = 0.5 * (n * n - 2.0 * n - 4.0)
    b_n = n * (n * n - 4.0) * (n - 4.0) / 16.0
    s, cth = np.sin(th), np.cos(th)
    A = (n - 1.0) * cth / s
    Ap = -(n - 1.0) / (s * s)
    App = 2.0 * (n - 1.0) * cth / s ** 3
    lap = f[2] + A * f[1]
    lap2 = f[4] + 2.0 * A * f[3] + (2.0 * Ap + A * A) * f[2] \
        + (App + A * Ap) * f[1]
    return lap2 - a_n * lap + b_n * f[0]


def _leibniz(a, b, order: int = 4):
    """Derivatives of a product from derivative lists a[0..k], b[0..k]."""
    return [sum(math.comb(k, i) * a[i] * b[k - i] for i in range(k + 1))
            for k in range(order + 1)]


def _chain_cos(f, th, order: int = 4):
    """Convert derivatives wrt t = cos(theta) into derivatives wrt theta."""
    s, c = np.sin(th), np.cos(th)
    out = [f[0]]
    if order >= 1:
        out.append(-s * f[1])
    if order >= 2:
        out.append(-c * f[1] + s * s * f[2])
    if order >= 3:
        out.append(s * f[1] + 3.0 * s * c * f[2] - s ** 3 * f[3])
    if order >= 4:
        out.append(c * f[1] + (3.0 * c * c - 4.0 * s * s) * f[2]
                   - 6.0 * s * s * c * f[3] + s ** 4 * f[4])
    return out


def _beta_window_poly(p: int = 6):
    """Polynomial smoothstep 1 -> 0 on [0, 1] with C^p junctions.

    q(tau) = 1 - I(tau; p+1, p+1) (regularized incomplete beta), a degree
    2p+1 polynomial whose first p derivatives vanish at both ends; the
    spectral Green's correction needs this much smoothness so that the
    Paneitz image of the windowed series has fast coefficient decay.
    """
    Poly = np.polynomial.Polynomial
    core = Poly([1.0])
    for _ in range(p):
        core = core * Poly([0.0, 1.0]) * Poly([1.0, -1.0])
    integ = core.integ()
    return Poly([1.0]) - integ / integ(1.0)


_WINDOW_POLY = _beta_window_poly(6)
_WINDOW_DERIVS = [_WINDOW_POLY.deriv(k) for k in range(5)]


def _window_derivs(d: np.ndarray, lo: float, hi: float, order: int = 4):
    """C^6 window (1 for d <= lo, 0 for d >= hi) and derivatives wrt d."""
    d = np.asarray(d, dtype=float)
    tau = (d - lo) / (hi - lo)
    inside = (tau > 0.0) & (tau < 1.0)
    tau_c = np.clip(tau, 0.0, 1.0)
    out = [_WINDOW_POLY(tau_c)]
    for k in range(1, order + 1):
        out.append(np.where(inside, _WINDOW_DERIVS[k](tau_c)
                            / (hi - lo) ** k, 0.0))
    return out


@dataclass
class GreensRadial:
    """Radial Paneitz Green's data on S^n, normalized d^{n-4} G -> 1.

    G(d) = chi(d) sum_m c_m d^{4-n+2m} + R(d) with R the spectral solution
    of P R = -P(chi * series), chi a C^6 window supported in d < cut_hi.
    ``A_p`` is the constant term R(0).
    """

    n: int
    cut_lo: float
    cut_hi: float
    pole_coeffs: np.ndarray
    r_coeffs: np.ndarray
    A_p: float
    ladder_residual: float

    def _series_derivs(self, d: np.ndarray, order: int = 4):
        sigma = 4 - self.n
        out = []
        for k in range(order + 1):
            acc = np.zeros_like(d)
            for m, cm in enumerate(self.pole_coeffs):
                if cm == 0.0:
                    continue
                a = sigma + 2 * m
                fac = cm
                for i in range(k):
                    fac *= (a - i)
                acc += fac * d ** (a - k)
            out.append(acc)
        return out

    def _cut_derivs(self, d: np.ndarray, order: int = 4):
        return _window_derivs(d, self.cut_lo, self.cut_hi, order)

    def _spectral_derivs(self, d: np.ndarray, order: int = 4):
        from scipy.special import eval_gegenbauer
        n = self.n
        alpha = (n - 1) / 2.0
        K = len(self.r_coeffs)
        kk = np.arange(K)
        from scipy.special import gammaln as _gl
        norms = np.sqrt(sphere_area(n - 1)
                        * np.exp(math.log(math.pi)
                                 + (1.0 - 2.0 * alpha) * math.log(2.0)
                                 + _gl(kk + 2.0 * alpha) - _gl(kk + 1.0)
                                 - np.log(kk + alpha)
                                 - 2.0 * _gl(np.array(alpha))))
        t = np.cos(d)
        fs = []
        for j in range(order + 1):
            fac = 2.0 ** j * math.gamma(alpha + j) / math.gamma(alpha)
            idx = kk[kk >= j]
            basis = eval_gegenbauer(idx[:, None] - j, alpha + j, t[None, :])
            coeff = fac * self.r_coeffs[idx] / norms[idx]
            fs.append(coeff @ basis)
        return _chain_cos(fs, d, order)

    def derivs(self, d, order: int = 4):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        sing = _leibniz(self._cut_derivs(d, order),
                        self._series_derivs(d, order), order)
        spec = self._spectral_derivs(d, order)
        return [sing[k] + spec[k] for k in range(order + 1)]

    def value(self, d) -> np.ndarray:
        return self.derivs(d, order=0)[0]


def greens_sphere_radial(n: int, M: int = 24, K: int = 256,
                         cut=(0.7, 2.8)) -> GreensRadial:
    """Radial Green's function of the Paneitz operator on the round S^n."""
    from .flow import ZonalOperator
    if n < 5:
        raise ValueError("greens_sphere_radial requires n >= 5")
    c = _pole_series(n, M)
    op = ZonalOperator(n, K)
    g = GreensRadial(n, cut[0], cut[1], c, np.zeros(K), 0.0, 0.0)
    th = op.theta
    sing = _leibniz(g._cut_derivs(th), g._series_derivs(th))
    rho = _radial_paneitz_theta(n, th, sing)
    rho_k = op.to_coeffs(rho)
    g.r_coeffs = -rho_k / op.lam
    # residual of the spectral truncation: P G at the nodes
    resid = rho + _radial_paneitz_theta(n, th, g._spectral_derivs(th))
    g.ladder_residual = float(np.max(np.abs(resid)) / np.max(np.abs(rho)))
    g.A_p = float(g._spectral_derivs(np.array([0.0]), order=0)[0][0])
    return g


class ExactSphereGreens:
    """Closed form (2 sin(d/2))^{4-n} with exact derivatives.

    Derivatives follow the recursion f^{(k)} = f P_k(cot(d/2)) with
    P_0 = 1 and P_{k+1} = -(1+c^2)/2 P_k' + (p/2) c P_k, p = 4 - n.
    """

    def __init__(self, n: int):
        self.n = n
        self.A_p = 0.0
        p = 4.0 - n
        Poly = np.polynomial.Polynomial
        half = Poly([-0.5, 0.0, -0.5])       # -(1+c^2)/2
        lin = Poly([0.0, 0.5 * p])           # (p/2) c
        polys = [Poly([1.0])]
        for _ in range(4):
            polys.append(half * polys[-1].deriv() + lin * polys[-1])
        self._polys = polys
        self._p = p

    def derivs(self, d, order: int = 4):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        f = (2.0 * np.sin(0.5 * d)) ** self._p
        c = 1.0 / np.tan(0.5 * d)
        return [f * self._polys[k](c) for k in range(order + 1)]

    def value(self, d) -> np.ndarray:
        return self.derivs(d, order=0)[0]


# ---------------------------------------------------------------------------
# chart representations and boundary integrals
# ---------------------------------------------------------------------------

def _power_chain(g, p: float, order: int = 4):
    """Derivatives of g(x)^p from derivatives of g (g > 0)."""
    out = [g[0] ** p]
    if order >= 1:
        out.append(p * g[0] ** (p - 1) * g[1])
    if order >= 2:
        out.append(p * (p - 1) * g[0] ** (p - 2) * g[1] ** 2
                   + p * g[0] ** (p - 1) * g[2])
    if order >= 3:
        out.append(p * (p - 1) * (p - 2) * g[0] ** (p - 3) * g[1] ** 3
                   + 3 * p * (p - 1) * g[0] ** (p - 2) * g[1] * g[2]
                   + p * g[0] ** (p - 1) * g[3])
    if order >= 4:
        out.append(p * (p - 1) * (p - 2) * (p - 3) * g[0] ** (p - 4) * g[1] ** 4
                   + 6 * p * (p - 1) * (p - 2) * g[0] ** (p - 3)
                   * g[1] ** 2 * g[2]
                   + p * (p - 1) * g[0] ** (p - 2)
                   * (3 * g[2] ** 2 + 4 * g[1] * g[3])
                   + p * g[0] ** (p - 1) * g[4])
    return out


def _faa_di_bruno(G, D, order: int = 4):
    """Derivatives of G(d(rho)) from derivative lists G (wrt d) and D (of d)."""
    out = [G[0]]
    if order >= 1:
        out.append(G[1] * D[1])
    if order >= 2:
        out.append(G[2] * D[1] ** 2 + G[1] * D[2])
    if order >= 3:
        out.append(G[3] * D[1] ** 3 + 3 * G[2] * D[1] * D[2] + G[1] * D[3])
    if order >= 4:
        out.append(G[4] * D[1] ** 4 + 6 * G[3] * D[1] ** 2 * D[2]
                   + G[2] * (3 * D[2] ** 2 + 4 * D[1] * D[3]) + G[1] * D[4])
    return out


class SphereChartGreens:
    """Stereographic-chart form U(rho) of a radial Green's function on S^n.

    U(rho) = (1 + rho^2/4)^{-(n-4)/2} G(2 arctan(rho/2)), so that the
    conformally singular metric is U^{4/(n-4)} g_e and the exact sphere
    data gives U = rho^{4-n}.
    """

    def __init__(self, greens, n: int):
        self.g = greens
        self.n = n
        self.A_p = getattr(greens, "A_p", None)

    def derivs(self, rho, order: int = 4):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        A = 1.0 + 0.25 * rho * rho
        d = 2.0 * np.arctan(0.5 * rho)
        one = np.ones_like(rho)
        D = [d, 1.0 / A, -(0.5 * rho) / A ** 2,
             -0.5 / A ** 2 + (0.5 * rho ** 2) / A ** 3,
             1.5 * rho / A ** 3 - 0.75 * rho ** 3 / A ** 4]
        Gd = self.g.derivs(d, order)
        comp = _faa_di_bruno(Gd, D, order)
        Ader = [A, 0.5 * rho, 0.5 * one, 0.0 * one, 0.0 * one]
        phi = _power_chain(Ader, -(self.n - 4.0) / 2.0, order)
        return _leibniz(phi, comp, order)

    def value(self, rho) -> np.ndarray:
        return self.derivs(rho, order=0)[0]


class SyntheticChartGreens:
    """Chart profile U(rho) = rho^{4-n} + A: flat singular part plus a
    constant term, the model for a nonzero mass-type coefficient."""

    def __init__(self, n: int, A: float):
        self.n = n
        self.A_p = float(A)

    def derivs(self, rho, order: int = 4):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        p = 4.0 - self.n
        out = [rho ** p + self.A_p]
        fac = 1.0
        for k in range(1, order + 1):
            fac *= (p - k + 1)
            out.append(fac * rho ** (p - k))
        return out

    def value(self, rho) -> np.ndarray:
        return self.derivs(rho, order=0)[0]


def mci_integral(chart_g, n: int, delta: float) -> float:
    """The boundary integral I(p, delta) of the chart profile U.

    I = -oint_{|x|=delta} [|x|^{4-n} d_nu Lap U - d_nu(|x|^{4-n}) Lap U]
        -oint_{|x|=delta} [Lap(|x|^{4-n}) d_nu U - d_nu Lap(|x|^{4-n}) U],
    evaluated radially (outward normal); vanishes for U = |x|^{4-n}.
    """
    F = chart_g.derivs(np.array([delta]), order=3)
    F = [float(f[0]) for f in F]
    d = delta
    lapU = F[2] + (n - 1.0) * F[1] / d
    dlapU = F[3] + (n - 1.0) * F[2] / d - (n - 1.0) * F[1] / d ** 2
    p = 4.0 - n
    bracket = (d ** p * dlapU
               - p * d ** (p - 1) * lapU
               + 2.0 * p * d ** (p - 2) * F[1]
               - 2.0 * p * (p - 2) * d ** (p - 3) * F[0])
    return -sphere_area(n - 1) * d ** (n - 1) * bracket


def mci_telescoping(chart_g, n: int, delta: float, delta_t: float,
                    npts: int = 64) -> dict:
    """Check I(delta) - I(delta_t) = -int_{annulus} |x|^{4-n} Lap^2 U dx."""
    from scipy.special import roots_legendre
    x, w = roots_legendre(npts)
    r = 0.5 * (delta + delta_t) + 0.5 * (delta - delta_t) * x
    w = 0.5 * (delta - delta_t) * w
    F = chart_g.derivs(r, order=4)
    lap2 = (F[4] + 2.0 * (n - 1.0) * F[3] / r
            + (n - 1.0) * (n - 3.0) * F[2] / r ** 2
            - (n - 1.0) * (n - 3.0) * F[1] / r ** 3)
    vol = -sphere_area(n - 1) * float(np.sum(w * r ** 3 * lap2))
    lhs = mci_integral(chart_g, n, delta) - mci_integral(chart_g, n, delta_t)
    scale = max(abs(lhs), abs(vol),
                sphere_area(n - 1) * float(np.sum(w * r ** 3 * np.abs(lap2))),
                1e-300)
    return {"boundary_difference": lhs, "volume_integral": vol,
            "mismatch": abs(lhs - vol), "scale": scale,
            "relative": abs(lhs - vol) / scale}


def q_mass(chart_g, n: int, radii=(4.0, 8.0, 16.0, 32.0)) -> dict:
    """Fourth-order mass of U^{4/(n-4)} g_e in the inverted chart.

    Phi(s) = U(1/s)^{4/(n-4)} s^{-4} is the conformal factor of the
    asymptotically flat end; m(r) = (n-1) omega_{n-1} r^{n-1} (Lap Phi)'(r)
    is extrapolated along the doubling ladder with two rate-estimated
    Richardson stages.
    """
    vals = []
    for r in radii:
        s = float(r)
        rho = 1.0 / s
        U = chart_g.derivs(np.array([rho]), order=3)
        U = [float(u[0]) for u in U]
        Up = _power_chain(U, 4.0 / (n - 4.0), order=3)
        quart = [rho ** 4, 4.0 * rho ** 3, 12.0 * rho ** 2, 24.0 * rho]
        phi_rho = _leibniz(Up, quart, order=3)
        # chain through rho = 1/s
        r1, r2, r3 = -s ** -2, 2.0 * s ** -3, -6.0 * s ** -4
        P1 = phi_rho[1] * r1
        P2 = phi_rho[2] * r1 ** 2 + phi_rho[1] * r2
        P3 = (phi_rho[3] * r1 ** 3 + 3.0 * phi_rho[2] * r1 * r2
              + phi_rho[1] * r3)
        dlap = P3 + (n - 1.0) * P2 / s - (n - 1.0) * P1 / s ** 2
        vals.append((n - 1.0) * sphere_area(n - 1) * s ** (n - 1) * dlap)
    vals = np.asarray(vals)
    ladder = [vals]
    rates = []
    for _ in range(2):
        cur = ladder[-1]
        if len(cur) < 3:
            break
        diff = np.diff(cur)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(diff[:-1] / diff[1:])
        good = ratio[np.isfinite(ratio) & (ratio > 1.0)]
        if len(good) == 0:
            break
        q = float(np.median(good))
        rates.append(math.log2(q))
        ladder.append(cur[1:] + np.diff(cur) / (q - 1.0))
    return {"radii": list(radii), "values": vals.tolist(),
            "mass": float(ladder[-1][-1]), "rates": rates}


def boundary_integrals(chart_g, n: int, delta: float,
                       radii=(4.0, 8.0, 16.0, 32.0)) -> dict:
    """I(p, delta), the extrapolated mass, and their ratio (when defined).

    For the model profile |x|^{4-n} + A the ratio is 4(n-1)/(n-4) exactly.
    """
    mci = mci_integral(chart_g, n, delta)
    mass = q_mass(chart_g, n, radii)
    ratio = mass["mass"] / mci if abs(mci) > 1e-12 * (1.0 + abs(mass["mass"])) \
        else None
    return {"mci": mci, "mass": mass["mass"], "mass_ladder": mass,
            "ratio": ratio, "ratio_expected": 4.0 * (n - 1.0) / (n - 4.0)}


# ---------------------------------------------------------------------------
# assembled test bubbles and Paneitz-Sobolev quotients
# ---------------------------------------------------------------------------

@dataclass
class TestBubble:
    """Glued bubble/Green's-function test field in the stereographic chart.

    regime "low_dim" (5 <= n <= 7):
        v = pref eps^{(n-4)/2} [chi (eps^2+r^2)^{-(n-4)/2} + (1-chi) U(r)]
    regime "high_dim" (n >= 8):
        v = chi (u_eps + w) + (1-chi) eps^{(n-4)/2} U(r)
    where chi = chi(r/delta), U is the chart Green's profile, pref =
    (c(n)/mu_inf)^{(n-4)/8}, and w is an optional corrector (points -> R).
    """

    n: int
    eps: float
    delta: float
    regime: str
    chart_g: object
    prefac: float = 1.0
    w: object = None

    def eval_radial(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        n, eps = self.n, self.eps
        q = (n - 4.0) / 2.0
        chi = cutoff_chi(r / self.delta)
        # the Green's profile diverges at r = 0; only evaluate it where
        # the cutoff actually samples it
        U = np.zeros_like(r)
        far = chi < 1.0
        U[far] = self.chart_g.value(r[far])
        if self.regime == "low_dim":
            core = (eps ** 2 + r * r) ** (-q)
            return self.prefac * eps ** q * (chi * core + (1.0 - chi) * U)
        core = (eps / (eps ** 2 + r * r)) ** q
        return chi * core + (1.0 - chi) * eps ** q * U

    def eval_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        r = np.sqrt(np.sum(pts * pts, axis=-1))
        out = self.eval_radial(r)
        if self.regime == "high_dim" and self.w is not None:
            out = out + cutoff_chi(r / self.delta) * self.w(pts)
        return out

    def rescaled_deviation(self, xmax: float = 5.0, npts: int = 201) -> float:
        """sup over |x| <= xmax of the rescaled-profile mismatch
        |eps^{(n-4)/2} v(eps x)/pref - (1+|x|^2)^{-(n-4)/2}|."""
        n, eps = self.n, self.eps
        q = (n - 4.0) / 2.0
        x = np.linspace(0.0, xmax, npts)
        if self.regime == "high_dim" and self.w is not None:
            pts = np.zeros((npts, n))
            pts[:, 0] = eps * x
            v = self.eval_points(pts)
        else:
            v = self.eval_radial(eps * x)
        pref = self.prefac if self.regime == "low_dim" else 1.0
        model = (1.0 + x * x) ** (-q)
        return float(np.max(np.abs(eps ** q * v / pref - model)))


def assemble_test_bubble(n: int, eps: float, delta: float, chart_g,
                         mu_inf: float | None = None,
                         w=None) -> TestBubble:
    """Build the glued test field for the appropriate dimensional regime."""
    if n < 5:
        raise ValueError("test bubbles require n >= 5")
    if not (0.0 < 2.0 * eps <= delta <= DELTA0):
        raise ValueError("parameters must satisfy 0 < 2 eps <= delta <= "
                         f"{DELTA0}")
    if n <= 7:
        mu = bubble_constant(n) if mu_inf is None else float(mu_inf)
        pref = (bubble_constant(n) / mu) ** ((n - 4.0) / 8.0)
        return TestBubble(n, eps, delta, "low_dim", chart_g, prefac=pref)
    return TestBubble(n, eps, delta, "high_dim", chart_g, w=w)


def bubble_on_sphere(n: int, eps: float):
    """The bubble transplanted to S^n as a conformal factor against g_S:

    v(theta) = (eps / (eps^2 cos^2(theta/2) + 4 sin^2(theta/2)))^{(n-4)/2},
    whose Paneitz-Sobolev quotient equals Y4(S^n) exactly.
    """
    q = (n - 4.0) / 2.0

    def v(theta):
        theta = np.asarray(theta, dtype=float)
        c2 = np.cos(0.5 * theta) ** 2
        s2 = np.sin(0.5 * theta) ** 2
        return (eps / (eps * eps * c2 + 4.0 * s2)) ** q

    return v


def ps_quotient(op, values: np.ndarray) -> dict:
    """Paneitz-Sobolev quotient F = int u P u / (int |u|^{2n/(n-4)})^{(n-4)/n}
    of zonal node values under a ZonalOperator; 0-homogeneous in u."""
    c = op.to_coeffs(np.asarray(values, dtype=float))
    E = float(np.sum(op.lam * c * c))
    V = op.volume(c)
    return {"energy": E, "volume": V,
            "quotient": E / V ** ((op.n - 4.0) / op.n)}
