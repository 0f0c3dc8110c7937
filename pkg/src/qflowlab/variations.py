r"""First and second variations of curvature functionals, with FD oracles.

Identity side and oracle side are kept strictly independent:

* the identity side evaluates closed-form expressions (linearizations,
  Lichnerowicz terms, boundary fluxes) through exact jets of rational fields
  at quadrature nodes — no spatial discretization error;
* the oracle side differences the *nonlinear* functional t -> F(g + t h)
  through the same jet pipeline, so the only error is the t-step.

Implemented checks (g Einstein with Ric = lambda g where stated):

  DR[h]   = div^2 h - Lap(tr h) - <h, Ric>                      (any g, h)
  DQ[h]   = alpha_n (Lap + c(n) lambda) DR[h],  c(n) = -(n^2-4)/(2(n-1))
  DRic[h] = -(1/2) Lich h                                       (TT h)
  int_U D^2Q[h,h] dv  =  ((n^2-4)/(4(n-1)^2)) lambda *
        int_U [ -|grad h|^2/2 + lambda |h|^2 + Rm_iklj h^kl h^ij ]
      - (1/(n-2)^2) int_U |Lich h + 2 lambda h|^2  + BT          (TT h)
  int_U DQ[Lg] dv = 0                                            (Lg = Lie_X g)
  int_U D^2Q[Lg, Lg] dv = 4(n^2-4) int_U [-2 (div X)^2 + |Lg|^2] + BT
  int_U D^2Q[Lg, h] dv = 0                                       (TT h)
  DW[Lg] = 0 on conformally flat backgrounds
  |nabla^K h|^2 / 2 = |grad h|^2 + c n |h|^2 + BT                (TT h, const c)
  |A[h]|^2 / 2 = |Lap h|^2 + 3c |grad h|^2 - c^2 n (n-3) |h|^2 + BT
  |DW[h]|^2 = ((n-3)/(n-2)) (|Lap h|^2 + c(n+2)|grad h|^2
                             + 2 c^2 n |h|^2) + BT

with nabla^K h_{ijk} = h_{ij;k} - h_{kj;i} and A[h]_{ijkl} = h_{ij;kl} -
h_{kj;il}.  The BT are explicit boundary fluxes obtained by integrating the
interior identities by parts; they vanish for h with two vanishing boundary
jets.  The linearized flat Paneitz operator dp_flat is exact symbolic
rational-field algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .charts import ConformalChart, ball_quadrature, shell_quadrature
from .jets import (Jet, cov_deriv_jet, curvature_jets, jet_einsum,
                   jet_from_rational, jet_partial)
from .rational import RationalField

__all__ = [
    "VariationReport", "DomainWithBoundary", "fd_oracle", "fd_step",
    "linearize_curvature", "second_variation_tt", "lie_direction_first",
    "lie_direction_second", "lie_direction_mixed", "dw_vanishes_lie",
    "koiso_check", "dw_identity_check", "dp_flat", "lie_metric_fields",
    "lie2_metric_fields", "div_x_field", "tt_quality", "weyl_constant_tensor",
    "flat_tt_compact", "einstein_lambda", "background_jets",
]

_EPS = np.finfo(float).eps


@dataclass
class VariationReport:
    identity: str
    lhs: float
    rhs: float
    residual: float
    scale: float
    tol: float
    passed: bool
    details: dict = field(default_factory=dict)

    @property
    def rel_residual(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual

    def to_dict(self) -> dict:
        return {
            "identity": self.identity, "lhs": self.lhs, "rhs": self.rhs,
            "residual": self.residual, "scale": self.scale,
            "rel_residual": self.rel_residual, "tol": self.tol,
            "passed": bool(self.passed), "details": self.details,
        }


def _report(name, lhs, rhs, scale_terms, tol, details=None) -> VariationReport:
    resid = abs(lhs - rhs)
    scale = max([abs(s) for s in scale_terms] + [1e-30])
    return VariationReport(name, lhs, rhs, resid, scale, tol,
                           resid <= tol * scale, details or {})


@dataclass
class DomainWithBoundary:
    """A coordinate ball in a conformal chart, with product Gauss rules."""

    chart: ConformalChart
    r0: float
    nr: int = 10
    deg: int = 6

    def __post_init__(self):
        n = self.chart.n
        self.ipts, self.iwflat = ball_quadrature(n, self.r0, self.nr, self.deg)
        self.bpts, self.bwflat, self.bxhat = \
            shell_quadrature(n, self.r0, self.deg)
        self.ie2 = self.chart.e2phi.eval(self.ipts)
        self.be2 = self.chart.e2phi.eval(self.bpts)
        # metric volume/surface measures, unit outward normal up/down
        self.idv = self.iwflat * self.ie2 ** (n / 2.0)
        self.bds = self.bwflat * self.be2 ** ((n - 1) / 2.0)
        ephi = np.sqrt(self.be2)
        self.nhat_up = self.bxhat / ephi[:, None]
        self.nhat_low = self.bxhat * ephi[:, None]


def _chunks(m: int, size: int = 256):
    for lo in range(0, m, size):
        yield slice(lo, min(lo + size, m))


def _as_fields(n: int, h) -> np.ndarray:
    h = np.asarray(h, dtype=object)
    if h.shape != (n, n):
        raise ValueError("perturbation must be an (n, n) object array")
    return h


# ---------------------------------------------------------------------------
# jet-side building blocks
# ---------------------------------------------------------------------------

def _lap_jet(f: Jet, ginv: Jet, gamma: Jet, order: int) -> Jet:
    """Laplace-Beltrami of a scalar jet (costs two orders)."""
    grad = jet_partial(f)
    hess = jet_partial(grad)
    nabla2 = hess - jet_einsum("kab,k->ab", gamma, grad, order=order)
    return jet_einsum("ab,ab->", ginv, nabla2, order=order)


def _norm2_values(T: np.ndarray, gi0: np.ndarray, rank: int) -> np.ndarray:
    """|T|_g^2 values for an all-lower tensor value array (m,) + (n,)*rank."""
    lo = "ijklab"[:rank]
    up = "IJKLAB"[:rank]
    expr = ",".join(f"z{a}{b}" for a, b in zip(lo, up))
    return np.einsum(f"{expr},z{lo},z{up}->z", *([gi0] * rank), T, T,
                 optimize=True)


def _ndot(grad_vals: np.ndarray, nhat_up: np.ndarray) -> np.ndarray:
    """Normal derivative of a scalar from its coordinate gradient values."""
    return np.einsum("za,za->z", grad_vals, nhat_up)


def _diag_jet(scalar: Jet, n: int) -> Jet:
    """Jet of f * identity from a scalar jet f."""
    data = []
    for p, arr in enumerate(scalar.data):
        m = arr.shape[0]
        out = np.zeros((m, n, n) + (n,) * p)
        for i in range(n):
            out[:, i, i] = arr
        data.append(out)
    return Jet(n, (n, n), data)


def background_jets(chart: ConformalChart, pts: np.ndarray,
                    g_order: int, r_order: int) -> dict:
    """curvature_jets of the chart metric, via closed forms when possible.

    For constant-curvature conformal charts all background curvature is
    known exactly (Ric = c (n-1) g, R = c n (n-1), W = 0, Rm from the metric
    wedge), so only scalar jets of the conformal factor and Christoffel jets
    assembled from dphi are evaluated.  Falls back to the generic pipeline
    for charts without a recorded constant curvature.
    """
    if chart.curvature is None:
        return curvature_jets(chart.metric_jet(pts, g_order), r_order=r_order)
    n, c = chart.n, chart.curvature
    m = len(pts)
    e2 = jet_from_rational(np.asarray([chart.e2phi], dtype=object),
                           pts, g_order)
    e2 = Jet(n, (), [a[:, 0] for a in e2.data])
    em2 = jet_from_rational(np.asarray([chart.em2phi], dtype=object),
                            pts, g_order)
    em2 = Jet(n, (), [a[:, 0] for a in em2.data])
    gjet = _diag_jet(e2, n)
    ginv = _diag_jet(em2, n)

    dphi = jet_from_rational(np.asarray(chart.dphi, dtype=object),
                             pts, g_order - 1)
    gam_data = []
    for p, arr in enumerate(dphi.data):    # (m, n) + (n,)*p, comp = (j,)
        out = np.zeros((m, n, n, n) + (n,) * p)
        for i in range(n):
            for j in range(n):
                out[:, i, i, j] += arr[:, j]     # G^k_{ij}: delta_ik dphi_j
                out[:, i, j, i] += arr[:, j]     # delta_jk dphi_i
                out[:, j, i, i] -= arr[:, j]     # -delta_ij dphi_k
        gam_data.append(out)
    gam = Jet(n, (n, n, n), gam_data)

    P = min(r_order, g_order)
    ric = (c * (n - 1.0)) * gjet.truncate(P)
    rdata = [np.full(m, c * n * (n - 1.0))]
    for p in range(1, P + 1):
        rdata.append(np.zeros((m,) + (n,) * p))
    R = Jet(n, (), rdata)
    g0 = gjet.data[0]
    rm0 = c * (np.einsum("zil,zjk->zijkl", g0, g0)
               - np.einsum("zik,zjl->zijkl", g0, g0))
    out = {"ginv": ginv, "Gamma": gam, "Rm": Jet(n, (n, n, n, n), [rm0]),
           "Ric": ric, "R": R, "sqrtdet": e2.data[0] ** (n / 2.0),
           "A": 0.5 * c * g0, "W": np.zeros_like(rm0)}
    if r_order >= 2:
        beta = -2.0 / (n - 2) ** 2
        gmm = (n ** 3 - 4 * n ** 2 + 16 * n - 16) \
            / (8.0 * (n - 2) ** 2 * (n - 1) ** 2)
        qc = (beta * n + gmm * n * n) * (c * (n - 1.0)) ** 2
        out["lapR"] = np.zeros(m)
        out["Q"] = np.full(m, qc)
    return out


class _HGeometry:
    """Jet data for (g, h) at a batch of points."""

    def __init__(self, chart: ConformalChart, hfields, pts: np.ndarray,
                 g_order: int = 4, h_order: int = 3, r_order: int = 2):
        self.n = chart.n
        self.pts = pts
        self.cur = background_jets(chart, pts, g_order, r_order)
        self.gi = self.cur["ginv"]
        self.gam = self.cur["Gamma"]
        self.hjet = jet_from_rational(hfields, pts, h_order)
        self._nab = None
        self._nab2 = None

    @property
    def nab(self) -> Jet:
        """nabla h as a jet, components (i, j, a) = h_{ij;a}."""
        if self._nab is None:
            self._nab = cov_deriv_jet(self.hjet, self.gam)
        return self._nab

    @property
    def nab2(self) -> Jet:
        """nabla^2 h as a jet, components (i, j, a, b) = h_{ij;ab}."""
        if self._nab2 is None:
            self._nab2 = cov_deriv_jet(self.nab, self.gam)
        return self._nab2

    def gi0(self):
        return self.gi.data[0]

    def h0(self):
        return self.hjet.data[0]

    def hup0(self):
        """h with both indices raised, values."""
        return np.einsum("zik,zjl,zkl->zij", self.gi0(), self.gi0(),
                         self.h0(), optimize=True)

    def lap_h(self) -> np.ndarray:
        return np.einsum("zab,zijab->zij", self.gi0(), self.nab2.data[0])

    def lichnerowicz(self) -> np.ndarray:
        """(Lich h)_{ij} = Lap h + 2 Rm_iklj h^kl - Ric x h - h x Ric."""
        gi0, h0 = self.gi0(), self.h0()
        rm0 = self.cur["Rm"].data[0]
        ric0 = self.cur["Ric"].data[0]
        rm_term = np.einsum("ziklj,zkl->zij", rm0, self.hup0())
        rxh = np.einsum("zil,zlm,zmj->zij", ric0, gi0, h0, optimize=True)
        hxr = np.einsum("zil,zlm,zmj->zij", h0, gi0, ric0, optimize=True)
        return self.lap_h() + 2.0 * rm_term - rxh - hxr

    def hxh_jet(self, order: int) -> Jet:
        """(h x h)_{ij} = h_{ik} g^{kl} h_{lj} as a jet."""
        hup = jet_einsum("kl,lj->kj", self.gi, self.hjet, order=order)
        return jet_einsum("ik,kj->ij", self.hjet, hup, order=order)

    def h2_jet(self, order: int) -> Jet:
        """|h|^2 as a scalar jet."""
        hupup = jet_einsum("ik,kj->ij",
                           self.gi,
                           jet_einsum("jl,il->ij", self.gi, self.hjet,
                                      order=order),
                           order=order)
        return jet_einsum("ij,ij->", hupup, self.hjet, order=order)

    def div2_jet(self, T: Jet, order: int) -> Jet:
        """div^2 of a symmetric 2-tensor jet: g^{ia} g^{jb} (nabla^2 T)_ijab."""
        n2 = cov_deriv_jet(cov_deriv_jet(T.truncate(order + 2), self.gam),
                           self.gam)
        t = jet_einsum("ia,ijab->jb", self.gi, n2, order=order)
        return jet_einsum("jb,jb->", self.gi, t, order=order)

    def dr_jet(self, order: int = 0) -> Jet:
        """DR[h] = div^2 h - Lap(tr h) - <h, Ric> as a jet."""
        div2 = self.div2_jet(self.hjet, order)
        trh = jet_einsum("ij,ij->", self.gi, self.hjet,
                         order=min(self.hjet.order, self.gi.order))
        lap_tr = _lap_jet(trh, self.gi, self.gam, order=order)
        hup = jet_einsum("ik,kj->ij",
                         self.gi,
                         jet_einsum("jl,il->ij", self.gi, self.hjet,
                                    order=order),
                         order=order)
        inner = jet_einsum("ij,ij->", hup, self.cur["Ric"], order=order)
        return div2 - lap_tr - inner


def geometry_batches(chart, hfields, pts, batch: int = 256, **kw):
    for sl in _chunks(len(pts), batch):
        yield sl, _HGeometry(chart, hfields, pts[sl], **kw)


# ---------------------------------------------------------------------------
# oracle side
# ---------------------------------------------------------------------------

_QUANTITIES = ("scalar_curvature_point", "ricci_point",
               "q_integral", "weyl_integral")


class _FunctionalEvaluator:
    """F(g + sum_k t_k h_k); FD stencils share one chunked jet sweep.

    Jets are rebuilt per chunk (never stored for the whole domain) so memory
    stays O(batch); all stencil offsets reuse the same chunk jets.
    """

    def __init__(self, chart: ConformalChart, hfields_list, quantity: str,
                 domain: DomainWithBoundary | None = None,
                 point: np.ndarray | None = None, batch: int = 256):
        if quantity not in _QUANTITIES:
            raise ValueError(f"unknown quantity {quantity!r}; "
                             f"choose from {_QUANTITIES}")
        self.chart = chart
        self.quantity = quantity
        self.n = chart.n
        self.batch = batch
        self.point_based = quantity.endswith("_point")
        self.g_order = 4 if quantity == "q_integral" else 2
        self.r_order = 2 if quantity == "q_integral" else 0
        self.hfields_list = [_as_fields(self.n, h) for h in hfields_list]
        if self.point_based:
            self.point = np.asarray(point, dtype=float).reshape(1, self.n)
            self.domain = None
        else:
            if domain is None:
                raise ValueError("integral quantities need a domain")
            self.domain = domain

    def stencil(self, tuples):
        """Evaluate F at every coefficient tuple in one pass over the domain."""
        results = [None] * len(tuples)
        if self.point_based:
            chunks = [(None, self.point)]
        else:
            chunks = ((sl, self.domain.ipts[sl])
                      for sl in _chunks(len(self.domain.ipts), self.batch))
        for sl, pts in chunks:
            gjet = self.chart.metric_jet(pts, self.g_order)
            hjets = [jet_from_rational(h, pts, self.g_order)
                     for h in self.hfields_list]
            for idx, t in enumerate(tuples):
                pert = gjet
                for tk, hj in zip(t, hjets):
                    if tk != 0.0:
                        pert = pert + tk * hj
                cur = curvature_jets(pert, r_order=self.r_order)
                if self.quantity == "scalar_curvature_point":
                    results[idx] = float(cur["R"].data[0][0])
                    continue
                if self.quantity == "ricci_point":
                    results[idx] = cur["Ric"].data[0][0]
                    continue
                if self.quantity == "q_integral":
                    vals = cur["Q"]
                else:
                    vals = _norm2_values(cur["W"], cur["ginv"].data[0], 4)
                part = float(np.sum(vals * cur["sqrtdet"]
                                    * self.domain.iwflat[sl]))
                results[idx] = part if results[idx] is None \
                    else results[idx] + part
        return results

    def __call__(self, *t):
        return self.stencil([t])[0]


def fd_step(order: int, scale: float = 1.0) -> float:
    """Central-difference step: eps^(1/3) scale for first derivatives,
    eps^(1/4) scale for second, floored at 1e-4, clamped to [1e-6, 1e-1]."""
    t = max(1e-4, (_EPS ** (1.0 / 3.0) if order == 1 else _EPS ** 0.25)
            * scale)
    return float(np.clip(t, 1e-6, 1e-1))


def fd_oracle(chart: ConformalChart, hfields, quantity: str, order: int = 1,
              domain: DomainWithBoundary | None = None,
              point: np.ndarray | None = None, step: float | None = None):
    """Central finite difference in t of F(g + t h).

    order=1: (F(t) - F(-t)) / 2t;  order=2: (F(t) - 2F(0) + F(-t)) / t^2.
    Returns (derivative, step).
    """
    if point is None and quantity.endswith("_point"):
        point = np.full(chart.n, 0.05 * (domain.r0 if domain else 1.0))
    F = _FunctionalEvaluator(chart, [hfields], quantity, domain, point)
    t = fd_step(order, 1.0) if step is None else step
    if order == 1:
        fp, fm = F.stencil([(+t,), (-t,)])
        return (fp - fm) / (2.0 * t), t
    fp, f0, fm = F.stencil([(+t,), (0.0,), (-t,)])
    return (fp - 2.0 * f0 + fm) / (t * t), t


# ---------------------------------------------------------------------------
# Lie derivative perturbations, symbolically
# ---------------------------------------------------------------------------

def _christoffel_rational(chart: ConformalChart) -> np.ndarray:
    """Gamma^k_{ij} = delta_ik dphi_j + delta_jk dphi_i - delta_ij dphi_k."""
    n = chart.n
    zero = RationalField(n, chart.e2phi.eps2)
    gam = np.empty((n, n, n), dtype=object)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                t = zero
                if i == k:
                    t = t + chart.dphi[j]
                if j == k:
                    t = t + chart.dphi[i]
                if i == j:
                    t = t - chart.dphi[k]
                gam[k, i, j] = t
    return gam


def _nabla_lower(chart, Tfields, gam=None) -> np.ndarray:
    """(nabla T)_{comp, a} for an all-lower rational tensor (appends axis)."""
    n = chart.n
    if gam is None:
        gam = _christoffel_rational(chart)
    T = np.asarray(Tfields, dtype=object)
    k = T.ndim
    out = np.empty(T.shape + (n,), dtype=object)
    for idx in np.ndindex(*T.shape):
        for a in range(n):
            t = T[idx].partial(a)
            for s in range(k):
                for l in range(n):
                    jdx = list(idx)
                    jdx[s] = l
                    t = t - gam[l, a, idx[s]] * T[tuple(jdx)]
            out[idx + (a,)] = t.prune()
    return out


def lie_metric_fields(chart: ConformalChart, X) -> np.ndarray:
    """(Lie_X g)_{ij} = nabla_i X_j + nabla_j X_i for rational X^i (up)."""
    n = chart.n
    Xl = np.array([chart.e2phi * X[i] for i in range(n)], dtype=object)
    nab = _nabla_lower(chart, Xl)                 # (j, a) = nabla_a X_j
    lie = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(i, n):
            lie[i, j] = nab[j, i] + nab[i, j]
            lie[j, i] = lie[i, j]
    return lie


def div_x_field(chart: ConformalChart, X) -> RationalField:
    """div X = d_i X^i + n dphi_l X^l on a conformal chart."""
    n = chart.n
    out = RationalField(n, chart.e2phi.eps2)
    for i in range(n):
        out = out + X[i].partial(i) + float(n) * (chart.dphi[i] * X[i])
    return out


def lie2_metric_fields(chart: ConformalChart, X) -> np.ndarray:
    """(Lie_X^2 g)_{ij} = X^k nabla_k (Lg)_{ij} + nabla_i X^k (Lg)_{kj}
    + nabla_j X^k (Lg)_{ik}."""
    n = chart.n
    gam = _christoffel_rational(chart)
    lie = lie_metric_fields(chart, X)
    nab_lie = _nabla_lower(chart, lie, gam)       # (i, j, a)
    nabXup = np.empty((n, n), dtype=object)       # (i, k) = nabla_i X^k
    for i in range(n):
        for k in range(n):
            t = X[k].partial(i)
            for l in range(n):
                t = t + gam[k, i, l] * X[l]
            nabXup[i, k] = t.prune()
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(i, n):
            t = RationalField(n, chart.e2phi.eps2)
            for k in range(n):
                t = t + X[k] * nab_lie[i, j, k]
                t = t + nabXup[i, k] * lie[k, j]
                t = t + nabXup[j, k] * lie[i, k]
            out[i, j] = t.prune()
            out[j, i] = out[i, j]
    return out


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

def tt_quality(chart: ConformalChart, hfields, pts: np.ndarray):
    """(max |tr_g h|, max |div_g h|, max |h|) at sample points."""
    geo = _HGeometry(chart, _as_fields(chart.n, hfields), pts,
                     g_order=2, h_order=1, r_order=0)
    gi0, h0 = geo.gi0(), geo.h0()
    tr = np.einsum("zij,zij->z", gi0, h0)
    div = np.einsum("zja,zija->zi", gi0, geo.nab.data[0])
    return (float(np.max(np.abs(tr))), float(np.max(np.abs(div))),
            float(np.max(np.abs(h0))))


def einstein_lambda(domain: DomainWithBoundary, batch: int = 512) -> float:
    """lambda with Ric = lambda g, as the volume average of R/n over U."""
    n = domain.chart.n
    num = den = 0.0
    for sl in _chunks(len(domain.ipts), batch):
        cur = curvature_jets(domain.chart.metric_jet(domain.ipts[sl], 2),
                             r_order=0)
        num += float(np.sum(cur["R"].data[0] * domain.idv[sl]))
        den += float(np.sum(domain.idv[sl]))
    return num / (n * den)


def linearize_curvature(domain: DomainWithBoundary, hfields,
                        tol: float = 1e-4, tt: bool = False) -> dict:
    """DR (any h), DQ (Einstein g), DRic (TT h) against their FD oracles."""
    chart = domain.chart
    n = chart.n
    hfields = _as_fields(n, hfields)
    lam = einstein_lambda(domain)
    alpha = -1.0 / (2.0 * (n - 1))
    cn = -(n * n - 4.0) / (2.0 * (n - 1))
    out = {}

    point = np.full(n, 0.11 * domain.r0)
    geo = _HGeometry(chart, hfields, point.reshape(1, n),
                     g_order=4, h_order=2, r_order=1)
    dr = float(geo.dr_jet(order=0).data[0][0])
    oracle, step = fd_oracle(chart, hfields, "scalar_curvature_point",
                             order=1, domain=domain, point=point)
    out["DR"] = _report("scalar-curvature-linearization", dr, oracle,
                        [dr, oracle], tol, {"step": step})

    # DQ integrated over U; the oracle differentiates int Q dv, so the
    # volume-density contribution (1/2) int Q tr h dv is subtracted.
    lhs = qtr = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.ipts,
                                    g_order=5, h_order=4, r_order=2):
        drj = geo.dr_jet(order=2)
        lap_dr = _lap_jet(drj, geo.gi, geo.gam, order=0).data[0]
        dq = alpha * (lap_dr + cn * lam * drj.data[0])
        lhs += float(np.sum(dq * domain.idv[sl]))
        trh = np.einsum("zij,zij->z", geo.gi0(), geo.h0())
        qtr += float(np.sum(geo.cur["Q"] * trh * domain.idv[sl]))
    oracle, step = fd_oracle(chart, hfields, "q_integral", order=1,
                             domain=domain)
    rhs = oracle - 0.5 * qtr
    out["DQ"] = _report("q-curvature-linearization-einstein", lhs, rhs,
                        [lhs, rhs, oracle], tol, {"step": step, "lambda": lam})

    if tt:
        geo = _HGeometry(chart, hfields, point.reshape(1, n),
                         g_order=4, h_order=2, r_order=0)
        dric = -0.5 * geo.lichnerowicz()[0]
        oracle, step = fd_oracle(chart, hfields, "ricci_point",
                                 order=1, domain=domain, point=point)
        resid = float(np.max(np.abs(dric - oracle)))
        scale = max(float(np.max(np.abs(dric))),
                    float(np.max(np.abs(oracle))), 1e-30)
        out["DRic"] = VariationReport(
            "ricci-linearization-tt", float(np.max(np.abs(dric))),
            float(np.max(np.abs(oracle))), resid, scale, tol,
            resid <= tol * scale, {"step": step})
    return out


def _d2r_tt_jet(geo: _HGeometry, lam: float, order: int) -> Jet:
    """D^2R[h,h] = -2 div^2(hxh) + Lap|h|^2 + 2 lam |h|^2
    - |grad h|^2 / 2 + nabla_i h_jk nabla^j h^ik, as a jet (TT h)."""
    gi = geo.gi
    div2_hxh = geo.div2_jet(geo.hxh_jet(order + 2), order)
    h2 = geo.h2_jet(order + 2)
    lap_h2 = _lap_jet(h2, gi, geo.gam, order=order)
    nh = geo.nab                                   # (i, j, a)
    u1 = jet_einsum("ip,pja->ija", gi, nh, order=order + 1)
    u2 = jet_einsum("jq,iqa->ija", gi, u1, order=order + 1)
    u3 = jet_einsum("ab,ijb->ija", gi, u2, order=order + 1)  # all raised
    grad_h_sq = jet_einsum("ija,ija->", nh, u3, order=order + 1)
    # nabla_i h_jk nabla^j h^ik: first factor nab comp (j,k,i), second u3
    # with comp (i,k,j) (value nabla^j h^ik with the raised derivative slot j)
    crossed = jet_einsum("jki,ikj->", nh, u3, order=order + 1)
    return (-2.0) * div2_hxh + lap_h2 + (2.0 * lam) * h2.truncate(order) \
        + (-0.5) * grad_h_sq.truncate(order) + crossed.truncate(order)


def second_variation_tt(domain: DomainWithBoundary, hfields,
                        tol: float = 1e-4) -> VariationReport:
    """Integrated TT second-variation identity, oracle vs closed form."""
    chart = domain.chart
    n = chart.n
    hfields = _as_fields(n, hfields)
    lam = einstein_lambda(domain)
    coef = (n * n - 4.0) / (4.0 * (n - 1) ** 2)

    interior = q_h2 = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.ipts,
                                    g_order=4, h_order=2, r_order=2):
        gi0, h0 = geo.gi0(), geo.h0()
        hup = geo.hup0()
        h2 = np.einsum("zij,zij->z", hup, h0)
        gh2 = _norm2_values(geo.nab.data[0], gi0, 3)
        rm_term = np.einsum("ziklj,zkl,zij->z", geo.cur["Rm"].data[0],
                            hup, hup, optimize=True)
        lich = geo.lichnerowicz() + 2.0 * lam * h0
        vals = coef * lam * (-0.5 * gh2 + lam * h2 + rm_term) \
            - _norm2_values(lich, gi0, 2) / (n - 2.0) ** 2
        interior += float(np.sum(vals * domain.idv[sl]))
        q_h2 += float(np.sum(geo.cur["Q"] * h2 * domain.idv[sl]))

    bt = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.bpts,
                                    g_order=5, h_order=4, r_order=2):
        nh_up = domain.nhat_up[sl]
        d2r = _d2r_tt_jet(geo, lam, order=1)
        term1 = -_ndot(d2r.data[1], nh_up) / (2.0 * (n - 1))
        dn_h2 = _ndot(geo.h2_jet(1).data[1], nh_up)
        nab_hxh = cov_deriv_jet(geo.hxh_jet(1), geo.gam)
        div_hxh = np.einsum("zja,zija->zi", geo.gi0(), nab_hxh.data[0])
        term2 = coef * lam * (dn_h2 - np.einsum("zi,zi->z", div_hxh, nh_up))
        bt += float(np.sum((term1 + term2) * domain.bds[sl]))

    rhs = interior + bt
    oracle, step = fd_oracle(chart, hfields, "q_integral", order=2,
                             domain=domain)
    lhs = oracle + 0.5 * q_h2      # strip D^2(dv) = -(1/2)|h|^2 dv for TT
    return _report("second-variation-tt", lhs, rhs,
                   [lhs, interior, bt], tol,
                   {"interior": interior, "boundary": bt, "lambda": lam,
                    "step": step})


def lie_direction_first(domain: DomainWithBoundary, X,
                        tol: float = 1e-4) -> VariationReport:
    """int_U DQ[Lie_X g] dv = 0 on Einstein backgrounds."""
    chart = domain.chart
    n = chart.n
    lie = lie_metric_fields(chart, X)
    lam = einstein_lambda(domain)
    alpha = -1.0 / (2.0 * (n - 1))
    cn = -(n * n - 4.0) / (2.0 * (n - 1))
    total = absq = scale = 0.0
    for sl, geo in geometry_batches(chart, lie, domain.ipts,
                                    g_order=5, h_order=4, r_order=2):
        drj = geo.dr_jet(order=2)
        lap_dr = _lap_jet(drj, geo.gi, geo.gam, order=0).data[0]
        dq = alpha * (lap_dr + cn * lam * drj.data[0])
        total += float(np.sum(dq * domain.idv[sl]))
        absq += float(np.sum(np.abs(dq) * domain.idv[sl]))
        # DR[Lg] already vanishes pointwise on the sphere, so scale against
        # the constituent terms of DR (which are individually large).
        trh = jet_einsum("ij,ij->", geo.gi, geo.hjet, order=2)
        lap_tr = _lap_jet(trh, geo.gi, geo.gam, order=0).data[0]
        ric_h = lam * trh.data[0]
        dens = abs(alpha) * (1.0 + abs(cn * lam)) \
            * (np.abs(lap_tr) + np.abs(ric_h))
        scale += float(np.sum(dens * domain.idv[sl]))
    return _report("first-variation-lie-direction", total, 0.0,
                   [scale], tol, {"lambda": lam, "abs_integral": absq})


def lie_direction_second(domain: DomainWithBoundary, X,
                         tol: float = 1e-4) -> VariationReport:
    """int_U D^2Q[Lg, Lg] dv = 4(n^2-4) int_U [-2 (div X)^2 + |Lg|^2] + BT."""
    chart = domain.chart
    n = chart.n
    lie = lie_metric_fields(chart, X)
    lie2 = lie2_metric_fields(chart, X)
    divX = div_x_field(chart, X)
    lam = einstein_lambda(domain)
    # the 4(n^2-4) and 8(n^2-4) coefficients assume Ric = 4(n-1) g
    if abs(lam - 4.0 * (n - 1)) > 1e-6 * (1.0 + abs(lam)):
        raise ValueError("lie_direction_second requires Ric = 4(n-1) g; "
                         f"measured Einstein constant {lam}")

    # interior term and the volume-density corrections for the oracle
    interior = corr = 0.0
    for sl, geo in geometry_batches(chart, lie, domain.ipts,
                                    g_order=2, h_order=1, r_order=0):
        gi0, h0 = geo.gi0(), geo.h0()
        lg2 = _norm2_values(h0, gi0, 2)
        dvx = divX.eval(geo.pts)
        interior += float(np.sum((-2.0 * dvx ** 2 + lg2) * domain.idv[sl]))
        trh = np.einsum("zij,zij->z", gi0, h0)
        cur = background_jets(chart, geo.pts, 4, 2)
        corr += float(np.sum(cur["Q"] * (0.25 * trh ** 2 - 0.5 * lg2)
                             * domain.idv[sl]))
    interior *= 4.0 * (n * n - 4.0)

    # boundary terms
    bt = 0.0
    for sl, geo2 in geometry_batches(chart, lie2, domain.bpts,
                                     g_order=5, h_order=3, r_order=1):
        nh_up = domain.nhat_up[sl]
        gi0 = geo2.gi0()
        trk = jet_einsum("ij,ij->", geo2.gi, geo2.hjet, order=1)
        t_a = _ndot(trk.data[1], nh_up)
        div_k = np.einsum("zja,zija->zi", gi0, geo2.nab.data[0])
        t_a -= np.einsum("zi,zi->z", div_k, nh_up)
        dr_k = geo2.dr_jet(order=1)
        t_b = _ndot(dr_k.data[1], nh_up)
        dvx = divX.eval(geo2.pts)
        xdotn = np.einsum("zi,zi->z",
                          np.stack([xi.eval(geo2.pts) for xi in X], axis=-1),
                          domain.nhat_low[sl])
        t_c = dvx * xdotn
        # Coefficient derived by integrating DQ[k] = alpha*(Lap + c*lam)DR[k]
        # by parts with lam = 4(n-1): the tr/div boundary term carries
        # (n^2-4)/(n-1), matching the 4(n^2-4) interior coefficient.
        vals = ((n * n - 4.0) / (n - 1)) * t_a \
            + t_b / (2.0 * (n - 1)) + 8.0 * (n * n - 4.0) * t_c
        bt += float(np.sum(vals * domain.bds[sl]))

    rhs = interior + bt
    oracle, step = fd_oracle(chart, lie, "q_integral", order=2, domain=domain)
    lhs = oracle - corr
    return _report("second-variation-lie-direction", lhs, rhs,
                   [lhs, interior, bt], tol,
                   {"interior": interior, "boundary": bt, "lambda": lam,
                    "step": step})


def lie_direction_mixed(domain: DomainWithBoundary, X, hfields,
                        tol: float = 1e-4) -> VariationReport:
    """int_U D^2Q[Lie_X g, h] dv = 0 for TT h on Einstein backgrounds.

    The mixed FD of int Q dv leaves the cross volume-density term
    -(1/2) int Q <Lg, h> dv (tr h = 0 and DQ vanishes pointwise for both
    directions on the sphere), which is added back before comparing to 0.
    The pass scale is the diagonal second variation of the Lie direction.
    """
    chart = domain.chart
    n = chart.n
    lie = lie_metric_fields(chart, X)
    hfields = _as_fields(n, hfields)

    F = _FunctionalEvaluator(chart, [lie, hfields], "q_integral",
                             domain=domain)
    t = fd_step(2, 1.0)
    fpp, fpm, fmp, fmm, fp0, f00, fm0 = F.stencil(
        [(t, t), (t, -t), (-t, t), (-t, -t), (t, 0.0), (0.0, 0.0), (-t, 0.0)])
    mixed = (fpp - fpm - fmp + fmm) / (4.0 * t * t)

    cross = 0.0
    for sl, geo in geometry_batches(chart, lie, domain.ipts,
                                    g_order=4, h_order=0, r_order=2):
        hj = jet_from_rational(hfields, geo.pts, 0)
        gi0 = geo.gi0()
        inner = np.einsum("zik,zjl,zij,zkl->z", gi0, gi0,
                          geo.h0(), hj.data[0], optimize=True)
        cross += float(np.sum(geo.cur["Q"] * inner * domain.idv[sl]))
    lhs = mixed + 0.5 * cross

    diag = (fp0 - 2.0 * f00 + fm0) / (t * t)
    return _report("mixed-second-variation-lie-tt", lhs, 0.0,
                   [diag], tol, {"mixed_fd": mixed, "cross_term": cross,
                                 "diag_scale": diag, "step": t})


def dw_vanishes_lie(chart: ConformalChart, X, pts: np.ndarray,
                    tol: float = 1e-8) -> VariationReport:
    """DW[Lie_X g] = 0 on conformally flat backgrounds.

    Richardson first derivative of W(g + t Lg) componentwise; the scale is
    the second t-derivative (which does not vanish)."""
    lie = lie_metric_fields(chart, X)
    gjet = chart.metric_jet(pts, 2)
    hjet = jet_from_rational(lie, pts, 2)
    t = fd_step(1, 1.0)

    def wvals(s):
        return curvature_jets(gjet + s * hjet, r_order=0)["W"]

    wp, wm, wp2, wm2, w0 = (wvals(t), wvals(-t), wvals(2 * t),
                            wvals(-2 * t), wvals(0.0))
    dw = (8.0 * (wp - wm) - (wp2 - wm2)) / (12.0 * t)
    d2w = (wp - 2.0 * w0 + wm) / (t * t)
    resid = float(np.max(np.abs(dw)))
    scale = max(float(np.max(np.abs(d2w))), 1e-30)
    return VariationReport("weyl-linearization-lie-conformally-flat",
                           resid, 0.0, resid, scale, tol,
                           resid <= tol * scale, {"step": t})


# -- Bochner-type identities for TT tensors on constant-curvature charts -----

def _flux_values(geo: _HGeometry, nhat_low: np.ndarray, nhat_up: np.ndarray,
                 c: float, which: str) -> np.ndarray:
    """Boundary flux density (per unit metric surface measure).

    which = "first":  -G . n,  G^k = h_{ij} grad^i h^{kj}
    which = "second": [F1 - F2 + F3 - F5 - c n F4 + c (n-3) G] . n
    which = "weyl":   second + [F6 - F7 - c n G + (2 c n/(n-2)) F4] . n

    with F1^l = h_{ij;k} grad^l grad^k h^{ij},  F2^l = (grad^l h_{ij}) Lap h^{ij},
    F3^l = (nabla_k h^l_j) Lap h^{kj},  F4^l = (1/2) grad^l |h|^2,
    F5^l = h_{ij;k} grad^l grad^i h^{kj},
    F6.n = h_{ab;cd} (grad^a h^{cd}) n^b,  F7.n = h_{ab;cd} (grad^c h^{ad}) n^b.
    """
    n = geo.n
    gi0, h0 = geo.gi0(), geo.h0()
    nab0 = geo.nab.data[0]                       # (i, j, a) = h_{ij;a}
    hup = geo.hup0()
    # nup[i, j, a] = grad^a h^{ij}
    nup = np.einsum("zip,zjq,zar,zpqr->zija", gi0, gi0, gi0, nab0,
                    optimize=True)

    G = np.einsum("zij,zkji->zk", h0, nup)       # h_{ij} grad^i h^{kj}
    Gn = np.einsum("zk,zk->z", G, nhat_low)
    if which == "first":
        return -Gn

    nab2_0 = geo.nab2.data[0]                    # (i, j, a, b) = h_{ij;ab}
    lap = np.einsum("zab,zijab->zij", gi0, nab2_0)
    lap_up = np.einsum("zip,zjq,zpq->zij", gi0, gi0, lap, optimize=True)
    f1 = np.einsum("zijk,zip,zjq,zkr,zla,zpqra->zl",
                   nab0, gi0, gi0, gi0, gi0, nab2_0, optimize=True)
    f2 = np.einsum("zla,zija,zij->zl", gi0, nab0, lap_up, optimize=True)
    f3 = np.einsum("zlp,zpjk,zkj->zl", gi0, nab0, lap_up, optimize=True)
    f4 = np.einsum("zij,zla,zija->zl", hup, gi0, nab0, optimize=True)
    f5 = np.einsum("zijk,zkp,zjq,zir,zla,zpqra->zl",
                   nab0, gi0, gi0, gi0, gi0, nab2_0, optimize=True)
    second = np.einsum("zl,zl->z", f1 - f2 + f3 - f5 - c * n * f4, nhat_low) \
        + c * (n - 3.0) * Gn
    if which == "second":
        return second

    f6n = np.einsum("zabcd,zcda,zb->z", nab2_0, nup, nhat_up, optimize=True)
    f7n = np.einsum("zabcd,zadc,zb->z", nab2_0, nup, nhat_up, optimize=True)
    f4n = np.einsum("zl,zl->z", f4, nhat_low)
    return second + f6n - f7n - c * n * Gn + (2.0 * c * n / (n - 2.0)) * f4n


def koiso_check(domain: DomainWithBoundary, hfields,
                tol: float = 1e-5) -> dict:
    """Bochner identities for nabla^K h and A[h], TT h, constant curvature c.

    first:   (1/2) |nabla^K h|^2 = |grad h|^2 + c n |h|^2 + BT
    second:  (1/2) |A[h]|^2 = |Lap h|^2 + 3c |grad h|^2
                              - c^2 n (n-3) |h|^2 + BT
    (all integrated over U; BT are the explicit boundary fluxes).
    """
    chart = domain.chart
    n = chart.n
    if chart.curvature is None:
        raise ValueError("need a constant-curvature chart")
    c = chart.curvature
    hfields = _as_fields(n, hfields)

    kd2 = ad2 = gh2 = lh2 = h2 = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.ipts,
                                    g_order=3, h_order=2, r_order=0):
        gi0 = geo.gi0()
        nab0 = geo.nab.data[0]
        nab2_0 = geo.nab2.data[0]
        w = domain.idv[sl]
        kd = nab0 - np.transpose(nab0, (0, 3, 2, 1))
        ad = nab2_0 - np.transpose(nab2_0, (0, 3, 2, 1, 4))
        kd2 += float(np.sum(_norm2_values(kd, gi0, 3) * w))
        ad2 += float(np.sum(_norm2_values(ad, gi0, 4) * w))
        gh2 += float(np.sum(_norm2_values(nab0, gi0, 3) * w))
        lap = np.einsum("zab,zijab->zij", gi0, nab2_0)
        lh2 += float(np.sum(_norm2_values(lap, gi0, 2) * w))
        h2 += float(np.sum(_norm2_values(geo.h0(), gi0, 2) * w))

    bt1 = bt2 = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.bpts,
                                    g_order=3, h_order=2, r_order=0):
        nl, nu = domain.nhat_low[sl], domain.nhat_up[sl]
        w = domain.bds[sl]
        bt1 += float(np.sum(_flux_values(geo, nl, nu, c, "first") * w))
        bt2 += float(np.sum(_flux_values(geo, nl, nu, c, "second") * w))

    out = {}
    lhs1 = 0.5 * kd2
    rhs1 = gh2 + c * n * h2 + bt1
    out["koiso_first"] = _report(
        "koiso-differential-bochner", lhs1, rhs1,
        [lhs1, gh2, c * n * h2, bt1], tol,
        {"grad2": gh2, "h2": h2, "boundary": bt1, "c": c})
    lhs2 = 0.5 * ad2
    rhs2 = lh2 + 3.0 * c * gh2 - c * c * n * (n - 3.0) * h2 + bt2
    out["koiso_second"] = _report(
        "second-bianchi-bochner", lhs2, rhs2,
        [lhs2, lh2, 3.0 * c * gh2, c * c * n * (n - 3.0) * h2, bt2], tol,
        {"lap2": lh2, "grad2": gh2, "h2": h2, "boundary": bt2, "c": c})
    return out


def dw_identity_check(domain: DomainWithBoundary, hfields,
                      tol: float = 1e-5) -> VariationReport:
    """|DW[h]|^2 integrated over U vs its Bochner form, TT h, constant c.

    The oracle side is (1/2) d^2/dt^2 int_U |W(g + t h)|^2 dv at t = 0: the
    background Weyl tensor vanishes on conformally flat charts, so the t^2
    coefficient is exactly the squared linearization (the volume-density and
    W-quadratic cross terms all carry a factor W(g) = 0).
    """
    chart = domain.chart
    n = chart.n
    if chart.curvature is None:
        raise ValueError("need a constant-curvature chart")
    if n < 4:
        raise ValueError("identity degenerates below dimension 4")
    c = chart.curvature
    hfields = _as_fields(n, hfields)

    gh2 = lh2 = h2 = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.ipts,
                                    g_order=3, h_order=2, r_order=0):
        gi0 = geo.gi0()
        w = domain.idv[sl]
        gh2 += float(np.sum(_norm2_values(geo.nab.data[0], gi0, 3) * w))
        lap = np.einsum("zab,zijab->zij", gi0, geo.nab2.data[0])
        lh2 += float(np.sum(_norm2_values(lap, gi0, 2) * w))
        h2 += float(np.sum(_norm2_values(geo.h0(), gi0, 2) * w))

    bt = 0.0
    for sl, geo in geometry_batches(chart, hfields, domain.bpts,
                                    g_order=3, h_order=2, r_order=0):
        vals = _flux_values(geo, domain.nhat_low[sl], domain.nhat_up[sl],
                            c, "weyl")
        bt += float(np.sum(vals * domain.bds[sl]))

    pref = (n - 3.0) / (n - 2.0)
    rhs = pref * (lh2 + c * (n + 2.0) * gh2 + 2.0 * c * c * n * h2) + bt
    oracle, step = fd_oracle(chart, hfields, "weyl_integral", order=2,
                             domain=domain)
    lhs = 0.5 * oracle
    return _report("weyl-linearization-norm", lhs, rhs,
                   [lhs, pref * lh2, pref * c * (n + 2.0) * gh2,
                    pref * 2.0 * c * c * n * h2, bt], tol,
                   {"lap2": lh2, "grad2": gh2, "h2": h2, "boundary": bt,
                    "c": c, "step": step})


def weyl_constant_tensor(n: int, seed: int = 3) -> np.ndarray:
    """A fixed constant 4-tensor with full Weyl symmetries.

    Antisymmetric in (a,b) and (c,d), symmetric under pair exchange, first
    Bianchi, and trace-free; used to build compactly supported TT tensors
    h_{ij} = M_{ikjl} d_k d_l psi on flat charts.

    Built by projecting a random tensor onto the algebraic-curvature
    space (pair antisymmetrization, pair exchange, Bianchi projection)
    and then subtracting the Ricci and scalar parts via Kulkarni-Nomizu
    products, so memory stays O(n^4).
    """
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(n, n, n, n))
    # antisymmetrize within each index pair
    t = 0.25 * (t - t.transpose(1, 0, 2, 3)
                - t.transpose(0, 1, 3, 2) + t.transpose(1, 0, 3, 2))
    # symmetrize under pair exchange
    t = 0.5 * (t + t.transpose(2, 3, 0, 1))
    # remove the totally antisymmetric component (Bianchi projection)
    t = t - (t + t.transpose(0, 2, 3, 1) + t.transpose(0, 3, 1, 2)) / 3.0
    # subtract Ricci and scalar parts (Kulkarni-Nomizu with the identity)
    ric = np.einsum("abad->bd", t)
    scal = np.trace(ric)
    g = np.eye(n)
    e = ric - (scal / n) * g

    def kn(a, b):
        return (np.einsum("ac,bd->abcd", a, b)
                + np.einsum("bd,ac->abcd", a, b)
                - np.einsum("ad,bc->abcd", a, b)
                - np.einsum("bc,ad->abcd", a, b))

    w = t - kn(g, e) / (n - 2) - (scal / (n * (n - 1))) * 0.5 * kn(g, g)
    m = np.max(np.abs(w))
    if m < 1e-12:
        raise ValueError(f"no Weyl-symmetric tensors in dimension {n}")
    return w / m


# ---------------------------------------------------------------------------
# linearized flat Paneitz operator, exact symbolic
# ---------------------------------------------------------------------------

def dp_flat(hfields, phi: RationalField) -> RationalField:
    """DP_{g_e}[h] phi at the flat metric, exactly (rational-field algebra).

    DP[h] phi = -Lap(d_i(h_ij d_j phi)) - d_i(h_ij d_j Lap phi)
                + (4/(n-2)) DRic[h]_ij d_i d_j phi
                - a1 DR[h] Lap phi - a2 d_k DR[h] d_k phi
                - ((n-4)/(4(n-1))) Lap(DR[h]) phi,
    a1 = (4 + (n-2)^2)/(2(n-2)(n-1)),  a2 = (n-6)/(2(n-1)), with the flat
    linearizations DR[h] = div^2 h - Lap tr h and
    DRic[h]_jk = -(1/2)(d_j d_k tr h + Lap h_jk - d_j (div h)_k
                        - d_k (div h)_j).
    """
    h = np.asarray(hfields, dtype=object)
    n = h.shape[0]
    hfields = _as_fields(n, h)

    trh = h[0, 0]
    for i in range(1, n):
        trh = trh + h[i, i]
    divh = []
    for k in range(n):
        t = h[0, k].partial(0)
        for i in range(1, n):
            t = t + h[i, k].partial(i)
        divh.append(t.prune())
    div2 = divh[0].partial(0)
    for k in range(1, n):
        div2 = div2 + divh[k].partial(k)
    dr = (div2 - trh.laplacian()).prune()

    dric = np.empty((n, n), dtype=object)
    for j in range(n):
        for k in range(j, n):
            t = trh.partial(j).partial(k) + h[j, k].laplacian() \
                - divh[k].partial(j) - divh[j].partial(k)
            dric[j, k] = (-0.5) * t
            dric[k, j] = dric[j, k]

    lap_phi = phi.laplacian()
    t1 = RationalField(n, phi.eps2)
    t2 = RationalField(n, phi.eps2)
    for i in range(n):
        for j in range(n):
            t1 = t1 + (h[i, j] * phi.partial(j)).partial(i)
            t2 = t2 + (h[i, j] * lap_phi.partial(j)).partial(i)
    out = (-1.0) * t1.laplacian() - t2

    for i in range(n):
        for j in range(n):
            out = out + (4.0 / (n - 2.0)) * (dric[i, j]
                                             * phi.partial(i).partial(j))
    a1 = (4.0 + (n - 2.0) ** 2) / (2.0 * (n - 2.0) * (n - 1.0))
    a2 = (n - 6.0) / (2.0 * (n - 1.0))
    out = out - a1 * (dr * lap_phi)
    for k in range(n):
        out = out - a2 * (dr.partial(k) * phi.partial(k))
    out = out - ((n - 4.0) / (4.0 * (n - 1.0))) * (dr.laplacian() * phi)
    return out.prune()


def flat_tt_compact(n: int, power: int = 3, seed: int = 3) -> np.ndarray:
    """A polynomial TT tensor on the flat chart, vanishing at |x| = 1.

    h_{ij} = M_{ikjl} d_k d_l psi with psi = (1 - |x|^2)^power and M a
    constant Weyl-symmetric tensor: symmetry of h follows from pair
    exchange, tracelessness from M being trace-free, and div h = 0 from the
    antisymmetry of M in the contracted pair against the symmetric third
    derivative of psi.
    """
    from .rational import monomial

    M = weyl_constant_tensor(n, seed=seed)
    base = monomial(n, (0,) * n, 1.0, eps2=1.0)
    for i in range(n):
        e = [0] * n
        e[i] = 2
        base = base - monomial(n, tuple(e), 1.0, eps2=1.0)
    psi = base
    for _ in range(power - 1):
        psi = psi * base
    d2psi = [[None] * n for _ in range(n)]
    for k in range(n):
        for l in range(k, n):
            d2psi[k][l] = psi.partial(k).partial(l)
            d2psi[l][k] = d2psi[k][l]
    h = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            t = RationalField(n, 1.0)
            for k in range(n):
                for l in range(n):
                    if M[i, k, j, l] != 0.0:
                        t = t + M[i, k, j, l] * d2psi[k][l]
            h[i, j] = t.prune()
    return h
