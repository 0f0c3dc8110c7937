r"""Partial-derivative jets of tensor fields at scattered points.

A :class:`Jet` holds a tensor field T and its partial derivatives up to some
order at m points: ``data[p]`` has shape ``(m,) + comp + (n,)*p`` and is fully
symmetric in the trailing p derivative axes.  Jets multiply by the Leibniz
rule (:func:`jet_einsum`), invert recursively (:func:`jet_inv_matrix`), and
feed the curvature pipeline :func:`curvature_jets`, which produces pointwise
exact R, Ric, Rm, W, Q of an arbitrary metric from its 4-jet.

The point of the machinery: metrics and perturbations in the identity tests
are built from rational fields whose partials are exact, so quantities
evaluated through jets at quadrature nodes carry no spatial discretization
error at all — the only error left in a variational check is the step size of
the t-differencing, which is controllable.
"""

from __future__ import annotations

from itertools import combinations, combinations_with_replacement, product

import numpy as np

__all__ = [
    "Jet", "jet_from_rational", "jet_einsum", "jet_transpose", "jet_partial",
    "jet_inv_matrix", "jet_inv_scalar", "cov_deriv_jet", "curvature_jets",
]

_DLETTERS = "ABCDEFGH"   # einsum letters reserved for derivative axes


class Jet:
    """Jets of one tensor field at m points (see module docstring)."""

    __slots__ = ("n", "comp", "data")

    def __init__(self, n: int, comp: tuple, data: list):
        self.n = n
        self.comp = tuple(comp)
        self.data = list(data)
        for p, arr in enumerate(self.data):
            want = arr.shape[1:1 + len(comp)]
            if want != self.comp or arr.shape[1 + len(comp):] != (n,) * p:
                raise ValueError(f"jet array {p} has shape {arr.shape}, "
                                 f"expected (m,)+{self.comp}+{(n,) * p}")

    @property
    def order(self) -> int:
        return len(self.data) - 1

    @property
    def npoints(self) -> int:
        return self.data[0].shape[0]

    def value(self) -> np.ndarray:
        return self.data[0]

    def __add__(self, other: "Jet") -> "Jet":
        P = min(self.order, other.order)
        return Jet(self.n, self.comp,
                   [self.data[p] + other.data[p] for p in range(P + 1)])

    def __sub__(self, other: "Jet") -> "Jet":
        P = min(self.order, other.order)
        return Jet(self.n, self.comp,
                   [self.data[p] - other.data[p] for p in range(P + 1)])

    def __mul__(self, c: float) -> "Jet":
        return Jet(self.n, self.comp, [c * a for a in self.data])

    __rmul__ = __mul__

    def truncate(self, order: int) -> "Jet":
        return Jet(self.n, self.comp, self.data[:order + 1])


def jet_from_rational(fields, points: np.ndarray, order: int) -> Jet:
    """Exact jets of a tensor with RationalField components.

    ``fields`` is a nested list / object array of RationalField with an
    arbitrary component shape; ``points`` has shape (m, n).
    """
    fields = np.asarray(fields, dtype=object)
    comp = fields.shape
    points = np.asarray(points, dtype=float)
    m, n = points.shape

    data = []
    flat = fields.ravel()
    # cache of partials per component: sorted multi-index -> RationalField
    caches = [{(): f} for f in flat]
    for p in range(order + 1):
        arr = np.empty((m,) + comp + (n,) * p)
        for ci, cache in enumerate(caches):
            cidx = np.unravel_index(ci, comp) if comp else ()
            vals = {}
            for key in combinations_with_replacement(range(n), p):
                if key not in cache:
                    parent = cache[key[:-1]]
                    cache[key] = parent.partial(key[-1])
                vals[key] = cache[key].eval(points)
            if p == 0:
                arr[(slice(None),) + cidx] = vals[()]
            else:
                for didx in product(range(n), repeat=p):
                    arr[(slice(None),) + cidx + didx] = \
                        vals[tuple(sorted(didx))]
        data.append(arr)
    return Jet(n, comp, data)


def jet_einsum(spec: str, A: Jet, B: Jet, order: int | None = None) -> Jet:
    """Leibniz product with component contraction.

    ``spec`` addresses only the component axes, e.g. ``"kl,lij->kij"``; the
    point axis and the derivative axes are handled internally:

        (AB)^{(p)}_{d1..dp} = sum over subsets S of {1..p} of
                              A^{(|S|)}_{dS} B^{(p-|S|)}_{dS^c}.
    """
    inA, rest = spec.split(",")
    inB, out = rest.split("->")
    if order is None:
        order = min(A.order, B.order)
    if order > A.order + 0 or order > B.order:
        # each factor must reach the full requested order (k runs 0..p)
        raise ValueError("operands carry too few derivative orders")
    n = A.n
    nc = 1 + len(out)
    data = []
    for p in range(order + 1):
        acc = None
        for k in range(p + 1):
            dA, dB = _DLETTERS[:k], _DLETTERS[k:p]
            term = np.einsum(f"z{inA}{dA},z{inB}{dB}->z{out}{dA}{dB}",
                             A.data[k], B.data[p - k])
            for pos in combinations(range(p), k):
                if k == 0:
                    arr = term
                else:
                    arr = np.moveaxis(term, range(nc, nc + k),
                                      [nc + q for q in pos])
                acc = arr.copy() if acc is None else acc + arr
        data.append(acc if acc is not None else
                    np.einsum(f"z{inA},z{inB}->z{out}", A.data[0], B.data[0]))
    return Jet(n, (n,) * len(out), data)


def jet_map(spec: str, A: Jet) -> Jet:
    """Single-operand einsum on component axes (trace / reorder), per order."""
    inA, out = spec.split("->")
    data = []
    for p, arr in enumerate(A.data):
        d = _DLETTERS[:p]
        data.append(np.einsum(f"z{inA}{d}->z{out}{d}", arr))
    return Jet(A.n, (A.n,) * len(out), data)


def jet_transpose(A: Jet, perm: tuple) -> Jet:
    letters = "ijklpqrs"[:len(A.comp)]
    out = "".join(letters[q] for q in perm)
    return jet_map(f"{letters}->{out}", A)


def jet_partial(A: Jet) -> Jet:
    """The gradient dT as a jet of one order less; new axis appended to comp."""
    if A.order < 1:
        raise ValueError("cannot differentiate an order-0 jet")
    return Jet(A.n, A.comp + (A.n,), A.data[1:])


def jet_inv_scalar(A: Jet) -> Jet:
    """Jets of 1/f from jets of a nonvanishing scalar f."""
    inv0 = 1.0 / A.data[0]
    data = [inv0]
    for p in range(1, A.order + 1):
        acc = None
        for k in range(1, p + 1):
            dA, dB = _DLETTERS[:k], _DLETTERS[k:p]
            term = np.einsum(f"z{dA},z{dB}->z{dA}{dB}",
                             A.data[k], data[p - k])
            for pos in combinations(range(p), k):
                arr = np.moveaxis(term, range(1, 1 + k), [1 + q for q in pos])
                acc = arr.copy() if acc is None else acc + arr
        shape = inv0.shape + (A.n,) * p
        data.append(-np.broadcast_to(inv0.reshape(inv0.shape + (1,) * p),
                                     shape) * acc)
    return Jet(A.n, (), data)


def jet_inv_matrix(G: Jet) -> Jet:
    """Jets of the pointwise matrix inverse g^{ij} from jets of g_{ij}."""
    if G.comp != (G.n, G.n):
        raise ValueError("matrix jet must have comp shape (n, n)")
    n = G.n
    inv0 = np.linalg.inv(G.data[0])
    data = [inv0]
    for p in range(1, G.order + 1):
        acc = None
        for k in range(1, p + 1):
            dA, dB = _DLETTERS[:k], _DLETTERS[k:p]
            term = np.einsum(f"zab{dA},zbc{dB}->zac{dA}{dB}",
                             G.data[k], data[p - k])
            for pos in combinations(range(p), k):
                arr = np.moveaxis(term, range(3, 3 + k), [3 + q for q in pos])
                acc = arr.copy() if acc is None else acc + arr
        # g0 X = -acc  =>  X = -inv0 acc
        d = _DLETTERS[:p]
        data.append(-np.einsum(f"zab,zbc{d}->zac{d}", inv0, acc))
    return Jet(n, (n, n), data)


def cov_deriv_jet(T: Jet, Gamma: Jet) -> Jet:
    """Covariant derivative of an all-lower tensor jet.

    (nabla T)_{i1..ik, a} = d_a T_{i1..ik} - sum_s Gamma^l_{a i_s} T_{..l..};
    the derivative index a is appended as the LAST component axis.  Gamma has
    comp (n, n, n) ordered Gamma^k_{ij}.
    """
    k = len(T.comp)
    out = jet_partial(T)
    letters = "ijpqrsuv"[:k]
    for s in range(k):
        tin = letters[:s] + "l" + letters[s + 1:]
        corr = jet_einsum(f"la{letters[s]},{tin}->{letters}a", Gamma, T,
                          order=out.order)
        out = out - corr
    return out


# ---------------------------------------------------------------------------
# curvature of an arbitrary metric from its jets
# ---------------------------------------------------------------------------

def christoffel_jets(gjet: Jet, ginv: Jet | None = None):
    """(Gamma1, Gamma, ginv) jets; orders drop by one relative to gjet."""
    if ginv is None:
        ginv = jet_inv_matrix(gjet)
    dg = jet_partial(gjet)                       # (i, j, k) = d_k g_{ij}
    # Gamma1_{k,ij} = (d_i g_{jk} + d_j g_{ik} - d_k g_{ij}) / 2
    t1 = jet_map("jki->kij", dg)
    t2 = jet_map("ikj->kij", dg)
    t3 = jet_map("ijk->kij", dg)
    g1 = 0.5 * (t1 + t2 - t3)
    gam = jet_einsum("kl,lij->kij", ginv,
                     g1, order=min(ginv.order, g1.order))
    return g1, gam, ginv


def curvature_jets(gjet: Jet, r_order: int = 0) -> dict:
    """Pointwise curvature of a metric from its jets.

    Needs gjet.order >= r_order + 2.  Returns a dict with jets ``R``, ``Ric``
    (order r_order, Ricci via the contracted-Christoffel formula, which
    avoids materializing Riemann jets), the all-lowered ``Rm`` as an order-0
    jet, values ``W``, ``Q`` (Q only when r_order >= 2, since Q uses Lap R),
    plus ``ginv``, ``Gamma`` jets and the volume density ``sqrtdet``.
    """
    n = gjet.n
    ginv = jet_inv_matrix(gjet)
    g1, gam, _ = christoffel_jets(gjet, ginv)
    d2g = jet_partial(jet_partial(gjet))          # (i,j,a,b) = d_a d_b g_{ij}
    P = r_order

    # Ric_{jk} = d_a G^a_{jk} - d_j G^a_{ak} + G^a_{ab} G^b_{jk}
    #            - G^a_{jb} G^b_{ak}
    dgam = jet_partial(gam)                       # (k, i, j, a) = d_a G^k_{ij}
    t1 = jet_map("ajka->jk", dgam)
    t2 = jet_map("aakj->jk", dgam)
    c1 = jet_map("aab->b", gam)
    t3 = jet_einsum("b,bjk->jk", c1, gam, order=P)
    t4 = jet_einsum("ajb,bak->jk", gam, gam, order=P)
    Ric = t1.truncate(P) - t2.truncate(P) + t3 - t4
    R = jet_einsum("jk,jk->", ginv, Ric, order=P)

    # Riemann at value level only (identities need Rm_{ijkl} values, not jets)
    d2g0 = d2g.data[0]
    sec0 = 0.5 * (np.einsum("ziljk->zijkl", d2g0)
                  + np.einsum("zjkil->zijkl", d2g0)
                  - np.einsum("zikjl->zijkl", d2g0)
                  - np.einsum("zjlik->zijkl", d2g0))
    gg10 = np.einsum("znp,znjk->zpjk", ginv.data[0], g1.data[0])
    quad1 = np.einsum("zpjk,zpil->zijkl", gg10, g1.data[0])
    quad2 = np.einsum("zijlk->zijkl", quad1)
    Rm = Jet(n, (n, n, n, n), [-(sec0 + quad1 - quad2)])

    out = {"ginv": ginv, "Gamma": gam, "Gamma1": g1, "Rm": Rm, "Ric": Ric,
           "R": R, "sqrtdet": np.sqrt(np.linalg.det(gjet.data[0]))}

    g0, gi0, ric0, rm0, r0 = (gjet.data[0], ginv.data[0], Ric.data[0],
                              Rm.data[0], R.data[0])
    a0 = (ric0 - r0[:, None, None] * g0 / (2.0 * (n - 1))) / (n - 2)
    kn = (np.einsum("zil,zjk->zijkl", a0, g0)
          + np.einsum("zjk,zil->zijkl", a0, g0)
          - np.einsum("zik,zjl->zijkl", a0, g0)
          - np.einsum("zjl,zik->zijkl", a0, g0))
    out["A"] = a0
    out["W"] = rm0 - kn

    if P >= 2:
        # Lap R = g^{ij}(R_{,ij} - Gamma^k_{ij} R_{,k}) at the points
        lapR = (np.einsum("zij,zij->z", gi0, R.data[2])
                - np.einsum("zij,zkij,zk->z", gi0, gam.data[0], R.data[1]))
        alpha = -1.0 / (2.0 * (n - 1))
        beta = -2.0 / (n - 2) ** 2
        gamma = (n ** 3 - 4 * n ** 2 + 16 * n - 16) \
            / (8.0 * (n - 2) ** 2 * (n - 1) ** 2)
        ric2 = np.einsum("zik,zjl,zij,zkl->z", gi0, gi0, ric0, ric0)
        out["lapR"] = lapR
        out["Q"] = alpha * lapR + beta * ric2 + gamma * r0 * r0
    return out
