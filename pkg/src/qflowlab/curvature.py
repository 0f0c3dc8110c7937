r"""Curvature tensors, Q-curvature and the Paneitz operator on chart grids.

Conventions (all indices down):

    Gamma1_{k,ij} = (g_{ik,j} + g_{jk,i} - g_{ij,k})/2          (first kind)
    Rm_{ijkl}     antisymmetric in (ij) and (kl), normalized so that a
                  constant-sectional-curvature-c metric has
                  Rm_{ijkl} = c (g_{il} g_{jk} - g_{ik} g_{jl}),
    Ric_{jk}      = g^{il} Rm_{ijkl},      R = g^{jk} Ric_{jk},
    A             = (Ric - R g / (2(n-1))) / (n-2)              (Schouten)
    W             = Rm - A (kn) g                               (Weyl)
    Q             = a_n Lap R + b_n |Ric|^2 + c_n R^2,
                    a_n = -1/(2(n-1)), b_n = -2/(n-2)^2,
                    c_n = (n^3 - 4n^2 + 16n - 16) / (8 (n-2)^2 (n-1)^2).

The Paneitz operator:

    P phi = Lap^2 phi
            - div[ ( ((n-2)^2+4)/(2(n-1)(n-2)) R g - 4/(n-2) Ric ) d phi ]
            + (n-4)/2 Q phi.

Everything is centered 4th-order finite differences; curvature-level fields
carry margin 2, Q/Paneitz-level fields margin 4.  Mixed second derivatives are
two sequential first-derivative passes, which costs margin 2 per axis (not 4):
the garbage strips never reach the interior of the other axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (AlgCurvTensor, ChartGrid, SymTensorField, VectorField,
                   d1, d2, d4_scale)

__all__ = [
    "CurvatureBundle", "curvature_bundle", "paneitz_apply", "conformal_change",
    "tensor_ops", "lichnerowicz", "q_constants", "kulkarni_nomizu",
    "truncation_estimate",
]


def q_constants(n: int):
    """(alpha_n, beta_n, gamma_n) in Q = alpha Lap R + beta |Ric|^2 + gamma R^2."""
    if n == 4:
        raise ValueError("dimension 4 excluded")
    alpha = -1.0 / (2.0 * (n - 1))
    beta = -2.0 / (n - 2) ** 2
    gamma = (n ** 3 - 4 * n ** 2 + 16 * n - 16) / (8.0 * (n - 2) ** 2 * (n - 1) ** 2)
    return alpha, beta, gamma


@dataclass
class CurvatureBundle:
    grid: ChartGrid
    Gamma: np.ndarray          # Gamma^k_{ij}, shape (n, n, n) + grid.shape
    Rm: AlgCurvTensor
    Ric: SymTensorField
    R: np.ndarray
    A: SymTensorField
    W: AlgCurvTensor
    Q: np.ndarray
    ginv: np.ndarray           # g^{ij}, shape (n, n) + grid.shape
    margin: int                # valid interior margin of Q (the deepest field)
    margin_curv: int           # margin of Gamma/Rm/Ric/R/A/W


def _pointwise_inv(gfull: np.ndarray, n: int) -> np.ndarray:
    shape = gfull.shape[2:]
    gm = np.moveaxis(gfull.reshape(n, n, -1), -1, 0)
    inv = np.linalg.inv(gm)
    return np.moveaxis(inv, 0, -1).reshape((n, n) + shape)


def _d2_mixed(f: np.ndarray, a: int, b: int, h: float, off: int) -> np.ndarray:
    """d_a d_b f where a, b index the n trailing grid axes (offset off)."""
    if a == b:
        return d2(f, a + off, h)
    return d1(d1(f, a + off, h), b + off, h)


def curvature_bundle(g: SymTensorField, check: bool = True) -> CurvatureBundle:
    """All curvature quantities of a metric sampled on a grid."""
    grid, n, h = g.grid, g.grid.n, g.grid.h
    if n < 3:
        raise ValueError("need n >= 3 for Q-curvature")
    if check:
        g.check_positive_definite()
    gfull = g.full()
    ginv = _pointwise_inv(gfull, n)

    # dg[k, i, j] = d_k g_{ij}
    dg = np.stack([d1(gfull, 2 + k, h) for k in range(n)])

    # Christoffel first kind Gamma1[k, i, j] and second kind Gamma^k_{ij}
    Gamma1 = np.empty_like(dg)
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                Gamma1[k, i, j] = 0.5 * (dg[j, i, k] + dg[i, j, k] - dg[k, i, j])
                Gamma1[k, j, i] = Gamma1[k, i, j]
    del dg
    Gamma = np.einsum("kl...,lij...->kij...", ginv, Gamma1)

    # Riemann: Rm_{ijkl} = -[ (g_{il,jk} + g_{jk,il} - g_{ik,jl} - g_{jl,ik})/2
    #   + g^{np}(Gamma1_{n,jk} Gamma1_{p,il} - Gamma1_{n,jl} Gamma1_{p,ik}) ]
    Rm = AlgCurvTensor.zeros(grid)
    P = len(Rm.pairs)
    for a in range(P):
        i, j = Rm.pairs[a]
        for b in range(a, P):
            k, l = Rm.pairs[b]
            sec = 0.5 * (_d2_mixed(gfull[i, l], j, k, h, 0)
                         + _d2_mixed(gfull[j, k], i, l, h, 0)
                         - _d2_mixed(gfull[i, k], j, l, h, 0)
                         - _d2_mixed(gfull[j, l], i, k, h, 0))
            quad = (np.einsum("np...,n...,p...->...", ginv,
                              Gamma1[:, j, k], Gamma1[:, i, l])
                    - np.einsum("np...,n...,p...->...", ginv,
                                Gamma1[:, j, l], Gamma1[:, i, k]))
            val = -(sec + quad)
            Rm.data[a, b] = val
            if a != b:
                Rm.data[b, a] = val
    del Gamma1

    # Ricci: Ric_{jk} = g^{il} Rm_{ijkl}
    ric_full = np.zeros((n, n) + grid.shape)
    for j in range(n):
        for k in range(j, n):
            acc = np.zeros(grid.shape)
            for i in range(n):
                if i == j:
                    continue
                for l in range(n):
                    if l == k:
                        continue
                    acc += ginv[i, l] * Rm.component(i, j, k, l)
            ric_full[j, k] = acc
            if j != k:
                ric_full[k, j] = acc
    Ric = SymTensorField.from_full(grid, ric_full, margin=2)
    R = np.einsum("jk...,jk...->...", ginv, ric_full)

    # Schouten and Weyl
    a_full = (ric_full - R * gfull / (2.0 * (n - 1))) / (n - 2)
    A = SymTensorField.from_full(grid, a_full, margin=2)
    W = AlgCurvTensor.zeros(grid)
    for a in range(P):
        i, j = W.pairs[a]
        for b in range(a, P):
            k, l = W.pairs[b]
            kn = (a_full[i, l] * gfull[j, k] + a_full[j, k] * gfull[i, l]
                  - a_full[i, k] * gfull[j, l] - a_full[j, l] * gfull[i, k])
            val = Rm.data[a, b] - kn
            W.data[a, b] = val
            if a != b:
                W.data[b, a] = val
    Rm.margin = W.margin = 2

    # Q-curvature
    alpha, beta, gamma = q_constants(n)
    lapR = laplace_scalar(R, ginv, Gamma, h)
    ric2 = np.einsum("ik...,jl...,ij...,kl...->...", ginv, ginv,
                     ric_full, ric_full)
    Q = alpha * lapR + beta * ric2 + gamma * R * R

    return CurvatureBundle(grid=grid, Gamma=Gamma, Rm=Rm, Ric=Ric, R=R,
                           A=A, W=W, Q=Q, ginv=ginv, margin=4, margin_curv=2)


# ---------------------------------------------------------------------------
# covariant helpers on grids (tensor components on trailing grid axes)
# ---------------------------------------------------------------------------

def grad_scalar(f: np.ndarray, h: float, n: int) -> np.ndarray:
    off = f.ndim - n
    return np.stack([d1(f, k + off, h) for k in range(n)])


def hess_scalar(f: np.ndarray, Gamma: np.ndarray, h: float) -> np.ndarray:
    """nabla_i nabla_j f for a plain scalar grid f."""
    n = Gamma.shape[0]
    df = grad_scalar(f, h, n)
    out = np.empty((n, n) + f.shape)
    for i in range(n):
        for j in range(i, n):
            out[i, j] = _d2_mixed(f, i, j, h, 0) \
                - np.einsum("k...,k...->...", Gamma[:, i, j], df)
            out[j, i] = out[i, j]
    return out


def laplace_scalar(f: np.ndarray, ginv: np.ndarray, Gamma: np.ndarray,
                   h: float) -> np.ndarray:
    return np.einsum("ij...,ij...->...", ginv, hess_scalar(f, Gamma, h))


def cov_deriv_oneform(om: np.ndarray, Gamma: np.ndarray, h: float) -> np.ndarray:
    """(nabla om)_{k,i} = d_k om_i - Gamma^l_{ki} om_l, om shape (n,)+S."""
    n = Gamma.shape[0]
    dom = np.stack([d1(om, k + 1, h) for k in range(n)])
    return dom - np.einsum("lki...,l...->ki...", Gamma[:, :, :], om)


def cov_deriv_sym2(hten: np.ndarray, Gamma: np.ndarray, h: float) -> np.ndarray:
    """(nabla h)_{k,ij} for hten of shape (n, n) + grid.shape."""
    n = Gamma.shape[0]
    dh = np.stack([d1(hten, k + 2, h) for k in range(n)])
    corr1 = np.einsum("lki...,lj...->kij...", Gamma, hten)
    corr2 = np.einsum("lkj...,il...->kij...", Gamma, hten)
    return dh - corr1 - corr2


def cov_deriv_3tensor(t3: np.ndarray, Gamma: np.ndarray, h: float) -> np.ndarray:
    """(nabla t)_{a,kij} for t3 of shape (n, n, n) + grid.shape."""
    n = Gamma.shape[0]
    dt = np.stack([d1(t3, a + 3, h) for a in range(n)])
    c1 = np.einsum("lak...,lij...->akij...", Gamma, t3)
    c2 = np.einsum("lai...,klj...->akij...", Gamma, t3)
    c3 = np.einsum("laj...,kil...->akij...", Gamma, t3)
    return dt - c1 - c2 - c3


def div_sym2(hten: np.ndarray, ginv: np.ndarray, Gamma: np.ndarray,
             h: float) -> np.ndarray:
    """(div h)_i = g^{jk} (nabla h)_{k,ij}, shape (n,) + grid.shape."""
    nab = cov_deriv_sym2(hten, Gamma, h)
    return np.einsum("jk...,kij...->i...", ginv, nab)


def trace_sym2(hten: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,ij...->...", ginv, hten)


# ---------------------------------------------------------------------------
# Paneitz operator
# ---------------------------------------------------------------------------

def paneitz_apply(g: SymTensorField, phi: np.ndarray,
                  bundle: CurvatureBundle | None = None) -> np.ndarray:
    """P_g phi on the interior margin (margin 4)."""
    if bundle is None:
        bundle = curvature_bundle(g)
    n, h = g.grid.n, g.grid.h
    ginv, Gamma = bundle.ginv, bundle.Gamma
    gfull = g.full()

    lap = laplace_scalar(phi, ginv, Gamma, h)
    bilap = laplace_scalar(lap, ginv, Gamma, h)

    c1 = ((n - 2) ** 2 + 4) / (2.0 * (n - 1) * (n - 2))
    c2 = 4.0 / (n - 2)
    bten = c1 * bundle.R * gfull - c2 * bundle.Ric.full()
    dphi = grad_scalar(phi, h, n)
    omega = np.einsum("ij...,jk...,k...->i...", bten, ginv, dphi)
    nab_om = cov_deriv_oneform(omega, Gamma, h)
    div_omega = np.einsum("ki...,ki...->...", ginv, nab_om)

    return bilap - div_omega + 0.5 * (n - 4) * bundle.Q * phi


def conformal_change(g: SymTensorField, u: np.ndarray, phi: np.ndarray):
    """Q of ghat = u^{4/(n-4)} g two ways, plus the covariance residual.

    Returns (Q_direct, Q_cov, residual_field) where
    residual = P_ghat phi - u^{-(n+4)/(n-4)} P_g (u phi).
    """
    grid, n = g.grid, g.grid.n
    if n == 4:
        raise ValueError("dimension 4 excluded")
    if np.any(u <= 0):
        bad = np.unravel_index(int(np.argmin(u)), grid.shape)
        raise ValueError(f"conformal factor not positive (first at {bad})")
    w = u ** (4.0 / (n - 4))
    ghat = SymTensorField(grid, g.comps * w[None], margin=g.margin)
    bundle_g = curvature_bundle(g)
    bundle_hat = curvature_bundle(ghat)
    q_direct = bundle_hat.Q
    q_cov = (2.0 / (n - 4)) * u ** (-(n + 4.0) / (n - 4)) \
        * paneitz_apply(g, u, bundle_g)
    resid = paneitz_apply(ghat, phi, bundle_hat) \
        - u ** (-(n + 4.0) / (n - 4)) * paneitz_apply(g, u * phi, bundle_g)
    return q_direct, q_cov, resid


# ---------------------------------------------------------------------------
# tensor algebra
# ---------------------------------------------------------------------------

def kulkarni_nomizu(hfull: np.ndarray, kfull: np.ndarray,
                    grid: ChartGrid) -> AlgCurvTensor:
    """(h kn k)_{ijkl} = h_il k_jk + h_jk k_il - h_ik k_jl - h_jl k_ik."""
    out = AlgCurvTensor.zeros(grid)
    P = len(out.pairs)
    for a in range(P):
        i, j = out.pairs[a]
        for b in range(a, P):
            k, l = out.pairs[b]
            val = (hfull[i, l] * kfull[j, k] + hfull[j, k] * kfull[i, l]
                   - hfull[i, k] * kfull[j, l] - hfull[j, l] * kfull[i, k])
            out.data[a, b] = val
            if a != b:
                out.data[b, a] = val
    return out


def tensor_ops(h: SymTensorField, k: SymTensorField, g: SymTensorField,
               X: VectorField, bundle: CurvatureBundle | None = None) -> dict:
    """Cross product, Kulkarni-Nomizu, traces, divergence, Lie derivatives."""
    for f in (h, k, X):
        if f.grid != g.grid:
            raise ValueError("all fields must share the metric's grid")
    if bundle is None:
        bundle = curvature_bundle(g)
    grid, n, hsp = g.grid, g.grid.n, g.grid.h
    ginv, Gamma = bundle.ginv, bundle.Gamma
    hfull, kfull, gfull = h.full(), k.full(), g.full()

    cross = np.einsum("il...,lm...,mj...->ij...", hfull, ginv, kfull)
    kn = kulkarni_nomizu(hfull, kfull, grid)
    trh = trace_sym2(hfull, ginv)
    divh = div_sym2(hfull, ginv, Gamma, hsp)

    # Lie derivatives: X^i given up; X_flat = g X
    Xup = X.comps
    Xfl = np.einsum("ij...,j...->i...", gfull, Xup)
    nablaX = cov_deriv_oneform(Xfl, Gamma, hsp)      # (a, i) = nabla_a X_i
    lie = nablaX + np.einsum("ai...->ia...", nablaX)
    divX = np.einsum("ai...,ai...->...", ginv, nablaX)

    # (L2)_{ij} = X^k nabla_k lie_{ij} + nabla_i X^k lie_{kj} + nabla_j X^k lie_{ik}
    nab_lie = cov_deriv_sym2(lie, Gamma, hsp)
    nablaX_up = np.einsum("kl...,al...->ak...", ginv, nablaX)  # nabla_a X^k
    lie2 = np.einsum("k...,kij...->ij...", Xup, nab_lie) \
        + np.einsum("ik...,kj...->ij...", nablaX_up, lie) \
        + np.einsum("jk...,ik...->ij...", nablaX_up, lie)
    trlie2 = trace_sym2(lie2, ginv)

    # identity: tr(L2) = 2 X(div X) + |lie|^2
    ddivX = grad_scalar(divX, hsp, n)
    rhs = 2.0 * np.einsum("i...,i...->...", Xup, ddivX) \
        + np.einsum("ik...,jl...,ij...,kl...->...", ginv, ginv, lie, lie)
    return {
        "cross": SymTensorField.from_full(grid, cross,
                                          margin=max(h.margin, k.margin)),
        "kn": kn,
        "trace_h": trh,
        "div_h": divh,
        "lie": SymTensorField.from_full(grid, lie, margin=2),
        "lie2": SymTensorField.from_full(grid, lie2, margin=4),
        "trace_lie2": trlie2,
        "lie2_trace_identity_residual": trlie2 - rhs,
        "div_X": divX,
    }


def lichnerowicz(h: SymTensorField, g: SymTensorField,
                 bundle: CurvatureBundle | None = None) -> SymTensorField:
    """(Lich h)_{ij} = (rough Laplacian h)_{ij} + 2 Rm_{iklj} h^{kl}
    - (Ric x h)_{ij} - (h x Ric)_{ij}."""
    if bundle is None:
        bundle = curvature_bundle(g)
    grid, n, hsp = g.grid, g.grid.n, g.grid.h
    ginv, Gamma = bundle.ginv, bundle.Gamma
    hfull = h.full()

    nab = cov_deriv_sym2(hfull, Gamma, hsp)          # (k, i, j)
    nab2 = cov_deriv_3tensor(nab, Gamma, hsp)        # (a, k, i, j)
    rough = np.einsum("ak...,akij...->ij...", ginv, nab2)

    hup = np.einsum("ik...,jl...,kl...->ij...", ginv, ginv, hfull)
    rmterm = np.zeros((n, n) + grid.shape)
    for i in range(n):
        for j in range(i, n):
            acc = np.zeros(grid.shape)
            for k in range(n):
                if i == k:
                    continue
                for l in range(n):
                    if l == j:
                        continue
                    acc += bundle.Rm.component(i, k, l, j) * hup[k, l]
            rmterm[i, j] = acc
            if i != j:
                rmterm[j, i] = acc

    ricfull = bundle.Ric.full()
    rxh = np.einsum("il...,lm...,mj...->ij...", ricfull, ginv, hfull)
    hxr = np.einsum("il...,lm...,mj...->ij...", hfull, ginv, ricfull)
    out = rough + 2.0 * rmterm - rxh - hxr
    return SymTensorField.from_full(grid, out, margin=h.margin + 4)


def truncation_estimate(fields, grid: ChartGrid, margin: int,
                        order: int = 4, safety: float = 10.0) -> float:
    """Grid-adaptive tolerance: safety * h^order * max 4th-derivative scale."""
    scale = max(d4_scale(np.asarray(f), grid, margin) for f in fields)
    return safety * grid.h ** order * max(scale, 1e-300)
