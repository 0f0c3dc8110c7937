r"""Non-local fourth-order conformal flow on zonal functions of the sphere.

The flow evolves a positive conformal factor u on the round S^n by

    du/dt = f := -u + mu[u] P^{-1}(u^{(n+4)/(n-4)}),
    mu[u] := int u P u / int u^{2n/(n-4)},

where P is the Paneitz operator of the round metric.  Restricted to zonally
symmetric functions, P is diagonal in the Gegenbauer basis with eigenvalues

    lam_k = mu_k^2 + (n^2-2n-4)/2 * mu_k + n(n^2-4)(n-4)/16,
    mu_k  = k(k+n-1)   (Laplace eigenvalues),

so the stiff linear part integrates exactly.  The integrator is an
exponential midpoint rule on y = Pu:

    y_mid = e^{-dt/2} y + (1-e^{-dt/2}) mu(u) N(u),
    y_new = e^{-dt}   y + (1-e^{-dt})   mu(u_mid) N(u_mid),

with N(u) the zonal transform of u^{(n+4)/(n-4)} evaluated on a 2x padded
node set (de-aliasing).  Along exact trajectories E = int u P u is conserved,
the volume V = int u^{2n/(n-4)} is nondecreasing with

    dV/dt = (2n/(n-4)) (1/mu) int f P f,

and mu and the quotient F = E / V^{(n-4)/n} are nonincreasing; the driver
monitors all of these and adapts dt to keep the discrete E-drift small.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import eval_gegenbauer, gammaln, roots_gegenbauer

__all__ = [
    "ZonalOperator", "ZonalState", "FlowTrace", "FlowControls",
    "zonal_operator", "flow_step", "flow_run", "compute_f_and_monitors",
    "lojasiewicz_fit", "TRACE_HEADER",
]

TRACE_HEADER = "t,E,V,mu,F,fH2,fLp,PfLq,minu,dt"


def _gegenbauer_norm(k: np.ndarray, alpha: float) -> np.ndarray:
    """int_{-1}^{1} C_k^{(alpha)}(t)^2 (1-t^2)^{alpha-1/2} dt."""
    k = np.asarray(k, dtype=float)
    logh = (math.log(math.pi) + (1.0 - 2.0 * alpha) * math.log(2.0)
            + gammaln(k + 2.0 * alpha) - gammaln(k + 1.0)
            - np.log(k + alpha) - 2.0 * gammaln(alpha))
    return np.exp(logh)


def _sphere_volume(m: int) -> float:
    """Volume of the unit round S^m."""
    return 2.0 * math.pi ** ((m + 1) / 2.0) / math.gamma((m + 1) / 2.0)


class ZonalOperator:
    """Paneitz operator of the round S^n on zonal functions, truncation K.

    Fields of interest: eigenvalues ``lam`` (shape (K,)), Laplace eigenvalues
    ``mu_lap``, collocation nodes ``theta`` (polar angles) with quadrature
    weights ``w`` (including the S^{n-1} factor, so sums over nodes are
    integrals over S^n), and the orthonormal basis matrix ``psi`` with
    psi[k, q] = psi_k(theta_q).
    """

    def __init__(self, n: int, K: int):
        if n < 5:
            raise ValueError("zonal operator requires n >= 5")
        if K < 8:
            raise ValueError("truncation K must be at least 8")
        self.n = int(n)
        self.K = int(K)
        alpha = (n - 1) / 2.0
        self.alpha = alpha
        k = np.arange(K)
        self.mu_lap = k * (k + n - 1.0)
        self.lam = (self.mu_lap ** 2
                    + 0.5 * (n * n - 2.0 * n - 4.0) * self.mu_lap
                    + n * (n * n - 4.0) * (n - 4.0) / 16.0)
        self.p_exp = (n + 4.0) / (n - 4.0)
        self.vol_exp = 2.0 * n / (n - 4.0)

        area = _sphere_volume(n - 1)
        self.t, w1 = roots_gegenbauer(K, alpha)
        self.theta = np.arccos(self.t)
        self.w = area * w1
        self.psi = self._basis(self.t)
        # 2x padded nodes for the nonlinearity
        self.t_pad, w1p = roots_gegenbauer(2 * K, alpha)
        self.w_pad = area * w1p
        self.psi_pad = self._basis(self.t_pad)

    def _basis(self, t: np.ndarray) -> np.ndarray:
        k = np.arange(self.K)
        vals = eval_gegenbauer(k[:, None], self.alpha, t[None, :])
        norms = np.sqrt(_sphere_volume(self.n - 1)
                        * _gegenbauer_norm(k, self.alpha))
        return vals / norms[:, None]

    # -- transforms ---------------------------------------------------------
    def to_coeffs(self, values: np.ndarray) -> np.ndarray:
        """Forward transform from node values (on self.theta) to coefficients."""
        return self.psi @ (self.w * values)

    def to_values(self, coeffs: np.ndarray, padded: bool = False) -> np.ndarray:
        basis = self.psi_pad if padded else self.psi
        return coeffs @ basis

    def nonlinear_transform(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients of u^{(n+4)/(n-4)} via the padded node set."""
        u_pad = self.to_values(coeffs, padded=True)
        if np.any(u_pad <= 0.0):
            raise PositivityLossError("u <= 0 at a padded node")
        return self.psi_pad @ (self.w_pad * u_pad ** self.p_exp)

    def volume(self, coeffs: np.ndarray) -> float:
        u_pad = self.to_values(coeffs, padded=True)
        if np.any(u_pad <= 0.0):
            raise PositivityLossError("u <= 0 at a padded node")
        return float(np.sum(self.w_pad * u_pad ** self.vol_exp))

    def gram_residual(self) -> float:
        g = self.psi @ (self.w[:, None] * self.psi.T)
        return float(np.max(np.abs(g - np.eye(self.K))))


class PositivityLossError(RuntimeError):
    """The flow left the positive cone; signals bubbling beyond resolution."""


def zonal_operator(n: int, K: int) -> ZonalOperator:
    return ZonalOperator(n, K)


@dataclass
class ZonalState:
    coeffs: np.ndarray
    t: float = 0.0

    def values(self, op: ZonalOperator) -> np.ndarray:
        return op.to_values(self.coeffs)


@dataclass
class FlowControls:
    t_end: float = 10.0
    dt0: float = 1e-3
    e_drift_tol: float = 1e-9      # relative E drift allowed per step
    stop_tol: float = 1e-10        # stationarity threshold on ||f||_{W^{2,2}}
    dt_min: float = 1e-7
    dt_max: float = 1e-3           # raise to let long tails accelerate
    max_steps: int = 2_000_000


@dataclass
class FlowTrace:
    t: list = field(default_factory=list)
    E: list = field(default_factory=list)
    V: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    F: list = field(default_factory=list)
    fH2: list = field(default_factory=list)
    fLp: list = field(default_factory=list)
    PfLq: list = field(default_factory=list)
    minu: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    termination: str = ""

    def append(self, rec: dict, dt: float):
        for key in ("t", "E", "V", "mu", "F", "fH2", "fLp", "PfLq", "minu"):
            getattr(self, key).append(rec[key])
        self.dt.append(dt)

    def arrays(self) -> dict:
        return {key: np.asarray(getattr(self, key))
                for key in TRACE_HEADER.split(",")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRACE_HEADER + "\n")
        cols = [getattr(self, key) for key in TRACE_HEADER.split(",")]
        for row in zip(*cols):
            buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()


def compute_f_and_monitors(state: ZonalState, op: ZonalOperator) -> dict:
    """All monitored quantities of the current state, by node quadrature.

    Pf is formed algebraically as -Pu + mu u^{(n+4)/(n-4)} (no inversion).
    """
    c = state.coeffs
    E = float(np.sum(op.lam * c * c))
    nl = op.nonlinear_transform(c)      # coefficients of u^{(n+4)/(n-4)}
    V = op.volume(c)
    mu = E / V
    F = E / V ** ((op.n - 4.0) / op.n)
    cf = -c + mu * nl / op.lam          # coefficients of f
    pf_coeffs = op.lam * cf
    fH2 = float(np.sum(op.lam * cf * cf))
    f_pad = op.to_values(cf, padded=True)
    fLp = float(np.sum(op.w_pad * np.abs(f_pad) ** op.vol_exp))
    pf_pad = op.to_values(pf_coeffs, padded=True)
    q_exp = 2.0 * op.n / (op.n + 4.0)
    PfLq = float(np.sum(op.w_pad * np.abs(pf_pad) ** q_exp))
    minu = float(np.min(op.to_values(c, padded=True)))
    return {"t": state.t, "E": E, "V": V, "mu": mu, "F": F, "fH2": fH2,
            "fLp": fLp, "PfLq": PfLq, "minu": minu, "f_coeffs": cf}


def flow_step(state: ZonalState, op: ZonalOperator, dt: float) -> ZonalState:
    """One exponential-midpoint step on y = Pu in coefficient space."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    c = state.coeffs
    y = op.lam * c
    nl = op.nonlinear_transform(c)
    E = float(np.sum(op.lam * c * c))
    mu = E / op.volume(c)

    eh = math.exp(-0.5 * dt)
    y_mid = eh * y + (1.0 - eh) * mu * nl
    c_mid = y_mid / op.lam
    nl_mid = op.nonlinear_transform(c_mid)
    E_mid = float(np.sum(op.lam * c_mid * c_mid))
    mu_mid = E_mid / op.volume(c_mid)

    ef = math.exp(-dt)
    y_new = ef * y + (1.0 - ef) * mu_mid * nl_mid
    c_new = y_new / op.lam
    if not np.all(np.isfinite(c_new)):
        raise FloatingPointError("coefficient overflow in flow step")
    u_new = op.to_values(c_new, padded=True)
    if np.any(u_new <= 0.0):
        raise PositivityLossError("u <= 0 after step")
    return ZonalState(coeffs=c_new, t=state.t + dt)


def flow_run(init: ZonalState, op: ZonalOperator,
             controls: FlowControls | None = None):
    """Integrate to controls.t_end with adaptive dt (halve on E-drift).

    Returns (trace, final_state).  Termination reasons: "t_end",
    "stationary", "positivity_loss", "dt_underflow", "max_steps".
    """
    ctl = controls or FlowControls()
    state = init
    trace = FlowTrace()
    rec = compute_f_and_monitors(state, op)
    trace.append(rec, ctl.dt0)
    dt = ctl.dt0
    steps = 0
    calm = 0
    while state.t < ctl.t_end - 1e-15:
        if rec["fH2"] < ctl.stop_tol ** 2:
            trace.termination = "stationary"
            return trace, state
        if steps >= ctl.max_steps:
            trace.termination = "max_steps"
            return trace, state
        dt_try = min(dt, ctl.t_end - state.t)
        try:
            new = flow_step(state, op, dt_try)
            new_rec = compute_f_and_monitors(new, op)
            drift = abs(new_rec["E"] / rec["E"] - 1.0)
        except PositivityLossError:
            trace.termination = "positivity_loss"
            return trace, state
        if drift > ctl.e_drift_tol and dt_try > ctl.dt_min:
            dt = 0.5 * dt_try
            calm = 0
            if dt < ctl.dt_min:
                trace.termination = "dt_underflow"
                return trace, state
            continue
        state, rec = new, new_rec
        trace.append(rec, dt_try)
        steps += 1
        # grow dt after a calm stretch (bounded by dt_max, deterministic)
        if drift < 0.25 * ctl.e_drift_tol and dt < ctl.dt_max:
            calm += 1
            if calm >= 20:
                dt = min(2.0 * dt, ctl.dt_max)
                calm = 0
        else:
            calm = 0
    trace.termination = "t_end"
    return trace, state


# -- initial conditions ------------------------------------------------------
def constant_state(op: ZonalOperator, value: float = 1.0) -> ZonalState:
    # constants are exactly representable: only the k=0 coefficient is
    # nonzero (going through to_coeffs would seed every high mode with
    # quadrature roundoff that the lam weights then amplify)
    c = np.zeros(op.K)
    c[0] = value / float(op.psi[0, 0])
    return ZonalState(coeffs=c)

def zonal_perturbed_state(op: ZonalOperator, amplitude: float = 0.1,
                          degree: int = 2) -> ZonalState:
    vals = 1.0 + amplitude * op.psi[degree] / np.max(np.abs(op.psi[degree]))
    return ZonalState(coeffs=op.to_coeffs(vals))


def lojasiewicz_fit(trace: FlowTrace, tail: int = 40,
                    f_floor: float = 1e-14) -> dict:
    """Regress log(F - F_inf) on log ||f||_{W^{2,2}} over the trace tail.

    F_inf is the final quotient value.  Returns slope s_hat, gamma_hat =
    s_hat - 1, theta_hat = gamma_hat/(1+gamma_hat), and R^2.
    """
    F = np.asarray(trace.F)
    fH2 = np.asarray(trace.fH2)
    if len(F) < tail + 1:
        raise ValueError("trace too short for the requested tail")
    f_norm = np.sqrt(np.maximum(fH2, 0.0))
    # Using the last sample as F_inf biases the tail (the gap is truncated
    # to zero there, which steepens the apparent slope).  The quotient
    # decreases geometrically near a stationary point, so the remaining
    # decrease beyond the trace is the geometric-series extrapolation of
    # the final differences.
    # the final sample can come from a tiny partial step hitting t_end, so
    # it is excluded from the geometric ladder (its difference is not a
    # full-step decrement)
    base = F[:-1]
    F_inf = base[-1]
    remaining = 0.0
    diff_floor = 30.0 * np.finfo(float).eps * max(abs(base[-1]), 1.0)
    for stride in (1, 2, 4, 8, 16, 32, 64):
        if len(base) < 34 * stride:
            break
        y = base[::-1][::stride][::-1][-33:]
        d = y[:-1] - y[1:]
        if np.all(d > 0.0) and float(np.median(d)) > diff_floor:
            r = float(np.median(d[1:] / d[:-1]))
            if 0.0 < r < 1.0:
                remaining = float(d[-1]) * r / (1.0 - r)
                F_inf = base[-1] - remaining
            break
    gap = F[:-1] - F_inf
    fn = f_norm[:-1]
    # F - F_inf saturates at roundoff near the end; fit the last `tail`
    # samples that still sit above that floor and above the extrapolation
    # uncertainty (a few percent of the correction itself).
    gap_floor = max(1e3 * np.finfo(float).eps * abs(F_inf), f_floor,
                    0.1 * remaining)
    valid = np.flatnonzero((gap > gap_floor) & (fn > f_floor))
    if len(valid) < max(8, tail // 2):
        raise FloatingPointError(
            "degenerate fit: F - F_inf at floating noise over the tail")
    sel = np.zeros(len(gap), dtype=bool)
    sel[valid[-tail:]] = True
    xs = np.log(fn[sel])
    ys = np.log(gap[sel])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    gamma = slope - 1.0
    return {"slope": float(slope), "gamma": float(gamma),
            "theta": float(gamma / (1.0 + gamma)), "r2": r2,
            "samples": int(np.count_nonzero(sel))}
