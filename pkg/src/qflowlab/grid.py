r"""Rectangular chart grids, tensor fields, centered stencils, serialization.

All tensors are stored with every index down; raising is done explicitly with
the pointwise inverse metric.  Derivatives use centered 4th-order stencils
only; values within ``margin`` cells of the boundary are garbage and callers
must restrict to the interior (`interior_slice`).  One-sided stencils are
deliberately not provided: boundary extrapolation pollutes identity tests.

Symmetric 2-tensors keep the n(n+1)/2 independent components in (i<=j)
row-major order; 4-tensors with algebraic curvature symmetries (antisymmetric
in (ij) and (kl), symmetric under pair exchange) are stored on the
antisymmetric-pair index to keep five-dimensional charts affordable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChartGrid", "SymTensorField", "VectorField", "AlgCurvTensor",
    "d1", "d2", "d4_scale", "sym_index", "save_field", "load_field",
    "tensor_header", "DegenerateMetricError", "InsufficientGridError",
]

_MAGIC = b"QTEN\x01"


class DegenerateMetricError(ValueError):
    """Metric failed the pointwise Cholesky positive-definiteness check."""


class InsufficientGridError(ValueError):
    """Grid too small for the requested stencil footprint."""


@dataclass(frozen=True)
class ChartGrid:
    """Uniform rectangular grid on [lo, hi]^n."""

    n: int
    npts: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dim must be >= 2")
        if self.npts < 9:
            raise InsufficientGridError("need >= 9 points per axis for 4th derivatives")
        if not self.hi > self.lo:
            raise ValueError("extent degenerate")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.npts - 1)

    @property
    def shape(self) -> tuple:
        return (self.npts,) * self.n

    def axis(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.npts)

    def coords(self, i: int) -> np.ndarray:
        """Coordinate x_i broadcast over the grid shape."""
        shp = [1] * self.n
        shp[i] = self.npts
        return self.axis().reshape(shp)

    def points(self) -> np.ndarray:
        """All grid points, shape (npts^n, n).  Use sparingly for n <= 3."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_slice(self, margin: int):
        if 2 * margin >= self.npts - 1:
            raise InsufficientGridError(
                f"margin {margin} leaves no interior on {self.npts} points")
        return (slice(margin, self.npts - margin),) * self.n


# ---------------------------------------------------------------------------
# stencils (centered, 4th order); np.roll wraps, the wrap garbage lives inside
# the margin strips which callers exclude.
# ---------------------------------------------------------------------------

def _sh(f, axis, k):
    return np.roll(f, -k, axis=axis)


def d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """4th-order centered first derivative; adds 2 to the margin on `axis`."""
    return (-_sh(f, axis, 2) + 8.0 * _sh(f, axis, 1)
            - 8.0 * _sh(f, axis, -1) + _sh(f, axis, -2)) / (12.0 * h)


def d2(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """4th-order centered second derivative; adds 2 to the margin on `axis`."""
    return (-_sh(f, axis, 2) + 16.0 * _sh(f, axis, 1) - 30.0 * f
            + 16.0 * _sh(f, axis, -1) - _sh(f, axis, -2)) / (12.0 * h * h)


def d4_scale(f: np.ndarray, grid: ChartGrid, margin: int) -> float:
    """Max |4th derivative| over axes and interior, by the width-5 stencil.

    Used by the grid-adaptive tolerance convention
    tol = 10 * h^order * (scale of the field's 4th derivatives).
    """
    h4 = grid.h ** 4
    sl = grid.interior_slice(margin + 2)
    best = 0.0
    for ax in range(grid.n):
        s = (_sh(f, ax, 2) - 4.0 * _sh(f, ax, 1) + 6.0 * f
             - 4.0 * _sh(f, ax, -1) + _sh(f, ax, -2)) / h4
        best = max(best, float(np.max(np.abs(s[sl]))))
    return best


def identity_tol(grid: ChartGrid, scales, order: int = 4, safety: float = 10.0) -> float:
    return safety * grid.h ** order * max(float(s) for s in scales)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

def sym_index(n: int):
    """(i<=j) row-major pair list and the (i,j)->flat lookup table."""
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    lut = np.zeros((n, n), dtype=int)
    for k, (i, j) in enumerate(pairs):
        lut[i, j] = lut[j, i] = k
    return pairs, lut


@dataclass
class SymTensorField:
    """Symmetric 2-tensor sampled on a grid; components (i<=j) row-major."""

    grid: ChartGrid
    comps: np.ndarray  # shape (n(n+1)/2,) + grid.shape
    margin: int = 0

    def __post_init__(self):
        n = self.grid.n
        want = (n * (n + 1) // 2,) + self.grid.shape
        if self.comps.shape != want:
            raise ValueError(f"component array must have shape {want}")

    @classmethod
    def zeros(cls, grid: ChartGrid) -> "SymTensorField":
        n = grid.n
        return cls(grid, np.zeros((n * (n + 1) // 2,) + grid.shape))

    @classmethod
    def from_full(cls, grid: ChartGrid, full: np.ndarray, margin: int = 0):
        n = grid.n
        pairs, _ = sym_index(n)
        comps = np.stack([full[i, j] for (i, j) in pairs])
        return cls(grid, comps, margin)

    def comp(self, i: int, j: int) -> np.ndarray:
        _, lut = sym_index(self.grid.n)
        return self.comps[lut[i, j]]

    def full(self) -> np.ndarray:
        """Materialize shape (n, n) + grid.shape (views where possible)."""
        n = self.grid.n
        _, lut = sym_index(n)
        return self.comps[lut]

    def check_positive_definite(self):
        """Pointwise Cholesky; raises DegenerateMetricError at first failure."""
        n = self.grid.n
        g = np.moveaxis(self.full().reshape(n, n, -1), -1, 0)  # (m, n, n)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            ok = np.array([_is_pd(g[k]) for k in range(g.shape[0])])
            bad = int(np.argmin(ok))
            idx = tuple(int(i) for i in np.unravel_index(bad, self.grid.shape))
            raise DegenerateMetricError(
                f"metric not positive definite; first failure at grid index {idx}")

    def max_abs(self, margin: int | None = None) -> float:
        m = self.margin if margin is None else margin
        sl = (slice(None),) + self.grid.interior_slice(m) if m else (slice(None),)
        return float(np.max(np.abs(self.comps[sl])))


def _is_pd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass
class VectorField:
    grid: ChartGrid
    comps: np.ndarray  # shape (n,) + grid.shape
    margin: int = 0

    def __post_init__(self):
        want = (self.grid.n,) + self.grid.shape
        if self.comps.shape != want:
            raise ValueError(f"component array must have shape {want}")
        if not np.all(np.isfinite(self.comps)):
            raise ValueError("vector field has non-finite entries")


class AlgCurvTensor:
    """4-tensor with curvature symmetries on the antisymmetric-pair index.

    data[a, b] holds T_{ijkl} for ij = pair a (i<j), kl = pair b (k<l);
    data is symmetric in (a, b).  component(i,j,k,l) restores signs.
    """

    def __init__(self, grid: ChartGrid, data: np.ndarray, margin: int = 0):
        self.grid = grid
        self.data = data  # (P, P) + grid.shape
        self.margin = margin
        self.pairs = [(i, j) for i in range(grid.n) for j in range(i + 1, grid.n)]
        self.plut = {}
        for a, (i, j) in enumerate(self.pairs):
            self.plut[(i, j)] = (a, 1.0)
            self.plut[(j, i)] = (a, -1.0)

    @classmethod
    def zeros(cls, grid: ChartGrid) -> "AlgCurvTensor":
        P = grid.n * (grid.n - 1) // 2
        return cls(grid, np.zeros((P, P) + grid.shape))

    def component(self, i, j, k, l) -> np.ndarray:
        if i == j or k == l:
            return np.zeros(self.grid.shape)
        a, sa = self.plut[(i, j)]
        b, sb = self.plut[(k, l)]
        return sa * sb * self.data[a, b]

    def add_component(self, i, j, k, l, value: np.ndarray):
        """Accumulate T_{ijkl} += value (caller supplies i<j, k<l)."""
        a, sa = self.plut[(i, j)]
        b, sb = self.plut[(k, l)]
        self.data[a, b] += sa * sb * value
        if a != b:
            self.data[b, a] += sa * sb * value
        # when a == b the symmetric partner coincides; nothing else to do


# ---------------------------------------------------------------------------
# serialization: magic | uint32 header length | JSON header | float64 C-order
# ---------------------------------------------------------------------------

_KINDS = {"scalar", "sym2", "vector"}


def save_field(path: str, obj, kind: str | None = None,
               grid: ChartGrid | None = None):
    """Write a field to the flat binary container with a JSON header."""
    if isinstance(obj, SymTensorField):
        kind, grid, data, margin = "sym2", obj.grid, obj.comps, obj.margin
    elif isinstance(obj, VectorField):
        kind, grid, data, margin = "vector", obj.grid, obj.comps, obj.margin
    else:
        if kind != "scalar" or grid is None:
            raise ValueError("raw arrays need kind='scalar' and a grid")
        data, margin = np.asarray(obj, dtype=float), 0
    header = {
        "kind": kind,
        "dim": grid.n,
        "points_per_axis": grid.npts,
        "extent": [grid.lo, grid.hi],
        "spacing": grid.h,
        "margin": margin,
        "component_order": "i<=j row-major" if kind == "sym2" else "index order",
        "dtype": "<f8",
        "shape": list(data.shape),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def tensor_header(path: str) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a tensor container (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(hlen).decode())


def load_field(path: str):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a tensor container (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"]).copy()
    grid = ChartGrid(header["dim"], header["points_per_axis"],
                     header["extent"][0], header["extent"][1])
    kind = header["kind"]
    if kind == "sym2":
        return SymTensorField(grid, data, header.get("margin", 0))
    if kind == "vector":
        return VectorField(grid, data, header.get("margin", 0))
    if kind == "scalar":
        return grid, data
    raise ValueError(f"unknown field kind {kind!r}")
