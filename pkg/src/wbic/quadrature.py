"""Brute-force trapezoid integration of tempered-posterior quantities.

Only meant as an oracle for low-dimensional models.  All sums are taken
in log space, chunk by chunk in a fixed order, so results are
reproducible to the last bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import BoundaryWarning, ConfigError, UnsupportedError
from .models import Dataset, Model

MAX_DIM = 4
MAX_POINTS = 10**8
_CHUNK = 1 << 18


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    points: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        pts = tuple(int(v) for v in np.atleast_1d(self.points))
        if not (len(lo) == len(hi) == len(pts)) or not lo:
            raise ConfigError("grid bounds and point counts must have one entry per dimension")
        for a, b, p in zip(lo, hi, pts):
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise ConfigError("grid bounds must be finite with lower < upper")
            if p < 16:
                raise ConfigError("need at least 16 grid points per dimension")
        if math.prod(pts) > MAX_POINTS:
            raise ConfigError(f"grid has {math.prod(pts)} points, limit is {MAX_POINTS}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return len(self.points)

    @classmethod
    def around(cls, center, half_width, points=401) -> "GridSpec":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        half = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
        return cls(tuple(center - half), tuple(center + half), tuple(np.broadcast_to(points, center.shape)))

    def axes(self):
        return [np.linspace(a, b, p) for a, b, p in zip(self.lower, self.upper, self.points)]


def default_grid(model: Model, points: int = 401, width: float = 8.0) -> GridSpec:
    """Prior mean +/- ``width`` prior std in every coordinate."""
    std = getattr(model, "prior_std", None)
    if std is None:
        raise ConfigError("default grid needs a model with an isotropic prior_std")
    return GridSpec.around(np.zeros(model.dim), width * std, points)


class GridValue(float):
    """A float carrying convergence diagnostics of the grid that produced it.

    ``refinement`` is the difference to the same integral on the
    half-resolution subgrid; ``boundary_fraction`` is the share of
    integrand mass in boundary cells.
    """

    refinement: float
    boundary_fraction: float
    boundary_warning: bool

    def __new__(cls, value, refinement=float("nan"), boundary_fraction=0.0):
        obj = super().__new__(cls, value)
        obj.refinement = float(refinement)
        obj.boundary_fraction = float(boundary_fraction)
        obj.boundary_warning = boundary_fraction > 0.01
        return obj


def _trapezoid_weights(axis, stride):
    """Trapezoid weights of the stride-subsampled axis, zero off the subgrid."""
    p = axis.size
    idx = np.arange(0, p, stride)
    w = np.zeros(p)
    h = np.diff(axis[idx])
    w[idx[:-1]] += 0.5 * h
    w[idx[1:]] += 0.5 * h
    with np.errstate(divide="ignore"):
        return np.log(w)


def log_integrate(log_values, grid: GridSpec) -> float:
    """log of the trapezoid integral of exp(log_values) over ``grid``.

    ``log_values`` has shape ``grid.points``.
    """
    lv = np.asarray(log_values, dtype=float).reshape(grid.points)
    lw = sum(np.ix_(*[_trapezoid_weights(a, 1) for a in grid.axes()]))
    return float(logsumexp(lv + lw))


def _check(model, grid):
    if model.dim > MAX_DIM:
        raise UnsupportedError(f"quadrature supports dim <= {MAX_DIM}, model has {model.dim}")
    if grid.dim != model.dim:
        raise ConfigError(f"grid has {grid.dim} dimensions, model has {model.dim}")


def _grid_pass(model: Model, data: Dataset, beta: float, grid: GridSpec):
    """One pass over the grid; returns log-sum accumulators.

    Keys: full/half grid log mass, full/half log of sum(mass * nll),
    boundary log mass.
    """
    _check(model, grid)
    axes = grid.axes()
    full_w = [_trapezoid_weights(a, 1) for a in axes]
    half_w = [_trapezoid_weights(a, 2) for a in axes]
    edge = [np.isin(np.arange(a.size), (0, a.size - 1)) for a in axes]
    shape = grid.points
    total = math.prod(shape)
    acc = {k: [] for k in ("full", "half", "full_e", "half_e", "edge")}
    beta = float(beta)
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(total, start + _CHUNK))
        idx = np.unravel_index(flat, shape)
        W = np.column_stack([a[i] for a, i in zip(axes, idx)])
        lp = model.log_prior_batch(W)
        if beta != 0.0:
            nll = model.nll_batch(W, data)
            base = lp - beta * nll
        else:
            nll = None
            base = lp
        lf = base + sum(w[i] for w, i in zip(full_w, idx))
        lh = base + sum(w[i] for w, i in zip(half_w, idx))
        on_edge = np.zeros(flat.size, dtype=bool)
        for e, i in zip(edge, idx):
            on_edge |= e[i]
        acc["full"].append(logsumexp(lf))
        acc["half"].append(logsumexp(lh))
        acc["edge"].append(logsumexp(lf[on_edge]) if on_edge.any() else -np.inf)
        if nll is None:
            nll = model.nll_batch(W, data)
        # nll may be negative for densities > 1; signed log-sum-exp keeps it exact
        acc["full_e"].append(logsumexp(lf, b=nll, return_sign=True))
        acc["half_e"].append(logsumexp(lh, b=nll, return_sign=True))
    out = {}
    for k in ("full", "half", "edge"):
        out[k] = float(logsumexp(acc[k]))
    for k in ("full_e", "half_e"):
        vals = np.array([v for v, s in acc[k]])
        signs = np.array([s for v, s in acc[k]])
        out[k] = logsumexp(vals, b=signs, return_sign=True)
    return out


def _boundary(acc):
    frac = math.exp(acc["edge"] - acc["full"]) if acc["full"] > -math.inf else 0.0
    if frac > 0.01:
        warnings.warn(f"{100 * frac:.2f}% of the integrand mass lies in boundary cells; widen the grid", BoundaryWarning, stacklevel=3)
    return frac


def grid_log_partition(model: Model, data: Dataset, beta: float, grid: GridSpec) -> GridValue:
    """log of the integral of exp(-beta n L_n(w)) phi(w) dw (minus the free energy at beta = 1)."""
    acc = _grid_pass(model, data, beta, grid)
    frac = _boundary(acc)
    return GridValue(acc["full"], refinement=acc["full"] - acc["half"], boundary_fraction=frac)


def grid_expected_nll(model: Model, data: Dataset, beta: float, grid: GridSpec) -> GridValue:
    """E^beta[n L_n(w)] as a ratio of two grid integrals from one pass."""
    acc = _grid_pass(model, data, beta, grid)
    frac = _boundary(acc)
    val_f, sign_f = acc["full_e"]
    val_h, sign_h = acc["half_e"]
    full = float(sign_f * math.exp(val_f - acc["full"]))
    half = float(sign_h * math.exp(val_h - acc["half"]))
    return GridValue(full, refinement=full - half, boundary_fraction=frac)
