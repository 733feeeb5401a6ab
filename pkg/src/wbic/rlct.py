"""Real log canonical threshold estimates from tempered expectations.

All estimators use that E^beta[n L_n] ~ n L_n(w0) + lambda / beta when
beta is of order 1/log n, so lambda is the slope against 1/beta.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateWeightsError, LowEssWarning
from .free_energy import CurvePoint
from .mcmc import Chain, batch_means_mcse, weight_ess

DISTINCT_TOL = 1e-12
LOW_ESS = 50.0
MIN_ESS = 10.0


@dataclass
class RlctEstimate:
    lambda_hat: float
    std_error: float
    beta1: float
    beta2: float
    method: str
    intercept: Optional[float] = None
    ess: Optional[float] = None
    theory: Optional[tuple] = None
    low_ess: bool = False

    def to_dict(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "std_error": self.std_error,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "method": self.method,
            "intercept": self.intercept,
            "ess": self.ess,
            "theory": None if self.theory is None else {"lambda": self.theory[0], "m": self.theory[1]},
        }


def _as_point(p) -> CurvePoint:
    if isinstance(p, CurvePoint):
        return p
    p = tuple(p)
    return CurvePoint(float(p[0]), float(p[1]), float(p[2]) if len(p) > 2 else 0.0)


def _check_pair(b1, b2):
    if not (b1 > 0 and b2 > 0):
        raise ContractError("inverse temperatures must be positive")
    if abs(b1 - b2) < DISTINCT_TOL:
        raise ContractError(f"inverse temperatures {b1!r} and {b2!r} are not distinct")


def rlct_two_chain(p1, p2) -> RlctEstimate:
    """Two-point slope (E1 - E2) / (1/b1 - 1/b2).

    Points are ``(beta, mean[, mcse])`` tuples or :class:`CurvePoint`.
    """
    p1, p2 = _as_point(p1), _as_point(p2)
    _check_pair(p1.beta, p2.beta)
    if not (math.isfinite(p1.mean) and math.isfinite(p2.mean)):
        raise ContractError("expectations must be finite")
    denom = 1.0 / p1.beta - 1.0 / p2.beta
    lam = (p1.mean - p2.mean) / denom
    se = math.hypot(p1.mcse, p2.mcse) / abs(denom)
    intercept = p1.mean - lam / p1.beta
    return RlctEstimate(lam, se, p1.beta, p2.beta, "two-chain", intercept=intercept)


def reweighted_expectation(nll, beta1: float, beta2: float):
    """Self-normalized estimate of E^{beta2}[n L_n] from draws at beta1.

    Returns ``(mean, log_weights)``.
    """
    nll = np.asarray(nll, dtype=float)
    lw = -(beta2 - beta1) * nll
    lw = lw - lw.max()
    w = np.exp(lw)
    return float(np.dot(w, nll) / w.sum()), lw


def rlct_reweighted(chain: Chain, beta2: float) -> RlctEstimate:
    """Single-chain estimate: the second temperature is reached by importance reweighting."""
    beta1 = float(chain.beta)
    _check_pair(beta1, float(beta2))
    e = np.asarray(chain.nll, dtype=float)
    m1 = float(e.mean())
    m2, lw = reweighted_expectation(e, beta1, beta2)
    ess = weight_ess(lw)
    if ess < MIN_ESS:
        raise DegenerateWeightsError(f"importance weight ESS {ess:.1f} < {MIN_ESS:g}; use two chains instead")
    low = ess < LOW_ESS
    if low:
        warnings.warn(f"importance weight ESS {ess:.1f} is below {LOW_ESS:g}", LowEssWarning, stacklevel=2)
    denom = 1.0 / beta1 - 1.0 / beta2
    lam = (m1 - m2) / denom
    # linearize lambda in the per-draw values and take batch means of the influence
    w = np.exp(lw)
    w = w / w.mean()
    psi = (e - w * (e - m2)) / denom
    se = batch_means_mcse(psi)
    return RlctEstimate(lam, se, beta1, float(beta2), "reweight", intercept=m1 - lam / beta1, ess=ess, low_ess=low)


def rlct_regression(curve: Sequence) -> RlctEstimate:
    """Weighted least squares of E^beta[n L_n] on 1/beta; the slope is lambda.

    Weights are 1/mcse^2 when every point has a positive mcse, otherwise
    the fit is unweighted.  Two points reduce to :func:`rlct_two_chain`.
    """
    pts = [_as_point(p) for p in curve]
    if len(pts) < 2:
        raise ContractError("need at least two points")
    betas = np.array([p.beta for p in pts])
    if len(np.unique(betas)) != len(betas):
        raise ContractError("betas must be distinct")
    if len(pts) == 2:
        est = rlct_two_chain(pts[0], pts[1])
        est.method = "regression"
        return est
    y = np.array([p.mean for p in pts])
    s = np.array([p.mcse for p in pts])
    X = np.column_stack([np.ones_like(betas), 1.0 / betas])
    weighted = bool(np.all(s > 0))
    wts = 1.0 / s**2 if weighted else np.ones_like(y)
    XtW = X.T * wts
    cov = np.linalg.inv(XtW @ X)
    coef = cov @ (XtW @ y)
    if not weighted:
        resid = y - X @ coef
        dof = len(y) - 2
        cov = cov * (float(resid @ resid) / dof if dof > 0 else 0.0)
    return RlctEstimate(
        float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0))),
        float(betas.min()), float(betas.max()), "regression", intercept=float(coef[0]),
    )
