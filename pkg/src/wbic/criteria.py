"""Information criteria: WBIC, WAIC, BIC, AIC, baselining and selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import ConfigError, ContractError, OptimizationError
from .mcmc import Chain, batch_means_mcse, derive_seed
from .models import Dataset, Model, empirical_log_loss

BETA_TOL = 1e-12
TIE_TOL = 1e-9


@dataclass(frozen=True)
class WaicResult:
    t_n: float
    v_n: float
    value: float
    mcse: float


@dataclass
class CriterionReport:
    label: str
    dim: int
    n: int
    wbic: float
    wbic_mcse: float = 0.0
    waic: Optional[WaicResult] = None
    bic: Optional[float] = None
    aic: Optional[float] = None
    wbic1: Optional[float] = None
    dataset_fingerprint: str = ""
    chain_fingerprints: list = field(default_factory=list)

    def __post_init__(self):
        if not math.isfinite(self.wbic):
            raise ContractError("wbic must be finite")
        if self.wbic_mcse < 0:
            raise ContractError("mcse must be non-negative")

    def to_dict(self) -> dict:
        d = {
            "label": self.label, "dim": self.dim, "n": self.n,
            "wbic": self.wbic, "wbic_mcse": self.wbic_mcse,
            "bic": self.bic, "aic": self.aic, "wbic1": self.wbic1,
            "dataset_fingerprint": self.dataset_fingerprint,
            "chain_fingerprints": list(self.chain_fingerprints),
        }
        if self.waic is not None:
            d["waic"] = {"t_n": self.waic.t_n, "v_n": self.waic.v_n, "value": self.waic.value, "mcse": self.waic.mcse}
        return d


def wbic_beta(n: int) -> float:
    if n < 3:
        raise ContractError("WBIC needs n >= 3 so that 1/log n < 1")
    return 1.0 / math.log(n)


def wbic(chain: Chain, n: Optional[int] = None):
    """Mean of n L_n over a chain at beta = 1/log n, with its batch-means mcse."""
    n = chain.n if n is None else int(n)
    expected = wbic_beta(n)
    if abs(chain.beta - expected) > BETA_TOL:
        raise ContractError(f"WBIC needs a chain at beta = 1/log n = {expected!r}, got {chain.beta!r}")
    return float(np.mean(chain.nll)), batch_means_mcse(chain.nll)


def waic(chain: Chain, data: Dataset, model: Optional[Model] = None) -> WaicResult:
    """T_n + V_n / n from an untempered (beta = 1) posterior chain."""
    if abs(chain.beta - 1.0) > BETA_TOL:
        raise ContractError(f"WAIC is defined at beta = 1, chain has beta = {chain.beta!r}")
    model = model if model is not None else chain.model
    if model is None:
        raise ContractError("waic needs the model that produced the chain")
    n, R = data.n, chain.R
    ll = np.empty((R, n))
    for r in range(R):
        ll[r] = model.loglik_records(chain.draws[r], data)
    lppd = logsumexp(ll, axis=0) - math.log(R)
    t_n = -float(np.mean(lppd))
    mean_ll = ll.mean(axis=0)
    centered = ll - mean_ll
    v_n = float(np.sum(np.mean(centered**2, axis=0)))
    # linearized per-draw contributions for a batch-means error estimate
    ratio = np.exp(ll - lppd)
    psi = -ratio.mean(axis=1) + np.mean(centered**2, axis=1)
    return WaicResult(t_n, v_n, t_n + v_n / n, batch_means_mcse(psi))


def fit_map_or_mle(model: Model, data: Dataset, mode: str = "mle", restarts: int = 4, seed=0, tol: float = 1e-8):
    """Multi-start derivative-free minimization of L_n (or L_n - log(phi)/n).

    Starts are the model's data-informed starting point (if any) followed
    by ``restarts`` prior draws.  Nelder-Mead is used up to 10 parameters,
    Powell above.  Models whose starting point is the exact maximum
    likelihood estimate (``closed_form_mle``) skip the search in mle mode.
    """
    if mode not in ("mle", "map"):
        raise ConfigError("mode must be 'mle' or 'map'")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    n = data.n
    nll = model.nll_fn(data)

    def objective(w):
        v = nll(w) / n
        if mode == "map":
            v -= model.log_prior(w) / n
        return v if math.isfinite(v) else 1e300

    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, 7)))
    starts = []
    hint = model.starting_point(data)
    if hint is not None:
        starts.append(np.asarray(hint, dtype=float))
    starts += [np.asarray(model.sample_prior(rng), dtype=float).reshape(model.dim) for _ in range(restarts)]

    if model.dim == 0:
        return np.zeros(0)
    if mode == "mle" and getattr(model, "closed_form_mle", False) and model.bounds is None:
        return starts[0]
    best = None
    for x0 in starts:
        if model.dim <= 10:
            res = optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"xatol": tol, "fatol": tol * 1e-4, "maxiter": 200000, "maxfev": 400000, "adaptive": True},
            )
        else:
            res = optimize.minimize(
                objective, x0, method="Powell",
                options={"xtol": tol, "ftol": tol * 1e-4, "maxiter": 200000, "maxfev": 2000000},
            )
        # one polishing restart from the endpoint guards against simplex collapse
        if res.success and model.dim <= 10:
            res2 = optimize.minimize(
                objective, res.x, method="Nelder-Mead",
                options={"xatol": tol, "fatol": tol * 1e-4, "maxiter": 200000, "maxfev": 400000, "adaptive": True},
            )
            if res2.success and res2.fun <= res.fun:
                res = res2
        # 1e300 marks a non-finite objective, so such an endpoint is a failure
        if res.success and res.fun < 1e299 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizationError("no optimization start converged")
    return np.asarray(best.x, dtype=float)


def bic(model: Model, data: Dataset, w_hat) -> float:
    return data.n * empirical_log_loss(model, w_hat, data) + 0.5 * model.dim * math.log(data.n)


def aic(model: Model, data: Dataset, w_hat) -> float:
    return empirical_log_loss(model, w_hat, data) + model.dim / data.n


def baseline_reports(reports: Sequence[CriterionReport], s_n: Optional[float] = None, baseline_label: Optional[str] = None):
    """Table rows with WBIC1 = WBIC - n S_n and WBIC2 = WBIC - reference WBIC.

    The reference is the smallest WBIC unless ``baseline_label`` names a
    specific report (e.g. the true model when it is known).
    """
    if not reports:
        raise ContractError("need at least one report")
    prints = {r.dataset_fingerprint for r in reports}
    if len(prints) > 1:
        raise ContractError("reports come from different datasets")
    if baseline_label is None:
        ref = min(r.wbic for r in reports)
    else:
        matches = [r.wbic for r in reports if r.label == baseline_label]
        if not matches:
            raise ContractError(f"no report labelled {baseline_label!r}")
        ref = matches[0]
    rows = []
    for r in reports:
        row = {"label": r.label, "dim": r.dim, "wbic": r.wbic, "wbic_mcse": r.wbic_mcse, "wbic2": r.wbic - ref}
        if s_n is not None:
            row["wbic1"] = r.wbic - r.n * s_n
        rows.append(row)
    return rows


def select_model(reports: Sequence[CriterionReport]) -> str:
    """Label of the smallest WBIC; near-ties go to the smaller dimension."""
    if len(reports) < 1:
        raise ContractError("need reports to select from")
    low = min(r.wbic for r in reports)
    tied = [r for r in reports if r.wbic - low <= TIE_TOL]
    return min(tied, key=lambda r: r.dim).label
