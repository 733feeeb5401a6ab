"""Stepping-stone free energy and the optimal inverse temperature.

The free energy F = -log Z(1) telescopes over a ladder
0 = b_0 < b_1 < ... < b_J = 1 as
    F = -sum_j log E^{b_{j-1}}[exp(-n (b_j - b_{j-1}) L_n(w))].
Each rung is estimated from draws at the lower temperature; the b = 0
rung uses exact prior draws.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BracketError, ConfigError, DegenerateModelError, DegenerateRungError
from .mcmc import (
    ChainConfig,
    TemperedTarget,
    batch_means_mcse,
    derive_seed,
    log_mean_exp,
    run_chain,
    weight_ess,
)
from .models import Dataset, Model

MIN_RUNG_ESS = 10.0


@dataclass(frozen=True)
class TemperatureSchedule:
    betas: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.betas)
        if len(b) < 2:
            raise ConfigError("a schedule needs at least two temperatures")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ConfigError("a schedule must start at 0 and end at 1")
        if any(not (y > x) for x, y in zip(b, b[1:])):
            raise ConfigError("schedule must be strictly increasing")
        object.__setattr__(self, "betas", b)

    @property
    def J(self) -> int:
        return len(self.betas) - 1

    @classmethod
    def power(cls, J: int = 20, exponent: float = 5.0) -> "TemperatureSchedule":
        """b_j = (j/J)^exponent, dense near zero where the integrand changes fastest."""
        if J < 1:
            raise ConfigError("J must be >= 1")
        return cls(tuple([0.0] + [(j / J) ** exponent for j in range(1, J)] + [1.0]))


@dataclass
class FreeEnergyEstimate:
    value: float
    terms: np.ndarray
    term_mcse: np.ndarray
    ess: np.ndarray
    schedule: TemperatureSchedule
    total_steps: int
    seeds: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def mcse(self) -> float:
        return float(math.sqrt(np.sum(self.term_mcse**2)))

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "value": float(self.value),
            "mcse": self.mcse,
            "schedule": list(self.schedule.betas),
            "terms": [float(v) for v in self.terms],
            "term_mcse": [float(v) for v in self.term_mcse],
            "ess": [float(v) for v in self.ess],
            "total_steps": int(self.total_steps),
            "seeds": [list(s) for s in self.seeds],
        }
        if timing:
            d["timing"] = {"seconds": float(self.elapsed)}
        return d


def beta_seed(seed, beta: float) -> tuple:
    """Sub-seed keyed by the bit pattern of beta, so equal temperatures reuse a stream."""
    (bits,) = struct.unpack("<Q", struct.pack("<d", float(beta)))
    return derive_seed(seed, bits)


def _rung_from_values(log_w):
    term = log_mean_exp(log_w)
    ess = weight_ess(log_w)
    w = np.exp(log_w - np.max(log_w))
    mcse = batch_means_mcse(w) / float(np.mean(w))
    return term, mcse, ess


def stepping_stone(
    model: Model,
    data: Dataset,
    schedule: Optional[TemperatureSchedule] = None,
    chain_config: Optional[ChainConfig] = None,
    expectation: Optional[Callable[[float, float], tuple]] = None,
) -> FreeEnergyEstimate:
    """Estimate the Bayes free energy with the all-temperatures ladder.

    ``expectation(beta_prev, dbeta)`` may replace the Monte Carlo rung
    estimate; it must return ``(log E^{beta_prev}[exp(-dbeta n L_n)], mcse, ess)``.
    """
    import time

    schedule = schedule or TemperatureSchedule.power()
    config = chain_config or ChainConfig(burn_in=2000, thin=10, draws=2000, step_std_init=0.1)
    start = time.perf_counter()
    b = schedule.betas
    terms, mcses, esss, seeds = [], [], [], []
    steps = 0
    for j in range(1, len(b)):
        prev, dbeta = b[j - 1], b[j] - b[j - 1]
        if expectation is not None:
            term, mcse, ess = expectation(prev, dbeta)
        else:
            seed = beta_seed(config.seed, prev)
            seeds.append(seed)
            if prev == 0.0:
                rng = np.random.default_rng(np.random.SeedSequence(seed))
                W = np.asarray(model.sample_prior(rng, config.draws * config.n_chains), dtype=float)
                nll = model.nll_batch(W.reshape(-1, model.dim), data)
            else:
                chain = run_chain(TemperedTarget(model, data, prev), config.with_seed(seed))
                nll = chain.nll
                steps += config.n_chains * (config.burn_in + config.thin * config.draws)
            term, mcse, ess = _rung_from_values(-dbeta * nll)
        if not ess >= MIN_RUNG_ESS:
            raise DegenerateRungError(
                f"rung {j} (beta {prev:.3g} -> {b[j]:.3g}) has weight ESS {ess:.1f} < {MIN_RUNG_ESS:g}; refine the schedule",
                rung=j,
            )
        terms.append(term)
        mcses.append(mcse)
        esss.append(ess)
    terms = np.array(terms)
    return FreeEnergyEstimate(
        value=-float(math.fsum(terms)),
        terms=terms,
        term_mcse=np.array(mcses),
        ess=np.array(esss),
        schedule=schedule,
        total_steps=steps,
        seeds=seeds,
        elapsed=time.perf_counter() - start,
    )


@dataclass(frozen=True)
class CurvePoint:
    beta: float
    mean: float
    mcse: float


def expected_nll_curve(model: Model, data: Dataset, betas: Sequence[float], chain_config: ChainConfig) -> list:
    """E^beta[n L_n] with batch-means mcse, one independent chain per beta."""
    betas = [float(v) for v in betas]
    if any(v <= 0 for v in betas) or any(y <= x for x, y in zip(betas, betas[1:])):
        raise ConfigError("betas must be positive and strictly increasing")
    out = []
    for beta in betas:
        chain = run_chain(TemperedTarget(model, data, beta), chain_config.with_seed(beta_seed(chain_config.seed, beta)))
        out.append(CurvePoint(beta, float(np.mean(chain.nll)), batch_means_mcse(chain.nll)))
    return out


@dataclass(frozen=True)
class OptimalBeta:
    beta_star: float
    beta_star_log_n: float
    interval: tuple
    boundary: bool
    noise_limited: bool
    evaluations: int


def optimal_beta(
    model: Model,
    data: Dataset,
    f_hat: float,
    chain_config: Optional[ChainConfig] = None,
    tol: float = 1e-6,
    curve: Optional[Callable[[float], tuple]] = None,
    bracket: tuple = (1e-6, 1.0),
) -> OptimalBeta:
    """Solve E^beta[n L_n] = f_hat for beta by bisection.

    The curve is decreasing in beta, so bisection is safe.  ``curve``
    maps beta to ``(mean, mcse)``; by default each evaluation runs a fresh
    chain seeded by beta.  Bisection stops when the bracket is narrower
    than ``tol`` or when the residual is within 2 mcse of zero.
    """
    if not tol > 0:
        raise ConfigError("tol must be positive")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0.0 < lo < hi <= 1.0):
        raise ConfigError("bracket must satisfy 0 < lo < hi <= 1")

    rng = np.random.default_rng(12345)
    probe = model.nll_batch(np.asarray(model.sample_prior(rng, 16)).reshape(16, model.dim), data)
    if np.ptp(probe) == 0.0:
        raise DegenerateModelError("L_n is constant in w; the optimal inverse temperature is undefined")

    if curve is None:
        if chain_config is None:
            raise ConfigError("optimal_beta needs a chain_config or an explicit curve")

        def curve(beta):
            chain = run_chain(TemperedTarget(model, data, beta), chain_config.with_seed(beta_seed(chain_config.seed, beta)))
            return float(np.mean(chain.nll)), batch_means_mcse(chain.nll)

    log_n = math.log(data.n)
    evals = 0

    def residual(beta):
        nonlocal evals
        evals += 1
        mean, mcse = curve(beta)
        return mean - f_hat, mcse

    r_hi, s_hi = residual(hi)
    scale = 1e-12 * max(1.0, abs(f_hat))
    if hi == 1.0 and abs(r_hi) <= max(scale, 2.0 * s_hi):
        return OptimalBeta(1.0, log_n, (hi, hi), True, s_hi > 0, evals)
    r_lo, s_lo = residual(lo)
    if r_lo <= 0 or r_hi >= 0:
        raise BracketError(
            f"E^beta[nL_n] - F does not change sign on [{lo}, {hi}] (residuals {r_lo:.4g}, {r_hi:.4g})"
        )
    noisy = False
    mid = 0.5 * (lo + hi)
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        r, s = residual(mid)
        if s > 0 and abs(r) <= 2.0 * s:
            noisy = True
            break
        if r > 0:
            lo = mid
        else:
            hi = mid
        mid = 0.5 * (lo + hi)
    return OptimalBeta(mid, mid * log_n, (lo, hi), False, noisy, evals)
