"""Random-walk Metropolis on tempered posteriors exp(-beta n L_n(w)) phi(w).

The step size is tuned by a Robbins-Monro update on log(step) during
burn-in and frozen afterwards, so the retained draws come from a fixed
Markov kernel.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import AdaptationError, ConfigError, ContractError, InitError, NumericalError
from .models import Dataset, Model

_BLOCK = 4096


# --------------------------------------------------------------------------
# Small numerics shared by estimators
# --------------------------------------------------------------------------


def log_mean_exp(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(logsumexp(v) - math.log(v.size))


def batch_means_mcse(values) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means.

    Uses floor(sqrt(R)) batches; the earliest R mod batches values are
    dropped from the batching (not from the mean).  Falls back to the
    i.i.d. formula when fewer than four values are available.
    """
    v = np.asarray(values, dtype=float)
    R = v.size
    if R < 2:
        return 0.0
    if np.all(v == v[0]):
        return 0.0
    if R < 4:
        return float(np.std(v, ddof=1) / math.sqrt(R))
    a = int(math.isqrt(R))
    b = R // a
    batches = v[R - a * b:].reshape(a, b).mean(axis=1)
    var = b * float(np.sum((batches - batches.mean()) ** 2)) / (a - 1)
    return math.sqrt(var / R)


def effective_sample_size(values) -> float:
    """ESS by Geyer's initial positive sequence estimator.

    Returns a value in (0, len(values)]; constant input returns the length.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 10:
        raise ConfigError("effective_sample_size needs at least 10 values")
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return float(n)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    rho = acov / acov[0]
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}; keep the initial positive run
    # and force it monotone
    m = (n - 1) // 2
    gamma = rho[0: 2 * m: 2] + rho[1: 2 * m + 1: 2]
    tau = -1.0
    prev = math.inf
    for g in gamma:
        if g <= 0.0:
            break
        g = min(g, prev)
        tau += 2.0 * g
        prev = g
    tau = max(tau, 1.0 / n)
    return float(min(n, n / tau))


def weight_ess(log_weights) -> float:
    """(sum w)^2 / sum w^2 for unnormalized log weights."""
    lw = np.asarray(log_weights, dtype=float)
    return float(math.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


# --------------------------------------------------------------------------
# Configuration and results
# --------------------------------------------------------------------------

SeedLike = Union[int, Sequence[int]]


def derive_seed(seed: SeedLike, *keys: int) -> tuple:
    """Flatten a seed and sub-stream keys into one entropy tuple."""
    base = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    return tuple(int(k) for k in base) + tuple(int(k) for k in keys)


@dataclass(frozen=True)
class TemperedTarget:
    model: Model
    data: Dataset
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ConfigError(f"inverse temperature must be positive and finite, got {self.beta!r}")


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings.

    ``init`` is ``"prior-draw"``, ``"start-point"`` (the model's
    data-informed starting point, e.g. a reduced-rank least squares fit)
    or an explicit parameter vector.
    """

    burn_in: int = 20000
    thin: int = 100
    draws: int = 2000
    step_std_init: float = 0.0012
    target_acceptance: float = 0.4
    adapt: bool = True
    seed: SeedLike = 0
    init: object = "prior-draw"
    n_chains: int = 1

    def __post_init__(self):
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigError("burn_in must be a non-negative integer")
        if int(self.thin) != self.thin or self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if int(self.draws) != self.draws or self.draws < 2:
            raise ConfigError("draws must be >= 2")
        if not (0.0 < self.target_acceptance < 1.0):
            raise ConfigError("target_acceptance must lie in (0, 1)")
        if not (self.step_std_init > 0 and math.isfinite(self.step_std_init)):
            raise ConfigError("step_std_init must be positive")
        if int(self.n_chains) != self.n_chains or self.n_chains < 1:
            raise ConfigError("n_chains must be >= 1")
        if isinstance(self.init, str) and self.init not in ("prior-draw", "start-point"):
            raise ConfigError(f"unknown init {self.init!r}")

    @classmethod
    def paper(cls, **overrides) -> "ChainConfig":
        """Published experiment settings (fixed proposal std 0.0012)."""
        base = dict(burn_in=50000, thin=100, draws=2000, step_std_init=0.0012)
        base.update(overrides)
        return cls(**base)

    def with_seed(self, seed) -> "ChainConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed"] = self.seed if isinstance(self.seed, (int, np.integer)) else list(self.seed)
        if not isinstance(self.init, str):
            d["init"] = [float(v) for v in np.asarray(self.init)]
        return d


@dataclass(frozen=True)
class ChainDiagnostics:
    acceptance_rate: float
    burn_in_acceptance: float
    step_std_final: float


@dataclass(eq=False)
class Chain:
    """Retained draws of one or more pooled Metropolis chains."""

    beta: float
    draws: np.ndarray
    nll: np.ndarray
    acceptance_rate: float
    step_std_final: float
    seed: SeedLike
    model_fingerprint: str
    data_fingerprint: str
    n: int
    chain_index: np.ndarray
    diagnostics: list
    config: Optional[ChainConfig] = None
    elapsed: float = 0.0
    model: Optional[Model] = field(default=None, repr=False)

    @property
    def R(self) -> int:
        return self.nll.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.draws).tobytes())
        h.update(np.ascontiguousarray(self.nll).tobytes())
        h.update(repr(float(self.beta)).encode())
        return h.hexdigest()[:16]

    def metadata(self, timing: bool = True) -> dict:
        meta = {
            "beta": float(self.beta),
            "n": int(self.n),
            "draws": int(self.R),
            "dim": int(self.dim),
            "acceptance_rate": float(self.acceptance_rate),
            "step_std_final": float(self.step_std_final),
            "seed": self.seed if isinstance(self.seed, (int, np.integer)) else list(self.seed),
            "model_fingerprint": self.model_fingerprint,
            "data_fingerprint": self.data_fingerprint,
            "chain_fingerprint": self.fingerprint(),
            "per_chain": [asdict(dg) for dg in self.diagnostics],
            "config": self.config.to_dict() if self.config is not None else None,
        }
        if timing:
            meta["timing"] = {"seconds": float(self.elapsed)}
        return meta

    def save(self, path, fmt: str = "csv") -> None:
        """Write draws as CSV (index, w0.., nll) or .npz plus a JSON sidecar."""
        path = str(path)
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["draw"] + [f"w{j}" for j in range(self.dim)] + ["nll"])
                for r in range(self.R):
                    writer.writerow([r] + [repr(float(v)) for v in self.draws[r]] + [repr(float(self.nll[r]))])
        elif fmt == "npz":
            with open(path, "wb") as fh:
                np.savez(fh, draws=self.draws, nll=self.nll, chain_index=self.chain_index)
        else:
            raise ConfigError(f"unknown chain format {fmt!r}")
        with open(path + ".json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, fmt: str = "csv") -> "Chain":
        path = str(path)
        with open(path + ".json") as fh:
            meta = json.load(fh)
        if fmt == "csv":
            rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            draws, nll = rows[:, 1:-1], rows[:, -1]
            index = np.zeros(len(nll), dtype=int)
        else:
            with np.load(path) as z:
                draws, nll, index = z["draws"], z["nll"], z["chain_index"]
        diags = [ChainDiagnostics(**d) for d in meta["per_chain"]]
        seed = meta["seed"] if isinstance(meta["seed"], int) else tuple(meta["seed"])
        return cls(
            beta=meta["beta"], draws=draws, nll=nll,
            acceptance_rate=meta["acceptance_rate"], step_std_final=meta["step_std_final"],
            seed=seed, model_fingerprint=meta["model_fingerprint"],
            data_fingerprint=meta["data_fingerprint"], n=meta["n"],
            chain_index=index, diagnostics=diags,
        )


# --------------------------------------------------------------------------
# Sampler
# --------------------------------------------------------------------------


def _initial_point(model, data, config, rng):
    init = config.init
    if isinstance(init, str):
        if init == "start-point":
            w = model.starting_point(data)
            if w is None:
                raise ConfigError(f"{model.family} model has no data-informed starting point")
            return np.array(w, dtype=float)
        return np.asarray(model.sample_prior(rng), dtype=float).reshape(model.dim)
    w = np.array(init, dtype=float).reshape(-1)
    if w.shape != (model.dim,):
        raise ConfigError(f"init has length {w.size}, model dimension is {model.dim}")
    return w


def _run_one(target: TemperedTarget, config: ChainConfig, entropy: tuple):
    model, data, beta = target.model, target.data, float(target.beta)
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    nll_fn = model.nll_fn(data)
    log_prior = model.log_prior
    d = model.dim

    w = _initial_point(model, data, config, rng)
    e = float(nll_fn(w))
    lp = float(log_prior(w))
    if not (math.isfinite(e) and math.isfinite(lp)):
        raise InitError(f"target log density is not finite at the initial point (nll={e}, log prior={lp})")

    burn, thin, R = int(config.burn_in), int(config.thin), int(config.draws)
    total = burn + thin * R
    out_w = np.empty((R, d))
    out_e = np.empty(R)
    log_step = math.log(config.step_std_init)
    step = config.step_std_init
    target_acc = config.target_acceptance
    adapt = config.adapt
    bounded = model.bounds is not None
    acc_burn = acc_keep = 0
    kept = 0

    t = 0
    while t < total:
        m = min(_BLOCK, total - t)
        z = rng.standard_normal((m, d))
        logu = np.log(rng.random(m))
        for i in range(m):
            prop = w + step * z[i]
            ok = False
            if not bounded or model.in_support(prop):
                lp_new = log_prior(prop)
                if lp_new > -math.inf:
                    e_new = nll_fn(prop)
                    log_ratio = -beta * (e_new - e) + (lp_new - lp)
                    # NaN compares False, so a NaN proposal is rejected
                    if logu[i] < log_ratio:
                        w, e, lp = prop, e_new, lp_new
                        ok = True
            if t < burn:
                acc_burn += ok
                if adapt:
                    log_step += (t + 1) ** -0.6 * ((1.0 if ok else 0.0) - target_acc)
                    step = math.exp(log_step)
            else:
                acc_keep += ok
                j = t - burn + 1
                if j % thin == 0:
                    out_w[kept] = w
                    out_e[kept] = e
                    kept += 1
            t += 1

    if burn > 0 and acc_burn == 0:
        raise AdaptationError("no proposal was accepted during burn-in; step size or initial point is unusable")
    diag = ChainDiagnostics(
        acceptance_rate=acc_keep / (thin * R),
        burn_in_acceptance=acc_burn / burn if burn else float("nan"),
        step_std_final=step,
    )
    return out_w, out_e, diag


def run_chain(target: TemperedTarget, config: ChainConfig) -> Chain:
    """Sample the tempered posterior of ``target``.

    With ``config.n_chains > 1`` independent chains (seeds derived from
    ``config.seed`` and the chain index) are concatenated.
    """
    start = time.perf_counter()
    parts = [_run_one(target, config, derive_seed(config.seed, c)) for c in range(config.n_chains)]
    draws = np.concatenate([p[0] for p in parts])
    nll = np.concatenate([p[1] for p in parts])
    diags = [p[2] for p in parts]
    index = np.repeat(np.arange(config.n_chains), config.draws)
    return Chain(
        beta=float(target.beta),
        draws=draws,
        nll=nll,
        acceptance_rate=float(np.mean([dg.acceptance_rate for dg in diags])),
        step_std_final=float(diags[0].step_std_final) if len(diags) == 1 else float(np.mean([dg.step_std_final for dg in diags])),
        seed=config.seed,
        model_fingerprint=target.model.fingerprint(),
        data_fingerprint=target.data.fingerprint(),
        n=target.data.n,
        chain_index=index,
        diagnostics=diags,
        config=config,
        elapsed=time.perf_counter() - start,
        model=target.model,
    )


def posterior_expectation(chain: Chain, g: Callable[[np.ndarray], float]):
    """(mean, batch-means mcse) of g over the retained draws."""
    if chain.R == 0:
        raise ContractError("empty chain")
    values = np.array([g(w) for w in chain.draws], dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(f"g is not finite at draw {bad[0]}", index=int(bad[0]))
    return float(values.mean()), batch_means_mcse(values)
