"""Statistical models, datasets and reference values.

A model exposes per-record log likelihoods, a log prior and a prior
sampler.  Everything downstream (samplers, quadrature, criteria) only
needs ``nll_fn(data)``, which returns a callable computing n*L_n(w);
built-in families override it with sufficient-statistic shortcuts so
that a Metropolis step costs O(d) instead of O(n).

The input density r(x) of regression models is parameter free and is
left out of both the likelihood and the empirical entropy.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError, UnavailableError

LOG_2PI = math.log(2.0 * math.pi)


def _fmt(value) -> str:
    return repr(float(value))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# Dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered i.i.d. observations.

    ``y`` holds the observed vectors, shape (n, k).  Regression data also
    carries inputs ``x`` of shape (n, M); plain data leaves it ``None``.
    """

    y: np.ndarray
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise ConfigError("dataset needs at least one record")
        object.__setattr__(self, "y", _frozen(y))
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.ndim != 2 or x.shape[0] != y.shape[0]:
                raise ConfigError("inputs and outputs must have the same number of records")
            object.__setattr__(self, "x", _frozen(x))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def __len__(self):
        return self.n

    def record(self, i):
        if self.x is None:
            return self.y[i]
        return self.x[i], self.y[i]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.y.shape).encode())
        h.update(np.ascontiguousarray(self.y).tobytes())
        if self.x is not None:
            h.update(repr(self.x.shape).encode())
            h.update(np.ascontiguousarray(self.x).tobytes())
        return h.hexdigest()[:16]

    # CSV: x0..x{M-1} then y0..y{N-1}
    def header(self) -> list[str]:
        cols = []
        if self.x is not None:
            cols += [f"x{j}" for j in range(self.x.shape[1])]
        cols += [f"y{j}" for j in range(self.y.shape[1])]
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for i in range(self.n):
                row = [] if self.x is None else [_fmt(v) for v in self.x[i]]
                row += [_fmt(v) for v in self.y[i]]
                writer.writerow(row)

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ConfigError(f"{path}: empty file")
        header, body = rows[0], rows[1:]
        xcols = [i for i, name in enumerate(header) if name.startswith("x")]
        ycols = [i for i, name in enumerate(header) if name.startswith("y")]
        if not ycols or len(xcols) + len(ycols) != len(header):
            raise ConfigError(f"{path}: columns must be x0.. then y0..")
        try:
            values = np.array([[float(v) for v in row] for row in body], dtype=float)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if values.ndim != 2 or values.shape[0] == 0:
            raise ConfigError(f"{path}: no records")
        x = values[:, xcols] if xcols else None
        return cls(y=values[:, ycols], x=x)


# --------------------------------------------------------------------------
# Model interface
# --------------------------------------------------------------------------


class Model:
    """Parametric model p(x|w) with prior phi(w).

    Subclasses implement :meth:`loglik_records`, :meth:`log_prior` and
    :meth:`sample_prior`.  ``bounds`` is an optional (lower, upper) box;
    the prior is treated as zero outside it and samplers reject proposals
    that leave it.
    """

    family = "generic"

    def __init__(self, dim: int, labels: Optional[dict] = None, bounds=None):
        if int(dim) != dim or dim < 0:
            raise ConfigError(f"dimension must be a non-negative integer, got {dim!r}")
        self.dim = int(dim)
        self.labels = dict(labels or {})
        if bounds is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.dim,)).copy() for b in bounds)
            if np.any(lo >= hi):
                raise ConfigError("box constraint needs lower < upper")
            bounds = (lo, hi)
        self.bounds = bounds

    # -- required --------------------------------------------------------
    def loglik_records(self, w, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def log_prior(self, w) -> float:
        raise NotImplementedError

    def sample_prior(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        raise NotImplementedError

    # -- derived ---------------------------------------------------------
    def in_support(self, w) -> bool:
        if self.bounds is None:
            return True
        lo, hi = self.bounds
        return bool(np.all(w >= lo) and np.all(w <= hi))

    def nll(self, w, data: Dataset) -> float:
        """n * L_n(w)."""
        return -float(np.sum(self.loglik_records(w, data)))

    def nll_fn(self, data: Dataset) -> Callable[[np.ndarray], float]:
        return lambda w: self.nll(w, data)

    def nll_batch(self, W, data: Dataset) -> np.ndarray:
        f = self.nll_fn(data)
        return np.array([f(w) for w in np.atleast_2d(W)], dtype=float)

    def log_prior_batch(self, W) -> np.ndarray:
        return np.array([self.log_prior(w) for w in np.atleast_2d(W)], dtype=float)

    def starting_point(self, data: Dataset) -> Optional[np.ndarray]:
        """A data-informed initial parameter, or None if the family has none."""
        return None

    def describe(self) -> dict:
        return {"family": self.family, "dim": self.dim, **self.labels}

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.labels.items())
        return f"{type(self).__name__}({args})"


class FunctionModel(Model):
    """Model assembled from plain callables.

    ``log_likelihood(w, record)`` is called once per record, so this is
    the slow path; it exists for user models that have no vectorized form.
    """

    def __init__(self, dim, log_likelihood, log_prior, sample_prior, labels=None, bounds=None):
        super().__init__(dim, labels, bounds)
        self._loglik = log_likelihood
        self._logprior = log_prior
        self._sampler = sample_prior

    def loglik_records(self, w, data):
        return np.array([self._loglik(w, data.record(i)) for i in range(data.n)], dtype=float)

    def log_prior(self, w):
        if not self.in_support(w):
            return -math.inf
        return float(self._logprior(w))

    def sample_prior(self, rng, size=None):
        if size is None:
            return np.asarray(self._sampler(rng), dtype=float)
        return np.array([self._sampler(rng) for _ in range(size)], dtype=float).reshape(size, self.dim)


class GaussianPriorModel(Model):
    """Mixin-style base for models with an isotropic N(0, prior_std^2 I) prior."""

    def __init__(self, dim, prior_std, labels=None, bounds=None):
        if not prior_std > 0:
            raise ConfigError("prior_std must be positive")
        super().__init__(dim, labels, bounds)
        self.prior_std = float(prior_std)
        self._prior_const = -0.5 * self.dim * (LOG_2PI + 2.0 * math.log(self.prior_std))
        self._prior_scale = 0.5 / self.prior_std**2

    def log_prior(self, w):
        if self.bounds is not None and not self.in_support(w):
            return -math.inf
        return self._prior_const - self._prior_scale * float(np.dot(w, w))

    def log_prior_batch(self, W):
        W = np.atleast_2d(W)
        out = self._prior_const - self._prior_scale * np.einsum("ij,ij->i", W, W)
        if self.bounds is not None:
            lo, hi = self.bounds
            out[~np.all((W >= lo) & (W <= hi), axis=1)] = -np.inf
        return out

    def sample_prior(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.normal(0.0, self.prior_std, size=shape)


# --------------------------------------------------------------------------
# Reduced rank regression
# --------------------------------------------------------------------------


class _RegressionStats:
    __slots__ = ("n", "sxx", "syx", "syy")

    def __init__(self, data: Dataset):
        x, y = data.x, data.y
        self.n = data.n
        self.sxx = x.T @ x
        self.syx = y.T @ x
        self.syy = float(np.sum(y * y))


class ReducedRankModel(GaussianPriorModel):
    """y = B A x + N(0, sigma^2 I_N) with A: H x M and B: N x H.

    Parameters are flattened as A (row-major) followed by B (row-major).
    """

    family = "rrr"
    closed_form_mle = True

    def __init__(self, M, N, H, sigma=0.1, prior_std=10.0, bounds=None):
        for name, v in (("M", M), ("N", N), ("H", H)):
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not sigma > 0:
            raise ConfigError("sigma must be positive")
        self.M, self.N, self.H = int(M), int(N), int(H)
        self.sigma = float(sigma)
        dim = self.H * self.M + self.N * self.H
        labels = dict(M=self.M, N=self.N, H=self.H, sigma=self.sigma, prior_std=float(prior_std))
        super().__init__(dim, prior_std, labels, bounds)
        self._lik_const = 0.5 * self.N * (LOG_2PI + 2.0 * math.log(self.sigma))
        self._stats_cache: dict = {}

    def split(self, w):
        w = np.asarray(w, dtype=float)
        k = self.H * self.M
        return w[:k].reshape(self.H, self.M), w[k:].reshape(self.N, self.H)

    def pack(self, A, B) -> np.ndarray:
        return np.concatenate([np.asarray(A, float).ravel(), np.asarray(B, float).ravel()])

    def _check(self, data):
        if data.x is None or data.x.shape[1] != self.M or data.y.shape[1] != self.N:
            raise ConfigError(f"dataset shape does not match rrr model with M={self.M}, N={self.N}")

    def _stats(self, data):
        key = id(data)
        hit = self._stats_cache.get(key)
        if hit is not None and hit[0] is data:
            return hit[1]
        self._check(data)
        stats = _RegressionStats(data)
        if len(self._stats_cache) > 8:
            self._stats_cache.clear()
        self._stats_cache[key] = (data, stats)
        return stats

    def loglik_records(self, w, data):
        self._check(data)
        A, B = self.split(w)
        resid = data.y - data.x @ (B @ A).T
        return -self._lik_const - 0.5 * np.sum(resid * resid, axis=1) / self.sigma**2

    def nll_fn(self, data):
        s = self._stats(data)
        const = s.n * self._lik_const
        inv2s2 = 0.5 / self.sigma**2
        k, H, M, N = self.H * self.M, self.H, self.M, self.N
        sxx, syx, syy = s.sxx, s.syx, s.syy

        def nll(w):
            C = w[k:].reshape(N, H) @ w[:k].reshape(H, M)
            quad = syy - 2.0 * np.sum(C * syx) + np.sum((C @ sxx) * C)
            return const + inv2s2 * quad

        return nll

    def nll(self, w, data):
        return self.nll_fn(data)(np.asarray(w, dtype=float))

    def nll_batch(self, W, data):
        s = self._stats(data)
        W = np.atleast_2d(W)
        k = self.H * self.M
        A = W[:, :k].reshape(-1, self.H, self.M)
        B = W[:, k:].reshape(-1, self.N, self.H)
        C = B @ A
        quad = s.syy - 2.0 * np.einsum("gij,ij->g", C, s.syx) + np.einsum("gij,jk,gik->g", C, s.sxx, C)
        return s.n * self._lik_const + 0.5 * quad / self.sigma**2

    def reduced_rank_fit(self, data) -> np.ndarray:
        """Closed-form rank-H least squares fit, balanced between A and B."""
        s = self._stats(data)
        c_ols = np.linalg.lstsq(s.sxx, s.syx.T, rcond=None)[0].T  # N x M
        # project fitted values onto their top-H right singular directions
        fitted = data.x @ c_ols.T
        _, _, vt = np.linalg.svd(fitted, full_matrices=False)
        h = min(self.H, vt.shape[0])
        v = vt[:h].T
        C = v @ v.T @ c_ols
        u, sv, wt = np.linalg.svd(C, full_matrices=False)
        A = np.zeros((self.H, self.M))
        B = np.zeros((self.N, self.H))
        r = min(self.H, len(sv))
        root = np.sqrt(sv[:r])
        A[:r] = root[:, None] * wt[:r]
        B[:, :r] = u[:, :r] * root
        return self.pack(A, B)

    def starting_point(self, data):
        return self.reduced_rank_fit(data)


def make_reduced_rank_model(M: int, N: int, H: int, sigma: float = 0.1, prior_std: float = 10.0, bounds=None):
    return ReducedRankModel(M, N, H, sigma=sigma, prior_std=prior_std, bounds=bounds)


@dataclass(frozen=True, eq=False)
class RrrTruth:
    """Generating pair of a reduced rank regression dataset.

    ``A0`` is H0 x M and ``B0`` is N x H0, so the true map is B0 @ A0.
    """

    A0: np.ndarray
    B0: np.ndarray
    sigma: float
    x_std: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.x_std > 0):
            raise ConfigError("sigma and x_std must be positive")
        object.__setattr__(self, "A0", _frozen(np.atleast_2d(self.A0)))
        object.__setattr__(self, "B0", _frozen(np.atleast_2d(self.B0)))

    @property
    def coef(self) -> np.ndarray:
        return self.B0 @ self.A0

    def log_density_records(self, data: Dataset) -> np.ndarray:
        if data.x is None:
            raise ConfigError("regression truth needs regression data")
        resid = data.y - data.x @ self.coef.T
        N = data.y.shape[1]
        return -0.5 * N * (LOG_2PI + 2.0 * math.log(self.sigma)) - 0.5 * np.sum(resid * resid, axis=1) / self.sigma**2

    def to_dict(self) -> dict:
        return {
            "A0": self.A0.tolist(),
            "B0": self.B0.tolist(),
            "sigma": float(self.sigma),
            "x_std": float(self.x_std),
        }

    @classmethod
    def from_dict(cls, d) -> "RrrTruth":
        return cls(np.array(d["A0"], float), np.array(d["B0"], float), float(d["sigma"]), float(d["x_std"]))

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> "RrrTruth":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def draw_rrr_truth(M, N, H0, sigma=0.1, x_std=3.0, coef_std=0.2, seed=0) -> RrrTruth:
    _check_rrr_gen(M, N, H0, 1, sigma, x_std, coef_std)
    rng = np.random.default_rng(seed)
    A0 = rng.normal(0.0, coef_std, size=(H0, M))
    B0 = rng.normal(0.0, coef_std, size=(N, H0))
    return RrrTruth(A0, B0, sigma, x_std)


def sample_rrr_data(truth: RrrTruth, n: int, seed=0) -> Dataset:
    if int(n) != n or n < 1:
        raise ConfigError("n must be a positive integer")
    rng = np.random.default_rng(seed)
    return _sample_rrr(truth, int(n), rng)


def _sample_rrr(truth, n, rng):
    M = truth.A0.shape[1]
    N = truth.B0.shape[0]
    x = rng.normal(0.0, truth.x_std, size=(n, M))
    y = x @ truth.coef.T + rng.normal(0.0, truth.sigma, size=(n, N))
    return Dataset(y=y, x=x)


def _check_rrr_gen(M, N, H0, n, sigma, x_std, coef_std):
    for name, v in (("M", M), ("N", N), ("H0", H0), ("n", n)):
        if int(v) != v or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    if not (sigma > 0 and x_std > 0 and coef_std >= 0):
        raise ConfigError("sigma and x_std must be positive, coef_std non-negative")


def generate_rrr_dataset(M=6, N=6, H0=3, n=500, sigma=0.1, x_std=3.0, coef_std=0.2, seed=0):
    """Draw a truth (A0, B0) and n regression records from one seed.

    Returns ``(Dataset, RrrTruth)``.
    """
    _check_rrr_gen(M, N, H0, n, sigma, x_std, coef_std)
    rng = np.random.default_rng(seed)
    A0 = rng.normal(0.0, coef_std, size=(H0, M))
    B0 = rng.normal(0.0, coef_std, size=(N, H0))
    truth = RrrTruth(A0, B0, sigma, x_std)
    return _sample_rrr(truth, int(n), rng), truth


# --------------------------------------------------------------------------
# Plain Gaussian families
# --------------------------------------------------------------------------


class _PlainStats:
    __slots__ = ("n", "total", "sumsq", "mean", "centered_ss")

    def __init__(self, data):
        y = data.y
        self.n = data.n
        self.total = y.sum(axis=0)
        self.sumsq = float(np.sum(y * y))
        self.mean = self.total / self.n
        self.centered_ss = float(np.sum((y - self.mean) ** 2))


class _PlainGaussianMixin:
    _cache: dict

    def _plain_stats(self, data, width):
        if data.x is not None or data.y.shape[1] != width:
            raise ConfigError(f"{self.family} model expects plain records of length {width}")
        hit = self._cache.get(id(data))
        if hit is not None and hit[0] is data:
            return hit[1]
        stats = _PlainStats(data)
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[id(data)] = (data, stats)
        return stats


class ConjugateNormalModel(_PlainGaussianMixin, GaussianPriorModel):
    """x ~ N(w, noise_std^2 I_d) with prior w ~ N(0, prior_std^2 I_d).

    Tempered posteriors stay Gaussian, so the log partition function and
    E^beta[n L_n] are available in closed form.
    """

    family = "normal"
    closed_form_mle = True

    def __init__(self, d, noise_std=1.0, prior_std=1.0, bounds=None):
        if int(d) != d or d < 1:
            raise ConfigError(f"d must be a positive integer, got {d!r}")
        if not noise_std > 0:
            raise ConfigError("noise_std must be positive")
        self.noise_std = float(noise_std)
        labels = dict(d=int(d), noise_std=self.noise_std, prior_std=float(prior_std))
        super().__init__(int(d), prior_std, labels, bounds)
        self._cache = {}
        self._lik_const = 0.5 * self.dim * (LOG_2PI + 2.0 * math.log(self.noise_std))

    def loglik_records(self, w, data):
        self._plain_stats(data, self.dim)
        r = data.y - np.asarray(w, dtype=float)
        return -self._lik_const - 0.5 * np.sum(r * r, axis=1) / self.noise_std**2

    def nll_fn(self, data):
        s = self._plain_stats(data, self.dim)
        base = s.n * self._lik_const + 0.5 * s.centered_ss / self.noise_std**2
        scale = 0.5 * s.n / self.noise_std**2
        mean = s.mean

        def nll(w):
            r = w - mean
            return base + scale * float(np.dot(r, r))

        return nll

    def nll(self, w, data):
        return self.nll_fn(data)(np.asarray(w, dtype=float))

    def nll_batch(self, W, data):
        s = self._plain_stats(data, self.dim)
        R = np.atleast_2d(W) - s.mean
        base = s.n * self._lik_const + 0.5 * s.centered_ss / self.noise_std**2
        return base + 0.5 * s.n / self.noise_std**2 * np.einsum("ij,ij->i", R, R)

    def starting_point(self, data):
        return self._plain_stats(data, self.dim).mean.copy()

    # closed forms -------------------------------------------------------
    def _pieces(self, beta, data):
        s = self._plain_stats(data, self.dim)
        s2, t2 = self.noise_std**2, self.prior_std**2
        base = s.n * self._lik_const + 0.5 * s.centered_ss / s2
        a = beta * s.n / s2
        m2 = float(np.dot(s.mean, s.mean))
        return s, s2, t2, base, a, m2

    def conjugate_log_partition(self, beta, data) -> float:
        """log of the integral of exp(-beta n L_n(w)) phi(w) dw."""
        s, s2, t2, base, a, m2 = self._pieces(beta, data)
        return -beta * base - 0.5 * self.dim * math.log1p(a * t2) - 0.5 * a * m2 / (1.0 + a * t2)

    def conjugate_expected_nll(self, beta, data) -> float:
        """E^beta[n L_n(w)]; the negative beta-derivative of the log partition."""
        s, s2, t2, base, a, m2 = self._pieces(beta, data)
        c = s.n / s2
        return base + 0.5 * self.dim * c * t2 / (1.0 + a * t2) + 0.5 * c * m2 / (1.0 + a * t2) ** 2

    def conjugate_posterior(self, beta, data):
        """Mean vector and per-coordinate variance of the tempered posterior."""
        s, s2, t2, base, a, m2 = self._pieces(beta, data)
        var = t2 / (1.0 + a * t2)
        return a * var * s.mean, var


def make_conjugate_normal_model(d: int, noise_std: float = 1.0, prior_std: float = 1.0, bounds=None):
    return ConjugateNormalModel(d, noise_std, prior_std, bounds)


class NormalMeanModel(_PlainGaussianMixin, GaussianPriorModel):
    """Scalar observations x ~ N(mean_fn(w), noise_std^2).

    ``mean_fn`` must accept a (G, d) batch and return G means.  With
    non-injective mean functions (w^2, a*b) this gives small singular toys.
    """

    def __init__(self, dim, mean_fn, noise_std=1.0, prior_std=1.0, family="normal-mean", bounds=None):
        if not noise_std > 0:
            raise ConfigError("noise_std must be positive")
        self.family = family
        self.noise_std = float(noise_std)
        self.mean_fn = mean_fn
        super().__init__(dim, prior_std, dict(noise_std=self.noise_std, prior_std=float(prior_std)), bounds)
        self._cache = {}
        self._lik_const = 0.5 * (LOG_2PI + 2.0 * math.log(self.noise_std))

    def _mu(self, w):
        return float(self.mean_fn(np.asarray(w, dtype=float)[None, :])[0])

    def loglik_records(self, w, data):
        self._plain_stats(data, 1)
        r = data.y[:, 0] - self._mu(w)
        return -self._lik_const - 0.5 * r * r / self.noise_std**2

    def nll_batch(self, W, data):
        s = self._plain_stats(data, 1)
        mu = np.asarray(self.mean_fn(np.atleast_2d(W)), dtype=float)
        quad = s.sumsq - 2.0 * mu * s.total[0] + s.n * mu * mu
        return s.n * self._lik_const + 0.5 * quad / self.noise_std**2

    def nll_fn(self, data):
        s = self._plain_stats(data, 1)
        const = s.n * self._lik_const
        k = 0.5 / self.noise_std**2
        sumsq, total, n = s.sumsq, float(s.total[0]), s.n
        fn = self.mean_fn

        def nll(w):
            mu = float(fn(w[None, :])[0])
            return const + k * (sumsq - 2.0 * mu * total + n * mu * mu)

        return nll

    def nll(self, w, data):
        return self.nll_fn(data)(np.asarray(w, dtype=float))


def _square(W):
    return W[:, 0] ** 2


def _product(W):
    return W[:, 0] * W[:, 1]


def make_square_mean_model(noise_std=1.0, prior_std=1.0, bounds=None):
    """1-d toy with p(x|w) = N(x; w^2, noise_std^2)."""
    return NormalMeanModel(1, _square, noise_std, prior_std, family="square", bounds=bounds)


def make_product_mean_model(noise_std=1.0, prior_std=1.0, bounds=None):
    """2-d toy with p(x|a,b) = N(x; a*b, noise_std^2)."""
    return NormalMeanModel(2, _product, noise_std, prior_std, family="product", bounds=bounds)


class FixedDensityModel(GaussianPriorModel):
    """p(x|w) = N(x; 0, I_k) regardless of w, so L_n is constant."""

    family = "fixed"

    def __init__(self, dim=1, record_dim=1, prior_std=1.0):
        super().__init__(dim, prior_std, dict(dim=int(dim), record_dim=int(record_dim), prior_std=float(prior_std)))
        self.record_dim = int(record_dim)

    def loglik_records(self, w, data):
        if data.y.shape[1] != self.record_dim:
            raise ConfigError("record length mismatch")
        y = data.y
        return -0.5 * self.record_dim * LOG_2PI - 0.5 * np.sum(y * y, axis=1)

    def nll_fn(self, data):
        value = -float(np.sum(self.loglik_records(None, data)))
        return lambda w: value

    def nll_batch(self, W, data):
        value = self.nll_fn(data)(None)
        return np.full(np.atleast_2d(W).shape[0], value)


# --------------------------------------------------------------------------
# Truths for plain data
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalTruth:
    """Generating distribution N(mean, noise_std^2 I) of plain data."""

    mean: np.ndarray
    noise_std: float

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.atleast_1d(self.mean)))
        if not self.noise_std > 0:
            raise ConfigError("noise_std must be positive")

    def log_density_records(self, data: Dataset) -> np.ndarray:
        r = data.y - self.mean
        d = self.mean.shape[0]
        return -0.5 * d * (LOG_2PI + 2.0 * math.log(self.noise_std)) - 0.5 * np.sum(r * r, axis=1) / self.noise_std**2

    def to_dict(self):
        return {"mean": self.mean.tolist(), "noise_std": float(self.noise_std)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], float), float(d["noise_std"]))


def generate_normal_dataset(d=1, n=100, noise_std=1.0, mean=0.0, seed=0):
    """Plain Gaussian data for the conjugate model; returns ``(Dataset, NormalTruth)``."""
    if int(n) != n or n < 1 or int(d) != d or d < 1:
        raise ConfigError("n and d must be positive integers")
    truth = NormalTruth(np.broadcast_to(np.asarray(mean, float), (int(d),)).copy(), noise_std)
    rng = np.random.default_rng(seed)
    y = truth.mean + rng.normal(0.0, noise_std, size=(int(n), int(d)))
    return Dataset(y=y), truth


# --------------------------------------------------------------------------
# Losses and references
# --------------------------------------------------------------------------


def empirical_log_loss(model: Model, w, data: Dataset) -> float:
    """L_n(w) = -(1/n) sum_i log p(X_i | w)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (model.dim,) or not np.all(np.isfinite(w)):
        raise ConfigError(f"parameter must be a finite vector of length {model.dim}")
    ll = np.asarray(model.loglik_records(w, data), dtype=float)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise NumericalError(f"non-finite log likelihood at record {bad[0]}", index=int(bad[0]))
    return -math.fsum(ll) / data.n


def empirical_entropy(truth, data: Dataset) -> float:
    """S_n = -(1/n) sum_i log q(X_i) under a known generating distribution."""
    if truth is None or not hasattr(truth, "log_density_records"):
        raise UnavailableError("empirical entropy needs the generating distribution")
    return -math.fsum(truth.log_density_records(data)) / data.n


# theory values for (M, N, H0) = (6, 6, 3), H = 1..6
_RRR_TABLE = {
    (6, 6, 3): {1: (5.5, 1), 2: (10.0, 1), 3: (13.5, 1), 4: (15.0, 2), 5: (16.0, 1), 6: (17.0, 2)},
}


def theoretical_rlct_rrr(M: int, N: int, H: int, H0: int):
    """Reference (lambda, multiplicity) for reduced rank regression, or None.

    Unrealizable fits (H < H0) use half the effective dimension
    H(M+N-H)/2.  Realizable cases are only known for the tabulated
    (6, 6, H0=3) setup.
    """
    for v in (M, N, H, H0):
        if v < 1:
            raise ConfigError("dimensions must be positive")
    if H < H0:
        return H * (M + N - H) / 2.0, 1
    table = _RRR_TABLE.get((M, N, H0))
    if table is not None and H in table:
        return table[H]
    return None


def model_from_spec(spec: str) -> Model:
    """Build a model from ``family:key=value,...`` (used by the CLI and plans).

    Families: ``rrr`` (M, N, H, sigma, prior_std), ``normal`` (d, noise_std,
    prior_std), ``square`` and ``product`` (noise_std, prior_std).
    """
    family, _, rest = spec.partition(":")
    kwargs = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"bad model option {item!r}")
        kwargs[key.strip()] = float(value) if "." in value or "e" in value.lower() else int(value)
    builders = {
        "rrr": lambda M, N, H, sigma=0.1, prior_std=10.0: ReducedRankModel(M, N, H, sigma, prior_std),
        "normal": lambda d=1, noise_std=1.0, prior_std=1.0: ConjugateNormalModel(d, noise_std, prior_std),
        "square": make_square_mean_model,
        "product": make_product_mean_model,
    }
    if family not in builders:
        raise ConfigError(f"unknown model family {family!r}; choose from {sorted(builders)}")
    try:
        return builders[family](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad options for {family}: {exc}") from None
