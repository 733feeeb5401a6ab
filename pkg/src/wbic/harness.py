"""Repeated-dataset experiments over candidate models.

A plan fixes a data-generating truth, a list of candidate models, the
sample size and the estimators to run.  Every (repeat, candidate) cell
owns a seed derived from the master seed, so cells can run in any order
or in parallel and the report is the same.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .criteria import CriterionReport, aic, bic, fit_map_or_mle, select_model, waic, wbic, wbic_beta
from .errors import ConfigError, ContractError, WbicError
from .free_energy import TemperatureSchedule, stepping_stone
from .mcmc import ChainConfig, TemperedTarget, derive_seed, run_chain
from .models import (
    ConjugateNormalModel,
    ReducedRankModel,
    draw_rrr_truth,
    empirical_entropy,
    generate_normal_dataset,
    sample_rrr_data,
    theoretical_rlct_rrr,
)
from .rlct import rlct_reweighted

ESTIMATORS = ("wbic", "waic", "rlct", "evidence", "bic", "aic")
FAMILIES = ("rrr", "conjugate")

_RRR_TRUTH = dict(M=6, N=6, H0=3, sigma=0.1, x_std=3.0, coef_std=0.2)
_CONJ_TRUTH = dict(d=1, noise_std=1.0, mean=0.0)


@dataclass(frozen=True)
class ExperimentPlan:
    family: str = "rrr"
    truth: dict = field(default_factory=lambda: dict(_RRR_TRUTH))
    candidates: tuple = (1, 2, 3, 4, 5, 6)
    n: int = 500
    repeats: int = 10
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(init="start-point"))
    estimators: tuple = ("wbic", "rlct")
    seed: int = 0
    prior_std: float = 10.0
    beta1_mult: float = 1.0
    beta2_mult: float = 1.5
    redraw_truth: bool = False
    schedule_J: int = 20
    workers: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.candidates:
            raise ConfigError("candidate list is empty")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError("n must be an integer >= 3")
        base = _RRR_TRUTH if self.family == "rrr" else _CONJ_TRUTH
        unknown = set(self.truth) - set(base)
        if unknown:
            raise ConfigError(f"unknown truth fields {sorted(unknown)}")
        object.__setattr__(self, "truth", {**base, **self.truth})
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "estimators", tuple(e for e in ESTIMATORS if e in self.estimators))

    # -- construction ----------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict, paper_exact: bool = False) -> "ExperimentPlan":
        d = dict(d)
        chain = d.pop("chain", None) or d.pop("chain_config", None) or {}
        if paper_exact:
            d.update(repeats=100)
            chain = {**chain, **dict(burn_in=50000, thin=100, draws=2000, step_std_init=0.0012, adapt=False)}
        chain.setdefault("init", "start-point")
        try:
            cfg = ChainConfig(**chain)
            return cls(chain=cfg, **d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment plan: {exc}") from None

    @classmethod
    def read_json(cls, path, paper_exact: bool = False) -> "ExperimentPlan":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh), paper_exact=paper_exact)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None

    @classmethod
    def paper(cls, **overrides) -> "ExperimentPlan":
        """The published model-selection and RLCT study (100 repeats, burn-in 50000)."""
        base = dict(
            repeats=100,
            chain=ChainConfig(burn_in=50000, thin=100, draws=2000, step_std_init=0.0012, adapt=False, init="start-point"),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides) -> "ExperimentPlan":
        """Shrunk version of the published study: 10 repeats, burn-in 20000."""
        base = dict(repeats=10, chain=ChainConfig(burn_in=20000, thin=100, draws=2000, init="start-point"))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chain"] = self.chain.to_dict()
        d["candidates"] = list(self.candidates)
        d["estimators"] = list(self.estimators)
        d.pop("workers")
        return d

    # -- helpers ---------------------------------------------------------
    def label(self, cand) -> str:
        return str(cand)

    def make_model(self, cand):
        t = self.truth
        if self.family == "rrr":
            return ReducedRankModel(t["M"], t["N"], int(cand), sigma=t["sigma"], prior_std=self.prior_std)
        return ConjugateNormalModel(t["d"], noise_std=t["noise_std"], prior_std=float(cand))

    def theory(self, cand):
        t = self.truth
        if self.family == "rrr":
            return theoretical_rlct_rrr(t["M"], t["N"], int(cand), t["H0"])
        return (t["d"] / 2.0, 1)

    def true_label(self) -> Optional[str]:
        if self.family == "rrr" and self.truth["H0"] in [int(c) for c in self.candidates]:
            return self.label(self.truth["H0"])
        return None

    def draw_truth(self, repeat: int):
        t = self.truth
        key = derive_seed(self.seed, 1, repeat) if self.redraw_truth else derive_seed(self.seed, 0)
        if self.family == "rrr":
            return draw_rrr_truth(t["M"], t["N"], t["H0"], t["sigma"], t["x_std"], t["coef_std"], seed=key)
        return None

    def dataset(self, repeat: int):
        """(Dataset, truth) for one repeat; independent of every other repeat."""
        key = derive_seed(self.seed, 2, repeat)
        if self.family == "rrr":
            truth = self.draw_truth(repeat)
            return sample_rrr_data(truth, self.n, seed=key), truth
        t = self.truth
        return generate_normal_dataset(t["d"], self.n, t["noise_std"], t["mean"], seed=key)


# --------------------------------------------------------------------------
# Cell execution
# --------------------------------------------------------------------------


def _run_cell(plan: ExperimentPlan, repeat: int, index: int, data, truth):
    cand = plan.candidates[index]
    model = plan.make_model(cand)
    values: dict = {}
    timing: dict = {}
    cell_seed = derive_seed(plan.seed, 3, repeat, index)
    n = data.n
    est = set(plan.estimators)

    if est & {"wbic", "rlct"}:
        beta1 = plan.beta1_mult * wbic_beta(n)
        t0 = time.perf_counter()
        chain = run_chain(TemperedTarget(model, data, beta1), plan.chain.with_seed(derive_seed(cell_seed, 0)))
        timing["wbic_chain"] = time.perf_counter() - t0
        values["acceptance"] = chain.acceptance_rate
        if "wbic" in est:
            if plan.beta1_mult != 1.0:
                raise ConfigError("wbic needs beta1_mult = 1")
            value, mcse = wbic(chain, n)
            values["wbic"] = value
            values["wbic_mcse"] = mcse
            if truth is not None:
                values["wbic1"] = value - n * empirical_entropy(truth, data)
        if "rlct" in est:
            r = rlct_reweighted(chain, plan.beta2_mult * wbic_beta(n))
            values["rlct"] = r.lambda_hat
            values["rlct_se"] = r.std_error
            values["rlct_ess"] = r.ess
    if "waic" in est:
        t0 = time.perf_counter()
        chain1 = run_chain(TemperedTarget(model, data, 1.0), plan.chain.with_seed(derive_seed(cell_seed, 1)))
        timing["waic_chain"] = time.perf_counter() - t0
        w = waic(chain1, data, model)
        values["waic"] = w.value
        values["waic_t"] = w.t_n
        values["waic_v"] = w.v_n
    if est & {"bic", "aic"}:
        w_hat = fit_map_or_mle(model, data, "mle", restarts=1, seed=derive_seed(cell_seed, 2))
        if "bic" in est:
            values["bic"] = bic(model, data, w_hat)
        if "aic" in est:
            values["aic"] = aic(model, data, w_hat)
    if "evidence" in est:
        t0 = time.perf_counter()
        fe = stepping_stone(
            model, data, TemperatureSchedule.power(plan.schedule_J),
            plan.chain.with_seed(derive_seed(cell_seed, 3)),
        )
        timing["evidence"] = time.perf_counter() - t0
        values["evidence"] = fe.value
        values["evidence_mcse"] = fe.mcse
    return values, timing, model.dim


def _cell_task(args):
    plan, repeat, index, data, truth = args
    try:
        values, timing, dim = _run_cell(plan, repeat, index, data, truth)
        values["dim"] = float(dim)
        return repeat, index, values, timing, None
    except WbicError as exc:
        return repeat, index, {}, {}, f"{type(exc).__name__}: {exc}"


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------


def _std(v):
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


@dataclass
class ExperimentReport:
    """Per-cell raw values plus aggregates recomputed from them.

    ``raw`` maps ``(repeat, candidate_label)`` to a dict of estimator
    values; failed cells map to an empty dict and are listed in
    ``failures``.
    """

    candidates: list
    repeats: list
    raw: dict
    failures: dict = field(default_factory=dict)
    theory: dict = field(default_factory=dict)
    plan: Optional[dict] = None
    provenance: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    total_seconds: float = 0.0

    def estimators(self) -> list:
        seen = []
        for key in sorted(self.raw, key=self._order):
            for k in self.raw[key]:
                if k not in seen:
                    seen.append(k)
        return seen

    def _order(self, key):
        rep, cand = key
        return (rep, self.candidates.index(cand))

    def values(self, candidate, estimator) -> list:
        out = []
        for rep in self.repeats:
            v = self.raw.get((rep, candidate), {}).get(estimator)
            if v is not None and math.isfinite(v):
                out.append(v)
        return out

    def aggregates(self) -> dict:
        agg = {}
        for cand in self.candidates:
            agg[cand] = {}
            for est in self.estimators():
                v = self.values(cand, est)
                agg[cand][est] = {
                    "mean": float(np.mean(v)) if v else None,
                    "std": _std(v) if v else None,
                    "count": len(v),
                    "missing": len(self.repeats) - len(v),
                }
        return agg

    def selection_counts(self) -> dict:
        counts = {c: 0 for c in self.candidates}
        for rep in self.repeats:
            reports = []
            for c in self.candidates:
                cell = self.raw.get((rep, c), {})
                if cell.get("wbic") is not None:
                    reports.append(CriterionReport(c, int(cell.get("dim", 0)), 0, cell["wbic"]))
            if len(reports) >= 1:
                counts[select_model(reports)] += 1
        return counts

    # -- serialization ----------------------------------------------------
    def rows(self) -> list:
        out = []
        for key in sorted(set(self.raw) | set(self.failures), key=self._order):
            rep, cand = key
            cell = self.raw.get(key, {})
            if key in self.failures and not cell:
                out.append((rep, cand, "wbic", None))
                continue
            for est, v in cell.items():
                out.append((rep, cand, est, v))
        return out

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "candidates": list(self.candidates),
            "repeats": list(self.repeats),
            "cells": [
                {"repeat": rep, "candidate": cand, "values": dict(self.raw.get((rep, cand), {})),
                 "error": self.failures.get((rep, cand))}
                for rep, cand in sorted(set(self.raw) | set(self.failures), key=self._order)
            ],
            "aggregates": self.aggregates(),
            "selection_counts": self.selection_counts(),
            "theory": {c: (None if t is None else {"lambda": t[0], "m": t[1]}) for c, t in self.theory.items()},
            "plan": self.plan,
            "provenance": self.provenance,
        }
        if timing:
            cells = sorted(self.timings.items(), key=lambda kv: self._order(kv[0]))
            d["timing"] = {"cells": {f"{rep}/{cand}": t for (rep, cand), t in cells}, "total_seconds": self.total_seconds}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        cands = list(d["candidates"])
        raw, failures = {}, {}
        for cell in d["cells"]:
            key = (int(cell["repeat"]), cell["candidate"])
            raw[key] = {k: (None if v is None else float(v)) for k, v in cell["values"].items()}
            if cell.get("error"):
                failures[key] = cell["error"]
        theory = {c: (None if t is None else (t["lambda"], t["m"])) for c, t in (d.get("theory") or {}).items()}
        rep = cls(cands, list(d["repeats"]), raw, failures, theory, d.get("plan"), d.get("provenance") or {})
        stored = d.get("aggregates")
        if stored is not None:
            _check_aggregates(stored, rep.aggregates())
        return rep

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["repeat", "candidate", "estimator", "value"]:
            raise ConfigError("not an experiment CSV")
        cands, reps, raw, failures = [], [], {}, {}
        for rep_s, cand, est, val in reader:
            rep = int(rep_s)
            if cand not in cands:
                cands.append(cand)
            if rep not in reps:
                reps.append(rep)
            cell = raw.setdefault((rep, cand), {})
            if val == "NA":
                if not cell:
                    failures[(rep, cand)] = "missing"
                continue
            cell[est] = float(val)
        return cls(cands, reps, raw, failures)


def _check_aggregates(stored, fresh):
    for cand, ests in fresh.items():
        for est, agg in ests.items():
            s = stored.get(cand, {}).get(est)
            if s is None:
                raise ContractError(f"stored aggregates miss {cand}/{est}")
            for k in ("mean", "std"):
                a, b = s[k], agg[k]
                if (a is None) != (b is None) or (a is not None and abs(a - b) > 1e-12 * max(1.0, abs(b))):
                    raise ContractError(f"stored aggregate {cand}/{est}/{k} does not match raw values")


# --------------------------------------------------------------------------
# Orchestration
# --------------------------------------------------------------------------


def _add_baselines(plan: ExperimentPlan, report: ExperimentReport):
    true_label = plan.true_label()
    for rep in report.repeats:
        cells = {c: report.raw.get((rep, c), {}) for c in report.candidates}
        have = {c: v["wbic"] for c, v in cells.items() if v.get("wbic") is not None}
        if not have:
            continue
        if true_label is not None and true_label in have:
            ref = have[true_label]
        else:
            ref = min(have.values())
        low = min(have.values())
        for c, v in have.items():
            cells[c]["wbic2"] = v - ref
            if true_label is not None:
                cells[c]["wbic2_min"] = v - low


def _safe_theory(plan, cand):
    # an invalid candidate already fails its own cells
    try:
        return plan.theory(cand)
    except WbicError:
        return None


def run_experiment(plan: ExperimentPlan, progress=None) -> ExperimentReport:
    """Run every (repeat, candidate) cell of ``plan`` and assemble a report.

    Failed cells are recorded, never fatal.  ``progress`` is an optional
    callable receiving ``(done, total)``.
    """
    start = time.perf_counter()
    labels = [plan.label(c) for c in plan.candidates]
    tasks = []
    for rep in range(plan.repeats):
        data, truth = plan.dataset(rep)
        for i in range(len(plan.candidates)):
            tasks.append((plan, rep, i, data, truth))
    raw, failures, timings = {}, {}, {}

    def collect(result, done):
        rep, i, values, timing, error = result
        key = (rep, labels[i])
        if error is not None:
            failures[key] = error
            raw[key] = {}
        else:
            raw[key] = values
        timings[key] = timing
        if progress is not None:
            progress(done, len(tasks))

    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            for k, result in enumerate(pool.map(_cell_task, tasks), 1):
                collect(result, k)
    else:
        for k, task in enumerate(tasks, 1):
            collect(_cell_task(task), k)

    report = ExperimentReport(
        candidates=labels,
        repeats=list(range(plan.repeats)),
        raw=raw,
        failures=failures,
        theory={plan.label(c): _safe_theory(plan, c) for c in plan.candidates},
        plan=plan.to_dict(),
        provenance={"master_seed": plan.seed, "cells": len(tasks), "failed": len(failures)},
        timings=timings,
    )
    _add_baselines(plan, report)
    report.total_seconds = time.perf_counter() - start
    return report


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

_TEXT_ROWS = (
    ("wbic1", "WBIC1"),
    ("wbic2", "WBIC2"),
    ("rlct", "lambda"),
    ("waic", "WAIC"),
    ("bic", "BIC"),
    ("aic", "AIC"),
    ("evidence", "F (all temps)"),
)


def _fmt(v) -> str:
    return "NA" if v is None else repr(float(v))


def _fmt_short(v, digits=1) -> str:
    return "NA" if v is None else f"{v:.{digits}f}"


def render_report(report: ExperimentReport, fmt: str = "text", timing: bool = True) -> bytes:
    """Render as ``text`` (table with Ave./Std. rows), ``csv`` (tidy) or ``json``."""
    if fmt == "json":
        return (json.dumps(report.to_dict(timing=timing), indent=2, sort_keys=False) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["repeat", "candidate", "estimator", "value"])
        for rep, cand, est, v in report.rows():
            writer.writerow([rep, cand, est, _fmt(v)])
        return buf.getvalue().encode()
    if fmt != "text":
        raise ConfigError(f"unknown format {fmt!r}")
    cands = list(report.candidates)
    lines = []
    head = ["candidate"] + cands
    agg = report.aggregates()
    body = []
    for key, name in _TEXT_ROWS:
        if not any(key in agg[c] for c in cands):
            continue
        digits = 2 if key == "rlct" else 1
        body.append([f"{name} Ave."] + [_fmt_short(agg[c].get(key, {}).get("mean"), digits) for c in cands])
        body.append([f"{name} Std."] + [_fmt_short(agg[c].get(key, {}).get("std"), digits) for c in cands])
    if any(report.theory.get(c) for c in cands) and any("rlct" in agg[c] for c in cands):
        body.append(["Theory lambda"] + [_fmt_short(report.theory[c][0], 1) if report.theory.get(c) else "NA" for c in cands])
        body.append(["Theory m"] + [str(report.theory[c][1]) if report.theory.get(c) else "NA" for c in cands])
    if any("wbic" in agg[c] for c in cands):
        counts = report.selection_counts()
        body.append(["Selected"] + [str(counts[c]) for c in cands])
    rows = [head] + body
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    for r in rows:
        lines.append(" | ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))))
    return ("\n".join(lines) + "\n").encode()


def parse_report(blob: bytes, fmt: str) -> ExperimentReport:
    text = blob.decode() if isinstance(blob, (bytes, bytearray)) else blob
    if fmt == "json":
        return ExperimentReport.from_dict(json.loads(text))
    if fmt == "csv":
        return ExperimentReport.from_csv(text)
    raise ConfigError(f"cannot parse format {fmt!r}")
