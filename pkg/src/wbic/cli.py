"""Command line interface.

Every subcommand prints JSON (or the requested report format) to stdout
or ``--out``.  Wall-clock timings only ever appear under a ``timing``
key.  Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from .criteria import CriterionReport, select_model, waic, wbic, wbic_beta
from .errors import ConfigError, NumericalFailure, WbicError
from .free_energy import CurvePoint, TemperatureSchedule, stepping_stone
from .harness import ExperimentPlan, render_report, run_experiment
from .mcmc import ChainConfig, TemperedTarget, batch_means_mcse, derive_seed, run_chain
from .models import (
    ConjugateNormalModel,
    Dataset,
    NormalTruth,
    ReducedRankModel,
    RrrTruth,
    empirical_entropy,
    generate_normal_dataset,
    generate_rrr_dataset,
    model_from_spec,
    theoretical_rlct_rrr,
)
from .quadrature import GridSpec, default_grid, grid_expected_nll, grid_log_partition
from .rlct import rlct_regression, rlct_reweighted, rlct_two_chain


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _chain_config(args, model, data) -> ChainConfig:
    init = args.init
    if init == "auto":
        init = "start-point" if model.starting_point(data) is not None else "prior-draw"
    return ChainConfig(
        burn_in=args.burn_in, thin=args.thin, draws=args.draws, step_std_init=args.step_std,
        target_acceptance=args.target_acceptance, adapt=not args.no_adapt, seed=args.seed,
        init=init, n_chains=args.n_chains,
    )


def _load(args):
    model = model_from_spec(args.model)
    data = Dataset.read_csv(args.data)
    return model, data


def _load_truth(path):
    if not path:
        return None
    with open(path) as fh:
        d = json.load(fh)
    return RrrTruth.from_dict(d) if "A0" in d else NormalTruth.from_dict(d)


def _chain_summary(chain):
    meta = chain.metadata()
    meta.pop("config", None)
    return meta


# -- subcommands -------------------------------------------------------------


def cmd_generate(args):
    if args.family == "rrr":
        data, truth = generate_rrr_dataset(
            args.M, args.N, args.H0, args.n, args.sigma, args.x_std, args.coef_std, seed=args.seed
        )
        truth_dict = truth.to_dict()
    else:
        data, truth = generate_normal_dataset(args.d, args.n, args.noise_std, args.mean, seed=args.seed)
        truth_dict = truth.to_dict()
    data.write_csv(args.out + ".csv")
    with open(args.out + ".truth.json", "w") as fh:
        json.dump(truth_dict, fh, indent=2)
        fh.write("\n")
    _emit({
        "data": args.out + ".csv",
        "truth": args.out + ".truth.json",
        "n": data.n,
        "fingerprint": data.fingerprint(),
        "empirical_entropy": empirical_entropy(truth, data),
    })


def cmd_wbic(args):
    model, data = _load(args)
    config = _chain_config(args, model, data)
    chain = run_chain(TemperedTarget(model, data, wbic_beta(data.n)), config)
    value, mcse = wbic(chain, data.n)
    out = {"model": model.describe(), "n": data.n, "beta": chain.beta, "wbic": value, "mcse": mcse, "chain": _chain_summary(chain)}
    truth = _load_truth(args.truth)
    if truth is not None:
        out["wbic1"] = value - data.n * empirical_entropy(truth, data)
    if args.dump:
        chain.save(args.dump, args.dump_format)
    _emit(out, args.out)


def cmd_waic(args):
    model, data = _load(args)
    chain = run_chain(TemperedTarget(model, data, 1.0), _chain_config(args, model, data))
    w = waic(chain, data, model)
    if args.dump:
        chain.save(args.dump, args.dump_format)
    _emit({"model": model.describe(), "n": data.n, "t_n": w.t_n, "v_n": w.v_n, "waic": w.value, "mcse": w.mcse,
           "chain": _chain_summary(chain)}, args.out)


def _theory(model, args):
    if isinstance(model, ReducedRankModel) and args.true_rank:
        t = theoretical_rlct_rrr(model.M, model.N, model.H, args.true_rank)
        return None if t is None else {"lambda": t[0], "m": t[1]}
    if isinstance(model, ConjugateNormalModel):
        return {"lambda": model.dim / 2.0, "m": 1}
    return None


def cmd_rlct(args):
    model, data = _load(args)
    base = _chain_config(args, model, data)
    unit = 1.0 / math.log(data.n)
    b1, b2 = args.beta1_mult * unit, args.beta_mult * unit
    runs = []
    for k in range(args.repeats):
        cfg = base.with_seed(derive_seed(args.seed, k))
        if args.method == "reweight":
            chain = run_chain(TemperedTarget(model, data, b1), cfg)
            est = rlct_reweighted(chain, b2)
        else:
            pts = []
            mults = [args.beta1_mult, args.beta_mult] if args.method == "two-chain" else args.regression_mults
            for j, m in enumerate(mults):
                chain = run_chain(TemperedTarget(model, data, m * unit), cfg.with_seed(derive_seed(args.seed, k, j)))
                pts.append(CurvePoint(chain.beta, float(np.mean(chain.nll)), batch_means_mcse(chain.nll)))
            est = rlct_two_chain(*pts) if args.method == "two-chain" else rlct_regression(pts)
        runs.append(est)
    lam = [r.lambda_hat for r in runs]
    out = {
        "model": model.describe(),
        "method": args.method,
        "beta1": b1,
        "beta2": b2,
        "lambda_hat": float(np.mean(lam)),
        "std_error": float(np.std(lam, ddof=1) / math.sqrt(len(lam))) if len(lam) > 1 else runs[0].std_error,
        "ess": runs[0].ess if len(runs) == 1 else [r.ess for r in runs],
        "theory": _theory(model, args),
        "runs": [r.to_dict() for r in runs],
    }
    _emit(out, args.out)


def cmd_evidence(args):
    model, data = _load(args)
    config = _chain_config(args, model, data)
    fe = stepping_stone(model, data, TemperatureSchedule.power(args.J, args.exponent), config)
    out = {"model": model.describe(), "n": data.n, **fe.to_dict()}
    if isinstance(model, ConjugateNormalModel):
        out["closed_form"] = -model.conjugate_log_partition(1.0, data)
    _emit(out, args.out)


def cmd_select(args):
    data = Dataset.read_csv(args.data)
    truth = _load_truth(args.truth)
    s_n = empirical_entropy(truth, data) if truth is not None else None
    reports = []
    for k, spec in enumerate(args.model):
        model = model_from_spec(spec)
        cfg = _chain_config(args, model, data).with_seed(derive_seed(args.seed, k))
        chain = run_chain(TemperedTarget(model, data, wbic_beta(data.n)), cfg)
        value, mcse = wbic(chain, data.n)
        reports.append(CriterionReport(
            label=spec, dim=model.dim, n=data.n, wbic=value, wbic_mcse=mcse,
            wbic1=None if s_n is None else value - data.n * s_n,
            dataset_fingerprint=data.fingerprint(), chain_fingerprints=[chain.fingerprint()],
        ))
    low = min(r.wbic for r in reports)
    rows = []
    for r in reports:
        d = r.to_dict()
        d["wbic2"] = r.wbic - low
        rows.append(d)
    _emit({"reports": rows, "selected": select_model(reports)}, args.out)


def cmd_experiment(args):
    plan = ExperimentPlan.read_json(args.config, paper_exact=args.paper_exact)
    if args.seed is not None:
        from dataclasses import replace

        plan = replace(plan, seed=args.seed)
    if args.workers:
        from dataclasses import replace

        plan = replace(plan, workers=args.workers)
    report = run_experiment(plan)
    blob = render_report(report, args.format)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(blob)
    else:
        sys.stdout.write(blob.decode())


def cmd_oracle(args):
    model, data = _load(args)
    results = []
    for beta in args.beta:
        if args.center is not None:
            grid = GridSpec.around(args.center, args.half_width, args.points)
        else:
            grid = default_grid(model, args.points)
        logz = grid_log_partition(model, data, beta, grid)
        e = grid_expected_nll(model, data, beta, grid)
        row = {
            "beta": beta,
            "log_partition": float(logz),
            "log_partition_refinement": logz.refinement,
            "expected_nll": float(e),
            "expected_nll_refinement": e.refinement,
            "boundary_fraction": logz.boundary_fraction,
        }
        if isinstance(model, ConjugateNormalModel):
            row["closed_form_log_partition"] = model.conjugate_log_partition(beta, data)
            row["closed_form_expected_nll"] = model.conjugate_expected_nll(beta, data)
        results.append(row)
    out = {"model": model.describe(), "n": data.n, "results": results}
    if 1.0 in args.beta:
        out["free_energy"] = -next(r["log_partition"] for r in results if r["beta"] == 1.0)
    _emit(out, args.out)


# -- parser ------------------------------------------------------------------


def _add_chain_flags(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--n-chains", type=int, default=1)
    g.add_argument("--burn-in", type=int, default=20000)
    g.add_argument("--thin", type=int, default=100)
    g.add_argument("--draws", type=int, default=2000)
    g.add_argument("--step-std", type=float, default=0.0012)
    g.add_argument("--target-acceptance", type=float, default=0.4)
    g.add_argument("--no-adapt", action="store_true", help="keep the proposal std fixed")
    g.add_argument("--init", default="auto", choices=["auto", "prior-draw", "start-point"])
    g.add_argument("--seed", type=int, default=0)


def _add_model_flags(p):
    p.add_argument("--model", required=True, help="e.g. rrr:M=6,N=6,H=3 or normal:d=2")
    p.add_argument("--data", required=True, help="CSV with x0.. then y0.. columns")
    p.add_argument("--out", help="write JSON here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wbic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset and its truth")
    p.add_argument("--family", choices=["rrr", "normal"], default="rrr")
    p.add_argument("--M", type=int, default=6)
    p.add_argument("--N", type=int, default=6)
    p.add_argument("--H0", type=int, default=3)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--x-std", type=float, default=3.0)
    p.add_argument("--coef-std", type=float, default=0.2)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.truth.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("wbic", help="WBIC of one model")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--truth", help="truth JSON, adds WBIC1 = WBIC - n S_n")
    p.add_argument("--dump", help="write retained draws here")
    p.add_argument("--dump-format", choices=["csv", "npz"], default="csv")
    p.set_defaults(func=cmd_wbic)

    p = sub.add_parser("waic", help="WAIC from a beta = 1 chain")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--dump")
    p.add_argument("--dump-format", choices=["csv", "npz"], default="csv")
    p.set_defaults(func=cmd_waic)

    p = sub.add_parser("rlct", help="estimate the real log canonical threshold")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--method", choices=["reweight", "two-chain", "regression"], default="reweight")
    p.add_argument("--beta1-mult", type=float, default=1.0, help="first temperature in units of 1/log n")
    p.add_argument("--beta-mult", type=float, default=1.5, help="second temperature in units of 1/log n")
    p.add_argument("--regression-mults", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--true-rank", type=int, help="true rank H0, for theory values of rrr models")
    p.set_defaults(func=cmd_rlct)

    p = sub.add_parser("evidence", help="stepping-stone free energy")
    _add_model_flags(p)
    _add_chain_flags(p)
    p.add_argument("--J", type=int, default=20)
    p.add_argument("--exponent", type=float, default=5.0)
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("select", help="compare candidate models by WBIC")
    p.add_argument("--data", required=True)
    p.add_argument("--model", action="append", required=True, help="repeat once per candidate")
    p.add_argument("--truth")
    p.add_argument("--out")
    _add_chain_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("experiment", help="run an experiment plan from JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--paper-exact", action="store_true", help="100 repeats, burn-in 50000, fixed step 0.0012")
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="grid quadrature for models with dim <= 4")
    _add_model_flags(p)
    p.add_argument("--beta", type=float, nargs="+", default=[1.0])
    p.add_argument("--points", type=int, default=401)
    p.add_argument("--center", type=float, nargs="+")
    p.add_argument("--half-width", type=float, nargs="+", default=[8.0])
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (WbicError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
