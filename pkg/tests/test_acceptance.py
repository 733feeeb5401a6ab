"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the pytest terminal
summary) before asserting, so a failing criterion still reports its
numbers.
"""

import json
import math

import numpy as np
import pytest

from wbic import (
    ChainConfig,
    Dataset,
    ExperimentPlan,
    GridSpec,
    TemperatureSchedule,
    TemperedTarget,
    bic,
    fit_map_or_mle,
    generate_normal_dataset,
    grid_expected_nll,
    grid_log_partition,
    make_conjugate_normal_model,
    make_product_mean_model,
    make_square_mean_model,
    optimal_beta,
    rlct_reweighted,
    rlct_two_chain,
    run_chain,
    run_experiment,
    stepping_stone,
    wbic,
    wbic_beta,
)
from wbic.cli import main

# published averages and standard deviations over 100 repeats, H = 1..6
TABLE3_AVE = {1: 5.50, 2: 9.93, 3: 13.44, 4: 14.69, 5: 15.74, 6: 16.53}
TABLE3_STD = {1: 0.19, 2: 0.32, 3: 0.47, 4: 0.60, 5: 0.66, 6: 0.88}


# -- 1. conjugate oracle identities --------------------------------------------


def test_criterion_1_conjugate_oracle_identities(record_criterion):
    failures, worst = [], {"grid": 0.0, "wbic": 0.0, "evidence": 0.0}
    for d in (1, 2, 4):
        for n in (100, 1000):
            model = make_conjugate_normal_model(d, noise_std=1.0, prior_std=1.0)
            data, _ = generate_normal_dataset(d=d, n=n, mean=0.5, seed=10 * d + n)
            tag = f"d={d},n={n}"

            # (a) grid log partition at beta = 1, centred on the posterior
            mean, var = model.conjugate_posterior(1.0, data)
            points = {1: 401, 2: 201, 4: 40}[d]
            grid = GridSpec.around(mean, 10.0 * math.sqrt(float(var)), points)
            err = abs(grid_log_partition(model, data, 1.0, grid) - model.conjugate_log_partition(1.0, data))
            worst["grid"] = max(worst["grid"], err)
            if err > 1e-4:
                failures.append(f"{tag} grid err {err:.2e}")

            # (b) WBIC chain against the closed-form tempered expectation
            beta = wbic_beta(n)
            cfg = ChainConfig(burn_in=5000, thin=5, draws=4000, step_std_init=0.1, seed=d * n)
            value, mcse = wbic(run_chain(TemperedTarget(model, data, beta), cfg))
            z = abs(value - model.conjugate_expected_nll(beta, data)) / mcse
            worst["wbic"] = max(worst["wbic"], z)
            if z > 4:
                failures.append(f"{tag} wbic z {z:.2f}")

            # (c) stepping-stone free energy
            est = stepping_stone(model, data, TemperatureSchedule.power(), ChainConfig(
                burn_in=1000, thin=5, draws=2000, step_std_init=0.1, seed=d + n))
            z = abs(est.value + model.conjugate_log_partition(1.0, data)) / est.mcse
            worst["evidence"] = max(worst["evidence"], z)
            if z > 4:
                failures.append(f"{tag} evidence z {z:.2f}")
    detail = (f"max grid err {worst['grid']:.1e} (tol 1e-4); max |z| wbic {worst['wbic']:.2f}, "
              f"evidence {worst['evidence']:.2f} (tol 4)")
    record_criterion(1, not failures, detail if not failures else "; ".join(failures))
    assert not failures, failures


# -- 2. monotone tempered expectation ------------------------------------------


def test_criterion_2_expected_nll_strictly_decreasing(record_criterion):
    model = make_square_mean_model(noise_std=1.0, prior_std=1.0)
    data = Dataset(y=np.random.default_rng(2).normal(0.3, 1.0, size=100))
    grid = GridSpec((-6.0,), (6.0,), (6001,))
    betas = np.linspace(0.05, 1.0, 20)
    curve = np.array([grid_expected_nll(model, data, b, grid) for b in betas])
    steps = np.diff(curve)
    ok = bool(np.all(steps < 0))
    record_criterion(2, ok, f"20 betas, largest step {steps.max():.3e} (must be < 0)")
    assert ok


# -- 3. WBIC agrees with BIC on a regular model --------------------------------


def test_criterion_3_wbic_matches_bic_regular(record_criterion):
    model = make_conjugate_normal_model(2, noise_std=1.0, prior_std=1.0)
    n = 1000
    wbics, bics = [], []
    for seed in range(20):
        data, _ = generate_normal_dataset(d=2, n=n, mean=[0.5, -0.3], seed=500 + seed)
        cfg = ChainConfig(burn_in=3000, thin=5, draws=2000, step_std_init=0.05, seed=seed)
        wbics.append(wbic(run_chain(TemperedTarget(model, data, wbic_beta(n)), cfg))[0])
        bics.append(bic(model, data, fit_map_or_mle(model, data)))
    wbics, bics = np.array(wbics), np.array(bics)
    gap = abs(wbics.mean() - bics.mean())
    se = math.hypot(wbics.std(ddof=1), bics.std(ddof=1)) / math.sqrt(20)
    paired = (wbics - bics).mean()
    ok = gap <= 3 * se
    record_criterion(3, ok, f"|mean WBIC - mean BIC| = {gap:.3f} <= 3*{se:.3f}; paired mean diff {paired:.3f}")
    assert ok


# -- 4. regular RLCT from closed-form expectations ------------------------------


def test_criterion_4_regular_rlct_closed_form(record_criterion):
    n = 10000
    b1 = wbic_beta(n)
    ratios = {}
    for d in (1, 2, 4):
        model = make_conjugate_normal_model(d, noise_std=1.0, prior_std=1.0)
        data, _ = generate_normal_dataset(d=d, n=n, mean=0.5, seed=d)
        p1 = (b1, model.conjugate_expected_nll(b1, data))
        p2 = (1.5 * b1, model.conjugate_expected_nll(1.5 * b1, data))
        ratios[d] = rlct_two_chain(p1, p2).lambda_hat / (d / 2)
    ok = all(0.9 <= r <= 1.1 for r in ratios.values())
    record_criterion(4, ok, "lambda_hat/(d/2): " + ", ".join(f"d={d} {r:.4f}" for d, r in ratios.items()))
    assert ok


# -- 5. optimal inverse temperature --------------------------------------------


def test_criterion_5_optimal_beta_times_log_n(record_criterion):
    model = make_conjugate_normal_model(1, noise_std=1.0, prior_std=1.0)
    data, _ = generate_normal_dataset(d=1, n=1000, mean=0.0, seed=5)
    f = -model.conjugate_log_partition(1.0, data)
    res = optimal_beta(model, data, f, curve=lambda b: (model.conjugate_expected_nll(b, data), 0.0), tol=1e-10)
    ok = 0.9 <= res.beta_star_log_n <= 1.1
    record_criterion(5, ok, f"beta* log n = {res.beta_star_log_n:.4f} (band [0.9, 1.1])")
    assert ok


# -- 6 and 7. reduced rank regression sweep at desk scale ------------------------


@pytest.fixture(scope="module")
def desk_sweep():
    plan = ExperimentPlan.desk(estimators=("wbic", "rlct"), seed=0)
    return run_experiment(plan)


@pytest.mark.slow
def test_criterion_6_wbic_selects_true_rank(record_criterion, desk_sweep):
    report = desk_sweep
    counts = report.selection_counts()
    agg = report.aggregates()
    wbic2 = [agg[str(h)]["wbic2"]["mean"] for h in (4, 5, 6)]
    ok = (not report.failures and counts["3"] >= 9 and all(v > 0 for v in wbic2)
          and wbic2[0] < wbic2[1] < wbic2[2])
    record_criterion(
        6, ok,
        f"H=3 selected {counts['3']}/10 (need >= 9); WBIC2 ave H=4,5,6 = "
        + ", ".join(f"{v:.1f}" for v in wbic2) + " (positive, increasing)",
    )
    assert ok


@pytest.mark.slow
def test_criterion_7_rlct_matches_published_table(record_criterion, desk_sweep):
    agg = desk_sweep.aggregates()
    parts, ok = [], not desk_sweep.failures
    for h in range(1, 7):
        lam = agg[str(h)]["rlct"]["mean"]
        band = 3 * TABLE3_STD[h]
        inside = abs(lam - TABLE3_AVE[h]) <= band
        ok &= inside
        parts.append(f"H={h} {lam:.2f}{'' if inside else '!'}")
    record_criterion(7, ok, "mean lambda_hat " + ", ".join(parts) + " (within 3 published std)")
    assert ok


# -- 8. singular toy: MCMC and quadrature agree ----------------------------------


def test_criterion_8_singular_toy_mcmc_vs_quadrature(record_criterion):
    model = make_product_mean_model(noise_std=1.0, prior_std=1.0)
    n = 1000
    b1, b2 = wbic_beta(n), 1.5 * wbic_beta(n)
    grid = GridSpec((-6.0, -6.0), (6.0, 6.0), (1201, 1201))
    zs, parts = [], []
    for seed in range(3):
        data = Dataset(y=np.random.default_rng(100 + seed).normal(0.0, 1.0, size=n))
        e1 = grid_expected_nll(model, data, b1, grid)
        e2 = grid_expected_nll(model, data, b2, grid)
        exact = rlct_two_chain((b1, e1), (b2, e2)).lambda_hat
        cfg = ChainConfig(burn_in=5000, thin=10, draws=5000, step_std_init=0.2, seed=seed)
        est = rlct_reweighted(run_chain(TemperedTarget(model, data, b1), cfg), b2)
        z = abs(est.lambda_hat - exact) / est.std_error
        zs.append(z)
        parts.append(f"{est.lambda_hat:.3f} vs {exact:.3f} (z {z:.2f})")
    ok = all(z <= 3 for z in zs)
    record_criterion(8, ok, "; ".join(parts))
    assert ok


# -- 9. CLI determinism -----------------------------------------------------------


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _run_cli(argv, capsys, out_files):
    assert main(argv) == 0, argv
    stdout = capsys.readouterr().out
    files = {}
    for path in out_files:
        raw = path.read_bytes()
        files[path.name] = _strip_timing(json.loads(raw)) if path.suffix == ".json" else raw
    try:
        stdout = _strip_timing(json.loads(stdout))
    except json.JSONDecodeError:
        pass
    return stdout, files


def test_criterion_9_cli_determinism(record_criterion, tmp_path, capsys):
    chain = ["--burn-in", "1000", "--thin", "2", "--draws", "300", "--seed", "7"]
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({
        "truth": {"M": 3, "N": 2, "H0": 1}, "candidates": [1, 2], "n": 80, "repeats": 2,
        "estimators": ["wbic", "rlct", "waic", "bic", "aic"],
        "chain": {"burn_in": 500, "thin": 2, "draws": 200},
    }))
    rrr, norm = tmp_path / "rrr", tmp_path / "norm"
    gen = ["generate", "--M", "3", "--N", "2", "--H0", "1", "--n", "80", "--seed", "3"]
    # fixtures for the estimator commands
    assert main(gen + ["--out", str(rrr)]) == 0
    assert main(["generate", "--family", "normal", "--n", "60", "--seed", "3", "--out", str(norm)]) == 0
    capsys.readouterr()
    data, ndata, truth = str(rrr) + ".csv", str(norm) + ".csv", str(rrr) + ".truth.json"
    dump = tmp_path / "draws.csv"

    commands = {
        "generate": (gen + ["--out", str(tmp_path / "g")], [tmp_path / "g.csv", tmp_path / "g.truth.json"]),
        "wbic": (["wbic", "--model", "rrr:M=3,N=2,H=1", "--data", data, "--truth", truth, "--dump", str(dump)] + chain,
                 [dump, tmp_path / "draws.csv.json"]),
        "waic": (["waic", "--model", "rrr:M=3,N=2,H=1", "--data", data] + chain, []),
        "rlct reweight": (["rlct", "--model", "rrr:M=3,N=2,H=1", "--data", data, "--repeats", "2"] + chain, []),
        "rlct two-chain": (["rlct", "--model", "rrr:M=3,N=2,H=1", "--data", data, "--method", "two-chain"] + chain, []),
        "rlct regression": (["rlct", "--model", "normal:d=1", "--data", ndata, "--method", "regression"] + chain, []),
        "evidence": (["evidence", "--model", "normal:d=1", "--data", ndata, "--J", "5"] + chain, []),
        "select": (["select", "--data", data, "--truth", truth, "--model", "rrr:M=3,N=2,H=1",
                    "--model", "rrr:M=3,N=2,H=2"] + chain, []),
        "experiment text": (["experiment", "--config", str(plan), "--seed", "7"], []),
        "experiment csv": (["experiment", "--config", str(plan), "--format", "csv", "--seed", "7"], []),
        "experiment json": (["experiment", "--config", str(plan), "--format", "json", "--seed", "7"], []),
        "oracle": (["oracle", "--model", "product", "--data", ndata, "--beta", "0.3", "1.0", "--points", "101"], []),
    }
    differing = []
    for name, (argv, outs) in commands.items():
        first = _run_cli(argv, capsys, outs)
        second = _run_cli(argv, capsys, outs)
        if first != second:
            differing.append(name)
    # a different seed must actually change a stochastic result
    other = _run_cli(commands["waic"][0][:-1] + ["8"], capsys, [])
    seed_matters = other != _run_cli(commands["waic"][0], capsys, [])
    ok = not differing and seed_matters
    record_criterion(
        9, ok,
        f"{len(commands) - len(differing)}/{len(commands)} subcommand runs identical after removing timing"
        + (f"; differing: {differing}" if differing else "") + ("" if seed_matters else "; seed has no effect"),
    )
    assert ok
