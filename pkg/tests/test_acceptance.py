"""Acceptance suite: one test per criterion at the stated design and tolerance.

Each test records a single ``criterion N: PASS|FAIL ...`` line that is
printed in the terminal summary. Run alone with::

    pytest tests/test_acceptance.py -v
"""

import json
import math
import os
import time

import numpy as np
import pytest

from ckls_elasticity.cli import main as cli_main
from ckls_elasticity.errors import DegenerateSample
from ckls_elasticity.estimate import plugin_beta, pr_estimate, transform_data
from ckls_elasticity.experiments import (
    EXPERIMENT_NAMES,
    collect_elasticity_replications,
    default_config,
    resolve_config,
    run_ci_coverage,
    run_clt_elasticity,
    run_experiment,
)
from ckls_elasticity.model import (
    CirParams,
    CklsParams,
    Path,
    SamplingGrid,
    elasticity_from_beta,
    map_ckls_to_cir,
    transform_T,
    transform_T_inverse,
)
from ckls_elasticity.simulate import RngStream, SimulationConfig, sample_cir_transition, simulate_ckls

JOBS = os.cpu_count() or 1


def record(log, number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    return passed


@pytest.fixture(scope="module")
def elasticity_runs():
    """Full-pipeline replications shared by the CLT and coverage criteria."""
    config = default_config("clt-k")
    start = time.perf_counter()
    reps = collect_elasticity_replications(config, jobs=JOBS)
    return config, reps, time.perf_counter() - start


def test_criterion_1_speed_clt(acceptance_log):
    config = default_config("clt-beta")
    assert (config.replications, config.horizon, config.omega) == (500, 500.0, 1.2)
    assert config.cir() == CirParams(0.25, 0.5, 1.0)
    start = time.perf_counter()
    s = run_experiment(config, jobs=JOBS)
    elapsed = time.perf_counter() - start
    assert s.targets["variance"] == pytest.approx(5.0, rel=1e-15)
    ok_var = s.checks["variance"]["passed"]
    ok_ks = s.checks["ks_normality"]["passed"]
    ok_time = elapsed <= 600
    detail = (f"var ratio {s.statistics['variance_ratio']:.4f} (band 0.8-1.2), KS p {s.statistics['ks_pvalue']:.3g}, "
              f"{elapsed:.0f}s")
    assert record(acceptance_log, 1, ok_var and ok_ks and ok_time, detail)


def test_criterion_2_elasticity_clt(acceptance_log, elasticity_runs):
    config, reps, collect_time = elasticity_runs
    assert (config.replications, config.substeps, config.knobs["measure"]) == (500, 16, "P")
    s = run_clt_elasticity(config, replications=reps)
    assert s.targets["variance"] == pytest.approx(1.25, rel=1e-15)
    ok_var = s.checks["variance"]["passed"]
    ok_mean = s.checks["k_hat_mean"]["passed"]
    ok_time = collect_time <= 1800
    mean_k = s.statistics["k_hat"]["mean"]
    detail = (f"var ratio {s.statistics['variance_ratio']:.4f} (band 0.75-1.25), mean k_hat {mean_k:.4f} "
              f"at {s.checks['k_hat_mean']['value']:.1f} SE from 0.75, {collect_time:.0f}s")
    assert record(acceptance_log, 2, ok_var and ok_mean and ok_time, detail)


def test_criterion_3_initial_rate(acceptance_log):
    config = default_config("rate-k")
    assert config.replications == 200 and len(config.knobs["deltas"]) == 4
    start = time.perf_counter()
    s = run_experiment(config, jobs=JOBS)
    elapsed = time.perf_counter() - start
    slope = s.statistics["slope"]
    ok = 0.35 <= slope <= 0.65 and elapsed <= 600
    assert record(acceptance_log, 3, ok, f"slope {slope:.4f} (band 0.35-0.65), {elapsed:.0f}s")


def test_criterion_4_ergodic_moments(acceptance_log):
    config = default_config("ergodic")
    assert (config.horizon, config.delta, config.replications) == (2000.0, 0.01, 1)
    start = time.perf_counter()
    s = run_experiment(config)
    elapsed = time.perf_counter() - start
    rels = [s.statistics[f"relative_error_{q}"] for q in (1, 2, 3)]
    ok = all(r <= 0.05 for r in rels) and elapsed <= 60
    detail = "relative errors " + ", ".join(f"q={q}: {r:.4f}" for q, r in zip((1, 2, 3), rels)) + f", {elapsed:.1f}s"
    assert record(acceptance_log, 4, ok, detail)


def test_criterion_5_measure_change(acceptance_log):
    config = default_config("measure-change")
    assert (config.replications, config.horizon, config.delta) == (10_000, 1.0, 1e-3)
    start = time.perf_counter()
    s = run_experiment(config, jobs=JOBS)
    elapsed = time.perf_counter() - start
    agree = s.checks["agreement_exp_neg"]
    mass = s.checks["weight_mass"]
    ok = agree["passed"] and mass["passed"] and elapsed <= 300
    detail = (f"exp(-X_T) gap {agree['value']:.2f} combined SE, weight mass gap {mass['value']:.2f} SE (limit 3), "
              f"ESS {s.statistics['effective_sample_size']:.0f}/{config.replications}, {elapsed:.0f}s")
    assert record(acceptance_log, 5, ok, detail)


# conditional moments of the exact transition, evaluated with mpmath at 40 digits
_TRANSITION_ORACLE = [
    ((0.25, 0.5, 1.0, 0.8, 0.1), 0.78536882735021429358, 0.075416494860872873573),
    ((2.0, 1.0, 1.0, 1.5, 0.5), 1.6967346701436831768, 0.51279494955796200983),
    ((0.1, 2.0, 1.0, 0.3, 0.05), 0.27620935450898986829, 0.013029198706272447292),
]


def test_criterion_6_exact_sampler(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    for idx, ((a, b, g, x0, dt), mean, var) in enumerate(_TRANSITION_ORACLE):
        x = sample_cir_transition(CirParams(a, b, g), x0, dt, 100_000, RngStream(2024, idx))
        n = x.size
        dev_mean = abs(x.mean() - mean) / math.sqrt(var / n)
        m4 = np.mean((x - x.mean()) ** 4)
        dev_var = abs(x.var(ddof=1) - var) / math.sqrt((m4 - var * var) / n)
        worst = max(worst, dev_mean, dev_var)
    elapsed = time.perf_counter() - start
    ok = worst <= 3.0 and elapsed <= 30
    assert record(acceptance_log, 6, ok, f"largest moment deviation {worst:.2f} SE over 3 designs, {elapsed:.1f}s")


def test_criterion_7_algebraic_identities(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    failures = []
    xs = rng.uniform(1e-4, 1e4, size=2000)
    for k in (0.5, 0.6, 0.75, 0.9, 0.99):
        for L in (0.1, 1.0, 7.0):
            back = transform_T_inverse(transform_T(xs, k, L), k, L)
            if np.max(np.abs(back / xs - 1)) > 1e-12:
                failures.append(f"roundtrip k={k} L={L}")
    path = simulate_ckls(CklsParams(1, 1, 1, 0.75), SamplingGrid(0.01, 5000), SimulationConfig(seed=1))
    for k in (0.5, 0.7, 0.9):
        ref = plugin_beta(path, k, 1.0)
        for L in (0.2, 1.0, 5.0):
            via = pr_estimate(transform_data(path, k, L), L).beta_hat
            if abs(via / ref - 1) > 1e-10:
                failures.append(f"plug-in identity / L-independence k={k} L={L}")
    for b in (0.25, 1.0, 3.0):
        for k in (0.5, 0.625, 0.75, 0.875):
            cir = map_ckls_to_cir(CklsParams(1.0, b, 1.0, k))
            if elasticity_from_beta(cir.beta, b) != k:
                failures.append(f"inverse map b={b} k={k}")
    try:
        pr_estimate(Path(SamplingGrid(0.1, 5), np.full(6, 2.5)), 1.0)
        failures.append("constant path accepted")
    except DegenerateSample:
        pass
    # left endpoints {1, 3}: mean 2, variance 1, so beta_hat = 1 and alpha_hat = 2 exactly
    est = pr_estimate(Path(SamplingGrid(0.1, 2), np.array([1.0, 3.0, 5.0])), 1.0)
    if (est.beta_hat, est.alpha_hat) != (1.0, 2.0):
        failures.append("n=2 hand case")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed <= 10
    assert record(acceptance_log, 7, ok, f"{len(failures)} identity failures {failures[:3]}, {elapsed:.1f}s")


def test_criterion_8_coverage(acceptance_log, elasticity_runs):
    _, reps, _ = elasticity_runs
    config = default_config("coverage")
    assert config.tolerances["coverage_band"] == [0.90, 0.99]
    s = run_ci_coverage(config, replications=reps)
    cov = s.statistics["coverage"]
    ok = s.checks["coverage"]["passed"]
    assert record(acceptance_log, 8, ok, f"coverage {cov:.3f} (band 0.90-0.99) over {s.completed} intervals")


# reduced designs: determinism does not depend on size
_SMALL = {
    "clt-beta": {"replications": 10, "horizon": 20.0},
    "clt-k": {"replications": 8, "horizon": 10.0, "omega": 1.5},
    "coverage": {"replications": 8, "horizon": 10.0, "omega": 1.5},
    "rate-k": {"replications": 3, "knobs": {"deltas": [1e-2, 2.5e-3]}},
    "ergodic": {"horizon": 50.0, "replications": 3},
    "discretization": {"replications": 3, "horizon": 2.0},
    "measure-change": {"replications": 300},
    "plugin": {"replications": 3, "knobs": {"ladder": [[10.0, 1.1], [10.0, 1.5]]}},
}


def test_criterion_9_determinism(acceptance_log, tmp_path):
    mismatched = []
    for name in EXPERIMENT_NAMES:
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps(_SMALL[name]))
        first = tmp_path / name / "a"
        assert cli_main(["experiment", "--name", name, "--config", str(cfg), "--out-dir", str(first)]) == 0
        for jobs in ("1", "8"):
            again = tmp_path / name / f"b{jobs}"
            code = cli_main(["experiment", "--name", name, "--config", str(first / "manifest.json"),
                             "--out-dir", str(again), "--jobs", jobs])
            assert code == 0
            for out in ("summary.json", "per_replication.csv"):
                if (first / out).read_bytes() != (again / out).read_bytes():
                    mismatched.append(f"{name}/{out}/jobs={jobs}")
    ok = not mismatched
    detail = f"{len(EXPERIMENT_NAMES)} experiments re-run from manifest at 1 and 8 workers; mismatches {mismatched}"
    assert record(acceptance_log, 9, ok, detail)
