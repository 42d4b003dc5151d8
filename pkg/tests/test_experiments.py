import json
import math

import numpy as np
import pytest

from ckls_elasticity.errors import ConfigError, FailureBudgetExceeded
from ckls_elasticity.experiments import (
    EXPERIMENT_NAMES,
    ExperimentConfig,
    _replicate,
    collect_elasticity_replications,
    default_config,
    resolve_config,
    run_ci_coverage,
    run_clt_elasticity,
    run_experiment,
)
from ckls_elasticity.errors import NonPositivePath


def test_every_default_config_is_valid():
    for name in EXPERIMENT_NAMES:
        cfg = default_config(name)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_config_rejections():
    with pytest.raises(ConfigError):
        resolve_config("clt-beta", {"replications": 1})
    with pytest.raises(ConfigError):
        resolve_config("coverage", {"replications": 2})
    with pytest.raises(ConfigError):
        resolve_config("nope")
    with pytest.raises(ConfigError):
        resolve_config("clt-beta", {"bogus": 1})
    with pytest.raises(ConfigError):
        resolve_config("clt-beta", {"name": "ergodic"})
    with pytest.raises(ConfigError):
        resolve_config("clt-beta", {"horizon": 0.5})
    with pytest.raises(ConfigError):
        resolve_config("clt-k", {"estimator": {"level": 2.0}})
    with pytest.raises(ConfigError):
        run_experiment(default_config("ergodic"), jobs=0)
    # a single path is enough for time averages
    assert resolve_config("ergodic", {"replications": 1}).replications == 1


def test_resolve_merges_and_switches_grid():
    cfg = resolve_config("clt-k", {"delta": 0.01, "knobs": {"measure": "Q"}, "tolerances": {"mean_se": 4}})
    assert cfg.omega is None and cfg.delta == 0.01
    assert cfg.knobs["measure"] == "Q"
    assert cfg.tolerances["variance_rel"] == 0.25 and cfg.tolerances["mean_se"] == 4


def test_failure_budget():
    def always_fails(config, r):
        raise NonPositivePath("boom")

    def odd_fail(config, r):
        if r % 2:
            raise NonPositivePath("boom")
        return {"r": r}

    cfg = resolve_config("clt-beta", {"replications": 10})
    with pytest.raises(FailureBudgetExceeded):
        _replicate(always_fails, cfg, 10, 1)
    loose = resolve_config("clt-beta", {"replications": 10, "failure_budget": 0.5})
    reps = _replicate(odd_fail, loose, 10, 1)
    assert reps.failures["count"] == 5 and reps.failures["by_type"] == {"NonPositivePath": 5}
    assert [r is None for r in reps.records] == [bool(i % 2) for i in range(10)]


def test_small_clt_beta_run():
    cfg = resolve_config("clt-beta", {"replications": 40, "horizon": 100.0})
    s = run_experiment(cfg)
    assert s.completed == 40
    assert s.targets["variance"] == pytest.approx(5.0)
    assert set(s.checks) == {"variance", "ks_normality", "beta_hat_mean"}
    assert len(s.per_replication) == 40
    assert s.per_replication_csv().startswith("rep,seed,estimate,z\n")
    json.loads(s.to_json())


def test_summary_identical_across_worker_counts():
    cfg = resolve_config("clt-beta", {"replications": 16, "horizon": 50.0, "seed": 3})
    one = run_experiment(cfg, jobs=1).to_json()
    two = run_experiment(cfg, jobs=2).to_json()
    assert one == two
    other = run_experiment(resolve_config("clt-beta", {"replications": 16, "horizon": 50.0, "seed": 4})).to_json()
    assert other != one


def test_elasticity_replications_are_shared():
    cfg = resolve_config("clt-k", {"replications": 8, "horizon": 20.0, "omega": 1.5})
    reps = collect_elasticity_replications(cfg)
    a = run_clt_elasticity(cfg, replications=reps)
    cov_cfg = resolve_config("coverage", {"replications": 8, "horizon": 20.0, "omega": 1.5})
    b = run_ci_coverage(cov_cfg, replications=reps)
    assert a.per_replication == b.per_replication
    assert a.statistics["coverage"] == b.statistics["coverage"]


def test_pipeline_under_drift_adjusted_measure():
    # the transformed data are exactly square-root here, so the plug-in is centred
    cfg = resolve_config("clt-k", {"replications": 200, "knobs": {"measure": "Q"}})
    s = run_experiment(cfg)
    assert s.checks["k_hat_mean"]["passed"]
    assert 0.6 < s.statistics["variance_ratio"] < 1.4


def test_coverage_band_from_level():
    cfg = resolve_config(
        "coverage",
        {"replications": 100, "knobs": {"measure": "Q"}, "estimator": {"level": 0.5},
         "tolerances": {"coverage_band": None}},
    )
    s = run_experiment(cfg)
    half = 3 * math.sqrt(0.25 / 100)
    assert s.targets["band"] == pytest.approx([0.5 - half, 0.5 + half])
    assert s.checks["coverage"]["passed"]


def test_rate_experiment_small():
    cfg = resolve_config("rate-k", {"replications": 20, "knobs": {"deltas": [1e-2, 2.5e-3, 6.25e-4]}})
    s = run_experiment(cfg)
    assert len(s.tables["rate"]) == 3
    assert s.checks["finest_below_coarsest"]["passed"]
    assert 0.2 < s.statistics["slope"] < 0.8


def test_ergodic_moments_pass_at_default():
    s = run_experiment(default_config("ergodic"))
    assert s.passed
    assert s.statistics["relative_error_0"] == 0.0


def test_ergodic_at_slow_mixing_point_is_reported():
    # mean 1, shape 1/2: slow mixing, so only the first moment is held to 5%
    s = run_experiment(resolve_config("ergodic", {"model": {"alpha": 1.0, "beta": 1.0, "gamma": 2.0}}))
    assert s.targets["moment_1"] == pytest.approx(1.0)
    assert s.targets["moment_2"] == pytest.approx(3.0)
    assert s.targets["moment_3"] == pytest.approx(15.0)
    assert s.statistics["relative_error_1"] <= 0.05


def test_discretization_noise_free_matches_ode():
    # with negligible noise X is the mean-reverting ODE solution, whose
    # left-Riemann local error has a closed form
    alpha, beta, x0 = 1.0, 2.0, 3.0
    cfg = resolve_config(
        "discretization",
        {"model": {"alpha": alpha, "beta": beta, "gamma": 1e-6}, "replications": 2,
         "horizon": 2.0, "knobs": {"x0": x0, "powers": [1]}},
    )
    s = run_experiment(cfg)
    m = alpha / beta
    for row in s.tables["errors"]:
        d = row["delta"]
        t = np.arange(0.0, 2.0, d)
        left = m + (x0 - m) * np.exp(-beta * t)
        local = np.sum(np.abs((left - m) * ((1 - math.exp(-beta * d)) / beta - d))) / 2.0
        assert row["median_local_error"] == pytest.approx(local, rel=1e-4)
    assert s.statistics["slope_local_1"] == pytest.approx(1.0, abs=0.05)


def test_discretization_slope_default_small():
    s = run_experiment(resolve_config("discretization", {"replications": 6}))
    for p in (1, 2):
        assert 0.35 <= s.statistics[f"slope_local_{p}"] <= 0.65


def test_measure_change_light_tailed_weights():
    # a = k sigma^2 / 2 and a start at 1 make the kernel vanish at the start,
    # so weights stay near one and both sides must agree
    sigma, k = 0.2, 0.75
    cfg = resolve_config(
        "measure-change",
        {"model": {"a": k * sigma**2 / 2, "b": 1.0, "sigma": sigma, "k": k, "L": 1.0},
         "replications": 4000, "knobs": {"x0": 1.0}},
    )
    s = run_experiment(cfg)
    assert s.statistics["effective_sample_size"] > 0.9 * 4000
    assert s.checks["weight_mass"]["passed"]
    row = s.statistics["exp_neg"]
    assert abs(row["reweighted"] - row["direct"]) < 1e-3


def test_plugin_force_oracle_is_zero():
    cfg = resolve_config("plugin", {"replications": 3, "knobs": {"force_oracle": True}})
    s = run_experiment(cfg)
    assert s.checks["zero"]["passed"]


def test_plugin_ladder_shrinks():
    s = run_experiment(resolve_config("plugin", {"replications": 30}))
    meds = [row["median_abs_statistic"] for row in s.tables["ladder"]]
    assert len(meds) == 3
    assert s.checks["shrinks"]["passed"], meds


def test_elasticity_target_and_square_root_boundary():
    from ckls_elasticity.estimate import asymptotic_variance_k

    assert asymptotic_variance_k(2.0, 0.5) == 1.25
    # k = 1/2 with 2a >= sigma^2: Euler paths must stay usable
    cfg = resolve_config(
        "clt-k",
        {"model": {"a": 1.0, "b": 1.0, "sigma": 1.0, "k": 0.5, "L": 1.0},
         "replications": 100, "horizon": 20.0, "omega": 1.3},
    )
    s = run_experiment(cfg)
    assert s.failures["count"] <= 1
    assert s.targets["variance"] == 2.5


def test_weight_normalization_and_small_noise_flow():
    sigma, k, b = 0.2, 0.75, 1.0
    a = k * sigma**2 / 2
    cfg = resolve_config(
        "measure-change",
        {"model": {"a": a, "b": b, "sigma": sigma, "k": k, "L": 1.0}, "replications": 2000, "knobs": {"x0": 1.0}},
    )
    s = run_experiment(cfg)
    assert s.statistics["one"]["reweighted"] == pytest.approx(s.statistics["weight_mean"], rel=1e-12)
    # deterministic flow of the transformed drift from the transformed start
    alpha, beta = (sigma**2) / 4, 2 * b * (1 - k)
    x0 = s.statistics["x0_transformed"]
    flow = alpha / beta + (x0 - alpha / beta) * math.exp(-beta)
    row = s.statistics["exp_neg"]
    assert row["direct"] == pytest.approx(math.exp(-flow), abs=0.01)
    assert row["reweighted"] == pytest.approx(math.exp(-flow), abs=0.01)


def test_plugin_statistic_tightens_with_horizon():
    s = run_experiment(resolve_config("plugin", {"replications": 30, "knobs": {"ladder": [[20.0, 1.3], [80.0, 1.3]]}}))
    assert s.checks["shrinks"]["passed"], s.tables["ladder"]
