"""Monte Carlo experiments with machine-readable summaries.

Every experiment is a pure function of its :class:`ExperimentConfig`.
Replication ``r`` draws from stream ``r`` of the master seed, and results are
merged by replication index, so the worker count never changes the output.
"""

from __future__ import annotations

import copy
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import repeat
from typing import Callable

import numpy as np

from .errors import (
    CklsError,
    ConfigError,
    FailureBudgetExceeded,
    NonPositivePath,
    WeightDegeneracyWarning,
)
from .estimate import (
    K_INITIAL_BOUNDS,
    EstimateOptions,
    asymptotic_variance_beta,
    asymptotic_variance_k,
    estimate_elasticity,
    initial_k_aggregated,
    plugin_beta,
    pr_estimate,
)
from .model import (
    CirParams,
    CklsParams,
    Path,
    SamplingGrid,
    cir_stationary_moment,
    map_ckls_to_cir,
    transform_T,
    transform_T_inverse,
    girsanov_log_weight,
)
from .simulate import (
    RngStream,
    Scheme,
    SimulationConfig,
    build_grid,
    grid_from_delta,
    sample_cir_transition,
    simulate_ckls,
    simulate_cir_exact,
)
from .stats import ks_statistic_normal, linear_fit, summarize

EXPERIMENT_NAMES = (
    "clt-beta",
    "clt-k",
    "rate-k",
    "ergodic",
    "discretization",
    "measure-change",
    "plugin",
    "coverage",
)

_ACCEPTANCE_CKLS = {"a": 1.0, "b": 1.0, "sigma": 1.0, "k": 0.75, "L": 1.0}

_DEFAULTS: dict[str, dict] = {
    "clt-beta": dict(
        model={"alpha": 0.25, "beta": 0.5, "gamma": 1.0},
        horizon=500.0, omega=1.2, replications=500,
        tolerances={"variance_rel": 0.20, "ks_alpha": 0.01, "mean_se": 3.0},
    ),
    "clt-k": dict(
        model=dict(_ACCEPTANCE_CKLS), horizon=500.0, omega=1.2, replications=500,
        knobs={"measure": "P"},
        tolerances={"variance_rel": 0.25, "ks_alpha": 0.01, "mean_se": 3.0},
    ),
    "coverage": dict(
        model=dict(_ACCEPTANCE_CKLS), horizon=500.0, omega=1.2, replications=500,
        knobs={"measure": "P"},
        tolerances={"coverage_band": [0.90, 0.99], "band_se": 3.0},
    ),
    "rate-k": dict(
        model=dict(_ACCEPTANCE_CKLS), horizon=10.0, delta=1e-2, replications=200,
        knobs={"deltas": [1e-2, 2.5e-3, 6.25e-4, 1.5625e-4], "variant": "single"},
        tolerances={"slope_low": 0.35, "slope_high": 0.65},
    ),
    "ergodic": dict(
        model={"alpha": 10.0, "beta": 5.0, "gamma": 1.0},
        horizon=2000.0, delta=0.01, replications=1,
        knobs={"orders": [0, 1, 2, 3]},
        tolerances={"moment_rel": 0.05},
    ),
    "discretization": dict(
        model={"alpha": 0.25, "beta": 0.5, "gamma": 1.0},
        horizon=10.0, delta=0.04, replications=20,
        knobs={"deltas": [0.04, 0.01, 0.0025, 0.000625], "refine": 64, "powers": [1, 2]},
        tolerances={"slope_low": 0.35, "slope_high": 0.65},
    ),
    "measure-change": dict(
        model=dict(_ACCEPTANCE_CKLS), horizon=1.0, delta=1e-3, replications=10_000, substeps=1,
        knobs={"functionals": ["exp_neg", "one", "indicator"], "interval": None},
        tolerances={"combined_se": 3.0, "min_ess_fraction": 0.05},
    ),
    "plugin": dict(
        model=dict(_ACCEPTANCE_CKLS), horizon=50.0, omega=1.1, replications=100,
        knobs={"ladder": [[50.0, 1.1], [50.0, 1.3], [50.0, 1.5]], "force_oracle": False},
        tolerances={},
    ),
}

# fewest replications each experiment accepts
_MIN_REPLICATIONS = {"clt-beta": 8, "clt-k": 8, "coverage": 8, "ergodic": 1}


@dataclass
class ExperimentConfig:
    """Full, JSON-serializable description of one experiment run.

    ``model`` holds either CKLS keys ``a, b, sigma, k, L`` or square-root keys
    ``alpha, beta, gamma``. The grid is ``horizon`` with either ``omega`` or
    ``delta``. ``estimator`` holds :class:`EstimateOptions` fields and
    ``knobs`` the experiment-specific settings.
    """

    name: str
    model: dict
    horizon: float
    omega: float | None = None
    delta: float | None = None
    replications: int = 500
    seed: int = 0
    substeps: int = 16
    scheme: str = "full_truncation"
    estimator: dict = field(default_factory=lambda: {"initial": "agg-single", "epsilon": 0.1, "level": 0.95})
    knobs: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    failure_budget: float = 0.01

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENT_NAMES)}")
        m_min = _MIN_REPLICATIONS.get(self.name, 2)
        if int(self.replications) != self.replications or self.replications < m_min:
            raise ConfigError(f"{self.name} needs at least {m_min} replications, got {self.replications!r}")
        self.replications = int(self.replications)
        if (self.omega is None) == (self.delta is None):
            raise ConfigError("give exactly one of omega and delta")
        if not (0.0 <= self.failure_budget < 1.0):
            raise ConfigError("failure_budget must lie in [0, 1)")
        RngStream(self.seed)
        SimulationConfig(self.substeps, Scheme(self.scheme), self.seed)
        # fail early on bad model or grid
        self.grid()
        if self.is_ckls:
            self.ckls()
        else:
            self.cir()
        self.options()

    @property
    def is_ckls(self) -> bool:
        return "a" in self.model

    def ckls(self) -> CklsParams:
        if not self.is_ckls:
            raise ConfigError(f"{self.name} needs CKLS parameters a, b, sigma, k")
        try:
            return CklsParams(**self.model)
        except TypeError as exc:
            raise ConfigError(f"bad model keys: {exc}") from None

    def cir(self) -> CirParams:
        if self.is_ckls:
            return map_ckls_to_cir(self.ckls())
        try:
            return CirParams(**self.model)
        except TypeError as exc:
            raise ConfigError(f"bad model keys: {exc}") from None

    def grid(self) -> SamplingGrid:
        if self.omega is not None:
            return build_grid(self.horizon, self.omega)
        return grid_from_delta(self.horizon, self.delta)

    def options(self) -> EstimateOptions:
        try:
            return EstimateOptions(**self.estimator)
        except TypeError as exc:
            raise ConfigError(f"bad estimator keys: {exc}") from None

    def simulation(self, stream: int, x0: float | None = None) -> SimulationConfig:
        x0 = self.knobs.get("x0") if x0 is None else x0
        return SimulationConfig(self.substeps, Scheme(self.scheme), self.seed, x0, stream)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(data))


def default_config(name: str) -> ExperimentConfig:
    if name not in _DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENT_NAMES)}")
    return ExperimentConfig(name=name, **copy.deepcopy(_DEFAULTS[name]))


def resolve_config(name: str, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults for ``name`` updated by ``overrides``.

    ``model`` is replaced wholesale; ``estimator``, ``knobs`` and
    ``tolerances`` are merged key by key. Setting ``omega`` clears ``delta``
    and vice versa.
    """
    base = default_config(name).to_dict()
    for key, value in (overrides or {}).items():
        if key == "name":
            if value != name:
                raise ConfigError(f"config names experiment {value!r} but {name!r} was requested")
            continue
        if key in ("estimator", "knobs", "tolerances") and isinstance(value, dict):
            base[key].update(value)
        else:
            if key == "omega" and value is not None:
                base["delta"] = None
            if key == "delta" and value is not None:
                base["omega"] = None
            base[key] = value
    return ExperimentConfig.from_dict(base)


# summaries ------------------------------------------------------------------


def _check(passed: bool, value, rule: str) -> dict:
    return {"passed": bool(passed), "value": value, "rule": rule}


@dataclass
class McSummary:
    """Result of one experiment.

    ``checks`` maps each named criterion to its value, rule and verdict;
    ``passed`` is their conjunction. ``tables`` holds plot-ready rows.
    """

    experiment: str
    config: dict
    replications: int
    completed: int
    failures: dict
    statistics: dict
    targets: dict
    tolerances: dict
    checks: dict
    passed: bool
    per_replication: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def per_replication_csv(self) -> str:
        lines = ["rep,seed,estimate,z"]
        for row in self.per_replication:
            z = row.get("z")
            lines.append(
                f"{row['rep']},{row['seed']},{row['estimate']:.17g},{'' if z is None else format(z, '.17g')}"
            )
        return "\n".join(lines) + "\n"


def _make_summary(config, completed, failures, statistics, targets, checks, per_rep, tables=None) -> McSummary:
    return McSummary(
        experiment=config.name,
        config=config.to_dict(),
        replications=config.replications,
        completed=completed,
        failures=failures,
        statistics=statistics,
        targets=targets,
        tolerances=dict(config.tolerances),
        checks=checks,
        passed=all(c["passed"] for c in checks.values()),
        per_replication=per_rep,
        tables=tables or {},
    )


# replication engine ---------------------------------------------------------


@dataclass
class ReplicationSet:
    """Ordered replication records plus failure accounting."""

    records: list
    failures: dict

    @property
    def completed(self) -> list:
        return [r for r in self.records if r is not None]


def _run_one(task_fn: Callable, config_dict: dict, index: int):
    config = ExperimentConfig.from_dict(config_dict)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return index, task_fn(config, index), None
    except CklsError as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def _replicate(task_fn: Callable, config: ExperimentConfig, count: int, jobs: int) -> ReplicationSet:
    cfg = config.to_dict()
    if jobs > 1 and count > 1:
        chunk = max(1, count // (8 * jobs))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, repeat(task_fn), repeat(cfg), range(count), chunksize=chunk))
    else:
        results = [_run_one(task_fn, cfg, i) for i in range(count)]
    results.sort(key=lambda r: r[0])
    records = [r[1] for r in results]
    errors = [(r[0], r[2]) for r in results if r[2] is not None]
    by_type: dict[str, int] = {}
    for _, msg in errors:
        kind = msg.split(":", 1)[0]
        by_type[kind] = by_type.get(kind, 0) + 1
    failures = {
        "count": len(errors),
        "budget": config.failure_budget,
        "by_type": dict(sorted(by_type.items())),
        "first": [{"rep": i, "error": msg} for i, msg in errors[:5]],
    }
    if len(errors) > config.failure_budget * count:
        raise FailureBudgetExceeded(
            f"{len(errors)} of {count} replications failed (budget {config.failure_budget:.2%}); first: {errors[0][1]}"
        )
    return ReplicationSet(records, failures)


def _stream_seed(config: ExperimentConfig, stream: int) -> int:
    return RngStream(config.seed, stream).kernel_seed()


def _variance_checks(z: np.ndarray, target_var: float, tol: dict) -> tuple[dict, dict]:
    s = summarize(z)
    ks_d, ks_p = ks_statistic_normal(z / math.sqrt(target_var))
    rel = abs(s.variance / target_var - 1.0)
    stats = {"z": s.to_dict(), "variance_ratio": s.variance / target_var, "ks_statistic": ks_d, "ks_pvalue": ks_p}
    checks = {
        "variance": _check(rel <= tol["variance_rel"], rel, f"|var(z)/target - 1| <= {tol['variance_rel']}"),
        "ks_normality": _check(ks_p >= tol["ks_alpha"], ks_p, f"KS p-value >= {tol['ks_alpha']}"),
    }
    return stats, checks


def _mean_check(est: np.ndarray, truth: float, n_se: float, label: str) -> tuple[dict, dict]:
    s = summarize(est)
    dev = abs(s.mean - truth) / s.stderr if s.stderr > 0 else math.inf
    if s.stderr == 0 and s.mean == truth:
        dev = 0.0
    stats = {label: s.to_dict()}
    check = _check(dev <= n_se, dev, f"|mean - truth| / SE <= {n_se}")
    return stats, {f"{label}_mean": check}


# clt-beta -------------------------------------------------------------------


def _task_clt_beta(config: ExperimentConfig, r: int) -> dict:
    cir = config.cir()
    grid = config.grid()
    sim = config.simulation(r)
    path = simulate_cir_exact(cir, grid, SimulationConfig(1, Scheme.EXACT_CIR, sim.seed, sim.x0, r))
    beta_hat = pr_estimate(path, cir.gamma).beta_hat
    return {"estimate": beta_hat, "z": math.sqrt(grid.horizon) * (beta_hat - cir.beta)}


def run_clt_beta(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    """Monte Carlo law of ``sqrt(T) (beta_hat - beta)`` on exact square-root paths."""
    _expect(config, "clt-beta")
    cir = config.cir()
    reps = _replicate(_task_clt_beta, config, config.replications, jobs)
    done = [(i, r) for i, r in enumerate(reps.records) if r is not None]
    z = np.array([r["z"] for _, r in done])
    est = np.array([r["estimate"] for _, r in done])
    target = asymptotic_variance_beta(cir)
    stats, checks = _variance_checks(z, target, config.tolerances)
    s2, c2 = _mean_check(est, cir.beta, config.tolerances["mean_se"], "beta_hat")
    stats.update(s2)
    checks.update(c2)
    per_rep = [{"rep": i, "seed": _stream_seed(config, i), "estimate": r["estimate"], "z": r["z"]} for i, r in done]
    targets = {"variance": target, "beta": cir.beta, "n_delta": config.grid().horizon}
    return _make_summary(config, len(done), reps.failures, stats, targets, checks, per_rep)


# elasticity pipeline --------------------------------------------------------


def _simulate_levels(config: ExperimentConfig, r: int) -> Path:
    """CKLS observations under the configured measure.

    ``measure="P"`` runs the CKLS scheme itself. ``measure="Q"`` samples the
    transformed square-root process exactly and maps it back, which gives the
    CKLS levels under the drift-adjusted measure.
    """
    params = config.ckls()
    grid = config.grid()
    measure = config.knobs.get("measure", "P")
    if measure == "P":
        return simulate_ckls(params, grid, config.simulation(r))
    if measure != "Q":
        raise ConfigError(f"measure must be 'P' or 'Q', got {measure!r}")
    cir = map_ckls_to_cir(params)
    sim = config.simulation(r)
    lam0 = params.long_run_mean if sim.x0 is None else sim.x0
    x0 = transform_T(lam0, params.k, params.L)
    x = simulate_cir_exact(cir, grid, SimulationConfig(1, Scheme.EXACT_CIR, sim.seed, x0, r))
    if not x.strictly_positive:
        raise NonPositivePath("transformed path touched zero")
    return Path(grid, transform_T_inverse(x.values, params.k, params.L))


def _task_elasticity(config: ExperimentConfig, r: int) -> dict:
    params = config.ckls()
    path = _simulate_levels(config, r)
    rep = estimate_elasticity(path, params.b, params.sigma, config.options())
    return {
        "estimate": rep.k_hat,
        "z": math.sqrt(path.grid.horizon) * (rep.k_hat - params.k),
        "k_initial": rep.k_initial,
        "ci_low": rep.ci_low,
        "ci_high": rep.ci_high,
        "covered": bool(rep.ci_low <= params.k <= rep.ci_high),
        "out_of_range": bool(rep.diagnostics["out_of_model_range"]),
    }


def collect_elasticity_replications(config: ExperimentConfig, jobs: int = 1) -> ReplicationSet:
    """Run the full pipeline on every replication.

    The result can be fed to both :func:`run_clt_elasticity` and
    :func:`run_ci_coverage` when their configs share model, grid, estimator
    and seed.
    """
    return _replicate(_task_elasticity, config, config.replications, jobs)


def _elasticity_per_rep(config, reps):
    return [
        {"rep": i, "seed": _stream_seed(config, i), "estimate": r["estimate"], "z": r["z"]}
        for i, r in enumerate(reps.records)
        if r is not None
    ]


def run_clt_elasticity(config: ExperimentConfig, jobs: int = 1, replications: ReplicationSet | None = None) -> McSummary:
    """Monte Carlo law of ``sqrt(T) (k_hat - k)`` for the full pipeline."""
    _expect(config, "clt-k", "coverage")
    params = config.ckls()
    reps = replications or collect_elasticity_replications(config, jobs)
    done = reps.completed
    z = np.array([r["z"] for r in done])
    est = np.array([r["estimate"] for r in done])
    target = asymptotic_variance_k(params.b, params.k)
    tol = {**_DEFAULTS["clt-k"]["tolerances"], **config.tolerances}
    stats, checks = _variance_checks(z, target, tol)
    s2, c2 = _mean_check(est, params.k, tol["mean_se"], "k_hat")
    stats.update(s2)
    checks.update(c2)
    stats["k_initial"] = summarize([r["k_initial"] for r in done]).to_dict()
    stats["coverage"] = float(np.mean([r["covered"] for r in done]))
    stats["out_of_range"] = int(sum(r["out_of_range"] for r in done))
    targets = {"variance": target, "k": params.k, "n_delta": config.grid().horizon, "measure": config.knobs.get("measure", "P")}
    return _make_summary(config, len(done), reps.failures, stats, targets, checks, _elasticity_per_rep(config, reps))


def run_ci_coverage(config: ExperimentConfig, jobs: int = 1, replications: ReplicationSet | None = None) -> McSummary:
    """Empirical coverage of the normal confidence interval for ``k``.

    The acceptance band is ``tolerances["coverage_band"]`` when set, else the
    nominal level plus or minus ``band_se`` binomial standard errors.
    """
    _expect(config, "coverage", "clt-k")
    params = config.ckls()
    reps = replications or collect_elasticity_replications(config, jobs)
    done = reps.completed
    covered = np.array([r["covered"] for r in done], dtype=float)
    level = config.options().level
    m = covered.size
    coverage = float(covered.mean())
    band = config.tolerances.get("coverage_band")
    if band is None:
        half = config.tolerances.get("band_se", 3.0) * math.sqrt(level * (1.0 - level) / m)
        band = [level - half, level + half]
    lo, hi = float(band[0]), float(band[1])
    checks = {"coverage": _check(lo <= coverage <= hi, coverage, f"{lo:.6g} <= coverage <= {hi:.6g}")}
    stats = {
        "coverage": coverage,
        "binomial_se": math.sqrt(coverage * (1.0 - coverage) / m),
        "k_hat": summarize([r["estimate"] for r in done]).to_dict(),
        "mean_ci_width": float(np.mean([r["ci_high"] - r["ci_low"] for r in done])),
    }
    targets = {"level": level, "k": params.k, "band": [lo, hi]}
    return _make_summary(config, m, reps.failures, stats, targets, checks, _elasticity_per_rep(config, reps))


# rate of the rough estimator ------------------------------------------------


def _task_rate(config: ExperimentConfig, index: int) -> dict:
    params = config.ckls()
    deltas = config.knobs["deltas"]
    level = index // config.replications
    grid = grid_from_delta(config.horizon, deltas[level])
    path = simulate_ckls(params, grid, config.simulation(index))
    opts = config.options()
    init = initial_k_aggregated(path, params.sigma, opts.epsilon, config.knobs.get("variant", "single"), opts.debias)
    return {"level": level, "estimate": init.k, "error": abs(init.k - params.k)}


def run_rate_initial_k(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    """Median error of the rough elasticity across a mesh ladder and its log-log slope."""
    _expect(config, "rate-k")
    deltas = [float(d) for d in config.knobs["deltas"]]
    if len(deltas) < 2 or len(set(deltas)) != len(deltas):
        raise ConfigError("rate-k needs at least two distinct mesh sizes")
    m = config.replications
    reps = _replicate(_task_rate, config, m * len(deltas), jobs)
    rows = []
    for lvl, d in enumerate(deltas):
        errs = [r["error"] for r in reps.records[lvl * m:(lvl + 1) * m] if r is not None]
        rows.append({"delta": d, "median_error": float(np.median(errs)), "completed": len(errs)})
    slope, intercept, r2 = linear_fit(np.log([r["delta"] for r in rows]), np.log([r["median_error"] for r in rows]))
    tol = config.tolerances
    finest = min(rows, key=lambda r: r["delta"])
    coarsest = max(rows, key=lambda r: r["delta"])
    checks = {
        "slope": _check(tol["slope_low"] <= slope <= tol["slope_high"], slope, f"{tol['slope_low']} <= slope <= {tol['slope_high']}"),
        "finest_below_coarsest": _check(
            finest["median_error"] < coarsest["median_error"],
            [finest["median_error"], coarsest["median_error"]],
            "median error at finest mesh < at coarsest",
        ),
    }
    stats = {"slope": slope, "intercept": intercept, "r_squared": r2, "levels": rows}
    per_rep = [
        {"rep": i, "seed": _stream_seed(config, i), "estimate": r["estimate"], "z": None, "delta": deltas[r["level"]]}
        for i, r in enumerate(reps.records)
        if r is not None
    ]
    return _make_summary(
        config, len(per_rep), reps.failures, stats, {"slope": 0.5}, checks, per_rep, {"rate": rows}
    )


# ergodic moments ------------------------------------------------------------


def _task_ergodic(config: ExperimentConfig, r: int) -> dict:
    cir = config.cir()
    sim = config.simulation(r)
    path = simulate_cir_exact(cir, config.grid(), SimulationConfig(1, Scheme.EXACT_CIR, sim.seed, sim.x0, r))
    left = path.values[:-1]
    return {str(q): float(np.mean(left**q)) for q in config.knobs["orders"]}


def run_ergodic_moments(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    """Time averages of ``X**q`` along exact paths against invariant-law moments.

    With several replications the per-path averages are pooled.
    """
    _expect(config, "ergodic")
    cir = config.cir()
    reps = _replicate(_task_ergodic, config, config.replications, jobs)
    done = reps.completed
    tol = config.tolerances["moment_rel"]
    stats, targets, checks, rows = {}, {}, {}, []
    for q in config.knobs["orders"]:
        avg = float(np.mean([r[str(q)] for r in done]))
        target = cir_stationary_moment(q, cir)
        rel = abs(avg / target - 1.0)
        stats[f"time_average_{q}"] = avg
        stats[f"relative_error_{q}"] = rel
        targets[f"moment_{q}"] = target
        checks[f"moment_{q}"] = _check(rel <= tol, rel, f"|average / m_{q} - 1| <= {tol}")
        rows.append({"q": q, "time_average": avg, "moment": target, "relative_error": rel})
    per_rep = [
        {"rep": i, "seed": _stream_seed(config, i), "estimate": r[str(config.knobs["orders"][-1])], "z": None}
        for i, r in enumerate(reps.records)
        if r is not None
    ]
    return _make_summary(config, len(done), reps.failures, stats, targets, checks, per_rep, {"moments": rows})


# Riemann-sum discretization -------------------------------------------------


def _ladder_strides(config: ExperimentConfig) -> tuple[float, list[int]]:
    deltas = sorted((float(d) for d in config.knobs["deltas"]), reverse=True)
    h = deltas[-1] / int(config.knobs.get("refine", 64))
    strides = []
    for d in deltas:
        s = round(d / h)
        if abs(s * h - d) > 1e-9 * d:
            raise ConfigError("every mesh size must be an integer multiple of the finest fine-grid step")
        strides.append(s)
    return h, strides


def _task_discretization(config: ExperimentConfig, r: int) -> dict:
    cir = config.cir()
    h, strides = _ladder_strides(config)
    n_fine = round(config.horizon / h)
    total_stride = strides[0]
    n_fine -= n_fine % total_stride
    grid = SamplingGrid(h, n_fine)
    sim = config.simulation(r)
    v = simulate_cir_exact(cir, grid, SimulationConfig(1, Scheme.EXACT_CIR, sim.seed, sim.x0, r)).values
    horizon = n_fine * h
    out = {}
    for p in config.knobs.get("powers", [1, 2]):
        f = v**p
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * h)))
        for s in strides:
            idx = np.arange(0, n_fine + 1, s)
            exact = np.diff(cum[idx])
            riemann = f[idx[:-1]] * (s * h)
            local = float(np.sum(np.abs(exact - riemann))) / horizon
            signed = float(np.sum(riemann) - cum[-1]) / horizon
            out[f"{p}:{s}"] = (local, signed)
    return out


def run_discretization_check(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    """Left-Riemann errors for ``int X dt`` and ``int X**2 dt`` across a mesh ladder.

    The reference integral is the trapezoid rule on a grid ``refine`` times
    finer than the smallest mesh. Two errors are reported per mesh:
    ``local = (1/T) sum_i |int_i f(X) dt - f(X_{i-1}) delta|``, which scales
    like ``delta**(1/2)`` for a diffusion and is what the slope check uses, and
    the signed total ``(1/T)(Riemann sum - integral)``, which largely cancels
    and is reported for reference.
    """
    _expect(config, "discretization")
    h, strides = _ladder_strides(config)
    reps = _replicate(_task_discretization, config, config.replications, jobs)
    done = reps.completed
    tol = config.tolerances
    stats, checks, rows = {}, {}, []
    for p in config.knobs.get("powers", [1, 2]):
        meds = []
        for s in strides:
            local = [r[f"{p}:{s}"][0] for r in done]
            signed = [r[f"{p}:{s}"][1] for r in done]
            row = {
                "power": p, "delta": s * h,
                "median_local_error": float(np.median(local)),
                "median_abs_total_error": float(np.median(np.abs(signed))),
                "mean_total_error": float(np.mean(signed)),
            }
            rows.append(row)
            meds.append(row["median_local_error"])
        ds = [s * h for s in strides]
        slope, _, r2 = linear_fit(np.log(ds), np.log(meds))
        tslope, _, _ = linear_fit(np.log(ds), np.log([r["median_abs_total_error"] for r in rows[-len(ds):]]))
        stats[f"slope_local_{p}"] = slope
        stats[f"r_squared_local_{p}"] = r2
        stats[f"slope_total_{p}"] = tslope
        checks[f"slope_{p}"] = _check(
            tol["slope_low"] <= slope <= tol["slope_high"], slope, f"{tol['slope_low']} <= slope <= {tol['slope_high']}"
        )
        mono = all(a > b for a, b in zip(meds, meds[1:]))
        checks[f"monotone_{p}"] = _check(mono, meds, "median local error decreases with the mesh")
    stats["levels"] = rows
    per_rep = [
        {"rep": i, "seed": _stream_seed(config, i), "estimate": r[f"1:{strides[-1]}"][0], "z": None}
        for i, r in enumerate(reps.records)
        if r is not None
    ]
    return _make_summary(config, len(done), reps.failures, stats, {"slope": 0.5}, checks, per_rep, {"errors": rows})


# change of measure ----------------------------------------------------------


def _functional(name: str, interval: tuple[float, float]) -> Callable[[np.ndarray], np.ndarray]:
    if name == "exp_neg":
        return lambda x: np.exp(-x)
    if name == "one":
        return lambda x: np.ones_like(x)
    if name == "indicator":
        lo, hi = interval
        return lambda x: ((x >= lo) & (x <= hi)).astype(float)
    raise ConfigError(f"unknown functional {name!r}")


def _task_measure_change(config: ExperimentConfig, r: int) -> dict:
    params = config.ckls()
    path = simulate_ckls(params, config.grid(), config.simulation(r))
    log_w = girsanov_log_weight(path, params)
    return {"log_weight": log_w, "x_T": transform_T(float(path.values[-1]), params.k, params.L)}


def run_measure_change_check(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    """Compare ``E_Q[f(X_T)]`` from direct square-root sampling and from reweighted CKLS paths.

    The direct side draws ``X_T`` from the exact transition started at the
    transformed initial level. The reweighted side simulates CKLS under the
    original measure, transforms the terminal level and weights it by the
    exponentiated discrete log likelihood ratio. With ``substeps=1`` the
    reconstructed Brownian increments are the simulated ones, so the weights
    are an exact discrete martingale.
    """
    _expect(config, "measure-change")
    params = config.ckls()
    cir = map_ckls_to_cir(params)
    grid = config.grid()
    m = config.replications
    sim = config.simulation(0)
    lam0 = params.long_run_mean if sim.x0 is None else sim.x0
    x0 = transform_T(lam0, params.k, params.L)
    interval = config.knobs.get("interval") or [0.0, x0]
    interval = (float(interval[0]), float(interval[1]))

    reps = _replicate(_task_measure_change, config, m, jobs)
    done = reps.completed
    w = np.exp(np.array([r["log_weight"] for r in done]))
    x_rw = np.array([r["x_T"] for r in done])
    x_direct = sample_cir_transition(cir, x0, grid.horizon, m, RngStream(config.seed, m))

    ess = float(w.sum() ** 2 / np.sum(w * w))
    min_frac = config.tolerances.get("min_ess_fraction", 0.05)
    if ess < min_frac * w.size:
        warnings.warn(f"effective sample size {ess:.1f} is below {min_frac:.0%} of {w.size}", WeightDegeneracyWarning, stacklevel=2)
    n_se = config.tolerances["combined_se"]
    stats = {"effective_sample_size": ess, "x0_transformed": x0, "interval": list(interval)}
    checks = {}
    mass = summarize(w)
    stats["weight_mean"] = mass.mean
    stats["weight_se"] = mass.stderr
    dev = abs(mass.mean - 1.0) / mass.stderr
    checks["weight_mass"] = _check(dev <= n_se, dev, f"|mean weight - 1| / SE <= {n_se}")
    rows = []
    for name in config.knobs["functionals"]:
        f = _functional(name, interval)
        rw = summarize(w * f(x_rw))
        fd = f(x_direct)
        direct_mean = float(np.mean(fd))
        direct_se = float(np.std(fd, ddof=1) / math.sqrt(fd.size))
        combined = math.hypot(rw.stderr, direct_se)
        diff = rw.mean - direct_mean
        if combined > 0:
            score = abs(diff) / combined
        else:
            score = 0.0 if diff == 0 else math.inf
        row = {
            "functional": name, "reweighted": rw.mean, "reweighted_se": rw.stderr,
            "direct": direct_mean, "direct_se": direct_se, "difference_in_se": score,
        }
        rows.append(row)
        stats[name] = row
        if name != "one":
            checks[f"agreement_{name}"] = _check(score <= n_se, score, f"|difference| / combined SE <= {n_se}")
    per_rep = [
        {"rep": i, "seed": _stream_seed(config, i), "estimate": r["x_T"], "z": r["log_weight"]}
        for i, r in enumerate(reps.records)
        if r is not None
    ]
    targets = {"weight_mass": 1.0}
    return _make_summary(config, len(done), reps.failures, stats, targets, checks, per_rep, {"functionals": rows})


# plug-in negligibility ------------------------------------------------------


def _task_plugin(config: ExperimentConfig, index: int) -> dict:
    params = config.ckls()
    ladder = config.knobs["ladder"]
    point = index // config.replications
    horizon, omega = ladder[point]
    grid = build_grid(horizon, omega)
    path = simulate_ckls(params, grid, config.simulation(index))
    if config.knobs.get("force_oracle", False):
        k_rough = params.k
    else:
        opts = config.options()
        variant = opts.initial[4:] if opts.initial.startswith("agg-") else "single"
        k_rough = initial_k_aggregated(path, params.sigma, opts.epsilon, variant, opts.debias).k
        k_rough = min(max(k_rough, K_INITIAL_BOUNDS[0]), K_INITIAL_BOUNDS[1])
    b_rough = plugin_beta(path, k_rough, params.sigma)
    b_oracle = plugin_beta(path, params.k, params.sigma)
    return {"point": point, "estimate": k_rough, "z": math.sqrt(grid.horizon) * (b_rough - b_oracle)}


def run_plugin_negligibility(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    """Size of ``sqrt(T) (beta(k_rough) - beta(k_true))`` along a grid ladder.

    Ladder points are ``[T, omega]`` pairs; they are ordered by decreasing
    ``n delta**2`` and the median absolute statistic must decrease along them.
    """
    _expect(config, "plugin")
    ladder = [tuple(map(float, p)) for p in config.knobs["ladder"]]
    if len(ladder) < 2:
        raise ConfigError("plugin needs at least two ladder points")
    m = config.replications
    reps = _replicate(_task_plugin, config, m * len(ladder), jobs)
    rows = []
    for j, (horizon, omega) in enumerate(ladder):
        grid = build_grid(horizon, omega)
        vals = [abs(r["z"]) for r in reps.records[j * m:(j + 1) * m] if r is not None]
        rows.append({
            "horizon": horizon, "omega": omega, "n_delta_sq": grid.n_delta_sq,
            "median_abs_statistic": float(np.median(vals)), "completed": len(vals),
        })
    ordered = sorted(rows, key=lambda r: -r["n_delta_sq"])
    meds = [r["median_abs_statistic"] for r in ordered]
    if config.knobs.get("force_oracle", False):
        checks = {"zero": _check(all(v == 0.0 for v in meds), meds, "statistic is identically zero")}
    else:
        checks = {"shrinks": _check(all(a > b for a, b in zip(meds, meds[1:])), meds, "median decreases as n delta^2 decreases")}
    per_rep = [
        {"rep": i, "seed": _stream_seed(config, i), "estimate": r["estimate"], "z": r["z"]}
        for i, r in enumerate(reps.records)
        if r is not None
    ]
    return _make_summary(config, len(per_rep), reps.failures, {"ladder": ordered}, {}, checks, per_rep, {"ladder": ordered})


# dispatch -------------------------------------------------------------------


def _expect(config: ExperimentConfig, *names: str) -> None:
    if config.name not in names:
        raise ConfigError(f"config is for {config.name!r}, expected {' or '.join(names)}")


RUNNERS: dict[str, Callable[..., McSummary]] = {
    "clt-beta": run_clt_beta,
    "clt-k": run_clt_elasticity,
    "rate-k": run_rate_initial_k,
    "ergodic": run_ergodic_moments,
    "discretization": run_discretization_check,
    "measure-change": run_measure_change_check,
    "plugin": run_plugin_negligibility,
    "coverage": run_ci_coverage,
}


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> McSummary:
    if int(jobs) != jobs or jobs < 1:
        raise ConfigError(f"jobs must be a positive integer, got {jobs!r}")
    return RUNNERS[config.name](config, jobs=int(jobs))
