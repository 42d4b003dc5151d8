"""Drift and elasticity estimators.

The elasticity pipeline has three stages:

1. a rough elasticity from realized squared increments, whose conditional
   mean scales like ``sigma**2 lambda**(2k) delta``;
2. the power transform of the data with that rough value, which gives an
   approximately square-root path;
3. a closed-form drift estimator on the transformed path, whose speed
   estimate is inverted for the elasticity.

Two literature baselines for square-root drift estimation are included for
comparison.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma

from .errors import (
    ConfigError,
    DegenerateSample,
    ElasticityOutOfRange,
    NearUnityLevel,
    NearUnityRatio,
    NoAdmissiblePoints,
    NonPositiveIncrement,
    OutOfModelRangeWarning,
    PhiOutOfRange,
    TooFewPoints,
)
from .model import (
    CirParams,
    Path,
    _check_elasticity,
    _positive,
    elasticity_from_beta,
    transform_T,
)
from .stats import normal_quantile

# E[log chi2_1]: the offset of a log squared Gaussian increment
LOG_CHI2_1_MEAN = float(digamma(0.5) + math.log(2.0))

# projection bounds for the rough elasticity before transforming
K_INITIAL_BOUNDS = (0.5, 1.0 - 1e-6)

INITIAL_VARIANTS = ("agg-single", "agg-ratio", "single", "ratio")


@dataclass(frozen=True)
class DriftEstimate:
    """Closed-form drift estimate for square-root data.

    ``empirical_variance`` is the population variance of the left endpoints,
    the denominator statistic of both estimates.
    """

    alpha_hat: float
    beta_hat: float
    empirical_mean: float
    empirical_variance: float
    n: int


def _left_moments(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    if np.all(x == x[0]):
        raise DegenerateSample("all observations are equal")
    mean = float(np.sum(x)) / n
    dev = x - mean
    var = float(np.sum(dev * dev)) / n
    if not var > 0.0:
        raise DegenerateSample("empirical variance is zero")
    return mean, var


def pr_estimate(path: Path, gamma: float) -> DriftEstimate:
    """Closed-form drift estimate from left endpoints.

    With ``m`` and ``v`` the mean and population variance of
    ``X_0, ..., X_{n-1}``::

        alpha_hat = gamma**2 / 2 * m**2 / v
        beta_hat  = gamma**2 / 2 * m / v

    which is the power-sum form ``(gamma**2/2) n S1 / (n S2 - S1**2)`` with the
    cancellation done by centering instead of subtraction.

    Raises
    ------
    TooFewPoints
        With fewer than two increments.
    DegenerateSample
        On a constant sample.
    """
    gamma = _positive("gamma", gamma)
    if path.n < 2:
        raise TooFewPoints(f"need n >= 2 increments, got {path.n}")
    x = path.values[:-1]
    mean, var = _left_moments(x)
    half_g2 = 0.5 * gamma * gamma
    return DriftEstimate(half_g2 * mean * mean / var, half_g2 * mean / var, mean, var, path.n)


def asymptotic_covariance(cir: CirParams) -> np.ndarray:
    """Limit covariance of ``sqrt(T) (alpha_hat - alpha, beta_hat - beta)``."""
    a, b, g2 = cir.alpha, cir.beta, cir.gamma**2
    c12 = 2.0 * b * (a + g2)
    return np.array([[2.0 * a * (a + g2) + a * g2, c12], [c12, 2.0 * b * (a + g2) / a]])


def asymptotic_variance_beta(cir: CirParams) -> float:
    """Limit variance ``2 beta (alpha + gamma**2) / alpha`` of the speed estimate."""
    return 2.0 * cir.beta * (cir.alpha + cir.gamma**2) / cir.alpha


def asymptotic_variance_k(b: float, k: float) -> float:
    """Limit variance ``5 (1 - k) / b`` of the elasticity estimate.

    Values of ``k`` below 1/2 are accepted so flagged out-of-range estimates
    still get a standard error; ``k >= 1`` has no positive variance.
    """
    b = _positive("b", b)
    k = float(k)
    if not (math.isfinite(k) and k < 1.0):
        raise ElasticityOutOfRange(f"variance needs k < 1, got {k!r}")
    return 5.0 * (1.0 - k) / b


# rough elasticity estimates -------------------------------------------------


def _squared_increments(path: Path) -> np.ndarray:
    return np.diff(path.values) ** 2


def _index(path: Path, i: int) -> int:
    if int(i) != i or not (1 <= i <= path.n):
        raise ConfigError(f"index must be in 1..{path.n}, got {i!r}")
    return int(i)


def initial_k_single(path: Path, sigma: float, i: int, epsilon: float = 0.1) -> float:
    """Elasticity from one squared increment and the known volatility scale.

    Uses interval ``i`` (1-based): ``log(QV_i / (sigma**2 delta)) / (2 log lam)``
    with ``lam`` the level at the start of the interval and ``QV_i`` the
    squared increment.

    Raises
    ------
    NearUnityLevel
        If ``|lam - 1| < epsilon`` (the log level is too small to divide by).
    NonPositiveIncrement
        If the increment is zero.
    """
    sigma = _positive("sigma", sigma)
    i = _index(path, i)
    lam = float(path.values[i - 1])
    if lam <= 0.0:
        raise NearUnityLevel(f"level at index {i - 1} is {lam}; its logarithm is undefined")
    if abs(lam - 1.0) < epsilon:
        raise NearUnityLevel(f"level {lam} is within {epsilon} of 1")
    qv = float(path.values[i] - path.values[i - 1]) ** 2
    if qv <= 0.0:
        raise NonPositiveIncrement(f"increment {i} is zero")
    return math.log(qv / (sigma * sigma * path.delta)) / (2.0 * math.log(lam))


def initial_k_ratio(path: Path, i: int, j: int, epsilon: float = 0.0) -> float:
    """Volatility-free elasticity from two squared increments.

    ``log(QV_i / QV_j) / (2 log(lam_i / lam_j))`` with levels taken at the
    start of intervals ``i`` and ``j``.

    Raises
    ------
    NearUnityRatio
        If ``i == j`` or the log level ratio is below ``epsilon`` in magnitude.
    NonPositiveIncrement
    """
    i, j = _index(path, i), _index(path, j)
    if i == j:
        raise NearUnityRatio("a ratio estimate needs two distinct intervals")
    li, lj = float(path.values[i - 1]), float(path.values[j - 1])
    if li <= 0.0 or lj <= 0.0:
        raise NearUnityRatio("levels must be positive")
    log_ratio = math.log(li / lj)
    if log_ratio == 0.0 or abs(log_ratio) < epsilon:
        raise NearUnityRatio(f"log level ratio {log_ratio} is below {epsilon}")
    qi = float(path.values[i] - path.values[i - 1]) ** 2
    qj = float(path.values[j] - path.values[j - 1]) ** 2
    if qi <= 0.0 or qj <= 0.0:
        raise NonPositiveIncrement("a squared increment is zero")
    return math.log(qi / qj) / (2.0 * log_ratio)


@dataclass(frozen=True)
class InitialElasticity:
    """Aggregated rough elasticity with exclusion counts."""

    k: float
    variant: str
    used: int
    excluded: int
    debiased: bool


def _usable(path: Path) -> tuple[np.ndarray, np.ndarray]:
    left = path.values[:-1]
    qv = _squared_increments(path)
    return left, qv


def initial_k_aggregated(
    path: Path,
    sigma: float | None = None,
    epsilon: float = 0.1,
    variant: str = "single",
    debias: bool = True,
) -> InitialElasticity:
    """Rough elasticity averaged over many increments.

    ``variant="single"`` needs ``sigma`` and pools the per-interval log
    relations ``log(QV_s / (sigma**2 delta)) = 2 k log lam_s + noise`` over
    intervals whose starting level is at least ``epsilon`` away from one.
    ``variant="ratio"`` pools differences of those relations over pairs of
    intervals whose log level ratio is at least ``epsilon``; pairs join
    interval ``s`` with interval ``s + m // 2`` among the ``m`` usable ones, so
    the two levels are far apart in time.

    With ``debias=False`` the plain absolute-value aggregate
    ``sum |log QV term| / (2 sum |log level term|)`` is returned. That form is
    exact when squared increments equal their conditional mean, but on real
    data ``log QV`` carries the offset ``E[log chi2_1] ~ -1.27`` and the
    absolute values do not cancel it. ``debias=True`` (default) signs each
    term by its log level and, for the single variant, removes the offset, so
    the estimate is consistent as the mesh shrinks.

    Raises
    ------
    NoAdmissiblePoints
        If the exclusions leave nothing to average.
    """
    if epsilon < 0.0 or not math.isfinite(epsilon):
        raise ConfigError(f"epsilon must be a nonnegative number, got {epsilon!r}")
    left, qv = _usable(path)
    positive = (left > 0.0) & (qv > 0.0)
    if variant == "single":
        if sigma is None:
            raise ConfigError("the single variant needs sigma")
        sigma = _positive("sigma", sigma)
        keep = positive & (np.abs(left - 1.0) >= epsilon)
        used = int(np.count_nonzero(keep))
        if used == 0:
            raise NoAdmissiblePoints("no interval survives the exclusions")
        log_lvl = np.log(left[keep])
        log_qv = np.log(qv[keep] / (sigma * sigma * path.delta))
        denom = 2.0 * float(np.sum(np.abs(log_lvl)))
        if debias:
            num = float(np.sum(np.sign(log_lvl) * (log_qv - LOG_CHI2_1_MEAN)))
        else:
            num = float(np.sum(np.abs(log_qv)))
        return InitialElasticity(num / denom, variant, used, path.n - used, debias)
    if variant == "ratio":
        idx = np.nonzero(positive)[0]
        m = idx.size
        lag = m // 2
        if lag == 0:
            raise NoAdmissiblePoints("fewer than two usable intervals")
        first, second = idx[: m - lag], idx[lag:]
        log_ratio = np.log(left[first] / left[second])
        keep = np.abs(log_ratio) >= epsilon
        keep &= log_ratio != 0.0
        used = int(np.count_nonzero(keep))
        if used == 0:
            raise NoAdmissiblePoints("no pair survives the exclusions")
        log_ratio = log_ratio[keep]
        log_qv = np.log(qv[first[keep]] / qv[second[keep]])
        denom = 2.0 * float(np.sum(np.abs(log_ratio)))
        if debias:
            num = float(np.sum(np.sign(log_ratio) * log_qv))
        else:
            num = float(np.sum(np.abs(log_qv)))
        return InitialElasticity(num / denom, variant, used, path.n - 2 * used, debias)
    raise ConfigError(f"unknown variant {variant!r}; use 'single' or 'ratio'")


# transform and plug-in ------------------------------------------------------


def transform_data(path: Path, k0_hat: float, L: float = 1.0) -> Path:
    """Apply the power transform to every observation; the grid is kept.

    Raises
    ------
    NonPositivePath, ElasticityOutOfRange
    """
    path.require_positive()
    return Path(path.grid, transform_T(path.values, k0_hat, L))


def plugin_beta(path: Path, k0_hat: float, sigma: float) -> float:
    """Speed estimate of the transformed path, computed from the raw levels.

    With ``y = lam**(2 - 2 k0_hat)`` over left endpoints this is
    ``2 sigma**2 (1 - k0_hat)**2 mean(y) / var(y)``. The scaling constant of
    the transform cancels, so none is needed.

    Raises
    ------
    NonPositivePath, ElasticityOutOfRange, TooFewPoints, DegenerateSample
    """
    sigma = _positive("sigma", sigma)
    k0_hat = _check_elasticity(k0_hat)
    path.require_positive()
    if path.n < 2:
        raise TooFewPoints(f"need n >= 2 increments, got {path.n}")
    y = np.power(path.values[:-1], 2.0 - 2.0 * k0_hat)
    mean, var = _left_moments(y)
    beta = 2.0 * sigma * sigma * (1.0 - k0_hat) ** 2 * mean / var
    if __debug__:
        ref = pr_estimate(transform_data(path, k0_hat, 1.0), sigma).beta_hat
        assert abs(ref - beta) <= 1e-10 * abs(beta), (ref, beta)
    return beta


@dataclass(frozen=True)
class EstimateOptions:
    """Settings for :func:`estimate_elasticity`.

    Parameters
    ----------
    initial : str
        Rough estimator: ``agg-single`` (default), ``agg-ratio``, ``single`` or
        ``ratio``. The pointwise choices use the interval whose level has the
        largest ``|log lam|`` (single) or the highest and lowest levels (ratio).
    epsilon : float
        Exclusion threshold for levels near one and ratios near one.
    level : float
        Confidence level of the interval.
    L : float
        Scaling constant used for the reported transformed-data variance.
    debias : bool
        Passed to :func:`initial_k_aggregated`.
    k_initial : float, optional
        Skip the rough stage and use this value.
    """

    initial: str = "agg-single"
    epsilon: float = 0.1
    level: float = 0.95
    L: float = 1.0
    debias: bool = True
    k_initial: float | None = None

    def __post_init__(self):
        if self.initial not in INITIAL_VARIANTS:
            raise ConfigError(f"initial must be one of {INITIAL_VARIANTS}, got {self.initial!r}")
        if not (0.0 < self.level < 1.0):
            raise ConfigError(f"level must lie in (0, 1), got {self.level!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ConfigError(f"epsilon must be nonnegative, got {self.epsilon!r}")
        _positive("L", self.L)


@dataclass
class ElasticityReport:
    k_hat: float
    k_initial: float
    beta_plugin: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int
    delta: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)


def _pointwise_initial(path: Path, sigma: float, options: EstimateOptions) -> tuple[float, dict]:
    left, qv = _usable(path)
    ok = (left > 0.0) & (qv > 0.0)
    if options.initial == "single":
        score = np.where(ok, np.abs(np.log(np.where(left > 0.0, left, 1.0))), -np.inf)
        i = int(np.argmax(score))
        if not math.isfinite(score[i]):
            raise NoAdmissiblePoints("no usable interval")
        return initial_k_single(path, sigma, i + 1, options.epsilon), {"index": i + 1}
    lv = np.where(ok, left, np.nan)
    if np.all(np.isnan(lv)):
        raise NoAdmissiblePoints("no usable interval")
    i, j = int(np.nanargmax(lv)), int(np.nanargmin(lv))
    return initial_k_ratio(path, i + 1, j + 1, options.epsilon), {"index": i + 1, "index_other": j + 1}


def estimate_elasticity(
    path: Path, b: float, sigma: float, options: EstimateOptions | None = None
) -> ElasticityReport:
    """Full plug-in elasticity estimate with standard error and interval.

    The rough elasticity is projected into ``[1/2, 1 - 1e-6]`` before the
    power transform, since the transform is undefined outside it; the final
    estimate is never clamped. An estimate below 1/2 is reported with the
    ``out_of_model_range`` flag and an :class:`OutOfModelRangeWarning`.
    """
    options = options or EstimateOptions()
    b = _positive("b", b)
    sigma = _positive("sigma", sigma)
    path.require_positive()
    diag: dict = {}
    if options.k_initial is not None:
        k_initial = float(options.k_initial)
        diag["initial"] = "fixed"
    elif options.initial.startswith("agg-"):
        init = initial_k_aggregated(
            path, sigma, options.epsilon, options.initial[4:], options.debias
        )
        k_initial = init.k
        diag.update(initial=options.initial, initial_used=init.used, excluded_points=init.excluded)
    else:
        k_initial, extra = _pointwise_initial(path, sigma, options)
        diag.update(initial=options.initial, **extra)
    lo, hi = K_INITIAL_BOUNDS
    k_used = min(max(k_initial, lo), hi)
    diag["k_initial_projected"] = k_used != k_initial
    diag["k_initial_used"] = k_used
    beta = plugin_beta(path, k_used, sigma)
    k_hat = elasticity_from_beta(beta, b)
    var_k = asymptotic_variance_k(b, k_hat)
    horizon = path.grid.horizon
    stderr = math.sqrt(var_k / horizon)
    z = normal_quantile(0.5 + 0.5 * options.level)
    out_of_range = not (0.5 <= k_hat < 1.0)
    if out_of_range:
        warnings.warn(f"elasticity estimate {k_hat:.6g} lies outside [1/2, 1)", OutOfModelRangeWarning, stacklevel=2)
    transformed = transform_T(path.values[:-1], k_used, options.L)
    diag.update(
        out_of_model_range=out_of_range,
        transformed_variance=float(np.var(transformed)),
        n_delta_sq=path.grid.n_delta_sq,
        level=options.level,
    )
    return ElasticityReport(
        k_hat=k_hat,
        k_initial=k_initial,
        beta_plugin=beta,
        stderr=stderr,
        ci_low=k_hat - z * stderr,
        ci_high=k_hat + z * stderr,
        n=path.n,
        delta=path.delta,
        diagnostics=diag,
    )


# baselines ------------------------------------------------------------------


def baseline_mle_discrete(path: Path, gamma: float, form: str = "increment") -> tuple[float, float]:
    """Continuous-observation MLE of ``(alpha, beta)`` with sums for integrals.

    ``form="increment"`` replaces ``int dX / X`` by ``sum dX_j / X_j`` over
    left endpoints; ``form="log"`` uses the Ito identity
    ``int dX / X = log(X_T / X_0) + gamma**2 / 2 int dt / X`` instead, which is
    where ``gamma`` enters.

    Raises
    ------
    NonPositivePath, TooFewPoints, DegenerateSample
    """
    gamma = _positive("gamma", gamma)
    path.require_positive()
    if path.n < 2:
        raise TooFewPoints(f"need n >= 2 increments, got {path.n}")
    x = path.values
    left = x[:-1]
    dt = path.delta
    horizon = path.grid.horizon
    int_x = float(np.sum(left)) * dt
    int_inv = float(np.sum(1.0 / left)) * dt
    if form == "increment":
        int_dx_over_x = float(np.sum(np.diff(x) / left))
    elif form == "log":
        int_dx_over_x = math.log(x[-1] / x[0]) + 0.5 * gamma * gamma * int_inv
    else:
        raise ConfigError(f"unknown form {form!r}")
    denom = int_x * int_inv - horizon * horizon
    if not denom > 0.0:
        raise DegenerateSample("reciprocal moment product does not exceed T^2")
    rise = x[-1] - x[0]
    alpha = (int_x * int_dx_over_x - horizon * rise) / denom
    beta = (horizon * int_dx_over_x - rise * int_inv) / denom
    return alpha, beta


def baseline_pseudo_mle(path: Path, delta: float | None = None) -> tuple[float, float]:
    """Autoregressive pseudo-likelihood estimate of ``(alpha, beta)``.

    Fits ``X_j / X_{j-1} ~ phi + (1 - phi) chi / X_{j-1}`` by the closed-form
    weighted least squares and maps back with ``beta = -log(phi) / delta``
    and ``alpha = beta chi``.

    Raises
    ------
    NonPositivePath, PhiOutOfRange, DegenerateSample
    """
    delta = path.delta if delta is None else _positive("delta", delta)
    path.require_positive()
    if path.n < 2:
        raise TooFewPoints(f"need n >= 2 increments, got {path.n}")
    x = path.values
    prev, nxt = x[:-1], x[1:]
    n = path.n
    s_next = float(np.sum(nxt)) / n
    s_prev = float(np.sum(prev)) / n
    s_inv = float(np.sum(1.0 / prev)) / n
    s_ratio = float(np.sum(nxt / prev)) / n
    denom = s_prev * s_inv - 1.0
    if not denom > 0.0:
        raise DegenerateSample("reciprocal moment product does not exceed 1")
    phi = (s_next * s_inv - s_ratio) / denom
    if not (0.0 < phi < 1.0):
        raise PhiOutOfRange(f"autoregressive coefficient {phi} is outside (0, 1)")
    chi = (s_ratio - phi) / ((1.0 - phi) * s_inv)
    beta = -math.log(phi) / delta
    return beta * chi, beta
