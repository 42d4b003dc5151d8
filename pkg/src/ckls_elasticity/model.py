"""Parameter types, the CKLS-to-CIR state transform and stationary laws.

The observed process is the CKLS diffusion

    d lambda = (a - b lambda) dt + sigma lambda**k dW,

and the power transform ``x -> L**2 / (4 (1 - k)**2) * x**(2 - 2k)`` maps it to
a square-root (CIR-type) process with ``alpha = sigma**2 L**2 / 4``,
``beta = 2 b (1 - k)`` and ``gamma = sigma L`` once the drift is adjusted by a
change of measure. The kernel of that change of measure and its discrete log
likelihood ratio live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (
    ConfigError,
    DegenerateGrid,
    DomainError,
    ElasticityOutOfRange,
    FellerViolation,
    MomentDoesNotExist,
    NonPositivePath,
    NonPositiveParameter,
    QuadratureFailure,
)

# below this a level is treated as zero by the kernel
KERNEL_FLOOR = 1e-300


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise NonPositiveParameter(f"{name} must be a positive finite number, got {value!r}")
    return value


def _check_elasticity(k: float) -> float:
    k = float(k)
    if not (0.5 <= k < 1.0):
        raise ElasticityOutOfRange(f"elasticity k must lie in [1/2, 1), got {k!r}")
    return k


@dataclass(frozen=True)
class CklsParams:
    """Parameters of the CKLS diffusion.

    Parameters
    ----------
    a, b : float
        Drift level and mean-reversion speed, both positive.
    sigma : float
        Volatility scale, positive.
    k : float
        Elasticity. Admissible values are ``1/2 < k < 1``, or ``k = 1/2``
        together with ``2a >= sigma**2``.
    L : float, default 1.0
        Free positive scaling constant of the state transform.

    Raises
    ------
    NonPositiveParameter, ElasticityOutOfRange, FellerViolation
    """

    a: float
    b: float
    sigma: float
    k: float
    L: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "sigma", "L"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))
        k = float(self.k)
        if not math.isfinite(k) or not (0.5 <= k < 1.0):
            raise ElasticityOutOfRange(f"elasticity k must lie in [1/2, 1), got {k!r}")
        if k == 0.5 and 2.0 * self.a < self.sigma**2:
            raise FellerViolation(
                f"k = 1/2 requires 2a >= sigma^2, got 2a = {2 * self.a!r} < {self.sigma**2!r}"
            )
        object.__setattr__(self, "k", k)

    @property
    def long_run_mean(self) -> float:
        return self.a / self.b

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "sigma": self.sigma, "k": self.k, "L": self.L}


@dataclass(frozen=True)
class CirParams:
    """Parameters ``(alpha, beta, gamma)`` of a square-root diffusion."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, _positive(name, getattr(self, name)))

    @property
    def long_run_mean(self) -> float:
        return self.alpha / self.beta

    @property
    def dimension(self) -> float:
        """Degrees of freedom ``4 alpha / gamma**2`` of the transition law."""
        return 4.0 * self.alpha / self.gamma**2

    @property
    def shape(self) -> float:
        """Shape of the Gamma invariant law."""
        return 2.0 * self.alpha / self.gamma**2

    @property
    def scale(self) -> float:
        """Scale of the Gamma invariant law."""
        return self.gamma**2 / (2.0 * self.beta)

    @property
    def feller(self) -> bool:
        """True when zero is inaccessible (``2 alpha >= gamma**2``)."""
        return 2.0 * self.alpha >= self.gamma**2

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


def validate_ckls(a: float, b: float, sigma: float, k: float, L: float = 1.0) -> CklsParams:
    """Build a :class:`CklsParams`, raising on inadmissible input."""
    return CklsParams(a, b, sigma, k, L)


def map_ckls_to_cir(params: CklsParams) -> CirParams:
    """Parameters of the square-root process reached by the state transform.

    The result always has ``4 alpha == gamma**2``: alpha is computed from the
    rounded gamma so the identity survives floating point.
    """
    gamma = params.sigma * params.L
    alpha = gamma * gamma / 4.0
    beta = 2.0 * params.b * (1.0 - params.k)
    return CirParams(alpha, beta, gamma)


def elasticity_from_beta(beta_hat: float, b: float) -> float:
    """Invert ``beta = 2 b (1 - k)`` for the elasticity."""
    b = _positive("b", b)
    beta_hat = float(beta_hat)
    if not math.isfinite(beta_hat):
        raise DomainError(f"beta_hat must be finite, got {beta_hat!r}")
    return 1.0 - beta_hat / (2.0 * b)


# grids and paths ------------------------------------------------------------


@dataclass(frozen=True)
class SamplingGrid:
    """Equidistant observation times ``0, delta, ..., n delta``.

    Parameters
    ----------
    delta : float
        Mesh size.
    n : int
        Number of increments.
    omega : float, optional
        Exponent used to build the grid from a horizon (``delta = T**-omega``).
    """

    delta: float
    n: int
    omega: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "delta", _positive("delta", self.delta))
        n = int(self.n)
        if n != self.n:
            raise ConfigError(f"n must be an integer, got {self.n!r}")
        if n < 1:
            raise DegenerateGrid(f"grid needs at least one increment, got n = {n}")
        object.__setattr__(self, "n", n)
        if self.omega is not None:
            object.__setattr__(self, "omega", _positive("omega", self.omega))

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    @property
    def n_delta_sq(self) -> float:
        """``n delta**2``, which must vanish for the plug-in step to be harmless."""
        return self.n * self.delta**2

    def is_ultra_high_frequency(self) -> bool:
        """True when ``omega > 1``.

        Without a stored omega the implied exponent ``-log(delta)/log(T)`` is
        used, which exceeds one exactly when ``T > 1`` and ``n delta**2 < 1``.
        """
        if self.omega is not None:
            return self.omega > 1.0
        return self.horizon > 1.0 and self.n_delta_sq < 1.0

    def times(self) -> np.ndarray:
        return np.arange(self.n + 1, dtype=float) * self.delta

    def to_dict(self) -> dict:
        return {"delta": self.delta, "n": self.n, "omega": self.omega, "horizon": self.horizon}


@dataclass(frozen=True, eq=False)
class Path:
    """A discretely observed nonnegative trajectory.

    ``values`` is copied into a read-only float array of length ``grid.n + 1``.
    """

    grid: SamplingGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim != 1 or arr.size != self.grid.n + 1:
            raise ConfigError(
                f"path needs {self.grid.n + 1} values for a grid with n = {self.grid.n}, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DomainError("path values must be finite")
        if np.any(arr < 0.0):
            raise DomainError("path values must be nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def strictly_positive(self) -> bool:
        return bool(self.values.min() > 0.0)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def delta(self) -> float:
        return self.grid.delta

    def times(self) -> np.ndarray:
        return self.grid.times()

    def require_positive(self) -> None:
        if not self.strictly_positive:
            idx = int(np.argmin(self.values))
            raise NonPositivePath(f"path value at index {idx} is {self.values[idx]!r}; a strictly positive path is required")

    def __len__(self) -> int:
        return self.values.size


# state transform -------------------------------------------------------------


def _as_positive_array(x, name: str) -> tuple[np.ndarray, bool]:
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be positive and finite")
    return arr, scalar


def transform_T(x, k: float, L: float = 1.0):
    """Power transform ``L**2 / (4 (1 - k)**2) * x**(2 - 2k)``.

    Works elementwise on arrays; scalars come back as floats.
    """
    k = _check_elasticity(k)
    L = _positive("L", L)
    arr, scalar = _as_positive_array(x, "x")
    out = (L * L / (4.0 * (1.0 - k) ** 2)) * np.power(arr, 2.0 - 2.0 * k)
    return float(out) if scalar else out


def transform_T_inverse(y, k: float, L: float = 1.0):
    """Inverse of :func:`transform_T`: ``(2 (1 - k) sqrt(y) / L)**(1 / (1 - k))``."""
    k = _check_elasticity(k)
    L = _positive("L", L)
    arr, scalar = _as_positive_array(y, "y")
    out = np.power(2.0 * (1.0 - k) * np.sqrt(arr) / L, 1.0 / (1.0 - k))
    return float(out) if scalar else out


# change of measure ----------------------------------------------------------


def girsanov_kernel(lam, params: CklsParams):
    """Drift-adjustment kernel ``(a / sigma) lam**-k - (k sigma / 2) lam**(k - 1)``.

    Under the adjusted measure ``W + int kernel dt`` is a Brownian motion and
    the transformed process has drift ``-beta X``. Levels at or below 1e-300
    are rejected to avoid overflow in the negative powers.
    """
    scalar = np.ndim(lam) == 0
    arr = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= KERNEL_FLOOR):
        raise DomainError("girsanov_kernel needs levels above 1e-300")
    a, sigma, k = params.a, params.sigma, params.k
    out = (a / sigma) * np.power(arr, -k) - (0.5 * k * sigma) * np.power(arr, k - 1.0)
    return float(out) if scalar else out


def girsanov_log_weight(path: Path, params: CklsParams) -> float:
    """Discrete log likelihood ratio ``-sum q dW - 0.5 sum q**2 delta``.

    Brownian increments are recovered by inverting one Euler step of the CKLS
    equation, and the kernel is evaluated at left endpoints.
    """
    path.require_positive()
    v = path.values
    left = v[:-1]
    dt = path.delta
    q = girsanov_kernel(left, params)
    dw = (v[1:] - left - (params.a - params.b * left) * dt) / (params.sigma * np.power(left, params.k))
    return float(-np.sum(q * dw) - 0.5 * dt * np.sum(q * q))


# stationary laws ------------------------------------------------------------


def cir_stationary_moment(q: float, cir: CirParams) -> float:
    """Moment ``E[X**q]`` of the Gamma invariant law of a square-root process.

    Equals ``scale**q * Gamma(shape + q) / Gamma(shape)``; finite iff
    ``shape + q > 0``. Nonnegative integer orders use the rising factorial.
    """
    q = float(q)
    kappa, theta = cir.shape, cir.scale
    if not math.isfinite(q) or kappa + q <= 0.0:
        raise MomentDoesNotExist(f"E[X^{q}] is infinite for shape {kappa}")
    if q >= 0 and q == int(q) and q <= 64:
        out = 1.0
        for j in range(int(q)):
            out *= (kappa + j) * theta
        return out
    return math.exp(q * math.log(theta) + math.lgamma(kappa + q) - math.lgamma(kappa))


def _psi_function(params: CklsParams) -> Callable[[np.ndarray], np.ndarray]:
    a, b, s2, k = params.a, params.b, params.sigma**2, params.k
    if k == 0.5:
        return lambda x: (2.0 / s2) * (a * np.log(x) - b * x)
    if k == 1.0:
        return lambda x: (2.0 / s2) * (-a / x - b * np.log(x))
    return lambda x: (2.0 / s2) * (
        a * np.power(x, 1.0 - 2.0 * k) / (1.0 - 2.0 * k) - b * np.power(x, 2.0 - 2.0 * k) / (2.0 - 2.0 * k)
    )


_U_SCAN = np.linspace(-60.0, 60.0, 24001)


def _log_integral(log_integrand_u: Callable[[np.ndarray], np.ndarray]) -> float:
    """``log int exp(h(u)) du`` over the real line, split at zero."""
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        scan = log_integrand_u(_U_SCAN)
    scan = np.where(np.isfinite(scan), scan, -np.inf)
    shift = float(np.max(scan))
    if not math.isfinite(shift):
        raise QuadratureFailure("integrand vanishes on the scan window")
    u_peak = float(_U_SCAN[int(np.argmax(scan))])

    def f(u):
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            h = float(log_integrand_u(np.float64(u)))
        # nan only arises as inf - inf far out in the tails
        return math.exp(h - shift) if h == h else 0.0

    total = 0.0
    for lo, hi in ((-np.inf, u_peak), (u_peak, np.inf)):
        val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-10, limit=400)
        if not math.isfinite(val) or err > 1e-8 * max(val, 1e-300):
            raise QuadratureFailure(f"quadrature did not converge (value {val}, error {err})")
        total += val
    if total <= 0.0:
        raise QuadratureFailure("integral is zero")
    return shift + math.log(total)


@dataclass(frozen=True)
class StationaryLawCkls:
    """Stationary density ``C x**(-2k) exp(psi(x))`` of a CKLS process.

    Construct via :func:`ckls_stationary_density`.
    """

    params: CklsParams
    log_normalizer: float

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    def psi(self, x):
        return _psi_function(self.params)(np.asarray(x, dtype=float))

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.log_normalizer - 2.0 * self.params.k * np.log(x) + self.psi(x)

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def moment(self, q: float) -> float:
        """``E[lambda**q]`` by quadrature in ``u = log x``."""
        q = float(q)
        p = self.params
        if p.k == 0.5 and q <= -2.0 * p.a / p.sigma**2:
            raise MomentDoesNotExist(f"E[lambda^{q}] is infinite for the Gamma stationary law")
        psi = _psi_function(p)
        log_m = _log_integral(lambda u: psi(np.exp(u)) + (1.0 + q - 2.0 * p.k) * u)
        return math.exp(log_m + self.log_normalizer)

    def total_mass(self) -> float:
        return self.moment(0.0)


def ckls_stationary_density(params: CklsParams) -> StationaryLawCkls:
    """Normalized stationary law of the CKLS process.

    The normalizer is found by adaptive quadrature after substituting
    ``x = exp(u)``, which tames the power singularity at zero.

    Raises
    ------
    QuadratureFailure
        If the normalizing integral does not converge.
    """
    psi = _psi_function(params)
    log_z = _log_integral(lambda u: psi(np.exp(u)) + (1.0 - 2.0 * params.k) * u)
    return StationaryLawCkls(params, -log_z)
