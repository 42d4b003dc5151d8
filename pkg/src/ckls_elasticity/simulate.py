"""Path generators, grid construction and path serialization.

Randomness is addressed by ``(seed, stream)`` pairs: every simulation call
derives a 32-bit seed for the compiled kernels from a
:class:`numpy.random.SeedSequence` keyed on both, so identical pairs give
bit-identical paths and distinct streams are independent.
"""

from __future__ import annotations

import enum
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    ConfigError,
    DegenerateGrid,
    ElasticityOutOfRange,
    NonFiniteSample,
    PathFormatError,
    StrideMismatch,
)
from .model import CirParams, CklsParams, Path, SamplingGrid, _positive


class Scheme(str, enum.Enum):
    FULL_TRUNCATION = "full_truncation"
    REFLECTION = "reflection"
    EXACT_CIR = "exact_cir"


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by a master seed and an index."""

    seed: int
    index: int = 0

    def __post_init__(self):
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if int(self.index) != self.index or self.index < 0:
            raise ConfigError(f"stream index must be a nonnegative integer, got {self.index!r}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "index", int(self.index))

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(self.index,))

    def kernel_seed(self) -> int:
        """32-bit seed for the compiled kernels."""
        return int(self.sequence().generate_state(1, dtype=np.uint32)[0])

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence()))


@dataclass(frozen=True)
class SimulationConfig:
    """Simulation settings.

    Parameters
    ----------
    substeps : int
        Internal Euler steps per observation interval.
    scheme : Scheme
        Positivity fix for Euler, or the exact square-root transition.
    seed : int
        Master seed.
    x0 : float, optional
        Initial level; defaults to the long-run mean of the model.
    stream : int
        Stream index, so Monte Carlo replications can share a master seed.
    """

    substeps: int = 16
    scheme: Scheme = Scheme.FULL_TRUNCATION
    seed: int = 0
    x0: float | None = None
    stream: int = 0

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps!r}")
        object.__setattr__(self, "substeps", int(self.substeps))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.x0 is not None:
            object.__setattr__(self, "x0", _positive("x0", self.x0))
        RngStream(self.seed, self.stream)

    @property
    def rng(self) -> RngStream:
        return RngStream(self.seed, self.stream)


def _count_near_integer(v: float) -> int:
    r = round(v)
    if abs(v - r) <= 1e-9 * max(1.0, abs(v)):
        return int(r)
    return int(math.floor(v))


def build_grid(horizon: float, omega: float) -> SamplingGrid:
    """Grid with ``delta = T**-omega`` and ``n = floor(T**(omega + 1))``.

    Values of ``T**(omega + 1)`` within 1e-9 relative of an integer are rounded
    to it, so ``T = 100, omega = 1.5`` gives exactly 100000 increments. The
    stored horizon is ``n * delta``, which can fall slightly short of ``T``.
    """
    horizon = _positive("horizon", horizon)
    omega = _positive("omega", omega)
    if horizon <= 1.0:
        raise ConfigError(f"horizon must exceed 1 for an omega-indexed grid, got {horizon}")
    n = _count_near_integer(horizon ** (omega + 1.0))
    if n < 1:
        raise DegenerateGrid(f"T = {horizon}, omega = {omega} gives no increments")
    return SamplingGrid(horizon ** (-omega), n, omega)


def grid_from_delta(horizon: float, delta: float) -> SamplingGrid:
    """Grid with mesh ``delta`` and ``n = T / delta`` (rounded if within 1e-9)."""
    horizon = _positive("horizon", horizon)
    delta = _positive("delta", delta)
    n = _count_near_integer(horizon / delta)
    if n < 1:
        raise DegenerateGrid(f"T = {horizon}, delta = {delta} gives no increments")
    return SamplingGrid(delta, n)


def _finish(values: np.ndarray, status: int, grid: SamplingGrid, what: str) -> Path:
    if status != 0:
        raise NonFiniteSample(f"{what} produced a non-finite value")
    np.maximum(values, 0.0, out=values)
    return Path(grid, values)


def simulate_ckls(params: CklsParams, grid: SamplingGrid, config: SimulationConfig | None = None) -> Path:
    """Simulate the CKLS diffusion on ``grid``.

    Euler schemes take ``config.substeps`` steps per interval. The exact scheme
    is only available at ``k = 1/2``, where the process is square-root.

    Raises
    ------
    ElasticityOutOfRange
        Exact scheme requested with ``k != 1/2``.
    NonFiniteSample
        The scheme blew up.
    """
    config = config or SimulationConfig()
    x0 = params.long_run_mean if config.x0 is None else config.x0
    if config.scheme is Scheme.EXACT_CIR:
        if params.k != 0.5:
            raise ElasticityOutOfRange("the exact scheme needs k = 1/2")
        cir = CirParams(params.a, params.b, params.sigma)
        return simulate_cir_exact(cir, grid, SimulationConfig(config.substeps, config.scheme, config.seed, x0, config.stream))
    code = _kernels.REFLECTION if config.scheme is Scheme.REFLECTION else _kernels.FULL_TRUNCATION
    values, status = _kernels.euler_path(
        params.a, params.b, params.sigma, params.k, x0, grid.delta, grid.n,
        config.substeps, code, config.rng.kernel_seed(),
    )
    return _finish(values, status, grid, "Euler scheme")


def simulate_cir_exact(cir: CirParams, grid: SamplingGrid, config: SimulationConfig | None = None) -> Path:
    """Simulate a square-root process with its exact transition law.

    ``4 beta / (gamma**2 (1 - exp(-beta delta))) * X_delta`` is noncentral
    chi-square with ``4 alpha / gamma**2`` degrees of freedom. Below one degree
    of freedom a Poisson mixture of central chi-squares is used.
    """
    config = config or SimulationConfig(scheme=Scheme.EXACT_CIR)
    x0 = cir.long_run_mean if config.x0 is None else config.x0
    values, status = _kernels.cir_exact_path(
        cir.alpha, cir.beta, cir.gamma, x0, grid.delta, grid.n, config.rng.kernel_seed()
    )
    return _finish(values, status, grid, "exact sampler")


def simulate_cir_euler(cir: CirParams, grid: SamplingGrid, config: SimulationConfig | None = None) -> Path:
    """Euler scheme for a square-root process (elasticity fixed at 1/2)."""
    config = config or SimulationConfig()
    if config.scheme is Scheme.EXACT_CIR:
        raise ConfigError("use simulate_cir_exact for the exact scheme")
    x0 = cir.long_run_mean if config.x0 is None else config.x0
    code = _kernels.REFLECTION if config.scheme is Scheme.REFLECTION else _kernels.FULL_TRUNCATION
    values, status = _kernels.euler_path(
        cir.alpha, cir.beta, cir.gamma, 0.5, x0, grid.delta, grid.n,
        config.substeps, code, config.rng.kernel_seed(),
    )
    return _finish(values, status, grid, "Euler scheme")


def sample_cir_transition(cir: CirParams, x0: float, dt: float, size: int, stream: RngStream) -> np.ndarray:
    """``size`` independent exact draws of ``X_dt`` started at ``x0``."""
    x0 = _positive("x0", x0)
    dt = _positive("dt", dt)
    if int(size) != size or size < 1:
        raise ConfigError(f"size must be a positive integer, got {size!r}")
    return _kernels.cir_transition_draws(cir.alpha, cir.beta, cir.gamma, x0, dt, int(size), stream.kernel_seed())


def cir_transition_moments(cir: CirParams, x0: float, dt: float) -> tuple[float, float]:
    """Conditional mean and variance of ``X_dt`` given ``X_0 = x0``."""
    e = math.exp(-cir.beta * dt)
    one_minus = -math.expm1(-cir.beta * dt)
    m = cir.long_run_mean
    mean = x0 * e + m * one_minus
    var = (cir.gamma**2 / cir.beta) * (x0 * e * one_minus + 0.5 * m * one_minus**2)
    return mean, var


def subsample(path: Path, stride: int) -> Path:
    """Keep every ``stride``-th observation.

    Raises
    ------
    StrideMismatch
        If ``stride`` does not divide ``path.n``.
    """
    if int(stride) != stride or stride < 1:
        raise ConfigError(f"stride must be a positive integer, got {stride!r}")
    stride = int(stride)
    if path.n % stride:
        raise StrideMismatch(f"stride {stride} does not divide n = {path.n}")
    grid = SamplingGrid(path.delta * stride, path.n // stride)
    return Path(grid, path.values[::stride])


# serialization --------------------------------------------------------------


def format_float(x: float) -> str:
    return f"{x:.17g}"


def path_to_csv(path: Path) -> str:
    """CSV text with header ``t,value`` and 17 significant digits."""
    buf = io.StringIO()
    buf.write("t,value\n")
    dt = path.delta
    for i, v in enumerate(path.values.tolist()):
        buf.write(f"{format_float(i * dt)},{format_float(v)}\n")
    return buf.getvalue()


def write_path_csv(path: Path, target: str | os.PathLike) -> None:
    with open(target, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(path_to_csv(path))


def parse_path_csv(text: str) -> Path:
    """Parse the output of :func:`path_to_csv`.

    The mesh is recovered as ``t_n / n``; rows must be equidistant to 1e-9
    relative.

    Raises
    ------
    PathFormatError
        Naming the first bad line.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip().replace(" ", "") != "t,value":
        raise PathFormatError("expected header 't,value'", 1)
    ts, vs = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise PathFormatError(f"expected 2 fields, got {len(parts)}", lineno)
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError:
            raise PathFormatError(f"could not parse {line!r}", lineno) from None
        if not (math.isfinite(t) and math.isfinite(v)) or v < 0.0:
            raise PathFormatError(f"invalid values in {line!r}", lineno)
        ts.append(t)
        vs.append(v)
    if len(vs) < 2:
        raise PathFormatError("a path needs at least two rows")
    t_arr = np.asarray(ts)
    n = len(vs) - 1
    delta = (t_arr[-1] - t_arr[0]) / n
    if delta <= 0.0:
        raise PathFormatError("time column is not increasing")
    expected = t_arr[0] + delta * np.arange(n + 1)
    bad = np.nonzero(np.abs(t_arr - expected) > 1e-9 * max(abs(t_arr[-1]), delta))[0]
    if bad.size:
        raise PathFormatError("time grid is not equidistant", int(bad[0]) + 2)
    return Path(SamplingGrid(delta, n), np.asarray(vs))


def read_path_csv(source: str | os.PathLike) -> Path:
    with open(source, encoding="utf-8") as fh:
        return parse_path_csv(fh.read())
