"""Compiled inner loops for path simulation.

Each kernel reseeds numba's internal generator on entry, so its output depends
only on its arguments. Status codes: 0 ok, 1 non-finite value encountered.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

FULL_TRUNCATION = 0
REFLECTION = 1


@njit(cache=True)
def _power(x, k):
    if x <= 0.0:
        return 0.0
    if k == 0.5:
        return math.sqrt(x)
    return math.exp(k * math.log(x))


@njit(cache=True)
def euler_path(a, b, sigma, k, x0, delta, n, substeps, scheme, seed):
    """Euler scheme with ``substeps`` internal steps per observation interval.

    The drift uses the raw state; the diffusion coefficient sees the positive
    part (full truncation) or the absolute value (reflection). Emitted
    observations are floored at zero.
    """
    np.random.seed(seed)
    out = np.empty(n + 1)
    out[0] = x0
    h = delta / substeps
    sqh = math.sqrt(h)
    x = x0
    for i in range(1, n + 1):
        for _ in range(substeps):
            if scheme == REFLECTION:
                v = abs(x)
            else:
                v = x if x > 0.0 else 0.0
            x = x + (a - b * x) * h + sigma * _power(v, k) * sqh * np.random.standard_normal()
        if scheme == REFLECTION:
            x = abs(x)
        if not math.isfinite(x):
            return out, 1
        out[i] = x if x > 0.0 else 0.0
    return out, 0


@njit(cache=True)
def _cir_step(x, dim, c, decay):
    """One exact transition: ``c X_t`` is noncentral chi-square."""
    nc = c * decay * x
    if dim > 1.0:
        z = np.random.standard_normal() + math.sqrt(nc)
        y = np.random.chisquare(dim - 1.0) + z * z
    elif dim == 1.0:
        z = np.random.standard_normal() + math.sqrt(nc)
        y = z * z
    else:
        j = np.random.poisson(0.5 * nc)
        y = np.random.chisquare(dim + 2.0 * j)
    return y / c


@njit(cache=True)
def cir_exact_path(alpha, beta, gamma, x0, delta, n, seed):
    np.random.seed(seed)
    out = np.empty(n + 1)
    out[0] = x0
    decay = math.exp(-beta * delta)
    c = 4.0 * beta / (gamma * gamma * (-math.expm1(-beta * delta)))
    dim = 4.0 * alpha / (gamma * gamma)
    x = x0
    for i in range(1, n + 1):
        x = _cir_step(x, dim, c, decay)
        if not math.isfinite(x):
            return out, 1
        out[i] = x
    return out, 0


@njit(cache=True)
def cir_transition_draws(alpha, beta, gamma, x0, dt, size, seed):
    """Independent draws of ``X_dt`` given ``X_0 = x0``."""
    np.random.seed(seed)
    out = np.empty(size)
    decay = math.exp(-beta * dt)
    c = 4.0 * beta / (gamma * gamma * (-math.expm1(-beta * dt)))
    dim = 4.0 * alpha / (gamma * gamma)
    for i in range(size):
        out[i] = _cir_step(x0, dim, c, decay)
    return out
