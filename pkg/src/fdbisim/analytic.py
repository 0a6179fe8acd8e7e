"""Closed-form laws for Brownian motion and its variants.

Hitting-time CDFs, densities and Laplace transforms used as distinguishing
statistics, plus the auxiliary functions whose injectivity separates states
of drifted Brownian motion.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import erfc, ndtr

from .core import DomainError

_LOG_SPACE_ABOVE = 30.0


def _check_time(t):
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")


def gaussian_kernel(x: float, D: tuple[float, float], t: float) -> float:
    """Brownian transition mass ``P_t(x, D)`` of the interval ``D = (lo, hi)``."""
    _check_time(t)
    lo, hi = D
    if lo > hi:
        raise DomainError("empty interval")
    s = math.sqrt(t)
    a = (lo - x) / s
    b = (hi - x) / s
    # Subtract upper tails when both ends sit right of the mean to keep precision.
    if a > 0:
        return float(ndtr(-a) - ndtr(-b))
    return float(ndtr(b) - ndtr(a))


def bm_hit_zero_cdf(x: float, t: float) -> float:
    """``P^x(T_0 < t) = 2 (1 - Phi(|x| / sqrt(t)))`` (reflection principle)."""
    _check_time(t)
    return float(erfc(abs(x) / math.sqrt(2.0 * t)))


def _cosh_ratio(u, v):
    u, v = np.abs(u), np.abs(v)
    big = np.maximum(u, v) > _LOG_SPACE_ABOVE
    with np.errstate(over="ignore"):
        direct = np.cosh(u) / np.cosh(v)
    logged = np.exp(u - v) * (1 + np.exp(-2 * u)) / (1 + np.exp(-2 * v))
    return np.where(big, logged, direct)


def _sinh_ratio(u, v):
    """``sinh(u)/sinh(v)`` for ``0 <= u``, ``0 < v``."""
    big = np.maximum(u, v) > _LOG_SPACE_ABOVE
    with np.errstate(over="ignore", invalid="ignore"):
        direct = np.sinh(u) / np.sinh(v)
    logged = np.exp(u - v) * (-np.expm1(-2 * u)) / (-np.expm1(-2 * v))
    return np.where(big, logged, direct)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def bm_two_barrier_laplace(z: float, lam: float) -> float:
    """``E^z[exp(-lam (T_0 ^ T_1))]`` for standard Brownian motion on ``(0, 1)``."""
    if not 0 < z < 1:
        raise DomainError(f"z must lie in (0, 1), got {z}")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    k = math.sqrt(2.0 * lam)
    return _scalar(_cosh_ratio((z - 0.5) * k, 0.5 * k))


def bm_interval_barrier_laplace(z: float, lam: float) -> float:
    """``E^z[exp(-lam (T_-1 ^ T_1))]`` for standard Brownian motion on ``(-1, 1)``."""
    if not -1 < z < 1:
        raise DomainError(f"z must lie in (-1, 1), got {z}")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    k = math.sqrt(2.0 * lam)
    return _scalar(_cosh_ratio(z * k, k))


def drifted_bm_hit_zero_density(z: float, a: float, s: float) -> float:
    """First-passage density at 0 of ``z + W_s + a s``."""
    if z == 0:
        raise DomainError("start must differ from the barrier")
    if not s > 0:
        raise DomainError(f"s must be positive, got {s}")
    return abs(z) / math.sqrt(2 * math.pi * s**3) * math.exp(-((z + a * s) ** 2) / (2 * s))


def drifted_bm_hit_zero_cdf(z: float, a: float, t: float) -> float:
    """``P^z(T_0 < t)`` for drift ``a`` (inverse-Gaussian first-passage CDF)."""
    _check_time(t)
    if z == 0:
        return 1.0
    d = abs(z)
    mu = -a if z > 0 else a  # drift towards the barrier
    st = math.sqrt(t)
    term1 = ndtr((mu * t - d) / st)
    # exp(2 mu d) * Phi(-(d + mu t)/sqrt t), evaluated in log space
    tail = ndtr(-(d + mu * t) / st)
    term2 = math.exp(2 * mu * d + math.log(tail)) if tail > 0 else 0.0
    return float(min(1.0, term1 + term2))


def drifted_bm_one_sided_laplace(z: float, b: float, a: float, lam: float) -> float:
    """``E^z[exp(-lam T_b)]`` for ``z + W_t + a t`` (zero on non-hitting paths)."""
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    k = math.sqrt(2 * lam + a * a)
    return math.exp(a * (b - z) - abs(b - z) * k)


def drifted_two_barrier_laplace(z: float, a: float, lam: float) -> float:
    """``E^z[exp(-lam (T_0 ^ T_1))]`` for drift ``a`` on ``(0, 1)``."""
    if not 0 < z < 1:
        raise DomainError(f"z must lie in (0, 1), got {z}")
    if not a > 0:
        raise DomainError("drift must be positive")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    k = math.sqrt(2 * lam + a * a)
    left = _sinh_ratio((1 - z) * k, k) * math.exp(-a * z)
    right = _sinh_ratio(z * k, k) * math.exp(a * (1 - z))
    return float(left + right)


def drifted_interval_barrier_laplace(z: float, a: float, lam: float) -> float:
    """``E^z[exp(-lam (T_-1 ^ T_1))]`` for drift ``a`` on ``(-1, 1)``."""
    if not -1 < z < 1:
        raise DomainError(f"z must lie in (-1, 1), got {z}")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    k = math.sqrt(2 * lam + a * a)
    up = _sinh_ratio((z + 1) * k, 2 * k) * math.exp(a * (1 - z))
    down = _sinh_ratio((1 - z) * k, 2 * k) * math.exp(-a * (1 + z))
    return float(up + down)


def _log_sinh(u):
    u = np.asarray(u, dtype=float)
    # log sinh u = u + log(1 - e^{-2u}) - log 2; log sinh 0 = -inf
    with np.errstate(divide="ignore"):
        return u + np.log(-np.expm1(-2 * u)) - math.log(2.0)


def log_g(z, k, a):
    """``log g_z(k)`` with ``g_z(k) = sinh((1-z)k) e^{-az} + sinh(zk) e^{a(1-z)}``."""
    z = np.asarray(z, dtype=float)
    k = np.asarray(k, dtype=float)
    return np.logaddexp(_log_sinh((1 - z) * k) - a * z, _log_sinh(z * k) + a * (1 - z))


def log_h(z, k, a):
    """``log h_z(k)`` with ``h_z(k) = sinh((1+z)k) e^{a(1-z)} + sinh((1-z)k) e^{-a(1+z)}``."""
    z = np.asarray(z, dtype=float)
    k = np.asarray(k, dtype=float)
    return np.logaddexp(_log_sinh((1 + z) * k) + a * (1 - z), _log_sinh((1 - z) * k) - a * (1 + z))


def _grid_discrepancy(log_f, z1, z2, a, k_grid):
    k = np.asarray(k_grid, dtype=float)
    if k.size == 0:
        raise DomainError("k grid must be nonempty")
    l1 = log_f(z1, k, a)
    l2 = log_f(np.asarray(z2, dtype=float)[..., None], k, a)
    # |f1 - f2| / max(1, f1) evaluated without forming f1 when it is huge
    f1 = np.exp(np.minimum(l1, 700.0))
    scale = np.where(l1 > 0, 1.0, f1)
    return np.max(np.abs(np.expm1(l2 - l1)) * scale, axis=-1)


def default_k_grid(a: float) -> np.ndarray:
    return np.linspace(a, a + 20.0, 201)


def g_injectivity_check(z1: float, z2, a: float, k_grid=None, tol: float = 1e-9):
    """True iff ``g_{z1}`` and ``g_{z2}`` agree on ``k_grid`` up to ``tol``
    (relative to ``max(1, g_{z1})``).  ``z2`` may be an array."""
    if k_grid is None:
        k_grid = default_k_grid(a)
    out = _grid_discrepancy(log_g, z1, z2, a, k_grid) <= tol
    return bool(out) if np.ndim(out) == 0 else out


def h_injectivity_check(z1: float, z2, a: float, k_grid=None, tol: float = 1e-9):
    """Companion of :func:`g_injectivity_check` for the interval ``(-1, 1)``."""
    if k_grid is None:
        k_grid = default_k_grid(a)
    out = _grid_discrepancy(log_h, z1, z2, a, k_grid) <= tol
    return bool(out) if np.ndim(out) == 0 else out


def absorbed_bm_reach_b_laplace(z: float, b: float, upper: float, lam: float) -> float:
    """``E^z[exp(-lam T_b); T_b < T_0 ^ T_upper]`` for Brownian motion killed
    at 0 and at ``upper``."""
    if not 0 < b < upper:
        raise DomainError("need 0 < b < upper")
    if not 0 < z < upper:
        raise DomainError(f"z must lie in (0, {upper}), got {z}")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    if lam == 0:
        return z / b if z <= b else (upper - z) / (upper - b)
    k = math.sqrt(2 * lam)
    if z <= b:
        return float(_sinh_ratio(z * k, b * k))
    return float(_sinh_ratio((upper - z) * k, (upper - b) * k))


def absorbed_bm_death_cdf(x: float, t: float) -> float:
    """Probability that Brownian motion killed at 0 is dead by time ``t``."""
    if not x > 0:
        raise DomainError("start must be positive")
    return bm_hit_zero_cdf(x, t)


def absorbed_two_wall_laplace(z: float, width: float, lam: float) -> float:
    """Laplace transform of the death time of Brownian motion killed at 0 and
    ``width`` (Brownian scaling of :func:`bm_two_barrier_laplace`)."""
    return bm_two_barrier_laplace(z / width, lam * width * width)


def integrate_density(f, lo: float = 0.0, hi: float = math.inf) -> float:
    """Adaptive quadrature with absolute tolerance 1e-9."""
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-9, epsrel=1e-10, limit=500)
    return float(val)
