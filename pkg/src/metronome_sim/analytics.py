"""Closed-form model of sleep&wake packet retrieval with a primary/backup race.

All durations are plain floats in whatever unit the caller uses (the simulator
passes nanoseconds, the tests mostly use microseconds); rates are packets per
second. Every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class StabilityError(ValueError):
    """Raised when a formula that divides by 1 - rho is asked for rho >= 1."""


class UndefinedLoadError(ValueError):
    """Raised when a load is requested from an all-zero cycle."""


def _clamp01(value: float) -> float:
    return min(1.0, max(0.0, value))


@dataclass(frozen=True)
class ModelParams:
    m_threads: int
    n_queues: int
    t_short: float
    t_long: float
    target_vacation: float

    def __post_init__(self):
        if self.m_threads < 1:
            raise ValueError(f"m_threads must be >= 1, got {self.m_threads}")
        if self.n_queues < 1:
            raise ValueError(f"n_queues must be >= 1, got {self.n_queues}")
        if self.n_queues > 1 and self.m_threads < self.n_queues:
            raise ValueError(
                f"m_threads ({self.m_threads}) must be at least n_queues ({self.n_queues})"
            )
        if not (self.t_short > 0 and self.t_long > 0 and self.target_vacation > 0):
            raise ValueError("t_short, t_long and target_vacation must be positive")
        if self.t_short > self.t_long:
            raise ValueError(f"t_short ({self.t_short}) exceeds t_long ({self.t_long})")

    @property
    def timer_ratio(self) -> float:
        """t_long / t_short; the simplified formulas assume this is large."""
        return self.t_long / self.t_short


@dataclass(frozen=True)
class LoadPoint:
    lambda_rate: float
    mu_rate: float

    def __post_init__(self):
        if self.lambda_rate < 0:
            raise ValueError(f"lambda_rate must be >= 0, got {self.lambda_rate}")
        if self.mu_rate <= 0:
            raise ValueError(f"mu_rate must be > 0, got {self.mu_rate}")
        if self.rho >= 1:
            raise StabilityError(f"offered load rho={self.rho:.6g} is not below 1")

    @property
    def rho(self) -> float:
        return self.lambda_rate / self.mu_rate


def _rho_of(load: LoadPoint | float) -> float:
    return load.rho if isinstance(load, LoadPoint) else float(load)


def expected_busy_given_vacation(v: float, load: LoadPoint | float) -> float:
    """Mean busy period that follows a vacation of length ``v``.

    ``load`` may be a :class:`LoadPoint` or a bare rho.
    """
    rho = _rho_of(load)
    if rho >= 1:
        raise StabilityError(f"rho={rho} >= 1 has no finite busy period")
    if rho < 0 or v < 0:
        raise ValueError("v and rho must be non-negative")
    return v * rho / (1.0 - rho)


def load_from_periods(busy_mean: float, vacation_mean: float) -> float:
    """Invert the busy/vacation relation: rho = B / (V + B)."""
    if busy_mean < 0 or vacation_mean < 0:
        raise ValueError("periods must be non-negative")
    total = busy_mean + vacation_mean
    if total == 0:
        raise UndefinedLoadError("busy and vacation periods are both zero")
    return busy_mean / total


def vacation_cdf_high_load(x: float, p: ModelParams) -> float:
    """P(V <= x) with one primary on T_S and M-1 backups spread over T_L."""
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x >= p.t_short:
        return 1.0
    return _clamp01(1.0 - (1.0 - x / p.t_long) ** (p.m_threads - 1))


def vacation_atom_high_load(p: ModelParams) -> float:
    """Probability mass sitting exactly at x = T_S (the primary's own timer fires first)."""
    return _clamp01((1.0 - p.t_short / p.t_long) ** (p.m_threads - 1))


def vacation_pdf_high_load(x: float, p: ModelParams) -> float:
    """Continuous part of the high-load vacation density on [0, T_S).

    The atom returned by :func:`vacation_atom_high_load` is not included.
    """
    if x < 0 or x >= p.t_short:
        raise ValueError(
            f"density is only defined on [0, t_short={p.t_short}); got x={x} "
            "(the mass at t_short is an atom, see vacation_atom_high_load)"
        )
    m = p.m_threads
    if m == 1:
        return 0.0
    return (m - 1) / p.t_long * (1.0 - x / p.t_long) ** (m - 2)


def mean_vacation_high_load(p: ModelParams) -> float:
    m = p.m_threads
    return p.t_long / m * (1.0 - (1.0 - p.t_short / p.t_long) ** m)


def backup_success_prob(p: ModelParams) -> float:
    """Chance that one particular backup wakes first, inside the primary's T_S window.

    This is the integral of (1/T_L)(1 - x/T_L)^(M-2) over [0, T_S], i.e.
    (1 - (1 - T_S/T_L)^(M-1)) / (M-1). Summed over the M-1 backups it gives
    one minus :func:`vacation_atom_high_load`.
    """
    if p.m_threads < 2:
        raise ValueError("backup success probability needs at least two threads")
    m = p.m_threads
    return _clamp01(-math.expm1((m - 1) * math.log1p(-p.t_short / p.t_long)) / (m - 1)
                    if p.t_short < p.t_long else 1.0 / (m - 1))


def vacation_cdf_low_load(x: float, p: ModelParams) -> float:
    """P(V <= x) when all M threads sit on the short timer."""
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x >= p.t_short:
        return 1.0
    return _clamp01(1.0 - (1.0 - x / p.t_short) ** p.m_threads)


def mean_vacation_low_load(p: ModelParams) -> float:
    """T_S / M, the low-load mean the timer rule is built on.

    This is the high-load mean with T_L = T_S (the serving thread's own timer
    plus M-1 uniform competitors). The M-competitor CDF above is slightly more
    optimistic: its own mean is T_S / (M + 1).
    """
    return p.t_short / p.m_threads


class GeneralVacation(NamedTuple):
    exact: float
    approx: float


def mean_vacation_general(p: ModelParams, primary_prob: float) -> GeneralVacation:
    """Mean vacation when each non-serving thread is primary with probability ``primary_prob``.

    ``exact`` integrates (1 - q x/T_S - (1-q) x/T_L)^(M-1) over [0, T_S];
    ``approx`` is its T_L -> infinity limit (T_S/M) (1 - (1-q)^M) / q.
    """
    q = primary_prob
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"primary_prob must lie in [0, 1], got {q}")
    m, ts, tl = p.m_threads, p.t_short, p.t_long
    slope = q / ts + (1.0 - q) / tl
    exact = (1.0 - ((1.0 - q) * (1.0 - ts / tl)) ** m) / (m * slope)
    if q == 0.0:
        approx = ts
    else:
        # -expm1(m*log1p(-q)) == 1 - (1-q)^m without cancellation for small q
        approx = ts / m * (-math.expm1(m * math.log1p(-q)) if q < 1.0 else 1.0) / q
    return GeneralVacation(exact, approx)


def adaptive_ts(m: int, rho: float, target: float) -> float:
    """Short timer that keeps the mean vacation at ``target`` for load ``rho``.

    Uses target * M / (1 + rho + ... + rho^(M-1)), which stays finite at rho = 1.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    total, term = 0.0, 1.0
    for _ in range(m):
        total += term
        term *= rho
    return target * m / total


def adaptive_ts_multiqueue(m: int, n: int, rho_i: float, target: float) -> float:
    """Per-queue short timer with M/N threads per queue on average.

    M/N is used as a real exponent; for N = 1 this matches :func:`adaptive_ts`.
    """
    if n < 1 or m < 1:
        raise ValueError("m and n must be >= 1")
    if m < n:
        raise ValueError(f"m ({m}) must be at least n ({n})")
    if not 0.0 <= rho_i <= 1.0:
        raise ValueError(f"rho_i must lie in [0, 1], got {rho_i}")
    r = m / n
    if rho_i == 0.0:
        return r * target
    if rho_i == 1.0 or r == 1.0:
        return target
    log_rho = math.log(rho_i)
    # r (1 - rho) / (1 - rho^r), written with expm1 so rho -> 1 stays accurate
    return r * math.expm1(log_rho) / math.expm1(r * log_rho) * target
