"""Per-queue load estimation and short-timer adaptation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .analytics import adaptive_ts_multiqueue

RHO_CAP = 0.999


class Role(enum.Enum):
    PRIMARY = "primary"
    BACKUP = "backup"


@dataclass
class QueueController:
    """EWMA estimate of one queue's load plus the short timer derived from it.

    Durations are nanoseconds (floats). With ``adaptive`` off the short timer
    stays at its initial value and only the estimate moves.
    """

    m_threads: int
    n_queues: int
    target_vacation: float
    t_long: float
    alpha: float = 0.1
    rho_est: float = 0.5
    t_s_min: float = 1_000.0
    t_s_max: float | None = None
    adaptive: bool = True
    t_short_current: float = field(default=0.0)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.rho_est <= 1.0:
            raise ValueError(f"rho_est must lie in [0, 1], got {self.rho_est}")
        self.rho_est = min(self.rho_est, RHO_CAP)
        if self.t_s_max is None:
            self.t_s_max = self.m_threads / self.n_queues * self.target_vacation * 1.1
        if self.t_s_min > self.t_s_max:
            raise ValueError(f"t_s_min ({self.t_s_min}) above t_s_max ({self.t_s_max})")
        if self.adaptive:
            self.t_short_current = self._timer_for(self.rho_est)
        elif self.t_short_current <= 0:
            raise ValueError("a fixed short timer must be positive")

    def _timer_for(self, rho: float) -> float:
        ts = adaptive_ts_multiqueue(self.m_threads, self.n_queues, rho, self.target_vacation)
        return min(self.t_s_max, max(self.t_s_min, ts))

    def observe_cycle(self, v: float, b: float) -> QueueController:
        """Fold one (vacation, busy) pair into the estimate; all-zero cycles are skipped."""
        total = v + b
        if total <= 0:
            return self
        rho = (1.0 - self.alpha) * self.rho_est + self.alpha * (b / total)
        self.rho_est = min(RHO_CAP, max(0.0, rho))
        if self.adaptive:
            self.t_short_current = self._timer_for(self.rho_est)
        return self

    def current_sleep(self, role: Role) -> float:
        return self.t_short_current if role is Role.PRIMARY else self.t_long


def select_next_queue(role: Role, current_queue: int, n: int, rng) -> int:
    """Primaries stay on their queue; backups re-target uniformly over all ``n`` queues.

    ``rng`` needs an ``integers(n)`` method (a numpy Generator) and is not
    touched when ``n == 1``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if role is Role.PRIMARY or n == 1:
        return current_queue if n > 1 else 0
    return int(rng.integers(n))
