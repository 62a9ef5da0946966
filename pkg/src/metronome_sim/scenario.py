"""Plain data describing one simulation run. Durations are integer nanoseconds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytics import ModelParams
from .workload import ArrivalSpec

JITTER_KINDS = ("none", "constant", "uniform", "heavy_tail")
POLL_MODES = ("sleep", "always")


@dataclass(frozen=True)
class DrainSpec:
    mu_rate: int = 29_250_000
    batch_size: int = 32
    wake_overhead: int = 1_000
    lock_overhead: int = 0
    capacity: int = 4096

    def __post_init__(self):
        if self.mu_rate <= 0:
            raise ValueError(f"mu_rate must be > 0, got {self.mu_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.wake_overhead < 0 or self.lock_overhead < 0:
            raise ValueError("overheads must be >= 0")
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")


@dataclass(frozen=True)
class JitterSpec:
    """Extra delay added to every timer expiry.

    ``constant`` adds ``value``; ``uniform`` adds U[low, high] with
    probability ``prob`` (else 0); ``heavy_tail`` adds ``scale`` times a
    Lomax(``shape``) draw with probability ``prob``.
    """

    kind: str = "none"
    value: int = 0
    prob: float = 1.0
    low: int = 0
    high: int = 0
    scale: int = 0
    shape: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in JITTER_KINDS:
            raise ValueError(f"unknown jitter kind {self.kind!r}; expected one of {JITTER_KINDS}")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"jitter prob must lie in [0, 1], got {self.prob}")
        if self.value < 0 or self.low < 0 or self.high < self.low or self.scale < 0:
            raise ValueError("jitter draws must be non-negative (value, low <= high, scale >= 0)")
        if self.shape <= 0:
            raise ValueError(f"jitter shape must be > 0, got {self.shape}")


class JitterSampler:
    """Draws wake delays in blocks; every draw is a non-negative int of nanoseconds."""

    BLOCK = 4096

    def __init__(self, spec: JitterSpec):
        self.spec = spec
        self._rng = np.random.default_rng(spec.seed)
        self._block: list[int] = []

    def _refill(self):
        s, n, rng = self.spec, self.BLOCK, self._rng
        if s.kind == "constant":
            vals = np.full(n, s.value, dtype=np.int64)
        elif s.kind == "uniform":
            hit = rng.random(n) < s.prob
            vals = np.where(hit, rng.integers(s.low, s.high + 1, size=n), 0)
        elif s.kind == "heavy_tail":
            hit = rng.random(n) < s.prob
            vals = np.where(hit, np.floor(s.scale * rng.pareto(s.shape, size=n)), 0)
        else:
            vals = np.zeros(n, dtype=np.int64)
        self._block = vals.astype(np.int64)[::-1].tolist()

    def draw(self) -> int:
        if not self._block:
            self._refill()
        return self._block.pop()


@dataclass(frozen=True)
class AdaptationSpec:
    enabled: bool = True
    alpha: float = 0.1
    rho_init: float = 0.5
    t_s_min: int = 1_000
    t_s_max: int | None = None
    feed_zero_cycles: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    model: ModelParams
    drain: DrainSpec = field(default_factory=DrainSpec)
    arrivals: ArrivalSpec = field(default_factory=ArrivalSpec)
    jitter: JitterSpec = field(default_factory=JitterSpec)
    adaptation: AdaptationSpec = field(default_factory=AdaptationSpec)
    horizon: int = 1_000_000_000
    warmup: int = 10_000_000
    seed_queue: int = 0
    poll_mode: str = "sleep"
    trace_interval: int = 1_000_000
    timeline_bin: int = 10_000_000
    record_packets: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.horizon <= 0 or not 0 <= self.warmup < self.horizon:
            raise ValueError(f"need horizon > warmup >= 0, got horizon={self.horizon} warmup={self.warmup}")
        if self.poll_mode not in POLL_MODES:
            raise ValueError(f"poll_mode must be one of {POLL_MODES}, got {self.poll_mode!r}")
        if self.trace_interval < 0 or self.timeline_bin <= 0:
            raise ValueError("trace_interval must be >= 0 and timeline_bin > 0")
        qw = self.arrivals.queue_weights
        if qw is not None and len(qw) != self.model.n_queues:
            raise ValueError(f"{len(qw)} queue weights for {self.model.n_queues} queues")

    @property
    def seeds(self) -> dict[str, int]:
        return {"arrivals": self.arrivals.seed, "jitter": self.jitter.seed, "queue": self.seed_queue}
