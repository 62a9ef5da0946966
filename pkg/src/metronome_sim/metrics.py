"""Aggregation of raw simulator streams into the reported observables."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .analytics import ModelParams, vacation_atom_high_load

if TYPE_CHECKING:
    from .engine import RawRun

MIN_KS_SAMPLES = 10_000


class InsufficientDataError(ValueError):
    pass


def _log_edges(per_decade: int = 40, decades: int = 11) -> np.ndarray:
    # [0, 1) then log-spaced up to 1e11 ns; the last bin is open-ended
    return np.concatenate(([0.0], np.logspace(0, decades, decades * per_decade + 1)))


class LatencyHistogram:
    """Log-binned latency counts (ns) with exact count, sum, min and max.

    Values below ``EXACT_LIMIT`` are first counted exactly (one slot per
    nanosecond) and folded into the log bins on demand. The last log bin is
    open-ended, so every sample lands somewhere.
    """

    FLUSH_AT = 1 << 20
    EXACT_LIMIT = 1 << 20

    def __init__(self, edges: np.ndarray | None = None):
        self.edges = _log_edges() if edges is None else np.asarray(edges, dtype=np.float64)
        self._log_counts = np.zeros(self.edges.size, dtype=np.int64)
        self._exact = np.zeros(self.EXACT_LIMIT, dtype=np.int64)
        self.count = 0
        self.total = 0
        self.min = 0
        self.max = 0
        self._pending: list[np.ndarray] = []
        self._pending_n = 0

    def add(self, values: np.ndarray):
        if values.size == 0:
            return
        self._pending.append(values)
        self._pending_n += values.size
        if self._pending_n >= self.FLUSH_AT:
            self._flush()

    def _flush(self):
        if not self._pending:
            return
        vals = np.concatenate(self._pending)
        self._pending, self._pending_n = [], 0
        lo, hi = int(vals.min()), int(vals.max())
        if lo < 0:
            raise ValueError("negative latency")
        if hi < self.EXACT_LIMIT:
            self._exact[: hi + 1] += np.bincount(vals)
        else:
            small = vals < self.EXACT_LIMIT
            self._exact += np.bincount(vals[small], minlength=self.EXACT_LIMIT)
            big = vals[~small]
            idx = np.searchsorted(self.edges, big, side="right") - 1
            self._log_counts += np.bincount(idx, minlength=self.edges.size)
        self.min = lo if self.count == 0 else min(self.min, lo)
        self.max = max(self.max, hi)
        self.count += int(vals.size)
        self.total += int(vals.sum())

    def finalized(self) -> LatencyHistogram:
        self._flush()
        return self

    @property
    def counts(self) -> np.ndarray:
        """Counts per log bin; bin i covers [edges[i], edges[i+1])."""
        self._flush()
        nz = np.flatnonzero(self._exact)
        idx = np.searchsorted(self.edges, nz, side="right") - 1
        folded = np.bincount(idx, weights=self._exact[nz], minlength=self.edges.size).astype(np.int64)
        return folded + self._log_counts

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def percentile(self, p: float) -> float:
        """Nearest-rank percentile; exact below EXACT_LIMIT, else the upper edge of its log bin (capped by max)."""
        self._flush()
        if self.count == 0:
            return 0.0
        rank = max(1, math.ceil(p / 100.0 * self.count))
        exact_cum = np.cumsum(self._exact)
        if exact_cum[-1] >= rank:
            return float(np.searchsorted(exact_cum, rank))
        i = int(np.searchsorted(np.cumsum(self._log_counts), rank - exact_cum[-1]))
        upper = self.edges[i + 1] if i + 1 < self.edges.size else float(self.max)
        return float(min(upper, self.max))


def nearest_rank(sorted_values: np.ndarray, p: float) -> float:
    n = sorted_values.size
    if n == 0:
        return 0.0
    rank = min(n, max(1, math.ceil(p / 100.0 * n)))
    return float(sorted_values[rank - 1])


def _mean(x: np.ndarray) -> float:
    return float(x.mean()) if x.size else 0.0


@dataclass(frozen=True)
class QueueStats:
    index: int
    cycles: int
    cycles_nonempty: int
    mean_v: float
    mean_b: float
    p50_v: float
    p99_v: float
    p50_b: float
    p99_b: float
    mean_n_v: float
    rho_measured: float
    rho_est_final: float
    rho_est_mean: float
    t_short_final: float
    t_short_mean: float
    tries: int
    busy_tries: int
    arrivals: int
    served: int
    backlog: int
    dropped: int

    @property
    def busy_tries_pct(self) -> float:
        return 100.0 * self.busy_tries / self.tries if self.tries else 0.0


@dataclass(frozen=True)
class ThreadStats:
    id: int
    total_tries: int
    busy_tries: int
    awake_time: int
    awake_fraction: float
    cycles_served: int

    @property
    def busy_tries_pct(self) -> float:
        return 100.0 * self.busy_tries / self.total_tries if self.total_tries else 0.0


@dataclass(frozen=True)
class SimulationReport:
    config: object
    window: int
    queues: tuple[QueueStats, ...]
    threads: tuple[ThreadStats, ...]
    arrivals: int
    served: int
    backlog: int
    dropped: int
    latency: LatencyHistogram
    cycles: dict = field(repr=False)
    trace: dict = field(repr=False)
    timeline_offered: np.ndarray = field(repr=False)
    timeline_served: np.ndarray = field(repr=False)
    packets: dict | None = field(default=None, repr=False)
    always_poll: bool = False

    @property
    def conservation_ok(self) -> bool:
        return self.arrivals == self.served + self.backlog + self.dropped

    @property
    def total_cycles(self) -> int:
        return sum(q.cycles for q in self.queues)

    @property
    def busy_tries_pct_global(self) -> float:
        tries = sum(t.total_tries for t in self.threads)
        return 100.0 * sum(t.busy_tries for t in self.threads) / tries if tries else 0.0

    @property
    def busy_tries_pct_per_thread(self) -> float:
        """Unweighted mean over threads of each thread's busy-try percentage."""
        return float(np.mean([t.busy_tries_pct for t in self.threads])) if self.threads else 0.0

    @property
    def throughput(self) -> float:
        """Packets served per second over the whole horizon."""
        return self.served / (self.config.horizon / 1e9)

    @property
    def cpu_proxy(self) -> float:
        return cpu_proxy(self)

    def vacation_samples(self, queue: int | None = None, nonempty_only: bool = True) -> np.ndarray:
        """Measured V(i) after warmup; by default only cycles that found packets."""
        c = self.cycles
        mask = c["t_start"] >= self.config.warmup
        if queue is not None:
            mask &= c["queue"] == queue
        if nonempty_only:
            mask &= c["n_v"] > 0
        return c["v"][mask]

    def fingerprint(self) -> str:
        """Digest of every reported number and raw stream; equal digests mean identical reports."""
        h = hashlib.sha256()
        for q in self.queues:
            h.update(repr(q).encode())
        for t in self.threads:
            h.update(repr(t).encode())
        h.update(repr((self.arrivals, self.served, self.backlog, self.dropped, self.window)).encode())
        lat = self.latency
        h.update(lat.counts.tobytes())
        h.update(repr((lat.count, lat.total, lat.min, lat.max)).encode())
        for group in (self.cycles, self.trace):
            for k in sorted(group):
                h.update(k.encode())
                h.update(np.ascontiguousarray(group[k]).tobytes())
        h.update(self.timeline_offered.tobytes())
        h.update(self.timeline_served.tobytes())
        return h.hexdigest()


def cpu_proxy(report: SimulationReport, per_thread: bool = False):
    """Modeled awake time over M x the measured window; always-poll runs give 1."""
    fr = [t.awake_fraction for t in report.threads]
    if per_thread:
        return fr
    return float(np.mean(fr)) if fr else 0.0


def summarize(raw: RawRun) -> SimulationReport:
    """Deterministic aggregation of one run; cycles starting before warmup are left out."""
    cfg = raw.config
    window = cfg.horizon - cfg.warmup
    c = raw.cycles
    keep = c["t_start"] >= cfg.warmup
    tr = raw.trace
    queues = []
    for q in range(cfg.model.n_queues):
        m = keep & (c["queue"] == q)
        v, b, nv = c["v"][m], c["b"][m], c["n_v"][m]
        vs, bs = np.sort(v), np.sort(b)
        total = int(v.sum()) + int(b.sum())
        tm = tr["queue"] == q
        tq_time, tq_rho, tq_ts = tr["time"][tm], tr["rho_est"][tm], tr["t_short"][tm]
        late = tq_time >= cfg.warmup
        queues.append(QueueStats(
            index=q,
            cycles=int(m.sum()),
            cycles_nonempty=int((nv > 0).sum()),
            mean_v=_mean(v), mean_b=_mean(b),
            p50_v=nearest_rank(vs, 50), p99_v=nearest_rank(vs, 99),
            p50_b=nearest_rank(bs, 50), p99_b=nearest_rank(bs, 99),
            mean_n_v=_mean(nv),
            rho_measured=int(b.sum()) / total if total else 0.0,
            rho_est_final=float(tq_rho[-1]) if tq_rho.size else 0.0,
            rho_est_mean=_mean(tq_rho[late]),
            t_short_final=float(tq_ts[-1]) if tq_ts.size else 0.0,
            t_short_mean=_mean(tq_ts[late].astype(np.float64)),
            tries=int(raw.queue_tries[q]),
            busy_tries=int(raw.queue_busy_tries[q]),
            arrivals=int(raw.queue_arrivals[q]),
            served=int(raw.queue_served[q]),
            backlog=int(raw.queue_backlog[q]),
            dropped=int(raw.queue_dropped[q]),
        ))
    threads = tuple(
        ThreadStats(
            id=i,
            total_tries=int(raw.thread_tries[i]),
            busy_tries=int(raw.thread_busy_tries[i]),
            awake_time=int(raw.thread_awake[i]),
            awake_fraction=min(1.0, int(raw.thread_awake[i]) / window),
            cycles_served=int(raw.thread_cycles[i]),
        )
        for i in range(cfg.model.m_threads)
    )
    return SimulationReport(
        config=cfg,
        window=window,
        queues=tuple(queues),
        threads=threads,
        arrivals=int(raw.queue_arrivals.sum()),
        served=int(raw.queue_served.sum()),
        backlog=int(raw.queue_backlog.sum()),
        dropped=int(raw.queue_dropped.sum()),
        latency=raw.latency,
        cycles=raw.cycles,
        trace=raw.trace,
        timeline_offered=raw.timeline_offered,
        timeline_served=raw.timeline_served,
        packets=raw.packets,
        always_poll=raw.always_poll,
    )


@dataclass(frozen=True)
class DistributionComparison:
    ks_statistic: float
    n_samples: int
    analytic_ref: str


def analytic_vacation_cdf(params: ModelParams, regime: str) -> tuple[Callable, float, float]:
    """(cdf, atom_location, atom_mass) of the modeled vacation for ``regime`` in {high, low}.

    The returned cdf accepts arrays and agrees pointwise with the scalar
    versions in :mod:`analytics`.
    """
    ts, tl, m = float(params.t_short), float(params.t_long), params.m_threads
    if regime == "high":
        def cdf(x):
            x = np.asarray(x, dtype=np.float64)
            return np.where(x >= ts, 1.0, np.clip(1.0 - (1.0 - x / tl) ** (m - 1), 0.0, 1.0))
        return cdf, ts, vacation_atom_high_load(params)
    if regime == "low":
        def cdf(x):
            x = np.asarray(x, dtype=np.float64)
            return np.where(x >= ts, 1.0, np.clip(1.0 - (1.0 - x / ts) ** m, 0.0, 1.0))
        return cdf, ts, 0.0
    raise ValueError(f"regime must be 'high' or 'low', got {regime!r}")


def ks_with_atom(samples: np.ndarray, cdf: Callable, atom_at: float | None = None,
                 atom_mass: float = 0.0) -> float:
    """Two-sided sup |F_n - F| for a CDF that may jump (by ``atom_mass``) at ``atom_at``.

    ``cdf`` must accept arrays. Both sides are compared at every sample
    point and at the atom, using left and right limits, which is where the
    supremum of a step function against a monotone function is attained.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n == 0:
        raise InsufficientDataError("no samples")
    pts = np.unique(x if atom_at is None else np.append(x, atom_at))
    fn_right = np.searchsorted(x, pts, side="right") / n
    fn_left = np.searchsorted(x, pts, side="left") / n
    f_right = np.asarray(cdf(pts), dtype=np.float64)
    f_left = f_right.copy()
    if atom_at is not None and atom_mass > 0:
        f_left[pts == atom_at] -= atom_mass
    return float(max(np.max(np.abs(fn_right - f_right)), np.max(np.abs(fn_left - f_left))))


def compare_vacation_distribution(samples, params: ModelParams, regime: str = "high",
                                  min_samples: int = MIN_KS_SAMPLES) -> DistributionComparison:
    """KS distance between measured vacations (ns) and the modeled vacation CDF."""
    samples = np.asarray(samples)
    if samples.size < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} vacation samples, got {samples.size}")
    cdf, at, mass = analytic_vacation_cdf(params, regime)
    ks = ks_with_atom(samples, cdf, at, mass)
    ref = (f"{regime}-load vacation CDF, M={params.m_threads}, "
           f"T_S={params.t_short:g} ns, T_L={params.t_long:g} ns")
    return DistributionComparison(ks_statistic=min(1.0, ks), n_samples=int(samples.size), analytic_ref=ref)
