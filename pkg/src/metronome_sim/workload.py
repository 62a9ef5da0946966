"""Packet arrival streams: Poisson, constant bit rate, stepped ramps and hashed flow mixes.

Streams are produced in fixed time windows so the simulator can pull arrivals
lazily as integer-nanosecond numpy arrays, one per receive queue. All
randomness comes from numpy's PCG64 generator seeded through
``numpy.random.SeedSequence(seed)``; equal (spec, seed, n_queues, horizon,
window) gives bit-identical streams.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

KINDS = ("poisson", "cbr", "ramp", "flowmix")
NS_PER_S = 1_000_000_000
DEFAULT_WINDOW_NS = 1_000_000


@dataclass(frozen=True)
class ArrivalSpec:
    """What traffic to offer.

    ``rate`` is the aggregate packets/second for poisson, cbr and flowmix.
    ``ramp_steps`` is a sequence of (duration_ns, rate) pairs. ``flows`` is a
    sequence of (weight, flow_id) pairs where a ``None`` id means "a fresh
    random flow for every packet". ``queue_weights`` splits poisson/cbr/ramp
    traffic across queues (uniform when omitted); flowmix traffic is split by
    hashing flow ids instead.
    """

    kind: str = "poisson"
    rate: float = 0.0
    ramp_steps: tuple[tuple[int, float], ...] = ()
    flows: tuple[tuple[float, int | None], ...] = ()
    queue_weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown arrival kind {self.kind!r}; expected one of {KINDS}")
        if self.rate < 0 or not math.isfinite(self.rate):
            raise ValueError(f"rate must be a finite value >= 0, got {self.rate}")
        for dur, r in self.ramp_steps:
            if dur <= 0 or r < 0:
                raise ValueError(f"bad ramp step ({dur}, {r})")
        if self.kind == "ramp" and not self.ramp_steps:
            raise ValueError("ramp traffic needs at least one step")
        if self.kind == "flowmix":
            if not self.flows:
                raise ValueError("flowmix traffic needs at least one flow")
            weights = [w for w, _ in self.flows]
            if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
                raise ValueError(f"flow weights must be >= 0 and sum to 1, got {weights}")
        if self.queue_weights is not None:
            qw = self.queue_weights
            if any(w < 0 for w in qw) or abs(sum(qw) - 1.0) > 1e-9:
                raise ValueError(f"queue weights must be >= 0 and sum to 1, got {list(qw)}")

    @property
    def duration_ns(self) -> int | None:
        return sum(d for d, _ in self.ramp_steps) if self.kind == "ramp" else None

    def mean_rate(self, horizon_ns: int) -> float:
        """Average offered packets/second over [0, horizon_ns)."""
        if self.kind != "ramp":
            return self.rate
        total, t = 0.0, 0
        for dur, r in self.ramp_steps:
            span = min(dur, max(0, horizon_ns - t))
            total += r * span
            t += dur
        return total / horizon_ns


class Arrival(NamedTuple):
    time: int
    queue_index: int
    flow_id: int


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def assign_queues(flow_ids: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Vectorised stable RSS-style hash: splitmix64(flow_id xor mix(seed)) mod n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ids = np.asarray(flow_ids).astype(np.int64).view(np.uint64)
    key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    return (_splitmix64(ids ^ key) % np.uint64(n)).astype(np.int64)


def assign_queue(flow_id: int, n: int, seed: int = 0) -> int:
    return int(assign_queues(np.array([flow_id]), n, seed)[0])


def staircase_ramp(peak_rate: float = 14e6, step_ns: int = 2 * NS_PER_S,
                   duration_ns: int = 60 * NS_PER_S, seed: int = 0) -> ArrivalSpec:
    """Symmetric staircase: equal rises every step up to ``peak_rate`` at mid-run, then back down."""
    n_steps = duration_ns // step_ns
    if n_steps < 2 or n_steps * step_ns != duration_ns:
        raise ValueError("duration must be a whole number (>= 2) of steps")
    half = (n_steps + 1) // 2
    rising = [peak_rate * (i + 1) / half for i in range(half)]
    rates = rising + rising[: n_steps - half][::-1]
    return ArrivalSpec(kind="ramp", ramp_steps=tuple((step_ns, r) for r in rates), seed=seed)


class Window(NamedTuple):
    lo: int
    hi: int
    times: list[np.ndarray]
    flows: list[np.ndarray] | None


@dataclass
class ArrivalSource:
    """Generates arrivals window by window over [0, horizon_ns) for ``n_queues`` queues."""

    spec: ArrivalSpec
    n_queues: int
    horizon_ns: int
    window_ns: int = DEFAULT_WINDOW_NS
    with_flows: bool = False
    _t: int = field(default=0, init=False)
    _pending: list = field(default_factory=list, init=False)

    def __post_init__(self):
        if self.n_queues < 1 or self.horizon_ns <= 0 or self.window_ns <= 0:
            raise ValueError("n_queues, horizon_ns and window_ns must be positive")
        spec = self.spec
        if spec.queue_weights is not None and len(spec.queue_weights) != self.n_queues:
            raise ValueError(f"{len(spec.queue_weights)} queue weights for {self.n_queues} queues")
        weights = spec.queue_weights or (1.0 / self.n_queues,) * self.n_queues
        self._weights = np.asarray(weights, dtype=float)
        children = np.random.SeedSequence(spec.seed).spawn(self.n_queues + 1)
        self._rngs = [np.random.Generator(np.random.PCG64(s)) for s in children]
        self._carry = [np.empty(0) for _ in range(self.n_queues)]
        self._last = np.zeros(self.n_queues)
        self._pending = [deque() for _ in range(self.n_queues)]
        if spec.kind == "ramp":
            bounds = np.cumsum([0] + [d for d, _ in spec.ramp_steps])
            self._steps = [(int(bounds[i]), int(bounds[i + 1]), r) for i, (_, r) in enumerate(spec.ramp_steps)]
        if spec.kind == "flowmix":
            self._flow_w = np.array([w for w, _ in spec.flows])
            self._flow_ids = [f for _, f in spec.flows]

    @property
    def exhausted(self) -> bool:
        return self._t >= self.horizon_ns

    @property
    def generated_until(self) -> int:
        return self._t

    def next_window(self) -> Window | None:
        if self.exhausted:
            return None
        lo = self._t
        hi = min(self.horizon_ns, lo + self.window_ns)
        self._t = hi
        kind = self.spec.kind
        if kind == "poisson":
            times = [self._poisson(q, lo, hi) for q in range(self.n_queues)]
        elif kind == "cbr":
            times = [self._cbr(q, lo, hi) for q in range(self.n_queues)]
        elif kind == "ramp":
            times = [self._ramp(q, lo, hi) for q in range(self.n_queues)]
        else:
            return self._flowmix(lo, hi)
        flows = None
        if self.with_flows:
            flows = [np.full(t.size, q, dtype=np.int64) for q, t in enumerate(times)]
        return Window(lo, hi, times, flows)

    def pull(self, queue: int) -> tuple[int, np.ndarray] | None:
        """Next (window_end, arrival_times) chunk for one queue; None once the stream has ended.

        The chunk holds every arrival of that queue up to (not including) window_end.
        """
        pending = self._pending[queue]
        while not pending:
            w = self.next_window()
            if w is None:
                return None
            for q, arr in enumerate(w.times):
                self._pending[q].append((w.hi, arr))
        return pending.popleft()

    def _poisson(self, q: int, lo: int, hi: int) -> np.ndarray:
        rate = self.spec.rate * self._weights[q]
        if rate <= 0:
            return np.empty(0, dtype=np.int64)
        gap = NS_PER_S / rate
        rng = self._rngs[q]
        parts = [self._carry[q]]
        last = self._last[q]
        while last < hi:
            expect = (hi - last) / gap
            n = int(expect + 4.0 * math.sqrt(expect) + 16)
            pts = last + np.cumsum(rng.standard_exponential(n) * gap)
            last = pts[-1]
            parts.append(pts)
        self._last[q] = last
        allpts = np.concatenate(parts)
        cut = np.searchsorted(allpts, hi, side="left")
        self._carry[q] = allpts[cut:]
        return np.floor(allpts[:cut]).astype(np.int64)

    def _cbr_span(self, start: float, rate: float, lo: int, hi: int) -> np.ndarray:
        gap = NS_PER_S / rate
        k0 = max(0, math.ceil((lo - start) / gap))
        k1 = max(0, math.ceil((hi - start) / gap))
        pts = start + np.arange(k0, k1, dtype=np.float64) * gap
        pts = pts[(pts >= lo) & (pts < hi)]
        return np.floor(pts).astype(np.int64)

    def _cbr(self, q: int, lo: int, hi: int) -> np.ndarray:
        rate = self.spec.rate * self._weights[q]
        if rate <= 0:
            return np.empty(0, dtype=np.int64)
        return self._cbr_span(0.0, rate, lo, hi)

    def _ramp(self, q: int, lo: int, hi: int) -> np.ndarray:
        out = []
        for start, end, rate in self._steps:
            if end <= lo or start >= hi:
                continue
            r = rate * self._weights[q]
            if r > 0:
                out.append(self._cbr_span(float(start), r, max(lo, start), min(hi, end)))
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(out)

    def _flowmix(self, lo: int, hi: int) -> Window:
        rng = self._rngs[-1]
        times = self._cbr_span(0.0, self.spec.rate, lo, hi) if self.spec.rate > 0 else np.empty(0, np.int64)
        pick = rng.choice(len(self._flow_ids), size=times.size, p=self._flow_w)
        fresh = rng.integers(0, 2**32, size=times.size, dtype=np.int64) + 2**32
        ids = fresh.copy()
        for i, fid in enumerate(self._flow_ids):
            if fid is not None:
                ids[pick == i] = fid
        queues = assign_queues(ids, self.n_queues, self.spec.seed)
        per_q = [times[queues == q] for q in range(self.n_queues)]
        flows = [ids[queues == q] for q in range(self.n_queues)] if self.with_flows else None
        return Window(lo, hi, per_q, flows)


class ArrivalGenerator:
    """Single merged stream of :class:`Arrival` records in (time, queue) order."""

    def __init__(self, spec: ArrivalSpec, n_queues: int, horizon_ns: int,
                 window_ns: int = DEFAULT_WINDOW_NS):
        self._source = ArrivalSource(spec, n_queues, horizon_ns, window_ns, with_flows=True)
        self._buffered: Iterator[Arrival] = iter(())

    def _refill(self) -> bool:
        w = self._source.next_window()
        if w is None:
            return False
        times = np.concatenate(w.times)
        queues = np.concatenate([np.full(t.size, q, dtype=np.int64) for q, t in enumerate(w.times)])
        flows = np.concatenate(w.flows)
        order = np.lexsort((queues, times))
        self._buffered = map(Arrival._make, zip(times[order].tolist(), queues[order].tolist(),
                                                flows[order].tolist()))
        return True

    def next_arrival(self) -> Arrival | None:
        while True:
            item = next(self._buffered, None)
            if item is not None:
                return item
            if not self._refill():
                return None

    def __iter__(self) -> Iterator[Arrival]:
        while (a := self.next_arrival()) is not None:
            yield a


def write_trace(path, arrivals: Iterable[Arrival]) -> int:
    """Write arrivals as CSV (time_ns,queue,flow_id); returns the row count."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "queue", "flow_id"])
        for a in arrivals:
            w.writerow([a.time, a.queue_index, a.flow_id])
            n += 1
    return n


def read_trace(path) -> list[Arrival]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["time_ns", "queue", "flow_id"]:
            raise ValueError(f"{path}: expected header time_ns,queue,flow_id, got {reader.fieldnames}")
        return [Arrival(int(r["time_ns"]), int(r["queue"]), int(r["flow_id"])) for r in reader]
