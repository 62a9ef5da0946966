"""Discrete-event simulator of M sleep&wake threads racing for N receive queues.

The event loop only schedules thread wake-ups. Packet arrivals are never
events of their own: each queue owns an :class:`RxRing` over a lazily
generated, sorted array of arrival times, and a drain is resolved in one go
when a thread wins the trylock. Because the serving thread retrieves at a
constant rate, the whole busy period is a function of the arrival stream
alone, so the lock is simply held until the computed drain end.

Event order at equal timestamps is arrival < wake < drain end, then FIFO by
scheduling sequence.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from array import array

import numpy as np

from .controller import QueueController, Role, select_next_queue
from .metrics import LatencyHistogram, SimulationReport, summarize
from .scenario import JitterSampler, ScenarioConfig
from .workload import ArrivalSource

log = logging.getLogger(__name__)

NS = 1_000_000_000


def _count_bins(bins: dict[int, int], times: np.ndarray, width: int):
    first, last = int(times[0]) // width, int(times[-1]) // width
    if first == last:
        bins[first] = bins.get(first, 0) + int(times.size)
        return
    counts = np.bincount(times // width - first)
    for off in np.flatnonzero(counts):
        key = first + int(off)
        bins[key] = bins.get(key, 0) + int(counts[off])


class _ServiceGrid:
    """Cached ceil(k * 1e9 / mu) for k = 0, 1, ... (completion offsets in ns)."""

    def __init__(self, mu: int, size: int = 1 << 16):
        self.mu = mu
        self.table = np.empty(0, dtype=np.int64)
        self._grow(size)

    def _grow(self, size: int):
        k = np.arange(size, dtype=np.int64)
        self.table = (k * NS + self.mu - 1) // self.mu

    def span(self, lo: int, hi: int) -> np.ndarray:
        if hi > self.table.size:
            self._grow(max(hi, 2 * self.table.size))
        return self.table[lo:hi]


class _NoFeed:
    def pull(self, queue):
        return None


class RxRing:
    """One receive ring: a sorted arrival buffer with a served prefix.

    ``buf[head:ingested]`` are packets sitting in the ring; ``buf[ingested:]``
    have not arrived yet as far as the simulation has looked. Packets refused
    for lack of room are deleted from ``buf`` and counted in ``dropped``.
    """

    def __init__(self, index: int, capacity: int, mu_rate: int, batch_size: int,
                 feed=None, timeline_bin: int = 0):
        self.index = index
        self.capacity = capacity
        self.mu = int(mu_rate)
        self.batch = batch_size
        self.feed = feed if feed is not None else _NoFeed()
        self.buf = np.empty(0, dtype=np.int64)
        self.head = 0
        self.ingested = 0
        self.covered = 0  # every arrival before this time is in buf
        self.exhausted = feed is None
        self.dropped = 0
        self.served = 0
        self.arrived = 0
        self.timeline_bin = timeline_bin
        self.offered_bins: dict[int, int] = {}
        self.grid = _ServiceGrid(self.mu)

    @property
    def backlog(self) -> int:
        return self.ingested - self.head

    def service_offset(self, k: int) -> int:
        """Nanoseconds needed to retrieve k packets back to back."""
        return (k * NS + self.mu - 1) // self.mu

    def _append(self) -> bool:
        chunk = self.feed.pull(self.index)
        if chunk is None:
            self.exhausted = True
            self.covered = np.iinfo(np.int64).max
            return False
        hi, arr = chunk
        self.covered = hi
        if arr.size:
            self.arrived += arr.size
            if self.timeline_bin:
                _count_bins(self.offered_bins, arr, self.timeline_bin)
            self.buf = np.concatenate((self.buf[self.head:], arr))
            self.ingested -= self.head
            self.head = 0
        return True

    def _ensure_time(self, t: int):
        while self.covered <= t and not self.exhausted:
            self._append()

    def _ensure_len(self, n: int):
        while self.buf.size < n and not self.exhausted:
            self._append()

    def enqueue_arrival(self, time: int):
        """Inject one arrival by hand (feed-less rings); refused when the ring is full."""
        if self.buf.size and time < self.buf[-1]:
            raise ValueError("arrivals must be enqueued in time order")
        self.buf = np.append(self.buf, np.int64(time))
        self.arrived += 1
        self.ingest(time)

    def ingest(self, t: int):
        """Admit every arrival up to and including ``t``, dropping what does not fit."""
        self._ensure_time(t)
        new = int(np.searchsorted(self.buf, t, side="right"))
        count = new - self.ingested
        if count <= 0:
            return
        room = self.capacity - (self.ingested - self.head)
        if count > room:
            self.buf = np.delete(self.buf, np.s_[self.ingested + room:new])
            self.dropped += count - room
            self.ingested += room
        else:
            self.ingested = new

    def drain(self, t0: int, sink=None) -> tuple[int, int, int]:
        """Serve the ring from ``t0`` until a receive call finds it empty.

        Returns (n_v, served, t_end). ``sink(arrivals, completions)`` gets the
        served packets. Packet k (1-based) of the busy period completes at
        t0 + ceil(k / mu). Batching only changes when emptiness is checked,
        and with no drops it cannot change where the busy period ends, so the
        common case is solved with array operations; a per-batch loop takes
        over when the ring could overflow while draining.
        """
        self.ingest(t0)
        n_v = self.ingested - self.head
        mu = self.mu
        k = n_v
        width = max(64, n_v)
        while True:
            self._ensure_len(self.head + k + width)
            head = self.head  # appending may compact the buffer
            seg = self.buf[head + k: head + k + width]
            if seg.size == 0:
                break
            late = seg > t0 + self.grid.span(k, k + seg.size)
            i = int(late.argmax())
            if late[i]:
                k += i
                break
            k += seg.size
            width *= 2
        if k > self.capacity and self._could_overflow(t0, k):
            return self._drain_batched(t0, n_v, sink)
        head = self.head
        if k:
            if sink is not None:
                done = t0 + self.grid.span(1, k + 1)
                sink(self.buf[head:head + k], done)
            self.head = head + k
            self.ingested = self.head
            self.served += k
        return n_v, k, t0 + (k * NS + mu - 1) // mu

    def _could_overflow(self, t0: int, k: int) -> bool:
        # the ring overflows iff packet j+cap (0-based) lands before completion j+1
        cap, mu, head = self.capacity, self.mu, self.head
        self._ensure_len(head + k + cap)
        js = np.arange(0, max(0, min(k, self.buf.size - head - cap)), dtype=np.int64)
        if js.size == 0:
            return False
        arrivals = self.buf[head + cap + js]
        return bool(np.any(arrivals <= t0 + ((js + 1) * NS + mu - 1) // mu))

    def _drain_batched(self, t0: int, n_v: int, sink) -> tuple[int, int, int]:
        served = 0
        t = t0
        while True:
            self.ingest(t)
            n = min(self.batch, self.ingested - self.head)
            if n == 0:
                break
            if sink is not None:
                ks = np.arange(served + 1, served + n + 1, dtype=np.int64)
                sink(self.buf[self.head:self.head + n], t0 + (ks * NS + self.mu - 1) // self.mu)
            self.head += n
            served += n
            t = t0 + self.service_offset(served)
        self.served += served
        return n_v, served, t

    def finish(self, horizon: int):
        """Pull the rest of the stream and admit everything that arrived before ``horizon``."""
        self._ensure_time(horizon)
        while not self.exhausted:
            self._append()
        self.ingest(horizon)


class ThreadModel:
    __slots__ = ("id", "role", "target_queue", "wake_at", "total_tries", "busy_tries",
                 "awake_time", "cycles_served")

    def __init__(self, tid: int, target_queue: int, wake_at: int):
        self.id = tid
        self.role = Role.PRIMARY
        self.target_queue = target_queue
        self.wake_at = wake_at
        self.total_tries = 0
        self.busy_tries = 0
        self.awake_time = 0
        self.cycles_served = 0


class QueueModel:
    __slots__ = ("index", "ring", "controller", "locked_by", "locked_until", "vacation_start",
                 "tries", "busy_tries", "last_trace")

    def __init__(self, index: int, ring: RxRing, controller: QueueController):
        self.index = index
        self.ring = ring
        self.controller = controller
        self.locked_by: int | None = None
        self.locked_until = -1
        self.vacation_start = 0
        self.tries = 0
        self.busy_tries = 0
        self.last_trace = None

    def is_locked(self, now: int) -> bool:
        # a wake landing exactly on the drain end still sees the lock held
        return now <= self.locked_until

    def holder(self, now: int) -> int | None:
        """Thread holding the lock at ``now``, or None between busy periods."""
        return self.locked_by if self.is_locked(now) else None


CYCLE_FIELDS = ("queue", "thread", "t_start", "t_end", "v", "b", "n_v", "n_b")


@dataclass
class RawRun:
    """Everything the event loop observed, before aggregation."""

    config: ScenarioConfig
    cycles: dict[str, np.ndarray]
    thread_tries: np.ndarray
    thread_busy_tries: np.ndarray
    thread_awake: np.ndarray
    thread_cycles: np.ndarray
    queue_tries: np.ndarray
    queue_busy_tries: np.ndarray
    queue_arrivals: np.ndarray
    queue_served: np.ndarray
    queue_backlog: np.ndarray
    queue_dropped: np.ndarray
    latency: LatencyHistogram
    trace: dict[str, np.ndarray]
    timeline_offered: np.ndarray
    timeline_served: np.ndarray
    packets: dict[str, np.ndarray] | None = None
    always_poll: bool = False
    extra: dict = field(default_factory=dict)


class Simulator:
    """Single-threaded deterministic event loop for one :class:`ScenarioConfig`."""

    def __init__(self, config: ScenarioConfig):
        self.config = cfg = config
        m = cfg.model
        d = cfg.drain
        self.horizon = cfg.horizon
        self.warmup = cfg.warmup
        self.source = ArrivalSource(cfg.arrivals, m.n_queues, cfg.horizon)
        self.rng = np.random.default_rng(cfg.seed_queue)
        self.jitter = JitterSampler(cfg.jitter) if cfg.jitter.kind != "none" else None
        ad = cfg.adaptation
        self.queues = []
        for q in range(m.n_queues):
            qc = QueueController(
                m_threads=m.m_threads, n_queues=m.n_queues,
                target_vacation=float(m.target_vacation), t_long=float(m.t_long),
                alpha=ad.alpha, rho_est=ad.rho_init, t_s_min=float(ad.t_s_min),
                t_s_max=None if ad.t_s_max is None else float(ad.t_s_max),
                adaptive=ad.enabled, t_short_current=float(m.t_short),
            )
            ring = RxRing(q, d.capacity, d.mu_rate, d.batch_size, self.source, cfg.timeline_bin)
            self.queues.append(QueueModel(q, ring, qc))
        self.threads = []
        for tid in range(m.m_threads):
            q = self.queues[tid % m.n_queues]
            first = int(self.rng.integers(0, max(1, int(q.controller.t_short_current))))
            self.threads.append(ThreadModel(tid, q.index, first))
        self.cycles = {f: array("q") for f in CYCLE_FIELDS}
        self.trace = {"time": array("q"), "queue": array("q"), "rho_est": array("d"), "t_short": array("q")}
        self.latency = LatencyHistogram()
        self.served_bins: dict[int, int] = {}
        self.packets = {"arrival": [], "completion": [], "queue": []} if cfg.record_packets else None
        self._seq = 0
        self._heap: list[tuple[int, int, int]] = []
        for q in self.queues:
            self._trace(q, 0)
        self._sinks = [self._sink_for(q.index) for q in self.queues]
        for th in self.threads:
            self._seq += 1
            heapq.heappush(self._heap, (th.wake_at, self._seq, th.id))

    def _trace(self, q: QueueModel, now: int):
        if q.last_trace is not None and now - q.last_trace < self.config.trace_interval:
            return
        q.last_trace = now
        tr = self.trace
        tr["time"].append(now)
        tr["queue"].append(q.index)
        tr["rho_est"].append(q.controller.rho_est)
        tr["t_short"].append(int(round(q.controller.t_short_current)))

    def _schedule(self, thread: ThreadModel, at: int):
        if self.jitter is not None:
            at += self.jitter.draw()
        thread.wake_at = at
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, thread.id))

    def _sink_for(self, q: int):
        bin_ns = self.config.timeline_bin
        latency = self.latency
        packets = self.packets
        served_bins = self.served_bins

        def sink(arrivals, completions):
            latency.add(completions - arrivals)
            _count_bins(served_bins, completions, bin_ns)
            if packets is not None:
                packets["arrival"].append(arrivals.copy())
                packets["completion"].append(completions)
                packets["queue"].append(np.full(arrivals.size, q, dtype=np.int64))
        return sink

    def handle_wake(self, thread: ThreadModel, now: int):
        """Trylock the thread's target queue and reschedule it."""
        cfg = self.config
        q = self.queues[thread.target_queue]
        counted = now >= self.warmup
        if counted:
            thread.total_tries += 1
            thread.awake_time += cfg.drain.wake_overhead + cfg.drain.lock_overhead
            q.tries += 1
        if q.is_locked(now):
            if counted:
                thread.busy_tries += 1
                q.busy_tries += 1
            thread.role = Role.BACKUP
            thread.target_queue = select_next_queue(Role.BACKUP, q.index, cfg.model.n_queues, self.rng)
            self._schedule(thread, now + cfg.model.t_long)
            return
        t_end = self.drain(q, thread, now)
        thread.role = Role.PRIMARY
        self._schedule(thread, t_end + max(1, int(round(q.controller.t_short_current))))

    def drain(self, q: QueueModel, thread: ThreadModel, start: int) -> int:
        """Run one busy period on ``q`` for ``thread``; records the cycle and returns its end."""
        n_v, served, t_end = q.ring.drain(start, self._sinks[q.index])
        v = start - q.vacation_start
        b = t_end - start
        q.locked_by = thread.id
        q.locked_until = t_end
        q.vacation_start = t_end
        c = self.cycles
        c["queue"].append(q.index)
        c["thread"].append(thread.id)
        c["t_start"].append(start)
        c["t_end"].append(t_end)
        c["v"].append(v)
        c["b"].append(b)
        c["n_v"].append(n_v)
        c["n_b"].append(served - n_v)
        lo, hi = max(start, self.warmup), min(t_end, self.horizon)
        if hi > lo:
            thread.awake_time += hi - lo
        if start >= self.warmup:
            thread.cycles_served += 1
        if n_v > 0 or self.config.adaptation.feed_zero_cycles:
            q.controller.observe_cycle(float(v), float(b))
            self._trace(q, t_end)
        return t_end

    def run(self) -> RawRun:
        cfg = self.config
        heap, threads, horizon = self._heap, self.threads, self.horizon
        pop = heapq.heappop
        while heap:
            now, _, tid = pop(heap)
            if now >= horizon:
                break
            self.handle_wake(threads[tid], now)
        for q in self.queues:
            q.ring.finish(horizon)
        return self._collect()

    def _collect(self) -> RawRun:
        cfg = self.config
        cycles = {f: np.frombuffer(self.cycles[f], dtype=np.int64).copy() if len(self.cycles[f])
                  else np.empty(0, np.int64) for f in CYCLE_FIELDS}
        trace = {
            "time": np.array(self.trace["time"], dtype=np.int64),
            "queue": np.array(self.trace["queue"], dtype=np.int64),
            "rho_est": np.array(self.trace["rho_est"], dtype=np.float64),
            "t_short": np.array(self.trace["t_short"], dtype=np.int64),
        }
        n_bins = -(-cfg.horizon // cfg.timeline_bin)
        offered = np.zeros(n_bins, dtype=np.int64)
        for q in self.queues:
            for b, c in q.ring.offered_bins.items():
                offered[b] += c
        served_bins = np.zeros(max([n_bins] + [b + 1 for b in self.served_bins]), dtype=np.int64)
        for b, c in self.served_bins.items():
            served_bins[b] += c
        packets = None
        if self.packets is not None:
            packets = {k: np.concatenate(v) if v else np.empty(0, np.int64) for k, v in self.packets.items()}
        th, qs = self.threads, self.queues
        return RawRun(
            config=cfg,
            cycles=cycles,
            thread_tries=np.array([t.total_tries for t in th], dtype=np.int64),
            thread_busy_tries=np.array([t.busy_tries for t in th], dtype=np.int64),
            thread_awake=np.array([t.awake_time for t in th], dtype=np.int64),
            thread_cycles=np.array([t.cycles_served for t in th], dtype=np.int64),
            queue_tries=np.array([q.tries for q in qs], dtype=np.int64),
            queue_busy_tries=np.array([q.busy_tries for q in qs], dtype=np.int64),
            queue_arrivals=np.array([q.ring.arrived for q in qs], dtype=np.int64),
            queue_served=np.array([q.ring.served for q in qs], dtype=np.int64),
            queue_backlog=np.array([q.ring.backlog for q in qs], dtype=np.int64),
            queue_dropped=np.array([q.ring.dropped for q in qs], dtype=np.int64),
            latency=self.latency.finalized(),
            trace=trace,
            timeline_offered=offered,
            timeline_served=served_bins,
            packets=packets,
        )


def simulate_always_poll(config: ScenarioConfig) -> RawRun:
    """Busy-polling baseline: every queue is watched continuously, threads never sleep.

    Each packet is retrieved as soon as it is present and the previous one is
    done, i.e. completion_k = max(arrival_k, completion_(k-1)) + 1/mu.
    """
    m, d = config.model, config.drain
    source = ArrivalSource(config.arrivals, m.n_queues, config.horizon)
    latency = LatencyHistogram()
    bin_ns = config.timeline_bin
    n_bins = -(-config.horizon // bin_ns)
    offered = np.zeros(n_bins, dtype=np.int64)
    served_bins: dict[int, int] = {}
    arrivals_q = np.zeros(m.n_queues, dtype=np.int64)
    dropped_q = np.zeros(m.n_queues, dtype=np.int64)
    packets = {"arrival": [], "completion": [], "queue": []} if config.record_packets else None
    s = NS / d.mu_rate
    for q in range(m.n_queues):
        # c_k = max(a_k, c_(k-1)) + s  unrolls to  c_k = k*s + max_(j<=k)(a_j - (j-1)*s)
        best = -np.inf
        count = 0
        while (chunk := source.pull(q)) is not None:
            _, arr = chunk
            if not arr.size:
                continue
            arrivals_q[q] += arr.size
            offered += np.bincount(arr // bin_ns, minlength=n_bins)[:n_bins]
            k = np.arange(count + 1, count + arr.size + 1, dtype=np.float64)
            lead = np.maximum.accumulate(np.maximum(arr - (k - 1) * s, best))
            done = np.ceil(k * s + lead).astype(np.int64)
            best = lead[-1]
            count += arr.size
            latency.add(done - arr)
            counts = np.bincount(done // bin_ns)
            for b in np.flatnonzero(counts):
                served_bins[int(b)] = served_bins.get(int(b), 0) + int(counts[b])
            if packets is not None:
                packets["arrival"].append(arr)
                packets["completion"].append(done)
                packets["queue"].append(np.full(arr.size, q, dtype=np.int64))
    served = np.zeros(max([n_bins] + [b + 1 for b in served_bins]), dtype=np.int64)
    for b, c in served_bins.items():
        served[b] += c
    window = config.horizon - config.warmup
    empty = {f: np.empty(0, np.int64) for f in CYCLE_FIELDS}
    return RawRun(
        config=config,
        cycles=empty,
        thread_tries=np.zeros(m.m_threads, dtype=np.int64),
        thread_busy_tries=np.zeros(m.m_threads, dtype=np.int64),
        thread_awake=np.full(m.m_threads, window, dtype=np.int64),
        thread_cycles=np.zeros(m.m_threads, dtype=np.int64),
        queue_tries=np.zeros(m.n_queues, dtype=np.int64),
        queue_busy_tries=np.zeros(m.n_queues, dtype=np.int64),
        queue_arrivals=arrivals_q,
        queue_served=arrivals_q - dropped_q,
        queue_backlog=np.zeros(m.n_queues, dtype=np.int64),
        queue_dropped=dropped_q,
        latency=latency.finalized(),
        trace={"time": np.empty(0, np.int64), "queue": np.empty(0, np.int64),
               "rho_est": np.empty(0), "t_short": np.empty(0, np.int64)},
        timeline_offered=offered,
        timeline_served=served,
        packets=None if packets is None else {k: np.concatenate(v) if v else np.empty(0, np.int64)
                                              for k, v in packets.items()},
        always_poll=True,
    )


def simulate(config: ScenarioConfig) -> RawRun:
    if config.poll_mode == "always":
        return simulate_always_poll(config)
    return Simulator(config).run()


def run(config: ScenarioConfig) -> SimulationReport:
    """Simulate ``config`` and aggregate the result."""
    return summarize(simulate(config))
