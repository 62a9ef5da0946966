"""Acceptance criteria 1-9, one printed PASS/FAIL line each.

    pytest tests/test_acceptance.py -v          # lines are printed even without -s
    python3 tests/test_acceptance.py            # same checks, no pytest needed

Each tolerance below is the one the criterion states.
"""

from __future__ import annotations

import dataclasses
import math
import sys
import time
from dataclasses import dataclass

import numpy as np
import pytest
from scipy import integrate

from metronome_sim.analytics import (
    ModelParams,
    adaptive_ts_multiqueue,
    expected_busy_given_vacation,
    load_from_periods,
    mean_vacation_general,
    mean_vacation_high_load,
    vacation_atom_high_load,
    vacation_cdf_high_load,
    vacation_cdf_low_load,
    vacation_pdf_high_load,
)
from metronome_sim.config import LINE_RATE_64B, MU_DEFAULT, get_preset
from metronome_sim.engine import run
from metronome_sim.harness import with_overrides
from metronome_sim.metrics import compare_vacation_distribution
from metronome_sim.scenario import AdaptationSpec, ScenarioConfig
from metronome_sim.workload import ArrivalSpec

US = 1_000
MS = 1_000_000
S = 1_000_000_000

# tolerances, as stated per criterion
C1_INTEGRAL_TOL = 1e-9
C1_MEAN_REL_TOL = 1e-6
C1_FIXED_POINT_TOL = 1e-12
C1_RUNTIME_S = 10.0
C2_KS_MAX = 0.02
C2_MIN_SAMPLES = 100_000
C2_RUNTIME_S = 60.0
C3_REL_TOL = 0.05
C3_MIN_CYCLES = 100_000
C4_V_REL_TOL = 0.20
C4_RHO_ABS_TOL = 0.05
C5_PEARSON_MAX = -0.8
C7_TRIES_RATIO = 0.6
C9_REL_TOL = 0.20


@dataclass
class Outcome:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number} ({self.title}): {self.detail}"


# every simulated run: config -> (fingerprint, conservation)
RUNS: dict[ScenarioConfig, tuple[str, bool]] = {}


def sim(cfg: ScenarioConfig):
    rep = run(cfg)
    RUNS[cfg] = (rep.fingerprint(), rep.conservation_ok)
    return rep


# --- 1 -------------------------------------------------------------------------

C1_M = range(1, 9)
C1_RATIOS = (0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
C1_RHOS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)


def criterion_1() -> Outcome:
    t0 = time.perf_counter()
    worst_int = worst_mean = worst_fp = worst_gen = 0.0
    t_long = 1.0
    for m in C1_M:
        for ratio in C1_RATIOS:
            p = ModelParams(m, 1, ratio * t_long, t_long, ratio * t_long)
            ts = p.t_short
            pdf_mass = integrate.quad(lambda x: vacation_pdf_high_load(x, p), 0, ts, epsabs=1e-14, epsrel=1e-13)[0]
            worst_int = max(worst_int, abs(pdf_mass + vacation_atom_high_load(p) - 1.0))
            worst_int = max(worst_int, abs(vacation_cdf_high_load(ts, p) - 1.0), abs(vacation_cdf_low_load(ts, p) - 1.0))
            surv = integrate.quad(lambda x: 1.0 - vacation_cdf_high_load(x, p), 0, ts, epsabs=1e-15, epsrel=1e-13)[0]
            worst_mean = max(worst_mean, abs(surv / mean_vacation_high_load(p) - 1.0))
            for rho in C1_RHOS:
                q = 1.0 - rho
                # closed-form general-load mean vs the survival integral of the mixture
                s_gen = integrate.quad(lambda x: (1 - q * x / ts - (1 - q) * x / t_long) ** (m - 1),
                                       0, ts, epsabs=1e-15, epsrel=1e-13)[0]
                worst_gen = max(worst_gen, abs(s_gen / mean_vacation_general(p, q).exact - 1.0))
    for rho in C1_RHOS:
        for v in (1e-6, 1.0, 10.0, 12345.678):
            b = expected_busy_given_vacation(v, rho)
            worst_fp = max(worst_fp, abs(load_from_periods(b, v) - rho) if b + v > 0 else 0.0)
    elapsed = time.perf_counter() - t0
    ok = (worst_int <= C1_INTEGRAL_TOL and worst_mean <= C1_MEAN_REL_TOL and worst_gen <= C1_MEAN_REL_TOL
          and worst_fp <= C1_FIXED_POINT_TOL and elapsed < C1_RUNTIME_S)
    n = len(C1_M) * len(C1_RATIOS) * len(C1_RHOS)
    return Outcome(1, "analytic self-consistency", ok,
                   f"{n} grid points, max |mass-1|={worst_int:.1e}, max mean rel err={max(worst_mean, worst_gen):.1e}, "
                   f"max fixed-point err={worst_fp:.1e}, {elapsed:.2f}s")


# --- 2 -------------------------------------------------------------------------

C2_M = (2, 3, 5)
C2_RHO = 0.8


def fig3_config(m: int) -> ScenarioConfig:
    base = get_preset("fig3")
    p = ModelParams(m, 1, 50 * US, 50 * US, 50 * US)
    # cycles per second ~ (1 - rho) / E[V]; size the run for ~1.3x the sample floor
    horizon = int(1.3 * C2_MIN_SAMPLES * mean_vacation_high_load(p) / (1 - C2_RHO)) + base.warmup
    return dataclasses.replace(base, model=p, horizon=horizon)


def criterion_2() -> Outcome:
    parts, ok = [], True
    for m in C2_M:
        cfg = fig3_config(m)
        t0 = time.perf_counter()
        rep = sim(cfg)
        samples = rep.vacation_samples()
        res = compare_vacation_distribution(samples, cfg.model, "high")
        elapsed = time.perf_counter() - t0
        good = res.ks_statistic <= C2_KS_MAX and res.n_samples >= C2_MIN_SAMPLES and elapsed < C2_RUNTIME_S
        ok &= good
        parts.append(f"M={m}: KS={res.ks_statistic:.4f} n={res.n_samples} {elapsed:.0f}s{'' if good else ' (X)'}")
    return Outcome(2, "vacation distribution vs model, T_S=T_L=50us", ok, "; ".join(parts))


# --- 3 -------------------------------------------------------------------------

C3_RHOS = (0.3, 0.5, 0.7)


def fixed_point_config(rho: float) -> ScenarioConfig:
    ts = 5 * US
    horizon = int(1.2 * C3_MIN_CYCLES * ts / (1 - rho)) + 10 * MS
    return ScenarioConfig(
        model=ModelParams(1, 1, ts, 500 * US, ts),
        arrivals=ArrivalSpec("poisson", rho * MU_DEFAULT, seed=31),
        adaptation=AdaptationSpec(enabled=False),
        horizon=horizon,
        warmup=10 * MS,
    )


def criterion_3() -> Outcome:
    parts, ok = [], True
    for rho in C3_RHOS:
        q = sim(fixed_point_config(rho)).queues[0]
        ratio = q.mean_b / q.mean_v
        want = rho / (1 - rho)
        good = abs(ratio / want - 1) <= C3_REL_TOL and q.cycles >= C3_MIN_CYCLES
        ok &= good
        parts.append(f"rho={rho}: B/V={ratio:.4f} vs {want:.4f} ({q.cycles} cycles)")
    return Outcome(3, "busy-period fixed point, M=1", ok, "; ".join(parts))


# --- 4 -------------------------------------------------------------------------

C4_RHOS = (0.1, 0.3, 0.5, 0.7, 0.9)
C4_TARGET = 10 * US


def adaptation_config(rho: float) -> ScenarioConfig:
    return ScenarioConfig(
        model=ModelParams(3, 1, C4_TARGET, 500 * US, C4_TARGET),
        arrivals=ArrivalSpec("poisson", rho * MU_DEFAULT, seed=41),
        horizon=1 * S,
        warmup=100 * MS,
    )


def criterion_4() -> Outcome:
    parts, ok = [], True
    for rho in C4_RHOS:
        q = sim(adaptation_config(rho)).queues[0]
        v_ok = abs(q.mean_v / C4_TARGET - 1) <= C4_V_REL_TOL
        r_ok = abs(q.rho_est_mean - rho) <= C4_RHO_ABS_TOL
        ok &= v_ok and r_ok
        parts.append(f"rho={rho}: V={q.mean_v / US:.2f}us{'' if v_ok else ' (X)'} "
                     f"rho_est={q.rho_est_mean:.3f}{'' if r_ok else ' (X)'}")
    return Outcome(4, f"adaptation targets V={C4_TARGET / US:g}us", ok, "; ".join(parts))


# --- 5 -------------------------------------------------------------------------

RAMP_WINDOW = 2 * S


def criterion_5() -> Outcome:
    cfg = get_preset("fig7-ramp")
    rep = sim(cfg)
    per = RAMP_WINDOW // cfg.timeline_bin
    n_win = cfg.horizon // RAMP_WINDOW
    off = np.zeros(n_win * per, dtype=np.int64)
    srv = np.zeros(n_win * per, dtype=np.int64)
    k = min(off.size, rep.timeline_offered.size)
    off[:k] = rep.timeline_offered[:k]
    k = min(srv.size, rep.timeline_served.size)
    srv[:k] = rep.timeline_served[:k]
    off_w, srv_w = off.reshape(n_win, per).sum(1), srv.reshape(n_win, per).sum(1)
    worst_gap = int(np.max(np.abs(off_w - srv_w)))
    late = int(rep.timeline_served[n_win * per:].sum())  # served after the last window closed
    lossless = rep.dropped == 0 and rep.served + rep.backlog == rep.arrivals
    tracks = worst_gap <= cfg.drain.capacity and late <= cfg.drain.capacity
    # T_S in force at each step midpoint vs that step's offered rate
    tr = rep.trace
    mids = np.arange(n_win) * RAMP_WINDOW + RAMP_WINDOW // 2
    idx = np.searchsorted(tr["time"], mids, side="right") - 1
    ts_mid = tr["t_short"][idx].astype(float)
    rate = off_w / (RAMP_WINDOW / S)
    r = float(np.corrcoef(rate, ts_mid)[0, 1])
    ok = lossless and tracks and r <= C5_PEARSON_MAX and cfg.drain.mu_rate >= 29_000_000
    return Outcome(5, "ramp tracking", ok,
                   f"dropped={rep.dropped}, max |served-offered| per 2s window={worst_gap} pkts "
                   f"(of up to {int(off_w.max())}), Pearson(T_S, rate)={r:.3f}")


# --- 6 -------------------------------------------------------------------------

C6_TL_US = (100, 200, 300, 400, 500, 600, 700)
C6_M = (2, 3, 4, 5, 6, 7, 8)
C6_RATES = tuple(float(r) for r in np.linspace(0.0, LINE_RATE_64B, 11))


def criterion_6() -> Outcome:
    base = with_overrides(get_preset("fig4"), {"horizon": "1s", "warmup": "50ms"})
    by_tl = [sim(with_overrides(base, {"t_long": f"{tl}us"})) for tl in C6_TL_US]
    by_m = [sim(with_overrides(base, {"m_threads": str(m)})) for m in C6_M]
    by_load = [sim(with_overrides(base, {"arrival_rate": f"{r!r}pps"})) for r in C6_RATES]
    poll = sim(with_overrides(get_preset("always-poll"), {"horizon": "1s", "warmup": "50ms"}))
    bt_tl = [r.busy_tries_pct_global for r in by_tl]
    bt_m = [r.busy_tries_pct_global for r in by_m]
    cpu = [r.cpu_proxy for r in by_load]
    cpu_tl = [r.cpu_proxy for r in by_tl]
    metro = by_tl + by_m + by_load
    checks = {
        "busy% non-increasing in T_L": all(b <= a for a, b in zip(bt_tl, bt_tl[1:])),
        "CPU proxy non-increasing in T_L": all(b <= a for a, b in zip(cpu_tl, cpu_tl[1:])),
        "busy% non-decreasing in M": all(b >= a for a, b in zip(bt_m, bt_m[1:])),
        "CPU proxy strictly increasing in load": all(b > a for a, b in zip(cpu, cpu[1:])),
        "CPU proxy below always-poll": poll.cpu_proxy == 1.0 and all(r.cpu_proxy < poll.cpu_proxy for r in metro),
    }
    detail = (f"busy% vs T_L {[round(b, 2) for b in bt_tl]}; CPU vs T_L {[round(c, 4) for c in cpu_tl]}; busy% vs M {[round(b, 2) for b in bt_m]}; "
              f"CPU vs load {[round(c, 4) for c in cpu]}; always-poll={poll.cpu_proxy}; "
              + ", ".join(f"{k}: {'ok' if v else 'X'}" for k, v in checks.items()))
    return Outcome(6, "trends", all(checks.values()), detail)


# --- 7 -------------------------------------------------------------------------

HOT_QUEUE = 1


def criterion_7() -> Outcome:
    rep = sim(get_preset("table4-unbalanced"))
    qs = rep.queues
    hot = qs[HOT_QUEUE]
    cold = [q for q in qs if q.index != HOT_QUEUE]
    rho_ok = all(hot.rho_measured > q.rho_measured for q in cold)
    tries_ok = all(hot.tries < q.tries for q in cold)
    ratio_ok = all(hot.tries < C7_TRIES_RATIO * q.tries for q in cold)
    return Outcome(7, "unbalanced queues ordering", rho_ok and tries_ok and ratio_ok,
                   "rho " + "/".join(f"{q.rho_measured:.3f}" for q in qs)
                   + ", tries " + "/".join(str(q.tries) for q in qs)
                   + f", hot/cold tries max ratio={max(hot.tries / q.tries for q in cold):.3f}")


# --- 8 -------------------------------------------------------------------------


def determinism_set() -> list[ScenarioConfig]:
    return ([fig3_config(5)] + [fixed_point_config(r) for r in C3_RHOS]
            + [adaptation_config(r) for r in C4_RHOS] + [get_preset("table4-unbalanced"), multiqueue_config()])


def criterion_8() -> Outcome:
    rerun = determinism_set()
    mismatched = 0
    for cfg in rerun:
        first = RUNS.get(cfg) or (sim(cfg) and RUNS[cfg])
        again = run(cfg)
        if again.fingerprint() != first[0] or not again.conservation_ok:
            mismatched += 1
    broken = sum(1 for _, ok in RUNS.values() if not ok)
    ok = broken == 0 and mismatched == 0
    return Outcome(8, "conservation and determinism", ok,
                   f"conservation exact in {len(RUNS) - broken}/{len(RUNS)} runs; "
                   f"{len(rerun) - mismatched}/{len(rerun)} reruns bit-identical")


# --- 9 -------------------------------------------------------------------------

C9_RHOS = (0.2, 0.4, 0.6, 0.8)
C9_TARGET = 10 * US


def multiqueue_config() -> ScenarioConfig:
    total = sum(C9_RHOS)
    return ScenarioConfig(
        model=ModelParams(8, 4, C9_TARGET, 500 * US, C9_TARGET),
        arrivals=ArrivalSpec("poisson", total * MU_DEFAULT, queue_weights=tuple(r / total for r in C9_RHOS), seed=91),
        horizon=1 * S,
        warmup=100 * MS,
    )


def criterion_9() -> Outcome:
    rep = sim(multiqueue_config())
    parts, ok = [], True
    for q, rho in zip(rep.queues, C9_RHOS):
        want = adaptive_ts_multiqueue(8, 4, rho, C9_TARGET)
        good = abs(q.t_short_mean / want - 1) <= C9_REL_TOL
        ok &= good
        parts.append(f"q{q.index} rho={rho}: T_S={q.t_short_mean / US:.2f}us vs {want / US:.2f}us")
    return Outcome(9, "multiqueue timer rule, M=8 N=4", ok, "; ".join(parts))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


# --- pytest wiring -------------------------------------------------------------


@pytest.fixture
def emit(capsys):
    def _emit(outcome: Outcome):
        with capsys.disabled():
            print("\n" + outcome.line())
        assert outcome.passed, outcome.line()
    return _emit


def test_criterion_1_analytic_grid(emit):
    emit(criterion_1())


@pytest.mark.slow
def test_criterion_2_vacation_ks(emit):
    emit(criterion_2())


def test_criterion_3_fixed_point(emit):
    emit(criterion_3())


def test_criterion_4_adaptation(emit):
    emit(criterion_4())


@pytest.mark.slow
def test_criterion_5_ramp(emit):
    emit(criterion_5())


@pytest.mark.slow
def test_criterion_6_trends(emit):
    emit(criterion_6())


def test_criterion_7_unbalanced_queues(emit):
    emit(criterion_7())


def test_criterion_8_conservation_determinism(emit):
    emit(criterion_8())


def test_criterion_9_multiqueue(emit):
    emit(criterion_9())


def main() -> int:
    failed = 0
    for fn in CRITERIA:
        out = fn()
        print(out.line(), flush=True)
        failed += not out.passed
    print(f"{len(CRITERIA) - failed}/{len(CRITERIA)} criteria passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
