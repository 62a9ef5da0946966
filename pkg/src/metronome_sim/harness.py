"""Parameter sweeps and report files."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytics import ModelParams
from .config import KEYS, format_config
from .engine import run
from .metrics import SimulationReport, analytic_vacation_cdf
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

CONSERVATION_OK = "arrivals = served + backlog + dropped: OK"
CONSERVATION_FAILED = "arrivals = served + backlog + dropped: FAILED"


def with_overrides(cfg: ScenarioConfig, values: dict[str, object]) -> ScenarioConfig:
    """Copy of ``cfg`` with config keys replaced; strings go through the key's parser."""
    sections: dict[str, dict] = {}
    top: dict[str, object] = {}
    for key, value in values.items():
        if key not in KEYS:
            raise KeyError(f"unknown config key {key!r}")
        section, fname, parser = KEYS[key]
        if isinstance(value, str):
            value = parser(value)
        if section == "run":
            top[fname] = value
        else:
            sections.setdefault(section, {})[fname] = value
    for section, changes in sections.items():
        top[section] = dataclasses.replace(getattr(cfg, section), **changes)
    return dataclasses.replace(cfg, **top)


def report_row(report: SimulationReport) -> dict[str, object]:
    """Flat headline numbers of one run (queue figures are cycle-weighted over queues)."""
    qs = report.queues
    cycles = sum(q.cycles for q in qs)
    wavg = lambda attr: sum(getattr(q, attr) * q.cycles for q in qs) / cycles if cycles else 0.0
    vb = sum(q.mean_v * q.cycles + q.mean_b * q.cycles for q in qs)
    return {
        "arrivals": report.arrivals,
        "served": report.served,
        "backlog": report.backlog,
        "dropped": report.dropped,
        "cycles": cycles,
        "mean_v_ns": wavg("mean_v"),
        "mean_b_ns": wavg("mean_b"),
        "rho_measured": sum(q.mean_b * q.cycles for q in qs) / vb if vb else 0.0,
        "rho_est_mean": float(np.mean([q.rho_est_mean for q in qs])) if qs else 0.0,
        "t_short_mean_ns": float(np.mean([q.t_short_mean for q in qs])) if qs else 0.0,
        "total_tries": sum(t.total_tries for t in report.threads),
        "busy_tries": sum(t.busy_tries for t in report.threads),
        "busy_tries_pct_global": report.busy_tries_pct_global,
        "busy_tries_pct_per_thread": report.busy_tries_pct_per_thread,
        "cpu_proxy": report.cpu_proxy,
        "latency_mean_ns": report.latency.mean,
        "latency_p99_ns": report.latency.percentile(99),
        "latency_max_ns": report.latency.max,
        "throughput_pps": report.throughput,
        "conservation_ok": report.conservation_ok,
    }


@dataclass
class SweepPoint:
    value: object
    report: SimulationReport | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    key: str
    points: list[SweepPoint]
    csv_path: Path | None = None

    def reports(self) -> list[SimulationReport]:
        return [p.report for p in self.points if p.ok]


def _run_point(cfg: ScenarioConfig, key: str, value) -> SweepPoint:
    try:
        point_cfg = with_overrides(cfg, {key: value})
        return SweepPoint(value, run(point_cfg))
    except Exception as exc:  # recorded, the sweep goes on
        return SweepPoint(value, None, f"{type(exc).__name__}: {exc}")


def run_sweep(base: ScenarioConfig, key: str, values, parallelism: int = 1,
              csv_path: str | os.PathLike | None = None) -> SweepResult:
    """Run ``base`` once per value of ``key``; failures are kept per point, not raised."""
    if key not in KEYS:
        raise KeyError(f"unknown sweep key {key!r}")
    values = list(values)
    if parallelism > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            points = list(pool.map(_run_point, [base] * len(values), [key] * len(values), values))
    else:
        points = [_run_point(base, key, v) for v in values]
    result = SweepResult(key, points)
    if csv_path is not None:
        result.csv_path = write_sweep_csv(result, csv_path)
    return result


def write_sweep_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = None
    rows = []
    for p in result.points:
        row = {result.key: p.value, "status": "ok" if p.ok else "error", "error": p.error or ""}
        if p.ok:
            row.update(report_row(p.report))
            cols = cols or list(row)
        rows.append(row)
    cols = cols or [result.key, "status", "error"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, restval="")
        w.writeheader()
        w.writerows(rows)
    return path


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return path


def vacation_pdf_table(report: SimulationReport, bins: int = 50):
    """Rows of (lo, hi, empirical, empirical_all, analytic_high, analytic_low), as probabilities.

    Bins split [0, T_S) evenly; the last row is [T_S, inf) and holds the
    high-load atom plus anything a jittered wake pushed past T_S.
    """
    p: ModelParams = report.config.model
    ts = float(p.t_short)
    edges = np.linspace(0.0, ts, bins + 1)
    los, his = list(edges[:-1]) + [ts], list(edges[1:]) + [float("inf")]

    def mass(samples):
        if samples.size == 0:
            return [0.0] * len(los)
        x = np.asarray(samples, dtype=np.float64)
        counts = np.histogram(np.minimum(x, ts), bins=np.append(edges[:-1], [ts, np.inf]))[0]
        return list(counts / x.size)

    cdf_hi, _, _ = analytic_vacation_cdf(p, "high")
    cdf_lo, _, _ = analytic_vacation_cdf(p, "low")

    def model_mass(cdf):
        below = cdf(np.nextafter(edges, -np.inf))  # left limits keep the atom out of [.., T_S)
        below[0] = 0.0
        inner = np.diff(below)
        return list(inner) + [1.0 - below[-1]]

    emp = mass(report.vacation_samples())
    emp_all = mass(report.vacation_samples(nonempty_only=False))
    return list(zip(los, his, emp, emp_all, model_mass(cdf_hi), model_mass(cdf_lo)))


def emit_report(report: SimulationReport, outdir) -> list[Path]:
    """Write the CSV set and summary.txt into ``outdir``; returns the written paths."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    cfg = report.config
    c = report.cycles
    written = []
    try:
        written.append(_write_csv(
            out / "cycles.csv",
            ["cycle_id", "queue", "thread", "t_start_ns", "t_end_ns", "V_ns", "B_ns", "N_V", "N_B"],
            zip(range(c["queue"].size), *(c[k].tolist() for k in
                                           ("queue", "thread", "t_start", "t_end", "v", "b", "n_v", "n_b"))),
        ))
        written.append(_write_csv(
            out / "threads.csv",
            ["thread", "total_tries", "busy_tries", "busy_tries_pct", "awake_time_ns", "awake_fraction",
             "cycles_served"],
            [(t.id, t.total_tries, t.busy_tries, t.busy_tries_pct, t.awake_time, t.awake_fraction,
              t.cycles_served) for t in report.threads],
        ))
        qfields = [f.name for f in dataclasses.fields(report.queues[0])] if report.queues else ["index"]
        written.append(_write_csv(
            out / "queues.csv",
            ["queue"] + qfields[1:] + ["busy_tries_pct"],
            [[getattr(q, f) for f in qfields] + [q.busy_tries_pct] for q in report.queues],
        ))
        lat = report.latency
        edges, counts = lat.edges, lat.counts
        his = list(edges[1:]) + [float("inf")]
        written.append(_write_csv(
            out / "latency_histogram.csv", ["bin_lo_ns", "bin_hi_ns", "count"],
            [(lo, hi, int(n)) for lo, hi, n in zip(edges, his, counts) if n] if lat.count else [],
        ))
        tr = report.trace
        written.append(_write_csv(
            out / "controller_trace.csv", ["time_ns", "queue", "rho_est", "t_short_ns"],
            zip(tr["time"].tolist(), tr["queue"].tolist(), tr["rho_est"].tolist(), tr["t_short"].tolist()),
        ))
        bin_ns = cfg.timeline_bin
        n = max(report.timeline_offered.size, report.timeline_served.size)
        off = np.zeros(n, dtype=np.int64)
        srv = np.zeros(n, dtype=np.int64)
        off[: report.timeline_offered.size] = report.timeline_offered
        srv[: report.timeline_served.size] = report.timeline_served
        written.append(_write_csv(
            out / "timeline.csv", ["bin_start_ns", "offered", "served"],
            [(i * bin_ns, int(a), int(b)) for i, (a, b) in enumerate(zip(off, srv))] if report.arrivals else [],
        ))
        written.append(_write_csv(
            out / "vacation_pdf.csv",
            ["bin_lo_ns", "bin_hi_ns", "empirical", "empirical_all_cycles", "analytic_high_load",
             "analytic_low_load"],
            vacation_pdf_table(report) if report.total_cycles else [],
        ))
        (out / "config.txt").write_text(format_config(cfg))
        written.append(out / "config.txt")
        (out / "summary.txt").write_text(summary_text(report))
        written.append(out / "summary.txt")
    except OSError as exc:
        raise OSError(f"writing report into {out} failed: {exc}") from exc
    return written


def summary_text(report: SimulationReport) -> str:
    row = report_row(report)
    lines = ["# resolved configuration", format_config(report.config).rstrip(), "", "# results"]
    lines.append(f"cycles: {row['cycles']}")
    for k, v in row.items():
        if k in ("cycles", "conservation_ok"):
            continue
        lines.append(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    for q in report.queues:
        lines.append(f"queue {q.index}: cycles={q.cycles} mean_V={q.mean_v:.1f}ns mean_B={q.mean_b:.1f}ns "
                     f"rho={q.rho_measured:.4f} rho_est={q.rho_est_mean:.4f} tries={q.tries} "
                     f"busy_tries={q.busy_tries_pct:.2f}% dropped={q.dropped}")
    lines.append(f"fingerprint: {report.fingerprint()}")
    lines.append(CONSERVATION_OK if report.conservation_ok else CONSERVATION_FAILED)
    return "\n".join(lines) + "\n"
