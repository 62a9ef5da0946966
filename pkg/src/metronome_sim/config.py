"""Flat ``key = value`` scenario files and the named presets.

One key per line, ``#`` starts a comment. Durations need a unit suffix
(ns, us, ms, s) and rates a rate suffix (pps, kpps, mpps, gpps). Example::

    preset = table1-row2      # optional: start from a preset
    m_threads = 3
    t_long = 500us
    arrival_rate = 14.88mpps

Every problem in a file is reported at once, each with its line number.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass

from .analytics import ModelParams
from .scenario import AdaptationSpec, DrainSpec, JitterSpec, ScenarioConfig
from .workload import ArrivalSpec, assign_queue, staircase_ramp

MU_DEFAULT = 29_250_000
LINE_RATE_64B = 14_880_000


@dataclass(frozen=True)
class ConfigIssue:
    line: int  # 0 when the problem is not tied to one line
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}" if self.line else self.message


class ConfigError(ValueError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {i}" for i in self.issues))


_DURATION_UNITS = {"ns": 1, "us": 1_000, "µs": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_RATE_UNITS = {"pps": 1.0, "kpps": 1e3, "mpps": 1e6, "gpps": 1e9}
_NUM = r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)"
_DURATION_RE = re.compile(rf"^{_NUM}\s*(ns|us|µs|ms|s)$")
_RATE_RE = re.compile(rf"^{_NUM}\s*(pps|kpps|mpps|gpps)$", re.IGNORECASE)


def parse_duration(text: str) -> int:
    """'500us' -> 500000 (ns). A unit is mandatory."""
    m = _DURATION_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad duration {text!r}; expected a number with ns/us/ms/s")
    return int(round(float(m.group(1)) * _DURATION_UNITS[m.group(2)]))


def parse_rate(text: str) -> float:
    """'14.88mpps' -> 14880000.0 (packets/s). A unit is mandatory."""
    m = _RATE_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad rate {text!r}; expected a number with pps/kpps/mpps/gpps")
    return float(m.group(1)) * _RATE_UNITS[m.group(2).lower()]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"bad boolean {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    return float(text.strip())


def _opt_duration(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "auto") else parse_duration(text)


def _ramp(text: str) -> tuple[tuple[int, float], ...]:
    # "2s:1mpps, 2s:2mpps"
    steps = []
    for part in text.split(","):
        dur, _, rate = part.partition(":")
        steps.append((parse_duration(dur), parse_rate(rate)))
    return tuple(steps)


def _flows(text: str) -> tuple[tuple[float, int | None], ...]:
    # "0.3:4660, 0.7:*"  (* = a fresh random flow per packet)
    flows = []
    for part in text.split(","):
        w, _, fid = part.partition(":")
        fid = fid.strip()
        flows.append((float(w), None if fid in ("*", "random") else int(fid, 0)))
    return tuple(flows)


def _weights(text: str) -> tuple[float, ...] | None:
    t = text.strip().lower()
    return None if t in ("", "none", "uniform") else tuple(float(x) for x in text.split(","))


def _opt_str(text: str) -> str | None:
    t = text.strip()
    return None if t.lower() in ("", "none") else t


# key -> (section, field, parser)
KEYS = {
    "m_threads": ("model", "m_threads", _int),
    "n_queues": ("model", "n_queues", _int),
    "t_short": ("model", "t_short", parse_duration),
    "t_long": ("model", "t_long", parse_duration),
    "target_vacation": ("model", "target_vacation", parse_duration),
    "mu_rate": ("drain", "mu_rate", lambda s: int(round(parse_rate(s)))),
    "batch_size": ("drain", "batch_size", _int),
    "wake_overhead": ("drain", "wake_overhead", parse_duration),
    "lock_overhead": ("drain", "lock_overhead", parse_duration),
    "capacity": ("drain", "capacity", _int),
    "arrival_kind": ("arrivals", "kind", str.strip),
    "arrival_rate": ("arrivals", "rate", parse_rate),
    "ramp_steps": ("arrivals", "ramp_steps", _ramp),
    "flows": ("arrivals", "flows", _flows),
    "queue_weights": ("arrivals", "queue_weights", _weights),
    "seed_arrivals": ("arrivals", "seed", _int),
    "jitter_kind": ("jitter", "kind", str.strip),
    "jitter_value": ("jitter", "value", parse_duration),
    "jitter_prob": ("jitter", "prob", _float),
    "jitter_low": ("jitter", "low", parse_duration),
    "jitter_high": ("jitter", "high", parse_duration),
    "jitter_scale": ("jitter", "scale", parse_duration),
    "jitter_shape": ("jitter", "shape", _float),
    "seed_jitter": ("jitter", "seed", _int),
    "adaptation": ("adaptation", "enabled", parse_bool),
    "alpha": ("adaptation", "alpha", _float),
    "rho_init": ("adaptation", "rho_init", _float),
    "t_s_min": ("adaptation", "t_s_min", parse_duration),
    "t_s_max": ("adaptation", "t_s_max", _opt_duration),
    "feed_zero_cycles": ("adaptation", "feed_zero_cycles", parse_bool),
    "horizon": ("run", "horizon", parse_duration),
    "warmup": ("run", "warmup", parse_duration),
    "seed_queue": ("run", "seed_queue", _int),
    "poll_mode": ("run", "poll_mode", str.strip),
    "trace_interval": ("run", "trace_interval", parse_duration),
    "timeline_bin": ("run", "timeline_bin", parse_duration),
    "record_packets": ("run", "record_packets", parse_bool),
    "output_dir": ("run", "output_dir", _opt_str),
}

REQUIRED = ("m_threads", "target_vacation", "horizon")

_SECTION_TYPES = {
    "model": ModelParams,
    "drain": DrainSpec,
    "arrivals": ArrivalSpec,
    "jitter": JitterSpec,
    "adaptation": AdaptationSpec,
}

_MODEL_DEFAULTS = {"n_queues": 1, "t_long": 500_000}


def _sections_of(cfg: ScenarioConfig) -> dict[str, dict]:
    out = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTION_TYPES}
    out["run"] = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name not in _SECTION_TYPES}
    return out


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    """Parse a scenario file; ``overrides`` (key -> raw string) win over file values.

    Raises :class:`ConfigError` listing every problem found.
    """
    issues: list[ConfigIssue] = []
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key = key.strip().lower()
        if not sep or not key:
            issues.append(ConfigIssue(lineno, f"expected key = value, got {body!r}"))
            continue
        if key != "preset" and key not in KEYS:
            issues.append(ConfigIssue(lineno, f"unknown key {key!r}"))
            continue
        if key in raw:
            issues.append(ConfigIssue(lineno, f"duplicate key {key!r} (first set on line {raw[key][0]})"))
            continue
        raw[key] = (lineno, value.strip())
    for key, value in (overrides or {}).items():
        key = key.lower()
        if key != "preset" and key not in KEYS:
            issues.append(ConfigIssue(0, f"unknown override key {key!r}"))
            continue
        raw[key] = (0, str(value))

    base: ScenarioConfig | None = None
    if "preset" in raw:
        lineno, name = raw.pop("preset")
        try:
            base = get_preset(name)
        except KeyError as exc:
            issues.append(ConfigIssue(lineno, str(exc.args[0])))

    incomplete: set[str] = set()
    if base is None:
        for key in REQUIRED:
            if key not in raw:
                issues.append(ConfigIssue(0, f"missing required key {key!r}"))
                incomplete.add(KEYS[key][0])
        sections = {name: {} for name in (*_SECTION_TYPES, "run")}
        sections["model"].update(_MODEL_DEFAULTS)
    else:
        sections = _sections_of(base)

    key_lines: dict[str, list[int]] = {name: [] for name in sections}
    for key, (lineno, value) in raw.items():
        section, fname, parser = KEYS[key]
        try:
            sections[section][fname] = parser(value)
        except (ValueError, TypeError) as exc:
            issues.append(ConfigIssue(lineno, f"{key}: {exc}"))
            continue
        key_lines[section].append(lineno)

    model = sections["model"]
    if base is None and "t_short" not in model and "target_vacation" in model:
        model["t_short"] = model["target_vacation"]

    built: dict[str, object] = {}
    for name, typ in _SECTION_TYPES.items():
        if name in incomplete:
            continue
        vals = sections[name]
        if name == "arrivals":
            for f in ("ramp_steps", "flows"):
                if f in vals and vals[f] is not None:
                    vals[f] = tuple(tuple(x) for x in vals[f])
            if vals.get("queue_weights") is not None:
                vals["queue_weights"] = tuple(vals["queue_weights"])
        try:
            built[name] = typ(**vals)
        except (ValueError, TypeError) as exc:
            line = min(key_lines[name]) if key_lines[name] else 0
            issues.append(ConfigIssue(line, f"{name}: {exc}"))

    if issues:
        raise ConfigError(issues)
    try:
        return ScenarioConfig(**built, **sections["run"])
    except (ValueError, TypeError) as exc:
        line = min(key_lines["run"]) if key_lines["run"] else 0
        raise ConfigError([ConfigIssue(line, f"run: {exc}")]) from None


def _fmt_duration(ns) -> str:
    return "none" if ns is None else f"{int(ns)}ns"


def _fmt_rate(r) -> str:
    return f"{float(r)!r}pps"


def format_config(cfg: ScenarioConfig) -> str:
    """Every key of ``cfg`` in the file format; ``parse_config`` reads it back to an equal config."""
    m, d, a, j, ad = cfg.model, cfg.drain, cfg.arrivals, cfg.jitter, cfg.adaptation
    b = lambda v: "on" if v else "off"
    lines = [
        "# model",
        f"m_threads = {m.m_threads}",
        f"n_queues = {m.n_queues}",
        f"t_short = {_fmt_duration(m.t_short)}",
        f"t_long = {_fmt_duration(m.t_long)}",
        f"target_vacation = {_fmt_duration(m.target_vacation)}",
        "# drain",
        f"mu_rate = {d.mu_rate}pps",
        f"batch_size = {d.batch_size}",
        f"wake_overhead = {_fmt_duration(d.wake_overhead)}",
        f"lock_overhead = {_fmt_duration(d.lock_overhead)}",
        f"capacity = {d.capacity}",
        "# arrivals",
        f"arrival_kind = {a.kind}",
        f"arrival_rate = {_fmt_rate(a.rate)}",
    ]
    if a.ramp_steps:
        lines.append("ramp_steps = " + ", ".join(f"{_fmt_duration(t)}:{_fmt_rate(r)}" for t, r in a.ramp_steps))
    if a.flows:
        lines.append("flows = " + ", ".join(f"{w!r}:{'*' if f is None else f}" for w, f in a.flows))
    lines += [
        "queue_weights = " + ("uniform" if a.queue_weights is None else ", ".join(repr(w) for w in a.queue_weights)),
        f"seed_arrivals = {a.seed}",
        "# jitter",
        f"jitter_kind = {j.kind}",
        f"jitter_value = {_fmt_duration(j.value)}",
        f"jitter_prob = {j.prob!r}",
        f"jitter_low = {_fmt_duration(j.low)}",
        f"jitter_high = {_fmt_duration(j.high)}",
        f"jitter_scale = {_fmt_duration(j.scale)}",
        f"jitter_shape = {j.shape!r}",
        f"seed_jitter = {j.seed}",
        "# adaptation",
        f"adaptation = {b(ad.enabled)}",
        f"alpha = {ad.alpha!r}",
        f"rho_init = {ad.rho_init!r}",
        f"t_s_min = {_fmt_duration(ad.t_s_min)}",
        f"t_s_max = {_fmt_duration(ad.t_s_max)}",
        f"feed_zero_cycles = {b(ad.feed_zero_cycles)}",
        "# run",
        f"horizon = {_fmt_duration(cfg.horizon)}",
        f"warmup = {_fmt_duration(cfg.warmup)}",
        f"seed_queue = {cfg.seed_queue}",
        f"poll_mode = {cfg.poll_mode}",
        f"trace_interval = {_fmt_duration(cfg.trace_interval)}",
        f"timeline_bin = {_fmt_duration(cfg.timeline_bin)}",
        f"record_packets = {b(cfg.record_packets)}",
        f"output_dir = {cfg.output_dir or 'none'}",
    ]
    return "\n".join(lines) + "\n"


# --- presets -----------------------------------------------------------------

US = 1_000
MS = 1_000_000
S = 1_000_000_000

TABLE1_TARGETS_US = (5, 10, 12, 15, 20)


def _base(m=3, n=1, target=10 * US, t_long=500 * US, rate=float(LINE_RATE_64B), **kw) -> ScenarioConfig:
    arrivals = kw.pop("arrivals", ArrivalSpec("poisson", rate))
    return ScenarioConfig(model=ModelParams(m, n, target, t_long, target), arrivals=arrivals, **kw)


def hot_flow_for_queue(queue: int, n_queues: int, seed: int = 0, start: int = 0x1000) -> int:
    """Smallest flow id >= ``start`` that hashes onto ``queue``."""
    fid = start
    while assign_queue(fid, n_queues, seed) != queue:
        fid += 1
    return fid


def _fig3(m: int = 3) -> ScenarioConfig:
    # T_S = T_L = 50us; rho ~ 0.8; ~1.2e5 non-empty cycles for M = 3
    return ScenarioConfig(
        model=ModelParams(m, 1, 50 * US, 50 * US, 50 * US),
        arrivals=ArrivalSpec("poisson", 0.8 * MU_DEFAULT),
        adaptation=AdaptationSpec(enabled=False),
        horizon=10 * S,
        warmup=10 * MS,
    )


def _table4() -> ScenarioConfig:
    # 30% one hot flow pinned to queue index 1, 70% fresh random flows; ~37 Mpps aggregate
    hot = hot_flow_for_queue(1, 3)
    return ScenarioConfig(
        model=ModelParams(5, 3, 15 * US, 500 * US, 15 * US),
        arrivals=ArrivalSpec("flowmix", 37e6, flows=((0.3, hot), (0.7, None))),
        horizon=2 * S,
        warmup=100 * MS,
    )


PRESETS = {
    "fig3": lambda: _fig3(3),
    "fig4": lambda: _base(horizon=1 * S, warmup=50 * MS),
    "fig5": lambda: _base(horizon=1 * S, warmup=50 * MS),
    "fig7-ramp": lambda: _base(arrivals=staircase_ramp(), horizon=60 * S, warmup=0,
                               timeline_bin=100 * MS, trace_interval=1 * MS),
    "table1": lambda: _base(horizon=1 * S, warmup=50 * MS),
    **{f"table1-row{i + 1}": (lambda t=t: _base(target=t * US, horizon=1 * S, warmup=50 * MS))
       for i, t in enumerate(TABLE1_TARGETS_US)},
    "table4-unbalanced": _table4,
    "always-poll": lambda: _base(poll_mode="always", horizon=1 * S, warmup=50 * MS),
}

PRESET_NOTES = {
    "fig3": "M=3, T_S=T_L=50us, no jitter, adaptation off, Poisson at rho=0.8 of mu=29.25 Mpps",
    "fig4": "M=3, target V=10us, 14.88 Mpps Poisson; sweep t_long",
    "fig5": "target V=10us, 14.88 Mpps Poisson; sweep m_threads",
    "fig7-ramp": "M=3, target V=10us, 60 s staircase up to 14 Mpps at 30 s and back, 2 s steps",
    "table1": "same as table1-row2",
    "table1-row1": "M=3, T_L=500us, target V=5us, 14.88 Mpps",
    "table1-row2": "M=3, T_L=500us, target V=10us, 14.88 Mpps",
    "table1-row3": "M=3, T_L=500us, target V=12us, 14.88 Mpps",
    "table1-row4": "M=3, T_L=500us, target V=15us, 14.88 Mpps",
    "table1-row5": "M=3, T_L=500us, target V=20us, 14.88 Mpps",
    "table4-unbalanced": "N=3, M=5, target V=15us, 37 Mpps: 30% one flow on queue 1, 70% random flows",
    "always-poll": "busy-polling baseline at 14.88 Mpps (every thread always awake)",
}


def get_preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name.strip().lower()]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
