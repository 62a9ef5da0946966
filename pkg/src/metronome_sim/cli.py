"""Command line front end: run, preset, sweep and analytic subcommands."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import analytics as an
from .config import KEYS, PRESET_NOTES, PRESETS, ConfigError, ConfigIssue, format_config, parse_config, parse_duration
from .engine import run
from .harness import emit_report, run_sweep, summary_text

OUTPUT_ENV = "METRONOME_SIM_OUTPUT"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("config keys (override file values)")
    for key in KEYS:
        g.add_argument("--" + key.replace("_", "-"), dest="key_" + key, metavar="VALUE")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--output", "-o", help=f"output directory (beats ${OUTPUT_ENV} and output_dir)")


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([ConfigIssue(0, f"--set expects KEY=VALUE, got {item!r}")])
        out[key.strip()] = value.strip()
    for key in KEYS:
        v = getattr(args, "key_" + key, None)
        if v is not None:
            out[key] = v
    return out


def _output_dir(args, cfg) -> str | None:
    return args.output or os.environ.get(OUTPUT_ENV) or cfg.output_dir


def _load(args, preset: str | None = None):
    overrides = _overrides(args)
    if preset is not None:
        text = f"preset = {preset}\n"
    elif getattr(args, "config", None):
        text = Path(args.config).read_text()
    else:
        text = ""
    return parse_config(text, overrides)


def _finish(report, args, cfg) -> int:
    print(summary_text(report), end="")
    out = _output_dir(args, cfg)
    if out:
        emit_report(report, out)
        print(f"report written to {out}")
    return EXIT_OK if report.conservation_ok else EXIT_FAILED


def cmd_run(args) -> int:
    cfg = _load(args)
    return _finish(run(cfg), args, cfg)


def cmd_preset(args) -> int:
    if args.list or not args.name:
        for name in sorted(PRESETS):
            print(f"{name:20s} {PRESET_NOTES.get(name, '')}")
        return EXIT_OK
    cfg = _load(args, preset=args.name)
    if args.show:
        print(format_config(cfg), end="")
        return EXIT_OK
    return _finish(run(cfg), args, cfg)


def cmd_sweep(args) -> int:
    cfg = _load(args, preset=args.preset) if args.preset else _load(args)
    values = [v.strip() for chunk in args.values for v in chunk.split(",") if v.strip()]
    out = _output_dir(args, cfg)
    csv_path = Path(out) / "sweep.csv" if out else None
    result = run_sweep(cfg, args.key, values, parallelism=args.jobs, csv_path=csv_path)
    failed = 0
    for p in result.points:
        if p.ok:
            r = p.report
            print(f"{args.key}={p.value}: busy_tries={r.busy_tries_pct_global:.3f}% cpu_proxy={r.cpu_proxy:.4f} "
                  f"latency_mean={r.latency.mean:.0f}ns dropped={r.dropped}")
            if out:
                emit_report(r, Path(out) / f"{args.key}={p.value}")
        else:
            failed += 1
            print(f"{args.key}={p.value}: FAILED {p.error}", file=sys.stderr)
    if csv_path:
        print(f"sweep table written to {csv_path}")
    return EXIT_FAILED if failed else EXIT_OK


def _num(text: str) -> float:
    """Plain number, or a duration with a unit (converted to ns)."""
    try:
        return float(text)
    except ValueError:
        return float(parse_duration(text))


ANALYTIC_OPS = {
    "busy": (("v", "rho"), lambda a: an.expected_busy_given_vacation(a.v, a.rho)),
    "load": (("busy", "vacation"), lambda a: an.load_from_periods(a.busy, a.vacation)),
    "cdf-high": (("x",), lambda a: an.vacation_cdf_high_load(a.x, _params(a))),
    "pdf-high": (("x",), lambda a: an.vacation_pdf_high_load(a.x, _params(a))),
    "atom-high": ((), lambda a: an.vacation_atom_high_load(_params(a))),
    "mean-high": ((), lambda a: an.mean_vacation_high_load(_params(a))),
    "backup-success": ((), lambda a: an.backup_success_prob(_params(a))),
    "cdf-low": (("x",), lambda a: an.vacation_cdf_low_load(a.x, _params(a))),
    "mean-low": ((), lambda a: an.mean_vacation_low_load(_params(a))),
    "mean-general": (("primary_prob",), lambda a: an.mean_vacation_general(_params(a), a.primary_prob)),
    "ts": (("rho", "target"), lambda a: an.adaptive_ts(a.m, a.rho, a.target)),
    "ts-multiqueue": (("rho", "target"), lambda a: an.adaptive_ts_multiqueue(a.m, a.n, a.rho, a.target)),
}


def _params(a) -> an.ModelParams:
    missing = [f for f in ("t_short", "t_long") if getattr(a, f) is None]
    if missing:
        raise ValueError("needs " + ", ".join("--" + f.replace("_", "-") for f in missing))
    return an.ModelParams(a.m, a.n, a.t_short, a.t_long, a.target if a.target is not None else a.t_short)


def cmd_analytic(args) -> int:
    needs, fn = ANALYTIC_OPS[args.op]
    missing = [f for f in needs if getattr(args, f) is None]
    if missing:
        print(f"analytic {args.op}: missing " + ", ".join("--" + f.replace("_", "-") for f in missing),
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        value = fn(args)
    except ValueError as exc:
        print(f"analytic {args.op}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(value, tuple) and hasattr(value, "_fields"):
        for name, v in zip(value._fields, value):
            print(f"{name} = {v!r}")
    else:
        print(repr(value))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metronome-sim",
                                     description="Sleep&wake packet retrieval simulator and closed-form model.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("config", nargs="?", help="scenario file (key = value lines)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true", help="list presets")
    p.add_argument("--show", action="store_true", help="print the resolved config instead of running")
    _add_config_flags(p)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("sweep", help="run a scenario once per value of one key")
    p.add_argument("config", nargs="?")
    p.add_argument("--preset")
    p.add_argument("--key", required=True, choices=sorted(KEYS), metavar="KEY")
    p.add_argument("--values", required=True, action="append", help="comma separated, repeatable")
    p.add_argument("--jobs", "-j", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analytic", help="evaluate one closed-form quantity")
    p.add_argument("op", choices=sorted(ANALYTIC_OPS))
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--n", type=int, default=1)
    for f in ("t_short", "t_long", "target", "x", "v", "busy", "vacation"):
        p.add_argument("--" + f.replace("_", "-"), dest=f, type=_num)
    p.add_argument("--rho", type=float)
    p.add_argument("--primary-prob", dest="primary_prob", type=float)
    p.set_defaults(func=cmd_analytic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
