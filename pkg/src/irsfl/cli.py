"""Command-line harness.

Subcommands:
  run     — execute one configured scenario across its seed list
  preset  — execute a named figure/table preset
  check   — validate a config file without running anything

Exit codes: 0 ok, 1 config error, 2 acceptance failure (reserved for the
test harness), 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ScenarioConfig, parse_config, with_overrides
from .errors import ConfigError, IrsflError
from .flsim import ExperimentTrace, run_experiment
from .presets import PRESET_NAMES, emit_summary, run_preset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ACCEPTANCE = 2
EXIT_RUNTIME = 3


def _fmt(x) -> str:
    return f"{x:.17g}" if isinstance(x, float) else str(x)


def write_trace_csv(trace: ExperimentTrace, path: Path) -> None:
    lines = [",".join(ExperimentTrace.CSV_COLUMNS)]
    lines += [",".join(_fmt(v) for v in row) for row in trace.rows()]
    path.write_text("\n".join(lines) + "\n")


def _cmd_run(args) -> int:
    cfg = parse_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if args.scheme:
        overrides["scheme"] = args.scheme
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if overrides:
        cfg = with_overrides(cfg, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = []
    for seed in cfg.seeds:
        trace = run_experiment(cfg, seed)
        traces.append(trace)
        write_trace_csv(trace, out / f"{cfg.scheme}_seed{seed}.csv")
    summary = emit_summary(traces)
    (out / f"{cfg.scheme}_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(traces)} trace(s) to {out}")
    return EXIT_OK


def _cmd_preset(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else (0,)
    paths = run_preset(args.name, args.out, seeds)
    for p in paths:
        print(p)
    return EXIT_OK


def _cmd_check(args) -> int:
    cfg = parse_config(args.config)
    print(f"ok: {cfg.scheme} scheme, T={cfg.total_rounds} "
          f"(R={cfg.num_periods} x rho={cfg.period_len}), "
          f"K={cfg.num_devices}, M={cfg.num_antennas}, N={cfg.num_elements}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irsfl",
        description="IRS-assisted over-the-air federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario across its seeds")
    p_run.add_argument("--config", help="key=value config file (defaults apply if omitted)")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--scheme", help="override the configured scheme")
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.set_defaults(func=_cmd_run)

    p_preset = sub.add_parser("preset", help="run a figure/table preset")
    p_preset.add_argument("name", choices=PRESET_NAMES)
    p_preset.add_argument("--out", default="out", help="output directory")
    p_preset.add_argument("--seeds", help="comma-separated seed list")
    p_preset.set_defaults(func=_cmd_preset)

    p_check = sub.add_parser("check", help="validate a config file")
    p_check.add_argument("config")
    p_check.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IrsflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
