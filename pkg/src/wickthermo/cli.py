"""The ``wickthermo`` command.

Subcommands
-----------
run
    Execute the scenarios of a configuration and write reports.
list
    Show scenario ids, kinds and the statement each one checks.
validate
    Parse and validate a configuration without running it.
sweep
    Ad-hoc inverse-temperature sweep on a flat torus.

Exit codes: 0 every check passed, 1 a check failed, 2 inconclusive checks
but no failures, 3 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import KIND_CLAIMS, ConfigError, load_config, parse_config, schema_text
from .lattice import LatticeError, ResourceLimitError
from .report import aggregate_status, dumps, exit_code, write_csv

__all__ = ["main", "build_parser", "write_report", "USAGE_EXIT"]

USAGE_EXIT = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wickthermo", description="Wick squares and local temperatures of static states.")
    p.add_argument("--version", action="version", version=f"wickthermo {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="execute scenarios and write reports")
    run.add_argument("--config", default="default", help="TOML file or shipped name (default, calibration)")
    run.add_argument("--scenario", action="append", default=[], metavar="ID",
                     help="run only this scenario id (repeatable)")
    run.add_argument("--out", default="wickthermo-out", metavar="DIR", help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override every scenario seed")
    run.add_argument("--jobs", type=int, default=1, help="scenarios run concurrently")

    ls = sub.add_parser("list", help="list scenarios and what they check")
    ls.add_argument("--config", default="default")

    val = sub.add_parser("validate", help="check a configuration without running it")
    val.add_argument("--config", default="default")
    val.add_argument("path", nargs="?", help="configuration file (overrides --config)")

    sw = sub.add_parser("sweep", help="inverse-temperature sweep on a flat torus")
    sw.add_argument("--side", type=float, default=1.0)
    sw.add_argument("--points", type=int, default=16, help="lattice points per axis")
    sw.add_argument("--mass", type=float, default=1.0)
    sw.add_argument("--beta-min", type=float, default=0.25)
    sw.add_argument("--beta-max", type=float, default=8.0)
    sw.add_argument("--count", type=int, default=25)
    sw.add_argument("--spacing", choices=("log", "linear"), default="log")
    sw.add_argument("--out", default="wickthermo-sweep", metavar="DIR")
    sw.add_argument("--no-plot", action="store_true")
    return p


def write_report(report, cfg, out_dir: Path) -> None:
    """Write the JSON report and CSV tables of one scenario into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.output["csv"]:
        for name, table in report.tables.items():
            write_csv(out_dir / f"{name}.csv", table["columns"], table["rows"])
    if cfg.output["json"]:
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")


def _execute(cfg, out_root):
    from .scenarios import run_scenario

    out_dir = Path(out_root) / cfg.id
    rep = run_scenario(cfg, out_dir)
    rep.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    write_report(rep, cfg, out_dir)
    return rep


def _select(configs, wanted):
    if not wanted:
        return configs
    ids = [c.id for c in configs]
    missing = [w for w in wanted if w not in ids]
    if missing:
        raise ConfigError(f"unknown scenario id(s) {missing}; available: {ids}", "--scenario")
    return [c for c in configs if c.id in wanted]


def _cmd_run(args) -> int:
    if args.jobs < 1:
        raise _UsageError("--jobs must be at least 1")
    configs = _select(load_config(args.config, args.seed), args.scenario)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    if args.jobs == 1 or len(configs) == 1:
        reports = [_execute(c, out_root) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_execute, configs, [out_root] * len(configs)))
    for rep in reports:
        for line in rep.summary_lines():
            print(line)
    status = aggregate_status(r.status for r in reports)
    summary = {
        "status": status,
        "config": str(args.config),
        "version": __version__,
        "scenarios": [{"id": r.scenario_id, "kind": r.kind, "status": r.status,
                       "checks": len(r.checks), "runtime_seconds": r.runtime_seconds} for r in reports],
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    (out_root / "report.json").write_text(dumps(summary), encoding="utf-8")
    print(f"overall: {status.upper()} ({len(reports)} scenarios) -> {out_root}")
    return exit_code(status)


def _cmd_list(args) -> int:
    configs = load_config(args.config)
    width = max(len(c.id) for c in configs)
    kwidth = max(len(c.kind) for c in configs)
    for c in configs:
        print(f"{c.id:<{width}}  {c.kind:<{kwidth}}  {KIND_CLAIMS[c.kind]}")
    return 0


def _cmd_validate(args) -> int:
    source = args.path or args.config
    configs = load_config(source)
    print(f"{source}: {len(configs)} scenario(s) valid: {', '.join(c.id for c in configs)}")
    return 0


def _cmd_sweep(args) -> int:
    text = (
        "[[scenario]]\nid = \"sweep\"\nkind = \"monotonicity\"\n"
        f"[scenario.geometry]\nside = {args.side!r}\n"
        f"[scenario.grid]\npoints = {args.points}\n"
        f"[scenario.field]\nmass = {args.mass!r}\n"
        f"[scenario.states]\nbeta_min = {args.beta_min!r}\nbeta_max = {args.beta_max!r}\n"
        f"beta_count = {args.count}\nbeta_spacing = \"{args.spacing}\"\n"
        f"[scenario.output]\nplot = {'false' if args.no_plot else 'true'}\n"
    )
    (cfg,) = parse_config(text)
    rep = _execute(cfg, Path(args.out))
    for line in rep.summary_lines():
        print(line)
    return exit_code(rep.status)


_COMMANDS = {"run": _cmd_run, "list": _cmd_list, "validate": _cmd_validate, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("wickthermo: error: a subcommand is required")
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        print("\n" + schema_text(), file=sys.stderr)
        return USAGE_EXIT
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ResourceLimitError, LatticeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
