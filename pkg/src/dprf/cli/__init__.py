"""Command line entry point: ``dprf run|audit|bound <config> [options]``.

Exit status is 0 on success, 1 for configuration errors and 2 when the
experiment itself fails.  A failed run still writes a manifest marked
``incomplete`` together with any result tables finished before the error.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from dprf.cli.config import ConfigError, Experiment, ExperimentConfig, load_config
from dprf.cli.experiments import RunContext, run_experiment
from dprf.cli.report import ReportFormat, emit_report, write_manifest

__all__ = ["main", "execute", "ConfigError", "ExperimentConfig", "load_config"]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dprf", description="Private random feature regression experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the configured experiment"),
                        ("audit", "run the sensitivity, concentration and noise audit"),
                        ("bound", "tabulate the generalisation bound")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="key = value config file, or a manifest.json to replay")
        s.add_argument("--seed", type=int, help="override the seed key")
        s.add_argument("--out", help="override the output directory")
        s.add_argument("--svg", action="store_true", help="also write SVG line plots")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.out is not None:
        out["out"] = args.out
    if args.svg:
        out["svg"] = "true"
    if args.command == "audit":
        out["experiment"] = Experiment.AUDIT.value
    elif args.command == "bound":
        out["experiment"] = Experiment.BOUND.value
    return out


def execute(cfg: ExperimentConfig, command: str = "run") -> int:
    """Run ``cfg`` and write its artifacts; returns the exit status."""
    ctx = RunContext(cfg)
    out = cfg["out"]
    formats = [ReportFormat.CSV] + ([ReportFormat.SVG] if cfg["svg"] else [])
    outputs: list[str] = []
    error = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            run_experiment(ctx)
        except Exception as exc:  # module errors abort the run
            error = f"{type(exc).__name__}: {exc}"
    for w in caught:
        ctx.warn(f"{w.category.__name__}: {w.message}")
    try:
        for table in ctx.tables:
            if len(table) == 0:
                continue
            fmts = formats if table.x is not None else [ReportFormat.CSV]
            outputs += [p.name for p in emit_report(table, out, fmts, log_y=cfg["log_y"])]
        for name, text in ctx.texts.items():
            path = Path(out) / name
            path.write_text(text, encoding="utf-8")
            outputs.append(name)
        write_manifest(out, cfg.echo(), cfg["seed"], command=command, incomplete=error is not None,
                       warnings=ctx.warnings, outputs=outputs, extra=ctx.extra, error=error)
    except OSError as exc:
        print(f"dprf: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if error is not None:
        print(f"dprf: {error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"dprf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, args.command)
