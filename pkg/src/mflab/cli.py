"""Command line entry point.

    mflab <command> --config FILE [--out DIR] [--threads K]

Commands: constants, simulate, bias-sweep, time-uniformity, tail-study, localize.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 a study's
built-in verdict failed.  The output directory is ``--out``, else the
``MFLAB_OUT_DIR`` environment variable, else ``output.directory``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .constants import build_ledger, ledger_csv
from .errors import ConfigError, InputError, PreconditionError, SimulationDivergence
from .experiments import Study, StudyResult, build_reference, moment_check, run_study, run_trials

CSV_HEADER = "study,N,seed,t,metric,value,stderr,status"
OUT_ENV = "MFLAB_OUT_DIR"
COMMANDS = ("constants", "simulate") + tuple(s.value for s in Study)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_VERDICT = 0, 1, 2, 3

log = logging.getLogger("mflab")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def _row_key(row):
    _, N, seed, t, metric = row[:5]
    return (N, -1 if seed in (None, "") else seed, t, metric)


def emit_csv(rows, path) -> Path:
    """Write long-format rows (study, N, seed, t, metric, value, stderr, status).

    Rows are sorted by (N, seed, t, metric); floats use 17 significant digits
    and lines end with LF.  Nothing is written when ``rows`` is empty.
    """
    rows = list(rows)
    if not rows:
        raise InputError("no records to write")
    lines = [CSV_HEADER]
    for row in sorted(rows, key=_row_key):
        if len(row) != 8:
            raise InputError(f"CSV row must have 8 fields, got {len(row)}")
        lines.append(",".join(_fmt(v) for v in row))
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def aggregate_rows(result: StudyResult) -> list[tuple]:
    return [(result.study.value, r["N"], "", r["t"], r["metric"], r["mean"], r["sem"], "mean")
            for r in result.table]


def _usage() -> str:
    return build_parser().format_usage() + f"commands: {', '.join(COMMANDS)}\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mflab", description="Mean-field SGD laboratory.")
    p.add_argument("command", help=", ".join(COMMANDS))
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides env and config)")
    p.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    return p


def _out_dir(args, cfg: RunConfig) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV) or cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _cmd_constants(cfg: RunConfig, args) -> int:
    ledgers = []
    for N in cfg.widths:
        hp = cfg.plan().hyperparams(N)
        plan = cfg.plan()
        led = build_ledger(cfg.model, hp, cfg.A, plan.C0, plan.Cpi, plan.r0)
        ledgers.append(led)
        print(f"== N = {N}")
        print(led.render_text())
        print()
    csv = ledger_csv(ledgers)
    print(csv, end="")
    if args.out or os.environ.get(OUT_ENV):
        path = _out_dir(args, cfg) / f"{cfg.prefix}_constants.csv"
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(csv)
    return EXIT_OK


def _cmd_simulate(cfg: RunConfig, args) -> int:
    plan = cfg.plan(Study.BIAS_SWEEP, args.threads)
    errs = plan.validate()
    if errs:
        raise ConfigError(errs)
    ref = build_reference(plan)
    records = []
    for wi, N in enumerate(plan.widths):
        records += run_trials(plan, N, wi, ref)
    rows = [row for r in records for row in r.rows("simulate", plan.metrics)]
    out = _out_dir(args, cfg)
    path = emit_csv(rows, out / f"{cfg.prefix}_simulate_trials.csv")
    mom = moment_check(ref, cfg.model, cfg.A, cfg.lam) if cfg.lam > 0 else None
    summary = {"records": len(records), "reference_moment_check": mom, "warnings": cfg.warnings}
    (out / f"{cfg.prefix}_simulate_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_study(study: Study, cfg: RunConfig, args) -> int:
    plan = cfg.plan(study, args.threads)
    result = run_study(plan)
    out = _out_dir(args, cfg)
    stem = f"{cfg.prefix}_{study.value}"
    emit_csv(result.csv_rows(), out / f"{stem}_trials.csv")
    if result.table:
        emit_csv(aggregate_rows(result), out / f"{stem}_summary.csv")
    summary = dict(result.summary, config_warnings=cfg.warnings)
    (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    verdict = {True: "PASS", False: "FAIL", None: "no verdict (diagnostic)"}[result.passed]
    print(f"{study.value}: {verdict}; outputs in {out}")
    return EXIT_VERDICT if result.passed is False else EXIT_OK


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in COMMANDS:
        sys.stderr.write(_usage())
        return EXIT_INVALID
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.threads < 1:
        sys.stderr.write("--threads must be >= 1\n")
        return EXIT_INVALID
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            sys.stderr.write(f"config error: {e}\n")
        return EXIT_INVALID
    except OSError as exc:
        sys.stderr.write(f"cannot read config: {exc}\n")
        return EXIT_INVALID
    for w in cfg.warnings:
        sys.stderr.write(f"warning: {w}\n")
    try:
        if args.command == "constants":
            return _cmd_constants(cfg, args)
        if args.command == "simulate":
            return _cmd_simulate(cfg, args)
        return _cmd_study(Study(args.command), cfg, args)
    except (ConfigError, InputError, PreconditionError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except (SimulationDivergence, OSError, RuntimeError, MemoryError) as exc:
        sys.stderr.write(f"runtime failure: {exc}\n")
        return EXIT_RUNTIME


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
