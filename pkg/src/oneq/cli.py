"""Command line entry point.

Subcommands: validate (schema check), run (single seeded run with
artifacts), sweep (one parameter, several values, replicated seeds), and
plan (closed-form feasibility tables without running the simulator).
Verbosity comes from the ONEQ_LOG environment variable (error, info,
debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import analytic
from .errors import OneQError, SchemaError
from .runner import run_scenario, run_sweep, sweep_csv, write_artifacts
from .scenario import load_scenario_file

log = logging.getLogger("oneq.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


def _setup_logging() -> None:
    level_name = os.environ.get("ONEQ_LOG", "error").lower()
    level = _LOG_LEVELS.get(level_name)
    if level is None:
        print(f"warning: unknown ONEQ_LOG value {level_name!r}, using error",
              file=sys.stderr)
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oneq",
        description="Deterministic simulator for a classical-quantum "
                    "cellular network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a scenario file")
    p_validate.add_argument("scenario", help="path to the scenario JSON")
    p_validate.add_argument("--strict", action="store_true",
                            help="treat unknown keys as errors")

    p_run = sub.add_parser("run", help="execute one scenario")
    p_run.add_argument("scenario", help="path to the scenario JSON")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--until", type=float, default=None,
                       help="override the run horizon in seconds")
    p_run.add_argument("--out", default=None,
                       help="directory for metrics.csv, trace.jsonl, "
                            "app_results.csv, summary.json")
    p_run.add_argument("--strict", action="store_true",
                       help="treat unknown keys as errors")

    p_sweep = sub.add_parser("sweep", help="vary one parameter across runs")
    p_sweep.add_argument("scenario", help="path to the scenario JSON")
    p_sweep.add_argument("--param", required=True,
                         help='parameter path, e.g. "apps[0].n_pairs"')
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values (JSON literals)")
    p_sweep.add_argument("--replications", type=int, default=1,
                         help="independent seeded runs per value")
    p_sweep.add_argument("--out", default=None,
                         help="directory for sweep.csv")
    p_sweep.add_argument("--strict", action="store_true")

    p_plan = sub.add_parser("plan", help="print closed-form feasibility tables")
    p_plan.add_argument("--sequence", default=None, metavar="Q,C,K",
                        help="per-block error rates and block count for the "
                             "sequential-delivery success table")
    p_plan.add_argument("--match", default=None, metavar="N,K,P",
                        help="pairs per session, sift target, and delivery "
                             "probability for the key-match table")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _cmd_validate(args) -> int:
    try:
        _, warnings = load_scenario_file(args.scenario, strict=args.strict)
    except SchemaError as err:
        for violation in err.violations:
            print(f"error: {violation}")
        print(f"invalid: {args.scenario} "
              f"({len(err.violations)} problem(s))")
        return 2
    for warning in warnings:
        print(f"warning: {warning}")
    print(f"ok: {args.scenario}")
    return 0


def _cmd_run(args) -> int:
    try:
        scenario, warnings = load_scenario_file(args.scenario, strict=args.strict)
    except SchemaError as err:
        for violation in err.violations:
            print(f"error: {violation}", file=sys.stderr)
        return 2
    for warning in warnings:
        log.warning("%s", warning)
    artifacts = run_scenario(scenario, seed=args.seed, until=args.until)
    print(f"run {artifacts.run_id}: t_end={artifacts.summary['t_end']:.6f} "
          f"events={artifacts.summary['events']}")
    for app_id, info in artifacts.summary["apps"].items():
        result = info.get("result")
        shown = "" if result is None else f" result={result:.6g}"
        print(f"  app {app_id} [{info['type']}]: {info['outcome']}{shown}")
    if args.out:
        paths = write_artifacts(artifacts, args.out)
        for label in ("metrics", "apps", "trace", "summary"):
            print(f"  wrote {paths[label]}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        with open(args.scenario, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot load {args.scenario}: {err}", file=sys.stderr)
        return 2
    values = [_parse_value(v) for v in args.values.split(",") if v != ""]
    if not values:
        print("error: --values is empty", file=sys.stderr)
        return 2
    try:
        rows = run_sweep(document, args.param, values,
                         replications=args.replications, strict=args.strict)
    except (SchemaError, ValueError) as err:
        if isinstance(err, SchemaError):
            for violation in err.violations:
                print(f"error: {violation}", file=sys.stderr)
        else:
            print(f"error: {err}", file=sys.stderr)
        return 2
    for row in rows:
        print(f"{row['param']}={row['value']} rep={row['replicate']} "
              f"app={row['app_id']}: {row['outcome']} result={row['result']:.6g} "
              f"elapsed={row['elapsed_s']:.6g}s")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "sweep.csv"
        path.write_text(sweep_csv(rows), encoding="utf-8")
        print(f"wrote {path}")
    return 0


def _parse_triple(text: str, label: str) -> Optional[tuple]:
    parts = text.split(",")
    if len(parts) != 3:
        print(f"error: --{label} expects three comma-separated numbers",
              file=sys.stderr)
        return None
    return tuple(_parse_value(p) for p in parts)


def _cmd_plan(args) -> int:
    did_anything = False
    if args.sequence:
        triple = _parse_triple(args.sequence, "sequence")
        if triple is None:
            return 2
        q, c, k_max = triple
        print(f"sequential delivery, per-block error rates q={q} c={c}:")
        print(f"  {'K':>3}  {'p_block':>10}  {'p_success':>10}")
        for k in range(1, int(k_max) + 1):
            print(f"  {k:>3}  {analytic.p_block(q, c):>10.6f}  "
                  f"{analytic.p_succ_iid(q, c, k):>10.6f}")
        did_anything = True
    if args.match:
        triple = _parse_triple(args.match, "match")
        if triple is None:
            return 2
        n, k, p = triple
        prob = analytic.qkd_match_success(int(n), int(k), float(p))
        print(f"key-match success for N={n} pairs, K={k} sifted, "
              f"p_deliver={p}: {prob:.9f}")
        did_anything = True
    if not did_anything:
        print("nothing to plan; pass --sequence and/or --match", file=sys.stderr)
        return 2
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_plan(args)
    except OneQError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
