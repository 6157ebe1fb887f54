"""Command-line driver: single runs, evolutionary search, config linting.

Exit codes are a stable contract: 0 success, 2 validation failure,
3 runtime simulation failure.  Output files are written to a temporary
name and renamed, so failures never leave partial files behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

from .evolve import (
    EVOLUTION_CSV_COLUMNS,
    best_per_generation,
    final_best,
    parse_evolution_config,
    run_evolution,
)
from .kernel import SimulationError
from .platform import ValidationError
from .scenario import (
    _atomic_write,
    _quantize_obj,
    format_float,
    load_platform,
    load_scenario,
    run_simulation,
    validate_compatibility,
    write_host_breakdown,
    write_results,
    write_trace,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

log = logging.getLogger("falafels.cli")


def _setup_logging() -> None:
    level = os.environ.get("FALAFELS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_run(args: argparse.Namespace) -> int:
    try:
        platform = load_platform(args.platform)
        scenario = load_scenario(args.scenario)
        validate_compatibility(platform, scenario)
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    try:
        result = run_simulation(platform, scenario, seed=args.seed,
                                trace=args.trace)
    except ValidationError as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    except SimulationError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    try:
        write_results(result, args.out, format=args.format)
        if args.format == "csv":
            stem, _ = os.path.splitext(args.out)
            write_host_breakdown(result, f"{stem}.hosts.csv")
        if args.trace:
            write_trace(result.trace, f"{args.out}.trace.jsonl")
    except OSError as exc:
        return _fail(EXIT_RUNTIME, f"cannot write results: {exc}")
    print(
        f"{result.run_id}: sim_time_s={format_float(result.sim_time_s)} "
        f"energy_total_j={format_float(result.energy_total_j)} "
        f"(hosts={format_float(result.energy_hosts_j)} "
        f"links={format_float(result.energy_links_j)})"
    )
    return EXIT_OK


def cmd_evolve(args: argparse.Namespace) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            params = parse_evolution_config(json.load(fh))
    except (ValidationError, OSError, json.JSONDecodeError, KeyError,
            TypeError, ValueError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    try:
        groups, history = run_evolution(params)
    except SimulationError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    for record in history:
        print(f"gen {record.generation:3d} {record.group:<26} "
              f"best {params.criterion}={format_float(record.best_criterion)}")
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        rows = best_per_generation(history)
        lines = [",".join(EVOLUTION_CSV_COLUMNS)]
        lines += [",".join(row) for row in rows]
        _atomic_write(os.path.join(args.out_dir, "evolution.csv"),
                      "\n".join(lines) + "\n")
        summary = final_best(groups, params)
        _atomic_write(
            os.path.join(args.out_dir, "final_best.json"),
            json.dumps(_quantize_obj(summary), indent=2, sort_keys=True) + "\n",
        )
    except OSError as exc:
        return _fail(EXIT_RUNTIME, f"cannot write outputs: {exc}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        platform = load_platform(args.platform)
        if args.scenario:
            scenario = load_scenario(args.scenario)
            validate_compatibility(platform, scenario)
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="falafels",
        description="Simulate federated learning time and energy, or search "
                    "for frugal configurations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one simulation")
    run_p.add_argument("--platform", required=True)
    run_p.add_argument("--scenario", required=True)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--format", choices=("csv", "json"), default="csv")
    run_p.add_argument("--trace", action="store_true",
                       help="also write the event trace next to the results")
    run_p.set_defaults(fn=cmd_run)

    evolve_p = sub.add_parser("evolve", help="run the evolutionary search")
    evolve_p.add_argument("--config", required=True)
    evolve_p.add_argument("--out-dir", required=True)
    evolve_p.set_defaults(fn=cmd_evolve)

    validate_p = sub.add_parser("validate", help="lint configuration files")
    validate_p.add_argument("--platform", required=True)
    validate_p.add_argument("--scenario")
    validate_p.set_defaults(fn=cmd_validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
