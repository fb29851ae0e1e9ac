"""Command line interface for thetamr."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from thetamr.calibration import calibrate
from thetamr.core import ThetaJoinEngine, render_explain, render_plan
from thetamr.exceptions import ConfigurationError, OracleGuardError, ThetaMRError
from thetamr.oracle import oracle_check
from thetamr.types import CalibrationProfile, RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

FLAG_FIELDS = (
    "query",
    "relation_path",
    "k_p",
    "calibration",
    "lambda_",
    "seed",
    "max_len",
    "sample_rate",
    "baseline",
    "out",
    "report",
    "dump_partition",
    "verify",
    "fresh_stats",
)


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def unit_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}")
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def sample_fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}")
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {value}")
    return value


def _add_query_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("query", help="Query file")
    parser.add_argument("--config", help="JSON file with RunConfig settings")
    parser.add_argument(
        "--relation-path",
        action="append",
        default=None,
        help="Directory searched for relation files (repeatable)",
    )
    parser.add_argument("--k-p", type=positive_int, help="Worker budget (default 16)")
    parser.add_argument("--calibration", help="Calibration profile path")
    parser.add_argument(
        "--lambda", dest="lambda_", type=unit_float, help="Duplication weight (default 0.4)"
    )
    parser.add_argument("--seed", type=int, help="Seed for sampling and ids")
    parser.add_argument("--max-len", type=positive_int, help="Hop cap for join paths")
    parser.add_argument(
        "--sample-rate", type=sample_fraction, help="Sampling fraction (0, 1]"
    )
    parser.add_argument(
        "--baseline", choices=["pairwise"], help="Restrict the plan to single-edge jobs"
    )
    parser.add_argument(
        "--fresh-stats", action="store_true", default=None, help="Resample statistics"
    )
    parser.add_argument(
        "--dump-partition", help="Write each job's partition as JSON to this path"
    )


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="thetamr",
        description="thetamr - plan and run multi-way theta-join queries",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="More logging (-vv for debug)"
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Plan command
    plan_parser = subparsers.add_parser("plan", help="Plan a query and print the plan")
    _add_query_options(plan_parser)
    plan_parser.add_argument("--json", action="store_true", help="Print the plan as JSON")
    plan_parser.add_argument("--out", help="Also write the plan as JSON to this path")

    # Run command
    run_parser = subparsers.add_parser("run", help="Plan and execute a query")
    _add_query_options(run_parser)
    run_parser.add_argument("--out", help="Result rows path (stdout if omitted)")
    run_parser.add_argument("--report", help="Run report path")
    run_parser.add_argument(
        "--verify", action="store_true", default=None, help="Compare with brute force"
    )

    # Explain command
    explain_parser = subparsers.add_parser(
        "explain", help="Show the plan, pruning decisions and reduce-count sweeps"
    )
    _add_query_options(explain_parser)

    # Calibrate command
    calibrate_parser = subparsers.add_parser(
        "calibrate", help="Measure cost-model parameters on this machine"
    )
    calibrate_parser.add_argument(
        "--out", default="calibration.json", help="Profile path (default calibration.json)"
    )
    calibrate_parser.add_argument("--scratch", help="Scratch directory for spill files")
    calibrate_parser.add_argument(
        "--quick", action="store_true", help="Three-point tables, marked low-confidence"
    )
    calibrate_parser.add_argument(
        "--k-p", type=positive_int, default=16, help="Map slots recorded in the profile"
    )

    # Oracle-check command
    oracle_parser = subparsers.add_parser(
        "oracle-check", help="Check random queries against brute-force evaluation"
    )
    oracle_parser.add_argument("--count", type=int, default=50, help="Number of queries")
    oracle_parser.add_argument(
        "--max-tuples", type=positive_int, default=200, help="Tuples per relation cap"
    )
    oracle_parser.add_argument("--seed", type=int, default=7, help="Suite seed")
    oracle_parser.add_argument("--k-p", type=positive_int, default=8, help="Worker budget")
    oracle_parser.add_argument("--calibration", help="Calibration profile path")
    oracle_parser.add_argument(
        "--max-len", type=positive_int, default=3, help="Hop cap for join paths"
    )
    oracle_parser.add_argument(
        "--sample-rate",
        type=sample_fraction,
        default=0.5,
        help="Sampling fraction (0, 1]",
    )
    oracle_parser.add_argument(
        "--flip-condition",
        action="store_true",
        help="Negate one condition on the executed side (harness self-check)",
    )

    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge defaults, the --config file, environment and flags, in that order.

    Raises:
        ConfigurationError: If a source holds an invalid value
    """
    data: Dict[str, Any] = {}
    if getattr(args, "config", None):
        data.update(RunConfig.from_file(args.config).model_dump(exclude_unset=True))

    if os.getenv("THETAMR_CALIBRATION"):
        data["calibration"] = os.environ["THETAMR_CALIBRATION"]
    if os.getenv("THETAMR_WORKERS"):
        try:
            data["k_p"] = int(os.environ["THETAMR_WORKERS"])
        except ValueError:
            raise ConfigurationError(
                f"THETAMR_WORKERS={os.environ['THETAMR_WORKERS']!r} is not an integer"
            )

    for field in FLAG_FIELDS:
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}")


def build_engine(config: RunConfig) -> ThetaJoinEngine:
    return ThetaJoinEngine(
        k_p=config.k_p,
        calibration=config.calibration,
        options=config.planner_options(),
        relation_path=config.relation_path,
        fresh_stats=config.fresh_stats,
    )


def cmd_plan(config: RunConfig, as_json: bool = False) -> int:
    engine = build_engine(config)
    query = engine.load_query(config.query)  # type: ignore[arg-type]
    plan = engine.plan(query).plan
    print(plan.model_dump_json(indent=2) if as_json else render_plan(plan))
    if config.out:
        Path(config.out).write_text(plan.model_dump_json(indent=2), encoding="utf-8")
    if config.dump_partition:
        engine.dump_partition(query, plan, config.dump_partition)
    return EXIT_OK


def cmd_explain(config: RunConfig) -> int:
    engine = build_engine(config)
    query = engine.load_query(config.query)  # type: ignore[arg-type]
    result = engine.plan(query)
    print(render_explain(result))
    if config.dump_partition:
        engine.dump_partition(query, result.plan, config.dump_partition)
    return EXIT_OK


def _write_report(engine: ThetaJoinEngine, path: Optional[str]) -> None:
    if path and engine.last_report is not None:
        Path(path).write_text(engine.last_report.model_dump_json(indent=2), encoding="utf-8")


def cmd_run(config: RunConfig) -> int:
    engine = build_engine(config)
    query = engine.load_query(config.query)  # type: ignore[arg-type]
    try:
        result = engine.run(query)
    finally:
        _write_report(engine, config.report)

    text = engine.render_rows(query, result.rows)
    if config.out:
        Path(config.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if config.dump_partition:
        engine.dump_partition(query, result.plan, config.dump_partition)

    if config.verify:
        try:
            matched = engine.verify(query, result.output)
        except OracleGuardError as e:
            logger.warning("Verification skipped: %s", e)
            print(f"Warning: verification skipped: {e}", file=sys.stderr)
            return EXIT_OK
        print("MATCH" if matched else "MISMATCH")
        return EXIT_OK if matched else EXIT_FAILURE
    return EXIT_OK


def cmd_calibrate(out: str, scratch: Optional[str], quick: bool, workers: int) -> int:
    profile = calibrate(scratch, quick=quick, workers=workers)
    profile.save(out)
    label = "quick, low confidence" if profile.low_confidence else "full"
    print(f"Wrote {label} calibration profile to {out}")
    return EXIT_OK


def cmd_oracle_check(args: argparse.Namespace) -> int:
    profile = (
        CalibrationProfile.load(args.calibration)
        if args.calibration
        else CalibrationProfile.default(args.k_p)
    )
    result = oracle_check(
        count=args.count,
        max_tuples=args.max_tuples,
        seed=args.seed,
        k_p=args.k_p,
        flip_condition=args.flip_condition,
        profile=profile,
        max_len=args.max_len,
        sample_rate=args.sample_rate,
    )
    if result.total == 0:
        print("Warning: no queries generated; vacuous pass", file=sys.stderr)
    for case in result.cases:
        if not case.passed:
            detail = case.error or f"plan {case.plan_rows} rows, oracle {case.oracle_rows} rows"
            print(f"MISMATCH query {case.index} ({case.relations} relations): {detail}")
    print(
        f"Results: {result.passed}/{result.total} passed "
        f"({result.pass_rate:.0%}), duplicates: {result.duplicates}, "
        f"operators: {' '.join(result.operators)}, {result.elapsed:.1f}s"
    )
    return EXIT_OK if result.ok else EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> None:
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return

    configure_logging(args.verbose)

    try:
        if args.command == "calibrate":
            code = cmd_calibrate(args.out, args.scratch, args.quick, args.k_p)
        elif args.command == "oracle-check":
            code = cmd_oracle_check(args)
        else:
            config = resolve_config(args)
            if args.command == "plan":
                code = cmd_plan(config, as_json=args.json)
            elif args.command == "explain":
                code = cmd_explain(config)
            else:
                code = cmd_run(config)

    except ConfigurationError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    except ThetaMRError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_FAILURE)
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        sys.exit(EXIT_FAILURE)
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        sys.exit(EXIT_FAILURE)

    if code != EXIT_OK:
        sys.exit(code)


if __name__ == "__main__":
    main()
