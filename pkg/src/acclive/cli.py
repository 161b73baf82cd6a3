"""Command-line entry point: ``acclive {run,adjudicate,validate,frontier,replay}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from .analysis import as_fraction, frontier_table, write_frontier_csv
from .config import ConfigError, load_config
from .harness import adjudicate_bundle, run_scenario, write_outputs
from .netsim import NetParams, Schedule, SignatureForgery, validate_x_psync

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BREACH = 3

log = logging.getLogger("acclive")


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("ACCLIVE_LOG", "WARNING").upper()
    if level.isdigit():
        lvl = int(level)
    else:
        lvl = logging.getLevelName(level)
        if not isinstance(lvl, int):
            lvl = logging.WARNING
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _read_json(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


# -- run ------------------------------------------------------------------


def cmd_run(args) -> int:
    if not args.config:
        raise UsageError("run: --config is required")
    cfg = load_config(args.config).with_overrides(args.seed_override, args.horizon)
    try:
        world, report = run_scenario(cfg)
    except SignatureForgery as exc:
        log.error("ideal-signature violation: %s", exc)
        return EXIT_BREACH
    out = Path(args.out or "out")
    write_outputs(world, report, cfg, out)
    summary = {
        "safety_ok": report.safety_ok,
        "mean_latency": report.mean_latency,
        "oracle_violations": len(report.oracle_violations),
        "certificates": len(report.certificates),
        "achieved_ident": report.achieved_ident,
        "out": str(out),
    }
    print(json.dumps(summary, sort_keys=True))
    for b in report.breaches:
        log.error("invariant breach: %s", b)
    return EXIT_BREACH if report.breaches else EXIT_OK


# -- adjudicate -------------------------------------------------------------


def cmd_adjudicate(args) -> int:
    path = args.bundle or args.config
    if not path:
        raise UsageError("adjudicate: a bundle path is required")
    data = _read_json(path)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: bundle must be a JSON object")
    overrides = {"x": args.x, "delta_x": args.delta_x, "tau_al_max": args.tau}
    try:
        res = adjudicate_bundle(data, overrides)
    except KeyError as exc:
        raise UsageError(f"{path}: missing field {exc.args[0]}") from exc
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    print(json.dumps(res.to_dict(), sort_keys=True))
    return EXIT_OK


# -- validate ---------------------------------------------------------------


def load_schedule(data: dict) -> Schedule:
    sync = data.get("sync")
    if isinstance(sync, str):
        if set(sync) - {"0", "1"}:
            raise UsageError("sync: a string schedule may only contain 0 and 1")
        flags = [c == "1" for c in sync]
    elif isinstance(sync, list) and all(isinstance(s, (bool, int)) for s in sync):
        flags = [bool(s) for s in sync]
    elif isinstance(data.get("periods"), list):
        # compact form: one flag per block of ``period_length`` rounds
        length = int(data.get("period_length", data.get("delta_prime", 1)))
        flags = [bool(p) for p in data["periods"] for _ in range(length)]
    else:
        raise UsageError("schedule needs a 'sync' list/string or a 'periods' list")
    return Schedule(flags, data.get("gst"))


def cmd_validate(args) -> int:
    path = args.schedule or args.config
    if not path:
        raise UsageError("validate: a schedule path is required")
    data = _read_json(path)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: schedule must be a JSON object")
    sched = load_schedule(data)
    try:
        params = NetParams(
            int(args.delta or data.get("delta", 1)),
            int(args.delta_prime or data["delta_prime"]),
            int(args.g or data["g"]),
            as_fraction(args.x if args.x is not None else data.get("x", 0)),
        )
    except KeyError as exc:
        raise UsageError(f"{path}: missing field {exc.args[0]}") from exc
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    res = validate_x_psync(sched, params, aligned_only=args.aligned_only)
    if res.ok:
        print("ok (vacuous: schedule shorter than one window)" if res.vacuous else "ok")
        return EXIT_OK
    print(
        f"violation: offset={res.offset} window_start={res.window_start} "
        f"sync_periods={res.sync_periods} required={res.required}"
    )
    return EXIT_BREACH


# -- frontier ---------------------------------------------------------------


def parse_grid(text: str) -> list[Fraction]:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("grid: expected start:stop:step")
        start, stop, step = (as_fraction(p) for p in parts)
        if step <= 0:
            raise UsageError("grid: step must be positive")
        out = []
        x = start
        while x <= stop:
            out.append(x)
            x += step
        return out
    return [as_fraction(p) for p in text.split(",") if p.strip()]


def cmd_frontier(args) -> int:
    if args.n is None or not args.tau:
        raise UsageError("frontier: --n and --tau are required")
    try:
        grid = parse_grid(args.grid)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"grid: {exc}") from exc
    points = []
    for tau in args.tau:
        points.extend(frontier_table(args.n, tau, grid))
    if args.out:
        out = Path(args.out)
        if out.suffix != ".csv":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "frontier.csv"
        with open(out, "w", newline="") as fh:
            write_frontier_csv(points, fh)
    else:
        sys.stdout.write(write_frontier_csv(points))
    return EXIT_OK


# -- replay -----------------------------------------------------------------


def cmd_replay(args) -> int:
    """Re-run a saved run and check that the trace and every accusation reproduce."""
    if not args.out:
        raise UsageError("replay: --out must point at a previous run directory")
    run_dir = Path(args.out)
    cfg_path = Path(args.config) if args.config else run_dir / "config.json"
    cfg = load_config(cfg_path).with_overrides(args.seed_override, args.horizon)
    trace_path = run_dir / "trace.jsonl"
    if not trace_path.exists():
        raise UsageError(f"{trace_path}: missing")
    recorded = trace_path.read_text(encoding="utf-8")
    world, _ = run_scenario(cfg)
    problems = []
    if world.trace.to_jsonl() != recorded:
        problems.append("trace differs from the recorded trace.jsonl")

    accused_by_round: dict[int, list[int]] = {}
    first = world.honest[0] if world.honest else None
    for line in recorded.splitlines():
        e = json.loads(line)
        if e["kind"] == "accusation" and e["payload"]["node"] == first:
            accused_by_round[e["payload"]["violation_round"]] = e["payload"]["accused"]
    for bundle_path in sorted(run_dir.glob("bundle_*.json")):
        res = adjudicate_bundle(_read_json(bundle_path))
        t0 = int(bundle_path.stem.split("_")[1])
        if accused_by_round.get(t0) != sorted(res.accused):
            problems.append(f"{bundle_path.name}: offline accused {sorted(res.accused)} vs recorded {accused_by_round.get(t0)}")
    for p in problems:
        print(f"mismatch: {p}")
    if problems:
        return EXIT_BREACH
    print("replay ok")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config, bundle or schedule (JSON)")
    common.add_argument("--out", help="output directory (or CSV path for frontier)")
    common.add_argument("--seed-override", type=int, dest="seed_override")
    common.add_argument("--horizon", type=int)

    parser = argparse.ArgumentParser(prog="acclive", description="Accountable-liveness consensus simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="run a scenario and write trace/report/metrics")

    p = sub.add_parser("adjudicate", parents=[common], help="run the adjudication rule on a saved bundle")
    p.add_argument("bundle", nargs="?")
    p.add_argument("--x", type=as_fraction)
    p.add_argument("--delta-x", type=as_fraction, dest="delta_x")
    p.add_argument("--tau", type=int)

    p = sub.add_parser("validate", parents=[common], help="check a sync schedule against the partial-synchrony constraint")
    p.add_argument("schedule", nargs="?")
    p.add_argument("--delta", type=int)
    p.add_argument("--delta-prime", type=int, dest="delta_prime")
    p.add_argument("--g", type=int)
    p.add_argument("--x", type=as_fraction)
    p.add_argument("--aligned-only", action="store_true", help="only the partition starting at round 0")

    p = sub.add_parser("frontier", parents=[common], help="tabulate achievable and converse bounds")
    p.add_argument("--n", type=int)
    p.add_argument("--tau", type=int, nargs="+")
    p.add_argument("--grid", default="0.05:0.45:0.05")

    sub.add_parser("replay", parents=[common], help="re-run a saved run and verify it reproduces")
    return parser


HANDLERS = {
    "run": cmd_run,
    "adjudicate": cmd_adjudicate,
    "validate": cmd_validate,
    "frontier": cmd_frontier,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return HANDLERS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
