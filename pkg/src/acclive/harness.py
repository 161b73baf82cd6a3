"""Scenario runner: build a world from a config, run it, and summarize the run."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .accountability import (
    AccountabilitySettings,
    LivenessOracle,
    PsiParams,
    SuperViewIndex,
    Transcript,
    blame_superview,
    psi,
    sanitize_bundle,
)
from .adversaries import build_adversary
from .analysis import tau_liveness
from .config import ScenarioConfig
from .netsim import NetParams, World
from .store import MessageStore

log = logging.getLogger(__name__)


def acc_settings(cfg: ScenarioConfig) -> AccountabilitySettings | None:
    if not cfg.accountability:
        return None
    return AccountabilitySettings(
        cfg.n, cfg.tau_al_max, cfg.x, cfg.delta_x, cfg.delta, cfg.k_views, cfg.g_value, cfg.seed
    )


def build_world(cfg: ScenarioConfig) -> World:
    adversary = build_adversary(cfg.adversary, cfg.seed)
    net = NetParams(cfg.delta, cfg.delta_prime, cfg.g_value, cfg.x)
    world = World(
        cfg.n,
        cfg.delta,
        cfg.seed,
        adversary,
        None,
        acc=acc_settings(cfg),
        gst=cfg.gst,
        trace_level=cfg.trace_level,
        net=net,
        conformance_declared=cfg.conformance_declared,
    )
    world.tx_plan = cfg.tx_plan(world.corrupt)
    if cfg.save_bundles and world.honest and world.acc is not None:
        world.processes[world.honest[0]].agent.keep_bundles = True
    return world


@dataclass
class RunReport:
    safety_ok: bool
    latencies: dict[str, int | None]
    oracle_violations: list[int]
    accusations: list[dict]
    certificates: list[dict]
    conformance: dict | None
    achieved_ident: int
    honest_certified: list[int] = field(default_factory=list)
    breaches: list[str] = field(default_factory=list)
    horizon: int = 0
    corrupt: list[int] = field(default_factory=list)

    @property
    def mean_latency(self) -> float | None:
        vals = [v for v in self.latencies.values() if v is not None]
        return statistics.fmean(vals) if vals else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_latency"] = self.mean_latency
        return d


def logs_consistent(logs) -> bool:
    """True iff every pair of logs is prefix-comparable."""
    logs = sorted({tuple(lg) for lg in logs}, key=len)
    if not logs:
        return True
    longest = logs[-1]
    return all(longest[: len(lg)] == lg for lg in logs)


def summarize(world: World, cfg: ScenarioConfig) -> RunReport:
    trace = world.trace
    honest = world.honest
    hs = set(honest)
    logs = [e["payload"]["log"] for e in trace.events if e["kind"] == "confirm" and e["payload"]["node"] in hs]
    safety_ok = logs_consistent(logs)

    oracle = LivenessOracle(trace.events, honest)
    first_in_log: dict[str, dict[int, int]] = {}
    for e in trace.events:
        if e["kind"] == "confirm" and e["payload"]["node"] in hs:
            for tx in e["payload"]["log"]:
                first_in_log.setdefault(tx, {}).setdefault(e["payload"]["node"], e["round"])
    latencies = {}
    for tx, t_in in sorted(oracle.inputs.items()):
        got = first_in_log.get(tx, {})
        latencies[tx] = max(got.values()) - t_in if len(got) == len(honest) else None

    wait = cfg.window
    tl = tau_liveness(cfg.n)
    horizon = world.round
    candidates = set(range(0, horizon, cfg.delta_prime)) | {r + wait for r in oracle.inputs.values()}
    violations = sorted(t for t in candidates if t < horizon and oracle.violated(t, wait, tl))

    accusations = []
    for e in trace.events:
        if e["kind"] == "accusation":
            accusations.append({"accuser": e["payload"]["node"], "violation_round": e["payload"]["violation_round"], "accused": e["payload"]["accused"]})
    certs = world.certificates()
    certificates = [
        {"accused": p, "violation_round": t, "supporting": sorted(c.supporting)} for (p, t), c in sorted(certs.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    ]
    achieved = 0
    if certs:
        t0 = min(t for _, t in certs)
        achieved = len({p for p, t in certs if t == t0})
    honest_cert = sorted({p for p, _ in certs if p in hs})

    conf = world.conformance()
    conf_d = None if conf is None else dict(conf.to_dict(), declared=cfg.conformance_declared)

    breaches = []
    f = len(world.corrupt)
    conformant = conf is None or conf.ok
    if honest_cert and conformant and f <= cfg.tau_al_max:
        breaches.append(f"honest nodes certified: {honest_cert}")
    if not safety_ok and f <= tl:
        breaches.append("safety violated with f within the safety resilience")
    if cfg.conformance_declared and conf is not None and not conf.ok:
        log.warning("schedule declared conformant but fails the partial-synchrony check: %s", conf)

    return RunReport(
        safety_ok=safety_ok,
        latencies=latencies,
        oracle_violations=violations,
        accusations=accusations,
        certificates=certificates,
        conformance=conf_d,
        achieved_ident=achieved,
        honest_certified=honest_cert,
        breaches=breaches,
        horizon=horizon,
        corrupt=sorted(world.corrupt),
    )


def run_scenario(cfg: ScenarioConfig) -> tuple[World, RunReport]:
    world = build_world(cfg)
    world.run(cfg.horizon)
    report = summarize(world, cfg)
    for t in report.oracle_violations:
        world.trace.add(t, "oracle", {"violation": True, "wait": cfg.window})
    if report.conformance is not None and world.round:
        world.trace.add(world.round, "conformance", report.conformance)
    return world, report


# ---------------------------------------------------------------------------
# honest acquittal check (synchronous super-views never blame honest nodes)


def synchronous_superviews(world: World, period: int) -> list[int]:
    flags = world.sync_flags
    out = []
    for u in range(len(flags) // period):
        if all(flags[u * period : (u + 1) * period]):
            out.append(u)
    return out


def honest_blame_in_sync(world: World, k_views: int) -> list[tuple[int, int, frozenset]]:
    """(owner, super-view, honest nodes blamed) for every violation found."""
    period = 12 * world.delta * k_views
    hs = set(world.honest)
    bad = []
    sync_us = synchronous_superviews(world, period)
    for p in world.honest:
        tr = Transcript(p, world.round, world.processes[p].store)
        for u in sync_us:
            blamed = blame_superview(tr, u, k_views, world.delta, world.n, world.seed) & hs
            if blamed:
                bad.append((p, u, blamed))
    return bad


# ---------------------------------------------------------------------------
# output files and bundles


def write_outputs(world: World, report: RunReport, cfg: ScenarioConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    world.trace.write(out_dir / "trace.jsonl")
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    vals = [v for v in report.latencies.values() if v is not None]
    rows = [
        ("safety_ok", int(report.safety_ok)),
        ("transactions", len(report.latencies)),
        ("confirmed", len(vals)),
        ("mean_latency", "" if not vals else f"{statistics.fmean(vals):.3f}"),
        ("max_latency", "" if not vals else max(vals)),
        ("oracle_violations", len(report.oracle_violations)),
        ("first_violation", report.oracle_violations[0] if report.oracle_violations else ""),
        ("accusations", len(report.accusations)),
        ("certificates", len(report.certificates)),
        ("achieved_ident", report.achieved_ident),
        ("honest_certified", len(report.honest_certified)),
        ("conformant", "" if report.conformance is None else int(report.conformance["ok"])),
    ]
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(rows)
    if cfg.save_bundles and world.acc is not None and world.honest:
        agent = world.processes[world.honest[0]].agent
        for t0, bundle in sorted(agent.bundles.items()):
            path = out_dir / f"bundle_{t0}.json"
            path.write_text(json.dumps(bundle_to_dict(bundle, world.acc, t0)) + "\n")


def bundle_to_dict(bundle, acc: AccountabilitySettings, as_of: int) -> dict:
    return {
        "n": acc.n,
        "tau_al_max": acc.tau,
        "x": str(acc.x),
        "delta_x": str(acc.delta_x),
        "delta": acc.delta,
        "k_views": acc.k_views,
        "g": acc.g,
        "seed": acc.seed,
        "as_of": as_of,
        "submissions": {str(p): ([] if tr is None else [tr.to_dict()]) for p, tr in enumerate(bundle)},
    }


def adjudicate_bundle(data: dict, overrides: dict | None = None):
    """Offline adjudication of a serialized bundle; returns the full audit result."""
    params = dict(data)
    params.update({k: v for k, v in (overrides or {}).items() if v is not None})
    n = int(params["n"])
    as_of = int(params["as_of"])
    subs: dict[int, list[Transcript]] = {}
    for key, items in params.get("submissions", {}).items():
        owner = int(key)
        trs = []
        for item in items:
            try:
                trs.append(Transcript.from_dict(item, n))
            except (KeyError, ValueError, TypeError):
                trs.append(Transcript(owner, -1, MessageStore(n), "undecodable"))
        subs[owner] = trs
    bundle = sanitize_bundle(subs, n, as_of)
    pp = PsiParams(n, int(params["tau_al_max"]), Fraction(str(params["x"])), Fraction(str(params["delta_x"])), int(params["delta"]), int(params["seed"]))
    index = SuperViewIndex(int(params["delta"]), int(params["k_views"]), int(params["g"]), as_of)
    return psi(bundle, index, pp)
