"""Discrete-round network with adversary-controlled countdowns.

Each envelope starts with countdown ``delta``.  In a synchronous round every
in-flight countdown (including ones enqueued that round) drops by one; the
adversary may additionally lower any countdown at will.  An envelope whose
countdown reaches zero is delivered at the start of the next round, so a
fully synchronous network has latency exactly ``delta``.
"""

from __future__ import annotations

import json
import logging
import math
from bisect import bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable

from .accountability import (
    ACCOUNTABILITY_KINDS,
    AccountabilityAgent,
    AccountabilitySettings,
    AccusationMsg,
    PsiCache,
    TranscriptMsg,
)
from .consensus import Node, NodeState
from .types import RelayMsg, Transaction, unwrap

log = logging.getLogger(__name__)


class SignatureForgery(RuntimeError):
    """An adversary tried to emit content signed by an honest node."""


# ---------------------------------------------------------------------------
# partial-synchrony constraint


@dataclass(frozen=True)
class NetParams:
    delta: int
    delta_prime: int
    g: int
    x: Fraction

    def __post_init__(self):
        if self.delta < 1 or self.delta_prime < 1 or self.g < 1:
            raise ValueError("delta, delta_prime and g must be at least 1")
        if not 0 <= self.x <= 1:
            raise ValueError("x must lie in [0, 1]")


@dataclass
class Schedule:
    sync: list[bool]
    gst: int | None = None

    def flag(self, t: int) -> bool:
        if self.gst is not None and t >= self.gst:
            return True
        return self.sync[t]

    def __len__(self):
        return len(self.sync)


@dataclass(frozen=True)
class PsyncResult:
    ok: bool
    vacuous: bool = False
    offset: int | None = None
    window_start: int | None = None
    sync_periods: int | None = None
    required: int | None = None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "vacuous": self.vacuous,
            "offset": self.offset,
            "window_start": self.window_start,
            "sync_periods": self.sync_periods,
            "required": self.required,
        }


def validate_x_psync(schedule: Schedule, params: NetParams, aligned_only: bool = False) -> PsyncResult:
    """Check every period alignment and every window of ``g`` whole periods.

    A period counts as synchronous only if each of its rounds is.  Rounds at or
    after GST are synchronous by definition.
    """
    horizon = len(schedule)
    dp, g = params.delta_prime, params.g
    required = math.ceil((1 - Fraction(params.x)) * g)
    async_prefix = [0]
    for t in range(horizon):
        async_prefix.append(async_prefix[-1] + (0 if schedule.flag(t) else 1))
    if horizon < dp * g:
        return PsyncResult(True, vacuous=True, required=required)
    offsets = [0] if aligned_only else range(dp)
    for s in offsets:
        starts = range(s, horizon - dp + 1, dp)
        good = [async_prefix[a + dp] == async_prefix[a] for a in starts]
        if len(good) < g:
            continue
        count = sum(good[:g])
        for j in range(len(good) - g + 1):
            if j:
                count += good[j + g - 1] - good[j - 1]
            if count < required:
                return PsyncResult(False, offset=s, window_start=s + j * dp, sync_periods=count, required=required)
    return PsyncResult(True, required=required)


# ---------------------------------------------------------------------------
# trace


class Trace:
    """Append-only event log; each event is ``{round, kind, payload}``."""

    def __init__(self, level: str = "full"):
        if level not in ("full", "summary"):
            raise ValueError(f"unknown trace level {level!r}")
        self.level = level
        self.events: list[dict] = []
        self.meta: dict = {}

    def add(self, rnd: int, kind: str, payload: dict) -> None:
        self.events.append({"round": rnd, "kind": kind, "payload": payload})

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def parse(cls, text: str) -> "Trace":
        tr = cls()
        for line in text.splitlines():
            if line.strip():
                tr.events.append(json.loads(line))
        for e in tr.events:
            if e["kind"] == "setup":
                tr.meta = dict(e["payload"])
                break
        return tr

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]


# ---------------------------------------------------------------------------
# processes and envelopes


class HonestProcess:
    """Protocol node plus its accountability agent."""

    def __init__(self, me: int, n: int, delta: int, seed: int, acc: AccountabilitySettings | None, cache: PsiCache | None = None):
        self.me = me
        self.node = Node(NodeState(me, n, delta, seed))
        self.agent = AccountabilityAgent(me, self.node.state.received, acc, cache) if acc is not None else None

    @property
    def store(self):
        return self.node.state.received

    def step(self, t: int, delivered: Iterable[Any], injected: Iterable[Transaction]) -> list[Any]:
        consensus, acc = [], []
        for m in delivered:
            (acc if isinstance(m, ACCOUNTABILITY_KINDS) else consensus).append(m)
        out = self.node.step(t, consensus, injected)
        if self.agent is not None:
            out.extend(self.agent.step(t, acc))
        return out

    def drain_events(self) -> list[tuple[str, dict]]:
        ev = self.node.events
        self.node.events = []
        if self.agent is not None and self.agent.events:
            ev = ev + self.agent.events
            self.agent.events = []
        return ev


class MessageEnvelope:
    __slots__ = ("msg", "sender", "recipient", "send_round", "countdown")

    def __init__(self, msg, sender: int, recipient: int, send_round: int, countdown: int):
        self.msg = msg
        self.sender = sender
        self.recipient = recipient
        self.send_round = send_round
        self.countdown = countdown

    def __repr__(self):
        return f"Envelope({type(self.msg).__name__} {self.sender}->{self.recipient} @{self.send_round} cd={self.countdown})"


@dataclass
class Send:
    """An adversary emission: ``msg`` from corrupt ``sender``."""

    sender: int
    msg: Any
    recipients: Iterable[int] | None = None  # None: everyone else
    countdown: int | None = None  # None: delta


@dataclass
class AdversaryAction:
    sync: bool = True
    sends: list[Send] = field(default_factory=list)
    # returns a new (not larger) countdown for an in-flight envelope
    accelerate: Callable[[MessageEnvelope], int] | None = None


class WorldView:
    """What a strategy may observe: public parameters and the message traffic."""

    def __init__(self, world: "World"):
        self._w = world

    @property
    def round(self) -> int:
        return self._w.round

    @property
    def n(self) -> int:
        return self._w.n

    @property
    def delta(self) -> int:
        return self._w.delta

    @property
    def seed(self) -> int:
        return self._w.seed

    @property
    def honest(self) -> list[int]:
        return self._w.honest

    @property
    def acc_settings(self):
        return self._w.acc

    @property
    def psi_cache(self):
        return self._w.psi_cache

    @property
    def sent_this_round(self) -> list[MessageEnvelope]:
        return self._w.sent_this_round

    def inflight(self) -> list[MessageEnvelope]:
        return list(self._w.inflight)

    def injected(self, t: int) -> dict[int, list[Transaction]]:
        return self._w.tx_plan.get(t, {})


# ---------------------------------------------------------------------------
# world


class World:
    def __init__(
        self,
        n: int,
        delta: int,
        seed: int,
        adversary,
        tx_plan: dict[int, dict[int, list[Transaction]]] | None = None,
        acc: AccountabilitySettings | None = None,
        gst: int | None = None,
        trace_level: str = "full",
        net: NetParams | None = None,
        conformance_declared: bool = False,
    ):
        self.n = n
        self.delta = delta
        self.seed = seed
        self.adversary = adversary
        adversary.setup(n, delta, seed)
        self.corrupt = frozenset(adversary.corrupt)
        if any(not 0 <= c < n for c in self.corrupt):
            raise ValueError("corrupt ids out of range")
        self.honest = [p for p in range(n) if p not in self.corrupt]
        self.tx_plan = tx_plan or {}
        self.acc = acc
        self.gst = gst
        self.net = net
        self.conformance_declared = conformance_declared
        self.psi_cache = PsiCache()
        self.processes = {p: HonestProcess(p, n, delta, seed, acc, self.psi_cache) for p in self.honest}
        self.inflight: list[MessageEnvelope] = []
        self.due: list[MessageEnvelope] = []
        self._inflight_keys: Counter = Counter()
        self.round = 0
        self.sync_flags: list[bool] = []
        self.sent_this_round: list[MessageEnvelope] = []
        self.trace = Trace(trace_level)
        self.trace.meta = {
            "n": n,
            "delta": delta,
            "seed": seed,
            "honest": list(self.honest),
            "corrupt": sorted(self.corrupt),
            "adversary": getattr(adversary, "name", type(adversary).__name__),
        }
        self.honest_produced: set = set()
        self._checked: dict[int, Any] = {}
        self.first_delivery: dict[tuple[int, Any], int] = {}
        self.view = WorldView(self)
        adversary.bind(self.view)

    # -- helpers -----------------------------------------------------------

    def _enqueue(self, msg, sender: int, recipient: int, countdown: int) -> None:
        env = MessageEnvelope(msg, sender, recipient, self.round, countdown)
        self.inflight.append(env)
        self._inflight_keys[(recipient, unwrap(msg))] += 1
        self.sent_this_round.append(env)
        if self.trace.level == "full":
            self.trace.add(self.round, "send", {
                "sender": sender, "recipient": recipient, "type": type(msg).__name__,
                "msg": msg.digest, "countdown": countdown,
            })

    def _broadcast_honest(self, p: int, msg) -> None:
        d = self.delta
        if isinstance(msg, RelayMsg):
            inner = msg.inner
            for q in range(self.n):
                if q == p or self._inflight_keys.get((q, inner)):
                    continue
                proc = self.processes.get(q)
                if proc is not None and inner in proc.store.receipt:
                    continue
                self._enqueue(msg, p, q, d)
        else:
            for q in range(self.n):
                if q != p:
                    self._enqueue(msg, p, q, d)

    def _check_signature(self, send: Send) -> None:
        if send.sender not in self.corrupt:
            raise SignatureForgery(f"adversary sent as honest node {send.sender}")
        msg = send.msg
        if isinstance(msg, RelayMsg) and msg.signer not in self.corrupt and msg not in self.honest_produced:
            raise SignatureForgery(f"forged relay wrapper of honest node {msg.signer}")
        inner = unwrap(msg)
        if inner.signer in self.corrupt:
            if isinstance(inner, TranscriptMsg):
                self._check_entries(inner.transcript)
            return
        if inner not in self.honest_produced:
            raise SignatureForgery(f"forged {type(inner).__name__} of honest node {inner.signer}")

    def _check_entries(self, tr) -> None:
        if id(tr) in self._checked:
            return
        for m, _ in tr.store.entries():
            if m.signer not in self.corrupt and m not in self.honest_produced:
                raise SignatureForgery(f"transcript of {tr.owner} carries a forged message of {m.signer}")
        self._checked[id(tr)] = tr

    # -- the round -------------------------------------------------------------

    def advance_round(self) -> None:
        t = self.round
        tr = self.trace
        full = tr.level == "full"
        if t == 0:
            tr.add(0, "setup", dict(self.trace.meta))
        self.sent_this_round = []

        # 1. deliveries scheduled at the end of the previous round
        per_node: dict[int, list] = defaultdict(list)
        corrupt_deliveries: list[MessageEnvelope] = []
        # canonical order within a round, so that equal delivery sets give equal stores
        self.due.sort(key=lambda e: (e.recipient, unwrap(e.msg).digest, e.msg.digest, e.sender))
        for env in self.due:
            key = (env.recipient, unwrap(env.msg))
            c = self._inflight_keys[key] - 1
            if c:
                self._inflight_keys[key] = c
            else:
                del self._inflight_keys[key]
            fresh = key not in self.first_delivery
            if fresh:
                self.first_delivery[key] = t
            if full:
                tr.add(t, "deliver", {
                    "sender": env.sender, "recipient": env.recipient,
                    "type": type(env.msg).__name__, "msg": env.msg.digest, "fresh": fresh,
                })
            if env.recipient in self.corrupt:
                corrupt_deliveries.append(env)
            else:
                per_node[env.recipient].append(env.msg)
        self.due = []

        # 2. honest steps
        injected = self.tx_plan.get(t, {})
        for p in self.honest:
            for tx in injected.get(p, ()):
                tr.add(t, "inject", {"node": p, "tx": tx.id})
        emissions = []
        for p in self.honest:
            proc = self.processes[p]
            out = proc.step(t, per_node.get(p, ()), injected.get(p, ()))
            for kind, payload in proc.drain_events():
                payload = dict(payload, node=p)
                tr.add(t, kind, payload)
            for m in out:
                self.honest_produced.add(m)
                if isinstance(m, RelayMsg):
                    self.honest_produced.add(unwrap(m))
            emissions.append((p, out))
        for p, out in emissions:
            for m in out:
                self._broadcast_honest(p, m)

        # 3. adversary
        self.adversary.observe(t, corrupt_deliveries)
        action = self.adversary.act(t, self.view) or AdversaryAction()
        for send in action.sends:
            self._check_signature(send)
            recipients = range(self.n) if send.recipients is None else send.recipients
            cd = self.delta if send.countdown is None else max(0, min(self.delta, send.countdown))
            for q in recipients:
                if q != send.sender:
                    self._enqueue(send.msg, send.sender, q, cd)
        for kind, payload in getattr(self.adversary, "drain_events", lambda: [])():
            tr.add(t, kind, payload)

        # 4. countdowns
        sync = True if (self.gst is not None and t >= self.gst) else bool(action.sync)
        self.sync_flags.append(sync)
        tr.add(t, "sync_flag", {"sync": sync})
        accel = action.accelerate
        keep = []
        for env in self.inflight:
            if sync and env.countdown > 0:
                env.countdown -= 1
            if accel is not None and env.countdown > 0:
                new = accel(env)
                if new is not None and new < env.countdown:
                    env.countdown = max(0, new)
            if env.countdown == 0:
                self.due.append(env)
            else:
                keep.append(env)
        self.inflight = keep
        self.round = t + 1

    def run(self, horizon: int) -> Trace:
        while self.round < horizon:
            self.advance_round()
        return self.trace

    # -- results ---------------------------------------------------------------

    def schedule(self) -> Schedule:
        return Schedule(list(self.sync_flags), self.gst)

    def conformance(self) -> PsyncResult | None:
        if self.net is None:
            return None
        return validate_x_psync(self.schedule(), self.net)

    def certificates(self) -> dict[tuple[int, int], Any]:
        out = {}
        for p in self.honest:
            agent = self.processes[p].agent
            if agent is None:
                continue
            for key, cert in agent.certificates.items():
                out.setdefault(key, cert)
        return out


def advance_round(world: World, adversary=None) -> World:
    if adversary is not None and adversary is not world.adversary:
        raise ValueError("the world is bound to a different adversary")
    world.advance_round()
    return world


def run_simulation(config, horizon: int | None = None) -> Trace:
    """Build a world from a scenario config and run it to ``horizon``."""
    from .harness import build_world

    world = build_world(config)
    return world.run(config.horizon if horizon is None else horizon)
