"""Adversary strategies: corrupt-node behaviour plus control of the network schedule.

Strategies see the public parameters, the traffic honest nodes put on the
wire, and whatever is delivered to corrupt nodes.  They never see honest
nodes' private state.  Corrupt nodes that "follow the protocol" do so by
running a private copy of the honest process and filtering its output.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from .accountability import AccusationMsg, Transcript, TranscriptMsg
from .analysis import as_fraction
from .consensus import leader_for_view
from .netsim import AdversaryAction, HonestProcess, MessageEnvelope, Send
from .types import Block, ProposalMsg, RelayMsg, Transaction, VoteMsg, unwrap

__all__ = [
    "AdversaryStrategy",
    "NetworkPolicy",
    "SyncPolicy",
    "BurstPolicy",
    "GstChaosPolicy",
    "make_honest",
    "make_crash",
    "make_silent_censor",
    "make_split_brain",
    "make_partition_cycler",
    "make_equivocating_leader",
    "make_transcript_framer",
    "make_chaos",
    "conformant_bursts",
    "build_adversary",
    "REGISTRY",
]


# ---------------------------------------------------------------------------
# network policies


class NetworkPolicy:
    """Chooses the per-round sync flag and optional countdown accelerations."""

    def bind(self, view) -> None:
        self.view = view

    def sync(self, t: int) -> bool:
        return True

    def accelerate(self, t: int) -> Callable[[MessageEnvelope], int] | None:
        return None


class SyncPolicy(NetworkPolicy):
    """Always synchronous, no extra decrements."""


class BurstPolicy(NetworkPolicy):
    """Asynchronous exactly during the given ``(start, length)`` bursts."""

    def __init__(self, bursts: Iterable[tuple[int, int]]):
        self.bursts = sorted((int(a), int(b)) for a, b in bursts)
        self._async = set()
        for start, length in self.bursts:
            self._async.update(range(start, start + length))

    def sync(self, t: int) -> bool:
        return t not in self._async


class GstChaosPolicy(NetworkPolicy):
    """Random synchrony and random early deliveries before GST, synchronous after."""

    def __init__(self, gst: int, seed: int, p_sync: float = 0.3, p_fast: float = 0.2):
        self.gst = gst
        self.rng = random.Random(f"gst-chaos:{seed}")
        self.p_sync = p_sync
        self.p_fast = p_fast

    def sync(self, t: int) -> bool:
        return t >= self.gst or self.rng.random() < self.p_sync

    def accelerate(self, t: int):
        if t >= self.gst:
            return None
        rng, p = self.rng, self.p_fast
        return lambda env: 0 if rng.random() < p else env.countdown


def conformant_bursts(horizon: int, delta_prime: int, g: int, x, seed: int, every: int | None = None) -> list[tuple[int, int]]:
    """Bursts of at most ``delta_prime`` rounds, spaced so any g-period window
    (at any alignment) loses at most ``floor(x*g)`` periods."""
    from fractions import Fraction

    budget = int(Fraction(x) * g)  # async periods tolerated per window
    if budget < 2:
        return []
    # each burst touches at most two periods; allow budget // 2 bursts per g+1 periods
    per_window = budget // 2
    spacing = every or -(-(g + 2) // per_window)
    rng = random.Random(f"bursts:{seed}")
    bursts = []
    p = 1 + rng.randrange(spacing)
    while (p + 1) * delta_prime < horizon:
        length = 1 + rng.randrange(delta_prime)
        start = p * delta_prime + rng.randrange(delta_prime)
        bursts.append((start, length))
        p += spacing
    return bursts


# ---------------------------------------------------------------------------
# base classes


class AdversaryStrategy:
    name = "base"

    def __init__(self, corrupt: Iterable[int] = (), network: NetworkPolicy | None = None):
        self.corrupt = frozenset(corrupt)
        self.network = network or SyncPolicy()
        self.events: list[tuple[str, dict]] = []

    def setup(self, n: int, delta: int, seed: int) -> None:
        """Called before the corrupt set is read; may choose it from public data."""
        self.n, self.delta, self.seed = n, delta, seed

    def bind(self, view) -> None:
        self.view = view
        self.network.bind(view)

    def observe(self, t: int, delivered: list[MessageEnvelope]) -> None:
        pass

    def sends(self, t: int) -> list[Send]:
        return []

    def act(self, t: int, view) -> AdversaryAction:
        return AdversaryAction(self.network.sync(t), self.sends(t), self.network.accelerate(t))

    def drain_events(self):
        ev, self.events = self.events, []
        return ev


class MimicAdversary(AdversaryStrategy):
    """Corrupt nodes run private honest processes; ``transform`` edits their output."""

    mimic_accountability = True

    def __init__(self, corrupt=(), network=None, mimicked: Iterable[int] | None = None):
        super().__init__(corrupt, network)
        self._mimicked = None if mimicked is None else frozenset(mimicked)

    def bind(self, view) -> None:
        super().bind(view)
        who = self.corrupt if self._mimicked is None else self._mimicked
        acc = view.acc_settings if self.mimic_accountability else None
        self.mimics = {c: HonestProcess(c, view.n, view.delta, view.seed, acc, view.psi_cache) for c in sorted(who)}
        self.inbox: dict[int, list] = defaultdict(list)

    def observe(self, t, delivered):
        for env in delivered:
            if env.recipient in self.mimics:
                self.inbox[env.recipient].append(env.msg)

    def transform(self, c: int, t: int, out: list) -> list[Send]:
        return [Send(c, m) for m in out]

    def sends(self, t: int) -> list[Send]:
        injected = self.view.injected(t)
        result = []
        for c, proc in self.mimics.items():
            msgs = self.inbox.pop(c, [])
            out = proc.step(t, msgs, injected.get(c, ()))
            proc.drain_events()
            result.extend(self.transform(c, t, out))
        return result


# ---------------------------------------------------------------------------
# concrete strategies


class Honest(AdversaryStrategy):
    name = "honest"


class Crash(AdversaryStrategy):
    name = "crash"


class SilentCensor(AdversaryStrategy):
    """Corrupt nodes never propose, vote, relay or submit anything."""

    name = "silent_censor"

    def __init__(self, f: int, nodes: Iterable[int] | None = None, network=None):
        super().__init__(nodes or (), network)
        self.f = f
        self._nodes = None if nodes is None else frozenset(nodes)

    def setup(self, n, delta, seed):
        super().setup(n, delta, seed)
        if self._nodes is None:
            self.corrupt = frozenset(range(n - self.f, n))
        if len(self.corrupt) != self.f:
            raise ValueError("silent censor node list must have f entries")


class EquivocatingLeader(MimicAdversary):
    """Corrupt leaders send conflicting proposals to two halves.

    Either ``nodes`` fixes the corrupt set (they equivocate whenever they
    lead, optionally only in ``views``), or the leaders of ``views`` are
    corrupted.
    """

    name = "equivocating_leader"

    def __init__(self, views: Iterable[int] = (), network=None, nodes: Iterable[int] | None = None):
        super().__init__((), network)
        self.views = frozenset(int(v) for v in views)
        self.nodes = None if nodes is None else frozenset(int(p) for p in nodes)
        if self.nodes is None and not self.views:
            raise ValueError("equivocating leader needs views or nodes")

    def setup(self, n, delta, seed):
        super().setup(n, delta, seed)
        if self.nodes is not None:
            self.corrupt = self.nodes
        else:
            self.corrupt = frozenset(leader_for_view(v, n, seed) for v in self.views)

    def _targets(self, view: int) -> bool:
        return not self.views or view in self.views

    def transform(self, c, t, out):
        result = []
        for m in out:
            if isinstance(m, ProposalMsg) and self._targets(m.view):
                b1 = m.block
                alt_txs = () if b1.txs else (Transaction.from_payload(f"equivocation:{m.view}"),)
                b2 = Block(b1.view, b1.justify, alt_txs, b1.proposer)
                others = [q for q in range(self.n) if q != c]
                half = len(others) // 2
                result.append(Send(c, m, others[:half]))
                result.append(Send(c, ProposalMsg(m.view, b2, c), others[half:]))
                self.events.append(("equivocate", {"node": c, "view": m.view, "blocks": [b1.id, b2.id]}))
            else:
                result.append(Send(c, m))
        return result


class SplitBrain(AdversaryStrategy):
    """P2 plays honest towards P1 and, separately, towards P3, while the
    network keeps P1 and P3 apart until ``heal_round``."""

    name = "split_brain"

    def __init__(self, p1, p2, p3, heal_round: int):
        super().__init__(p2, None)
        self.p1, self.p2, self.p3 = frozenset(p1), frozenset(p2), frozenset(p3)
        self.heal_round = heal_round
        if (self.p1 & self.p2) or (self.p1 & self.p3) or (self.p2 & self.p3):
            raise ValueError("split-brain groups must be disjoint")

    def setup(self, n, delta, seed):
        super().setup(n, delta, seed)
        if self.p1 | self.p2 | self.p3 != frozenset(range(n)):
            raise ValueError("split-brain groups must cover all nodes")

    def bind(self, view):
        super().bind(view)
        acc = view.acc_settings
        self.sides = {
            "a": {c: HonestProcess(c, view.n, view.delta, view.seed, acc, view.psi_cache) for c in sorted(self.p2)},
            "b": {c: HonestProcess(c, view.n, view.delta, view.seed, acc, view.psi_cache) for c in sorted(self.p2)},
        }
        self.inbox = {"a": defaultdict(list), "b": defaultdict(list)}
        self.internal = {"a": defaultdict(list), "b": defaultdict(list)}

    def observe(self, t, delivered):
        for env in delivered:
            side = "a" if env.sender in self.p1 else "b" if env.sender in self.p3 else None
            if side is not None:
                self.inbox[side][env.recipient].append(env.msg)

    def sends(self, t):
        injected = self.view.injected(t)
        result = []
        for side, procs in self.sides.items():
            audience = sorted(self.p1 if side == "a" else self.p3)
            staged = defaultdict(list)
            for c, proc in procs.items():
                msgs = self.inbox[side].pop(c, []) + self.internal[side].pop(c, [])
                out = proc.step(t, msgs, injected.get(c, ()))
                proc.drain_events()
                for m in out:
                    if audience:
                        result.append(Send(c, m, audience))
                    for c2 in procs:
                        if c2 != c:
                            staged[c2].append(m)
            self.internal[side] = staged
        return result

    def act(self, t, view):
        if t >= self.heal_round:
            return AdversaryAction(True, self.sends(t), None)
        p1, p3 = self.p1, self.p3

        def accelerate(env):
            s, r = env.sender, env.recipient
            if (s in p1 and r in p3) or (s in p3 and r in p1):
                return env.countdown
            return 0

        return AdversaryAction(False, self.sends(t), accelerate)


class PartitionCycler(AdversaryStrategy):
    """One execution of the cyclic partition family.

    Groups ``P_0 .. P_{k+1}``: ``P_0`` is crashed, group ``honest_group`` and
    ``P_{k+1}`` are honest, every other ``P_j`` is corrupt but indistinguishable
    from honest.  The first ``window`` rounds are cut into ``k`` intervals; in
    interval ``l`` group ``P_{k-l+1}`` is isolated (its traffic with everyone
    else is held until the interval ends).  Isolation of the honest group is
    real network asynchrony; isolation of a corrupt group is emulated by
    buffering its private processes' input and output.
    """

    name = "partition_cycler"

    def __init__(self, k: int, groups, honest_group: int, window: int | None = None):
        groups = [frozenset(g) for g in groups]
        if len(groups) != k + 2:
            raise ValueError(f"need k+2={k + 2} groups, got {len(groups)}")
        if not 1 <= honest_group <= k:
            raise ValueError("honest_group must lie in 1..k")
        self.k = k
        self.groups = groups
        self.i = honest_group
        self.window = window
        corrupt = set(groups[0])
        for j in range(1, k + 1):
            if j != honest_group:
                corrupt |= groups[j]
        super().__init__(corrupt, None)
        self.group_of = {p: j for j, g in enumerate(groups) for p in g}

    def setup(self, n, delta, seed):
        super().setup(n, delta, seed)
        if set(self.group_of) != set(range(n)):
            raise ValueError("partition groups must cover all nodes exactly once")

    def bind(self, view):
        super().bind(view)
        if self.window is None:
            acc = view.acc_settings
            if acc is None:
                raise ValueError("partition cycler needs a window (or accountability settings)")
            self.window = acc.window
        if self.window % self.k:
            raise ValueError(f"k={self.k} does not divide the window {self.window}")
        step = self.window // self.k
        # interval of group j: [a_j, b_j)
        self.cut = {j: ((self.k - j) * step, (self.k - j + 1) * step) for j in range(1, self.k + 1)}
        emulated = sorted(p for p in self.corrupt if self.group_of[p] != 0)
        acc = view.acc_settings
        self.mimics = {c: HonestProcess(c, view.n, view.delta, view.seed, acc, view.psi_cache) for c in emulated}
        self.pending_in: dict[int, list[tuple[int, Any]]] = defaultdict(list)  # release round -> (node, msg)
        self.pending_out: dict[int, list[Send]] = defaultdict(list)
        self.internal: dict[int, list[tuple[int, Any]]] = defaultdict(list)

    def _held(self, a: int, b: int, sent: int) -> tuple[int, int] | None:
        """(isolated group, release round) if traffic a->b sent at ``sent`` is held."""
        for j, (lo, hi) in self.cut.items():
            if lo <= sent < hi:
                if (self.group_of[a] == j) != (self.group_of[b] == j):
                    return j, hi
                return None
        return None

    def observe(self, t, delivered):
        for env in delivered:
            c = env.recipient
            if c not in self.mimics:
                continue
            held = self._held(env.sender, c, env.send_round)
            if held is not None and held[0] != self.i and held[1] > t:
                self.pending_in[held[1]].append((c, env.msg))
            else:
                self.internal[t].append((c, env.msg))

    def sends(self, t):
        injected = self.view.injected(t)
        inbox = defaultdict(list)
        for c, m in self.internal.pop(t, []):
            inbox[c].append(m)
        for c, m in self.pending_in.pop(t, []):
            inbox[c].append(m)
        result = []
        for c, proc in self.mimics.items():
            out = proc.step(t, inbox.get(c, ()), injected.get(c, ()))
            proc.drain_events()
            for m in out:
                direct = []
                for q in range(self.n):
                    if q == c or self.group_of[q] == 0:
                        continue
                    held = self._held(c, q, t)
                    emulated_hold = held is not None and held[0] != self.i
                    if q in self.mimics:
                        when = held[1] if held is not None else t + 1
                        self.internal[max(when, t + 1)].append((q, m))
                    elif emulated_hold:
                        self.pending_out[held[1] - 1].append(Send(c, m, [q], 0))
                    else:
                        direct.append(q)
                if direct:
                    result.append(Send(c, m, direct))
        result.extend(self.pending_out.pop(t, []))
        return result

    def act(self, t, view):
        lo, hi = self.cut[self.i]
        honest_cut = self.groups[self.i]
        if lo <= t < hi:
            if t == hi - 1:
                return AdversaryAction(False, self.sends(t), lambda env: 0)

            def accelerate(env):
                if (env.sender in honest_cut) != (env.recipient in honest_cut):
                    return env.countdown
                return 0

            return AdversaryAction(False, self.sends(t), accelerate)
        return AdversaryAction(True, self.sends(t), lambda env: 0)


class Chaos(MimicAdversary):
    """Random Byzantine behaviour for safety testing.

    Corrupt nodes follow the protocol but randomly drop messages, stage-1 and
    stage-2 vote for every block they see, and equivocate when leading; the
    network is randomly asynchronous with random early deliveries.
    """

    name = "chaos"
    mimic_accountability = False

    def __init__(self, f: int, p_sync: float = 0.5, p_fast: float = 0.3, p_drop: float = 0.2, nodes=None):
        super().__init__(nodes or ())
        self.f = f
        self._nodes = None if nodes is None else frozenset(nodes)
        self.p_sync, self.p_fast, self.p_drop = p_sync, p_fast, p_drop

    def setup(self, n, delta, seed):
        super().setup(n, delta, seed)
        self.rng = random.Random(f"chaos:{seed}")
        if self._nodes is None:
            self.corrupt = frozenset(self.rng.sample(range(n), self.f))
        self.seen_blocks: dict[int, set] = defaultdict(set)

    def observe(self, t, delivered):
        super().observe(t, delivered)
        for env in delivered:
            inner = unwrap(env.msg)
            if isinstance(inner, ProposalMsg):
                self.seen_blocks[inner.view].add((inner.block.view, inner.block.id))

    def transform(self, c, t, out):
        rng = self.rng
        result = []
        for m in out:
            r = rng.random()
            if r < self.p_drop:
                continue
            if isinstance(m, VoteMsg):
                for bview, bid in sorted(self.seen_blocks.get(m.view, ())):
                    if bid != m.block_id:
                        result.append(Send(c, VoteMsg(m.stage, m.view, bid, c), self._subset(c)))
            if isinstance(m, ProposalMsg) and r < 0.5:
                b = m.block
                alt = Block(b.view, b.justify, (Transaction.from_payload(f"chaos:{c}:{t}"),), c)
                result.append(Send(c, ProposalMsg(m.view, alt, c), self._subset(c)))
            result.append(Send(c, m, self._subset(c)))
        return result

    def _subset(self, c):
        others = [q for q in range(self.n) if q != c]
        if self.rng.random() < 0.5:
            return others
        return [q for q in others if self.rng.random() < 0.5] or others[:1]

    def act(self, t, view):
        rng = self.rng
        sync = rng.random() < self.p_sync
        p = self.p_fast
        accel = lambda env: 0 if rng.random() < p else env.countdown  # noqa: E731
        return AdversaryAction(sync, self.sends(t), accel)


class TranscriptFramer(AdversaryStrategy):
    """Wraps a base strategy and attacks the accountability layer.

    Alterations:
      ``omit``        corrupt transcripts drop every honest vote and VoteLive and
                      claim earlier receipt of proposals;
      ``equivocate``  one corrupt node signs two different transcripts per round;
      ``split``       one corrupt node shows different transcripts to two halves;
      ``accuse``      corrupt nodes accuse every honest node at every boundary.
    """

    name = "framer"
    ALL = ("omit", "equivocate", "split", "accuse")

    def __init__(self, base: AdversaryStrategy, alterations: Iterable[str] = ALL):
        self.base = base
        self.alterations = frozenset(alterations)
        unknown = self.alterations - set(self.ALL)
        if unknown:
            raise ValueError(f"unknown framer alterations {sorted(unknown)}")
        super().__init__(base.corrupt, None)

    def setup(self, n, delta, seed):
        super().setup(n, delta, seed)
        self.base.setup(n, delta, seed)
        self.corrupt = self.base.corrupt

    def bind(self, view):
        self.view = view
        self.base.bind(view)
        self.seen: dict[Any, int] = {}

    def observe(self, t, delivered):
        self.base.observe(t, delivered)
        for env in delivered:
            inner = unwrap(env.msg)
            if isinstance(inner, (TranscriptMsg, AccusationMsg)):
                continue
            self.seen.setdefault(inner, t)

    def _fabricate(self, owner: int, as_of: int, variant: int) -> Transcript:
        honest = set(self.view.honest)
        d = self.view.delta
        entries = []
        for m, r in self.seen.items():
            if r > as_of:
                continue
            if isinstance(m, VoteMsg) or type(m).__name__ == "VoteLiveMsg":
                if m.signer in honest:
                    continue
            if isinstance(m, ProposalMsg):
                r = max(0, r - d * (1 + variant))
            entries.append((m, r))
        return Transcript.from_entries(owner, as_of, entries, self.view.n)

    def act(self, t, view):
        action = self.base.act(t, view)
        if not self.alterations:
            return action
        sends = [s for s in action.sends if not isinstance(unwrap(s.msg), TranscriptMsg)] if "omit" in self.alterations else list(action.sends)
        acc = view.acc_settings
        if acc is not None and t > 0 and t % acc.period == 0 and self.corrupt:
            corrupt = sorted(self.corrupt)
            honest = list(view.honest)
            for c in corrupt:
                if "omit" in self.alterations:
                    sends.append(Send(c, TranscriptMsg(self._fabricate(c, t, 0), c)))
                if c == corrupt[0] and "equivocate" in self.alterations:
                    sends.append(Send(c, TranscriptMsg(self._fabricate(c, t, 1), c)))
                if c == corrupt[-1] and "split" in self.alterations:
                    half = honest[: len(honest) // 2]
                    sends.append(Send(c, TranscriptMsg(self._fabricate(c, t, 2), c), half))
                if "accuse" in self.alterations:
                    for back in range(0, 3):
                        vr = t - back * acc.period
                        if vr > 0:
                            sends.append(Send(c, AccusationMsg(c, tuple(honest), vr, c)))
        return AdversaryAction(action.sync, sends, action.accelerate)

    def drain_events(self):
        return self.base.drain_events()


# ---------------------------------------------------------------------------
# constructors and registry


def make_honest(network: NetworkPolicy | None = None) -> AdversaryStrategy:
    return Honest((), network)


def make_crash(crash_set: Iterable[int], network: NetworkPolicy | None = None) -> AdversaryStrategy:
    return Crash(crash_set, network)


def make_silent_censor(f: int, nodes: Iterable[int] | None = None, network: NetworkPolicy | None = None) -> AdversaryStrategy:
    return SilentCensor(f, nodes, network)


def make_split_brain(P1, P2, P3, heal_round: int) -> AdversaryStrategy:
    return SplitBrain(P1, P2, P3, heal_round)


def make_partition_cycler(k: int, groups, honest_group: int = 1, window: int | None = None) -> AdversaryStrategy:
    return PartitionCycler(k, groups, honest_group, window)


def make_equivocating_leader(views: Iterable[int] = (), network: NetworkPolicy | None = None, nodes=None) -> AdversaryStrategy:
    return EquivocatingLeader(views, network, nodes)


def make_transcript_framer(base: AdversaryStrategy, alterations: Iterable[str] = TranscriptFramer.ALL) -> AdversaryStrategy:
    return TranscriptFramer(base, alterations)


def make_chaos(f: int, **kw) -> AdversaryStrategy:
    return Chaos(f, **kw)


def _network_from(spec: dict | None, seed: int) -> NetworkPolicy:
    if not spec:
        return SyncPolicy()
    kind = spec.get("kind", "sync")
    if kind == "sync":
        return SyncPolicy()
    if kind == "bursts":
        return BurstPolicy(spec["bursts"])
    if kind == "conformant_bursts":
        return BurstPolicy(conformant_bursts(
            int(spec["horizon"]), int(spec["delta_prime"]), int(spec["g"]), as_fraction(spec["x"]), seed, spec.get("every")
        ))
    if kind == "gst_chaos":
        return GstChaosPolicy(int(spec["gst"]), seed, spec.get("p_sync", 0.3), spec.get("p_fast", 0.2))
    raise ValueError(f"unknown network policy {kind!r}")


def _build_honest(p, seed):
    return make_honest(_network_from(p.get("network"), seed))


def _build_crash(p, seed):
    return make_crash(p.get("nodes", ()), _network_from(p.get("network"), seed))


def _build_censor(p, seed):
    return make_silent_censor(int(p["f"]), p.get("nodes"), _network_from(p.get("network"), seed))


def _build_split(p, seed):
    return make_split_brain(p["p1"], p["p2"], p["p3"], int(p["heal_round"]))


def _build_cycler(p, seed):
    return make_partition_cycler(int(p["k"]), p["groups"], int(p.get("honest_group", 1)), p.get("window"))


def _build_equiv(p, seed):
    return make_equivocating_leader(p.get("views", ()), _network_from(p.get("network"), seed), p.get("nodes"))


def _build_chaos(p, seed):
    kw = {k: p[k] for k in ("p_sync", "p_fast", "p_drop", "nodes") if k in p}
    return make_chaos(int(p["f"]), **kw)


def _build_framer(p, seed):
    return make_transcript_framer(build_adversary(p["base"], seed), p.get("alterations", TranscriptFramer.ALL))


REGISTRY: dict[str, Callable[[dict, int], AdversaryStrategy]] = {
    "honest": _build_honest,
    "crash": _build_crash,
    "silent_censor": _build_censor,
    "split_brain": _build_split,
    "partition_cycler": _build_cycler,
    "equivocating_leader": _build_equiv,
    "chaos": _build_chaos,
    "framer": _build_framer,
}


def build_adversary(spec: dict | None, seed: int) -> AdversaryStrategy:
    spec = spec or {"kind": "honest"}
    kind = spec.get("kind")
    if kind not in REGISTRY:
        raise ValueError(f"unknown adversary kind {kind!r}")
    return REGISTRY[kind](spec.get("params", {}), seed)
