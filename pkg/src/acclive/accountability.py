"""Transcript-based blame, the critical-subset adjudication rule, and accusations.

Pipeline run by every honest node:

1. at each super-view boundary, broadcast a signed snapshot of its message store;
2. if no view in the last ``g`` periods reached a VoteLive quorum, wait another
   ``g`` periods for transcripts, sanitize the bundle and adjudicate;
3. broadcast the accused set; a strict majority of accusers naming the same
   node for the same violation round forms a certificate of guilt.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping

from .consensus import is_valid_block, leader_for_view
from .store import INF, MessageStore, quorum_threshold
from .types import (
    CONSENSUS_KINDS,
    MalformedMessage,
    ProposalMsg,
    RelayMsg,
    _Digestible,
    digest_of,
    message_from_dict,
    register_kind,
)

log = logging.getLogger(__name__)

BOTTOM = None  # a missing/discarded transcript slot


# ---------------------------------------------------------------------------
# transcripts and accountability messages


class Transcript:
    """A node's store as of some round, signed by its owner.

    Honest transcripts are views over the owner's live store; receipts after
    ``as_of`` are invisible.  Fabricated ones own a private store and remember
    whether any entry claims a receipt after ``as_of``.
    """

    __slots__ = ("owner", "as_of", "store", "malformed", "_digest")

    def __init__(self, owner: int, as_of: int, store: MessageStore, malformed: str | None = None):
        self.owner = owner
        self.as_of = as_of
        self.store = store
        self.malformed = malformed
        self._digest = None

    @classmethod
    def from_entries(cls, owner: int, as_of: int, entries: Iterable[tuple[Any, int]], n: int) -> "Transcript":
        entries = list(entries)
        problem = None
        clean = []
        for msg, rnd in entries:
            if not isinstance(msg, CONSENSUS_KINDS):
                problem = problem or f"entry of type {type(msg).__name__}"
                continue
            if not isinstance(rnd, int) or rnd < 0:
                problem = problem or f"bad receipt round {rnd!r}"
                continue
            if rnd > as_of:
                problem = problem or f"receipt {rnd} after as_of {as_of}"
            clean.append((msg, rnd))
        return cls(owner, as_of, MessageStore.from_entries(n, clean), problem)

    def entries(self):
        return self.store.entries(self.as_of)

    @property
    def digest(self) -> str:
        if self._digest is None:
            k = self.store.count_as_of(self.as_of)
            body = digest_of([self.owner, self.as_of, self.store.prefix_digest(k), self.malformed])
            self._digest = body
        return self._digest

    def same_content(self, other: "Transcript") -> bool:
        return self is other or (
            self.owner == other.owner and self.as_of == other.as_of and self.digest == other.digest
        )

    def to_dict(self) -> dict:
        return {
            "owner": self.owner,
            "as_of": self.as_of,
            "entries": [[m.to_dict(), r] for m, r in self.entries()],
        }

    @classmethod
    def from_dict(cls, d: dict, n: int) -> "Transcript":
        entries = []
        for item in d["entries"]:
            m, r = item
            entries.append((message_from_dict(m), int(r)))
        return cls.from_entries(int(d["owner"]), int(d["as_of"]), entries, n)


@dataclass(frozen=True, eq=False)
class TranscriptMsg(_Digestible):
    transcript: Transcript
    signer: int

    kind = "transcript"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "transcript_digest": self.transcript.digest, "signer": self.signer}


@dataclass(frozen=True)
class AccusationMsg(_Digestible):
    accuser: int
    accused: tuple[int, ...]
    violation_round: int
    signer: int

    kind = "accusation"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "accuser": self.accuser,
            "accused": list(self.accused),
            "violation_round": self.violation_round,
            "signer": self.signer,
        }


register_kind(
    "accusation",
    lambda d: AccusationMsg(int(d["accuser"]), tuple(int(a) for a in d["accused"]), int(d["violation_round"]), int(d["signer"])),
)

ACCOUNTABILITY_KINDS = (TranscriptMsg, AccusationMsg)


@dataclass(frozen=True)
class CertificateOfGuilt:
    accused: int
    violation_round: int
    supporting: frozenset  # accuser ids


# ---------------------------------------------------------------------------
# super-view indexing and parameters


@dataclass(frozen=True)
class SuperViewIndex:
    """The ``g`` most recent super-views before ``as_of`` (each ``k_views`` views)."""

    delta: int
    k_views: int
    g: int
    as_of: int

    @property
    def period(self) -> int:
        return 12 * self.delta * self.k_views

    @property
    def superviews(self) -> list[int]:
        end = self.as_of // self.period
        return list(range(max(0, end - self.g), end))

    def views(self, u: int) -> range:
        return range(u * self.k_views, (u + 1) * self.k_views)

    def rounds(self, u: int) -> range:
        return range(u * self.period, (u + 1) * self.period)


@dataclass(frozen=True)
class PsiParams:
    n: int
    tau: int  # maximum adversary budget the rule is designed for
    x: Fraction
    delta_x: Fraction
    delta: int
    seed: int

    def __post_init__(self):
        if 2 * self.tau >= self.n:
            raise ValueError("tau must lie below n/2")
        if self.x + self.delta_x >= Fraction(1, 2):
            raise ValueError("x + delta_x must stay below 1/2")


# ---------------------------------------------------------------------------
# sanitization


def sanitize_bundle(submissions: Mapping[int, Iterable[Transcript]], n: int, as_of: int) -> list[Transcript | None]:
    """One transcript per node, or ``None`` for missing, equivocating or malformed slots."""
    bundle: list[Transcript | None] = [BOTTOM] * n
    for owner in range(n):
        subs = list(submissions.get(owner, ()))
        if not subs:
            continue
        first = subs[0]
        if any(not first.same_content(s) for s in subs[1:]):
            continue
        if first.owner != owner or first.as_of != as_of or first.malformed:
            continue
        bundle[owner] = first
    return bundle


# ---------------------------------------------------------------------------
# blame


def infer_max_lock_view(tr: Transcript, v: int, delta: int, by: int | None = None) -> int:
    """Highest view of a stage-1 QC constructible from ``tr`` by ``by`` (default: view start)."""
    cutoff = 12 * delta * v if by is None else by
    best = tr.store.highest_stage1(min(cutoff, tr.as_of))
    return -1 if best is None else best[0]


def _blame_view(store: MessageStore, v: int, delta: int, n: int, seed: int) -> frozenset:
    base = 12 * delta * v
    blamed: set[int] = set()
    nodes = range(n)

    # missing stage-1 votes for the unique admissible leader proposal
    leader = leader_for_view(v, n, seed)
    by_leader = [(p, r) for p, r in store.proposals.get(v, ()) if p.signer == leader]
    early = {p.block.id: p.block for p, r in by_leader if r <= base + 3 * delta}
    seen = {p.block.id for p, r in by_leader if r <= base + 5 * delta}
    if len(early) == 1 and len(seen) == 1:
        (b,) = early.values()
        lock_bound = infer_max_lock_view_store(store, base + delta)
        if b.view == v and is_valid_block(store, b, base + 3 * delta) and b.justify.view >= lock_bound:
            voters = store.votes.get((1, v, b.id), {})
            cut = base + 5 * delta
            blamed.update(p for p in nodes if voters.get(p, INF) > cut)

    # missing stage-2 votes once a stage-1 QC exists for a view-v block
    if any(store.stage_ready(1, v, bid) <= base + 6 * delta for bid in store.vote_blocks.get((1, v), ())):
        cut = base + 8 * delta
        voted: set[int] = set()
        for bid in store.vote_blocks.get((2, v), ()):
            voted.update(p for p, r in store.votes[(2, v, bid)].items() if r <= cut)
        blamed.update(p for p in nodes if p not in voted)

    # missing VoteLive when every early transaction is already in the log
    logged = store.log_as_of(base + 9 * delta)
    early_txs = store.txs_as_of(base + delta)
    if len(early_txs) <= len(logged):
        logged_ids = {t.id for t in logged}
        if all(i in logged_ids for i in early_txs):
            lv = store.votelive.get(v, {})
            cut = base + 11 * delta
            blamed.update(p for p in nodes if lv.get(p, INF) > cut)
    return frozenset(blamed)


def infer_max_lock_view_store(store: MessageStore, by: int) -> int:
    best = store.highest_stage1(by)
    return -1 if best is None else best[0]


def blame_view(tr: Transcript | None, v: int, delta: int, n: int, seed: int) -> frozenset:
    """Nodes that provably failed to send a message they owed in view ``v``."""
    if tr is None:
        return frozenset()
    if 12 * delta * (v + 1) > tr.as_of:
        raise ValueError(f"view {v} not complete as of round {tr.as_of}")
    key = ("view", v, delta, n, seed)
    store = tr.store
    got = store.blame_cache.get(key)
    if got is None:
        got = store.blame_cache[key] = _blame_view(store, v, delta, n, seed)
    return got


def blame_superview(tr: Transcript | None, u: int, k_views: int, delta: int, n: int, seed: int) -> frozenset:
    out: set[int] = set()
    for v in range(u * k_views, (u + 1) * k_views):
        out |= blame_view(tr, v, delta, n, seed)
    return frozenset(out)


BlameMatrix = dict  # owner -> {superview -> frozenset of blamed nodes}


def blame_matrix(bundle: list[Transcript | None], index: SuperViewIndex, n: int, seed: int) -> BlameMatrix:
    return {
        p: {u: blame_superview(tr, u, index.k_views, index.delta, n, seed) for u in index.superviews}
        for p, tr in enumerate(bundle)
    }


# ---------------------------------------------------------------------------
# adjudication


def compute_PA(blame: BlameMatrix, u: int, n: int, tau: int) -> frozenset:
    """Nodes blamed in super-view ``u`` by at least ``n - tau`` transcript rows."""
    counts: dict[int, int] = defaultdict(int)
    for row in blame.values():
        for p in row.get(u, ()):
            counts[p] += 1
    need = n - tau
    return frozenset(p for p, c in counts.items() if c >= need)


def build_overlap_graph(pa: Mapping[int, frozenset], n: int, tau: int) -> dict[int, set[int]]:
    """Adjacency: super-views whose blamed sets share at least ``2n/3 - tau`` nodes."""
    need = Fraction(2 * n, 3) - tau
    us = sorted(pa)
    adj: dict[int, set[int]] = {u: set() for u in us}
    for i, u in enumerate(us):
        a = pa[u]
        for w in us[i + 1 :]:
            if len(a & pa[w]) >= need:
                adj[u].add(w)
                adj[w].add(u)
    return adj


def select_critical(us: list[int], pa: Mapping[int, frozenset], graph: Mapping[int, set[int]], x, delta_x, n: int) -> list[int]:
    """Super-views with a large blamed set and degree above ``(x + delta_x)|U|``."""
    slack = Fraction(x) + Fraction(delta_x)
    min_size = math.ceil(Fraction(n, 3))
    bound = slack * len(us)
    return [u for u in us if len(pa[u]) >= min_size and len(graph[u]) > bound]


@dataclass
class PsiResult:
    accused: frozenset
    pa: dict[int, frozenset]
    edges: list[tuple[int, int]]
    critical: list[int]
    superviews: list[int]
    bottoms: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accused": sorted(self.accused),
            "superviews": self.superviews,
            "pa": {str(u): sorted(s) for u, s in sorted(self.pa.items())},
            "edges": [list(e) for e in self.edges],
            "critical": self.critical,
            "bottoms": self.bottoms,
        }


def psi_from_blame(blame: BlameMatrix, us: list[int], n: int, tau: int, x, delta_x) -> PsiResult:
    pa = {u: compute_PA(blame, u, n, tau) for u in us}
    graph = build_overlap_graph(pa, n, tau)
    crit = select_critical(us, pa, graph, x, delta_x, n)
    bound = (Fraction(x) + Fraction(delta_x)) * len(crit)
    hits: dict[int, int] = defaultdict(int)
    for u in crit:
        for p in pa[u]:
            hits[p] += 1
    accused = frozenset(p for p, c in hits.items() if c > bound)
    edges = sorted((u, w) for u in graph for w in graph[u] if u < w)
    return PsiResult(accused, pa, edges, crit, list(us))


def psi(bundle: list[Transcript | None], index: SuperViewIndex, params: PsiParams) -> PsiResult:
    """Adjudicate a sanitized bundle; an empty result means insufficient evidence."""
    blame = blame_matrix(bundle, index, params.n, params.seed)
    res = psi_from_blame(blame, index.superviews, params.n, params.tau, params.x, params.delta_x)
    res.bottoms = [p for p, tr in enumerate(bundle) if tr is None]
    return res


# ---------------------------------------------------------------------------
# detection and the per-node agent


def detect_potential_violation(store: MessageStore, t: int, delta: int, window: int) -> bool:
    """True when no complete view inside ``[t - window, t]`` reached a VoteLive quorum by ``t``."""
    if t < window:
        return False
    view_len = 12 * delta
    first = -(-(t - window) // view_len)
    last = t // view_len  # exclusive
    q = store.quorum
    for w in range(first, last):
        lv = store.votelive.get(w)
        if lv and len(lv) >= q and sum(1 for r in lv.values() if r <= t) >= q:
            return False
    return True


@dataclass
class AccountabilitySettings:
    n: int
    tau: int
    x: Fraction
    delta_x: Fraction
    delta: int
    k_views: int
    g: int
    seed: int

    @property
    def period(self) -> int:
        return 12 * self.delta * self.k_views

    @property
    def window(self) -> int:
        return self.period * self.g

    def psi_params(self) -> PsiParams:
        return PsiParams(self.n, self.tau, self.x, self.delta_x, self.delta, self.seed)

    def index(self, as_of: int) -> SuperViewIndex:
        return SuperViewIndex(self.delta, self.k_views, self.g, as_of)


class PsiCache:
    """Shares adjudication results between nodes that assembled identical bundles."""

    def __init__(self):
        self._results: dict[tuple, PsiResult] = {}
        self.hits = 0

    def run(self, bundle: list[Transcript | None], settings: AccountabilitySettings, as_of: int) -> PsiResult:
        key = (as_of, tuple(None if tr is None else id(tr) for tr in bundle))
        got = self._results.get(key)
        if got is not None:
            self.hits += 1
            return got
        res = psi(bundle, settings.index(as_of), settings.psi_params())
        self._results[key] = res
        return res


class AccountabilityAgent:
    """Accountability side of one honest node."""

    def __init__(self, me: int, store: MessageStore, settings: AccountabilitySettings, cache: PsiCache | None = None):
        self.me = me
        self.store = store
        self.s = settings
        self.cache = cache or PsiCache()
        self.submissions: dict[int, dict[int, list[Transcript]]] = defaultdict(lambda: defaultdict(list))
        self.scheduled: dict[int, int] = {}
        self.accusations: dict[int, dict[int, tuple[int, ...]]] = defaultdict(dict)
        self.certificates: dict[tuple[int, int], CertificateOfGuilt] = {}
        self.psi_runs: dict[int, PsiResult] = {}
        self.bundles: dict[int, list[Transcript | None]] = {}
        self.events: list[tuple[str, dict]] = []
        self.keep_bundles = False

    def step(self, t: int, delivered: Iterable[Any]) -> list[Any]:
        out: list[Any] = []
        for m in delivered:
            if isinstance(m, TranscriptMsg):
                self._take_transcript(m.transcript)
            elif isinstance(m, AccusationMsg):
                self._take_accusation(m)
        period = self.s.period
        if t > 0 and t % period == 0:
            snap = Transcript(self.me, t, self.store)
            self._take_transcript(snap)
            out.append(TranscriptMsg(snap, self.me))
            self.events.append(("transcript", {"as_of": t, "entries": self.store.count_as_of(t)}))
            if detect_potential_violation(self.store, t, self.s.delta, self.s.window):
                self.scheduled[t + self.s.window] = t
                self.events.append(("detect", {"violation_round": t}))
        t0 = self.scheduled.pop(t, None)
        if t0 is not None:
            acc = self._adjudicate(t0)
            out.append(acc)
            self._take_accusation(acc)
        return out

    def _take_transcript(self, tr: Transcript) -> None:
        slot = self.submissions[tr.as_of][tr.owner]
        if not any(s.same_content(tr) for s in slot):
            slot.append(tr)

    def assemble(self, as_of: int) -> list[Transcript | None]:
        return sanitize_bundle(self.submissions.get(as_of, {}), self.s.n, as_of)

    def _adjudicate(self, t0: int) -> AccusationMsg:
        bundle = self.assemble(t0)
        res = self.cache.run(bundle, self.s, t0)
        self.psi_runs[t0] = res
        if self.keep_bundles:
            self.bundles[t0] = bundle
        self.events.append(("accusation", {"violation_round": t0, "accused": sorted(res.accused), "critical": len(res.critical)}))
        return AccusationMsg(self.me, tuple(sorted(res.accused)), t0, self.me)

    def _take_accusation(self, acc: AccusationMsg) -> None:
        if acc.signer != acc.accuser:
            return
        seen = self.accusations[acc.violation_round]
        if acc.accuser in seen:
            return
        seen[acc.accuser] = acc.accused
        need = self.s.n // 2 + 1
        for p in acc.accused:
            key = (p, acc.violation_round)
            if key in self.certificates:
                continue
            support = frozenset(a for a, accused in seen.items() if p in accused)
            if len(support) >= need:
                cert = CertificateOfGuilt(p, acc.violation_round, support)
                self.certificates[key] = cert
                self.events.append(("certificate", {"accused": p, "violation_round": acc.violation_round, "supporting": sorted(support)}))


# ---------------------------------------------------------------------------
# ground-truth liveness oracle


class LivenessOracle:
    """Answers the timely-liveness question from injection and confirmation events."""

    def __init__(self, events: Iterable[dict], honest: Iterable[int]):
        self.honest = sorted(honest)
        hs = set(self.honest)
        inject: dict[str, dict[int, int]] = defaultdict(dict)
        logs: dict[int, tuple[list[int], list[frozenset]]] = {p: ([], []) for p in self.honest}
        for ev in events:
            kind = ev["kind"]
            if kind == "inject":
                node = ev["payload"]["node"]
                if node in hs:
                    inject[ev["payload"]["tx"]].setdefault(node, ev["round"])
            elif kind == "confirm":
                node = ev["payload"]["node"]
                if node in hs:
                    rounds, sets = logs[node]
                    rounds.append(ev["round"])
                    sets.append(frozenset(ev["payload"]["log"]))
        self.inputs = {
            tx: max(by_node.values()) for tx, by_node in inject.items() if len(by_node) == len(self.honest)
        }
        self.logs = logs

    def log_at(self, p: int, t: int) -> frozenset:
        rounds, sets = self.logs[p]
        i = bisect_right(rounds, t)
        return sets[i - 1] if i else frozenset()

    def violated(self, t: int, wait: int, tau_l: int) -> bool:
        due = [tx for tx, r in self.inputs.items() if r <= t - wait]
        if not due:
            return False
        logs = [self.log_at(p, t) for p in self.honest]
        return any(sum(1 for lg in logs if tx not in lg) > tau_l for tx in due)


def timely_violation_oracle(trace, t: int, delta_prime: int, g: int, tau_l: int) -> bool:
    """Has some transaction input to every honest node at least ``delta_prime*g``
    rounds before ``t`` stayed out of more than ``tau_l`` honest logs at ``t``?"""
    oracle = LivenessOracle(trace.events, trace.meta["honest"])
    return oracle.violated(t, delta_prime * g, tau_l)
