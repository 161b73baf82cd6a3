"""Per-node consensus state machine over views of 12 delta rounds.

Within view ``v`` (rounds ``[12*delta*v, 12*delta*(v+1))``) at offset ``o``:

* ``o == 2*delta``: the leader proposes a block extending its highest stage-1 QC;
* ``o == 4*delta``: stage-1 vote for the unique admissible leader proposal;
* ``o == 7*delta``: stage-2 vote for a block with a stage-1 QC, updating the lock;
* every round: adopt the highest block holding both QCs as the log tip;
* ``o == 10*delta``: VoteLive if every transaction pending at view start is logged.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable

from .store import INF, MessageStore, quorum_threshold
from .types import (
    CONSENSUS_KINDS,
    GENESIS_BLOCK,
    GENESIS_ID,
    GENESIS_QC,
    GENESIS_VIEW,
    Block,
    ProposalMsg,
    QuorumCertificate,
    RelayMsg,
    Transaction,
    TxGossip,
    VoteLiveMsg,
    VoteMsg,
    unwrap,
)

__all__ = [
    "quorum_threshold",
    "leader_for_view",
    "is_valid_block",
    "is_valid_qc",
    "highest_stage1_qc",
    "NodeState",
    "Node",
    "node_step",
    "view_of",
]


@lru_cache(maxsize=1 << 16)
def leader_for_view(v: int, n: int, seed: int) -> int:
    """Seeded pseudo-random leader; uniform over ``range(n)``."""
    h = hashlib.sha256(f"leader:{seed}:{n}:{v}".encode("ascii")).digest()
    return int.from_bytes(h[:8], "big") % n


def view_of(t: int, delta: int) -> tuple[int, int]:
    """(view, offset) of round ``t``."""
    return divmod(t, 12 * delta)


def is_valid_block(received: MessageStore, b: Block, by: float = INF) -> bool:
    if b.id == GENESIS_ID:
        return True
    return received.valid_since(b) <= by


def is_valid_qc(received: MessageStore, qc: QuorumCertificate, b: Block, by: float = INF) -> bool:
    if qc == GENESIS_QC:
        return b.id == GENESIS_ID
    if qc.block_id != b.id or qc.view != b.view:
        return False
    return received.qc_ready(qc) <= by and is_valid_block(received, b, by)


def highest_stage1_qc(received: MessageStore, by: float = INF) -> QuorumCertificate:
    best = received.highest_stage1(by)
    if best is None:
        return GENESIS_QC
    return received.qc_for(1, best[0], best[1])


@dataclass
class NodeState:
    me: int
    n: int
    delta: int
    seed: int
    received: MessageStore = None
    lock: QuorumCertificate = GENESIS_QC
    log: tuple[Transaction, ...] = ()
    tip: tuple[int, str] = (GENESIS_VIEW, GENESIS_ID)
    voted_stage1: set = field(default_factory=set)
    voted_stage2: set = field(default_factory=set)
    voted_live: set = field(default_factory=set)
    last_round: int = -1
    malformed: int = 0
    log_regressions: int = 0

    def __post_init__(self):
        if self.received is None:
            self.received = MessageStore(self.n)

    @property
    def pending_txs(self) -> list[str]:
        return self.received.tx_order


class Node:
    """Mutable wrapper stepping a ``NodeState`` in place.

    ``events`` collects (kind, payload) records for the trace; the owner
    drains it after each step.
    """

    def __init__(self, state: NodeState):
        self.state = state
        self.events: list[tuple[str, dict]] = []
        d = state.delta
        self._view_len = 12 * d
        self._offsets = (2 * d, 4 * d, 7 * d, 10 * d)

    @classmethod
    def fresh(cls, me: int, n: int, delta: int, seed: int) -> "Node":
        return cls(NodeState(me, n, delta, seed))

    def step(self, t: int, delivered: Iterable[Any] = (), injected: Iterable[Transaction] = ()) -> list[Any]:
        st = self.state
        if t <= st.last_round:
            raise ValueError(f"round {t} already stepped (last {st.last_round})")
        st.last_round = t
        store = st.received
        me = st.me
        out: list[Any] = []
        for m in delivered:
            inner = unwrap(m)
            if not isinstance(inner, CONSENSUS_KINDS):
                st.malformed += 1
                continue
            if store.add(inner, t):
                out.append(RelayMsg(inner, me))
        for tx in injected:
            g = TxGossip(tx, me)
            if store.add(g, t):
                out.append(g)

        v, o = divmod(t, self._view_len)
        p_off, s1_off, s2_off, live_off = self._offsets
        if o == p_off and leader_for_view(v, st.n, st.seed) == me:
            self._emit(self._propose(t, v), t, out)
        elif o == s1_off and v not in st.voted_stage1:
            self._emit(self._stage1(t, v), t, out)
        elif o == s2_off and v not in st.voted_stage2:
            self._emit(self._stage2(t, v), t, out)

        if store.version != getattr(self, "_confirm_version", -1):
            self._confirm_version = store.version
            self._confirm(t)

        if o == live_off and v not in st.voted_live:
            self._emit(self._votelive(t, v), t, out)
        return out

    def _emit(self, msg, t, out):
        if msg is not None:
            self.state.received.add(msg, t)
            out.append(msg)

    def _propose(self, t: int, v: int) -> ProposalMsg:
        st = self.state
        store = st.received
        qc = highest_stage1_qc(store, t)
        on_chain = store.path_tx_ids(qc.block_id)
        fresh = [store.txs[i] for i in store.txs_as_of(t) if i not in on_chain]
        fresh.sort(key=lambda e: (e[1], e[0].id))
        block = Block(v, qc, tuple(tx for tx, _ in fresh), st.me)
        self.events.append(("proposal", {"view": v, "block": block.id, "parent": qc.block_id, "txs": len(block.txs)}))
        return ProposalMsg(v, block, st.me)

    def _stage1(self, t: int, v: int) -> VoteMsg | None:
        st = self.state
        store = st.received
        leader = leader_for_view(v, st.n, st.seed)
        blocks = {p.block.id: p.block for p, r in store.proposals.get(v, ()) if p.signer == leader and r <= t}
        if len(blocks) != 1:
            return None
        (b,) = blocks.values()
        if b.view != v or not is_valid_block(store, b, t):
            return None
        if st.lock.view > b.justify.view:
            return None
        st.voted_stage1.add(v)
        self.events.append(("vote", {"stage": 1, "view": v, "block": b.id}))
        return VoteMsg(1, v, b.id, st.me)

    def _stage2(self, t: int, v: int) -> VoteMsg | None:
        st = self.state
        store = st.received
        best = None
        for bid in store.vote_blocks.get((1, v), ()):
            r = store.stage_ready(1, v, bid)
            if r <= t and (best is None or (r, bid) < best):
                best = (r, bid)
        if best is None:
            return None
        bid = best[1]
        new_lock = store.qc_for(1, v, bid)
        assert new_lock.view >= st.lock.view, "lock view must not decrease"
        st.lock = new_lock
        st.voted_stage2.add(v)
        self.events.append(("vote", {"stage": 2, "view": v, "block": bid}))
        return VoteMsg(2, v, bid, st.me)

    def _confirm(self, t: int) -> None:
        st = self.state
        tip = st.received.confirmed_tip(t)
        if tip is None or tip[1] <= st.tip[0]:
            return
        new_log = st.received.path_txs(tip[2])
        old = st.log
        if new_log[: len(old)] != old:
            st.log_regressions += 1
        st.log = new_log
        st.tip = (tip[1], tip[2])
        self.events.append(("confirm", {"view": tip[1], "block": tip[2], "log": [x.id for x in new_log]}))

    def _votelive(self, t: int, v: int) -> VoteLiveMsg | None:
        st = self.state
        start = v * self._view_len
        logged = st.received.path_tx_ids(st.tip[1])
        if all(i in logged for i in st.received.txs_as_of(start)):
            st.voted_live.add(v)
            self.events.append(("votelive", {"view": v}))
            return VoteLiveMsg(v, st.me)
        return None


def node_step(
    state: NodeState,
    t: int,
    delivered: Iterable[Any],
    injected: Iterable[Transaction],
    delta: int | None = None,
    n: int | None = None,
    seed: int | None = None,
) -> tuple[NodeState, list[Any]]:
    """Functional form of ``Node.step``: the input state is left untouched."""
    new = copy.deepcopy(state)
    if delta is not None:
        new.delta = delta
    if n is not None:
        new.n = n
    if seed is not None:
        new.seed = seed
    node = Node(new)
    out = node.step(t, delivered, injected)
    return new, out
