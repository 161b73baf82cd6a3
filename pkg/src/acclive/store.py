"""Time-annotated message store (a node's received set) with cutoff queries.

Every message is kept with the round it was first received.  Validity of a
block or certificate is summarized as the earliest round from which it can be
established from the stored messages; a query "valid by round r" then reduces
to comparing that round with r.  Finite answers never change once computed
(they only depend on receipts already present), so they are memoized for
good; "not yet" answers are memoized per store version.
"""

from __future__ import annotations

import bisect
import hashlib
import math
from collections import defaultdict
from typing import Any, Iterable, Iterator

from .types import (
    GENESIS_BLOCK,
    GENESIS_ID,
    GENESIS_QC,
    Block,
    ProposalMsg,
    QuorumCertificate,
    Transaction,
    TxGossip,
    VoteLiveMsg,
    VoteMsg,
)

INF = math.inf
_MOD = 1 << 256


def quorum_threshold(n: int) -> int:
    """Smallest integer strictly greater than 2n/3."""
    if n < 1:
        raise ValueError("n must be positive")
    return (2 * n) // 3 + 1


class _ReadyIndex:
    """Finalized (ready_round, view, block_id) entries answering best-by-cutoff queries."""

    def __init__(self, better):
        self._better = better
        self._entries: list[tuple[int, int, str]] = []
        self._dirty = False
        self._rounds: list[int] = []
        self._best: list[tuple[int, int, str]] = []

    def add(self, entry: tuple[int, int, str]) -> None:
        self._entries.append(entry)
        self._dirty = True

    def __len__(self):
        return len(self._entries)

    def best_by(self, by: float):
        if self._dirty:
            ordered = sorted(self._entries)
            self._rounds = [e[0] for e in ordered]
            best: list[tuple[int, int, str]] = []
            cur = None
            for e in ordered:
                if cur is None or self._better(e, cur):
                    cur = e
                best.append(cur)
            self._best = best
            self._dirty = False
        i = bisect.bisect_right(self._rounds, by)
        return self._best[i - 1] if i else None


def _higher_qc(a, b) -> bool:
    # max view, then smaller block id
    return a[1] > b[1] or (a[1] == b[1] and a[2] < b[2])


def _better_tip(a, b) -> bool:
    # max view, then earlier confirmation, then smaller block id
    return (a[1], -a[0]) > (b[1], -b[0]) or (a[1] == b[1] and a[0] == b[0] and a[2] < b[2])


class MessageStore:
    """Message -> earliest receipt round, plus the indexes consensus and blame need.

    Messages must be added in non-decreasing round order; ``from_entries``
    sorts arbitrary entry lists before insertion.
    """

    _next_uid = 0

    def __init__(self, n: int):
        self.n = n
        self.quorum = quorum_threshold(n)
        self.uid = MessageStore._next_uid
        MessageStore._next_uid += 1
        self.version = 0
        self.receipt: dict[Any, int] = {}
        self.order: list[Any] = []
        self.order_rounds: list[int] = []
        self.last_round = -1

        self.proposals: dict[int, list[tuple[ProposalMsg, int]]] = defaultdict(list)
        self.blocks: dict[str, tuple[Block, int]] = {GENESIS_ID: (GENESIS_BLOCK, -1)}
        self.votes: dict[tuple[int, int, str], dict[int, int]] = {}
        self.vote_blocks: dict[tuple[int, int], list[str]] = defaultdict(list)
        self.votelive: dict[int, dict[int, int]] = defaultdict(dict)
        self.txs: dict[str, tuple[Transaction, int]] = {}
        self.tx_order: list[str] = []
        self.tx_rounds: list[int] = []

        self._quorum_round: dict[tuple[int, int, str], int] = {}
        self._valid: dict[str, float] = {GENESIS_ID: -1}
        self._invalid_at: dict[str, int] = {}
        self._qc_ready: dict[QuorumCertificate, int] = {GENESIS_QC: -1}
        self._stage_ready: dict[tuple[int, int, str], int] = {}
        self._pending1: list[tuple[int, int, str]] = []
        self._pending2: list[tuple[int, int, str]] = []
        self._refreshed_at = -1
        self.highest_qc_index = _ReadyIndex(_higher_qc)
        self.tip_index = _ReadyIndex(_better_tip)
        self._path_txs: dict[str, tuple[Transaction, ...]] = {GENESIS_ID: ()}
        self._path_ids: dict[str, frozenset] = {GENESIS_ID: frozenset()}
        self._chain: list[int] = [0]
        self.blame_cache: dict[Any, frozenset] = {}

    # -- insertion ---------------------------------------------------------

    @classmethod
    def from_entries(cls, n: int, entries: Iterable[tuple[Any, int]]) -> "MessageStore":
        store = cls(n)
        indexed = sorted(enumerate(entries), key=lambda e: (e[1][1], e[0]))
        for _, (msg, rnd) in indexed:
            store.add(msg, rnd)
        return store

    def add(self, msg: Any, rnd: int) -> bool:
        """Record ``msg`` at round ``rnd``; returns False for duplicates."""
        if msg in self.receipt:
            return False
        if rnd < self.last_round:
            raise ValueError("messages must be added in non-decreasing round order")
        self.last_round = rnd
        self.receipt[msg] = rnd
        self.order.append(msg)
        self.order_rounds.append(rnd)
        self.version += 1
        if isinstance(msg, VoteMsg):
            key = (msg.stage, msg.view, msg.block_id)
            voters = self.votes.get(key)
            if voters is None:
                voters = self.votes[key] = {}
                self.vote_blocks[(msg.stage, msg.view)].append(msg.block_id)
            if msg.signer not in voters:
                voters[msg.signer] = rnd
                if len(voters) == self.quorum:
                    self._quorum_round[key] = rnd
                    (self._pending1 if msg.stage == 1 else self._pending2).append(key)
        elif isinstance(msg, ProposalMsg):
            self.proposals[msg.view].append((msg, rnd))
            if msg.block.id not in self.blocks:
                self.blocks[msg.block.id] = (msg.block, rnd)
        elif isinstance(msg, VoteLiveMsg):
            self.votelive[msg.view].setdefault(msg.signer, rnd)
        elif isinstance(msg, TxGossip):
            if msg.tx.id not in self.txs:
                self.txs[msg.tx.id] = (msg.tx, rnd)
                self.tx_order.append(msg.tx.id)
                self.tx_rounds.append(rnd)
        return True

    def __contains__(self, msg: Any) -> bool:
        return msg in self.receipt

    def __len__(self) -> int:
        return len(self.order)

    def entries(self, as_of: float = INF) -> Iterator[tuple[Any, int]]:
        k = bisect.bisect_right(self.order_rounds, as_of)
        for i in range(k):
            yield self.order[i], self.order_rounds[i]

    def count_as_of(self, as_of: float) -> int:
        return bisect.bisect_right(self.order_rounds, as_of)

    def prefix_digest(self, k: int) -> str:
        """Multiset hash of the first ``k`` (message, receipt) entries.

        Summing per-entry hashes makes the result independent of the order in
        which same-round messages were added.
        """
        acc = self._chain
        while len(acc) <= k:
            i = len(acc) - 1
            h = hashlib.sha256(f"{self.order[i].digest}@{self.order_rounds[i]}".encode("ascii")).digest()
            acc.append((acc[-1] + int.from_bytes(h, "big")) % _MOD)
        return acc[k].to_bytes(32, "big").hex()

    # -- certificates and validity ------------------------------------------

    def qc_ready(self, qc: QuorumCertificate) -> float:
        """Earliest round from which every vote named by ``qc`` is present."""
        r = self._qc_ready.get(qc)
        if r is not None:
            return r
        signers = qc.signers
        if len(signers) < self.quorum or len(set(signers)) != len(signers):
            return INF
        voters = self.votes.get((qc.stage, qc.view, qc.block_id))
        if voters is None:
            return INF
        r = -1
        for s in signers:
            got = voters.get(s)
            if got is None:
                return INF
            if got > r:
                r = got
        self._qc_ready[qc] = r
        return r

    def _cached_valid(self, bid: str) -> float | None:
        r = self._valid.get(bid)
        if r is not None:
            return r
        if self._invalid_at.get(bid) == self.version:
            return INF
        return None

    def _step_valid(self, b: Block, parent_since: float) -> float:
        if parent_since == INF:
            return INF
        q = b.justify
        entry = self.blocks.get(q.block_id)
        if entry is None:
            return INF
        parent, parent_rcpt = entry
        if q.stage != 1 or q.view != parent.view or not q.view < b.view:
            return INF
        qr = self.qc_ready(q)
        return max(parent_since, parent_rcpt, qr)

    def valid_since(self, b: Block) -> float:
        """Earliest round from which ``b`` is a valid block given this store.

        ``b`` itself need not be stored; its justify chain must be.
        """
        cached = self._cached_valid(b.id)
        if cached is not None:
            return cached
        chain: list[Block] = [b]
        base: float = INF
        cur = b.justify.block_id
        seen = {b.id}
        while True:
            c = self._cached_valid(cur)
            if c is not None:
                base = c
                break
            entry = self.blocks.get(cur)
            if entry is None or cur in seen:
                base = INF
                break
            seen.add(cur)
            chain.append(entry[0])
            cur = entry[0].justify.block_id
        val = base
        for blk in reversed(chain):
            val = self._step_valid(blk, val)
            if blk.id in self.blocks:
                if val == INF:
                    self._invalid_at[blk.id] = self.version
                else:
                    self._valid[blk.id] = val
        return val

    def stage_ready(self, stage: int, view: int, bid: str) -> float:
        """Earliest round a valid ``stage`` QC for stored block ``bid`` is constructible."""
        key = (stage, view, bid)
        r = self._stage_ready.get(key)
        if r is not None:
            return r
        qr = self._quorum_round.get(key)
        entry = self.blocks.get(bid)
        if qr is None or entry is None or entry[0].view != view:
            return INF
        vs = self.valid_since(entry[0])
        if vs == INF:
            return INF
        r = max(qr, entry[1], vs)
        self._stage_ready[key] = r
        return r

    def qc_for(self, stage: int, view: int, bid: str) -> QuorumCertificate:
        """QC built from the earliest quorum of received votes."""
        voters = self.votes[(stage, view, bid)]
        chosen = sorted(voters, key=lambda s: (voters[s], s))[: self.quorum]
        return QuorumCertificate(stage, view, bid, tuple(sorted(chosen)))

    def refresh(self) -> list[tuple[int, int, str]]:
        """Finalize any certificate/confirmation that became constructible.

        Returns newly confirmable ``(confirm_round, view, block_id)`` entries.
        """
        if self._refreshed_at == self.version:
            return []
        self._refreshed_at = self.version
        if self._pending1:
            still = []
            for key in self._pending1:
                r = self.stage_ready(*key)
                if r == INF:
                    still.append(key)
                else:
                    self.highest_qc_index.add((r, key[1], key[2]))
            self._pending1 = still
        fresh = []
        if self._pending2:
            still = []
            for key in self._pending2:
                r2 = self.stage_ready(*key)
                r1 = self.stage_ready(1, key[1], key[2]) if r2 != INF else INF
                if r1 == INF:
                    still.append(key)
                else:
                    entry = (max(r1, r2), key[1], key[2])
                    self.tip_index.add(entry)
                    fresh.append(entry)
            self._pending2 = still
        return fresh

    def highest_stage1(self, by: float = INF) -> tuple[int, str] | None:
        """(view, block_id) of the highest valid stage-1 QC constructible by ``by``."""
        self.refresh()
        best = self.highest_qc_index.best_by(by)
        return None if best is None else (best[1], best[2])

    def confirmed_tip(self, by: float = INF) -> tuple[int, int, str] | None:
        """(confirm_round, view, block_id) defining the confirmed log as of ``by``."""
        self.refresh()
        return self.tip_index.best_by(by)

    # -- chains and transactions --------------------------------------------

    def path_txs(self, bid: str) -> tuple[Transaction, ...]:
        """Transactions on the chain from genesis to ``bid`` (inclusive)."""
        got = self._path_txs.get(bid)
        if got is not None:
            return got
        chain = []
        cur = bid
        while cur not in self._path_txs:
            blk = self.blocks[cur][0]
            chain.append(blk)
            cur = blk.justify.block_id
        acc = self._path_txs[cur]
        for blk in reversed(chain):
            acc = acc + blk.txs
            self._path_txs[blk.id] = acc
        return acc

    def path_tx_ids(self, bid: str) -> frozenset:
        got = self._path_ids.get(bid)
        if got is None:
            got = self._path_ids[bid] = frozenset(t.id for t in self.path_txs(bid))
        return got

    def log_as_of(self, by: float) -> tuple[Transaction, ...]:
        tip = self.confirmed_tip(by)
        return () if tip is None else self.path_txs(tip[2])

    def txs_as_of(self, by: float) -> list[str]:
        k = bisect.bisect_right(self.tx_rounds, by)
        return self.tx_order[:k]
