"""Transactions, blocks, quorum certificates and the signed message variants.

Every message carries a ``signer`` tag. Signatures are ideal: the simulator
refuses to let an adversary emit anything tagged with an honest signer.
Serialization is canonical JSON with fields in declaration order, and
content digests are SHA-256 over that form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable, ClassVar

GENESIS_VIEW = -1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest_of(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("ascii")).hexdigest()


class MalformedMessage(ValueError):
    """Raised when a serialized message cannot be decoded."""


_DECODERS: dict[str, Callable[[dict], Any]] = {}


def register_kind(kind: str, decoder: Callable[[dict], Any]) -> None:
    _DECODERS[kind] = decoder


def message_from_dict(d: dict) -> Any:
    try:
        kind = d["kind"]
        decoder = _DECODERS[kind]
    except (KeyError, TypeError) as exc:
        raise MalformedMessage(f"unknown message variant: {d!r:.80}") from exc
    try:
        return decoder(d)
    except MalformedMessage:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMessage(f"bad {kind} message: {exc}") from exc


class _Digestible:
    """Mixin caching the content digest on first use."""

    def to_dict(self) -> dict:  # pragma: no cover - overridden
        raise NotImplementedError

    @property
    def digest(self) -> str:
        d = self.__dict__.get("_digest")
        if d is None:
            d = digest_of(self.to_dict())
            object.__setattr__(self, "_digest", d)
        return d


@dataclass(frozen=True)
class Transaction(_Digestible):
    id: str
    payload: bytes

    kind: ClassVar[str] = "tx"

    @classmethod
    def from_payload(cls, payload: bytes | str) -> "Transaction":
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        return cls(hashlib.sha256(payload).hexdigest()[:16], payload)

    def to_dict(self) -> dict:
        return {"id": self.id, "payload": self.payload.hex()}

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        return cls(str(d["id"]), bytes.fromhex(d["payload"]))


@dataclass(frozen=True)
class QuorumCertificate(_Digestible):
    stage: int
    view: int
    block_id: str
    signers: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "view": self.view,
            "block_id": self.block_id,
            "signers": list(self.signers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuorumCertificate":
        stage = int(d["stage"])
        if stage not in (1, 2):
            raise MalformedMessage(f"bad QC stage {stage}")
        return cls(stage, int(d["view"]), str(d["block_id"]), tuple(int(s) for s in d["signers"]))


GENESIS_ID = digest_of({"genesis": True})
GENESIS_QC = QuorumCertificate(1, GENESIS_VIEW, GENESIS_ID, ())


@dataclass(frozen=True, eq=False)
class Block(_Digestible):
    view: int
    justify: QuorumCertificate
    txs: tuple[Transaction, ...]
    proposer: int

    def __post_init__(self):
        if self.view == GENESIS_VIEW and self.justify == GENESIS_QC and not self.txs:
            bid = GENESIS_ID
        else:
            bid = digest_of(self._body())
        object.__setattr__(self, "id", bid)

    def _body(self) -> dict:
        return {
            "view": self.view,
            "justify": self.justify.to_dict(),
            "txs": [t.to_dict() for t in self.txs],
            "proposer": self.proposer,
        }

    def to_dict(self) -> dict:
        return self._body()

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(
            int(d["view"]),
            QuorumCertificate.from_dict(d["justify"]),
            tuple(Transaction.from_dict(t) for t in d["txs"]),
            int(d["proposer"]),
        )

    def __eq__(self, other):
        return isinstance(other, Block) and other.id == self.id

    def __hash__(self):
        return hash(self.id)


GENESIS_BLOCK = Block(GENESIS_VIEW, GENESIS_QC, (), -1)


@dataclass(frozen=True)
class ProposalMsg(_Digestible):
    view: int
    block: Block
    signer: int

    kind: ClassVar[str] = "proposal"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "view": self.view, "block": self.block.to_dict(), "signer": self.signer}


@dataclass(frozen=True)
class VoteMsg(_Digestible):
    stage: int
    view: int
    block_id: str
    signer: int

    kind: ClassVar[str] = "vote"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "stage": self.stage,
            "view": self.view,
            "block_id": self.block_id,
            "signer": self.signer,
        }


@dataclass(frozen=True)
class VoteLiveMsg(_Digestible):
    view: int
    signer: int

    kind: ClassVar[str] = "votelive"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "view": self.view, "signer": self.signer}


@dataclass(frozen=True)
class TxGossip(_Digestible):
    tx: Transaction
    signer: int

    kind: ClassVar[str] = "txgossip"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tx": self.tx.to_dict(), "signer": self.signer}


@dataclass(frozen=True)
class RelayMsg(_Digestible):
    inner: Any
    signer: int

    kind: ClassVar[str] = "relay"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "inner": self.inner.to_dict(), "signer": self.signer}


CONSENSUS_KINDS = (ProposalMsg, VoteMsg, VoteLiveMsg, TxGossip)


def _decode_vote(d: dict) -> VoteMsg:
    stage = int(d["stage"])
    if stage not in (1, 2):
        raise MalformedMessage(f"bad vote stage {stage}")
    return VoteMsg(stage, int(d["view"]), str(d["block_id"]), int(d["signer"]))


register_kind("proposal", lambda d: ProposalMsg(int(d["view"]), Block.from_dict(d["block"]), int(d["signer"])))
register_kind("vote", _decode_vote)
register_kind("votelive", lambda d: VoteLiveMsg(int(d["view"]), int(d["signer"])))
register_kind("txgossip", lambda d: TxGossip(Transaction.from_dict(d["tx"]), int(d["signer"])))
register_kind("relay", lambda d: RelayMsg(message_from_dict(d["inner"]), int(d["signer"])))


def originator(msg: Any) -> int:
    """The signer whose key vouches for the innermost content of ``msg``."""
    while isinstance(msg, RelayMsg):
        msg = msg.inner
    return msg.signer


def unwrap(msg: Any) -> Any:
    while isinstance(msg, RelayMsg):
        msg = msg.inner
    return msg
