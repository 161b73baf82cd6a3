import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from acclive.store import INF, MessageStore, quorum_threshold
from acclive.types import (
    GENESIS_BLOCK,
    GENESIS_ID,
    GENESIS_QC,
    Block,
    MalformedMessage,
    ProposalMsg,
    QuorumCertificate,
    RelayMsg,
    Transaction,
    TxGossip,
    VoteLiveMsg,
    VoteMsg,
    canonical_json,
    message_from_dict,
    unwrap,
)


def test_canonical_json_is_key_order_independent():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})


def test_transaction_id_depends_only_on_payload():
    assert Transaction.from_payload("x").id == Transaction.from_payload(b"x").id
    assert Transaction.from_payload("x").id != Transaction.from_payload("y").id


def test_block_identity_is_content_hash():
    tx = Transaction.from_payload("a")
    b1 = Block(0, GENESIS_QC, (tx,), 1)
    b2 = Block(0, GENESIS_QC, (tx,), 1)
    b3 = Block(0, GENESIS_QC, (), 1)
    assert b1 == b2 and hash(b1) == hash(b2)
    assert b1.id != b3.id
    assert GENESIS_BLOCK.id == GENESIS_ID


def _sample_messages():
    tx = Transaction.from_payload("pay")
    blk = Block(3, GENESIS_QC, (tx,), 2)
    return [
        ProposalMsg(3, blk, 2),
        VoteMsg(1, 3, blk.id, 0),
        VoteMsg(2, 3, blk.id, 1),
        VoteLiveMsg(3, 2),
        TxGossip(tx, 1),
        RelayMsg(VoteMsg(1, 3, blk.id, 0), 3),
    ]


@pytest.mark.parametrize("msg", _sample_messages(), ids=lambda m: type(m).__name__)
def test_messages_round_trip(msg):
    back = message_from_dict(msg.to_dict())
    assert back == msg
    assert back.digest == msg.digest


def test_unknown_kind_and_bad_stage_are_malformed():
    with pytest.raises(MalformedMessage):
        message_from_dict({"kind": "nope"})
    with pytest.raises(MalformedMessage):
        message_from_dict({"kind": "vote", "stage": 3, "view": 0, "block_id": "x", "signer": 0})


def test_unwrap_strips_nested_relays():
    inner = VoteLiveMsg(1, 0)
    assert unwrap(RelayMsg(RelayMsg(inner, 1), 2)) == inner


@pytest.mark.parametrize("n,q", [(1, 1), (3, 3), (4, 3), (7, 5), (10, 7), (13, 9), (30, 21)])
def test_quorum_is_smallest_count_above_two_thirds(n, q):
    assert q == quorum_threshold(n)
    assert 3 * q > 2 * n and 3 * (q - 1) <= 2 * n


def _chain_store(n=4):
    """Genesis <- b0 (view 0) <- b1 (view 1), with vote receipts at known rounds."""
    st_ = MessageStore(n)
    b0 = Block(0, GENESIS_QC, (Transaction.from_payload("t0"),), 0)
    st_.add(ProposalMsg(0, b0, 0), 2)
    for s, r in ((0, 3), (1, 4), (2, 5)):
        st_.add(VoteMsg(1, 0, b0.id, s), r)
    qc0 = QuorumCertificate(1, 0, b0.id, (0, 1, 2))
    b1 = Block(1, qc0, (Transaction.from_payload("t1"),), 1)
    st_.add(ProposalMsg(1, b1, 1), 14)
    return st_, b0, b1, qc0


def test_validity_rounds_follow_the_justify_chain():
    st_, b0, b1, qc0 = _chain_store()
    # a block extending genesis is valid from the start; its own receipt does not matter
    assert st_.valid_since(b0) == -1
    assert st_.qc_ready(qc0) == 5
    # valid once the parent, its receipt and the QC votes are all present
    assert st_.valid_since(b1) == 5
    # a QC needs the block itself too
    assert st_.stage_ready(1, 0, b0.id) == 5
    assert st_.stage_ready(1, 1, b1.id) == INF


def test_qc_with_missing_or_duplicate_signers_is_not_ready():
    st_, b0, _, _ = _chain_store()
    assert st_.qc_ready(QuorumCertificate(1, 0, b0.id, (0, 1, 3))) == INF
    assert st_.qc_ready(QuorumCertificate(1, 0, b0.id, (0, 0, 1))) == INF
    assert st_.qc_ready(QuorumCertificate(1, 0, b0.id, (0, 1))) == INF


def test_block_with_wrong_justify_view_is_invalid():
    st_, b0, _, _ = _chain_store()
    bad_qc = QuorumCertificate(1, 5, b0.id, (0, 1, 2))
    assert st_.valid_since(Block(6, bad_qc, (), 3)) == INF


def test_highest_stage1_and_tip_respect_as_of():
    st_, b0, b1, _ = _chain_store()
    st_.refresh()
    assert st_.highest_stage1(4) is None or st_.highest_stage1(4)[0] < 0
    assert st_.highest_stage1(5)[:2] == (0, b0.id)


def test_adds_must_be_round_ordered_and_deduplicate():
    st_ = MessageStore(4)
    m = VoteLiveMsg(0, 1)
    assert st_.add(m, 3)
    assert not st_.add(m, 4)
    with pytest.raises(ValueError):
        st_.add(VoteLiveMsg(0, 2), 1)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3), st.integers(0, 3)), max_size=25, unique=True), st.randoms())
def test_prefix_digest_ignores_order_within_a_round(items, rng):
    msgs = [(VoteLiveMsg(v, s), r) for v, s, r in items]
    msgs = list({m: r for m, r in msgs}.items())
    ordered = sorted(msgs, key=lambda e: e[1])
    shuffled = sorted(msgs, key=lambda e: (e[1], rng.random()))
    a = MessageStore.from_entries(4, ordered)
    b = MessageStore(4)
    for m, r in shuffled:
        b.add(m, r)
    for as_of in range(5):
        assert a.prefix_digest(a.count_as_of(as_of)) == b.prefix_digest(b.count_as_of(as_of))


def test_prefix_digest_changes_with_receipt_round():
    m = VoteLiveMsg(0, 1)
    a = MessageStore.from_entries(4, [(m, 1)])
    b = MessageStore.from_entries(4, [(m, 2)])
    assert a.prefix_digest(1) != b.prefix_digest(1)


def test_from_entries_sorts_by_round():
    entries = [(VoteLiveMsg(0, s), r) for s, r in ((0, 4), (1, 1), (2, 3))]
    random.Random(0).shuffle(entries)
    st_ = MessageStore.from_entries(4, entries)
    assert [r for _, r in st_.entries()] == [1, 3, 4]
    assert st_.count_as_of(3) == 2
