from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import psi_reference

from acclive.accountability import (
    AccountabilityAgent,
    AccountabilitySettings,
    AccusationMsg,
    LivenessOracle,
    PsiParams,
    SuperViewIndex,
    Transcript,
    blame_superview,
    blame_view,
    detect_potential_violation,
    psi,
    psi_from_blame,
    sanitize_bundle,
)
from acclive.adversaries import Crash
from acclive.netsim import World
from acclive.store import MessageStore
from acclive.types import Transaction, VoteLiveMsg, VoteMsg

# -- blame on real executions -------------------------------------------------


@pytest.fixture(scope="module")
def crash_world():
    tx = Transaction.from_payload("c")
    w = World(7, 1, 3, Crash((5, 6)), {0: {p: [tx] for p in range(5)}})
    w.run(12 * 12)
    return w


def test_honest_transcripts_blame_only_crashed_nodes(crash_world):
    w = crash_world
    blamed_any = set()
    for p in w.honest:
        tr = Transcript(p, w.round, w.processes[p].store)
        for v in range(12):
            b = blame_view(tr, v, 1, 7, 3)
            assert b <= {5, 6}
            blamed_any |= b
    assert blamed_any == {5, 6}


def test_blame_needs_a_complete_view(crash_world):
    w = crash_world
    tr = Transcript(0, 30, w.processes[0].store)
    with pytest.raises(ValueError):
        blame_view(tr, 2, 1, 7, 3)


def test_missing_transcript_blames_nobody():
    assert blame_superview(None, 0, 3, 1, 7, 0) == frozenset()


def test_transcript_serialization_keeps_digest(crash_world):
    w = crash_world
    tr = Transcript(2, 60, w.processes[2].store)
    back = Transcript.from_dict(tr.to_dict(), 7)
    assert back.digest == tr.digest
    assert back.same_content(tr)
    assert list(back.entries()) == list(tr.entries())
    for v in range(5):
        assert blame_view(back, v, 1, 7, 3) == blame_view(tr, v, 1, 7, 3)


# -- bundle sanitation ----------------------------------------------------------


def _tr(owner, as_of, entries, n=4):
    return Transcript.from_entries(owner, as_of, entries, n)


def test_sanitize_drops_equivocation_malformed_and_misattributed():
    a = _tr(0, 10, [(VoteLiveMsg(0, 1), 3)])
    a2 = _tr(0, 10, [(VoteLiveMsg(0, 2), 3)])
    same = _tr(1, 10, [(VoteLiveMsg(0, 1), 3)])
    late = _tr(2, 10, [(VoteLiveMsg(0, 1), 11)])
    wrong_round = _tr(3, 9, [])
    subs = {0: [a, a2], 1: [same, _tr(1, 10, [(VoteLiveMsg(0, 1), 3)])], 2: [late], 3: [wrong_round]}
    bundle = sanitize_bundle(subs, 4, 10)
    assert bundle[0] is None  # two different transcripts
    assert bundle[1] is same  # identical resubmission is fine
    assert bundle[2] is None  # receipt after as_of
    assert bundle[3] is None  # wrong as_of
    assert late.malformed


def test_misattributed_owner_is_dropped():
    tr = _tr(2, 10, [])
    assert sanitize_bundle({1: [tr]}, 4, 10)[1] is None


def test_all_missing_bundle_accuses_nobody():
    res = psi([None] * 7, SuperViewIndex(1, 2, 4, 200), PsiParams(7, 3, Fraction(0), Fraction(1, 4), 1, 0))
    assert res.accused == frozenset()
    assert res.bottoms == list(range(7))


# -- the adjudication rule ---------------------------------------------------------


@st.composite
def blame_inputs(draw):
    n = draw(st.integers(4, 10))
    tau = draw(st.integers(n // 3, (n - 1) // 2))
    us = list(range(draw(st.integers(1, 8))))
    rows = []
    for _ in range(n):
        rows.append({u: draw(st.sets(st.integers(0, n - 1), max_size=n)) for u in us})
    x = draw(st.sampled_from([Fraction(0), Fraction(1, 10), Fraction(1, 6), Fraction(1, 4)]))
    dx = draw(st.sampled_from([Fraction(1, 20), Fraction(1, 12), Fraction(1, 5)]))
    return n, tau, us, rows, x, dx


@given(blame_inputs())
def test_psi_matches_reference(inp):
    n, tau, us, rows, x, dx = inp
    blame = {p: {u: frozenset(r[u]) for u in us} for p, r in enumerate(rows)}
    res = psi_from_blame(blame, us, n, tau, x, dx)
    accused, pa, adj, crit = psi_reference(rows, us, n, tau, x, dx)
    assert res.accused == frozenset(accused)
    assert {u: set(s) for u, s in res.pa.items()} == pa
    assert sorted(res.edges) == sorted((a, b) for a in adj for b in adj[a] if a < b)
    assert res.critical == crit


@st.composite
def honest_core(draw):
    n = draw(st.sampled_from([7, 10, 13]))
    tau = (n - 1) // 2
    f = draw(st.integers(1, tau))
    corrupt = set(range(n - f, n))
    us = list(range(draw(st.integers(2, 8))))
    rows = {p: {u: frozenset(draw(st.sets(st.sampled_from(sorted(corrupt))))) for u in us} for p in range(n - f)}
    noise = {c: {u: frozenset(draw(st.sets(st.integers(0, n - 1)))) for u in us} for c in corrupt}
    x = draw(st.sampled_from([Fraction(0), Fraction(1, 6), Fraction(1, 4), Fraction(1, 3)]))
    return n, tau, corrupt, us, rows, noise, x


@given(honest_core())
def test_adversary_rows_only_add_accusations(inp):
    n, tau, corrupt, us, rows, noise, x = inp
    dx = Fraction(1, 12)
    core = dict(rows)
    core.update({c: {u: frozenset() for u in us} for c in corrupt})
    full = dict(rows)
    full.update(noise)
    base = psi_from_blame(core, us, n, tau, x, dx).accused
    more = psi_from_blame(full, us, n, tau, x, dx).accused
    assert base <= more
    # adversary rows alone can never push an honest node over the n - tau bar
    assert not (more - base) - corrupt


def test_psi_params_enforce_the_regime():
    with pytest.raises(ValueError):
        PsiParams(8, 4, Fraction(0), Fraction(1, 4), 1, 0)
    with pytest.raises(ValueError):
        PsiParams(9, 4, Fraction(1, 4), Fraction(1, 4), 1, 0)


def test_superview_index_takes_the_last_g_complete_superviews():
    idx = SuperViewIndex(1, 2, 3, 24 * 7 + 5)
    assert idx.superviews == [4, 5, 6]
    assert list(idx.views(5)) == [10, 11]
    assert idx.rounds(1) == range(24, 48)
    assert SuperViewIndex(1, 2, 10, 50).superviews == [0, 1]


# -- certificates, detection and the ground-truth oracle ---------------------------


def _agent(n=7):
    s = AccountabilitySettings(n, 3, Fraction(0), Fraction(1, 4), 1, 3, 4, 0)
    return AccountabilityAgent(0, MessageStore(n), s)


def test_certificate_needs_a_strict_majority_of_accusers():
    ag = _agent()
    for a in (1, 2, 3):
        ag.step(1, [AccusationMsg(a, (5,), 100, a)])
    assert not ag.certificates
    ag.step(2, [AccusationMsg(4, (5, 6), 100, 4)])
    assert set(ag.certificates) == {(5, 100)}
    assert ag.certificates[(5, 100)].supporting == frozenset({1, 2, 3, 4})


def test_accusations_signed_by_someone_else_are_ignored():
    ag = _agent()
    for a in (1, 2, 3, 4):
        ag.step(1, [AccusationMsg(a, (5,), 100, 6)])
    assert not ag.certificates


def test_repeat_accusations_count_once():
    ag = _agent()
    for _ in range(5):
        ag.step(1, [AccusationMsg(1, (5,), 100, 1)])
    assert not ag.certificates


def test_detection_fires_without_a_votelive_quorum():
    n = 4
    store = MessageStore(n)
    window = 48
    assert not detect_potential_violation(store, 47, 1, window)
    assert detect_potential_violation(store, 48, 1, window)
    for s in range(3):
        store.add(VoteLiveMsg(2, s), 34)
    assert not detect_potential_violation(store, 48, 1, window)
    # the quorum must be received by t
    late = MessageStore(n)
    for s in range(3):
        late.add(VoteLiveMsg(2, s), 49)
    assert detect_potential_violation(late, 48, 1, window)


def test_liveness_oracle_counts_missing_honest_logs():
    ev = [{"round": 0, "kind": "inject", "payload": {"node": p, "tx": "a"}} for p in range(4)]
    ev += [{"round": 10, "kind": "confirm", "payload": {"node": p, "log": ["a"]}} for p in range(2)]
    oracle = LivenessOracle(ev, range(4))
    # at t=20 two of four honest logs miss "a", more than tau_l = 1
    assert oracle.violated(20, 20, 1)
    assert not oracle.violated(19, 20, 1)  # not yet due
    assert not oracle.violated(20, 20, 2)
