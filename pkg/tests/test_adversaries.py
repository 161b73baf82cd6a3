from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_psync

from acclive import config_from_dict, run_scenario
from acclive.adversaries import (
    REGISTRY,
    BurstPolicy,
    EquivocatingLeader,
    PartitionCycler,
    SilentCensor,
    build_adversary,
    conformant_bursts,
)
from acclive.netsim import NetParams, Schedule, World, validate_x_psync


def _flags(policy, horizon):
    return [policy.sync(t) for t in range(horizon)]


@given(
    st.integers(3, 30),
    st.integers(2, 16),
    st.sampled_from([Fraction(1, 8), Fraction(1, 5), Fraction(1, 4), Fraction(1, 3), Fraction(2, 5)]),
    st.integers(0, 10_000),
)
def test_conformant_bursts_pass_the_validator(delta_prime, g, x, seed):
    horizon = delta_prime * g * 3
    flags = _flags(BurstPolicy(conformant_bursts(horizon, delta_prime, g, x, seed)), horizon)
    assert validate_x_psync(Schedule(flags), NetParams(1, delta_prime, g, x)).ok
    assert brute_psync(flags, delta_prime, g, x)[0]


def test_bursts_exist_when_the_budget_allows():
    assert conformant_bursts(2000, 10, 10, Fraction(2, 5), 1)
    assert conformant_bursts(2000, 10, 10, Fraction(1, 20), 1) == []


def test_registry_covers_every_kind():
    assert set(REGISTRY) == {
        "honest", "crash", "silent_censor", "split_brain", "partition_cycler",
        "equivocating_leader", "chaos", "framer",
    }
    with pytest.raises(ValueError):
        build_adversary({"kind": "nope"}, 0)


def test_silent_censor_defaults_to_the_highest_ids():
    adv = SilentCensor(3)
    adv.setup(10, 1, 0)
    assert adv.corrupt == {7, 8, 9}
    with pytest.raises(ValueError):
        SilentCensor(3, [1, 2]).setup(10, 1, 0)


def test_equivocating_leader_sends_two_blocks():
    adv = EquivocatingLeader(nodes=[6])
    w = World(7, 1, 2, adv)
    w.run(12 * 20)
    eq = w.trace.of_kind("equivocate")
    assert eq and all(e["payload"]["node"] == 6 for e in eq)
    assert all(len(set(e["payload"]["blocks"])) == 2 for e in eq)


def test_partition_cycler_needs_k_to_divide_the_window():
    adv = PartitionCycler(3, [[0], [1], [2], [3], [4, 5, 6]], 1, window=100)
    with pytest.raises(ValueError):
        World(7, 1, 0, adv)


def _framed(alterations, seed=1):
    net = {"kind": "conformant_bursts", "horizon": 760, "delta_prime": 36, "g": 10, "x": "1/5"}
    base = {"kind": "silent_censor", "params": {"f": 3, "network": net}}
    spec = {"kind": "framer", "params": {"base": base, "alterations": alterations}} if alterations is not None else base
    cfg = config_from_dict({
        "n": 7, "seed": seed, "horizon": 760, "x": "1/5", "delta_x": "1/4", "k_views": 3, "g": 10,
        "tau_al_max": 3, "adversary": spec, "conformance_declared": True,
        "tx_schedule": [{"round": 0, "txs": ["t"], "recipients": "honest"}],
    })
    return run_scenario(cfg)


def test_framer_without_alterations_is_the_base_strategy():
    w1, _ = _framed([])
    w2, _ = _framed(None)
    strip = lambda w: [e for e in w.trace.events if e["kind"] != "setup"]  # noqa: E731
    assert strip(w1) == strip(w2)


def test_framer_attacks_do_not_convict_honest_nodes():
    w, rep = _framed(["omit", "equivocate", "split", "accuse"])
    assert rep.conformance["ok"]
    assert rep.certificates and rep.honest_certified == []
    assert {c["accused"] for c in rep.certificates} <= set(rep.corrupt)


def test_split_brain_within_resilience_is_safe():
    cfg = config_from_dict({
        "n": 7, "seed": 3, "horizon": 600, "accountability": False,
        "adversary": {"kind": "split_brain", "params": {"p1": [0, 1], "p2": [2, 3], "p3": [4, 5, 6], "heal_round": 300}},
        "tx_schedule": [{"round": 0, "txs": ["l"], "recipients": [0, 1]}, {"round": 0, "txs": ["r"], "recipients": [4, 5, 6]}],
    })
    _, rep = run_scenario(cfg)
    assert rep.safety_ok


def test_split_brain_beyond_resilience_forks():
    # three corrupt nodes out of seven exceed floor((n-1)/3) = 2: each side reaches a quorum alone
    cfg = config_from_dict({
        "n": 7, "seed": 3, "horizon": 300, "accountability": False,
        "adversary": {"kind": "split_brain", "params": {"p1": [0, 1], "p2": [2, 3, 4], "p3": [5, 6], "heal_round": 250}},
        "tx_schedule": [{"round": 0, "txs": ["l"], "recipients": [0, 1]}, {"round": 0, "txs": ["r"], "recipients": [5, 6]}],
    })
    _, rep = run_scenario(cfg)
    assert not rep.safety_ok
