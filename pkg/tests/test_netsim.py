import json

import pytest
from hypothesis import given, settings, strategies as st

from acpsim.analysis import analyze_lines
from acpsim.config import Scenario
from acpsim.netsim import AdversarySpec, Kernel, NetworkModel, PartitionSpec, simulate
from acpsim.sortition import CommitteeParams


def records(lines):
    return [json.loads(l) for l in lines[1:]]


def test_strong_delays_within_bound():
    k = Kernel(Scenario(n=4, network=NetworkModel(delta=200)))
    ds = [k._delay(0, t) for t in range(0, 50_000, 5)]
    assert all(0 < d <= 200 for d in ds)
    assert min(ds) == 10 and max(ds) == 200


@given(st.integers(0, 20_000), st.integers(1, 5000))
@settings(max_examples=200)
def test_partial_delivery_no_later_than_gst_plus_delta(now, gst):
    k = Kernel(Scenario(n=4, network=NetworkModel(mode="partial", gst=gst)))
    d = k._delay(1, now)
    assert d > 0
    assert now + d <= max(gst, now) + 100
    if now >= gst:
        assert d <= 100


def test_zero_nodes_gives_header_only():
    r = simulate(Scenario(n=0, rounds=1))
    assert len(r.lines) == 1 and json.loads(r.lines[0])["kind"] == "header"


def test_four_nodes_three_rounds_all_final():
    r = simulate(Scenario(n=4, rounds=3, seed=2))
    rep = analyze_lines(r.lines)
    assert rep.safe and rep.final_rounds >= 3 and rep.tentative_rounds == 0
    assert all(rep.delay_pattern.values())


def test_runs_are_deterministic():
    sc = Scenario(n=7, rounds=3, seed=9, network=NetworkModel(mode="partial", gst=2000))
    assert simulate(sc).lines == simulate(sc).lines
    other = simulate(Scenario(n=7, rounds=3, seed=10, network=NetworkModel(mode="partial", gst=2000)))
    assert other.lines != simulate(sc).lines


def test_single_crashed_sole_leader_goes_tentative():
    one = CommitteeParams(4, 4, 1, 1)
    k = Kernel(Scenario(n=4, rounds=1, seed=3, committee=one))
    (leader,) = k.ctx.committee(k.nodes[0].seeds[k.genesis.block_hash], 1).valid_leaders
    sc = Scenario(n=4, rounds=3, seed=3, committee=one,
                  adversary=AdversarySpec(corrupted=(leader,), strategy="crash", crash_at=0))
    rep = analyze_lines(simulate(sc).lines)
    assert rep.safe
    assert rep.rounds[1].split(":")[0] in ("tentative", "pending")


@pytest.mark.parametrize("strategy", ["equivocate", "withhold_votes", "delay_max", "crash"])
def test_one_byzantine_of_four_stays_safe(strategy):
    sc = Scenario(n=4, rounds=4, seed=21, adversary=AdversarySpec(corrupted=(2,), strategy=strategy, crash_at=500))
    rep = analyze_lines(simulate(sc).lines)
    assert rep.safe, (rep.agreement, rep.validity, rep.total_order)
    assert rep.final_rounds >= 1


def test_equivocator_sends_conflicting_votes_yet_run_is_safe():
    sc = Scenario(n=7, rounds=3, seed=4, adversary=AdversarySpec(corrupted=(0, 1), strategy="equivocate"))
    r = simulate(sc)
    rep = analyze_lines(r.lines)
    assert rep.safe and rep.final_rounds >= 3
    seen = {}
    for rec in records(r.lines):
        if rec["kind"] == "vote1" and rec["from"] in (0, 1):
            seen.setdefault((rec["from"], rec["round"]), set()).add(rec["detail"])
    assert any(len(v) > 1 for v in seen.values())


def test_selfish_packer_only_packs_own_transactions():
    sc = Scenario(n=4, rounds=3, seed=5, adversary=AdversarySpec(corrupted=(0, 1, 2, 3), strategy="selfish_pack"))
    r = simulate(sc)
    for b in r.nodes[0].chain.blocks[1:]:
        assert all(tx.submitter == b.proposer for tx in b.transactions)


def test_partition_heals_to_one_chain():
    groups = ((0, 1, 2, 3), (4, 5, 6))
    p = PartitionSpec(groups, 500, 500 + 2 * 3400)
    sc = Scenario(n=7, rounds=6, seed=8, adversary=AdversarySpec(strategy="partition", partition=p))
    r = simulate(sc)
    rep = analyze_lines(r.lines)
    assert rep.safe
    chains = {rec["from"]: rec["detail"] for rec in records(r.lines) if rec["kind"] == "chain"}
    confirmed = {tuple(e for e in d.split(",") if e.split(":")[2] != "p") for d in chains.values()}
    assert len(confirmed) == 1 and r.end_ms > p.heal_ms


def test_no_cross_partition_delivery_while_cut():
    groups = ((0, 1), (2, 3, 4, 5))
    p = PartitionSpec(groups, 0, 3000)
    sc = Scenario(n=6, rounds=2, seed=1, adversary=AdversarySpec(strategy="partition", partition=p))
    side = p.group_of()
    r = simulate(sc)
    for rec in records(r.lines):
        if rec["kind"] in ("proposal", "vote1", "vote2") and rec["t"] < 3000 and rec["from"] >= 0 and rec["to"] >= 0:
            assert side[rec["from"]] == side[rec["to"]]


def test_message_counts_respect_volume_bound():
    rep = analyze_lines(simulate(Scenario(n=10, rounds=3, seed=6)).lines)
    assert rep.messages and all(c <= rep.message_bound for c in rep.messages.values())


@pytest.mark.parametrize(
    "net",
    [dict(mode="eventual"), dict(delta=0), dict(delta_min=200), dict(drop_rate=1.0), dict(phi=0)],
)
def test_network_validation(net):
    with pytest.raises(ValueError):
        NetworkModel(**net).validate()


def test_adversary_validation():
    with pytest.raises(ValueError):
        AdversarySpec(corrupted=(9,), strategy="crash").validate(4)
    with pytest.raises(ValueError):
        AdversarySpec(strategy="partition").validate(4)
    with pytest.raises(ValueError):
        AdversarySpec(strategy="partition", partition=PartitionSpec(((0, 1), (2,)), 0, 10)).validate(4)
    with pytest.raises(ValueError):
        AdversarySpec(strategy="bribe").validate(4)
