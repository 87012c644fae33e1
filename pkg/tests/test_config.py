import json
from fractions import Fraction

import pytest

from acpsim.config import ConfigError, Scenario, dump_scenario, load_scenario, scenario_from_dict, with_overrides
from acpsim.netsim import AdversarySpec, NetworkModel, PartitionSpec


def test_defaults_round_trip():
    sc = Scenario()
    back = scenario_from_dict(json.loads(dump_scenario(sc)))
    assert back == sc
    assert sc.committee.n_pc == sc.committee.n_fc == sc.n == 4


def test_rich_scenario_round_trip():
    sc = Scenario(
        n=6, seed=77, rounds=5,
        network=NetworkModel(mode="partial", gst=4000, phi=3),
        adversary=AdversarySpec(strategy="partition", partition=PartitionSpec(((0, 1, 2), (3, 4, 5)), 100, 900)),
        reputations=tuple(Fraction(i + 1, 3) for i in range(6)),
    )
    assert scenario_from_dict(json.loads(dump_scenario(sc))) == sc


def test_load_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(dump_scenario(Scenario(n=7, seed=3)))
    assert load_scenario(str(p)).n == 7


@pytest.mark.parametrize(
    "patch,path",
    [
        ({"n": "four"}, "n"),
        ({"n": 4.5}, "n"),
        ({"rounds": 0}, "rounds"),
        ({"committee": {"n_pc": 4}}, "committee.n_fc"),
        ({"committee": {"n_pc": 3, "n_fc": 4}}, "committee"),
        ({"timeouts": {"sbr": 100}}, "timeouts"),
        ({"network": {"mode": "eventual"}}, "network"),
        ({"network": {"delta": "fast"}}, "network.delta"),
        ({"adversary": {"corrupted": [0, 9], "strategy": "crash"}}, "adversary"),
        ({"economy": {"ratio": [1, 1, 1]}}, "economy"),
        ({"reputations": [1, 1]}, "reputations"),
        ({"bogus": 1}, "bogus"),
        ({"version": 2}, "version"),
    ],
)
def test_bad_fields_name_their_path(patch, path):
    raw = json.loads(dump_scenario(Scenario()))
    raw.update(patch)
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(raw)
    assert exc.value.path == path


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "missing.json"))
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(ConfigError) as exc:
        load_scenario(str(p))
    assert "line 1" in str(exc.value)


def test_overrides_recompute_time_budget():
    sc = Scenario(rounds=2)
    longer = with_overrides(sc, rounds=20)
    assert longer.rounds == 20 and longer.max_ms > sc.max_ms
    assert with_overrides(sc, seed=9).max_ms == sc.max_ms
