import json

import pytest

from acpsim.analysis import analyze_lines, ledger_csv, parse_lines, render_text, rounds_csv, verdicts_csv
from acpsim.config import Scenario
from acpsim.netsim import simulate


@pytest.fixture(scope="module")
def clean():
    return simulate(Scenario(n=5, rounds=4, seed=12)).lines


def test_clean_run_verdicts(clean):
    rep = analyze_lines(clean)
    assert all(ok for _, ok, _ in rep.verdicts())
    assert rep.final_rounds >= 4 and rep.latencies


def test_text_and_csv_render(clean):
    rep = analyze_lines(clean)
    text = render_text(rep)
    assert "agreement: PASS" in text and "nodes: 5" in text
    assert rounds_csv(rep).splitlines()[0].startswith("round,outcome,hash")
    assert len(verdicts_csv(rep).splitlines()) == 7
    assert len(ledger_csv(rep).splitlines()) == 6


def test_trace_without_header_rejected(clean):
    with pytest.raises(ValueError):
        parse_lines(clean[1:])


def _edit(lines, kind, fn):
    out = []
    for line in lines:
        rec = json.loads(line)
        if rec.get("kind") == kind:
            rec = fn(rec)
        out.append(json.dumps(rec) + "\n")
    return out


def test_conflicting_final_closes_break_agreement(clean):
    seen = []

    def flip(rec):
        if rec["detail"].startswith("final") and rec["round"] == 2 and not seen:
            seen.append(1)
            rec["detail"] = "final:" + "0" * 16
        return rec

    rep = analyze_lines(_edit(clean, "close", flip))
    assert not rep.safe and rep.agreement


def test_diverging_tx_order_breaks_total_order(clean):
    seen = []

    def flip(rec):
        if not seen:
            seen.append(1)
            ents = rec["detail"].split(",")
            parts = ents[-1].split(":")
            parts[4] = "f" * 16
            ents[-1] = ":".join(parts)
            rec["detail"] = ",".join(ents)
        return rec

    rep = analyze_lines(_edit(clean, "chain", flip))
    assert rep.total_order


def test_tampered_credit_breaks_conservation(clean):
    seen = []

    def bump(rec):
        if not seen and ":abc:" in rec["detail"]:
            seen.append(1)
            role, token, amount = rec["detail"].split(":")
            rec["detail"] = f"{role}:{token}:{amount}1"
        return rec

    rep = analyze_lines(_edit(clean, "credit", bump))
    assert rep.conservation
