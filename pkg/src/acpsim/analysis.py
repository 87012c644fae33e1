"""Reports and safety/liveness verdicts computed from a trace alone."""

from __future__ import annotations

import csv
import io
import json
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

from .config import scenario_from_dict
from .estimators import EstimatorInput, message_volume
from .incentives import pc_reward, round_issuance

MESSAGE_KINDS = ("proposal", "vote1", "vote2", "pre_prepare", "prepare", "commit", "reply", "cert", "block",
                 "sync_req", "sync_resp")
DELAY_PATTERN = ("proposal", "vote1", "vote2", "pre_prepare", "prepare", "commit", "reply", "block")


@dataclass
class Report:
    scenario: object
    rounds: dict = field(default_factory=dict)
    final_rounds: int = 0
    tentative_rounds: int = 0
    latencies: dict = field(default_factory=dict)
    messages: dict = field(default_factory=dict)
    message_bound: int = 0
    agreement: list = field(default_factory=list)
    validity: list = field(default_factory=list)
    total_order: list = field(default_factory=list)
    liveness_span: list = field(default_factory=list)
    final_after_gst: object = None
    gst_round: object = None
    delay_pattern: dict = field(default_factory=dict)
    conservation: list = field(default_factory=list)
    ledger_rows: list = field(default_factory=list)
    equivocations: int = 0

    @property
    def safe(self) -> bool:
        return not (self.agreement or self.validity or self.total_order)

    @property
    def live(self) -> bool:
        return not self.liveness_span and self.final_after_gst is not None

    def verdicts(self) -> list:
        return [
            ("agreement", not self.agreement, "; ".join(self.agreement[:3])),
            ("validity", not self.validity, "; ".join(self.validity[:3])),
            ("total_order", not self.total_order, "; ".join(self.total_order[:3])),
            ("liveness", self.live, "; ".join(self.liveness_span[:3]) or f"first final after GST: round {self.final_after_gst}"),
            ("message_bound", all(c <= self.message_bound for c in self.messages.values()), f"bound {self.message_bound}"),
            ("conservation", not self.conservation, "; ".join(self.conservation[:3])),
        ]


def parse_lines(lines):
    header = None
    records = []
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("kind") == "header":
            header = rec
        else:
            records.append(rec)
    if header is None:
        raise ValueError("trace has no header line")
    return header, records


def read_trace(path: str):
    with open(path) as fh:
        return parse_lines(fh)


def analyze(header: dict, records: list) -> Report:
    sc = scenario_from_dict(header["scenario"])
    rep = Report(scenario=sc)
    honest = set(range(sc.n)) - set(sc.adversary.corrupted)
    c = sc.committee
    rep.message_bound = message_volume(EstimatorInput(n_all=sc.n, n_pc=c.n_pc, n_fc=c.n_fc,
                                                      n_valid_leaders=c.n_valid_leaders,
                                                      n_empty_leaders=c.n_empty_leaders))
    begins = defaultdict(list)
    closes = defaultdict(dict)
    finals = defaultdict(dict)
    first_delivery = defaultdict(dict)
    vote1 = defaultdict(set)
    tentative_seen = set()
    chains = {}
    settles = {}
    credits = defaultdict(lambda: defaultdict(Fraction))
    abit_each = defaultdict(set)
    for rec in records:
        kind = rec["kind"]
        r = rec["round"]
        if kind in MESSAGE_KINDS:
            rep.messages[r] = rep.messages.get(r, 0) + 1
            fd = first_delivery[r]
            k = kind
            if kind == "block":
                if rec["detail"].startswith("final"):
                    k = "block"
                else:
                    tentative_seen.add(r)
                    continue
            if k not in fd:
                fd[k] = rec["t"]
            if kind == "vote1" and rec["from"] in honest:
                vote1[r].add(rec["detail"])
            continue
        node = rec["from"]
        if kind == "begin" and node in honest:
            begins[r].append(rec["t"])
        elif kind == "close" and node in honest:
            closes[r].setdefault(node, rec["t"])
            how, h = rec["detail"].split(":")
            if how == "final":
                finals[r].setdefault(node, (rec["t"], h))
            else:
                tentative_seen.add(r)
        elif kind == "violation" and node in honest:
            rep.agreement.append(f"node {node} round {r}: {rec['detail']}")
        elif kind == "equivocation" and node in honest:
            rep.equivocations += 1
        elif kind == "chain":
            chains[node] = [e.split(":") for e in rec["detail"].split(",")] if rec["detail"] else []
        elif kind == "settle":
            settles[r] = rec["detail"].split(":")
        elif kind == "credit":
            role, token, amount = rec["detail"].split(":")
            credits[r][token] += Fraction(amount)
            if token == "abit":
                abit_each[r].add(Fraction(amount))
        elif kind == "ledger":
            abc, abit, frozen, reputation = rec["detail"].split(":")
            rep.ledger_rows.append((node, abc, abit, frozen, reputation))

    # agreement: one final value per round, prefix-compatible confirmed chains
    for r, per_node in finals.items():
        values = {h for _, h in per_node.values()}
        if len(values) > 1:
            rep.agreement.append(f"round {r}: honest nodes finalized {sorted(values)}")
    confirmed = {}
    for node, entries in sorted(chains.items()):
        for e in entries:
            rnd, h, k = int(e[0]), e[1], e[2]
            if k == "p":
                continue
            prev = confirmed.setdefault(rnd, (h, node))
            if prev[0] != h:
                rep.agreement.append(f"round {rnd}: node {node} confirmed {h}, node {prev[1]} confirmed {prev[0]}")

    # total order: cumulative transaction digests agree wherever both nodes confirmed
    order = {}
    for node, entries in sorted(chains.items()):
        for e in entries:
            if e[2] == "p":
                continue
            rnd, count, digest = int(e[0]), e[3], e[4]
            prev = order.setdefault(rnd, (count, digest, node))
            if prev[:2] != (count, digest):
                rep.total_order.append(f"round {rnd}: node {node} tx order differs from node {prev[2]}")

    # validity: unanimous honest step-1 votes must be what finalizes, once the network is timely
    gst = sc.network.gst if sc.network.mode == "partial" else 0
    for r, hashes in vote1.items():
        if len(hashes) != 1 or not begins.get(r) or min(begins[r]) < gst:
            continue
        (h,) = hashes
        for node, (_, fh) in finals.get(r, {}).items():
            if fh != h:
                rep.validity.append(f"round {r}: honest step-1 votes were unanimous for {h}, node {node} finalized {fh}")
                break

    # rounds on the most advanced honest chain
    best = None
    for node, entries in chains.items():
        last_final = max((int(e[0]) for e in entries if e[2] == "f"), default=0)
        key = (last_final, len(entries), -node)
        if best is None or key > best[0]:
            best = (key, entries)
    if best:
        for e in best[1]:
            rep.rounds[int(e[0])] = {"f": "final", "t": "tentative", "p": "pending"}[e[2]] + ":" + e[1]
        rep.final_rounds = sum(1 for v in rep.rounds.values() if v.startswith("final"))
        rep.tentative_rounds = len(rep.rounds) - rep.final_rounds

    # latency and liveness
    t = sc.timeouts
    for r, starts in begins.items():
        if r in closes and closes[r]:
            rep.latencies[r] = max(closes[r].values()) - min(starts)
    if sc.network.mode == "partial":
        for r, span in sorted(rep.latencies.items()):
            if min(begins[r]) >= gst and span > t.sbr + t.lambda_all:
                rep.liveness_span.append(f"round {r} took {span} ms")
        in_progress = max((r for r, ts in begins.items() if min(ts) <= gst), default=1)
        rep.gst_round = in_progress
        after = sorted(r for r, per in finals.items() if any(tt >= gst for tt, _ in per.values()))
        if after and after[0] <= in_progress + 4:
            rep.final_after_gst = after[0]
    else:
        rep.gst_round = 0
        rep.final_after_gst = min(finals, default=None)

    # the per-round message-delay chain of fault-free final rounds
    # the run stops once every honest node closed its last round, so the
    # newest round may be cut off mid-broadcast
    last = max(finals, default=0)
    for r in sorted(finals):
        if r in tentative_seen or r == last:
            continue
        fd = first_delivery.get(r, {})
        times = [fd.get(k) for k in DELAY_PATTERN]
        rep.delay_pattern[r] = None not in times and all(a < b for a, b in zip(times, times[1:]))

    # incentive conservation, recomputed from the settlement records
    eco = sc.economy
    prev_issued, prev_final = Fraction(0), True
    for r in sorted(settles):
        kind, n_pc, n_fc, n_lead, tx_bytes, issued = settles[r]
        n_pc, n_fc, n_lead, tx_bytes = int(n_pc), int(n_fc), int(n_lead), int(tx_bytes)
        issued = Fraction(issued)
        final = kind == "final"
        expect = round_issuance(eco, n_fc, n_lead, tx_bytes) if final and tx_bytes > 0 and n_fc and n_lead else Fraction(0)
        if issued != expect or credits[r]["abc"] != expect:
            rep.conservation.append(f"round {r}: credited {credits[r]['abc']}, closed form {expect}")
        abit = pc_reward(prev_issued * eco.rounds_per_year, eco, max(n_pc, 1), prev_final)
        if credits[r]["abit"] != abit * (n_pc if abit else 0):
            rep.conservation.append(f"round {r}: ABIT credited {credits[r]['abit']}, expected {abit} x {n_pc}")
        if not prev_final and credits[r]["abit"] != 0:
            rep.conservation.append(f"round {r}: PC rewarded after a tentative round")
        prev_issued, prev_final = issued, final
    return rep


def analyze_lines(lines) -> Report:
    return analyze(*parse_lines(lines))


def render_text(rep: Report) -> str:
    sc = rep.scenario
    lat = list(rep.latencies.values())
    out = [
        f"nodes: {sc.n}  seed: {sc.seed}  rounds requested: {sc.rounds}",
        f"adversary: {sc.adversary.strategy} corrupted={list(sc.adversary.corrupted)}",
        f"rounds final: {rep.final_rounds}  tentative: {rep.tentative_rounds}",
    ]
    if lat:
        q = statistics.quantiles(lat, n=4) if len(lat) > 1 else [lat[0]] * 3
        out.append(f"round latency ms: min {min(lat)}  p25 {q[0]:.0f}  median {q[1]:.0f}  p75 {q[2]:.0f}  max {max(lat)}")
    if rep.messages:
        out.append(f"messages per round: max {max(rep.messages.values())}  bound {rep.message_bound}")
    if rep.delay_pattern:
        ok = sum(rep.delay_pattern.values())
        out.append(f"8-delay pattern: {ok}/{len(rep.delay_pattern)} fault-free final rounds")
    out.append(f"equivocations detected: {rep.equivocations}")
    for name, ok, detail in rep.verdicts():
        out.append(f"{name}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else ""))
    return "\n".join(out) + "\n"


def rounds_csv(rep: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "outcome", "hash", "latency_ms", "messages", "message_bound", "delay_pattern"])
    for r in sorted(set(rep.rounds) | set(rep.latencies)):
        outcome, _, h = rep.rounds.get(r, "open:").partition(":")
        pat = rep.delay_pattern.get(r)
        w.writerow([r, outcome, h, rep.latencies.get(r, ""), rep.messages.get(r, 0), rep.message_bound,
                    "" if pat is None else int(pat)])
    return buf.getvalue()


def verdicts_csv(rep: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "ok", "detail"])
    for name, ok, detail in rep.verdicts():
        w.writerow([name, int(ok), detail])
    return buf.getvalue()


def ledger_csv(rep: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node_id", "abc", "abit", "frozen", "reputation"])
    for row in rep.ledger_rows:
        w.writerow(row)
    return buf.getvalue()
