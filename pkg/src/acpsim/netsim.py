"""Deterministic discrete-event network and the adversary library.

One heap of events ordered by (deliver_at, seq), one seeded generator for
delays, one JSON trace line per processed event. The scenario and its seed
fully determine the trace.
"""

from __future__ import annotations

import heapq
import json
import random
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

from .crypto import hash_bytes, sign, vrf_keygen
from .engine import FC_MEMBER, ConsensusBlockMsg, Node, NodeContext, Timeouts
from .incentives import EconomyParams, RewardLedger, settle_round, update_reputation
from .ledger import FINAL, Transaction, make_genesis
from .pbft import PRE_PREPARE, PbftMsg, pbft_signing_bytes
from .reduction import ProposalMsg, VoteMsg, proposal_signing_bytes, vote_signing_bytes
from .sortition import CommitteeParams, RandomSeed, next_seed

STRONG = "strong"
PARTIAL = "partial"

CRASH = "crash"
EQUIVOCATE = "equivocate"
WITHHOLD_VOTES = "withhold_votes"
DELAY_MAX = "delay_max"
SELFISH_PACK = "selfish_pack"
PARTITION = "partition"
NONE = "none"
STRATEGIES = (NONE, CRASH, EQUIVOCATE, WITHHOLD_VOTES, DELAY_MAX, SELFISH_PACK, PARTITION)
SAFETY_STRATEGIES = (CRASH, EQUIVOCATE, WITHHOLD_VOTES, DELAY_MAX)

TRACE_VERSION = 1

_DELIVER, _TIMER, _TX, _START = 0, 1, 2, 3


@dataclass(frozen=True)
class NetworkModel:
    mode: str = STRONG
    delta: int = 100
    gst: int = 0
    phi: int = 1
    delta_min: int = 10
    pre_gst_max: int = 1500
    proc_ms: int = 0
    drop_rate: float = 0.0
    dup_rate: float = 0.0

    def validate(self) -> None:
        if self.mode not in (STRONG, PARTIAL):
            raise ValueError(f"mode must be strong or partial, got {self.mode!r}")
        if self.delta <= 0 or self.gst < 0 or self.phi < 1:
            raise ValueError("need delta > 0, gst >= 0, phi >= 1")
        if not 0 < self.delta_min <= self.delta:
            raise ValueError("need 0 < delta_min <= delta")
        if self.pre_gst_max < self.delta_min or self.proc_ms < 0:
            raise ValueError("need pre_gst_max >= delta_min and proc_ms >= 0")
        if not (0 <= self.drop_rate < 1 and 0 <= self.dup_rate < 1):
            raise ValueError("drop_rate and dup_rate must be in [0, 1)")


@dataclass(frozen=True)
class PartitionSpec:
    groups: tuple
    start_ms: int
    heal_ms: int

    def group_of(self) -> dict:
        return {n: i for i, g in enumerate(self.groups) for n in g}


@dataclass(frozen=True)
class AdversarySpec:
    corrupted: tuple = ()
    strategy: str = NONE
    crash_at: int = 0
    partition: Optional[PartitionSpec] = None
    seed: int = 0

    def validate(self, n: int) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if any(not 0 <= c < n for c in self.corrupted) or len(set(self.corrupted)) != len(self.corrupted):
            raise ValueError("corrupted ids must be distinct node ids")
        if self.strategy == PARTITION:
            p = self.partition
            if p is None:
                raise ValueError("partition strategy needs a partition script")
            members = [x for g in p.groups for x in g]
            if sorted(members) != list(range(n)):
                raise ValueError("partition groups must cover every node exactly once")
            if not 0 <= p.start_ms <= p.heal_ms:
                raise ValueError("need 0 <= start_ms <= heal_ms")


@dataclass(frozen=True, slots=True)
class SimEvent:
    deliver_at: int
    seq: int
    recipient: int
    payload: object
    sender: int
    sent_at: int


@dataclass
class RunResult:
    lines: list
    nodes: list
    honest: tuple
    end_ms: int
    sent: dict = field(default_factory=dict)
    ledger: Optional[RewardLedger] = None

    @property
    def text(self) -> str:
        return "".join(self.lines)


def node_keypair(seed: int, node_id: int):
    return vrf_keygen(hash_bytes(b"acp/node" + struct.pack(">Qq", seed, node_id)))


def genesis_for(seed: int):
    return make_genesis(hash_bytes(b"acp/genesis" + struct.pack(">Q", seed)))


def _alt_hash(node: Node, round: int, h: bytes) -> bytes:
    """Another plausible value for an equivocating message."""
    st = node.state
    if st is not None and st.round == round:
        if h != st.empty.block_hash:
            return st.empty.block_hash
        for other in st.proposals:
            if other != h:
                return other
    return hash_bytes(b"acp/equivocation" + h)


def _alt_block(block):
    return replace(block, payload=block.payload + b"/equivocation")


def forge_variant(msg, node: Node):
    """A conflicting, correctly signed twin of ``msg`` from a corrupted node."""
    sk = node.keypair.secret_key
    t = type(msg)
    if t is ProposalMsg:
        b = _alt_block(msg.block)
        return ProposalMsg(b, sign(sk, proposal_signing_bytes(b.block_hash)), msg.credential,
                           msg.last_final_round, msg.last_final_hash)
    if t is VoteMsg:
        h = _alt_hash(node, msg.round, msg.block_hash)
        return replace(msg, block_hash=h, signature=sign(sk, vote_signing_bytes(msg.voter, msg.round, msg.step, h)))
    if t is PbftMsg:
        if msg.phase == PRE_PREPARE:
            if msg.block is None:
                return None
            b = _alt_block(msg.block)
            return PbftMsg(msg.instance, msg.phase, b.block_hash, msg.sender,
                           sign(sk, pbft_signing_bytes(msg.instance, msg.phase, b.block_hash, msg.sender)), b)
        h = _alt_hash(node, msg.round, msg.block_hash)
        return PbftMsg(msg.instance, msg.phase, h, msg.sender,
                       sign(sk, pbft_signing_bytes(msg.instance, msg.phase, h, msg.sender)))
    return None


class Kernel:
    """Runs every node of a scenario against the simulated network."""

    def __init__(self, scenario):
        sc = scenario
        self.sc = sc
        self.net = sc.network
        self.adv = sc.adversary
        self.rng = random.Random(f"acp/net/{sc.seed}")
        self.wrng = random.Random(f"acp/workload/{sc.seed}")
        n = sc.n
        self.keypairs = [node_keypair(sc.seed, i) for i in range(n)]
        reps = sc.reputations or tuple(Fraction(1) for _ in range(n))
        selfish = self.adv.corrupted if self.adv.strategy == SELFISH_PACK else ()
        self.ctx = NodeContext(self.keypairs, reps, sc.committee, sc.timeouts, sc.block_bytes, selfish)
        self.genesis = genesis_for(sc.seed)
        self.nodes = [Node(i, self.keypairs[i], self.ctx, self.genesis) for i in range(n)]
        self.corrupted = frozenset(self.adv.corrupted)
        self.strategy = self.adv.strategy if self.corrupted or self.adv.strategy == PARTITION else NONE
        self.honest = tuple(i for i in range(n) if i not in self.corrupted)
        self.heap = []
        self.seq = 0
        self.lines = []
        self.sent = {}
        self.tx_counter = 0
        self.stopped = False
        if self.strategy == PARTITION and self.adv.partition is not None:
            self._group = self.adv.partition.group_of()
            self._cut = (self.adv.partition.start_ms, self.adv.partition.heal_ms)
        else:
            self._group = None
        # per-node processing slowdown in [1, phi], fixed for the run
        self.speed = [1 + (self.rng.randrange(self.net.phi) if self.net.phi > 1 else 0) for _ in range(n)]

    # -- scheduling -------------------------------------------------------

    def _push(self, t: int, etype: int, a, b, c) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, etype, a, b, c))

    def _delay(self, sender: int, now: int) -> int:
        net = self.net
        if self.strategy == DELAY_MAX and sender in self.corrupted:
            d = net.delta
        elif net.mode == STRONG or now >= net.gst:
            d = net.delta_min + int(self.rng.random() * (net.delta - net.delta_min + 1))
        else:
            d = net.delta_min + int(self.rng.random() * (net.pre_gst_max - net.delta_min + 1))
            d = min(d, max(net.gst, now) + net.delta - now)
        if net.proc_ms:
            d += net.proc_ms * self.speed[sender]
        return d

    def schedule(self, sender: int, recipients, msg, now: int) -> int:
        """Queue one delivery per recipient; returns how many were queued."""
        queued = 0
        group = self._group
        net = self.net
        for r in recipients:
            if r == sender:
                continue
            if group is not None and self._cut[0] <= now < self._cut[1] and group[r] != group[sender]:
                continue
            if net.drop_rate and sender not in self.corrupted and self.rng.random() < net.drop_rate:
                continue
            self._push(now + self._delay(sender, now), _DELIVER, r, sender, msg)
            queued += 1
            if net.dup_rate and self.rng.random() < net.dup_rate:
                self._push(now + self._delay(sender, now), _DELIVER, r, sender, msg)
                queued += 1
        if queued:
            key = (msg.round, msg.kind)
            self.sent[key] = self.sent.get(key, 0) + queued
        return queued

    def apply_strategy(self, sender: int, recipients, msg, now: int) -> list:
        """Adversarial rewrite of one send: list of (recipients, msg)."""
        s = self.strategy
        if s == CRASH:
            return [] if now >= self.adv.crash_at else [(recipients, msg)]
        if s == WITHHOLD_VOTES:
            return [] if type(msg) is VoteMsg else [(recipients, msg)]
        if s == EQUIVOCATE:
            variant = forge_variant(msg, self.nodes[sender])
            if variant is None:
                return [(recipients, msg)]
            half = len(recipients) // 2
            return [(recipients[:half], msg), (recipients[half:], variant)]
        return [(recipients, msg)]

    def _crashed(self, node_id: int, now: int) -> bool:
        return self.strategy == CRASH and node_id in self.corrupted and now >= self.adv.crash_at

    # -- trace ------------------------------------------------------------

    def _line(self, t, kind, frm, to, rnd, stage, detail) -> None:
        self.lines.append(
            f'{{"t":{t},"kind":"{kind}","from":{frm},"to":{to},"round":{rnd},"stage":"{stage}","detail":"{detail}"}}\n'
        )

    def _drain(self, node: Node, now: int) -> None:
        out = node.out
        if not out:
            return
        nid = node.id
        byz = nid in self.corrupted
        for act in out:
            tag = act[0]
            if tag == "send":
                if byz:
                    for recips, m in self.apply_strategy(nid, act[1], act[2], now):
                        self.schedule(nid, recips, m, now)
                else:
                    self.schedule(nid, act[1], act[2], now)
            elif tag == "timer":
                self._push(act[1], _TIMER, nid, act[2:], None)
            else:
                self._line(now, act[1], nid, nid, act[2], act[4], act[3])
        out.clear()

    # -- main loop --------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.sc
        header = {"kind": "header", "version": TRACE_VERSION, "scenario": sc.to_dict()}
        self.lines.append(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        if sc.n == 0:
            return RunResult(self.lines, [], (), 0)
        wl = sc.workload
        if wl.batch > 0:
            self._push(0, _TX, None, None, None)
        for i in range(sc.n):
            self._push(0, _START, i, None, None)
        target = sc.rounds
        done = set()
        honest_set = frozenset(self.honest)
        need = len(self.honest)
        limit = sc.max_ms
        nodes = self.nodes
        now = 0
        heap = self.heap
        pop = heapq.heappop
        while heap:
            t, _, etype, a, b, c = pop(heap)
            if t > limit:
                break
            now = t
            if etype == _DELIVER:
                if self._crashed(a, t):
                    continue
                node = nodes[a]
                self._line(t, c.kind, b, a, c.round, c.stage, c.detail())
                node.on_message(c, t)
            elif etype == _TIMER:
                if self._crashed(a, t):
                    continue
                node = nodes[a]
                name, rnd, epoch = b
                if epoch != node.epoch:
                    continue
                self._line(t, "timer", a, a, rnd, node.state.stage, name)
                node.on_timer(name, rnd, epoch, t)
            elif etype == _TX:
                self._inject(t)
                continue
            else:
                node = nodes[a]
                self._line(t, "start", a, a, 1, "1", "")
                node.start(t)
            self._drain(node, t)
            if a in honest_set and a not in done and node.chain.tip.round >= target:
                done.add(a)
                if len(done) >= need:
                    break
        self.stopped = True
        ledger = self._finish(now)
        return RunResult(self.lines, self.nodes, self.honest, now, dict(self.sent), ledger)

    def _inject(self, now: int) -> None:
        wl = self.sc.workload
        txs = []
        for _ in range(wl.batch):
            self.tx_counter += 1
            tid = hash_bytes(b"acp/tx" + struct.pack(">QQ", self.sc.seed, self.tx_counter))
            size = self.wrng.randint(wl.size_min, wl.size_max)
            txs.append(Transaction(tid, size, self.wrng.randrange(self.sc.n)))
        for node in self.nodes:
            pool = node.pool
            for tx in txs:
                pool.add(tx, now)
        self._line(now, "tx", -1, -1, 0, "-", str(len(txs)))
        self._push(now + wl.interval_ms, _TX, None, None, None)

    # -- end of run -------------------------------------------------------

    def canonical(self):
        """Honest chain with the highest last final block (lowest id on ties)."""
        best = None
        for i in self.honest:
            ch = self.nodes[i].chain
            key = (ch.last_final.round, len(ch.blocks) + len(ch.pending), -i)
            if best is None or key > best[0]:
                best = (key, i)
        return self.nodes[best[1]] if best else None

    def _finish(self, now: int) -> Optional[RewardLedger]:
        blocks = {}
        for i in self.honest:
            ch = self.nodes[i].chain
            entries = []
            digest = b""
            count = 0
            for b in ch.blocks[1:]:
                for tx in b.transactions:
                    digest = hash_bytes(digest + tx.tx_id)
                    count += 1
                entries.append(f"{b.round}:{b.block_hash.hex()[:16]}:{b.consensus_kind[0]}:{count}:{digest.hex()[:16]}")
                blocks.setdefault(b.block_hash, b)
            for b in ch.pending:
                entries.append(f"{b.round}:{b.block_hash.hex()[:16]}:p:{count}:{digest.hex()[:16]}")
                blocks.setdefault(b.block_hash, b)
            self._line(now, "chain", i, i, ch.tip.round, "P", ",".join(entries))
        for h, b in sorted(blocks.items(), key=lambda kv: (kv[1].round, kv[0])):
            proposer = -1 if b.proposer is None else b.proposer
            self._line(now, "blockdef", proposer, -1, b.round, "P",
                       f"{h.hex()[:16]}:{b.predecessor.hex()[:16]}:{len(b.transactions)}:{b.tx_bytes}")
        node = self.canonical()
        if node is None:
            return None
        return self._settle(node, now)

    def _settle(self, node: Node, now: int) -> RewardLedger:
        sc = self.sc
        ledger = RewardLedger(sc.economy)
        for i in range(sc.n):
            ledger.reputation[i] = (sc.reputations[i] if sc.reputations else Fraction(1))
        seed = RandomSeed(self.genesis.block_hash, 0)
        prev_issued = Fraction(0)
        prev_final = True
        ch = node.chain
        for b in ch.blocks[1:]:
            com = self.ctx.committee(seed, b.round)
            final = b.consensus_kind == FINAL
            issued = settle_round(ledger, b.round, final, b, com.fc, com.valid_leaders, com.pc, prev_issued, prev_final)
            self._line(now, "settle", -1, -1, b.round, "P",
                       f"{'final' if final else 'tentative'}:{len(com.pc)}:{len(com.fc)}:{len(com.valid_leaders)}:{b.tx_bytes}:{issued}")
            if final:
                for m in com.fc:
                    ledger.reputation[m] = update_reputation(ledger.reputation[m], "honest_success", sc.economy)
            prev_issued, prev_final = issued, final
            seed = next_seed(seed, b)
        for c in ledger.credits:
            self._line(now, "credit", c.node_id, c.node_id, c.round, "P", f"{c.role}:{c.token}:{c.amount}")
        flagged = set()
        for line in self.lines:
            if '"kind":"equivocation"' in line:
                rec = json.loads(line)
                if rec["from"] in self.honest:
                    flagged.add(int(rec["detail"].rsplit(":", 1)[1]))
        for m in sorted(flagged):
            ledger.reputation[m] = update_reputation(ledger.reputation[m], "detected_malicious", sc.economy)
        for i in range(sc.n):
            self._line(now, "ledger", i, i, ch.tip.round, "P",
                       f"{ledger.abc.get(i, 0)}:{ledger.abit.get(i, 0)}:{ledger.frozen.get(i, 0)}:{ledger.reputation[i]}")
        return ledger


def simulate(scenario) -> RunResult:
    return Kernel(scenario).run()
