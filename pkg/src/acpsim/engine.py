"""One node's ACP state machine, round after round.

A node runs Stage 1 (Potential Committee) and Stage 2 (Final Committee,
proposal) when it begins a round, the two Reduction steps on timers or as
soon as a quorum shows up, the PBFT* coordinator after Reduction, and closes
the round either final (decided or certified block) or tentative (empty
block at the synchronization barrier).

Nodes never call each other. Every entry point appends actions to
``node.out`` which the simulation kernel drains:

* ``("send", recipients, msg)``
* ``("timer", at_ms, name, round, epoch)``
* ``("note", kind, round, detail, stage)``
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .crypto import KeyPair, KeyRegistry, sign
from .ledger import FINAL, TENTATIVE, Block, Chain, Transaction, TxPool, make_empty_block, replay_chain
from .pbft import (
    COMMIT,
    CertMsg,
    Coordinator,
    InvalidReply,
    PbftMsg,
    pbft_signing_bytes,
    ReplyMsg,
    verify_commit_certificate,
    verify_prepared_certificate,
)
from .reduction import (
    EquivocationDetected,
    ProposalMsg,
    VoteBook,
    VoteMsg,
    proposal_signing_bytes,
    quorum_threshold,
    reduction_output,
    step1_choice,
    step2_choice,
    vote_signing_bytes,
)
from .sortition import (
    CommitteeParams,
    Credential,
    fc_threshold_met,
    NodeRecord,
    RandomSeed,
    make_credential,
    next_seed,
    rank_leaders,
    select_pc,
    verify_credential,
)

OBSERVER = "observer"
PC_MEMBER = "pc_member"
FC_MEMBER = "fc_member"


class StaleEvent(Exception):
    pass


@dataclass(frozen=True)
class Timeouts:
    lambda_pc: int = 500
    lambda_fc: int = 200
    lambda_all: int = 3000
    sbr: int = 2 * (500 + 2 * 200 + 4 * 200)

    def validate(self) -> None:
        for name in ("lambda_pc", "lambda_fc", "lambda_all", "sbr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sbr < self.lambda_fc:
            raise ValueError("sbr must be >= lambda_fc")
        if self.sbr <= self.lambda_pc + 2 * self.lambda_fc:
            raise ValueError("sbr must leave room after both Reduction steps")


@dataclass(frozen=True, slots=True)
class ConsensusBlockMsg:
    """Stage P broadcast of a final or tentative block."""

    sender: int
    block: Block

    kind = "block"
    stage = "P"

    @property
    def round(self) -> int:
        return self.block.round

    def detail(self) -> str:
        return f"{self.block.consensus_kind}:{self.block.block_hash.hex()[:16]}"


@dataclass(frozen=True, slots=True)
class SyncRequest:
    sender: int
    last_final_round: int
    last_final_hash: bytes

    kind = "sync_req"
    stage = "R"

    @property
    def round(self) -> int:
        return self.last_final_round

    def detail(self) -> str:
        return self.last_final_hash.hex()[:16]


@dataclass(frozen=True, slots=True)
class SyncResponse:
    sender: int
    blocks: tuple

    kind = "sync_resp"
    stage = "R"

    @property
    def round(self) -> int:
        return self.blocks[-1].round if self.blocks else 0

    def detail(self) -> str:
        return f"{len(self.blocks)}"


@dataclass(frozen=True)
class Committee:
    pc: tuple
    pc_set: frozenset
    fc: tuple
    fc_set: frozenset
    valid_leaders: tuple
    empty_leaders: tuple


class NodeContext:
    """Shared, read-only view of the deployment: keys, parameters, sortition.

    Credentials depend only on (secret key, round), so the context derives
    them once; a node still verifies every credential it relies on.
    """

    def __init__(self, keypairs, reputations, params: CommitteeParams, timeouts: Timeouts,
                 block_bytes: int, selfish=()):
        self.keypairs = tuple(keypairs)
        self.node_ids = tuple(range(len(self.keypairs)))
        self.public_keys = tuple(kp.public_key for kp in self.keypairs)
        self.registry = KeyRegistry(self.keypairs)
        self.records = tuple(
            NodeRecord(i, kp.public_key, reputations[i]) for i, kp in enumerate(self.keypairs)
        )
        self.params = params
        self.timeouts = timeouts
        self.block_bytes = block_bytes
        self.quorum = quorum_threshold(params.n_fc) if params.n_fc else 0
        self.f = (params.n_fc - 1) // 3
        self.selfish = frozenset(selfish)
        self._creds = {}
        self._committees = {}
        self._cred_ok = set()

    def credential(self, node_id: int, round: int) -> Credential:
        key = (node_id, round)
        c = self._creds.get(key)
        if c is None:
            c = make_credential(self.keypairs[node_id].secret_key, node_id, round)
            self._creds[key] = c
        return c

    def committee(self, seed: RandomSeed, round: int) -> Committee:
        key = (seed.value, round)
        com = self._committees.get(key)
        if com is None:
            p = self.params
            pc = select_pc(self.records, seed, round, p.n_pc)
            fc = tuple(sorted(i for i in pc if fc_threshold_met(self.credential(i, round).vrf.value, p.n_fc, p.n_pc)))
            if fc:
                valid, empty = rank_leaders([self.credential(i, round) for i in fc], _leader_params(p, len(fc)))
            else:
                valid, empty = (), ()
            com = Committee(pc, frozenset(pc), fc, frozenset(fc), valid, empty)
            self._committees[key] = com
        return com

    def verify(self, node_id: int, msg: bytes, sig: bytes) -> bool:
        if not 0 <= node_id < len(self.public_keys):
            return False
        return self.registry.verify_sig(self.public_keys[node_id], msg, sig)

    def credential_ok(self, cred: Credential) -> bool:
        key = (cred.node_id, cred.round, cred.vrf.value)
        if key in self._cred_ok:
            return True
        if not 0 <= cred.node_id < len(self.public_keys):
            return False
        ok = verify_credential(self.registry, self.public_keys[cred.node_id], cred)
        if ok:
            self._cred_ok.add(key)
        return ok


def _leader_params(p: CommitteeParams, fc_size: int) -> CommitteeParams:
    # a small committee cannot supply more leaders than it has members
    return CommitteeParams(p.n_pc, p.n_fc, min(p.n_valid_leaders, fc_size), min(p.n_empty_leaders, fc_size))


@dataclass
class RoundState:
    round: int
    t0: int
    epoch: int
    role: str
    committee: Committee
    tip: Block
    empty: Block
    proposals: dict = field(default_factory=dict)
    vote1: Optional[bytes] = None
    vote2: Optional[bytes] = None
    votes1: Optional[VoteBook] = None
    votes2: Optional[VoteBook] = None
    outcome: object = None
    coord: Optional[Coordinator] = None
    closed: Optional[str] = None
    early_pbft: list = field(default_factory=list)
    tentatives: set = field(default_factory=set)

    @property
    def stage(self) -> str:
        if self.closed:
            return "P"
        if self.outcome is not None:
            return "4"
        if self.vote1 is not None:
            return "3"
        return "2" if self.role == FC_MEMBER else "1"


class Node:
    """An honest ACP participant; adversarial behavior is layered on by the kernel."""

    def __init__(self, node_id: int, keypair: KeyPair, ctx: NodeContext, genesis: Block):
        self.id = node_id
        self.keypair = keypair
        self.ctx = ctx
        self.chain = Chain(genesis)
        self.pool = TxPool()
        self.seeds = {genesis.block_hash: RandomSeed(genesis.block_hash, 0)}
        self.out = []
        self.state = None
        self.epoch = 0
        self.coords = {}
        self.locks = {}
        self.future = defaultdict(list)
        self.sync_asked = set()
        self.final_broadcast = set()
        self.selfish = node_id in ctx.selfish
        self.everyone = tuple(i for i in ctx.node_ids if i != node_id)
        self.dropped = 0
        self.now = 0

    # -- small helpers ----------------------------------------------------

    def _sign(self, msg: bytes) -> bytes:
        return sign(self.keypair.secret_key, msg)

    def _send(self, recipients, msg) -> None:
        if recipients:
            self.out.append(("send", recipients, msg))

    def _timer(self, at: int, name: str) -> None:
        self.out.append(("timer", at, name, self.state.round, self.epoch))

    def _note(self, kind: str, round: int, detail: str = "") -> None:
        st = self.state
        self.out.append(("note", kind, round, detail, st.stage if st is not None else "-"))

    def _peers(self, members) -> tuple:
        return tuple(m for m in members if m != self.id)

    def _seed_for(self, block: Block) -> Optional[RandomSeed]:
        return self.seeds.get(block.block_hash)

    def _record_seed(self, block: Block) -> None:
        if block.block_hash in self.seeds:
            return
        prev = self.seeds.get(block.predecessor)
        if prev is not None and block.round == prev.round + 1:
            self.seeds[block.block_hash] = next_seed(prev, block)

    @property
    def last_final(self) -> Block:
        return self.chain.last_final

    # -- round lifecycle --------------------------------------------------

    def start(self, now: int) -> None:
        self.begin_round(now)

    def begin_round(self, now: int) -> RoundState:
        """Start the round after the chain tip: Stage 1 and Stage 2."""
        tip = self.chain.tip
        r = tip.round + 1
        self.now = now
        self.epoch += 1
        com = self.ctx.committee(self.seeds[tip.block_hash], r)
        if self.id in com.fc_set:
            role = FC_MEMBER
        elif self.id in com.pc_set:
            role = PC_MEMBER
        else:
            role = OBSERVER
        st = RoundState(r, now, self.epoch, role, com, tip, make_empty_block(r, tip.block_hash))
        self.state = st
        t = self.ctx.timeouts
        if role == FC_MEMBER:
            st.votes1 = VoteBook(1, self.ctx.params.n_fc)
            st.votes2 = VoteBook(2, self.ctx.params.n_fc)
            self._timer(now + t.lambda_pc, "pc")
            self._timer(now + t.lambda_pc + t.lambda_fc, "s1")
            self._timer(now + t.lambda_pc + 2 * t.lambda_fc, "s2")
            self._timer(now + t.sbr, "sbr")
            self._propose(st)
        else:
            self._timer(now + t.sbr + t.lambda_all, "watch")
        self._note("begin", r, role)
        self._resend_locks(r)
        for stale in [k for k in self.future if k < r]:
            del self.future[stale]
        for msg in self.future.pop(r, ()):
            if self.state is not st:
                break
            self.on_message(msg, now)
        return st

    def _resend_locks(self, r: int) -> None:
        # a lock from an earlier round that closed without it (the certificate
        # never got through) is offered again so the others can convert
        lf = self.last_final.round
        for lr, h in sorted(self.locks.items()):
            if not lf < lr < r:
                continue
            b = self.chain.block_at(lr)
            coord = self.coords.get(lr)
            if coord is None or (b is not None and b.block_hash == h):
                continue
            for recipients, m in coord.resend_lock():
                self._send(recipients, m)

    def _propose(self, st: RoundState) -> None:
        txs = self.pool.select(self.ctx.block_bytes, submitter=self.id if self.selfish else None)
        if not txs:
            return
        block = Block(st.round, st.tip.block_hash, self.id, tuple(txs))
        lf = self.last_final
        msg = ProposalMsg(
            block,
            self._sign(proposal_signing_bytes(block.block_hash)),
            self.ctx.credential(self.id, st.round),
            lf.round,
            lf.block_hash,
        )
        st.proposals[block.block_hash] = msg
        self._send(self._peers(st.committee.pc), msg)

    def on_timer(self, name: str, round: int, epoch: int, now: int) -> None:
        self.now = now
        st = self.state
        if epoch != self.epoch or round != st.round or st.closed:
            return
        if name == "pc":
            self._cast_vote1(st)
        elif name == "s1":
            self._cast_vote2(st)
        elif name == "s2":
            self._output(st, now)
        elif name == "sbr":
            self._sbr(st, now)
        elif name == "watch":
            self._close_tentative(st, now, broadcast=False)

    # -- message dispatch -------------------------------------------------

    def on_message(self, msg, now: int) -> None:
        self.now = now
        t = type(msg)
        if t is ConsensusBlockMsg:
            self._on_block(msg, now)
            return
        if t is SyncRequest:
            self._on_sync_request(msg)
            return
        if t is SyncResponse:
            self._on_sync_response(msg, now)
            return
        st = self.state
        r = msg.round
        if r > st.round:
            if t is ProposalMsg:
                self._check_fork(msg)
            if r <= st.round + 2:
                self.future[r].append(msg)
            return
        if r < st.round:
            if t is ReplyMsg:
                mine = self.chain.block_at(r)
                if mine is not None and mine.consensus_kind == FINAL and mine.block_hash == msg.block.block_hash:
                    self._broadcast_final(mine)
                    return
            if r > self.last_final.round and (
                t is ReplyMsg or t is CertMsg or (t is PbftMsg and msg.phase == COMMIT)
            ):
                coord = self.coords.get(r)
                if coord is not None:
                    self._pbft_late(coord, msg, now)
                    return
            self.dropped += 1
            return
        if st.role != FC_MEMBER:
            return
        if t is ProposalMsg:
            self._on_proposal(st, msg)
        elif t is VoteMsg:
            self._on_vote(st, msg, now)
        elif t is PbftMsg or t is CertMsg:
            if st.coord is None:
                st.early_pbft.append(msg)
            else:
                self._pbft(st.coord, msg, now)
        elif t is ReplyMsg:
            coord = st.coord or self.coords.get(r)
            if coord is None:
                st.early_pbft.append(msg)
            else:
                self._on_reply(coord, msg, now)

    # -- Stage 2 / 3 ------------------------------------------------------

    def _on_proposal(self, st: RoundState, msg: ProposalMsg) -> None:
        if st.vote1 is not None:
            self.dropped += 1
            return
        sender = msg.sender
        if sender not in st.committee.fc_set or msg.credential.node_id != sender or msg.credential.round != st.round:
            return
        if not self.ctx.credential_ok(msg.credential):
            return
        if not self.ctx.verify(sender, proposal_signing_bytes(msg.block.block_hash), msg.signature):
            return
        if msg.block.predecessor != st.tip.block_hash:
            self._check_fork(msg)
            return
        if msg.block.is_empty or msg.block.tx_bytes > self.ctx.block_bytes:
            return
        for other in st.proposals.values():
            if other.sender == sender and other.block.block_hash != msg.block.block_hash:
                self._note("equivocation", st.round, f"proposal:{sender}")
                return
        st.proposals.setdefault(msg.block.block_hash, msg)

    def _check_fork(self, msg: ProposalMsg) -> None:
        # the sender holds a final block we lack: either past our current
        # round (we fell behind) or on a branch other than ours
        lf = msg.last_final_round
        if lf > self.last_final.round and (lf >= self.state.round or msg.round == self.state.round):
            self._request_sync(msg.sender)

    def _vote(self, st: RoundState, step: int, h: bytes) -> None:
        msg = VoteMsg(self.id, st.round, step, h, self._sign(vote_signing_bytes(self.id, st.round, step, h)),
                      self.ctx.credential(self.id, st.round))
        self._send(self._peers(st.committee.fc), msg)
        book = st.votes1 if step == 1 else st.votes2
        reached = book.add(msg)
        if reached is not None:
            self._on_quorum(st, step)

    def _cast_vote1(self, st: RoundState) -> None:
        if st.vote1 is not None:
            return
        st.vote1 = step1_choice(list(st.proposals.values()), st.empty)
        self._vote(st, 1, st.vote1)

    def _cast_vote2(self, st: RoundState) -> None:
        if st.vote2 is not None:
            return
        self._cast_vote1(st)
        if st.vote2 is not None or self.state is not st:
            return
        st.vote2 = step2_choice(st.votes1.winner(), st.empty)
        self._vote(st, 2, st.vote2)

    def _on_vote(self, st: RoundState, msg: VoteMsg, now: int) -> None:
        if msg.voter not in st.committee.fc_set or msg.credential.node_id != msg.voter:
            return
        if msg.step == 2 and st.outcome is not None:
            self.dropped += 1
            return
        if not self.ctx.credential_ok(msg.credential):
            return
        if not self.ctx.verify(msg.voter, vote_signing_bytes(msg.voter, msg.round, msg.step, msg.block_hash), msg.signature):
            return
        book = st.votes1 if msg.step == 1 else st.votes2
        try:
            reached = book.add(msg)
        except EquivocationDetected as exc:
            self._note("equivocation", st.round, f"vote{exc.step}:{exc.voter}")
            return
        if reached is not None:
            self._on_quorum(st, msg.step)

    def _on_quorum(self, st: RoundState, step: int) -> None:
        # a node that sees a quorum before its own timer catches up at once
        if step == 1:
            self._cast_vote2(st)
        elif st.outcome is None:
            self._output(st, self.now)

    def _output(self, st: RoundState, now: int) -> None:
        if st.outcome is not None or st.closed:
            return
        self._cast_vote2(st)
        if self.state is not st:
            return
        known = {h: p.block for h, p in st.proposals.items()}
        st.outcome = reduction_output(st.votes2.winner(), st.empty, known)
        self._note("reduction", st.round, ("alert:" if st.outcome.alert else "cb:") + st.outcome.block_hash.hex()[:16])
        old = self.coords.get(st.round)
        coord = Coordinator(
            self.id,
            st.round,
            st.committee.fc,
            self.ctx.params.n_fc,
            st.outcome,
            st.committee.valid_leaders,
            st.committee.empty_leaders,
            st.empty,
            st.tip.block_hash,
            self._sign,
            may_commit=self._may_commit,
            step1_support=st.votes1.support,
            known_blocks=known,
        )
        if old is not None:
            coord.commits = old.commits
        coord.committed = self.locks.get(st.round)
        st.coord = coord
        self.coords[st.round] = coord
        self._drive(coord, coord.start(), now)
        early, st.early_pbft = st.early_pbft, []
        for m in early:
            if self.state is not st or st.closed:
                break
            if type(m) is ReplyMsg:
                self._on_reply(coord, m, now)
            else:
                self._pbft(coord, m, now)

    # -- Stage 4 ----------------------------------------------------------

    def _may_commit(self, block: Block) -> bool:
        """Cross-round lock guard.

        A commit sent for round r on a value the chain no longer holds pins
        the node: no prepare or commit on top of a different block at r until
        a final block past r settles it, and no going back to an earlier
        round once the node committed in a later one.
        """
        anc = self.chain.block_at(block.round - 1)
        if anc is None or anc.block_hash != block.predecessor:
            return False
        lf = self.last_final.round
        for r, h in self.locks.items():
            if r <= lf:
                continue
            if r < block.round:
                b = self.chain.block_at(r)
                if b is None or b.block_hash != h:
                    return False
            elif r > block.round:
                return False
        return True

    def _verify_pbft(self, coord: Coordinator, msg) -> bool:
        if type(msg) is CertMsg:
            return verify_prepared_certificate(msg, coord.quorum, coord.fc_members, self.ctx.verify)
        if msg.sender not in coord.fc_members:
            return False
        return self.ctx.verify(msg.sender, pbft_signing_bytes(msg.instance, msg.phase, msg.block_hash, msg.sender), msg.signature)

    def _pbft(self, coord: Coordinator, msg, now: int) -> None:
        if not self._verify_pbft(coord, msg):
            return
        self._drive(coord, coord.handle(msg), now)

    def _pbft_late(self, coord: Coordinator, msg, now: int) -> None:
        if type(msg) is ReplyMsg:
            self._on_reply(coord, msg, now)
        else:
            self._pbft(coord, msg, now)

    def _drive(self, coord: Coordinator, outs, now: int) -> None:
        for recipients, m in outs:
            self._send(recipients, m)
        if coord.committed is not None and coord.round not in self.locks:
            self.locks[coord.round] = coord.committed
        if coord.detected:
            for what, who in coord.detected:
                self._note("equivocation", coord.round, f"{what}:{who}")
            coord.detected.clear()
        if coord.decided is not None and coord.decided_via == "commit" and not coord.reported:
            coord.reported = True
            self._note("decide", coord.round, coord.decided.block_hash.hex()[:16])
            if not coord.peers:
                self._broadcast_final(coord.decided)
            self._close_final(coord.decided, now, source=None)

    def _on_reply(self, coord: Coordinator, msg: ReplyMsg, now: int) -> None:
        if msg.sender not in coord.fc_members:
            return
        try:
            block = coord.on_reply(msg, lambda b: verify_commit_certificate(b, coord.quorum, coord.fc_members, self.ctx.verify))
        except InvalidReply:
            self._note("invalid_reply", coord.round, str(msg.sender))
            return
        if block.block_hash != msg.block.block_hash:
            self._note("violation", coord.round, f"reply:{msg.block.block_hash.hex()[:16]}!={block.block_hash.hex()[:16]}")
            return
        if not coord.reported:
            coord.reported = True
            self._note("decide", coord.round, block.block_hash.hex()[:16])
        self._broadcast_final(block)
        self._close_final(block, now, source=msg.sender)

    def _broadcast_final(self, block: Block) -> None:
        if block.round in self.final_broadcast:
            return
        self.final_broadcast.add(block.round)
        self._send(self.everyone, ConsensusBlockMsg(self.id, block))

    def _sbr(self, st: RoundState, now: int) -> None:
        coord = st.coord
        if coord is not None:
            cert = coord.lock_certificate()
            if cert is not None:
                self._send(coord.peers, cert)
        self._close_tentative(st, now, broadcast=True)

    # -- Stage P ----------------------------------------------------------

    def _close_tentative(self, st: RoundState, now: int, broadcast: bool) -> None:
        if st.closed or self.state is not st:
            return
        block = st.empty.with_kind(TENTATIVE)
        if self.chain.tip.block_hash != block.predecessor:
            return
        st.closed = TENTATIVE
        if broadcast:
            self._send(self.everyone, ConsensusBlockMsg(self.id, block))
        self.chain.append(block)
        self._record_seed(block)
        self._note("close", st.round, f"tentative:{block.block_hash.hex()[:16]}")
        self.begin_round(now)

    def _close_final(self, block: Block, now: int, source: Optional[int]) -> None:
        """Integrate a verified final block; may supersede tentatives or ask for sync."""
        ch = self.chain
        r = block.round
        st = self.state
        existing = ch.block_at(r)
        restart = False
        if existing is not None:
            if existing.block_hash == block.block_hash:
                if existing.consensus_kind == FINAL:
                    return
                ch.finalize_pending(block)
            elif ch.is_confirmed(existing):
                self._note("violation", r, f"final:{block.block_hash.hex()[:16]}!={existing.block_hash.hex()[:16]}")
                return
            else:
                anc = ch.block_at(r - 1)
                if anc is None or anc.block_hash != block.predecessor:
                    if source is not None:
                        self._request_sync(source)
                    return
                ch.supersede(block)
                restart = True
        elif r == ch.tip.round + 1 and block.predecessor == ch.tip.block_hash:
            ch.append(block)
        else:
            if source is not None:
                self._request_sync(source)
            return
        self._record_seed(block)
        self.pool.remove(tx.tx_id for tx in block.transactions)
        self._prune()
        self._note("close", r, f"final:{block.block_hash.hex()[:16]}")
        if r >= st.round:
            st.closed = FINAL
            self.begin_round(now)
        elif restart:
            self._note("reanchor", r, str(st.round))
            self.begin_round(now)

    def _prune(self) -> None:
        lf = self.last_final.round
        for r in [r for r in self.coords if r <= lf]:
            del self.coords[r]
        for r in [r for r in self.locks if r <= lf]:
            del self.locks[r]

    def _on_block(self, msg: ConsensusBlockMsg, now: int) -> None:
        b = msg.block
        st = self.state
        if b.consensus_kind == FINAL:
            existing = self.chain.block_at(b.round)
            if existing is not None and existing.block_hash == b.block_hash and existing.consensus_kind == FINAL:
                return
            if b.round <= self.last_final.round and existing is not None and self.chain.is_confirmed(existing):
                if existing.block_hash != b.block_hash:
                    self._note("violation", b.round, f"final:{b.block_hash.hex()[:16]}!={existing.block_hash.hex()[:16]}")
                return
            seed = self.seeds.get(b.predecessor)
            if seed is None or seed.round != b.round - 1:
                self._request_sync(msg.sender)
                return
            com = self.ctx.committee(seed, b.round)
            if not verify_commit_certificate(b, self.ctx.quorum, com.fc_set, self.ctx.verify):
                self._note("invalid_block", b.round, str(msg.sender))
                return
            self._close_final(b, now, source=msg.sender)
            return
        if b.consensus_kind != TENTATIVE or st.closed or b.round != st.round:
            return
        if b.block_hash != st.empty.block_hash or msg.sender not in st.committee.fc_set:
            return
        st.tentatives.add(msg.sender)
        if len(st.tentatives) >= self.ctx.f + 1:
            self._close_tentative(st, now, broadcast=st.role == FC_MEMBER)

    # -- Stage R ----------------------------------------------------------

    def _request_sync(self, peer: int) -> None:
        lf = self.last_final
        key = (peer, lf.round)
        if peer == self.id or key in self.sync_asked:
            return
        self.sync_asked.add(key)
        self._send((peer,), SyncRequest(self.id, lf.round, lf.block_hash))

    def _on_sync_request(self, msg: SyncRequest) -> None:
        ch = self.chain
        if self.last_final.round <= msg.last_final_round:
            return
        anchor = ch.block_at(msg.last_final_round)
        if anchor is None or anchor.block_hash != msg.last_final_hash:
            return
        blocks = tuple(b for b in ch.blocks + ch.pending if b.round > msg.last_final_round)
        self._send((msg.sender,), SyncResponse(self.id, blocks))

    def _on_sync_response(self, msg: SyncResponse, now: int) -> None:
        if self.recover(msg.blocks):
            self._note("adopt", self.last_final.round, f"{msg.sender}:{self.last_final.block_hash.hex()[:16]}")
            self.begin_round(now)

    def recover(self, branch) -> bool:
        """Adopt ``branch`` if its last final block is higher than ours.

        The branch must link onto one of our confirmed blocks, carry valid
        commit certificates on its final blocks and canonical empty blocks
        elsewhere. Our pending tentatives are discarded.
        """
        branch = list(branch)
        finals = [b for b in branch if b.consensus_kind == FINAL]
        if not finals or finals[-1].round <= self.last_final.round:
            return False
        ch = self.chain
        base = ch.block_at(branch[0].round - 1)
        if base is None or base.block_hash != branch[0].predecessor or base.round > self.last_final.round:
            return False
        seed = self.seeds.get(base.block_hash)
        if seed is None:
            return False
        prev = base
        new_seeds = {}
        for b in branch:
            if b.predecessor != prev.block_hash or b.round != prev.round + 1:
                return False
            if b.consensus_kind == FINAL:
                com = self.ctx.committee(seed, b.round)
                if not verify_commit_certificate(b, self.ctx.quorum, com.fc_set, self.ctx.verify):
                    return False
            elif b.consensus_kind != TENTATIVE or b.block_hash != make_empty_block(b.round, prev.block_hash).block_hash:
                return False
            seed = next_seed(seed, b)
            new_seeds[b.block_hash] = seed
            prev = b
        at = {b.round: b.block_hash for b in branch}
        for b in ch.blocks:
            if b.round >= branch[0].round and at.get(b.round) != b.block_hash:
                self._note("violation", b.round, "sync branch drops a confirmed block")
                return False
        kept = [b for b in ch.blocks[1:] if b.round < branch[0].round]
        self.chain = replay_chain(ch.genesis, kept + branch)
        self.seeds.update(new_seeds)
        for b in branch:
            self.pool.remove(tx.tx_id for tx in b.transactions)
        self._prune()
        return True

    # -- introspection ----------------------------------------------------

    def confirmed(self) -> list:
        return list(self.chain.blocks)


def add_transactions(node: Node, txs, now: int) -> None:
    for tx in txs:
        if tx.tx_id not in node.pool:
            node.pool.add(tx, now)


__all__ = [
    "OBSERVER",
    "PC_MEMBER",
    "FC_MEMBER",
    "StaleEvent",
    "Timeouts",
    "ConsensusBlockMsg",
    "SyncRequest",
    "SyncResponse",
    "Committee",
    "NodeContext",
    "RoundState",
    "Node",
    "Transaction",
]
