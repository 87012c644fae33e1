"""PBFT* instances and the per-round coordinator running them in parallel.

PBFT* is PBFT without view change whose Reply goes to the whole Final
Committee. Each round a node runs one instance per ranked leader: valid-kind
instances carry the Reduction candidate, empty-kind instances the canonical
empty block.

Two rules keep parallel instances from deciding different values:

* a node sends COMMIT for at most one value per round, whichever instance it
  became prepared in first;
* commit signatures cover (round, value, sender) only, so commits for the
  same value pool across instances and a decision certificate is just
  ``quorum`` distinct commit signatures for one value.

Quorums: a value is prepared with the pre-prepare plus ``q - 1`` matching
prepares and decided with ``q`` commits, ``q = quorum_threshold(n_fc)``.
For ``n_fc = 3f + 1`` that is the textbook 2f prepares / 2f + 1 commits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .ledger import FINAL, Block
from .reduction import ReductionOutcome, quorum_threshold

PRE_PREPARE = "pre_prepare"
PREPARE = "prepare"
COMMIT = "commit"
REPLY = "reply"
PHASES = (PRE_PREPARE, PREPARE, COMMIT, REPLY)
_PHASE_ORD = {p: i for i, p in enumerate(PHASES)}

VALID = "valid"
EMPTY = "empty"

_PBFT_TAG = b"acp/pbft"
_COMMIT_TAG = b"acp/commit"


class PhaseViolation(Exception):
    pass


class LeaderEquivocation(Exception):
    def __init__(self, leader: int, round: int):
        super().__init__(f"leader {leader} sent two pre-prepares in round {round}")
        self.leader = leader
        self.round = round


class InvalidReply(Exception):
    pass


@dataclass(frozen=True, slots=True)
class InstanceId:
    round: int
    leader: int
    kind: str


def pbft_signing_bytes(instance: InstanceId, phase: str, block_hash: bytes, sender: int) -> bytes:
    if phase == COMMIT:
        return commit_signing_bytes(instance.round, block_hash, sender)
    return (
        _PBFT_TAG
        + struct.pack(">QqBB", instance.round, instance.leader, instance.kind == VALID, _PHASE_ORD[phase])
        + block_hash
        + struct.pack(">q", sender)
    )


def commit_signing_bytes(round: int, block_hash: bytes, sender: int) -> bytes:
    return _COMMIT_TAG + struct.pack(">Q", round) + block_hash + struct.pack(">q", sender)


@dataclass(frozen=True, slots=True)
class PbftMsg:
    instance: InstanceId
    phase: str
    block_hash: bytes
    sender: int
    signature: bytes
    block: Optional[Block] = None

    stage = "4"

    @property
    def kind(self) -> str:
        return self.phase

    @property
    def round(self) -> int:
        return self.instance.round

    @property
    def logic_index(self) -> tuple:
        return (self.instance.round, 4, _PHASE_ORD[self.phase])

    def detail(self) -> str:
        return f"{self.instance.leader}/{self.instance.kind}/{self.block_hash.hex()[:16]}"


@dataclass(frozen=True, slots=True)
class ReplyMsg:
    """Committed result broadcast to the Final Committee.

    ``block.signatures`` is the commit certificate.
    """

    sender: int
    block: Block

    kind = REPLY
    stage = "4"

    @property
    def round(self) -> int:
        return self.block.round

    def detail(self) -> str:
        return self.block.block_hash.hex()[:16]


@dataclass(frozen=True, slots=True)
class CertMsg:
    """Prepared certificate re-broadcast by a node holding an undecided commit."""

    sender: int
    instance: InstanceId
    block: Block
    pre_prepare_sig: bytes
    prepares: tuple

    kind = "cert"
    stage = "4"

    @property
    def round(self) -> int:
        return self.instance.round

    def detail(self) -> str:
        return self.block.block_hash.hex()[:16]


def verify_commit_certificate(block: Block, quorum: int, eligible, verify: Callable) -> bool:
    """``verify(node, msg_bytes, sig)`` checks one signature."""
    signers = set()
    for node, sig in block.signatures:
        if node in signers or node not in eligible:
            return False
        if not verify(node, commit_signing_bytes(block.round, block.block_hash, node), sig):
            return False
        signers.add(node)
    return len(signers) >= quorum


def verify_prepared_certificate(cert: CertMsg, quorum: int, eligible, verify: Callable) -> bool:
    inst = cert.instance
    h = cert.block.block_hash
    if cert.block.round != inst.round or inst.leader not in eligible:
        return False
    if not verify(inst.leader, pbft_signing_bytes(inst, PRE_PREPARE, h, inst.leader), cert.pre_prepare_sig):
        return False
    seen = set()
    for node, sig in cert.prepares:
        if node == inst.leader or node in seen or node not in eligible:
            return False
        if not verify(node, pbft_signing_bytes(inst, PREPARE, h, node), sig):
            return False
        seen.add(node)
    return len(seen) >= quorum - 1


class InstanceState:
    """Progress of one PBFT* instance as seen by one node."""

    def __init__(self, instance: InstanceId, quorum: int):
        self.instance = instance
        self.quorum = quorum
        self.block = None
        self.pre_prepare_sig = None
        self.prepares = {}
        self.sent_prepare = False
        self.prepared = False
        self.rejected = False
        self.abandoned = False

    @property
    def value_hash(self) -> Optional[bytes]:
        return None if self.block is None else self.block.block_hash

    @property
    def active(self) -> bool:
        return not (self.rejected or self.abandoned)

    def on_pre_prepare(self, msg: PbftMsg) -> bool:
        """Record the leader's value. Returns True the first time."""
        if msg.sender != self.instance.leader:
            raise PhaseViolation(f"pre-prepare from non-leader {msg.sender}")
        if self.block is not None:
            if self.block.block_hash != msg.block_hash:
                self.rejected = True
                raise LeaderEquivocation(self.instance.leader, self.instance.round)
            return False
        if msg.block is None or msg.block.block_hash != msg.block_hash:
            raise PhaseViolation("pre-prepare without matching block")
        self.block = msg.block
        self.pre_prepare_sig = msg.signature
        return True

    def on_prepare(self, msg: PbftMsg) -> None:
        if msg.sender == self.instance.leader:
            raise PhaseViolation("leader does not send prepare")
        self.prepares.setdefault(msg.block_hash, {})[msg.sender] = msg.signature

    def prepare_count(self) -> int:
        if self.block is None:
            return 0
        return len(self.prepares.get(self.block.block_hash, ()))

    def check_prepared(self) -> bool:
        """True when this call moves the instance to prepared."""
        if self.prepared or not self.active or self.block is None:
            return False
        if self.prepare_count() >= self.quorum - 1:
            self.prepared = True
            return True
        return False

    def certificate(self, sender: int) -> CertMsg:
        h = self.block.block_hash
        prepares = tuple(sorted(self.prepares.get(h, {}).items()))
        return CertMsg(sender, self.instance, self.block, self.pre_prepare_sig, prepares)


@dataclass(frozen=True, slots=True)
class Final:
    block: Block


@dataclass(frozen=True, slots=True)
class Tentative:
    block: Block


PENDING_RESOLUTION = None


class Coordinator:
    """One node's parallel PBFT* instances for one round.

    ``sign(msg_bytes)`` signs with the node's key. ``may_commit(block)`` is
    the node's cross-round lock guard. ``step1_support(hash)`` returns how
    many step-1 Reduction votes the node saw for a hash; an alert node only
    runs a valid-kind instance whose value had at least f + 1 of them.
    """

    def __init__(
        self,
        node_id: int,
        round: int,
        fc_members: Sequence[int],
        n_fc: int,
        outcome: ReductionOutcome,
        valid_leaders: Sequence[int],
        empty_leaders: Sequence[int],
        empty_block: Block,
        tip_hash: bytes,
        sign: Callable[[bytes], bytes],
        may_commit: Callable[[Block], bool] = lambda b: True,
        step1_support: Callable[[bytes], int] = lambda h: 0,
        known_blocks: Optional[dict] = None,
    ):
        self.node_id = node_id
        self.round = round
        self.fc_members = tuple(sorted(fc_members))
        self.peers = tuple(m for m in self.fc_members if m != node_id)
        self.quorum = quorum_threshold(n_fc)
        self.f = (n_fc - 1) // 3
        self.outcome = outcome
        self.alert = outcome.alert
        self.valid_leaders = tuple(valid_leaders)
        self.empty_leaders = tuple(empty_leaders)
        self.empty_block = empty_block
        self.tip_hash = tip_hash
        self._sign = sign
        self._may_commit = may_commit
        self._step1_support = step1_support
        self.known_blocks = {} if known_blocks is None else known_blocks
        if outcome.block is not None:
            self.known_blocks.setdefault(outcome.block_hash, outcome.block)
        self.known_blocks.setdefault(empty_block.block_hash, empty_block)

        self.instances = {}
        for leader in self.valid_leaders:
            self.instances[InstanceId(round, leader, VALID)] = InstanceState(InstanceId(round, leader, VALID), self.quorum)
        for leader in self.empty_leaders:
            inst = InstanceState(InstanceId(round, leader, EMPTY), self.quorum)
            # a node whose Reduction produced a candidate refuses the empty-value instances
            inst.rejected = not self.alert
            self.instances[inst.instance] = inst
        self.commits = {}
        self.committed = None
        self.commit_instance = None
        self.own_commit = None
        self.decided = None
        self.decided_via = None
        self.detected = []
        self.started = False
        self.reported = False

    # -- outbound helpers -------------------------------------------------

    def _msg(self, instance: InstanceId, phase: str, block: Block, carry_block: bool = False) -> PbftMsg:
        h = block.block_hash
        sig = self._sign(pbft_signing_bytes(instance, phase, h, self.node_id))
        return PbftMsg(instance, phase, h, self.node_id, sig, block if carry_block else None)

    # -- lifecycle --------------------------------------------------------

    def start(self) -> list:
        """Issue pre-prepares for instances this node leads."""
        self.started = True
        out = []
        for inst in self.instances.values():
            if inst.instance.leader != self.node_id or inst.rejected:
                continue
            if inst.instance.kind == VALID:
                if self.alert or self.outcome.block is None:
                    continue
                block = self.outcome.block
            else:
                if not self.alert:
                    continue
                block = self.empty_block
            if not self._may_commit(block):
                continue
            msg = self._msg(inst.instance, PRE_PREPARE, block, carry_block=True)
            inst.block = block
            inst.pre_prepare_sig = msg.signature
            self.known_blocks.setdefault(block.block_hash, block)
            if inst.instance.kind == VALID:
                self._abandon_empty()
            out.append((self.peers, msg))
            out.extend(self._after_prepare(inst))
        return out

    def accepts(self, instance: InstanceId, block: Block) -> bool:
        if block.round != self.round or block.predecessor != self.tip_hash:
            return False
        if instance.kind == EMPTY:
            return self.alert and block.block_hash == self.empty_block.block_hash
        if block.is_empty or block.proposer not in self.fc_members:
            return False
        if not self.alert:
            return block.block_hash == self.outcome.block_hash
        return self._step1_support(block.block_hash) >= self.f + 1

    def handle(self, msg) -> list:
        """Feed one verified PBFT message; returns outbound (recipients, msg) pairs."""
        if isinstance(msg, CertMsg):
            return self.on_cert(msg)
        if msg.phase == COMMIT:
            return self.on_commit(msg)
        inst = self.instances.get(msg.instance)
        if inst is None:
            return []
        try:
            if msg.phase == PRE_PREPARE:
                return self.on_pre_prepare(inst, msg)
            if msg.phase == PREPARE:
                return self.on_prepare(inst, msg)
        except LeaderEquivocation as exc:
            self.detected.append(("leader_equivocation", exc.leader))
        except PhaseViolation:
            pass
        return []

    def on_pre_prepare(self, inst: InstanceState, msg: PbftMsg) -> list:
        if not inst.active:
            # still watch for a second, conflicting pre-prepare
            if inst.block is not None and inst.block.block_hash != msg.block_hash:
                self.detected.append(("leader_equivocation", inst.instance.leader))
            return []
        if msg.block is None or not self.accepts(inst.instance, msg.block):
            if inst.block is not None and inst.block.block_hash != msg.block_hash:
                inst.rejected = True
                self.detected.append(("leader_equivocation", inst.instance.leader))
            return []
        if not inst.on_pre_prepare(msg):
            return []
        self.known_blocks.setdefault(msg.block_hash, msg.block)
        if inst.instance.kind == VALID and self.alert:
            self._abandon_empty()
        out = []
        if not inst.sent_prepare and self._may_commit(inst.block):
            inst.sent_prepare = True
            p = self._msg(inst.instance, PREPARE, inst.block)
            inst.on_prepare(p)
            out.append((self.peers, p))
        out.extend(self._after_prepare(inst))
        return out

    def on_prepare(self, inst: InstanceState, msg: PbftMsg) -> list:
        inst.on_prepare(msg)
        return self._after_prepare(inst)

    def _after_prepare(self, inst: InstanceState) -> list:
        if not inst.check_prepared():
            return []
        return self._try_commit(inst)

    def _try_commit(self, inst: InstanceState) -> list:
        block = inst.block
        if self.committed is not None:
            return []
        if not self._may_commit(block):
            return []
        self.committed = block.block_hash
        self.commit_instance = inst
        c = self._msg(inst.instance, COMMIT, block)
        self.own_commit = c
        out = [(self.peers, c)]
        out.extend(self.on_commit(c))
        return out

    def on_commit(self, msg: PbftMsg) -> list:
        if msg.sender not in self.fc_members:
            return []
        self.commits.setdefault(msg.block_hash, {})[msg.sender] = msg.signature
        return self._check_decided(msg.block_hash)

    def _check_decided(self, h: bytes) -> list:
        if self.decided is not None:
            return []
        sigs = self.commits.get(h, {})
        if len(sigs) < self.quorum:
            return []
        block = self.known_blocks.get(h)
        if block is None:
            return []
        cert = tuple(sorted(sigs.items()))
        self.decided = block.with_kind(FINAL, cert)
        self.decided_via = "commit"
        return [(self.peers, ReplyMsg(self.node_id, self.decided))]

    def on_reply(self, msg: ReplyMsg, verify_cert: Callable[[Block], bool]) -> Block:
        if msg.block.round != self.round or not verify_cert(msg.block):
            raise InvalidReply(f"reply from {msg.sender} does not carry a commit quorum")
        if self.decided is None:
            self.decided = msg.block
            self.decided_via = "reply"
        return self.decided

    def on_cert(self, cert: CertMsg) -> list:
        """Commit to a value another node is locked on, if still free to."""
        if self.committed is not None or self.decided is not None:
            return []
        if cert.block.round != self.round or cert.block.predecessor != self.tip_hash:
            return []
        if not self._may_commit(cert.block):
            return []
        inst = self.instances.get(cert.instance) or InstanceState(cert.instance, self.quorum)
        if inst.block is None:
            inst.block = cert.block
            inst.pre_prepare_sig = cert.pre_prepare_sig
        elif inst.block.block_hash != cert.block.block_hash:
            return []
        for node, sig in cert.prepares:
            inst.prepares.setdefault(cert.block.block_hash, {})[node] = sig
        inst.prepared = True
        self.instances.setdefault(cert.instance, inst)
        self.known_blocks.setdefault(cert.block.block_hash, cert.block)
        return self._try_commit(inst)

    def _abandon_empty(self) -> None:
        for inst in self.instances.values():
            if inst.instance.kind == EMPTY and inst.active and self.committed != self.empty_block.block_hash:
                inst.abandoned = True

    def lock_certificate(self) -> Optional[CertMsg]:
        if self.committed is None or self.decided is not None or self.commit_instance is None:
            return None
        return self.commit_instance.certificate(self.node_id)

    def resend_lock(self) -> list:
        """Certificate and own commit again, for a lock the round never settled."""
        cert = self.lock_certificate()
        if cert is None or self.own_commit is None:
            return []
        return [(self.peers, cert), (self.peers, self.own_commit)]

    def resolve(self, now: int, sbr_deadline: int):
        if self.decided is not None:
            return Final(self.decided)
        if now >= sbr_deadline:
            return Tentative(self.empty_block)
        return PENDING_RESOLUTION
