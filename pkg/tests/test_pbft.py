import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from acpsim.crypto import KeyRegistry, sign, vrf_keygen
from acpsim.ledger import FINAL, Block, Transaction, make_empty_block
from acpsim.pbft import (
    COMMIT,
    EMPTY,
    PRE_PREPARE,
    PREPARE,
    VALID,
    Coordinator,
    Final,
    InstanceId,
    InvalidReply,
    PbftMsg,
    ReplyMsg,
    Tentative,
    commit_signing_bytes,
    pbft_signing_bytes,
    verify_commit_certificate,
)
from acpsim.reduction import ReductionOutcome

ROUND = 3
TIP = hashlib.sha256(b"tip").digest()
EMPTY_BLOCK = make_empty_block(ROUND, TIP)
CB = Block(ROUND, TIP, 0, (Transaction(b"\x07" * 32, 300, 0),))


class Net:
    """Node keys plus a verify callback keyed by node id."""

    def __init__(self, n):
        self.keys = [vrf_keygen(hashlib.sha256(b"pbft%d" % i).digest()) for i in range(n)]
        self.reg = KeyRegistry(self.keys)

    def signer(self, i):
        sk = self.keys[i].secret_key
        return lambda m: sign(sk, m)

    def verify(self, node, msg, sig):
        return self.reg.verify_sig(self.keys[node].public_key, msg, sig)


def outcome(alert):
    if alert:
        return ReductionOutcome(EMPTY_BLOCK.block_hash, EMPTY_BLOCK, True)
    return ReductionOutcome(CB.block_hash, CB, False)


def make(net, n, i, alert=False, valid=(0, 1, 2), empty=(3, 2, 1), support=0):
    return Coordinator(i, ROUND, range(n), n, outcome(alert), valid, empty, EMPTY_BLOCK, TIP,
                       net.signer(i), step1_support=lambda h: support)


def run(coords, net, order_seed=None, silent=()):
    """Deliver everything; returns number of delivered messages."""
    queue = []
    for c in coords:
        if c.node_id not in silent:
            queue.extend((r, m) for rs, m in c.start() for r in rs)
    rng = random.Random(order_seed)
    by_id = {c.node_id: c for c in coords}
    delivered = 0
    while queue:
        idx = rng.randrange(len(queue)) if order_seed is not None else 0
        to, m = queue.pop(idx)
        if to in silent or to not in by_id:
            continue
        c = by_id[to]
        delivered += 1
        if isinstance(m, ReplyMsg):
            try:
                c.on_reply(m, lambda b: verify_commit_certificate(b, c.quorum, c.fc_members, net.verify))
            except InvalidReply:
                pass
            continue
        for rs, out in c.handle(m):
            if c.node_id not in silent:
                queue.extend((r, out) for r in rs)
    return delivered


def test_start_instance_layout():
    net = Net(16)
    c = make(net, 16, 5)
    assert len(c.instances) == 6
    assert sum(i.rejected for i in c.instances.values()) == 3
    assert all(i.rejected for i in c.instances.values() if i.instance.kind == EMPTY)
    a = make(net, 16, 5, alert=True)
    assert all(i.active for i in a.instances.values())


def test_least_hash_member_leads_valid_instance():
    net = Net(4)
    c = make(net, 4, 0)
    out = c.start()
    assert len(out) == 1
    recipients, msg = out[0]
    assert msg.phase == PRE_PREPARE and msg.instance == InstanceId(ROUND, 0, VALID)
    assert msg.block == CB and set(recipients) == {1, 2, 3}


def test_two_matching_prepares_trigger_commit():
    net = Net(4)
    c = make(net, 4, 3)
    inst = InstanceId(ROUND, 0, VALID)
    pp = PbftMsg(inst, PRE_PREPARE, CB.block_hash, 0, net.signer(0)(pbft_signing_bytes(inst, PRE_PREPARE, CB.block_hash, 0)), CB)
    out = c.handle(pp)
    # the backup's own prepare is the first of the 2f
    assert [m.phase for _, m in out] == [PREPARE]
    assert c.instances[inst].prepare_count() == 1 and c.committed is None
    p1 = PbftMsg(inst, PREPARE, CB.block_hash, 1, b"")
    phases = [m.phase for _, m in c.handle(p1)]
    assert COMMIT in phases and c.committed == CB.block_hash


def test_leader_needs_two_prepares_from_backups():
    net = Net(4)
    c = make(net, 4, 0)
    c.start()
    inst = InstanceId(ROUND, 0, VALID)
    assert all(m.phase != COMMIT for _, m in c.handle(PbftMsg(inst, PREPARE, CB.block_hash, 1, b"")))
    assert COMMIT in [m.phase for _, m in c.handle(PbftMsg(inst, PREPARE, CB.block_hash, 2, b""))]


def test_conflicting_pre_prepares_reject_instance():
    net = Net(4)
    c = make(net, 4, 3)
    inst = InstanceId(ROUND, 0, VALID)
    other = Block(ROUND, TIP, 0, (Transaction(b"\x08" * 32, 300, 0),))
    c.handle(PbftMsg(inst, PRE_PREPARE, CB.block_hash, 0, b"", CB))
    c.handle(PbftMsg(inst, PRE_PREPARE, other.block_hash, 0, b"", other))
    assert c.instances[inst].rejected
    assert ("leader_equivocation", 0) in c.detected
    for s in (1, 2):
        c.handle(PbftMsg(inst, PREPARE, CB.block_hash, s, b""))
    assert c.committed is None and c.decided is None


def test_full_honest_run_four_nodes():
    net = Net(4)
    coords = [make(net, 4, i) for i in range(4)]
    run(coords, net)
    assert all(c.decided is not None and c.decided.block_hash == CB.block_hash for c in coords)
    for c in coords:
        assert isinstance(c.resolve(0, 10), Final)
        assert verify_commit_certificate(c.decided, 3, range(4), net.verify)


def _cert_block(net, signers):
    sigs = tuple((i, net.signer(i)(commit_signing_bytes(ROUND, CB.block_hash, i))) for i in signers)
    return CB.with_kind(FINAL, sigs)


def test_reply_validation():
    net = Net(4)
    c = make(net, 4, 3)
    check = lambda b: verify_commit_certificate(b, c.quorum, c.fc_members, net.verify)
    assert c.on_reply(ReplyMsg(0, _cert_block(net, [0, 1, 2])), check).block_hash == CB.block_hash
    assert c.decided_via == "reply" and isinstance(c.resolve(0, 1), Final)
    lag = make(net, 4, 2)
    with pytest.raises(InvalidReply):
        lag.on_reply(ReplyMsg(0, _cert_block(net, [0, 1])), check)
    forged = CB.with_kind(FINAL, ((0, b"x" * 32), (1, b"y" * 32), (2, b"z" * 32)))
    with pytest.raises(InvalidReply):
        lag.on_reply(ReplyMsg(0, forged), check)


def test_lagging_node_skips_to_decided_on_reply():
    net = Net(4)
    coords = [make(net, 4, i) for i in range(3)]
    lag = make(net, 4, 3)
    run(coords, net)
    # the lagging node only saw the pre-prepare
    inst = InstanceId(ROUND, 0, VALID)
    lag.handle(PbftMsg(inst, PRE_PREPARE, CB.block_hash, 0, b"", CB))
    assert lag.decided is None
    reply = ReplyMsg(0, coords[0].decided)
    lag.on_reply(reply, lambda b: verify_commit_certificate(b, 3, range(4), net.verify))
    assert lag.decided.block_hash == CB.block_hash


def test_resolve_pending_and_tentative():
    net = Net(4)
    c = make(net, 4, 1)
    assert c.resolve(5, 10) is None
    t = c.resolve(10, 10)
    assert isinstance(t, Tentative) and t.block.block_hash == EMPTY_BLOCK.block_hash


def test_valid_instance_decides_after_empty_abandoned():
    # n_fc = 7: two nodes raised alert, the rest hold the candidate
    net = Net(7)
    alert_nodes = {5, 6}
    coords = [make(net, 7, i, alert=i in alert_nodes, valid=(0, 1, 2), empty=(6, 5, 4), support=3) for i in range(7)]
    run(coords, net, order_seed=4)
    decided = {c.decided.block_hash for c in coords if c.decided is not None}
    assert decided == {CB.block_hash}
    for i in alert_nodes:
        empties = [s for s in coords[i].instances.values() if s.instance.kind == EMPTY]
        assert all(not s.active for s in empties)


def test_crashed_sole_leader_means_no_decision():
    net = Net(4)
    coords = [make(net, 4, i, valid=(0,), empty=(3,)) for i in range(4)]
    run(coords, net, silent={0})
    assert all(c.decided is None for c in coords[1:])
    assert isinstance(coords[1].resolve(100, 100), Tentative)


@given(
    st.integers(4, 10),
    st.integers(0, 2**16),
    st.data(),
)
@settings(max_examples=120, deadline=None)
def test_round_safety_under_random_schedules(n, seed, data):
    f = (n - 1) // 3
    silent = set(data.draw(st.lists(st.integers(0, n - 1), max_size=f, unique=True)))
    alert = set(data.draw(st.lists(st.integers(0, n - 1), max_size=n, unique=True)))
    support = data.draw(st.integers(0, n))
    net = Net(n)
    leaders = tuple(range(min(3, n)))
    empties = tuple(range(n - 1, n - 1 - min(3, n), -1))
    coords = [make(net, n, i, alert=i in alert, valid=leaders, empty=empties, support=support) for i in range(n)]
    run(coords, net, order_seed=seed, silent=silent)
    honest = [c for c in coords if c.node_id not in silent]
    committed = {c.committed for c in honest if c.committed is not None}
    decided = {c.decided.block_hash for c in honest if c.decided is not None}
    assert len(committed) <= 1
    assert len(decided) <= 1
    assert decided <= {CB.block_hash, EMPTY_BLOCK.block_hash}
    if decided and committed:
        assert decided == committed
