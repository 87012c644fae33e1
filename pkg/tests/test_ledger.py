import hashlib
import struct

import pytest
from hypothesis import given, settings, strategies as st

from acpsim.crypto import ZERO_DIGEST
from acpsim.ledger import (
    FINAL,
    TENTATIVE,
    Block,
    Chain,
    NonMonotonicRound,
    PredecessorMismatch,
    Transaction,
    TxPool,
    detect_fork,
    make_empty_block,
    make_genesis,
    pool_select,
    replay_chain,
)

GEN = make_genesis(b"rs0")


def tx(i, size=100, who=0):
    return Transaction(hashlib.sha256(b"tx%d" % i).digest(), size, who)


def block(r, pred, txs=(), kind=FINAL, proposer=0):
    return Block(r, pred, proposer, tuple(txs), consensus_kind=kind)


def _oracle_hash(b: Block) -> bytes:
    # canonical layout written out independently
    proposer = -1 if b.proposer is None else b.proposer
    raw = b"ACPB" + struct.pack(">Q", b.round) + b.predecessor + struct.pack(">q", proposer)
    raw += struct.pack(">I", len(b.payload)) + b.payload + struct.pack(">I", len(b.transactions))
    for t in b.transactions:
        raw += t.tx_id + struct.pack(">Qq", t.payload_size, t.submitter)
    return hashlib.sha256(raw).digest()


def test_empty_block_determinism_and_predecessor_sensitivity():
    d = hashlib.sha256(b"D").digest()
    a, b = make_empty_block(5, d), make_empty_block(5, d)
    assert a.block_hash == b.block_hash and a.is_empty and a.transactions == ()
    assert make_empty_block(5, ZERO_DIGEST).block_hash != a.block_hash
    assert a.block_hash == _oracle_hash(a)


def test_hash_excludes_signatures_and_kind():
    b = block(1, GEN.block_hash, [tx(1)], kind=TENTATIVE)
    f = b.with_kind(FINAL, ((1, b"s"),))
    assert f.block_hash == b.block_hash == _oracle_hash(b)


def test_genesis_holds_seed():
    assert GEN.round == 0 and GEN.payload == b"rs0" and GEN.consensus_kind == FINAL
    with pytest.raises(ValueError):
        Chain(block(1, ZERO_DIGEST))


def test_transaction_size_must_be_positive():
    with pytest.raises(ValueError):
        Transaction(b"x" * 32, 0, 0)


def test_append_final_and_wrong_predecessor():
    ch = Chain(GEN)
    b1 = block(1, GEN.block_hash, [tx(1)])
    ch.append(b1)
    assert len(ch) == 2 and ch.tip == b1
    with pytest.raises(PredecessorMismatch):
        ch.append(block(2, GEN.block_hash))
    with pytest.raises(NonMonotonicRound):
        ch.append(block(1, b1.block_hash))


def test_tentative_confirmed_only_by_final_successor():
    ch = Chain(GEN)
    t1 = make_empty_block(1, GEN.block_hash, TENTATIVE)
    ch.append(t1)
    assert ch.pending == [t1] and not ch.is_confirmed(t1)
    assert ch.last_final == GEN
    b2 = block(2, t1.block_hash, [tx(2)])
    ch.append(b2)
    assert ch.pending == [] and ch.is_confirmed(t1) and ch.blocks[-2:] == [t1, b2]
    assert [t.tx_id for t in ch.confirmed_transactions()] == [tx(2).tx_id]


def test_two_tentatives_then_final():
    ch = Chain(GEN)
    t1 = make_empty_block(1, GEN.block_hash, TENTATIVE)
    t2 = make_empty_block(2, t1.block_hash, TENTATIVE)
    ch.append(t1)
    ch.append(t2)
    assert ch.pending == [t1, t2]
    with pytest.raises(PredecessorMismatch):
        ch.append(block(3, t1.block_hash))
    ch.append(block(3, t2.block_hash))
    assert [b.round for b in ch.blocks] == [0, 1, 2, 3] and ch.linkage_ok()


def test_supersede_replaces_tentative_run():
    ch = Chain(GEN)
    t1 = make_empty_block(1, GEN.block_hash, TENTATIVE)
    ch.append(t1)
    ch.append(make_empty_block(2, t1.block_hash, TENTATIVE))
    b1 = block(1, GEN.block_hash, [tx(9)])
    dropped = ch.supersede(b1)
    assert len(dropped) == 2 and ch.tip == b1 and ch.block_at(2) is None and ch.linkage_ok()


def test_finalize_pending_keeps_later_tentatives():
    ch = Chain(GEN)
    t1 = make_empty_block(1, GEN.block_hash, TENTATIVE)
    t2 = make_empty_block(2, t1.block_hash, TENTATIVE)
    ch.append(t1)
    ch.append(t2)
    ch.finalize_pending(t1.with_kind(FINAL))
    assert ch.last_final.round == 1 and ch.pending == [t2]


def test_detect_fork():
    ch = Chain(GEN)
    b1 = block(1, GEN.block_hash)
    ch.append(b1)
    assert not detect_fork(ch, block(2, b1.block_hash))
    assert detect_fork(ch, block(2, GEN.block_hash))
    known = {b.block_hash for b in ch.blocks}
    unknown = hashlib.sha256(b"elsewhere").digest()
    assert unknown not in known
    assert detect_fork(ch, block(2, unknown))


def test_pool_select_examples():
    assert pool_select([], 1000) == []
    pool = TxPool()
    for i in range(3):
        pool.add(tx(i, 400), arrival=i)
    assert [t.tx_id for t in pool.select(1000)] == [tx(0).tx_id, tx(1).tx_id]
    assert pool_select([tx(5, 2000)], 1000) == []
    with pytest.raises(ValueError):
        pool_select([], 0)
    with pytest.raises(ValueError):
        pool.add(tx(0, 400), arrival=9)


def test_pool_fifo_tie_break_by_id():
    pool = TxPool()
    a, b = tx(1), tx(2)
    pool.add(b, 0)
    pool.add(a, 0)
    assert pool.ordered() == sorted([a, b], key=lambda t: t.tx_id)


def _greedy_oracle(sizes, cap):
    out, used = [], 0
    for i, s in enumerate(sizes):
        if used + s <= cap:
            out.append(i)
            used += s
    return out


@given(st.lists(st.integers(1, 600), max_size=30), st.integers(1, 3000))
def test_pool_select_matches_greedy_oracle(sizes, cap):
    txs = [tx(i, s) for i, s in enumerate(sizes)]
    got = pool_select(txs, cap)
    assert [txs.index(t) for t in got] == _greedy_oracle(sizes, cap)
    assert sum(t.payload_size for t in got) <= cap


@given(st.lists(st.booleans(), min_size=1, max_size=12))
@settings(max_examples=100)
def test_linkage_and_replay_after_every_mutation(kinds):
    ch = Chain(GEN)
    appended = []
    for r, tentative in enumerate(kinds, start=1):
        b = (make_empty_block(r, ch.tip.block_hash, TENTATIVE) if tentative
             else block(r, ch.tip.block_hash, [tx(r)]))
        ch.append(b)
        appended.append(b)
        assert ch.linkage_ok()
        # a tentative's transactions never count as confirmed before a final successor
        assert all(not p.transactions for p in ch.pending)
    again = replay_chain(GEN, appended)
    assert again.export_trace() == ch.export_trace()
    assert [b.block_hash for b in again.blocks + again.pending] == [b.block_hash for b in ch.blocks + ch.pending]
