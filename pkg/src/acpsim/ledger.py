"""Blocks, the local chain replica, the pending transaction pool."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .crypto import ZERO_DIGEST, hash_bytes

FINAL = "final"
TENTATIVE = "tentative"
PENDING = "pending"
CONSENSUS_KINDS = (FINAL, TENTATIVE, PENDING)

_BLOCK_TAG = b"ACPB"
_NO_PROPOSER = -1


class PredecessorMismatch(Exception):
    """Block does not extend the local tip; signals a possible fork."""


class NonMonotonicRound(Exception):
    pass


@dataclass(frozen=True, slots=True)
class Transaction:
    tx_id: bytes
    payload_size: int
    submitter: int

    def __post_init__(self):
        if self.payload_size < 1:
            raise ValueError("payload_size must be >= 1")


@dataclass(frozen=True, slots=True)
class Block:
    round: int
    predecessor: bytes
    proposer: Optional[int]
    transactions: tuple = ()
    payload: bytes = b""
    consensus_kind: str = PENDING
    signatures: tuple = ()
    block_hash: bytes = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.consensus_kind not in CONSENSUS_KINDS:
            raise ValueError(f"unknown consensus kind {self.consensus_kind!r}")
        object.__setattr__(self, "block_hash", hash_bytes(self.serialize()))

    @property
    def is_empty(self) -> bool:
        return not self.transactions

    @property
    def tx_bytes(self) -> int:
        return sum(tx.payload_size for tx in self.transactions)

    def serialize(self) -> bytes:
        """Canonical bytes; signatures and consensus kind are excluded."""
        proposer = _NO_PROPOSER if self.proposer is None else self.proposer
        parts = [
            _BLOCK_TAG,
            struct.pack(">Q", self.round),
            self.predecessor,
            struct.pack(">q", proposer),
            struct.pack(">I", len(self.payload)),
            self.payload,
            struct.pack(">I", len(self.transactions)),
        ]
        for tx in self.transactions:
            parts.append(tx.tx_id)
            parts.append(struct.pack(">Qq", tx.payload_size, tx.submitter))
        return b"".join(parts)

    def with_kind(self, kind: str, signatures: tuple = None) -> "Block":
        if signatures is None:
            signatures = self.signatures
        return replace(self, consensus_kind=kind, signatures=signatures)


def make_empty_block(round: int, predecessor: bytes, kind: str = PENDING) -> Block:
    return Block(round=round, predecessor=predecessor, proposer=None, consensus_kind=kind)


def make_genesis(seed: bytes) -> Block:
    return Block(round=0, predecessor=ZERO_DIGEST, proposer=None, payload=seed, consensus_kind=FINAL)


class Chain:
    """Local replica: confirmed blocks plus a buffer of tentative blocks.

    Tentative blocks sit in ``pending`` until a final block extends them, at
    which point the whole run of tentatives is confirmed in order.
    """

    def __init__(self, genesis: Block):
        if genesis.round != 0:
            raise ValueError("genesis must be round 0")
        self.blocks = [genesis]
        self.pending = []
        self.log = []
        self._by_round = {0: genesis}
        self._log_append(genesis)

    @property
    def genesis(self) -> Block:
        return self.blocks[0]

    @property
    def tip(self) -> Block:
        return self.pending[-1] if self.pending else self.blocks[-1]

    @property
    def last_final(self) -> Block:
        # blocks only grow by appending a final block, so the last one is final
        return self.blocks[-1]

    @property
    def pending_tentative(self) -> Optional[Block]:
        return self.pending[0] if self.pending else None

    def __len__(self):
        return len(self.blocks)

    def block_at(self, round: int) -> Optional[Block]:
        """Block holding ``round`` on the local branch (confirmed or pending)."""
        return self._by_round.get(round)

    def is_confirmed(self, block: Block) -> bool:
        b = self.block_at(block.round)
        return b is not None and b.block_hash == block.block_hash and b.round <= self.last_final.round

    def append(self, block: Block) -> None:
        tip = self.tip
        if block.predecessor != tip.block_hash:
            raise PredecessorMismatch(
                f"round {block.round}: predecessor {block.predecessor.hex()[:12]} != tip {tip.block_hash.hex()[:12]}"
            )
        if block.round <= tip.round:
            raise NonMonotonicRound(f"round {block.round} <= tip round {tip.round}")
        self._by_round[block.round] = block
        if block.consensus_kind == TENTATIVE:
            self.pending.append(block)
            self._log_append(block)
            return
        if block.consensus_kind != FINAL:
            raise ValueError("only final or tentative blocks can be appended")
        self.blocks.extend(self.pending)
        self.pending = []
        self.blocks.append(block)
        self._log_append(block)

    def supersede(self, block: Block) -> list:
        """Replace pending tentatives from ``block.round`` on with a final block.

        Returns the discarded tentative blocks.
        """
        if block.consensus_kind != FINAL:
            raise ValueError("only a final block can supersede tentatives")
        idx = next((i for i, b in enumerate(self.pending) if b.round >= block.round), None)
        if idx is None:
            raise ValueError("no pending block at or after that round")
        anchor = self.pending[idx - 1] if idx > 0 else self.blocks[-1]
        if block.predecessor != anchor.block_hash:
            raise PredecessorMismatch("superseding block does not extend the anchor")
        dropped = self.pending[idx:]
        self.pending = self.pending[:idx]
        for b in dropped:
            self._by_round.pop(b.round, None)
        self.log.append({"op": "drop", "round": block.round, "count": len(dropped)})
        self.append(block)
        return dropped

    def finalize_pending(self, block: Block) -> None:
        """Mark the pending tentative with ``block``'s hash final.

        Tentatives before it are confirmed with it; later ones stay pending.
        """
        if block.consensus_kind != FINAL:
            raise ValueError("finalize_pending needs a final block")
        idx = next((i for i, b in enumerate(self.pending) if b.block_hash == block.block_hash), None)
        if idx is None:
            raise ValueError("no pending block with that hash")
        self.blocks.extend(self.pending[:idx])
        self.blocks.append(block)
        self.pending = self.pending[idx + 1:]
        self._by_round[block.round] = block
        self._log_append(block)

    def drop_pending(self) -> list:
        dropped, self.pending = self.pending, []
        for b in dropped:
            self._by_round.pop(b.round, None)
        if dropped:
            self.log.append({"op": "drop", "round": dropped[0].round, "count": len(dropped)})
        return dropped

    def confirmed_transactions(self) -> list:
        return [tx for b in self.blocks for tx in b.transactions]

    def linkage_ok(self) -> bool:
        seq = self.blocks + self.pending
        return all(
            seq[i + 1].predecessor == seq[i].block_hash and seq[i + 1].round > seq[i].round
            for i in range(len(seq) - 1)
        )

    def _log_append(self, block: Block) -> None:
        self.log.append(
            {
                "op": "append",
                "round": block.round,
                "hash": block.block_hash.hex(),
                "kind": block.consensus_kind,
                "tx_count": len(block.transactions),
                "proposer": block.proposer,
            }
        )

    def export_trace(self) -> list:
        """One JSON line per appended block."""
        keys = ("round", "hash", "kind", "tx_count", "proposer")
        return [
            json.dumps({k: e[k] for k in keys}, separators=(",", ":"))
            for e in self.log
            if e["op"] == "append"
        ]


def detect_fork(chain: Chain, proposal: Block) -> bool:
    return proposal.predecessor != chain.tip.block_hash


def replay_chain(genesis: Block, blocks: Iterable[Block]) -> Chain:
    chain = Chain(genesis)
    for b in blocks:
        chain.append(b)
    return chain


class TxPool:
    """Pending transactions ordered FIFO by arrival, ties broken by id."""

    def __init__(self):
        self._entries = {}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self._entries

    def add(self, tx: Transaction, arrival: int) -> None:
        if tx.tx_id in self._entries:
            raise ValueError(f"duplicate transaction {tx.tx_id.hex()[:12]}")
        self._entries[tx.tx_id] = (arrival, tx)

    def remove(self, tx_ids: Iterable[bytes]) -> None:
        for t in tx_ids:
            self._entries.pop(t, None)

    def ordered(self) -> list:
        return [tx for _, tx in sorted(self._entries.values(), key=lambda e: (e[0], e[1].tx_id))]

    def select(self, max_bytes: int, submitter: Optional[int] = None) -> list:
        return pool_select(self.ordered(), max_bytes, submitter)


def pool_select(ordered_txs, max_bytes: int, submitter: Optional[int] = None) -> list:
    """Greedy scan in pool order, taking each transaction that still fits."""
    if max_bytes <= 0:
        raise ValueError("max_bytes must be positive")
    out, used = [], 0
    for tx in ordered_txs:
        if submitter is not None and tx.submitter != submitter:
            continue
        if used + tx.payload_size <= max_bytes:
            out.append(tx)
            used += tx.payload_size
    return out
