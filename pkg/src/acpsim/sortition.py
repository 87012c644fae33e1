"""Committee selection: Potential Committee by weight, Final Committee by VRF."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

from .crypto import KeyRegistry, VrfOutput, digest_int, hash_bytes, vrf_evaluate

_SPACE = 1 << 256
_FC_TAG = b"acp/fc"


class ZeroReputation(ValueError):
    pass


class InvalidCredential(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class NodeRecord:
    node_id: int
    public_key: bytes
    reputation: Fraction = Fraction(1)


@dataclass(frozen=True, slots=True)
class RandomSeed:
    value: bytes
    round: int


@dataclass(frozen=True, slots=True)
class Credential:
    node_id: int
    round: int
    vrf: VrfOutput

    @property
    def rank_key(self) -> int:
        """H(sigma) as an integer; orders leaders and breaks candidate ties."""
        return digest_int(hash_bytes(self.vrf.value))


@dataclass(frozen=True)
class CommitteeParams:
    n_pc: int
    n_fc: int
    n_valid_leaders: int = 3
    n_empty_leaders: int = 3

    def validate(self, n_all: int) -> None:
        if not 0 < self.n_fc <= self.n_pc <= n_all:
            raise ValueError(f"need 0 < n_fc <= n_pc <= n_all, got {self.n_fc}, {self.n_pc}, {n_all}")
        for name in ("n_valid_leaders", "n_empty_leaders"):
            v = getattr(self, name)
            if not 1 <= v <= self.n_fc:
                raise ValueError(f"{name} must be in [1, n_fc], got {v}")


def potential_weight(rs: RandomSeed, round: int, public_key: bytes, rep) -> Fraction:
    """Hash of (previous seed, round, key) divided by reputation, exactly."""
    rep = Fraction(rep)
    if rep <= 0:
        raise ZeroReputation(f"reputation must be positive, got {rep}")
    h = hash_bytes(rs.value + struct.pack(">Q", round) + public_key)
    return Fraction(digest_int(h)) / rep


def select_pc(nodes: Sequence[NodeRecord], rs: RandomSeed, round: int, m: int) -> tuple:
    if m > len(nodes):
        raise ValueError(f"committee size {m} exceeds node count {len(nodes)}")
    return _select_pc_cached(tuple(nodes), rs, round, m)


@lru_cache(maxsize=4096)
def _select_pc_cached(nodes: tuple, rs: RandomSeed, round: int, m: int) -> tuple:
    keyed = sorted(
        (potential_weight(rs, round, n.public_key, n.reputation), n.node_id) for n in nodes
    )
    return tuple(node_id for _, node_id in keyed[:m])


def credential_message(round: int) -> bytes:
    return _FC_TAG + struct.pack(">Q", round)


def make_credential(secret_key: bytes, node_id: int, round: int) -> Credential:
    return Credential(node_id=node_id, round=round, vrf=vrf_evaluate(secret_key, credential_message(round)))


def verify_credential(registry: KeyRegistry, public_key: bytes, cred: Credential) -> bool:
    return registry.vrf_verify(public_key, credential_message(cred.round), cred.vrf.value, cred.vrf.proof)


def fc_threshold_met(value: bytes, n_fc: int, n_pc: int) -> bool:
    """value / 2^256 < n_fc / n_pc, in integers."""
    return digest_int(value) * n_pc < n_fc * _SPACE


def select_fc(
    cred: Credential,
    params: CommitteeParams,
    registry: Optional[KeyRegistry] = None,
    public_key: Optional[bytes] = None,
) -> bool:
    if registry is not None:
        if public_key is None or not verify_credential(registry, public_key, cred):
            raise InvalidCredential(f"credential of node {cred.node_id} for round {cred.round} does not verify")
    return fc_threshold_met(cred.vrf.value, params.n_fc, params.n_pc)


def rank_leaders(credentials: Sequence[Credential], params: CommitteeParams) -> tuple:
    """(valid leaders ascending by H(sigma), empty leaders descending)."""
    if len({c.round for c in credentials}) > 1:
        raise ValueError("credentials span more than one round")
    keyed = sorted((c.rank_key, c.node_id) for c in credentials)
    valid = tuple(i for _, i in keyed[: params.n_valid_leaders])
    desc = sorted(keyed, key=lambda kv: (-kv[0], kv[1]))
    empty = tuple(i for _, i in desc[: params.n_empty_leaders])
    return valid, empty


def next_seed(rs: RandomSeed, agreed_block) -> RandomSeed:
    if agreed_block.round != rs.round + 1:
        raise ValueError(f"block round {agreed_block.round} does not follow seed round {rs.round}")
    value = hash_bytes(rs.value + struct.pack(">Q", agreed_block.round) + agreed_block.block_hash)
    return RandomSeed(value=value, round=agreed_block.round)
