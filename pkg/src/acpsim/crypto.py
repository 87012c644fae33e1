"""Deterministic mock cryptography: hash, signatures and a VRF.

Nothing here is secure. The primitives keep the shapes the protocol needs
(32-byte digests, key pairs, VRF output plus proof) and are pure functions
of their inputs, so a simulation run is reproducible from its seed.

Verification needs the secret key behind a public key, so it goes through a
:class:`KeyRegistry` that only the simulation kernel populates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

_SK_TAG = b"acp/sk"
_PK_TAG = b"acp/pk"
_VRF_TAG = b"acp/vrf"
_PROOF_TAG = b"acp/vrf-proof"
_SIG_TAG = b"acp/sig"


def hash_bytes(data: bytes) -> bytes:
    """SHA-256 of ``data``; always 32 bytes."""
    return hashlib.sha256(data).digest()


def digest_int(digest: bytes) -> int:
    """Read a digest as a 256-bit unsigned big-endian integer."""
    return int.from_bytes(digest, "big")


@dataclass(frozen=True, slots=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True, slots=True)
class VrfOutput:
    value: bytes
    proof: bytes


def vrf_keygen(seed: bytes) -> KeyPair:
    if len(seed) != DIGEST_SIZE:
        raise ValueError(f"seed must be {DIGEST_SIZE} bytes, got {len(seed)}")
    sk = hash_bytes(_SK_TAG + seed)
    return KeyPair(public_key=hash_bytes(_PK_TAG + sk), secret_key=sk)


def public_key_of(secret_key: bytes) -> bytes:
    return hash_bytes(_PK_TAG + secret_key)


def vrf_evaluate(secret_key: bytes, msg: bytes) -> VrfOutput:
    value = hash_bytes(_VRF_TAG + secret_key + msg)
    pk = public_key_of(secret_key)
    return VrfOutput(value=value, proof=hash_bytes(_PROOF_TAG + pk + msg + value))


def sign(secret_key: bytes, msg: bytes) -> bytes:
    return hash_bytes(_SIG_TAG + secret_key + msg)


class KeyRegistry:
    """Public key -> secret key map used to check mock proofs and signatures."""

    def __init__(self, pairs=()):
        self._secret = {}
        for kp in pairs:
            self.register(kp)

    def register(self, keypair: KeyPair) -> None:
        self._secret[keypair.public_key] = keypair.secret_key

    def __contains__(self, public_key: bytes) -> bool:
        return public_key in self._secret

    def __len__(self) -> int:
        return len(self._secret)

    def vrf_verify(self, public_key: bytes, msg: bytes, value: bytes, proof: bytes) -> bool:
        sk = self._secret.get(public_key)
        if sk is None:
            return False
        if value != hash_bytes(_VRF_TAG + sk + msg):
            return False
        return proof == hash_bytes(_PROOF_TAG + public_key + msg + value)

    def verify_sig(self, public_key: bytes, msg: bytes, sig: bytes) -> bool:
        sk = self._secret.get(public_key)
        return sk is not None and sig == hash_bytes(_SIG_TAG + sk + msg)
