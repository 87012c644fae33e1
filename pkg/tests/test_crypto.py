import hashlib
import random

from hypothesis import given, settings, strategies as st

from acpsim.crypto import (
    DIGEST_SIZE,
    KeyRegistry,
    hash_bytes,
    public_key_of,
    sign,
    vrf_evaluate,
    vrf_keygen,
)


def _keys(n, salt=0):
    return [vrf_keygen(hashlib.sha256(b"k%d/%d" % (salt, i)).digest()) for i in range(n)]


def test_hash_length_and_determinism():
    assert len(hash_bytes(b"")) == DIGEST_SIZE
    assert hash_bytes(b"abc") == hash_bytes(b"abc")


def test_hash_suffix_corpus_has_no_collisions():
    rng = random.Random(7)
    inputs = set()
    for _ in range(10_000):
        b = rng.randbytes(rng.randint(0, 40))
        assert hash_bytes(b) != hash_bytes(b + b"\x00")
        inputs.update((b, b + b"\x00"))
    assert len({hash_bytes(b) for b in inputs}) == len(inputs)


def test_keygen_deterministic_and_distinct():
    a = vrf_keygen(bytes(32))
    assert a == vrf_keygen(bytes(32))
    assert public_key_of(a.secret_key) == a.public_key
    pks = {vrf_keygen(i.to_bytes(32, "big")).public_key for i in range(10_000)}
    assert len(pks) == 10_000


def test_keygen_rejects_wrong_seed_length():
    import pytest

    with pytest.raises(ValueError):
        vrf_keygen(b"short")


def test_vrf_round_trip_and_message_separation():
    kp = vrf_keygen(bytes(range(32)))
    reg = KeyRegistry([kp])
    out = vrf_evaluate(kp.secret_key, b"m")
    assert out == vrf_evaluate(kp.secret_key, b"m")
    assert reg.vrf_verify(kp.public_key, b"m", out.value, out.proof)
    values = {vrf_evaluate(kp.secret_key, b"%d" % i).value for i in range(5_000)}
    assert len(values) == 5_000


def test_vrf_every_single_byte_flip_of_proof_fails():
    kp = vrf_keygen(bytes(range(32)))
    reg = KeyRegistry([kp])
    out = vrf_evaluate(kp.secret_key, b"round 7")
    for i in range(len(out.proof)):
        for bit in range(8):
            p = bytearray(out.proof)
            p[i] ^= 1 << bit
            assert not reg.vrf_verify(kp.public_key, b"round 7", out.value, bytes(p))


def test_vrf_wrong_key_cross_check():
    keys = _keys(100)
    reg = KeyRegistry(keys)
    outs = [vrf_evaluate(k.secret_key, b"x") for k in keys]
    for i, k in enumerate(keys):
        assert reg.vrf_verify(k.public_key, b"x", outs[i].value, outs[i].proof)
        j = (i + 1) % len(keys)
        assert not reg.vrf_verify(k.public_key, b"x", outs[j].value, outs[j].proof)


def test_unregistered_key_never_verifies():
    kp = vrf_keygen(bytes(32))
    out = vrf_evaluate(kp.secret_key, b"m")
    assert not KeyRegistry().vrf_verify(kp.public_key, b"m", out.value, out.proof)
    assert not KeyRegistry().verify_sig(kp.public_key, b"m", sign(kp.secret_key, b"m"))


def test_signature_corpus():
    keys = _keys(50, salt=1)
    reg = KeyRegistry(keys)
    rng = random.Random(3)
    for i, k in enumerate(keys):
        msg = rng.randbytes(24)
        sig = sign(k.secret_key, msg)
        assert reg.verify_sig(k.public_key, msg, sig)
        assert not reg.verify_sig(k.public_key, msg + b"!", sig)
        assert not reg.verify_sig(keys[i - 1].public_key, msg, sig)


def test_randomized_tampering_has_zero_false_accepts():
    keys = _keys(10, salt=2)
    reg = KeyRegistry(keys)
    rng = random.Random(11)
    accepted = 0
    for _ in range(2_000):
        k = rng.choice(keys)
        msg = rng.randbytes(16)
        out = vrf_evaluate(k.secret_key, msg)
        sig = sign(k.secret_key, msg)
        which = rng.randrange(4)
        val, proof, m, s = bytearray(out.value), bytearray(out.proof), bytearray(msg), bytearray(sig)
        target = (val, proof, m, s)[which]
        target[rng.randrange(len(target))] ^= 1 + rng.randrange(255)
        if which < 3:
            accepted += reg.vrf_verify(k.public_key, bytes(m), bytes(val), bytes(proof))
        else:
            accepted += reg.verify_sig(k.public_key, bytes(m), bytes(s))
    assert accepted == 0


@given(st.binary(min_size=32, max_size=32), st.binary(max_size=64))
@settings(max_examples=200)
def test_vrf_matches_independent_formula(seed, msg):
    kp = vrf_keygen(seed)
    out = vrf_evaluate(kp.secret_key, msg)
    assert out.value == hashlib.sha256(b"acp/vrf" + kp.secret_key + msg).digest()
    assert out.proof == hashlib.sha256(b"acp/vrf-proof" + kp.public_key + msg + out.value).digest()
