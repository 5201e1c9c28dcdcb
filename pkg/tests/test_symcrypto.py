"""MAC/digest profiles, AEAD round trips, key derivation."""

import pytest

from cavsec import Drbg, IntegrityError, KeyRole, Profile, SymKey, kdf, sym_decrypt, sym_encrypt
from cavsec.symcrypto import (
    AEAD_OVERHEAD,
    KDF_CONTEXTS,
    KEY_BYTES,
    hash_tag,
    mask_bytes,
    prf,
    prf_verify,
)


@pytest.fixture()
def key():
    return SymKey(bytes(range(32)), KeyRole.CK)


@pytest.fixture()
def veh_key():
    return SymKey(bytes(range(16)), KeyRole.SEK)


def test_key_length_enforced_per_role():
    with pytest.raises(ValueError):
        SymKey(b"\x00" * 16, KeyRole.CK)
    for role, size in KEY_BYTES.items():
        SymKey(b"\x00" * size, role)


def test_prf_deterministic_and_profile_lengths(key):
    t1 = prf(key, b"payload", Profile.V2X)
    t2 = prf(key, b"payload", Profile.V2X)
    assert t1 == t2
    assert len(t1.data) == 32
    assert len(prf(key, b"payload", Profile.IN_VEHICLE).data) == 16


def test_in_vehicle_tag_is_truncation_of_v2x_tag(key):
    full = prf(key, b"frame", Profile.V2X).data
    short = prf(key, b"frame", Profile.IN_VEHICLE).data
    assert short == full[:16]


def test_prf_sensitivity(key):
    rng = Drbg(3)
    collisions = 0
    for _ in range(10_000):
        data = rng.bytes(24)
        flipped = bytes([data[0] ^ 1]) + data[1:]
        if prf(key, data).data == prf(key, flipped).data:
            collisions += 1
    assert collisions == 0


def test_prf_verify(key):
    tag = prf(key, b"x")
    assert prf_verify(key, b"x", tag.data)
    assert not prf_verify(key, b"y", tag.data)


def test_aead_round_trip_and_overhead(veh_key):
    rng = Drbg(4)
    for _ in range(1000):
        pt = rng.bytes(rng.below(200))
        nonce = rng.bytes(8)
        ct = sym_encrypt(veh_key, pt, nonce)
        assert len(ct) == len(pt) + AEAD_OVERHEAD
        assert sym_decrypt(veh_key, ct, nonce) == pt


def test_aead_lengths_sweep(veh_key):
    for n in (0, 1, 15, 16, 17, 255, 4096, 65536):
        pt = bytes(n % 251 for _ in range(n))
        ct = sym_encrypt(veh_key, pt, b"n")
        assert sym_decrypt(veh_key, ct, b"n") == pt


def test_aead_wrong_key_is_integrity_error(veh_key):
    ct = sym_encrypt(veh_key, b"secret", b"n1")
    other = SymKey(b"\xff" * 16, KeyRole.SEK)
    with pytest.raises(IntegrityError):
        sym_decrypt(other, ct, b"n1")
    with pytest.raises(IntegrityError):
        sym_decrypt(veh_key, ct[:-1] + bytes([ct[-1] ^ 1]), b"n1")


def test_empty_plaintext_round_trip(veh_key):
    assert sym_decrypt(veh_key, sym_encrypt(veh_key, b"", b"z"), b"z") == b""


def test_kdf_deterministic_context_separated(toy):
    rng = Drbg(5)
    m = rng.element(toy)
    k1 = kdf(m, "data-key")
    assert k1 == kdf(m, "data-key")
    assert k1 != kdf(m, "session-key")
    assert len(k1.data) == KEY_BYTES[KeyRole.DATA]
    k3 = kdf(m, "session-key", KeyRole.SEK)
    assert len(k3.data) == KEY_BYTES[KeyRole.SEK]


def test_kdf_rejects_unregistered_context(toy):
    with pytest.raises(ValueError):
        kdf(b"x", "made-up-context")


def test_kdf_context_registry_documented():
    for tag, description in KDF_CONTEXTS.items():
        assert description and tag == tag.lower()


def test_hash_tag_and_mask_involution(toy):
    assert len(hash_tag(b"abc").data) == 32
    m = Drbg(6).element(toy)
    masked = mask_bytes(b"identity-bytes", m, "pid-mask")
    assert masked != b"identity-bytes"
    assert mask_bytes(masked, m, "pid-mask") == b"identity-bytes"
