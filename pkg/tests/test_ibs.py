"""Signature scheme: worked vectors, both verify branches, batch checks,
signer exponentiation budgets, and the assistant's view."""

import pytest

from cavsec import (
    COUNTERS,
    Drbg,
    ScriptedRng,
    ibs_batch_verify,
    ibs_keygen,
    ibs_offline_sign,
    ibs_out_sign1,
    ibs_out_sign2,
    ibs_setup,
    ibs_sign,
    ibs_verify,
)
from cavsec import ibs as ibs_mod
from cavsec.group import Scalar
from cavsec.ibs import IbsError, signature_from_bytes, signature_to_bytes, signing_key_valid

import oracle_mod


@pytest.fixture(scope="module")
def keys(test_params):
    return ibs_setup(test_params, Drbg(21))


@pytest.fixture(scope="module")
def signer(test_params, keys):
    return ibs_keygen(keys, b"ecu-7", Drbg(22))


def _outsourced(mspk, key, msg, rng):
    state = ibs_offline_sign(mspk, rng)
    x_t = rng.scalar_nonzero(mspk.params)
    y_prime = ibs_out_sign1(state.y_pub, x_t)
    return ibs_out_sign2(mspk, key, state, x_t, y_prime, msg, rng)


def test_setup_worked_value(toy):
    mk = ibs_setup(toy, ScriptedRng(scalars=[3]))
    assert mk.mspk.x_pub.value == oracle_mod.tiny_signature_values()["x_pub"] == 18


def test_setup_distinct(toy, rng):
    assert ibs_setup(toy, rng).mspk.x_pub != ibs_setup(toy, rng).mspk.x_pub


def test_keygen_worked_value_with_stubbed_hash(toy, monkeypatch):
    mk = ibs_setup(toy, ScriptedRng(scalars=[3]))
    monkeypatch.setattr(
        ibs_mod, "hash_to_scalar", lambda params, tag, *parts: Scalar(5, params.q)
    )
    key = ibs_keygen(mk, b"id", ScriptedRng(scalars=[2]))
    assert key.b.value == 16
    assert key.kappa.value == 6  # 2 + 5*3 mod 11


def test_keygen_invariant_many_ids(test_params, keys, rng):
    for i in range(100):
        ident = rng.bytes(12)
        key = ibs_keygen(keys, ident, rng)
        assert signing_key_valid(keys.mspk, ident, key)


def test_keygen_same_id_differs(keys, rng):
    k1 = ibs_keygen(keys, b"same", rng)
    k2 = ibs_keygen(keys, b"same", rng)
    assert k1.b != k2.b
    assert signing_key_valid(keys.mspk, b"same", k1)
    assert signing_key_valid(keys.mspk, b"same", k2)


def test_sign_verify_round_trips(keys, signer, rng):
    for _ in range(1000):
        msg = rng.bytes(40)
        sig = ibs_sign(keys.mspk, signer, msg, rng)
        assert ibs_verify(keys.mspk, b"ecu-7", sig, msg)


def test_sign_flip_byte_rejects(keys, signer, rng):
    msg = b"steering-angle: 12.5"
    sig = ibs_sign(keys.mspk, signer, msg, rng)
    assert not ibs_verify(keys.mspk, b"ecu-7", sig, msg[:-1] + bytes([msg[-1] ^ 1]))
    assert not ibs_verify(keys.mspk, b"ecu-8", sig, msg)


def test_sign_pinned_randomness_matches_hand_values(toy, monkeypatch):
    mk = ibs_setup(toy, ScriptedRng(scalars=[3]))
    monkeypatch.setattr(
        ibs_mod, "hash_to_scalar", lambda params, tag, *parts: Scalar(5, params.q)
    )
    key = ibs_keygen(mk, b"id", ScriptedRng(scalars=[2]))  # kappa = 6
    sig = ibs_sign(mk.mspk, key, b"m", ScriptedRng(scalars=[3]))  # y = 3
    assert sig.y_pub.value == 18  # 4^3 mod 23
    assert sig.z.value == (3 + 5 * 6) % 11 == 0
    assert ibs_verify(mk.mspk, b"id", sig, b"m")


def test_offline_sign_worked_values(toy):
    mk = ibs_setup(toy, ScriptedRng(scalars=[3]))
    state = ibs_offline_sign(mk.mspk, ScriptedRng(scalars=[3, 4]))  # y=3, omega=4
    assert state.y_pub.value == 18
    assert state.g_inv_omega.value == 18  # omega^-1 = 3, 4^3 = 18
    assert state.g_inv_omega.exp(state.omega).value == toy.g


def test_offline_sign_exponentiation_budget(keys, rng):
    before = COUNTERS.snapshot()
    ibs_offline_sign(keys.mspk, rng)
    assert COUNTERS.since(before).exp == 2


def test_out_sign1_worked_values(toy):
    y = toy.element(18)
    assert ibs_out_sign1(y, Scalar(1, toy.q)) == y
    assert ibs_out_sign1(y, Scalar(2, toy.q)).value == 2
    with pytest.raises(IbsError):
        ibs_out_sign1(y, Scalar(0, toy.q))


def test_out_sign1_composes(toy, rng):
    y = rng.element_nonidentity(toy)
    a, b = rng.scalar_nonzero(toy), rng.scalar_nonzero(toy)
    assert ibs_out_sign1(ibs_out_sign1(y, a), b) == ibs_out_sign1(y, a.mul(b))


def test_out_sign2_verifies_and_budget(keys, signer, rng):
    state = ibs_offline_sign(keys.mspk, rng)
    x_t = rng.scalar_nonzero(keys.mspk.params)
    y_prime = ibs_out_sign1(state.y_pub, x_t)
    before = COUNTERS.snapshot()
    sig = ibs_out_sign2(keys.mspk, signer, state, x_t, y_prime, b"msg", rng)
    delta = COUNTERS.since(before)
    assert delta.exp == 0  # the signer's online step is exponentiation-free
    assert delta.mul == 3  # x*y, h*kappa, omega*X
    assert delta.prf == 0  # its hash is charged to the algorithm itself
    assert ibs_verify(keys.mspk, b"ecu-7", sig, b"msg")


def test_out_sign2_never_exposes_z(keys, signer, rng):
    state = ibs_offline_sign(keys.mspk, rng)
    x_t = rng.scalar_nonzero(keys.mspk.params)
    y_prime = ibs_out_sign1(state.y_pub, x_t)
    sig = ibs_out_sign2(keys.mspk, signer, state, x_t, y_prime, b"m", rng)
    assert sig.z is None
    # z = wx/omega + y_split; without omega the published pair is a blind split
    z = x_t.mul(state.y).add(
        ibs_mod.hash_to_scalar(keys.mspk.params, 2, y_prime, signer.b, b"m").mul(signer.kappa)
    )
    assert sig.wx != z.sub(sig.y_split)  # omega != 1 blinds the X part
    assert sig.wx == state.omega.mul(z.sub(sig.y_split))


def test_out_sign2_pinned_toy_trace(toy, monkeypatch):
    mk = ibs_setup(toy, ScriptedRng(scalars=[3]))
    monkeypatch.setattr(
        ibs_mod, "hash_to_scalar", lambda params, tag, *parts: Scalar(5, params.q)
    )
    key = ibs_keygen(mk, b"id", ScriptedRng(scalars=[2]))      # kappa = 6
    state = ibs_offline_sign(mk.mspk, ScriptedRng(scalars=[3, 4]))  # y=3, omega=4
    x_t = Scalar(2, toy.q)
    y_prime = ibs_out_sign1(state.y_pub, x_t)                  # 18^2 = 2
    sig = ibs_out_sign2(mk.mspk, key, state, x_t, y_prime, b"m", ScriptedRng(scalars=[5]))
    # z = x*y + h*kappa = 6 + 30 = 36 = 3 mod 11; split X=5 -> Y=-2=9; wX=4*5=9
    assert sig.y_pub.value == 2
    assert sig.wx.value == 9
    assert sig.y_split.value == 9
    assert ibs_verify(mk.mspk, b"id", sig, b"m")


def test_stale_offline_state_rejected(keys, signer, rng):
    state = ibs_offline_sign(keys.mspk, rng)
    state.retired = True
    x_t = rng.scalar_nonzero(keys.mspk.params)
    with pytest.raises(IbsError):
        ibs_out_sign2(keys.mspk, signer, state, x_t, state.y_pub, b"m", rng)


def test_verify_wrong_yprime_fails(keys, signer, rng):
    state = ibs_offline_sign(keys.mspk, rng)
    x_t = rng.scalar_nonzero(keys.mspk.params)
    wrong = ibs_out_sign1(state.y_pub, x_t.add(Scalar(1, keys.mspk.params.q)))
    sig = ibs_out_sign2(keys.mspk, signer, state, x_t, wrong, b"m", rng)
    assert not ibs_verify(keys.mspk, b"ecu-7", sig, b"m")


def test_batch_accepts_valid_mixed_batches(test_params, keys, rng):
    signers = [(f"ecu-{i}".encode(), ibs_keygen(keys, f"ecu-{i}".encode(), rng)) for i in range(5)]
    items = []
    for i in range(50):
        ident, key = signers[i % 5]
        msg = rng.bytes(20)
        if i % 2:
            sig = ibs_sign(keys.mspk, key, msg, rng)
        else:
            sig = _outsourced(keys.mspk, key, msg, rng)
        items.append((ident, sig, msg))
    assert ibs_batch_verify(keys.mspk, items)


def test_batch_rejects_single_corruption(test_params, keys, rng):
    ident = b"ecu-0"
    key = ibs_keygen(keys, ident, rng)
    items = [
        (ident, ibs_sign(keys.mspk, key, rng.bytes(16), rng), None) for _ in range(20)
    ]
    items = [(i, s, signature_to_bytes(s, test_params)) for i, s, _ in items]
    good = [(i, s, b"m" + raw[:4]) for i, s, raw in items]
    # re-sign over stable messages
    msgs = [rng.bytes(16) for _ in range(20)]
    good = []
    for msg in msgs:
        good.append((ident, ibs_sign(keys.mspk, key, msg, rng), msg))
    assert ibs_batch_verify(keys.mspk, good)
    bad = list(good)
    victim = bad[7]
    tampered = ibs_mod.IbsSignature(
        variant=victim[1].variant,
        y_pub=victim[1].y_pub,
        b=victim[1].b,
        z=victim[1].z.add(Scalar(1, test_params.q)),
    )
    bad[7] = (victim[0], tampered, victim[2])
    assert not ibs_batch_verify(keys.mspk, bad)


def test_batch_singleton_equals_verify(keys, rng):
    key = ibs_keygen(keys, b"one", rng)
    for _ in range(200):
        msg = rng.bytes(12)
        sig = ibs_sign(keys.mspk, key, msg, rng) if rng.below(2) else _outsourced(
            keys.mspk, key, msg, rng
        )
        single = ibs_batch_verify(keys.mspk, [(b"one", sig, msg)])
        assert single == ibs_verify(keys.mspk, b"one", sig, msg)
        wrong = ibs_batch_verify(keys.mspk, [(b"one", sig, msg + b"!")])
        assert wrong == ibs_verify(keys.mspk, b"one", sig, msg + b"!") == False  # noqa: E712


def test_batch_empty_rejected(keys):
    with pytest.raises(IbsError):
        ibs_batch_verify(keys.mspk, [])


def test_assistant_view_underdetermines_kappa(toy):
    """With group elements treated as opaque, the scalar part of the
    assistant's view is explainable by any kappa: exhibit two witnesses."""
    mk = ibs_setup(toy, ScriptedRng(scalars=[3]))
    key = ibs_keygen(mk, b"id", ScriptedRng(scalars=[2]))
    rng = Drbg(31)
    state = ibs_offline_sign(mk.mspk, rng)
    x_t = rng.scalar_nonzero(toy)
    y_prime = ibs_out_sign1(state.y_pub, x_t)
    sig = ibs_out_sign2(mk.mspk, key, state, x_t, y_prime, b"m", rng)
    h = ibs_mod.hash_to_scalar(toy, 2, y_prime, key.b, b"m")

    witnesses = []
    for kappa_guess in range(1, toy.q):
        for y_guess in range(1, toy.q):
            z_guess = (x_t.value * y_guess + h.value * kappa_guess) % toy.q
            x_split = (z_guess - sig.y_split.value) % toy.q
            if x_split == 0:
                continue
            omega_guess = (sig.wx.value * pow(x_split, -1, toy.q)) % toy.q
            if omega_guess:
                witnesses.append(kappa_guess)
                break
    assert len(set(witnesses)) > 1
    assert key.kappa.value in witnesses


def test_signature_serialization_round_trip(test_params, keys, signer, rng):
    msg = b"payload"
    direct = ibs_sign(keys.mspk, signer, msg, rng)
    raw = signature_to_bytes(direct, test_params)
    assert raw[0] == ibs_mod.VARIANT_DIRECT
    assert signature_from_bytes(raw, test_params) == direct
    out = _outsourced(keys.mspk, signer, msg, rng)
    raw2 = signature_to_bytes(out, test_params)
    assert raw2[0] == ibs_mod.VARIANT_OUTSOURCED
    assert signature_from_bytes(raw2, test_params) == out
