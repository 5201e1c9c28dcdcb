"""Subgroup arithmetic, parameter generation, serialization, counters."""

import pytest
from hypothesis import given, settings, strategies as st

from cavsec import COUNTERS, Drbg, GroupError, Scalar, generate_params, make_params, toy_params
from cavsec.group import decode_element, hash_to_scalar, params_from_text, params_to_text

from oracle_mod import subgroup


def test_toy_override_accepts_valid_generator():
    params = make_params(23, 11, 4)
    assert pow(params.g, params.q, params.p) == 1


def test_toy_override_rejects_identity_generator():
    with pytest.raises(GroupError):
        make_params(23, 11, 1)


@pytest.mark.parametrize("bad", [(22, 11, 4), (23, 7, 4), (23, 11, 5)])
def test_invalid_parameter_combinations_rejected(bad):
    with pytest.raises(GroupError):
        make_params(*bad)


def test_generate_params_profile_sizes_and_reproducibility(test_params):
    assert test_params.p.bit_length() == 512
    assert test_params.q.bit_length() == 160
    assert (test_params.p - 1) % test_params.q == 0
    assert pow(test_params.g, test_params.q, test_params.p) == 1
    again = generate_params("test", seed=2024)
    assert again == test_params
    other = generate_params("test", seed=2025)
    assert other != test_params


def test_exp_known_values(toy):
    g = toy.generator()
    assert g.exp(Scalar(0, toy.q)).value == 1
    assert g.exp(Scalar(2, toy.q)).value == 16
    assert g.exp(Scalar(11 % toy.q, toy.q)).value == g.exp(0).value == 1


def test_mul_inv_known_values(toy):
    a, b = toy.element(18), toy.element(13)
    assert a.mul(b).value == 4
    assert a.mul(a.inv()).value == 1


def test_scalar_ops(toy):
    s = Scalar(7, 11)
    assert s.inv().value == 8
    assert s.mul(s.inv()).value == 1
    assert s.add(Scalar(5, 11)).value == 1
    with pytest.raises(GroupError):
        Scalar(0, 11).inv()


def test_mixed_group_operations_rejected(toy, test_params):
    with pytest.raises(GroupError):
        toy.generator().mul(test_params.generator())
    with pytest.raises(GroupError):
        Scalar(1, toy.q).add(Scalar(1, test_params.q))


def test_encode_round_trip_entire_toy_subgroup(toy):
    members = subgroup(toy.p, toy.q)
    assert len(members) == 11
    for v in sorted(members):
        elem = toy.element(v)
        assert decode_element(elem.encode(), toy) == elem


def test_decode_rejects_out_of_range_and_non_members(toy):
    with pytest.raises(GroupError):
        decode_element(toy.p.to_bytes(toy.pbytes, "big"), toy)
    with pytest.raises(GroupError):
        decode_element((0).to_bytes(toy.pbytes, "big"), toy)
    non_members = set(range(1, toy.p)) - subgroup(toy.p, toy.q)
    for v in sorted(non_members)[:3]:
        with pytest.raises(GroupError):
            decode_element(v.to_bytes(toy.pbytes, "big"), toy)
    with pytest.raises(GroupError):
        decode_element(b"\x00" * (toy.pbytes + 1), toy)


@settings(max_examples=60, deadline=None)
@given(e=st.integers(min_value=0, max_value=10), f=st.integers(min_value=0, max_value=10),
       x=st.integers(min_value=0, max_value=10), y=st.integers(min_value=0, max_value=10))
def test_group_laws(e, f, x, y):
    toy = toy_params()
    g = toy.generator()
    a = g.exp(x)
    b = g.exp(y)
    # exp composition, commutativity/associativity, subgroup order
    assert a.exp(e).exp(f) == a.exp(Scalar(e * f % toy.q, toy.q))
    assert a.mul(b) == b.mul(a)
    assert a.mul(b).mul(a) == a.mul(b.mul(a))
    assert a.exp(toy.q % toy.q) == toy.identity()


def test_exp_counter_exact(toy):
    g = toy.generator()
    before = COUNTERS.snapshot()
    for _ in range(17):
        g = toy.generator().exp(3)
    delta = COUNTERS.since(before)
    assert delta.exp == 17
    assert delta.mul == 0


def test_counter_pause_scoping(toy):
    before = COUNTERS.snapshot()
    with COUNTERS.paused("exp"):
        toy.generator().exp(3)
    toy.generator().exp(3)
    assert COUNTERS.since(before).exp == 1


def test_params_text_round_trip(test_params, tmp_path):
    text = params_to_text(test_params)
    assert params_from_text(text) == test_params
    # lowercase hex, one key per line
    lines = text.strip().splitlines()
    assert [ln.split("=")[0] for ln in lines] == ["p", "q", "g"]
    assert all(ln.split("=")[1] == ln.split("=")[1].lower() for ln in lines)


def test_hash_to_scalar_domains_disjoint(toy):
    from cavsec.group import H1_IBS_KEY, H1_IBS_MSG, H1_TAGS, H1_TOKEN_CN, H1_TOKEN_USER

    tags = [H1_IBS_KEY, H1_IBS_MSG, H1_TOKEN_CN, H1_TOKEN_USER]
    assert len(set(tags)) == len(tags)
    assert set(tags) == set(H1_TAGS)
    vals = {hash_to_scalar(toy, t, b"same-input").value for t in tags}
    assert len(vals) > 1  # tag participates in the digest
    s = hash_to_scalar(toy, H1_IBS_MSG, toy.generator(), b"m")
    assert 1 <= s.value < toy.q


def test_drbg_reproducible_and_splittable(toy):
    a, b = Drbg(42), Drbg(42)
    assert a.bytes(32) == b.bytes(32)
    assert a.scalar_nonzero(toy).value == b.scalar_nonzero(toy).value
    c1, c2 = Drbg(42).child("x"), Drbg(42).child("y")
    assert c1.bytes(16) != c2.bytes(16)


def test_drbg_element_sampling_uncounted_and_in_subgroup(toy):
    rng = Drbg(9)
    before = COUNTERS.snapshot()
    members = subgroup(toy.p, toy.q)
    for _ in range(50):
        assert rng.element(toy).value in members
        assert rng.element_nonidentity(toy).value in members - {1}
        assert not rng.scalar_nonzero(toy).is_zero()
    assert COUNTERS.since(before) == before - before
