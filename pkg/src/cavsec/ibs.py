"""Identity-based signatures with offline precomputation and outsourced
nonce exponentiation.

A signing key is a Schnorr-style pair (B, kappa) with the public relation
g^kappa = B * X^H1(B, id).  Direct signing costs one exponentiation.  The
outsourced path removes even that from the signer's online step:

  offline_sign  signer precomputes Y = g^y and g^(1/w) for secret y, w
                (the only two exponentiations on the signer's side)
  out_sign1     an assistant raises Y^x_t for a fresh public x_t
  out_sign2     signer finishes online with scalar arithmetic only: it
                splits z_t = X_t + Y_t and publishes (w*X_t, Y_t) so the
                assistant, who saw x_t and Y^x_t, still cannot recover z_t
                (w never leaves the signer)

Verification reconstructs g^z_t from the blinded split, then checks the
usual key relation.  Batch verification aggregates many (signer, message)
pairs into a single product equation, grouping per signer and per blinding
state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .counters import COUNTERS
from .costmodel import charge_alg
from .group import (
    GroupElement,
    GroupParams,
    H1_IBS_KEY,
    H1_IBS_MSG,
    Scalar,
    decode_element,
    decode_scalar,
)
from . import group as _group


class IbsError(ValueError):
    pass


@dataclass(frozen=True)
class IbsMspk:
    params: GroupParams
    x_pub: GroupElement  # g^x


@dataclass(frozen=True)
class IbsMasterKeys:
    mspk: IbsMspk
    x: Scalar


@dataclass(frozen=True)
class IbsSigningKey:
    b: GroupElement
    kappa: Scalar


@dataclass
class OfflineSignState:
    """Precomputed signing material for one (message-type, session) lane.

    Y may be reused across the lane's messages with a fresh x_t each time;
    omega must never leave the signer.
    """

    y: Scalar
    y_pub: GroupElement
    omega: Scalar
    g_inv_omega: GroupElement
    retired: bool = field(default=False)


VARIANT_DIRECT = 0x01
VARIANT_OUTSOURCED = 0x02


@dataclass(frozen=True)
class IbsSignature:
    variant: int
    y_pub: GroupElement          # Y_t (direct) or Y'_t (outsourced)
    b: GroupElement
    z: Scalar | None = None          # direct only
    wx: Scalar | None = None         # omega * X_t, outsourced only
    g_inv_omega: GroupElement | None = None  # outsourced only
    y_split: Scalar | None = None    # script-Y_t, outsourced only


def ibs_setup(params: GroupParams, rng) -> IbsMasterKeys:
    with charge_alg("ibs_setup", 0):
        x = rng.scalar_nonzero(params)
        return IbsMasterKeys(mspk=IbsMspk(params=params, x_pub=params.generator().exp(x)), x=x)


def ibs_keygen(mk: IbsMasterKeys, identity: bytes, rng) -> IbsSigningKey:
    with charge_alg("ibs_keygen", 0):
        params = mk.mspk.params
        beta = rng.scalar_nonzero(params)
        b = params.generator().exp(beta)
        h = hash_to_scalar(params, H1_IBS_KEY, b, identity)
        return IbsSigningKey(b=b, kappa=beta.add(h.mul(mk.x)))


def signing_key_valid(mspk: IbsMspk, identity: bytes, key: IbsSigningKey) -> bool:
    """Public check of the key relation g^kappa = B * X^H1(B, id)."""
    h = hash_to_scalar(mspk.params, H1_IBS_KEY, key.b, identity)
    lhs = mspk.params.generator().exp(key.kappa)
    return lhs == key.b.mul(mspk.x_pub.exp(h))


def ibs_sign(mspk: IbsMspk, key: IbsSigningKey, msg: bytes, rng) -> IbsSignature:
    """Direct signature; one exponentiation."""
    with charge_alg("ibs_sign", 0):
        params = mspk.params
        y = rng.scalar_nonzero(params)
        y_pub = params.generator().exp(y)
        h = hash_to_scalar(params, H1_IBS_MSG, y_pub, key.b, msg)
        z = y.add(h.mul(key.kappa))
        return IbsSignature(variant=VARIANT_DIRECT, y_pub=y_pub, b=key.b, z=z)


def ibs_offline_sign(mspk: IbsMspk, rng) -> OfflineSignState:
    """Precompute (y, Y, omega, g^(1/omega)); two exponentiations."""
    with charge_alg("ibs_offline_sign", 0):
        params = mspk.params
        y = rng.scalar_nonzero(params)
        omega = rng.scalar_nonzero(params)
        g = params.generator()
        return OfflineSignState(
            y=y, y_pub=g.exp(y), omega=omega, g_inv_omega=g.exp(omega.inv())
        )


def ibs_out_sign1(y_pub: GroupElement, x_t: Scalar) -> GroupElement:
    """Assistant-side nonce exponentiation Y^x_t.

    The assistant learns only (Y, x_t, Y^x_t).
    """
    if x_t.is_zero():
        raise IbsError("outsourcing exponent must be nonzero")
    with charge_alg("ibs_out_sign1", 0):
        return y_pub.exp(x_t)


def ibs_out_sign2(
    mspk: IbsMspk,
    key: IbsSigningKey,
    state: OfflineSignState,
    x_t: Scalar,
    y_prime: GroupElement,
    msg: bytes,
    rng,
) -> IbsSignature:
    """Finish an outsourced signature with scalar arithmetic only.

    The caller is responsible for y_prime = state.Y^x_t; a mismatch is not
    detectable here and surfaces as a verification failure.  z_t never
    appears in the output: it is split as X_t + Y_t and only (omega*X_t,
    Y_t) are published.
    """
    if state.retired:
        raise IbsError("offline signing state already retired")
    with charge_alg("ibs_out_sign2", 0):
        params = mspk.params
        # this hash is part of the signing algorithm's own advertised cost,
        # not the caller's protocol-layer hash tally
        with COUNTERS.paused("prf"):
            h = hash_to_scalar(params, H1_IBS_MSG, y_prime, key.b, msg)
        z = x_t.mul(state.y).add(h.mul(key.kappa))
        x_split = rng.scalar(params)
        y_split = z.sub(x_split)
        return IbsSignature(
            variant=VARIANT_OUTSOURCED,
            y_pub=y_prime,
            b=key.b,
            wx=state.omega.mul(x_split),
            g_inv_omega=state.g_inv_omega,
            y_split=y_split,
        )


def _key_relation(mspk: IbsMspk, identity: bytes, b: GroupElement) -> GroupElement:
    """B * X^H1(B, id), i.e. g^kappa reconstructed from public data."""
    h_id = hash_to_scalar(mspk.params, H1_IBS_KEY, b, identity)
    return b.mul(mspk.x_pub.exp(h_id))


def ibs_verify(mspk: IbsMspk, identity: bytes, sig: IbsSignature, msg: bytes) -> bool:
    """Check g^z = Y * (B * X^H1(B,id))^h; rejection is a return value."""
    with charge_alg("ibs_verify", 0):
        params = mspk.params
        h = hash_to_scalar(params, H1_IBS_MSG, sig.y_pub, sig.b, msg)
        if sig.variant == VARIANT_DIRECT:
            lhs = params.generator().exp(sig.z)
        elif sig.variant == VARIANT_OUTSOURCED:
            lhs = sig.g_inv_omega.exp(sig.wx).mul(params.generator().exp(sig.y_split))
        else:
            raise IbsError(f"unknown signature variant {sig.variant}")
        rhs = sig.y_pub.mul(_key_relation(mspk, identity, sig.b).exp(h))
        return lhs == rhs


def ibs_batch_verify(mspk: IbsMspk, items) -> bool:
    """Aggregate check over (identity, signature, message) triples.

    Accepts whenever every item verifies individually; a single corrupted
    item rejects the whole batch.  Outsourced items are grouped per
    (identity, B, g^(1/omega)) so each group costs one reconstruction
    exponentiation; items are sorted first for deterministic transcripts.
    """
    items = list(items)
    if not items:
        raise IbsError("empty batch")
    with charge_alg("ibs_batch_verify", len(items)):
        params = mspk.params
        order = sorted(
            range(len(items)),
            key=lambda k: (items[k][0], signature_to_bytes(items[k][1], params)),
        )

        z_direct = Scalar(0, params.q)
        split_sum = Scalar(0, params.q)
        wx_groups: dict[tuple, tuple[GroupElement, Scalar]] = {}
        rhs = None
        h_weighted = Scalar(0, params.q)

        for k in order:
            identity, sig, msg = items[k]
            h = hash_to_scalar(params, H1_IBS_MSG, sig.y_pub, sig.b, msg)
            h_id = hash_to_scalar(params, H1_IBS_KEY, sig.b, identity)
            h_weighted = h_weighted.add(h.mul(h_id))
            term = sig.y_pub.mul(sig.b.exp(h))
            rhs = term if rhs is None else rhs.mul(term)
            if sig.variant == VARIANT_DIRECT:
                z_direct = z_direct.add(sig.z)
            elif sig.variant == VARIANT_OUTSOURCED:
                gk = (identity, sig.b.value, sig.g_inv_omega.value)
                base, acc = wx_groups.get(gk, (sig.g_inv_omega, Scalar(0, params.q)))
                wx_groups[gk] = (base, acc.add(sig.wx))
                split_sum = split_sum.add(sig.y_split)
            else:
                raise IbsError(f"unknown signature variant {sig.variant}")

        lhs = params.generator().exp(z_direct.add(split_sum))
        for base, acc in wx_groups.values():
            lhs = lhs.mul(base.exp(acc))
        rhs = rhs.mul(mspk.x_pub.exp(h_weighted))
        return lhs == rhs


def hash_to_scalar(params: GroupParams, tag: int, *parts) -> Scalar:
    """Indirection point so tests can stub the hash; see group.hash_to_scalar."""
    return _group.hash_to_scalar(params, tag, *parts)


# ---------------------------------------------------------------------------
# serialization: 1 variant byte + fixed-width fields
# ---------------------------------------------------------------------------

def signature_to_bytes(sig: IbsSignature, params: GroupParams) -> bytes:
    if sig.variant == VARIANT_DIRECT:
        return bytes([VARIANT_DIRECT]) + sig.y_pub.encode() + sig.b.encode() + sig.z.encode()
    if sig.variant == VARIANT_OUTSOURCED:
        return (
            bytes([VARIANT_OUTSOURCED])
            + sig.y_pub.encode()
            + sig.b.encode()
            + sig.wx.encode()
            + sig.g_inv_omega.encode()
            + sig.y_split.encode()
        )
    raise IbsError(f"unknown signature variant {sig.variant}")


def signature_from_bytes(data: bytes, params: GroupParams) -> IbsSignature:
    if not data:
        raise IbsError("empty signature encoding")
    pw, qw = params.pbytes, params.qbytes
    variant = data[0]
    if variant == VARIANT_DIRECT:
        if len(data) != 1 + 2 * pw + qw:
            raise IbsError("direct signature has wrong length")
        y_pub = decode_element(data[1:1 + pw], params)
        b = decode_element(data[1 + pw:1 + 2 * pw], params)
        z = decode_scalar(data[1 + 2 * pw:], params)
        return IbsSignature(variant=variant, y_pub=y_pub, b=b, z=z)
    if variant == VARIANT_OUTSOURCED:
        if len(data) != 1 + 3 * pw + 2 * qw:
            raise IbsError("outsourced signature has wrong length")
        off = 1
        y_pub = decode_element(data[off:off + pw], params); off += pw
        b = decode_element(data[off:off + pw], params); off += pw
        wx = decode_scalar(data[off:off + qw], params); off += qw
        g_inv = decode_element(data[off:off + pw], params); off += pw
        y_split = decode_scalar(data[off:off + qw], params)
        return IbsSignature(
            variant=variant, y_pub=y_pub, b=b, wx=wx, g_inv_omega=g_inv, y_split=y_split
        )
    raise IbsError(f"unknown signature variant {variant}")
