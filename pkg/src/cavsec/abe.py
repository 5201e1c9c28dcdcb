"""Hidden-policy attribute-based encryption with outsourced encryption.

The scheme works over a fixed universe of N system attributes.  A ciphertext
carries one blinded slot per attribute regardless of the policy, so its shape
reveals nothing about which attributes are required (structural policy
hiding).  Policies are ternary: each attribute is required (+1), irrelevant
(0) or forbidden (-1).

Encryption splits the message into per-slot tuples whose product over the
required slots equals the message, then blinds slot i with g^(a_i * r).  A
user key aggregates the attribute exponents of its holder's set, so
decryption needs only two exponentiations however many attributes are
involved: the blinding collapses to A^sk1 * D^sk2.

The encryption pipeline can be outsourced in three stages:

  out_encrypt1   exponentiation bundle (g^v, {g^(a_i v)}, g^(d v)) computed
                 by an assisting node from a fresh nonzero v
  out_encrypt2   componentwise product of two such bundles from non-colluding
                 assistants; multiplications only
  select_policy  fold the message tuples into the combined bundle;
                 multiplications only

With pinned randomness the outsourced pipeline produces bit-identical
ciphertexts to direct encryption with r = v_a + v_b.

Decryption never signals failure: a key whose attribute set does not satisfy
the policy yields an unrelated group element, and the caller detects this via
key confirmation on the symmetric envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .counters import COUNTERS
from .costmodel import charge_alg
from .group import GroupElement, GroupParams, Scalar, decode_element

REQUIRED, IRRELEVANT, FORBIDDEN = 1, 0, -1


class AbeError(ValueError):
    """Shape mismatches, invalid policies, or malformed inputs."""


class MaterialReuseError(AbeError):
    """A single-use encryption material was consumed twice."""


@dataclass(frozen=True)
class Policy:
    """Ternary per-attribute policy over the system universe.

    At least one attribute must be required: with no required slot the
    product constraint on the message tuples cannot embed the message.
    """

    t: tuple[int, ...]

    def __post_init__(self):
        if not self.t:
            raise AbeError("empty policy")
        if any(v not in (REQUIRED, IRRELEVANT, FORBIDDEN) for v in self.t):
            raise AbeError("policy entries must be +1, 0 or -1")
        if REQUIRED not in self.t:
            raise AbeError("policy must require at least one attribute")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def required(self) -> frozenset[int]:
        return frozenset(i + 1 for i, v in enumerate(self.t) if v == REQUIRED)

    @property
    def forbidden(self) -> frozenset[int]:
        return frozenset(i + 1 for i, v in enumerate(self.t) if v == FORBIDDEN)

    def satisfied_by(self, attrs: frozenset[int]) -> bool:
        return self.required <= attrs and not (self.forbidden & attrs)

    @classmethod
    def from_sets(cls, n: int, required, forbidden=()) -> "Policy":
        req, fbd = set(required), set(forbidden)
        if req & fbd:
            raise AbeError("an attribute cannot be both required and forbidden")
        t = [REQUIRED if i in req else FORBIDDEN if i in fbd else IRRELEVANT
             for i in range(1, n + 1)]
        return cls(tuple(t))


def attribute_set(indices, n: int) -> frozenset[int]:
    """Validated attribute index set: non-empty subset of 1..n."""
    attrs = frozenset(int(i) for i in indices)
    if not attrs:
        raise AbeError("attribute set is empty")
    if not attrs <= frozenset(range(1, n + 1)):
        raise AbeError(f"attribute indices outside universe 1..{n}")
    return attrs


@dataclass(frozen=True)
class AbeMpk:
    params: GroupParams
    g_d: GroupElement
    pk_attrs: tuple[GroupElement, ...]

    @property
    def n(self) -> int:
        return len(self.pk_attrs)


@dataclass(frozen=True)
class AbeMsk:
    d: Scalar
    a: tuple[Scalar, ...]


@dataclass(frozen=True)
class AbeMasterKeys:
    mpk: AbeMpk
    msk: AbeMsk


@dataclass(frozen=True)
class AbeUserKey:
    """Aggregated two-part key: sk1 + d*sk2 = sum of a_i over the attrs."""

    sk1: Scalar
    sk2: Scalar
    attrs: frozenset[int]


@dataclass(frozen=True)
class AbeCiphertext:
    a: GroupElement
    b: tuple[GroupElement, ...]
    d: GroupElement

    @property
    def n(self) -> int:
        return len(self.b)


@dataclass(frozen=True)
class PartialCiphertext:
    """One assistant's exponentiation bundle (g^v, {g^(a_i v)}, g^(d v))."""

    mo1: GroupElement
    mo2: tuple[GroupElement, ...]
    mo3: GroupElement

    @property
    def n(self) -> int:
        return len(self.mo2)


@dataclass(frozen=True)
class PreliminaryCiphertext:
    """Policy-free, message-free ciphertext skeleton with r = v_a + v_b."""

    a: GroupElement
    bp: tuple[GroupElement, ...]
    d: GroupElement

    @property
    def n(self) -> int:
        return len(self.bp)


@dataclass
class EncryptionMaterial:
    """Pre-provisioned partial ciphertext; strictly single-use."""

    serial: int
    mo: PartialCiphertext
    used: bool = field(default=False)

    def consume(self) -> PartialCiphertext:
        if self.used:
            raise MaterialReuseError(f"encryption material {self.serial} already used")
        self.used = True
        return self.mo


# ---------------------------------------------------------------------------
# algorithms
# ---------------------------------------------------------------------------

def abe_setup(params: GroupParams, n_attrs: int, rng) -> AbeMasterKeys:
    """Fresh master keys for a universe of n_attrs attributes."""
    if n_attrs < 1:
        raise AbeError("attribute universe must be non-empty")
    with charge_alg("abe_setup", n_attrs):
        g = params.generator()
        d = rng.scalar_nonzero(params)
        a = tuple(rng.scalar_nonzero(params) for _ in range(n_attrs))
        mpk = AbeMpk(params=params, g_d=g.exp(d), pk_attrs=tuple(g.exp(ai) for ai in a))
        return AbeMasterKeys(mpk=mpk, msk=AbeMsk(d=d, a=a))


def abe_keygen(mk: AbeMasterKeys, user_id: bytes, attrs: frozenset[int], rng) -> AbeUserKey:
    """Issue the aggregated key for an attribute set.

    Per attribute the exponent a_i is split into two random shares; the last
    second-half share absorbs the constraint that all shares sum to the
    attribute-exponent sum.  A blinding scalar s is folded into both halves
    with opposite signs (re-rolled if it would make sk1 zero).
    """
    params = mk.mpk.params
    attrs = attribute_set(attrs, mk.mpk.n)
    with charge_alg("abe_keygen", len(attrs)):
        total = Scalar(0, params.q)
        for i in attrs:
            total = total.add(mk.msk.a[i - 1])

        order = sorted(attrs)
        while True:
            shares1 = {i: rng.scalar_nonzero(params) for i in order}
            shares2 = {i: rng.scalar_nonzero(params) for i in order[:-1]}
            drawn = Scalar(0, params.q)
            for v in shares1.values():
                drawn = drawn.add(v)
            for v in shares2.values():
                drawn = drawn.add(v)
            last = total.sub(drawn)
            if not last.is_zero():
                shares2[order[-1]] = last
                break

        sum1 = Scalar(0, params.q)
        sum2 = Scalar(0, params.q)
        for i in order:
            sum1 = sum1.add(shares1[i])
            sum2 = sum2.add(shares2[i])

        while True:
            s = rng.scalar_nonzero(params)
            sk1 = s.add(sum1)
            if not sk1.is_zero():
                break
        sk2 = s.neg().add(sum2).mul(mk.msk.d.inv())
        return AbeUserKey(sk1=sk1, sk2=sk2, attrs=attrs)


def split_message(mpk: AbeMpk, policy: Policy, m: GroupElement, rng) -> tuple[GroupElement, ...]:
    """Per-slot message tuples: identity for irrelevant slots, fresh noise
    for forbidden slots, and random elements for required slots except the
    highest index, which corrects the product over required slots to m.
    """
    if policy.n != mpk.n:
        raise AbeError("policy length does not match attribute universe")
    params = mpk.params
    highest = max(policy.required)
    tuples: list[GroupElement] = []
    running: GroupElement | None = None
    for i, t in enumerate(policy.t, start=1):
        if t == IRRELEVANT:
            tuples.append(params.identity())
        elif t == FORBIDDEN:
            tuples.append(rng.element_nonidentity(params))
        elif i != highest:
            k = rng.element_nonidentity(params)
            tuples.append(k)
            running = k if running is None else running.mul(k)
        else:
            tuples.append(params.identity())  # placeholder, fixed below
    correcting = m if running is None else m.mul(running.inv())
    tuples[highest - 1] = correcting
    return tuple(tuples)


def abe_encrypt(mpk: AbeMpk, policy: Policy, m: GroupElement, rng) -> AbeCiphertext:
    """Direct encryption: fresh r, slots B_i = p_i * (g^(a_i))^r."""
    with charge_alg("abe_encrypt", mpk.n):
        r = rng.scalar_nonzero(mpk.params)
        tuples = split_message(mpk, policy, m, rng)
        g = mpk.params.generator()
        b = tuple(p.mul(pk.exp(r)) for p, pk in zip(tuples, mpk.pk_attrs))
        return AbeCiphertext(a=g.exp(r), b=b, d=mpk.g_d.exp(r))


def abe_out_encrypt1(mpk: AbeMpk, v: Scalar) -> PartialCiphertext:
    """Assistant-side exponentiation bundle for a caller-supplied nonzero v."""
    if v.is_zero():
        raise AbeError("outsourcing exponent must be nonzero")
    with charge_alg("abe_out_encrypt1", mpk.n):
        g = mpk.params.generator()
        return PartialCiphertext(
            mo1=g.exp(v),
            mo2=tuple(pk.exp(v) for pk in mpk.pk_attrs),
            mo3=mpk.g_d.exp(v),
        )


def abe_out_encrypt2(
    mpk: AbeMpk, mo_a: PartialCiphertext, mo_b: PartialCiphertext
) -> PreliminaryCiphertext:
    """Combine two assistants' bundles componentwise; N+2 multiplications,
    no exponentiations."""
    if mo_a.n != mo_b.n or mo_a.n != mpk.n:
        raise AbeError("partial ciphertext shapes do not match")
    with charge_alg("abe_out_encrypt2", mpk.n):
        return PreliminaryCiphertext(
            a=mo_a.mo1.mul(mo_b.mo1),
            bp=tuple(x.mul(y) for x, y in zip(mo_a.mo2, mo_b.mo2)),
            d=mo_a.mo3.mul(mo_b.mo3),
        )


def abe_select_policy(
    pc: PreliminaryCiphertext, policy: Policy, m: GroupElement, rng,
    tuples: tuple[GroupElement, ...] | None = None,
) -> AbeCiphertext:
    """Fold message tuples into a preliminary ciphertext.

    Multiplications only; every slot is multiplied (identity tuples
    included) so the cost is a function of N alone, never of the policy.
    Callers that precompute their tuple vector off-line pass it in.
    """
    if policy.n != pc.n:
        raise AbeError("policy length does not match ciphertext shape")
    with charge_alg("abe_select_policy", pc.n):
        if tuples is None:
            mpk_like = AbeMpk(params=pc.a.params, g_d=pc.d, pk_attrs=pc.bp)
            tuples = split_message(mpk_like, policy, m, rng)
        elif len(tuples) != pc.n:
            raise AbeError("tuple vector length does not match ciphertext shape")
        b = tuple(p.mul(bp) for p, bp in zip(tuples, pc.bp))
        return AbeCiphertext(a=pc.a, b=b, d=pc.d)


def abe_decrypt(c: AbeCiphertext, key: AbeUserKey) -> GroupElement:
    """Recover prod(B_i over the key's attrs) / (A^sk1 * D^sk2).

    Always returns an element; the result is only the encrypted message when
    the key's attribute set satisfies the policy.  Exactly 2 exponentiations,
    |attrs|+1 multiplications and one inversion.
    """
    if any(i > c.n for i in key.attrs):
        raise AbeError("key attribute index outside ciphertext shape")
    with charge_alg("abe_decrypt", len(key.attrs)):
        order = sorted(key.attrs)
        prod = c.b[order[0] - 1]
        for i in order[1:]:
            prod = prod.mul(c.b[i - 1])
        denom = c.a.exp(key.sk1).mul(c.d.exp(key.sk2))
        return prod.mul(denom.inv())


# ---------------------------------------------------------------------------
# canonical serialization: tag byte, N as u16 BE, fixed-width elements
# ---------------------------------------------------------------------------

TAG_CIPHERTEXT = 0x01
TAG_PARTIAL = 0x02
TAG_PRELIMINARY = 0x03
TAG_USER_KEY = 0x04
TAG_MPK = 0x05


def ciphertext_to_bytes(c: AbeCiphertext) -> bytes:
    out = bytearray([TAG_CIPHERTEXT])
    out += c.n.to_bytes(2, "big")
    out += c.a.encode()
    for b in c.b:
        out += b.encode()
    out += c.d.encode()
    return bytes(out)


def ciphertext_from_bytes(data: bytes, params: GroupParams) -> AbeCiphertext:
    a, elems, d = _unpack_bundle(data, params, TAG_CIPHERTEXT)
    return AbeCiphertext(a=a, b=elems, d=d)


def partial_to_bytes(mo: PartialCiphertext) -> bytes:
    out = bytearray([TAG_PARTIAL])
    out += mo.n.to_bytes(2, "big")
    out += mo.mo1.encode()
    for b in mo.mo2:
        out += b.encode()
    out += mo.mo3.encode()
    return bytes(out)


def partial_from_bytes(data: bytes, params: GroupParams) -> PartialCiphertext:
    mo1, elems, mo3 = _unpack_bundle(data, params, TAG_PARTIAL)
    return PartialCiphertext(mo1=mo1, mo2=elems, mo3=mo3)


def preliminary_to_bytes(pc: PreliminaryCiphertext) -> bytes:
    out = bytearray([TAG_PRELIMINARY])
    out += pc.n.to_bytes(2, "big")
    out += pc.a.encode()
    for b in pc.bp:
        out += b.encode()
    out += pc.d.encode()
    return bytes(out)


def preliminary_from_bytes(data: bytes, params: GroupParams) -> PreliminaryCiphertext:
    a, elems, d = _unpack_bundle(data, params, TAG_PRELIMINARY)
    return PreliminaryCiphertext(a=a, bp=elems, d=d)


def _unpack_bundle(data: bytes, params: GroupParams, tag: int):
    if len(data) < 3 or data[0] != tag:
        raise AbeError("bad serialization tag")
    n = int.from_bytes(data[1:3], "big")
    w = params.pbytes
    if len(data) != 3 + (n + 2) * w:
        raise AbeError("serialized bundle has wrong length")
    off = 3
    first = decode_element(data[off:off + w], params)
    off += w
    elems = []
    for _ in range(n):
        elems.append(decode_element(data[off:off + w], params))
        off += w
    last = decode_element(data[off:off + w], params)
    return first, tuple(elems), last


def user_key_to_bytes(key: AbeUserKey, params: GroupParams) -> bytes:
    out = bytearray([TAG_USER_KEY])
    attrs = sorted(key.attrs)
    out += len(attrs).to_bytes(2, "big")
    out += key.sk1.encode()
    out += key.sk2.encode()
    for i in attrs:
        out += i.to_bytes(2, "big")
    return bytes(out)


def user_key_from_bytes(data: bytes, params: GroupParams) -> AbeUserKey:
    if not data or data[0] != TAG_USER_KEY:
        raise AbeError("bad serialization tag")
    n = int.from_bytes(data[1:3], "big")
    w = params.qbytes
    if len(data) != 3 + 2 * w + 2 * n:
        raise AbeError("serialized key has wrong length")
    sk1 = Scalar(int.from_bytes(data[3:3 + w], "big"), params.q)
    sk2 = Scalar(int.from_bytes(data[3 + w:3 + 2 * w], "big"), params.q)
    off = 3 + 2 * w
    attrs = frozenset(
        int.from_bytes(data[off + 2 * k:off + 2 * k + 2], "big") for k in range(n)
    )
    return AbeUserKey(sk1=sk1, sk2=sk2, attrs=attrs)
