"""Prime-order subgroup arithmetic.

Everything in this library computes in a Schnorr-style subgroup: a q-order
subgroup of the multiplicative group mod p, with q prime and q | p-1.  All
exponents live in Z_q, all group elements in the subgroup.  Two parameter
profiles are provided (``test``: 512-bit p / 160-bit q, ``standard``:
3072-bit p / 256-bit q) plus an explicit override constructor for tiny
hand-checkable groups.

This is a protocol-simulation substrate, NOT production cryptography: the
arithmetic is not constant-time and makes no attempt to resist side
channels.

Group exponentiation, multiplication and inversion are instrumented through
:mod:`cavsec.counters`; scalar (mod-q) multiplication shares the ``mul``
bucket because cost ledgers count "multiplicative operations" without
distinguishing moduli.  Subgroup-membership checks done while decoding
serialized elements use raw arithmetic and are not counted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

from .counters import COUNTERS


class GroupError(ValueError):
    """Invalid parameters, non-member values, or mixed-group operations."""


class SecurityProfile(str, Enum):
    TEST = "test"
    STANDARD = "standard"


# (p bits, q bits) per profile
_PROFILE_BITS = {
    SecurityProfile.TEST: (512, 160),
    SecurityProfile.STANDARD: (3072, 256),
}

_MR_ROUNDS = 40  # error < 4^-40 = 2^-80


@dataclass(frozen=True)
class GroupParams:
    """Subgroup description: modulus p, subgroup order q, generator g."""

    p: int
    q: int
    g: int

    @property
    def pbytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def qbytes(self) -> int:
        return (self.q.bit_length() + 7) // 8

    def generator(self) -> "GroupElement":
        return GroupElement(self.g, self)

    def identity(self) -> "GroupElement":
        return GroupElement(1, self)

    def element(self, value: int) -> "GroupElement":
        """Wrap a known-good subgroup member without a membership check."""
        return GroupElement(value % self.p, self)

    def scalar(self, value: int) -> "Scalar":
        return Scalar(value % self.q, self.q)

    def is_member(self, value: int) -> bool:
        return 1 <= value < self.p and pow(value, self.q, self.p) == 1


class GroupElement:
    """Immutable member of the q-order subgroup."""

    __slots__ = ("value", "params")

    def __init__(self, value: int, params: GroupParams) -> None:
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "params", params)

    def __setattr__(self, *a):  # pragma: no cover - guard only
        raise AttributeError("GroupElement is immutable")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GroupElement)
            and self.value == other.value
            and self.params == other.params
        )

    def __hash__(self) -> int:
        return hash((self.value, self.params.p))

    def __repr__(self) -> str:
        return f"GroupElement({self.value:#x})"

    def _check_same(self, other: "GroupElement") -> None:
        if self.params != other.params:
            raise GroupError("elements from different groups cannot be combined")

    def mul(self, other: "GroupElement") -> "GroupElement":
        self._check_same(other)
        COUNTERS.bump("mul")
        return GroupElement((self.value * other.value) % self.params.p, self.params)

    def exp(self, e: "Scalar | int") -> "GroupElement":
        k = e.value if isinstance(e, Scalar) else e % self.params.q
        COUNTERS.bump("exp")
        return GroupElement(pow(self.value, k, self.params.p), self.params)

    def inv(self) -> "GroupElement":
        COUNTERS.bump("inv")
        return GroupElement(pow(self.value, -1, self.params.p), self.params)

    def encode(self) -> bytes:
        return self.value.to_bytes(self.params.pbytes, "big")


@dataclass(frozen=True)
class Scalar:
    """Exponent mod q.  Additive ops are free; products share the mul bucket."""

    value: int
    q: int

    def __post_init__(self):
        if not 0 <= self.value < self.q:
            object.__setattr__(self, "value", self.value % self.q)

    def _check_same(self, other: "Scalar") -> None:
        if self.q != other.q:
            raise GroupError("scalars from different groups cannot be combined")

    def add(self, other: "Scalar") -> "Scalar":
        self._check_same(other)
        return Scalar((self.value + other.value) % self.q, self.q)

    def sub(self, other: "Scalar") -> "Scalar":
        self._check_same(other)
        return Scalar((self.value - other.value) % self.q, self.q)

    def neg(self) -> "Scalar":
        return Scalar(-self.value % self.q, self.q)

    def mul(self, other: "Scalar") -> "Scalar":
        self._check_same(other)
        COUNTERS.bump("mul")
        return Scalar((self.value * other.value) % self.q, self.q)

    def inv(self) -> "Scalar":
        if self.value == 0:
            raise GroupError("zero scalar has no inverse")
        return Scalar(pow(self.value, -1, self.q), self.q)

    def is_zero(self) -> bool:
        return self.value == 0

    def encode(self) -> bytes:
        return self.value.to_bytes((self.q.bit_length() + 7) // 8, "big")


# ---------------------------------------------------------------------------
# module-level operation aliases
# ---------------------------------------------------------------------------

def exp(base: GroupElement, e: Scalar | int) -> GroupElement:
    return base.exp(e)


def mul(a: GroupElement, b: GroupElement) -> GroupElement:
    return a.mul(b)


def inv(a: GroupElement) -> GroupElement:
    return a.inv()


def encode_element(a: GroupElement) -> bytes:
    return a.encode()


def decode_element(data: bytes, params: GroupParams) -> GroupElement:
    """Decode a fixed-width big-endian element, rejecting non-members.

    The membership check uses raw modular arithmetic (uncounted): it is
    serialization plumbing, not part of any algorithm's cost.
    """
    if len(data) != params.pbytes:
        raise GroupError(f"element encoding must be {params.pbytes} bytes, got {len(data)}")
    v = int.from_bytes(data, "big")
    if not 1 <= v < params.p:
        raise GroupError("element value out of range")
    if pow(v, params.q, params.p) != 1:
        raise GroupError("value is not a subgroup member")
    return GroupElement(v, params)


def decode_scalar(data: bytes, params: GroupParams) -> Scalar:
    if len(data) != params.qbytes:
        raise GroupError(f"scalar encoding must be {params.qbytes} bytes, got {len(data)}")
    v = int.from_bytes(data, "big")
    if v >= params.q:
        raise GroupError("scalar value out of range")
    return Scalar(v, params.q)


# ---------------------------------------------------------------------------
# parameter generation
# ---------------------------------------------------------------------------

def _is_probable_prime(n: int, rng_bytes) -> bool:
    """Miller-Rabin with deterministic pseudorandom bases; error < 2^-80."""
    if n < 2:
        return False
    for sp in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % sp == 0:
            return n == sp
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    nbytes = (n.bit_length() + 7) // 8
    for _ in range(_MR_ROUNDS):
        a = 2 + int.from_bytes(rng_bytes(nbytes + 8), "big") % (n - 3)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


class _StreamRng:
    """SHA-256 counter stream; deterministic byte source for prime search."""

    def __init__(self, seed: bytes) -> None:
        self._key = hashlib.sha256(b"cavsec-params" + seed).digest()
        self._ctr = 0
        self._buf = b""

    def __call__(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._buf += hashlib.sha256(self._key + self._ctr.to_bytes(8, "big")).digest()
            self._ctr += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out


def make_params(p: int, q: int, g: int) -> GroupParams:
    """Build parameters from explicit values, validating all invariants.

    Intended for tiny hand-checkable groups (e.g. p=23, q=11, g=4) and for
    loading previously generated parameter files.
    """
    check = _StreamRng(b"validate")
    if not _is_probable_prime(p, check):
        raise GroupError("p is not prime")
    if not _is_probable_prime(q, check):
        raise GroupError("q is not prime")
    if (p - 1) % q != 0:
        raise GroupError("q does not divide p-1")
    if not 2 <= g < p:
        raise GroupError("generator out of range")
    if pow(g, q, p) != 1 or g == 1:
        raise GroupError("g does not generate the q-order subgroup")
    return GroupParams(p=p, q=q, g=g)


def generate_params(
    profile: SecurityProfile | str = SecurityProfile.TEST, seed: int | bytes = 0
) -> GroupParams:
    """Deterministically generate a fresh parameter set for the profile.

    Retries internally until primes are found; same (profile, seed) always
    yields the same parameters.
    """
    profile = SecurityProfile(profile)
    pbits, qbits = _PROFILE_BITS[profile]
    if isinstance(seed, int):
        seed = seed.to_bytes(8, "big", signed=True)
    rng = _StreamRng(profile.value.encode() + seed)

    def draw(bits: int) -> int:
        v = int.from_bytes(rng((bits + 7) // 8), "big")
        v |= 1 << (bits - 1)
        return v

    q = draw(qbits) | 1
    while not _is_probable_prime(q, rng):
        q += 2

    kbits = pbits - qbits
    while True:
        k = draw(kbits) & ~1  # even cofactor keeps p odd
        p = q * k + 1
        if p.bit_length() == pbits and _is_probable_prime(p, rng):
            break

    cofactor = (p - 1) // q
    while True:
        h = 2 + int.from_bytes(rng(pbits // 8), "big") % (p - 3)
        g = pow(h, cofactor, p)
        if g != 1:
            break
    return GroupParams(p=p, q=q, g=g)


# ---------------------------------------------------------------------------
# parameter files: lowercase-hex key=value lines
# ---------------------------------------------------------------------------

def params_to_text(params: GroupParams) -> str:
    return f"p={params.p:x}\nq={params.q:x}\ng={params.g:x}\n"


def params_from_text(text: str) -> GroupParams:
    vals: dict[str, int] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, hexval = line.partition("=")
        vals[key.strip()] = int(hexval.strip(), 16)
    missing = {"p", "q", "g"} - vals.keys()
    if missing:
        raise GroupError(f"parameter file missing keys: {sorted(missing)}")
    return make_params(vals["p"], vals["q"], vals["g"])


# ---------------------------------------------------------------------------
# hash-to-scalar with per-call-site domain tags
# ---------------------------------------------------------------------------

# one tag per call site; cross-protocol collisions are prevented by prefixing
H1_IBS_KEY = 0x01     # binds a signing key half to an identity
H1_IBS_MSG = 0x02     # binds a signature nonce, key half and message
H1_TOKEN_CN = 0x03    # binds a core-network token to (U, expiry, pid)
H1_TOKEN_USER = 0x04  # binds a per-message token to (U, current time)

H1_TAGS = {
    H1_IBS_KEY: "ibs-key-binding",
    H1_IBS_MSG: "ibs-message-binding",
    H1_TOKEN_CN: "token-core-network",
    H1_TOKEN_USER: "token-per-message",
}


def _canon(part) -> bytes:
    if isinstance(part, GroupElement):
        return b"\x01" + part.encode()
    if isinstance(part, Scalar):
        return b"\x02" + part.encode()
    if isinstance(part, bytes):
        return b"\x03" + len(part).to_bytes(4, "big") + part
    if isinstance(part, int):
        return b"\x04" + part.to_bytes(8, "big")
    if isinstance(part, str):
        raw = part.encode()
        return b"\x05" + len(raw).to_bytes(4, "big") + raw
    raise TypeError(f"cannot hash {type(part).__name__}")


def hash_to_scalar(params: GroupParams, tag: int, *parts) -> Scalar:
    """SHA-256 of the tagged, canonically encoded parts, reduced mod q.

    A zero reduction maps to 1 so outputs stay in Z_q^*.
    """
    if tag not in H1_TAGS:
        raise GroupError(f"unregistered hash domain tag {tag:#x}")
    COUNTERS.bump("prf")
    h = hashlib.sha256()
    h.update(b"cavsec-h1")
    h.update(bytes([tag]))
    for part in parts:
        h.update(_canon(part))
    v = int.from_bytes(h.digest(), "big") % params.q
    return Scalar(v or 1, params.q)


def toy_params() -> GroupParams:
    """The 11-element subgroup of Z_23^*; used by hand-checked test vectors."""
    return make_params(23, 11, 4)
