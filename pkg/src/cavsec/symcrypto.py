"""Symmetric primitives the protocol composes.

Two profiles mirror the two network segments: V2X messages use 32-byte tags
and 256-bit keys, in-vehicle frames use 16-byte truncated tags and 128-bit
keys.  The cipher is AES-GCM repo-wide: the protocol keeps its explicit MACs
exactly as specified, and the integrated AEAD tag is what detects a wrongly
recovered data key (attribute decryption itself never fails locally, so key
confirmation has to come from the symmetric envelope).

Counter conventions: ``prf`` counts MAC generation/verification, unkeyed
digests and hash-to-scalar calls; ``sym`` counts cipher calls and key
derivations (key derivation is bucketed with symmetric-cipher work in the
cost ledgers).
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .counters import COUNTERS
from .group import GroupElement


class IntegrityError(Exception):
    """AEAD authentication failed: wrong key or tampered ciphertext."""


class Profile(str, Enum):
    V2X = "v2x"
    IN_VEHICLE = "in_vehicle"


TAG_BYTES = {Profile.V2X: 32, Profile.IN_VEHICLE: 16}
AEAD_OVERHEAD = 16  # GCM tag


class KeyRole(str, Enum):
    CK = "ck"                  # confidentiality key (core network)
    IK = "ik"                  # integrity key (core network)
    AK = "ak"                  # anonymity key (core network)
    SEK = "sek"                # in-vehicle session key
    LTK_SA_ECU = "ltk_sa_ecu"  # long-term OBU<->ECU key
    LTK_OEM_ECU = "ltk_oem_ecu"  # long-term OEM<->ECU key
    DATA = "data"              # per-exchange data-sharing key


KEY_BYTES = {
    KeyRole.CK: 32,
    KeyRole.IK: 32,
    KeyRole.AK: 16,
    KeyRole.SEK: 16,
    KeyRole.LTK_SA_ECU: 16,
    KeyRole.LTK_OEM_ECU: 16,
    KeyRole.DATA: 32,
}


@dataclass(frozen=True)
class SymKey:
    data: bytes
    role: KeyRole

    def __post_init__(self):
        want = KEY_BYTES[self.role]
        if len(self.data) != want:
            raise ValueError(f"{self.role.value} key must be {want} bytes, got {len(self.data)}")

    def __repr__(self) -> str:  # never leak key bytes in logs
        return f"SymKey(role={self.role.value})"


@dataclass(frozen=True)
class MacTag:
    data: bytes
    profile: Profile

    def __post_init__(self):
        if len(self.data) != TAG_BYTES[self.profile]:
            raise ValueError("tag length does not match profile")


def prf(key: SymKey, data: bytes, profile: Profile | str = Profile.V2X) -> MacTag:
    """Keyed pseudorandom function (HMAC-SHA256), truncated per profile."""
    profile = Profile(profile)
    COUNTERS.bump("prf")
    full = _hmac.new(key.data, data, hashlib.sha256).digest()
    return MacTag(full[: TAG_BYTES[profile]], profile)


def prf_verify(key: SymKey, data: bytes, tag: bytes, profile: Profile | str = Profile.V2X) -> bool:
    return _hmac.compare_digest(prf(key, data, profile).data, tag)


def hash_tag(data: bytes, profile: Profile | str = Profile.V2X) -> MacTag:
    """Unkeyed digest, used where the protocol binds plaintext to ciphertext."""
    profile = Profile(profile)
    COUNTERS.bump("prf")
    full = hashlib.sha256(b"cavsec-hash" + data).digest()
    return MacTag(full[: TAG_BYTES[profile]], profile)


def _nonce12(nonce: bytes) -> bytes:
    return hashlib.sha256(b"cavsec-nonce" + nonce).digest()[:12]


def sym_encrypt(key: SymKey, plaintext: bytes, nonce: bytes) -> bytes:
    """AEAD encryption; (key, nonce) pairs must be unique per call."""
    COUNTERS.bump("sym")
    return AESGCM(key.data).encrypt(_nonce12(nonce), plaintext, None)


def sym_decrypt(key: SymKey, ciphertext: bytes, nonce: bytes) -> bytes:
    COUNTERS.bump("sym")
    try:
        return AESGCM(key.data).decrypt(_nonce12(nonce), ciphertext, None)
    except InvalidTag as e:
        raise IntegrityError("symmetric integrity check failed") from e


# ---------------------------------------------------------------------------
# key derivation
# ---------------------------------------------------------------------------

# registry of derivation contexts; one tag per call site
KDF_CONTEXTS = {
    "data-key": "data-sharing key derived from an attribute-encrypted group element",
    "session-key": "in-vehicle session key derived from the preliminary handshake",
    "pid-mask": "pseudo-identity masking stream",
    "verid-mask": "anonymity-key masking stream for the verification identifier",
}


def _expand(ikm: bytes, context: str, n: int) -> bytes:
    out = b""
    block = b""
    i = 0
    while len(out) < n:
        block = hashlib.sha256(block + b"cavsec-kdf" + context.encode() + ikm + bytes([i])).digest()
        out += block
        i += 1
    return out[:n]


def kdf(material: GroupElement | bytes, context: str, role: KeyRole = KeyRole.DATA) -> SymKey:
    """Derive a role-sized key from a group element or raw bytes.

    Deterministic and context-separated; counted as a symmetric operation.
    """
    if context not in KDF_CONTEXTS:
        raise ValueError(f"unregistered kdf context {context!r}")
    COUNTERS.bump("sym")
    ikm = material.encode() if isinstance(material, GroupElement) else material
    return SymKey(_expand(ikm, context, KEY_BYTES[role]), role)


def mask_bytes(data: bytes, material: GroupElement | bytes, context: str) -> bytes:
    """XOR ``data`` with a hash stream of the material, expanded to length.

    Involutive: applying the same mask twice recovers the input.  Counts one
    prf call (the stream is one digest evaluation per block).
    """
    if context not in KDF_CONTEXTS:
        raise ValueError(f"unregistered kdf context {context!r}")
    COUNTERS.bump("prf")
    ikm = material.encode() if isinstance(material, GroupElement) else material
    stream = _expand(ikm, context, len(data))
    return bytes(a ^ b for a, b in zip(data, stream))
