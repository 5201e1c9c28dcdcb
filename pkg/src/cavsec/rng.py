"""Deterministic, seedable randomness source.

All randomized operations take an explicit source so tests can pin draws and
concurrent benchmark shards can use independent streams.  The source is a
SHA-256 counter-mode DRBG: platform-independent and reproducible from the
seed.

Subgroup-element sampling raises the generator with raw ``pow``: the cost is
charged to the randomness source, not to any algorithm's operation budget
(sampling is not a counted group operation).
"""

from __future__ import annotations

import hashlib

from .group import GroupElement, GroupParams, Scalar


class Drbg:
    """SHA-256 counter-mode deterministic random bit generator."""

    def __init__(self, seed: int | bytes | str, label: bytes = b"") -> None:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        self._key = hashlib.sha256(b"cavsec-drbg" + seed + b"/" + label).digest()
        self._counter = 0
        self._buffer = b""

    def child(self, label: str | bytes) -> "Drbg":
        """Independent stream derived from this one's key and a label."""
        if isinstance(label, str):
            label = label.encode()
        return Drbg(self._key, label)

    def bytes(self, n: int) -> bytes:
        while len(self._buffer) < n:
            block = hashlib.sha256(self._key + self._counter.to_bytes(8, "big")).digest()
            self._counter += 1
            self._buffer += block
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection sampling."""
        nbytes = (bound.bit_length() + 7) // 8 + 8
        while True:
            v = int.from_bytes(self.bytes(nbytes), "big")
            limit = (1 << (8 * nbytes)) - (1 << (8 * nbytes)) % bound
            if v < limit:
                return v % bound

    def nonce(self) -> int:
        return int.from_bytes(self.bytes(8), "big")

    # -- group-aware draws --------------------------------------------------

    def scalar(self, params: GroupParams) -> Scalar:
        return Scalar(self.below(params.q), params.q)

    def scalar_nonzero(self, params: GroupParams) -> Scalar:
        return Scalar(1 + self.below(params.q - 1), params.q)

    def element(self, params: GroupParams) -> GroupElement:
        """Uniform subgroup member (includes the identity)."""
        rho = self.below(params.q)
        return GroupElement(pow(params.g, rho, params.p), params)

    def element_nonidentity(self, params: GroupParams) -> GroupElement:
        rho = 1 + self.below(params.q - 1)
        return GroupElement(pow(params.g, rho, params.p), params)


class ScriptedRng:
    """Test helper: serve scripted values first, then fall back to a Drbg.

    Scripted scalars/elements may be given as plain ints; they are wrapped
    on the fly for whichever params the draw is made against.
    """

    def __init__(self, scalars=(), elements=(), fallback: Drbg | None = None):
        self._scalars = list(scalars)
        self._elements = list(elements)
        self._fallback = fallback if fallback is not None else Drbg(0, b"scripted-fallback")

    def bytes(self, n: int) -> bytes:
        return self._fallback.bytes(n)

    def nonce(self) -> int:
        return self._fallback.nonce()

    def below(self, bound: int) -> int:
        return self._fallback.below(bound)

    def child(self, label):
        return self._fallback.child(label)

    def _pop_scalar(self, params: GroupParams) -> Scalar | None:
        if self._scalars:
            v = self._scalars.pop(0)
            return v if isinstance(v, Scalar) else Scalar(v % params.q, params.q)
        return None

    def scalar(self, params: GroupParams) -> Scalar:
        return self._pop_scalar(params) or self._fallback.scalar(params)

    def scalar_nonzero(self, params: GroupParams) -> Scalar:
        got = self._pop_scalar(params)
        if got is not None:
            if got.is_zero():
                raise ValueError("scripted zero where nonzero scalar required")
            return got
        return self._fallback.scalar_nonzero(params)

    def element(self, params: GroupParams) -> GroupElement:
        if self._elements:
            v = self._elements.pop(0)
            return v if isinstance(v, GroupElement) else GroupElement(v % params.p, params)
        return self._fallback.element(params)

    def element_nonidentity(self, params: GroupParams) -> GroupElement:
        if self._elements:
            return self.element(params)
        return self._fallback.element_nonidentity(params)
