"""Operation counters for cost accounting.

Every cryptographic cost claim in this library is made in terms of counted
operations, not wall-clock time.  The buckets are:

  exp  - group exponentiations (mod-p powers performed through the group API)
  mul  - multiplicative operations: group (mod-p) and scalar (mod-q) products
  inv  - group inversions; an inversion costs about one exponentiation, so
         exponent-bucket audits report exp + inv
  prf  - keyed MACs, unkeyed digests and hash-to-scalar evaluations
  sym  - symmetric cipher calls plus key derivations

Sampling performed by a randomness source and serialization-time subgroup
checks are charged to neither bucket; they are not part of any algorithm's
advertised cost.

The counters are process-global and not synchronized: benchmark and audit
runs are single-threaded by contract (concurrent library use is safe, but
concurrent *accounting* is not meaningful and is not attempted).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

FIELDS = ("exp", "mul", "inv", "prf", "sym")


@dataclass(frozen=True)
class CounterSnapshot:
    exp: int = 0
    mul: int = 0
    inv: int = 0
    prf: int = 0
    sym: int = 0

    def __sub__(self, other: "CounterSnapshot") -> "CounterSnapshot":
        return CounterSnapshot(*(getattr(self, f) - getattr(other, f) for f in FIELDS))

    def __add__(self, other: "CounterSnapshot") -> "CounterSnapshot":
        return CounterSnapshot(*(getattr(self, f) + getattr(other, f) for f in FIELDS))

    def as_dict(self) -> dict[str, int]:
        return {f: getattr(self, f) for f in FIELDS}


class OpCounters:
    """Global operation tally with optional per-bucket pausing."""

    def __init__(self) -> None:
        self.enabled = True
        self._paused: set[str] = set()
        self._meter = None  # active CostMeter, if a simulation is charging time
        for f in FIELDS:
            setattr(self, f, 0)

    def bump(self, name: str, k: int = 1) -> None:
        if self._meter is not None and name not in self._paused:
            self._meter.charge_prim(name, k)
        if not self.enabled or name in self._paused:
            return
        setattr(self, name, getattr(self, name) + k)

    def snapshot(self) -> CounterSnapshot:
        return CounterSnapshot(*(getattr(self, f) for f in FIELDS))

    def since(self, snap: CounterSnapshot) -> CounterSnapshot:
        return self.snapshot() - snap

    def reset(self) -> None:
        for f in FIELDS:
            setattr(self, f, 0)

    @contextmanager
    def paused(self, *names: str):
        """Suspend counting for the given buckets within the block.

        Used where an operation's cost is attributed to a different ledger
        row than the caller's (e.g. a hash internal to an algorithm whose
        advertised budget already covers it).
        """
        added = set(names) - self._paused
        self._paused |= added
        try:
            yield self
        finally:
            self._paused -= added

    @contextmanager
    def metered(self, meter):
        prev = self._meter
        self._meter = meter
        try:
            yield meter
        finally:
            self._meter = prev


COUNTERS = OpCounters()
