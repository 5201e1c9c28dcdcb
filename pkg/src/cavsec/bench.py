"""Primitive benchmarks and operation-count audits.

Benchmarks sweep the attribute count and report mean wall-clock time plus
the operation counters for every algorithm of both cryptosystems.  Counters
are captured from a single call, so they are exact integers independent of
timing noise.  CSV columns: op,role,n,mean_us,exp,mul,prf,sym,iters,seed.

The audit drives one canonical uplink exchange directly (no simulator) and
checks the per-side counters against the protocol's advertised cost
formulas:

  sender   (N_s + 3) multiplications, 3 hashes, 4 symmetric ops, 0 exponent
           operations
  receiver 11 exponent operations, (N_r + 8) multiplications, 6 hashes,
           2 symmetric ops

The exponent column aggregates exponentiations and group inversions (an
inversion costs one exponentiation-sized operation; decryption's final
division is the only inversion on these paths).  The canonical exchange
uses a single-required-attribute policy: the message-tuple correcting
factor is then free, which is the regime the sender formula describes.
Multi-required policies add one multiplication per extra required slot plus
one inversion.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

from . import abe, ibs
from .abe import Policy
from .counters import COUNTERS, CounterSnapshot
from .group import generate_params
from .rng import Drbg
from .scenario import ScenarioConfig, authenticate_all, build_fleet, default_scenario
from .vectors import ibs_batch_record

CSV_COLUMNS = ("op", "role", "n", "mean_us", "exp", "mul", "prf", "sym", "iters", "seed")


@dataclass
class BenchRow:
    op: str
    role: str
    n: int
    mean_us: float
    exp: int
    mul: int
    prf: int
    sym: int
    iters: int
    seed: int

    def as_csv(self) -> list:
        return [self.op, self.role, self.n, f"{self.mean_us:.3f}",
                self.exp, self.mul, self.prf, self.sym, self.iters, self.seed]


@dataclass
class BenchReport:
    rows: list[BenchRow]
    seed: int
    profile: str
    iters: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow(row.as_csv())
        return buf.getvalue()

    def row(self, op: str, n: int) -> BenchRow:
        for r in self.rows:
            if r.op == op and r.n == n:
                return r
        raise KeyError(f"no row for {op} at n={n}")


def _timed(fn, iters: int) -> tuple[float, CounterSnapshot]:
    """Mean wall-clock microseconds over iters calls plus one-call counters."""
    before = COUNTERS.snapshot()
    fn()
    delta = COUNTERS.since(before)
    t0 = time.perf_counter_ns()
    for _ in range(iters):
        fn()
    mean_us = (time.perf_counter_ns() - t0) / iters / 1000.0
    return mean_us, delta


def bench_primitives(
    attrs=(4, 8, 16, 32),
    iters: int = 10_000,
    profile: str = "test",
    seed: int = 0,
    ops: set[str] | None = None,
    batch_file: str | None = None,
    batch_size: int = 10,
) -> BenchReport:
    """Benchmark every algorithm of both cryptosystems over the sweep."""
    params = generate_params(profile, seed)
    rng = Drbg(seed, b"bench")
    rows: list[BenchRow] = []

    def want(op: str) -> bool:
        return ops is None or op in ops

    def add(op: str, role: str, n: int, fn) -> None:
        if not want(op):
            return
        mean_us, d = _timed(fn, iters)
        rows.append(BenchRow(op, role, n, mean_us, d.exp, d.mul, d.prf, d.sym,
                             iters, seed))

    for n in attrs:
        mk = abe.abe_setup(params, n, rng)
        all_attrs = frozenset(range(1, n + 1))
        key = abe.abe_keygen(mk, b"bench", all_attrs, rng)  # receiver holds n attrs
        policy = Policy.from_sets(n, [1])
        m = rng.element(params)
        ct = abe.abe_encrypt(mk.mpk, policy, m, rng)
        v_a, v_b = rng.scalar_nonzero(params), rng.scalar_nonzero(params)
        mo_a = abe.abe_out_encrypt1(mk.mpk, v_a)
        mo_b = abe.abe_out_encrypt1(mk.mpk, v_b)
        pc = abe.abe_out_encrypt2(mk.mpk, mo_a, mo_b)

        add("abe_setup", "cn", n, lambda: abe.abe_setup(params, n, rng))
        add("abe_keygen", "cn", n, lambda: abe.abe_keygen(mk, b"k", all_attrs, rng))
        add("abe_encrypt", "rsu", n, lambda: abe.abe_encrypt(mk.mpk, policy, m, rng))
        add("abe_out_encrypt1", "obu", n, lambda: abe.abe_out_encrypt1(mk.mpk, v_a))
        add("abe_out_encrypt2", "ecu", n, lambda: abe.abe_out_encrypt2(mk.mpk, mo_a, mo_b))
        add("abe_select_policy", "ecu", n, lambda: abe.abe_select_policy(pc, policy, m, rng))
        add("abe_decrypt", "rsu", n, lambda: abe.abe_decrypt(ct, key))

    # signature algorithms do not depend on the attribute count
    n0 = max(attrs)
    ik = ibs.ibs_setup(params, rng)
    skey = ibs.ibs_keygen(ik, b"signer", rng)
    msg = rng.bytes(48)
    state = ibs.ibs_offline_sign(ik.mspk, rng)
    x_t = rng.scalar_nonzero(params)
    y_prime = ibs.ibs_out_sign1(state.y_pub, x_t)
    direct_sig = ibs.ibs_sign(ik.mspk, skey, msg, rng)
    out_sig = ibs.ibs_out_sign2(ik.mspk, skey, state, x_t, y_prime, msg, rng)

    add("ibs_setup", "cn", n0, lambda: ibs.ibs_setup(params, rng))
    add("ibs_keygen", "cn", n0, lambda: ibs.ibs_keygen(ik, b"s", rng))
    add("ibs_sign", "rsu", n0, lambda: ibs.ibs_sign(ik.mspk, skey, msg, rng))
    add("ibs_offline_sign", "ecu", n0, lambda: ibs.ibs_offline_sign(ik.mspk, rng))
    add("ibs_out_sign1", "obu", n0, lambda: ibs.ibs_out_sign1(state.y_pub, x_t))
    add("ibs_out_sign2", "ecu", n0,
        lambda: ibs.ibs_out_sign2(ik.mspk, skey, state, x_t, y_prime, msg, rng))
    add("ibs_verify_direct", "rsu", n0,
        lambda: ibs.ibs_verify(ik.mspk, b"signer", direct_sig, msg))
    add("ibs_verify_outsourced", "rsu", n0,
        lambda: ibs.ibs_verify(ik.mspk, b"signer", out_sig, msg))

    batch = []
    for i in range(batch_size):
        bm = rng.bytes(32)
        batch.append((b"signer", ibs.ibs_sign(ik.mspk, skey, bm, rng), bm))
    add("ibs_batch_verify", "rsu", n0, lambda: ibs.ibs_batch_verify(ik.mspk, batch))
    if batch_file:
        from .vectors import write_records

        write_records(batch_file, (ibs_batch_record(i, m_, s, params)
                                   for i, s, m_ in batch))

    return BenchReport(rows=rows, seed=seed, profile=profile, iters=iters)


# ---------------------------------------------------------------------------
# cost audit against the protocol's advertised formulas
# ---------------------------------------------------------------------------

@dataclass
class AuditRow:
    side: str
    term: str
    expected: int
    got: int

    @property
    def ok(self) -> bool:
        return self.expected == self.got


@dataclass
class AuditReport:
    n_s: int
    n_r: int
    rows: list[AuditRow]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def render(self) -> str:
        lines = [f"cost audit: N_s={self.n_s} N_r={self.n_r}"]
        for r in self.rows:
            mark = "ok  " if r.ok else "FAIL"
            lines.append(f"  {mark} {r.side:8s} {r.term:5s} expected={r.expected} got={r.got}")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def _exchange_counters(cfg: ScenarioConfig):
    """Drive one uplink exchange directly and capture per-side deltas."""
    fleet = build_fleet(cfg)
    obu = next(iter(fleet.obus.values()))
    ecu = fleet.ecus[sorted(fleet.ecus)[1]]  # index 1: plain ECU profile
    rsu = next(v for v in fleet.receivers.values() if v.role == "rsu")
    authenticate_all(fleet)

    payload = b"audit-exchange"
    before = COUNTERS.snapshot()
    m1 = ecu.uplink_init(1, payload, rsu.name, obu.name)
    after_init = COUNTERS.since(before)
    m2 = obu.handle(m1)[0]
    pre_finish = COUNTERS.snapshot()
    m3 = ecu.handle(m2)[0]
    sender = after_init + COUNTERS.since(pre_finish)
    m4 = obu.handle(m3)[0]
    pre_rx = COUNTERS.snapshot()
    rsu.handle(m4)
    receiver = COUNTERS.since(pre_rx)
    assert rsu.delivered and rsu.delivered[-1][1] == payload
    return sender, receiver


def audit_costs(n_s: int = 16, n_r: int = 8, seed: int = 5) -> AuditReport:
    """Exact integer check of one exchange against the cost formulas."""
    cfg = default_scenario(
        seed=seed,
        n_attrs=n_s,
        message_types=1,
        em_inventory=1,
        policies={"1": {"required": [1]}},
        receivers=[
            {"name": "rsu1", "role": "rsu", "attrs": list(range(1, n_r + 1))},
            {"name": "oem1", "role": "oem", "attrs": [1]},
        ],
        uplinks=[],
        downlinks=[],
    )
    sender, receiver = _exchange_counters(cfg)
    rows = [
        AuditRow("sender", "T_EXP", 0, sender.exp + sender.inv),
        AuditRow("sender", "T_M", n_s + 3, sender.mul),
        AuditRow("sender", "T_H", 3, sender.prf),
        AuditRow("sender", "T_ES", 4, sender.sym),
        AuditRow("receiver", "T_EXP", 11, receiver.exp + receiver.inv),
        AuditRow("receiver", "T_M", n_r + 8, receiver.mul),
        AuditRow("receiver", "T_H", 6, receiver.prf),
        AuditRow("receiver", "T_ES", 2, receiver.sym),
    ]
    return AuditReport(n_s=n_s, n_r=n_r, rows=rows)
