"""Deterministic in-memory network simulator.

Two channel classes connect the entities: a per-vehicle bus with small
frames, fragmentation and truncated per-frame integrity tags, and a
wide-area link with millisecond latency.  Delivery is FIFO per channel and
takes latency + wire_size/bandwidth; processing time at each entity comes
from the pluggable cost model, so a whole scenario is reproducible
bit-for-bit from (config, seed) in synthetic mode.

Adversary taps observe, drop, replay or inject traffic at the channel
level; eavesdrop logs are byte-exact copies of the frames on the wire.

The event queue is single-threaded and authoritative; entities are only
ever invoked from it, in (time, sequence) order.
"""

from __future__ import annotations

import hashlib
import heapq
import time as _time
from dataclasses import dataclass, field

from .counters import COUNTERS, CounterSnapshot
from .costmodel import CostMeter, CostTable, meter
from .protocol import Entity, ProtocolError
from .wire import WireMessage, parse_message, serialize_message, tamper_message, transcript_line

FRAG_HEADER = 4   # 2-byte message id, 1-byte index, 1-byte total
FRAME_MAC = 16    # truncated per-frame tag


class FrameError(ValueError):
    pass


def _frame_tag(header: bytes, chunk: bytes) -> bytes:
    # framing-layer integrity only; authenticity lives in the protocol MACs
    return hashlib.sha256(b"cavsec-frame" + header + chunk).digest()[:FRAME_MAC]


def fragment(msg_id: int, data: bytes, max_payload: int) -> list[bytes]:
    """Split into frames of at most max_payload data bytes, each carrying a
    4-byte header and a 16-byte truncated tag."""
    chunks = [data[i:i + max_payload] for i in range(0, len(data), max_payload)] or [b""]
    total = len(chunks)
    if total > 255:
        raise FrameError("message too large for the framing layer")
    frames = []
    for idx, chunk in enumerate(chunks):
        header = msg_id.to_bytes(2, "big") + bytes([idx, total])
        frames.append(header + chunk + _frame_tag(header, chunk))
    return frames


def reassemble(frames: list[bytes]) -> tuple[int, bytes]:
    if not frames:
        raise FrameError("no frames")
    parts: dict[int, bytes] = {}
    msg_id = int.from_bytes(frames[0][:2], "big")
    total = frames[0][3]
    for frame in frames:
        header, rest = frame[:FRAG_HEADER], frame[FRAG_HEADER:]
        chunk, tag = rest[:-FRAME_MAC], rest[-FRAME_MAC:]
        if int.from_bytes(header[:2], "big") != msg_id or header[3] != total:
            raise FrameError("frame belongs to a different message")
        if tag != _frame_tag(header, chunk):
            raise FrameError("frame integrity tag mismatch")
        parts[header[2]] = chunk
    if set(parts) != set(range(total)):
        raise FrameError("missing fragments")
    return msg_id, b"".join(parts[i] for i in range(total))


@dataclass
class Channel:
    name: str
    klass: str                      # "in_vehicle" | "v2x"
    latency_ns: int
    bandwidth_bps: int
    max_frame_payload: int | None = None  # fragmentation threshold (bus only)
    free_at_ns: int = 0

    def wire_size(self, data: bytes) -> int:
        if self.max_frame_payload:
            nframes = max(1, -(-len(data) // self.max_frame_payload))
            return len(data) + nframes * (FRAG_HEADER + FRAME_MAC)
        return len(data) + FRAG_HEADER  # single header on the wide-area link

    def tx_ns(self, wire_size: int) -> int:
        return (wire_size * 8 * 1_000_000_000 + self.bandwidth_bps - 1) // self.bandwidth_bps


@dataclass
class TapRecord:
    t_ns: int
    channel: str
    sender: str
    receiver: str
    data: bytes
    frames: tuple[bytes, ...]


@dataclass
class AdversaryTap:
    """Channel-level attacker hook.

    eavesdrop: record traffic without altering delivery.
    drop: suppress frames matching the predicate (logged).
    tamper: flip a bit in one field of matching frames before delivery.
    Replays and injections are explicit scheduled calls on the simulator.
    """

    channel: str             # channel name, or "*" for all channels
    mode: str = "eavesdrop"  # "eavesdrop" | "drop" | "tamper"
    match: object = None     # predicate(WireMessage) -> bool; None matches all
    field_name: str | None = None  # tamper target; default: first byte field
    limit: int | None = None       # max activations for drop/tamper
    log: list[TapRecord] = field(default_factory=list)

    def matches(self, channel: str, msg: WireMessage) -> bool:
        if self.channel not in ("*", channel):
            return False
        if self.limit is not None and self.limit <= 0:
            return False
        return self.match is None or self.match(msg)

    def consume(self) -> None:
        if self.limit is not None:
            self.limit -= 1


@dataclass
class Failure:
    t_ns: int
    entity: str
    code: str
    phase: int
    step: int
    detail: str


class VirtualClock:
    """Integer-nanosecond clock; measure() charges an operation's cost in
    whichever mode the owning simulator runs."""

    def __init__(self, start_s: int = 1_700_000_000) -> None:
        self.now_ns = start_s * 1_000_000_000

    def now(self) -> int:
        return self.now_ns

    def now_s(self) -> int:
        return self.now_ns // 1_000_000_000

    def advance(self, d_ns: int) -> None:
        self.now_ns += d_ns


class Simulator:
    def __init__(
        self,
        entities: dict[str, Entity],
        *,
        cost_mode: str = "synthetic",
        cost_table: CostTable | None = None,
        start_s: int = 1_700_000_000,
        strict: bool = False,
    ) -> None:
        self.entities = entities
        self.cost_mode = cost_mode
        self.cost_table = cost_table or CostTable.default()
        self.clock = VirtualClock(start_s)
        self.strict = strict
        self.channels: dict[str, Channel] = {}
        self._membership: dict[str, set[str]] = {}   # channel -> entity names
        self._gateway: dict[str, str] = {}           # entity -> its gateway
        self._queue: list = []
        self._seq = 0
        self.entity_free: dict[str, int] = {}
        self.entity_ops: dict[str, CounterSnapshot] = {}
        self.transcript: list[str] = []
        self.failures: list[Failure] = []
        self.taps: list[AdversaryTap] = []
        self.last_activity_ns = self.clock.now_ns
        for name, ent in entities.items():
            ent.clock = self.clock.now_s
            self.entity_free[name] = self.clock.now_ns
            self.entity_ops[name] = CounterSnapshot()

    # -- topology -------------------------------------------------------------

    def add_channel(self, channel: Channel, members: set[str]) -> None:
        channel.free_at_ns = self.clock.now_ns
        self.channels[channel.name] = channel
        self._membership[channel.name] = set(members)

    def set_gateway(self, entity: str, gateway: str) -> None:
        self._gateway[entity] = gateway

    def add_tap(self, tap: AdversaryTap) -> None:
        self.taps.append(tap)

    def _route(self, sender: str, receiver: str) -> tuple[Channel, str]:
        """Channel and next hop for one leg; the receiver field stays the
        final destination and gateways re-emit anything not addressed to
        them."""
        shared = [
            name for name, members in sorted(self._membership.items())
            if sender in members and receiver in members
        ]
        if shared:
            return self.channels[shared[0]], receiver
        for hop in (self._gateway.get(receiver), self._gateway.get(sender)):
            if hop is not None and hop != sender:
                return self._route(sender, hop)[0], hop
        raise FrameError(f"no route from {sender} to {receiver}")

    # -- scheduling -------------------------------------------------------------

    def _push(self, t_ns: int, kind: str, payload) -> None:
        heapq.heappush(self._queue, (t_ns, self._seq, kind, payload))
        self._seq += 1

    def send(self, msg: WireMessage, at_ns: int | None = None, via: str | None = None) -> None:
        """Serialize, frame, occupy the channel FIFO and schedule delivery.

        ``via`` is the emitting hop; a gateway relays messages whose sender
        field names the original source.
        """
        t = self.clock.now_ns if at_ns is None else at_ns
        via = via or msg.sender
        channel, hop = self._route(via, msg.receiver)
        params = self.entities[via].params

        for tap in self.taps:
            if tap.mode == "tamper" and tap.matches(channel.name, msg):
                tap.consume()
                msg = tamper_message(msg, tap.field_name)

        data = serialize_message(msg, params)
        frames = (
            tuple(fragment(self._seq & 0xFFFF, data, channel.max_frame_payload))
            if channel.max_frame_payload
            else (data,)
        )
        wire = channel.wire_size(data)
        tx_start = max(t, channel.free_at_ns)
        tx_end = tx_start + channel.tx_ns(wire)
        channel.free_at_ns = tx_end
        arrival = tx_end + channel.latency_ns

        self.transcript.append(transcript_line(t, msg, params))
        dropped = False
        for tap in self.taps:
            if tap.mode == "tamper" or not tap.matches(channel.name, msg):
                continue
            tap.log.append(TapRecord(t, channel.name, msg.sender, msg.receiver, data, frames))
            if tap.mode == "drop":
                tap.consume()
                dropped = True
        if dropped:
            return
        self._push(arrival, "deliver", (hop, data))
        self.last_activity_ns = max(self.last_activity_ns, arrival)

    def call_entity(self, at_ns: int, name: str, fn) -> None:
        """Schedule an entity-originated action (charged like a handler)."""
        self._push(at_ns, "call", (name, fn))

    def replay(self, record: TapRecord, at_ns: int, to: str | None = None) -> None:
        """Re-inject previously recorded wire bytes."""
        self._push(at_ns, "deliver", (to or record.receiver, record.data))

    def inject(self, msg: WireMessage, at_ns: int, to: str | None = None) -> None:
        params = self.entities[msg.receiver].params
        self._push(at_ns, "deliver", (to or msg.receiver, serialize_message(msg, params)))

    # -- execution ---------------------------------------------------------------

    def _charge(self, name: str, fn):
        """Run an entity step, charging processing time per the cost mode."""
        ent = self.entities[name]
        before = COUNTERS.snapshot()
        if self.cost_mode == "measured":
            t0 = _time.perf_counter_ns()
            out = fn()
            cost = _time.perf_counter_ns() - t0
        else:
            m = CostMeter(self.cost_table, getattr(ent, "cost_role", ent.role))
            with meter(m):
                out = fn()
            cost = m.total_ns
        self.entity_ops[name] = self.entity_ops[name] + COUNTERS.since(before)
        return out, cost

    def run_until_idle(self) -> None:
        from .symcrypto import IntegrityError

        while self._queue:
            t, _, kind, payload = heapq.heappop(self._queue)
            self.clock.now_ns = max(self.clock.now_ns, t)
            name = payload[0]
            ent = self.entities.get(name)
            if ent is None:
                continue
            start = max(t, self.entity_free[name])
            self.clock.now_ns = max(self.clock.now_ns, start)
            phase = step = 0
            try:
                if kind == "deliver":
                    msg = parse_message(payload[1], ent.params)
                    phase, step = msg.phase, msg.step
                    out, cost = self._charge(name, lambda m=msg: ent.handle(m))
                else:
                    out, cost = self._charge(name, payload[1])
                    out = out or []
                    if isinstance(out, WireMessage):
                        out = [out]
            except (ProtocolError, ValueError, IntegrityError) as e:
                code = getattr(e, "code", "schema")
                self.failures.append(Failure(start, name, code, phase, step, str(e)))
                if self.strict:
                    raise
                self.entity_free[name] = start
                continue
            end = start + cost
            self.entity_free[name] = end
            self.last_activity_ns = max(self.last_activity_ns, end)
            for m_out in out:
                self.send(m_out, at_ns=end, via=name)

    def transcript_hash(self) -> str:
        return hashlib.sha256("\n".join(self.transcript).encode()).hexdigest()
