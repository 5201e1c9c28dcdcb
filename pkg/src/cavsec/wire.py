"""Wire-message schemas and canonical serialization.

Each protocol step has a fixed field list; serialization is fixed-width for
group elements, scalars and integers, and length-prefixed for byte strings.
Parsing is the exact inverse, so transcripts are stable and tamper tests
can flip a single field and re-deliver.

The same helpers cover inner envelopes (the plaintext laid inside a
symmetric ciphertext), which are packed as length-prefixed items in a fixed
order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .abe import AbeCiphertext, PartialCiphertext, ciphertext_from_bytes, ciphertext_to_bytes, partial_from_bytes, partial_to_bytes
from .group import GroupElement, GroupParams, Scalar, decode_element, decode_scalar
from .ibs import IbsSignature, signature_from_bytes, signature_to_bytes
from .tokens import UserToken, user_token_from_bytes, user_token_to_bytes


class WireError(ValueError):
    """Malformed frame: bad tag, bad length, or non-member field value."""


# field name -> codec; schemas below reference these by name
def _enc_bytes(v: bytes, params) -> bytes:
    return len(v).to_bytes(4, "big") + v


def _enc_u8(v: int, params) -> bytes:
    return v.to_bytes(1, "big")


def _enc_u16(v: int, params) -> bytes:
    return v.to_bytes(2, "big")


def _enc_u64(v: int, params) -> bytes:
    return v.to_bytes(8, "big")


_CODECS = {
    "bytes": (_enc_bytes, None),
    "u8": (_enc_u8, 1),
    "u16": (_enc_u16, 2),
    "u64": (_enc_u64, 8),
    "elem": (lambda v, p: v.encode(), None),
    "scalar": (lambda v, p: v.encode(), None),
    "abe_ct": (lambda v, p: _enc_bytes(ciphertext_to_bytes(v), p), None),
    "mo": (lambda v, p: _enc_bytes(partial_to_bytes(v), p), None),
    "sig": (lambda v, p: _enc_bytes(signature_to_bytes(v, p), p), None),
    "user_token": (lambda v, p: user_token_to_bytes(v), None),
}


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise WireError("truncated frame")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def done(self) -> None:
        if self.off != len(self.data):
            raise WireError("trailing bytes after last field")


def _read_field(r: _Reader, ftype: str, params: GroupParams):
    if ftype == "bytes":
        n = int.from_bytes(r.take(4), "big")
        return r.take(n)
    if ftype == "u8":
        return r.take(1)[0]
    if ftype == "u16":
        return int.from_bytes(r.take(2), "big")
    if ftype == "u64":
        return int.from_bytes(r.take(8), "big")
    try:
        if ftype == "elem":
            return decode_element(r.take(params.pbytes), params)
        if ftype == "scalar":
            return decode_scalar(r.take(params.qbytes), params)
        if ftype == "abe_ct":
            n = int.from_bytes(r.take(4), "big")
            return ciphertext_from_bytes(r.take(n), params)
        if ftype == "mo":
            n = int.from_bytes(r.take(4), "big")
            return partial_from_bytes(r.take(n), params)
        if ftype == "sig":
            n = int.from_bytes(r.take(4), "big")
            return signature_from_bytes(r.take(n), params)
        if ftype == "user_token":
            w = 3 * params.pbytes + 16 + params.qbytes
            return user_token_from_bytes(r.take(w), params)
    except WireError:
        raise
    except ValueError as e:
        raise WireError(str(e)) from e
    raise WireError(f"unknown field type {ftype}")


# (phase, step) -> ordered field schema
SCHEMAS: dict[tuple[int, int], tuple[tuple[str, str], ...]] = {
    # initial authentication and preliminary
    (2, 1): (("alpha_pub", "elem"), ("pid", "bytes"), ("c1", "bytes"),
             ("n1", "u64"), ("sigma1", "bytes")),
    (2, 2): (("c2", "bytes"), ("n2", "u64"), ("sigma2", "bytes")),
    (2, 3): (("ecu_id", "bytes"), ("sigma1j", "bytes"), ("n1j", "u64"),
             ("req_info", "bytes")),
    (2, 4): (("ecu_id", "bytes"), ("c1j", "bytes"), ("n2j", "u64"),
             ("sigma2j", "bytes")),
    (2, 5): (("ecu_id", "bytes"), ("c2j", "bytes"), ("sigma3j", "bytes")),
    # uplink data sharing
    (3, 1): (("c1j", "bytes"), ("sigma1j", "bytes"), ("n1j", "u64")),
    (3, 2): (("c2j", "bytes"), ("sigma2j", "bytes"), ("n2j", "u64")),
    (3, 3): (("ct", "abe_ct"), ("cm", "bytes"), ("sigma_m", "bytes"), ("nm", "u64")),
    (3, 4): (("pid", "bytes"), ("ct", "abe_ct"), ("cm", "bytes"),
             ("sigma_m", "bytes"), ("nm", "u64"), ("token", "user_token")),
    # downlink data sharing (steps 11..12 to keep tags distinct from uplink)
    (3, 11): (("sender_id", "bytes"), ("ct", "abe_ct"), ("cm", "bytes"),
              ("sigma_m", "bytes"), ("nm", "u64"), ("token", "user_token")),
    (3, 12): (("c3j", "bytes"), ("sigma3j", "bytes"), ("n3j", "u64")),
    # encryption-material update
    (4, 1): (("ecu_id", "bytes"), ("cav", "bytes"), ("count", "u16"),
             ("n1", "u64"), ("mac", "bytes")),
    (4, 2): (("ecu_id", "bytes"), ("c", "bytes"), ("n2", "u64"), ("mac", "bytes")),
}


@dataclass(frozen=True)
class WireMessage:
    phase: int
    step: int
    sender: str
    receiver: str
    fields: dict

    def __post_init__(self):
        schema = SCHEMAS.get((self.phase, self.step))
        if schema is None:
            raise WireError(f"no schema for phase {self.phase} step {self.step}")
        want = [name for name, _ in schema]
        if list(self.fields.keys()) != want:
            raise WireError(f"fields {list(self.fields)} do not match schema {want}")

    def with_field(self, name: str, value) -> "WireMessage":
        fields = dict(self.fields)
        if name not in fields:
            raise WireError(f"no field {name}")
        fields[name] = value
        return WireMessage(self.phase, self.step, self.sender, self.receiver, fields)


def serialize_message(msg: WireMessage, params: GroupParams) -> bytes:
    out = bytearray()
    out += msg.phase.to_bytes(1, "big")
    out += msg.step.to_bytes(1, "big")
    for addr in (msg.sender, msg.receiver):
        raw = addr.encode()
        out += len(raw).to_bytes(2, "big") + raw
    for name, ftype in SCHEMAS[(msg.phase, msg.step)]:
        enc, _ = _CODECS[ftype]
        out += enc(msg.fields[name], params)
    return bytes(out)


def parse_message(data: bytes, params: GroupParams) -> WireMessage:
    r = _Reader(data)
    phase, step = r.take(1)[0], r.take(1)[0]
    schema = SCHEMAS.get((phase, step))
    if schema is None:
        raise WireError(f"no schema for phase {phase} step {step}")
    addrs = []
    for _ in range(2):
        n = int.from_bytes(r.take(2), "big")
        addrs.append(r.take(n).decode())
    fields = {name: _read_field(r, ftype, params) for name, ftype in schema}
    r.done()
    return WireMessage(phase, step, addrs[0], addrs[1], fields)


# ---------------------------------------------------------------------------
# inner envelopes: length-prefixed items in fixed order
# ---------------------------------------------------------------------------

def pack_items(*items: bytes) -> bytes:
    out = bytearray()
    for item in items:
        out += len(item).to_bytes(4, "big") + item
    return bytes(out)


def unpack_items(data: bytes, count: int) -> list[bytes]:
    r = _Reader(data)
    items = []
    for _ in range(count):
        n = int.from_bytes(r.take(4), "big")
        items.append(r.take(n))
    r.done()
    return items


def tamper_message(msg: WireMessage, field_name: str | None = None) -> WireMessage:
    """Return a copy with one field minimally perturbed.

    The result still parses (group members stay group members), so the
    corruption surfaces at the first verifying step rather than as a framing
    error.
    """
    schema = SCHEMAS[(msg.phase, msg.step)]
    if field_name is None:
        field_name = next(
            (n for n, t in schema if t == "bytes" and msg.fields[n]), schema[0][0]
        )
    value = msg.fields[field_name]
    if isinstance(value, bytes):
        flipped = value[:-1] + bytes([value[-1] ^ 1]) if value else b"\x01"
    elif isinstance(value, int):
        flipped = value ^ 1
    elif isinstance(value, GroupElement):
        p = value.params
        flipped = GroupElement(value.value * p.g % p.p, p)
    elif isinstance(value, Scalar):
        flipped = Scalar((value.value + 1) % value.q, value.q)
    elif isinstance(value, AbeCiphertext):
        b0 = value.b[0]
        p = b0.params
        bumped = GroupElement(b0.value * p.g % p.p, p)
        flipped = AbeCiphertext(a=value.a, b=(bumped,) + value.b[1:], d=value.d)
    elif isinstance(value, UserToken):
        z = value.z_sum
        flipped = UserToken(
            u_pub=value.u_pub, t_exp=value.t_exp,
            z_sum=Scalar((z.value + 1) % z.q, z.q),
            w_pub=value.w_pub, b=value.b, t_cur=value.t_cur,
        )
    elif isinstance(value, IbsSignature):
        raise WireError("tamper signatures inside their envelope instead")
    else:
        raise WireError(f"cannot tamper field of type {type(value).__name__}")
    return msg.with_field(field_name, flipped)


def transcript_line(t_ns: int, msg: WireMessage, params: GroupParams) -> str:
    """One diff-friendly line per message: time, tag, route, hex fields."""
    parts = [f"t={t_ns}", f"p{msg.phase}.s{msg.step}", f"{msg.sender}->{msg.receiver}"]
    for name, ftype in SCHEMAS[(msg.phase, msg.step)]:
        enc, _ = _CODECS[ftype]
        parts.append(f"{name}={enc(msg.fields[name], params).hex()}")
    return " ".join(parts)
