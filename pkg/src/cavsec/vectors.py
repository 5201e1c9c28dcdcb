"""Line-delimited test-vector records.

One JSON object per line; every binary field is lowercase hex.  The format
is stable: records carry a ``kind`` tag and the fields listed here, nothing
else.

  abe-ciphertext   {kind, n, policy, m, ct}
  abe-user-key     {kind, n, attrs, key}
  ibs-batch-item   {kind, id, msg, sig}

Readers reject unknown kinds rather than guessing.
"""

from __future__ import annotations

import json

from .abe import (
    AbeCiphertext,
    AbeUserKey,
    ciphertext_from_bytes,
    ciphertext_to_bytes,
    user_key_from_bytes,
    user_key_to_bytes,
)
from .group import GroupElement, GroupParams
from .ibs import IbsSignature, signature_from_bytes, signature_to_bytes


class VectorError(ValueError):
    pass


def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def abe_ciphertext_record(policy, m: GroupElement, ct: AbeCiphertext) -> dict:
    return {
        "kind": "abe-ciphertext",
        "n": ct.n,
        "policy": list(policy.t),
        "m": m.encode().hex(),
        "ct": ciphertext_to_bytes(ct).hex(),
    }


def abe_user_key_record(key: AbeUserKey, params: GroupParams) -> dict:
    return {
        "kind": "abe-user-key",
        "n": len(key.attrs),
        "attrs": sorted(key.attrs),
        "key": user_key_to_bytes(key, params).hex(),
    }


def ibs_batch_record(identity: bytes, msg: bytes, sig: IbsSignature,
                     params: GroupParams) -> dict:
    return {
        "kind": "ibs-batch-item",
        "id": identity.hex(),
        "msg": msg.hex(),
        "sig": signature_to_bytes(sig, params).hex(),
    }


def write_records(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(_dump_line(rec) + "\n")


def read_records(path: str, params: GroupParams) -> list:
    """Parse records back into live objects, keyed by kind."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            kind = raw.get("kind")
            if kind == "abe-ciphertext":
                out.append({
                    "kind": kind,
                    "policy": tuple(raw["policy"]),
                    "m": bytes.fromhex(raw["m"]),
                    "ct": ciphertext_from_bytes(bytes.fromhex(raw["ct"]), params),
                })
            elif kind == "abe-user-key":
                out.append({
                    "kind": kind,
                    "key": user_key_from_bytes(bytes.fromhex(raw["key"]), params),
                })
            elif kind == "ibs-batch-item":
                out.append({
                    "kind": kind,
                    "id": bytes.fromhex(raw["id"]),
                    "msg": bytes.fromhex(raw["msg"]),
                    "sig": signature_from_bytes(bytes.fromhex(raw["sig"]), params),
                })
            else:
                raise VectorError(f"unknown record kind {kind!r}")
    return out
