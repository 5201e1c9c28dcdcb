"""Entity state machines for the four-phase vehicular data-sharing protocol.

Phases:

  1  provisioning: the core network generates master keys, issues per-entity
     credentials and long-term symmetric keys; the manufacturer pre-installs
     single-use encryption materials on every ECU (see scenario.build_fleet).
  2  initial authentication and preliminary: gateway and external nodes
     authenticate to the core network (pseudonymously where applicable) and
     obtain tokens; each ECU then derives a session key with its gateway,
     builds a pseudo-identity and a fresh signing key inside its trust
     module, and precomputes one preliminary ciphertext plus offline signing
     state per message type.
  3  attribute-based data sharing: uplink (ECU -> gateway -> external
     receiver) with outsourced signing and multiplication-only encryption at
     the ECU; downlink (external sender -> gateway -> ECUs) with full
     encryption at the sender and two-exponentiation decryption at the ECU.
  4  encryption-material replenishment from the manufacturer.

Every handler consumes one wire message, verifies it, mutates entity state
and returns the messages to emit.  Verification failures raise typed errors;
attribute-mismatch on decryption is reported as a receiver-local
access-denied outcome, which a sender cannot distinguish from loss.

Entities never share mutable state; all interaction is message passing, and
per-entity randomness comes from independent seeded streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import abe, ibs, tokens
from .abe import AbeUserKey, EncryptionMaterial, Policy
from .group import GroupParams, Scalar
from .symcrypto import (
    IntegrityError,
    KeyRole,
    Profile,
    SymKey,
    hash_tag,
    kdf,
    mask_bytes,
    prf,
    prf_verify,
    sym_decrypt,
    sym_encrypt,
)
from .wire import WireMessage, pack_items, serialize_message, unpack_items

DEFAULT_TOKEN_LIFETIME = 3600  # one simulated hour
DEFAULT_CLOCK_SKEW = 5         # seconds


class ProtocolError(Exception):
    code = "protocol-error"


class SchemaViolation(ProtocolError):
    code = "schema"


class MacFailure(ProtocolError):
    code = "mac-failure"


class NonceReplay(ProtocolError):
    code = "nonce-replay"


class VerIdMismatch(ProtocolError):
    code = "verid-mismatch"


class EchoMismatch(ProtocolError):
    code = "echo-mismatch"


class UnknownPeer(ProtocolError):
    code = "unknown-peer"


class TokenRejected(ProtocolError):
    code = "token-rejected"

    def __init__(self, reason: tokens.Reject):
        super().__init__(f"token rejected: {reason.value}")
        self.reason = reason


class SignatureInvalid(ProtocolError):
    code = "signature-invalid"


class AccessDenied(ProtocolError):
    code = "access-denied"


class EmExhausted(ProtocolError):
    code = "em-exhausted"


class SerialRegression(ProtocolError):
    code = "serial-regression"


class UnknownMessageType(ProtocolError):
    code = "unknown-message-type"


class StateError(ProtocolError):
    code = "state-error"


def _u64(v: int) -> bytes:
    return v.to_bytes(8, "big")


def _open_envelope(key: SymKey, ciphertext: bytes, nonce: bytes, what: str) -> bytes:
    """Decrypt a protocol envelope; tampering surfaces as a MAC failure.

    Key-confirmation sites (the data-key envelope) handle IntegrityError
    themselves to report access-denied instead.
    """
    try:
        return sym_decrypt(key, ciphertext, nonce)
    except IntegrityError as e:
        raise MacFailure(f"{what} failed envelope authentication") from e


def _verid(ak: SymKey, shared) -> bytes:
    return hash_tag(mask_bytes(ak.data, shared, "verid-mask"), Profile.V2X).data


@dataclass
class SystemPublic:
    """Published material every entity holds."""

    params: GroupParams
    mpk: abe.AbeMpk
    mspk: ibs.IbsMspk
    y_cn: object  # GroupElement


class Entity:
    """Base: handler dispatch, nonce ledgers, observation log, clock."""

    role = "entity"

    def __init__(self, name: str, public: SystemPublic, rng) -> None:
        self.name = name
        self.public = public
        self.rng = rng
        self.clock = lambda: 1_700_000_000  # seconds; simulators override
        self._seen: dict[tuple, set] = {}
        self.record_observations = False
        self.observed: list[bytes] = []

    # -- plumbing -----------------------------------------------------------

    @property
    def params(self) -> GroupParams:
        return self.public.params

    def now(self) -> int:
        return int(self.clock())

    def observe(self, data: bytes) -> None:
        if self.record_observations:
            self.observed.append(data)

    def _require_fresh(self, context: tuple, nonce) -> None:
        """Reject replays; the nonce is only burned once the message fully
        verifies (a failed message must not block the legitimate one)."""
        if nonce in self._seen.setdefault(context, set()):
            raise NonceReplay(f"{self.name}: replayed nonce in {context}")

    def _note_nonce(self, context: tuple, nonce) -> None:
        self._seen.setdefault(context, set()).add(nonce)

    def handle(self, msg: WireMessage) -> list[WireMessage]:
        if msg.receiver != self.name:
            return self.forward(msg)
        handler = getattr(self, f"_on_p{msg.phase}_s{msg.step}", None)
        if handler is None:
            raise SchemaViolation(f"{self.name} cannot handle phase {msg.phase} step {msg.step}")
        self.observe(serialize_message(msg, self.params))
        out = handler(msg) or []
        for m in out:
            self.observe(serialize_message(m, self.params))
        return out

    def forward(self, msg: WireMessage) -> list[WireMessage]:
        raise SchemaViolation(f"{self.name} received a message for {msg.receiver}")

    def credential_names(self) -> frozenset[str]:
        raise NotImplementedError


@dataclass
class SubscriberRecord:
    supi: str
    ck: SymKey
    ik: SymKey
    ak: SymKey
    pseudonymous: bool


class CoreNetwork(Entity):
    """Registry and trust anchor: recovers identities, issues tokens and
    pseudonym-bound signing keys."""

    role = "cn"

    def __init__(self, name, public, rng, x_cn: Scalar,
                 abe_keys: abe.AbeMasterKeys, ibs_keys: ibs.IbsMasterKeys,
                 token_lifetime: int = DEFAULT_TOKEN_LIFETIME) -> None:
        super().__init__(name, public, rng)
        self.x_cn = x_cn
        self.abe_keys = abe_keys
        self.ibs_keys = ibs_keys
        self.token_lifetime = token_lifetime
        self.directory: dict[bytes, SubscriberRecord] = {}
        self.pid_index: dict[bytes, bytes] = {}  # pid -> suci

    def register(self, suci: bytes, record: SubscriberRecord) -> None:
        self.directory[suci] = record

    def trace(self, pid: bytes) -> str:
        """Pseudonym-to-real-identity lookup (authorized use only)."""
        suci = self.pid_index.get(pid, pid)
        rec = self.directory.get(suci)
        if rec is None:
            raise UnknownPeer("pseudonym unknown to the core network")
        return rec.supi

    def credential_names(self) -> frozenset[str]:
        return frozenset({"x_cn", "abe_master_keys", "ibs_master_keys",
                          "subscriber_directory", "pid_index"})

    def _on_p2_s1(self, msg: WireMessage) -> list[WireMessage]:
        pid = msg.fields["pid"]
        shared = msg.fields["alpha_pub"].exp(self.x_cn)
        if pid in self.directory:
            suci, pseudonymous = pid, False
        else:
            suci, pseudonymous = tokens.recover_pid(pid, msg.fields["alpha_pub"], self.x_cn), True
        rec = self.directory.get(suci)
        if rec is None:
            raise UnknownPeer("identity recovery failed")
        if pseudonymous != rec.pseudonymous:
            raise SchemaViolation("identity mode does not match registration")

        n1 = msg.fields["n1"]
        self._require_fresh(("p2s1", suci), (pid, n1))
        c1 = msg.fields["c1"]
        if not prf_verify(rec.ik, c1 + _u64(n1) + pid, msg.fields["sigma1"]):
            raise MacFailure("request authentication failed")
        pid_echo, verid, comm_info, n1_echo = unpack_items(
            _open_envelope(rec.ck, c1, _u64(n1), "authentication request"), 4)
        if pid_echo != pid or int.from_bytes(n1_echo, "big") != n1:
            raise EchoMismatch("inner identity fields disagree with the envelope")
        if verid != _verid(rec.ak, shared):
            raise VerIdMismatch("verification identifier mismatch")
        self._note_nonce(("p2s1", suci), (pid, n1))

        if pseudonymous:
            new_key = ibs.ibs_keygen(self.ibs_keys, pid, self.rng)
            key_blob = (b"\x01", new_key.b.encode(), new_key.kappa.encode())
            self.pid_index[pid] = suci
        else:
            key_blob = (b"\x00", b"", b"")
        token = tokens.issue_cn_token(
            self.params, self.x_cn, pid, self.now() + self.token_lifetime, self.rng
        )
        n2 = self.rng.nonce()
        inner = pack_items(
            suci, *key_blob, tokens.cn_token_to_bytes(token), _u64(n1 + 1), _u64(n2)
        )
        c2 = sym_encrypt(rec.ck, inner, _u64(n2))
        sigma2 = prf(rec.ik, c2 + _u64(n2) + suci, Profile.V2X)
        return [WireMessage(2, 2, self.name, msg.sender,
                            {"c2": c2, "n2": n2, "sigma2": sigma2.data})]


class _AuthenticatingNode(Entity):
    """Shared phase-2 client side for the gateway and external nodes."""

    pseudonymous = True

    def __init__(self, name, public, rng, suci: bytes, ck, ik, ak, ssk) -> None:
        super().__init__(name, public, rng)
        self.suci = suci
        self.ck, self.ik, self.ak = ck, ik, ak
        self.signing_key: ibs.IbsSigningKey = ssk  # replaced when pseudonymous
        self.pid: bytes = suci
        self.alpha_pub = None
        self.cn_token: tokens.CnToken | None = None
        self._n1: int | None = None

    def start_auth(self, cn_name: str = "cn", comm_info: bytes = b"") -> WireMessage:
        alpha = self.rng.scalar_nonzero(self.params)
        shared = self.public.y_cn.exp(alpha)
        if self.pseudonymous:
            pseudo = tokens.make_pid(self.suci, self.public.y_cn, alpha)
            self.pid, self.alpha_pub = pseudo.pid, pseudo.alpha_pub
        else:
            self.pid, self.alpha_pub = self.suci, self.params.generator().exp(alpha)
        n1 = self.rng.nonce()
        self._n1 = n1
        inner = pack_items(self.pid, _verid(self.ak, shared), comm_info, _u64(n1))
        c1 = sym_encrypt(self.ck, inner, _u64(n1))
        sigma1 = prf(self.ik, c1 + _u64(n1) + self.pid, Profile.V2X)
        return WireMessage(2, 1, self.name, cn_name, {
            "alpha_pub": self.alpha_pub, "pid": self.pid, "c1": c1,
            "n1": n1, "sigma1": sigma1.data,
        })

    def _on_p2_s2(self, msg: WireMessage) -> list[WireMessage]:
        if self._n1 is None:
            raise StateError("no authentication in flight")
        c2, n2 = msg.fields["c2"], msg.fields["n2"]
        if not prf_verify(self.ik, c2 + _u64(n2) + self.suci, msg.fields["sigma2"]):
            raise MacFailure("response authentication failed")
        suci, flag, b_raw, kappa_raw, token_raw, n1_echo, _n2_echo = unpack_items(
            _open_envelope(self.ck, c2, _u64(n2), "authentication response"), 7
        )
        if suci != self.suci:
            raise EchoMismatch("response addressed to a different identity")
        if int.from_bytes(n1_echo, "big") != self._n1 + 1:
            raise EchoMismatch("nonce echo mismatch")
        self._n1 = None
        if flag == b"\x01":
            from .group import decode_element, decode_scalar

            self.signing_key = ibs.IbsSigningKey(
                b=decode_element(b_raw, self.params),
                kappa=decode_scalar(kappa_raw, self.params),
            )
        self.cn_token = tokens.cn_token_from_bytes(token_raw, self.params)
        return self._after_auth()

    def _after_auth(self) -> list[WireMessage]:
        return []


@dataclass
class _ObuUplinkContext:
    dest: str
    x_t: Scalar
    payload_nonce: int


class Obu(_AuthenticatingNode):
    """Vehicle gateway and security assistant.

    Holds no attribute key: it can assist with exponentiations and forward
    traffic but can never recover shared data keys or payloads.
    """

    role = "obu"
    pseudonymous = True

    def __init__(self, name, public, rng, suci, ck, ik, ak, ssk,
                 k_sa_ecu: dict[str, SymKey]) -> None:
        super().__init__(name, public, rng, suci, ck, ik, ak, ssk)
        self.k_sa_ecu = k_sa_ecu          # ecu name -> long-term key
        self.sek: dict[str, SymKey] = {}
        self._p2_n1j: dict[str, int] = {}
        self._uplink: dict[str, _ObuUplinkContext] = {}
        self.gateway_log: list[str] = []

    def credential_names(self) -> frozenset[str]:
        return frozenset({"suci", "ck", "ik", "ak", "y_cn", "mpk", "mspk",
                          "ssk", "k_sa_ecu"})

    # -- phase 2 ------------------------------------------------------------

    def _after_auth(self) -> list[WireMessage]:
        return self.begin_preliminary()

    def begin_preliminary(self, req_info: bytes = b"") -> list[WireMessage]:
        if self.cn_token is None:
            raise StateError("authenticate with the core network first")
        out = []
        for ecu_name in sorted(self.k_sa_ecu):
            n1j = self.rng.nonce()
            self._p2_n1j[ecu_name] = n1j
            sigma = prf(self.k_sa_ecu[ecu_name], ecu_name.encode() + _u64(n1j),
                        Profile.IN_VEHICLE)
            out.append(WireMessage(2, 3, self.name, ecu_name, {
                "ecu_id": ecu_name.encode(), "sigma1j": sigma.data,
                "n1j": n1j, "req_info": req_info,
            }))
        return out

    def _on_p2_s4(self, msg: WireMessage) -> list[WireMessage]:
        ecu_name = msg.sender
        ltk = self.k_sa_ecu.get(ecu_name)
        if ltk is None:
            raise UnknownPeer(f"no long-term key for {ecu_name}")
        n1j = self._p2_n1j.get(ecu_name)
        if n1j is None:
            raise StateError(f"no preliminary exchange open with {ecu_name}")
        n2j = msg.fields["n2j"]
        self._require_fresh(("p2s4", ecu_name), n2j)
        sek = SymKey(
            prf(ltk, msg.fields["ecu_id"] + _u64(n1j + 1) + _u64(n2j + 1),
                Profile.IN_VEHICLE).data,
            KeyRole.SEK,
        )
        c1j = msg.fields["c1j"]
        pid_nj, _id_nj, vs_blob, n2j_echo = unpack_items(
            _open_envelope(sek, c1j, _u64(n2j), "preliminary response"), 4)
        if int.from_bytes(n2j_echo, "big") != n2j:
            raise EchoMismatch("session nonce echo mismatch")
        # v list: prefixed with a 2-byte count
        count = int.from_bytes(vs_blob[:2], "big")
        vs = [Scalar(int.from_bytes(raw, "big"), self.params.q)
              for raw in unpack_items(vs_blob[2:], count)]
        if not prf_verify(ltk, c1j + pid_nj + vs[0].encode(), msg.fields["sigma2j"],
                          Profile.IN_VEHICLE):
            raise MacFailure("preliminary response failed authentication")
        self.sek[ecu_name] = sek
        del self._p2_n1j[ecu_name]
        self._note_nonce(("p2s4", ecu_name), n2j)

        bundles = [abe.abe_out_encrypt1(self.public.mpk, v) for v in vs]
        mo_blob = pack_items(*[abe.partial_to_bytes(mo) for mo in bundles])
        c2j = sym_encrypt(sek, mo_blob, _u64(n2j + 1))
        sigma3j = prf(ltk, c2j + abe.partial_to_bytes(bundles[0]), Profile.IN_VEHICLE)
        return [WireMessage(2, 5, self.name, ecu_name, {
            "ecu_id": ecu_name.encode(), "c2j": c2j, "sigma3j": sigma3j.data,
        })]

    # -- phase 3 uplink assist ------------------------------------------------

    def _on_p3_s1(self, msg: WireMessage) -> list[WireMessage]:
        ecu_name = msg.sender
        ltk, sek = self.k_sa_ecu.get(ecu_name), self.sek.get(ecu_name)
        if ltk is None or sek is None:
            raise UnknownPeer(f"no session with {ecu_name}")
        n1j = msg.fields["n1j"]
        self._require_fresh(("p3s1", ecu_name), n1j)
        c1j = msg.fields["c1j"]
        inner = _open_envelope(sek, c1j, _u64(n1j), "uplink request")
        pid_nj, alpha_raw, y_raw, x_raw, comm_info, n1j_echo = unpack_items(inner, 6)
        if int.from_bytes(n1j_echo, "big") != n1j:
            raise EchoMismatch("uplink nonce echo mismatch")
        x_t = Scalar(int.from_bytes(x_raw, "big"), self.params.q)
        if not prf_verify(ltk, c1j + x_t.encode(), msg.fields["sigma1j"],
                          Profile.IN_VEHICLE):
            raise MacFailure("uplink request failed authentication")
        self._note_nonce(("p3s1", ecu_name), n1j)
        from .group import decode_element

        y_pub = decode_element(y_raw, self.params)
        y_prime = ibs.ibs_out_sign1(y_pub, x_t)
        n2j = self.rng.nonce()
        self._uplink[ecu_name] = _ObuUplinkContext(
            dest=comm_info.decode(), x_t=x_t, payload_nonce=n1j
        )
        inner2 = pack_items(self.pid, y_prime.encode(), _u64(n2j))
        c2j = sym_encrypt(sek, inner2, _u64(n2j))
        sigma2j = prf(ltk, c2j + y_prime.encode(), Profile.IN_VEHICLE)
        return [WireMessage(3, 2, self.name, ecu_name, {
            "c2j": c2j, "sigma2j": sigma2j.data, "n2j": n2j,
        })]

    def _on_p3_s3(self, msg: WireMessage) -> list[WireMessage]:
        ecu_name = msg.sender
        ctx = self._uplink.pop(ecu_name, None)
        if ctx is None:
            raise StateError(f"no uplink in flight with {ecu_name}")
        if self.cn_token is None:
            raise StateError("gateway holds no valid token")
        t_cur = self.now()
        token = tokens.derive_user_token(
            self.params, self.cn_token, self.signing_key, t_cur, self.rng
        )
        return [WireMessage(3, 4, self.name, ctx.dest, {
            "pid": self.pid, "ct": msg.fields["ct"], "cm": msg.fields["cm"],
            "sigma_m": msg.fields["sigma_m"], "nm": msg.fields["nm"], "token": token,
        })]

    # -- phase 3 downlink forwarding ------------------------------------------

    def _on_p3_s11(self, msg: WireMessage) -> list[WireMessage]:
        verdict = tokens.verify_user_token(
            msg.fields["token"], self.public.mspk, self.public.y_cn,
            msg.fields["sender_id"], now=self.now(), skew=DEFAULT_CLOCK_SKEW,
        )
        if verdict is not tokens.Reject.OK:
            raise TokenRejected(verdict)
        self._require_fresh(("p3s11", msg.fields["sender_id"]),
                            (msg.fields["nm"], msg.fields["token"].t_cur))
        self._note_nonce(("p3s11", msg.fields["sender_id"]),
                         (msg.fields["nm"], msg.fields["token"].t_cur))
        inner = pack_items(
            msg.fields["sender_id"],
            abe.ciphertext_to_bytes(msg.fields["ct"]),
            msg.fields["cm"],
            msg.fields["sigma_m"],
            _u64(msg.fields["nm"]),
        )
        out = []
        for ecu_name in sorted(self.sek):
            n3j = self.rng.nonce()
            c3j = sym_encrypt(self.sek[ecu_name], inner, _u64(n3j))
            sigma3j = prf(self.k_sa_ecu[ecu_name], c3j + _u64(n3j), Profile.IN_VEHICLE)
            out.append(WireMessage(3, 12, self.name, ecu_name, {
                "c3j": c3j, "sigma3j": sigma3j.data, "n3j": n3j,
            }))
        return out

    # -- routing ---------------------------------------------------------------

    def forward(self, msg: WireMessage) -> list[WireMessage]:
        """Relay opaque traffic between the in-vehicle bus and the wide-area
        link (material-update envelopes are end-to-end protected)."""
        self.observe(serialize_message(msg, self.params))
        self.gateway_log.append(f"fwd p{msg.phase}.s{msg.step} {msg.sender}->{msg.receiver}")
        return [msg]


@dataclass
class _TypeState:
    policy: Policy
    pc: abe.PreliminaryCiphertext | None
    offline: ibs.OfflineSignState
    data_key: SymKey | None = None
    ct: abe.AbeCiphertext | None = None


@dataclass
class _EcuPendingUplink:
    type_k: int
    payload: bytes
    x_t: Scalar
    n1j: int


class Tpm:
    """In-ECU trust module: derives pseudonym-bound signing keys without
    exposing the sealed master signing secret to the ECU software."""

    def __init__(self, ibs_keys: ibs.IbsMasterKeys, rng) -> None:
        self._keys = ibs_keys
        self._rng = rng

    def derive_signing_key(self, pid: bytes) -> ibs.IbsSigningKey:
        return ibs.ibs_keygen(self._keys, pid, self._rng)


class Ecu(Entity):
    """Resource-constrained end device (index 0 is the driver-assistance
    unit, identical protocol, faster cost profile)."""

    role = "ecu"

    def __init__(self, name, public, rng, cav: str, user_key: AbeUserKey,
                 ssk: ibs.IbsSigningKey, k_sa_ecu: SymKey, k_oem_ecu: SymKey,
                 tpm: Tpm, message_types: dict[int, Policy]) -> None:
        super().__init__(name, public, rng)
        self.cav = cav
        self.user_key = user_key
        self.ssk_initial = ssk
        self.k_sa_ecu = k_sa_ecu
        self.k_oem_ecu = k_oem_ecu
        self.tpm = tpm
        self.message_types = message_types
        self.em_inventory: list[EncryptionMaterial] = []
        self.last_em_serial = 0
        self.needs_material_update = False
        # session state
        self.sek: SymKey | None = None
        self.pid: bytes = name.encode()
        self.alpha_pub = None
        self.signing_key: ibs.IbsSigningKey | None = None
        self.types: dict[int, _TypeState] = {}
        self._pending: _EcuPendingUplink | None = None
        self.delivered: list[tuple[bytes, bytes]] = []  # downlink payloads
        self.denied: list[str] = []

    def credential_names(self) -> frozenset[str]:
        return frozenset({"id", "mpk", "mspk", "y_cn", "sk_u", "ssk",
                          "k_sa_ecu", "k_oem_ecu", "em_inventory", "tpm"})

    def install_materials(self, materials: list[EncryptionMaterial]) -> None:
        serials = [m.serial for m in materials]
        if serials and min(serials) <= self.last_em_serial:
            raise SerialRegression("material serials must be strictly increasing")
        self.em_inventory.extend(materials)
        if serials:
            self.last_em_serial = max(serials)
        self.needs_material_update = False

    def _take_material(self) -> EncryptionMaterial:
        for em in self.em_inventory:
            if not em.used:
                return em
        self.needs_material_update = True
        raise EmExhausted(f"{self.name} has no unused encryption material")

    def unused_materials(self) -> int:
        return sum(1 for em in self.em_inventory if not em.used)

    # -- phase 2 ----------------------------------------------------------------

    def _on_p2_s3(self, msg: WireMessage) -> list[WireMessage]:
        if msg.fields["ecu_id"] != self.name.encode():
            raise SchemaViolation("query addressed to a different unit")
        n1j = msg.fields["n1j"]
        self._require_fresh(("p2s3", msg.sender), n1j)
        if not prf_verify(self.k_sa_ecu, msg.fields["ecu_id"] + _u64(n1j),
                          msg.fields["sigma1j"], Profile.IN_VEHICLE):
            raise MacFailure("preliminary query failed authentication")
        self._note_nonce(("p2s3", msg.sender), n1j)

        n2j = self.rng.nonce()
        self.sek = SymKey(
            prf(self.k_sa_ecu, self.name.encode() + _u64(n1j + 1) + _u64(n2j + 1),
                Profile.IN_VEHICLE).data,
            KeyRole.SEK,
        )
        self._p2_n2j = n2j
        alpha = self.rng.scalar_nonzero(self.params)
        pseudo = tokens.make_pid(self.name.encode(), self.public.y_cn, alpha)
        self.pid, self.alpha_pub = pseudo.pid, pseudo.alpha_pub
        self.signing_key = self.tpm.derive_signing_key(self.pid)
        self._session_vs = {k: self.rng.scalar_nonzero(self.params)
                            for k in sorted(self.message_types)}
        vs_blob = (len(self._session_vs).to_bytes(2, "big")
                   + pack_items(*[v.encode() for v in self._session_vs.values()]))
        inner = pack_items(self.pid, self.name.encode(), vs_blob, _u64(n2j))
        c1j = sym_encrypt(self.sek, inner, _u64(n2j))
        first_v = next(iter(self._session_vs.values()))
        sigma2j = prf(self.k_sa_ecu, c1j + self.pid + first_v.encode(), Profile.IN_VEHICLE)
        return [WireMessage(2, 4, self.name, msg.sender, {
            "ecu_id": self.name.encode(), "c1j": c1j, "n2j": n2j, "sigma2j": sigma2j.data,
        })]

    def _on_p2_s5(self, msg: WireMessage) -> list[WireMessage]:
        if self.sek is None or not hasattr(self, "_session_vs"):
            raise StateError("no preliminary exchange in progress")
        c2j = msg.fields["c2j"]
        mo_blob = _open_envelope(self.sek, c2j, _u64(self._p2_n2j + 1),
                                 "outsourced bundles")
        type_keys = sorted(self._session_vs)
        mo_raws = unpack_items(mo_blob, len(type_keys))
        if not prf_verify(self.k_sa_ecu, c2j + mo_raws[0], msg.fields["sigma3j"],
                          Profile.IN_VEHICLE):
            raise MacFailure("outsourced bundles failed authentication")
        bundles = [abe.partial_from_bytes(raw, self.params) for raw in mo_raws]
        self.types = {}
        for k, mo in zip(type_keys, bundles):
            material = self._take_material()
            pc = abe.abe_out_encrypt2(self.public.mpk, mo, material.consume())
            offline = ibs.ibs_offline_sign(self.public.mspk, self.rng)
            self.types[k] = _TypeState(policy=self.message_types[k], pc=pc, offline=offline)
        if self.unused_materials() < len(self.message_types):
            self.needs_material_update = True
        del self._session_vs
        return []

    # -- phase 3 uplink ------------------------------------------------------

    def uplink_init(self, type_k: int, payload: bytes, dest: str,
                    obu_name: str, comm_info_extra: bytes = b"") -> WireMessage:
        state = self.types.get(type_k)
        if state is None:
            raise UnknownMessageType(f"type {type_k} has no preliminary state")
        if self._pending is not None:
            raise StateError("an uplink exchange is already in flight")
        if state.data_key is None:
            m = self.rng.element(self.params)
            state.data_key = kdf(m, "data-key")
            state.ct = abe.abe_select_policy(state.pc, state.policy, m, self.rng)
            state.pc = None  # single use per session
        x_t = self.rng.scalar_nonzero(self.params)
        n1j = self.rng.nonce()
        inner = pack_items(
            self.pid, self.alpha_pub.encode(), state.offline.y_pub.encode(),
            x_t.encode(), dest.encode(), _u64(n1j),
        )
        c1j = sym_encrypt(self.sek, inner, _u64(n1j))
        sigma1j = prf(self.k_sa_ecu, c1j + x_t.encode(), Profile.IN_VEHICLE)
        self._pending = _EcuPendingUplink(type_k=type_k, payload=payload, x_t=x_t, n1j=n1j)
        return WireMessage(3, 1, self.name, obu_name, {
            "c1j": c1j, "sigma1j": sigma1j.data, "n1j": n1j,
        })

    def _on_p3_s2(self, msg: WireMessage) -> list[WireMessage]:
        n2j = msg.fields["n2j"]
        self._require_fresh(("p3s2", msg.sender), n2j)
        pending = self._pending
        if pending is None:
            raise StateError("no uplink exchange in flight")
        c2j = msg.fields["c2j"]
        pid_n, y_prime_raw, n2j_echo = unpack_items(
            _open_envelope(self.sek, c2j, _u64(n2j), "assist response"), 3)
        if int.from_bytes(n2j_echo, "big") != n2j:
            raise EchoMismatch("assist nonce echo mismatch")
        from .group import decode_element

        y_prime = decode_element(y_prime_raw, self.params)
        if not prf_verify(self.k_sa_ecu, c2j + y_prime.encode(), msg.fields["sigma2j"],
                          Profile.IN_VEHICLE):
            raise MacFailure("assist response failed authentication")
        self._note_nonce(("p3s2", msg.sender), n2j)

        state = self.types[pending.type_k]
        self._pending = None
        nm = self.rng.nonce()
        sig = ibs.ibs_out_sign2(
            self.public.mspk, self.signing_key, state.offline,
            pending.x_t, y_prime, pending.payload, self.rng,
        )
        inner = pack_items(
            self.pid, pid_n, ibs.signature_to_bytes(sig, self.params),
            pending.payload, _u64(nm),
        )
        cm = sym_encrypt(state.data_key, inner, _u64(nm))
        sigma_m = hash_tag(cm + pending.payload, Profile.V2X)
        return [WireMessage(3, 3, self.name, msg.sender, {
            "ct": state.ct, "cm": cm, "sigma_m": sigma_m.data, "nm": nm,
        })]

    # -- phase 3 downlink ------------------------------------------------------

    def _on_p3_s12(self, msg: WireMessage) -> list[WireMessage]:
        if self.sek is None:
            raise StateError("no session key")
        n3j = msg.fields["n3j"]
        self._require_fresh(("p3s12", msg.sender), n3j)
        c3j = msg.fields["c3j"]
        if not prf_verify(self.k_sa_ecu, c3j + _u64(n3j), msg.fields["sigma3j"],
                          Profile.IN_VEHICLE):
            raise MacFailure("downlink frame failed authentication")
        sender_id, ct_raw, cm, sigma_m, nm_raw = unpack_items(
            _open_envelope(self.sek, c3j, _u64(n3j), "downlink frame"), 5
        )
        ct = abe.ciphertext_from_bytes(ct_raw, self.params)
        recovered = abe.abe_decrypt(ct, self.user_key)
        key = kdf(recovered, "data-key")
        try:
            inner = sym_decrypt(key, cm, nm_raw)
        except IntegrityError:
            self.denied.append(sender_id.decode(errors="replace"))
            raise AccessDenied(f"{self.name}: attributes do not open this payload")
        sender_echo, _reserved, sig_raw, payload, nm_echo = unpack_items(inner, 5)
        if sender_echo != sender_id or nm_echo != nm_raw:
            raise EchoMismatch("downlink envelope binding mismatch")
        if hash_tag(cm + payload, Profile.V2X).data != sigma_m:
            raise MacFailure("payload digest mismatch")
        sig = ibs.signature_from_bytes(sig_raw, self.params)
        if not ibs.ibs_verify(self.public.mspk, sender_id, sig, payload):
            raise SignatureInvalid("downlink signature invalid")
        self._note_nonce(("p3s12", msg.sender), n3j)
        self.delivered.append((sender_id, payload))
        return []

    # -- phase 4 ------------------------------------------------------------

    def request_material_update(self, oem_name: str, obu_name: str, count: int) -> WireMessage:
        n1 = self.rng.nonce()
        self._p4_n1 = n1
        mac = prf(self.k_oem_ecu,
                  self.name.encode() + self.cav.encode() + count.to_bytes(2, "big") + _u64(n1),
                  Profile.V2X)
        return WireMessage(4, 1, self.name, oem_name, {
            "ecu_id": self.name.encode(), "cav": self.cav.encode(),
            "count": count, "n1": n1, "mac": mac.data,
        })

    def _on_p4_s2(self, msg: WireMessage) -> list[WireMessage]:
        c, n2 = msg.fields["c"], msg.fields["n2"]
        if not prf_verify(self.k_oem_ecu, c + _u64(n2), msg.fields["mac"]):
            raise MacFailure("material update failed authentication")
        self._require_fresh(("p4s2", msg.sender), n2)
        batch_blob, n1_echo = unpack_items(
            _open_envelope(self.k_oem_ecu, c, _u64(n2), "material batch"), 2)
        if int.from_bytes(n1_echo, "big") != getattr(self, "_p4_n1", -1) + 1:
            raise EchoMismatch("material update does not answer our request")
        count = int.from_bytes(batch_blob[:2], "big")
        materials = []
        for rec in unpack_items(batch_blob[2:], count):
            serial = int.from_bytes(rec[:8], "big")
            mo = abe.partial_from_bytes(rec[8:], self.params)
            materials.append(EncryptionMaterial(serial=serial, mo=mo))
        self.install_materials(sorted(materials, key=lambda m: m.serial))
        self._note_nonce(("p4s2", msg.sender), n2)
        return []


class VxNode(_AuthenticatingNode):
    """External V2X node: roadside unit, user equipment or manufacturer."""

    def __init__(self, name, public, rng, role: str, suci, ck, ik, ak,
                 user_key: AbeUserKey, ssk, pseudonymous: bool) -> None:
        self.role = role
        self.pseudonymous = pseudonymous
        super().__init__(name, public, rng, suci, ck, ik, ak, ssk)
        self.user_key = user_key
        self.delivered: list[tuple[bytes, bytes]] = []
        self.denied: list[str] = []
        self.batch_mode = False
        self._batch_queue: list[tuple[bytes, ibs.IbsSignature, bytes, bytes]] = []
        # manufacturer extras
        self.k_oem_ecu: dict[str, SymKey] = {}
        self.em_log: dict[tuple[str, int], Scalar] = {}
        self._em_serials: dict[str, int] = {}

    def credential_names(self) -> frozenset[str]:
        base = {"suci", "ck", "ik", "ak", "y_cn", "mpk", "mspk", "sk_u", "ssk"}
        if self.role == "oem":
            base |= {"k_oem_ecu", "em_log"}
        return frozenset(base)

    # -- uplink receive ---------------------------------------------------------

    def _on_p3_s4(self, msg: WireMessage) -> list[WireMessage]:
        pid = msg.fields["pid"]
        verdict = tokens.verify_user_token(
            msg.fields["token"], self.public.mspk, self.public.y_cn, pid,
            now=self.now(), skew=DEFAULT_CLOCK_SKEW,
        )
        if verdict is not tokens.Reject.OK:
            raise TokenRejected(verdict)
        self._require_fresh(("p3s4", pid), (msg.fields["nm"], msg.fields["token"].t_cur))
        recovered = abe.abe_decrypt(msg.fields["ct"], self.user_key)
        key = kdf(recovered, "data-key")
        try:
            inner = sym_decrypt(key, msg.fields["cm"], _u64(msg.fields["nm"]))
        except IntegrityError:
            self.denied.append(pid.hex())
            raise AccessDenied(f"{self.name}: attributes do not open this payload")
        pid_nj, pid_n, sig_raw, payload, nm_echo = unpack_items(inner, 5)
        if pid_n != pid or int.from_bytes(nm_echo, "big") != msg.fields["nm"]:
            raise EchoMismatch("uplink envelope binding mismatch")
        if hash_tag(msg.fields["cm"] + payload, Profile.V2X).data != msg.fields["sigma_m"]:
            raise MacFailure("payload digest mismatch")
        sig = ibs.signature_from_bytes(sig_raw, self.params)
        if self.batch_mode:
            self._batch_queue.append((pid_nj, sig, payload, pid))
        elif not ibs.ibs_verify(self.public.mspk, pid_nj, sig, payload):
            raise SignatureInvalid("uplink signature invalid")
        self._note_nonce(("p3s4", pid), (msg.fields["nm"], msg.fields["token"].t_cur))
        self.delivered.append((pid_nj, payload))
        return []

    def flush_batch(self) -> bool:
        """Verify all queued uplink signatures in one aggregate check."""
        if not self._batch_queue:
            return True
        ok = ibs.ibs_batch_verify(
            self.public.mspk, [(i, s, m) for i, s, m, _ in self._batch_queue]
        )
        self._batch_queue.clear()
        return ok

    # -- downlink send ---------------------------------------------------------

    def send_downlink(self, obu_name: str, policy: Policy, payload: bytes) -> WireMessage:
        if self.cn_token is None:
            raise StateError("no token; run the authentication phase first")
        m = self.rng.element(self.params)
        key = kdf(m, "data-key")
        ct = abe.abe_encrypt(self.public.mpk, policy, m, self.rng)
        sig = ibs.ibs_sign(self.public.mspk, self.signing_key, payload, self.rng)
        nm = self.rng.nonce()
        inner = pack_items(self.pid, b"", ibs.signature_to_bytes(sig, self.params),
                           payload, _u64(nm))
        cm = sym_encrypt(key, inner, _u64(nm))
        sigma_m = hash_tag(cm + payload, Profile.V2X)
        token = tokens.derive_user_token(
            self.params, self.cn_token, self.signing_key, self.now(), self.rng
        )
        return WireMessage(3, 11, self.name, obu_name, {
            "sender_id": self.pid, "ct": ct, "cm": cm,
            "sigma_m": sigma_m.data, "nm": nm, "token": token,
        })

    # -- manufacturer: encryption materials --------------------------------------

    def produce_material_batch(self, ecu_name: str, count: int) -> list[EncryptionMaterial]:
        if self.role != "oem":
            raise StateError("only the manufacturer provisions encryption material")
        start = self._em_serials.get(ecu_name, 0)
        out = []
        for i in range(1, count + 1):
            v = self.rng.scalar_nonzero(self.params)
            self.em_log[(ecu_name, start + i)] = v
            out.append(EncryptionMaterial(
                serial=start + i, mo=abe.abe_out_encrypt1(self.public.mpk, v)
            ))
        self._em_serials[ecu_name] = start + count
        return out

    def _on_p4_s1(self, msg: WireMessage) -> list[WireMessage]:
        ecu_name = msg.fields["ecu_id"].decode()
        ltk = self.k_oem_ecu.get(ecu_name)
        if ltk is None:
            raise UnknownPeer(f"no manufacturing key for {ecu_name}")
        body = (msg.fields["ecu_id"] + msg.fields["cav"]
                + msg.fields["count"].to_bytes(2, "big") + _u64(msg.fields["n1"]))
        if not prf_verify(ltk, body, msg.fields["mac"]):
            raise MacFailure("material request failed authentication")
        self._require_fresh(("p4s1", ecu_name), msg.fields["n1"])
        self._note_nonce(("p4s1", ecu_name), msg.fields["n1"])
        batch = self.produce_material_batch(ecu_name, msg.fields["count"])
        records = [
            m.serial.to_bytes(8, "big") + abe.partial_to_bytes(m.mo) for m in batch
        ]
        blob = len(records).to_bytes(2, "big") + pack_items(*records)
        n2 = self.rng.nonce()
        c = sym_encrypt(ltk, pack_items(blob, _u64(msg.fields["n1"] + 1)), _u64(n2))
        mac = prf(ltk, c + _u64(n2), Profile.V2X)
        return [WireMessage(4, 2, self.name, ecu_name, {
            "ecu_id": msg.fields["ecu_id"], "c": c, "n2": n2, "mac": mac.data,
        })]
