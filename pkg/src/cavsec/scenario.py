"""Scenario configuration, fleet provisioning and end-to-end execution.

A scenario file is JSON: fleet topology (vehicles with their ECU counts,
external receivers with attribute sets), the attribute universe, per-type
policies, material inventories, channel parameters, the traffic to run, and
one master seed.  Everything downstream is derived deterministically from
that seed: identical (config, seed) runs produce identical transcripts.

``build_fleet`` is the provisioning phase: the core network generates
master keys and per-entity credentials, long-term symmetric keys are
distributed, and the manufacturer precomputes and installs each ECU's
single-use encryption materials (logging every exponent it used, so audits
can recompute the installed bundles).

``run_scenario`` drives phases 2..4 over the simulated network and reports
transcript hash, per-phase simulated time, per-entity operation counts and
any verification failures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import abe, ibs
from .abe import Policy, attribute_set
from .costmodel import CostTable
from .counters import CounterSnapshot
from .group import generate_params
from .protocol import (
    CoreNetwork,
    Ecu,
    Entity,
    Obu,
    SubscriberRecord,
    SystemPublic,
    Tpm,
    VxNode,
)
from .rng import Drbg
from .simnet import Channel, Simulator
from .symcrypto import KeyRole, SymKey

V2X_ROLES = ("rsu", "ue", "oem")


class ConfigError(ValueError):
    pass


@dataclass
class CavSpec:
    name: str
    ecus: int


@dataclass
class ReceiverSpec:
    name: str
    role: str
    attrs: list[int]


@dataclass
class ScenarioConfig:
    seed: int = 1
    profile: str = "test"
    n_attrs: int = 8
    message_types: int = 2
    em_inventory: int = 2
    token_lifetime: int = 3600
    clock_skew: int = 5
    cavs: list[CavSpec] = field(default_factory=lambda: [CavSpec("cav1", 2)])
    receivers: list[ReceiverSpec] = field(default_factory=list)
    ecu_attrs: dict = field(default_factory=dict)   # "default" or str(index) -> [attrs]
    policies: dict = field(default_factory=dict)    # str(type) -> {required, forbidden}
    uplinks: list[dict] = field(default_factory=list)
    downlinks: list[dict] = field(default_factory=list)
    channels: dict = field(default_factory=dict)
    adversary: list[dict] = field(default_factory=list)
    cost_mode: str = "synthetic"
    cost_table: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = dict(raw)
        cavs = [CavSpec(**c) for c in raw.pop("cavs", [{"name": "cav1", "ecus": 2}])]
        receivers = [ReceiverSpec(**r) for r in raw.pop("receivers", [])]
        cfg = cls(cavs=cavs, receivers=receivers, **raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["cavs"] = [c.__dict__ for c in self.cavs]
        out["receivers"] = [r.__dict__ for r in self.receivers]
        return out

    def validate(self) -> None:
        if not any(r.role == "oem" for r in self.receivers):
            raise ConfigError("fleet needs a manufacturer (role 'oem') for materials")
        for r in self.receivers:
            if r.role not in V2X_ROLES:
                raise ConfigError(f"unknown receiver role {r.role!r}")
            attribute_set(r.attrs, self.n_attrs)
        for k in range(1, self.message_types + 1):
            pol = self.policy_for(k)
            if pol.n != self.n_attrs:
                raise ConfigError("policy length does not match the attribute universe")
        for key, attrs in self.ecu_attrs.items():
            if key != "default":
                int(key)
            attribute_set(attrs, self.n_attrs)

    def policy_for(self, type_k: int) -> Policy:
        raw = self.policies.get(str(type_k))
        if raw is None:
            # default: each type requires one attribute, round-robin
            return Policy.from_sets(self.n_attrs, [(type_k - 1) % self.n_attrs + 1])
        return Policy.from_sets(
            self.n_attrs, raw.get("required", []), raw.get("forbidden", [])
        )

    def attrs_for_ecu(self, index: int) -> frozenset[int]:
        raw = self.ecu_attrs.get(str(index)) or self.ecu_attrs.get("default")
        if raw is None:
            # default: every attribute any default policy can require
            raw = list(range(1, self.n_attrs + 1))
        return attribute_set(raw, self.n_attrs)


@dataclass
class Fleet:
    config: ScenarioConfig
    public: SystemPublic
    cn: CoreNetwork
    obus: dict[str, Obu]
    ecus: dict[str, Ecu]               # full name -> entity
    receivers: dict[str, VxNode]
    entities: dict[str, Entity]
    oem: VxNode

    def ecu_names(self, cav: str) -> list[str]:
        return sorted(n for n, e in self.ecus.items() if e.cav == cav)


def _five_g_keys(rng) -> tuple[SymKey, SymKey, SymKey]:
    return (
        SymKey(rng.bytes(32), KeyRole.CK),
        SymKey(rng.bytes(32), KeyRole.IK),
        SymKey(rng.bytes(16), KeyRole.AK),
    )


def build_fleet(cfg: ScenarioConfig) -> Fleet:
    """Provisioning: master keys, credentials, long-term keys, materials."""
    cfg.validate()
    params = generate_params(cfg.profile, cfg.seed)
    master = Drbg(cfg.seed, b"scenario")
    cn_rng = master.child("cn")
    abe_keys = abe.abe_setup(params, cfg.n_attrs, cn_rng)
    ibs_keys = ibs.ibs_setup(params, cn_rng)
    x_cn = cn_rng.scalar_nonzero(params)
    public = SystemPublic(
        params=params, mpk=abe_keys.mpk, mspk=ibs_keys.mspk,
        y_cn=params.generator().exp(x_cn),
    )
    cn = CoreNetwork("cn", public, cn_rng, x_cn, abe_keys, ibs_keys,
                     token_lifetime=cfg.token_lifetime)

    entities: dict[str, Entity] = {"cn": cn}
    receivers: dict[str, VxNode] = {}
    oem = None
    for spec in cfg.receivers:
        rng = master.child(spec.name)
        ck, ik, ak = _five_g_keys(master.child(f"5g/{spec.name}"))
        suci = spec.name.encode()
        node = VxNode(
            spec.name, public, rng, spec.role, suci, ck, ik, ak,
            user_key=abe.abe_keygen(abe_keys, suci, attribute_set(spec.attrs, cfg.n_attrs), cn_rng),
            ssk=ibs.ibs_keygen(ibs_keys, suci, cn_rng),
            pseudonymous=spec.role == "ue",
        )
        cn.register(suci, SubscriberRecord(
            supi=f"supi:{spec.name}", ck=ck, ik=ik, ak=ak,
            pseudonymous=node.pseudonymous,
        ))
        receivers[spec.name] = node
        entities[spec.name] = node
        if spec.role == "oem" and oem is None:
            oem = node

    obus: dict[str, Obu] = {}
    ecus: dict[str, Ecu] = {}
    for cav in cfg.cavs:
        obu_name = f"{cav.name}.obu"
        k_sa_ecu: dict[str, SymKey] = {}
        for j in range(cav.ecus):
            ecu_name = f"{cav.name}.ecu{j}"
            key_rng = master.child(f"ltk/{ecu_name}")
            k_sa = SymKey(key_rng.bytes(16), KeyRole.LTK_SA_ECU)
            k_oem = SymKey(key_rng.bytes(16), KeyRole.LTK_OEM_ECU)
            k_sa_ecu[ecu_name] = k_sa
            oem.k_oem_ecu[ecu_name] = k_oem
            types = {
                k: cfg.policy_for(k) for k in range(1, cfg.message_types + 1)
            }
            ecu = Ecu(
                ecu_name, public, master.child(ecu_name), cav.name,
                user_key=abe.abe_keygen(abe_keys, ecu_name.encode(),
                                        cfg.attrs_for_ecu(j), cn_rng),
                ssk=ibs.ibs_keygen(ibs_keys, ecu_name.encode(), cn_rng),
                k_sa_ecu=k_sa, k_oem_ecu=k_oem,
                tpm=Tpm(ibs_keys, master.child(f"tpm/{ecu_name}")),
                message_types=types,
            )
            ecu.cost_role = "adas" if j == 0 else "ecu"
            # manufacture-time installation of single-use encryption material
            ecu.install_materials(oem.produce_material_batch(ecu_name, cfg.em_inventory))
            ecus[ecu_name] = ecu
            entities[ecu_name] = ecu

        rng = master.child(obu_name)
        ck, ik, ak = _five_g_keys(master.child(f"5g/{obu_name}"))
        suci = obu_name.encode()
        obu = Obu(obu_name, public, rng, suci, ck, ik, ak,
                  ssk=ibs.ibs_keygen(ibs_keys, suci, cn_rng), k_sa_ecu=k_sa_ecu)
        cn.register(suci, SubscriberRecord(
            supi=f"supi:{obu_name}", ck=ck, ik=ik, ak=ak, pseudonymous=True,
        ))
        obus[obu_name] = obu
        entities[obu_name] = obu

    return Fleet(config=cfg, public=public, cn=cn, obus=obus, ecus=ecus,
                 receivers=receivers, entities=entities, oem=oem)


# backwards-friendly alias: provisioning is protocol phase 1
phase1_provision = build_fleet


def pump(fleet: Fleet, messages) -> None:
    """Deliver messages directly, no timing or gateways; for tests/audits."""
    queue = list(messages)
    while queue:
        msg = queue.pop(0)
        queue.extend(fleet.entities[msg.receiver].handle(msg))


def authenticate_all(fleet: Fleet) -> None:
    """Run the whole authentication-and-preliminary phase by direct pumping."""
    starters = [fleet.receivers[n].start_auth() for n in sorted(fleet.receivers)]
    starters += [fleet.obus[n].start_auth() for n in sorted(fleet.obus)]
    pump(fleet, starters)


def make_simulator(fleet: Fleet, **kwargs) -> Simulator:
    cfg = fleet.config
    table = CostTable.from_file(cfg.cost_table) if cfg.cost_table else CostTable.default()
    sim = Simulator(fleet.entities, cost_mode=cfg.cost_mode, cost_table=table, **kwargs)

    v2x_cfg = cfg.channels.get("v2x", {})
    bus_cfg = cfg.channels.get("in_vehicle", {})
    v2x_members = {"cn", *fleet.receivers, *fleet.obus}
    sim.add_channel(Channel(
        name="v2x", klass="v2x",
        latency_ns=int(v2x_cfg.get("latency_us", 1000)) * 1000,
        bandwidth_bps=int(v2x_cfg.get("bandwidth_bps", 100_000_000)),
    ), v2x_members)
    for cav in cfg.cavs:
        obu_name = f"{cav.name}.obu"
        members = {obu_name, *fleet.ecu_names(cav.name)}
        sim.add_channel(Channel(
            name=f"{cav.name}.bus", klass="in_vehicle",
            latency_ns=int(bus_cfg.get("latency_us", 50)) * 1000,
            bandwidth_bps=int(bus_cfg.get("bandwidth_bps", 8_000_000)),
            max_frame_payload=int(bus_cfg.get("max_frame_payload", 64)),
        ), members)
        for ecu_name in fleet.ecu_names(cav.name):
            sim.set_gateway(ecu_name, obu_name)
    return sim


@dataclass
class RunResult:
    transcript: list[str]
    transcript_hash: str
    failures: list
    phase_spans_ns: dict[str, int]
    delivered: dict[str, list[tuple[bytes, bytes]]]
    denied: dict[str, list[str]]
    entity_ops: dict[str, CounterSnapshot]

    @property
    def ok(self) -> bool:
        return not self.failures


def _step_match(action: dict):
    phase, step = action.get("phase"), action.get("step")

    def match(msg):
        return (phase is None or msg.phase == phase) and (step is None or msg.step == step)

    return match


def run_scenario(cfg: ScenarioConfig, sim: Simulator | None = None,
                 fleet: Fleet | None = None) -> RunResult:
    """Execute phases 2..4 end to end on a fresh fleet."""
    from .simnet import AdversaryTap

    fleet = fleet or build_fleet(cfg)
    sim = sim or make_simulator(fleet)
    spans: dict[str, int] = {}

    replays = []
    for action in cfg.adversary:
        kind = action.get("action", "eavesdrop")
        if kind == "replay":
            tap = AdversaryTap(channel=action.get("channel", "*"),
                               mode="eavesdrop", match=_step_match(action))
            sim.add_tap(tap)
            replays.append((tap, int(action.get("delay_us", 1000)) * 1000))
        else:
            sim.add_tap(AdversaryTap(
                channel=action.get("channel", "*"), mode=kind,
                match=_step_match(action), field_name=action.get("field"),
                limit=action.get("limit", 1),
            ))

    def drain(phase: str, start_ns: int) -> None:
        sim.run_until_idle()
        spans[phase] = max(sim.last_activity_ns - start_ns, 0)

    # phase 2: authentication, tokens, preliminary material
    t0 = sim.clock.now_ns
    for name in sorted(fleet.receivers):
        node = fleet.receivers[name]
        sim.call_entity(t0, name, lambda n=node: [n.start_auth()])
    for name in sorted(fleet.obus):
        obu = fleet.obus[name]
        sim.call_entity(t0, name, lambda o=obu: [o.start_auth()])
    drain("phase2", t0)

    # phase 3: attribute-based data sharing
    t1 = sim.clock.now_ns + 1_000_000
    for up in cfg.uplinks:
        ecu = fleet.ecus[up["ecu"]]
        obu_name = f"{ecu.cav}.obu"
        payload = _payload_bytes(up)
        sim.call_entity(
            t1, ecu.name,
            lambda e=ecu, k=up["type"], p=payload, d=up["receiver"], o=obu_name:
                [e.uplink_init(k, p, d, o)],
        )
    for down in cfg.downlinks:
        sender = fleet.receivers[down["sender"]]
        policy = (
            Policy.from_sets(cfg.n_attrs, down["policy"].get("required", []),
                             down["policy"].get("forbidden", []))
            if "policy" in down else cfg.policy_for(down.get("type", 1))
        )
        payload = _payload_bytes(down)
        obu_name = f"{down['cav']}.obu"
        sim.call_entity(
            t1, sender.name,
            lambda s=sender, o=obu_name, pol=policy, p=payload:
                [s.send_downlink(o, pol, p)],
        )
    drain("phase3", t1)

    # configured replays are re-injected after the legitimate traffic
    for tap, delay_ns in replays:
        if tap.log:
            sim.replay(tap.log[0], sim.clock.now_ns + delay_ns)
    if replays:
        drain("replays", sim.clock.now_ns)

    # phase 4: replenish exhausted encryption material
    t2 = sim.clock.now_ns + 1_000_000
    for name in sorted(fleet.ecus):
        ecu = fleet.ecus[name]
        if ecu.needs_material_update:
            sim.call_entity(
                t2, name,
                lambda e=ecu: [e.request_material_update(
                    fleet.oem.name, f"{e.cav}.obu", fleet.config.em_inventory)],
            )
    drain("phase4", t2)

    delivered = {}
    denied = {}
    for name, ent in fleet.entities.items():
        if hasattr(ent, "delivered"):
            delivered[name] = list(ent.delivered)
        if hasattr(ent, "denied"):
            denied[name] = list(ent.denied)
    return RunResult(
        transcript=list(sim.transcript),
        transcript_hash=sim.transcript_hash(),
        failures=list(sim.failures),
        phase_spans_ns=spans,
        delivered=delivered,
        denied=denied,
        entity_ops=dict(sim.entity_ops),
    )


def _payload_bytes(spec: dict) -> bytes:
    if "payload_hex" in spec:
        return bytes.fromhex(spec["payload_hex"])
    return spec.get("payload", "driving-state").encode()


def default_scenario(**overrides) -> ScenarioConfig:
    """Small complete scenario: one vehicle, three external nodes."""
    base = dict(
        seed=7,
        n_attrs=8,
        message_types=2,
        em_inventory=2,
        cavs=[{"name": "cav1", "ecus": 3}],
        receivers=[
            {"name": "rsu1", "role": "rsu", "attrs": [1, 2, 3, 4]},
            {"name": "ue1", "role": "ue", "attrs": [2, 3]},
            {"name": "oem1", "role": "oem", "attrs": [1, 2, 5, 6]},
        ],
        policies={"1": {"required": [1]}, "2": {"required": [2], "forbidden": [7]}},
        uplinks=[
            {"ecu": "cav1.ecu1", "type": 1, "receiver": "rsu1", "payload": "lane-merge"},
            {"ecu": "cav1.ecu2", "type": 2, "receiver": "rsu1", "payload": "brake-event"},
        ],
        downlinks=[
            {"sender": "oem1", "cav": "cav1", "policy": {"required": [1]},
             "payload": "firmware-1.2"},
        ],
    )
    base.update(overrides)
    return ScenarioConfig.from_dict(base)
