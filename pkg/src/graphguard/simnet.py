"""Deterministic synthetic DDS discovery traffic.

A :class:`SimSpec` describes participants and endpoints; :func:`emit` turns
it into SPDP/SEDP datagrams (plus optional garbage) whose bytes depend only
on the spec and its seed. Specs can be written as small text files::

    seed 7
    noise 0.25
    participant 01030242ac1100030099473a vendor=0x0101 version=6.0.1.25 node=talker
    endpoint 0 writer rt/chatter std_msgs::msg::dds_::String_
"""

from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from graphguard import pcap
from graphguard.discovery import (
    ENTITYID_SEDP_PUBLICATIONS_READER,
    ENTITYID_SEDP_PUBLICATIONS_WRITER,
    ENTITYID_SEDP_SUBSCRIPTIONS_READER,
    ENTITYID_SEDP_SUBSCRIPTIONS_WRITER,
    ENTITYID_SPDP_READER,
    ENTITYID_SPDP_WRITER,
    PRODUCT_VERSION_PIDS,
    EndpointAnnouncement,
    EndpointKind,
    ParticipantAnnouncement,
    ProductVersion,
    encode_parameter_list,
    endpoint_parameters,
    participant_parameters,
)
from graphguard.wire import (
    ACKNACK,
    DATA,
    GAP,
    HEARTBEAT,
    INFO_DST,
    INFO_TS,
    MAGIC,
    PAD,
    PROTOCOL_2_2,
    DataSubmessage,
    GuidPrefix,
    ProtocolVersion,
    RtpsMessage,
    Submessage,
    serialize_message,
)

EPOCH = 1_600_000_000.0
TICK = 0.001
SPDP_GROUP = "239.255.0.1"

# user-defined entity kinds without key
_WRITER_KIND, _READER_KIND = 0x03, 0x04


@dataclass(frozen=True)
class SimParticipant:
    guid_prefix: GuidPrefix
    vendor_id: int = 0x010F
    product_version: ProductVersion | None = None
    domain_id: int = 0
    node: str | None = None
    namespace: str = "/"
    user_data: bytes | None = None

    def __post_init__(self):
        if isinstance(self.guid_prefix, str):
            object.__setattr__(self, "guid_prefix", GuidPrefix.from_hex(self.guid_prefix))
        if self.product_version is not None:
            object.__setattr__(self, "product_version", ProductVersion(*self.product_version))

    def announced_user_data(self) -> bytes | None:
        """User data as put on the wire: node identity, then any extra bytes."""
        text = ""
        if self.node:
            text += f"name={self.node};namespace={self.namespace};"
        if self.product_version is not None and self.vendor_id not in PRODUCT_VERSION_PIDS:
            text += f"product_version={self.product_version};"
        if not text and self.user_data is None:
            return None
        return text.encode() + (self.user_data or b"")


@dataclass(frozen=True)
class SimEndpoint:
    participant: int
    kind: EndpointKind
    topic_name: str
    type_name: str = ""
    partitions: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", EndpointKind(self.kind))
        object.__setattr__(self, "partitions", tuple(self.partitions))


@dataclass(frozen=True)
class SimSpec:
    seed: int = 0
    participants: tuple[SimParticipant, ...] = ()
    endpoints: tuple[SimEndpoint, ...] = ()
    noise_ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit value")
        if not 0 <= self.noise_ratio < 1:
            raise ValueError("noise_ratio must lie in [0, 1)")
        for ep in self.endpoints:
            if not 0 <= ep.participant < len(self.participants):
                raise ValueError(f"endpoint {ep.topic_name!r} names participant {ep.participant}, "
                                 f"but only {len(self.participants)} exist")


def _entity_id(ordinal: int, kind: EndpointKind) -> int:
    return (ordinal << 8) | (_WRITER_KIND if kind == EndpointKind.WRITER else _READER_KIND)


def _endpoint_entities(spec: SimSpec) -> list[int]:
    counters: dict = {}
    ids = []
    for ep in spec.endpoints:
        counters[ep.participant] = counters.get(ep.participant, 0) + 1
        ids.append(_entity_id(counters[ep.participant], ep.kind))
    return ids


def intended_announcements(spec: SimSpec) -> tuple[set, set]:
    """The participant and endpoint announcements ``emit(spec)`` must decode to."""
    participants = {
        ParticipantAnnouncement(p.guid_prefix, PROTOCOL_2_2, p.vendor_id, p.domain_id,
                                p.product_version, p.announced_user_data())
        for p in spec.participants
    }
    endpoints = {
        EndpointAnnouncement(ep.kind, spec.participants[ep.participant].guid_prefix, entity,
                             ep.topic_name, ep.type_name, ep.partitions)
        for ep, entity in zip(spec.endpoints, _endpoint_entities(spec))
    }
    return participants, endpoints


def _message(prefix, vendor_id, little, reader, writer, sn, payload) -> bytes:
    data = DataSubmessage(reader, writer, sn, payload, little_endian=little)
    return serialize_message(RtpsMessage(PROTOCOL_2_2, vendor_id, prefix, (data.to_submessage(),)))


def _noise(rng: random.Random) -> bytes:
    while True:
        blob = rng.randbytes(rng.randint(1, 96))
        if not MAGIC.startswith(blob[:4]):
            return blob


def _messages(spec: SimSpec) -> list[tuple[int, bytes]]:
    """``(participant index or -1 for noise, payload)`` in emission order."""
    rng = random.Random(spec.seed)
    entities = _endpoint_entities(spec)
    order = list(range(len(spec.participants)))
    rng.shuffle(order)
    out = []
    for idx in order:
        p = spec.participants[idx]
        little = rng.random() < 0.5
        ann = ParticipantAnnouncement(p.guid_prefix, PROTOCOL_2_2, p.vendor_id, p.domain_id,
                                      p.product_version, p.announced_user_data())
        payload = encode_parameter_list(participant_parameters(ann, little), little)
        out.append((idx, _message(p.guid_prefix, p.vendor_id, little, ENTITYID_SPDP_READER,
                                  ENTITYID_SPDP_WRITER, 1, payload)))
        sn = {EndpointKind.WRITER: 0, EndpointKind.READER: 0}
        for ep, entity in zip(spec.endpoints, entities):
            if ep.participant != idx:
                continue
            sn[ep.kind] += 1
            ea = EndpointAnnouncement(ep.kind, p.guid_prefix, entity, ep.topic_name, ep.type_name,
                                      ep.partitions)
            payload = encode_parameter_list(endpoint_parameters(ea, little), little)
            if ep.kind == EndpointKind.WRITER:
                reader, writer = ENTITYID_SEDP_PUBLICATIONS_READER, ENTITYID_SEDP_PUBLICATIONS_WRITER
            else:
                reader, writer = ENTITYID_SEDP_SUBSCRIPTIONS_READER, ENTITYID_SEDP_SUBSCRIPTIONS_WRITER
            out.append((idx, _message(p.guid_prefix, p.vendor_id, little, reader, writer, sn[ep.kind], payload)))

    if spec.noise_ratio and out:
        n_noise = round(len(out) * spec.noise_ratio / (1 - spec.noise_ratio))
        for _ in range(n_noise):
            out.insert(rng.randint(0, len(out)), (-1, _noise(rng)))
    return out


def emit(spec: SimSpec) -> list[tuple[float, bytes]]:
    """``(timestamp, udp_payload)`` pairs, 1 ms apart from a fixed epoch."""
    return [(EPOCH + i * TICK, payload) for i, (_, payload) in enumerate(_messages(spec))]


def write_pcap(spec: SimSpec, path) -> int:
    """Write ``emit(spec)`` as Ethernet/IPv4/UDP frames; returns the record count."""
    frames = []
    for i, (idx, payload) in enumerate(_messages(spec)):
        if idx < 0:
            src, dst, dport = "10.0.0.254", SPDP_GROUP, 7400
        else:
            domain = spec.participants[idx].domain_id
            src, dst, dport = f"10.0.{idx // 250}.{idx % 250 + 1}", SPDP_GROUP, 7400 + 250 * domain
        frames.append((EPOCH + i * TICK, pcap.udp_frame(src, 7410, dst, dport, payload)))
    return pcap.write_pcap(path, frames)


# --------------------------------------------------------------------------
# spec files

def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = value
    return out


def load_simspec(text: str) -> SimSpec:
    seed, noise = 0, 0.0
    participants, endpoints = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = shlex.split(line)
        head, args = tokens[0], tokens[1:]
        try:
            if head == "seed":
                seed = int(args[0], 0)
            elif head == "noise":
                noise = float(args[0])
            elif head == "participant":
                kv = _parse_kv(args[1:], lineno)
                unknown = set(kv) - {"vendor", "version", "domain", "node", "namespace", "user_data"}
                if unknown:
                    raise ValueError(f"unknown participant field(s) {', '.join(sorted(unknown))}")
                participants.append(SimParticipant(
                    GuidPrefix.from_hex(args[0]),
                    vendor_id=int(kv.get("vendor", "0x010f"), 16),
                    product_version=ProductVersion.parse(kv["version"]) if "version" in kv else None,
                    domain_id=int(kv.get("domain", "0")),
                    node=kv.get("node"),
                    namespace=kv.get("namespace", "/"),
                    user_data=kv["user_data"].encode() if "user_data" in kv else None,
                ))
            elif head == "endpoint":
                idx, kind, topic = int(args[0]), EndpointKind(args[1]), args[2]
                rest = args[3:]
                type_name = rest.pop(0) if rest and "=" not in rest[0] else ""
                kv = _parse_kv(rest, lineno)
                partitions = tuple(p for p in kv.get("partition", "").split(",") if p)
                endpoints.append(SimEndpoint(idx, kind, topic, type_name, partitions))
            else:
                raise ValueError(f"unknown directive {head!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return SimSpec(seed, tuple(participants), tuple(endpoints), noise)


def read_simspec(path) -> SimSpec:
    return load_simspec(Path(path).read_text(encoding="utf-8"))


def dump_simspec(spec: SimSpec) -> str:
    lines = [f"seed {spec.seed}", f"noise {spec.noise_ratio}"]
    for p in spec.participants:
        fields = [f"participant {p.guid_prefix}", f"vendor=0x{p.vendor_id:04x}"]
        if p.product_version is not None:
            fields.append(f"version={p.product_version}")
        fields.append(f"domain={p.domain_id}")
        if p.node:
            fields.append(f"node={shlex.quote(p.node)}")
        if p.namespace != "/":
            fields.append(f"namespace={shlex.quote(p.namespace)}")
        if p.user_data is not None:
            fields.append(shlex.quote(f"user_data={p.user_data.decode()}"))
        lines.append(" ".join(fields))
    for ep in spec.endpoints:
        line = f"endpoint {ep.participant} {ep.kind} {shlex.quote(ep.topic_name)}"
        if ep.type_name:
            line += f" {shlex.quote(ep.type_name)}"
        if ep.partitions:
            line += f" partition={','.join(ep.partitions)}"
        lines.append(line)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# random specs and messages for property tests

_WORDS = ("chatter", "cmd_vel", "odom", "scan", "map", "tf", "clock", "status", "camera", "image",
          "arm", "gripper", "joint_states", "battery", "goal")


def random_name(rng: random.Random, depth: int = 3) -> str:
    return "/" + "/".join(rng.choice(_WORDS) for _ in range(rng.randint(1, depth)))


def random_spec(seed: int, max_participants: int = 6, max_endpoints: int = 20,
                noise_ratio: float = 0.0) -> SimSpec:
    rng = random.Random(seed)
    participants = []
    seen = set()
    for i in range(rng.randint(1, max_participants)):
        prefix = GuidPrefix(rng.randbytes(12))
        if prefix in seen:
            continue
        seen.add(prefix)
        vendor = rng.choice((0x0101, 0x010F, 0x0110, 0x0103))
        participants.append(SimParticipant(
            prefix, vendor,
            ProductVersion(*(rng.randint(0, 9) for _ in range(4))) if rng.random() < 0.7 else None,
            rng.randint(0, 5),
            node=f"node_{i}" if rng.random() < 0.8 else None,
            namespace=rng.choice(("/", "/robot1", "/robot2")),
        ))
    endpoints = []
    for _ in range(rng.randint(0, max_endpoints)):
        prefix = rng.choice(("rt", "rq", "rr", "dds"))
        name = random_name(rng)[1:]
        if prefix == "rq":
            name += "Request"
        elif prefix == "rr":
            name += "Reply"
        endpoints.append(SimEndpoint(
            rng.randrange(len(participants)), rng.choice(list(EndpointKind)), f"{prefix}/{name}",
            "pkg::msg::dds_::T_", tuple(rng.sample(_WORDS, rng.randint(0, 2)))))
    return SimSpec(seed, tuple(participants), tuple(endpoints), noise_ratio)


_PLAIN_IDS = (ACKNACK, HEARTBEAT, GAP, INFO_DST, 0x80, 0x0C)


def random_submessage(rng: random.Random, last: bool) -> Submessage:
    little = rng.random() < 0.5
    flags = (rng.randrange(256) & ~1) | int(little)
    choice = rng.random()
    if choice < 0.4:
        sn = rng.randrange(1 << 63)
        payload = rng.randbytes(rng.randint(0, 64)) if rng.random() < 0.8 else None
        qos = encode_parameter_list([], little)[4:] if rng.random() < 0.2 else None
        data = DataSubmessage(rng.randrange(1 << 32), rng.randrange(1 << 32), sn, payload, qos, little,
                              key_only=payload is not None and rng.random() < 0.1)
        sm = data.to_submessage()
        return Submessage(DATA, sm.flags, sm.body, to_end=last and rng.random() < 0.2)
    if choice < 0.5:
        return Submessage(PAD, flags, rng.randbytes(rng.choice((0, 4, 8))))
    if choice < 0.6:
        return Submessage(INFO_TS, flags, rng.randbytes(rng.choice((0, 8))))
    sid = rng.choice(_PLAIN_IDS)
    body = rng.randbytes(rng.randint(1 if not last else 0, 48))
    return Submessage(sid, flags, body, to_end=last and rng.random() < 0.2)


def random_message(rng: random.Random) -> bytes:
    n = rng.randint(0, 6)
    subs = tuple(random_submessage(rng, i == n - 1) for i in range(n))
    version = ProtocolVersion(2, rng.choice((1, 2, 3, 4, 5)))
    msg = RtpsMessage(version, rng.randrange(1 << 16), GuidPrefix(rng.randbytes(12)), subs)
    return serialize_message(msg)


def random_messages(seed: int, n: int) -> list[bytes]:
    rng = random.Random(seed)
    return [random_message(rng) for _ in range(n)]
