"""Computational-graph model built from discovery traffic and denial logs.

ROS-level names are translated to DDS topic names with the standard
prefixes: ``rt/`` for topics, ``rq/<name>Request`` and ``rr/<name>Reply``
for the two halves of a service.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple

from graphguard.discovery import (
    EndpointAnnouncement,
    EndpointKind,
    ParticipantAnnouncement,
    decode_endpoint,
    decode_participant,
)
from graphguard.errors import InvalidName, WireError
from graphguard.wire import parse_message, vendor_name


class ResourceKind(str, enum.Enum):
    TOPIC_PUBLISH = "topic_publish"
    TOPIC_SUBSCRIBE = "topic_subscribe"
    SERVICE_REPLY = "service_reply"
    SERVICE_REQUEST = "service_request"
    ACTION_CALL = "action_call"
    ACTION_EXECUTE = "action_execute"

    def __str__(self):
        return self.value


TOPIC_PREFIX = "rt"
REQUEST_PREFIX = "rq"
REPLY_PREFIX = "rr"
REQUEST_SUFFIX = "Request"
REPLY_SUFFIX = "Reply"

# channel kinds returned by demangle
TOPIC = "topic"
SERVICE_REQUEST = "service_request"
SERVICE_REPLY = "service_reply"

_CHANNEL_OF = {
    ResourceKind.TOPIC_PUBLISH: TOPIC,
    ResourceKind.TOPIC_SUBSCRIBE: TOPIC,
    ResourceKind.SERVICE_REQUEST: SERVICE_REQUEST,
    ResourceKind.SERVICE_REPLY: SERVICE_REPLY,
}

# (channel, endpoint kind) -> resource kind; either half of a service
# identifies its side, so clients and servers are attributed from one endpoint
_ENDPOINT_RESOURCE = {
    (TOPIC, EndpointKind.WRITER): ResourceKind.TOPIC_PUBLISH,
    (TOPIC, EndpointKind.READER): ResourceKind.TOPIC_SUBSCRIBE,
    (SERVICE_REQUEST, EndpointKind.WRITER): ResourceKind.SERVICE_REQUEST,
    (SERVICE_REQUEST, EndpointKind.READER): ResourceKind.SERVICE_REPLY,
    (SERVICE_REPLY, EndpointKind.WRITER): ResourceKind.SERVICE_REPLY,
    (SERVICE_REPLY, EndpointKind.READER): ResourceKind.SERVICE_REQUEST,
}

ACTION_SERVICES = ("send_goal", "cancel_goal", "get_result")
ACTION_TOPICS = ("feedback", "status")


class NameFragment(NamedTuple):
    kind: str
    name: str


def validate_name(name: str) -> str:
    if not name or any(c.isspace() for c in name):
        raise InvalidName(f"invalid resource name {name!r}")
    if not name.startswith("/") or name == "/" or name.endswith("/") or "//" in name:
        raise InvalidName(f"resource name {name!r} is not an absolute name")
    return name


def split_node(fqn: str) -> tuple[str, str]:
    """Split ``/ns/node`` into ``("/ns", "node")``; a bare name lives in ``/``."""
    fqn = fqn.strip()
    if "/" not in fqn:
        return "/", fqn
    ns, _, node = fqn.rpartition("/")
    return ns or "/", node


def join_name(namespace: str, name: str) -> str:
    if name.startswith("/"):
        return name
    return namespace.rstrip("/") + "/" + name


@dataclass(frozen=True, order=True)
class GraphResource:
    kind: ResourceKind
    node: str
    namespace: str = "/"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ResourceKind(self.kind))

    @property
    def node_fqn(self):
        return join_name(self.namespace, self.node)

    def __str__(self):
        return f"({self.kind}, {self.node_fqn}, {self.name})"


def mangle_name(kind: ResourceKind, name: str) -> str:
    validate_name(name)
    channel = _CHANNEL_OF.get(ResourceKind(kind))
    if channel is None:
        raise InvalidName(f"{kind} resources expand to several DDS topics; use action_topics()")
    stem = name[1:]
    if channel == TOPIC:
        return f"{TOPIC_PREFIX}/{stem}"
    if channel == SERVICE_REQUEST:
        return f"{REQUEST_PREFIX}/{stem}{REQUEST_SUFFIX}"
    return f"{REPLY_PREFIX}/{stem}{REPLY_SUFFIX}"


def mangle(resource: GraphResource) -> str:
    return mangle_name(resource.kind, resource.name)


def demangle(dds_topic: str) -> NameFragment | None:
    prefix, sep, rest = dds_topic.partition("/")
    if not sep or not rest:
        return None
    if prefix == TOPIC_PREFIX:
        return NameFragment(TOPIC, "/" + rest)
    if prefix == REQUEST_PREFIX and rest.endswith(REQUEST_SUFFIX) and len(rest) > len(REQUEST_SUFFIX):
        return NameFragment(SERVICE_REQUEST, "/" + rest[:-len(REQUEST_SUFFIX)])
    if prefix == REPLY_PREFIX and rest.endswith(REPLY_SUFFIX) and len(rest) > len(REPLY_SUFFIX):
        return NameFragment(SERVICE_REPLY, "/" + rest[:-len(REPLY_SUFFIX)])
    return None


def action_topics(name: str, side: ResourceKind) -> list[tuple[str, str]]:
    """DDS topics an action client (call) or server (execute) touches.

    Returns ``(dds_topic, "publish" | "subscribe")`` pairs covering the
    send_goal/cancel_goal/get_result services and the feedback/status topics.
    """
    base = validate_name(name) + "/_action/"
    client = ResourceKind(side) == ResourceKind.ACTION_CALL
    out = []
    for svc in ACTION_SERVICES:
        req = mangle_name(ResourceKind.SERVICE_REQUEST, base + svc)
        rep = mangle_name(ResourceKind.SERVICE_REPLY, base + svc)
        out.append((req, "publish" if client else "subscribe"))
        out.append((rep, "subscribe" if client else "publish"))
    for topic in ACTION_TOPICS:
        out.append((mangle_name(ResourceKind.TOPIC_PUBLISH, base + topic), "subscribe" if client else "publish"))
    return out


@dataclass(frozen=True, order=True)
class DeniedEvent:
    node: str
    kind: ResourceKind
    name: str

    def __post_init__(self):
        object.__setattr__(self, "kind", ResourceKind(self.kind))
        ns, node = split_node(self.node)
        object.__setattr__(self, "node", join_name(ns, node))

    def resource(self) -> GraphResource:
        ns, node = split_node(self.node)
        return GraphResource(self.kind, node, ns, self.name)


def parse_denials(text: str) -> list[DeniedEvent]:
    """Parse ``DENY <node> <kind> <absolute-name>`` lines; ``#`` starts a comment."""
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "DENY":
            raise ValueError(f"line {lineno}: expected 'DENY <node> <kind> <name>', got {raw!r}")
        _, node, kind, name = parts
        try:
            kind = ResourceKind(kind)
        except ValueError:
            raise ValueError(f"line {lineno}: unknown resource kind {kind!r}") from None
        try:
            validate_name(name)
        except InvalidName as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        events.append(DeniedEvent(node, kind, name))
    return events


def format_denials(events: Iterable[DeniedEvent]) -> str:
    return "".join(f"DENY {e.node} {e.kind} {e.name}\n" for e in events)


def synthetic_node(prefix) -> str:
    return f"participant_{prefix}"


@dataclass(frozen=True)
class GraphSnapshot:
    """Value-semantic view of everything observed so far.

    Resources are derived, so announcement order never matters: an endpoint
    seen before its participant is attributed once the participant arrives.
    """

    participants: frozenset[ParticipantAnnouncement] = frozenset()
    endpoints: frozenset[EndpointAnnouncement] = frozenset()
    denied_events: frozenset[DeniedEvent] = frozenset()
    observation_window: tuple[float, float] | None = None

    @cached_property
    def node_names(self) -> dict:
        names: dict = {}
        for p in self.participants:
            fields = p.user_data_fields()
            if fields.get("name"):
                ns = fields.get("namespace") or "/"
                candidate = (ns if ns.startswith("/") else "/" + ns, fields["name"])
                names[p.guid_prefix] = min(candidate, names.get(p.guid_prefix, candidate))
        return names

    def node_of(self, prefix) -> tuple[str, str]:
        return self.node_names.get(prefix) or ("/", synthetic_node(prefix))

    @cached_property
    def resources(self) -> frozenset[GraphResource]:
        found = set()
        for ep in self.endpoints:
            frag = demangle(ep.topic_name)
            if frag is None:
                continue
            ns, node = self.node_of(ep.guid_prefix)
            found.add(GraphResource(_ENDPOINT_RESOURCE[frag.kind, ep.kind], node, ns, frag.name))
        found.update(e.resource() for e in self.denied_events)
        return frozenset(found)

    @cached_property
    def raw_topics(self) -> frozenset[str]:
        """DDS topics without a ROS prefix (reported as plain DDS resources)."""
        return frozenset(ep.topic_name for ep in self.endpoints if demangle(ep.topic_name) is None)

    @property
    def nodes(self) -> list[tuple[str, str]]:
        return sorted({(r.namespace, r.node) for r in self.resources})

    def render(self) -> str:
        return render_snapshot(self)


def _widen(window, timestamp):
    if timestamp is None:
        return window
    if window is None:
        return (timestamp, timestamp)
    return (min(window[0], timestamp), max(window[1], timestamp))


def accumulate(snapshot: GraphSnapshot, item, timestamp: float | None = None) -> GraphSnapshot:
    """Return ``snapshot`` grown by one announcement or denial event."""
    window = _widen(snapshot.observation_window, timestamp)
    if isinstance(item, EndpointAnnouncement):
        if item in snapshot.endpoints and window == snapshot.observation_window:
            return snapshot
        return replace(snapshot, endpoints=snapshot.endpoints | {item}, observation_window=window)
    if isinstance(item, ParticipantAnnouncement):
        if item in snapshot.participants and window == snapshot.observation_window:
            return snapshot
        return replace(snapshot, participants=snapshot.participants | {item}, observation_window=window)
    if isinstance(item, DeniedEvent):
        return replace(snapshot, denied_events=snapshot.denied_events | {item}, observation_window=window)
    raise TypeError(f"cannot accumulate {type(item).__name__}")


@dataclass
class SnapshotBuilder:
    """Mutable accumulator for long captures; ``freeze()`` yields the snapshot."""

    participants: set = field(default_factory=set)
    endpoints: set = field(default_factory=set)
    denied_events: set = field(default_factory=set)
    window: tuple[float, float] | None = None

    def add(self, item, timestamp: float | None = None):
        self.window = _widen(self.window, timestamp)
        if isinstance(item, EndpointAnnouncement):
            self.endpoints.add(item)
        elif isinstance(item, ParticipantAnnouncement):
            self.participants.add(item)
        elif isinstance(item, DeniedEvent):
            self.denied_events.add(item)
        else:
            raise TypeError(f"cannot accumulate {type(item).__name__}")

    def freeze(self) -> GraphSnapshot:
        return GraphSnapshot(frozenset(self.participants), frozenset(self.endpoints),
                             frozenset(self.denied_events), self.window)


def snapshot_from_datagrams(datagrams, builder: SnapshotBuilder | None = None) -> GraphSnapshot:
    """Decode every RTPS datagram in ``datagrams`` (``(timestamp, payload)`` pairs)."""
    builder = builder or SnapshotBuilder()
    for item in datagrams:
        ts, payload = item[0], item[-1]
        try:
            msg = parse_message(payload)
        except WireError:
            continue
        part = decode_participant(msg)
        if part is not None:
            builder.add(part, ts)
        for ep in decode_endpoint(msg):
            builder.add(ep, ts)
    return builder.freeze()


_SECTIONS = (
    ("Subscribers", ResourceKind.TOPIC_SUBSCRIBE),
    ("Publishers", ResourceKind.TOPIC_PUBLISH),
    ("Service Servers", ResourceKind.SERVICE_REPLY),
    ("Service Clients", ResourceKind.SERVICE_REQUEST),
    ("Action Servers", ResourceKind.ACTION_EXECUTE),
    ("Action Clients", ResourceKind.ACTION_CALL),
)


def render_snapshot(snapshot: GraphSnapshot) -> str:
    """Deterministic, sorted text rendering (stable for diffing)."""
    lines = []
    by_node: dict = {}
    for r in snapshot.resources:
        by_node.setdefault(r.node_fqn, {}).setdefault(r.kind, set()).add(r.name)
    for node in sorted(by_node):
        lines.append(node)
        for title, kind in _SECTIONS:
            names = sorted(by_node[node].get(kind, ()))
            if names:
                lines.append(f"  {title}:")
                lines.extend(f"    {n}" for n in names)
    if snapshot.raw_topics:
        lines.append("DDS topics without ROS mapping:")
        lines.extend(f"  {t}" for t in sorted(snapshot.raw_topics))
    if snapshot.participants:
        lines.append("Participants:")
        for p in sorted(snapshot.participants, key=lambda p: (p.guid_prefix.value, repr(p))):
            version = f" version={p.product_version}" if p.product_version else ""
            lines.append(f"  {p.guid_prefix} domain={p.domain_id} vendor={vendor_name(p.vendor_id)}{version}")
    return "\n".join(lines) + ("\n" if lines else "")


def snapshot_records(snapshot: GraphSnapshot) -> list[dict]:
    records = [
        {"type": "resource", "node": r.node_fqn, "kind": r.kind.value, "name": r.name}
        for r in sorted(snapshot.resources, key=lambda r: (r.node_fqn, r.kind.value, r.name))
    ]
    records.extend({"type": "dds_topic", "name": t} for t in sorted(snapshot.raw_topics))
    for p in sorted(snapshot.participants, key=lambda p: (p.guid_prefix.value, repr(p))):
        records.append({
            "type": "participant",
            "guid_prefix": str(p.guid_prefix),
            "vendor": vendor_name(p.vendor_id),
            "domain_id": p.domain_id,
            "product_version": str(p.product_version) if p.product_version else None,
        })
    return records


def dump_records(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
