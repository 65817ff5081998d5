"""SPDP/SEDP discovery decoding.

Builtin discovery writers publish their announcements as DATA submessages
carrying a PL_CDR parameter list. This module turns those parameter lists into
participant and endpoint announcements, and provides the matching encoders
used by the traffic generator.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass
from typing import NamedTuple

from graphguard import _kernels
from graphguard.errors import BadEncapsulation, DiscoveryError, WireError
from graphguard.wire import DATA, GuidPrefix, ProtocolVersion, RtpsMessage, parse_data

# encapsulation ids
CDR_BE = 0x0000
CDR_LE = 0x0001
PL_CDR_BE = 0x0002
PL_CDR_LE = 0x0003

# parameter ids
PID_PAD = 0x0000
PID_SENTINEL = 0x0001
PID_TOPIC_NAME = 0x0005
PID_TYPE_NAME = 0x0007
PID_DOMAIN_ID = 0x000F
PID_PROTOCOL_VERSION = 0x0015
PID_VENDORID = 0x0016
PID_PARTITION = 0x0029
PID_USER_DATA = 0x002C
PID_PARTICIPANT_GUID = 0x0050
PID_ENDPOINT_GUID = 0x005A
PID_VENDOR_SPECIFIC = 0x8000

# vendor id -> parameter id carrying the 4-octet product version
PRODUCT_VERSION_PIDS = {0x0101: 0x8000}

# builtin entity ids
ENTITYID_SPDP_WRITER = 0x000100C2
ENTITYID_SPDP_READER = 0x000100C7
ENTITYID_SEDP_PUBLICATIONS_WRITER = 0x000003C2
ENTITYID_SEDP_PUBLICATIONS_READER = 0x000003C7
ENTITYID_SEDP_SUBSCRIPTIONS_WRITER = 0x000004C2
ENTITYID_SEDP_SUBSCRIPTIONS_READER = 0x000004C7
ENTITYID_PARTICIPANT = 0x000001C1


class ProductVersion(NamedTuple):
    major: int
    minor: int
    release: int
    revision: int

    def __str__(self):
        return ".".join(map(str, self))

    @classmethod
    def parse(cls, text):
        parts = text.strip().split(".")
        if len(parts) != 4 or not all(p.isdigit() for p in parts):
            raise ValueError(f"product version {text!r} is not four dotted integers")
        return cls(*map(int, parts))


class EndpointKind(str, enum.Enum):
    WRITER = "writer"
    READER = "reader"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Parameter:
    pid: int
    value: bytes = b""


@dataclass(frozen=True)
class ParticipantAnnouncement:
    guid_prefix: GuidPrefix
    protocol_version: ProtocolVersion
    vendor_id: int
    domain_id: int = 0
    product_version: ProductVersion | None = None
    user_data: bytes | None = None

    def user_data_fields(self) -> dict[str, str]:
        return parse_user_data(self.user_data)


@dataclass(frozen=True)
class EndpointAnnouncement:
    kind: EndpointKind
    guid_prefix: GuidPrefix
    entity_id: int
    topic_name: str
    type_name: str
    partitions: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", EndpointKind(self.kind))
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if not self.topic_name:
            raise ValueError("endpoint announcement without a topic name")


@dataclass(frozen=True)
class DecodeIssue:
    """A discovery payload that could not be decoded (reported, never raised)."""

    writer_id: int
    reason: str


# --------------------------------------------------------------------------
# parameter lists

def encapsulation(payload: bytes) -> tuple[bool, bytes]:
    """Return ``(little_endian, options)`` of a PL_CDR payload."""
    if len(payload) < 4:
        raise BadEncapsulation("payload shorter than the 4-octet encapsulation header")
    kind = (payload[0] << 8) | payload[1]
    if kind == PL_CDR_LE:
        return True, payload[2:4]
    if kind == PL_CDR_BE:
        return False, payload[2:4]
    raise BadEncapsulation(f"encapsulation 0x{kind:04x} is not PL_CDR")


def parse_parameter_list(payload) -> list[Parameter]:
    payload = bytes(payload)
    little, _ = encapsulation(payload)
    entries, _ = _kernels.scan_parameters(payload, 4, little)
    return [Parameter(pid, payload[start:end]) for pid, start, end in entries]


def encode_parameter_list(params, little=True, options=b"\x00\x00") -> bytes:
    o = "<" if little else ">"
    out = [struct.pack(">H", PL_CDR_LE if little else PL_CDR_BE), bytes(options)]
    for p in params:
        if len(p.value) > 0xFFFF:
            raise DiscoveryError(f"parameter 0x{p.pid:04x} value too long")
        out.append(struct.pack(o + "HH", p.pid, len(p.value)))
        out.append(p.value)
    out.append(struct.pack(o + "HH", PID_SENTINEL, 0))
    return b"".join(out)


def _pad4(b: bytes) -> bytes:
    return b + b"\0" * (-len(b) % 4)


def cdr_string(text: str, little=True) -> bytes:
    raw = text.encode("utf-8") + b"\0"
    return _pad4(struct.pack("<I" if little else ">I", len(raw)) + raw)


def read_cdr_string(value: bytes, little=True, offset=0) -> tuple[str, int]:
    """Decode a CDR string at ``offset``; returns the text and the offset after its padding."""
    if len(value) < offset + 4:
        raise DiscoveryError("string length truncated")
    n = struct.unpack_from("<I" if little else ">I", value, offset)[0]
    start = offset + 4
    if n == 0 or start + n > len(value):
        raise DiscoveryError(f"string length {n} overruns its parameter")
    raw = value[start:start + n]
    if raw[-1] != 0:
        raise DiscoveryError("string is not NUL-terminated")
    end = start + n
    return raw[:-1].decode("utf-8", errors="replace"), end + (-end % 4)


def cdr_octets(data: bytes, little=True) -> bytes:
    return _pad4(struct.pack("<I" if little else ">I", len(data)) + data)


def read_cdr_octets(value: bytes, little=True) -> bytes:
    if len(value) < 4:
        raise DiscoveryError("octet sequence length truncated")
    n = struct.unpack_from("<I" if little else ">I", value, 0)[0]
    if 4 + n > len(value):
        raise DiscoveryError(f"octet sequence length {n} overruns its parameter")
    return value[4:4 + n]


def cdr_string_seq(items, little=True) -> bytes:
    out = [struct.pack("<I" if little else ">I", len(items))]
    out.extend(cdr_string(s, little) for s in items)
    return b"".join(out)


def read_cdr_string_seq(value: bytes, little=True) -> tuple[str, ...]:
    if len(value) < 4:
        raise DiscoveryError("string sequence length truncated")
    count = struct.unpack_from("<I" if little else ">I", value, 0)[0]
    if count > len(value) // 4:
        raise DiscoveryError(f"string sequence count {count} overruns its parameter")
    items, pos = [], 4
    for _ in range(count):
        text, pos = read_cdr_string(value, little, pos)
        items.append(text)
    return tuple(items)


def guid_value(prefix: GuidPrefix, entity_id: int) -> bytes:
    return prefix.value + entity_id.to_bytes(4, "big")


_USER_DATA_FIELD = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=([^;]*);")


def parse_user_data(user_data: bytes | None) -> dict[str, str]:
    """Decode ``key=value;`` pairs as used by ROS 2 participant user data."""
    if not user_data:
        return {}
    text = user_data.decode("utf-8", errors="replace")
    return dict(_USER_DATA_FIELD.findall(text))


# --------------------------------------------------------------------------
# announcements

def _params_by_pid(params) -> dict[int, bytes]:
    found = {}
    for p in params:
        found.setdefault(p.pid, p.value)
    return found


def _payload_params(data, errors, writer_id):
    if data.serialized_payload is None or data.key_only:
        return None
    try:
        payload = data.serialized_payload
        little, _ = encapsulation(payload)
        return little, _params_by_pid(parse_parameter_list(payload))
    except DiscoveryError as exc:
        if errors is not None:
            errors.append(DecodeIssue(writer_id, str(exc)))
        return None


def _data_from(msg: RtpsMessage, writer_ids, errors):
    for sm in msg.submessages:
        if sm.submessage_id != DATA or len(sm.body) < 12:
            continue
        writer_id = int.from_bytes(sm.body[8:12], "big")
        if writer_id not in writer_ids:
            continue
        try:
            yield writer_id, parse_data(sm)
        except WireError as exc:
            if errors is not None:
                errors.append(DecodeIssue(writer_id, str(exc)))


def _participant_from(msg, params, little):
    prefix = msg.guid_prefix
    if PID_PARTICIPANT_GUID in params:
        guid = params[PID_PARTICIPANT_GUID]
        if len(guid) < 16:
            raise DiscoveryError("participant GUID shorter than 16 octets")
        prefix = GuidPrefix(guid[:12])
    version = msg.version
    if PID_PROTOCOL_VERSION in params:
        v = params[PID_PROTOCOL_VERSION]
        if len(v) < 2:
            raise DiscoveryError("protocol version parameter truncated")
        version = ProtocolVersion(v[0], v[1])
    vendor = msg.vendor_id
    if PID_VENDORID in params:
        v = params[PID_VENDORID]
        if len(v) < 2:
            raise DiscoveryError("vendor id parameter truncated")
        vendor = (v[0] << 8) | v[1]
    domain = 0
    if PID_DOMAIN_ID in params:
        v = params[PID_DOMAIN_ID]
        if len(v) < 4:
            raise DiscoveryError("domain id parameter truncated")
        domain = struct.unpack_from("<I" if little else ">I", v, 0)[0]
    user_data = None
    if PID_USER_DATA in params:
        user_data = read_cdr_octets(params[PID_USER_DATA], little)
    product = None
    pv_pid = PRODUCT_VERSION_PIDS.get(vendor)
    if pv_pid is not None and pv_pid in params and len(params[pv_pid]) >= 4:
        product = ProductVersion(*params[pv_pid][:4])
    elif user_data:
        text = parse_user_data(user_data).get("product_version")
        if text:
            try:
                product = ProductVersion.parse(text)
            except ValueError:
                pass
    return ParticipantAnnouncement(prefix, version, vendor, domain, product, user_data)


def decode_participant(msg: RtpsMessage, errors: list | None = None) -> ParticipantAnnouncement | None:
    """Return the SPDP announcement carried by ``msg``, if any.

    Malformed payloads produce ``None`` and, when ``errors`` is given, a
    ``DecodeIssue`` appended to it.
    """
    for writer_id, data in _data_from(msg, (ENTITYID_SPDP_WRITER,), errors):
        decoded = _payload_params(data, errors, writer_id)
        if decoded is None:
            continue
        little, params = decoded
        try:
            return _participant_from(msg, params, little)
        except DiscoveryError as exc:
            if errors is not None:
                errors.append(DecodeIssue(writer_id, str(exc)))
    return None


_SEDP_KINDS = {
    ENTITYID_SEDP_PUBLICATIONS_WRITER: EndpointKind.WRITER,
    ENTITYID_SEDP_SUBSCRIPTIONS_WRITER: EndpointKind.READER,
}


def _endpoint_from(msg, kind, params, little):
    if PID_TOPIC_NAME not in params:
        raise DiscoveryError("endpoint announcement without topic name")
    topic, _ = read_cdr_string(params[PID_TOPIC_NAME], little)
    if not topic:
        raise DiscoveryError("empty topic name")
    type_name = ""
    if PID_TYPE_NAME in params:
        type_name, _ = read_cdr_string(params[PID_TYPE_NAME], little)
    prefix, entity = msg.guid_prefix, 0
    if PID_ENDPOINT_GUID in params:
        guid = params[PID_ENDPOINT_GUID]
        if len(guid) < 16:
            raise DiscoveryError("endpoint GUID shorter than 16 octets")
        prefix, entity = GuidPrefix(guid[:12]), int.from_bytes(guid[12:16], "big")
    partitions = ()
    if PID_PARTITION in params:
        partitions = read_cdr_string_seq(params[PID_PARTITION], little)
    return EndpointAnnouncement(kind, prefix, entity, topic, type_name, partitions)


def decode_endpoint(msg: RtpsMessage, errors: list | None = None) -> list[EndpointAnnouncement]:
    """Return one announcement per SEDP DATA submessage in ``msg``, in order."""
    found = []
    for writer_id, data in _data_from(msg, _SEDP_KINDS, errors):
        decoded = _payload_params(data, errors, writer_id)
        if decoded is None:
            continue
        little, params = decoded
        try:
            found.append(_endpoint_from(msg, _SEDP_KINDS[writer_id], params, little))
        except DiscoveryError as exc:
            if errors is not None:
                errors.append(DecodeIssue(writer_id, str(exc)))
    return found


# --------------------------------------------------------------------------
# encoders (used by simnet and tests)

def participant_parameters(ann: ParticipantAnnouncement, little=True) -> list[Parameter]:
    o = "<" if little else ">"
    params = [
        Parameter(PID_PROTOCOL_VERSION, bytes(ann.protocol_version) + b"\0\0"),
        Parameter(PID_VENDORID, ann.vendor_id.to_bytes(2, "big") + b"\0\0"),
        Parameter(PID_PARTICIPANT_GUID, guid_value(ann.guid_prefix, ENTITYID_PARTICIPANT)),
        Parameter(PID_DOMAIN_ID, struct.pack(o + "I", ann.domain_id)),
    ]
    if ann.user_data is not None:
        params.append(Parameter(PID_USER_DATA, cdr_octets(ann.user_data, little)))
    pv_pid = PRODUCT_VERSION_PIDS.get(ann.vendor_id)
    if ann.product_version is not None and pv_pid is not None:
        params.append(Parameter(pv_pid, bytes(ann.product_version)))
    return params


def endpoint_parameters(ann: EndpointAnnouncement, little=True) -> list[Parameter]:
    params = [
        Parameter(PID_ENDPOINT_GUID, guid_value(ann.guid_prefix, ann.entity_id)),
        Parameter(PID_TOPIC_NAME, cdr_string(ann.topic_name, little)),
        Parameter(PID_TYPE_NAME, cdr_string(ann.type_name, little)),
    ]
    if ann.partitions:
        params.append(Parameter(PID_PARTITION, cdr_string_seq(ann.partitions, little)))
    return params
